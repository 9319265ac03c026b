//! Structured meshes on (0,1) and (0,1)², P1 functions and quadrature.
//!
//! Every boundary facet carries exactly one [`Tag`]: `Gamma` (natural
//! boundary, where boundary multifunctions act) or `Gamma0` (homogeneous
//! Dirichlet). Nodes lying on any `Gamma0` facet are Dirichlet nodes; the
//! remaining nodes are the free degrees of freedom of the working subspace.

use std::io::Write;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tag {
    Gamma,
    Gamma0,
}

impl Tag {
    pub fn name(self) -> &'static str {
        match self {
            Tag::Gamma => "gamma",
            Tag::Gamma0 => "gamma0",
        }
    }
}

/// Quadrature rule on a reference simplex, in barycentric coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    /// Barycentric coordinates, one entry per simplex vertex.
    pub points: Vec<Vec<f64>>,
    /// Weights normalised to sum to one.
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Three-point Gauss–Legendre rule, exact for degree 5.
    pub fn segment_gauss3() -> Self {
        let d = 0.5 * (3.0f64 / 5.0).sqrt();
        let ts = [0.5 - d, 0.5, 0.5 + d];
        QuadratureRule {
            points: ts.iter().map(|&t| vec![1.0 - t, t]).collect(),
            weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
        }
    }

    /// Six-point symmetric rule on triangles, exact for degree 4.
    pub fn triangle_degree4() -> Self {
        let (a, wa) = (0.445_948_490_915_965, 0.223_381_589_678_011);
        let (b, wb) = (0.091_576_213_509_771, 0.109_951_743_655_322);
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for (c, w) in [(a, wa), (b, wb)] {
            let o = 1.0 - 2.0 * c;
            points.push(vec![o, c, c]);
            points.push(vec![c, o, c]);
            points.push(vec![c, c, o]);
            weights.extend([w; 3]);
        }
        QuadratureRule { points, weights }
    }

    pub fn point() -> Self {
        QuadratureRule {
            points: vec![vec![1.0]],
            weights: vec![1.0],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub nodes: Vec<usize>,
    /// Length (1D) or area (2D).
    pub measure: f64,
    /// Constant gradient of each local basis function.
    pub grads: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryFacet {
    pub nodes: Vec<usize>,
    pub tag: Tag,
    /// Length of the edge in 2D; 1 for boundary points in 1D (counting measure).
    pub measure: f64,
}

#[derive(Debug, Clone)]
pub struct MeshSpec {
    pub dim: usize,
    pub subdivisions: usize,
    /// Boundary facets whose midpoint gives a positive value are tagged `Gamma`.
    pub gamma_predicate: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    dim: usize,
    subdivisions: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<Element>,
    facets: Vec<BoundaryFacet>,
    rule: QuadratureRule,
    facet_rule: QuadratureRule,
    dirichlet: Vec<bool>,
    free_nodes: Vec<usize>,
    dof_of_node: Vec<Option<usize>>,
    gamma_facets: Vec<usize>,
    gamma0_facets: Vec<usize>,
}

impl Mesh {
    pub fn build(spec: &MeshSpec) -> Result<Arc<Mesh>> {
        let n = spec.subdivisions;
        if n == 0 {
            return Err(Error::InvalidMesh("subdivisions must be at least 1".into()));
        }
        let h = 1.0 / n as f64;
        let (nodes, elements, raw_facets, rule, facet_rule) = match spec.dim {
            1 => {
                let nodes: Vec<[f64; 2]> = (0..=n).map(|i| [i as f64 * h, 0.0]).collect();
                let elements = (0..n)
                    .map(|i| Element {
                        nodes: vec![i, i + 1],
                        measure: h,
                        grads: vec![[-1.0 / h, 0.0], [1.0 / h, 0.0]],
                    })
                    .collect();
                let facets = vec![(vec![0], 1.0), (vec![n], 1.0)];
                (nodes, elements, facets, QuadratureRule::segment_gauss3(), QuadratureRule::point())
            }
            2 => {
                let idx = |i: usize, j: usize| j * (n + 1) + i;
                let mut nodes = Vec::with_capacity((n + 1) * (n + 1));
                for j in 0..=n {
                    for i in 0..=n {
                        nodes.push([i as f64 * h, j as f64 * h]);
                    }
                }
                let mut elements = Vec::with_capacity(2 * n * n);
                for j in 0..n {
                    for i in 0..n {
                        let (a, b, c, d) = (idx(i, j), idx(i + 1, j), idx(i + 1, j + 1), idx(i, j + 1));
                        for tri in [[a, b, c], [a, c, d]] {
                            elements.push(triangle(&nodes, tri));
                        }
                    }
                }
                let mut facets = Vec::with_capacity(4 * n);
                for i in 0..n {
                    facets.push((vec![idx(i, 0), idx(i + 1, 0)], h));
                }
                for j in 0..n {
                    facets.push((vec![idx(n, j), idx(n, j + 1)], h));
                }
                for i in (0..n).rev() {
                    facets.push((vec![idx(i + 1, n), idx(i, n)], h));
                }
                for j in (0..n).rev() {
                    facets.push((vec![idx(0, j + 1), idx(0, j)], h));
                }
                (
                    nodes,
                    elements,
                    facets,
                    QuadratureRule::triangle_degree4(),
                    QuadratureRule::segment_gauss3(),
                )
            }
            d => return Err(Error::InvalidMesh(format!("dimension must be 1 or 2, got {d}"))),
        };

        let mut facets = Vec::with_capacity(raw_facets.len());
        for (fnodes, measure) in raw_facets {
            let mut mid = [0.0; 2];
            for &v in &fnodes {
                mid[0] += nodes[v][0] / fnodes.len() as f64;
                mid[1] += nodes[v][1] / fnodes.len() as f64;
            }
            let tag = if spec.gamma_predicate.eval(&Bindings::point(mid))? > 0.0 {
                Tag::Gamma
            } else {
                Tag::Gamma0
            };
            facets.push(BoundaryFacet {
                nodes: fnodes,
                tag,
                measure,
            });
        }

        let mut dirichlet = vec![false; nodes.len()];
        for f in facets.iter().filter(|f| f.tag == Tag::Gamma0) {
            for &v in &f.nodes {
                dirichlet[v] = true;
            }
        }
        let mut dof_of_node = vec![None; nodes.len()];
        let mut free_nodes = Vec::new();
        for (v, &d) in dirichlet.iter().enumerate() {
            if !d {
                dof_of_node[v] = Some(free_nodes.len());
                free_nodes.push(v);
            }
        }
        let gamma_facets = (0..facets.len()).filter(|&i| facets[i].tag == Tag::Gamma).collect();
        let gamma0_facets = (0..facets.len()).filter(|&i| facets[i].tag == Tag::Gamma0).collect();

        Ok(Arc::new(Mesh {
            dim: spec.dim,
            subdivisions: n,
            nodes,
            elements,
            facets,
            rule,
            facet_rule,
            dirichlet,
            free_nodes,
            dof_of_node,
            gamma_facets,
            gamma0_facets,
        }))
    }

    /// Shorthand for the unit interval with the given boundary predicate.
    pub fn interval(n: usize, gamma_predicate: &str) -> Result<Arc<Mesh>> {
        Self::build(&MeshSpec {
            dim: 1,
            subdivisions: n,
            gamma_predicate: Expr::parse(gamma_predicate, crate::expr::VarSet::SPATIAL)?,
        })
    }

    /// Shorthand for the unit square with the given boundary predicate.
    pub fn square(n: usize, gamma_predicate: &str) -> Result<Arc<Mesh>> {
        Self::build(&MeshSpec {
            dim: 2,
            subdivisions: n,
            gamma_predicate: Expr::parse(gamma_predicate, crate::expr::VarSet::SPATIAL)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn subdivisions(&self) -> usize {
        self.subdivisions
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn facets(&self) -> &[BoundaryFacet] {
        &self.facets
    }

    pub fn rule(&self) -> &QuadratureRule {
        &self.rule
    }

    pub fn facet_rule(&self) -> &QuadratureRule {
        &self.facet_rule
    }

    pub fn is_dirichlet(&self, node: usize) -> bool {
        self.dirichlet[node]
    }

    pub fn free_nodes(&self) -> &[usize] {
        &self.free_nodes
    }

    pub fn dof_of_node(&self, node: usize) -> Option<usize> {
        self.dof_of_node[node]
    }

    /// Indices of the boundary facets carrying `tag`, in mesh order.
    pub fn facets_with(&self, tag: Tag) -> &[usize] {
        match tag {
            Tag::Gamma => &self.gamma_facets,
            Tag::Gamma0 => &self.gamma0_facets,
        }
    }

    pub fn measure(&self) -> f64 {
        self.elements.iter().map(|e| e.measure).sum()
    }

    pub fn qp_per_element(&self) -> usize {
        self.rule.len()
    }

    pub fn interior_qp_count(&self) -> usize {
        self.elements.len() * self.rule.len()
    }

    pub fn boundary_qp_count(&self, tag: Tag) -> usize {
        self.facets_with(tag).len() * self.facet_rule.len()
    }

    pub fn layout_len(&self, layout: Layout) -> usize {
        match layout {
            Layout::Interior => self.interior_qp_count(),
            Layout::Boundary(tag) => self.boundary_qp_count(tag),
        }
    }

    /// Physical coordinates of quadrature point `k` of element `e`.
    pub fn qp_coords(&self, e: usize, k: usize) -> [f64; 2] {
        bary_point(&self.nodes, &self.elements[e].nodes, &self.rule.points[k])
    }

    /// Integration weight (rule weight times element measure).
    pub fn qp_weight(&self, e: usize, k: usize) -> f64 {
        self.rule.weights[k] * self.elements[e].measure
    }

    /// Physical coordinates of quadrature point `k` on boundary facet `f`.
    pub fn facet_qp_coords(&self, f: usize, k: usize) -> [f64; 2] {
        bary_point(&self.nodes, &self.facets[f].nodes, &self.facet_rule.points[k])
    }

    pub fn facet_qp_weight(&self, f: usize, k: usize) -> f64 {
        self.facet_rule.weights[k] * self.facets[f].measure
    }

    /// Coordinates of every point of a layout, in field order.
    pub fn layout_points(&self, layout: Layout) -> Vec<[f64; 2]> {
        match layout {
            Layout::Interior => (0..self.elements.len())
                .flat_map(|e| (0..self.rule.len()).map(move |k| (e, k)))
                .map(|(e, k)| self.qp_coords(e, k))
                .collect(),
            Layout::Boundary(tag) => self
                .facets_with(tag)
                .iter()
                .flat_map(|&f| (0..self.facet_rule.len()).map(move |k| (f, k)))
                .map(|(f, k)| self.facet_qp_coords(f, k))
                .collect(),
        }
    }

    /// Integrates `value(point_index) * phi_a` against every nodal basis
    /// function, returning a full-length nodal vector.
    pub fn integrate_against_basis<F>(&self, layout: Layout, mut value: F) -> Vec<f64>
    where
        F: FnMut(usize) -> f64,
    {
        let mut out = vec![0.0; self.nodes.len()];
        match layout {
            Layout::Interior => {
                let nq = self.rule.len();
                for (e, el) in self.elements.iter().enumerate() {
                    for k in 0..nq {
                        let w = self.qp_weight(e, k) * value(e * nq + k);
                        for (a, &node) in el.nodes.iter().enumerate() {
                            out[node] += w * self.rule.points[k][a];
                        }
                    }
                }
            }
            Layout::Boundary(tag) => {
                let nq = self.facet_rule.len();
                for (i, &f) in self.facets_with(tag).iter().enumerate() {
                    for k in 0..nq {
                        let w = self.facet_qp_weight(f, k) * value(i * nq + k);
                        for (a, &node) in self.facets[f].nodes.iter().enumerate() {
                            out[node] += w * self.facet_rule.points[k][a];
                        }
                    }
                }
            }
        }
        out
    }

    /// Visits every point of a layout with the local (node, basis value)
    /// pairs of the owning simplex and the integration weight.
    pub fn for_each_point<F>(&self, layout: Layout, mut visit: F)
    where
        F: FnMut(usize, &[usize], &[f64], f64),
    {
        match layout {
            Layout::Interior => {
                let nq = self.rule.len();
                for (e, el) in self.elements.iter().enumerate() {
                    for k in 0..nq {
                        visit(e * nq + k, &el.nodes, &self.rule.points[k], self.qp_weight(e, k));
                    }
                }
            }
            Layout::Boundary(tag) => {
                let nq = self.facet_rule.len();
                for (i, &f) in self.facets_with(tag).iter().enumerate() {
                    for k in 0..nq {
                        visit(
                            i * nq + k,
                            &self.facets[f].nodes,
                            &self.facet_rule.points[k],
                            self.facet_qp_weight(f, k),
                        );
                    }
                }
            }
        }
    }
}

fn bary_point(nodes: &[[f64; 2]], simplex: &[usize], bary: &[f64]) -> [f64; 2] {
    let mut p = [0.0; 2];
    for (a, &v) in simplex.iter().enumerate() {
        p[0] += bary[a] * nodes[v][0];
        p[1] += bary[a] * nodes[v][1];
    }
    p
}

fn triangle(nodes: &[[f64; 2]], tri: [usize; 3]) -> Element {
    let [p0, p1, p2] = tri.map(|i| nodes[i]);
    let det = (p1[0] - p0[0]) * (p2[1] - p0[1]) - (p2[0] - p0[0]) * (p1[1] - p0[1]);
    // Gradients of barycentric coordinates.
    let grads = vec![
        [(p1[1] - p2[1]) / det, (p2[0] - p1[0]) / det],
        [(p2[1] - p0[1]) / det, (p0[0] - p2[0]) / det],
        [(p0[1] - p1[1]) / det, (p1[0] - p0[0]) / det],
    ];
    Element {
        nodes: tri.to_vec(),
        measure: 0.5 * det.abs(),
        grads,
    }
}

/// Where the values of a [`QuadratureField`] live.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layout {
    Interior,
    Boundary(Tag),
}

/// One value per quadrature point of the interior, or of the boundary
/// facets carrying one tag.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureField {
    layout: Layout,
    values: Vec<f64>,
}

impl QuadratureField {
    pub fn new(mesh: &Mesh, layout: Layout, values: Vec<f64>) -> Result<Self> {
        let expected = mesh.layout_len(layout);
        if values.len() != expected {
            return Err(Error::LayoutMismatch {
                expected,
                got: values.len(),
            });
        }
        Ok(QuadratureField { layout, values })
    }

    pub fn constant(mesh: &Mesh, layout: Layout, value: f64) -> Self {
        QuadratureField {
            layout,
            values: vec![value; mesh.layout_len(layout)],
        }
    }

    pub fn from_fn<F>(mesh: &Mesh, layout: Layout, mut f: F) -> Result<Self>
    where
        F: FnMut([f64; 2]) -> Result<f64>,
    {
        let values = mesh
            .layout_points(layout)
            .into_iter()
            .map(&mut f)
            .collect::<Result<Vec<_>>>()?;
        Ok(QuadratureField { layout, values })
    }

    pub fn from_expr(mesh: &Mesh, layout: Layout, expr: &Expr) -> Result<Self> {
        Self::from_fn(mesh, layout, |p| Ok(expr.eval(&Bindings::point(p))?))
    }

    pub fn layout(&self) -> Layout {
        self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, i: usize) -> f64 {
        self.values[i]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn check(&self, mesh: &Mesh, layout: Layout) -> Result<()> {
        let expected = mesh.layout_len(layout);
        if self.layout != layout || self.values.len() != expected {
            return Err(Error::LayoutMismatch {
                expected,
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Continuous piecewise-linear function given by nodal values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeFunction {
    mesh: Arc<Mesh>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatticeKind {
    Meet,
    Join,
}

impl FeFunction {
    pub fn new(mesh: Arc<Mesh>, values: Vec<f64>) -> Result<Self> {
        if values.len() != mesh.node_count() {
            return Err(Error::InvalidArgument(format!(
                "coefficient vector has {} entries, mesh has {} nodes",
                values.len(),
                mesh.node_count()
            )));
        }
        Ok(FeFunction { mesh, values })
    }

    pub fn zeros(mesh: &Arc<Mesh>) -> Self {
        Self::constant(mesh, 0.0)
    }

    pub fn constant(mesh: &Arc<Mesh>, c: f64) -> Self {
        FeFunction {
            mesh: mesh.clone(),
            values: vec![c; mesh.node_count()],
        }
    }

    pub fn from_fn<F: FnMut([f64; 2]) -> f64>(mesh: &Arc<Mesh>, f: F) -> Self {
        FeFunction {
            mesh: mesh.clone(),
            values: mesh.nodes().iter().copied().map(f).collect(),
        }
    }

    /// Nodal interpolant of a spatial expression.
    pub fn interpolate(expr: &Expr, mesh: &Arc<Mesh>) -> Result<Self> {
        let values = mesh
            .nodes()
            .iter()
            .map(|&p| expr.eval(&Bindings::point(p)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(FeFunction {
            mesh: mesh.clone(),
            values,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.mesh.clone(), values)
    }

    pub fn same_mesh(&self, other: &FeFunction) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh) || *self.mesh == *other.mesh
    }

    pub fn check_mesh(&self, mesh: &Arc<Mesh>) -> Result<()> {
        if Arc::ptr_eq(&self.mesh, mesh) || *self.mesh == **mesh {
            Ok(())
        } else {
            Err(Error::MeshMismatch)
        }
    }

    fn zip_with(&self, other: &FeFunction, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if !self.same_mesh(other) {
            return Err(Error::MeshMismatch);
        }
        Ok(FeFunction {
            mesh: self.mesh.clone(),
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn lattice(&self, other: &FeFunction, kind: LatticeKind) -> Result<Self> {
        match kind {
            LatticeKind::Meet => self.zip_with(other, f64::min),
            LatticeKind::Join => self.zip_with(other, f64::max),
        }
    }

    pub fn meet(&self, other: &FeFunction) -> Result<Self> {
        self.lattice(other, LatticeKind::Meet)
    }

    pub fn join(&self, other: &FeFunction) -> Result<Self> {
        self.lattice(other, LatticeKind::Join)
    }

    pub fn add(&self, other: &FeFunction) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &FeFunction) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scaled(&self, t: f64) -> Self {
        self.map(|v| v * t)
    }

    pub fn shifted(&self, c: f64) -> Self {
        self.map(|v| v + c)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        FeFunction {
            mesh: self.mesh.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &FeFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `self <= other + tol` at every node.
    pub fn le(&self, other: &FeFunction, tol: f64) -> bool {
        self.values.iter().zip(&other.values).all(|(a, b)| *a <= b + tol)
    }

    /// Values of the function at every point of a layout.
    pub fn sample(&self, layout: Layout) -> QuadratureField {
        let mut values = vec![0.0; self.mesh.layout_len(layout)];
        self.mesh.for_each_point(layout, |i, nodes, phi, _| {
            values[i] = nodes.iter().zip(phi).map(|(&v, &b)| b * self.values[v]).sum();
        });
        QuadratureField { layout, values }
    }

    /// Gradient on element `e` (constant for P1).
    pub fn grad(&self, e: usize) -> [f64; 2] {
        let el = &self.mesh.elements[e];
        let mut g = [0.0; 2];
        for (a, &v) in el.nodes.iter().enumerate() {
            g[0] += self.values[v] * el.grads[a][0];
            g[1] += self.values[v] * el.grads[a][1];
        }
        g
    }

    /// Boundary values at the quadrature points of facets tagged `tag`.
    pub fn trace(&self, tag: Tag) -> Result<QuadratureField> {
        if self.mesh.facets_with(tag).is_empty() {
            return Err(Error::EmptyTagSet(tag.name()));
        }
        Ok(self.sample(Layout::Boundary(tag)))
    }

    /// Writes `node_index,x[,y],value` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        if self.mesh.dim() == 1 {
            writeln!(w, "node_index,x,value")?;
        } else {
            writeln!(w, "node_index,x,y,value")?;
        }
        for (i, (p, v)) in self.mesh.nodes().iter().zip(&self.values).enumerate() {
            if self.mesh.dim() == 1 {
                writeln!(w, "{i},{:?},{:?}", p[0], v)?;
            } else {
                writeln!(w, "{i},{:?},{:?},{:?}", p[0], p[1], v)?;
            }
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}
