//! Discrete multi-valued variational inequalities
//!
//! find `u ∈ K`, `η(x) ∈ f(x,u)`, `ζ(x) ∈ f_Γ(x,u)` with
//! `⟨Au, v − u⟩ + ∫ η (v − u) + ∫_Γ ζ (v − u) ≥ 0` for all `v ∈ K`,
//!
//! solved by a projected semismooth Newton (primal–dual active set) method.
//! The selection rule is applied as a function of the iterate, so a
//! converged iterate is automatically consistent with its selection.

use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::{FeFunction, Layout, Mesh, QuadratureField, Tag};
use crate::multifun::{assemble_source, Domain, IntervalMultifunction, SelectionRule, TruncationData};
use crate::operator::{DoublePhaseOperator, DualVector};
use crate::spaces::{luxemburg_norm, ModularKind};

#[derive(Debug, Clone, PartialEq)]
pub enum ConstraintKind {
    /// `K = V_{Γ₀}`.
    WholeSpace,
    /// `K = {u ∈ V_{Γ₀} : u ≥ ψ}`.
    Obstacle(FeFunction),
    /// `K = {u ∈ V_{Γ₀} : ψ_lo ≤ u ≤ ψ_hi}`.
    Box(FeFunction, FeFunction),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSet {
    mesh: Arc<Mesh>,
    kind: ConstraintKind,
}

impl ConstraintSet {
    pub fn whole_space(mesh: &Arc<Mesh>) -> Self {
        ConstraintSet {
            mesh: mesh.clone(),
            kind: ConstraintKind::WholeSpace,
        }
    }

    pub fn obstacle(psi: FeFunction) -> Result<Self> {
        let mesh = psi.mesh().clone();
        for node in 0..mesh.node_count() {
            if mesh.is_dirichlet(node) && psi.values()[node] > 0.0 {
                return Err(Error::Infeasible {
                    node,
                    violation: psi.values()[node],
                });
            }
        }
        Ok(ConstraintSet {
            mesh,
            kind: ConstraintKind::Obstacle(psi),
        })
    }

    pub fn boxed(lo: FeFunction, hi: FeFunction) -> Result<Self> {
        let mesh = lo.mesh().clone();
        hi.check_mesh(&mesh)?;
        for node in 0..mesh.node_count() {
            let (a, b) = (lo.values()[node], hi.values()[node]);
            let violation = if a > b {
                a - b
            } else if mesh.is_dirichlet(node) && (a > 0.0 || b < 0.0) {
                a.max(-b)
            } else {
                continue;
            };
            return Err(Error::Infeasible { node, violation });
        }
        Ok(ConstraintSet {
            mesh,
            kind: ConstraintKind::Box(lo, hi),
        })
    }

    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            ConstraintKind::WholeSpace => "whole_space",
            ConstraintKind::Obstacle(_) => "obstacle",
            ConstraintKind::Box(..) => "box",
        }
    }

    /// Nodal bounds; Dirichlet nodes are pinned to zero.
    pub fn bounds(&self, node: usize) -> (f64, f64) {
        if self.mesh.is_dirichlet(node) {
            return (0.0, 0.0);
        }
        match &self.kind {
            ConstraintKind::WholeSpace => (f64::NEG_INFINITY, f64::INFINITY),
            ConstraintKind::Obstacle(psi) => (psi.values()[node], f64::INFINITY),
            ConstraintKind::Box(lo, hi) => (lo.values()[node], hi.values()[node]),
        }
    }

    /// Nodal projection onto `K`.
    pub fn project(&self, u: &FeFunction) -> FeFunction {
        let values = u
            .values()
            .iter()
            .enumerate()
            .map(|(node, &v)| {
                let (lo, hi) = self.bounds(node);
                v.clamp(lo, hi)
            })
            .collect();
        FeFunction::new(self.mesh.clone(), values).expect("same mesh")
    }

    pub fn check_feasible(&self, u: &FeFunction, tol: f64) -> Result<()> {
        u.check_mesh(&self.mesh)?;
        for (node, &v) in u.values().iter().enumerate() {
            let (lo, hi) = self.bounds(node);
            let violation = (lo - v).max(v - hi);
            if violation > tol {
                return Err(Error::Infeasible { node, violation });
            }
        }
        Ok(())
    }

    /// Whether `u ∨ K ⊂ K` (`upper = true`) or `u ∧ K ⊂ K` holds.
    ///
    /// For a lower obstacle, `u ∨ φ` always stays in `K`; `u ∧ φ` stays in
    /// `K` iff `u ≥ ψ`. Upper bounds behave symmetrically. Dirichlet nodes
    /// require `u ≤ 0` (join) or `u ≥ 0` (meet) there.
    pub fn lattice_defect(&self, u: &FeFunction, join: bool) -> Result<Option<(usize, f64)>> {
        u.check_mesh(&self.mesh)?;
        let mut worst: Option<(usize, f64)> = None;
        for (node, &v) in u.values().iter().enumerate() {
            let (lo, hi) = self.bounds(node);
            // join pushes values up: need v ≤ hi; meet pushes down: need v ≥ lo.
            let d = if join { v - hi } else { lo - v };
            if d > 0.0 && worst.is_none_or(|(_, w)| d > w) {
                worst = Some((node, d));
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone)]
pub struct VIProblem {
    pub op: DoublePhaseOperator,
    pub constraint: ConstraintSet,
    pub f: IntervalMultifunction,
    pub f_gamma: IntervalMultifunction,
    truncation: Option<Arc<TruncationData>>,
}

impl VIProblem {
    pub fn new(op: DoublePhaseOperator, constraint: ConstraintSet) -> Result<Self> {
        if !Arc::ptr_eq(op.mesh(), constraint.mesh()) && **op.mesh() != **constraint.mesh() {
            return Err(Error::MeshMismatch);
        }
        Ok(VIProblem {
            op,
            constraint,
            f: IntervalMultifunction::zero(Domain::Interior),
            f_gamma: IntervalMultifunction::zero(Domain::Boundary),
            truncation: None,
        })
    }

    pub fn with_f(mut self, f: IntervalMultifunction) -> Result<Self> {
        if f.domain() != Domain::Interior {
            return Err(Error::InvalidArgument("f must be an interior multifunction".into()));
        }
        self.f = f;
        Ok(self)
    }

    pub fn with_f_gamma(mut self, f: IntervalMultifunction) -> Result<Self> {
        if f.domain() != Domain::Boundary {
            return Err(Error::InvalidArgument("f_gamma must be a boundary multifunction".into()));
        }
        self.f_gamma = f;
        Ok(self)
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        self.op.mesh()
    }

    pub fn truncation(&self) -> Option<&TruncationData> {
        self.truncation.as_deref()
    }

    pub fn is_auxiliary(&self) -> bool {
        self.truncation.is_some()
    }

    /// The same problem without truncation, penalty and compensators.
    pub fn original(&self) -> VIProblem {
        VIProblem {
            truncation: None,
            ..self.clone()
        }
    }

    fn interval_at(&self, domain: Domain, i: usize, x: [f64; 2], s: f64) -> Result<(f64, f64)> {
        let mf = match domain {
            Domain::Interior => &self.f,
            Domain::Boundary => &self.f_gamma,
        };
        match &self.truncation {
            Some(td) => td.truncated(mf, i, x, s),
            None => mf.eval_at(i, x, s),
        }
    }

    /// Selected value of the (possibly truncated) multifunction.
    fn selected(&self, domain: Domain, rule: &SelectionRule, i: usize, x: [f64; 2], s: f64) -> Result<f64> {
        let (lo, hi) = self.interval_at(domain, i, x, s)?;
        Ok(rule.pick(i, lo, hi))
    }

    /// Full single-valued lower-order term at a point: the selection plus,
    /// for auxiliary problems, `b` and the compensators.
    fn lower_order_at(&self, domain: Domain, rule: &SelectionRule, i: usize, x: [f64; 2], s: f64) -> Result<f64> {
        let mut g = self.selected(domain, rule, i, x, s)?;
        if let Some(td) = &self.truncation {
            if domain == Domain::Interior {
                g += td.penalty_b(self.op.exponents(), i, s);
            }
            g += td.compensator_sum(domain, i, s);
        }
        Ok(g)
    }

    /// One-sided difference quotient of smaller magnitude, which stays
    /// bounded across jumps of the selection.
    fn lower_order_slope(&self, domain: Domain, rule: &SelectionRule, i: usize, x: [f64; 2], s: f64, g: f64) -> Result<f64> {
        let h = 1e-7 * s.abs().max(1.0);
        let up = (self.lower_order_at(domain, rule, i, x, s + h)? - g) / h;
        let down = (g - self.lower_order_at(domain, rule, i, x, s - h)?) / h;
        Ok(if up.abs() <= down.abs() { up } else { down })
    }

    /// Selections `η`, `ζ` of the (possibly truncated) multifunctions at `u`.
    pub fn selections(&self, u: &FeFunction, rule: &SelectionRule) -> Result<(QuadratureField, QuadratureField)> {
        let mesh = self.mesh();
        let mut out = Vec::with_capacity(2);
        for domain in [Domain::Interior, Domain::Boundary] {
            let layout = domain.layout();
            let us = u.sample(layout);
            let values = mesh
                .layout_points(layout)
                .iter()
                .enumerate()
                .map(|(i, &x)| self.selected(domain, rule, i, x, us.get(i)))
                .collect::<Result<Vec<_>>>()?;
            out.push(QuadratureField::new(mesh, layout, values)?);
        }
        let zeta = out.pop().expect("two fields");
        let eta = out.pop().expect("two fields");
        Ok((eta, zeta))
    }

    /// Nodal load `∫ g(x,u) φ_a` and, optionally, its derivative on free dofs.
    fn lower_order(&self, u: &FeFunction, rule: &SelectionRule, with_jacobian: bool) -> Result<(Vec<f64>, Option<DMatrix<f64>>)> {
        let mesh = self.mesh();
        let nfree = mesh.free_nodes().len();
        let mut load = vec![0.0; mesh.node_count()];
        let mut jac = with_jacobian.then(|| DMatrix::zeros(nfree, nfree));
        for domain in [Domain::Interior, Domain::Boundary] {
            let layout = domain.layout();
            if domain == Domain::Boundary && mesh.facets_with(Tag::Gamma).is_empty() {
                continue;
            }
            let pts = mesh.layout_points(layout);
            let mut failure = None;
            mesh.for_each_point(layout, |i, nodes, phi, w| {
                if failure.is_some() {
                    return;
                }
                let s: f64 = nodes.iter().zip(phi).map(|(&v, &b)| b * u.values()[v]).sum();
                let res = self.lower_order_at(domain, rule, i, pts[i], s).and_then(|g| {
                    let slope = match jac {
                        Some(_) => self.lower_order_slope(domain, rule, i, pts[i], s, g)?,
                        None => 0.0,
                    };
                    Ok((g, slope))
                });
                match res {
                    Ok((g, slope)) => {
                        for (a, &na) in nodes.iter().enumerate() {
                            load[na] += w * g * phi[a];
                        }
                        if let Some(jac) = jac.as_mut() {
                            if slope != 0.0 {
                                for (a, &na) in nodes.iter().enumerate() {
                                    let Some(ia) = mesh.dof_of_node(na) else { continue };
                                    for (b, &nb) in nodes.iter().enumerate() {
                                        let Some(ib) = mesh.dof_of_node(nb) else { continue };
                                        jac[(ia, ib)] += w * slope * phi[a] * phi[b];
                                    }
                                }
                            }
                        }
                    }
                    Err(e) => failure = Some(e),
                }
            });
            if let Some(e) = failure {
                return Err(e);
            }
        }
        Ok((load, jac))
    }

    /// `Au + g(·,u)` on the free nodes, with the selection given by `rule`.
    pub fn residual(&self, u: &FeFunction, rule: &SelectionRule) -> Result<DualVector> {
        let mut nodal = self.op.apply_nodal(u)?;
        let (load, _) = self.lower_order(u, rule, false)?;
        for (a, b) in nodal.iter_mut().zip(&load) {
            *a += b;
        }
        Ok(DualVector::from_nodal(self.mesh(), &nodal))
    }

    /// Natural complementarity residual of the full (possibly auxiliary) problem.
    pub fn problem_residual(&self, u: &FeFunction, rule: &SelectionRule) -> Result<f64> {
        self.constraint.check_feasible(u, 0.0)?;
        let r = self.residual(u, rule)?;
        Ok(natural_residual(&self.constraint, u, &r))
    }
}

/// `max_i |u_i − clamp(u_i − r_i, lo_i, hi_i)|` over free nodes; for a
/// lower obstacle this is `max |min(r_i, u_i − ψ_i)|`.
fn natural_residual(k: &ConstraintSet, u: &FeFunction, r: &DualVector) -> f64 {
    let mesh = k.mesh();
    mesh.free_nodes()
        .iter()
        .zip(r.values())
        .map(|(&node, &ri)| {
            let (lo, hi) = k.bounds(node);
            let ui = u.values()[node];
            (ui - (ui - ri).clamp(lo, hi)).abs()
        })
        .fold(0.0, f64::max)
}

/// Natural residual of a candidate solution `(u, η, ζ)` of the original inequality.
pub fn vi_residual(prob: &VIProblem, u: &FeFunction, eta: &QuadratureField, zeta: &QuadratureField) -> Result<f64> {
    prob.constraint.check_feasible(u, 0.0)?;
    let r = source_residual(prob, u, eta, zeta)?;
    Ok(natural_residual(&prob.constraint, u, &r))
}

/// `Au + ∫ η φ_i + ∫_Γ ζ φ_i` on the free nodes.
pub fn source_residual(prob: &VIProblem, u: &FeFunction, eta: &QuadratureField, zeta: &QuadratureField) -> Result<DualVector> {
    let mesh = prob.mesh();
    let mut r = prob.op.apply(u)?;
    r.add_assign(&assemble_source(eta, mesh, Layout::Interior)?);
    r.add_assign(&assemble_source(zeta, mesh, Layout::Boundary(Tag::Gamma))?);
    Ok(r)
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub selection: SelectionRule,
    pub max_outer: usize,
    pub initial: Option<FeFunction>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-9,
            max_iter: 200,
            selection: SelectionRule::Lower,
            max_outer: 50,
            initial: None,
        }
    }
}

impl SolveOptions {
    pub fn with_selection(mut self, rule: SelectionRule) -> Self {
        self.selection = rule;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_initial(mut self, u: FeFunction) -> Self {
        self.initial = Some(u);
        self
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EnclosureStatus {
    /// Largest `u̲ − u` over nodes (≤ tol when enclosed).
    pub below: f64,
    /// Largest `u − ū` over nodes.
    pub above: f64,
    pub worst_node: usize,
    pub holds: bool,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub outer_iterations: usize,
    pub residual: f64,
    pub residual_history: Vec<f64>,
    pub max_update_history: Vec<f64>,
    pub active_history: Vec<usize>,
    pub selection: String,
    pub selection_defect: f64,
    pub epsilon: f64,
    pub converged: bool,
    pub enclosure: Option<EnclosureStatus>,
    #[serde(skip)]
    pub wall_time: Duration,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub u: FeFunction,
    pub eta: QuadratureField,
    pub zeta: QuadratureField,
    pub report: SolveReport,
}

fn lumped_mass(mesh: &Mesh) -> Vec<f64> {
    let nodal = mesh.integrate_against_basis(Layout::Interior, |_| 1.0);
    mesh.free_nodes().iter().map(|&v| nodal[v]).collect()
}

struct Newton<'a> {
    prob: &'a VIProblem,
    rule: &'a SelectionRule,
    scale: Vec<f64>,
}

impl Newton<'_> {
    fn merit(&self, u: &FeFunction, r: &DualVector) -> f64 {
        let k = &self.prob.constraint;
        k.mesh()
            .free_nodes()
            .iter()
            .zip(r.values())
            .zip(&self.scale)
            .map(|((&node, &ri), &c)| {
                let (lo, hi) = k.bounds(node);
                let ui = u.values()[node];
                let phi = ui - (ui - c * ri).clamp(lo, hi);
                phi * phi
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Semismooth Newton direction on the free nodes; `None` if singular.
    fn direction(&self, op: &DoublePhaseOperator, u: &FeFunction, r: &DualVector) -> Result<(Option<Vec<f64>>, usize)> {
        let mesh = self.prob.mesh();
        let free = mesh.free_nodes();
        let n = free.len();
        let ja = op.jacobian(u)?;
        let (_, jg) = self.prob.lower_order(u, self.rule, true)?;
        let mut j = jg.expect("jacobian requested");
        for (row, col, v) in ja.triplet_iter() {
            j[(row, col)] += *v;
        }
        let mut delta = vec![0.0; n];
        let mut active = vec![false; n];
        for (i, &node) in free.iter().enumerate() {
            let (lo, hi) = self.prob.constraint.bounds(node);
            let ui = u.values()[node];
            let trial = ui - self.scale[i] * r.values()[i];
            if trial <= lo {
                active[i] = true;
                delta[i] = lo - ui;
            } else if trial >= hi {
                active[i] = true;
                delta[i] = hi - ui;
            }
        }
        let inactive: Vec<usize> = (0..n).filter(|&i| !active[i]).collect();
        let nact = n - inactive.len();
        if inactive.is_empty() {
            return Ok((Some(delta), nact));
        }
        let m = inactive.len();
        let mut a = DMatrix::zeros(m, m);
        let mut rhs = DVector::zeros(m);
        for (ii, &i) in inactive.iter().enumerate() {
            let mut b = -r.values()[i];
            for k in 0..n {
                if active[k] {
                    b -= j[(i, k)] * delta[k];
                }
            }
            rhs[ii] = b;
            for (jj, &k) in inactive.iter().enumerate() {
                a[(ii, jj)] = j[(i, k)];
            }
        }
        let Some(sol) = a.lu().solve(&rhs) else {
            return Ok((None, nact));
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return Ok((None, nact));
        }
        for (ii, &i) in inactive.iter().enumerate() {
            delta[i] = sol[ii];
        }
        Ok((Some(delta), nact))
    }
}

fn step(k: &ConstraintSet, u: &FeFunction, delta: &[f64], alpha: f64) -> FeFunction {
    let mut v = u.clone();
    for (&node, d) in k.mesh().free_nodes().iter().zip(delta) {
        v.values_mut()[node] += alpha * d;
    }
    k.project(&v)
}

fn initial_iterate(prob: &VIProblem, opts: &SolveOptions) -> Result<FeFunction> {
    let mesh = prob.mesh();
    let mut u = match &opts.initial {
        Some(u0) => {
            u0.check_mesh(mesh)?;
            u0.clone()
        }
        None => FeFunction::zeros(mesh),
    };
    if let Some(td) = prob.truncation() {
        u = u.join(td.lower())?.meet(td.upper())?;
    }
    Ok(prob.constraint.project(&u))
}

/// Solves the discrete VI to `opts.tol` in the natural residual.
///
/// An exhausted iteration budget is not an error: the best iterate is
/// returned with `report.converged == false`.
pub fn solve_vi(prob: &VIProblem, opts: &SolveOptions) -> Result<Solution> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", opts.tol)));
    }
    if let SelectionRule::Weighted(theta) = &opts.selection {
        theta.check(prob.mesh(), Layout::Interior)?;
    }
    let start = Instant::now();
    let rule = &opts.selection;
    let newton = Newton {
        prob,
        rule,
        scale: lumped_mass(prob.mesh()).iter().map(|m| 1.0 / m).collect(),
    };
    let mut op = prob.op.clone();
    let mut u = initial_iterate(prob, opts)?;
    let mut r = prob.residual(&u, rule)?;
    let mut report = SolveReport {
        selection: rule.name().to_string(),
        ..Default::default()
    };
    let mut res = natural_residual(&prob.constraint, &u, &r);
    let mut merit = newton.merit(&u, &r);
    let mut best = (res, u.clone());
    report.residual_history.push(res);
    report.max_update_history.push(0.0);
    let mut bumps = 0;
    while res > opts.tol && report.iterations < opts.max_iter {
        report.iterations += 1;
        let (dir, nact) = newton.direction(&op, &u, &r)?;
        report.active_history.push(nact);
        let Some(delta) = dir else {
            bumps += 1;
            if bumps > 3 {
                return Err(Error::SingularSystem { epsilon: op.epsilon() });
            }
            op = op.with_epsilon((op.epsilon() * 100.0).max(1e-8));
            continue;
        };
        // Backtracking on the scaled complementarity residual.
        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha >= 1e-8 {
            let trial = step(&prob.constraint, &u, &delta, alpha);
            let rt = prob.residual(&trial, rule)?;
            let mt = newton.merit(&trial, &rt);
            if mt <= (1.0 - 1e-4 * alpha) * merit {
                accepted = Some((mt, trial, rt));
                break;
            }
            alpha *= 0.5;
        }
        let (mt, trial, rt) = match accepted {
            Some(a) => a,
            None => {
                if bumps < 3 {
                    bumps += 1;
                    op = op.with_epsilon((op.epsilon() * 100.0).max(1e-8));
                }
                // Nonmonotone escape: take the full step.
                let trial = step(&prob.constraint, &u, &delta, 1.0);
                let rt = prob.residual(&trial, rule)?;
                (newton.merit(&trial, &rt), trial, rt)
            }
        };
        report.max_update_history.push(trial.max_abs_diff(&u));
        u = trial;
        r = rt;
        merit = mt;
        res = natural_residual(&prob.constraint, &u, &r);
        report.residual_history.push(res);
        if res < best.0 {
            best = (res, u.clone());
        }
    }
    let converged = res <= opts.tol;
    if !converged {
        u = best.1;
        res = best.0;
    }
    let (eta, zeta) = prob.selections(&u, rule)?;
    report.outer_iterations = 1;
    report.residual = res;
    report.converged = converged;
    report.epsilon = op.epsilon();
    report.selection_defect = if prob.is_auxiliary() {
        0.0
    } else {
        prob.f.selection_defect(&u, &eta)?.max(prob.f_gamma.selection_defect(&u, &zeta)?)
    };
    report.wall_time = start.elapsed();
    Ok(Solution { u, eta, zeta, report })
}

/// The auxiliary problem: truncated multifunctions, penalty `b` and
/// compensators folded into the lower-order term.
pub fn build_auxiliary(prob: &VIProblem, td: TruncationData) -> Result<VIProblem> {
    td.lower().check_mesh(prob.mesh())?;
    Ok(VIProblem {
        truncation: Some(Arc::new(td)),
        ..prob.clone()
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct RadiusProbe {
    pub radius: f64,
    pub samples: usize,
    pub min_value: f64,
    pub no_violation_found: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoercivityReport {
    pub seed: u64,
    pub radii: Vec<RadiusProbe>,
    pub verdict: String,
}

impl CoercivityReport {
    pub fn no_violation_found(&self) -> bool {
        self.radii.iter().all(|r| r.no_violation_found)
    }
}

/// Samples `⟨Au + η + ζ, u − u₀⟩` on spheres `‖u‖ = R` of `K` (Luxemburg
/// norm of the Sobolev modular), taking the selections that minimise the
/// pairing. Finding no negative value is evidence, not a proof.
pub fn check_coercivity(prob: &VIProblem, u0: &FeFunction, radii: &[f64], samples: usize, seed: u64) -> Result<CoercivityReport> {
    prob.constraint.check_feasible(u0, 1e-12)?;
    let mesh = prob.mesh();
    let ed = prob.op.exponents();
    let kind = ModularKind::SobolevH;
    let norm = |u: &FeFunction| luxemburg_norm(&kind, ed, u, 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // White noise alone is dominated by its gradient; smoothed copies reach
    // the low modes where lower-order terms can win.
    let n = mesh.subdivisions() as f64;
    let levels = [0.0, 1.0 / 64.0, 1.0 / 16.0, 0.25, 1.0];
    let directions: Vec<FeFunction> = (0..samples)
        .map(|k| {
            let noise = FeFunction::from_fn(mesh, |_| StandardNormal.sample(&mut rng));
            smooth(&noise, (n * n * levels[k % levels.len()]) as usize)
        })
        .collect();
    let mut probes = Vec::new();
    for &radius in radii {
        let mut min_value = f64::INFINITY;
        let mut used = 0;
        for d in &directions {
            let at = |lambda: f64| prob.constraint.project(&d.scaled(lambda));
            let n0 = norm(&at(0.0))?;
            if n0 >= radius {
                continue;
            }
            let mut hi = 1.0;
            while norm(&at(hi))? < radius {
                hi *= 2.0;
                if hi > 1e12 {
                    break;
                }
            }
            let mut lo = 0.0;
            let mut u = at(hi);
            let mut nu = norm(&u)?;
            for _ in 0..200 {
                if (nu - radius).abs() <= 1e-6 * radius.max(1.0) {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                u = at(mid);
                nu = norm(&u)?;
                if nu < radius {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            if (nu - radius).abs() > 1e-6 * radius.max(1.0) {
                continue;
            }
            used += 1;
            min_value = min_value.min(min_pairing(prob, &u, u0)?);
        }
        if used == 0 {
            return Err(Error::NoFeasibleSample(radius));
        }
        probes.push(RadiusProbe {
            radius,
            samples: used,
            min_value,
            no_violation_found: min_value > 0.0,
        });
    }
    let verdict = if probes.iter().all(|p| p.no_violation_found) {
        "no violation found".to_string()
    } else {
        "violation found".to_string()
    };
    Ok(CoercivityReport {
        seed,
        radii: probes,
        verdict,
    })
}

/// `passes` sweeps of `u_i ← (u_i + mean of neighbours)/2`.
fn smooth(u: &FeFunction, passes: usize) -> FeFunction {
    if passes == 0 {
        return u.clone();
    }
    let mesh = u.mesh();
    let mut neighbours = vec![Vec::new(); mesh.node_count()];
    for el in mesh.elements() {
        for &a in &el.nodes {
            for &b in &el.nodes {
                if a != b && !neighbours[a].contains(&b) {
                    neighbours[a].push(b);
                }
            }
        }
    }
    let mut v = u.values().to_vec();
    let mut next = v.clone();
    for _ in 0..passes {
        for (i, nb) in neighbours.iter().enumerate() {
            let mean = nb.iter().map(|&j| v[j]).sum::<f64>() / nb.len() as f64;
            next[i] = 0.5 * (v[i] + mean);
        }
        std::mem::swap(&mut v, &mut next);
    }
    u.with_values(v).expect("same mesh")
}

/// `min over selections of ⟨Au + η + ζ, u − u₀⟩`.
fn min_pairing(prob: &VIProblem, u: &FeFunction, u0: &FeFunction) -> Result<f64> {
    let mesh = prob.mesh();
    let w = u.sub(u0)?;
    let mut total = prob.op.pairing(u, &w)?;
    for domain in [Domain::Interior, Domain::Boundary] {
        let layout = domain.layout();
        let us = u.sample(layout);
        let ws = w.sample(layout);
        let pts = mesh.layout_points(layout);
        let mut failure = None;
        let mut acc = 0.0;
        mesh.for_each_point(layout, |i, _, _, weight| {
            if failure.is_some() {
                return;
            }
            match prob.interval_at(domain, i, pts[i], us.get(i)) {
                Ok((lo, hi)) => {
                    let wi = ws.get(i);
                    acc += weight * if wi > 0.0 { lo * wi } else { hi * wi };
                }
                Err(e) => failure = Some(e),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        total += acc;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, VarSet};
    use crate::spaces::ExponentData;

    fn laplace(mesh: &Arc<Mesh>) -> DoublePhaseOperator {
        DoublePhaseOperator::new(mesh.clone(), ExponentData::constant(mesh, 2.0, 3.0, 0.0), 1e-8).unwrap()
    }

    fn interior(f1: &str, f2: &str) -> IntervalMultifunction {
        IntervalMultifunction::parse(f1, f2, Domain::Interior).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let m = Mesh::square(4, "0").unwrap();
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m)).unwrap();
        let sol = solve_vi(&prob, &SolveOptions::default()).unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.u.max_abs_diff(&FeFunction::zeros(&m)), 0.0);
    }

    #[test]
    fn poisson_matches_linear_solve() {
        let m = Mesh::interval(16, "0").unwrap();
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m))
            .unwrap()
            .with_f(IntervalMultifunction::single_valued("-(1 + 3*x)", Domain::Interior).unwrap())
            .unwrap();
        let sol = solve_vi(&prob, &SolveOptions::default()).unwrap();
        assert!(sol.report.converged && sol.report.residual <= 1e-9);
        // Oracle: dense stiffness and load assembled by hand.
        let n = 15;
        let h = 1.0 / 16.0;
        let mut k = DMatrix::zeros(n, n);
        for i in 0..n {
            k[(i, i)] = 2.0 / h;
            if i + 1 < n {
                k[(i, i + 1)] = -1.0 / h;
                k[(i + 1, i)] = -1.0 / h;
            }
        }
        // ∫ (1 + 3x) φ_i is exact for linear data: h (1 + 3 x_i).
        let b = DVector::from_fn(n, |i, _| h * (1.0 + 3.0 * (i + 1) as f64 * h));
        let x = k.lu().solve(&b).unwrap();
        for i in 0..n {
            assert!((sol.u.values()[i + 1] - x[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn residual_of_zero_is_load() {
        let m = Mesh::interval(8, "0").unwrap();
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m))
            .unwrap()
            .with_f(IntervalMultifunction::single_valued("-2", Domain::Interior).unwrap())
            .unwrap();
        let z = FeFunction::zeros(&m);
        let (eta, zeta) = prob.selections(&z, &SelectionRule::Lower).unwrap();
        let r = vi_residual(&prob, &z, &eta, &zeta).unwrap();
        assert!((r - 2.0 / 8.0).abs() < 1e-14);
    }

    fn obstacle_problem(n: usize) -> VIProblem {
        let m = Mesh::interval(n, "0").unwrap();
        let psi = FeFunction::constant(&m, -0.5);
        VIProblem::new(laplace(&m), ConstraintSet::obstacle(psi).unwrap())
            .unwrap()
            .with_f(IntervalMultifunction::single_valued("8", Domain::Interior).unwrap())
            .unwrap()
    }

    #[test]
    fn obstacle_contact_region() {
        let prob = obstacle_problem(64);
        let sol = solve_vi(&prob, &SolveOptions::default()).unwrap();
        assert!(sol.report.converged);
        let u = &sol.u;
        assert!((u.min_value() + 0.5).abs() < 1e-12);
        assert!(u.values().iter().all(|&v| v >= -0.5));
        let a = 1.0 / (2.0 * 2f64.sqrt());
        let contact: Vec<f64> = m_nodes(&prob)
            .into_iter()
            .zip(u.values())
            .filter(|(_, &v)| v <= -0.5 + 1e-12)
            .map(|(x, _)| x)
            .collect();
        let first = contact.first().copied().unwrap();
        assert!((first - a).abs() <= 1.0 / 64.0);
        // Complementarity at convergence.
        let r = prob.residual(u, &SelectionRule::Lower).unwrap();
        for (&node, &ri) in prob.mesh().free_nodes().iter().zip(r.values()) {
            if u.values()[node] > -0.5 {
                assert!(ri.abs() <= 1e-9);
            } else {
                assert!(ri >= -1e-9);
            }
        }
    }

    fn m_nodes(prob: &VIProblem) -> Vec<f64> {
        prob.mesh().nodes().iter().map(|p| p[0]).collect()
    }

    #[test]
    fn perturbation_changes_residual_linearly() {
        let prob = obstacle_problem(16);
        let sol = solve_vi(&prob, &SolveOptions::default()).unwrap();
        let mut v = sol.u.clone();
        // Node 1 is inactive (close to the Dirichlet boundary).
        assert!(v.values()[1] > -0.5);
        let base = prob.problem_residual(&v, &SelectionRule::Lower).unwrap();
        let mut ratios = Vec::new();
        for d in [1e-3, 1e-4] {
            v.values_mut()[1] = sol.u.values()[1] + d;
            ratios.push((prob.problem_residual(&v, &SelectionRule::Lower).unwrap() - base) / d);
        }
        assert!((ratios[0] - ratios[1]).abs() < 1e-6 * ratios[0].abs());
        assert!(ratios[0] > 1.0);
    }

    #[test]
    fn infeasible_inputs() {
        let m = Mesh::interval(4, "0").unwrap();
        let psi = FeFunction::constant(&m, 0.5);
        assert!(matches!(ConstraintSet::obstacle(psi), Err(Error::Infeasible { .. })));
        let prob = obstacle_problem(4);
        let low = FeFunction::constant(prob.mesh(), -1.0);
        let (eta, zeta) = prob.selections(&low, &SelectionRule::Lower).unwrap();
        assert!(vi_residual(&prob, &low, &eta, &zeta).is_err());
    }

    #[test]
    fn box_constraint_and_lattice() {
        let m = Mesh::interval(8, "0").unwrap();
        let lo = FeFunction::constant(&m, -0.1);
        let hi = FeFunction::constant(&m, 0.05);
        let k = ConstraintSet::boxed(lo, hi).unwrap();
        let prob = VIProblem::new(laplace(&m), k.clone())
            .unwrap()
            .with_f(IntervalMultifunction::single_valued("-8", Domain::Interior).unwrap())
            .unwrap();
        let sol = solve_vi(&prob, &SolveOptions::default()).unwrap();
        assert!(sol.report.converged);
        assert!((sol.u.max_value() - 0.05).abs() < 1e-12);
        let above = FeFunction::constant(&m, 0.2);
        assert!(k.lattice_defect(&above, true).unwrap().is_some());
        assert!(k.lattice_defect(&above, false).unwrap().is_none());
        assert!(ConstraintSet::boxed(FeFunction::constant(&m, 1.0), FeFunction::constant(&m, 0.0)).is_err());
    }

    #[test]
    fn nonlinear_operator_converges() {
        let m = Mesh::square(6, "x - 0.99").unwrap();
        let ed = ExponentData::from_exprs(&m, &e("1.6 + 0.2*x"), &e("2.5"), &e("1 + y")).unwrap();
        let op = DoublePhaseOperator::new(m.clone(), ed, 1e-8).unwrap();
        let prob = VIProblem::new(op, ConstraintSet::whole_space(&m))
            .unwrap()
            .with_f(interior("-1 + s^3", "1 + s^3"))
            .unwrap()
            .with_f_gamma(IntervalMultifunction::parse("s - 0.5", "s + 0.5", Domain::Boundary).unwrap())
            .unwrap();
        for rule in [SelectionRule::Lower, SelectionRule::Upper, SelectionRule::Midpoint] {
            let sol = solve_vi(&prob, &SolveOptions::default().with_selection(rule)).unwrap();
            assert!(sol.report.converged, "{:?}", sol.report.residual_history);
            let r = vi_residual(&prob, &sol.u, &sol.eta, &sol.zeta).unwrap();
            assert!(r <= 1e-9);
            assert!(sol.report.selection_defect <= 1e-12);
        }
    }

    fn e(s: &str) -> Expr {
        Expr::parse(s, VarSet::SPATIAL).unwrap()
    }

    #[test]
    fn auxiliary_with_single_pair() {
        let m = Mesh::interval(16, "0").unwrap();
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m))
            .unwrap()
            .with_f(interior("-2 + s", "2 + s"))
            .unwrap();
        let lo = FeFunction::from_fn(&m, |p| -p[0] * (1.0 - p[0]));
        let hi = lo.scaled(-1.0);
        let td = TruncationData::new(&prob.f, &prob.f_gamma, &lo, &hi, &SelectionRule::Lower, &SelectionRule::Upper).unwrap();
        let aux = build_auxiliary(&prob, td).unwrap();
        let sol = solve_vi(&aux, &SolveOptions::default()).unwrap();
        assert!(sol.report.converged);
        assert!(lo.le(&sol.u, 1e-9) && sol.u.le(&hi, 1e-9));
        let orig = vi_residual(&prob, &sol.u, &sol.eta, &sol.zeta).unwrap();
        let auxr = aux.problem_residual(&sol.u, &SelectionRule::Lower).unwrap();
        assert!((orig - auxr).abs() <= 1e-15);
        assert!(orig <= 1e-9);
    }

    #[test]
    fn degenerate_interval_keeps_solution() {
        let m = Mesh::interval(8, "0").unwrap();
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m))
            .unwrap()
            .with_f(IntervalMultifunction::single_valued("-1", Domain::Interior).unwrap())
            .unwrap();
        let exact = solve_vi(&prob, &SolveOptions::default()).unwrap().u;
        let td = TruncationData::new(&prob.f, &prob.f_gamma, &exact, &exact, &SelectionRule::Lower, &SelectionRule::Upper).unwrap();
        let aux = build_auxiliary(&prob, td).unwrap();
        let sol = solve_vi(&aux, &SolveOptions::default()).unwrap();
        assert!(sol.u.max_abs_diff(&exact) <= 1e-12);
    }

    #[test]
    fn probe_positive_for_monotone_problem() {
        let m = Mesh::interval(16, "0").unwrap();
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m)).unwrap();
        let rep = check_coercivity(&prob, &FeFunction::zeros(&m), &[1.0, 2.0, 4.0, 8.0], 8, 1).unwrap();
        assert!(rep.no_violation_found());
        assert_eq!(rep.verdict, "no violation found");
        // Quadratic growth: minima increase with the radius.
        for w in rep.radii.windows(2) {
            assert!(w[1].min_value > w[0].min_value);
        }
    }

    #[test]
    fn probe_detects_strong_negative_drift() {
        let m = Mesh::interval(16, "0").unwrap();
        // Largest discrete eigenvalue of -u'' with P1 mass: below 12/h^2.
        let lambda = 12.0 * 256.0 * 2.0;
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m))
            .unwrap()
            .with_f(IntervalMultifunction::single_valued(&format!("-{lambda}*s"), Domain::Interior).unwrap())
            .unwrap();
        let rep = check_coercivity(&prob, &FeFunction::zeros(&m), &[1.0, 4.0], 6, 2).unwrap();
        assert!(rep.radii.iter().all(|r| r.min_value < 0.0));
        assert_eq!(rep.verdict, "violation found");
    }

    #[test]
    fn probe_finds_low_mode_violation() {
        // -u'' - 100u is negative on the modes sin(kπx) with k²π² < 100, i.e. k ≤ 3.
        let m = Mesh::interval(32, "0").unwrap();
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m))
            .unwrap()
            .with_f(interior("-100*s - 1", "-100*s + 1"))
            .unwrap();
        let rep = check_coercivity(&prob, &FeFunction::zeros(&m), &[2.0, 8.0], 10, 9).unwrap();
        assert_eq!(rep.verdict, "violation found");
    }

    #[test]
    fn probe_deterministic() {
        let m = Mesh::interval(8, "0").unwrap();
        let prob = VIProblem::new(laplace(&m), ConstraintSet::whole_space(&m))
            .unwrap()
            .with_f(interior("-1", "1"))
            .unwrap();
        let a = check_coercivity(&prob, &FeFunction::zeros(&m), &[0.5, 3.0], 5, 42).unwrap();
        let b = check_coercivity(&prob, &FeFunction::zeros(&m), &[0.5, 3.0], 5, 42).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
