//! The double phase operator
//! `⟨Au, v⟩ = ∫ (|∇u|^{p−2}∇u + μ|∇u|^{q−2}∇u)·∇v`,
//! its potential `I(u) = ∫ |∇u|^p/p + μ|∇u|^q/q` and its Jacobian.

use std::sync::Arc;

use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::mesh::{FeFunction, Mesh};
use crate::spaces::ExponentData;

/// One value per free node, `⟨·, φ_i⟩` against the nodal basis.
#[derive(Debug, Clone, PartialEq)]
pub struct DualVector {
    values: Vec<f64>,
}

impl DualVector {
    pub fn zeros(mesh: &Mesh) -> Self {
        DualVector {
            values: vec![0.0; mesh.free_nodes().len()],
        }
    }

    /// Restricts a full nodal load vector to the free nodes.
    pub fn from_nodal(mesh: &Mesh, nodal: &[f64]) -> Self {
        DualVector {
            values: mesh.free_nodes().iter().map(|&v| nodal[v]).collect(),
        }
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

    pub fn add_assign(&mut self, other: &DualVector) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += b;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pairing with the free coefficients of `u`.
    pub fn dot(&self, u: &FeFunction) -> f64 {
        let mesh = u.mesh();
        mesh.free_nodes()
            .iter()
            .zip(&self.values)
            .map(|(&v, r)| r * u.values()[v])
            .sum()
    }
}

#[derive(Debug, Clone)]
pub struct DoublePhaseOperator {
    mesh: Arc<Mesh>,
    exponents: ExponentData,
    epsilon: f64,
}

/// `t^e`, taken as zero when `t = 0` and `e ≤ 0` would make it singular.
fn pow0(t: f64, e: f64) -> f64 {
    if t == 0.0 {
        if e == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        t.powf(e)
    }
}

impl DoublePhaseOperator {
    pub fn new(mesh: Arc<Mesh>, exponents: ExponentData, epsilon: f64) -> Result<Self> {
        if !(epsilon >= 0.0) {
            return Err(Error::InvalidArgument(format!("smoothing must be nonnegative, got {epsilon}")));
        }
        exponents.p().check(&mesh, crate::mesh::Layout::Interior)?;
        Ok(DoublePhaseOperator {
            mesh,
            exponents,
            epsilon,
        })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn exponents(&self) -> &ExponentData {
        &self.exponents
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn with_epsilon(&self, epsilon: f64) -> Self {
        DoublePhaseOperator {
            epsilon,
            ..self.clone()
        }
    }

    /// Element-wise flux coefficient `∫_e |∇u|^{p−2} + μ|∇u|^{q−2}` (quadrature-weighted).
    fn flux_weight(&self, e: usize, gn: f64) -> f64 {
        let nq = self.mesh.qp_per_element();
        let (p, q, mu) = (self.exponents.p(), self.exponents.q(), self.exponents.mu());
        let mut c = 0.0;
        if gn == 0.0 {
            return 0.0;
        }
        for k in 0..nq {
            let i = e * nq + k;
            c += self.mesh.qp_weight(e, k) * (pow0(gn, p.get(i) - 2.0) + mu.get(i) * pow0(gn, q.get(i) - 2.0));
        }
        c
    }

    /// `⟨Au, φ_a⟩` for every node `a`, including Dirichlet nodes.
    pub fn apply_nodal(&self, u: &FeFunction) -> Result<Vec<f64>> {
        u.check_mesh(&self.mesh)?;
        let mut out = vec![0.0; self.mesh.node_count()];
        for (e, el) in self.mesh.elements().iter().enumerate() {
            let g = u.grad(e);
            let c = self.flux_weight(e, (g[0] * g[0] + g[1] * g[1]).sqrt());
            if c == 0.0 {
                continue;
            }
            for (a, &node) in el.nodes.iter().enumerate() {
                let ga = el.grads[a];
                out[node] += c * (g[0] * ga[0] + g[1] * ga[1]);
            }
        }
        Ok(out)
    }

    pub fn apply(&self, u: &FeFunction) -> Result<DualVector> {
        Ok(DualVector::from_nodal(&self.mesh, &self.apply_nodal(u)?))
    }

    /// `⟨Au, h⟩` over all nodes of `h`.
    pub fn pairing(&self, u: &FeFunction, h: &FeFunction) -> Result<f64> {
        h.check_mesh(&self.mesh)?;
        Ok(self.apply_nodal(u)?.iter().zip(h.values()).map(|(a, b)| a * b).sum())
    }

    pub fn energy(&self, u: &FeFunction) -> Result<f64> {
        u.check_mesh(&self.mesh)?;
        let nq = self.mesh.qp_per_element();
        let (p, q, mu) = (self.exponents.p(), self.exponents.q(), self.exponents.mu());
        let mut total = 0.0;
        for e in 0..self.mesh.elements().len() {
            let g = u.grad(e);
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if gn == 0.0 {
                continue;
            }
            for k in 0..nq {
                let i = e * nq + k;
                let (pi, qi) = (p.get(i), q.get(i));
                total += self.mesh.qp_weight(e, k) * (gn.powf(pi) / pi + mu.get(i) * gn.powf(qi) / qi);
            }
        }
        Ok(total)
    }

    /// `I(u + δh) − I(u − δh)` without the cancellation of subtracting two
    /// energies: per point, `|g+δk|^r − |g−δk|^r` is formed from the exact
    /// difference `4δ g·k` of the squared norms.
    pub fn energy_difference(&self, u: &FeFunction, h: &FeFunction, delta: f64) -> Result<f64> {
        u.check_mesh(&self.mesh)?;
        h.check_mesh(&self.mesh)?;
        let nq = self.mesh.qp_per_element();
        let (p, q, mu) = (self.exponents.p(), self.exponents.q(), self.exponents.mu());
        // (a^{r/2} − b^{r/2}) / r with d = a − b known accurately.
        let diff = |a: f64, b: f64, d: f64, r: f64| -> f64 {
            let half = 0.5 * r;
            let v = if b == 0.0 {
                pow0(a, half)
            } else if a == 0.0 {
                -pow0(b, half)
            } else {
                b.powf(half) * (half * (d / b).ln_1p()).exp_m1()
            };
            v / r
        };
        let mut total = 0.0;
        for e in 0..self.mesh.elements().len() {
            let (g, k) = (u.grad(e), h.grad(e));
            let plus = [g[0] + delta * k[0], g[1] + delta * k[1]];
            let minus = [g[0] - delta * k[0], g[1] - delta * k[1]];
            let a = plus[0] * plus[0] + plus[1] * plus[1];
            let b = minus[0] * minus[0] + minus[1] * minus[1];
            let d = 4.0 * delta * (g[0] * k[0] + g[1] * k[1]);
            if a == 0.0 && b == 0.0 {
                continue;
            }
            for j in 0..nq {
                let i = e * nq + j;
                let (pi, qi) = (p.get(i), q.get(i));
                total += self.mesh.qp_weight(e, j) * (diff(a, b, d, pi) + mu.get(i) * diff(a, b, d, qi));
            }
        }
        Ok(total)
    }

    /// Jacobian of [`apply`](Self::apply) on the free nodes, with the gradient
    /// norm smoothed to `sqrt(|∇u|² + ε²)`.
    pub fn jacobian(&self, u: &FeFunction) -> Result<CsrMatrix<f64>> {
        u.check_mesh(&self.mesh)?;
        let n = self.mesh.free_nodes().len();
        let mut coo = CooMatrix::new(n, n);
        let nq = self.mesh.qp_per_element();
        let (p, q, mu) = (self.exponents.p(), self.exponents.q(), self.exponents.mu());
        let eps2 = self.epsilon * self.epsilon;
        for (e, el) in self.mesh.elements().iter().enumerate() {
            let g = u.grad(e);
            let t = (g[0] * g[0] + g[1] * g[1] + eps2).sqrt();
            // Integrated tensor c·I + d·g gᵀ.
            let (mut c, mut d) = (0.0, 0.0);
            for k in 0..nq {
                let i = e * nq + k;
                let w = self.mesh.qp_weight(e, k);
                let (pi, qi, mi) = (p.get(i), q.get(i), mu.get(i));
                c += w * (pow0(t, pi - 2.0) + mi * pow0(t, qi - 2.0));
                d += w * ((pi - 2.0) * pow0(t, pi - 4.0) + mi * (qi - 2.0) * pow0(t, qi - 4.0));
            }
            if !c.is_finite() || !d.is_finite() {
                return Err(Error::SingularSystem { epsilon: self.epsilon });
            }
            let jg = |v: [f64; 2]| -> [f64; 2] {
                let gv = g[0] * v[0] + g[1] * v[1];
                [c * v[0] + d * gv * g[0], c * v[1] + d * gv * g[1]]
            };
            for (a, &na) in el.nodes.iter().enumerate() {
                let Some(ia) = self.mesh.dof_of_node(na) else { continue };
                let ja = jg(el.grads[a]);
                for (b, &nb) in el.nodes.iter().enumerate() {
                    let Some(ib) = self.mesh.dof_of_node(nb) else { continue };
                    let gb = el.grads[b];
                    coo.push(ia, ib, ja[0] * gb[0] + ja[1] * gb[1]);
                }
            }
        }
        Ok(CsrMatrix::from(&coo))
    }

    /// `⟨Au − Av, u − v⟩`.
    pub fn monotonicity_gap(&self, u: &FeFunction, v: &FeFunction) -> Result<f64> {
        let au = self.apply_nodal(u)?;
        let av = self.apply_nodal(v)?;
        v.check_mesh(&self.mesh)?;
        Ok(au
            .iter()
            .zip(&av)
            .zip(u.values().iter().zip(v.values()))
            .map(|((a, b), (x, y))| (a - b) * (x - y))
            .sum())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{Expr, VarSet};
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(s: &str) -> Expr {
        Expr::parse(s, VarSet::SPATIAL).unwrap()
    }

    fn op(mesh: &Arc<Mesh>, p: &str, q: &str, mu: &str) -> DoublePhaseOperator {
        let ed = ExponentData::from_exprs(mesh, &e(p), &e(q), &e(mu)).unwrap();
        DoublePhaseOperator::new(mesh.clone(), ed, 1e-8).unwrap()
    }

    fn dense(m: &CsrMatrix<f64>) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(m.nrows(), m.ncols());
        for (i, j, v) in m.triplet_iter() {
            d[(i, j)] += *v;
        }
        d
    }

    #[test]
    fn energy_difference_matches_naive_at_large_step() {
        let m = Mesh::square(4, "0").unwrap();
        let a = op(&m, "1.6 + 0.3*x", "2.7", "0.5 + y");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
        let h = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
        for d in [0.5, 0.1] {
            let naive = a.energy(&u.add(&h.scaled(d)).unwrap()).unwrap() - a.energy(&u.sub(&h.scaled(d)).unwrap()).unwrap();
            let stable = a.energy_difference(&u, &h, d).unwrap();
            assert!((naive - stable).abs() <= 1e-12 * naive.abs().max(1.0), "{naive} vs {stable}");
        }
        // Odd in δ, and zero along a constant direction.
        let plus = a.energy_difference(&u, &h, 1e-4).unwrap();
        let minus = a.energy_difference(&u, &h, -1e-4).unwrap();
        assert!((plus + minus).abs() <= 1e-15 * plus.abs());
        assert_eq!(a.energy_difference(&u, &FeFunction::constant(&m, 1.0), 1e-3).unwrap(), 0.0);
    }

    #[test]
    fn constants_have_zero_image() {
        let m = Mesh::square(3, "1").unwrap();
        let a = op(&m, "1.5", "2.5", "1 + x");
        let u = FeFunction::constant(&m, 4.0);
        assert_eq!(a.apply(&u).unwrap().max_abs(), 0.0);
        assert_eq!(a.energy(&u).unwrap(), 0.0);
    }

    #[test]
    fn hat_function_stiffness() {
        let m = Mesh::interval(2, "1").unwrap();
        let a = op(&m, "2", "3", "0");
        let u = FeFunction::new(m.clone(), vec![0.0, 1.0, 0.0]).unwrap();
        assert!((a.pairing(&u, &u).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn energy_of_identity() {
        let m = Mesh::interval(4, "0").unwrap();
        let a = op(&m, "2", "3", "0");
        let u = FeFunction::interpolate(&e("x"), &m).unwrap();
        assert!((a.energy(&u).unwrap() - 0.5).abs() < 1e-12);
    }

    /// Independent assembly of the p(x)-Laplacian, node by node.
    fn p_laplacian(m: &Mesh, p: &Expr, u: &FeFunction) -> Vec<f64> {
        let mut out = vec![0.0; m.node_count()];
        for node in 0..m.node_count() {
            for (ei, el) in m.elements().iter().enumerate() {
                let Some(a) = el.nodes.iter().position(|&v| v == node) else { continue };
                let g = u.grad(ei);
                let gn = g[0].hypot(g[1]);
                if gn == 0.0 {
                    continue;
                }
                for k in 0..m.qp_per_element() {
                    let x = m.qp_coords(ei, k);
                    let pv = p.eval(&crate::expr::Bindings::point(x)).unwrap();
                    out[node] += m.qp_weight(ei, k)
                        * gn.powf(pv - 2.0)
                        * (g[0] * el.grads[a][0] + g[1] * el.grads[a][1]);
                }
            }
        }
        out
    }

    #[test]
    fn reduces_to_p_laplacian() {
        let m = Mesh::square(4, "0").unwrap();
        let a = op(&m, "1.4 + 0.3*x", "2.5", "0");
        let u = FeFunction::from_fn(&m, |p| (p[0] * 3.0).sin() * p[1]);
        let got = a.apply_nodal(&u).unwrap();
        let want = p_laplacian(&m, &e("1.4 + 0.3*x"), &u);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_case_matches_stiffness() {
        let m = Mesh::square(4, "x - 0.99").unwrap();
        let a = op(&m, "2", "3", "0");
        let u = FeFunction::from_fn(&m, |p| p[0] * p[0] - p[1]);
        let k = dense(&a.jacobian(&FeFunction::zeros(&m)).unwrap());
        let k2 = dense(&a.jacobian(&u).unwrap());
        assert!((&k - &k2).amax() < 1e-12);
        // Dirichlet nodes: apply restricted to free dofs equals K u_free + coupling,
        // so compare on a function vanishing at Dirichlet nodes.
        let mut v = u.clone();
        for node in 0..m.node_count() {
            if m.is_dirichlet(node) {
                v.values_mut()[node] = 0.0;
            }
        }
        let free: Vec<f64> = m.free_nodes().iter().map(|&n| v.values()[n]).collect();
        let ku = &k * nalgebra::DVector::from_vec(free);
        let av = a.apply(&v).unwrap();
        for (x, y) in ku.iter().zip(av.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_symmetric_and_matches_differences() {
        let m = Mesh::square(3, "y - 0.99").unwrap();
        let a = op(&m, "1.6 + 0.2*x", "2.6", "1 + y");
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut u = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
        for node in 0..m.node_count() {
            if m.is_dirichlet(node) {
                u.values_mut()[node] = 0.0;
            }
        }
        let j = dense(&a.jacobian(&u).unwrap());
        assert!((&j - j.transpose()).amax() <= 1e-12);
        let base = a.apply(&u).unwrap();
        let delta = 1e-6;
        for (col, &node) in m.free_nodes().iter().enumerate() {
            let mut up = u.clone();
            up.values_mut()[node] += delta;
            let ap = a.apply(&up).unwrap();
            for row in 0..base.len() {
                let fd = (ap.values()[row] - base.values()[row]) / delta;
                assert!((fd - j[(row, col)]).abs() < 1e-4 * (1.0 + j[(row, col)].abs()), "{row},{col}");
            }
        }
    }

    #[test]
    fn positive_definite_with_smoothing() {
        let m = Mesh::interval(6, "0").unwrap();
        let a = op(&m, "1.5", "2.5", "0.5");
        let j = dense(&a.jacobian(&FeFunction::zeros(&m)).unwrap());
        assert!(j.symmetric_eigenvalues().iter().all(|&l| l > 0.0));
    }

    #[test]
    fn gap_examples() {
        let m = Mesh::interval(8, "0").unwrap();
        let a = op(&m, "1.5 + x", "3", "x");
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let u = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
            let v = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
            assert_eq!(a.monotonicity_gap(&u, &u).unwrap(), 0.0);
            let g = a.monotonicity_gap(&u, &v).unwrap();
            assert!(g > 0.0);
            assert!((g - a.monotonicity_gap(&v, &u).unwrap()).abs() < 1e-14 * g.max(1.0));
        }
    }

    #[test]
    fn energy_gradient_consistency() {
        let m = Mesh::square(3, "0").unwrap();
        let a = op(&m, "1.5 + 0.2*x", "2.8", "1 + x*y");
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
        let h = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
        let exact = a.pairing(&u, &h).unwrap();
        let d = 1e-5;
        let fd = (a.energy(&u.add(&h.scaled(d)).unwrap()).unwrap()
            - a.energy(&u.sub(&h.scaled(d)).unwrap()).unwrap())
            / (2.0 * d);
        assert!((fd - exact).abs() <= 1e-6 * exact.abs());
    }

    #[test]
    fn energy_convex_along_segments() {
        let m = Mesh::interval(10, "0").unwrap();
        let a = op(&m, "1.3 + x", "3", "2*x");
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let u = FeFunction::from_fn(&m, |_| rng.gen_range(-2.0..2.0));
            let v = FeFunction::from_fn(&m, |_| rng.gen_range(-2.0..2.0));
            let mid = u.add(&v).unwrap().scaled(0.5);
            let lhs = a.energy(&mid).unwrap();
            let rhs = 0.5 * (a.energy(&u).unwrap() + a.energy(&v).unwrap());
            assert!(lhs <= rhs + 1e-10);
        }
    }

    #[test]
    fn negative_smoothing_rejected() {
        let m = Mesh::interval(2, "0").unwrap();
        let ed = ExponentData::constant(&m, 2.0, 3.0, 0.0);
        assert!(DoublePhaseOperator::new(m, ed, -1.0).is_err());
    }
}
