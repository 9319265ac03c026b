//! Variable exponents, Musielak–Orlicz modulars and Luxemburg norms.

use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::mesh::{FeFunction, Layout, Mesh, QuadratureField};

/// Exponents `p`, `q` and weight `μ` sampled at the interior quadrature points.
#[derive(Debug, Clone, PartialEq)]
pub struct ExponentData {
    dim: usize,
    p: QuadratureField,
    q: QuadratureField,
    mu: QuadratureField,
    p_star: QuadratureField,
    p_sub_star: QuadratureField,
    pub p_minus: f64,
    pub p_plus: f64,
    pub q_minus: f64,
    pub q_plus: f64,
}

impl ExponentData {
    pub fn from_fields(mesh: &Mesh, p: QuadratureField, q: QuadratureField, mu: QuadratureField) -> Result<Self> {
        for f in [&p, &q, &mu] {
            f.check(mesh, Layout::Interior)?;
        }
        let n = mesh.dim() as f64;
        let crit = |scale: f64| -> QuadratureField {
            let values = p
                .values()
                .iter()
                .map(|&pv| if pv < n { scale * pv / (n - pv) } else { f64::INFINITY })
                .collect();
            QuadratureField::new(mesh, Layout::Interior, values).expect("same layout as p")
        };
        let p_star = crit(n);
        let p_sub_star = crit(n - 1.0);
        Ok(ExponentData {
            dim: mesh.dim(),
            p_minus: p.min(),
            p_plus: p.max(),
            q_minus: q.min(),
            q_plus: q.max(),
            p,
            q,
            mu,
            p_star,
            p_sub_star,
        })
    }

    /// Samples spatial expressions for `p`, `q` and `μ`.
    pub fn from_exprs(mesh: &Mesh, p: &Expr, q: &Expr, mu: &Expr) -> Result<Self> {
        Self::from_fields(
            mesh,
            QuadratureField::from_expr(mesh, Layout::Interior, p)?,
            QuadratureField::from_expr(mesh, Layout::Interior, q)?,
            QuadratureField::from_expr(mesh, Layout::Interior, mu)?,
        )
    }

    pub fn constant(mesh: &Mesh, p: f64, q: f64, mu: f64) -> Self {
        Self::from_fields(
            mesh,
            QuadratureField::constant(mesh, Layout::Interior, p),
            QuadratureField::constant(mesh, Layout::Interior, q),
            QuadratureField::constant(mesh, Layout::Interior, mu),
        )
        .expect("constant fields match the mesh layout")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn p(&self) -> &QuadratureField {
        &self.p
    }

    pub fn q(&self) -> &QuadratureField {
        &self.q
    }

    pub fn mu(&self) -> &QuadratureField {
        &self.mu
    }

    /// Critical Sobolev exponent `Np/(N−p)`, `+∞` where `p ≥ N`.
    pub fn p_star(&self) -> &QuadratureField {
        &self.p_star
    }

    /// Critical trace exponent `(N−1)p/(N−p)`, `+∞` where `p ≥ N`.
    pub fn p_sub_star(&self) -> &QuadratureField {
        &self.p_sub_star
    }

    /// Checks `1 < p < N`, `p < q < p*` and `μ ≥ 0` at every quadrature point.
    ///
    /// In one dimension `p < N` is not required and `p* = +∞`.
    pub fn validate(&self, mesh: &Mesh) -> ValidationReport {
        let points = mesh.layout_points(Layout::Interior);
        let n = self.dim as f64;
        let mut violations = Vec::new();
        for (i, &at) in points.iter().enumerate() {
            let (p, q, mu) = (self.p.get(i), self.q.get(i), self.mu.get(i));
            let p_star = if self.dim == 1 { f64::INFINITY } else { self.p_star.get(i) };
            let mut flag = |condition, value, bound| {
                violations.push(Violation {
                    index: i,
                    at,
                    condition,
                    value,
                    bound,
                })
            };
            if !(p > 1.0) {
                flag(Condition::PAboveOne, p, 1.0);
            }
            if self.dim > 1 && !(p < n) {
                flag(Condition::PBelowDimension, p, n);
            }
            if !(q > p) {
                flag(Condition::QAboveP, q, p);
            }
            if !(q < p_star) {
                flag(Condition::QBelowCritical, q, p_star);
            }
            if !(mu >= 0.0) {
                flag(Condition::MuNonnegative, mu, 0.0);
            }
        }
        ValidationReport { violations }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    PAboveOne,
    PBelowDimension,
    QAboveP,
    QBelowCritical,
    MuNonnegative,
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::PAboveOne => "1 < p",
            Condition::PBelowDimension => "p < N",
            Condition::QAboveP => "p < q",
            Condition::QBelowCritical => "q < p*",
            Condition::MuNonnegative => "mu >= 0",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Interior quadrature point index.
    pub index: usize,
    pub at: [f64; 2],
    pub condition: Condition,
    pub value: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn violates(&self, c: Condition) -> bool {
        self.violations.iter().any(|v| v.condition == c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModularKind {
    /// `ρ_H(u) = ∫ |u|^p + μ|u|^q`.
    LebesgueH,
    /// `ρ̂_H(u)`: `ρ_H` of the gradient plus `ρ_H` of the values.
    SobolevH,
    /// `ρ_r(u) = ∫ |u|^r`, with `r > 1` sampled at interior quadrature points.
    VariableLp(QuadratureField),
    /// `∫ μ|u|^q`; generates a seminorm where `μ` vanishes.
    WeightedLq,
}

impl ModularKind {
    pub fn name(&self) -> &'static str {
        match self {
            ModularKind::LebesgueH => "lebesgue_h",
            ModularKind::SobolevH => "sobolev_h",
            ModularKind::VariableLp(_) => "variable_lp",
            ModularKind::WeightedLq => "weighted_lq",
        }
    }
}

/// Integrand of a modular, pre-sampled so that `u/λ` can be evaluated cheaply.
struct Terms {
    // (weight, |magnitude|, exponent)
    terms: Vec<(f64, f64, f64)>,
}

impl Terms {
    fn build(kind: &ModularKind, ed: &ExponentData, u: &FeFunction) -> Result<Terms> {
        let mesh = u.mesh();
        ed.p.check(mesh, Layout::Interior)?;
        if let ModularKind::VariableLp(r) = kind {
            r.check(mesh, Layout::Interior)?;
            if r.values().iter().any(|&v| !(v > 1.0)) {
                return Err(Error::InvalidArgument("variable_lp requires r > 1 everywhere".into()));
            }
        }
        let vals = u.sample(Layout::Interior);
        let nq = mesh.qp_per_element();
        let mut terms = Vec::new();
        for e in 0..mesh.elements().len() {
            let g = u.grad(e);
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            for k in 0..nq {
                let i = e * nq + k;
                let w = mesh.qp_weight(e, k);
                let a = vals.get(i).abs();
                let (p, q, mu) = (ed.p.get(i), ed.q.get(i), ed.mu.get(i));
                match kind {
                    ModularKind::LebesgueH => {
                        terms.push((w, a, p));
                        terms.push((w * mu, a, q));
                    }
                    ModularKind::SobolevH => {
                        terms.push((w, gn, p));
                        terms.push((w * mu, gn, q));
                        terms.push((w, a, p));
                        terms.push((w * mu, a, q));
                    }
                    ModularKind::VariableLp(r) => terms.push((w, a, r.get(i))),
                    ModularKind::WeightedLq => terms.push((w * mu, a, q)),
                }
            }
        }
        terms.retain(|&(w, a, _)| w != 0.0 && a != 0.0);
        Ok(Terms { terms })
    }

    fn at_scale(&self, t: f64) -> f64 {
        self.terms.iter().map(|&(w, a, r)| w * (t * a).powf(r)).sum()
    }
}

pub fn modular(kind: &ModularKind, ed: &ExponentData, u: &FeFunction) -> Result<f64> {
    Ok(Terms::build(kind, ed, u)?.at_scale(1.0))
}

/// `inf{λ > 0 : modular(u/λ) ≤ 1}` by bracketing and bisection.
///
/// The bisection is carried to the resolution of `f64`; `tol` bounds the
/// accepted defect `|modular(u/λ) − 1|`.
pub fn luxemburg_norm(kind: &ModularKind, ed: &ExponentData, u: &FeFunction, tol: f64) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let terms = Terms::build(kind, ed, u)?;
    if terms.terms.is_empty() {
        return Ok(0.0);
    }
    let m = |lambda: f64| -> Result<f64> {
        let v = terms.at_scale(1.0 / lambda);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteModular(lambda))
        }
    };
    let (mut lo, mut hi) = (1.0f64, 1.0f64);
    if m(1.0)? > 1.0 {
        while m(hi)? > 1.0 {
            lo = hi;
            hi *= 2.0;
            if hi > 1e300 {
                return Err(Error::NonFiniteModular(hi));
            }
        }
    } else {
        while m(lo)? <= 1.0 {
            hi = lo;
            lo *= 0.5;
            if lo < 1e-300 {
                return Err(Error::NonFiniteModular(lo));
            }
        }
    }
    // Invariant: m(lo) > 1 >= m(hi).
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if m(mid)? > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (dlo, dhi) = ((m(lo)? - 1.0).abs(), (m(hi)? - 1.0).abs());
    let (lambda, defect) = if dlo < dhi { (lo, dlo) } else { (hi, dhi) };
    if defect > tol {
        return Err(Error::NotConverged(format!(
            "Luxemburg bisection stalled at lambda = {lambda}, defect {defect:e}"
        )));
    }
    Ok(lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::VarSet;
    use crate::mesh::Mesh;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(s: &str) -> Expr {
        Expr::parse(s, VarSet::SPATIAL).unwrap()
    }

    #[test]
    fn validation_examples() {
        let m2 = Mesh::square(2, "0").unwrap();
        let r = ExponentData::constant(&m2, 2.0, 3.0, 1.0).validate(&m2);
        assert!(r.violates(Condition::PBelowDimension));
        assert!(ExponentData::constant(&m2, 1.5, 2.0, 0.0).validate(&m2).holds());
        let ed = ExponentData::constant(&m2, 1.5, 7.0, 1.0);
        assert_eq!(ed.p_star().get(0), 6.0);
        let r = ed.validate(&m2);
        assert!(r.violates(Condition::QBelowCritical) && !r.violates(Condition::QAboveP));
        let neg = ExponentData::constant(&m2, 1.5, 2.0, -1.0).validate(&m2);
        assert!(neg.violates(Condition::MuNonnegative));
    }

    #[test]
    fn one_dimensional_convention() {
        let m = Mesh::interval(4, "0").unwrap();
        let ed = ExponentData::constant(&m, 2.0, 3.0, 1.0);
        assert!(ed.p_star().get(0).is_infinite());
        assert!(ed.validate(&m).holds());
        assert!(ExponentData::constant(&m, 2.0, 1.5, 1.0).validate(&m).violates(Condition::QAboveP));
    }

    #[test]
    fn critical_exponents_and_bounds() {
        let m = Mesh::square(3, "0").unwrap();
        let ed = ExponentData::from_exprs(&m, &e("1.2 + 0.3*x"), &e("2 + y"), &e("x")).unwrap();
        for i in 0..ed.p().len() {
            let p = ed.p().get(i);
            assert!((ed.p_star().get(i) - 2.0 * p / (2.0 - p)).abs() < 1e-12);
            assert!((ed.p_sub_star().get(i) - p / (2.0 - p)).abs() < 1e-12);
        }
        assert!(ed.p_minus > 1.2 && ed.p_plus < 1.5);
        assert!(ed.q_minus > 2.0 && ed.q_plus < 3.0);
    }

    #[test]
    fn zero_function_is_zero() {
        let m = Mesh::interval(4, "0").unwrap();
        let ed = ExponentData::constant(&m, 2.0, 3.0, 1.0);
        let z = FeFunction::zeros(&m);
        let r = QuadratureField::constant(&m, Layout::Interior, 2.5);
        for k in [
            ModularKind::LebesgueH,
            ModularKind::SobolevH,
            ModularKind::VariableLp(r),
            ModularKind::WeightedLq,
        ] {
            assert_eq!(modular(&k, &ed, &z).unwrap(), 0.0);
            assert_eq!(luxemburg_norm(&k, &ed, &z, 1e-10).unwrap(), 0.0);
        }
    }

    #[test]
    fn lebesgue_modular_with_linear_weight() {
        // ∫ 2^2 + x 2^3 = 4 + 4 = 8
        let m = Mesh::interval(5, "0").unwrap();
        let ed = ExponentData::from_exprs(&m, &e("2"), &e("3"), &e("x")).unwrap();
        let u = FeFunction::constant(&m, 2.0);
        assert!((modular(&ModularKind::LebesgueH, &ed, &u).unwrap() - 8.0).abs() < 1e-12);
    }

    #[test]
    fn sobolev_modular_of_identity() {
        let m = Mesh::interval(8, "0").unwrap();
        let ed = ExponentData::constant(&m, 2.0, 3.0, 0.0);
        let u = FeFunction::interpolate(&e("x"), &m).unwrap();
        assert!((modular(&ModularKind::SobolevH, &ed, &u).unwrap() - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn l2_norm_of_one() {
        let m = Mesh::interval(4, "0").unwrap();
        let ed = ExponentData::constant(&m, 2.0, 3.0, 0.0);
        let u = FeFunction::constant(&m, 1.0);
        let n = luxemburg_norm(&ModularKind::LebesgueH, &ed, &u, 1e-10).unwrap();
        assert!((n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plastic_number() {
        // Independent oracle: bisection on t^3 + t^2 = 1, λ = 1/t.
        let (mut a, mut b) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let c = 0.5 * (a + b);
            if c * c * c + c * c > 1.0 {
                b = c
            } else {
                a = c
            }
        }
        let oracle = 1.0 / a;
        let m = Mesh::interval(3, "0").unwrap();
        let ed = ExponentData::constant(&m, 2.0, 3.0, 1.0);
        let u = FeFunction::constant(&m, 1.0);
        let n = luxemburg_norm(&ModularKind::LebesgueH, &ed, &u, 1e-10).unwrap();
        assert!((n - oracle).abs() < 1e-12);
        assert!((n - 1.3247180).abs() < 1e-6);
    }

    #[test]
    fn mu_zero_reduces_to_variable_lp() {
        let m = Mesh::square(3, "0").unwrap();
        let ed = ExponentData::from_exprs(&m, &e("1.3 + 0.4*x*y"), &e("2.5"), &e("0")).unwrap();
        let u = FeFunction::from_fn(&m, |p| (3.0 * p[0]).sin() - p[1]);
        let a = modular(&ModularKind::LebesgueH, &ed, &u).unwrap();
        let b = modular(&ModularKind::VariableLp(ed.p().clone()), &ed, &u).unwrap();
        assert!((a - b).abs() <= 1e-14);
    }

    #[test]
    fn weighted_lq_is_only_a_seminorm() {
        let m = Mesh::interval(4, "0").unwrap();
        let ed = ExponentData::constant(&m, 1.5, 2.0, 0.0);
        let u = FeFunction::constant(&m, 3.0);
        assert_eq!(luxemburg_norm(&ModularKind::WeightedLq, &ed, &u, 1e-10).unwrap(), 0.0);
    }

    #[test]
    fn variable_lp_rejects_small_exponent() {
        let m = Mesh::interval(2, "0").unwrap();
        let ed = ExponentData::constant(&m, 1.5, 2.0, 0.0);
        let r = QuadratureField::constant(&m, Layout::Interior, 1.0);
        let u = FeFunction::constant(&m, 1.0);
        assert!(modular(&ModularKind::VariableLp(r), &ed, &u).is_err());
    }

    #[test]
    fn sandwich_bounds_both_regimes() {
        let m = Mesh::square(4, "0").unwrap();
        let ed = ExponentData::from_exprs(&m, &e("1.4 + 0.2*x"), &e("2.2 + 0.5*y"), &e("1 + x*y")).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let base = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
            for scale in [0.05, 0.5, 3.0, 40.0] {
                let u = base.scaled(scale);
                let k = ModularKind::SobolevH;
                let n = luxemburg_norm(&k, &ed, &u, 1e-12).unwrap();
                let rho = modular(&k, &ed, &u).unwrap();
                assert!((modular(&k, &ed, &u.scaled(1.0 / n)).unwrap() - 1.0).abs() < 1e-8);
                let (a, b) = if n < 1.0 {
                    (n.powf(ed.q_plus), n.powf(ed.p_minus))
                } else {
                    (n.powf(ed.p_minus), n.powf(ed.q_plus))
                };
                assert!(rho >= a * (1.0 - 1e-8) && rho <= b * (1.0 + 1e-8), "{a} {rho} {b}");
            }
        }
    }

    proptest! {
        #[test]
        fn homogeneity(vals in proptest::collection::vec(-2.0f64..2.0, 9), t in 0.01f64..100.0) {
            prop_assume!(vals.iter().any(|v| v.abs() > 1e-3));
            let m = Mesh::interval(8, "0").unwrap();
            let ed = ExponentData::from_exprs(&m, &e("1.5 + x"), &e("3"), &e("x")).unwrap();
            let u = FeFunction::new(m.clone(), vals).unwrap();
            let k = ModularKind::SobolevH;
            let n1 = luxemburg_norm(&k, &ed, &u, 1e-12).unwrap();
            let n2 = luxemburg_norm(&k, &ed, &u.scaled(t), 1e-12).unwrap();
            prop_assert!((n2 - t * n1).abs() <= 1e-10 * (t * n1).max(1.0));
            let r1 = modular(&k, &ed, &u).unwrap();
            let r2 = modular(&k, &ed, &u.scaled(1.0 + t)).unwrap();
            prop_assert!(r2 >= r1);
        }
    }
}
