//! Interval-valued multifunctions `f(x,s) = [f₁(x,s), f₂(x,s)]`, selections,
//! and the truncation, penalty and compensator terms built from an ordered
//! family of sub- and supersolutions.
//!
//! Pointwise quantities are indexed by quadrature point: an interior index
//! `e * nq + k`, or a boundary index in the order of the `Gamma` facets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr, ExprError, Var, VarSet};
use crate::mesh::{FeFunction, Layout, Mesh, QuadratureField, Tag};
use crate::operator::DualVector;
use crate::spaces::ExponentData;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Interior,
    Boundary,
}

impl Domain {
    pub fn layout(self) -> Layout {
        match self {
            Domain::Interior => Layout::Interior,
            Domain::Boundary => Layout::Boundary(Tag::Gamma),
        }
    }
}

/// How a point of `[f₁, f₂]` is chosen.
#[derive(Debug, Clone, PartialEq)]
pub enum SelectionRule {
    Lower,
    Upper,
    Midpoint,
    /// `f₁ + θ (f₂ − f₁)` with `θ ∈ [0, 1]` given per quadrature point.
    Weighted(QuadratureField),
}

impl SelectionRule {
    pub fn name(&self) -> &'static str {
        match self {
            SelectionRule::Lower => "lower",
            SelectionRule::Upper => "upper",
            SelectionRule::Midpoint => "midpoint",
            SelectionRule::Weighted(_) => "weighted",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "lower" => Ok(SelectionRule::Lower),
            "upper" => Ok(SelectionRule::Upper),
            "midpoint" => Ok(SelectionRule::Midpoint),
            other => Err(Error::InvalidArgument(format!(
                "unknown selection rule '{other}' (expected lower, upper or midpoint)"
            ))),
        }
    }

    /// Picks a point of `[lo, hi]` at quadrature point `i`.
    pub fn pick(&self, i: usize, lo: f64, hi: f64) -> f64 {
        match self {
            SelectionRule::Lower => lo,
            SelectionRule::Upper => hi,
            SelectionRule::Midpoint => 0.5 * (lo + hi),
            SelectionRule::Weighted(theta) => {
                let t = theta.get(i).clamp(0.0, 1.0);
                if t == 0.0 {
                    lo
                } else if t == 1.0 {
                    hi
                } else {
                    lo + t * (hi - lo)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntervalMultifunction {
    f1: Expr,
    f2: Expr,
    domain: Domain,
    /// Values bound to `r` at each point of the layout, for frozen
    /// two-argument multifunctions.
    frozen_r: Option<QuadratureField>,
}

impl IntervalMultifunction {
    pub fn new(f1: Expr, f2: Expr, domain: Domain) -> Result<Self> {
        for e in [&f1, &f2] {
            if e.uses(Var::R) {
                return Err(ExprError::Unbound("r").into());
            }
        }
        Ok(IntervalMultifunction {
            f1,
            f2,
            domain,
            frozen_r: None,
        })
    }

    pub fn parse(f1: &str, f2: &str, domain: Domain) -> Result<Self> {
        Self::new(
            Expr::parse(f1, VarSet::SPATIAL_S)?,
            Expr::parse(f2, VarSet::SPATIAL_S)?,
            domain,
        )
    }

    pub fn single_valued(f: &str, domain: Domain) -> Result<Self> {
        Self::parse(f, f, domain)
    }

    pub fn zero(domain: Domain) -> Self {
        Self::new(Expr::constant(0.0), Expr::constant(0.0), domain).expect("constants")
    }

    pub fn f1(&self) -> &Expr {
        &self.f1
    }

    pub fn f2(&self) -> &Expr {
        &self.f2
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn layout(&self) -> Layout {
        self.domain.layout()
    }

    pub fn is_zero(&self) -> bool {
        self.f1.as_constant() == Some(0.0) && self.f2.as_constant() == Some(0.0)
    }

    fn bindings(&self, i: Option<usize>, x: [f64; 2], s: f64) -> Bindings {
        let b = Bindings::point(x).with_s(s);
        match (&self.frozen_r, i) {
            (Some(r), Some(i)) => b.with_r(r.get(i)),
            _ => b,
        }
    }

    fn endpoints(&self, i: Option<usize>, x: [f64; 2], s: f64) -> Result<(f64, f64)> {
        let b = self.bindings(i, x, s);
        let lo = self.f1.eval(&b)?;
        let hi = self.f2.eval(&b)?;
        if lo > hi {
            return Err(Error::EndpointOrder {
                x: x[0],
                y: x[1],
                s,
                lower: lo,
                upper: hi,
            });
        }
        Ok((lo, hi))
    }

    /// `[f₁(x,s), f₂(x,s)]`.
    pub fn eval_interval(&self, x: [f64; 2], s: f64) -> Result<(f64, f64)> {
        self.endpoints(None, x, s)
    }

    /// Endpoints at quadrature point `i` of the multifunction's layout.
    pub fn eval_at(&self, i: usize, x: [f64; 2], s: f64) -> Result<(f64, f64)> {
        self.endpoints(Some(i), x, s)
    }

    /// `η(x) = rule(f(x, u(x)))` at every point of the layout.
    pub fn select(&self, u: &FeFunction, rule: &SelectionRule) -> Result<QuadratureField> {
        let mesh = u.mesh();
        let layout = self.layout();
        let us = u.sample(layout);
        let pts = mesh.layout_points(layout);
        let values = pts
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let (lo, hi) = self.eval_at(i, x, us.get(i))?;
                Ok(rule.pick(i, lo, hi))
            })
            .collect::<Result<Vec<_>>>()?;
        QuadratureField::new(mesh, layout, values)
    }

    /// Largest violation of `f₁(x,u) ≤ η ≤ f₂(x,u)` (zero when `η` is a selection).
    pub fn selection_defect(&self, u: &FeFunction, eta: &QuadratureField) -> Result<f64> {
        let mesh = u.mesh();
        eta.check(mesh, self.layout())?;
        let us = u.sample(self.layout());
        let mut worst = 0.0f64;
        for (i, &x) in mesh.layout_points(self.layout()).iter().enumerate() {
            let (lo, hi) = self.eval_at(i, x, us.get(i))?;
            worst = worst.max(lo - eta.get(i)).max(eta.get(i) - hi);
        }
        Ok(worst)
    }
}

/// Interval `[j₁(x,r,s), j₂(x,r,s)]` depending on an extra state argument `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoArgIntervalMultifunction {
    j1: Expr,
    j2: Expr,
    domain: Domain,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MonotonicityReport {
    pub samples: usize,
    /// Largest increase of `j₂` over an increase of `r`.
    pub upper_increase: f64,
    /// Largest increase of `j₁` over an increase of `r`.
    pub lower_increase: f64,
    /// Largest value of `j₁ − j₂`.
    pub order_defect: f64,
}

impl MonotonicityReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.upper_increase <= tol && self.lower_increase <= tol && self.order_defect <= tol
    }
}

impl TwoArgIntervalMultifunction {
    pub fn parse(j1: &str, j2: &str, domain: Domain) -> Result<Self> {
        Ok(TwoArgIntervalMultifunction {
            j1: Expr::parse(j1, VarSet::ALL)?,
            j2: Expr::parse(j2, VarSet::ALL)?,
            domain,
        })
    }

    pub fn j1(&self) -> &Expr {
        &self.j1
    }

    pub fn j2(&self) -> &Expr {
        &self.j2
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn depends_on_r(&self) -> bool {
        self.j1.uses(Var::R) || self.j2.uses(Var::R)
    }

    pub fn eval(&self, x: [f64; 2], r: f64, s: f64) -> Result<(f64, f64)> {
        let b = Bindings::point(x).with_s(s).with_r(r);
        Ok((self.j1.eval(&b)?, self.j2.eval(&b)?))
    }

    /// `s ↦ [j₁(x, v(x), s), j₂(x, v(x), s)]`.
    pub fn freeze(&self, v: &FeFunction) -> IntervalMultifunction {
        IntervalMultifunction {
            f1: self.j1.clone(),
            f2: self.j2.clone(),
            domain: self.domain,
            frozen_r: Some(v.sample(self.domain.layout())),
        }
    }

    /// Samples `r ↦ j₁, j₂` on ordered grids at every point of the layout;
    /// both endpoints must be nonincreasing in `r`.
    pub fn check_monotone(&self, mesh: &Mesh, rs: &[f64], ss: &[f64]) -> Result<MonotonicityReport> {
        let mut rs = rs.to_vec();
        rs.sort_by(f64::total_cmp);
        let mut rep = MonotonicityReport::default();
        for x in mesh.layout_points(self.domain.layout()) {
            for &s in ss {
                let mut prev: Option<(f64, f64)> = None;
                for &r in &rs {
                    let (a, b) = self.eval(x, r, s)?;
                    rep.samples += 1;
                    rep.order_defect = rep.order_defect.max(a - b);
                    if let Some((pa, pb)) = prev {
                        rep.lower_increase = rep.lower_increase.max(a - pa);
                        rep.upper_increase = rep.upper_increase.max(b - pb);
                    }
                    prev = Some((a, b));
                }
            }
        }
        Ok(rep)
    }
}

pub fn sigma_hat(s: f64) -> f64 {
    if s <= 0.0 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        1.0 - s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompensatorKind {
    /// `T_i` (interior) or `U_i` (boundary), attached to a subsolution.
    Lower,
    /// `T^j` (interior) or `U^j` (boundary), attached to a supersolution.
    Upper,
}

/// `|sel_k − sel| σ̂((s − bound_k)/(bound − bound_k))` for `Lower`,
/// `|sel_k − sel| (1 − σ̂((s − bound)/(bound_k − bound)))` for `Upper`;
/// zero when the two bounds coincide.
pub fn compensator(kind: CompensatorKind, sel_k: f64, sel: f64, bound_k: f64, bound: f64, s: f64) -> f64 {
    if bound_k == bound {
        return 0.0;
    }
    let amp = (sel_k - sel).abs();
    if amp == 0.0 {
        return 0.0;
    }
    match kind {
        CompensatorKind::Lower => amp * sigma_hat((s - bound_k) / (bound - bound_k)),
        CompensatorKind::Upper => amp * (1.0 - sigma_hat((s - bound) / (bound_k - bound))),
    }
}

/// Samples of one sub- or supersolution of the family.
#[derive(Debug, Clone, PartialEq)]
struct Member {
    interior: QuadratureField,
    boundary: QuadratureField,
    eta: QuadratureField,
    zeta: QuadratureField,
}

impl Member {
    fn build(
        u: &FeFunction,
        f: &IntervalMultifunction,
        f_gamma: &IntervalMultifunction,
        rule: &SelectionRule,
    ) -> Result<Self> {
        Ok(Member {
            interior: u.sample(Layout::Interior),
            boundary: u.sample(Layout::Boundary(Tag::Gamma)),
            eta: f.select(u, rule)?,
            zeta: f_gamma.select(u, rule)?,
        })
    }
}

/// Lower and upper bounds with the selections that freeze the truncation.
///
/// With several subsolutions `u̲ = max u̲_i` and `η̲ = η̲_i` for the first index
/// attaining the maximum; with several supersolutions `ū = min ū_j` likewise.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationData {
    lower: FeFunction,
    upper: FeFunction,
    subs: Vec<Member>,
    sups: Vec<Member>,
    lower_q: QuadratureField,
    upper_q: QuadratureField,
    lower_b: QuadratureField,
    upper_b: QuadratureField,
    eta_lower: QuadratureField,
    eta_upper: QuadratureField,
    zeta_lower: QuadratureField,
    zeta_upper: QuadratureField,
}

fn envelope(members: &[Member], pick_lower: bool, mesh: &Mesh) -> Result<[QuadratureField; 4]> {
    let better = |a: f64, b: f64| if pick_lower { a > b } else { a < b };
    let mut out = Vec::new();
    for (layout, bound_of, sel_of) in [
        (
            Layout::Interior,
            (|m: &Member| &m.interior) as fn(&Member) -> &QuadratureField,
            (|m: &Member| &m.eta) as fn(&Member) -> &QuadratureField,
        ),
        (Layout::Boundary(Tag::Gamma), |m: &Member| &m.boundary, |m: &Member| &m.zeta),
    ] {
        let n = mesh.layout_len(layout);
        let mut bound = Vec::with_capacity(n);
        let mut sel = Vec::with_capacity(n);
        for i in 0..n {
            let mut best = 0;
            for (k, m) in members.iter().enumerate().skip(1) {
                if better(bound_of(m).get(i), bound_of(&members[best]).get(i)) {
                    best = k;
                }
            }
            bound.push(bound_of(&members[best]).get(i));
            sel.push(sel_of(&members[best]).get(i));
        }
        out.push(QuadratureField::new(mesh, layout, bound)?);
        out.push(QuadratureField::new(mesh, layout, sel)?);
    }
    let [b, s, bb, sb]: [QuadratureField; 4] = out.try_into().expect("four fields");
    Ok([b, s, bb, sb])
}

impl TruncationData {
    /// Single ordered pair with selections `rule_lower` at `u̲` and `rule_upper` at `ū`.
    pub fn new(
        f: &IntervalMultifunction,
        f_gamma: &IntervalMultifunction,
        lower: &FeFunction,
        upper: &FeFunction,
        rule_lower: &SelectionRule,
        rule_upper: &SelectionRule,
    ) -> Result<Self> {
        Self::from_families(
            f,
            f_gamma,
            std::slice::from_ref(lower),
            std::slice::from_ref(upper),
            rule_lower,
            rule_upper,
        )
    }

    pub fn from_families(
        f: &IntervalMultifunction,
        f_gamma: &IntervalMultifunction,
        subs: &[FeFunction],
        sups: &[FeFunction],
        rule_lower: &SelectionRule,
        rule_upper: &SelectionRule,
    ) -> Result<Self> {
        if subs.is_empty() || sups.is_empty() {
            return Err(Error::InvalidArgument("need at least one lower and one upper bound".into()));
        }
        if f.domain() != Domain::Interior || f_gamma.domain() != Domain::Boundary {
            return Err(Error::InvalidArgument("f must be interior and f_gamma boundary".into()));
        }
        let mesh = subs[0].mesh().clone();
        for u in subs.iter().chain(sups) {
            u.check_mesh(&mesh)?;
        }
        let mut lower = subs[0].clone();
        for u in &subs[1..] {
            lower = lower.join(u)?;
        }
        let mut upper = sups[0].clone();
        for u in &sups[1..] {
            upper = upper.meet(u)?;
        }
        for (node, (a, b)) in lower.values().iter().zip(upper.values()).enumerate() {
            if a > b {
                return Err(Error::EnclosureViolated {
                    node,
                    value: *a,
                    lower: *a,
                    upper: *b,
                });
            }
        }
        let subs = subs
            .iter()
            .map(|u| Member::build(u, f, f_gamma, rule_lower))
            .collect::<Result<Vec<_>>>()?;
        let sups = sups
            .iter()
            .map(|u| Member::build(u, f, f_gamma, rule_upper))
            .collect::<Result<Vec<_>>>()?;
        let [lower_q, eta_lower, lower_b, zeta_lower] = envelope(&subs, true, &mesh)?;
        let [upper_q, eta_upper, upper_b, zeta_upper] = envelope(&sups, false, &mesh)?;
        Ok(TruncationData {
            lower,
            upper,
            subs,
            sups,
            lower_q,
            upper_q,
            lower_b,
            upper_b,
            eta_lower,
            eta_upper,
            zeta_lower,
            zeta_upper,
        })
    }

    /// Nodal lower bound `u̲`.
    pub fn lower(&self) -> &FeFunction {
        &self.lower
    }

    /// Nodal upper bound `ū`.
    pub fn upper(&self) -> &FeFunction {
        &self.upper
    }

    pub fn pair_counts(&self) -> (usize, usize) {
        (self.subs.len(), self.sups.len())
    }

    pub fn eta_lower(&self) -> &QuadratureField {
        &self.eta_lower
    }

    pub fn eta_upper(&self) -> &QuadratureField {
        &self.eta_upper
    }

    pub fn zeta_lower(&self) -> &QuadratureField {
        &self.zeta_lower
    }

    pub fn zeta_upper(&self) -> &QuadratureField {
        &self.zeta_upper
    }

    fn bounds(&self, domain: Domain, i: usize) -> (f64, f64) {
        match domain {
            Domain::Interior => (self.lower_q.get(i), self.upper_q.get(i)),
            Domain::Boundary => (self.lower_b.get(i), self.upper_b.get(i)),
        }
    }

    fn frozen(&self, domain: Domain, i: usize) -> (f64, f64) {
        match domain {
            Domain::Interior => (self.eta_lower.get(i), self.eta_upper.get(i)),
            Domain::Boundary => (self.zeta_lower.get(i), self.zeta_upper.get(i)),
        }
    }

    /// `f₀(x,s)` (interior) or `f₀Γ(x,s)` (boundary) at quadrature point `i`:
    /// `{η̲}` below `u̲`, `f(x,s)` on `[u̲, ū]`, `{η̄}` above `ū`.
    pub fn truncated(&self, mf: &IntervalMultifunction, i: usize, x: [f64; 2], s: f64) -> Result<(f64, f64)> {
        let (lo, hi) = self.bounds(mf.domain(), i);
        let (sel_lo, sel_hi) = self.frozen(mf.domain(), i);
        if s < lo {
            Ok((sel_lo, sel_lo))
        } else if s > hi {
            Ok((sel_hi, sel_hi))
        } else {
            mf.eval_at(i, x, s)
        }
    }

    /// Penalty `b(x,s)` at interior quadrature point `i`.
    pub fn penalty_b(&self, ed: &ExponentData, i: usize, s: f64) -> f64 {
        let (lo, hi) = self.bounds(Domain::Interior, i);
        penalty(lo, hi, ed.q().get(i), s)
    }

    /// `−Σ T_i + Σ T^j` (interior) or `−Σ U_i + Σ U^j` (boundary) at point `i`.
    pub fn compensator_sum(&self, domain: Domain, i: usize, s: f64) -> f64 {
        let (lo, hi) = self.bounds(domain, i);
        let (sel_lo, sel_hi) = self.frozen(domain, i);
        let pick = |m: &Member| match domain {
            Domain::Interior => (m.interior.get(i), m.eta.get(i)),
            Domain::Boundary => (m.boundary.get(i), m.zeta.get(i)),
        };
        let mut total = 0.0;
        for m in &self.subs {
            let (b, sel) = pick(m);
            total -= compensator(CompensatorKind::Lower, sel, sel_lo, b, lo, s);
        }
        for m in &self.sups {
            let (b, sel) = pick(m);
            total += compensator(CompensatorKind::Upper, sel, sel_hi, b, hi, s);
        }
        total
    }

    /// Individual compensator values at point `i`, subsolutions first.
    pub fn compensators(&self, domain: Domain, i: usize, s: f64) -> Vec<f64> {
        let (lo, hi) = self.bounds(domain, i);
        let (sel_lo, sel_hi) = self.frozen(domain, i);
        let pick = |m: &Member| match domain {
            Domain::Interior => (m.interior.get(i), m.eta.get(i)),
            Domain::Boundary => (m.boundary.get(i), m.zeta.get(i)),
        };
        let lower = self.subs.iter().map(|m| {
            let (b, sel) = pick(m);
            compensator(CompensatorKind::Lower, sel, sel_lo, b, lo, s)
        });
        let upper = self.sups.iter().map(|m| {
            let (b, sel) = pick(m);
            compensator(CompensatorKind::Upper, sel, sel_hi, b, hi, s)
        });
        lower.chain(upper).collect()
    }

    /// Lower and upper bound at point `i` of a layout.
    pub fn bounds_at(&self, domain: Domain, i: usize) -> (f64, f64) {
        self.bounds(domain, i)
    }
}

/// `(s − hi)^{q−1}` above, `−(lo − s)^{q−1}` below, zero in between.
pub fn penalty(lo: f64, hi: f64, q: f64, s: f64) -> f64 {
    if s > hi {
        (s - hi).powf(q - 1.0)
    } else if s < lo {
        -(lo - s).powf(q - 1.0)
    } else {
        0.0
    }
}

/// `∫ field · φ_i` over the interior or over `Γ`, for every free node.
pub fn assemble_source(field: &QuadratureField, mesh: &Mesh, layout: Layout) -> Result<DualVector> {
    field.check(mesh, layout)?;
    let nodal = mesh.integrate_against_basis(layout, |i| field.get(i));
    Ok(DualVector::from_nodal(mesh, &nodal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Mesh;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn interior(f1: &str, f2: &str) -> IntervalMultifunction {
        IntervalMultifunction::parse(f1, f2, Domain::Interior).unwrap()
    }

    #[test]
    fn interval_examples() {
        let f = interior("s - 1", "s + 1");
        assert_eq!(f.eval_interval([0.0, 0.0], 2.0).unwrap(), (1.0, 3.0));
        let g = IntervalMultifunction::single_valued("s", Domain::Interior).unwrap();
        assert_eq!(g.eval_interval([0.0, 0.0], 2.0).unwrap(), (2.0, 2.0));
        let bad = interior("s", "-s");
        assert!(matches!(bad.eval_interval([0.3, 0.0], 1.0), Err(Error::EndpointOrder { .. })));
    }

    #[test]
    fn r_is_rejected_in_one_argument_form() {
        assert!(IntervalMultifunction::parse("r", "1", Domain::Interior).is_err());
    }

    #[test]
    fn selections() {
        let m = Mesh::interval(4, "0").unwrap();
        let u = FeFunction::zeros(&m);
        let f = interior("s - 1", "s + 1");
        let up = f.select(&u, &SelectionRule::Upper).unwrap();
        assert!(up.values().iter().all(|&v| v == 1.0));
        let mid = f.select(&u, &SelectionRule::Midpoint).unwrap();
        assert!(mid.values().iter().all(|&v| v == 0.0));
        assert_eq!(SelectionRule::Midpoint.pick(0, 1.0, 3.0), 2.0);
        let g = IntervalMultifunction::single_valued("s*s + x", Domain::Interior).unwrap();
        let v = FeFunction::from_fn(&m, |p| p[0] - 0.3);
        let a = g.select(&v, &SelectionRule::Lower).unwrap();
        assert_eq!(a, g.select(&v, &SelectionRule::Upper).unwrap());
        assert_eq!(a, g.select(&v, &SelectionRule::Midpoint).unwrap());
        assert_eq!(g.selection_defect(&v, &a).unwrap(), 0.0);
    }

    #[test]
    fn sigma_hat_values() {
        assert_eq!(sigma_hat(-1.0), 1.0);
        assert_eq!(sigma_hat(0.25), 0.75);
        assert_eq!(sigma_hat(2.0), 0.0);
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty(-1.0, 1.0, 3.0, 2.0), 1.0);
        assert_eq!(penalty(-1.0, 1.0, 3.0, 0.0), 0.0);
        assert_eq!(penalty(-1.0, 1.0, 3.0, -3.0), -4.0);
    }

    #[test]
    fn compensator_examples() {
        use CompensatorKind::*;
        // Identical selections.
        assert_eq!(compensator(Lower, 0.7, 0.7, -1.0, 0.0, -5.0), 0.0);
        // Below u̲_i: full amplitude; above u̲: zero.
        assert_eq!(compensator(Lower, 2.0, 0.5, -1.0, 0.0, -1.5), 1.5);
        assert_eq!(compensator(Lower, 2.0, 0.5, -1.0, 0.0, 0.0), 0.0);
        assert_eq!(compensator(Lower, 2.0, 0.5, -1.0, 0.0, -0.5), 0.75);
        assert_eq!(compensator(Upper, 2.0, 0.5, 2.0, 1.0, 1.0), 0.0);
        assert_eq!(compensator(Upper, 2.0, 0.5, 2.0, 1.0, 3.0), 1.5);
        // Degenerate denominator.
        assert_eq!(compensator(Lower, 2.0, 0.5, 0.0, 0.0, -9.0), 0.0);
    }

    #[test]
    fn assemble_examples() {
        let m = Mesh::interval(2, "0").unwrap();
        let one = QuadratureField::constant(&m, Layout::Interior, 1.0);
        let v = assemble_source(&one, &m, Layout::Interior).unwrap();
        assert_eq!(v.len(), 1);
        assert!((v.values()[0] - 0.5).abs() < 1e-15);
        let zero = QuadratureField::constant(&m, Layout::Interior, 0.0);
        assert_eq!(assemble_source(&zero, &m, Layout::Interior).unwrap().max_abs(), 0.0);
        let g = Layout::Boundary(Tag::Gamma);
        let empty = QuadratureField::constant(&m, g, 1.0);
        assert!(empty.is_empty());
        assert_eq!(assemble_source(&empty, &m, g).unwrap().max_abs(), 0.0);
        assert!(assemble_source(&empty, &m, Layout::Interior).is_err());
    }

    #[test]
    fn boundary_assembly_in_one_dimension() {
        let m = Mesh::interval(4, "x - 0.5").unwrap();
        let g = Layout::Boundary(Tag::Gamma);
        let field = QuadratureField::constant(&m, g, 3.0);
        let v = assemble_source(&field, &m, g).unwrap();
        // Free nodes 1..=4; the point x = 1 carries the full value.
        assert_eq!(v.values(), &[0.0, 0.0, 0.0, 3.0]);
    }

    #[test]
    fn frozen_two_argument_multifunction() {
        let m = Mesh::interval(4, "0").unwrap();
        let j = TwoArgIntervalMultifunction::parse("-1 - r", "1 - r + s", Domain::Interior).unwrap();
        assert!(j.depends_on_r());
        let v = FeFunction::constant(&m, 0.5);
        let f = j.freeze(&v);
        let u = FeFunction::constant(&m, 2.0);
        let lo = f.select(&u, &SelectionRule::Lower).unwrap();
        let hi = f.select(&u, &SelectionRule::Upper).unwrap();
        assert!(lo.values().iter().all(|&x| x == -1.5));
        assert!(hi.values().iter().all(|&x| x == 2.5));
    }

    #[test]
    fn monotonicity_sampling() {
        let m = Mesh::interval(4, "0").unwrap();
        let rs = [-1.0, -0.5, 0.0, 0.5, 1.0];
        let ss = [-1.0, 0.0, 1.0];
        let good = TwoArgIntervalMultifunction::parse("-1 - 2*(1 + sign(r - 0.1))/2", "1 - 2*(1 + sign(r - 0.1))/2", Domain::Interior).unwrap();
        assert!(good.check_monotone(&m, &rs, &ss).unwrap().holds(0.0));
        let bad = TwoArgIntervalMultifunction::parse("r - 1", "r + 1", Domain::Interior).unwrap();
        let rep = bad.check_monotone(&m, &rs, &ss).unwrap();
        assert!(!rep.holds(0.0) && rep.upper_increase > 0.0 && rep.lower_increase > 0.0);
    }

    fn pair(m: &std::sync::Arc<Mesh>) -> (IntervalMultifunction, IntervalMultifunction, TruncationData) {
        let f = interior("sin(3*s) - 1 + x", "sin(3*s) + 1 + x");
        let fg = IntervalMultifunction::parse("s - 1", "s + 2", Domain::Boundary).unwrap();
        let lo = FeFunction::from_fn(m, |p| -1.0 - p[0]);
        let hi = FeFunction::from_fn(m, |p| 1.0 + p[0] * p[0]);
        let td = TruncationData::new(&f, &fg, &lo, &hi, &SelectionRule::Lower, &SelectionRule::Upper).unwrap();
        (f, fg, td)
    }

    #[test]
    fn truncation_branches() {
        let m = Mesh::interval(4, "1").unwrap();
        let (f, _, td) = pair(&m);
        let x = m.qp_coords(0, 0);
        let (lo, hi) = td.bounds_at(Domain::Interior, 0);
        let below = td.truncated(&f, 0, x, lo - 5.0).unwrap();
        assert_eq!(below, (td.eta_lower().get(0), td.eta_lower().get(0)));
        let above = td.truncated(&f, 0, x, hi + 5.0).unwrap();
        assert_eq!(above, (td.eta_upper().get(0), td.eta_upper().get(0)));
        let s = 0.5 * (lo + hi);
        assert_eq!(td.truncated(&f, 0, x, s).unwrap(), f.eval_at(0, x, s).unwrap());
        assert_eq!(td.pair_counts(), (1, 1));
        // Single pair: every compensator vanishes for all s.
        for s in [-10.0, lo, s, hi, 10.0] {
            assert!(td.compensators(Domain::Interior, 0, s).iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn truncation_growth_bound() {
        let m = Mesh::interval(6, "1").unwrap();
        let (f, _, td) = pair(&m);
        // k: sup of |f| over the interval, sampled.
        let pts = m.layout_points(Layout::Interior);
        for (i, &x) in pts.iter().enumerate() {
            let (lo, hi) = td.bounds_at(Domain::Interior, i);
            let mut k = 0.0f64;
            for t in 0..=100 {
                let s = lo + (hi - lo) * t as f64 / 100.0;
                let (a, b) = f.eval_at(i, x, s).unwrap();
                k = k.max(a.abs()).max(b.abs());
            }
            let bound = k + td.eta_lower().get(i).abs() + td.eta_upper().get(i).abs();
            for t in -50..=50 {
                let s = t as f64 * 0.2;
                let (a, b) = td.truncated(&f, i, x, s).unwrap();
                assert!(a.abs() <= bound && b.abs() <= bound);
            }
        }
    }

    #[test]
    fn multi_pair_envelope() {
        let m = Mesh::interval(4, "0").unwrap();
        let f = interior("-1", "1");
        let fg = IntervalMultifunction::zero(Domain::Boundary);
        let a = FeFunction::from_fn(&m, |p| -1.0 + p[0]);
        let b = FeFunction::from_fn(&m, |p| -p[0]);
        let top = FeFunction::constant(&m, 2.0);
        let td = TruncationData::from_families(
            &f,
            &fg,
            &[a.clone(), b.clone()],
            &[top],
            &SelectionRule::Upper,
            &SelectionRule::Lower,
        )
        .unwrap();
        assert_eq!(td.lower(), &a.join(&b).unwrap());
        let pts = m.layout_points(Layout::Interior);
        for (i, x) in pts.iter().enumerate() {
            let (lo, _) = td.bounds_at(Domain::Interior, i);
            assert_eq!(lo, (-1.0 + x[0]).max(-x[0]));
            // All selections equal, so every compensator vanishes.
            assert!(td.compensators(Domain::Interior, i, -3.0).iter().all(|&c| c == 0.0));
        }
    }

    #[test]
    fn compensators_with_distinct_selections() {
        let m = Mesh::interval(4, "0").unwrap();
        let f = interior("s", "s");
        let fg = IntervalMultifunction::zero(Domain::Boundary);
        let a = FeFunction::constant(&m, -1.0);
        let b = FeFunction::constant(&m, -0.5);
        let top = FeFunction::constant(&m, 1.0);
        let td = TruncationData::from_families(&f, &fg, &[a, b], &[top], &SelectionRule::Lower, &SelectionRule::Upper)
            .unwrap();
        // η̲ = -0.5 from the maximal member; T_1 = 0.5 σ̂((s+1)/0.5).
        assert_eq!(td.eta_lower().get(0), -0.5);
        let c = td.compensators(Domain::Interior, 0, -1.0);
        assert_eq!(c, vec![0.5, 0.0, 0.0]);
        let c = td.compensators(Domain::Interior, 0, -0.75);
        assert_eq!(c[0], 0.25);
        assert_eq!(td.compensator_sum(Domain::Interior, 0, -0.75), -0.25);
    }

    #[test]
    fn inverted_bounds_rejected() {
        let m = Mesh::interval(2, "0").unwrap();
        let f = interior("0", "0");
        let fg = IntervalMultifunction::zero(Domain::Boundary);
        let r = TruncationData::new(
            &f,
            &fg,
            &FeFunction::constant(&m, 1.0),
            &FeFunction::constant(&m, 0.0),
            &SelectionRule::Lower,
            &SelectionRule::Upper,
        );
        assert!(r.is_err());
    }

    proptest! {
        #[test]
        fn penalty_points_toward_interval(lo in -3.0f64..0.0, w in 0.0f64..3.0, q in 1.1f64..4.0, s in -10.0f64..10.0) {
            let hi = lo + w;
            let b = penalty(lo, hi, q, s);
            prop_assert!(b * (s - s.clamp(lo, hi)) >= 0.0);
            // Growth: |b| ≤ a₁ + C|s|^{q−1} with a₁ = 2^{q−1}·max(|lo|,|hi|)^{q−1}, C = 2^{q−1}.
            let c = 2f64.powf(q - 1.0);
            prop_assert!(b.abs() <= c * lo.abs().max(hi.abs()).powf(q - 1.0) + c * s.abs().powf(q - 1.0) + 1e-12);
        }

        #[test]
        fn compensator_bounded(sk in -3.0f64..3.0, sel in -3.0f64..3.0, bk in -2.0f64..0.0, gap in 0.0f64..2.0, s in -5.0f64..5.0) {
            for kind in [CompensatorKind::Lower, CompensatorKind::Upper] {
                let (bound_k, bound) = match kind {
                    CompensatorKind::Lower => (bk, bk + gap),
                    CompensatorKind::Upper => (bk + gap, bk),
                };
                let c = compensator(kind, sk, sel, bound_k, bound, s);
                prop_assert!(c >= 0.0 && c <= (sk - sel).abs());
            }
        }
    }

    #[test]
    fn penalty_coercivity_ratio() {
        let m = Mesh::interval(8, "0").unwrap();
        let f = interior("0", "0");
        let fg = IntervalMultifunction::zero(Domain::Boundary);
        let lo = FeFunction::constant(&m, -1.0);
        let hi = FeFunction::constant(&m, 1.0);
        let td = TruncationData::new(&f, &fg, &lo, &hi, &SelectionRule::Lower, &SelectionRule::Upper).unwrap();
        let ed = ExponentData::constant(&m, 1.5, 2.5, 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = FeFunction::from_fn(&m, |_| rng.gen_range(-1.0..1.0));
        let mut last = 0.0;
        for t in [10.0, 100.0, 1000.0] {
            let s = u.scaled(t).sample(Layout::Interior);
            let (mut num, mut den) = (0.0, 0.0);
            for e in 0..m.elements().len() {
                for k in 0..m.qp_per_element() {
                    let i = e * m.qp_per_element() + k;
                    let w = m.qp_weight(e, k);
                    num += w * td.penalty_b(&ed, i, s.get(i)) * s.get(i);
                    den += w * s.get(i).abs().powf(2.5);
                }
            }
            last = num / den;
            assert!(last > 0.1, "ratio {last} at t = {t}");
        }
        assert!(last > 0.5);
    }
}
