//! Sub- and supersolution certificates, enclosure solves, and monotone
//! iterations toward the smallest and greatest solutions.
//!
//! Sign convention: a solution satisfies `Au + η = 0` where unconstrained,
//! so a larger selection yields a smaller solution. The greatest solution is
//! approached with the lower endpoint of `f`, the smallest with the upper one.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::{Bindings, Expr};
use crate::mesh::{FeFunction, Layout};
use crate::multifun::{SelectionRule, TruncationData, TwoArgIntervalMultifunction};
use crate::visolve::{
    build_auxiliary, solve_vi, source_residual, vi_residual, ConstraintKind, ConstraintSet, EnclosureStatus,
    Solution, SolveOptions, VIProblem,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertificateKind {
    Subsolution,
    Supersolution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certificate {
    pub kind: CertificateKind,
    pub selection: String,
    /// Largest violation of `u ∨ K ⊂ K` (sub) or `u ∧ K ⊂ K` (super).
    pub lattice_defect: f64,
    pub lattice_node: Option<usize>,
    /// Worst one-sided residual over the admissible nodal directions:
    /// `min −r_i` for a subsolution, `min r_i` for a supersolution.
    pub margin: Option<f64>,
    pub worst_node: Option<usize>,
    pub directions: usize,
    pub tol: f64,
    pub passes: bool,
}

impl Certificate {
    pub fn summary(&self) -> String {
        let what = match self.kind {
            CertificateKind::Subsolution => "subsolution",
            CertificateKind::Supersolution => "supersolution",
        };
        let margin = self.margin.map_or("n/a".to_string(), |m| format!("{m:.3e}"));
        format!(
            "{what}: {} (margin {margin}, lattice defect {:.3e}, {} directions)",
            if self.passes { "pass" } else { "FAIL" },
            self.lattice_defect,
            self.directions
        )
    }
}

fn verify(u: &FeFunction, prob: &VIProblem, rule: &SelectionRule, tol: f64, kind: CertificateKind) -> Result<Certificate> {
    let prob = prob.original();
    let mesh = prob.mesh();
    u.check_mesh(mesh)?;
    let eta = prob.f.select(u, rule)?;
    let zeta = prob.f_gamma.select(u, rule)?;
    let r = source_residual(&prob, u, &eta, &zeta)?;
    let sub = kind == CertificateKind::Subsolution;
    let lattice = prob.constraint.lattice_defect(u, sub)?;
    let mut margin: Option<f64> = None;
    let mut worst_node = None;
    let mut directions = 0;
    for (&node, &ri) in mesh.free_nodes().iter().zip(r.values()) {
        let (lo, hi) = prob.constraint.bounds(node);
        let v = u.values()[node];
        // Nodes where (u − φ)⁺ (sub) or (φ − u)⁺ (super) can be positive for φ ∈ K.
        let admissible = if sub { v > lo } else { v < hi };
        if !admissible {
            continue;
        }
        directions += 1;
        let m = if sub { -ri } else { ri };
        if margin.is_none_or(|w| m < w) {
            margin = Some(m);
            worst_node = Some(node);
        }
    }
    let lattice_defect = lattice.map_or(0.0, |(_, d)| d);
    let passes = lattice_defect <= tol && margin.is_none_or(|m| m >= -tol);
    Ok(Certificate {
        kind,
        selection: rule.name().to_string(),
        lattice_defect,
        lattice_node: lattice.map(|(n, _)| n),
        margin,
        worst_node,
        directions,
        tol,
        passes,
    })
}

/// Checks the subsolution inequality over the directions `u ∧ φ`, `φ ∈ K`,
/// generated by nodal hats, with `η = rule(f(·, u))`.
pub fn verify_subsolution(u: &FeFunction, prob: &VIProblem, rule: &SelectionRule, tol: f64) -> Result<Certificate> {
    verify(u, prob, rule, tol, CertificateKind::Subsolution)
}

/// Checks the supersolution inequality over the directions `u ∨ φ`, `φ ∈ K`.
pub fn verify_supersolution(u: &FeFunction, prob: &VIProblem, rule: &SelectionRule, tol: f64) -> Result<Certificate> {
    verify(u, prob, rule, tol, CertificateKind::Supersolution)
}

/// Data of the constant-shift construction `u̲ = u₁`, `ū = u₂ + M`.
#[derive(Debug, Clone, Serialize)]
pub struct Construction {
    pub k1: String,
    pub k2: String,
    pub c_psi: Option<f64>,
    pub m: f64,
    pub margin: f64,
    #[serde(skip)]
    pub u1: FeFunction,
    #[serde(skip)]
    pub u2: FeFunction,
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderedInterval {
    #[serde(skip)]
    pub lower: FeFunction,
    #[serde(skip)]
    pub upper: FeFunction,
    pub sub: Certificate,
    pub sup: Certificate,
    pub construction: Option<Construction>,
}

impl OrderedInterval {
    /// Certifies `lower` with the lower endpoint and `upper` with the upper endpoint.
    pub fn certify(prob: &VIProblem, lower: FeFunction, upper: FeFunction, tol: f64) -> Result<Self> {
        upper.check_mesh(lower.mesh())?;
        if let Some((node, (a, b))) = lower
            .values()
            .iter()
            .zip(upper.values())
            .enumerate()
            .find(|(_, (a, b))| a > b)
        {
            return Err(Error::EnclosureViolated {
                node,
                value: *a,
                lower: *a,
                upper: *b,
            });
        }
        Ok(OrderedInterval {
            sub: verify_subsolution(&lower, prob, &SelectionRule::Lower, tol)?,
            sup: verify_supersolution(&upper, prob, &SelectionRule::Upper, tol)?,
            lower,
            upper,
            construction: None,
        })
    }

    pub fn passes(&self) -> bool {
        self.sub.passes && self.sup.passes
    }
}

#[derive(Debug, Clone)]
pub struct BoundsSpec {
    /// Upper bound for `f₁`, a spatial expression.
    pub k1: Expr,
    /// Lower bound for `f₂`, a spatial expression.
    pub k2: Expr,
    /// Upper bound of the obstacle; required for obstacle constraints.
    pub c_psi: Option<f64>,
    pub margin: f64,
    /// Sample `f₁ ≤ k₁`, `f₂ ≥ k₂` before accepting the construction.
    pub check_bounds: bool,
}

impl BoundsSpec {
    pub fn new(k1: Expr, k2: Expr) -> Self {
        BoundsSpec {
            k1,
            k2,
            c_psi: None,
            margin: 1e-3,
            check_bounds: true,
        }
    }
}

fn s_grid(lo: f64, hi: f64) -> Vec<f64> {
    let (a, b) = (lo - 1.0, hi + 1.0);
    let mut s: Vec<f64> = (0..=40).map(|k| a + (b - a) * k as f64 / 40.0).collect();
    for p in [10.0, 100.0, 1000.0] {
        s.push(p);
        s.push(-p);
    }
    s
}

fn check_endpoint_bounds(prob: &VIProblem, spec: &BoundsSpec, lo: f64, hi: f64) -> Result<()> {
    let mesh = prob.mesh();
    let grid = s_grid(lo, hi);
    for (i, x) in mesh.layout_points(Layout::Interior).into_iter().enumerate() {
        let b = Bindings::point(x);
        let (k1, k2) = (spec.k1.eval(&b)?, spec.k2.eval(&b)?);
        for &s in &grid {
            let (f1, f2) = prob.f.eval_at(i, x, s)?;
            let detail = if f1 > k1 {
                format!("f1 = {f1} exceeds k1 = {k1}")
            } else if f2 < k2 {
                format!("f2 = {f2} is below k2 = {k2}")
            } else {
                continue;
            };
            return Err(Error::BoundViolation {
                x: x[0],
                y: x[1],
                s,
                detail,
            });
        }
    }
    Ok(())
}

/// Builds `u̲ = u₁`, `ū = u₂ + M` from the Dirichlet problems
/// `Au₁ = −k₁`, `Au₂ = −k₂` and certifies both.
///
/// `M = max(0, c_ψ − min u₂, max(u₁ − u₂)) + margin`.
pub fn construct_obstacle_bounds(prob: &VIProblem, spec: &BoundsSpec, opts: &SolveOptions) -> Result<OrderedInterval> {
    let prob = prob.original();
    let mesh = prob.mesh().clone();
    if !(spec.margin >= 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be nonnegative, got {}", spec.margin)));
    }
    if let ConstraintKind::Obstacle(psi) = prob.constraint.kind() {
        let c = spec
            .c_psi
            .ok_or_else(|| Error::InvalidArgument("obstacle constraints need an upper bound c_psi".into()))?;
        if let Some((node, &v)) = psi.values().iter().enumerate().find(|(_, &v)| v > c) {
            return Err(Error::InvalidArgument(format!("obstacle value {v} at node {node} exceeds c_psi = {c}")));
        }
    }
    let dirichlet = |k: &Expr| -> Result<FeFunction> {
        let p = VIProblem::new(prob.op.clone(), ConstraintSet::whole_space(&mesh))?.with_f(
            crate::multifun::IntervalMultifunction::new(k.clone(), k.clone(), crate::multifun::Domain::Interior)?,
        )?;
        let sol = solve_vi(&p, &SolveOptions { initial: None, ..opts.clone() })?;
        if !sol.report.converged {
            return Err(Error::NotConverged(format!(
                "Dirichlet problem with source {k}: residual {:.3e}",
                sol.report.residual
            )));
        }
        Ok(sol.u)
    };
    let u1 = dirichlet(&spec.k1)?;
    let u2 = dirichlet(&spec.k2)?;
    let mut m = 0.0f64;
    if let Some(c) = spec.c_psi {
        m = m.max(c - u2.min_value());
    }
    let gap = u1.sub(&u2)?.max_value();
    m = m.max(gap) + spec.margin;
    let upper = u2.shifted(m);
    if spec.check_bounds {
        check_endpoint_bounds(&prob, spec, u1.min_value(), upper.max_value())?;
    }
    let mut oi = OrderedInterval::certify(&prob, u1.clone(), upper, opts.tol)?;
    oi.construction = Some(Construction {
        k1: spec.k1.to_string(),
        k2: spec.k2.to_string(),
        c_psi: spec.c_psi,
        m,
        margin: spec.margin,
        u1,
        u2,
    });
    Ok(oi)
}

fn enclosure_status(u: &FeFunction, lower: &FeFunction, upper: &FeFunction, tol: f64) -> EnclosureStatus {
    let mut st = EnclosureStatus::default();
    let mut worst = 0.0f64;
    for (node, ((&v, &a), &b)) in u.values().iter().zip(lower.values()).zip(upper.values()).enumerate() {
        let (below, above) = (a - v, v - b);
        st.below = st.below.max(below);
        st.above = st.above.max(above);
        if below.max(above) > worst {
            worst = below.max(above);
            st.worst_node = node;
        }
    }
    st.holds = st.below <= tol && st.above <= tol;
    st
}

/// Solves the truncated auxiliary problem on `[lower, upper]` without
/// checking certificates, and returns the solution of the original problem
/// together with its enclosure status.
pub fn solve_in_interval(prob: &VIProblem, lower: &FeFunction, upper: &FeFunction, opts: &SolveOptions) -> Result<Solution> {
    let prob = prob.original();
    let td = TruncationData::new(&prob.f, &prob.f_gamma, lower, upper, &SelectionRule::Lower, &SelectionRule::Upper)?;
    let aux = build_auxiliary(&prob, td)?;
    let mut sol = solve_vi(&aux, opts)?;
    let status = enclosure_status(&sol.u, lower, upper, opts.tol);
    if !status.holds {
        let node = status.worst_node;
        return Err(Error::EnclosureViolated {
            node,
            value: sol.u.values()[node],
            lower: lower.values()[node],
            upper: upper.values()[node],
        });
    }
    // Remove round-off excursions so the truncation is the identity at u.
    let u = prob.constraint.project(&sol.u.join(lower)?.meet(upper)?);
    let (eta, zeta) = prob.selections(&u, &opts.selection)?;
    let residual = vi_residual(&prob, &u, &eta, &zeta)?;
    sol.report.residual = residual;
    sol.report.converged = sol.report.converged && residual <= opts.tol;
    sol.report.selection_defect = prob.f.selection_defect(&u, &eta)?.max(prob.f_gamma.selection_defect(&u, &zeta)?);
    sol.report.enclosure = Some(status);
    sol.u = u;
    sol.eta = eta;
    sol.zeta = zeta;
    Ok(sol)
}

/// Solution of the original problem inside a certified interval.
pub fn solve_enclosed(prob: &VIProblem, oi: &OrderedInterval, opts: &SolveOptions) -> Result<Solution> {
    if !oi.passes() {
        return Err(Error::InvalidArgument(format!(
            "interval is not certified: {}; {}",
            oi.sub.summary(),
            oi.sup.summary()
        )));
    }
    solve_in_interval(prob, &oi.lower, &oi.upper, opts)
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    pub max_update: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SetMember {
    pub label: String,
    pub residual: f64,
    #[serde(skip)]
    pub u: FeFunction,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolutionSet {
    pub members: Vec<SetMember>,
    pub smallest: usize,
    pub greatest: usize,
    /// Largest violation of `u_* ≤ u ≤ u^*` over members.
    pub order_defect: f64,
}

impl SolutionSet {
    pub fn smallest(&self) -> &FeFunction {
        &self.members[self.smallest].u
    }

    pub fn greatest(&self) -> &FeFunction {
        &self.members[self.greatest].u
    }

    fn compute_order_defect(&mut self) {
        let (lo, hi) = (self.smallest().clone(), self.greatest().clone());
        self.order_defect = self
            .members
            .iter()
            .map(|m| enclosure_status(&m.u, &lo, &hi, 0.0))
            .map(|s| s.below.max(s.above))
            .fold(0.0, f64::max);
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ExtremalResult {
    pub greatest_history: Vec<IterationRecord>,
    pub smallest_history: Vec<IterationRecord>,
    pub set: SolutionSet,
}

impl ExtremalResult {
    pub fn smallest(&self) -> &FeFunction {
        self.set.smallest()
    }

    pub fn greatest(&self) -> &FeFunction {
        self.set.greatest()
    }
}

const MONOTONE_TOL: f64 = 1e-10;

/// Monotone sequence `v^{k+1}` = solution in `[lower, v^k]` (downward) or
/// in `[v^k, upper]` (upward).
fn monotone_sequence(
    prob: &VIProblem,
    lower: &FeFunction,
    upper: &FeFunction,
    downward: bool,
    opts: &SolveOptions,
    label: &str,
    members: &mut Vec<SetMember>,
) -> Result<(FeFunction, Vec<IterationRecord>)> {
    let rule = if downward { SelectionRule::Lower } else { SelectionRule::Upper };
    let inner = SolveOptions {
        selection: rule,
        ..opts.clone()
    };
    let mut v = if downward { upper.clone() } else { lower.clone() };
    let mut history = Vec::new();
    for iter in 1..=opts.max_outer.max(1) {
        let (lo, hi) = if downward { (lower, &v) } else { (&v, upper) };
        let sol = solve_in_interval(prob, lo, hi, &inner.clone().with_initial(v.clone()))?;
        if !sol.report.converged {
            return Err(Error::NotConverged(format!(
                "{label} iteration {iter}: residual {:.3e}",
                sol.report.residual
            )));
        }
        // Downward: v^{k+1} ≤ v^k; upward: v^{k+1} ≥ v^k.
        for (node, (&a, &b)) in sol.u.values().iter().zip(v.values()).enumerate() {
            let excess = if downward { a - b } else { b - a };
            if excess > MONOTONE_TOL {
                return Err(Error::NotMonotone {
                    iteration: iter,
                    node,
                    excess,
                });
            }
        }
        let max_update = sol.u.max_abs_diff(&v);
        history.push(IterationRecord {
            iter,
            max_update,
            residual: sol.report.residual,
        });
        members.push(SetMember {
            label: format!("{label}[{iter}]"),
            residual: sol.report.residual,
            u: sol.u.clone(),
        });
        v = sol.u;
        if max_update <= opts.tol {
            return Ok((v, history));
        }
    }
    Err(Error::NotConverged(format!("{label} iteration exceeded {} steps", opts.max_outer)))
}

/// Candidates for the smallest and greatest solutions in a certified
/// interval, certified post hoc by ordering every member of the set.
pub fn extremal_pair(prob: &VIProblem, oi: &OrderedInterval, opts: &SolveOptions) -> Result<ExtremalResult> {
    if !oi.passes() {
        return Err(Error::InvalidArgument(format!(
            "interval is not certified: {}; {}",
            oi.sub.summary(),
            oi.sup.summary()
        )));
    }
    extremal_in_interval(prob, &oi.lower, &oi.upper, opts)
}

fn extremal_in_interval(prob: &VIProblem, lower: &FeFunction, upper: &FeFunction, opts: &SolveOptions) -> Result<ExtremalResult> {
    let mut members = Vec::new();
    let (greatest, greatest_history) = monotone_sequence(prob, lower, upper, true, opts, "greatest", &mut members)?;
    let g = members.len() - 1;
    let (smallest, smallest_history) = monotone_sequence(prob, lower, upper, false, opts, "smallest", &mut members)?;
    let s = members.len() - 1;
    debug_assert_eq!(&members[g].u, &greatest);
    debug_assert_eq!(&members[s].u, &smallest);
    let mut set = SolutionSet {
        members,
        smallest: s,
        greatest: g,
        order_defect: 0.0,
    };
    set.compute_order_defect();
    Ok(ExtremalResult {
        greatest_history,
        smallest_history,
        set,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedPointRecord {
    pub iter: usize,
    pub max_update: f64,
    pub residual: f64,
    /// Supersolution (G-iteration) or subsolution (T-iteration) margin of
    /// the iterate for the problem frozen at itself.
    pub certificate_margin: Option<f64>,
    pub certificate_passes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiscontinuousResult {
    pub g_history: Vec<FixedPointRecord>,
    pub t_history: Vec<FixedPointRecord>,
    pub monotonicity: crate::multifun::MonotonicityReport,
    #[serde(skip)]
    pub smallest: FeFunction,
    #[serde(skip)]
    pub greatest: FeFunction,
    /// `v⁰ = ū, v¹, …` of the G-iteration.
    #[serde(skip)]
    pub g_iterates: Vec<FeFunction>,
    /// `v⁰ = u̲, v¹, …` of the T-iteration.
    #[serde(skip)]
    pub t_iterates: Vec<FeFunction>,
    /// Residuals of `u_*` and `u^*` for the problem frozen at themselves.
    pub smallest_residual: f64,
    pub greatest_residual: f64,
}

fn frozen_problem(
    prob: &VIProblem,
    j: &TwoArgIntervalMultifunction,
    j_gamma: Option<&TwoArgIntervalMultifunction>,
    v: &FeFunction,
) -> Result<VIProblem> {
    let mut p = prob.original().with_f(j.freeze(v))?;
    if let Some(jg) = j_gamma {
        p = p.with_f_gamma(jg.freeze(v))?;
    }
    Ok(p)
}

/// Greatest and smallest solutions when the multifunction depends on the
/// state through a second argument: `f(x,s) = [j₁(x,u(x),s), j₂(x,u(x),s)]`.
///
/// The G-iteration starts at `ū`, freezes `r = v^k` and takes the greatest
/// solution of the frozen problem in `[u̲, v^k]`; the T-iteration is the
/// mirror image from `u̲`. Both endpoints of `j` must be nonincreasing in `r`
/// (checked by sampling).
pub fn discontinuous_fixed_point(
    prob: &VIProblem,
    j: &TwoArgIntervalMultifunction,
    j_gamma: Option<&TwoArgIntervalMultifunction>,
    oi: &OrderedInterval,
    opts: &SolveOptions,
) -> Result<DiscontinuousResult> {
    let mesh = prob.mesh();
    let (lo, hi) = (oi.lower.min_value(), oi.upper.max_value());
    let rs: Vec<f64> = (0..=64).map(|k| lo - 0.5 + (hi - lo + 1.0) * k as f64 / 64.0).collect();
    let ss: Vec<f64> = (0..=16).map(|k| lo - 0.5 + (hi - lo + 1.0) * k as f64 / 16.0).collect();
    let mut monotonicity = j.check_monotone(mesh, &rs, &ss)?;
    if let Some(jg) = j_gamma {
        let b = jg.check_monotone(mesh, &rs, &ss)?;
        monotonicity.samples += b.samples;
        monotonicity.upper_increase = monotonicity.upper_increase.max(b.upper_increase);
        monotonicity.lower_increase = monotonicity.lower_increase.max(b.lower_increase);
        monotonicity.order_defect = monotonicity.order_defect.max(b.order_defect);
    }
    if !monotonicity.holds(0.0) {
        return Err(Error::InvalidArgument(format!(
            "endpoints are not nonincreasing in r (increase of j1 {:.3e}, of j2 {:.3e}, order defect {:.3e})",
            monotonicity.lower_increase, monotonicity.upper_increase, monotonicity.order_defect
        )));
    }

    let run = |downward: bool| -> Result<(FeFunction, Vec<FixedPointRecord>, f64, Vec<FeFunction>)> {
        let mut v = if downward { oi.upper.clone() } else { oi.lower.clone() };
        let mut iterates = vec![v.clone()];
        let mut history = Vec::new();
        for iter in 1..=opts.max_outer.max(1) {
            let frozen = frozen_problem(prob, j, j_gamma, &v)?;
            let (a, b) = if downward { (&oi.lower, &v) } else { (&v, &oi.upper) };
            let ext = extremal_in_interval(&frozen, a, b, opts)?;
            let next = if downward { ext.greatest().clone() } else { ext.smallest().clone() };
            for (node, (&x, &y)) in next.values().iter().zip(v.values()).enumerate() {
                let excess = if downward { x - y } else { y - x };
                if excess > MONOTONE_TOL {
                    return Err(Error::NotMonotone {
                        iteration: iter,
                        node,
                        excess,
                    });
                }
            }
            let self_frozen = frozen_problem(prob, j, j_gamma, &next)?;
            let cert = if downward {
                verify_supersolution(&next, &self_frozen, &SelectionRule::Upper, opts.tol)?
            } else {
                verify_subsolution(&next, &self_frozen, &SelectionRule::Lower, opts.tol)?
            };
            let max_update = next.max_abs_diff(&v);
            let residual = if downward {
                ext.set.members[ext.set.greatest].residual
            } else {
                ext.set.members[ext.set.smallest].residual
            };
            history.push(FixedPointRecord {
                iter,
                max_update,
                residual,
                certificate_margin: cert.margin,
                certificate_passes: cert.passes,
            });
            v = next;
            iterates.push(v.clone());
            if max_update <= opts.tol {
                let rule = if downward { SelectionRule::Lower } else { SelectionRule::Upper };
                let (eta, zeta) = self_frozen.selections(&v, &rule)?;
                let res = vi_residual(&self_frozen, &v, &eta, &zeta)?;
                return Ok((v, history, res, iterates));
            }
        }
        Err(Error::NotConverged(format!(
            "{} iteration exceeded {} steps",
            if downward { "G" } else { "T" },
            opts.max_outer
        )))
    };
    let (greatest, g_history, greatest_residual, g_iterates) = run(true)?;
    let (smallest, t_history, smallest_residual, t_iterates) = run(false)?;
    Ok(DiscontinuousResult {
        g_history,
        t_history,
        monotonicity,
        smallest,
        greatest,
        g_iterates,
        t_iterates,
        smallest_residual,
        greatest_residual,
    })
}
