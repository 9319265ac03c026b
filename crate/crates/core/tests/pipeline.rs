use std::sync::Arc;

use dpvi::expr::{Expr, VarSet};
use dpvi::extremal::{
    construct_obstacle_bounds, extremal_pair, solve_enclosed, verify_subsolution, verify_supersolution, BoundsSpec,
};
use dpvi::mesh::{FeFunction, Mesh};
use dpvi::multifun::{Domain, IntervalMultifunction, SelectionRule};
use dpvi::operator::DoublePhaseOperator;
use dpvi::spaces::ExponentData;
use dpvi::visolve::{solve_vi, vi_residual, ConstraintSet, SolveOptions, VIProblem};
use proptest::prelude::*;

fn e(s: &str) -> Expr {
    Expr::parse(s, VarSet::SPATIAL).unwrap()
}

fn operator(mesh: &Arc<Mesh>, p: &str, q: &str, mu: &str) -> DoublePhaseOperator {
    let ed = ExponentData::from_exprs(mesh, &e(p), &e(q), &e(mu)).unwrap();
    DoublePhaseOperator::new(mesh.clone(), ed, 1e-8).unwrap()
}

#[test]
fn square_obstacle_with_boundary_source() {
    let mesh = Mesh::square(8, "y - 0.99").unwrap();
    let psi = FeFunction::interpolate(&e("-0.05 - 0.1*x*(1-x)"), &mesh).unwrap();
    let prob = VIProblem::new(operator(&mesh, "1.8", "2.5", "1 + x*y"), ConstraintSet::obstacle(psi.clone()).unwrap())
        .unwrap()
        .with_f(IntervalMultifunction::parse("2 - s", "3 - s", Domain::Interior).unwrap())
        .unwrap()
        .with_f_gamma(IntervalMultifunction::parse("-0.5", "-0.5", Domain::Boundary).unwrap())
        .unwrap();
    for rule in [SelectionRule::Lower, SelectionRule::Upper, SelectionRule::Midpoint] {
        let sol = solve_vi(&prob, &SolveOptions::default().with_selection(rule.clone())).unwrap();
        assert!(sol.report.converged, "{}: {:.3e}", rule.name(), sol.report.residual);
        assert!(psi.le(&sol.u, 0.0));
        assert!(vi_residual(&prob, &sol.u, &sol.eta, &sol.zeta).unwrap() <= 1e-8);
        // A solution is both a sub- and a supersolution for its own selection.
        assert!(verify_subsolution(&sol.u, &prob, &rule, 1e-8).unwrap().passes);
        assert!(verify_supersolution(&sol.u, &prob, &rule, 1e-8).unwrap().passes);
    }
}

#[test]
fn double_phase_interval_pipeline_in_2d() {
    let mesh = Mesh::square(6, "0").unwrap();
    let prob = VIProblem::new(operator(&mesh, "1.6 + 0.2*x", "2.4", "y"), ConstraintSet::whole_space(&mesh))
        .unwrap()
        .with_f(IntervalMultifunction::parse("-2 + 0.5*sin(s)", "1 + 0.5*sin(s)", Domain::Interior).unwrap())
        .unwrap();
    let opts = SolveOptions::default();
    let oi = construct_obstacle_bounds(&prob, &BoundsSpec::new(e("1.5"), e("-2.5")), &opts).unwrap();
    assert!(oi.passes(), "{} / {}", oi.sub.summary(), oi.sup.summary());
    let sol = solve_enclosed(&prob, &oi, &opts).unwrap();
    assert!(sol.report.enclosure.as_ref().unwrap().holds);
    let ext = extremal_pair(&prob, &oi, &opts).unwrap();
    assert!(ext.smallest().le(&sol.u, 1e-8) && sol.u.le(ext.greatest(), 1e-8));
    assert!(ext.set.order_defect <= 1e-8);
}

fn box_problem(n: usize, c: f64) -> (VIProblem, FeFunction, FeFunction) {
    let mesh = Mesh::interval(n, "0").unwrap();
    let lo = FeFunction::interpolate(&e("-0.1 - x*(1-x)"), &mesh).unwrap();
    let hi = FeFunction::interpolate(&e("0.2*sin(3.14159265*x)"), &mesh).unwrap();
    let prob = VIProblem::new(operator(&mesh, "2.5", "3", "0.5"), ConstraintSet::boxed(lo.clone(), hi.clone()).unwrap())
        .unwrap()
        .with_f(IntervalMultifunction::single_valued(&format!("{c:?}"), Domain::Interior).unwrap())
        .unwrap();
    (prob, lo, hi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn projection_is_idempotent_and_feasible(vals in prop::collection::vec(-2.0f64..2.0, 17)) {
        let (prob, lo, hi) = box_problem(16, 0.0);
        let u = FeFunction::new(prob.mesh().clone(), vals).unwrap();
        let p = prob.constraint.project(&u);
        prop_assert!(prob.constraint.check_feasible(&p, 0.0).is_ok());
        prop_assert_eq!(prob.constraint.project(&p), p.clone());
        for (i, &v) in p.values().iter().enumerate() {
            if !prob.mesh().is_dirichlet(i) {
                prop_assert!(lo.values()[i] <= v && v <= hi.values()[i]);
            }
        }
    }

    #[test]
    fn larger_source_gives_smaller_solution(c1 in -20.0f64..20.0, dc in 0.0f64..10.0) {
        let (p1, _, _) = box_problem(16, c1);
        let (p2, _, _) = box_problem(16, c1 + dc);
        let opts = SolveOptions::default();
        let u1 = solve_vi(&p1, &opts).unwrap();
        let u2 = solve_vi(&p2, &opts).unwrap();
        prop_assert!(u1.report.converged && u2.report.converged);
        prop_assert!(u2.u.le(&u1.u, 1e-9));
    }

    #[test]
    fn selections_stay_in_the_interval(vals in prop::collection::vec(-3.0f64..3.0, 9), theta in 0.0f64..=1.0) {
        let mesh = Mesh::interval(8, "0").unwrap();
        let f = IntervalMultifunction::parse("s*s - 1", "s*s + exp(s)", Domain::Interior).unwrap();
        let u = FeFunction::new(mesh.clone(), vals).unwrap();
        let w = dpvi::mesh::QuadratureField::constant(&mesh, dpvi::mesh::Layout::Interior, theta);
        for rule in [SelectionRule::Lower, SelectionRule::Upper, SelectionRule::Midpoint, SelectionRule::Weighted(w)] {
            let eta = f.select(&u, &rule).unwrap();
            prop_assert!(f.selection_defect(&u, &eta).unwrap() <= 1e-12);
        }
    }
}
