//! Constant-shift sub/supersolution pair, certificates, and a solve inside it.
//!
//! Bounds `f₁ ≤ k₁` and `f₂ ≥ k₂` give `u̲ = u₁` with `Au₁ = −k₁` and
//! `ū = u₂ + M` with `Au₂ = −k₂`; every solution between them is found by
//! solving the truncated auxiliary problem.
//!
//! cargo run --example enclosure

use dpvi::expr::{Expr, VarSet};
use dpvi::extremal::{construct_obstacle_bounds, solve_enclosed, BoundsSpec};
use dpvi::mesh::{FeFunction, Mesh};
use dpvi::multifun::{Domain, IntervalMultifunction};
use dpvi::operator::DoublePhaseOperator;
use dpvi::spaces::ExponentData;
use dpvi::visolve::{ConstraintSet, SolveOptions, VIProblem};

fn main() -> dpvi::Result<()> {
    let parse = |s: &str| Expr::parse(s, VarSet::SPATIAL);
    let mesh = Mesh::interval(48, "0")?;
    let ed = ExponentData::from_exprs(&mesh, &parse("2.2")?, &parse("3.5")?, &parse("0.5 + 0.5*x")?)?;
    let op = DoublePhaseOperator::new(mesh.clone(), ed, 1e-8)?;
    let psi = FeFunction::interpolate(&parse("-0.02 - 0.05*sin(3.14159265*x)")?, &mesh)?;
    // A bounded, discontinuous-looking source: the interval widens where s changes sign.
    let f = IntervalMultifunction::parse("2 - min(abs(s), 1)", "3 + min(abs(s), 1)", Domain::Interior)?;
    let prob = VIProblem::new(op, ConstraintSet::obstacle(psi)?)?.with_f(f)?;

    let spec = BoundsSpec {
        c_psi: Some(0.0),
        ..BoundsSpec::new(parse("2")?, parse("3")?)
    };
    let opts = SolveOptions::default();
    let oi = construct_obstacle_bounds(&prob, &spec, &opts)?;
    println!("M = {:.6}", oi.construction.as_ref().map_or(0.0, |c| c.m));
    println!("{}", oi.sub.summary());
    println!("{}", oi.sup.summary());

    let sol = solve_enclosed(&prob, &oi, &opts)?;
    let enc = sol.report.enclosure.as_ref().unwrap();
    println!(
        "solution: residual {:.2e}, enclosed {} (below {:.1e}, above {:.1e}), range [{:.5}, {:.5}]",
        sol.report.residual,
        enc.holds,
        enc.below,
        enc.above,
        sol.u.min_value(),
        sol.u.max_value()
    );
    Ok(())
}
