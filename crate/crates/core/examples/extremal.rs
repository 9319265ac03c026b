//! Smallest and greatest solutions for an interval-valued source.
//!
//! With `f = [−1, 1]` and `p = 2`, the extremal solutions are `∓x(1−x)/2`.
//!
//! cargo run --example extremal

use dpvi::expr::{Expr, VarSet};
use dpvi::extremal::{construct_obstacle_bounds, extremal_pair, BoundsSpec};
use dpvi::mesh::Mesh;
use dpvi::multifun::{Domain, IntervalMultifunction};
use dpvi::operator::DoublePhaseOperator;
use dpvi::spaces::ExponentData;
use dpvi::visolve::{ConstraintSet, SolveOptions, VIProblem};

fn main() -> dpvi::Result<()> {
    let parse = |s: &str| Expr::parse(s, VarSet::SPATIAL);
    let mesh = Mesh::interval(16, "0")?;
    let op = DoublePhaseOperator::new(mesh.clone(), ExponentData::constant(&mesh, 2.0, 3.0, 0.0), 1e-8)?;
    let prob = VIProblem::new(op, ConstraintSet::whole_space(&mesh))?
        .with_f(IntervalMultifunction::parse("-1", "1", Domain::Interior)?)?;

    let opts = SolveOptions::default();
    let oi = construct_obstacle_bounds(&prob, &BoundsSpec::new(parse("1")?, parse("-1")?), &opts)?;
    let res = extremal_pair(&prob, &oi, &opts)?;

    for (name, hist) in [("greatest", &res.greatest_history), ("smallest", &res.smallest_history)] {
        for r in hist.iter() {
            println!("{name} iter {}: max update {:.3e}, residual {:.1e}", r.iter, r.max_update, r.residual);
        }
    }
    let exact = dpvi::mesh::FeFunction::interpolate(&parse("x*(1 - x)/2")?, &mesh)?;
    println!("|u^* - x(1-x)/2|  = {:.2e}", res.greatest().max_abs_diff(&exact));
    println!("|u_* + x(1-x)/2|  = {:.2e}", res.smallest().max_abs_diff(&exact.scaled(-1.0)));
    println!("ordering defect over {} members: {:.1e}", res.set.members.len(), res.set.order_defect);
    Ok(())
}
