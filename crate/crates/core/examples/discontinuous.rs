//! Source depending on the state through a jump: `j(x, r, s)` with a step at
//! `r = 0.1`, nonincreasing in `r`. Frozen-argument iterations from both ends
//! of the interval give the greatest and smallest solutions.
//!
//! cargo run --example discontinuous

use dpvi::expr::{Expr, VarSet};
use dpvi::extremal::{construct_obstacle_bounds, discontinuous_fixed_point, BoundsSpec};
use dpvi::mesh::Mesh;
use dpvi::multifun::{Domain, IntervalMultifunction, TwoArgIntervalMultifunction};
use dpvi::operator::DoublePhaseOperator;
use dpvi::spaces::ExponentData;
use dpvi::visolve::{ConstraintSet, SolveOptions, VIProblem};

fn main() -> dpvi::Result<()> {
    let parse = |s: &str| Expr::parse(s, VarSet::SPATIAL);
    let mesh = Mesh::interval(16, "0")?;
    let op = DoublePhaseOperator::new(mesh.clone(), ExponentData::constant(&mesh, 2.0, 3.0, 0.0), 1e-8)?;
    let step = "(1 + sign(r - 0.1))/2";
    let j = TwoArgIntervalMultifunction::parse(&format!("-1 - 2*{step}"), &format!("1 - 2*{step}"), Domain::Interior)?;
    // The r-envelope of j certifies the starting interval.
    let prob = VIProblem::new(op, ConstraintSet::whole_space(&mesh))?
        .with_f(IntervalMultifunction::parse("-3", "1", Domain::Interior)?)?;
    let opts = SolveOptions::default();
    let oi = construct_obstacle_bounds(&prob, &BoundsSpec::new(parse("3")?, parse("-3")?), &opts)?;

    let res = discontinuous_fixed_point(&prob, &j, None, &oi, &opts)?;
    println!("monotonicity samples: {} (holds: {})", res.monotonicity.samples, res.monotonicity.holds(0.0));
    for r in &res.g_history {
        println!(
            "G iter {}: max update {:.3e}, supersolution margin {:.2e}",
            r.iter,
            r.max_update,
            r.certificate_margin.unwrap_or(f64::NAN)
        );
    }
    for r in &res.t_history {
        println!(
            "T iter {}: max update {:.3e}, subsolution margin {:.2e}",
            r.iter,
            r.max_update,
            r.certificate_margin.unwrap_or(f64::NAN)
        );
    }
    println!(
        "greatest max {:.6} (residual {:.1e}); smallest min {:.6} (residual {:.1e})",
        res.greatest.max_value(),
        res.greatest_residual,
        res.smallest.min_value(),
        res.smallest_residual
    );
    Ok(())
}
