//! 1D obstacle problem with a constant load, written as CSV.
//!
//! Solves  -u'' + 8 = 0  where u > -1/2,  u ≥ -1/2,  u(0) = u(1) = 0.
//! The contact set starts at x = 1/(2√2).
//!
//! cargo run --example obstacle > obstacle.csv

use dpvi::mesh::{FeFunction, Mesh};
use dpvi::multifun::{Domain, IntervalMultifunction};
use dpvi::operator::DoublePhaseOperator;
use dpvi::spaces::ExponentData;
use dpvi::visolve::{solve_vi, ConstraintSet, SolveOptions, VIProblem};

fn main() -> dpvi::Result<()> {
    let mesh = Mesh::interval(64, "0")?;
    let op = DoublePhaseOperator::new(mesh.clone(), ExponentData::constant(&mesh, 2.0, 3.0, 0.0), 1e-8)?;
    let psi = FeFunction::constant(&mesh, -0.5);
    let prob = VIProblem::new(op, ConstraintSet::obstacle(psi)?)?
        .with_f(IntervalMultifunction::single_valued("8", Domain::Interior)?)?;

    let sol = solve_vi(&prob, &SolveOptions::default())?;
    let r = &sol.report;
    eprintln!(
        "converged {} after {} Newton steps, residual {:.2e}",
        r.converged, r.iterations, r.residual
    );
    let contact = sol.u.values().iter().position(|&v| v <= -0.5 + 1e-9).unwrap();
    eprintln!(
        "first contact node x = {:.5} (free boundary {:.5})",
        mesh.nodes()[contact][0],
        1.0 / (2.0 * 2f64.sqrt())
    );
    sol.u.write_csv(std::io::stdout().lock())?;
    Ok(())
}
