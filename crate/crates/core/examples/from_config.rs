//! Load a TOML problem description and solve it through the library.
//!
//! cargo run --example from_config -- crates/core/configs/square_robin.toml

use dpvi::config::ProblemConfig;
use dpvi::visolve::solve_vi;

fn main() -> dpvi::Result<()> {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/configs/square_robin.toml").to_string());
    let cfg = ProblemConfig::load(&path)?;
    let prob = cfg.build_problem()?;
    let opts = cfg.solve_options()?;
    let sol = solve_vi(&prob, &opts)?;
    println!(
        "{}: {} nodes, {} constraint, selection {}",
        path,
        prob.mesh().node_count(),
        prob.constraint.name(),
        opts.selection.name()
    );
    println!(
        "converged {} in {} steps, residual {:.2e}, u in [{:.6}, {:.6}]",
        sol.report.converged,
        sol.report.iterations,
        sol.report.residual,
        sol.u.min_value(),
        sol.u.max_value()
    );
    Ok(())
}
