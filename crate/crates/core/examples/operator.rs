//! The double phase operator: action, energy, and Jacobian.
//!
//! cargo run --example operator

use dpvi::expr::{Expr, VarSet};
use dpvi::mesh::{FeFunction, Mesh};
use dpvi::operator::DoublePhaseOperator;
use dpvi::spaces::ExponentData;

fn main() -> dpvi::Result<()> {
    let parse = |s: &str| Expr::parse(s, VarSet::SPATIAL);
    let mesh = Mesh::interval(32, "0")?;
    let ed = ExponentData::from_exprs(&mesh, &parse("1.7 + 0.5*x")?, &parse("3")?, &parse("1 - x")?)?;
    let op = DoublePhaseOperator::new(mesh.clone(), ed, 1e-8)?;

    let u = FeFunction::interpolate(&parse("x*(1 - x)*exp(x)")?, &mesh)?;
    let h = FeFunction::interpolate(&parse("sin(6*x)")?, &mesh)?;
    println!("I(u) = {:.10}", op.energy(&u)?);

    // ⟨Au, h⟩ is the directional derivative of the energy.
    let exact = op.pairing(&u, &h)?;
    for delta in [1e-2, 1e-3, 1e-4, 1e-5] {
        let cd = op.energy_difference(&u, &h, delta)? / (2.0 * delta);
        println!("delta {delta:.0e}: central difference {cd:.12}  error {:.2e}", (cd - exact).abs());
    }

    let v = u.scaled(0.5);
    println!("<Au - Av, u - v> = {:.6e}", op.monotonicity_gap(&u, &v)?);

    let jac = op.jacobian(&u)?;
    println!("Jacobian: {}x{} with {} stored entries", jac.nrows(), jac.ncols(), jac.nnz());
    Ok(())
}
