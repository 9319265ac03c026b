//! Modulars and Luxemburg norms of a finite-element function.
//!
//! cargo run --example norms

use dpvi::expr::{Expr, VarSet};
use dpvi::mesh::{FeFunction, Layout, Mesh, QuadratureField};
use dpvi::spaces::{luxemburg_norm, modular, ExponentData, ModularKind};

fn main() -> dpvi::Result<()> {
    let parse = |s: &str| Expr::parse(s, VarSet::SPATIAL);
    let mesh = Mesh::square(16, "0")?;
    let ed = ExponentData::from_exprs(&mesh, &parse("1.6 + 0.3*x")?, &parse("2.8 + 0.2*y")?, &parse("x*y")?)?;

    let report = ed.validate(&mesh);
    println!("exponent conditions hold: {} ({} violations)", report.holds(), report.violations.len());

    let u = FeFunction::interpolate(&parse("sin(3.14159265*x)*sin(3.14159265*y)")?, &mesh)?;
    let r = QuadratureField::from_expr(&mesh, Layout::Interior, &parse("2 + x")?)?;
    for kind in [
        ModularKind::LebesgueH,
        ModularKind::SobolevH,
        ModularKind::WeightedLq,
        ModularKind::VariableLp(r),
    ] {
        let rho = modular(&kind, &ed, &u)?;
        let norm = luxemburg_norm(&kind, &ed, &u, 1e-12)?;
        // On the unit sphere of the norm the modular equals one.
        let unit = modular(&kind, &ed, &u.scaled(1.0 / norm))?;
        println!("{:>12}: modular {rho:.6}  norm {norm:.6}  modular(u/norm) {unit:.12}", kind.name());
    }
    Ok(())
}
