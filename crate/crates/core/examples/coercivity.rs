//! Sampling probe of coercivity: min over directions of `⟨Au + η, u − u₀⟩`
//! on spheres of growing radius. Reports "no violation found", never a proof.
//!
//! cargo run --example coercivity

use dpvi::mesh::{FeFunction, Mesh};
use dpvi::multifun::{Domain, IntervalMultifunction};
use dpvi::operator::DoublePhaseOperator;
use dpvi::spaces::ExponentData;
use dpvi::visolve::{check_coercivity, ConstraintSet, VIProblem};

fn main() -> dpvi::Result<()> {
    let mesh = Mesh::interval(32, "0")?;
    let radii = [1.0, 2.0, 4.0, 8.0, 16.0];
    for (label, f1, f2) in [("bounded source", "-1", "1"), ("strong reaction", "-100*s - 1", "-100*s + 1")] {
        let op = DoublePhaseOperator::new(mesh.clone(), ExponentData::constant(&mesh, 2.0, 3.0, 0.0), 1e-8)?;
        let prob = VIProblem::new(op, ConstraintSet::whole_space(&mesh))?
            .with_f(IntervalMultifunction::parse(f1, f2, Domain::Interior)?)?;
        let report = check_coercivity(&prob, &FeFunction::zeros(&mesh), &radii, 32, 2024)?;
        println!("{label}: {}", report.verdict);
        for r in &report.radii {
            println!("  R = {:>4}: min pairing {:>12.4}", r.radius, r.min_value);
        }
    }
    Ok(())
}
