//! Time derivative of the potentials along a path: implicit-function
//! solve against centered differences, and the kernel of the linearized
//! system.
//!
//! Run: cargo run --release --example implicit_derivative

use schrodinger_map::analysis::{
    assemble_linearization, finite_difference_derivative, potential_time_derivative, probe_path,
};
use schrodinger_map::cost::{build_cost, CostDescriptor, PairKernel, PairTerm};
use schrodinger_map::measure::{DiscreteMeasure, Grid1D, MeasureFamily, PlanFamily};
use schrodinger_map::potential::quotient_sup_norm;
use schrodinger_map::solver::solve;

fn bump(g: Grid1D, c: f64, w: f64) -> schrodinger_map::Result<DiscreteMeasure> {
    DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - c) / w).powi(2)).exp() + 1e-3)
}

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::unit(32)?;
    let pairs = vec![PairTerm { i: 0, j: 1, kernel: PairKernel::Gaussian { amplitude: 1.0, width: 0.25 } }];
    let cost = build_cost(&CostDescriptor::Sum { pairs, sites: vec![], constant: 0.0 }, &[g, g])?;
    let a = MeasureFamily::new(vec![bump(g, 0.3, 0.1)?, bump(g, 0.5, 0.15)?])?;
    let b = MeasureFamily::new(vec![bump(g, 0.65, 0.12)?, bump(g, 0.4, 0.1)?])?;

    let rep = solve(&cost, &a, 1e-12, 10_000)?;
    let op = assemble_linearization(&rep.potentials, &a, &cost)?;
    let k = op.kernel_check(1e-8);
    println!("kernel dimension {} (gauge angle sine {:.1e}), next singular value {:.3}", k.kernel_dim, k.max_gauge_angle_sine, k.margin);

    let probe = probe_path(&cost, &PlanFamily::optimal(&a, &b)?, &[0.0, 0.5, 1.0], 1e-12)?;
    println!("\n  t    |D_t phi|    |IFT - FD|");
    for t in [0.2, 0.4, 0.6, 0.8] {
        let ift = potential_time_derivative(&probe, t)?;
        let fd = finite_difference_derivative(&probe, t, 1e-3)?;
        let diff: Vec<Vec<f64>> = ift.nodes.iter().zip(&fd).map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect()).collect();
        println!("{t:4.1}  {:10.5}  {:10.2e}", quotient_sup_norm(&ift.nodes), quotient_sup_norm(&diff));
    }
    Ok(())
}
