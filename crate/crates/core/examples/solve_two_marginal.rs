//! Entropic transport between two bumps with a quadratic cost.
//!
//! Run: cargo run --example solve_two_marginal

use schrodinger_map::cost::{build_cost, CostDescriptor};
use schrodinger_map::measure::{DiscreteMeasure, Grid1D, MeasureFamily};
use schrodinger_map::potential::density_fields;
use schrodinger_map::solver::{Solver, SolveOptions};

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::new(0.0, 1.0, 48)?;
    let mu = DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - 0.3) / 0.08f64).powi(2)).exp() + 1e-4)?;
    let nu = DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - 0.65) / 0.12f64).powi(2)).exp() + 1e-4)?;
    let fam = MeasureFamily::new(vec![mu, nu])?;

    let cost = build_cost(&CostDescriptor::Quadratic { scale: 4.0, weights: None }, &[g, g])?;
    let solver = Solver::new(&cost, SolveOptions::with_tol(1e-11))?;
    let rep = solver.solve(&fam)?;

    println!("iterations      {}", rep.iterations);
    println!("residual        {:.3e}", rep.final_residual);
    println!("dual value      {:.12}", rep.dual_value);
    println!("primal value    {:.12}", rep.primal_value);
    println!("marginal error  {:.3e}", rep.marginal_error);

    let fields = density_fields(&rep.potentials, &fam, &cost)?;
    println!("density bound exponent {:.3}, violations {}", fields.bound_exponent, fields.bound_violations());

    // Barycentric map x -> E[y | x] from the coupling.
    let gamma = solver.coupling(&rep.potentials, &fam);
    let nodes = g.nodes();
    println!("\n   x     E[y|x]");
    for i in (0..48).step_by(6) {
        let row = &gamma.weights[i * 48..(i + 1) * 48];
        let mass: f64 = row.iter().sum();
        let m: f64 = row.iter().zip(&nodes).map(|(w, y)| w * y).sum::<f64>() / mass;
        println!("{:6.3}  {:6.3}", nodes[i], m);
    }
    Ok(())
}
