//! Three marginals coupled by pairwise Gaussian attraction.
//!
//! Run: cargo run --example multi_marginal

use schrodinger_map::cost::{build_cost, CostDescriptor, PairKernel, PairTerm};
use schrodinger_map::measure::{DiscreteMeasure, Grid1D, MeasureFamily};
use schrodinger_map::potential::quotient_ck_norm;
use schrodinger_map::solver::{primal_plan, solve};

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::new(-1.0, 1.0, 24)?;
    let centers = [-0.5, 0.0, 0.4];
    let members = centers
        .iter()
        .map(|c| DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - c) / 0.2f64).powi(2)).exp() + 1e-3))
        .collect::<schrodinger_map::Result<Vec<_>>>()?;
    let mu = MeasureFamily::new(members)?;

    let pairs = [(0, 1), (0, 2), (1, 2)]
        .iter()
        .map(|&(i, j)| PairTerm {
            i,
            j,
            kernel: PairKernel::Gaussian { amplitude: 2.0, width: 0.3 },
        })
        .collect();
    let cost = build_cost(&CostDescriptor::Sum { pairs, sites: vec![], constant: 0.0 }, &[g, g, g])?;

    let rep = solve(&cost, &mu, 1e-11, 20_000)?;
    println!("iterations {}, residual {:.2e}", rep.iterations, rep.final_residual);
    println!("E(mu) = {:.10}", rep.dual_value);

    let gamma = primal_plan(&rep, &mu, &cost)?;
    for (i, m) in gamma.marginals().iter().enumerate() {
        let err = m.iter().zip(mu.get(i).weights()).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
        println!("marginal {i}: max error {err:.2e}");
    }
    for k in 0..=2 {
        println!("quotient C^{k} norm of the potentials: {:.4}", quotient_ck_norm(rep.potentials.members(), cost.grids(), k)?);
    }
    Ok(())
}
