//! Potentials against marginals in a negative Sobolev norm: the ratio
//! settles as the perturbation shrinks.
//!
//! Run: cargo run --release --example sobolev_stability

use schrodinger_map::analysis::{hneg_norm, lipschitz_ratio_sobolev, SobolevGram};
use schrodinger_map::cost::{build_cost, CostDescriptor};
use schrodinger_map::measure::{DiscreteMeasure, Grid1D, MeasureFamily};

fn bump(g: Grid1D, c: f64, w: f64) -> schrodinger_map::Result<DiscreteMeasure> {
    DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - c) / w).powi(2)).exp() + 1e-3)
}

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::unit(64)?;
    let cost = build_cost(&CostDescriptor::Quadratic { scale: 2.0, weights: None }, &[g, g])?;
    let mu = MeasureFamily::new(vec![bump(g, 0.4, 0.12)?, bump(g, 0.6, 0.15)?])?;
    let target = [bump(g, 0.25, 0.05)?, bump(g, 0.8, 0.06)?];

    let gram = SobolevGram::new(g, 2)?;
    println!("     eps     H^-2 distance     ratio");
    for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
        let members = mu
            .members()
            .iter()
            .zip(&target)
            .map(|(m, t)| {
                let w = m.weights().iter().zip(t.weights()).map(|(x, y)| (1.0 - eps) * x + eps * y).collect();
                DiscreteMeasure::from_unnormalized(g, w)
            })
            .collect::<schrodinger_map::Result<Vec<_>>>()?;
        let nu = MeasureFamily::new(members)?;
        let mut rho: Vec<f64> = mu.get(0).weights().iter().zip(nu.get(0).weights()).map(|(a, b)| a - b).collect();
        let s = rho.iter().sum::<f64>() / rho.len() as f64;
        rho.iter_mut().for_each(|v| *v -= s);
        let r = lipschitz_ratio_sobolev(&cost, &mu, &nu, 1, 2, 1e-14)?;
        println!("{eps:8.0e}   {:.4e}      {:.5}", hneg_norm(&rho, &gram)?, r.ratio);
    }
    Ok(())
}
