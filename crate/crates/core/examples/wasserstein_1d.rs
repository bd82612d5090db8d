//! Exact one-dimensional transport: distances, the monotone plan and the
//! displacement interpolation.
//!
//! Run: cargo run --example wasserstein_1d

use schrodinger_map::measure::{
    displacement_path, optimal_plan_1d, wasserstein2_1d, wasserstein2_histogram, DiscreteMeasure, Grid1D,
    OutputGrid, PlanFamily,
};

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::new(0.0, 1.0, 40)?;
    let a = DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - 0.25) / 0.06f64).powi(2)).exp())?;
    let b = DiscreteMeasure::from_density(g, |x| {
        (-0.5 * ((x - 0.6) / 0.05f64).powi(2)).exp() + 0.5 * (-0.5 * ((x - 0.85) / 0.04f64).powi(2)).exp()
    })?;

    println!("W2 between atoms at cell centers:  {:.6}", wasserstein2_1d(&a, &b)?);
    println!("W2 between cell histograms:        {:.6}", wasserstein2_histogram(&a, &b)?);

    let plan = optimal_plan_1d(&a, &b)?;
    println!("plan support size {}, cost {:.6}", plan.entries().filter(|e| e.2 > 0.0).count(), plan.quadratic_cost());

    // Families carry at least two members; the second plan runs backwards.
    let plans = PlanFamily::new(vec![plan, optimal_plan_1d(&b, &a)?])?;
    println!("\n  t     mean    second moment   (b -> a mean)");
    for k in 0..=4 {
        let t = k as f64 / 4.0;
        let m = displacement_path(&plans, t, OutputGrid::Source)?;
        println!("{t:4.2}  {:.4}  {:.4}          {:.4}", m.get(0).mean(), m.get(0).second_moment(), m.get(1).mean());
    }
    Ok(())
}
