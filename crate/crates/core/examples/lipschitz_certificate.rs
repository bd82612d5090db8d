//! Lipschitz ratio of the potentials along a displacement path, for several
//! time steps. A ratio that stays put as the step shrinks is the numerical
//! certificate.
//!
//! Run: cargo run --release --example lipschitz_certificate

use schrodinger_map::analysis::{lipschitz_ratio_ck, probe_path};
use schrodinger_map::cost::{build_cost, CostDescriptor};
use schrodinger_map::measure::{DiscreteMeasure, Grid1D, MeasureFamily, PlanFamily};

fn bump(g: Grid1D, c: f64, w: f64) -> schrodinger_map::Result<DiscreteMeasure> {
    DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - c) / w).powi(2)).exp() + 1e-5)
}

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::unit(64)?;
    let start = MeasureFamily::new(vec![bump(g, 0.3, 0.08)?, bump(g, 0.45, 0.1)?])?;
    let end = MeasureFamily::new(vec![bump(g, 0.6, 0.12)?, bump(g, 0.7, 0.07)?])?;
    let cost = build_cost(&CostDescriptor::Quadratic { scale: 1.0, weights: None }, &[g, g])?;

    let plans = PlanFamily::optimal(&start, &end)?;
    let ts: Vec<f64> = (0..=20).map(|k| k as f64 / 20.0).collect();
    let probe = probe_path(&cost, &plans, &ts, 1e-11)?;
    println!("plan cost {:.5}", probe.plan_cost);

    for k in 0..=2 {
        let r = lipschitz_ratio_ck(&probe, k)?;
        println!("\nC^{k}: max ratio {:.4}, median {:.4}", r.max, r.median);
        for s in r.per_step.iter().filter(|s| [0.05, 0.1, 0.2].iter().any(|x| (x - s.step).abs() < 1e-9)) {
            println!("  |t-s| = {:.2}: {:.4} over {} pairs", s.step, s.max, s.pairs);
        }
        println!("  spread {:.4}", r.spread(&[0.2, 0.1, 0.05]).unwrap_or(f64::NAN));
    }
    Ok(())
}
