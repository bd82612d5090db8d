//! The energy along a displacement path: first variation against finite
//! differences and the semiconvexity modulus with its chord check.
//!
//! Run: cargo run --release --example displacement_smoothness

use schrodinger_map::analysis::{energy_derivative, probe_path, semiconvexity_modulus, wasserstein_gradient_check};
use schrodinger_map::cost::{build_cost, CostDescriptor};
use schrodinger_map::measure::{DiscreteMeasure, Grid1D, MeasureFamily, PlanFamily};

fn bump(g: Grid1D, c: f64, w: f64) -> schrodinger_map::Result<DiscreteMeasure> {
    DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - c) / w).powi(2)).exp() + 1e-3)
}

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::unit(48)?;
    let cost = build_cost(&CostDescriptor::Cosine { amplitude: 1.0, frequency: 5.0 }, &[g, g])?;
    let a = MeasureFamily::new(vec![bump(g, 0.3, 0.1)?, bump(g, 0.6, 0.08)?])?;
    let b = MeasureFamily::new(vec![bump(g, 0.55, 0.12)?, bump(g, 0.35, 0.1)?])?;

    let ts: Vec<f64> = (0..=10).map(|k| k as f64 / 10.0).collect();
    let probe = probe_path(&cost, &PlanFamily::optimal(&a, &b)?, &ts, 1e-12)?;

    println!("   h       |FD - dE/dt| at t = 0.5");
    let d = energy_derivative(&probe, 0.5)?;
    for h in [0.2, 0.1, 0.05, 0.025] {
        let fd = (probe.energy_at(0.5 + h)? - probe.energy_at(0.5 - h)?) / (2.0 * h);
        println!("{h:6.3}   {:.3e}", (fd - d).abs());
    }

    let sc = semiconvexity_modulus(&probe)?;
    println!("\nsemiconvexity modulus {:.4}, chords hold: {}", sc.modulus, sc.chords_hold());

    let check = wasserstein_gradient_check(&cost, &a, &b, &[0.025, 0.05, 0.1], 1e-12)?;
    for (s, r) in check.s_values.iter().zip(&check.ratios) {
        println!("s = {s:5.3}: |first-order residual| / W^2 = {r:.4}");
    }
    Ok(())
}
