//! Gradient flow of the transport energy to a fixed target plus entropy.
//! With a separable cost the minimizer is a Gibbs measure, whatever the
//! target.
//!
//! Run: cargo run --release --example bridge_flow

use schrodinger_map::cost::{build_cost, CostDescriptor, SiteTerm};
use schrodinger_map::flow::{bridge_equilibrium, preset_energy, run_flow, Equilibrium, FlowSpec, Preset};
use schrodinger_map::measure::{DiscreteMeasure, Grid1D};

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::new(-3.0, 3.0, 64)?;
    let desc = CostDescriptor::Separable {
        terms: vec![
            SiteTerm::Poly { coeffs: vec![0.0, 0.4, 0.5] },
            SiteTerm::Cos { amplitude: 0.3, frequency: 2.0, phase: 0.0 },
        ],
    };
    let cost = build_cost(&desc, &[g, g])?;
    let nu = DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - 0.5) / 0.7f64).powi(2)).exp() + 1e-3)?;
    let mut spec = FlowSpec::new(Preset::BridgeEnergy, cost.clone(), Some(nu), 8.0)?;
    spec.record_every = 400;

    let star = bridge_equilibrium(&cost).expect("separable cost");
    println!("Gibbs minimizer: mean {:.4}, second moment {:.4}", star.mean(), star.second_moment());
    let energy = preset_energy(&spec, std::slice::from_ref(&star))?;

    let init = DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - 1.5) / 0.4f64).powi(2)).exp() + 1e-3)?;
    let run = run_flow(&spec, &[init], Some(&Equilibrium { measures: vec![star], energy }))?;
    for s in &run.states {
        let m = &s.measures[0];
        println!("t = {:6.3}  mean {:+.4}  F - F* {:.3e}  W {:.3e}", s.time, m.mean(), s.energy - energy, s.w2_to_equilibrium.unwrap_or(f64::NAN));
    }
    if let Some(d) = &run.summary.decay {
        println!("gap decay rate {:.3}, R^2 {:.5}", d.kappa, d.r_squared);
    }
    Ok(())
}
