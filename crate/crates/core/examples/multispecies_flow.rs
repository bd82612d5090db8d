//! Two interacting species with diffusion relaxing to the closed-form
//! equilibrium, the marginals of e^{-c}.
//!
//! Run: cargo run --release --example multispecies_flow

use schrodinger_map::cost::{build_cost, normalize_cost, CostDescriptor, IndexedSite, PairKernel, PairTerm, SiteTerm};
use schrodinger_map::flow::{equilibrium_multispecies, preset_energy, run_flow, Equilibrium, FlowSpec, Preset};
use schrodinger_map::measure::{DiscreteMeasure, Grid1D};

fn main() -> schrodinger_map::Result<()> {
    let g = Grid1D::new(-3.0, 3.0, 64)?;
    let desc = CostDescriptor::Sum {
        pairs: vec![PairTerm { i: 0, j: 1, kernel: PairKernel::Quadratic { a: 0.5 } }],
        sites: vec![
            IndexedSite { i: 0, term: SiteTerm::Poly { coeffs: vec![0.0, 0.0, 0.5] } },
            IndexedSite { i: 1, term: SiteTerm::Poly { coeffs: vec![0.0, 0.3, 0.5] } },
        ],
        constant: 0.0,
    };
    let cost = normalize_cost(&build_cost(&desc, &[g, g])?);
    let mut spec = FlowSpec::new(Preset::MultiSpecies, cost, None, 6.0)?;
    spec.inner_tol = 1e-11;
    spec.record_every = 250;

    let star = equilibrium_multispecies(&spec.cost)?.into_members();
    let energy = preset_energy(&spec, &star)?;
    println!("F at the equilibrium: {energy:.3e}");

    let init = vec![
        DiscreteMeasure::from_density(g, |x| (-0.5 * ((x - 1.0) / 0.5f64).powi(2)).exp() + 1e-3)?,
        DiscreteMeasure::from_density(g, |x| (-0.5 * ((x + 1.2) / 0.4f64).powi(2)).exp() + 1e-3)?,
    ];
    let run = run_flow(&spec, &init, Some(&Equilibrium { measures: star, energy }))?;

    println!("\n    t        F          W to equilibrium");
    for s in &run.states {
        println!("{:6.3}  {:+.6e}  {:.3e}", s.time, s.energy, s.w2_to_equilibrium.unwrap_or(f64::NAN));
    }
    let sm = &run.summary;
    if let Some(d) = &sm.decay {
        println!("\nfitted rate {:.3} (R^2 {:.5}) on t in [{:.2}, {:.2}]", d.kappa, d.r_squared, d.t_start, d.t_stop);
    }
    println!("steps {}, mass defect {:.1e}, energy increases {}", sm.steps, sm.max_mass_defect, sm.energy_increases);
    Ok(())
}
