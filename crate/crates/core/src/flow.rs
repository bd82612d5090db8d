//! Wasserstein gradient flows driven by entropic transport potentials.
//!
//! Each species evolves by `∂_t μ_i = ∂_x(μ_i ∂_x S_i) + α_i ∂_xx μ_i` with
//! no-flux boundaries, where `S_i` is a preset-specific combination of
//! Schrödinger potentials. The finite-volume flux is of Scharfetter–Gummel
//! type: it is the upwind flux when `α = 0`, and with diffusion it vanishes
//! exactly on `μ ∝ e^{-S/α}`, so closed-form equilibria are discrete fixed
//! points.

use serde::{Deserialize, Serialize};

use crate::cost::{fd_derivative, CostTensor};
use crate::error::{Error, Result};
use crate::measure::{wasserstein2_histogram, DiscreteMeasure, MeasureFamily};
use crate::potential::PotentialFamily;
use crate::solver::{SolveOptions, SolveReport, Solver};

const CFL: f64 = 0.4;
const CLIP: f64 = 1e-14;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// `∂_t μ_i = ∇·(μ_i ∇S_i(μ))`
    EotOnly,
    /// Gradient flow of `E(μ, ν) - ½E(μ, μ) - ½E(ν, ν)`.
    SinkhornDivergence,
    /// Gradient flow of `E(μ, ν) + H(μ)`.
    BridgeEnergy,
    /// Gradient flow of `E(μ) + Σ H(μ_i)`.
    MultiSpecies,
}

impl Preset {
    pub fn diffusion(self) -> f64 {
        match self {
            Preset::EotOnly | Preset::SinkhornDivergence => 0.0,
            Preset::BridgeEnergy | Preset::MultiSpecies => 1.0,
        }
    }

    pub fn species(self, n_marginals: usize) -> usize {
        match self {
            Preset::EotOnly | Preset::MultiSpecies => n_marginals,
            Preset::SinkhornDivergence | Preset::BridgeEnergy => 1,
        }
    }

    fn needs_target(self) -> bool {
        matches!(self, Preset::SinkhornDivergence | Preset::BridgeEnergy)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DtPolicy {
    Fixed { dt: f64 },
    /// Largest stable step, capped by `max_dt` when given.
    Adaptive {
        #[serde(default)]
        max_dt: Option<f64>,
    },
}

impl Default for DtPolicy {
    fn default() -> Self {
        DtPolicy::Adaptive { max_dt: None }
    }
}

#[derive(Clone, Debug)]
pub struct FlowSpec {
    pub preset: Preset,
    pub cost: CostTensor,
    pub target_nu: Option<DiscreteMeasure>,
    pub dt_policy: DtPolicy,
    pub t_end: f64,
    pub inner_tol: f64,
    /// Keep every `record_every`-th state (the last state is always kept).
    pub record_every: usize,
    /// Abort when the energy increases by more than the per-step slack.
    pub abort_on_energy_increase: bool,
    diffusion: Vec<f64>,
}

impl FlowSpec {
    pub fn new(preset: Preset, cost: CostTensor, target_nu: Option<DiscreteMeasure>, t_end: f64) -> Result<Self> {
        let n = cost.n_marginals();
        if preset.needs_target() {
            let nu = target_nu
                .as_ref()
                .ok_or_else(|| Error::InvalidFlowSpec(format!("{preset:?} needs a target measure")))?;
            if n != 2 {
                return Err(Error::InvalidFlowSpec(format!("{preset:?} needs a two-marginal cost")));
            }
            if nu.len() != cost.dims()[1] || !nu.grid().same_interval(&cost.grids()[1]) {
                return Err(Error::InvalidFlowSpec("target measure does not live on the second cost grid".into()));
            }
            if preset == Preset::SinkhornDivergence && cost.grids()[0] != cost.grids()[1] {
                return Err(Error::InvalidFlowSpec("the divergence needs identical grids on both axes".into()));
            }
        } else if target_nu.is_some() {
            return Err(Error::InvalidFlowSpec(format!("{preset:?} takes no target measure")));
        }
        if !(t_end >= 0.0 && t_end.is_finite()) {
            return Err(Error::InvalidFlowSpec(format!("t_end = {t_end}")));
        }
        Ok(Self {
            preset,
            diffusion: vec![preset.diffusion(); preset.species(n)],
            cost,
            target_nu,
            dt_policy: DtPolicy::default(),
            t_end,
            inner_tol: 1e-9,
            record_every: 1,
            abort_on_energy_increase: true,
        })
    }

    pub fn diffusion(&self) -> &[f64] {
        &self.diffusion
    }

    pub fn species(&self) -> usize {
        self.diffusion.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    pub time: f64,
    pub measures: Vec<DiscreteMeasure>,
    /// Potentials of the main transport problem.
    pub potentials: PotentialFamily,
    pub energy: f64,
    pub fisher: Option<f64>,
    pub w2_to_equilibrium: Option<f64>,
}

/// Potentials and energy at one state.
#[derive(Clone, Debug)]
struct Evaluation {
    main: SolveReport,
    drift: Vec<Vec<f64>>,
    energy: f64,
    iterations: usize,
}

/// Time stepper holding the cached kernel and warm starts.
pub struct Flow<'a> {
    spec: &'a FlowSpec,
    solver: Solver,
    warm_main: Option<PotentialFamily>,
    warm_self: Option<PotentialFamily>,
    nu_self_energy: Option<f64>,
}

impl<'a> Flow<'a> {
    pub fn new(spec: &'a FlowSpec) -> Result<Self> {
        let solver = Solver::new(&spec.cost, SolveOptions::with_tol(spec.inner_tol))?;
        let nu_self_energy = match (spec.preset, &spec.target_nu) {
            (Preset::SinkhornDivergence, Some(nu)) => {
                let fam = MeasureFamily::new(vec![nu.clone(), nu.clone()])?;
                Some(solver.solve(&fam)?.dual_value)
            }
            _ => None,
        };
        Ok(Self {
            spec,
            solver,
            warm_main: None,
            warm_self: None,
            nu_self_energy,
        })
    }

    fn main_family(&self, measures: &[DiscreteMeasure]) -> Result<MeasureFamily> {
        match &self.spec.target_nu {
            Some(nu) => MeasureFamily::new(vec![measures[0].clone(), nu.clone()]),
            None => MeasureFamily::new(measures.to_vec()),
        }
    }

    fn evaluate(&mut self, measures: &[DiscreteMeasure]) -> Result<Evaluation> {
        let fam = self.main_family(measures)?;
        let main = self.solver.solve_from(&fam, self.warm_main.as_ref())?;
        self.warm_main = Some(main.potentials.clone());
        let mut iterations = main.iterations;
        let (drift, energy) = match self.spec.preset {
            Preset::EotOnly => (main.potentials.members().to_vec(), main.dual_value),
            Preset::MultiSpecies => {
                let h: f64 = measures.iter().map(DiscreteMeasure::entropy).sum();
                (main.potentials.members().to_vec(), main.dual_value + h)
            }
            Preset::BridgeEnergy => (vec![main.potentials[0].clone()], main.dual_value + measures[0].entropy()),
            Preset::SinkhornDivergence => {
                let selff = MeasureFamily::new(vec![measures[0].clone(), measures[0].clone()])?;
                let s = self.solver.solve_from(&selff, self.warm_self.as_ref())?;
                iterations += s.iterations;
                self.warm_self = Some(s.potentials.clone());
                let d: Vec<f64> = main.potentials[0]
                    .iter()
                    .zip(&s.potentials[0])
                    .zip(&s.potentials[1])
                    .map(|((a, b), c)| a - 0.5 * (b + c))
                    .collect();
                let e = main.dual_value - 0.5 * s.dual_value - 0.5 * self.nu_self_energy.unwrap_or(0.0);
                (vec![d], e)
            }
        };
        Ok(Evaluation {
            main,
            drift,
            energy,
            iterations,
        })
    }

    fn face_velocities(&self, drift: &[Vec<f64>]) -> Vec<Vec<f64>> {
        drift
            .iter()
            .zip(self.spec.cost.grids())
            .map(|(s, g)| {
                let h = g.spacing();
                s.windows(2).map(|w| (w[1] - w[0]) / h).collect()
            })
            .collect()
    }

    /// `0.4 / (‖v‖∞ / h + 2α / h²)` over species.
    fn stable_dt(&self, vel: &[Vec<f64>]) -> f64 {
        vel.iter()
            .zip(self.spec.cost.grids())
            .zip(&self.spec.diffusion)
            .map(|((v, g), a)| {
                let h = g.spacing();
                let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let rate = vmax / h + 2.0 * a / (h * h);
                if rate > 0.0 {
                    CFL / rate
                } else {
                    f64::INFINITY
                }
            })
            .fold(f64::INFINITY, f64::min)
    }

    fn state(&self, time: f64, measures: Vec<DiscreteMeasure>, eval: &Evaluation) -> Result<FlowState> {
        let fisher = match self.spec.preset {
            Preset::BridgeEnergy | Preset::MultiSpecies => fisher_from_drift(&measures, &eval.drift).ok(),
            _ => None,
        };
        Ok(FlowState {
            time,
            measures,
            potentials: eval.main.potentials.clone(),
            energy: eval.energy,
            fisher,
            w2_to_equilibrium: None,
        })
    }

    /// Advances `measures` by `dt` using the drift of `eval`.
    fn advance(&self, measures: &[DiscreteMeasure], vel: &[Vec<f64>], dt: f64) -> Result<(Vec<DiscreteMeasure>, usize, f64)> {
        let mut clips = 0;
        let mut defect = 0.0f64;
        let mut out = Vec::with_capacity(measures.len());
        for (s, ((m, v), alpha)) in measures.iter().zip(vel).zip(&self.spec.diffusion).enumerate() {
            let h = m.grid().spacing();
            let w = m.weights();
            let n = w.len();
            let mut flux = vec![0.0; n - 1];
            for (j, f) in flux.iter_mut().enumerate() {
                *f = face_flux(w[j], w[j + 1], v[j], *alpha, h);
            }
            let mut next = w.to_vec();
            for (j, f) in flux.iter().enumerate() {
                next[j] -= dt * f;
                next[j + 1] += dt * f;
            }
            let before: f64 = w.iter().sum();
            let after: f64 = next.iter().sum();
            defect = defect.max((after - before).abs());
            for (cell, x) in next.iter_mut().enumerate() {
                if *x < 0.0 {
                    if *x < -CLIP {
                        return Err(Error::Positivity {
                            species: s,
                            cell,
                            weight: *x,
                        });
                    }
                    *x = 0.0;
                    clips += 1;
                }
            }
            out.push(DiscreteMeasure::from_unnormalized(*m.grid(), next)?);
        }
        Ok((out, clips, defect))
    }
}

/// `B(z) = z / (e^z - 1)`.
fn bernoulli(z: f64) -> f64 {
    if z.abs() < 1e-8 {
        1.0 - 0.5 * z
    } else {
        z / z.exp_m1()
    }
}

/// Mass flux from cell `j` to cell `j + 1` with face velocity `v = ΔS / h`.
fn face_flux(wl: f64, wr: f64, v: f64, alpha: f64, h: f64) -> f64 {
    if alpha > 0.0 {
        let z = v * h / alpha;
        alpha / (h * h) * (bernoulli(z) * wl - bernoulli(-z) * wr)
    } else {
        let u = -v;
        (u.max(0.0) * wl + u.min(0.0) * wr) / h
    }
}

/// Face velocities `(S_{j+1} - S_j) / h` for each species.
pub fn velocity_field(spec: &FlowSpec, state: &FlowState) -> Result<Vec<Vec<f64>>> {
    let mut flow = Flow::new(spec)?;
    flow.warm_main = Some(state.potentials.clone());
    let eval = flow.evaluate(&state.measures)?;
    Ok(flow.face_velocities(&eval.drift))
}

/// Initial state for a run.
pub fn initial_state(spec: &FlowSpec, initial: &[DiscreteMeasure]) -> Result<FlowState> {
    check_initial(spec, initial)?;
    let mut flow = Flow::new(spec)?;
    let eval = flow.evaluate(initial)?;
    flow.state(0.0, initial.to_vec(), &eval)
}

fn check_initial(spec: &FlowSpec, initial: &[DiscreteMeasure]) -> Result<()> {
    if initial.len() != spec.species() {
        return Err(Error::FamilyMismatch {
            expected: spec.species(),
            got: initial.len(),
        });
    }
    for (m, g) in initial.iter().zip(spec.cost.grids()) {
        if m.len() != g.len() || !m.grid().same_interval(g) {
            return Err(Error::ShapeMismatch("initial measure not on the cost grid".into()));
        }
    }
    Ok(())
}

/// One explicit step; refuses steps above the stability bound.
pub fn flow_step(spec: &FlowSpec, state: &FlowState, dt: f64) -> Result<FlowState> {
    check_initial(spec, &state.measures)?;
    let mut flow = Flow::new(spec)?;
    flow.warm_main = Some(state.potentials.clone());
    let eval = flow.evaluate(&state.measures)?;
    let vel = flow.face_velocities(&eval.drift);
    let limit = flow.stable_dt(&vel);
    if !(dt > 0.0) || dt > limit {
        return Err(Error::Cfl { dt, proposed: limit });
    }
    let (next, _, _) = flow.advance(&state.measures, &vel, dt)?;
    let eval = flow.evaluate(&next)?;
    flow.state(state.time + dt, next, &eval)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub kappa: f64,
    pub r_squared: f64,
    pub t_start: f64,
    pub t_stop: f64,
    pub points: usize,
    /// Set when the fit is degenerate (too few points or no decay).
    pub flagged: bool,
}

/// Least-squares slope of `log gap` against `t` on `t ≥ burn_in`, stopping
/// at the first gap below `floor`.
pub fn fit_decay_rate(series: &[(f64, f64)], burn_in: f64, floor: f64) -> DecayFit {
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for &(t, g) in series {
        if t < burn_in {
            continue;
        }
        if !(g > floor) {
            break;
        }
        pts.push((t, g.ln()));
    }
    let k = pts.len();
    if k < 3 {
        return DecayFit {
            kappa: 0.0,
            r_squared: 0.0,
            t_start: pts.first().map_or(burn_in, |p| p.0),
            t_stop: pts.last().map_or(burn_in, |p| p.0),
            points: k,
            flagged: true,
        };
    }
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / k as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k as f64;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 0.0 };
    let kappa = -slope;
    DecayFit {
        kappa: if syy > 0.0 { kappa } else { 0.0 },
        r_squared,
        t_start: pts[0].0,
        t_stop: pts[k - 1].0,
        points: k,
        flagged: !(kappa > 0.0) || syy == 0.0,
    }
}

fn fisher_from_drift(measures: &[DiscreteMeasure], drift: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for (m, s) in measures.iter().zip(drift) {
        if !m.is_positive() {
            return Err(Error::InvalidMeasure("Fisher information needs positive weights".into()));
        }
        let h = m.grid().spacing();
        let g: Vec<f64> = m.weights().iter().zip(s).map(|(w, s)| w.ln() + s).collect();
        let d = fd_derivative(&g, h, 1)?;
        total += m.weights().iter().zip(&d).map(|(w, d)| w * d * d).sum::<f64>();
    }
    Ok(total)
}

/// `Σ_i ∫ |∇ log μ_i + ∇S_i|² dμ_i` at a state.
pub fn fisher_information(state: &FlowState, spec: &FlowSpec) -> Result<f64> {
    if !matches!(spec.preset, Preset::BridgeEnergy | Preset::MultiSpecies) {
        return Err(Error::InvalidFlowSpec("Fisher information needs a diffusive preset".into()));
    }
    let mut flow = Flow::new(spec)?;
    flow.warm_main = Some(state.potentials.clone());
    let eval = flow.evaluate(&state.measures)?;
    fisher_from_drift(&state.measures, &eval.drift)
}

/// Relative Fisher information `I(γ | e^{-c})` of the optimal coupling,
/// computed on the product grid.
pub fn coupling_fisher_information(state: &FlowState, spec: &FlowSpec) -> Result<f64> {
    if spec.preset != Preset::MultiSpecies {
        return Err(Error::InvalidFlowSpec("coupling Fisher information is defined for multi_species".into()));
    }
    let fam = MeasureFamily::new(state.measures.clone())?;
    let solver = Solver::new(&spec.cost, SolveOptions::with_tol(spec.inner_tol))?;
    let report = solver.solve_from(&fam, Some(&state.potentials))?;
    let gamma = solver.coupling(&report.potentials, &fam);
    let dims = spec.cost.dims().to_vec();
    let vol = spec.cost.cell_volume();
    let log_ratio: Vec<f64> = gamma
        .weights
        .iter()
        .zip(spec.cost.values())
        .map(|(g, c)| (g / vol).ln() + c)
        .collect();
    let st = crate::cost::strides(&dims);
    let mut total = 0.0;
    for (axis, g) in spec.cost.grids().iter().enumerate() {
        let mut line = vec![0.0; dims[axis]];
        for start in 0..log_ratio.len() {
            if (start / st[axis]) % dims[axis] != 0 {
                continue;
            }
            for (k, l) in line.iter_mut().enumerate() {
                *l = log_ratio[start + k * st[axis]];
            }
            let d = fd_derivative(&line, g.spacing(), 1)?;
            for (k, dv) in d.iter().enumerate() {
                total += gamma.weights[start + k * st[axis]] * dv * dv;
            }
        }
    }
    Ok(total)
}

/// Marginals of `e^{-c} · vol` for a normalized cost.
pub fn equilibrium_multispecies(cost: &CostTensor) -> Result<MeasureFamily> {
    let lm = cost.log_mass();
    if lm.abs() > 1e-12 {
        return Err(Error::UnnormalizedCost(lm.exp()));
    }
    let dims = cost.dims().to_vec();
    let st = crate::cost::strides(&dims);
    let vol = cost.cell_volume();
    let mut marg: Vec<Vec<f64>> = dims.iter().map(|n| vec![0.0; *n]).collect();
    for (flat, c) in cost.values().iter().enumerate() {
        let m = (-c).exp() * vol;
        for (axis, row) in marg.iter_mut().enumerate() {
            row[(flat / st[axis]) % dims[axis]] += m;
        }
    }
    let members = marg
        .into_iter()
        .zip(cost.grids())
        .map(|(w, g)| DiscreteMeasure::from_unnormalized(*g, w))
        .collect::<Result<Vec<_>>>()?;
    MeasureFamily::new(members)
}

/// `μ ∝ e^{-f}` on the nodes of `grid`.
pub fn gibbs_measure(grid: crate::measure::Grid1D, f: impl Fn(f64) -> f64) -> Result<DiscreteMeasure> {
    let vals: Vec<f64> = grid.nodes().iter().map(|x| -f(*x)).collect();
    let m = vals.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
    DiscreteMeasure::from_unnormalized(grid, vals.iter().map(|v| (v - m).exp()).collect())
}

/// Minimizer of `E(·, ν) + H` when the two-marginal cost is separable,
/// `c(x, y) = f(x) + g(y)`; then `μ* ∝ e^{-f}` whatever `ν` is.
pub fn bridge_equilibrium(cost: &CostTensor) -> Option<DiscreteMeasure> {
    let dims = cost.dims();
    if dims.len() != 2 {
        return None;
    }
    let (n, m) = (dims[0], dims[1]);
    let c = cost.values();
    let scale = 1.0 + cost.oscillation();
    for i in 0..n {
        for j in 0..m {
            if (c[i * m + j] - c[i * m] - c[j] + c[0]).abs() > 1e-12 * scale {
                return None;
            }
        }
    }
    let lo = (0..n).map(|i| c[i * m]).fold(f64::INFINITY, f64::min);
    let w = (0..n).map(|i| (lo - c[i * m]).exp()).collect();
    DiscreteMeasure::from_unnormalized(cost.grids()[0], w).ok()
}

/// `F` evaluated at given measures for the preset.
pub fn preset_energy(spec: &FlowSpec, measures: &[DiscreteMeasure]) -> Result<f64> {
    check_initial(spec, measures)?;
    let mut flow = Flow::new(spec)?;
    Ok(flow.evaluate(measures)?.energy)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSummary {
    pub preset: Preset,
    pub steps: usize,
    pub t_final: f64,
    pub initial_energy: f64,
    pub final_energy: f64,
    pub equilibrium_energy: Option<f64>,
    pub final_w2: Option<f64>,
    pub decay: Option<DecayFit>,
    /// Decay rate of `log W²` to the equilibrium on the fit window.
    pub w2_decay_rate: Option<f64>,
    pub clip_events: usize,
    pub max_mass_defect: f64,
    pub energy_increases: usize,
    pub max_energy_increase: f64,
    pub min_dt: f64,
    pub max_dt: f64,
    pub max_velocity: f64,
    pub inner_iterations: usize,
}

#[derive(Clone, Debug)]
pub struct FlowRun {
    pub states: Vec<FlowState>,
    /// `(t, F)` after every step, including `t = 0`.
    pub energies: Vec<(f64, f64)>,
    /// `(t, W)` to the equilibrium after every step when known.
    pub distances: Vec<(f64, f64)>,
    pub summary: FlowSummary,
}

/// Reference equilibrium used for distances and energy gaps.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    pub measures: Vec<DiscreteMeasure>,
    pub energy: f64,
}

fn distance(a: &[DiscreteMeasure], b: &[DiscreteMeasure]) -> Result<f64> {
    let mut total = 0.0;
    for (m, n) in a.iter().zip(b) {
        total += wasserstein2_histogram(m, n)?.powi(2);
    }
    Ok(total.sqrt())
}

/// Runs the flow from `initial` to `spec.t_end`.
pub fn run_flow(spec: &FlowSpec, initial: &[DiscreteMeasure], equilibrium: Option<&Equilibrium>) -> Result<FlowRun> {
    check_initial(spec, initial)?;
    let mut flow = Flow::new(spec)?;
    let mut measures = initial.to_vec();
    let mut eval = flow.evaluate(&measures)?;
    let mut time = 0.0;
    let mut states = Vec::new();
    let mut energies = vec![(0.0, eval.energy)];
    let mut distances = Vec::new();
    let mut summary = FlowSummary {
        preset: spec.preset,
        steps: 0,
        t_final: 0.0,
        initial_energy: eval.energy,
        final_energy: eval.energy,
        equilibrium_energy: equilibrium.map(|e| e.energy),
        final_w2: None,
        decay: None,
        w2_decay_rate: None,
        clip_events: 0,
        max_mass_defect: 0.0,
        energy_increases: 0,
        max_energy_increase: 0.0,
        min_dt: f64::INFINITY,
        max_dt: 0.0,
        max_velocity: 0.0,
        inner_iterations: eval.iterations,
    };
    let record = |flow: &Flow, time: f64, measures: &[DiscreteMeasure], eval: &Evaluation| -> Result<FlowState> {
        let mut s = flow.state(time, measures.to_vec(), eval)?;
        if let Some(eq) = equilibrium {
            s.w2_to_equilibrium = Some(distance(measures, &eq.measures)?);
        }
        Ok(s)
    };
    states.push(record(&flow, time, &measures, &eval)?);
    if let Some(eq) = equilibrium {
        distances.push((0.0, distance(&measures, &eq.measures)?));
    }
    let eps = 1e-12 * spec.t_end.max(1.0);
    while time < spec.t_end - eps {
        let vel = flow.face_velocities(&eval.drift);
        let limit = flow.stable_dt(&vel);
        let mut dt = match spec.dt_policy {
            DtPolicy::Fixed { dt } => {
                if dt > limit {
                    return Err(Error::Cfl { dt, proposed: limit });
                }
                dt
            }
            DtPolicy::Adaptive { max_dt } => max_dt.map_or(limit, |m| m.min(limit)),
        };
        if !dt.is_finite() {
            dt = spec.t_end - time;
        }
        dt = dt.min(spec.t_end - time);
        let vmax = vel.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        summary.max_velocity = summary.max_velocity.max(vmax);
        let (next, clips, defect) = flow.advance(&measures, &vel, dt)?;
        let next_eval = flow.evaluate(&next)?;
        let increase = next_eval.energy - eval.energy;
        let slack = 10.0 * dt * dt + spec.inner_tol;
        if increase > slack {
            summary.energy_increases += 1;
            if spec.abort_on_energy_increase {
                return Err(Error::InvalidFlowSpec(format!(
                    "energy increased by {increase:e} (slack {slack:e}) at t = {}",
                    time + dt
                )));
            }
        }
        summary.max_energy_increase = summary.max_energy_increase.max(increase);
        summary.clip_events += clips;
        summary.max_mass_defect = summary.max_mass_defect.max(defect);
        summary.min_dt = summary.min_dt.min(dt);
        summary.max_dt = summary.max_dt.max(dt);
        summary.inner_iterations += next_eval.iterations;
        summary.steps += 1;
        time += dt;
        measures = next;
        eval = next_eval;
        energies.push((time, eval.energy));
        if let Some(eq) = equilibrium {
            distances.push((time, distance(&measures, &eq.measures)?));
        }
        let last = time >= spec.t_end - eps;
        if last || summary.steps % spec.record_every.max(1) == 0 {
            states.push(record(&flow, time, &measures, &eval)?);
        }
    }
    if states.last().map(|s| s.time) != Some(time) {
        states.push(record(&flow, time, &measures, &eval)?);
    }
    summary.t_final = time;
    summary.final_energy = eval.energy;
    if summary.steps == 0 {
        summary.min_dt = 0.0;
    }
    if let Some(eq) = equilibrium {
        summary.final_w2 = distances.last().map(|d| d.1);
        let gaps: Vec<(f64, f64)> = energies.iter().map(|(t, f)| (*t, f - eq.energy)).collect();
        let floor = (100.0 * spec.inner_tol).max(1e-13);
        let fit = fit_decay_rate(&gaps, 0.2 * spec.t_end, floor);
        let w2: Vec<(f64, f64)> = distances
            .iter()
            .filter(|(t, _)| *t >= fit.t_start && *t <= fit.t_stop)
            .map(|(t, d)| (*t, d * d))
            .collect();
        let wfit = fit_decay_rate(&w2, fit.t_start, 0.0);
        summary.w2_decay_rate = (!wfit.flagged).then_some(wfit.kappa);
        summary.decay = Some(fit);
    }
    Ok(FlowRun {
        states,
        energies,
        distances,
        summary,
    })
}
