//! Experiment configuration and the command driver behind the binary.
//!
//! A run reads a versioned JSON config, writes its artifacts into the output
//! directory, and finishes with `manifest.json` (resolved config plus SHA-256
//! of every artifact) and `failures.json` (assertions that exceeded their
//! ceilings). Outputs carry no timestamps, so equal inputs give equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    dtg, energy_derivative, finite_difference_derivative, lipschitz_ratio_ck, potential_time_derivative, probe_path,
    semiconvexity_modulus,
};
use crate::cost::{build_cost, normalize_cost, CostDescriptor, CostTensor};
use crate::error::{Error, Result};
use crate::flow::{
    bridge_equilibrium, equilibrium_multispecies, preset_energy, run_flow, DtPolicy, Equilibrium, FlowSpec, Preset,
};
use crate::io;
use crate::measure::{DiscreteMeasure, Grid1D, MeasureFamily, PlanFamily};
use crate::potential::{density_fields, quotient_ck_norm, quotient_sup_norm};
use crate::solver::{SolveOptions, Solver};

pub const SCHEMA_VERSION: u32 = 1;

/// Per-cell floor mass of randomized marginals.
const RANDOM_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Solve,
    Stability,
    Flow,
    Report,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Stability => "stability",
            Command::Flow => "flow",
            Command::Report => "report",
        }
    }
}

fn zero() -> f64 {
    0.0
}

fn half() -> f64 {
    0.5
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MarginalSpec {
    Uniform,
    GaussianBump {
        center: f64,
        width: f64,
        #[serde(default = "zero")]
        floor: f64,
    },
    TwoBump {
        centers: [f64; 2],
        widths: [f64; 2],
        /// Mass fraction of the first bump.
        #[serde(default = "half")]
        mix: f64,
        #[serde(default = "zero")]
        floor: f64,
    },
    Csv {
        path: PathBuf,
    },
    /// Seeded mixture of Gaussian bumps with a floor of `1e-6` per cell.
    RandomBumps {
        #[serde(default = "three")]
        bumps: usize,
    },
}

fn three() -> usize {
    3
}

impl MarginalSpec {
    fn is_random(&self) -> bool {
        matches!(self, MarginalSpec::RandomBumps { .. })
    }

    /// Builds the measure on `grid`; `rng` must be present for random specs.
    pub fn realize(&self, grid: Grid1D, base: &Path, rng: Option<&mut ChaCha8Rng>) -> Result<DiscreteMeasure> {
        let bump = |x: f64, c: f64, w: f64| (-0.5 * ((x - c) / w).powi(2)).exp();
        match self {
            MarginalSpec::Uniform => Ok(DiscreteMeasure::uniform(grid)),
            MarginalSpec::GaussianBump { center, width, floor } => {
                with_floor(grid, |x| bump(x, *center, *width), *floor)
            }
            MarginalSpec::TwoBump {
                centers,
                widths,
                mix,
                floor,
            } => {
                let a = DiscreteMeasure::from_density(grid, |x| bump(x, centers[0], widths[0]))?;
                let b = DiscreteMeasure::from_density(grid, |x| bump(x, centers[1], widths[1]))?;
                let w: Vec<f64> = a.weights().iter().zip(b.weights()).map(|(p, q)| mix * p + (1.0 - mix) * q).collect();
                floored(grid, w, *floor)
            }
            MarginalSpec::Csv { path } => {
                let m = io::read_measure_csv(&base.join(path))?;
                if m.len() != grid.len() || !m.grid().same_interval(&grid) {
                    return Err(Error::ShapeMismatch(format!("{} is not on the configured grid", path.display())));
                }
                Ok(m)
            }
            MarginalSpec::RandomBumps { bumps } => {
                let rng = rng.ok_or_else(|| Error::InvalidArgument("random marginals need a seed".into()))?;
                Ok(random_bumps(grid, *bumps, rng)?)
            }
        }
    }
}

fn floored(grid: Grid1D, w: Vec<f64>, floor: f64) -> Result<DiscreteMeasure> {
    let m = DiscreteMeasure::from_unnormalized(grid, w)?;
    if floor <= 0.0 {
        return Ok(m);
    }
    let n = grid.len() as f64;
    DiscreteMeasure::from_unnormalized(grid, m.weights().iter().map(|v| (1.0 - n * floor) * v + floor).collect())
}

fn with_floor(grid: Grid1D, density: impl Fn(f64) -> f64, floor: f64) -> Result<DiscreteMeasure> {
    floored(grid, DiscreteMeasure::from_density(grid, density)?.weights().to_vec(), floor)
}

/// Mixture of `bumps` Gaussians with random centers, widths and weights.
pub fn random_bumps(grid: Grid1D, bumps: usize, rng: &mut ChaCha8Rng) -> Result<DiscreteMeasure> {
    if bumps == 0 {
        return Err(Error::InvalidArgument("random_bumps needs at least one bump".into()));
    }
    let (lo, hi) = (grid.lo(), grid.hi());
    let len = hi - lo;
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            let c = rng.gen_range(lo + 0.15 * len..hi - 0.15 * len);
            let w = rng.gen_range(0.05 * len..0.2 * len);
            let a = rng.gen_range(0.2..1.0);
            (c, w, a)
        })
        .collect();
    let w: Vec<f64> = grid
        .nodes()
        .iter()
        .map(|x| params.iter().map(|(c, w, a)| a * (-0.5 * ((x - c) / w).powi(2)).exp()).sum())
        .collect();
    floored(grid, w, RANDOM_FLOOR)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "default_solver_tol")]
    pub solver: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Inner solves of path probes and flows.
    #[serde(default = "default_inner_tol")]
    pub inner: f64,
}

fn default_solver_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    10_000
}
fn default_inner_tol() -> f64 {
    1e-9
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            solver: default_solver_tol(),
            max_iter: default_max_iter(),
            inner: default_inner_tol(),
        }
    }
}

/// Ceilings for empirical-constant assertions; `None` disables a check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ceilings {
    #[serde(default = "some_spread")]
    pub lipschitz_spread: Option<f64>,
    #[serde(default)]
    pub lipschitz_ratio: Option<f64>,
    #[serde(default)]
    pub dtg_ratio: Option<f64>,
    /// Defaults to `max(1e-4, 100 · inner)`.
    #[serde(default)]
    pub ift_error: Option<f64>,
    #[serde(default)]
    pub semiconvexity_modulus: Option<f64>,
    #[serde(default = "some_mass")]
    pub mass_defect: Option<f64>,
    #[serde(default = "some_r2")]
    pub min_r_squared: Option<f64>,
    #[serde(default)]
    pub final_w2: Option<f64>,
}

fn some_spread() -> Option<f64> {
    Some(0.2)
}
fn some_mass() -> Option<f64> {
    Some(1e-13)
}
fn some_r2() -> Option<f64> {
    Some(0.99)
}

impl Default for Ceilings {
    fn default() -> Self {
        Self {
            lipschitz_spread: some_spread(),
            lipschitz_ratio: None,
            dtg_ratio: None,
            ift_error: None,
            semiconvexity_modulus: None,
            mass_defect: some_mass(),
            min_r_squared: some_r2(),
            final_w2: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    /// Paths between seeded random endpoint families.
    #[serde(default)]
    pub random_paths: usize,
    /// Explicit path from `marginals` to these targets.
    #[serde(default)]
    pub targets: Vec<MarginalSpec>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_steps")]
    pub steps: Vec<f64>,
    #[serde(default = "one")]
    pub k: usize,
    #[serde(default = "default_times")]
    pub derivative_times: Vec<f64>,
    #[serde(default = "default_fd")]
    pub fd_step: f64,
}

fn default_samples() -> usize {
    21
}
fn default_steps() -> Vec<f64> {
    vec![0.2, 0.1, 0.05]
}
fn one() -> usize {
    1
}
fn default_times() -> Vec<f64> {
    vec![0.25, 0.5, 0.75]
}
fn default_fd() -> f64 {
    1e-3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub preset: Preset,
    pub t_end: f64,
    #[serde(default)]
    pub dt: DtPolicy,
    /// Fixed second marginal for `sinkhorn_divergence` and `bridge_energy`.
    #[serde(default)]
    pub target: Option<MarginalSpec>,
    #[serde(default = "default_record")]
    pub record_every: usize,
}

fn default_record() -> usize {
    100
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportConfig {
    pub inputs: Vec<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub command: Option<Command>,
    #[serde(default)]
    pub cost: Option<CostDescriptor>,
    /// Tabulated cost file, one index column per axis plus `value`.
    #[serde(default)]
    pub cost_csv: Option<PathBuf>,
    #[serde(default)]
    pub normalize_cost: bool,
    #[serde(default)]
    pub grids: Vec<Grid1D>,
    #[serde(default)]
    pub marginals: Vec<MarginalSpec>,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub ceilings: Ceilings,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub stability: Option<StabilityConfig>,
    #[serde(default)]
    pub flow: Option<FlowConfig>,
    #[serde(default)]
    pub report: Option<ReportConfig>,
}

fn field(path: &str, message: impl Into<String>) -> Error {
    Error::Config {
        path: path.into(),
        message: message.into(),
    }
}

impl ExperimentConfig {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            field(&path, e.into_inner().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    fn uses_randomness(&self) -> bool {
        self.marginals.iter().any(MarginalSpec::is_random)
            || self
                .stability
                .as_ref()
                .is_some_and(|s| s.random_paths > 0 || s.targets.iter().any(MarginalSpec::is_random))
            || self
                .flow
                .as_ref()
                .and_then(|f| f.target.as_ref())
                .is_some_and(MarginalSpec::is_random)
    }

    pub fn validate(&self, command: Command) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field(
                "schema_version",
                format!("expected {SCHEMA_VERSION}, got {}", self.schema_version),
            ));
        }
        if let Some(c) = self.command {
            if c != command {
                return Err(field("command", format!("config is for `{}`", c.name())));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [("tolerances.solver", t.solver), ("tolerances.inner", t.inner)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(field(name, format!("must be positive, got {v}")));
            }
        }
        if t.max_iter == 0 {
            return Err(field("tolerances.max_iter", "must be positive"));
        }
        if self.uses_randomness() && self.seed.is_none() {
            return Err(field("seed", "randomized marginals need a seed"));
        }
        if command == Command::Report {
            return Ok(());
        }
        match (&self.cost, &self.cost_csv) {
            (None, None) => return Err(field("cost", "missing cost descriptor")),
            (Some(_), Some(_)) => return Err(field("cost_csv", "give either cost or cost_csv")),
            _ => {}
        }
        if self.grids.is_empty() {
            return Err(field("grids", "no grids"));
        }
        let species = match (command, &self.flow) {
            (Command::Flow, Some(f)) => f.preset.species(self.grids.len()),
            (Command::Flow, None) => return Err(field("flow", "missing flow section")),
            _ => self.grids.len(),
        };
        if self.marginals.len() != species {
            return Err(field(
                "marginals",
                format!("{} marginals for {species} expected", self.marginals.len()),
            ));
        }
        if command == Command::Stability {
            let s = self
                .stability
                .as_ref()
                .ok_or_else(|| field("stability", "missing stability section"))?;
            if s.samples < 3 {
                return Err(field("stability.samples", "need at least 3 samples"));
            }
            if !s.targets.is_empty() && s.targets.len() != self.grids.len() {
                return Err(field("stability.targets", "one target per grid"));
            }
            if s.targets.is_empty() && s.random_paths == 0 {
                return Err(field("stability", "no paths requested"));
            }
            if !(s.fd_step > 0.0) {
                return Err(field("stability.fd_step", "must be positive"));
            }
        }
        if let (Command::Flow, Some(f)) = (command, &self.flow) {
            if !(f.t_end >= 0.0 && f.t_end.is_finite()) {
                return Err(field("flow.t_end", "must be finite and nonnegative"));
            }
            if f.record_every == 0 {
                return Err(field("flow.record_every", "must be positive"));
            }
        }
        Ok(())
    }

    fn build_cost(&self, base: &Path) -> Result<CostTensor> {
        let desc = match (&self.cost, &self.cost_csv) {
            (Some(d), _) => d.clone(),
            (None, Some(p)) => {
                let dims: Vec<usize> = self.grids.iter().map(Grid1D::len).collect();
                CostDescriptor::Tabulated {
                    values: io::read_tabulated_cost(&base.join(p), &dims)?,
                }
            }
            (None, None) => return Err(field("cost", "missing cost descriptor")),
        };
        let c = build_cost(&desc, &self.grids)?;
        Ok(if self.normalize_cost { normalize_cost(&c) } else { c })
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub tol: Option<f64>,
}

/// An assertion that exceeded its ceiling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub invariant: String,
    pub measured: f64,
    pub ceiling: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: Command,
    pub config: Option<ExperimentConfig>,
    pub artifacts: Vec<Artifact>,
}

/// Result of a run that got as far as writing artifacts.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub failures: Vec<Failure>,
}

struct Run {
    out: PathBuf,
    artifacts: Vec<PathBuf>,
    failures: Vec<Failure>,
    summary: Summary,
}

impl Run {
    fn file(&mut self, name: &str) -> PathBuf {
        let p = self.out.join(name);
        self.artifacts.push(p.clone());
        p
    }

    /// Records `measured ≤ ceiling`.
    fn check_le(&mut self, invariant: &str, measured: f64, ceiling: Option<f64>) {
        if let Some(c) = ceiling {
            if !(measured <= c) {
                self.failures.push(Failure {
                    invariant: invariant.into(),
                    measured,
                    ceiling: c,
                });
            }
        }
    }

    fn check_ge(&mut self, invariant: &str, measured: f64, floor: Option<f64>) {
        if let Some(c) = floor {
            if !(measured >= c) {
                self.failures.push(Failure {
                    invariant: invariant.into(),
                    measured,
                    ceiling: c,
                });
            }
        }
    }

    fn value(&mut self, key: impl Into<String>, v: f64) {
        self.summary.values.insert(key.into(), v);
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

/// Runs `command`; the config may be omitted only for `report`.
pub fn run(command: Command, config_path: Option<&Path>, overrides: &Overrides) -> Result<Outcome> {
    let mut config = match config_path {
        Some(p) => Some(ExperimentConfig::load(p)?),
        None if command == Command::Report => None,
        None => return Err(field("--config", "a config file is required")),
    };
    let base = config_path
        .and_then(Path::parent)
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    if let Some(c) = config.as_mut() {
        if let Some(s) = overrides.seed {
            c.seed = Some(s);
        }
        if let Some(t) = overrides.tol {
            c.tolerances.solver = t;
            c.tolerances.inner = t;
        }
        c.validate(command)?;
    }
    let out = overrides.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out)?;
    let mut run = Run {
        out: out.clone(),
        artifacts: Vec::new(),
        failures: Vec::new(),
        summary: Summary {
            command: command.name().into(),
            values: BTreeMap::new(),
        },
    };
    match (command, config.as_ref()) {
        (Command::Solve, Some(c)) => run_solve(c, &base, &mut run)?,
        (Command::Stability, Some(c)) => run_stability(c, &base, &mut run)?,
        (Command::Flow, Some(c)) => run_flow_command(c, &base, &mut run)?,
        (Command::Report, c) => run_report(c, &base, &mut run)?,
        _ => unreachable!("config presence checked above"),
    }
    if command != Command::Report {
        let p = run.file("summary.json");
        io::write_json(&p, &run.summary)?;
    }
    let p = run.file("failures.json");
    io::write_json(&p, &run.failures)?;
    let mut artifacts = run
        .artifacts
        .iter()
        .map(|p| {
            Ok(Artifact {
                file: p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    artifacts.sort_by(|a, b| a.file.cmp(&b.file));
    io::write_json(
        &out.join("manifest.json"),
        &Manifest {
            schema_version: SCHEMA_VERSION,
            command,
            config,
            artifacts,
        },
    )?;
    Ok(Outcome {
        out_dir: out,
        failures: run.failures,
    })
}

fn rng_for(config: &ExperimentConfig) -> Option<ChaCha8Rng> {
    config.seed.map(ChaCha8Rng::seed_from_u64)
}

fn realize_all(specs: &[MarginalSpec], grids: &[Grid1D], base: &Path, rng: &mut Option<ChaCha8Rng>) -> Result<Vec<DiscreteMeasure>> {
    specs
        .iter()
        .zip(grids)
        .map(|(s, g)| s.realize(*g, base, rng.as_mut()))
        .collect()
}

fn run_solve(config: &ExperimentConfig, base: &Path, run: &mut Run) -> Result<()> {
    let cost = config.build_cost(base)?;
    let mut rng = rng_for(config);
    let mu = MeasureFamily::new(realize_all(&config.marginals, &config.grids, base, &mut rng)?)?;
    let tol = config.tolerances.solver;
    let solver = Solver::new(
        &cost,
        SolveOptions {
            tol,
            max_iter: config.tolerances.max_iter,
        },
    )?;
    let report = solver.solve(&mu)?;
    let fields = density_fields(&report.potentials, &mu, &cost)?;
    let p = run.file("solve_report.json");
    io::write_json(&p, &report)?;
    let (pc, ps) = (run.file("potentials.csv"), run.file("potentials.json"));
    io::write_potentials(&pc, &ps, &report.potentials, cost.grids())?;
    if cost.n_marginals() == 2 {
        let p = run.file("coupling.csv");
        io::write_coupling_csv(&p, &solver.coupling(&report.potentials, &mu), cost.grids())?;
    }
    for (i, m) in mu.members().iter().enumerate() {
        let paths = io::save_measure(&run.out, &format!("marginal_{i}"), m)?;
        run.artifacts.extend(paths);
    }
    run.value("iterations", report.iterations as f64);
    run.value("residual", report.final_residual);
    run.value("primal_value", report.primal_value);
    run.value("dual_value", report.dual_value);
    run.value("marginal_error", report.marginal_error);
    run.value("residual_rate", report.residual_rate);
    run.value("density_bound_violations", fields.bound_violations() as f64);
    run.check_le("solver.residual", report.final_residual, Some(tol));
    run.check_le("density_bounds.violations", fields.bound_violations() as f64, Some(0.0));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct PathReport {
    plan_cost: f64,
    max_residual: f64,
    lipschitz_max: f64,
    lipschitz_median: f64,
    lipschitz_spread: Option<f64>,
    degenerate: bool,
    per_step: Vec<crate::analysis::StepRatio>,
    semiconvexity_modulus: f64,
    chords_hold: bool,
    ift_error: f64,
    dtg_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct StabilityReport {
    k: usize,
    steps: Vec<f64>,
    paths: Vec<PathReport>,
    ceilings: Ceilings,
}

fn run_stability(config: &ExperimentConfig, base: &Path, run: &mut Run) -> Result<()> {
    let s = config.stability.as_ref().expect("validated");
    let cost = config.build_cost(base)?;
    let grids = config.grids.clone();
    let mut rng = rng_for(config);
    let mut endpoints = Vec::new();
    if !s.targets.is_empty() {
        let a = MeasureFamily::new(realize_all(&config.marginals, &grids, base, &mut rng)?)?;
        let b = MeasureFamily::new(realize_all(&s.targets, &grids, base, &mut rng)?)?;
        endpoints.push((a, b));
    }
    for _ in 0..s.random_paths {
        let r = rng.as_mut().expect("validated");
        let a = grids.iter().map(|g| random_bumps(*g, 3, r)).collect::<Result<Vec<_>>>()?;
        let b = grids.iter().map(|g| random_bumps(*g, 3, r)).collect::<Result<Vec<_>>>()?;
        endpoints.push((MeasureFamily::new(a)?, MeasureFamily::new(b)?));
    }
    let tol = config.tolerances.inner;
    let samples: Vec<f64> = (0..s.samples).map(|j| j as f64 / (s.samples - 1) as f64).collect();
    let ift_ceiling = config.ceilings.ift_error.unwrap_or((100.0 * tol).max(1e-4));
    let mut curves = csv::Writer::from_path(run.file("stability_curves.csv"))?;
    curves.write_record(["path", "t", "energy", "energy_derivative", "potential_norm", "residual"])?;
    let mut reports = Vec::new();
    for (idx, (a, b)) in endpoints.iter().enumerate() {
        let plans = PlanFamily::optimal(a, b)?;
        let probe = probe_path(&cost, &plans, &samples, tol)?;
        let lip = lipschitz_ratio_ck(&probe, s.k)?;
        let spread = lip.spread(&s.steps);
        let semi = semiconvexity_modulus(&probe)?;
        let mut ift_error = 0.0f64;
        for &t in &s.derivative_times {
            let exact = potential_time_derivative(&probe, t)?;
            let fd = finite_difference_derivative(&probe, t, s.fd_step)?;
            let diff: Vec<Vec<f64>> = exact
                .nodes
                .iter()
                .zip(&fd)
                .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p - q).collect())
                .collect();
            ift_error = ift_error.max(quotient_sup_norm(&diff));
        }
        let root = probe.plan_cost.sqrt();
        let mut dtg_ratio = 0.0f64;
        for (j, &t) in samples.iter().enumerate() {
            let phi = &probe.potentials_at_t[j];
            let g = dtg(phi, &plans, t, &cost)?;
            let sup = g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            if root > 0.0 {
                dtg_ratio = dtg_ratio.max(sup / root);
            }
            let de = energy_derivative(&probe, t)?;
            let norm = quotient_ck_norm(&phi.sub(&probe.potentials_at_t[0])?, &grids, s.k)?;
            curves.write_record([
                idx.to_string(),
                format!("{t:?}"),
                format!("{:?}", probe.energies_at_t[j]),
                format!("{de:?}"),
                format!("{norm:?}"),
                format!("{:?}", probe.residuals[j]),
            ])?;
        }
        let max_residual = probe.residuals.iter().fold(0.0f64, |m, r| m.max(*r));
        let tag = format!("path{idx}");
        if let Some(sp) = spread {
            run.check_le(&format!("{tag}.lipschitz_spread"), sp, config.ceilings.lipschitz_spread);
        }
        run.check_le(&format!("{tag}.lipschitz_ratio"), lip.max, config.ceilings.lipschitz_ratio);
        run.check_le(&format!("{tag}.ift_error"), ift_error, Some(ift_ceiling));
        run.check_le(&format!("{tag}.dtg_ratio"), dtg_ratio, config.ceilings.dtg_ratio);
        run.check_le(
            &format!("{tag}.semiconvexity_modulus"),
            semi.modulus,
            config.ceilings.semiconvexity_modulus,
        );
        if !semi.chords_hold() {
            run.failures.push(Failure {
                invariant: format!("{tag}.semiconvexity_chords"),
                measured: semi.chord_slack,
                ceiling: 0.0,
            });
        }
        run.check_le(&format!("{tag}.residual"), max_residual, Some(tol));
        run.value(format!("{tag}.lipschitz_max"), lip.max);
        if let Some(sp) = spread {
            run.value(format!("{tag}.lipschitz_spread"), sp);
        }
        run.value(format!("{tag}.semiconvexity_modulus"), semi.modulus);
        run.value(format!("{tag}.ift_error"), ift_error);
        run.value(format!("{tag}.dtg_ratio"), dtg_ratio);
        run.value(format!("{tag}.plan_cost"), probe.plan_cost);
        reports.push(PathReport {
            plan_cost: probe.plan_cost,
            max_residual,
            lipschitz_max: lip.max,
            lipschitz_median: lip.median,
            lipschitz_spread: spread,
            degenerate: lip.degenerate,
            per_step: lip.per_step,
            semiconvexity_modulus: semi.modulus,
            chords_hold: semi.chords_hold(),
            ift_error,
            dtg_ratio,
        });
    }
    curves.flush()?;
    let p = run.file("stability.json");
    io::write_json(
        &p,
        &StabilityReport {
            k: s.k,
            steps: s.steps.clone(),
            paths: reports,
            ceilings: config.ceilings.clone(),
        },
    )?;
    Ok(())
}

fn run_flow_command(config: &ExperimentConfig, base: &Path, run: &mut Run) -> Result<()> {
    let f = config.flow.as_ref().expect("validated");
    let cost = config.build_cost(base)?;
    let mut rng = rng_for(config);
    let initial = realize_all(&config.marginals, &config.grids, base, &mut rng)?;
    let target = match &f.target {
        Some(t) => Some(t.realize(config.grids[config.grids.len() - 1], base, rng.as_mut())?),
        None => None,
    };
    let mut spec = FlowSpec::new(f.preset, cost, target.clone(), f.t_end).map_err(|e| field("flow", e.to_string()))?;
    spec.dt_policy = f.dt;
    spec.inner_tol = config.tolerances.inner;
    spec.record_every = f.record_every;
    spec.abort_on_energy_increase = false;
    let equilibrium = match f.preset {
        Preset::MultiSpecies => {
            let m = equilibrium_multispecies(&spec.cost)?.into_members();
            let e = preset_energy(&spec, &m)?;
            Some(Equilibrium { measures: m, energy: e })
        }
        Preset::BridgeEnergy => match bridge_equilibrium(&spec.cost) {
            Some(m) => {
                let e = preset_energy(&spec, std::slice::from_ref(&m))?;
                Some(Equilibrium { measures: vec![m], energy: e })
            }
            None => None,
        },
        Preset::SinkhornDivergence => target.map(|nu| Equilibrium {
            measures: vec![nu],
            energy: 0.0,
        }),
        Preset::EotOnly => None,
    };
    let out = run_flow(&spec, &initial, equilibrium.as_ref())?;
    let mut traj = csv::Writer::from_path(run.file("trajectory.csv"))?;
    let mut header = vec!["t".to_string(), "energy".into(), "fisher".into(), "w2_to_equilibrium".into()];
    for i in 0..spec.species() {
        header.push(format!("mean_{i}"));
        header.push(format!("second_moment_{i}"));
    }
    traj.write_record(&header)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
    for s in &out.states {
        let mut rec = vec![
            format!("{:?}", s.time),
            format!("{:?}", s.energy),
            opt(s.fisher),
            opt(s.w2_to_equilibrium),
        ];
        for m in &s.measures {
            rec.push(format!("{:?}", m.mean()));
            rec.push(format!("{:?}", m.second_moment()));
        }
        traj.write_record(&rec)?;
    }
    traj.flush()?;
    let last = out.states.last().expect("at least one state");
    for (i, m) in last.measures.iter().enumerate() {
        let paths = io::save_measure(&run.out, &format!("final_{i}"), m)?;
        run.artifacts.extend(paths);
    }
    let p = run.file("flow_summary.json");
    io::write_json(&p, &out.summary)?;
    let sm = &out.summary;
    run.value("steps", sm.steps as f64);
    run.value("final_energy", sm.final_energy);
    run.value("clip_events", sm.clip_events as f64);
    run.value("max_mass_defect", sm.max_mass_defect);
    run.value("energy_increases", sm.energy_increases as f64);
    run.value("min_dt", sm.min_dt);
    run.value("max_dt", sm.max_dt);
    if let Some(w) = sm.final_w2 {
        run.value("final_w2", w);
        run.check_le("flow.final_w2", w, config.ceilings.final_w2);
    }
    run.check_le("flow.mass_defect", sm.max_mass_defect, config.ceilings.mass_defect);
    run.check_le("flow.energy_increases", sm.energy_increases as f64, Some(0.0));
    if let (Some(d), Preset::MultiSpecies | Preset::BridgeEnergy) = (&sm.decay, f.preset) {
        run.value("kappa", d.kappa);
        run.value("r_squared", d.r_squared);
        if d.flagged || !(d.kappa > 0.0) {
            run.failures.push(Failure {
                invariant: "flow.kappa_positive".into(),
                measured: d.kappa,
                ceiling: 0.0,
            });
        }
        run.check_ge("flow.r_squared", d.r_squared, config.ceilings.min_r_squared);
    }
    Ok(())
}

/// Aggregates `summary.json` files into one `report.csv`.
fn run_report(config: Option<&ExperimentConfig>, base: &Path, run: &mut Run) -> Result<()> {
    let inputs: Vec<PathBuf> = match config.and_then(|c| c.report.as_ref()) {
        Some(r) => r.inputs.iter().map(|p| base.join(p)).collect(),
        None => {
            let mut dirs: Vec<PathBuf> = fs::read_dir(&run.out)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("summary.json").is_file())
                .collect();
            dirs.sort();
            dirs
        }
    };
    let mut rows = Vec::new();
    let mut keys = std::collections::BTreeSet::new();
    for dir in &inputs {
        let s: Summary = io::read_json(&dir.join("summary.json"))?;
        keys.extend(s.values.keys().cloned());
        let name = dir.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default();
        rows.push((name, s));
    }
    let mut w = csv::Writer::from_path(run.file("report.csv"))?;
    let mut header = vec!["run".to_string(), "command".to_string()];
    header.extend(keys.iter().cloned());
    w.write_record(&header)?;
    for (name, s) in &rows {
        let mut rec = vec![name.clone(), s.command.clone()];
        rec.extend(keys.iter().map(|k| s.values.get(k).map(|v| format!("{v:?}")).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    run.summary.values.insert("runs".into(), rows.len() as f64);
    Ok(())
}
