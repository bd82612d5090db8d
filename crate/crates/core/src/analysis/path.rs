//! Potentials and energies along displacement paths.
//!
//! Each path sample solves the Schrödinger system on the displaced atoms
//! `(1 - t) x + t y` of the plans (no binning), so `t ↦ μ^t` is smooth and
//! finite differences in `t` are consistent. Potentials are then extended to
//! the grid nodes.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::linearize::{time_derivative, TimeDerivative};
use crate::cost::CostTensor;
use crate::error::{Error, Result};
use crate::measure::{optimal_plan_1d, plan_cost, MeasureFamily, PlanFamily};
use crate::potential::{quotient_ck_norm, PotentialFamily};
use crate::solver::{solve_atoms, AtomicSolution, SolveOptions};

#[derive(Clone, Debug)]
pub struct PathProbe {
    pub plans: PlanFamily,
    pub t_samples: Vec<f64>,
    /// Potentials extended to the cost grid nodes.
    pub potentials_at_t: Vec<PotentialFamily>,
    pub energies_at_t: Vec<f64>,
    pub residuals: Vec<f64>,
    pub plan_cost: f64,
    pub tol: f64,
    cost: CostTensor,
    solutions: Vec<AtomicSolution>,
}

fn check_plans(cost: &CostTensor, plans: &PlanFamily) -> Result<()> {
    if plans.len() != cost.n_marginals() {
        return Err(Error::FamilyMismatch {
            expected: cost.n_marginals(),
            got: plans.len(),
        });
    }
    for (g, p) in cost.grids().iter().zip(plans.members()) {
        g.check_interval(p.source().grid())?;
    }
    Ok(())
}

/// Solves along the path at each sample, warm-starting from the previous one.
pub fn probe_path(cost: &CostTensor, plans: &PlanFamily, t_samples: &[f64], tol: f64) -> Result<PathProbe> {
    check_plans(cost, plans)?;
    if t_samples.is_empty() {
        return Err(Error::InvalidArgument("no t samples".into()));
    }
    if t_samples.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("t samples must be strictly increasing".into()));
    }
    if let Some(t) = t_samples.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::InvalidTime(*t));
    }
    let opts = SolveOptions::with_tol(tol);
    let mut solutions: Vec<AtomicSolution> = Vec::with_capacity(t_samples.len());
    for &t in t_samples {
        let atoms = plans.displaced_atoms(t)?;
        let init = solutions.last().map(|s| s.phi.as_slice());
        let sol = solve_atoms(cost, &atoms, init, &opts).map_err(|e| Error::ProbeFailed { t, source: Box::new(e) })?;
        solutions.push(sol);
    }
    Ok(PathProbe {
        plans: plans.clone(),
        t_samples: t_samples.to_vec(),
        potentials_at_t: solutions.iter().map(|s| s.on_grids(cost)).collect(),
        energies_at_t: solutions.iter().map(|s| s.energy).collect(),
        residuals: solutions.iter().map(|s| s.residual).collect(),
        plan_cost: plan_cost(plans),
        tol,
        cost: cost.clone(),
        solutions,
    })
}

impl PathProbe {
    pub fn cost(&self) -> &CostTensor {
        &self.cost
    }

    pub fn solution(&self, idx: usize) -> &AtomicSolution {
        &self.solutions[idx]
    }

    fn sample_index(&self, t: f64) -> Option<usize> {
        self.t_samples.iter().position(|s| *s == t)
    }

    /// Solution at an arbitrary `t`, warm-started from the nearest sample.
    pub fn solve_at(&self, t: f64) -> Result<AtomicSolution> {
        if let Some(k) = self.sample_index(t) {
            return Ok(self.solutions[k].clone());
        }
        let atoms = self.plans.displaced_atoms(t)?;
        let nearest = self
            .t_samples
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
            .map(|(k, _)| k)
            .unwrap();
        solve_atoms(&self.cost, &atoms, Some(&self.solutions[nearest].phi), &SolveOptions::with_tol(self.tol))
            .map_err(|e| Error::ProbeFailed { t, source: Box::new(e) })
    }

    /// Grid potentials at an arbitrary `t`.
    pub fn potentials_at(&self, t: f64) -> Result<PotentialFamily> {
        Ok(self.solve_at(t)?.on_grids(&self.cost))
    }

    pub fn energy_at(&self, t: f64) -> Result<f64> {
        Ok(self.solve_at(t)?.energy)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRatio {
    pub step: f64,
    pub max: f64,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRatio {
    pub max: f64,
    pub median: f64,
    pub per_step: Vec<StepRatio>,
    /// Largest quotient norm of a potential difference; meaningful when the
    /// plan cost vanishes and every ratio is guarded to zero.
    pub max_numerator: f64,
    pub degenerate: bool,
}

impl LipschitzRatio {
    /// `(max - min) / max` of the per-step maxima over the given steps.
    pub fn spread(&self, steps: &[f64]) -> Option<f64> {
        let vals: Vec<f64> = steps
            .iter()
            .map(|s| self.per_step.iter().find(|r| (r.step - s).abs() < 1e-9).map(|r| r.max))
            .collect::<Option<_>>()?;
        let hi = vals.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let lo = vals.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        Some(if hi > 0.0 { (hi - lo) / hi } else { 0.0 })
    }
}

/// `‖φ^t - φ^s‖_{C̃^k} / (|t - s| √cost(γ))` over all sample pairs.
pub fn lipschitz_ratio_ck(probe: &PathProbe, k: usize) -> Result<LipschitzRatio> {
    if probe.t_samples.len() < 2 {
        return Err(Error::InvalidArgument("need at least two samples".into()));
    }
    let grids = probe.cost.grids();
    let root = probe.plan_cost.sqrt();
    let mut ratios = Vec::new();
    let mut per_step: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    let mut max_numerator = 0.0f64;
    for a in 0..probe.t_samples.len() {
        for b in a + 1..probe.t_samples.len() {
            let diff = probe.potentials_at_t[b].sub(&probe.potentials_at_t[a])?;
            let num = quotient_ck_norm(&diff, grids, k)?;
            max_numerator = max_numerator.max(num);
            let dt = probe.t_samples[b] - probe.t_samples[a];
            let r = if root > 0.0 { num / (dt * root) } else { 0.0 };
            ratios.push(r);
            let key = (dt * 1e9).round() as i64;
            let e = per_step.entry(key).or_insert((dt, 0.0, 0));
            e.1 = e.1.max(r);
            e.2 += 1;
        }
    }
    ratios.sort_by(f64::total_cmp);
    let median = ratios[ratios.len() / 2];
    Ok(LipschitzRatio {
        max: *ratios.last().unwrap(),
        median,
        per_step: per_step
            .into_values()
            .map(|(step, max, pairs)| StepRatio { step, max, pairs })
            .collect(),
        max_numerator,
        degenerate: root == 0.0,
    })
}

fn energy_derivative_of(sol: &AtomicSolution, cost: &CostTensor) -> f64 {
    sol.supports()
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let g = sol.extend_gradient(cost, i, &a.positions);
            a.weights
                .iter()
                .zip(&a.velocities)
                .zip(g)
                .map(|((w, v), g)| w * v * g)
                .sum::<f64>()
        })
        .sum()
}

/// `d/dt E(μ^t) = Σ_i ∫ (y_i - x_i) ∇φ^t_i(x^t_i) dγ_i`.
pub fn energy_derivative(probe: &PathProbe, t: f64) -> Result<f64> {
    let sol = probe.solve_at(t)?;
    Ok(energy_derivative_of(&sol, &probe.cost))
}

/// Implicit-function derivative `D_t φ^t` at the grid nodes and atoms.
pub fn potential_time_derivative(probe: &PathProbe, t: f64) -> Result<TimeDerivative> {
    let sol = probe.solve_at(t)?;
    time_derivative(&sol, &probe.cost)
}

/// Centered difference `(φ^{t+h} - φ^{t-h}) / 2h` of the grid potentials.
pub fn finite_difference_derivative(probe: &PathProbe, t: f64, h: f64) -> Result<Vec<Vec<f64>>> {
    let plus = probe.potentials_at(t + h)?;
    let minus = probe.potentials_at(t - h)?;
    Ok(plus
        .sub(&minus)?
        .into_iter()
        .map(|v| v.into_iter().map(|x| x / (2.0 * h)).collect())
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Semiconvexity {
    pub modulus: f64,
    pub derivatives: Vec<f64>,
    /// `max_t E(t) - chord(t) - Ĉ cost t(1-t)/2`; `None` without both endpoints.
    pub upper_chord_excess: Option<f64>,
    /// The mirrored excess for `-E`.
    pub lower_chord_excess: Option<f64>,
    /// Allowed round-off in the chord checks.
    pub chord_slack: f64,
}

impl Semiconvexity {
    pub fn chords_hold(&self) -> bool {
        match (self.upper_chord_excess, self.lower_chord_excess) {
            (Some(u), Some(l)) => u <= self.chord_slack && l <= self.chord_slack,
            _ => false,
        }
    }
}

/// `max |h'(t) - h'(s)| / (|t - s| cost(γ))` over sample pairs, with the chord
/// inequalities checked against the measured modulus.
pub fn semiconvexity_modulus(probe: &PathProbe) -> Result<Semiconvexity> {
    let ts = &probe.t_samples;
    if ts.len() < 3 {
        return Err(Error::InvalidArgument("need at least three samples".into()));
    }
    let d: Vec<f64> = probe
        .solutions
        .iter()
        .map(|s| energy_derivative_of(s, &probe.cost))
        .collect();
    let cost = probe.plan_cost;
    let mut modulus = 0.0f64;
    if cost > 0.0 {
        for a in 0..ts.len() {
            for b in a + 1..ts.len() {
                modulus = modulus.max((d[b] - d[a]).abs() / ((ts[b] - ts[a]) * cost));
            }
        }
    }
    let e = &probe.energies_at_t;
    let scale = e.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let slack = 100.0 * probe.tol * scale + 1e-6 * modulus * cost / 8.0;
    let (upper, lower) = match (ts.first(), ts.last()) {
        (Some(&t0), Some(&t1)) if t0 == 0.0 && t1 == 1.0 => {
            let (e0, e1) = (e[0], e[e.len() - 1]);
            let mut up = f64::NEG_INFINITY;
            let mut lo = f64::NEG_INFINITY;
            for (t, et) in ts.iter().zip(e) {
                let chord = (1.0 - t) * e0 + t * e1;
                let bound = modulus * cost * t * (1.0 - t) / 2.0;
                up = up.max(et - chord - bound);
                lo = lo.max(chord - et - bound);
            }
            (Some(up), Some(lo))
        }
        _ => (None, None),
    };
    Ok(Semiconvexity {
        modulus,
        derivatives: d,
        upper_chord_excess: upper,
        lower_chord_excess: lower,
        chord_slack: slack,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheck {
    pub s_values: Vec<f64>,
    /// `E(μ^s) - E(μ^0) - s Σ ∫ (y - x) ∇φ_i(x) dγ_i`.
    pub residuals: Vec<f64>,
    /// `W(μ^0, μ^s)² = s² cost(γ)` for optimal plans.
    pub w2_squared: Vec<f64>,
    pub ratios: Vec<f64>,
}

impl GradientCheck {
    pub fn spread(&self) -> f64 {
        let hi = self.ratios.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let lo = self.ratios.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        if hi > 0.0 {
            (hi - lo) / hi
        } else {
            0.0
        }
    }
}

/// First-order residual of `E` along the optimal displacement from `mu0`
/// towards `mu1`, relative to the squared distance travelled.
pub fn wasserstein_gradient_check(cost: &CostTensor, mu0: &MeasureFamily, mu1: &MeasureFamily, s_values: &[f64], tol: f64) -> Result<GradientCheck> {
    let plans = PlanFamily::new(
        mu0.members()
            .iter()
            .zip(mu1.members())
            .map(|(a, b)| optimal_plan_1d(a, b))
            .collect::<Result<_>>()?,
    )?;
    let mut ts = vec![0.0];
    let mut sorted = s_values.to_vec();
    sorted.sort_by(f64::total_cmp);
    ts.extend(sorted.iter().filter(|s| **s > 0.0));
    let probe = probe_path(cost, &plans, &ts, tol)?;
    let e0 = probe.energies_at_t[0];
    let slope = energy_derivative_of(&probe.solutions[0], cost);
    let mut out = GradientCheck {
        s_values: vec![],
        residuals: vec![],
        w2_squared: vec![],
        ratios: vec![],
    };
    for &s in s_values {
        let k = probe.sample_index(s).ok_or_else(|| Error::InvalidArgument(format!("bad s {s}")))?;
        let r = probe.energies_at_t[k] - e0 - s * slope;
        let w2 = s * s * probe.plan_cost;
        out.s_values.push(s);
        out.residuals.push(r);
        out.w2_squared.push(w2);
        out.ratios.push(if w2 > 0.0 { r.abs() / w2 } else { 0.0 });
    }
    Ok(out)
}
