//! Multi-marginal Sinkhorn iteration for the Schrödinger system.
//!
//! Each sweep sets `φ_i ← -T̄_i(φ, μ)` for `i = 1..N` in turn. Iteration stops
//! once the quotient sup norm of `T(φ, μ)` is below the tolerance; the
//! residual is measured on every node, including empty cells, so the
//! returned potentials are the everywhere-defined solution.

use serde::{Deserialize, Serialize};

use crate::cost::CostTensor;
use crate::error::{Error, Result};
use crate::kernel::{log_weights, Kernel};
use crate::measure::{Atoms, MeasureFamily};
use crate::potential::{equal_means, psi_of, quotient_sup_norm, Gauge, PotentialFamily};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

impl SolveOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub potentials: PotentialFamily,
    pub iterations: usize,
    pub final_residual: f64,
    pub primal_value: f64,
    pub dual_value: f64,
    pub marginal_error: f64,
    /// Geometric mean contraction of the residual over the run.
    pub residual_rate: f64,
}

impl SolveReport {
    pub fn energy(&self) -> f64 {
        self.dual_value
    }
}

/// Raw fixed-point output on an arbitrary support.
#[derive(Clone, Debug)]
pub(crate) struct Fixed {
    pub phi: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub rate: f64,
}

pub(crate) fn iterate(kernel: &Kernel, logw: &[Vec<f64>], mut phi: Vec<Vec<f64>>, opts: &SolveOptions) -> Result<Fixed> {
    opts.validate()?;
    let n = phi.len();
    let psi = |phi: &[Vec<f64>]| -> Vec<Vec<f64>> {
        phi.iter()
            .zip(logw)
            .map(|(p, l)| p.iter().zip(l).map(|(a, b)| a + b).collect())
            .collect()
    };
    let mut first = None;
    let mut iterations = 0;
    loop {
        let mut ps = psi(&phi);
        let tbar0 = kernel.log_contract(0, &ps);
        let mut t: Vec<Vec<f64>> = vec![phi[0].iter().zip(&tbar0).map(|(a, b)| a + b).collect()];
        for i in 1..n {
            let tb = kernel.log_contract(i, &ps);
            t.push(phi[i].iter().zip(&tb).map(|(a, b)| a + b).collect());
        }
        let residual = quotient_sup_norm(&t);
        if !residual.is_finite() {
            return Err(Error::NotConverged { iterations, residual });
        }
        let first_res = *first.get_or_insert(residual);
        if residual <= opts.tol {
            let rate = if iterations > 0 && first_res > 0.0 {
                (residual.max(f64::MIN_POSITIVE) / first_res).powf(1.0 / iterations as f64)
            } else {
                0.0
            };
            return Ok(Fixed {
                phi,
                iterations,
                residual,
                rate,
            });
        }
        if iterations >= opts.max_iter {
            return Err(Error::NotConverged { iterations, residual });
        }
        phi[0] = tbar0.iter().map(|v| -v).collect();
        ps[0] = phi[0].iter().zip(&logw[0]).map(|(a, b)| a + b).collect();
        for i in 1..n {
            let tb = kernel.log_contract(i, &ps);
            phi[i] = tb.iter().map(|v| -v).collect();
            ps[i] = phi[i].iter().zip(&logw[i]).map(|(a, b)| a + b).collect();
        }
        iterations += 1;
    }
}

/// Sinkhorn solver bound to one cost tensor; the stabilized kernel is built
/// once and reused across solves.
#[derive(Clone, Debug)]
pub struct Solver {
    kernel: Kernel,
    dims: Vec<usize>,
    opts: SolveOptions,
}

impl Solver {
    pub fn new(cost: &CostTensor, opts: SolveOptions) -> Result<Self> {
        opts.validate()?;
        Ok(Self {
            kernel: Kernel::new(cost.dims().to_vec(), cost.values().to_vec()),
            dims: cost.dims().to_vec(),
            opts,
        })
    }

    pub fn options(&self) -> &SolveOptions {
        &self.opts
    }

    pub fn solve(&self, mu: &MeasureFamily) -> Result<SolveReport> {
        self.solve_from(mu, None)
    }

    /// Solves starting from `init` (any representative).
    pub fn solve_from(&self, mu: &MeasureFamily, init: Option<&PotentialFamily>) -> Result<SolveReport> {
        let mdims: Vec<usize> = mu.members().iter().map(|m| m.len()).collect();
        if mdims != self.dims {
            return Err(Error::ShapeMismatch(format!("measures {mdims:?} vs cost {:?}", self.dims)));
        }
        let phi0 = match init {
            Some(p) => {
                if p.dims() != self.dims {
                    return Err(Error::ShapeMismatch(format!(
                        "initial potentials {:?} vs cost {:?}",
                        p.dims(),
                        self.dims
                    )));
                }
                p.members().to_vec()
            }
            None => self.dims.iter().map(|n| vec![0.0; *n]).collect(),
        };
        let w: Vec<&[f64]> = mu.members().iter().map(|m| m.weights()).collect();
        let logw: Vec<Vec<f64>> = w.iter().map(|x| log_weights(x)).collect();
        let fixed = iterate(&self.kernel, &logw, phi0, &self.opts)?;
        let phi = equal_means(&fixed.phi, &w)?;
        let psi = psi_of(&phi, &w);
        let log_coupling = self.kernel.log_coupling(&psi);
        let dual = dual_from_parts(&phi, &w, &log_coupling);
        let coupling = Coupling {
            dims: self.dims.clone(),
            weights: log_coupling.iter().map(|l| l.exp()).collect(),
        };
        let primal = primal_from_parts(&coupling, &w, self.kernel.cost());
        let marginal_error = coupling.marginal_error(&w);
        Ok(SolveReport {
            potentials: PotentialFamily::with_gauge(phi, Gauge::Canonical),
            iterations: fixed.iterations,
            final_residual: fixed.residual,
            primal_value: primal,
            dual_value: dual,
            marginal_error,
            residual_rate: fixed.rate,
        })
    }

    /// Optimal coupling for solved potentials.
    pub fn coupling(&self, phi: &PotentialFamily, mu: &MeasureFamily) -> Coupling {
        let w: Vec<&[f64]> = mu.members().iter().map(|m| m.weights()).collect();
        let psi = psi_of(phi.members(), &w);
        Coupling {
            dims: self.dims.clone(),
            weights: self.kernel.log_coupling(&psi).iter().map(|l| l.exp()).collect(),
        }
    }
}

/// Solves the Schrödinger system for `mu` with the given cost.
pub fn solve(cost: &CostTensor, mu: &MeasureFamily, tol: f64, max_iter: usize) -> Result<SolveReport> {
    Solver::new(cost, SolveOptions { tol, max_iter })?.solve(mu)
}

fn dual_from_parts(phi: &[Vec<f64>], w: &[&[f64]], log_coupling: &[f64]) -> f64 {
    let lin: f64 = phi
        .iter()
        .zip(w)
        .map(|(p, w)| p.iter().zip(*w).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    let z: f64 = log_coupling.iter().map(|l| l.exp()).sum();
    lin + 1.0 - z
}

fn primal_from_parts(coupling: &Coupling, w: &[&[f64]], c: &[f64]) -> f64 {
    let mut total = 0.0;
    let dims = &coupling.dims;
    let st = crate::cost::strides(dims);
    for (flat, g) in coupling.weights.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        let mut prod = 1.0;
        for (j, wj) in w.iter().enumerate() {
            prod *= wj[(flat / st[j]) % dims[j]];
        }
        total += g * c[flat];
        total += if prod > 0.0 { g * (g / prod).ln() } else { f64::INFINITY };
    }
    total
}

/// A nonnegative array on the product grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coupling {
    pub dims: Vec<usize>,
    pub weights: Vec<f64>,
}

impl Coupling {
    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn marginal(&self, axis: usize) -> Vec<f64> {
        let st = crate::cost::strides(&self.dims);
        let mut out = vec![0.0; self.dims[axis]];
        for (flat, g) in self.weights.iter().enumerate() {
            out[(flat / st[axis]) % self.dims[axis]] += g;
        }
        out
    }

    pub fn marginals(&self) -> Vec<Vec<f64>> {
        (0..self.dims.len()).map(|i| self.marginal(i)).collect()
    }

    fn marginal_error(&self, w: &[&[f64]]) -> f64 {
        self.marginals()
            .iter()
            .zip(w)
            .flat_map(|(m, w)| m.iter().zip(*w).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    }
}

/// `γ = e^{Σφ - c} μ` for the potentials of a report.
pub fn primal_plan(report: &SolveReport, mu: &MeasureFamily, cost: &CostTensor) -> Result<Coupling> {
    Ok(Solver::new(cost, SolveOptions::default())?.coupling(&report.potentials, mu))
}

/// `∫ c dγ + H(γ | μ)`, with `0 log 0 = 0`.
pub fn eot_value_primal(coupling: &Coupling, mu: &MeasureFamily, cost: &CostTensor) -> Result<f64> {
    if coupling.dims != cost.dims() {
        return Err(Error::ShapeMismatch(format!("coupling {:?} vs cost {:?}", coupling.dims, cost.dims())));
    }
    let w: Vec<&[f64]> = mu.members().iter().map(|m| m.weights()).collect();
    Ok(primal_from_parts(coupling, &w, cost.values()))
}

/// `Σ ∫ φ_i dμ_i + 1 - ∫ e^{Σφ - c} dμ`; a lower bound on the primal value
/// for any potentials.
pub fn eot_value_dual(phi: &PotentialFamily, mu: &MeasureFamily, cost: &CostTensor) -> Result<f64> {
    if phi.dims() != cost.dims() {
        return Err(Error::ShapeMismatch(format!("potentials {:?} vs cost {:?}", phi.dims(), cost.dims())));
    }
    let w: Vec<&[f64]> = mu.members().iter().map(|m| m.weights()).collect();
    let kernel = Kernel::new(cost.dims().to_vec(), cost.values().to_vec());
    let lc = kernel.log_coupling(&psi_of(phi.members(), &w));
    Ok(dual_from_parts(phi.members(), &w, &lc))
}

/// Largest forward-difference slope of each potential, to compare with
/// `L_i = sup |∂_i c|`.
pub fn potential_lipschitz_check(report: &SolveReport, cost: &CostTensor) -> Vec<f64> {
    report
        .potentials
        .members()
        .iter()
        .zip(cost.grids())
        .map(|(p, g)| {
            let h = g.spacing();
            p.windows(2).map(|w| ((w[1] - w[0]) / h).abs()).fold(0.0, f64::max)
        })
        .collect()
}

/// Solution of the Schrödinger system for finitely supported marginals,
/// with the everywhere extension to arbitrary points.
#[derive(Clone, Debug)]
pub struct AtomicSolution {
    pub(crate) supports: Vec<Atoms>,
    /// Potentials at the atoms (equal-means gauge).
    pub phi: Vec<Vec<f64>>,
    pub iterations: usize,
    pub residual: f64,
    pub energy: f64,
}

pub fn solve_atoms(cost: &CostTensor, supports: &[Atoms], init: Option<&[Vec<f64>]>, opts: &SolveOptions) -> Result<AtomicSolution> {
    if supports.len() != cost.n_marginals() {
        return Err(Error::FamilyMismatch {
            expected: cost.n_marginals(),
            got: supports.len(),
        });
    }
    let axes: Vec<Vec<f64>> = supports.iter().map(|a| a.positions.clone()).collect();
    let kernel = Kernel::new(axes.iter().map(Vec::len).collect(), cost.sample(&axes));
    let logw: Vec<Vec<f64>> = supports.iter().map(|a| log_weights(&a.weights)).collect();
    let phi0 = match init {
        Some(p) if p.iter().map(Vec::len).eq(supports.iter().map(Atoms::len)) => p.to_vec(),
        _ => supports.iter().map(|a| vec![0.0; a.len()]).collect(),
    };
    let fixed = iterate(&kernel, &logw, phi0, opts)?;
    let w: Vec<&[f64]> = supports.iter().map(|a| a.weights.as_slice()).collect();
    let phi = equal_means(&fixed.phi, &w)?;
    let lc = kernel.log_coupling(&psi_of(&phi, &w));
    let energy = dual_from_parts(&phi, &w, &lc);
    Ok(AtomicSolution {
        supports: supports.to_vec(),
        phi,
        iterations: fixed.iterations,
        residual: fixed.residual,
        energy,
    })
}

impl AtomicSolution {
    pub fn supports(&self) -> &[Atoms] {
        &self.supports
    }

    fn psi(&self) -> Vec<Vec<f64>> {
        let w: Vec<&[f64]> = self.supports.iter().map(|a| a.weights.as_slice()).collect();
        psi_of(&self.phi, &w)
    }

    fn axes_with(&self, axis: usize, points: &[f64]) -> Vec<Vec<f64>> {
        self.supports
            .iter()
            .enumerate()
            .map(|(j, a)| if j == axis { points.to_vec() } else { a.positions.clone() })
            .collect()
    }

    /// `φ_i(x) = -T̄_i(φ, μ)(x)` at arbitrary points.
    pub fn extend(&self, cost: &CostTensor, axis: usize, points: &[f64]) -> Vec<f64> {
        let axes = self.axes_with(axis, points);
        let kernel = Kernel::new(axes.iter().map(Vec::len).collect(), cost.sample(&axes));
        kernel.log_contract(axis, &self.psi()).into_iter().map(|v| -v).collect()
    }

    /// `∇φ_i(x) = E_{Q_{-i}(·|x)}[∂_i c(x, ·)]`, the derivative of the extension.
    pub fn extend_gradient(&self, cost: &CostTensor, axis: usize, points: &[f64]) -> Vec<f64> {
        let axes = self.axes_with(axis, points);
        let kernel = Kernel::new(axes.iter().map(Vec::len).collect(), cost.sample(&axes));
        let dc = cost.sample_partial(axis, &axes);
        kernel.conditional_mean(axis, &self.psi(), &dc)
    }

    /// Extension to every node of the cost grids.
    pub fn on_grids(&self, cost: &CostTensor) -> PotentialFamily {
        let members = cost
            .grids()
            .iter()
            .enumerate()
            .map(|(i, g)| self.extend(cost, i, &g.nodes()))
            .collect();
        PotentialFamily::with_gauge(members, Gauge::Canonical)
    }
}
