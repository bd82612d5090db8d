//! Potential families modulo gauge, the Schrödinger operator and the density
//! fields of the optimal coupling.
//!
//! Two families are equivalent when they differ by constants `κ_i` with
//! `Σ κ_i = 0`. The stored representative is the canonical one with equal
//! `μ_i`-means.

use serde::{Deserialize, Serialize};

use crate::cost::{order_sups, CostTensor};
use crate::error::{Error, Result};
use crate::kernel::{log_weights, Kernel};
use crate::measure::{Grid1D, MeasureFamily};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gauge {
    /// Equal `μ_i`-weighted means.
    Canonical,
    #[default]
    Unspecified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialFamily {
    members: Vec<Vec<f64>>,
    gauge: Gauge,
}

impl PotentialFamily {
    pub fn new(members: Vec<Vec<f64>>) -> Result<Self> {
        if members.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite potential value".into()));
        }
        Ok(Self {
            members,
            gauge: Gauge::Unspecified,
        })
    }

    pub fn zeros(dims: &[usize]) -> Self {
        Self {
            members: dims.iter().map(|n| vec![0.0; *n]).collect(),
            gauge: Gauge::Unspecified,
        }
    }

    pub(crate) fn with_gauge(members: Vec<Vec<f64>>, gauge: Gauge) -> Self {
        Self { members, gauge }
    }

    pub fn members(&self) -> &[Vec<f64>] {
        &self.members
    }

    pub fn into_members(self) -> Vec<Vec<f64>> {
        self.members
    }

    pub fn gauge(&self) -> Gauge {
        self.gauge
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    /// Componentwise difference `self - other`.
    pub fn sub(&self, other: &PotentialFamily) -> Result<Vec<Vec<f64>>> {
        check_dims(&self.dims(), &other.dims())?;
        Ok(self
            .members
            .iter()
            .zip(&other.members)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x - y).collect())
            .collect())
    }

    /// Adds constants `κ_i` to the components; the gauge tag is dropped.
    pub fn shifted(&self, kappa: &[f64]) -> Self {
        Self {
            members: self
                .members
                .iter()
                .zip(kappa)
                .map(|(m, k)| m.iter().map(|v| v + k).collect())
                .collect(),
            gauge: Gauge::Unspecified,
        }
    }
}

impl std::ops::Index<usize> for PotentialFamily {
    type Output = Vec<f64>;
    fn index(&self, i: usize) -> &Vec<f64> {
        &self.members[i]
    }
}

fn check_dims(a: &[usize], b: &[usize]) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch(format!("{a:?} vs {b:?}")))
    }
}

fn check_inputs(phi: &[Vec<f64>], mu: &MeasureFamily, cost: &CostTensor) -> Result<()> {
    let mdims: Vec<usize> = mu.members().iter().map(|m| m.len()).collect();
    check_dims(&mdims, cost.dims())?;
    let pdims: Vec<usize> = phi.iter().map(Vec::len).collect();
    check_dims(&pdims, cost.dims())
}

pub(crate) fn psi_of(phi: &[Vec<f64>], weights: &[&[f64]]) -> Vec<Vec<f64>> {
    phi.iter()
        .zip(weights)
        .map(|(p, w)| p.iter().zip(log_weights(w)).map(|(a, b)| a + b).collect())
        .collect()
}

fn family_weights(mu: &MeasureFamily) -> Vec<&[f64]> {
    mu.members().iter().map(|m| m.weights()).collect()
}

/// `T̄_i(φ, μ)(x_i) = log ∫ e^{Σ_{j≠i} φ_j - c} dμ_{-i}` on every node.
pub fn apply_tbar(phi: &PotentialFamily, mu: &MeasureFamily, cost: &CostTensor) -> Result<Vec<Vec<f64>>> {
    check_inputs(phi.members(), mu, cost)?;
    let kernel = Kernel::new(cost.dims().to_vec(), cost.values().to_vec());
    let psi = psi_of(phi.members(), &family_weights(mu));
    Ok((0..mu.len()).map(|i| kernel.log_contract(i, &psi)).collect())
}

/// `T_i(φ, μ) = φ_i + T̄_i(φ, μ)`; zero exactly at Schrödinger potentials.
pub fn apply_t(phi: &PotentialFamily, mu: &MeasureFamily, cost: &CostTensor) -> Result<Vec<Vec<f64>>> {
    let tbar = apply_tbar(phi, mu, cost)?;
    Ok(phi
        .members()
        .iter()
        .zip(tbar)
        .map(|(p, t)| p.iter().zip(t).map(|(a, b)| a + b).collect())
        .collect())
}

/// Densities of the coupling `e^{Σφ - c} μ` after normalization: `q` on the
/// product grid, its marginal densities `q_i` and the conditionals
/// `q_{-i}(x_{-i} | x_i) = q / q_i`, all relative to the product measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityFields {
    pub dims: Vec<usize>,
    pub q: Vec<f64>,
    pub q_i: Vec<Vec<f64>>,
    pub q_minus_i: Vec<Vec<f64>>,
    /// `2 (N ‖φ‖_{C̃⁰} + ‖c‖_{C⁰})`; every log-density lies in `[-b, b]`.
    pub bound_exponent: f64,
}

impl DensityFields {
    /// Number of entries whose logarithm leaves `[-b, b]`.
    pub fn bound_violations(&self) -> usize {
        let b = self.bound_exponent;
        let out = |v: &f64| !(v.ln().abs() <= b * (1.0 + 1e-12) + 1e-12);
        self.q.iter().filter(|v| out(v)).count()
            + self.q_i.iter().flatten().filter(|v| out(v)).count()
            + self.q_minus_i.iter().flatten().filter(|v| out(v)).count()
    }

    /// Largest `|log|` over the three fields.
    pub fn max_log_magnitude(&self) -> f64 {
        self.q
            .iter()
            .chain(self.q_i.iter().flatten())
            .chain(self.q_minus_i.iter().flatten())
            .fold(0.0f64, |m, v| m.max(v.ln().abs()))
    }
}

pub fn density_fields(phi: &PotentialFamily, mu: &MeasureFamily, cost: &CostTensor) -> Result<DensityFields> {
    check_inputs(phi.members(), mu, cost)?;
    let dims = cost.dims().to_vec();
    let kernel = Kernel::new(dims.clone(), cost.values().to_vec());
    let w = family_weights(mu);
    // Unweighted exponent Σφ - c gives densities against μ.
    let plain = kernel.log_coupling(phi.members());
    let log_z = kernel.log_total(&psi_of(phi.members(), &w));
    let q: Vec<f64> = plain.iter().map(|l| (l - log_z).exp()).collect();
    let psi = psi_of(phi.members(), &w);
    let q_i: Vec<Vec<f64>> = (0..dims.len())
        .map(|i| {
            kernel
                .log_contract(i, &psi)
                .iter()
                .zip(&phi[i])
                .map(|(t, p)| (t + p - log_z).exp())
                .collect()
        })
        .collect();
    let q_minus_i: Vec<Vec<f64>> = (0..dims.len())
        .map(|i| {
            q.iter()
                .enumerate()
                .map(|(flat, v)| v / q_i[i][kernel.axis_index(flat, i)])
                .collect()
        })
        .collect();
    let n = dims.len() as f64;
    let phi_norm = quotient_sup_norm(phi.members());
    let c_norm = cost.order_sup(0).unwrap_or_else(|| cost.values().iter().fold(0.0, |m, v| m.max(v.abs())));
    Ok(DensityFields {
        dims,
        q,
        q_i,
        q_minus_i,
        bound_exponent: 2.0 * (n * phi_norm + c_norm),
    })
}

/// Closed-form quotient norm given per-component data: `mid`, `half_range`
/// and derivative part `deriv` (zero for the sup norm).
fn quotient_from_parts(mid: &[f64], half_range: &[f64], deriv: &[f64]) -> f64 {
    let mut base = 0.0;
    let mut slack = 0.0;
    for (r, d) in half_range.iter().zip(deriv) {
        base += d.max(*r);
        slack += (d - r).max(0.0);
    }
    let s: f64 = mid.iter().sum();
    base + (s.abs() - slack).max(0.0)
}

fn mid_half(v: &[f64]) -> (f64, f64) {
    let lo = v.iter().fold(f64::INFINITY, |m, x| m.min(*x));
    let hi = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    (0.5 * (hi + lo), 0.5 * (hi - lo))
}

/// `inf_{Σκ=0} Σ_i sup |f_i - κ_i|`.
pub fn quotient_sup_norm(f: &[Vec<f64>]) -> f64 {
    let (mid, half): (Vec<f64>, Vec<f64>) = f.iter().map(|v| mid_half(v)).unzip();
    quotient_from_parts(&mid, &half, &vec![0.0; f.len()])
}

/// `inf_{Σκ=0} Σ_i ‖f_i - κ_i‖_{C^k}` with the finite-difference `C^k`
/// surrogate. Shifting `f_i` only moves the order-zero part, so the gauge
/// infimum has a closed form.
pub fn quotient_ck_norm(f: &[Vec<f64>], grids: &[Grid1D], k: usize) -> Result<f64> {
    if f.len() != grids.len() {
        return Err(Error::FamilyMismatch {
            expected: grids.len(),
            got: f.len(),
        });
    }
    let mut mid = Vec::with_capacity(f.len());
    let mut half = Vec::with_capacity(f.len());
    let mut deriv = Vec::with_capacity(f.len());
    for (v, g) in f.iter().zip(grids) {
        let sups = order_sups(v, g, k)?;
        let (m, r) = mid_half(v);
        mid.push(m);
        half.push(r);
        deriv.push(sups[1..].iter().fold(0.0f64, |a, b| a.max(*b)));
    }
    Ok(quotient_from_parts(&mid, &half, &deriv))
}

/// Quotient `L²(μ)` norm together with its minimizing representative.
#[derive(Clone, Debug, PartialEq)]
pub struct QuotientL2 {
    pub norm: f64,
    pub representative: Vec<Vec<f64>>,
}

/// `‖h‖² = Σ Var_{μ_i}(h_i) + (1/N)(Σ ∫ h_i dμ_i)²`, attained by the
/// representative with equal means.
pub fn quotient_l2_norm(h: &[Vec<f64>], mu: &MeasureFamily) -> Result<QuotientL2> {
    let rep = equal_means(h, &family_weights(mu))?;
    let mut sq = 0.0;
    for (r, m) in rep.iter().zip(mu.members()) {
        sq += r.iter().zip(m.weights()).map(|(v, w)| w * v * v).sum::<f64>();
    }
    Ok(QuotientL2 {
        norm: sq.sqrt(),
        representative: rep,
    })
}

pub(crate) fn equal_means(h: &[Vec<f64>], w: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    if h.len() != w.len() {
        return Err(Error::FamilyMismatch {
            expected: w.len(),
            got: h.len(),
        });
    }
    for (a, b) in h.iter().zip(w) {
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch(format!("{} values for {} weights", a.len(), b.len())));
        }
    }
    let means: Vec<f64> = h
        .iter()
        .zip(w)
        .map(|(v, w)| v.iter().zip(*w).map(|(a, b)| a * b).sum())
        .collect();
    let avg = means.iter().sum::<f64>() / means.len() as f64;
    Ok(h.iter()
        .zip(&means)
        .map(|(v, m)| v.iter().map(|x| x - (m - avg)).collect())
        .collect())
}

/// Equal-means representative of the class of `phi`.
pub fn canonical_gauge(phi: &PotentialFamily, mu: &MeasureFamily) -> Result<PotentialFamily> {
    let rep = equal_means(phi.members(), &family_weights(mu))?;
    Ok(PotentialFamily::with_gauge(rep, Gauge::Canonical))
}
