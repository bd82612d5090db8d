//! Cost functions on product grids.
//!
//! A [`CostTensor`] keeps the dense node values used by the solver together
//! with a continuous model of the cost. Analytic descriptors are evaluated
//! exactly off the grid; tabulated costs are interpolated with tensor-product
//! Catmull–Rom splines so values and first derivatives stay consistent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::Grid1D;

/// Maximal number of dense tensor entries.
pub const MAX_ENTRIES: usize = 1 << 21;
/// Highest derivative order carried in the bounds.
pub const K_MAX: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PairKernel {
    /// `a u²`
    Quadratic { a: f64 },
    /// `amplitude · cos(frequency · u)`
    Cosine { amplitude: f64, frequency: f64 },
    /// `-amplitude · exp(-u² / 2 width²)`
    Gaussian { amplitude: f64, width: f64 },
}

impl PairKernel {
    /// `n`-th derivative in `u`.
    fn derivative(&self, u: f64, n: usize) -> f64 {
        match *self {
            PairKernel::Quadratic { a } => match n {
                0 => a * u * u,
                1 => 2.0 * a * u,
                2 => 2.0 * a,
                _ => 0.0,
            },
            PairKernel::Cosine {
                amplitude,
                frequency,
            } => amplitude * frequency.powi(n as i32) * shifted_cos(frequency * u, n),
            PairKernel::Gaussian { amplitude, width } => -amplitude * gaussian_derivative(u / width, width, n),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            PairKernel::Quadratic { a } => a.is_finite(),
            PairKernel::Cosine {
                amplitude,
                frequency,
            } => amplitude.is_finite() && frequency.is_finite(),
            PairKernel::Gaussian { amplitude, width } => amplitude.is_finite() && width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad pair kernel {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SiteTerm {
    Zero,
    /// `Σ coeffs[k] x^k`
    Poly { coeffs: Vec<f64> },
    /// `amplitude · cos(frequency · x + phase)`
    Cos {
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// `amplitude · exp(-(x - center)² / 2 width²)`
    Gauss { amplitude: f64, center: f64, width: f64 },
}

impl SiteTerm {
    fn derivative(&self, x: f64, n: usize) -> f64 {
        match self {
            SiteTerm::Zero => 0.0,
            SiteTerm::Poly { coeffs } => {
                let mut acc = 0.0;
                for (k, c) in coeffs.iter().enumerate().skip(n).rev() {
                    let falling: f64 = ((k - n + 1)..=k).map(|m| m as f64).product();
                    acc = acc * x + c * falling;
                }
                acc
            }
            SiteTerm::Cos {
                amplitude,
                frequency,
                phase,
            } => amplitude * frequency.powi(n as i32) * shifted_cos(frequency * x + phase, n),
            SiteTerm::Gauss {
                amplitude,
                center,
                width,
            } => amplitude * gaussian_derivative((x - center) / width, *width, n),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            SiteTerm::Zero => true,
            SiteTerm::Poly { coeffs } => coeffs.iter().all(|c| c.is_finite()),
            SiteTerm::Cos {
                amplitude,
                frequency,
                phase,
            } => amplitude.is_finite() && frequency.is_finite() && phase.is_finite(),
            SiteTerm::Gauss {
                amplitude,
                center,
                width,
            } => amplitude.is_finite() && center.is_finite() && *width > 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("bad site term {self:?}")))
        }
    }
}

/// `d^n/dθ^n cos θ`.
fn shifted_cos(theta: f64, n: usize) -> f64 {
    match n % 4 {
        0 => theta.cos(),
        1 => -theta.sin(),
        2 => -theta.cos(),
        _ => theta.sin(),
    }
}

/// `d^n/du^n exp(-u²/2w²)` written with `s = u / w`.
fn gaussian_derivative(s: f64, w: f64, n: usize) -> f64 {
    let he = match n {
        0 => 1.0,
        1 => s,
        2 => s * s - 1.0,
        3 => s * s * s - 3.0 * s,
        4 => s.powi(4) - 6.0 * s * s + 3.0,
        _ => unreachable!("derivative order {n}"),
    };
    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
    sign * he * (-0.5 * s * s).exp() / w.powi(n as i32)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairTerm {
    pub i: usize,
    pub j: usize,
    pub kernel: PairKernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexedSite {
    pub i: usize,
    pub term: SiteTerm,
}

fn one() -> f64 {
    1.0
}

/// Built-in cost families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostDescriptor {
    Zero,
    Constant {
        value: f64,
    },
    /// `Σ_{i<j} a_ij |x_i - x_j|²`, with `a_ij = scale` unless `weights` is given.
    Quadratic {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        weights: Option<Vec<Vec<f64>>>,
    },
    /// `Σ_i f_i(x_i)`, one term per marginal.
    Separable {
        terms: Vec<SiteTerm>,
    },
    /// `Σ_{i<j} amplitude · cos(frequency (x_i - x_j))`
    Cosine {
        amplitude: f64,
        frequency: f64,
    },
    /// `-Σ_{i<j} amplitude · exp(-|x_i - x_j|² / 2 width²)`
    Gaussian {
        amplitude: f64,
        width: f64,
    },
    Sum {
        #[serde(default)]
        pairs: Vec<PairTerm>,
        #[serde(default)]
        sites: Vec<IndexedSite>,
        #[serde(default)]
        constant: f64,
    },
    /// Node values in row-major order over the product grid.
    Tabulated {
        values: Vec<f64>,
    },
}

#[derive(Clone, Debug, PartialEq)]
struct Analytic {
    pairs: Vec<PairTerm>,
    sites: Vec<IndexedSite>,
    constant: f64,
}

impl Analytic {
    fn from_descriptor(d: &CostDescriptor, n: usize) -> Result<Option<Self>> {
        let all_pairs = |k: &dyn Fn(usize, usize) -> PairKernel| {
            let mut v = Vec::new();
            for i in 0..n {
                for j in i + 1..n {
                    v.push(PairTerm { i, j, kernel: k(i, j) });
                }
            }
            v
        };
        let model = match d {
            CostDescriptor::Zero => Analytic {
                pairs: vec![],
                sites: vec![],
                constant: 0.0,
            },
            CostDescriptor::Constant { value } => Analytic {
                pairs: vec![],
                sites: vec![],
                constant: *value,
            },
            CostDescriptor::Quadratic { scale, weights } => {
                if let Some(w) = weights {
                    if w.len() != n || w.iter().any(|r| r.len() != n) {
                        return Err(Error::ShapeMismatch(format!("quadratic weights must be {n}x{n}")));
                    }
                }
                Analytic {
                    pairs: all_pairs(&|i, j| PairKernel::Quadratic {
                        a: weights.as_ref().map_or(*scale, |w| w[i][j]),
                    }),
                    sites: vec![],
                    constant: 0.0,
                }
            }
            CostDescriptor::Separable { terms } => {
                if terms.len() != n {
                    return Err(Error::FamilyMismatch {
                        expected: n,
                        got: terms.len(),
                    });
                }
                Analytic {
                    pairs: vec![],
                    sites: terms
                        .iter()
                        .enumerate()
                        .map(|(i, t)| IndexedSite { i, term: t.clone() })
                        .collect(),
                    constant: 0.0,
                }
            }
            CostDescriptor::Cosine {
                amplitude,
                frequency,
            } => Analytic {
                pairs: all_pairs(&|_, _| PairKernel::Cosine {
                    amplitude: *amplitude,
                    frequency: *frequency,
                }),
                sites: vec![],
                constant: 0.0,
            },
            CostDescriptor::Gaussian { amplitude, width } => Analytic {
                pairs: all_pairs(&|_, _| PairKernel::Gaussian {
                    amplitude: *amplitude,
                    width: *width,
                }),
                sites: vec![],
                constant: 0.0,
            },
            CostDescriptor::Sum {
                pairs,
                sites,
                constant,
            } => Analytic {
                pairs: pairs.clone(),
                sites: sites.clone(),
                constant: *constant,
            },
            CostDescriptor::Tabulated { .. } => return Ok(None),
        };
        for p in &model.pairs {
            if p.i >= n || p.j >= n || p.i == p.j {
                return Err(Error::InvalidArgument(format!("pair ({}, {}) for N = {n}", p.i, p.j)));
            }
            p.kernel.validate()?;
        }
        for s in &model.sites {
            if s.i >= n {
                return Err(Error::InvalidArgument(format!("site {} for N = {n}", s.i)));
            }
            s.term.validate()?;
        }
        if !model.constant.is_finite() {
            return Err(Error::InvalidArgument("non-finite constant".into()));
        }
        Ok(Some(model))
    }

    /// Mixed partial `∂^alpha c(x)`.
    fn derivative(&self, x: &[f64], alpha: &[usize]) -> f64 {
        let order: usize = alpha.iter().sum();
        let mut acc = if order == 0 { self.constant } else { 0.0 };
        for p in &self.pairs {
            let outside = alpha
                .iter()
                .enumerate()
                .any(|(k, a)| *a > 0 && k != p.i && k != p.j);
            if outside {
                continue;
            }
            let sign = if alpha[p.j] % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * p.kernel.derivative(x[p.i] - x[p.j], order);
        }
        for s in &self.sites {
            if alpha.iter().enumerate().any(|(k, a)| *a > 0 && k != s.i) {
                continue;
            }
            acc += s.term.derivative(x[s.i], order);
        }
        acc
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CostTensor {
    grids: Vec<Grid1D>,
    dims: Vec<usize>,
    values: Vec<f64>,
    order_sup: Vec<f64>,
    lipschitz: Vec<f64>,
    shift: f64,
    descriptor: CostDescriptor,
    analytic: Option<Analytic>,
}

/// Builds a cost tensor from a descriptor on the given marginal grids.
pub fn build_cost(descriptor: &CostDescriptor, grids: &[Grid1D]) -> Result<CostTensor> {
    let n = grids.len();
    if n < 2 {
        return Err(Error::FamilyMismatch { expected: 2, got: n });
    }
    if n > 3 {
        return Err(Error::Capacity(format!("{n} marginals; at most 3 are supported")));
    }
    let dims: Vec<usize> = grids.iter().map(Grid1D::len).collect();
    let total = dims.iter().try_fold(1usize, |a, d| a.checked_mul(*d));
    let total = match total {
        Some(t) if t <= MAX_ENTRIES => t,
        _ => {
            return Err(Error::Capacity(format!(
                "product grid {dims:?} exceeds {MAX_ENTRIES} entries"
            )))
        }
    };
    let analytic = Analytic::from_descriptor(descriptor, n)?;
    let values = match (&analytic, descriptor) {
        (Some(a), _) => {
            let axes: Vec<Vec<f64>> = grids.iter().map(Grid1D::nodes).collect();
            let zero = vec![0; n];
            let mut out = Vec::with_capacity(total);
            for_each_point(&axes, |x| out.push(a.derivative(x, &zero)));
            out
        }
        (None, CostDescriptor::Tabulated { values }) => {
            if values.len() != total {
                return Err(Error::ShapeMismatch(format!(
                    "{} tabulated values for shape {dims:?}",
                    values.len()
                )));
            }
            values.clone()
        }
        (None, _) => unreachable!(),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("cost has non-finite values".into()));
    }
    let mut cost = CostTensor {
        grids: grids.to_vec(),
        dims,
        values,
        order_sup: vec![],
        lipschitz: vec![],
        shift: 0.0,
        descriptor: descriptor.clone(),
        analytic,
    };
    cost.compute_bounds()?;
    Ok(cost)
}

/// Visits every point of the product of `axes` in row-major order.
pub(crate) fn for_each_point(axes: &[Vec<f64>], mut f: impl FnMut(&[f64])) {
    let n = axes.len();
    if axes.iter().any(|a| a.is_empty()) {
        return;
    }
    let mut idx = vec![0usize; n];
    let mut x: Vec<f64> = axes.iter().map(|a| a[0]).collect();
    loop {
        f(&x);
        let mut k = n;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < axes[k].len() {
                x[k] = axes[k][idx[k]];
                break;
            }
            idx[k] = 0;
            x[k] = axes[k][0];
        }
    }
}

/// All multi-indices over `n` axes with total order `order`.
fn multi_indices(n: usize, order: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == n - 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for a in (0..=left).rev() {
            cur.push(a);
            rec(n, left - a, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, order, &mut Vec::new(), &mut out);
    out
}

impl CostTensor {
    fn compute_bounds(&mut self) -> Result<()> {
        let n = self.grids.len();
        if let Some(a) = &self.analytic {
            // Supremum over nodes and interval endpoints.
            let lattice: Vec<Vec<f64>> = self
                .grids
                .iter()
                .map(|g| {
                    let mut v = vec![g.lo()];
                    v.extend(g.nodes());
                    v.push(g.hi());
                    v
                })
                .collect();
            let alphas: Vec<Vec<Vec<usize>>> = (0..=K_MAX).map(|j| multi_indices(n, j)).collect();
            let mut sup = vec![0.0f64; K_MAX + 1];
            let mut lip = vec![0.0f64; n];
            for_each_point(&lattice, |x| {
                for (j, list) in alphas.iter().enumerate() {
                    for alpha in list {
                        let v = a.derivative(x, alpha).abs();
                        if v > sup[j] {
                            sup[j] = v;
                        }
                        if j == 1 {
                            let i = alpha.iter().position(|a| *a == 1).unwrap();
                            lip[i] = lip[i].max(v);
                        }
                    }
                }
            });
            self.order_sup = sup;
            self.lipschitz = lip;
        } else {
            let kmax = self
                .dims
                .iter()
                .map(|d| ((d - 1) / 2).min(K_MAX))
                .min()
                .unwrap_or(0);
            let hs: Vec<f64> = self.grids.iter().map(Grid1D::spacing).collect();
            let mut sup = vec![0.0f64; kmax + 1];
            let mut lip = vec![0.0f64; n];
            for (j, s) in sup.iter_mut().enumerate() {
                for alpha in multi_indices(n, j) {
                    let mut t = self.values.clone();
                    for (axis, &order) in alpha.iter().enumerate() {
                        if order > 0 {
                            t = diff_along(&t, &self.dims, axis, order, hs[axis])?;
                        }
                    }
                    let m = t.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    *s = s.max(m);
                    if j == 1 {
                        let i = alpha.iter().position(|a| *a == 1).unwrap();
                        lip[i] = m;
                    }
                }
            }
            self.order_sup = sup;
            self.lipschitz = lip;
        }
        Ok(())
    }

    pub fn grids(&self) -> &[Grid1D] {
        &self.grids
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn n_marginals(&self) -> usize {
        self.grids.len()
    }

    /// Row-major node values.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn descriptor(&self) -> &CostDescriptor {
        &self.descriptor
    }

    pub fn is_analytic(&self) -> bool {
        self.analytic.is_some()
    }

    /// Constant added by [`normalize_cost`] (zero otherwise).
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// Highest derivative order with a bound.
    pub fn k_max(&self) -> usize {
        self.order_sup.len() - 1
    }

    /// `sup |∂^α c|` over `|α| = j`.
    pub fn order_sup(&self, j: usize) -> Option<f64> {
        self.order_sup.get(j).copied()
    }

    /// Per-order suprema `j = 0..=k_max`.
    pub fn deriv_bounds(&self) -> &[f64] {
        &self.order_sup
    }

    /// `‖c‖_{C^k} = max_{j ≤ k} sup |∂^α c|`.
    pub fn ck_norm(&self, k: usize) -> Result<f64> {
        if k > self.k_max() {
            return Err(Error::InvalidArgument(format!(
                "cost derivative bound of order {k} unavailable (k_max = {})",
                self.k_max()
            )));
        }
        Ok(self.order_sup[..=k].iter().fold(0.0, |m, v| m.max(*v)))
    }

    /// `L_i = sup |∂_{x_i} c|`.
    pub fn marginal_lipschitz(&self) -> &[f64] {
        &self.lipschitz
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().fold(f64::INFINITY, |m, v| m.min(*v))
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
    }

    pub fn oscillation(&self) -> f64 {
        self.max_value() - self.min_value()
    }

    /// Product of the cell volumes.
    pub fn cell_volume(&self) -> f64 {
        self.grids.iter().map(Grid1D::spacing).product()
    }

    /// `Σ e^{-c} · vol` computed in log space.
    pub fn log_mass(&self) -> f64 {
        let m = self.min_value();
        let s: f64 = self.values.iter().map(|v| (-(v - m)).exp()).sum();
        s.ln() - m + self.cell_volume().ln()
    }

    pub fn is_normalized(&self) -> bool {
        self.log_mass().abs() <= 1e-12
    }

    /// Cost at an arbitrary point of the product box.
    pub fn value_at(&self, x: &[f64]) -> f64 {
        match &self.analytic {
            Some(a) => a.derivative(x, &vec![0; x.len()]) + self.shift,
            None => self.spline(x, None),
        }
    }

    /// `∂_{x_axis} c` at an arbitrary point.
    pub fn partial_at(&self, axis: usize, x: &[f64]) -> f64 {
        match &self.analytic {
            Some(a) => {
                let mut alpha = vec![0; x.len()];
                alpha[axis] = 1;
                a.derivative(x, &alpha)
            }
            None => self.spline(x, Some(axis)),
        }
    }

    /// Dense samples of the cost on the product of `axes`, row-major.
    pub fn sample(&self, axes: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for_each_point(axes, |x| out.push(self.value_at(x)));
        out
    }

    /// Dense samples of `∂_{x_axis} c` on the product of `axes`.
    pub fn sample_partial(&self, axis: usize, axes: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::new();
        for_each_point(axes, |x| out.push(self.partial_at(axis, x)));
        out
    }

    /// Tensor-product Catmull–Rom interpolation of the node values, or of
    /// its derivative along `deriv`.
    fn spline(&self, x: &[f64], deriv: Option<usize>) -> f64 {
        let per_axis: Vec<Vec<(usize, f64)>> = x
            .iter()
            .enumerate()
            .map(|(k, &xk)| catmull_rom_weights(&self.grids[k], xk, deriv == Some(k)))
            .collect();
        let strides = strides(&self.dims);
        let mut acc = 0.0;
        let mut idx = vec![0usize; x.len()];
        loop {
            let mut w = 1.0;
            let mut flat = 0;
            for (k, &i) in idx.iter().enumerate() {
                let (node, wk) = per_axis[k][i];
                w *= wk;
                flat += node * strides[k];
            }
            acc += w * self.values[flat];
            let mut k = x.len();
            loop {
                if k == 0 {
                    return acc;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < per_axis[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
    }
}

pub(crate) fn strides(dims: &[usize]) -> Vec<usize> {
    let mut s = vec![1; dims.len()];
    for k in (0..dims.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * dims[k + 1];
    }
    s
}

/// Node weights of the Catmull–Rom spline at `x` (or of its derivative).
/// Ghost nodes beyond the ends are linear extrapolations.
fn catmull_rom_weights(g: &Grid1D, x: f64, deriv: bool) -> Vec<(usize, f64)> {
    let n = g.len();
    let h = g.spacing();
    let f = ((x - g.node(0)) / h).clamp(0.0, (n - 1) as f64);
    let j = (f.floor() as usize).min(n - 2);
    let t = f - j as f64;
    let w: [f64; 4] = if deriv {
        [
            (-1.0 + 4.0 * t - 3.0 * t * t) / (2.0 * h),
            (-10.0 * t + 9.0 * t * t) / (2.0 * h),
            (1.0 + 8.0 * t - 9.0 * t * t) / (2.0 * h),
            (-2.0 * t + 3.0 * t * t) / (2.0 * h),
        ]
    } else {
        let (t2, t3) = (t * t, t * t * t);
        [
            0.5 * (-t + 2.0 * t2 - t3),
            0.5 * (2.0 - 5.0 * t2 + 3.0 * t3),
            0.5 * (t + 4.0 * t2 - 3.0 * t3),
            0.5 * (-t2 + t3),
        ]
    };
    let mut out: Vec<(usize, f64)> = Vec::with_capacity(6);
    let mut add = |node: usize, wt: f64| {
        if let Some(e) = out.iter_mut().find(|e| e.0 == node) {
            e.1 += wt;
        } else {
            out.push((node, wt));
        }
    };
    for (o, wt) in w.iter().enumerate() {
        let k = j as isize + o as isize - 1;
        if k < 0 {
            add(0, 2.0 * wt);
            add(1, -wt);
        } else if k as usize >= n {
            add(n - 1, 2.0 * wt);
            add(n - 2, -wt);
        } else {
            add(k as usize, *wt);
        }
    }
    out
}

/// Applies the one-dimensional derivative stencil of the given order along one
/// axis of a row-major tensor.
fn diff_along(values: &[f64], dims: &[usize], axis: usize, order: usize, h: f64) -> Result<Vec<f64>> {
    let s = strides(dims);
    let len = dims[axis];
    let stride = s[axis];
    let mut out = vec![0.0; values.len()];
    let mut line = vec![0.0; len];
    for start in 0..values.len() {
        if (start / stride) % len != 0 {
            continue;
        }
        for (k, l) in line.iter_mut().enumerate() {
            *l = values[start + k * stride];
        }
        let d = fd_derivative(&line, h, order)?;
        for (k, v) in d.into_iter().enumerate() {
            out[start + k * stride] = v;
        }
    }
    Ok(out)
}

/// Second-order finite-difference derivative of order 1..=3: central in the
/// interior, one-sided at the ends.
pub fn fd_derivative(f: &[f64], h: f64, order: usize) -> Result<Vec<f64>> {
    let n = f.len();
    let needed = 2 * order + 1;
    if n < needed {
        return Err(Error::GridTooCoarse {
            order,
            needed,
            got: n,
        });
    }
    let mut d = vec![0.0; n];
    match order {
        0 => d.copy_from_slice(f),
        1 => {
            d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
            d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
            for i in 1..n - 1 {
                d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
            }
        }
        2 => {
            let h2 = h * h;
            d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2;
            d[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / h2;
            for i in 1..n - 1 {
                d[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
            }
        }
        3 => {
            let h3 = 2.0 * h * h * h;
            for i in 0..2 {
                d[i] = (-5.0 * f[i] + 18.0 * f[i + 1] - 24.0 * f[i + 2] + 14.0 * f[i + 3] - 3.0 * f[i + 4]) / h3;
                let r = n - 1 - i;
                d[r] = (5.0 * f[r] - 18.0 * f[r - 1] + 24.0 * f[r - 2] - 14.0 * f[r - 3] + 3.0 * f[r - 4]) / h3;
            }
            for i in 2..n - 2 {
                d[i] = (f[i + 2] - 2.0 * f[i + 1] + 2.0 * f[i - 1] - f[i - 2]) / h3;
            }
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "derivative order {order} above {K_MAX}"
            )))
        }
    }
    Ok(d)
}

/// Per-order suprema `sup |f^{(j)}|`, `j = 0..=k`, by finite differences.
pub fn order_sups(values: &[f64], grid: &Grid1D, k: usize) -> Result<Vec<f64>> {
    if k > K_MAX {
        return Err(Error::InvalidArgument(format!("order {k} above {K_MAX}")));
    }
    if values.len() != grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} values on a grid of {} nodes",
            values.len(),
            grid.len()
        )));
    }
    if values.len() < 2 * k + 1 {
        return Err(Error::GridTooCoarse {
            order: k,
            needed: 2 * k + 1,
            got: values.len(),
        });
    }
    (0..=k)
        .map(|j| {
            let d = fd_derivative(values, grid.spacing(), j)?;
            Ok(d.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        })
        .collect()
}

/// Finite-difference surrogate of `‖f‖_{C^k}`: the maximum over orders
/// `j ≤ k` of the sup of the `j`-th derivative estimate.
pub fn ck_norm_estimate(values: &[f64], grid: &Grid1D, k: usize) -> Result<f64> {
    Ok(order_sups(values, grid, k)?.into_iter().fold(0.0, f64::max))
}

/// Shifts `c` by `κ = log Σ e^{-c} vol` so that `Σ e^{-c-κ} vol = 1`.
pub fn normalize_cost(cost: &CostTensor) -> CostTensor {
    let kappa = cost.log_mass();
    let mut out = cost.clone();
    out.values.iter_mut().for_each(|v| *v += kappa);
    out.shift += kappa;
    out.order_sup[0] = out.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(a) = &out.analytic {
        let lattice: Vec<Vec<f64>> = out
            .grids
            .iter()
            .map(|g| {
                let mut v = vec![g.lo()];
                v.extend(g.nodes());
                v.push(g.hi());
                v
            })
            .collect();
        let zero = vec![0; out.grids.len()];
        let shift = out.shift;
        let mut m = 0.0f64;
        for_each_point(&lattice, |x| m = m.max((a.derivative(x, &zero) + shift).abs()));
        out.order_sup[0] = m;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit(n: usize) -> Grid1D {
        Grid1D::unit(n).unwrap()
    }

    #[test]
    fn zero_cost_is_zero() {
        let c = build_cost(&CostDescriptor::Zero, &[unit(5), unit(6)]).unwrap();
        assert!(c.values().iter().all(|v| *v == 0.0));
        assert!(c.deriv_bounds().iter().all(|v| *v == 0.0));
        assert_eq!(c.dims(), &[5, 6]);
    }

    #[test]
    fn separable_values() {
        let f = SiteTerm::Poly {
            coeffs: vec![0.0, 1.0, 2.0],
        };
        let g = SiteTerm::Cos {
            amplitude: 1.0,
            frequency: 3.0,
            phase: 0.0,
        };
        let (a, b) = (unit(4), unit(7));
        let c = build_cost(
            &CostDescriptor::Separable {
                terms: vec![f.clone(), g.clone()],
            },
            &[a, b],
        )
        .unwrap();
        for i in 0..4 {
            for j in 0..7 {
                let (x, y) = (a.node(i), b.node(j));
                let expect = x + 2.0 * x * x + (3.0 * y).cos();
                assert!((c.values()[i * 7 + j] - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn quadratic_lipschitz_constant() {
        let c = build_cost(&CostDescriptor::Quadratic { scale: 1.0, weights: None }, &[unit(16), unit(16)]).unwrap();
        assert!((c.marginal_lipschitz()[0] - 2.0).abs() < 1e-14);
        assert!((c.marginal_lipschitz()[1] - 2.0).abs() < 1e-14);
        assert!((c.order_sup(2).unwrap() - 2.0).abs() < 1e-14);
        assert_eq!(c.order_sup(3).unwrap(), 0.0);
    }

    #[test]
    fn four_marginals_rejected() {
        let g = unit(2);
        assert!(matches!(
            build_cost(&CostDescriptor::Zero, &[g, g, g, g]),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn poly_derivatives() {
        let p = SiteTerm::Poly {
            coeffs: vec![1.0, -2.0, 3.0, 0.5],
        };
        let x = 0.7;
        assert!((p.derivative(x, 0) - (1.0 - 2.0 * x + 3.0 * x * x + 0.5 * x.powi(3))).abs() < 1e-14);
        assert!((p.derivative(x, 1) - (-2.0 + 6.0 * x + 1.5 * x * x)).abs() < 1e-14);
        assert!((p.derivative(x, 2) - (6.0 + 3.0 * x)).abs() < 1e-14);
        assert!((p.derivative(x, 3) - 3.0).abs() < 1e-14);
        assert_eq!(p.derivative(x, 4), 0.0);
    }

    #[test]
    fn analytic_derivatives_match_differences() {
        let d = CostDescriptor::Sum {
            pairs: vec![
                PairTerm {
                    i: 0,
                    j: 1,
                    kernel: PairKernel::Gaussian {
                        amplitude: 0.7,
                        width: 0.3,
                    },
                },
                PairTerm {
                    i: 1,
                    j: 2,
                    kernel: PairKernel::Cosine {
                        amplitude: 0.4,
                        frequency: 2.5,
                    },
                },
            ],
            sites: vec![IndexedSite {
                i: 2,
                term: SiteTerm::Gauss {
                    amplitude: 1.0,
                    center: 0.3,
                    width: 0.2,
                },
            }],
            constant: 0.1,
        };
        let a = Analytic::from_descriptor(&d, 3).unwrap().unwrap();
        let x = [0.2, 0.55, 0.8];
        let h = 1e-5;
        for order in 0..3usize {
            for axis in 0..3 {
                let mut alpha = vec![0; 3];
                alpha[0] = order;
                let mut up = alpha.clone();
                up[axis] += 1;
                let mut xp = x;
                let mut xm = x;
                xp[axis] += h;
                xm[axis] -= h;
                let fd = (a.derivative(&xp, &alpha) - a.derivative(&xm, &alpha)) / (2.0 * h);
                let exact = a.derivative(&x, &up);
                assert!((fd - exact).abs() < 1e-5 * (1.0 + exact.abs()), "{up:?}: {fd} vs {exact}");
            }
        }
    }

    #[test]
    fn spline_interpolates_nodes_and_is_consistent() {
        let (a, b) = (unit(9), unit(11));
        let d = CostDescriptor::Cosine {
            amplitude: 1.0,
            frequency: 2.0,
        };
        let exact = build_cost(&d, &[a, b]).unwrap();
        let tab = build_cost(
            &CostDescriptor::Tabulated {
                values: exact.values().to_vec(),
            },
            &[a, b],
        )
        .unwrap();
        assert!((tab.value_at(&[a.node(3), b.node(5)]) - exact.values()[3 * 11 + 5]).abs() < 1e-14);
        let x = [0.41, 0.63];
        let h = 1e-6;
        for axis in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[axis] += h;
            xm[axis] -= h;
            let fd = (tab.value_at(&xp) - tab.value_at(&xm)) / (2.0 * h);
            assert!((fd - tab.partial_at(axis, &x)).abs() < 1e-7);
        }
        assert!((tab.value_at(&x) - exact.value_at(&x)).abs() < 1e-3);
    }

    #[test]
    fn normalization() {
        let g = Grid1D::new(0.0, 2.0, 8).unwrap();
        let c = build_cost(&CostDescriptor::Zero, &[g, g]).unwrap();
        let n = normalize_cost(&c);
        assert!((n.shift() - 4f64.ln()).abs() < 1e-12);
        assert!(n.is_normalized());
        let again = normalize_cost(&n);
        assert!((again.shift() - n.shift()).abs() < 1e-12);
        assert!((n.value_at(&[0.3, 1.1]) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ck_estimates() {
        let g = unit(16);
        let c = vec![-2.5; 16];
        for k in 0..=3 {
            assert!((ck_norm_estimate(&c, &g, k).unwrap() - 2.5).abs() < 1e-9);
        }
        let lin = g.nodes();
        assert!((ck_norm_estimate(&lin, &g, 1).unwrap() - 1.0).abs() < 1e-12);
        let g = unit(512);
        let s: Vec<f64> = g.nodes().iter().map(|x| (2.0 * std::f64::consts::PI * x).sin()).collect();
        let v = ck_norm_estimate(&s, &g, 2).unwrap();
        let four_pi2 = 4.0 * std::f64::consts::PI.powi(2);
        assert!((v - four_pi2).abs() / four_pi2 < 0.02);
        assert!(matches!(ck_norm_estimate(&s[..6], &unit(6), 3), Err(Error::GridTooCoarse { .. })));
    }

    #[test]
    fn third_derivative_stencils_exact_on_cubics() {
        let g = unit(9);
        let f: Vec<f64> = g.nodes().iter().map(|x| x.powi(3) - x).collect();
        let d = fd_derivative(&f, g.spacing(), 3).unwrap();
        assert!(d.iter().all(|v| (v - 6.0).abs() < 1e-8));
        let d2 = fd_derivative(&f, g.spacing(), 2).unwrap();
        for (x, v) in g.nodes().iter().zip(&d2) {
            assert!((v - 6.0 * x).abs() < 1e-9);
        }
    }
}
