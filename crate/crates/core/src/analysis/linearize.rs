//! The linearized Schrödinger operator `Id + L`, the time derivative of the
//! system along a displacement path, and the implicit derivative of the
//! potentials.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::CostTensor;
use crate::error::{Error, Result};
use crate::kernel::{log_weights, Kernel};
use crate::measure::{Atoms, Grid1D, MeasureFamily, PlanFamily};
use crate::potential::{psi_of, PotentialFamily};
use crate::solver::AtomicSolution;

/// Dense assembly cap on the total number of unknowns.
pub const MAX_LINEAR_NODES: usize = 1024;

/// Matrix of `D_φ T = Id + L` on the concatenated node values. Block `(i, j)`
/// of `L` holds the conditional laws `Q(x_j | x_i)`.
#[derive(Clone, Debug)]
pub struct LinearizedOperator {
    pub dims: Vec<usize>,
    pub matrix: DMatrix<f64>,
    /// Measure weights used by the mean-pinning rows.
    pub weights: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelCheck {
    /// Singular values below the threshold, ascending.
    pub small_singular_values: Vec<f64>,
    /// Smallest singular value above the threshold.
    pub margin: f64,
    pub kernel_dim: usize,
    /// Largest sine of the principal angles between the numerical kernel and
    /// the gauge directions.
    pub max_gauge_angle_sine: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PinnedSolution {
    pub h: Vec<Vec<f64>>,
    /// Multipliers of the range-completing gauge columns; zero when the
    /// right-hand side is consistent.
    pub lambda: Vec<f64>,
}

fn offsets(dims: &[usize]) -> Vec<usize> {
    let mut o = vec![0; dims.len()];
    for k in 1..dims.len() {
        o[k] = o[k - 1] + dims[k - 1];
    }
    o
}

pub(crate) fn assemble(kernel: &Kernel, psi: &[Vec<f64>], dims: &[usize], weights: Vec<Vec<f64>>) -> Result<LinearizedOperator> {
    let total: usize = dims.iter().sum();
    if total > MAX_LINEAR_NODES {
        return Err(Error::Capacity(format!(
            "{total} unknowns exceed the dense linearization cap of {MAX_LINEAR_NODES}"
        )));
    }
    let off = offsets(dims);
    let mut m = DMatrix::<f64>::identity(total, total);
    for i in 0..dims.len() {
        let pairs = kernel.conditional_pairs(i, psi);
        for (j, p) in pairs.iter().enumerate() {
            if j == i {
                continue;
            }
            for a in 0..dims[i] {
                for b in 0..dims[j] {
                    m[(off[i] + a, off[j] + b)] = p[a * dims[j] + b];
                }
            }
        }
    }
    Ok(LinearizedOperator {
        dims: dims.to_vec(),
        matrix: m,
        weights,
    })
}

/// Assembles `Id + L` at potentials `phi` on the grids of `mu`.
pub fn assemble_linearization(phi: &PotentialFamily, mu: &MeasureFamily, cost: &CostTensor) -> Result<LinearizedOperator> {
    let dims = cost.dims().to_vec();
    if phi.dims() != dims {
        return Err(Error::ShapeMismatch(format!("potentials {:?} vs cost {dims:?}", phi.dims())));
    }
    let total: usize = dims.iter().sum();
    if total > MAX_LINEAR_NODES {
        return Err(Error::Capacity(format!(
            "{total} unknowns exceed the dense linearization cap of {MAX_LINEAR_NODES}"
        )));
    }
    let w: Vec<&[f64]> = mu.members().iter().map(|m| m.weights()).collect();
    let kernel = Kernel::new(dims.clone(), cost.values().to_vec());
    assemble(&kernel, &psi_of(phi.members(), &w), &dims, w.iter().map(|x| x.to_vec()).collect())
}

impl LinearizedOperator {
    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }

    fn flatten(&self, h: &[Vec<f64>]) -> Result<DVector<f64>> {
        let d: Vec<usize> = h.iter().map(Vec::len).collect();
        if d != self.dims {
            return Err(Error::ShapeMismatch(format!("{d:?} vs {:?}", self.dims)));
        }
        Ok(DVector::from_iterator(self.size(), h.iter().flatten().copied()))
    }

    fn split(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let off = offsets(&self.dims);
        self.dims
            .iter()
            .zip(off)
            .map(|(n, o)| v[o..o + n].to_vec())
            .collect()
    }

    /// `(Id + L) h`.
    pub fn apply(&self, h: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let v = &self.matrix * self.flatten(h)?;
        Ok(self.split(v.as_slice()))
    }

    /// Largest deviation of an off-diagonal block row sum from one.
    pub fn row_sum_defect(&self) -> f64 {
        let off = offsets(&self.dims);
        let mut worst = 0.0f64;
        for i in 0..self.dims.len() {
            for j in 0..self.dims.len() {
                if i == j {
                    continue;
                }
                for a in 0..self.dims[i] {
                    let s: f64 = (0..self.dims[j]).map(|b| self.matrix[(off[i] + a, off[j] + b)]).sum();
                    worst = worst.max((s - 1.0).abs());
                }
            }
        }
        worst
    }

    /// Orthonormal basis of the gauge directions `1_i - 1_N`.
    fn gauge_basis(&self) -> Vec<DVector<f64>> {
        let n = self.dims.len();
        let off = offsets(&self.dims);
        let mut basis: Vec<DVector<f64>> = Vec::new();
        for i in 0..n - 1 {
            let mut v = DVector::<f64>::zeros(self.size());
            for a in 0..self.dims[i] {
                v[off[i] + a] = 1.0;
            }
            for a in 0..self.dims[n - 1] {
                v[off[n - 1] + a] = -1.0;
            }
            for q in &basis {
                let d = q.dot(&v);
                v -= q * d;
            }
            let norm = v.norm();
            basis.push(v / norm);
        }
        basis
    }

    /// Numerical kernel of the unpinned matrix and its alignment with the
    /// gauge directions.
    pub fn kernel_check(&self, threshold: f64) -> KernelCheck {
        let svd = self.matrix.clone().svd(false, true);
        let v_t = svd.v_t.expect("requested right singular vectors");
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|a, b| svd.singular_values[*a].total_cmp(&svd.singular_values[*b]));
        let small: Vec<usize> = order
            .iter()
            .copied()
            .filter(|k| svd.singular_values[*k] < threshold)
            .collect();
        let margin = order
            .iter()
            .map(|k| svd.singular_values[*k])
            .find(|s| *s >= threshold)
            .unwrap_or(f64::INFINITY);
        let gauge = self.gauge_basis();
        let mut worst = 0.0f64;
        for k in &small {
            let v: DVector<f64> = v_t.row(*k).transpose();
            let mut r = v.clone();
            for q in &gauge {
                r -= q * q.dot(&v);
            }
            worst = worst.max(r.norm() / v.norm());
        }
        KernelCheck {
            small_singular_values: small.iter().map(|k| svd.singular_values[*k]).collect(),
            margin,
            kernel_dim: small.len(),
            max_gauge_angle_sine: worst,
        }
    }

    /// Smallest singular values, ascending.
    pub fn smallest_singular_values(&self, count: usize) -> Vec<f64> {
        let mut s: Vec<f64> = self.matrix.singular_values().iter().copied().collect();
        s.sort_by(f64::total_cmp);
        s.truncate(count);
        s
    }

    /// Solves `(Id + L) h - Σ λ_i 1_i = g` with `Σ λ_i = 0` and equal
    /// weighted means of the components of `h`.
    pub fn solve_pinned(&self, rhs: &[Vec<f64>]) -> Result<PinnedSolution> {
        let n = self.dims.len();
        let m = self.size();
        let off = offsets(&self.dims);
        let size = m + n - 1;
        let mut a = DMatrix::<f64>::zeros(size, size);
        a.view_mut((0, 0), (m, m)).copy_from(&self.matrix);
        for i in 0..n {
            for r in 0..self.dims[i] {
                if i < n - 1 {
                    a[(off[i] + r, m + i)] = -1.0;
                } else {
                    for k in 0..n - 1 {
                        a[(off[i] + r, m + k)] = 1.0;
                    }
                }
            }
        }
        for i in 0..n - 1 {
            for (r, w) in self.weights[i].iter().enumerate() {
                a[(m + i, off[i] + r)] = *w;
            }
            for (r, w) in self.weights[n - 1].iter().enumerate() {
                a[(m + i, off[n - 1] + r)] -= *w;
            }
        }
        let mut b = DVector::<f64>::zeros(size);
        b.rows_mut(0, m).copy_from(&self.flatten(rhs)?);
        let x = a.clone().lu().solve(&b).filter(|x| x.iter().all(|v| v.is_finite()));
        let x = match x {
            Some(x) => x,
            None => {
                let mut s: Vec<f64> = a.singular_values().iter().copied().collect();
                s.sort_by(f64::total_cmp);
                s.truncate(n + 1);
                return Err(Error::Singular(s));
            }
        };
        let mut lambda: Vec<f64> = x.rows(m, n - 1).iter().copied().collect();
        lambda.push(-lambda.iter().sum::<f64>());
        Ok(PinnedSolution {
            h: self.split(&x.as_slice()[..m]),
            lambda,
        })
    }
}

/// Grid potentials as a `C¹` field: cubic Hermite interpolation with
/// central-difference slopes.
#[derive(Clone, Debug)]
pub struct SplineField {
    grids: Vec<Grid1D>,
    values: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

impl SplineField {
    pub fn new(phi: &PotentialFamily, grids: &[Grid1D]) -> Result<Self> {
        let dims: Vec<usize> = grids.iter().map(Grid1D::len).collect();
        if phi.dims() != dims {
            return Err(Error::ShapeMismatch(format!("potentials {:?} vs grids {dims:?}", phi.dims())));
        }
        let slopes = phi
            .members()
            .iter()
            .zip(grids)
            .map(|(v, g)| {
                if v.len() >= 3 {
                    crate::cost::fd_derivative(v, g.spacing(), 1)
                } else {
                    let s = (v[1] - v[0]) / g.spacing();
                    Ok(vec![s; v.len()])
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            grids: grids.to_vec(),
            values: phi.members().to_vec(),
            slopes,
        })
    }

    fn locate(&self, i: usize, x: f64) -> (usize, f64, f64) {
        let g = &self.grids[i];
        let h = g.spacing();
        let n = g.len();
        let f = ((x - g.node(0)) / h).clamp(0.0, (n - 1) as f64);
        let j = (f.floor() as usize).min(n - 2);
        (j, f - j as f64, h)
    }

    pub fn value(&self, i: usize, x: f64) -> f64 {
        let (j, t, h) = self.locate(i, x);
        let (y0, y1) = (self.values[i][j], self.values[i][j + 1]);
        let (m0, m1) = (self.slopes[i][j] * h, self.slopes[i][j + 1] * h);
        let (t2, t3) = (t * t, t * t * t);
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0 + (t3 - 2.0 * t2 + t) * m0 + (-2.0 * t3 + 3.0 * t2) * y1 + (t3 - t2) * m1
    }

    pub fn gradient(&self, i: usize, x: f64) -> f64 {
        let (j, t, h) = self.locate(i, x);
        let (y0, y1) = (self.values[i][j], self.values[i][j + 1]);
        let (m0, m1) = (self.slopes[i][j] * h, self.slopes[i][j + 1] * h);
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * y0 + (3.0 * t2 - 4.0 * t + 1.0) * m0 + (-6.0 * t2 + 6.0 * t) * y1 + (3.0 * t2 - 2.0 * t) * m1) / h
    }
}

/// Potential values and gradients carried by the atoms of a path sample.
pub(crate) struct AtomField<'a> {
    pub atoms: &'a [Atoms],
    pub phi: Vec<Vec<f64>>,
    pub grad: Vec<Vec<f64>>,
}

impl<'a> AtomField<'a> {
    pub fn from_spline(field: &SplineField, atoms: &'a [Atoms]) -> Self {
        let phi = atoms
            .iter()
            .enumerate()
            .map(|(i, a)| a.positions.iter().map(|x| field.value(i, *x)).collect())
            .collect();
        let grad = atoms
            .iter()
            .enumerate()
            .map(|(i, a)| a.positions.iter().map(|x| field.gradient(i, *x)).collect())
            .collect();
        Self { atoms, phi, grad }
    }

    pub fn from_solution(sol: &'a AtomicSolution, cost: &CostTensor) -> Self {
        let atoms = sol.supports();
        let grad = atoms
            .iter()
            .enumerate()
            .map(|(i, a)| sol.extend_gradient(cost, i, &a.positions))
            .collect();
        Self {
            atoms,
            phi: sol.phi.clone(),
            grad,
        }
    }

    fn psi(&self, axis: usize, npoints: usize) -> Vec<Vec<f64>> {
        self.atoms
            .iter()
            .enumerate()
            .map(|(j, a)| {
                if j == axis {
                    vec![0.0; npoints]
                } else {
                    self.phi[j].iter().zip(log_weights(&a.weights)).map(|(p, l)| p + l).collect()
                }
            })
            .collect()
    }

    fn axes(&self, axis: usize, points: &[f64]) -> Vec<Vec<f64>> {
        self.atoms
            .iter()
            .enumerate()
            .map(|(j, a)| if j == axis { points.to_vec() } else { a.positions.clone() })
            .collect()
    }

    /// `log ∫ e^{Σ_{j≠i} φ_j - c(x, ·)} dμ_{-i}` at `points`.
    pub fn log_partial(&self, cost: &CostTensor, axis: usize, points: &[f64]) -> Vec<f64> {
        let axes = self.axes(axis, points);
        let kernel = Kernel::new(axes.iter().map(Vec::len).collect(), cost.sample(&axes));
        kernel.log_contract(axis, &self.psi(axis, points.len()))
    }

    /// `E_{Q_{-i}(·|x)}[Σ_{j≠i} v_j (∇φ_j - ∂_j c) + extra_j]` at `points`.
    pub fn conditional(&self, cost: &CostTensor, axis: usize, points: &[f64], extra: Option<&[Vec<f64>]>) -> Vec<f64> {
        let axes = self.axes(axis, points);
        let dims: Vec<usize> = axes.iter().map(Vec::len).collect();
        let kernel = Kernel::new(dims.clone(), cost.sample(&axes));
        let st = crate::cost::strides(&dims);
        let total: usize = dims.iter().product();
        let mut f = vec![0.0; total];
        for j in 0..dims.len() {
            if j == axis {
                continue;
            }
            let dc = cost.sample_partial(j, &axes);
            let v = &self.atoms[j].velocities;
            for (flat, fv) in f.iter_mut().enumerate() {
                let b = (flat / st[j]) % dims[j];
                *fv += v[b] * (self.grad[j][b] - dc[flat]);
                if let Some(e) = extra {
                    *fv += e[j][b];
                }
            }
        }
        kernel.conditional_mean(axis, &self.psi(axis, points.len()), &f)
    }
}

fn check_grids(cost: &CostTensor, plans: &PlanFamily) -> Result<()> {
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

/// `G_i(φ, t)(x) = T_i(φ, μ^t)(x)` at the grid nodes, with `μ^t` the exact
/// displacement interpolation of the plans and `φ` a spline field.
pub fn g_operator(phi: &PotentialFamily, plans: &PlanFamily, t: f64, cost: &CostTensor) -> Result<Vec<Vec<f64>>> {
    check_grids(cost, plans)?;
    let field = SplineField::new(phi, cost.grids())?;
    let atoms = plans.displaced_atoms(t)?;
    let af = AtomField::from_spline(&field, &atoms);
    Ok((0..cost.n_marginals())
        .map(|i| {
            let nodes = cost.grids()[i].nodes();
            af.log_partial(cost, i, &nodes)
                .iter()
                .zip(&phi[i])
                .map(|(l, p)| l + p)
                .collect()
        })
        .collect())
}

/// `∂_t G_i(φ, t)(x) = ∫ Σ_{j≠i} (y_j - x_j)(∇φ_j(x_j^t) - ∂_j c(x, x^t_{-i})) dQ^t_{-i}(·|x)`
/// at the grid nodes.
pub fn dtg(phi: &PotentialFamily, plans: &PlanFamily, t: f64, cost: &CostTensor) -> Result<Vec<Vec<f64>>> {
    check_grids(cost, plans)?;
    if !(2..=3).contains(&cost.n_marginals()) {
        return Err(Error::FamilyMismatch {
            expected: 3,
            got: cost.n_marginals(),
        });
    }
    let field = SplineField::new(phi, cost.grids())?;
    let atoms = plans.displaced_atoms(t)?;
    let af = AtomField::from_spline(&field, &atoms);
    Ok((0..cost.n_marginals())
        .map(|i| af.conditional(cost, i, &cost.grids()[i].nodes(), None))
        .collect())
}

/// Implicit derivative of the potentials along a displacement path.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeDerivative {
    /// `D_t φ_i` at the grid nodes.
    pub nodes: Vec<Vec<f64>>,
    /// `D_t φ_i` at the atoms of the path sample.
    pub atoms: Vec<Vec<f64>>,
    pub lambda: Vec<f64>,
}

/// `D_t φ^t = -(Id + L)^{-1} D_t G` for a solution on displaced atoms.
pub(crate) fn time_derivative(sol: &AtomicSolution, cost: &CostTensor) -> Result<TimeDerivative> {
    let af = AtomField::from_solution(sol, cost);
    let atoms = sol.supports();
    let n = atoms.len();
    let rhs: Vec<Vec<f64>> = (0..n)
        .map(|i| af.conditional(cost, i, &atoms[i].positions, None).into_iter().map(|v| -v).collect())
        .collect();
    let dims: Vec<usize> = atoms.iter().map(Atoms::len).collect();
    let axes: Vec<Vec<f64>> = atoms.iter().map(|a| a.positions.clone()).collect();
    let kernel = Kernel::new(dims.clone(), cost.sample(&axes));
    let w: Vec<&[f64]> = atoms.iter().map(|a| a.weights.as_slice()).collect();
    let op = assemble(&kernel, &psi_of(&sol.phi, &w), &dims, w.iter().map(|x| x.to_vec()).collect())?;
    let pinned = op.solve_pinned(&rhs)?;
    let nodes = (0..n)
        .map(|i| {
            af.conditional(cost, i, &cost.grids()[i].nodes(), Some(&pinned.h))
                .into_iter()
                .map(|v| -v)
                .collect()
        })
        .collect();
    Ok(TimeDerivative {
        nodes,
        atoms: pinned.h,
        lambda: pinned.lambda,
    })
}
