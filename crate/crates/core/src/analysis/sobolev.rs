//! Discrete `H^p` Gram matrices and the dual `H^{-p}` norm of balanced
//! signed measures.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::cost::CostTensor;
use crate::error::{Error, Result};
use crate::measure::{Grid1D, MeasureFamily};
use crate::potential::quotient_ck_norm;
use crate::solver::{SolveOptions, Solver};

/// `⟨f, g⟩_{H^p} ≈ h Σ_{j ≤ p} (D_j f)·(D_j g)` with forward differences.
#[derive(Clone, Debug)]
pub struct SobolevGram {
    pub p: usize,
    pub grid: Grid1D,
    pub gram: DMatrix<f64>,
    cholesky: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl SobolevGram {
    pub fn new(grid: Grid1D, p: usize) -> Result<Self> {
        if !(1..=2).contains(&p) {
            return Err(Error::InvalidArgument(format!("Sobolev order {p} not in {{1, 2}}")));
        }
        let n = grid.len();
        if n < p + 1 {
            return Err(Error::GridTooCoarse {
                order: p,
                needed: p + 1,
                got: n,
            });
        }
        let h = grid.spacing();
        let mut g = DMatrix::<f64>::identity(n, n);
        let d1 = DMatrix::<f64>::from_fn(n - 1, n, |r, c| {
            if c == r + 1 {
                1.0 / h
            } else if c == r {
                -1.0 / h
            } else {
                0.0
            }
        });
        g += d1.transpose() * &d1;
        if p == 2 {
            let d2 = DMatrix::<f64>::from_fn(n - 2, n, |r, c| match c.wrapping_sub(r) {
                0 | 2 => 1.0 / (h * h),
                1 => -2.0 / (h * h),
                _ => 0.0,
            });
            g += d2.transpose() * &d2;
        }
        g *= h;
        let gram = 0.5 * (&g + g.transpose());
        let cholesky = gram
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Singular(vec![gram.symmetric_eigenvalues().min()]))?;
        Ok(Self { p, grid, gram, cholesky })
    }

    /// `‖f‖_{H^p} = (fᵀ G f)^{1/2}`.
    pub fn norm(&self, f: &[f64]) -> f64 {
        let v = DVector::from_column_slice(f);
        v.dot(&(&self.gram * &v)).max(0.0).sqrt()
    }

    /// Riesz representer `G⁻¹ ρ`.
    pub fn representer(&self, rho: &[f64]) -> Vec<f64> {
        self.cholesky.solve(&DVector::from_column_slice(rho)).iter().copied().collect()
    }
}

/// `sup { Σ f_j ρ_j : ‖f‖_{H^p} ≤ 1 } = (ρᵀ G⁻¹ ρ)^{1/2}`.
pub fn hneg_norm(rho: &[f64], gram: &SobolevGram) -> Result<f64> {
    if rho.len() != gram.grid.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} masses for a grid of {} cells",
            rho.len(),
            gram.grid.len()
        )));
    }
    let total: f64 = rho.iter().sum();
    if total.abs() > 1e-12 {
        return Err(Error::Unbalanced(total));
    }
    let r = gram.representer(rho);
    Ok(r.iter().zip(rho).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevRatio {
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

/// `‖S(μ) - S(ν)‖_{C̃^k} / Σ_i ‖μ_i - ν_i‖_{H^{-p}}`.
pub fn lipschitz_ratio_sobolev(cost: &CostTensor, mu: &MeasureFamily, nu: &MeasureFamily, k: usize, p: usize, tol: f64) -> Result<SobolevRatio> {
    if mu.len() != nu.len() {
        return Err(Error::FamilyMismatch {
            expected: mu.len(),
            got: nu.len(),
        });
    }
    let mut denominator = 0.0;
    for (a, b) in mu.members().iter().zip(nu.members()) {
        a.grid().check_interval(b.grid())?;
        if a.len() != b.len() {
            return Err(Error::ShapeMismatch("marginals on different grids".into()));
        }
        let gram = SobolevGram::new(*a.grid(), p)?;
        let mut rho: Vec<f64> = a.weights().iter().zip(b.weights()).map(|(x, y)| x - y).collect();
        // Remove round-off imbalance from two unit masses.
        let s: f64 = rho.iter().sum::<f64>() / rho.len() as f64;
        rho.iter_mut().for_each(|v| *v -= s);
        denominator += hneg_norm(&rho, &gram)?;
    }
    if denominator == 0.0 {
        return Ok(SobolevRatio {
            numerator: 0.0,
            denominator: 0.0,
            ratio: 0.0,
        });
    }
    let solver = Solver::new(cost, SolveOptions::with_tol(tol))?;
    let a = solver.solve(mu)?;
    let b = solver.solve_from(nu, Some(&a.potentials))?;
    let numerator = quotient_ck_norm(&a.potentials.sub(&b.potentials)?, cost.grids(), k)?;
    Ok(SobolevRatio {
        numerator,
        denominator,
        ratio: numerator / denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_is_spd_and_symmetric() {
        let g = SobolevGram::new(Grid1D::unit(20).unwrap(), 2).unwrap();
        let asym = (&g.gram - g.gram.transpose()).abs().max();
        assert!(asym < 1e-12);
        assert!(g.gram.symmetric_eigenvalues().min() > 0.0);
    }

    #[test]
    fn zero_and_symmetry() {
        let g = SobolevGram::new(Grid1D::unit(16).unwrap(), 1).unwrap();
        assert_eq!(hneg_norm(&[0.0; 16], &g).unwrap(), 0.0);
        let mut rho = vec![0.0; 16];
        rho[3] = 0.25;
        rho[9] = -0.25;
        let neg: Vec<f64> = rho.iter().map(|v| -v).collect();
        assert_eq!(hneg_norm(&rho, &g).unwrap(), hneg_norm(&neg, &g).unwrap());
        rho[0] = 0.1;
        assert!(matches!(hneg_norm(&rho, &g), Err(Error::Unbalanced(_))));
    }
}
