//! Independent reference computations used by the integration tests.
//!
//! Nothing here calls into the solver, the quotient norms or the Gram
//! assembly of the library; tensors are walked with plain index loops.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use schrodinger_map::measure::{DiscreteMeasure, Grid1D, MeasureFamily};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Row-major multi-index of `flat` (last axis fastest).
pub fn unravel(mut flat: usize, dims: &[usize]) -> Vec<usize> {
    let mut idx = vec![0; dims.len()];
    for a in (0..dims.len()).rev() {
        idx[a] = flat % dims[a];
        flat /= dims[a];
    }
    idx
}

/// Mass `e^{Σφ - c} Π w` of every tensor entry.
pub fn naive_coupling(phi: &[Vec<f64>], w: &[Vec<f64>], c: &[f64]) -> Vec<f64> {
    let dims: Vec<usize> = w.iter().map(Vec::len).collect();
    (0..c.len())
        .map(|flat| {
            let idx = unravel(flat, &dims);
            let mut s = -c[flat];
            let mut p = 1.0;
            for (i, &a) in idx.iter().enumerate() {
                s += phi[i][a];
                p *= w[i][a];
            }
            p * s.exp()
        })
        .collect()
}

pub fn naive_marginals(p: &[f64], dims: &[usize]) -> Vec<Vec<f64>> {
    let mut m: Vec<Vec<f64>> = dims.iter().map(|n| vec![0.0; *n]).collect();
    for (flat, v) in p.iter().enumerate() {
        for (i, a) in unravel(flat, dims).into_iter().enumerate() {
            m[i][a] += v;
        }
    }
    m
}

/// `Σ ∫ φ_i dμ_i + 1 - ∫ e^{Σφ - c} dμ`.
pub fn dual_objective(phi: &[Vec<f64>], w: &[Vec<f64>], c: &[f64]) -> f64 {
    let lin: f64 = phi.iter().zip(w).map(|(p, w)| p.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).sum();
    lin + 1.0 - naive_coupling(phi, w, c).iter().sum::<f64>()
}

/// `∫ c dγ + Σ γ log(γ / Π w)`, the primal objective at a coupling.
pub fn primal_objective(p: &[f64], w: &[Vec<f64>], c: &[f64]) -> f64 {
    let dims: Vec<usize> = w.iter().map(Vec::len).collect();
    let mut total = 0.0;
    for (flat, &g) in p.iter().enumerate() {
        if g <= 0.0 {
            continue;
        }
        let prod: f64 = unravel(flat, &dims).iter().enumerate().map(|(i, &a)| w[i][a]).product();
        total += g * c[flat] + g * (g / prod).ln();
    }
    total
}

/// Damped Newton ascent on the dual with `φ_i[0] = 0` pinned for `i ≥ 1`.
/// Needs strictly positive weights.
pub fn newton_dual(w: &[Vec<f64>], c: &[f64]) -> (Vec<Vec<f64>>, f64) {
    let dims: Vec<usize> = w.iter().map(Vec::len).collect();
    let n_marg = dims.len();
    // Free coordinates: every entry of φ_0 and entries 1.. of the others.
    let mut free = Vec::new();
    for (i, n) in dims.iter().enumerate() {
        for a in usize::from(i > 0)..*n {
            free.push((i, a));
        }
    }
    let pos = |i: usize, a: usize| free.iter().position(|&(j, b)| j == i && b == a);
    let mut phi: Vec<Vec<f64>> = dims.iter().map(|n| vec![0.0; *n]).collect();
    for _ in 0..200 {
        let p = naive_coupling(&phi, w, c);
        let marg = naive_marginals(&p, &dims);
        let g = DVector::from_iterator(free.len(), free.iter().map(|&(i, a)| w[i][a] - marg[i][a]));
        if g.amax() < 1e-15 {
            break;
        }
        let mut m = DMatrix::<f64>::zeros(free.len(), free.len());
        for (flat, v) in p.iter().enumerate() {
            let idx = unravel(flat, &dims);
            for i in 0..n_marg {
                let Some(r) = pos(i, idx[i]) else { continue };
                for j in 0..n_marg {
                    if let Some(s) = pos(j, idx[j]) {
                        m[(r, s)] += v;
                    }
                }
            }
        }
        let d = m.lu().solve(&g).expect("Newton system is regular for positive weights");
        let f0 = dual_objective(&phi, w, c);
        let mut step = 1.0;
        loop {
            let mut trial = phi.clone();
            for (k, &(i, a)) in free.iter().enumerate() {
                trial[i][a] += step * d[k];
            }
            if dual_objective(&trial, w, c) >= f0 - 1e-15 || step < 1e-12 {
                phi = trial;
                break;
            }
            step *= 0.5;
        }
    }
    let v = dual_objective(&phi, w, c);
    (phi, v)
}

fn combinations(n: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if cur.len() == k {
            f(cur);
            return;
        }
        for s in start..n {
            if n - s < k - cur.len() {
                break;
            }
            cur.push(s);
            go(s + 1, n, k, cur, f);
            cur.pop();
        }
    }
    go(0, n, k, &mut Vec::new(), f);
}

/// Unregularized transport value by enumerating every basic solution of
/// the transportation polytope. Small sizes only.
pub fn lp_transport_value(a: &[f64], b: &[f64], cost: &[f64]) -> f64 {
    let (n, m) = (a.len(), b.len());
    let rank = n + m - 1;
    let mut best = f64::INFINITY;
    combinations(n * m, rank, &mut |cells| {
        let mut mat = DMatrix::<f64>::zeros(rank, rank);
        let mut rhs = DVector::<f64>::zeros(rank);
        for r in 0..n {
            rhs[r] = a[r];
        }
        for col in 0..m - 1 {
            rhs[n + col] = b[col];
        }
        for (k, &cell) in cells.iter().enumerate() {
            let (i, j) = (cell / m, cell % m);
            mat[(i, k)] = 1.0;
            if j < m - 1 {
                mat[(n + j, k)] = 1.0;
            }
        }
        let lu = mat.lu();
        if lu.determinant().abs() < 1e-12 {
            return;
        }
        let Some(x) = lu.solve(&rhs) else { return };
        if x.iter().any(|v| *v < -1e-12) {
            return;
        }
        let v: f64 = cells.iter().zip(x.iter()).map(|(&cell, x)| cost[cell] * x).sum();
        best = best.min(v);
    });
    best
}

/// Sup of the finite-difference derivatives of orders `1..=k`, with the
/// documented stencils (second-order one-sided at the ends).
pub fn fd_derivative_part(v: &[f64], h: f64, k: usize) -> f64 {
    let n = v.len();
    let mut best = 0.0f64;
    if k >= 1 {
        for i in 0..n {
            let d = if i == 0 {
                (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h)
            } else if i == n - 1 {
                (3.0 * v[n - 1] - 4.0 * v[n - 2] + v[n - 3]) / (2.0 * h)
            } else {
                (v[i + 1] - v[i - 1]) / (2.0 * h)
            };
            best = best.max(d.abs());
        }
    }
    if k >= 2 {
        for i in 0..n {
            let d = if i == 0 {
                (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h)
            } else if i == n - 1 {
                (2.0 * v[n - 1] - 5.0 * v[n - 2] + 4.0 * v[n - 3] - v[n - 4]) / (h * h)
            } else {
                (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h)
            };
            best = best.max(d.abs());
        }
    }
    best
}

fn sup_shifted(v: &[f64], kappa: f64) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max((x - kappa).abs()))
}

/// `Σ_i max(sup |f_i - κ_i|, D_i)` evaluated by brute force.
pub fn gauge_objective(f: &[Vec<f64>], deriv: &[f64], kappa: &[f64]) -> f64 {
    f.iter().zip(deriv).zip(kappa).map(|((v, d), k)| sup_shifted(v, *k).max(*d)).sum()
}

/// Exact `inf_{Σκ=0} Σ_i max(sup |f_i - κ_i|, D_i)` for two or three
/// components, by evaluating the convex piecewise-linear objective at every
/// vertex of its breakpoint arrangement.
pub fn gauge_search(f: &[Vec<f64>], deriv: &[f64]) -> f64 {
    let kinks: Vec<Vec<f64>> = f
        .iter()
        .zip(deriv)
        .map(|(v, d)| {
            let lo = v.iter().fold(f64::INFINITY, |m, x| m.min(*x));
            let hi = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
            let (mid, r) = (0.5 * (hi + lo), 0.5 * (hi - lo));
            let mut k = vec![mid];
            if *d > r {
                k.push(mid + (d - r));
                k.push(mid - (d - r));
            }
            k
        })
        .collect();
    let mut best = f64::INFINITY;
    match f.len() {
        2 => {
            let cands = kinks[0].iter().copied().chain(kinks[1].iter().map(|b| -b));
            for k1 in cands {
                best = best.min(gauge_objective(f, deriv, &[k1, -k1]));
            }
        }
        3 => {
            let mut eval = |k1: f64, k2: f64| best = best.min(gauge_objective(f, deriv, &[k1, k2, -k1 - k2]));
            for &a in &kinks[0] {
                for &b in &kinks[1] {
                    eval(a, b);
                }
                for &c in &kinks[2] {
                    eval(a, -c - a);
                }
            }
            for &b in &kinks[1] {
                for &c in &kinks[2] {
                    eval(-c - b, b);
                }
            }
        }
        n => panic!("gauge search for {n} components"),
    }
    best
}

/// `‖⊕h‖²` in `L²(μ_1 ⊗ … ⊗ μ_N)` by summing over the product grid.
pub fn direct_sum_norm_sq(h: &[Vec<f64>], w: &[Vec<f64>]) -> f64 {
    let dims: Vec<usize> = w.iter().map(Vec::len).collect();
    let total: usize = dims.iter().product();
    (0..total)
        .map(|flat| {
            let idx = unravel(flat, &dims);
            let s: f64 = idx.iter().enumerate().map(|(i, &a)| h[i][a]).sum();
            let p: f64 = idx.iter().enumerate().map(|(i, &a)| w[i][a]).product();
            p * s * s
        })
        .sum()
}

/// `h (I + D1ᵀD1 [+ D2ᵀD2])` assembled entry by entry.
pub fn gram_oracle(n: usize, h: f64, p: usize) -> DMatrix<f64> {
    let mut g = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        g[(i, i)] += 1.0;
    }
    for r in 0..n - 1 {
        let s = 1.0 / (h * h);
        g[(r, r)] += s;
        g[(r + 1, r + 1)] += s;
        g[(r, r + 1)] -= s;
        g[(r + 1, r)] -= s;
    }
    if p == 2 {
        let s = 1.0 / (h * h * h * h);
        for r in 0..n - 2 {
            let st = [1.0, -2.0, 1.0];
            for a in 0..3 {
                for b in 0..3 {
                    g[(r + a, r + b)] += s * st[a] * st[b];
                }
            }
        }
    }
    g * h
}

/// Conjugate gradients for an SPD system.
pub fn conjugate_gradient(a: &DMatrix<f64>, b: &[f64]) -> Vec<f64> {
    let b = DVector::from_column_slice(b);
    let mut x = DVector::<f64>::zeros(b.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    let stop = 1e-30 * b.dot(&b).max(1e-300);
    for _ in 0..20 * b.len() {
        if rr <= stop {
            break;
        }
        let ap = a * &p;
        let alpha = rr / p.dot(&ap);
        x += alpha * &p;
        r -= alpha * &ap;
        let next = r.dot(&r);
        p = &r + (next / rr) * &p;
        rr = next;
    }
    x.iter().copied().collect()
}

/// Positive weights from a random mixture of bumps plus a floor.
pub fn random_measure(rng: &mut ChaCha8Rng, grid: Grid1D) -> DiscreteMeasure {
    let k = rng.gen_range(1..4);
    let params: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| {
            (
                rng.gen_range(grid.lo()..grid.hi()),
                rng.gen_range(0.05..0.3) * (grid.hi() - grid.lo()),
                rng.gen_range(0.2..1.0),
            )
        })
        .collect();
    let floor = 1e-3;
    DiscreteMeasure::from_density(grid, |x| {
        floor + params.iter().map(|(c, w, a)| a * (-0.5 * ((x - c) / w).powi(2)).exp()).sum::<f64>()
    })
    .unwrap()
}

pub fn random_family(rng: &mut ChaCha8Rng, grids: &[Grid1D]) -> MeasureFamily {
    MeasureFamily::new(grids.iter().map(|g| random_measure(rng, *g)).collect()).unwrap()
}

pub fn weights(mu: &MeasureFamily) -> Vec<Vec<f64>> {
    mu.members().iter().map(|m| m.weights().to_vec()).collect()
}
