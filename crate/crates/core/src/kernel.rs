//! Log-domain contractions of `exp(Σ ψ_j(x_j) - c(x))` over product grids.
//!
//! `ψ_j = φ_j + log w_j` folds the measure weights into the potentials, with
//! `-∞` for empty cells. The stabilized kernel `exp(-(c - min c))` is formed
//! once; each contraction rescales the per-axis factors by their maxima so no
//! exponential overflows. Very oscillating costs fall back to per-entry
//! log-sum-exp.

use crate::cost::strides;

const OSC_LIMIT: f64 = 500.0;

#[derive(Clone, Debug)]
pub(crate) struct Kernel {
    dims: Vec<usize>,
    strides: Vec<usize>,
    c: Vec<f64>,
    k: Option<Vec<f64>>,
    cmin: f64,
}

/// `exp(v - max v)` with the maximum; `-∞` entries map to zero.
fn scaled_exp(v: &[f64]) -> (Vec<f64>, f64) {
    let m = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    if m == f64::NEG_INFINITY {
        return (vec![0.0; v.len()], m);
    }
    (v.iter().map(|x| (x - m).exp()).collect(), m)
}

pub(crate) fn log_weights(w: &[f64]) -> Vec<f64> {
    w.iter()
        .map(|x| if *x > 0.0 { x.ln() } else { f64::NEG_INFINITY })
        .collect()
}

impl Kernel {
    pub fn new(dims: Vec<usize>, c: Vec<f64>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), c.len());
        let cmin = c.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        let cmax = c.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let k = (cmax - cmin <= OSC_LIMIT).then(|| c.iter().map(|v| (-(v - cmin)).exp()).collect());
        Self {
            strides: strides(&dims),
            dims,
            c,
            k,
            cmin,
        }
    }

    pub fn cost(&self) -> &[f64] {
        &self.c
    }

    /// Multi-index of a flat position.
    fn index(&self, flat: usize, axis: usize) -> usize {
        (flat / self.strides[axis]) % self.dims[axis]
    }

    /// `log Σ_{x_{-axis}} exp(Σ_{j≠axis} ψ_j - c)` for every node of `axis`.
    pub fn log_contract(&self, axis: usize, psi: &[Vec<f64>]) -> Vec<f64> {
        match &self.k {
            Some(k) => self.contract_scaled(axis, psi, k),
            None => self.contract_lse(axis, psi),
        }
    }

    fn contract_scaled(&self, axis: usize, psi: &[Vec<f64>], k: &[f64]) -> Vec<f64> {
        let n = self.dims.len();
        let mut shift = -self.cmin;
        let mut u: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (j, p) in psi.iter().enumerate() {
            if j == axis {
                u.push(Vec::new());
                continue;
            }
            let (e, m) = scaled_exp(p);
            shift += m;
            u.push(e);
        }
        let mut r = vec![0.0; self.dims[axis]];
        match (n, axis) {
            (2, 0) => {
                let n1 = self.dims[1];
                for (a, ra) in r.iter_mut().enumerate() {
                    let row = &k[a * n1..(a + 1) * n1];
                    let mut s = 0.0;
                    for (kv, uv) in row.iter().zip(&u[1]) {
                        s += kv * uv;
                    }
                    *ra = s;
                }
            }
            (2, 1) => {
                let n1 = self.dims[1];
                for (a, ua) in u[0].iter().enumerate() {
                    if *ua == 0.0 {
                        continue;
                    }
                    let row = &k[a * n1..(a + 1) * n1];
                    for (rb, kv) in r.iter_mut().zip(row) {
                        *rb += ua * kv;
                    }
                }
            }
            _ => {
                for (flat, kv) in k.iter().enumerate() {
                    let mut w = *kv;
                    for (j, uj) in u.iter().enumerate() {
                        if j != axis {
                            w *= uj[self.index(flat, j)];
                        }
                    }
                    r[self.index(flat, axis)] += w;
                }
            }
        }
        r.into_iter().map(|v| v.ln() + shift).collect()
    }

    fn contract_lse(&self, axis: usize, psi: &[Vec<f64>]) -> Vec<f64> {
        let na = self.dims[axis];
        let mut mx = vec![f64::NEG_INFINITY; na];
        let expo = |flat: usize| -> f64 {
            let mut e = -self.c[flat];
            for (j, p) in psi.iter().enumerate() {
                if j != axis {
                    e += p[self.index(flat, j)];
                }
            }
            e
        };
        for flat in 0..self.c.len() {
            let a = self.index(flat, axis);
            mx[a] = mx[a].max(expo(flat));
        }
        let mut s = vec![0.0; na];
        for flat in 0..self.c.len() {
            let a = self.index(flat, axis);
            if mx[a] > f64::NEG_INFINITY {
                s[a] += (expo(flat) - mx[a]).exp();
            }
        }
        s.iter().zip(&mx).map(|(v, m)| v.ln() + m).collect()
    }

    /// Per-entry exponent `Σ_j ψ_j(x_j) - c(x)`.
    pub fn log_coupling(&self, psi: &[Vec<f64>]) -> Vec<f64> {
        (0..self.c.len())
            .map(|flat| {
                let mut e = -self.c[flat];
                for (j, p) in psi.iter().enumerate() {
                    e += p[self.index(flat, j)];
                }
                e
            })
            .collect()
    }

    /// `log Σ_x exp(Σ_j ψ_j - c)`.
    pub fn log_total(&self, psi: &[Vec<f64>]) -> f64 {
        let l = self.log_coupling(psi);
        log_sum_exp(&l)
    }

    /// For each node `a` of `axis`, the mean of `f` under the conditional
    /// weights `exp(Σ_{j≠axis} ψ_j - c)` restricted to `x_axis = a`.
    pub fn conditional_mean(&self, axis: usize, psi: &[Vec<f64>], f: &[f64]) -> Vec<f64> {
        let na = self.dims[axis];
        let mut e = vec![0.0; self.c.len()];
        let mut mx = vec![f64::NEG_INFINITY; na];
        for (flat, ef) in e.iter_mut().enumerate() {
            let mut v = -self.c[flat];
            for (j, p) in psi.iter().enumerate() {
                if j != axis {
                    v += p[self.index(flat, j)];
                }
            }
            *ef = v;
            let a = self.index(flat, axis);
            mx[a] = mx[a].max(v);
        }
        let mut num = vec![0.0; na];
        let mut den = vec![0.0; na];
        for (flat, ef) in e.iter().enumerate() {
            let a = self.index(flat, axis);
            if mx[a] == f64::NEG_INFINITY {
                continue;
            }
            let w = (ef - mx[a]).exp();
            num[a] += w * f[flat];
            den[a] += w;
        }
        num.iter().zip(&den).map(|(n, d)| n / d).collect()
    }

    /// Conditional pair laws `P_j[a * n_j + b] = Q(x_j = b | x_axis = a)` under
    /// the weights `exp(Σ_{k≠axis} ψ_k - c)`; empty for `j = axis`.
    pub fn conditional_pairs(&self, axis: usize, psi: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let na = self.dims[axis];
        let mut e = vec![0.0; self.c.len()];
        let mut mx = vec![f64::NEG_INFINITY; na];
        for (flat, ef) in e.iter_mut().enumerate() {
            let mut v = -self.c[flat];
            for (j, p) in psi.iter().enumerate() {
                if j != axis {
                    v += p[self.index(flat, j)];
                }
            }
            *ef = v;
            let a = self.index(flat, axis);
            mx[a] = mx[a].max(v);
        }
        let mut den = vec![0.0; na];
        let mut out: Vec<Vec<f64>> = self
            .dims
            .iter()
            .enumerate()
            .map(|(j, nj)| if j == axis { Vec::new() } else { vec![0.0; na * nj] })
            .collect();
        for (flat, ef) in e.iter().enumerate() {
            let a = self.index(flat, axis);
            if mx[a] == f64::NEG_INFINITY {
                continue;
            }
            let w = (ef - mx[a]).exp();
            den[a] += w;
            for (j, o) in out.iter_mut().enumerate() {
                if j != axis {
                    o[a * self.dims[j] + self.index(flat, j)] += w;
                }
            }
        }
        for (j, o) in out.iter_mut().enumerate() {
            if j == axis {
                continue;
            }
            let nj = self.dims[j];
            for (a, d) in den.iter().enumerate() {
                for v in &mut o[a * nj..(a + 1) * nj] {
                    *v /= d;
                }
            }
        }
        out
    }

    pub fn axis_index(&self, flat: usize, axis: usize) -> usize {
        self.index(flat, axis)
    }
}

pub(crate) fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().fold(f64::NEG_INFINITY, |m, x| m.max(*x));
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = v.iter().map(|x| (x - m).exp()).sum();
    s.ln() + m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(dims: &[usize], c: &[f64], axis: usize, psi: &[Vec<f64>]) -> Vec<f64> {
        let st = strides(dims);
        let mut s = vec![0.0; dims[axis]];
        for (flat, cv) in c.iter().enumerate() {
            let mut e = -cv;
            for (j, p) in psi.iter().enumerate() {
                if j != axis {
                    e += p[(flat / st[j]) % dims[j]];
                }
            }
            s[(flat / st[axis]) % dims[axis]] += e.exp();
        }
        s.into_iter().map(f64::ln).collect()
    }

    #[test]
    fn contractions_match_naive_sums() {
        let dims = vec![3, 4, 2];
        let c: Vec<f64> = (0..24).map(|k| ((k * 7 % 5) as f64) * 0.3 - 0.2).collect();
        let psi = vec![
            vec![0.1, -0.4, 0.2],
            vec![0.0, 0.5, -1.0, f64::NEG_INFINITY],
            vec![0.3, -0.3],
        ];
        let stable = Kernel::new(dims.clone(), c.clone());
        let mut lse = stable.clone();
        lse.k = None;
        for axis in 0..3 {
            let want = naive(&dims, &c, axis, &psi);
            for (a, b) in stable.log_contract(axis, &psi).iter().zip(&want) {
                assert!((a - b).abs() < 1e-13);
            }
            for (a, b) in lse.log_contract(axis, &psi).iter().zip(&want) {
                assert!((a - b).abs() < 1e-13);
            }
        }
        let dims2 = vec![4, 3];
        let c2: Vec<f64> = (0..12).map(|k| (k as f64).sin()).collect();
        let psi2 = vec![vec![0.2, 0.0, f64::NEG_INFINITY, 1.0], vec![-0.5, 0.1, 0.7]];
        let k2 = Kernel::new(dims2.clone(), c2.clone());
        for axis in 0..2 {
            let want = naive(&dims2, &c2, axis, &psi2);
            for (a, b) in k2.log_contract(axis, &psi2).iter().zip(&want) {
                assert!((a - b).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn huge_oscillation_uses_lse() {
        let k = Kernel::new(vec![2, 2], vec![0.0, 900.0, 900.0, 0.0]);
        assert!(k.k.is_none());
        let r = k.log_contract(0, &[vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12);
    }
}
