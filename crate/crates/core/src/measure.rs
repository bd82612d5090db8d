//! Grids, histogram measures, transport plans and one-dimensional transport.
//!
//! A [`DiscreteMeasure`] stores cell masses on a [`Grid1D`]; mass sitting in
//! cell `j` is located at the cell center `nodes[j]`. Pushforwards and
//! displacement interpolation bin off-grid mass onto the two neighbouring
//! nodes with linear weights, which preserves total mass and first moment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SUM_TOL: f64 = 1e-12;
const PLAN_TOL: f64 = 1e-10;
const SNAP_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridSpec", into = "GridSpec")]
pub struct Grid1D {
    lo: f64,
    hi: f64,
    n: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl TryFrom<GridSpec> for Grid1D {
    type Error = Error;
    fn try_from(s: GridSpec) -> Result<Self> {
        Grid1D::new(s.lo, s.hi, s.n)
    }
}

impl From<Grid1D> for GridSpec {
    fn from(g: Grid1D) -> Self {
        GridSpec {
            lo: g.lo,
            hi: g.hi,
            n: g.n,
        }
    }
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::InvalidGrid(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        if n < 2 {
            return Err(Error::InvalidGrid(format!("need n >= 2, got {n}")));
        }
        Ok(Self { lo, hi, n })
    }

    /// Unit interval with `n` cells.
    pub fn unit(n: usize) -> Result<Self> {
        Self::new(0.0, 1.0, n)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.n as f64
    }

    pub fn volume(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn node(&self, j: usize) -> f64 {
        self.lo + (j as f64 + 0.5) * self.spacing()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.node(j)).collect()
    }

    pub fn same_interval(&self, other: &Grid1D) -> bool {
        let scale = 1.0 + self.lo.abs().max(self.hi.abs());
        (self.lo - other.lo).abs() <= 1e-12 * scale && (self.hi - other.hi).abs() <= 1e-12 * scale
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo && x <= self.hi
    }

    pub(crate) fn check_interval(&self, other: &Grid1D) -> Result<()> {
        if self.same_interval(other) {
            Ok(())
        } else {
            Err(Error::DomainMismatch {
                lo_a: self.lo,
                hi_a: self.hi,
                lo_b: other.lo,
                hi_b: other.hi,
            })
        }
    }

    /// Splits a unit mass at `x` between the two nearest nodes with linear
    /// weights. Points outside the node hull go entirely to the end node.
    pub(crate) fn linear_split(&self, x: f64) -> (usize, usize, f64) {
        let h = self.spacing();
        let f = (x - self.node(0)) / h;
        if f <= 0.0 {
            return (0, 0, 0.0);
        }
        let last = self.n - 1;
        if f >= last as f64 {
            return (last, last, 0.0);
        }
        let mut j = f.floor() as usize;
        let mut w = f - j as f64;
        if w < SNAP_TOL {
            w = 0.0;
        } else if w > 1.0 - SNAP_TOL {
            j += 1;
            w = 0.0;
        }
        let k = (j + 1).min(last);
        (j, k, w)
    }
}

/// Deposits point masses onto `grid` by two-cell linear splitting.
fn bin_masses(grid: &Grid1D, points: impl IntoIterator<Item = (f64, f64)>) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (x, m) in points {
        if m == 0.0 {
            continue;
        }
        let (j, k, w) = grid.linear_split(x);
        if w == 0.0 {
            out[j] += m;
        } else {
            out[j] += (1.0 - w) * m;
            out[k] += w * m;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    grid: Grid1D,
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(grid: Grid1D, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != grid.len() {
            return Err(Error::InvalidMeasure(format!(
                "{} weights for a grid of {} cells",
                weights.len(),
                grid.len()
            )));
        }
        if let Some((j, w)) = weights
            .iter()
            .enumerate()
            .find(|(_, w)| !w.is_finite() || **w < 0.0)
        {
            return Err(Error::InvalidMeasure(format!("weight {w} at cell {j}")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidMeasure(format!("total mass {total}")));
        }
        Ok(Self { grid, weights })
    }

    /// Rescales nonnegative masses to total one.
    pub fn from_unnormalized(grid: Grid1D, mut weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidMeasure(format!("cannot normalize mass {total}")));
        }
        weights.iter_mut().for_each(|w| *w /= total);
        Self::new(grid, weights)
    }

    /// Measure with the given density sampled at the nodes.
    pub fn from_density(grid: Grid1D, density: impl Fn(f64) -> f64) -> Result<Self> {
        let h = grid.spacing();
        let w = grid.nodes().into_iter().map(|x| density(x) * h).collect();
        Self::from_unnormalized(grid, w)
    }

    pub fn uniform(grid: Grid1D) -> Self {
        let n = grid.len();
        Self {
            grid,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn dirac(grid: Grid1D, j: usize) -> Result<Self> {
        if j >= grid.len() {
            return Err(Error::InvalidMeasure(format!("node {j} outside grid")));
        }
        let mut w = vec![0.0; grid.len()];
        w[j] = 1.0;
        Ok(Self { grid, weights: w })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Density values `weight / spacing`.
    pub fn density(&self) -> Vec<f64> {
        let h = self.grid.spacing();
        self.weights.iter().map(|w| w / h).collect()
    }

    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    pub fn mean(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * self.grid.node(j))
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| {
                let x = self.grid.node(j);
                w * x * x
            })
            .sum()
    }

    pub fn is_positive(&self) -> bool {
        self.weights.iter().all(|w| *w > 0.0)
    }

    /// Differential entropy `Σ w log(w / h)`; `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        let h = self.grid.spacing();
        self.weights
            .iter()
            .filter(|w| **w > 0.0)
            .map(|w| w * (w / h).ln())
            .sum()
    }

    /// Renormalizes only when binning round-off pushed the mass off one.
    fn from_binned(grid: Grid1D, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            Self::from_unnormalized(grid, weights)
        } else {
            Ok(Self { grid, weights })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureFamily {
    members: Vec<DiscreteMeasure>,
}

impl MeasureFamily {
    pub fn new(members: Vec<DiscreteMeasure>) -> Result<Self> {
        if members.len() < 2 {
            return Err(Error::FamilyMismatch {
                expected: 2,
                got: members.len(),
            });
        }
        Ok(Self { members })
    }

    pub fn members(&self) -> &[DiscreteMeasure] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn get(&self, i: usize) -> &DiscreteMeasure {
        &self.members[i]
    }

    pub fn grids(&self) -> Vec<Grid1D> {
        self.members.iter().map(|m| *m.grid()).collect()
    }

    pub fn into_members(self) -> Vec<DiscreteMeasure> {
        self.members
    }
}

impl std::ops::Index<usize> for MeasureFamily {
    type Output = DiscreteMeasure;
    fn index(&self, i: usize) -> &DiscreteMeasure {
        &self.members[i]
    }
}

/// A coupling between two histograms, stored row-major (source × target).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransportPlan {
    source: DiscreteMeasure,
    target: DiscreteMeasure,
    weights: Vec<f64>,
}

impl TransportPlan {
    pub fn new(source: DiscreteMeasure, target: DiscreteMeasure, weights: Vec<f64>) -> Result<Self> {
        source.grid().check_interval(target.grid())?;
        let (ns, nt) = (source.len(), target.len());
        if weights.len() != ns * nt {
            return Err(Error::InfeasiblePlan(format!(
                "expected {}x{} entries, got {}",
                ns,
                nt,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InfeasiblePlan("negative or non-finite entry".into()));
        }
        let plan = Self {
            source,
            target,
            weights,
        };
        let rows = plan.row_sums();
        let cols = plan.col_sums();
        for (i, (r, w)) in rows.iter().zip(plan.source.weights()).enumerate() {
            if (r - w).abs() > PLAN_TOL {
                return Err(Error::InfeasiblePlan(format!("row {i} sums to {r}, marginal {w}")));
            }
        }
        for (j, (c, w)) in cols.iter().zip(plan.target.weights()).enumerate() {
            if (c - w).abs() > PLAN_TOL {
                return Err(Error::InfeasiblePlan(format!(
                    "column {j} sums to {c}, marginal {w}"
                )));
            }
        }
        Ok(plan)
    }

    /// The plan that leaves every atom in place.
    pub fn diagonal(mu: &DiscreteMeasure) -> Self {
        let n = mu.len();
        let mut w = vec![0.0; n * n];
        for (j, m) in mu.weights().iter().enumerate() {
            w[j * n + j] = *m;
        }
        Self {
            source: mu.clone(),
            target: mu.clone(),
            weights: w,
        }
    }

    /// The independent coupling `mu ⊗ nu`.
    pub fn product(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<Self> {
        mu.grid().check_interval(nu.grid())?;
        let w = mu
            .weights()
            .iter()
            .flat_map(|a| nu.weights().iter().map(move |b| a * b))
            .collect();
        Ok(Self {
            source: mu.clone(),
            target: nu.clone(),
            weights: w,
        })
    }

    /// Moves the mass of cell `j` to cell `j + shift`; the cells pushed past
    /// the boundary must be empty.
    pub fn translation(mu: &DiscreteMeasure, shift: isize) -> Result<Self> {
        let n = mu.len() as isize;
        let mut target = vec![0.0; mu.len()];
        let mut w = vec![0.0; mu.len() * mu.len()];
        for (j, m) in mu.weights().iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            let k = j as isize + shift;
            if k < 0 || k >= n {
                return Err(Error::InfeasiblePlan(format!(
                    "cell {j} carries mass {m} but is shifted off the grid"
                )));
            }
            target[k as usize] += m;
            w[j * mu.len() + k as usize] = *m;
        }
        let target = DiscreteMeasure::new(*mu.grid(), target)?;
        Ok(Self {
            source: mu.clone(),
            target,
            weights: w,
        })
    }

    pub fn source(&self) -> &DiscreteMeasure {
        &self.source
    }

    pub fn target(&self) -> &DiscreteMeasure {
        &self.target
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.source.len(), self.target.len())
    }

    pub fn row_sums(&self) -> Vec<f64> {
        let nt = self.target.len();
        self.weights
            .chunks(nt)
            .map(|row| {
                let mut s = 0.0;
                for v in row {
                    s += v;
                }
                s
            })
            .collect()
    }

    pub fn col_sums(&self) -> Vec<f64> {
        let nt = self.target.len();
        let mut out = vec![0.0; nt];
        for row in self.weights.chunks(nt) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        out
    }

    /// Nonzero entries as `(source index, target index, mass)`.
    pub fn entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        let nt = self.target.len();
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w > 0.0)
            .map(move |(k, w)| (k / nt, k % nt, *w))
    }

    /// `∫ |y - x|² dγ`.
    pub fn quadratic_cost(&self) -> f64 {
        let sg = self.source.grid();
        let tg = self.target.grid();
        self.entries()
            .map(|(i, j, m)| {
                let d = tg.node(j) - sg.node(i);
                m * d * d
            })
            .sum()
    }

    /// Exact displaced atoms `(1 - t) x + t y` carrying the plan masses.
    pub fn displaced_atoms(&self, t: f64) -> Result<Atoms> {
        check_time(t)?;
        let sg = self.source.grid();
        let tg = self.target.grid();
        let mut atoms = Atoms::default();
        for (i, j, m) in self.entries() {
            let (x, y) = (sg.node(i), tg.node(j));
            atoms.positions.push((1.0 - t) * x + t * y);
            atoms.weights.push(m);
            atoms.velocities.push(y - x);
        }
        Ok(atoms)
    }
}

fn check_time(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidTime(t))
    }
}

/// Finitely supported measure on the line with the velocity each atom moves
/// with along a displacement path (zero for static measures).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Atoms {
    pub positions: Vec<f64>,
    pub weights: Vec<f64>,
    pub velocities: Vec<f64>,
}

impl Atoms {
    /// Atoms at the grid nodes, zero-mass cells included.
    pub fn from_measure(mu: &DiscreteMeasure) -> Self {
        Self {
            positions: mu.grid().nodes(),
            weights: mu.weights().to_vec(),
            velocities: vec![0.0; mu.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanFamily {
    members: Vec<TransportPlan>,
}

impl PlanFamily {
    pub fn new(members: Vec<TransportPlan>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::FamilyMismatch {
                expected: 1,
                got: 0,
            });
        }
        Ok(Self { members })
    }

    pub fn diagonal(mu: &MeasureFamily) -> Self {
        Self {
            members: mu.members().iter().map(TransportPlan::diagonal).collect(),
        }
    }

    /// Optimal quantile couplings between matching members.
    pub fn optimal(a: &MeasureFamily, b: &MeasureFamily) -> Result<Self> {
        check_len(a.len(), b.len())?;
        let members = a
            .members()
            .iter()
            .zip(b.members())
            .map(|(m, n)| optimal_plan_1d(m, n))
            .collect::<Result<_>>()?;
        Ok(Self { members })
    }

    pub fn members(&self) -> &[TransportPlan] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn sources(&self) -> Result<MeasureFamily> {
        MeasureFamily::new(self.members.iter().map(|p| p.source().clone()).collect())
    }

    pub fn targets(&self) -> Result<MeasureFamily> {
        MeasureFamily::new(self.members.iter().map(|p| p.target().clone()).collect())
    }

    pub fn grids(&self) -> Vec<Grid1D> {
        self.members.iter().map(|p| *p.source().grid()).collect()
    }

    pub fn displaced_atoms(&self, t: f64) -> Result<Vec<Atoms>> {
        self.members.iter().map(|p| p.displaced_atoms(t)).collect()
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::FamilyMismatch { expected, got })
    }
}

/// Monotone (north-west corner) coupling of two histograms on a shared
/// interval. Nodes are sorted, so this is the optimal plan for any convex
/// cost of `y - x`.
pub fn optimal_plan_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportPlan> {
    mu.grid().check_interval(nu.grid())?;
    let (a, b) = (mu.weights(), nu.weights());
    let nt = b.len();
    let mut w = vec![0.0; a.len() * nt];
    for (i, j, m) in monotone_pairs(a, b) {
        w[i * nt + j] += m;
    }
    Ok(TransportPlan {
        source: mu.clone(),
        target: nu.clone(),
        weights: w,
    })
}

fn monotone_pairs(a: &[f64], b: &[f64]) -> Vec<(usize, usize, f64)> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0], b[0]);
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        if m > 0.0 {
            out.push((i, j, m));
        }
        ra -= m;
        rb -= m;
        if ra <= rb {
            i += 1;
            if i < a.len() {
                ra = a[i];
            }
        } else {
            j += 1;
            if j < b.len() {
                rb = b[j];
            }
        }
    }
    out
}

/// Exact quadratic Wasserstein distance between histograms on one interval.
pub fn wasserstein2_1d(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    mu.grid().check_interval(nu.grid())?;
    let (gm, gn) = (mu.grid(), nu.grid());
    let total: f64 = monotone_pairs(mu.weights(), nu.weights())
        .into_iter()
        .map(|(i, j, m)| {
            let d = gm.node(i) - gn.node(j);
            m * d * d
        })
        .sum();
    Ok(total.max(0.0).sqrt())
}

/// `W₂` between the piecewise-constant densities that spread each weight
/// uniformly over its cell `[x_j - h/2, x_j + h/2]`.
///
/// Unlike [`wasserstein2_1d`] this is quadratic in small weight
/// perturbations on a common grid.
pub fn wasserstein2_histogram(mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<f64> {
    mu.grid().check_interval(nu.grid())?;
    let quantile = |m: &DiscreteMeasure, cell: usize, start: f64, s: f64| {
        let g = m.grid();
        let w = m.weights()[cell];
        let frac = if w > 0.0 { ((s - start) / w).clamp(0.0, 1.0) } else { 0.5 };
        g.node(cell) + g.spacing() * (frac - 0.5)
    };
    let (wa, wb) = (mu.weights(), nu.weights());
    let (mut i, mut j) = (0, 0);
    let (mut ca, mut cb) = (0.0, 0.0);
    let mut s = 0.0;
    let mut total = 0.0;
    while i < wa.len() && j < wb.len() {
        let ea = ca + wa[i];
        let eb = cb + wb[j];
        let e = ea.min(eb);
        if e > s {
            let d0 = quantile(mu, i, ca, s) - quantile(nu, j, cb, s);
            let d1 = quantile(mu, i, ca, e) - quantile(nu, j, cb, e);
            total += (e - s) * (d0 * d0 + d0 * d1 + d1 * d1) / 3.0;
            s = e;
        }
        if ea <= eb {
            ca = ea;
            i += 1;
        } else {
            cb = eb;
            j += 1;
        }
    }
    Ok(total.max(0.0).sqrt())
}

/// `(Σ W₂(aᵢ, bᵢ)²)^{1/2}`.
pub fn product_wasserstein(a: &MeasureFamily, b: &MeasureFamily) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let mut total = 0.0;
    for (m, n) in a.members().iter().zip(b.members()) {
        let w = wasserstein2_1d(m, n)?;
        total += w * w;
    }
    Ok(total.sqrt())
}

/// `Σᵢ ∫ |yᵢ - xᵢ|² dγᵢ`.
pub fn plan_cost(plans: &PlanFamily) -> f64 {
    plans.members().iter().map(TransportPlan::quadratic_cost).sum()
}

/// Where displacement-interpolated mass is binned.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum OutputGrid {
    /// The source grid of each plan.
    #[default]
    Source,
    /// The target grid of each plan.
    Target,
    /// A fixed grid shared by every member.
    Fixed(Grid1D),
}

/// Binned displacement interpolation `((1 - t)π¹ + tπ²)_# γᵢ`.
pub fn displacement_path(plans: &PlanFamily, t: f64, output: OutputGrid) -> Result<MeasureFamily> {
    check_time(t)?;
    let members = plans
        .members()
        .iter()
        .map(|p| {
            let grid = match output {
                OutputGrid::Source => *p.source().grid(),
                OutputGrid::Target => *p.target().grid(),
                OutputGrid::Fixed(g) => g,
            };
            grid.check_interval(p.source().grid())?;
            let (sg, tg) = (p.source().grid(), p.target().grid());
            let w = bin_masses(
                &grid,
                p.entries()
                    .map(|(i, j, m)| ((1.0 - t) * sg.node(i) + t * tg.node(j), m)),
            );
            DiscreteMeasure::from_binned(grid, w)
        })
        .collect::<Result<Vec<_>>>()?;
    MeasureFamily::new(members)
}

/// Mass-preserving pushforward of `mu` by a map given at the nodes. Only
/// nodes carrying mass need to map inside the interval.
pub fn pushforward(mu: &DiscreteMeasure, map_values: &[f64]) -> Result<DiscreteMeasure> {
    let g = mu.grid();
    if map_values.len() != mu.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} map values for {} cells",
            map_values.len(),
            mu.len()
        )));
    }
    for (node, (&value, &w)) in map_values.iter().zip(mu.weights()).enumerate() {
        if w > 0.0 && !(g.contains(value)) {
            return Err(Error::OutOfDomain {
                node,
                value,
                lo: g.lo(),
                hi: g.hi(),
            });
        }
    }
    let w = bin_masses(g, map_values.iter().copied().zip(mu.weights().iter().copied()));
    DiscreteMeasure::from_binned(*g, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid1D {
        Grid1D::unit(n).unwrap()
    }

    #[test]
    fn grid_invariants() {
        let g = grid(8);
        assert_eq!(g.spacing(), 0.125);
        assert!((g.node(0) - 0.0625).abs() < 1e-15);
        assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
        assert!(Grid1D::new(1.0, 0.0, 4).is_err());
        assert!(Grid1D::new(0.0, 1.0, 1).is_err());
    }

    #[test]
    fn measure_rejects_bad_weights() {
        let g = grid(3);
        assert!(DiscreteMeasure::new(g, vec![0.5, 0.5]).is_err());
        assert!(DiscreteMeasure::new(g, vec![0.5, 0.6, -0.1]).is_err());
        assert!(DiscreteMeasure::new(g, vec![0.5, 0.4, 0.0]).is_err());
    }

    #[test]
    fn dirac_distance_is_node_gap() {
        let g = grid(10);
        let a = DiscreteMeasure::dirac(g, 2).unwrap();
        let b = DiscreteMeasure::dirac(g, 7).unwrap();
        let w = wasserstein2_1d(&a, &b).unwrap();
        assert!((w - (g.node(7) - g.node(2))).abs() < 1e-14);
        assert_eq!(wasserstein2_1d(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn mismatched_interval_is_an_error() {
        let a = DiscreteMeasure::uniform(grid(4));
        let b = DiscreteMeasure::uniform(Grid1D::new(0.0, 2.0, 4).unwrap());
        assert!(matches!(wasserstein2_1d(&a, &b), Err(Error::DomainMismatch { .. })));
    }

    #[test]
    fn pythagorean_product_distance() {
        // Diracs on [0, 10] three and four units apart.
        let g = Grid1D::new(0.0, 10.0, 10).unwrap();
        let d = |j| DiscreteMeasure::dirac(g, j).unwrap();
        let a = MeasureFamily::new(vec![d(0), d(0)]).unwrap();
        let b = MeasureFamily::new(vec![d(3), d(4)]).unwrap();
        assert!((product_wasserstein(&a, &b).unwrap() - 5.0).abs() < 1e-12);
        assert_eq!(product_wasserstein(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn plan_cost_examples() {
        let g = Grid1D::new(0.0, 4.0, 4).unwrap();
        let mu = DiscreteMeasure::new(g, vec![0.5, 0.5, 0.0, 0.0]).unwrap();
        let diag = PlanFamily::diagonal(&MeasureFamily::new(vec![mu.clone(), mu.clone()]).unwrap());
        assert_eq!(plan_cost(&diag), 0.0);
        // Half the mass moves two cells (distance 2), half stays.
        let nu = DiscreteMeasure::new(g, vec![0.5, 0.0, 0.0, 0.5]).unwrap();
        let mut w = vec![0.0; 16];
        w[0] = 0.5;
        w[4 + 3] = 0.5;
        let p = TransportPlan::new(mu, nu, w).unwrap();
        assert!((p.quadratic_cost() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn endpoints_reproduce_marginals_bitwise() {
        let g = grid(6);
        let mu = DiscreteMeasure::from_unnormalized(g, vec![1.0, 2.0, 3.0, 0.5, 0.0, 1.0]).unwrap();
        let nu = DiscreteMeasure::from_unnormalized(g, vec![0.2, 0.0, 1.0, 2.0, 3.0, 1.0]).unwrap();
        let p = TransportPlan::product(&mu, &nu).unwrap();
        let plans = PlanFamily::new(vec![p.clone(), optimal_plan_1d(&nu, &mu).unwrap()]).unwrap();
        let at0 = displacement_path(&plans, 0.0, OutputGrid::Source).unwrap();
        let at1 = displacement_path(&plans, 1.0, OutputGrid::Source).unwrap();
        assert_eq!(at0[0].weights(), p.row_sums().as_slice());
        assert_eq!(at1[0].weights(), p.col_sums().as_slice());
        assert!(displacement_path(&plans, 1.5, OutputGrid::Source).is_err());
    }

    #[test]
    fn identity_plan_is_stationary() {
        let g = grid(7);
        let mu = DiscreteMeasure::from_unnormalized(g, vec![1.0, 0.0, 2.0, 3.0, 1.0, 0.5, 0.5]).unwrap();
        let plans = PlanFamily::diagonal(&MeasureFamily::new(vec![mu.clone(), mu.clone()]).unwrap());
        for t in [0.0, 0.3, 0.77, 1.0] {
            let path = displacement_path(&plans, t, OutputGrid::Source).unwrap();
            assert_eq!(path[0].weights(), mu.weights());
        }
    }

    #[test]
    fn pushforward_examples() {
        let g = grid(5);
        let mu = DiscreteMeasure::from_unnormalized(g, vec![1.0, 2.0, 3.0, 4.0, 0.0]).unwrap();
        assert_eq!(pushforward(&mu, &g.nodes()).unwrap(), mu);
        let c = pushforward(&mu, &[g.node(3); 5]).unwrap();
        assert_eq!(c, DiscreteMeasure::dirac(g, 3).unwrap());
        let shifted: Vec<f64> = g.nodes().iter().map(|x| x + g.spacing()).collect();
        let s = pushforward(&mu, &shifted).unwrap();
        for j in 1..5 {
            assert!((s.weights()[j] - mu.weights()[j - 1]).abs() < 1e-15);
        }
        assert_eq!(s.weights()[0], 0.0);
        let bad: Vec<f64> = g.nodes().iter().map(|x| x + 0.5).collect();
        assert!(matches!(pushforward(&mu, &bad), Err(Error::OutOfDomain { .. })));
    }

    #[test]
    fn translation_plan_moves_cells() {
        let g = grid(6);
        let mu = DiscreteMeasure::from_unnormalized(g, vec![1.0, 2.0, 1.0, 0.0, 0.0, 0.0]).unwrap();
        let p = TransportPlan::translation(&mu, 2).unwrap();
        assert_eq!(p.target().weights()[2..5], mu.weights()[0..3]);
        assert!((p.quadratic_cost() - (2.0 * g.spacing()).powi(2)).abs() < 1e-14);
        assert!(TransportPlan::translation(&mu, 4).is_err());
    }
}
