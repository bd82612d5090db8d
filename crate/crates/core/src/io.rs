//! CSV and JSON file formats.
//!
//! - measures: `node,weight` rows plus a JSON envelope with the grid;
//! - potentials: `marginal,node,value` rows plus a JSON sidecar with the gauge;
//! - couplings (two marginals): `i,j,x,y,weight`;
//! - tabulated costs: one index column per axis followed by `value`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cost::strides;
use crate::error::{Error, Result};
use crate::measure::{DiscreteMeasure, Grid1D};
use crate::potential::{Gauge, PotentialFamily};
use crate::solver::Coupling;

/// Shortest round-trip representation.
fn num(v: f64) -> String {
    format!("{v:?}")
}

fn parse(field: &str, line: usize) -> Result<f64> {
    field
        .trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: `{field}` is not a number")))
}

fn index(field: &str, line: usize) -> Result<usize> {
    field
        .trim()
        .parse::<usize>()
        .map_err(|_| Error::InvalidArgument(format!("line {line}: `{field}` is not an index")))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

pub fn write_measure_csv(path: &Path, m: &DiscreteMeasure) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["node", "weight"])?;
    for (x, v) in m.grid().nodes().iter().zip(m.weights()) {
        w.write_record([num(*x), num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `node,weight` rows; the grid is inferred from the cell centers,
/// which must be equally spaced.
pub fn read_measure_csv(path: &Path) -> Result<DiscreteMeasure> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut nodes, mut weights) = (Vec::new(), Vec::new());
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 2 {
            return Err(Error::InvalidArgument(format!("line {}: expected node,weight", k + 2)));
        }
        nodes.push(parse(&rec[0], k + 2)?);
        weights.push(parse(&rec[1], k + 2)?);
    }
    if nodes.len() < 2 {
        return Err(Error::InvalidGrid(format!("{} nodes in {}", nodes.len(), path.display())));
    }
    let n = nodes.len();
    let h = (nodes[n - 1] - nodes[0]) / (n - 1) as f64;
    let grid = Grid1D::new(nodes[0] - 0.5 * h, nodes[n - 1] + 0.5 * h, n)?;
    for (k, x) in nodes.iter().enumerate() {
        if (x - grid.node(k)).abs() > 1e-9 * (1.0 + x.abs()) {
            return Err(Error::InvalidGrid(format!("node {k} = {x} is off the uniform grid")));
        }
    }
    // Keep the stored bits when the file is already normalized.
    match DiscreteMeasure::new(grid, weights.clone()) {
        Ok(m) => Ok(m),
        Err(_) => DiscreteMeasure::from_unnormalized(grid, weights),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureEnvelope {
    pub grid: Grid1D,
    pub weights: String,
}

/// Writes `<stem>.csv` and `<stem>.json` into `dir`.
pub fn save_measure(dir: &Path, stem: &str, m: &DiscreteMeasure) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    write_measure_csv(&csv_path, m)?;
    write_json(
        &json_path,
        &MeasureEnvelope {
            grid: *m.grid(),
            weights: format!("{stem}.csv"),
        },
    )?;
    Ok(vec![csv_path, json_path])
}

/// Loads a measure from its JSON envelope.
pub fn load_measure(envelope: &Path) -> Result<DiscreteMeasure> {
    let env: MeasureEnvelope = read_json(envelope)?;
    let dir = envelope.parent().unwrap_or_else(|| Path::new("."));
    let m = read_measure_csv(&dir.join(&env.weights))?;
    if m.len() != env.grid.len() || !m.grid().same_interval(&env.grid) {
        return Err(Error::ShapeMismatch(format!("{} does not match its envelope grid", env.weights)));
    }
    DiscreteMeasure::new(env.grid, m.weights().to_vec())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSidecar {
    pub gauge: Gauge,
    pub grids: Vec<Grid1D>,
}

pub fn write_potentials(csv_path: &Path, sidecar: &Path, phi: &PotentialFamily, grids: &[Grid1D]) -> Result<()> {
    if phi.dims() != grids.iter().map(Grid1D::len).collect::<Vec<_>>() {
        return Err(Error::ShapeMismatch("potentials do not match the grids".into()));
    }
    let mut w = csv::Writer::from_path(csv_path)?;
    w.write_record(["marginal", "node", "value"])?;
    for (i, (p, g)) in phi.members().iter().zip(grids).enumerate() {
        for (x, v) in g.nodes().iter().zip(p) {
            w.write_record([i.to_string(), num(*x), num(*v)])?;
        }
    }
    w.flush()?;
    write_json(
        sidecar,
        &PotentialSidecar {
            gauge: phi.gauge(),
            grids: grids.to_vec(),
        },
    )
}

pub fn read_potentials(csv_path: &Path, sidecar: &Path) -> Result<(PotentialFamily, Vec<Grid1D>)> {
    let side: PotentialSidecar = read_json(sidecar)?;
    let mut members: Vec<Vec<f64>> = side.grids.iter().map(|g| Vec::with_capacity(g.len())).collect();
    let mut r = csv::Reader::from_path(csv_path)?;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != 3 {
            return Err(Error::InvalidArgument(format!("line {}: expected marginal,node,value", k + 2)));
        }
        let i = index(&rec[0], k + 2)?;
        let row = members
            .get_mut(i)
            .ok_or_else(|| Error::InvalidArgument(format!("line {}: marginal {i} out of range", k + 2)))?;
        row.push(parse(&rec[2], k + 2)?);
    }
    for (row, g) in members.iter().zip(&side.grids) {
        if row.len() != g.len() {
            return Err(Error::ShapeMismatch(format!("{} values for a grid of {}", row.len(), g.len())));
        }
    }
    let phi = PotentialFamily::new(members)?;
    Ok((PotentialFamily::with_gauge(phi.into_members(), side.gauge), side.grids))
}

/// `i,j,x,y,weight` rows of a two-marginal coupling.
pub fn write_coupling_csv(path: &Path, gamma: &Coupling, grids: &[Grid1D]) -> Result<()> {
    if gamma.dims.len() != 2 || grids.len() != 2 {
        return Err(Error::InvalidArgument("coupling CSV needs two marginals".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["i", "j", "x", "y", "weight"])?;
    let m = gamma.dims[1];
    for (flat, v) in gamma.weights.iter().enumerate() {
        let (i, j) = (flat / m, flat % m);
        w.write_record([i.to_string(), j.to_string(), num(grids[0].node(i)), num(grids[1].node(j)), num(*v)])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a tabulated cost in row-major order for `dims`; every index tuple
/// must appear exactly once.
pub fn read_tabulated_cost(path: &Path, dims: &[usize]) -> Result<Vec<f64>> {
    let total: usize = dims.iter().product();
    let st = strides(dims);
    let mut values = vec![f64::NAN; total];
    let mut r = csv::Reader::from_path(path)?;
    for (k, rec) in r.records().enumerate() {
        let rec = rec?;
        if rec.len() != dims.len() + 1 {
            return Err(Error::InvalidArgument(format!(
                "line {}: expected {} indices and a value",
                k + 2,
                dims.len()
            )));
        }
        let mut flat = 0;
        for (a, n) in dims.iter().enumerate() {
            let idx = index(&rec[a], k + 2)?;
            if idx >= *n {
                return Err(Error::InvalidArgument(format!("line {}: index {idx} out of range", k + 2)));
            }
            flat += idx * st[a];
        }
        if !values[flat].is_nan() {
            return Err(Error::InvalidArgument(format!("line {}: duplicate index tuple", k + 2)));
        }
        values[flat] = parse(&rec[dims.len()], k + 2)?;
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(Error::ShapeMismatch("tabulated cost is missing entries".into()));
    }
    Ok(values)
}

pub fn write_tabulated_cost(path: &Path, dims: &[usize], values: &[f64]) -> Result<()> {
    let st = strides(dims);
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = (0..dims.len()).map(|a| format!("i{a}")).collect();
    header.push("value".into());
    w.write_record(&header)?;
    for (flat, v) in values.iter().enumerate() {
        let mut rec: Vec<String> = dims.iter().zip(&st).map(|(n, s)| ((flat / s) % n).to_string()).collect();
        rec.push(num(*v));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
