//! Report and table persistence for the pipeline stages.
//!
//! Every JSON report carries the same envelope: a schema version, the hash
//! of the effective configuration that produced it, and the map of
//! assumption-validation verdicts it depended on. Downstream stages verify
//! the hash before trusting an artifact, so a stale file from a different
//! configuration fails loudly instead of silently polluting results.
//!
//! CSV tables print floats with Rust's shortest round-trip formatting and
//! are read back with `str::parse`, so a write/read cycle reproduces the
//! exact bits. Field tables enumerate rows in a fixed order (time level
//! outer, flat node index inner; lump rows after all flow rows), which
//! makes byte-identical reruns possible.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::completeness::DetRow;
use crate::error::{Error, Result};
use crate::markov::{Grid, SpaceTimeField};

pub const SCHEMA_VERSION: u32 = 1;

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::io(path.display().to_string(), e)
}

fn json_at(path: &Path, e: serde_json::Error) -> Error {
    Error::json(path.display().to_string(), e)
}

/// Envelope around every stage report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report<T> {
    pub schema_version: u32,
    pub config_hash: String,
    /// Assumption-check verdicts this artifact depended on (check id →
    /// PASS/FAIL/UNVERIFIABLE).
    pub assumption_verdicts: BTreeMap<String, String>,
    #[serde(flatten)]
    pub body: T,
}

impl<T> Report<T> {
    pub fn new(
        config_hash: &str,
        assumption_verdicts: BTreeMap<String, String>,
        body: T,
    ) -> Report<T> {
        Report {
            schema_version: SCHEMA_VERSION,
            config_hash: config_hash.to_string(),
            assumption_verdicts,
            body,
        }
    }
}

/// Serialize a report as pretty JSON (stable field order, no timestamps).
pub fn write_json_report<T: Serialize>(path: &Path, report: &Report<T>) -> Result<()> {
    let mut text =
        serde_json::to_string_pretty(report).map_err(|e| json_at(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_at(path, e))
}

/// Read a report back and check its envelope.
pub fn read_json_report<T: DeserializeOwned>(path: &Path, expect_hash: &str) -> Result<Report<T>> {
    let text = fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    let report: Report<T> =
        serde_json::from_str(&text).map_err(|e| json_at(path, e))?;
    if report.schema_version != SCHEMA_VERSION {
        return Err(Error::Config(format!(
            "{} has schema version {}, this build reads {}",
            path.display(),
            report.schema_version,
            SCHEMA_VERSION
        )));
    }
    if report.config_hash != expect_hash {
        return Err(Error::Config(format!(
            "{} was produced under config hash {} but the current effective config hashes to \
             {}; rerun the upstream stages",
            path.display(),
            report.config_hash,
            expect_hash
        )));
    }
    Ok(report)
}

fn open_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(
        fs::File::create(path).map_err(|e| io_at(path, e))?,
    ))
}

fn x_header(k: usize) -> String {
    (1..=k).map(|d| format!(",x{d}")).collect()
}

fn write_x(line: &mut String, x: &[f64]) {
    for v in x {
        line.push(',');
        line.push_str(&format!("{v}"));
    }
}

/// Write a scalar field with a flow part on every grid level and a lump
/// layer at the horizon. Columns: `t, x1..xK, component, value` with
/// `component` one of `flow` / `lump`.
pub fn write_field_csv(
    path: &Path,
    grid: &Grid,
    flow: &SpaceTimeField,
    lump: &[f64],
) -> Result<()> {
    let mut w = open_writer(path)?;
    let k = grid.k();
    writeln!(w, "t{},component,value", x_header(k)).map_err(|e| io_at(path, e))?;
    let mut x = Vec::with_capacity(k);
    for (m, &t) in grid.times.iter().enumerate() {
        for flat in 0..grid.spatial_len() {
            grid.node(flat, &mut x);
            let mut line = format!("{t}");
            write_x(&mut line, &x);
            line.push_str(&format!(",flow,{}", flow.levels[m][flat]));
            writeln!(w, "{line}").map_err(|e| io_at(path, e))?;
        }
    }
    let t = *grid.times.last().unwrap();
    for flat in 0..grid.spatial_len() {
        grid.node(flat, &mut x);
        let mut line = format!("{t}");
        write_x(&mut line, &x);
        line.push_str(&format!(",lump,{}", lump[flat]));
        writeln!(w, "{line}").map_err(|e| io_at(path, e))?;
    }
    w.flush().map_err(|e| io_at(path, e))
}

fn parse_f64(path: &Path, token: &str, what: &str) -> Result<f64> {
    token.parse::<f64>().map_err(|_| {
        Error::Config(format!(
            "{}: cannot parse {what} value {token:?}",
            path.display()
        ))
    })
}

/// Read a field table written by [`write_field_csv`] back onto `grid`.
pub fn read_field_csv(path: &Path, grid: &Grid) -> Result<(SpaceTimeField, Vec<f64>)> {
    let text = fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    let k = grid.k();
    let spatial = grid.spatial_len();
    let levels = grid.n_levels();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let want_header = format!("t{},component,value", x_header(k));
    if header != want_header {
        return Err(Error::Config(format!(
            "{}: header {header:?} does not match expected {want_header:?} (was the file \
             produced by a compatible grid?)",
            path.display()
        )));
    }
    let mut flow = SpaceTimeField::zeros(grid);
    let mut lump = vec![0.0; spatial];
    let expect = (levels + 1) * spatial;
    let mut count = 0usize;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != k + 3 {
            return Err(Error::Config(format!(
                "{}: row {count} has {} columns, expected {}",
                path.display(),
                cols.len(),
                k + 3
            )));
        }
        let value = parse_f64(path, cols[k + 2], "field")?;
        let (m, flat) = (count / spatial, count % spatial);
        let component = cols[k + 1];
        if m < levels {
            if component != "flow" {
                return Err(Error::Config(format!(
                    "{}: row {count} expected a flow row, found {component:?}",
                    path.display()
                )));
            }
            flow.levels[m][flat] = value;
        } else {
            if component != "lump" {
                return Err(Error::Config(format!(
                    "{}: row {count} expected a lump row, found {component:?}",
                    path.display()
                )));
            }
            lump[flat] = value;
        }
        count += 1;
    }
    if count != expect {
        return Err(Error::Config(format!(
            "{}: found {count} data rows, expected {expect} for this grid",
            path.display()
        )));
    }
    Ok((flow, lump))
}

/// Write all asset prices and their deflated present values. Columns:
/// `t, x1..xK, s0..sK, pv0..pvK`; the last time level holds terminal
/// payoffs (prices) and lump present values.
pub fn write_prices_csv(
    path: &Path,
    grid: &Grid,
    prices: &[SpaceTimeField],
    deflated: &[SpaceTimeField],
) -> Result<()> {
    let mut w = open_writer(path)?;
    let k = grid.k();
    let n_assets = prices.len();
    let mut header = format!("t{}", x_header(k));
    for a in 0..n_assets {
        header.push_str(&format!(",s{a}"));
    }
    for a in 0..n_assets {
        header.push_str(&format!(",pv{a}"));
    }
    writeln!(w, "{header}").map_err(|e| io_at(path, e))?;
    let mut x = Vec::with_capacity(k);
    for (m, &t) in grid.times.iter().enumerate() {
        for flat in 0..grid.spatial_len() {
            grid.node(flat, &mut x);
            let mut line = format!("{t}");
            write_x(&mut line, &x);
            for p in prices {
                line.push_str(&format!(",{}", p.levels[m][flat]));
            }
            for d in deflated {
                line.push_str(&format!(",{}", d.levels[m][flat]));
            }
            writeln!(w, "{line}").map_err(|e| io_at(path, e))?;
        }
    }
    w.flush().map_err(|e| io_at(path, e))
}

/// Read a price table written by [`write_prices_csv`].
pub fn read_prices_csv(
    path: &Path,
    grid: &Grid,
    n_assets: usize,
) -> Result<(Vec<SpaceTimeField>, Vec<SpaceTimeField>)> {
    let text = fs::read_to_string(path).map_err(|e| io_at(path, e))?;
    let k = grid.k();
    let spatial = grid.spatial_len();
    let levels = grid.n_levels();
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let mut want = format!("t{}", x_header(k));
    for a in 0..n_assets {
        want.push_str(&format!(",s{a}"));
    }
    for a in 0..n_assets {
        want.push_str(&format!(",pv{a}"));
    }
    if header != want {
        return Err(Error::Config(format!(
            "{}: header {header:?} does not match expected {want:?}",
            path.display()
        )));
    }
    let mut prices = vec![SpaceTimeField::zeros(grid); n_assets];
    let mut deflated = vec![SpaceTimeField::zeros(grid); n_assets];
    let expect = levels * spatial;
    let mut count = 0usize;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != k + 1 + 2 * n_assets {
            return Err(Error::Config(format!(
                "{}: row {count} has {} columns, expected {}",
                path.display(),
                cols.len(),
                k + 1 + 2 * n_assets
            )));
        }
        let (m, flat) = (count / spatial, count % spatial);
        if m >= levels {
            count += 1;
            continue;
        }
        for a in 0..n_assets {
            prices[a].levels[m][flat] = parse_f64(path, cols[k + 1 + a], "price")?;
            deflated[a].levels[m][flat] =
                parse_f64(path, cols[k + 1 + n_assets + a], "present value")?;
        }
        count += 1;
    }
    if count != expect {
        return Err(Error::Config(format!(
            "{}: found {count} data rows, expected {expect} for this grid",
            path.display()
        )));
    }
    Ok((prices, deflated))
}

/// Determinant heat map rows (coarse levels) for plotting.
pub fn write_det_csv(path: &Path, k: usize, rows: &[DetRow]) -> Result<()> {
    let mut w = open_writer(path)?;
    writeln!(w, "t{},det,scaled_det,flagged", x_header(k)).map_err(|e| io_at(path, e))?;
    for row in rows {
        let mut line = format!("{}", row.t);
        write_x(&mut line, &row.x);
        line.push_str(&format!(
            ",{},{},{}",
            row.det,
            row.scaled_det,
            if row.flagged { 1 } else { 0 }
        ));
        writeln!(w, "{line}").map_err(|e| io_at(path, e))?;
    }
    w.flush().map_err(|e| io_at(path, e))
}

/// Body of `ad_equilibrium.json` — the planner-stage summary that later
/// stages reload (the fields come back together with `psi.csv` and the
/// per-agent allocation tables to reconstruct the equilibrium).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdBody {
    pub lambda: Vec<f64>,
    pub residuals: Vec<f64>,
    pub residual_scales: Vec<f64>,
    pub max_relative_residual: f64,
    pub converged: bool,
    pub iterations: usize,
    pub passed: bool,
}

/// Structured failure record written when a stage aborts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorReport {
    pub schema_version: u32,
    pub stage: String,
    pub error: String,
}

pub fn write_error_report(path: &Path, stage: &str, error: &str) -> Result<()> {
    let report = ErrorReport {
        schema_version: SCHEMA_VERSION,
        stage: stage.to_string(),
        error: error.to_string(),
    };
    let mut text = serde_json::to_string_pretty(&report).map_err(|e| json_at(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_at(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::economy::Region;
    use crate::markov::build_grid;

    fn grid_1d() -> Grid {
        let region = Region {
            lo: vec![-1.0],
            hi: vec![1.0],
        };
        build_grid(&region, &[0.0], &[5], 1.0, 3).unwrap()
    }

    #[test]
    fn field_csv_round_trips_exact_bits() {
        let grid = grid_1d();
        let mut flow = SpaceTimeField::zeros(&grid);
        for (m, level) in flow.levels.iter_mut().enumerate() {
            for (i, v) in level.iter_mut().enumerate() {
                *v = (m as f64 + 1.0) / 3.0 * (i as f64 - 1.7).exp();
            }
        }
        let lump: Vec<f64> = (0..grid.spatial_len())
            .map(|i| 1.0 / (i as f64 + 0.3))
            .collect();
        let dir = std::env::temp_dir().join("field_csv_round_trip_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.csv");
        write_field_csv(&path, &grid, &flow, &lump).unwrap();
        let (flow2, lump2) = read_field_csv(&path, &grid).unwrap();
        for (a, b) in flow.levels.iter().zip(flow2.levels.iter()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        for (x, y) in lump.iter().zip(lump2.iter()) {
            assert_eq!(x.to_bits(), y.to_bits());
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn prices_csv_round_trips_exact_bits() {
        let grid = grid_1d();
        let mut s = vec![SpaceTimeField::zeros(&grid); 2];
        let mut u = vec![SpaceTimeField::zeros(&grid); 2];
        for a in 0..2 {
            for m in 0..grid.n_levels() {
                for i in 0..grid.spatial_len() {
                    s[a].levels[m][i] = ((a + 1) * (m + 2)) as f64 / (i as f64 + 1.1);
                    u[a].levels[m][i] = s[a].levels[m][i] * 0.37;
                }
            }
        }
        let dir = std::env::temp_dir().join("prices_csv_round_trip_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("prices.csv");
        write_prices_csv(&path, &grid, &s, &u).unwrap();
        let (s2, u2) = read_prices_csv(&path, &grid, 2).unwrap();
        for a in 0..2 {
            for m in 0..grid.n_levels() {
                for i in 0..grid.spatial_len() {
                    assert_eq!(s[a].levels[m][i].to_bits(), s2[a].levels[m][i].to_bits());
                    assert_eq!(u[a].levels[m][i].to_bits(), u2[a].levels[m][i].to_bits());
                }
            }
        }
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn report_envelope_rejects_wrong_hash() {
        #[derive(Serialize, Deserialize)]
        struct Body {
            value: f64,
        }
        let dir = std::env::temp_dir().join("report_envelope_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("report.json");
        let report = Report::new("abc123", BTreeMap::new(), Body { value: 1.5 });
        write_json_report(&path, &report).unwrap();
        let ok: Report<Body> = read_json_report(&path, "abc123").unwrap();
        assert_eq!(ok.body.value, 1.5);
        let err = read_json_report::<Body>(&path, "different");
        assert!(err.is_err());
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn field_csv_rejects_wrong_grid() {
        let grid = grid_1d();
        let flow = SpaceTimeField::zeros(&grid);
        let lump = vec![0.0; grid.spatial_len()];
        let dir = std::env::temp_dir().join("field_csv_wrong_grid_test");
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("field.csv");
        write_field_csv(&path, &grid, &flow, &lump).unwrap();
        let region = Region {
            lo: vec![-1.0],
            hi: vec![1.0],
        };
        let bigger = build_grid(&region, &[0.0], &[9], 1.0, 3).unwrap();
        assert!(read_field_csv(&path, &bigger).is_err());
        fs::remove_dir_all(&dir).ok();
    }
}
