//! Dynamic-spanning diagnostics for the priced market.
//!
//! With asset 0 as numéraire, the normalized prices `r^k = S^k / S^0`
//! (k = 1..K) drive the market's ability to span risk: the market is
//! dynamically complete where the K×K volatility matrix
//! `V = diag(1/r_k) · Dr · sigma` is invertible. This module forms `V` on
//! every interior grid node, reports determinant statistics against a scaled
//! threshold, and cross-checks the horizon with the exact payoff Jacobian.
//!
//! The determinant is judged against an external yardstick: row `k` of `V`
//! is the diffusion exposure of `log r^k`, so its natural scale is the size
//! of `sigma` itself (state coordinates are order one on these region
//! boxes). A node is flagged when `|det V| <= threshold_scale * s^K` with
//! `s` the largest row norm of `sigma(x)`. Normalizing by `V`'s own row
//! norms instead would be self-referential: a redundant asset produces a
//! near-zero row whose determinant and row norm shrink together, and the
//! ratio would stay order one — with a single risky asset it is identically
//! one — so genuine degeneracy would never be flagged.

use serde::Serialize;

use crate::economy::{Diffusion, Economy};
use crate::error::{Error, Result};
use crate::expr::{Expr, Variable};
use crate::linalg;
use crate::markov::{spatial_gradient, Grid, SpaceTimeField};
use crate::pricing::PricingSolution;
use crate::sampling::sample_points;

/// Prices normalized by the numéraire: `ratios[k-1]` holds `r^k = S^k/S^0`
/// on every grid level (the horizon level is the exact payoff ratio `h^k`).
#[derive(Debug, Clone)]
pub struct NormalizedPrices {
    pub ratios: Vec<SpaceTimeField>,
}

/// Divide every non-numéraire price by the numéraire, level by level.
pub fn normalize_prices(grid: &Grid, p: &PricingSolution) -> Result<NormalizedPrices> {
    let n_assets = p.prices.len();
    if n_assets < 2 {
        return Err(Error::Numerical(
            "normalization needs at least the numéraire and one risky asset".into(),
        ));
    }
    let s0 = &p.prices[0];
    let mut ratios = Vec::with_capacity(n_assets - 1);
    for k in 1..n_assets {
        let mut r = SpaceTimeField::zeros(grid);
        for (m, level) in r.levels.iter_mut().enumerate() {
            for (i, v) in level.iter_mut().enumerate() {
                let denom = s0.levels[m][i];
                if !(denom > 0.0) {
                    return Err(Error::Numerical(format!(
                        "numéraire price is {denom} at level {m}, node {i}; cannot normalize"
                    )));
                }
                *v = p.prices[k].levels[m][i] / denom;
            }
        }
        ratios.push(r);
    }
    Ok(NormalizedPrices { ratios })
}

/// The K×K volatility matrix `diag(1/r_k) · Dr · sigma` at one point.
///
/// `r` holds the normalized prices `r^1..r^K` at the point and `dr` their
/// spatial Jacobian (row-major, `dr[k*K + l] = d r^{k+1} / d x_l`).
pub fn volatility_matrix(d: &Diffusion, r: &[f64], dr: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    let k = d.k;
    if r.len() != k || dr.len() != k * k {
        return Err(Error::Numerical(format!(
            "volatility matrix needs {k} ratios and {} Jacobian entries, got {} and {}",
            k * k,
            r.len(),
            dr.len()
        )));
    }
    let sigma = d.sigma_at(x)?;
    volatility_matrix_with_sigma(r, dr, &sigma, k)
}

fn volatility_matrix_with_sigma(
    r: &[f64],
    dr: &[f64],
    sigma: &[f64],
    k: usize,
) -> Result<Vec<f64>> {
    let mut v = vec![0.0; k * k];
    for row in 0..k {
        if !(r[row] > 0.0) {
            return Err(Error::Numerical(format!(
                "normalized price r^{} is {} (must be positive) — singular normalization",
                row + 1,
                r[row]
            )));
        }
        for col in 0..k {
            let mut acc = 0.0;
            for l in 0..k {
                acc += dr[row * k + l] * sigma[l * k + col];
            }
            v[row * k + col] = acc / r[row];
        }
    }
    Ok(v)
}

/// Symbolic payoff ratios `h^k = g^k(T,.) / g^0(T,.)` for k = 1..K.
pub fn payoff_ratios(econ: &Economy) -> Vec<Expr> {
    (1..econ.assets.len())
        .map(|k| {
            Expr::div(
                econ.assets[k].terminal.clone(),
                econ.assets[0].terminal.clone(),
            )
        })
        .collect()
}

/// Symbolic Jacobian of the payoff ratios, row-major K×K:
/// entry `(k, l)` is `d h^{k+1} / d x_{l+1}`.
pub fn payoff_ratio_jacobian(econ: &Economy) -> Vec<Expr> {
    let k = econ.diffusion.k;
    let ratios = payoff_ratios(econ);
    let mut out = Vec::with_capacity(k * k);
    for h in &ratios {
        for l in 0..k {
            out.push(h.differentiate(Variable::State(l)));
        }
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Location {
    pub t: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Quantiles {
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub max: f64,
}

/// Horizon cross-check: minimum `|det Dh|` of the exact payoff-ratio
/// Jacobian over low-discrepancy samples of the rank region, plus the
/// minimum numéraire payoff there (both must be positive).
#[derive(Debug, Clone, Serialize)]
pub struct TerminalRank {
    pub samples: usize,
    pub min_abs_det_jacobian: f64,
    pub min_numeraire_payoff: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CompletenessVerdict {
    CompleteOnGrid,
    IncompleteOnGrid,
}

impl std::fmt::Display for CompletenessVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CompletenessVerdict::CompleteOnGrid => write!(f, "COMPLETE_ON_GRID"),
            CompletenessVerdict::IncompleteOnGrid => write!(f, "INCOMPLETE_ON_GRID"),
        }
    }
}

/// One row of the determinant heat map (dumped to CSV for plotting).
#[derive(Debug, Clone)]
pub struct DetRow {
    pub t: f64,
    pub x: Vec<f64>,
    pub det: f64,
    pub scaled_det: f64,
    pub flagged: bool,
}

/// Grid-wide spanning diagnostics. The verdict is deliberately grid-relative
/// — the scan can witness degeneracy but never prove almost-sure
/// invertibility.
#[derive(Debug, Clone, Serialize)]
pub struct CompletenessReport {
    pub verdict: CompletenessVerdict,
    pub threshold_scale: f64,
    /// Interior (level, node) pairs scanned.
    pub nodes_scanned: usize,
    pub flagged: usize,
    pub flagged_fraction: f64,
    pub min_abs_det: f64,
    pub min_abs_det_location: Location,
    pub min_scaled_det: f64,
    pub min_scaled_det_location: Location,
    pub condition_numbers: Quantiles,
    pub terminal_rank: TerminalRank,
    /// First flagged locations (at most 32), as witnesses.
    pub witnesses: Vec<Location>,
    /// Determinant heat map at coarse time levels (not serialized to JSON;
    /// written separately as CSV).
    #[serde(skip)]
    pub det_map: Vec<DetRow>,
}

/// Scan every interior node at every time level, judge the volatility
/// matrix determinant against the scaled threshold, and cross-check the
/// horizon payoff Jacobian on the rank region.
pub fn completeness_report(
    econ: &Economy,
    grid: &Grid,
    p: &PricingSolution,
    threshold_scale: f64,
    rank_samples: usize,
    seed: u64,
) -> Result<CompletenessReport> {
    let k = econ.diffusion.k;
    let normalized = normalize_prices(grid, p)?;
    let levels = grid.n_levels();
    let spatial = grid.spatial_len();

    // sigma and its largest row norm per node (the external determinant
    // yardstick).
    let mut sigma_table: Vec<Vec<f64>> = Vec::with_capacity(spatial);
    let mut sigma_scale: Vec<f64> = Vec::with_capacity(spatial);
    let mut x = Vec::with_capacity(k);
    for flat in 0..spatial {
        grid.node(flat, &mut x);
        let s = econ.diffusion.sigma_at(&x)?;
        let scale = (0..k)
            .map(|row| linalg::row_norm(&s, k, row))
            .fold(0.0, f64::max);
        sigma_table.push(s);
        sigma_scale.push(scale);
    }

    let coarse = coarse_levels(levels);
    let mut det_map = Vec::new();
    let mut conds: Vec<f64> = Vec::with_capacity(levels * spatial);
    let mut flagged = 0usize;
    let mut scanned = 0usize;
    let mut witnesses: Vec<Location> = Vec::new();
    let mut min_abs = (f64::INFINITY, 0usize, 0usize);
    let mut min_scaled = (f64::INFINITY, 0usize, 0usize);

    let mut dr = vec![0.0; k * k];
    let mut r = vec![0.0; k];
    for m in 0..levels {
        // Jacobian of each ratio at this level, one gradient per axis.
        let grads: Vec<Vec<Vec<f64>>> = normalized
            .ratios
            .iter()
            .map(|field| {
                (0..k)
                    .map(|d| spatial_gradient(grid, &field.levels[m], d))
                    .collect()
            })
            .collect();
        let is_coarse = coarse.contains(&m);
        for flat in 0..spatial {
            if grid.is_boundary(flat) {
                continue;
            }
            for row in 0..k {
                r[row] = normalized.ratios[row].levels[m][flat];
                for l in 0..k {
                    dr[row * k + l] = grads[row][l][flat];
                }
            }
            let v = volatility_matrix_with_sigma(&r, &dr, &sigma_table[flat], k)?;
            let det = linalg::determinant(&v, k);
            let scale = sigma_scale[flat];
            let scaled = if scale > 0.0 {
                det.abs() / scale.powi(k as i32)
            } else {
                0.0
            };
            let is_flagged = scaled <= threshold_scale;
            scanned += 1;
            if det.abs() < min_abs.0 {
                min_abs = (det.abs(), m, flat);
            }
            if scaled < min_scaled.0 {
                min_scaled = (scaled, m, flat);
            }
            if is_flagged {
                flagged += 1;
                if witnesses.len() < 32 {
                    witnesses.push(location(grid, m, flat));
                }
            }
            conds.push(condition_number(&v, k));
            if is_coarse {
                let mut xv = Vec::with_capacity(k);
                grid.node(flat, &mut xv);
                det_map.push(DetRow {
                    t: grid.times[m],
                    x: xv,
                    det,
                    scaled_det: scaled,
                    flagged: is_flagged,
                });
            }
        }
    }

    let terminal_rank = terminal_rank_check(econ, rank_samples, seed)?;
    let verdict = if flagged == 0 && terminal_rank.passed {
        CompletenessVerdict::CompleteOnGrid
    } else {
        CompletenessVerdict::IncompleteOnGrid
    };
    Ok(CompletenessReport {
        verdict,
        threshold_scale,
        nodes_scanned: scanned,
        flagged,
        flagged_fraction: flagged as f64 / scanned.max(1) as f64,
        min_abs_det: min_abs.0,
        min_abs_det_location: location(grid, min_abs.1, min_abs.2),
        min_scaled_det: min_scaled.0,
        min_scaled_det_location: location(grid, min_scaled.1, min_scaled.2),
        condition_numbers: quantiles(&mut conds),
        terminal_rank,
        witnesses,
        det_map,
    })
}

/// Evaluate the exact payoff-ratio Jacobian determinant on low-discrepancy
/// samples of the rank region.
pub fn terminal_rank_check(econ: &Economy, samples: usize, seed: u64) -> Result<TerminalRank> {
    let k = econ.diffusion.k;
    let points = sample_points(&econ.rank_region.lo, &econ.rank_region.hi, samples, seed);
    let jac = payoff_ratio_jacobian(econ);
    let horizon = econ.horizon;
    let mut min_det = f64::INFINITY;
    let mut min_g0 = f64::INFINITY;
    let mut entries = vec![0.0; k * k];
    for p in &points {
        let g0 = econ.assets[0]
            .terminal
            .eval(horizon, p)
            .map_err(|e| Error::eval("numéraire terminal payoff", e))?;
        min_g0 = min_g0.min(g0);
        if !(g0 > 0.0) {
            return Err(Error::ValidationFailed(format!(
                "numéraire terminal payoff is {g0} at x={p:?} in the rank region; the payoff \
                 ratios h^k are undefined there"
            )));
        }
        for (slot, e) in entries.iter_mut().zip(jac.iter()) {
            *slot = e
                .eval(horizon, p)
                .map_err(|err| Error::eval("payoff ratio Jacobian", err))?;
        }
        min_det = min_det.min(linalg::determinant(&entries, k).abs());
    }
    Ok(TerminalRank {
        samples: points.len(),
        min_abs_det_jacobian: min_det,
        min_numeraire_payoff: min_g0,
        passed: min_det > 0.0 && min_g0 > 0.0,
    })
}

fn location(grid: &Grid, level: usize, flat: usize) -> Location {
    let mut x = Vec::with_capacity(grid.k());
    grid.node(flat, &mut x);
    Location {
        t: grid.times[level],
        x,
    }
}

fn coarse_levels(levels: usize) -> Vec<usize> {
    let last = levels - 1;
    let mut set = vec![0, last / 4, last / 2, 3 * last / 4, last];
    set.sort_unstable();
    set.dedup();
    set
}

/// Spectral condition number via the eigenvalues of `V^T V`; capped at
/// `f64::MAX` so reports stay JSON-representable.
fn condition_number(v: &[f64], k: usize) -> f64 {
    let vt = linalg::transpose(v, k);
    let vtv = linalg::matmul(&vt, v, k);
    let eig = linalg::symmetric_eigenvalues(&vtv, k);
    let smin = eig.first().copied().unwrap_or(0.0).max(0.0).sqrt();
    let smax = eig.last().copied().unwrap_or(0.0).max(0.0).sqrt();
    if smin > 0.0 && smax.is_finite() {
        (smax / smin).min(f64::MAX)
    } else {
        f64::MAX
    }
}

fn quantiles(values: &mut Vec<f64>) -> Quantiles {
    if values.is_empty() {
        return Quantiles {
            p10: 0.0,
            p50: 0.0,
            p90: 0.0,
            max: 0.0,
        };
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pick = |q: f64| values[((values.len() - 1) as f64 * q).round() as usize];
    Quantiles {
        p10: pick(0.10),
        p50: pick(0.50),
        p90: pick(0.90),
        max: *values.last().unwrap(),
    }
}
