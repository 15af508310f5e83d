//! Present-value asset prices from the planner equilibrium.
//!
//! With the state-price density `psi` in hand, each asset's deflated value
//! `u^k(t, x) = E[ int_t^T g^k psi dt + g^k_T psi_T | X_t = x ]` solves the
//! backward equation `d/dt u + L u + g^k psi = 0` with terminal data
//! `g^k_T psi_T`, and the price is `S^k = u^k / psi`. This module runs those
//! solves for every asset, forms prices, reports interior PDE residuals as a
//! self-diagnostic, and provides a martingale drift test on the deflated
//! gains `u^k(t, X_t) + int_0^t g^k psi ds` along simulated paths — a
//! "no free lunch" check the equilibrium must satisfy.

pub mod fk;
pub mod mc;

pub use fk::{solve_backward, BackwardProblem};
pub use mc::{mc_asset_prices, path_expectation, McEstimate};

use rayon::prelude::*;
use serde::Serialize;

use crate::economy::{Crra, Economy};
use crate::error::{Error, Result};
use crate::markov::{
    apply_generator_tables, interp_spatial, second_derivative, GeneratorTables, Grid, PathBundle,
    SpaceTimeField,
};
use crate::planner::{sharing_rule_crra, ADEquilibrium};

/// Interior residual of the backward equation for one asset, in the units
/// of `u / time`. `scale` combines the solution and source magnitudes so
/// `max_abs / scale` reads as a relative defect.
#[derive(Debug, Clone, Serialize)]
pub struct ResidualStats {
    pub asset: usize,
    pub max_abs: f64,
    pub rms: f64,
    pub scale: f64,
}

impl ResidualStats {
    pub fn relative(&self) -> f64 {
        self.max_abs / self.scale
    }
}

/// Grid prices for all assets, with the deflated values and sources kept
/// for diagnostics and downstream portfolio construction.
#[derive(Debug, Clone)]
pub struct PricingSolution {
    /// `u^k(t, x)`, the deflated present values (flow levels; the last
    /// level is the terminal layer `g^k_T psi_T`).
    pub deflated: Vec<SpaceTimeField>,
    /// Prices `S^k = u^k / psi`; the last level divides by the lump density
    /// and therefore equals the terminal payoff `g^k_T`.
    pub prices: Vec<SpaceTimeField>,
    /// Flow sources `g^k(t, x) psi(t, x)`.
    pub sources: Vec<SpaceTimeField>,
    pub residuals: Vec<ResidualStats>,
}

/// Price every asset by a backward solve against the equilibrium density.
pub fn price_all_assets(
    econ: &Economy,
    grid: &Grid,
    tables: &GeneratorTables,
    eq: &ADEquilibrium,
    theta: f64,
) -> Result<PricingSolution> {
    let levels = grid.n_levels();
    let spatial = grid.spatial_len();
    let mut deflated = Vec::with_capacity(econ.n_assets());
    let mut prices = Vec::with_capacity(econ.n_assets());
    let mut sources = Vec::with_capacity(econ.n_assets());
    let mut residuals = Vec::with_capacity(econ.n_assets());

    for (k, asset) in econ.assets.iter().enumerate() {
        let source = asset_flow_source(econ, grid, eq, k)?;
        // Terminal layer g^k_T psi_lump.
        let g_term = grid.eval_spatial(
            &asset.terminal,
            econ.horizon,
            &format!("asset {k} terminal payoff"),
        )?;
        let terminal: Vec<f64> = g_term
            .iter()
            .zip(eq.psi_lump.iter())
            .map(|(g, psi)| g * psi)
            .collect();

        let u = solve_backward(&BackwardProblem {
            grid,
            tables,
            source: &source,
            terminal,
            theta,
        })?;

        // Prices: flow levels divide by the flow density, the horizon level
        // by the lump density (so it equals the terminal payoff).
        let mut price = SpaceTimeField::zeros(grid);
        for m in 0..levels {
            let psi_layer = if m == levels - 1 {
                &eq.psi_lump
            } else {
                &eq.psi.levels[m]
            };
            for i in 0..spatial {
                price.levels[m][i] = u.levels[m][i] / psi_layer[i];
            }
        }
        if k == 0 {
            let min_price = price
                .levels
                .iter()
                .flat_map(|l| l.iter())
                .cloned()
                .fold(f64::INFINITY, f64::min);
            if !(min_price > 0.0) {
                return Err(Error::Numerical(format!(
                    "numeraire asset price is not strictly positive on the grid (min \
                     {min_price}); relative prices and portfolios are undefined"
                )));
            }
        }

        residuals.push(residual_stats(grid, tables, &u, &source, k, econ.horizon));
        deflated.push(u);
        prices.push(price);
        sources.push(source);
    }
    Ok(PricingSolution {
        deflated,
        prices,
        sources,
        residuals,
    })
}

/// Deflated flow source `m^k = g^k psi` for one asset on every level.
fn asset_flow_source(
    econ: &Economy,
    grid: &Grid,
    eq: &ADEquilibrium,
    k: usize,
) -> Result<SpaceTimeField> {
    let mut source = SpaceTimeField::zeros(grid);
    for (m, &t) in grid.times.iter().enumerate() {
        let g = grid.eval_spatial(&econ.assets[k].dividend, t, &format!("asset {k} dividend"))?;
        for (dst, (gv, psi)) in source.levels[m]
            .iter_mut()
            .zip(g.iter().zip(eq.psi.levels[m].iter()))
        {
            *dst = gv * psi;
        }
    }
    Ok(source)
}

/// Rebuild a full [`PricingSolution`] from reloaded price tables,
/// recomputing the sources and the interior residual diagnostics (cheap
/// next to the backward solves they describe).
pub fn reassemble_solution(
    econ: &Economy,
    grid: &Grid,
    tables: &GeneratorTables,
    eq: &ADEquilibrium,
    deflated: Vec<SpaceTimeField>,
    prices: Vec<SpaceTimeField>,
) -> Result<PricingSolution> {
    if deflated.len() != econ.n_assets() || prices.len() != econ.n_assets() {
        return Err(Error::Config(format!(
            "price tables hold {} assets, economy has {}",
            deflated.len(),
            econ.n_assets()
        )));
    }
    let mut sources = Vec::with_capacity(econ.n_assets());
    for k in 0..econ.n_assets() {
        sources.push(asset_flow_source(econ, grid, eq, k)?);
    }
    let residuals = deflated
        .iter()
        .zip(sources.iter())
        .enumerate()
        .map(|(k, (u, src))| residual_stats(grid, tables, u, src, k, econ.horizon))
        .collect();
    Ok(PricingSolution {
        deflated,
        prices,
        sources,
        residuals,
    })
}

/// Interior defect `du/dt + L u + m` with a centered time difference,
/// evaluated away from the boundary and the first/last transitions.
fn residual_stats(
    grid: &Grid,
    tables: &GeneratorTables,
    u: &SpaceTimeField,
    source: &SpaceTimeField,
    asset: usize,
    horizon: f64,
) -> ResidualStats {
    let levels = grid.n_levels();
    let dt = grid.dt;
    let mut max_abs = 0.0f64;
    let mut sum_sq = 0.0;
    let mut count = 0usize;
    for m in 1..levels.saturating_sub(1) {
        let lu = apply_generator_tables(grid, tables, &u.levels[m]);
        for i in 0..grid.spatial_len() {
            if grid.is_boundary(i) {
                continue;
            }
            let du_dt = (u.levels[m + 1][i] - u.levels[m - 1][i]) / (2.0 * dt);
            let r = du_dt + lu[i] + source.levels[m][i];
            max_abs = max_abs.max(r.abs());
            sum_sq += r * r;
            count += 1;
        }
    }
    let max_abs_u = u
        .levels
        .iter()
        .flat_map(|l| l.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    let max_abs_src = source
        .levels
        .iter()
        .flat_map(|l| l.iter())
        .fold(0.0f64, |a, &v| a.max(v.abs()));
    ResidualStats {
        asset,
        max_abs,
        rms: if count > 0 {
            (sum_sq / count as f64).sqrt()
        } else {
            0.0
        },
        scale: max_abs_src + max_abs_u / horizon + f64::MIN_POSITIVE,
    }
}

/// Deflated gains sampled along paths at a handful of coarse time levels,
/// with the interpolation-bias bound needed to judge drift honestly.
#[derive(Debug, Clone)]
pub struct GainsSamples {
    pub coarse_levels: Vec<usize>,
    pub coarse_times: Vec<f64>,
    /// `values[asset][path][coarse index]`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Per-asset bound on the multilinear interpolation error of `u`.
    pub interp_bias: Vec<f64>,
}

/// Evaluate the deflated gains `G^k(t) = u^k(t, X_t) + int_0^t g^k psi ds`
/// along simulated paths. The running integral uses exact pointwise
/// evaluations of `g^k` and of `psi` (via the sharing rule), so the only
/// grid artifact in `G` is the interpolation of `u`.
///
/// The paths must share the grid's time levels.
pub fn sample_deflated_gains(
    econ: &Economy,
    lambda: &[f64],
    grid: &Grid,
    deflated: &[SpaceTimeField],
    paths: &PathBundle,
) -> Result<GainsSamples> {
    if paths.times.len() != grid.times.len()
        || paths
            .times
            .iter()
            .zip(grid.times.iter())
            .any(|(a, b)| (a - b).abs() > 1e-12)
    {
        return Err(Error::Numerical(
            "gains sampling requires paths simulated on the grid's time levels".into(),
        ));
    }
    let levels = grid.times.len();
    let n_assets = deflated.len();
    let utilities: Vec<Crra> = econ.agents.iter().map(|a| a.utility).collect();
    let (agg_flow, _) = econ.aggregate_endowment();
    let dt = grid.dt;

    let coarse_levels = coarse_level_set(levels);
    let coarse_times: Vec<f64> = coarse_levels.iter().map(|&m| grid.times[m]).collect();

    let per_path: Vec<Result<Vec<Vec<f64>>>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            // values[asset][coarse index]
            let mut out = vec![Vec::with_capacity(coarse_levels.len()); n_assets];
            let mut running = vec![0.0; n_assets];
            let mut prev_flow = vec![0.0; n_assets];
            let mut coarse_iter = coarse_levels.iter().peekable();
            for (m, &t) in paths.times.iter().enumerate() {
                let x = paths.state(p, m);
                let agg = agg_flow
                    .eval(t, x)
                    .map_err(|e| Error::eval("aggregate endowment flow", e))?;
                let (_, mu) = sharing_rule_crra(&utilities, lambda, t, agg)?;
                for (k, asset) in econ.assets.iter().enumerate() {
                    let g = asset
                        .dividend
                        .eval(t, x)
                        .map_err(|e| Error::eval(format!("asset {k} dividend"), e))?;
                    let flow = g * mu;
                    if m > 0 {
                        running[k] += 0.5 * dt * (prev_flow[k] + flow);
                    }
                    prev_flow[k] = flow;
                }
                if coarse_iter.peek() == Some(&&m) {
                    coarse_iter.next();
                    for (k, field) in deflated.iter().enumerate() {
                        let u = interp_spatial(grid, &field.levels[m], x);
                        out[k].push(u + running[k]);
                    }
                }
            }
            Ok(out)
        })
        .collect();

    let mut values: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(paths.n_paths()); n_assets];
    for r in per_path {
        let v = r?;
        for (k, per_coarse) in v.into_iter().enumerate() {
            values[k].push(per_coarse);
        }
    }

    let interp_bias = deflated
        .iter()
        .map(|field| {
            coarse_levels
                .iter()
                .map(|&m| interpolation_bias_bound(grid, &field.levels[m]))
                .fold(0.0, f64::max)
        })
        .collect();

    Ok(GainsSamples {
        coarse_levels,
        coarse_times,
        values,
        interp_bias,
    })
}

/// Quartile time levels plus the endpoints, deduplicated and sorted.
fn coarse_level_set(levels: usize) -> Vec<usize> {
    let last = levels - 1;
    let mut set = vec![0, last / 4, last / 2, 3 * last / 4, last];
    set.sort_unstable();
    set.dedup();
    set
}

/// Bound on the multilinear interpolation error of a layer:
/// `sum_d (h_d^2 / 8) max |d^2 field / dx_d^2|`.
fn interpolation_bias_bound(grid: &Grid, layer: &[f64]) -> f64 {
    (0..grid.k())
        .map(|d| {
            let dd = second_derivative(grid, layer, d);
            let m = dd.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            grid.dx[d] * grid.dx[d] / 8.0 * m
        })
        .sum()
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftPair {
    pub t_from: f64,
    pub t_to: f64,
    pub mean_change: f64,
    pub std_error: f64,
    /// `3 se + 2 B + floor`: sampling noise, the interpolation-bias bound on
    /// both endpoints, and a floating-point rounding floor for the running
    /// integral of deterministic payoffs.
    pub allowance: f64,
    pub within: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssetDriftReport {
    pub asset: usize,
    pub interp_bias: f64,
    pub pairs: Vec<DriftPair>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub n_paths: usize,
    pub reports: Vec<AssetDriftReport>,
    pub passed: bool,
}

/// Test the martingale property of the deflated gains: for each asset and
/// each coarse time pair, the mean change across paths must vanish within
/// three standard errors plus the interpolation allowance.
pub fn martingale_drift_test(samples: &GainsSamples) -> DriftReport {
    let n_coarse = samples.coarse_levels.len();
    let mut pairs_idx: Vec<(usize, usize)> = (1..n_coarse).map(|j| (j - 1, j)).collect();
    if n_coarse > 2 {
        pairs_idx.push((0, n_coarse - 1));
    }
    let mut reports = Vec::with_capacity(samples.values.len());
    let mut n_paths = 0;
    let fine_steps = samples.coarse_levels.last().copied().unwrap_or(0).max(1) as f64;
    for (k, per_path) in samples.values.iter().enumerate() {
        n_paths = per_path.len();
        let bias = samples.interp_bias[k];
        // Rounding floor: every fine step updates the running dividend
        // integral with O(eps * |G|) rounding error, and when the asset is
        // deterministic those errors are identical on every path, so they
        // survive averaging with a near-zero standard error. Bound the
        // systematic part by eps * max|G| per step.
        let scale = per_path
            .iter()
            .flat_map(|g| g.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()));
        let floor = f64::EPSILON * scale * fine_steps;
        let mut pairs = Vec::with_capacity(pairs_idx.len());
        for &(a, b) in &pairs_idx {
            let diffs: Vec<f64> = per_path.iter().map(|g| g[b] - g[a]).collect();
            let n = diffs.len() as f64;
            let mean = diffs.iter().sum::<f64>() / n;
            let var = if diffs.len() > 1 {
                diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            let se = (var / n).sqrt();
            let allowance = 3.0 * se + 2.0 * bias + floor;
            pairs.push(DriftPair {
                t_from: samples.coarse_times[a],
                t_to: samples.coarse_times[b],
                mean_change: mean,
                std_error: se,
                allowance,
                within: mean.abs() <= allowance,
            });
        }
        let passed = pairs.iter().all(|p| p.within);
        reports.push(AssetDriftReport {
            asset: k,
            interp_bias: bias,
            pairs,
            passed,
        });
    }
    DriftReport {
        n_paths,
        passed: reports.iter().all(|r| r.passed),
        reports,
    }
}
