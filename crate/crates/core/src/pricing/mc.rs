//! Monte Carlo oracle for present values.
//!
//! Estimates `E[ \int_0^T f(t, X_t) dt + g(T, X_T) ]` by trapezoidal
//! quadrature along simulated paths. This route never touches a grid or a
//! PDE solve, so it provides an independent cross-check of the backward
//! solver: the two must agree within the reported standard error plus the
//! discretization allowances.

use rayon::prelude::*;

use crate::config::McSettings;
use crate::economy::{Crra, Economy};
use crate::error::{Error, Result};
use crate::markov::{simulate_paths, PathBundle};
use crate::planner::sharing_rule_crra;

/// A Monte Carlo estimate with its sampling uncertainty.
#[derive(Debug, Clone, serde::Serialize)]
pub struct McEstimate {
    pub value: f64,
    /// Standard error of the mean across paths.
    pub std_error: f64,
    pub n_paths: usize,
}

/// Mean and standard error of per-path functionals
/// `trapz_m flow(p, m) dt + terminal(p)`.
///
/// `flow` is evaluated at every path time level; `terminal` once per path at
/// the horizon. Errors from either closure abort the estimate.
pub fn path_expectation<F, G>(paths: &PathBundle, flow: F, terminal: G) -> Result<McEstimate>
where
    F: Fn(usize, usize, f64, &[f64]) -> Result<f64> + Sync,
    G: Fn(usize, f64, &[f64]) -> Result<f64> + Sync,
{
    let levels = paths.times.len();
    let horizon = *paths.times.last().unwrap();
    let dt = if levels > 1 {
        paths.times[1] - paths.times[0]
    } else {
        0.0
    };
    let totals: Vec<Result<f64>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut acc = 0.0;
            for (m, &t) in paths.times.iter().enumerate() {
                let w = if m == 0 || m == levels - 1 {
                    0.5 * dt
                } else {
                    dt
                };
                acc += w * flow(p, m, t, paths.state(p, m))?;
            }
            acc += terminal(p, horizon, paths.state(p, levels - 1))?;
            Ok(acc)
        })
        .collect();
    let mut values = Vec::with_capacity(totals.len());
    for t in totals {
        values.push(t?);
    }
    Ok(summarize(&values))
}

fn summarize(values: &[f64]) -> McEstimate {
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = if n > 1 {
        values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
    } else {
        0.0
    };
    McEstimate {
        value: mean,
        std_error: (var / n as f64).sqrt(),
        n_paths: n,
    }
}

/// Monte Carlo asset prices at time zero:
/// `S^k_0 = E[ int g^k psi dt + g^k_T psi_T ] / psi(0, x_0)`,
/// with the state-price density evaluated exactly along each path through
/// the sharing rule at the given weights.
pub fn mc_asset_prices(
    econ: &Economy,
    lambda: &[f64],
    settings: &McSettings,
) -> Result<Vec<McEstimate>> {
    let paths = simulate_paths(
        &econ.diffusion,
        econ.horizon,
        settings.steps,
        settings.paths,
        settings.seed,
    )?;
    let utilities: Vec<Crra> = econ.agents.iter().map(|a| a.utility).collect();
    let (agg_flow, agg_lump) = econ.aggregate_endowment();
    let n_assets = econ.n_assets();
    let levels = paths.times.len();
    let horizon = *paths.times.last().unwrap();
    let dt = paths.times[1] - paths.times[0];

    let per_path: Vec<Result<Vec<f64>>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|p| {
            let mut acc = vec![0.0; n_assets];
            for (m, &t) in paths.times.iter().enumerate() {
                let x = paths.state(p, m);
                let agg = agg_flow
                    .eval(t, x)
                    .map_err(|e| Error::eval("aggregate endowment flow", e))?;
                let (_, mu) = sharing_rule_crra(&utilities, lambda, t, agg)?;
                let w = if m == 0 || m == levels - 1 {
                    0.5 * dt
                } else {
                    dt
                };
                for (k, asset) in econ.assets.iter().enumerate() {
                    let g = asset
                        .dividend
                        .eval(t, x)
                        .map_err(|e| Error::eval(format!("asset {k} dividend"), e))?;
                    acc[k] += w * g * mu;
                }
            }
            let x = paths.state(p, levels - 1);
            let agg = agg_lump
                .eval(horizon, x)
                .map_err(|e| Error::eval("aggregate endowment lump", e))?;
            let (_, mu) = sharing_rule_crra(&utilities, lambda, horizon, agg)?;
            for (k, asset) in econ.assets.iter().enumerate() {
                let g = asset
                    .terminal
                    .eval(horizon, x)
                    .map_err(|e| Error::eval(format!("asset {k} terminal payoff"), e))?;
                acc[k] += g * mu;
            }
            Ok(acc)
        })
        .collect();

    let mut per_asset: Vec<Vec<f64>> = vec![Vec::with_capacity(paths.n_paths()); n_assets];
    for r in per_path {
        let v = r?;
        for (k, val) in v.into_iter().enumerate() {
            per_asset[k].push(val);
        }
    }

    let agg0 = agg_flow
        .eval(0.0, &econ.diffusion.x0)
        .map_err(|e| Error::eval("aggregate endowment flow", e))?;
    let (_, psi0) = sharing_rule_crra(&utilities, lambda, 0.0, agg0)?;
    if !(psi0 > 0.0) {
        return Err(Error::Numerical(format!(
            "state-price density at time zero is {psi0}; cannot normalize prices"
        )));
    }
    Ok(per_asset
        .into_iter()
        .map(|vals| {
            let mut e = summarize(&vals);
            e.value /= psi0;
            e.std_error /= psi0;
            e
        })
        .collect())
}
