//! Euler–Maruyama simulation of the state diffusion.
//!
//! Reproducibility contract: each path owns an independent generator stream
//! derived from `(seed, path index)`, so results are bit-identical for a
//! given seed regardless of thread count or scheduling, and paths can be
//! simulated in parallel.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::economy::Diffusion;
use crate::error::{Error, Result};

/// A bundle of simulated trajectories on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBundle {
    /// State dimension.
    pub k: usize,
    /// Time nodes `0 = t_0 < … < t_M = T` (length `steps + 1`).
    pub times: Vec<f64>,
    /// `states[p][m * k + d]`: component `d` of path `p` at time `t_m`.
    pub states: Vec<Vec<f64>>,
    /// `increments[p][m * k + d]`: Brownian increment used for the step
    /// `t_m -> t_{m+1}` (length `steps * k` per path).
    pub increments: Vec<Vec<f64>>,
    pub seed: u64,
}

impl PathBundle {
    pub fn n_paths(&self) -> usize {
        self.states.len()
    }

    pub fn n_steps(&self) -> usize {
        self.times.len() - 1
    }

    /// State of path `p` at time index `m`.
    pub fn state(&self, p: usize, m: usize) -> &[f64] {
        &self.states[p][m * self.k..(m + 1) * self.k]
    }

    /// Write the bundle as CSV (`path,time,x1..xK`) for external inspection.
    pub fn to_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        write!(w, "path,time")?;
        for d in 0..self.k {
            write!(w, ",x{}", d + 1)?;
        }
        writeln!(w)?;
        for p in 0..self.n_paths() {
            for (m, &t) in self.times.iter().enumerate() {
                write!(w, "{p},{t}")?;
                for d in 0..self.k {
                    write!(w, ",{}", self.state(p, m)[d])?;
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// Simulate `n_paths` Euler–Maruyama trajectories of `d` over `[t0, t0 + span]`
/// with `steps` uniform steps:
/// `X_{m+1} = X_m + b(X_m) dt + sigma(X_m) sqrt(dt) xi_m`.
///
/// Path `p` draws from stream `p` of a counter-based generator seeded with
/// `seed`, making every path independent and individually reproducible.
pub fn simulate_paths_from(
    d: &Diffusion,
    x_start: &[f64],
    t0: f64,
    span: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    if steps < 1 || n_paths < 1 {
        return Err(Error::Config("steps and n_paths must be >= 1".into()));
    }
    if !(span > 0.0) {
        return Err(Error::Config("simulation span must be positive".into()));
    }
    let k = d.k;
    let dt = span / steps as f64;
    let sqrt_dt = dt.sqrt();
    let times: Vec<f64> = (0..=steps).map(|m| t0 + m as f64 * dt).collect();

    let results: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(p as u64);
            let mut states = Vec::with_capacity((steps + 1) * k);
            let mut increments = Vec::with_capacity(steps * k);
            let mut x = x_start.to_vec();
            states.extend_from_slice(&x);
            let mut xi = vec![0.0; k];
            for m in 0..steps {
                for slot in xi.iter_mut() {
                    *slot = StandardNormal.sample(&mut rng);
                }
                increments.extend(xi.iter().map(|&z| z * sqrt_dt));
                let b = d.drift_at(&x).map_err(|e| {
                    Error::Numerical(format!("drift failed on path {p} step {m}: {e}"))
                })?;
                let s = d.sigma_at(&x).map_err(|e| {
                    Error::Numerical(format!("dispersion failed on path {p} step {m}: {e}"))
                })?;
                for dd in 0..k {
                    let mut diff = 0.0;
                    for l in 0..k {
                        diff += s[dd * k + l] * xi[l];
                    }
                    x[dd] += b[dd] * dt + diff * sqrt_dt;
                }
                states.extend_from_slice(&x);
            }
            Ok((states, increments))
        })
        .collect();

    let mut states = Vec::with_capacity(n_paths);
    let mut increments = Vec::with_capacity(n_paths);
    for r in results {
        let (s, i) = r?;
        states.push(s);
        increments.push(i);
    }
    Ok(PathBundle {
        k,
        times,
        states,
        increments,
        seed,
    })
}

/// Simulate from the diffusion's initial state over `[0, horizon]`.
pub fn simulate_paths(
    d: &Diffusion,
    horizon: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathBundle> {
    simulate_paths_from(d, &d.x0, 0.0, horizon, steps, n_paths, seed)
}
