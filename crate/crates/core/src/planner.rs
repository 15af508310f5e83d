//! Social-planner equilibrium: pointwise sharing rule, budget residuals, and
//! the transfer-weight search.
//!
//! For weights `lambda` the planner splits aggregate consumption `agg` at
//! each `(t, agg)` by the first-order system
//!
//! ```text
//! lambda^i u^i_c(t, x^i) = mu    for all i,      sum_i x^i = agg,
//! ```
//!
//! which pins down the allocation `x^i` and the multiplier `mu`. The
//! state-price density is `psi(t, x) = mu(t, eps(t, x))` and the equilibrium
//! allocation `c^i(t, x) = x^i(t, eps(t, x))`, evaluated on the aggregate
//! endowment. Weights are then adjusted until every agent's intertemporal
//! budget constraint holds: `E \int psi (c^i - eps^i) nu(dt) = 0`, with the
//! expectation taken over simulated state paths held fixed across iterations
//! (common random numbers, so the residual map is smooth in `lambda`).

use rayon::prelude::*;

use crate::config::McSettings;
use crate::economy::{Crra, Economy};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::markov::{simulate_paths, Grid, PathBundle, SpaceTimeField};

/// Arrow–Debreu equilibrium on a grid: weights, state-price density, and
/// allocations, with the budget residuals of the final iterate.
///
/// Flow fields hold one spatial layer per time level; the last level is the
/// flow's left limit at the horizon. The `_lump` companions hold the
/// horizon's lump layer (computed from the lump aggregate endowment).
#[derive(Debug, Clone)]
pub struct ADEquilibrium {
    /// Transfer weights, normalized so `lambda[0] = 1`.
    pub lambda: Vec<f64>,
    /// State-price density `psi(t, x)` (flow).
    pub psi: SpaceTimeField,
    /// Lump state-price layer at the horizon.
    pub psi_lump: Vec<f64>,
    /// Per-agent consumption `c^i(t, x)` (flow).
    pub allocations: Vec<SpaceTimeField>,
    /// Per-agent lump consumption at the horizon.
    pub allocations_lump: Vec<Vec<f64>>,
    /// Budget residuals `E int psi (c^i - eps^i) nu` per agent.
    pub residuals: Vec<f64>,
    /// Positive scales `E int psi eps^i nu` used to normalize residuals.
    pub residual_scales: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
}

impl ADEquilibrium {
    /// Largest residual relative to its agent's endowment value.
    pub fn max_relative_residual(&self) -> f64 {
        self.residuals
            .iter()
            .zip(self.residual_scales.iter())
            .map(|(r, s)| (r / s).abs())
            .fold(0.0, f64::max)
    }

    /// The sharing-rule solver at this equilibrium's weights.
    pub fn sharing(&self, econ: &Economy, t: f64, agg: f64) -> Result<(Vec<f64>, f64)> {
        sharing_rule(econ, &self.lambda, t, agg)
    }
}

/// Solve the planner's pointwise problem: the unique allocation and
/// multiplier with `lambda^i u^i_c(t, x^i) = mu` and `sum x^i = agg`.
///
/// The solver runs a bracketed Newton iteration on `w = log mu`. The sum of
/// CRRA inverse marginals `sum_i exp(-(w - log lambda^i + rho^i t)/gamma^i)`
/// is log-convex and strictly decreasing in `w`, and the bracket
/// `[max_i log(lambda^i u^i_c(t, agg)), max_i log(lambda^i u^i_c(t, agg/I))]`
/// always contains the root, so convergence is guaranteed. The iteration is
/// driven to near machine precision (`|sum x - agg| <= 1e-13 agg`).
pub fn sharing_rule(
    econ: &Economy,
    lambda: &[f64],
    t: f64,
    agg: f64,
) -> Result<(Vec<f64>, f64)> {
    let utilities: Vec<Crra> = econ.agents.iter().map(|a| a.utility).collect();
    sharing_rule_crra(&utilities, lambda, t, agg)
}

/// Sharing rule over explicit CRRA utilities (the grid assembly and the
/// budget quadrature call this in hot loops).
pub fn sharing_rule_crra(
    utilities: &[Crra],
    lambda: &[f64],
    t: f64,
    agg: f64,
) -> Result<(Vec<f64>, f64)> {
    let n = utilities.len();
    if lambda.len() != n {
        return Err(Error::Numerical(format!(
            "sharing rule got {} weights for {n} agents",
            lambda.len()
        )));
    }
    if !(agg > 0.0) || !agg.is_finite() {
        return Err(Error::Numerical(format!(
            "sharing rule needs positive aggregate consumption, got {agg}"
        )));
    }
    if lambda.iter().any(|&l| !(l > 0.0) || !l.is_finite()) {
        return Err(Error::Numerical(format!(
            "sharing rule needs strictly positive weights, got {lambda:?}"
        )));
    }

    // Single agent: the planner problem is trivial and exact.
    if n == 1 {
        let mu = lambda[0] * utilities[0].marginal(t, agg);
        return Ok((vec![agg], mu));
    }

    let ln_lambda: Vec<f64> = lambda.iter().map(|l| l.ln()).collect();
    let ln_agg = agg.ln();

    // log(lambda^i u_c^i(t, c)) = ln lambda_i - rho_i t - gamma_i ln c.
    let log_marginal = |i: usize, ln_c: f64| -> f64 {
        ln_lambda[i] - utilities[i].rho * t - utilities[i].gamma * ln_c
    };
    // Bracket: every agent consumes at most agg, so mu >= lambda^i
    // u_c(t, agg) for all i; some agent consumes at least agg/I, so
    // mu <= max_i lambda^i u_c(t, agg/I).
    let mut w_lo = (0..n).map(|i| log_marginal(i, ln_agg)).fold(f64::NEG_INFINITY, f64::max);
    let mut w_hi = (0..n)
        .map(|i| log_marginal(i, ln_agg - (n as f64).ln()))
        .fold(f64::NEG_INFINITY, f64::max);

    let consumption = |w: f64, out: &mut Vec<f64>| -> (f64, f64) {
        // Returns (sum_i c_i, sum_i c_i / gamma_i).
        let mut sum = 0.0;
        let mut slope = 0.0;
        out.clear();
        for (i, u) in utilities.iter().enumerate() {
            let c = (-(w - ln_lambda[i] + u.rho * t) / u.gamma).exp();
            out.push(c);
            sum += c;
            slope += c / u.gamma;
        }
        (sum, slope)
    };

    let mut c = Vec::with_capacity(n);
    let mut w = 0.5 * (w_lo + w_hi);
    let mut converged = false;
    for _ in 0..200 {
        let (sum, slope) = consumption(w, &mut c);
        let err = sum - agg;
        if err.abs() <= 1e-13 * agg {
            converged = true;
            break;
        }
        if err > 0.0 {
            w_lo = w; // consuming too much: mu must rise
        } else {
            w_hi = w;
        }
        // Newton on F(w) = ln(sum) - ln(agg); F'(w) = -slope/sum.
        let step = (sum.ln() - ln_agg) * sum / slope;
        let mut w_next = w + step;
        if !(w_next > w_lo) || !(w_next < w_hi) {
            w_next = 0.5 * (w_lo + w_hi);
        }
        if w_next == w {
            converged = true;
            break;
        }
        w = w_next;
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "sharing rule did not converge at t={t}, agg={agg}: bracket [{w_lo}, {w_hi}]"
        )));
    }
    // One polishing Newton step from the converged iterate.
    let (sum, slope) = consumption(w, &mut c);
    if (sum - agg).abs() > 0.0 {
        let w_next = w + (sum.ln() - ln_agg) * sum / slope;
        if w_next.is_finite() {
            let (sum2, _) = consumption(w_next, &mut c);
            if (sum2 - agg).abs() < (sum - agg).abs() {
                w = w_next;
            } else {
                consumption(w, &mut c);
            }
        } else {
            consumption(w, &mut c);
        }
    }
    Ok((c, w.exp()))
}

/// CRRA inverse marginal utility, exposed standalone: the `c` with
/// `u_c(t, c) = y`.
pub fn inverse_marginal(utility: &Crra, t: f64, y: f64) -> Result<f64> {
    if !(y > 0.0) {
        return Err(Error::Numerical(format!(
            "inverse marginal utility needs y > 0, got {y}"
        )));
    }
    Ok(utility.inverse_marginal(t, y))
}

/// Precomputed path tables for the budget quadrature. Everything here is
/// independent of the weights, so the expensive expression evaluations run
/// once and every weight iterate reuses them (common random numbers).
pub struct BudgetTables {
    /// Time nodes of the quadrature paths.
    pub times: Vec<f64>,
    /// `agg_flow[p][m]`: aggregate endowment flow along path `p`.
    agg_flow: Vec<Vec<f64>>,
    /// `agg_lump[p]`: lump aggregate endowment at the horizon.
    agg_lump: Vec<f64>,
    /// `eps_flow[i][p][m]`: agent `i`'s full endowment flow.
    eps_flow: Vec<Vec<Vec<f64>>>,
    /// `eps_lump[i][p]`.
    eps_lump: Vec<Vec<f64>>,
    utilities: Vec<Crra>,
}

impl BudgetTables {
    /// Simulate quadrature paths and evaluate all endowment expressions.
    pub fn build(econ: &Economy, quad: &McSettings) -> Result<BudgetTables> {
        let paths = simulate_paths(
            &econ.diffusion,
            econ.horizon,
            quad.steps,
            quad.paths,
            quad.seed,
        )?;
        Self::from_paths(econ, &paths)
    }

    pub fn from_paths(econ: &Economy, paths: &PathBundle) -> Result<BudgetTables> {
        let (agg_flow_e, agg_lump_e) = econ.aggregate_endowment();
        let horizon = econ.horizon;
        let n_agents = econ.n_agents();
        let endowments: Vec<(Expr, Expr)> = (0..n_agents)
            .map(|i| econ.endowment_of_agent(i))
            .collect();

        let per_path: Vec<Result<(Vec<f64>, f64, Vec<Vec<f64>>, Vec<f64>)>> = (0..paths
            .n_paths())
            .into_par_iter()
            .map(|p| {
                let levels = paths.times.len();
                let mut agg_flow = Vec::with_capacity(levels);
                let mut eps_flow = vec![Vec::with_capacity(levels); n_agents];
                for (m, &t) in paths.times.iter().enumerate() {
                    let x = paths.state(p, m);
                    let agg = agg_flow_e
                        .eval(t, x)
                        .map_err(|e| Error::eval("aggregate endowment flow", e))?;
                    if !(agg > 0.0) {
                        return Err(Error::Numerical(format!(
                            "aggregate endowment is nonpositive ({agg}) on path {p} at t={t}, \
                             x={x:?}; the planner problem is undefined there"
                        )));
                    }
                    agg_flow.push(agg);
                    for (i, (flow, _)) in endowments.iter().enumerate() {
                        eps_flow[i].push(
                            flow.eval(t, x)
                                .map_err(|e| Error::eval(format!("agent {i} endowment"), e))?,
                        );
                    }
                }
                let x_t = paths.state(p, levels - 1);
                let agg_lump = agg_lump_e
                    .eval(horizon, x_t)
                    .map_err(|e| Error::eval("aggregate endowment lump", e))?;
                if !(agg_lump > 0.0) {
                    return Err(Error::Numerical(format!(
                        "lump aggregate endowment is nonpositive ({agg_lump}) on path {p}"
                    )));
                }
                let mut eps_lump = Vec::with_capacity(n_agents);
                for (i, (_, lump)) in endowments.iter().enumerate() {
                    eps_lump.push(
                        lump.eval(horizon, x_t)
                            .map_err(|e| Error::eval(format!("agent {i} lump endowment"), e))?,
                    );
                }
                Ok((agg_flow, agg_lump, eps_flow, eps_lump))
            })
            .collect();

        let n_paths = paths.n_paths();
        let mut agg_flow = Vec::with_capacity(n_paths);
        let mut agg_lump = Vec::with_capacity(n_paths);
        let mut eps_flow = vec![Vec::with_capacity(n_paths); n_agents];
        let mut eps_lump = vec![Vec::with_capacity(n_paths); n_agents];
        for r in per_path {
            let (af, al, ef, el) = r?;
            agg_flow.push(af);
            agg_lump.push(al);
            for (i, v) in ef.into_iter().enumerate() {
                eps_flow[i].push(v);
            }
            for (i, v) in el.into_iter().enumerate() {
                eps_lump[i].push(v);
            }
        }
        Ok(BudgetTables {
            times: paths.times.clone(),
            agg_flow,
            agg_lump,
            eps_flow,
            eps_lump,
            utilities: econ.agents.iter().map(|a| a.utility).collect(),
        })
    }

    pub fn n_paths(&self) -> usize {
        self.agg_flow.len()
    }

    /// Budget residuals and scales at the given weights:
    /// `r_i = mean_p [ trapz_m psi (c^i - eps^i) dt + psi_T (c^i_T - eps^i_T) ]`
    /// and `scale_i` the same with `eps^i` in place of `c^i - eps^i`.
    pub fn residuals(&self, lambda: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let n_agents = self.utilities.len();
        let levels = self.times.len();
        let horizon = *self.times.last().unwrap();
        let dt = if levels > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        };

        let per_path: Vec<Result<(Vec<f64>, Vec<f64>)>> = (0..self.n_paths())
            .into_par_iter()
            .map(|p| {
                let mut r = vec![0.0; n_agents];
                let mut s = vec![0.0; n_agents];
                for m in 0..levels {
                    let t = self.times[m];
                    let weight = if m == 0 || m == levels - 1 {
                        0.5 * dt
                    } else {
                        dt
                    };
                    let (c, mu) =
                        sharing_rule_crra(&self.utilities, lambda, t, self.agg_flow[p][m])?;
                    for i in 0..n_agents {
                        let eps = self.eps_flow[i][p][m];
                        r[i] += weight * mu * (c[i] - eps);
                        s[i] += weight * mu * eps;
                    }
                }
                let (c_t, mu_t) =
                    sharing_rule_crra(&self.utilities, lambda, horizon, self.agg_lump[p])?;
                for i in 0..n_agents {
                    let eps = self.eps_lump[i][p];
                    r[i] += mu_t * (c_t[i] - eps);
                    s[i] += mu_t * eps;
                }
                Ok((r, s))
            })
            .collect();

        let mut r_total = vec![0.0; n_agents];
        let mut s_total = vec![0.0; n_agents];
        for pr in per_path {
            let (r, s) = pr?;
            for i in 0..n_agents {
                r_total[i] += r[i];
                s_total[i] += s[i];
            }
        }
        let inv = 1.0 / self.n_paths() as f64;
        for i in 0..n_agents {
            r_total[i] *= inv;
            s_total[i] *= inv;
        }
        Ok((r_total, s_total))
    }
}

/// Budget residuals per agent at the given weights (one-shot entry: builds
/// quadrature paths from `quad`, evaluates once).
pub fn budget_residuals(
    econ: &Economy,
    lambda: &[f64],
    quad: &McSettings,
) -> Result<(Vec<f64>, Vec<f64>)> {
    BudgetTables::build(econ, quad)?.residuals(lambda)
}

fn scaled_max(r: &[f64], s: &[f64]) -> f64 {
    r.iter()
        .zip(s.iter())
        .map(|(ri, si)| (ri / si).abs())
        .fold(0.0, f64::max)
}

/// Find transfer weights making every budget residual small, then assemble
/// the equilibrium fields on `grid`.
///
/// `lambda[0] = 1` is fixed (prices are scale-free) and the remaining
/// weights are searched in log space: a bracketed secant iteration for two
/// agents, damped Broyden with a finite-difference initial Jacobian for
/// more. Non-convergence returns the best iterate with `converged = false`
/// rather than an error, so callers can inspect the residuals.
pub fn negishi_solve(
    econ: &Economy,
    grid: &Grid,
    quad: &McSettings,
    tol: f64,
) -> Result<ADEquilibrium> {
    let n_agents = econ.n_agents();
    let tables = BudgetTables::build(econ, quad)?;

    let check_scales = |scales: &[f64]| -> Result<()> {
        let max = scales.iter().cloned().fold(0.0, f64::max);
        for (i, &s) in scales.iter().enumerate() {
            if !(s > 1e-12 * max) {
                return Err(Error::NegishiDiverged(format!(
                    "agent {i}'s endowment value {s} is degenerate (zero wealth would force a \
                     zero weight, which the equilibrium excludes)"
                )));
            }
        }
        Ok(())
    };

    if n_agents == 1 {
        let lambda = vec![1.0];
        let (residuals, scales) = tables.residuals(&lambda)?;
        check_scales(&scales)?;
        return assemble(econ, grid, lambda, residuals, scales, true, 0);
    }

    let eval = |z: &[f64]| -> Result<(Vec<f64>, Vec<f64>)> {
        let mut lambda = Vec::with_capacity(n_agents);
        lambda.push(1.0);
        lambda.extend(z.iter().map(|&zi| zi.exp()));
        tables.residuals(&lambda)
    };

    let mut z = vec![0.0; n_agents - 1];
    let (mut r, mut s) = eval(&z)?;
    check_scales(&s)?;
    let mut best = (z.clone(), r.clone(), s.clone(), scaled_max(&r, &s));
    let mut iterations = 0;

    if n_agents == 2 {
        // Scalar problem: r_2 is strictly increasing in lambda_2. Bracket the
        // root, then run a bisection-guarded secant iteration.
        let mut z2 = z[0];
        let mut f = r[1] / s[1];
        let (mut lo, mut hi, mut f_lo, mut f_hi) = (z2, z2, f, f);
        let mut step = 1.0;
        while f_lo > 0.0 || f_hi < 0.0 {
            iterations += 1;
            if iterations > 60 {
                break;
            }
            if f_lo > 0.0 {
                lo -= step;
                let (rr, ss) = eval(&[lo])?;
                f_lo = rr[1] / ss[1];
                if scaled_max(&rr, &ss) < best.3 {
                    best = (vec![lo], rr, ss, scaled_max(&best.1, &best.2).min(f_lo.abs()));
                }
            }
            if f_hi < 0.0 {
                hi += step;
                let (rr, ss) = eval(&[hi])?;
                f_hi = rr[1] / ss[1];
            }
            step *= 2.0;
        }
        if f_lo <= 0.0 && f_hi >= 0.0 {
            let mut prev = (z2, f);
            for _ in 0..100 {
                iterations += 1;
                let (rr, ss) = eval(&[z2])?;
                f = rr[1] / ss[1];
                let m = scaled_max(&rr, &ss);
                if m < best.3 {
                    best = (vec![z2], rr.clone(), ss.clone(), m);
                }
                if m <= tol {
                    break;
                }
                if f > 0.0 {
                    hi = z2;
                } else {
                    lo = z2;
                }
                let denom = f - prev.1;
                let mut z_next = if denom.abs() > 1e-300 && prev.0 != z2 {
                    z2 - f * (z2 - prev.0) / denom
                } else {
                    0.5 * (lo + hi)
                };
                if !(z_next > lo) || !(z_next < hi) {
                    z_next = 0.5 * (lo + hi);
                }
                prev = (z2, f);
                if z_next == z2 {
                    break;
                }
                z2 = z_next;
            }
        }
    } else {
        // Damped Broyden on the scaled residuals of agents 2..I.
        let dim = n_agents - 1;
        let g = |r: &[f64], s: &[f64]| -> Vec<f64> {
            (1..n_agents).map(|i| r[i] / s[i]).collect()
        };
        let mut gz = g(&r, &s);
        // Forward-difference initial Jacobian.
        let fd = 1e-4;
        let mut jac = vec![0.0; dim * dim];
        for j in 0..dim {
            let mut zj = z.clone();
            zj[j] += fd;
            let (rj, sj) = eval(&zj)?;
            let gj = g(&rj, &sj);
            for i in 0..dim {
                jac[i * dim + j] = (gj[i] - gz[i]) / fd;
            }
            iterations += 1;
        }
        for _ in 0..100 {
            iterations += 1;
            let m = scaled_max(&r, &s);
            if m < best.3 {
                best = (z.clone(), r.clone(), s.clone(), m);
            }
            if m <= tol {
                break;
            }
            let neg_g: Vec<f64> = gz.iter().map(|v| -v).collect();
            let Some(dz) = crate::linalg::solve(&jac, &neg_g, dim) else {
                break;
            };
            // Damped line search on the residual norm.
            let norm0 = gz.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..8 {
                let z_try: Vec<f64> = z
                    .iter()
                    .zip(dz.iter())
                    .map(|(zi, di)| zi + alpha * di)
                    .collect();
                let (r_try, s_try) = eval(&z_try)?;
                let g_try = g(&r_try, &s_try);
                let norm = g_try.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
                if norm < norm0 || alpha < 1.0 / 128.0 {
                    accepted = Some((z_try, r_try, s_try, g_try));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((z_new, r_new, s_new, g_new)) = accepted else {
                break;
            };
            // Broyden rank-one update: J += (dg - J dz) dz^T / (dz . dz).
            let dz_used: Vec<f64> = z_new.iter().zip(z.iter()).map(|(a, b)| a - b).collect();
            let dz_norm2: f64 = dz_used.iter().map(|v| v * v).sum();
            if dz_norm2 > 0.0 {
                let jdz = crate::linalg::matvec(&jac, &dz_used, dim);
                for i in 0..dim {
                    let coeff = (g_new[i] - gz[i] - jdz[i]) / dz_norm2;
                    for j in 0..dim {
                        jac[i * dim + j] += coeff * dz_used[j];
                    }
                }
            }
            z = z_new;
            r = r_new;
            s = s_new;
            gz = g_new;
        }
        let m = scaled_max(&r, &s);
        if m < best.3 {
            best = (z, r, s, m);
        }
    }

    let (z_best, r_best, s_best, m_best) = best;
    let mut lambda = Vec::with_capacity(n_agents);
    lambda.push(1.0);
    lambda.extend(z_best.iter().map(|&zi| zi.exp()));
    let converged = m_best <= tol;
    assemble(econ, grid, lambda, r_best, s_best, converged, iterations)
}

/// Evaluate the equilibrium fields on the grid from solved weights.
fn assemble(
    econ: &Economy,
    grid: &Grid,
    lambda: Vec<f64>,
    residuals: Vec<f64>,
    residual_scales: Vec<f64>,
    converged: bool,
    iterations: usize,
) -> Result<ADEquilibrium> {
    let n_agents = econ.n_agents();
    let utilities: Vec<Crra> = econ.agents.iter().map(|a| a.utility).collect();
    let (agg_flow_e, agg_lump_e) = econ.aggregate_endowment();
    let spatial = grid.spatial_len();

    let mut psi = SpaceTimeField::zeros(grid);
    let mut allocations = vec![SpaceTimeField::zeros(grid); n_agents];

    let solve_layer = |e: &Expr, t: f64| -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
        let per_node: Vec<Result<(f64, Vec<f64>)>> = (0..spatial)
            .into_par_iter()
            .map(|flat| {
                let mut x = Vec::with_capacity(grid.k());
                grid.node(flat, &mut x);
                let agg = e
                    .eval(t, &x)
                    .map_err(|err| Error::eval("aggregate endowment", err))?;
                if !(agg > 0.0) {
                    return Err(Error::Numerical(format!(
                        "aggregate endowment is nonpositive ({agg}) at t={t}, x={x:?}"
                    )));
                }
                let (c, mu) = sharing_rule_crra(&utilities, &lambda, t, agg)?;
                Ok((mu, c))
            })
            .collect();
        let mut psi_layer = vec![0.0; spatial];
        let mut alloc_layers = vec![vec![0.0; spatial]; n_agents];
        for (flat, r) in per_node.into_iter().enumerate() {
            let (mu, c) = r?;
            psi_layer[flat] = mu;
            for i in 0..n_agents {
                alloc_layers[i][flat] = c[i];
            }
        }
        Ok((psi_layer, alloc_layers))
    };

    for (m, &t) in grid.times.iter().enumerate() {
        let (psi_layer, alloc_layers) = solve_layer(&agg_flow_e, t)?;
        psi.levels[m] = psi_layer;
        for (i, layer) in alloc_layers.into_iter().enumerate() {
            allocations[i].levels[m] = layer;
        }
    }
    let (psi_lump, allocations_lump) = solve_layer(&agg_lump_e, econ.horizon)?;

    Ok(ADEquilibrium {
        lambda,
        psi,
        psi_lump,
        allocations,
        allocations_lump,
        residuals,
        residual_scales,
        converged,
        iterations,
    })
}
