//! Sequential-trade implementation of the planner equilibrium.
//!
//! Each agent's net-trade value `v^i(t, x) = E[ int_t^T (c^i - eps^i) psi
//! nu(ds) | X_t = x ]` is another backward solve. Its replicating portfolio
//! comes from matching diffusion exposures in numéraire units: the risky
//! positions solve `(Dr sigma)^T theta = sigma^T grad(v^i / s^0)` and the
//! numéraire position is the self-financing residual `theta^0 = v^i/s^0 -
//! sum_k theta_k r^k`. The simulation then marches the discrete budget
//! identity along paths,
//!
//! ```text
//! V_{m+1} = V_m + theta_m . (G_{m+1} - G_m) + (e^i - c^i) psi dt,
//! ```
//!
//! in deflated units (`G^k = u^k + int g^k psi dt`, `e^i` the entitlement
//! alone — dividend income arrives through the gains), and compares `V`
//! with `v^i + n^i . u` (replication error). Consumption and portfolio
//! clearing and the admissibility margin `V + E[future entitlement value]`
//! are reported alongside.
//!
//! Everything evaluated pointwise along paths (the density, allocations,
//! dividends, entitlements) uses exact expression evaluation and sharing-
//! rule solves; only the solved fields (`u`, `v`, `w`, `theta`) are grid
//! interpolated, so autarky replication is exact to rounding.

use rayon::prelude::*;
use serde::Serialize;

use crate::completeness::NormalizedPrices;
use crate::economy::{Crra, Economy};
use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::linalg;
use crate::markov::{
    interp_space_time, spatial_gradient, GeneratorTables, Grid, PathBundle, SpaceTimeField,
};
use crate::planner::{sharing_rule_crra, ADEquilibrium};
use crate::pricing::{solve_backward, BackwardProblem, PricingSolution};

/// Net-trade present value of one agent: backward solve with source
/// `(c^i - eps^i) psi` (full endowment: entitlement plus dividend income)
/// and terminal layer `(c^i_T - eps^i_T) psi_T`.
pub fn net_trade_value(
    econ: &Economy,
    grid: &Grid,
    tables: &GeneratorTables,
    eq: &ADEquilibrium,
    agent: usize,
    theta: f64,
) -> Result<SpaceTimeField> {
    let (eps_flow, eps_lump) = econ.endowment_of_agent(agent);
    let mut source = SpaceTimeField::zeros(grid);
    for (m, &t) in grid.times.iter().enumerate() {
        let eps = grid.eval_spatial(&eps_flow, t, &format!("agent {agent} endowment"))?;
        for (dst, ((c, e), psi)) in source.levels[m].iter_mut().zip(
            eq.allocations[agent].levels[m]
                .iter()
                .zip(eps.iter())
                .zip(eq.psi.levels[m].iter()),
        ) {
            *dst = (c - e) * psi;
        }
    }
    let eps_t = grid.eval_spatial(
        &eps_lump,
        econ.horizon,
        &format!("agent {agent} lump endowment"),
    )?;
    let terminal: Vec<f64> = eq.allocations_lump[agent]
        .iter()
        .zip(eps_t.iter())
        .zip(eq.psi_lump.iter())
        .map(|((c, e), psi)| (c - e) * psi)
        .collect();
    solve_backward(&BackwardProblem {
        grid,
        tables,
        source: &source,
        terminal,
        theta,
    })
}

/// Continuation value of the entitlement stream alone:
/// `w^i(t, x) = E[ int_t^T e^i psi ds | X_t = x ]` (no lump part — the
/// horizon endowment is dividend income). `V + w` is the admissibility
/// margin, which equilibrium consumption keeps strictly positive.
pub fn entitlement_value(
    econ: &Economy,
    grid: &Grid,
    tables: &GeneratorTables,
    eq: &ADEquilibrium,
    agent: usize,
    theta: f64,
) -> Result<SpaceTimeField> {
    let ent = &econ.agents[agent].entitlement;
    let mut source = SpaceTimeField::zeros(grid);
    for (m, &t) in grid.times.iter().enumerate() {
        let e = grid.eval_spatial(ent, t, &format!("agent {agent} entitlement"))?;
        for (dst, (ev, psi)) in source.levels[m]
            .iter_mut()
            .zip(e.iter().zip(eq.psi.levels[m].iter()))
        {
            *dst = ev * psi;
        }
    }
    solve_backward(&BackwardProblem {
        grid,
        tables,
        source: &source,
        terminal: vec![0.0; grid.spatial_len()],
        theta,
    })
}

/// Replicating portfolio at a single grid node (level `m`, flat node
/// index): matches the diffusion exposure of `v` in numéraire units.
/// Returns the K+1 net positions; errors name the node if the exposure
/// system is singular there (a completeness-violation witness).
pub fn replicating_portfolio(
    econ: &Economy,
    grid: &Grid,
    p: &PricingSolution,
    normalized: &NormalizedPrices,
    v: &SpaceTimeField,
    level: usize,
    flat: usize,
) -> Result<Vec<f64>> {
    let k = econ.diffusion.k;
    // Numeraire units: divide by the deflated numeraire value u^0, so that
    // value matching reads v / u^0 = theta_0 + sum_k theta_k r_k and the
    // exposure system is sum_k theta_k sigma^T grad r_k = sigma^T grad (v/u^0).
    let vhat_layer: Vec<f64> = v.levels[level]
        .iter()
        .zip(p.deflated[0].levels[level].iter())
        .map(|(a, b)| a / b)
        .collect();
    let grad_vhat: Vec<Vec<f64>> = (0..k)
        .map(|d| spatial_gradient(grid, &vhat_layer, d))
        .collect();
    let grads_r: Vec<Vec<Vec<f64>>> = normalized
        .ratios
        .iter()
        .map(|r| {
            (0..k)
                .map(|d| spatial_gradient(grid, &r.levels[level], d))
                .collect()
        })
        .collect();
    let mut x = Vec::with_capacity(k);
    grid.node(flat, &mut x);
    let sigma = econ.diffusion.sigma_at(&x)?;
    let r_at: Vec<f64> = normalized
        .ratios
        .iter()
        .map(|r| r.levels[level][flat])
        .collect();
    let dr_at: Vec<f64> = (0..k * k)
        .map(|i| grads_r[i / k][i % k][flat])
        .collect();
    let gv_at: Vec<f64> = (0..k).map(|d| grad_vhat[d][flat]).collect();
    solve_node_portfolio(&sigma, &r_at, &dr_at, &gv_at, vhat_layer[flat], k).ok_or_else(|| {
        Error::Numerical(format!(
            "replication system is singular at t={}, x={:?} (volatility matrix not invertible)",
            grid.times[level], x
        ))
    })
}

/// Solve one node's exposure system; `None` if singular.
fn solve_node_portfolio(
    sigma: &[f64],
    r: &[f64],
    dr: &[f64],
    grad_vhat: &[f64],
    vhat: f64,
    k: usize,
) -> Option<Vec<f64>> {
    // A = (Dr sigma)^T, rhs = sigma^T grad vhat.
    let mut a = vec![0.0; k * k];
    for row in 0..k {
        for col in 0..k {
            let mut acc = 0.0;
            for l in 0..k {
                acc += dr[col * k + l] * sigma[l * k + row];
            }
            a[row * k + col] = acc;
        }
    }
    let rhs: Vec<f64> = (0..k)
        .map(|d| (0..k).map(|l| sigma[l * k + d] * grad_vhat[l]).sum())
        .collect();
    let risky = linalg::solve(&a, &rhs, k)?;
    let mut theta = Vec::with_capacity(k + 1);
    let bond = vhat - risky.iter().zip(r.iter()).map(|(t, rr)| t * rr).sum::<f64>();
    theta.push(bond);
    theta.extend(risky);
    Some(theta)
}

/// One agent's replication inputs: value fields and the full portfolio
/// fields (net positions plus initial shares) on the grid. Singular nodes
/// hold NaN and are counted; paths touching them are excluded downstream.
pub struct AgentReplication {
    pub agent: usize,
    /// Net-trade value `v^i`.
    pub v: SpaceTimeField,
    /// Continuation entitlement value `w^i`.
    pub w: SpaceTimeField,
    /// Full portfolio fields, K+1 components.
    pub theta: Vec<SpaceTimeField>,
    pub singular_nodes: usize,
}

/// Build everything `simulate_radner` needs for one agent.
pub fn build_agent_replication(
    econ: &Economy,
    grid: &Grid,
    tables: &GeneratorTables,
    eq: &ADEquilibrium,
    p: &PricingSolution,
    normalized: &NormalizedPrices,
    agent: usize,
    theta_weight: f64,
) -> Result<AgentReplication> {
    let k = econ.diffusion.k;
    let spatial = grid.spatial_len();
    let v = net_trade_value(econ, grid, tables, eq, agent, theta_weight)?;
    let w = entitlement_value(econ, grid, tables, eq, agent, theta_weight)?;
    let shares = &econ.agents[agent].shares;

    // sigma per node, evaluated once.
    let mut sigma_table: Vec<Vec<f64>> = Vec::with_capacity(spatial);
    let mut x = Vec::with_capacity(k);
    for flat in 0..spatial {
        grid.node(flat, &mut x);
        sigma_table.push(econ.diffusion.sigma_at(&x)?);
    }

    let mut theta_fields = vec![SpaceTimeField::zeros(grid); k + 1];
    let mut singular = 0usize;
    for m in 0..grid.n_levels() {
        // Same numeraire units as `replicating_portfolio`: vhat = v / u^0.
        let vhat: Vec<f64> = v.levels[m]
            .iter()
            .zip(p.deflated[0].levels[m].iter())
            .map(|(a, b)| a / b)
            .collect();
        let grad_vhat: Vec<Vec<f64>> = (0..k).map(|d| spatial_gradient(grid, &vhat, d)).collect();
        let grads_r: Vec<Vec<Vec<f64>>> = normalized
            .ratios
            .iter()
            .map(|r| {
                (0..k)
                    .map(|d| spatial_gradient(grid, &r.levels[m], d))
                    .collect()
            })
            .collect();
        let mut r_at = vec![0.0; k];
        let mut dr_at = vec![0.0; k * k];
        let mut gv_at = vec![0.0; k];
        for flat in 0..spatial {
            for row in 0..k {
                r_at[row] = normalized.ratios[row].levels[m][flat];
                for l in 0..k {
                    dr_at[row * k + l] = grads_r[row][l][flat];
                }
                gv_at[row] = grad_vhat[row][flat];
            }
            match solve_node_portfolio(&sigma_table[flat], &r_at, &dr_at, &gv_at, vhat[flat], k) {
                Some(net) => {
                    for (c, field) in theta_fields.iter_mut().enumerate() {
                        field.levels[m][flat] = net[c] + shares[c];
                    }
                }
                None => {
                    singular += 1;
                    for field in theta_fields.iter_mut() {
                        field.levels[m][flat] = f64::NAN;
                    }
                }
            }
        }
    }
    Ok(AgentReplication {
        agent,
        v,
        w,
        theta: theta_fields,
        singular_nodes: singular,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AgentOutcome {
    pub agent: usize,
    /// RMS replication error across paths, per path time level.
    pub replication_rms_by_level: Vec<f64>,
    pub replication_rms_mid: f64,
    pub replication_rms_terminal: f64,
    pub replication_max_abs: f64,
    /// `v^i(0, x_0)`: should vanish at the solved weights (budget
    /// exactness).
    pub initial_net_trade_value: f64,
    /// Minimum over paths and times of `V + w` (sampled admissibility
    /// surrogate; the continuous-time notion is path-space global).
    pub admissibility_margin_min: f64,
    /// Typical wealth magnitude (RMS of the target at the mid level), for
    /// reading the errors relatively.
    pub wealth_scale: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RadnerOutcome {
    pub n_paths: usize,
    pub n_steps: usize,
    pub agents: Vec<AgentOutcome>,
    /// Max over steps/paths/components of `|sum_i theta^i - N|`.
    pub clearing_max_abs: f64,
    /// The same, per unit of the supply's max-norm.
    pub clearing_relative: f64,
    pub supply_norm: f64,
    /// Max over path nodes of `|sum_i c^i - agg| / agg`.
    pub consumption_clearing_max_rel: f64,
    /// Paths excluded because a portfolio interpolation touched a singular
    /// node.
    pub excluded_paths: usize,
    /// Paths that left the region box at some step (values clamped).
    pub exited_paths: usize,
    pub valid: bool,
    pub invalid_reasons: Vec<String>,
}

/// March the discrete budget identity along each path for every agent and
/// aggregate replication, clearing, and admissibility diagnostics.
pub fn simulate_radner(
    econ: &Economy,
    grid: &Grid,
    eq: &ADEquilibrium,
    p: &PricingSolution,
    agents: &[AgentReplication],
    paths: &PathBundle,
) -> Result<RadnerOutcome> {
    let k = econ.diffusion.k;
    let n_assets = k + 1;
    let n_agents = agents.len();
    if n_agents != econ.n_agents() {
        return Err(Error::Numerical(format!(
            "simulation got {} agent replication inputs for {} agents",
            n_agents,
            econ.n_agents()
        )));
    }
    let utilities: Vec<Crra> = econ.agents.iter().map(|a| a.utility).collect();
    let (agg_flow, _) = econ.aggregate_endowment();
    let entitlements: Vec<&Expr> = econ.agents.iter().map(|a| &a.entitlement).collect();
    let supply = econ.total_supply();
    let supply_norm = supply.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let levels = paths.times.len();
    let dt = if levels > 1 {
        paths.times[1] - paths.times[0]
    } else {
        0.0
    };
    let lambda = &eq.lambda;

    struct PathResult {
        /// err[agent][level]
        err: Vec<Vec<f64>>,
        target_mid_sq: Vec<f64>,
        margin_min: Vec<f64>,
        clearing_max: f64,
        cons_clear_max: f64,
        exited: bool,
    }

    let lo = &econ.region.lo;
    let hi = &econ.region.hi;
    let mid_level = (levels - 1) / 2;

    let per_path: Vec<Result<Option<PathResult>>> = (0..paths.n_paths())
        .into_par_iter()
        .map(|pi| {
            let mut err = vec![vec![0.0; levels]; n_agents];
            let mut target_mid_sq = vec![0.0; n_agents];
            let mut margin_min = vec![f64::INFINITY; n_agents];
            let mut clearing_max = 0.0f64;
            let mut cons_clear_max = 0.0f64;
            let mut exited = false;

            // Wealth per agent, flow values carried from the previous step
            // for the trapezoid legs.
            let mut wealth = vec![0.0; n_agents];
            let mut prev_gain_flow = vec![0.0; n_assets];
            let mut prev_cons_flow = vec![0.0; n_agents];
            let mut prev_u = vec![0.0; n_assets];
            let mut theta_now = vec![vec![0.0; n_assets]; n_agents];

            for (m, &t) in paths.times.iter().enumerate() {
                let x = paths.state(pi, m);
                if x.iter()
                    .zip(lo.iter().zip(hi.iter()))
                    .any(|(xv, (l, h))| xv < l || xv > h)
                {
                    exited = true;
                }
                // Exact pointwise economics at (t, x).
                let agg = agg_flow
                    .eval(t, x)
                    .map_err(|e| Error::eval("aggregate endowment flow", e))?;
                let (c, mu) = sharing_rule_crra(&utilities, lambda, t, agg)?;
                let cons_sum: f64 = c.iter().sum();
                cons_clear_max = cons_clear_max.max(((cons_sum - agg) / agg).abs());
                let mut gain_flow = vec![0.0; n_assets];
                for (kk, asset) in econ.assets.iter().enumerate() {
                    let g = asset
                        .dividend
                        .eval(t, x)
                        .map_err(|e| Error::eval(format!("asset {kk} dividend"), e))?;
                    gain_flow[kk] = g * mu;
                }
                let mut cons_flow = vec![0.0; n_agents];
                for i in 0..n_agents {
                    let e = entitlements[i]
                        .eval(t, x)
                        .map_err(|err| Error::eval(format!("agent {i} entitlement"), err))?;
                    cons_flow[i] = (e - c[i]) * mu;
                }
                // Interpolated fields at (t, x).
                let u_now: Vec<f64> = (0..n_assets)
                    .map(|kk| interp_space_time(grid, &p.deflated[kk], t, x))
                    .collect();

                // Budget march: add the step from the previous node first.
                if m > 0 {
                    for i in 0..n_agents {
                        let mut gain = 0.0;
                        for kk in 0..n_assets {
                            let dg = (u_now[kk] - prev_u[kk])
                                + 0.5 * dt * (prev_gain_flow[kk] + gain_flow[kk]);
                            gain += theta_now[i][kk] * dg;
                        }
                        wealth[i] += gain + 0.5 * dt * (prev_cons_flow[i] + cons_flow[i]);
                    }
                }
                // Portfolio for the next interval (left endpoint, adapted),
                // and clearing at this node.
                let mut theta_sum = vec![0.0; n_assets];
                let mut any_nan = false;
                for (i, a) in agents.iter().enumerate() {
                    for kk in 0..n_assets {
                        let v = interp_space_time(grid, &a.theta[kk], t, x);
                        if !v.is_finite() {
                            any_nan = true;
                        }
                        theta_now[i][kk] = v;
                        theta_sum[kk] += v;
                    }
                }
                if any_nan {
                    return Ok(None); // singular-node contamination
                }
                for kk in 0..n_assets {
                    clearing_max = clearing_max.max((theta_sum[kk] - supply[kk]).abs());
                }
                // Replication error and admissibility margin at this node.
                for (i, a) in agents.iter().enumerate() {
                    let v_i = interp_space_time(grid, &a.v, t, x);
                    let target = v_i
                        + econ.agents[i]
                            .shares
                            .iter()
                            .zip(u_now.iter())
                            .map(|(n, u)| n * u)
                            .sum::<f64>();
                    if m == 0 {
                        wealth[i] = target - v_i; // n . u at the start
                    }
                    err[i][m] = wealth[i] - target;
                    if m == mid_level {
                        target_mid_sq[i] = target * target;
                    }
                    let w_i = interp_space_time(grid, &a.w, t, x);
                    margin_min[i] = margin_min[i].min(wealth[i] + w_i);
                }
                prev_gain_flow = gain_flow;
                prev_cons_flow = cons_flow;
                prev_u = u_now;
            }
            Ok(Some(PathResult {
                err,
                target_mid_sq,
                margin_min,
                clearing_max,
                cons_clear_max,
                exited,
            }))
        })
        .collect();

    // Sequential, order-stable reduction.
    let mut included = 0usize;
    let mut excluded = 0usize;
    let mut exited_paths = 0usize;
    let mut err_sq = vec![vec![0.0; levels]; n_agents];
    let mut err_max = vec![0.0f64; n_agents];
    let mut target_sq = vec![0.0; n_agents];
    let mut margin_min = vec![f64::INFINITY; n_agents];
    let mut clearing_max = 0.0f64;
    let mut cons_clear_max = 0.0f64;
    for r in per_path {
        match r? {
            None => excluded += 1,
            Some(pr) => {
                included += 1;
                if pr.exited {
                    exited_paths += 1;
                }
                clearing_max = clearing_max.max(pr.clearing_max);
                cons_clear_max = cons_clear_max.max(pr.cons_clear_max);
                for i in 0..n_agents {
                    for m in 0..levels {
                        err_sq[i][m] += pr.err[i][m] * pr.err[i][m];
                        err_max[i] = err_max[i].max(pr.err[i][m].abs());
                    }
                    target_sq[i] += pr.target_mid_sq[i];
                    margin_min[i] = margin_min[i].min(pr.margin_min[i]);
                }
            }
        }
    }
    if included == 0 {
        return Err(Error::Numerical(
            "every path was excluded by singular portfolio nodes".into(),
        ));
    }

    let mut agent_outcomes = Vec::with_capacity(n_agents);
    for (i, a) in agents.iter().enumerate() {
        let rms: Vec<f64> = err_sq[i]
            .iter()
            .map(|s| (s / included as f64).sqrt())
            .collect();
        let x0 = &econ.diffusion.x0;
        agent_outcomes.push(AgentOutcome {
            agent: a.agent,
            replication_rms_mid: rms[mid_level],
            replication_rms_terminal: *rms.last().unwrap(),
            replication_max_abs: err_max[i],
            replication_rms_by_level: rms,
            initial_net_trade_value: interp_space_time(grid, &a.v, 0.0, x0),
            admissibility_margin_min: margin_min[i],
            wealth_scale: (target_sq[i] / included as f64).sqrt(),
        });
    }

    let total = paths.n_paths();
    let mut reasons = Vec::new();
    if excluded as f64 > 0.001 * total as f64 {
        reasons.push(format!(
            "{excluded} of {total} paths touched singular portfolio nodes (cap is 0.1%)"
        ));
    }
    if exited_paths as f64 > 0.01 * total as f64 {
        reasons.push(format!(
            "{exited_paths} of {total} paths left the region box (cap is 1%); values were \
             clamped — enlarge the region"
        ));
    }
    Ok(RadnerOutcome {
        n_paths: total,
        n_steps: levels - 1,
        agents: agent_outcomes,
        clearing_max_abs: clearing_max,
        clearing_relative: if supply_norm > 0.0 {
            clearing_max / supply_norm
        } else {
            clearing_max
        },
        supply_norm,
        consumption_clearing_max_rel: cons_clear_max,
        excluded_paths: excluded,
        exited_paths,
        valid: reasons.is_empty(),
        invalid_reasons: reasons,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::completeness::normalize_prices;
    use crate::config::McSettings;
    use crate::economy::{Agent, Asset, Diffusion, Region};
    use crate::expr::parse_expr;
    use crate::markov::{build_grid, simulate_paths};
    use crate::planner::negishi_solve;
    use crate::pricing::price_all_assets;

    fn single_log_economy() -> Economy {
        let e = |s: &str| parse_expr(s, 1).unwrap();
        Economy {
            diffusion: Diffusion {
                k: 1,
                b: vec![e("0")],
                sigma: vec![e("1")],
                x0: vec![0.0],
            },
            agents: vec![Agent {
                utility: Crra {
                    gamma: 1.0,
                    rho: 0.1,
                },
                entitlement: e("0.1"),
                shares: vec![1.0, 1.0],
            }],
            assets: vec![
                Asset {
                    dividend: Expr::zero(),
                    terminal: e("1"),
                    is_numeraire_bond: true,
                },
                Asset {
                    dividend: e("exp(x1)"),
                    terminal: e("exp(x1)"),
                    is_numeraire_bond: false,
                },
            ],
            horizon: 1.0,
            region: Region {
                lo: vec![-3.0],
                hi: vec![3.0],
            },
            rank_region: Region {
                lo: vec![-1.0],
                hi: vec![1.0],
            },
        }
    }

    struct Setup {
        econ: Economy,
        grid: Grid,
        eq: ADEquilibrium,
        p: PricingSolution,
        agents: Vec<AgentReplication>,
    }

    fn build(econ: Economy, nodes: usize, steps: usize) -> Setup {
        let grid = build_grid(
            &econ.region,
            &econ.diffusion.x0,
            &[nodes],
            econ.horizon,
            steps,
        )
        .unwrap();
        let tables = GeneratorTables::build(&econ.diffusion, &grid).unwrap();
        let quad = McSettings {
            paths: 400,
            steps: 50,
            seed: 5,
        };
        let eq = negishi_solve(&econ, &grid, &quad, 1e-6).unwrap();
        let p = price_all_assets(&econ, &grid, &tables, &eq, 0.5).unwrap();
        let normalized = normalize_prices(&grid, &p).unwrap();
        let agents = (0..econ.n_agents())
            .map(|i| {
                build_agent_replication(&econ, &grid, &tables, &eq, &p, &normalized, i, 0.5)
                    .unwrap()
            })
            .collect();
        Setup {
            econ,
            grid,
            eq,
            p,
            agents,
        }
    }

    #[test]
    fn autarky_net_trade_value_is_identically_zero() {
        let s = build(single_log_economy(), 101, 40);
        for level in &s.agents[0].v.levels {
            for v in level {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn autarky_portfolio_is_buy_and_hold_of_initial_shares() {
        let s = build(single_log_economy(), 101, 40);
        assert_eq!(s.agents[0].singular_nodes, 0);
        for (c, field) in s.agents[0].theta.iter().enumerate() {
            let want = s.econ.agents[0].shares[c];
            for level in &field.levels {
                for v in level {
                    assert_eq!(*v, want, "component {c}");
                }
            }
        }
    }

    #[test]
    fn autarky_simulation_replicates_to_rounding() {
        let s = build(single_log_economy(), 101, 40);
        let paths = simulate_paths(&s.econ.diffusion, s.econ.horizon, 40, 200, 77).unwrap();
        let out =
            simulate_radner(&s.econ, &s.grid, &s.eq, &s.p, &s.agents, &paths).unwrap();
        assert!(out.valid, "{:?}", out.invalid_reasons);
        let a = &out.agents[0];
        assert!(
            a.replication_max_abs <= 1e-10,
            "max replication error {} (scale {})",
            a.replication_max_abs,
            a.wealth_scale
        );
        assert!(out.clearing_max_abs <= 1e-12, "{}", out.clearing_max_abs);
        assert!(out.consumption_clearing_max_rel <= 1e-12);
        assert!(a.admissibility_margin_min > 0.0);
    }

    #[test]
    fn replicating_the_numeraire_gives_a_pure_bond_position() {
        let s = build(single_log_economy(), 101, 40);
        let normalized = normalize_prices(&s.grid, &s.p).unwrap();
        // v = u^0 (the deflated numéraire value): theta = (1, 0).
        let theta = replicating_portfolio(
            &s.econ,
            &s.grid,
            &s.p,
            &normalized,
            &s.p.deflated[0],
            10,
            50,
        )
        .unwrap();
        assert!((theta[0] - 1.0).abs() < 2e-2, "bond {}", theta[0]);
        assert!(theta[1].abs() < 2e-2, "risky {}", theta[1]);
    }

    #[test]
    fn replicating_a_risky_asset_gives_a_buy_and_hold_of_it() {
        let s = build(single_log_economy(), 201, 80);
        let normalized = normalize_prices(&s.grid, &s.p).unwrap();
        let theta = replicating_portfolio(
            &s.econ,
            &s.grid,
            &s.p,
            &normalized,
            &s.p.deflated[1],
            20,
            100,
        )
        .unwrap();
        assert!(theta[0].abs() < 2e-2, "bond {}", theta[0]);
        assert!((theta[1] - 1.0).abs() < 2e-2, "risky {}", theta[1]);
    }

    #[test]
    fn two_agent_values_sum_to_zero_and_portfolios_clear() {
        let e = |s: &str| parse_expr(s, 1).unwrap();
        let mut econ = single_log_economy();
        // Wide box: over this horizon essentially no simulated path reaches
        // the boundary, so the exit cap cannot trip on sampling luck.
        econ.region = Region {
            lo: vec![-5.0],
            hi: vec![5.0],
        };
        econ.agents = vec![
            Agent {
                utility: Crra {
                    gamma: 1.0,
                    rho: 0.1,
                },
                entitlement: e("0.05"),
                shares: vec![0.4, 0.7],
            },
            Agent {
                utility: Crra {
                    gamma: 1.0,
                    rho: 0.1,
                },
                entitlement: e("0.05"),
                shares: vec![0.6, 0.3],
            },
        ];
        let s = build(econ, 201, 60);
        // Feasibility: sum of net-trade values vanishes (small relative to
        // the price scale, limited by the weight-search tolerance).
        let u_scale = s.p.deflated[0].levels[0]
            .iter()
            .fold(0.0f64, |a, &v| a.max(v.abs()));
        for m in [0, 30, 60] {
            for i in 0..s.grid.spatial_len() {
                let total = s.agents[0].v.levels[m][i] + s.agents[1].v.levels[m][i];
                assert!(
                    total.abs() <= 1e-6 * u_scale,
                    "level {m} node {i}: {total} vs scale {u_scale}"
                );
            }
        }
        let paths = simulate_paths(&s.econ.diffusion, s.econ.horizon, 60, 100, 3).unwrap();
        let out =
            simulate_radner(&s.econ, &s.grid, &s.eq, &s.p, &s.agents, &paths).unwrap();
        assert!(out.valid, "{:?}", out.invalid_reasons);
        assert!(
            out.clearing_relative <= 1e-6,
            "clearing {}",
            out.clearing_relative
        );
        assert!(out.consumption_clearing_max_rel <= 1e-10);
    }
}
