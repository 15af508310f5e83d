//! End-to-end acceptance tests.
//!
//! Each test drives the pipeline against one of the benchmark economies in
//! `configs/` and checks it against an independent oracle: closed-form
//! planner solutions, the lognormal expectation, symbolic payoff Jacobians,
//! Monte Carlo cross-checks, and the discrete budget identity along
//! simulated paths.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use radner_core::completeness::{completeness_report, normalize_prices, CompletenessVerdict};
use radner_core::config::RunConfig;
use radner_core::economy::{load_economy, Crra, Diffusion, Region};
use radner_core::expr::{parse_expr, Variable};
use radner_core::markov::{
    build_grid, simulate_paths, spatial_gradient, GeneratorTables, Grid, SpaceTimeField,
};
use radner_core::planner::{negishi_solve, sharing_rule_crra, ADEquilibrium};
use radner_core::pricing::{
    martingale_drift_test, mc_asset_prices, price_all_assets, sample_deflated_gains,
    solve_backward, BackwardProblem, PricingSolution,
};
use radner_core::radner::{build_agent_replication, simulate_radner, AgentReplication};
use radner_core::sampling::sample_points;
use radner_core::{Economy, EconomyConfig, Expr};

// ---------------------------------------------------------------------------
// fixtures

struct Bench {
    run: RunConfig,
    econ: Economy,
    grid: Grid,
}

fn configs_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load_bench(run_file: &str) -> Bench {
    let run_path = configs_dir().join(run_file);
    let run = RunConfig::load(&run_path).expect("run config loads");
    let econ_cfg =
        EconomyConfig::load(&run.economy_path(&run_path)).expect("economy config loads");
    let econ = load_economy(&econ_cfg).expect("economy builds");
    let k = econ.k();
    let nodes = if run.grid.space_nodes.len() == k {
        run.grid.space_nodes.clone()
    } else {
        vec![run.grid.space_nodes[0]; k]
    };
    let grid = build_grid(
        &econ.region,
        &econ.diffusion.x0,
        &nodes,
        econ.horizon,
        run.grid.time_steps,
    )
    .expect("grid builds");
    Bench { run, econ, grid }
}

fn solve_pipeline(b: &Bench) -> (ADEquilibrium, GeneratorTables, PricingSolution) {
    let eq = negishi_solve(&b.econ, &b.grid, &b.run.mc, b.run.tolerances.negishi)
        .expect("transfer-weight solve succeeds");
    let tables = GeneratorTables::build(&b.econ.diffusion, &b.grid).expect("generator builds");
    let p = price_all_assets(&b.econ, &b.grid, &tables, &eq, b.run.tolerances.theta)
        .expect("pricing succeeds");
    (eq, tables, p)
}

fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(f64::MIN_POSITIVE)
}

// ---------------------------------------------------------------------------
// 1. The pointwise planner solver against the closed-form CRRA sharing rule.

#[test]
fn sharing_rule_matches_closed_forms() {
    // Draw dimensions: common gamma, t, aggregate, four weights, four
    // discount rates, four agent-specific gammas (for the mixed-curvature
    // first-order-condition pass). The low-discrepancy sampler handles at
    // most three dimensions per call, so the fifteen coordinates are drawn
    // as five independent three-dimensional blocks.
    let lo = [
        0.5, 0.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.0, 0.0, 0.0, 0.0, 0.5, 0.5, 0.5, 0.5,
    ];
    let hi = [
        8.0, 2.0, 50.0, 10.0, 10.0, 10.0, 10.0, 0.5, 0.5, 0.5, 0.5, 8.0, 8.0, 8.0, 8.0,
    ];
    let blocks: Vec<Vec<Vec<f64>>> = (0..5)
        .map(|j| {
            sample_points(
                &lo[3 * j..3 * j + 3],
                &hi[3 * j..3 * j + 3],
                100,
                0x5EED + j as u64,
            )
        })
        .collect();
    let draws: Vec<Vec<f64>> = (0..100)
        .map(|i| blocks.iter().flat_map(|b| b[i].iter().copied()).collect())
        .collect();
    assert_eq!(draws.len(), 100);

    for (i, d) in draws.iter().enumerate() {
        let n = 1 + i % 4;
        let gamma = d[0];
        let t = d[1];
        let agg = d[2];
        let lambda: Vec<f64> = d[3..3 + n].to_vec();
        let rho: Vec<f64> = d[7..7 + n].to_vec();

        // Common curvature: closed form
        //   c_i = agg * w_i / sum_j w_j,  w_i = (lambda_i e^{-rho_i t})^{1/gamma}.
        let utilities: Vec<Crra> = rho.iter().map(|&r| Crra { gamma, rho: r }).collect();
        let (c, mu) = sharing_rule_crra(&utilities, &lambda, t, agg).expect("solver succeeds");
        let w: Vec<f64> = lambda
            .iter()
            .zip(rho.iter())
            .map(|(&l, &r)| (l * (-r * t).exp()).powf(1.0 / gamma))
            .collect();
        let w_sum: f64 = w.iter().sum();
        for j in 0..n {
            let oracle = agg * w[j] / w_sum;
            assert!(
                rel_err(c[j], oracle) <= 1e-10,
                "draw {i}: allocation {j} = {} but closed form gives {oracle}",
                c[j]
            );
        }
        check_first_order_conditions(i, &utilities, &lambda, t, agg, &c, mu);

        // Mixed curvature: no closed form, but the first-order conditions
        // and adding-up must still hold to near machine precision.
        let gammas: Vec<f64> = d[11..11 + n].to_vec();
        let utilities: Vec<Crra> = gammas
            .iter()
            .zip(rho.iter())
            .map(|(&g, &r)| Crra { gamma: g, rho: r })
            .collect();
        let (c, mu) = sharing_rule_crra(&utilities, &lambda, t, agg).expect("solver succeeds");
        check_first_order_conditions(i, &utilities, &lambda, t, agg, &c, mu);
    }
    println!("PASS: 100 draws match the closed-form sharing rule to 1e-10");
}

fn check_first_order_conditions(
    draw: usize,
    utilities: &[Crra],
    lambda: &[f64],
    t: f64,
    agg: f64,
    c: &[f64],
    mu: f64,
) {
    for (j, (u, &l)) in utilities.iter().zip(lambda.iter()).enumerate() {
        let foc = (l * u.marginal(t, c[j]) - mu).abs() / mu;
        assert!(
            foc <= 1e-12,
            "draw {draw}: first-order condition residual {foc} for agent {j}"
        );
    }
    let clearing = (c.iter().sum::<f64>() - agg).abs() / agg;
    assert!(
        clearing <= 1e-12,
        "draw {draw}: allocations sum off aggregate by {clearing} relative"
    );
}

// ---------------------------------------------------------------------------
// 2. A single-agent economy is autarkic: unit weight, marginal-utility
//    density at every node, and a pure buy-and-hold portfolio.

#[test]
fn single_agent_economy_is_autarkic() {
    let b = load_bench("log1.json");
    let eq = negishi_solve(&b.econ, &b.grid, &b.run.mc, b.run.tolerances.negishi)
        .expect("solve succeeds");
    assert_eq!(eq.lambda, vec![1.0], "single agent must get unit weight");

    // Hand-written density oracle for this economy: one log agent with
    // discount rate 0.1, entitlement rate 0.1, and one share of each asset.
    // The flow endowment is 0.1 + e^x (the bond pays no flow); at the
    // horizon the consumption measure has a point mass, where the
    // entitlement function still pays and both terminal payoffs arrive, so
    // the lump endowment is 0.1 + 1 + e^x. The density is marginal utility
    // of the endowment: e^{-0.1 t} / endowment.
    let mut x = Vec::new();
    for (m, &t) in b.grid.times.iter().enumerate() {
        for flat in 0..b.grid.spatial_len() {
            b.grid.node(flat, &mut x);
            let oracle = (-0.1 * t).exp() / (0.1 + x[0].exp());
            assert!(
                rel_err(eq.psi.levels[m][flat], oracle) <= 1e-10,
                "flow density off the marginal-utility oracle at level {m} node {flat}"
            );
        }
    }
    let horizon = b.econ.horizon;
    for flat in 0..b.grid.spatial_len() {
        b.grid.node(flat, &mut x);
        let oracle = (-0.1 * horizon).exp() / (1.1 + x[0].exp());
        assert!(
            rel_err(eq.psi_lump[flat], oracle) <= 1e-10,
            "lump density off the marginal-utility oracle at node {flat}"
        );
    }

    // No trade: the replicating portfolio is the initial share vector at
    // every node, and the budget identity replicates wealth to rounding.
    let tables = GeneratorTables::build(&b.econ.diffusion, &b.grid).expect("generator builds");
    let p = price_all_assets(&b.econ, &b.grid, &tables, &eq, b.run.tolerances.theta)
        .expect("pricing succeeds");
    let normalized = normalize_prices(&b.grid, &p).expect("normalization succeeds");
    let rep = build_agent_replication(
        &b.econ,
        &b.grid,
        &tables,
        &eq,
        &p,
        &normalized,
        0,
        b.run.tolerances.theta,
    )
    .expect("replication builds");
    assert_eq!(rep.singular_nodes, 0);
    let shares = &b.econ.agents[0].shares;
    for (k, field) in rep.theta.iter().enumerate() {
        for (m, level) in field.levels.iter().enumerate() {
            for (flat, &v) in level.iter().enumerate() {
                assert!(
                    (v - shares[k]).abs() <= 1e-8,
                    "component {k} at level {m} node {flat} is {v}, share is {}",
                    shares[k]
                );
            }
        }
    }

    let paths = simulate_paths(
        &b.econ.diffusion,
        b.econ.horizon,
        b.run.grid.time_steps,
        2000,
        b.run.mc.seed,
    )
    .expect("paths simulate");
    let out = simulate_radner(&b.econ, &b.grid, &eq, &p, &[rep], &paths)
        .expect("budget simulation succeeds");
    assert!(out.valid, "simulation invalid: {:?}", out.invalid_reasons);
    assert!(
        out.agents[0].replication_max_abs <= 1e-8,
        "replication error {} exceeds 1e-8",
        out.agents[0].replication_max_abs
    );
    assert!(
        out.clearing_max_abs <= 1e-8,
        "clearing error {} exceeds 1e-8",
        out.clearing_max_abs
    );
    println!("PASS: autarky gives unit weight, marginal-utility density, buy-and-hold portfolio");
}

// ---------------------------------------------------------------------------
// 3. Two log agents with proportional endowments: the equilibrium allocation
//    is the proportional sharing rule, found within the runtime budget.

#[test]
fn two_log_agent_proportional_equilibrium_converges() {
    let start = Instant::now();
    let b = load_bench("two_agent_proportional.json");
    assert_eq!(b.run.mc.paths, 10_000);
    let eq = negishi_solve(&b.econ, &b.grid, &b.run.mc, b.run.tolerances.negishi)
        .expect("solve succeeds");
    assert!(eq.converged, "transfer-weight search did not converge");
    let resid = eq.max_relative_residual();
    assert!(resid <= 1e-6, "budget residual {resid} exceeds 1e-6");

    // Agents own 30% / 70% of the entitlement and of every asset, so each
    // consumes that fraction of the aggregate at every point. The aggregate
    // is written out by hand: entitlement rates 0.03 + 0.07 plus the stock
    // dividend e^x in the flow, plus the terminal payoffs 1 + e^x in the
    // lump (where the entitlement functions still pay).
    let fractions = [0.3, 0.7];
    let mut x = Vec::new();
    for (i, &f) in fractions.iter().enumerate() {
        for m in 0..b.grid.times.len() {
            for flat in 0..b.grid.spatial_len() {
                b.grid.node(flat, &mut x);
                let agg = 0.1 + x[0].exp();
                let share = eq.allocations[i].levels[m][flat] / agg;
                assert!(
                    (share - f).abs() <= 1e-6,
                    "agent {i} consumes fraction {share} at level {m} node {flat}, oracle {f}"
                );
            }
        }
        for flat in 0..b.grid.spatial_len() {
            b.grid.node(flat, &mut x);
            let agg = 1.1 + x[0].exp();
            let share = eq.allocations_lump[i][flat] / agg;
            assert!(
                (share - f).abs() <= 1e-6,
                "agent {i} lump fraction {share} at node {flat}, oracle {f}"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs() <= 60,
        "equilibrium search took {elapsed:?}, budget is 60 s"
    );
    println!("PASS: proportional equilibrium found in {elapsed:?} with residual {resid:.3e}");
}

// ---------------------------------------------------------------------------
// 4. The backward PDE solver against the lognormal expectation, its
//    refinement behavior, and the Monte Carlo cross-check on the benchmark.

fn lognormal_relative_error(nodes: usize, steps: usize) -> f64 {
    let region = Region {
        lo: vec![-6.0],
        hi: vec![6.0],
    };
    let d = Diffusion {
        k: 1,
        b: vec![parse_expr("0", 1).expect("parses")],
        sigma: vec![parse_expr("1", 1).expect("parses")],
        x0: vec![0.0],
    };
    let grid = build_grid(&region, &d.x0, &[nodes], 1.0, steps).expect("grid builds");
    assert_eq!(grid.x0_offset, 0.0, "origin must be a grid node");
    let tables = GeneratorTables::build(&d, &grid).expect("generator builds");
    let terminal = grid
        .eval_spatial(&parse_expr("exp(x1)", 1).expect("parses"), 1.0, "terminal")
        .expect("terminal evaluates");
    let source = SpaceTimeField::zeros(&grid);
    let u = solve_backward(&BackwardProblem {
        grid: &grid,
        tables: &tables,
        source: &source,
        terminal,
        theta: 0.5,
    })
    .expect("solve succeeds");
    let got = u.levels[0][grid.flat(&grid.x0_index)];
    // For standard Brownian motion, E[e^{X_1}] = e^{1/2}.
    rel_err(got, 0.5f64.exp())
}

#[test]
fn feynman_kac_matches_lognormal_and_monte_carlo() {
    let fine = lognormal_relative_error(401, 400);
    assert!(fine <= 1e-3, "relative error {fine} exceeds 1e-3");
    let coarse = lognormal_relative_error(201, 100);
    let ratio = coarse / fine;
    assert!(
        (2.5..=6.0).contains(&ratio),
        "refinement ratio {ratio} outside [2.5, 6] (coarse {coarse}, fine {fine})"
    );

    // Time-zero prices from the PDE against the path-sampled expectations
    // (both are quoted in time-zero consumption units: the sampler divides
    // its deflated expectations by the density at the initial state).
    let b = load_bench("log1.json");
    let (eq, _tables, p) = solve_pipeline(&b);
    let estimates = mc_asset_prices(&b.econ, &eq.lambda, &b.run.mc).expect("sampling succeeds");
    let flat0 = b.grid.flat(&b.grid.x0_index);
    for (k, est) in estimates.iter().enumerate() {
        let pde = p.prices[k].levels[0][flat0];
        let gap = (pde - est.value).abs();
        assert!(
            gap <= 3.0 * est.std_error,
            "asset {k}: PDE price {pde} vs sampled {} +- {} (gap {gap})",
            est.value,
            est.std_error
        );
    }
    println!(
        "PASS: lognormal error {fine:.3e}, refinement ratio {ratio:.2}, \
         PDE within 3 standard errors of the sampled values"
    );
}

// ---------------------------------------------------------------------------
// 5. At the horizon the numerical Jacobian of the normalized prices matches
//    the symbolic Jacobian of the payoff ratios.

#[test]
fn terminal_price_jacobian_matches_payoff_jacobian() {
    let b = load_bench("log1.json");
    let (_eq, _tables, p) = solve_pipeline(&b);
    let normalized = normalize_prices(&b.grid, &p).expect("normalization succeeds");
    let last = b.grid.n_levels() - 1;

    let k = b.econ.k();
    let tol = 5.0 * b.grid.dx.iter().fold(0.0f64, |a, &h| a.max(h)).powi(2);
    for (row, ratio) in normalized.ratios.iter().enumerate() {
        let h = Expr::div(
            b.econ.assets[row + 1].terminal.clone(),
            b.econ.assets[0].terminal.clone(),
        );
        for dim in 0..k {
            let numeric = spatial_gradient(&b.grid, &ratio.levels[last], dim);
            let symbolic = b
                .grid
                .eval_spatial(
                    &h.differentiate(Variable::State(dim)),
                    b.econ.horizon,
                    "payoff ratio derivative",
                )
                .expect("derivative evaluates");
            let worst = numeric
                .iter()
                .zip(symbolic.iter())
                .map(|(n, s)| (n - s).abs())
                .fold(0.0f64, f64::max);
            assert!(
                worst <= tol,
                "ratio {row} axis {dim}: max Jacobian gap {worst} exceeds {tol}"
            );
        }
    }
    println!("PASS: terminal price Jacobian matches the symbolic payoff Jacobian");
}

// ---------------------------------------------------------------------------
// 6. Spanning verdicts: the benchmark economy is complete on the grid, the
//    planted redundant-asset economy is not, with degenerate terminal nodes.

#[test]
fn completeness_verdicts_separate_spanning_from_redundancy() {
    let b = load_bench("log1.json");
    let (_eq, _tables, p) = solve_pipeline(&b);
    let report = completeness_report(
        &b.econ,
        &b.grid,
        &p,
        b.run.tolerances.det_threshold_scale,
        512,
        b.run.mc.seed,
    )
    .expect("scan succeeds");
    assert_eq!(report.verdict, CompletenessVerdict::CompleteOnGrid);
    assert!(report.min_abs_det > 0.0);
    assert_eq!(report.flagged, 0);

    let r = load_bench("redundant_assets.json");
    let (_eq2, _tables2, p2) = solve_pipeline(&r);
    let report2 = completeness_report(
        &r.econ,
        &r.grid,
        &p2,
        r.run.tolerances.det_threshold_scale,
        512,
        r.run.mc.seed,
    )
    .expect("scan succeeds");
    assert_eq!(report2.verdict, CompletenessVerdict::IncompleteOnGrid);
    assert!(!report2.terminal_rank.passed);

    // Every interior node of the horizon layer must be degenerate.
    let horizon = r.econ.horizon;
    let mut terminal_rows = 0usize;
    for row in &report2.det_map {
        if row.t == horizon {
            terminal_rows += 1;
            assert!(
                row.scaled_det <= 1e-10,
                "terminal node at x={:?} has scaled determinant {}",
                row.x,
                row.scaled_det
            );
            assert!(row.flagged);
        }
    }
    assert_eq!(
        terminal_rows,
        r.grid.spatial_len() - 2,
        "expected every interior terminal node in the determinant map"
    );
    println!("PASS: complete benchmark vs planted redundancy separated on the grid");
}

// ---------------------------------------------------------------------------
// 7. The deflated gains of the benchmark equilibrium show no drift across
//    100 000 paths.

#[test]
fn equilibrium_gains_show_no_drift() {
    let b = load_bench("log1.json");
    let (eq, _tables, p) = solve_pipeline(&b);
    let paths = simulate_paths(
        &b.econ.diffusion,
        b.econ.horizon,
        b.run.grid.time_steps,
        100_000,
        b.run.mc.seed,
    )
    .expect("paths simulate");
    assert_eq!(b.run.grid.time_steps, 200);
    let samples = sample_deflated_gains(&b.econ, &eq.lambda, &b.grid, &p.deflated, &paths)
        .expect("sampling succeeds");
    let drift = martingale_drift_test(&samples);
    assert_eq!(drift.n_paths, 100_000);
    for report in &drift.reports {
        for pair in &report.pairs {
            assert!(
                pair.within,
                "asset {} drifts by {} over [{}, {}] (allowance {})",
                report.asset, pair.mean_change, pair.t_from, pair.t_to, pair.allowance
            );
        }
    }
    assert!(drift.passed);
    println!("PASS: no drift flags across 100000 paths and 200 steps");
}

// ---------------------------------------------------------------------------
// 8. Markets clear at every step and the replication error decays like the
//    square root of the path step.

#[test]
fn portfolio_clearing_and_replication_refinement() {
    let b = load_bench("two_agent_heterogeneous.json");
    let (eq, tables, p) = solve_pipeline(&b);
    let normalized = normalize_prices(&b.grid, &p).expect("normalization succeeds");
    let reps: Vec<AgentReplication> = (0..b.econ.n_agents())
        .map(|i| {
            build_agent_replication(
                &b.econ,
                &b.grid,
                &tables,
                &eq,
                &p,
                &normalized,
                i,
                b.run.tolerances.theta,
            )
            .expect("replication builds")
        })
        .collect();

    let mut log_dt = Vec::new();
    let mut log_rms = Vec::new();
    for &steps in &[25usize, 50, 100] {
        let paths = simulate_paths(&b.econ.diffusion, b.econ.horizon, steps, 4000, 0x0B5E55)
            .expect("paths simulate");
        let out = simulate_radner(&b.econ, &b.grid, &eq, &p, &reps, &paths)
            .expect("budget simulation succeeds");
        assert!(out.valid, "simulation invalid: {:?}", out.invalid_reasons);
        assert!(
            out.clearing_relative <= 1e-6,
            "clearing error {} at {steps} steps exceeds 1e-6 per unit supply",
            out.clearing_relative
        );
        let mean_sq = out
            .agents
            .iter()
            .map(|a| a.replication_rms_terminal * a.replication_rms_terminal)
            .sum::<f64>()
            / out.agents.len() as f64;
        log_dt.push((b.econ.horizon / steps as f64).ln());
        log_rms.push(mean_sq.sqrt().ln());
    }

    // Least-squares slope of log RMS against log step size.
    let n = log_dt.len() as f64;
    let mx = log_dt.iter().sum::<f64>() / n;
    let my = log_rms.iter().sum::<f64>() / n;
    let slope = log_dt
        .iter()
        .zip(log_rms.iter())
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / log_dt.iter().map(|x| (x - mx) * (x - mx)).sum::<f64>();
    assert!(
        (0.35..=0.65).contains(&slope),
        "replication error decay slope {slope} outside [0.35, 0.65] \
         (log RMS {log_rms:?} at log dt {log_dt:?})"
    );
    println!("PASS: markets clear and replication error decays with slope {slope:.3}");
}

// ---------------------------------------------------------------------------
// 9. The pipeline binary is deterministic: two runs with the same seed give
//    byte-identical artifacts.

#[test]
fn pipeline_reports_are_deterministic() {
    let exe = env!("CARGO_BIN_EXE_radner");
    let config = configs_dir().join("log1.json");
    let base = std::env::temp_dir().join(format!("radner-determinism-{}", std::process::id()));
    let dirs = [base.join("a"), base.join("b")];
    for dir in &dirs {
        if dir.exists() {
            std::fs::remove_dir_all(dir).expect("stale output clears");
        }
        let status = Command::new(exe)
            .arg("all")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(dir)
            .arg("--seed")
            .arg("42")
            .status()
            .expect("binary runs");
        assert!(status.success(), "pipeline run failed in {}", dir.display());
    }

    let mut names: Vec<String> = std::fs::read_dir(&dirs[0])
        .expect("output directory lists")
        .map(|e| e.expect("entry reads").file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(
        names.contains(&"radner.json".to_string()),
        "full pipeline must reach the portfolio stage, found {names:?}"
    );
    for name in &names {
        let a = std::fs::read(dirs[0].join(name)).expect("first artifact reads");
        let b = std::fs::read(dirs[1].join(name)).expect("second artifact reads");
        assert!(a == b, "artifact {name} differs between identical runs");
    }
    let second: Vec<String> = std::fs::read_dir(&dirs[1])
        .expect("output directory lists")
        .map(|e| e.expect("entry reads").file_name().into_string().unwrap())
        .collect();
    assert_eq!(names.len(), second.len(), "runs produced different artifact sets");
    std::fs::remove_dir_all(&base).ok();
    println!("PASS: {} artifacts byte-identical across reruns", names.len());
}
