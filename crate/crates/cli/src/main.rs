//! Command-line pipeline driver.
//!
//! Stages run in order: `validate` checks the standing assumptions on the
//! declared regions; `solve-ad` finds the planner weights, allocation, and
//! state-price density; `price` solves the pricing PDE per asset with Monte
//! Carlo and martingale cross-checks; `completeness` scans the price
//! volatility matrix for spanning degeneracies; `radner` builds the
//! replicating portfolios and verifies them along simulated paths. `all`
//! chains every stage.
//!
//! Each stage writes its artifacts into the output directory and exits 0
//! exactly when its verdict passes. Later stages reload earlier artifacts
//! and refuse to mix results produced under a different effective
//! configuration (every report embeds the config hash). On failure a
//! structured `error.json` records the stage and the reason.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use radner_core::completeness::{
    completeness_report, normalize_prices, CompletenessReport, CompletenessVerdict,
};
use radner_core::config::{EconomyConfig, EffectiveConfig, RunConfig};
use radner_core::economy::{load_economy, validate_assumptions, Economy, ValidationReport};
use radner_core::error::{Error, Result};
use radner_core::io::{self, AdBody, Report};
use radner_core::markov::{build_grid, simulate_paths, GeneratorTables, Grid};
use radner_core::planner::{negishi_solve, ADEquilibrium};
use radner_core::pricing::{
    martingale_drift_test, mc_asset_prices, price_all_assets, reassemble_solution,
    sample_deflated_gains, DriftReport, PricingSolution,
};
use radner_core::radner::{
    build_agent_replication, simulate_radner, AgentReplication, RadnerOutcome,
};

/// Low-discrepancy sample count for assumption validation.
const VALIDATION_SAMPLES: usize = 256;
/// Sample count for the horizon payoff-Jacobian rank check.
const RANK_SAMPLES: usize = 512;

/// Distinct deterministic seeds for the run's independent random procedures,
/// all derived from the configured seed.
fn derived_seed(seed: u64, salt: u64) -> u64 {
    seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
const DRIFT_SALT: u64 = 1;
const RADNER_SALT: u64 = 2;

#[derive(Parser)]
#[command(
    name = "radner",
    version,
    about = "Equilibrium pipeline for diffusion exchange economies: planner \
             allocation, asset prices, market completeness, replicating portfolios"
)]
struct Cli {
    /// Run configuration file (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides the run config's `output_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Override the Monte Carlo seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Scale the grid: multiplies spatial interval counts and time steps.
    #[arg(long, global = true, value_name = "F")]
    grid_scale: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Check the standing assumptions on the declared regions.
    Validate,
    /// Solve the planner problem: weights, allocation, state-price density.
    SolveAd,
    /// Price every asset by backward PDE solves, with Monte Carlo and
    /// martingale cross-checks.
    Price,
    /// Scan the price volatility matrix for spanning degeneracies.
    Completeness,
    /// Build replicating portfolios and verify them along simulated paths.
    Radner,
    /// Run every stage in order.
    All,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let ctx = match prepare(&cli) {
        Ok(ctx) => ctx,
        Err(e) => {
            eprintln!("error: {e}");
            // Best effort: record the failure if an output directory is known.
            if let Some(out) = cli.out.as_ref() {
                if std::fs::create_dir_all(out).is_ok() {
                    let _ = io::write_error_report(&out.join("error.json"), "setup", &e.to_string());
                }
            }
            return ExitCode::from(2);
        }
    };
    let status = match dispatch(cli.command, &ctx) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = io::write_error_report(
                &ctx.out.join("error.json"),
                stage_name(cli.command),
                &e.to_string(),
            );
            return ExitCode::from(2);
        }
    };
    if status.passed {
        // Do not let a stale failure record outlive a passing rerun.
        let _ = std::fs::remove_file(ctx.out.join("error.json"));
        ExitCode::SUCCESS
    } else {
        eprintln!("{}: FAIL — {}", status.stage, status.detail);
        let _ = io::write_error_report(&ctx.out.join("error.json"), status.stage, &status.detail);
        ExitCode::from(1)
    }
}

fn stage_name(cmd: Command) -> &'static str {
    match cmd {
        Command::Validate => "validate",
        Command::SolveAd => "solve-ad",
        Command::Price => "price",
        Command::Completeness => "completeness",
        Command::Radner => "radner",
        Command::All => "all",
    }
}

fn dispatch(cmd: Command, ctx: &Ctx) -> Result<StageStatus> {
    match cmd {
        Command::Validate => stage_validate(ctx),
        Command::SolveAd => stage_solve_ad(ctx),
        Command::Price => stage_price(ctx),
        Command::Completeness => stage_completeness(ctx),
        Command::Radner => stage_radner(ctx),
        Command::All => stage_all(ctx),
    }
}

/// Everything a stage needs: the effective configuration, the loaded
/// economy, the grid, the config hash, and the (recomputed, cheap)
/// assumption validation.
struct Ctx {
    run: RunConfig,
    econ: Economy,
    grid: Grid,
    hash: String,
    out: PathBuf,
    validation: ValidationReport,
}

struct StageStatus {
    stage: &'static str,
    passed: bool,
    detail: String,
}

impl StageStatus {
    fn pass(stage: &'static str) -> Self {
        StageStatus {
            stage,
            passed: true,
            detail: String::new(),
        }
    }

    fn fail(stage: &'static str, detail: String) -> Self {
        StageStatus {
            stage,
            passed: false,
            detail,
        }
    }
}

fn prepare(cli: &Cli) -> Result<Ctx> {
    let config_path = cli
        .config
        .clone()
        .ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let run = RunConfig::load(&config_path)?.with_overrides(cli.seed, cli.grid_scale)?;
    let econ_path = run.economy_path(&config_path);
    let econ_cfg = EconomyConfig::load(&econ_path)?;
    let econ = load_economy(&econ_cfg)?;
    let hash = EffectiveConfig {
        run: run.clone(),
        economy: econ_cfg,
    }
    .hash();
    let out = cli
        .out
        .clone()
        .or_else(|| run.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(out.display().to_string(), e))?;

    let k = econ.diffusion.k;
    let nodes: Vec<usize> = if run.grid.space_nodes.len() == k {
        run.grid.space_nodes.clone()
    } else if run.grid.space_nodes.len() == 1 {
        vec![run.grid.space_nodes[0]; k]
    } else {
        return Err(Error::Config(format!(
            "grid.space_nodes has {} entries for a {k}-dimensional state (give one per \
             dimension, or a single entry to broadcast)",
            run.grid.space_nodes.len()
        )));
    };
    let grid = build_grid(
        &econ.region,
        &econ.diffusion.x0,
        &nodes,
        econ.horizon,
        run.grid.time_steps,
    )?;
    let validation = validate_assumptions(&econ, VALIDATION_SAMPLES, run.mc.seed);
    Ok(Ctx {
        run,
        econ,
        grid,
        hash,
        out,
        validation,
    })
}

/// Stages past `validate` refuse to run on an economy that failed its
/// assumption checks (UNVERIFIABLE checks do not block).
/// Solver stages refuse to run only when a *blocking* well-posedness check
/// failed. Conclusion-only failures (e.g. the terminal payoff rank) leave the
/// equilibrium solve meaningful and are re-diagnosed by the completeness
/// stage, so they do not bar the pipeline.
fn require_validation(ctx: &Ctx) -> Result<()> {
    if !ctx.validation.blocks_solving() {
        return Ok(());
    }
    let failing: Vec<&str> = ctx
        .validation
        .checks
        .iter()
        .filter(|c| c.blocking && c.verdict == radner_core::economy::Verdict::Fail)
        .map(|c| c.id.as_str())
        .collect();
    Err(Error::ValidationFailed(format!(
        "blocking assumption checks failed: {}; see validation.json (run the validate stage)",
        failing.join(", ")
    )))
}

// ---------------------------------------------------------------------------
// validate

fn stage_validate(ctx: &Ctx) -> Result<StageStatus> {
    #[derive(Serialize)]
    struct Body<'a> {
        #[serde(flatten)]
        report: &'a ValidationReport,
        passed: bool,
    }
    let passed = ctx.validation.passed();
    io::write_json_report(
        &ctx.out.join("validation.json"),
        &Report::new(
            &ctx.hash,
            ctx.validation.verdict_map(),
            Body {
                report: &ctx.validation,
                passed,
            },
        ),
    )?;
    println!(
        "validate: {} ({} checks)",
        if passed { "PASS" } else { "FAIL" },
        ctx.validation.checks.len()
    );
    if passed {
        Ok(StageStatus::pass("validate"))
    } else {
        let failing: Vec<&str> = ctx
            .validation
            .checks
            .iter()
            .filter(|c| c.verdict == radner_core::economy::Verdict::Fail)
            .map(|c| c.id.as_str())
            .collect();
        Ok(StageStatus::fail(
            "validate",
            format!("assumption checks failed: {}", failing.join(", ")),
        ))
    }
}

// ---------------------------------------------------------------------------
// solve-ad

fn compute_ad(ctx: &Ctx) -> Result<(ADEquilibrium, bool)> {
    require_validation(ctx)?;
    let eq = negishi_solve(&ctx.econ, &ctx.grid, &ctx.run.mc, ctx.run.tolerances.negishi)?;
    let passed = eq.converged && eq.max_relative_residual() <= ctx.run.tolerances.negishi;
    Ok((eq, passed))
}

fn write_ad(ctx: &Ctx, eq: &ADEquilibrium, passed: bool) -> Result<()> {
    io::write_field_csv(&ctx.out.join("psi.csv"), &ctx.grid, &eq.psi, &eq.psi_lump)?;
    for (i, (alloc, lump)) in eq
        .allocations
        .iter()
        .zip(eq.allocations_lump.iter())
        .enumerate()
    {
        io::write_field_csv(
            &ctx.out.join(format!("alloc_{i}.csv")),
            &ctx.grid,
            alloc,
            lump,
        )?;
    }
    let body = AdBody {
        lambda: eq.lambda.clone(),
        residuals: eq.residuals.clone(),
        residual_scales: eq.residual_scales.clone(),
        max_relative_residual: eq.max_relative_residual(),
        converged: eq.converged,
        iterations: eq.iterations,
        passed,
    };
    io::write_json_report(
        &ctx.out.join("ad_equilibrium.json"),
        &Report::new(&ctx.hash, ctx.validation.verdict_map(), body),
    )
}

fn ad_status(eq: &ADEquilibrium, passed: bool, tol: f64) -> StageStatus {
    println!(
        "solve-ad: {} (max relative budget residual {:.3e}, {} iterations)",
        if passed { "PASS" } else { "FAIL" },
        eq.max_relative_residual(),
        eq.iterations
    );
    if passed {
        StageStatus::pass("solve-ad")
    } else {
        StageStatus::fail(
            "solve-ad",
            format!(
                "transfer-weight search did not reach tolerance {tol:e}: max relative \
                 residual {:.3e} after {} iterations (converged = {})",
                eq.max_relative_residual(),
                eq.iterations,
                eq.converged
            ),
        )
    }
}

fn stage_solve_ad(ctx: &Ctx) -> Result<StageStatus> {
    let (eq, passed) = compute_ad(ctx)?;
    write_ad(ctx, &eq, passed)?;
    Ok(ad_status(&eq, passed, ctx.run.tolerances.negishi))
}

// ---------------------------------------------------------------------------
// artifact reload

fn require_artifact(path: &PathBuf, produced_by: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "{} not found: run the `{produced_by}` stage first (same --config/--out)",
            path.display()
        )))
    }
}

fn load_ad(ctx: &Ctx) -> Result<ADEquilibrium> {
    let json_path = ctx.out.join("ad_equilibrium.json");
    require_artifact(&json_path, "solve-ad")?;
    let report: Report<AdBody> = io::read_json_report(&json_path, &ctx.hash)?;
    let body = report.body;
    let n_agents = ctx.econ.n_agents();
    if body.lambda.len() != n_agents {
        return Err(Error::Config(format!(
            "{} holds {} weights for an economy with {} agents",
            json_path.display(),
            body.lambda.len(),
            n_agents
        )));
    }
    let psi_path = ctx.out.join("psi.csv");
    require_artifact(&psi_path, "solve-ad")?;
    let (psi, psi_lump) = io::read_field_csv(&psi_path, &ctx.grid)?;
    let mut allocations = Vec::with_capacity(n_agents);
    let mut allocations_lump = Vec::with_capacity(n_agents);
    for i in 0..n_agents {
        let path = ctx.out.join(format!("alloc_{i}.csv"));
        require_artifact(&path, "solve-ad")?;
        let (flow, lump) = io::read_field_csv(&path, &ctx.grid)?;
        allocations.push(flow);
        allocations_lump.push(lump);
    }
    Ok(ADEquilibrium {
        lambda: body.lambda,
        psi,
        psi_lump,
        allocations,
        allocations_lump,
        residuals: body.residuals,
        residual_scales: body.residual_scales,
        converged: body.converged,
        iterations: body.iterations,
    })
}

fn load_prices(ctx: &Ctx, eq: &ADEquilibrium) -> Result<PricingSolution> {
    let path = ctx.out.join("prices.csv");
    require_artifact(&path, "price")?;
    let (prices, deflated) = io::read_prices_csv(&path, &ctx.grid, ctx.econ.n_assets())?;
    let tables = GeneratorTables::build(&ctx.econ.diffusion, &ctx.grid)?;
    reassemble_solution(&ctx.econ, &ctx.grid, &tables, eq, deflated, prices)
}

// ---------------------------------------------------------------------------
// price

#[derive(Serialize)]
struct ResidualRow {
    asset: usize,
    max_abs: f64,
    rms: f64,
    scale: f64,
    relative: f64,
}

#[derive(Serialize)]
struct McCrossRow {
    asset: usize,
    pde_value: f64,
    mc_value: f64,
    mc_std_error: f64,
    abs_difference: f64,
    difference_over_std_error: f64,
}

#[derive(Serialize)]
struct PricingBody {
    /// Interior PDE defect per asset (centered time difference).
    residuals: Vec<ResidualRow>,
    /// Initial-state prices against the Monte Carlo oracle.
    monte_carlo: Vec<McCrossRow>,
    /// Martingale test of the deflated gains along simulated paths.
    drift: DriftReport,
    /// Max-norm snap distance of the initial state onto the grid (a nonzero
    /// value widens the Monte Carlo comparison).
    x0_offset: f64,
    passed: bool,
}

fn price_and_write(ctx: &Ctx, eq: &ADEquilibrium) -> Result<(PricingSolution, StageStatus)> {
    let tables = GeneratorTables::build(&ctx.econ.diffusion, &ctx.grid)?;
    let p = price_all_assets(&ctx.econ, &ctx.grid, &tables, eq, ctx.run.tolerances.theta)?;
    io::write_prices_csv(&ctx.out.join("prices.csv"), &ctx.grid, &p.prices, &p.deflated)?;

    let mc = mc_asset_prices(&ctx.econ, &eq.lambda, &ctx.run.mc)?;
    let flat0 = ctx.grid.flat(&ctx.grid.x0_index);
    let monte_carlo: Vec<McCrossRow> = mc
        .iter()
        .enumerate()
        .map(|(k, est)| {
            let pde = p.prices[k].levels[0][flat0];
            let diff = (pde - est.value).abs();
            McCrossRow {
                asset: k,
                pde_value: pde,
                mc_value: est.value,
                mc_std_error: est.std_error,
                abs_difference: diff,
                difference_over_std_error: if est.std_error > 0.0 {
                    diff / est.std_error
                } else {
                    f64::INFINITY
                },
            }
        })
        .collect();

    let paths = simulate_paths(
        &ctx.econ.diffusion,
        ctx.econ.horizon,
        ctx.grid.n_levels() - 1,
        ctx.run.mc.paths,
        derived_seed(ctx.run.mc.seed, DRIFT_SALT),
    )?;
    let gains = sample_deflated_gains(&ctx.econ, &eq.lambda, &ctx.grid, &p.deflated, &paths)?;
    let drift = martingale_drift_test(&gains);

    let residuals: Vec<ResidualRow> = p
        .residuals
        .iter()
        .map(|r| ResidualRow {
            asset: r.asset,
            max_abs: r.max_abs,
            rms: r.rms,
            scale: r.scale,
            relative: r.relative(),
        })
        .collect();

    let passed = drift.passed;
    let detail = if passed {
        String::new()
    } else {
        let bad: Vec<String> = drift
            .reports
            .iter()
            .filter(|r| !r.passed)
            .map(|r| format!("asset {}", r.asset))
            .collect();
        format!(
            "deflated gains drift beyond the 3-sigma-plus-bias allowance on {}; \
             see pricing_diag.json",
            bad.join(", ")
        )
    };
    let body = PricingBody {
        residuals,
        monte_carlo,
        drift,
        x0_offset: ctx.grid.x0_offset,
        passed,
    };
    io::write_json_report(
        &ctx.out.join("pricing_diag.json"),
        &Report::new(&ctx.hash, ctx.validation.verdict_map(), body),
    )?;
    println!("price: {}", if passed { "PASS" } else { "FAIL" });
    let status = if passed {
        StageStatus::pass("price")
    } else {
        StageStatus::fail("price", detail)
    };
    Ok((p, status))
}

fn stage_price(ctx: &Ctx) -> Result<StageStatus> {
    require_validation(ctx)?;
    let eq = load_ad(ctx)?;
    let (_, status) = price_and_write(ctx, &eq)?;
    Ok(status)
}

// ---------------------------------------------------------------------------
// completeness

fn completeness_and_write(ctx: &Ctx, p: &PricingSolution) -> Result<StageStatus> {
    #[derive(Serialize)]
    struct Body<'a> {
        #[serde(flatten)]
        report: &'a CompletenessReport,
        passed: bool,
    }
    let report = completeness_report(
        &ctx.econ,
        &ctx.grid,
        p,
        ctx.run.tolerances.det_threshold_scale,
        RANK_SAMPLES,
        ctx.run.mc.seed,
    )?;
    io::write_det_csv(&ctx.out.join("det.csv"), ctx.grid.k(), &report.det_map)?;
    let passed = report.verdict == CompletenessVerdict::CompleteOnGrid;
    io::write_json_report(
        &ctx.out.join("completeness.json"),
        &Report::new(
            &ctx.hash,
            ctx.validation.verdict_map(),
            Body {
                report: &report,
                passed,
            },
        ),
    )?;
    println!(
        "completeness: {} (min scaled det {:.3e}, {} of {} nodes flagged)",
        report.verdict, report.min_scaled_det, report.flagged, report.nodes_scanned
    );
    if passed {
        Ok(StageStatus::pass("completeness"))
    } else {
        Ok(StageStatus::fail(
            "completeness",
            format!(
                "markets are incomplete on the grid: {} of {} nodes flagged (min scaled \
                 det {:.3e}, threshold {:.1e}), terminal rank check passed = {}",
                report.flagged,
                report.nodes_scanned,
                report.min_scaled_det,
                report.threshold_scale,
                report.terminal_rank.passed
            ),
        ))
    }
}

fn stage_completeness(ctx: &Ctx) -> Result<StageStatus> {
    require_validation(ctx)?;
    let eq = load_ad(ctx)?;
    let p = load_prices(ctx, &eq)?;
    completeness_and_write(ctx, &p)
}

// ---------------------------------------------------------------------------
// radner

#[derive(Serialize)]
struct RadnerBody {
    #[serde(flatten)]
    outcome: RadnerOutcome,
    /// Grid nodes where the exposure system was singular, per agent.
    singular_nodes: Vec<usize>,
    passed: bool,
}

fn radner_and_write(ctx: &Ctx, eq: &ADEquilibrium, p: &PricingSolution) -> Result<StageStatus> {
    let tables = GeneratorTables::build(&ctx.econ.diffusion, &ctx.grid)?;
    let normalized = normalize_prices(&ctx.grid, p)?;
    let mut reps: Vec<AgentReplication> = Vec::with_capacity(ctx.econ.n_agents());
    for i in 0..ctx.econ.n_agents() {
        reps.push(build_agent_replication(
            &ctx.econ,
            &ctx.grid,
            &tables,
            eq,
            p,
            &normalized,
            i,
            ctx.run.tolerances.theta,
        )?);
    }
    let paths = simulate_paths(
        &ctx.econ.diffusion,
        ctx.econ.horizon,
        ctx.grid.n_levels() - 1,
        ctx.run.mc.paths,
        derived_seed(ctx.run.mc.seed, RADNER_SALT),
    )?;
    let outcome = simulate_radner(&ctx.econ, &ctx.grid, eq, p, &reps, &paths)?;
    let clearing_ok = outcome.clearing_relative <= ctx.run.tolerances.clearing;
    let passed = outcome.valid && clearing_ok;
    let detail = if passed {
        String::new()
    } else if !outcome.valid {
        format!(
            "portfolio simulation invalid: {}",
            outcome.invalid_reasons.join("; ")
        )
    } else {
        format!(
            "market clearing violated: max |sum of holdings - supply| = {:.3e} per unit \
             supply (allowed {:.1e})",
            outcome.clearing_relative, ctx.run.tolerances.clearing
        )
    };
    println!(
        "radner: {} (clearing {:.3e}, {} agents, {} paths)",
        if passed { "PASS" } else { "FAIL" },
        outcome.clearing_relative,
        outcome.agents.len(),
        outcome.n_paths
    );
    let body = RadnerBody {
        singular_nodes: reps.iter().map(|r| r.singular_nodes).collect(),
        outcome,
        passed,
    };
    io::write_json_report(
        &ctx.out.join("radner.json"),
        &Report::new(&ctx.hash, ctx.validation.verdict_map(), body),
    )?;
    if passed {
        Ok(StageStatus::pass("radner"))
    } else {
        Ok(StageStatus::fail("radner", detail))
    }
}

fn stage_radner(ctx: &Ctx) -> Result<StageStatus> {
    require_validation(ctx)?;
    let eq = load_ad(ctx)?;
    let p = load_prices(ctx, &eq)?;
    radner_and_write(ctx, &eq, &p)
}

// ---------------------------------------------------------------------------
// all

/// Run every stage in order. A failed *blocking* validation check, a
/// non-converged equilibrium, or a failed price drift test aborts the run
/// (later stages would be built on unusable numbers). A conclusion-only
/// validation failure is recorded and the pipeline continues so that the
/// completeness stage can deliver its detailed verdict; an incomplete-market
/// verdict skips the replication stage, whose premise it refutes. The
/// returned status is the first failing stage, or the last stage run.
fn stage_all(ctx: &Ctx) -> Result<StageStatus> {
    let v = stage_validate(ctx)?;
    if !v.passed && ctx.validation.blocks_solving() {
        return Ok(v);
    }
    let mut first_failure = (!v.passed).then_some(v);

    let (eq, ad_passed) = compute_ad(ctx)?;
    write_ad(ctx, &eq, ad_passed)?;
    let ad = ad_status(&eq, ad_passed, ctx.run.tolerances.negishi);
    if !ad.passed {
        return Ok(first_failure.unwrap_or(ad));
    }
    let (p, price_status) = price_and_write(ctx, &eq)?;
    if !price_status.passed {
        return Ok(first_failure.unwrap_or(price_status));
    }
    let comp = completeness_and_write(ctx, &p)?;
    if !comp.passed {
        println!("radner: SKIPPED (markets incomplete on grid)");
        return Ok(first_failure.unwrap_or(comp));
    }
    let radner = radner_and_write(ctx, &eq, &p)?;
    if !radner.passed && first_failure.is_none() {
        first_failure = Some(radner);
    }
    Ok(first_failure.unwrap_or(StageStatus::pass("all")))
}
