//! The economy: diffusion state dynamics, agents, assets, and regions.
//!
//! An [`Economy`] is loaded from an [`EconomyConfig`] document in one atomic
//! step: every expression is parsed and every structural rule checked before
//! anything is returned. After loading it is immutable, and all evaluation
//! helpers are pure, so the whole object can be shared freely across threads.
//!
//! Consumption (and dividends) live on the measure `dt ⊗ δ_T`: a *flow* on
//! `[0, T)` plus a *lump* at the horizon. Every quantity with both components
//! is exposed as a `(flow, lump)` pair of expressions; the flow member is
//! also meaningful at `t = T` as the left limit of the flow, which the
//! quadrature rules need.

pub mod validate;

pub use validate::{validate_assumptions, AssumptionCheck, ValidationReport, Verdict};

use crate::config::EconomyConfig;
use crate::error::{Error, Result};
use crate::expr::{self, EvalError, Expr};

/// Rectangular box `[lo_1, hi_1] × … × [lo_K, hi_K]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Region {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(self.hi.iter()))
            .all(|(&xi, (&lo, &hi))| xi >= lo && xi <= hi)
    }

    /// True if `other` lies inside this box (boundaries allowed to touch).
    pub fn contains_region(&self, other: &Region) -> bool {
        self.contains(&other.lo) && self.contains(&other.hi)
    }
}

/// CRRA period utility `u(t, c) = e^{-rho t} c^{1-gamma} / (1-gamma)`, with
/// `gamma = 1` meaning log utility. Only marginal utility and its inverse are
/// needed by the solver; both are closed-form.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Crra {
    pub gamma: f64,
    pub rho: f64,
}

impl Crra {
    /// Marginal utility `u_c(t, c) = e^{-rho t} c^{-gamma}`.
    pub fn marginal(&self, t: f64, c: f64) -> f64 {
        (-self.rho * t).exp() * c.powf(-self.gamma)
    }

    /// The consumption level `c` with `u_c(t, c) = y`, i.e.
    /// `c = (y e^{rho t})^{-1/gamma}`.
    pub fn inverse_marginal(&self, t: f64, y: f64) -> f64 {
        debug_assert!(y > 0.0);
        (y * (self.rho * t).exp()).powf(-1.0 / self.gamma)
    }

    /// Inverse marginal utility evaluated from `w = log y`; used by the
    /// sharing-rule solver which iterates in log space:
    /// `c = exp(-(w + rho t) / gamma)`.
    pub fn inverse_marginal_log(&self, t: f64, w: f64) -> f64 {
        (-(w + self.rho * t) / self.gamma).exp()
    }
}

/// One agent: CRRA utility, entitlement expression, and initial holdings of
/// each asset (length `K + 1`).
#[derive(Debug, Clone)]
pub struct Agent {
    pub utility: Crra,
    pub entitlement: Expr,
    pub shares: Vec<f64>,
}

/// One asset: flow dividend on `[0, T)` and lump payoff at `T`.
#[derive(Debug, Clone)]
pub struct Asset {
    pub dividend: Expr,
    pub terminal: Expr,
    /// Asset 0: the zero-coupon numeraire bond (flow dividend identically 0).
    pub is_numeraire_bond: bool,
}

/// State dynamics `dX_t = b(X_t) dt + sigma(X_t) dW_t`, `X_0 = x0`.
#[derive(Debug, Clone)]
pub struct Diffusion {
    pub k: usize,
    /// Drift components, expressions in `x` only.
    pub b: Vec<Expr>,
    /// Dispersion matrix, row-major `K × K`, expressions in `x` only.
    pub sigma: Vec<Expr>,
    pub x0: Vec<f64>,
}

impl Diffusion {
    pub fn drift_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.b
            .iter()
            .enumerate()
            .map(|(i, e)| {
                e.eval(0.0, x)
                    .map_err(|err| Error::eval(format!("diffusion.b[{i}]"), err))
            })
            .collect()
    }

    /// Dispersion matrix at `x`, row-major.
    pub fn sigma_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.sigma
            .iter()
            .enumerate()
            .map(|(idx, e)| {
                e.eval(0.0, x).map_err(|err| {
                    Error::eval(
                        format!("diffusion.sigma[{}][{}]", idx / self.k, idx % self.k),
                        err,
                    )
                })
            })
            .collect()
    }

    /// Diffusion matrix `a(x) = sigma(x) sigma(x)^T`, row-major.
    pub fn a_at(&self, x: &[f64]) -> Result<Vec<f64>> {
        let s = self.sigma_at(x)?;
        let k = self.k;
        let mut a = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..k {
                let mut acc = 0.0;
                for l in 0..k {
                    acc += s[i * k + l] * s[j * k + l];
                }
                a[i * k + j] = acc;
            }
        }
        Ok(a)
    }
}

/// The full economy. `assets.len() == diffusion.k + 1` always holds.
#[derive(Debug, Clone)]
pub struct Economy {
    pub diffusion: Diffusion,
    pub agents: Vec<Agent>,
    pub assets: Vec<Asset>,
    pub horizon: f64,
    pub region: Region,
    pub rank_region: Region,
}

impl Economy {
    pub fn k(&self) -> usize {
        self.diffusion.k
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    /// Total supply `N_k = sum_i shares^i_k`.
    pub fn total_supply(&self) -> Vec<f64> {
        let mut supply = vec![0.0; self.n_assets()];
        for agent in &self.agents {
            for (nk, &s) in supply.iter_mut().zip(agent.shares.iter()) {
                *nk += s;
            }
        }
        supply
    }

    /// Aggregate endowment as a `(flow, lump)` expression pair:
    /// flow `= sum_i e^i + sum_k N_k g^k` for `t < T`, and the lump analogue
    /// at `T` using terminal payoffs (the bond pays only in the lump).
    pub fn aggregate_endowment(&self) -> (Expr, Expr) {
        let supply = self.total_supply();
        let entitlements: Vec<&Expr> = self.agents.iter().map(|a| &a.entitlement).collect();
        (
            endowment_expr(&entitlements, &supply, &self.assets, false),
            endowment_expr(&entitlements, &supply, &self.assets, true),
        )
    }

    /// Agent `i`'s full endowment (entitlement plus dividends on initial
    /// holdings) as a `(flow, lump)` pair:
    /// `eps^i_t = e^i_t + sum_k shares^i_k g^k_t`.
    pub fn endowment_of_agent(&self, i: usize) -> (Expr, Expr) {
        let agent = &self.agents[i];
        let entitlements = [&agent.entitlement];
        (
            endowment_expr(&entitlements, &agent.shares, &self.assets, false),
            endowment_expr(&entitlements, &agent.shares, &self.assets, true),
        )
    }
}

/// Shared builder for endowment expressions: fold entitlements, then add the
/// share-weighted dividends. The same fold order is used for agents and the
/// aggregate so that a single-agent economy's individual endowment is the
/// identical expression tree as the aggregate.
fn endowment_expr(entitlements: &[&Expr], weights: &[f64], assets: &[Asset], lump: bool) -> Expr {
    let mut acc = Expr::zero();
    for e in entitlements {
        acc = Expr::add(acc, (*e).clone());
    }
    for (asset, &w) in assets.iter().zip(weights.iter()) {
        let g = if lump { &asset.terminal } else { &asset.dividend };
        acc = Expr::add(acc, Expr::mul(Expr::constant(w), g.clone()));
    }
    acc
}

fn parse_field(text: &str, k: usize, context: &str) -> Result<Expr> {
    expr::parse(text, k).map_err(|source| Error::Parse {
        context: context.to_string(),
        source,
    })
}

fn check_region(cfg: &crate::config::RegionConfig, k: usize, name: &str) -> Result<Region> {
    if cfg.lo.len() != k || cfg.hi.len() != k {
        return Err(Error::InvalidEconomy(format!(
            "{name} must have {k} lo/hi entries, found {}/{}",
            cfg.lo.len(),
            cfg.hi.len()
        )));
    }
    for d in 0..k {
        if !(cfg.lo[d] < cfg.hi[d]) || !cfg.lo[d].is_finite() || !cfg.hi[d].is_finite() {
            return Err(Error::InvalidEconomy(format!(
                "{name} dimension {} is degenerate: lo={} hi={}",
                d + 1,
                cfg.lo[d],
                cfg.hi[d]
            )));
        }
    }
    Ok(Region {
        lo: cfg.lo.clone(),
        hi: cfg.hi.clone(),
    })
}

/// Parse and structurally validate an economy document. Fails atomically: on
/// any malformed field nothing is returned.
pub fn load_economy(config: &EconomyConfig) -> Result<Economy> {
    let k = config.diffusion.k;
    if k < 1 || k > 3 {
        return Err(Error::InvalidEconomy(format!(
            "state dimension K must be 1, 2, or 3 (the PDE solver is dense-grid based), found {k}"
        )));
    }
    if config.diffusion.b.len() != k {
        return Err(Error::InvalidEconomy(format!(
            "diffusion.b must have K={k} components, found {}",
            config.diffusion.b.len()
        )));
    }
    if config.diffusion.sigma.len() != k
        || config.diffusion.sigma.iter().any(|row| row.len() != k)
    {
        return Err(Error::InvalidEconomy(format!(
            "diffusion.sigma must be a {k}x{k} matrix of expressions"
        )));
    }
    if config.diffusion.x0.len() != k {
        return Err(Error::InvalidEconomy(format!(
            "diffusion.x0 must have K={k} components, found {}",
            config.diffusion.x0.len()
        )));
    }

    let mut b = Vec::with_capacity(k);
    for (i, text) in config.diffusion.b.iter().enumerate() {
        let e = parse_field(text, k, &format!("diffusion.b[{i}]"))?;
        if e.uses_time() {
            return Err(Error::InvalidEconomy(format!(
                "diffusion.b[{i}] references t; the state dynamics must be autonomous"
            )));
        }
        b.push(e);
    }
    let mut sigma = Vec::with_capacity(k * k);
    for (i, row) in config.diffusion.sigma.iter().enumerate() {
        for (j, text) in row.iter().enumerate() {
            let e = parse_field(text, k, &format!("diffusion.sigma[{i}][{j}]"))?;
            if e.uses_time() {
                return Err(Error::InvalidEconomy(format!(
                    "diffusion.sigma[{i}][{j}] references t; the state dynamics must be autonomous"
                )));
            }
            sigma.push(e);
        }
    }

    if config.assets.len() != k + 1 {
        return Err(Error::InvalidEconomy(format!(
            "an economy with K={k} state dimensions must list exactly K+1={} assets \
             (asset 0 is the zero-coupon bond), found {}",
            k + 1,
            config.assets.len()
        )));
    }
    let mut assets = Vec::with_capacity(k + 1);
    for (idx, a) in config.assets.iter().enumerate() {
        let dividend = parse_field(&a.dividend, k, &format!("assets[{idx}].dividend"))?;
        let terminal = parse_field(&a.terminal, k, &format!("assets[{idx}].terminal"))?;
        if idx == 0 && dividend != Expr::zero() {
            return Err(Error::InvalidEconomy(format!(
                "assets[0] is the zero-coupon numeraire bond and must have flow dividend \
                 identically 0 (write \"0\"), found `{}`",
                a.dividend
            )));
        }
        assets.push(Asset {
            dividend,
            terminal,
            is_numeraire_bond: idx == 0,
        });
    }

    if config.agents.is_empty() {
        return Err(Error::InvalidEconomy("at least one agent is required".into()));
    }
    let mut agents = Vec::with_capacity(config.agents.len());
    for (i, a) in config.agents.iter().enumerate() {
        if !(a.gamma > 0.0) || !a.gamma.is_finite() {
            return Err(Error::InvalidEconomy(format!(
                "agents[{i}].gamma must be strictly positive (gamma=1 is log utility; \
                 gamma<=0 breaks the Inada conditions), found {}",
                a.gamma
            )));
        }
        if !(a.rho >= 0.0) || !a.rho.is_finite() {
            return Err(Error::InvalidEconomy(format!(
                "agents[{i}].rho must be a nonnegative discount rate, found {}",
                a.rho
            )));
        }
        if a.shares.len() != k + 1 {
            return Err(Error::InvalidEconomy(format!(
                "agents[{i}].shares must have one entry per asset (K+1={}), found {}",
                k + 1,
                a.shares.len()
            )));
        }
        if a.shares.iter().any(|&s| !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::InvalidEconomy(format!(
                "agents[{i}].shares must all be nonnegative"
            )));
        }
        let entitlement = parse_field(&a.entitlement, k, &format!("agents[{i}].entitlement"))?;
        agents.push(Agent {
            utility: Crra {
                gamma: a.gamma,
                rho: a.rho,
            },
            entitlement,
            shares: a.shares.clone(),
        });
    }

    if !(config.horizon > 0.0) || !config.horizon.is_finite() {
        return Err(Error::InvalidEconomy(format!(
            "horizon must be a positive time, found {}",
            config.horizon
        )));
    }

    let region = check_region(&config.region, k, "region")?;
    let rank_region = check_region(&config.rank_region, k, "rank_region")?;
    if !region.contains(&config.diffusion.x0) {
        return Err(Error::InvalidEconomy(
            "diffusion.x0 must lie inside the verification region".into(),
        ));
    }
    if !region.contains_region(&rank_region) {
        return Err(Error::InvalidEconomy(
            "rank_region must be contained in the verification region".into(),
        ));
    }

    Ok(Economy {
        diffusion: Diffusion {
            k,
            b,
            sigma,
            x0: config.diffusion.x0.clone(),
        },
        agents,
        assets,
        horizon: config.horizon,
        region,
        rank_region,
    })
}

/// Evaluate an expression, mapping failures to a crate error with context.
pub(crate) fn eval_ctx(e: &Expr, t: f64, x: &[f64], context: &str) -> Result<f64> {
    e.eval(t, x)
        .map_err(|err: EvalError| Error::eval(context.to_string(), err))
}
