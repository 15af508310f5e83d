//! Run and economy configuration documents.
//!
//! Two JSON documents drive a run: the *run config* (grid resolution, Monte
//! Carlo settings, tolerances, output directory, and the path of the economy
//! document) and the *economy config* (diffusion coefficients, agents,
//! assets, horizon, regions — all function-valued fields as expression
//! strings). Both reject unknown fields so typos fail loudly.
//!
//! Every report embeds a hash of the *effective* configuration — the run
//! config after command-line overrides with the economy document inlined —
//! so downstream stages can verify they were produced from the same inputs.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Grid resolution settings.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    /// Spatial nodes per dimension. A single entry is broadcast to all
    /// dimensions; otherwise the length must equal the state dimension.
    pub space_nodes: Vec<usize>,
    /// Number of time steps (time levels are `time_steps + 1`).
    pub time_steps: usize,
}

/// Monte Carlo settings shared by the budget quadrature, the pricing
/// cross-check, and the portfolio simulation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub paths: usize,
    pub steps: usize,
    /// Mandatory seed: every stochastic quantity in a run derives from it.
    pub seed: u64,
}

fn default_negishi_tol() -> f64 {
    1e-6
}

fn default_det_threshold_scale() -> f64 {
    1e-8
}

fn default_theta() -> f64 {
    0.5
}

fn default_clearing_tol() -> f64 {
    1e-6
}

/// Solver tolerances; every field has a sensible default so configs only
/// name the ones they tighten or relax.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Relative budget-residual tolerance for the transfer-weight search.
    pub negishi: f64,
    /// Scale factor for the completeness determinant threshold.
    pub det_threshold_scale: f64,
    /// Time-weighting of the PDE scheme (0.5 = Crank–Nicolson).
    pub theta: f64,
    /// Market-clearing bound for the portfolio stage, per unit of the
    /// outstanding supply's max-norm.
    pub clearing: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            negishi: default_negishi_tol(),
            det_threshold_scale: default_det_threshold_scale(),
            theta: default_theta(),
            clearing: default_clearing_tol(),
        }
    }
}

/// Top-level run configuration document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Path of the economy document, relative to this file's directory.
    pub economy: String,
    pub grid: GridSettings,
    pub mc: McSettings,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Default output directory; `--out` overrides it.
    #[serde(default)]
    pub output_dir: Option<String>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| Error::json(path.display().to_string(), e))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<()> {
        if self.grid.space_nodes.is_empty() || self.grid.space_nodes.iter().any(|&n| n < 3) {
            return Err(Error::Config(
                "grid.space_nodes must be nonempty with every entry >= 3".into(),
            ));
        }
        if self.grid.time_steps < 1 {
            return Err(Error::Config("grid.time_steps must be >= 1".into()));
        }
        if self.mc.paths < 1 || self.mc.steps < 1 {
            return Err(Error::Config("mc.paths and mc.steps must be >= 1".into()));
        }
        if !(self.tolerances.negishi > 0.0) {
            return Err(Error::Config("tolerances.negishi must be > 0".into()));
        }
        if !(self.tolerances.det_threshold_scale >= 0.0) {
            return Err(Error::Config(
                "tolerances.det_threshold_scale must be >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.tolerances.theta) {
            return Err(Error::Config("tolerances.theta must lie in [0, 1]".into()));
        }
        if !(self.tolerances.clearing > 0.0) {
            return Err(Error::Config("tolerances.clearing must be > 0".into()));
        }
        Ok(())
    }

    /// Resolve the economy document path relative to the run config file.
    pub fn economy_path(&self, run_config_path: &Path) -> PathBuf {
        let rel = Path::new(&self.economy);
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            run_config_path
                .parent()
                .unwrap_or_else(|| Path::new("."))
                .join(rel)
        }
    }

    /// Apply command-line overrides, returning the effective settings.
    pub fn with_overrides(mut self, seed: Option<u64>, grid_scale: Option<f64>) -> Result<Self> {
        if let Some(s) = seed {
            self.mc.seed = s;
        }
        if let Some(f) = grid_scale {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::Config("--grid-scale must be a positive number".into()));
            }
            for n in &mut self.grid.space_nodes {
                // Scale intervals, not nodes, so doubling is exact: 401 -> 801.
                let intervals = (*n - 1) as f64 * f;
                *n = (intervals.round() as usize).max(2) + 1;
            }
            let steps = (self.grid.time_steps as f64 * f).round() as usize;
            self.grid.time_steps = steps.max(1);
        }
        self.check()?;
        Ok(self)
    }
}

/// Rectangular region (a box), one `lo`/`hi` pair per dimension.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RegionConfig {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Diffusion section: `dX_t = b(X_t) dt + sigma(X_t) dW_t` started at `x0`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    /// State dimension.
    #[serde(rename = "K")]
    pub k: usize,
    /// Drift components, expressions in `x1..xK` only.
    pub b: Vec<String>,
    /// Dispersion matrix rows, expressions in `x1..xK` only.
    pub sigma: Vec<Vec<String>>,
    /// Initial state.
    pub x0: Vec<f64>,
}

/// One agent: CRRA utility (`gamma` = 1 means log), discount rate `rho`,
/// entitlement expression in `(t, x)`, and initial share holdings, one per
/// asset.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub rho: f64,
    pub entitlement: String,
    pub shares: Vec<f64>,
}

/// One asset: flow dividend for `t < T` and the (possibly different) lump
/// payoff at `T`. Asset 0 must be the zero-coupon numeraire bond: flow
/// dividend identically `0`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AssetConfig {
    pub dividend: String,
    pub terminal: String,
}

/// Economy configuration document.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EconomyConfig {
    pub diffusion: DiffusionConfig,
    pub agents: Vec<AgentConfig>,
    pub assets: Vec<AssetConfig>,
    pub horizon: f64,
    /// Verification region: assumptions are checked and the PDE is solved on
    /// this box.
    pub region: RegionConfig,
    /// Sub-box on which the terminal payoff Jacobian must have full rank.
    pub rank_region: RegionConfig,
}

impl EconomyConfig {
    pub fn load(path: &Path) -> Result<EconomyConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))
    }
}

/// The effective configuration: run settings after overrides, with the
/// economy document inlined. Hashing this fixes every input that can affect
/// numerical output.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct EffectiveConfig {
    pub run: RunConfig,
    pub economy: EconomyConfig,
}

impl EffectiveConfig {
    /// Hex SHA-256 of the canonical JSON serialization.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialization cannot fail");
        let digest = Sha256::digest(json.as_bytes());
        let mut out = String::with_capacity(64);
        for b in digest {
            use std::fmt::Write;
            write!(out, "{b:02x}").unwrap();
        }
        out
    }
}
