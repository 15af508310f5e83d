//! Executable validators for the model assumptions.
//!
//! The underlying conditions are stated on all of `R^K` (or on open sets) and
//! several are analytic in nature; none of that is decidable numerically.
//! What CAN be done honestly: evaluate every condition on a deterministic
//! low-discrepancy sample of the user-declared compact region (plus its
//! corners) and report quantitative witnesses. Analyticity claims are always
//! reported UNVERIFIABLE, never PASS, and region-truncated checks carry an
//! explicit caveat.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::economy::Economy;
use crate::expr::{Expr, Variable};
use crate::linalg;
use crate::sampling::sample_points;

/// Verdict for one assumption check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Verdict {
    Pass,
    Fail,
    Unverifiable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Pass => write!(f, "PASS"),
            Verdict::Fail => write!(f, "FAIL"),
            Verdict::Unverifiable => write!(f, "UNVERIFIABLE"),
        }
    }
}

/// One assumption's result: verdict plus numeric witnesses (estimated
/// constants, extremal values, witness locations serialized as coordinates).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssumptionCheck {
    pub id: String,
    pub verdict: Verdict,
    /// Whether a FAIL here makes the solver stages meaningless (true for
    /// well-posedness conditions) or only voids a conclusion that a later
    /// stage re-diagnoses in detail (false, e.g. the terminal payoff rank,
    /// which the completeness stage exists to examine).
    pub blocking: bool,
    /// Named scalar witnesses (estimated Lipschitz constant, minimum
    /// eigenvalue, extremal values, ...). BTreeMap for stable output order.
    pub witnesses: BTreeMap<String, f64>,
    /// Human-readable qualification (failure location, truncation caveat).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl AssumptionCheck {
    fn new(id: &str) -> Self {
        AssumptionCheck {
            id: id.to_string(),
            verdict: Verdict::Pass,
            blocking: true,
            witnesses: BTreeMap::new(),
            note: None,
        }
    }

    /// Mark this check as voiding only a conclusion, not the solvers.
    fn conclusion_only(mut self) -> Self {
        self.blocking = false;
        self
    }

    fn witness(mut self, name: &str, value: f64) -> Self {
        self.witnesses.insert(name.to_string(), value);
        self
    }

    fn fail(mut self, note: String) -> Self {
        self.verdict = Verdict::Fail;
        self.note = Some(note);
        self
    }

    fn caveat(mut self, note: &str) -> Self {
        if self.note.is_none() {
            self.note = Some(note.to_string());
        }
        self
    }
}

/// Full validation report: one entry per checked assumption plus the overall
/// verdict (FAIL if any check failed; UNVERIFIABLE never fails a run).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub overall: Verdict,
    pub checks: Vec<AssumptionCheck>,
    pub samples: usize,
    pub seed: u64,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.overall != Verdict::Fail
    }

    /// Compact `id -> verdict` map for embedding in downstream reports.
    pub fn verdict_map(&self) -> BTreeMap<String, String> {
        self.checks
            .iter()
            .map(|c| (c.id.clone(), c.verdict.to_string()))
            .collect()
    }

    /// Whether any failed check makes the solver stages meaningless.
    /// Conclusion-only failures (for example the terminal payoff rank) leave
    /// the planner, pricing, and completeness stages runnable — the
    /// completeness stage is precisely the tool that examines such a failure.
    pub fn blocks_solving(&self) -> bool {
        self.checks
            .iter()
            .any(|c| c.blocking && c.verdict == Verdict::Fail)
    }
}

const REGION_CAVEAT: &str =
    "verified on the declared compact region only; the underlying condition is global";

/// Time sample points in `[0, T]`: endpoints plus a base-2 radical-inverse
/// fill of the interior.
fn time_samples(horizon: f64, count: usize) -> Vec<f64> {
    let mut ts = vec![0.0, horizon];
    let mut idx: u64 = 1;
    while ts.len() < count + 2 {
        // van der Corput base 2
        let mut v = 0.0;
        let mut frac = 0.5;
        let mut n = idx;
        while n > 0 {
            if n & 1 == 1 {
                v += frac;
            }
            n >>= 1;
            frac *= 0.5;
        }
        ts.push(v * horizon);
        idx += 1;
    }
    ts
}

/// Evaluate `f` over all `(t, x)` sample combinations; returns (min, max,
/// argmin location) or an error note at the first domain failure.
fn scan(
    f: &Expr,
    name: &str,
    ts: &[f64],
    xs: &[Vec<f64>],
) -> std::result::Result<(f64, f64, (f64, Vec<f64>)), String> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut at = (0.0, Vec::new());
    for x in xs {
        for &t in ts {
            match f.eval(t, x) {
                Ok(v) => {
                    if v < lo {
                        lo = v;
                        at = (t, x.clone());
                    }
                    hi = hi.max(v);
                }
                Err(e) => {
                    return Err(format!("evaluating {name} at t={t}, x={x:?}: {e}"));
                }
            }
        }
    }
    Ok((lo, hi, at))
}

fn fmt_point(t: f64, x: &[f64]) -> String {
    format!("t={t}, x={x:?}")
}

/// Run all assumption validators on `samples` low-discrepancy points of the
/// verification region (per check; plus corners). Deterministic given `seed`.
pub fn validate_assumptions(econ: &Economy, samples: usize, seed: u64) -> ValidationReport {
    let xs = sample_points(&econ.region.lo, &econ.region.hi, samples, seed);
    let ts = time_samples(econ.horizon, 14);
    let mut checks = Vec::new();

    checks.push(check_coefficient_lipschitz(econ, &xs));
    checks.push(check_coefficient_bounds(econ, &xs));
    checks.push(check_uniform_ellipticity(econ, &xs));
    checks.push(check_utility_regularity(econ));
    checks.push(check_entitlement_positivity(econ, &ts, &xs));
    checks.push(check_dividend_nonnegativity(econ, &ts, &xs));
    checks.push(check_aggregate_endowment_bounds(econ, &ts, &xs));
    checks.push(check_numeraire_terminal_positivity(econ, samples, seed));
    checks.push(check_terminal_payoff_rank(econ, samples, seed));
    checks.push(
        AssumptionCheck::new("analyticity")
            .caveat(
                "entitlements, dividends, and coefficients are built from analytic primitives, \
                 but analyticity of arbitrary user expressions cannot be certified numerically",
            ),
    );
    let last = checks.len() - 1;
    checks[last].verdict = Verdict::Unverifiable;

    let overall = if checks.iter().any(|c| c.verdict == Verdict::Fail) {
        Verdict::Fail
    } else {
        Verdict::Pass
    };
    ValidationReport {
        overall,
        checks,
        samples,
        seed,
    }
}

/// Lipschitz continuity of `b` and `sigma`: estimate the constant as the
/// maximum difference quotient over consecutive sample pairs (a lower bound
/// for the true constant; reported as a witness, finite means PASS).
fn check_coefficient_lipschitz(econ: &Economy, xs: &[Vec<f64>]) -> AssumptionCheck {
    let check = AssumptionCheck::new("coefficient_lipschitz");
    let d = &econ.diffusion;
    let mut max_quotient: f64 = 0.0;
    let mut prev: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    for x in xs {
        let (bv, sv) = match (d.drift_at(x), d.sigma_at(x)) {
            (Ok(b), Ok(s)) => (b, s),
            (Err(e), _) | (_, Err(e)) => {
                return check.fail(format!("coefficient evaluation failed: {e}"));
            }
        };
        if let Some((px, pb, ps)) = &prev {
            let dist: f64 = x
                .iter()
                .zip(px.iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist > 1e-12 {
                let db: f64 = bv
                    .iter()
                    .zip(pb.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                let ds: f64 = sv
                    .iter()
                    .zip(ps.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                max_quotient = max_quotient.max(db / dist).max(ds / dist);
            }
        }
        prev = Some((x.clone(), bv, sv));
    }
    if !max_quotient.is_finite() {
        return check.fail("difference quotient diverged on the region".into());
    }
    check
        .witness("estimated_lipschitz_constant", max_quotient)
        .caveat(REGION_CAVEAT)
}

/// Boundedness of `b`, `sigma`, and their first derivatives (computed
/// symbolically, evaluated on samples).
fn check_coefficient_bounds(econ: &Economy, xs: &[Vec<f64>]) -> AssumptionCheck {
    let check = AssumptionCheck::new("coefficient_bounds");
    let d = &econ.diffusion;
    let mut max_coeff: f64 = 0.0;
    let mut max_deriv: f64 = 0.0;
    let exprs: Vec<&Expr> = d.b.iter().chain(d.sigma.iter()).collect();
    for e in exprs {
        let derivs: Vec<Expr> = (0..d.k).map(|l| e.differentiate(Variable::State(l))).collect();
        for x in xs {
            match e.eval(0.0, x) {
                Ok(v) => max_coeff = max_coeff.max(v.abs()),
                Err(err) => {
                    return check.fail(format!("coefficient evaluation failed at x={x:?}: {err}"))
                }
            }
            for de in &derivs {
                match de.eval(0.0, x) {
                    Ok(v) => max_deriv = max_deriv.max(v.abs()),
                    Err(err) => {
                        return check
                            .fail(format!("coefficient derivative failed at x={x:?}: {err}"))
                    }
                }
            }
        }
    }
    check
        .witness("max_coefficient_magnitude", max_coeff)
        .witness("max_first_derivative_magnitude", max_deriv)
        .caveat(REGION_CAVEAT)
}

/// Uniform ellipticity: minimum eigenvalue of `a(x) = sigma sigma^T` over
/// samples must be strictly positive.
fn check_uniform_ellipticity(econ: &Economy, xs: &[Vec<f64>]) -> AssumptionCheck {
    let mut check = AssumptionCheck::new("uniform_ellipticity");
    let d = &econ.diffusion;
    let mut min_eig = f64::INFINITY;
    let mut where_min = Vec::new();
    for x in xs {
        let a = match d.a_at(x) {
            Ok(a) => a,
            Err(e) => return check.fail(format!("diffusion matrix failed at x={x:?}: {e}")),
        };
        let ev = linalg::symmetric_eigenvalues(&a, d.k);
        if ev[0] < min_eig {
            min_eig = ev[0];
            where_min = x.clone();
        }
    }
    check = check.witness("min_eigenvalue", min_eig);
    if min_eig <= 0.0 {
        return check.fail(format!(
            "diffusion matrix is degenerate (min eigenvalue {min_eig}) at x={where_min:?}"
        ));
    }
    check.caveat(REGION_CAVEAT)
}

/// Utility regularity: the CRRA family satisfies smoothness, strict
/// monotonicity/concavity, and the Inada conditions analytically whenever
/// `gamma > 0`, which the loader enforces. Reported with the gamma range as
/// witness.
fn check_utility_regularity(econ: &Economy) -> AssumptionCheck {
    let mut check = AssumptionCheck::new("utility_regularity");
    let gmin = econ
        .agents
        .iter()
        .map(|a| a.utility.gamma)
        .fold(f64::INFINITY, f64::min);
    let gmax = econ
        .agents
        .iter()
        .map(|a| a.utility.gamma)
        .fold(f64::NEG_INFINITY, f64::max);
    check = check.witness("min_gamma", gmin).witness("max_gamma", gmax);
    if gmin <= 0.0 {
        return check.fail("a nonpositive risk aversion slipped past loading".into());
    }
    check.caveat("holds analytically for the CRRA family; no sampling needed")
}

/// Entitlements strictly positive on the sampled region.
fn check_entitlement_positivity(econ: &Economy, ts: &[f64], xs: &[Vec<f64>]) -> AssumptionCheck {
    let check = AssumptionCheck::new("entitlement_positivity");
    let mut min_e = f64::INFINITY;
    for (i, agent) in econ.agents.iter().enumerate() {
        match scan(&agent.entitlement, &format!("agents[{i}].entitlement"), ts, xs) {
            Ok((lo, _, at)) => {
                min_e = min_e.min(lo);
                if lo <= 0.0 {
                    return check
                        .witness("min_entitlement", lo)
                        .fail(format!(
                            "agents[{i}].entitlement is not strictly positive: {} at {}",
                            lo,
                            fmt_point(at.0, &at.1)
                        ));
                }
            }
            Err(e) => return check.fail(e),
        }
    }
    check.witness("min_entitlement", min_e).caveat(REGION_CAVEAT)
}

/// Dividends nonnegative on the sampled region (flow and terminal).
fn check_dividend_nonnegativity(econ: &Economy, ts: &[f64], xs: &[Vec<f64>]) -> AssumptionCheck {
    let check = AssumptionCheck::new("dividend_nonnegativity");
    let mut min_g = f64::INFINITY;
    let t_terminal = [econ.horizon];
    for (kk, asset) in econ.assets.iter().enumerate() {
        for (which, f, tset) in [
            ("dividend", &asset.dividend, ts),
            ("terminal", &asset.terminal, &t_terminal[..]),
        ] {
            match scan(f, &format!("assets[{kk}].{which}"), tset, xs) {
                Ok((lo, _, at)) => {
                    min_g = min_g.min(lo);
                    if lo < 0.0 {
                        return check.witness("min_dividend", lo).fail(format!(
                            "assets[{kk}].{which} is negative: {} at {}",
                            lo,
                            fmt_point(at.0, &at.1)
                        ));
                    }
                }
                Err(e) => return check.fail(e),
            }
        }
    }
    check.witness("min_dividend", min_g).caveat(REGION_CAVEAT)
}

/// Aggregate endowment bounded and bounded away from zero on the region
/// (flow everywhere, lump at the horizon).
fn check_aggregate_endowment_bounds(
    econ: &Economy,
    ts: &[f64],
    xs: &[Vec<f64>],
) -> AssumptionCheck {
    let mut check = AssumptionCheck::new("aggregate_endowment_bounds");
    let (flow, lump) = econ.aggregate_endowment();
    let flow_scan = scan(&flow, "aggregate endowment flow", ts, xs);
    let lump_scan = scan(&lump, "aggregate endowment lump", &[econ.horizon], xs);
    match (flow_scan, lump_scan) {
        (Ok((flo, fhi, fat)), Ok((llo, lhi, lat))) => {
            let min_all = flo.min(llo);
            let max_all = fhi.max(lhi);
            check = check
                .witness("min_aggregate_endowment", min_all)
                .witness("max_aggregate_endowment", max_all);
            if min_all <= 0.0 {
                let at = if flo <= llo { fat } else { lat };
                return check.fail(format!(
                    "aggregate endowment is not bounded away from zero: {} at {}",
                    min_all,
                    fmt_point(at.0, &at.1)
                ));
            }
            check.caveat(REGION_CAVEAT)
        }
        (Err(e), _) | (_, Err(e)) => check.fail(e),
    }
}

/// The numeraire's terminal payoff must be strictly positive (prices are
/// quoted relative to it), independent of whether the other payoffs span.
fn check_numeraire_terminal_positivity(
    econ: &Economy,
    samples: usize,
    seed: u64,
) -> AssumptionCheck {
    let check = AssumptionCheck::new("numeraire_terminal_positivity");
    let vs = sample_points(&econ.rank_region.lo, &econ.rank_region.hi, samples, seed);
    let t = econ.horizon;
    let g0 = &econ.assets[0].terminal;
    let mut min_g0 = f64::INFINITY;
    for x in &vs {
        match g0.eval(t, x) {
            Ok(v) => {
                min_g0 = min_g0.min(v);
                if v <= 0.0 {
                    return check.witness("min_bond_terminal", v).fail(format!(
                        "bond terminal payoff must be strictly positive on the rank region; \
                         found {v} at x={x:?}"
                    ));
                }
            }
            Err(e) => return check.fail(format!("bond terminal evaluation at x={x:?}: {e}")),
        }
    }
    check.witness("min_bond_terminal", min_g0).caveat(REGION_CAVEAT)
}

/// Rank of the terminal payoffs: the Jacobian of `h^k = g^k(T, ·) / g^0(T, ·)`
/// must be nondegenerate on the rank region. The Jacobian is exact: `h^k` is
/// differentiated symbolically. Marked conclusion-only because a failure here
/// voids the completeness conclusion without making the equilibrium solve
/// meaningless — the completeness stage exists to diagnose exactly this, with
/// the solved prices in hand.
fn check_terminal_payoff_rank(econ: &Economy, samples: usize, seed: u64) -> AssumptionCheck {
    let mut check = AssumptionCheck::new("terminal_payoff_rank").conclusion_only();
    let vs = sample_points(&econ.rank_region.lo, &econ.rank_region.hi, samples, seed);

    match terminal_jacobian_min_det(econ, &vs) {
        Ok((min_det, at)) => {
            check = check.witness("min_abs_det_payoff_jacobian", min_det);
            if min_det <= 0.0 {
                return check.fail(format!(
                    "terminal payoff Jacobian is rank-deficient (|det| = {min_det}) at x={at:?}"
                ));
            }
            check.caveat("rank verified on sampled points of the declared rank region")
        }
        Err(e) => check.fail(e),
    }
}

/// Minimum `|det Dh|` over the given points, where `h^k = g^k(T,·)/g^0(T,·)`
/// is formed and differentiated symbolically. Shared with the completeness
/// module's terminal rank check.
pub(crate) fn terminal_jacobian_min_det(
    econ: &Economy,
    points: &[Vec<f64>],
) -> std::result::Result<(f64, Vec<f64>), String> {
    let k = econ.k();
    let t = econ.horizon;
    let g0 = &econ.assets[0].terminal;
    // dh^k/dx_l as expressions, row-major K x K.
    let mut rows = Vec::with_capacity(k * k);
    for asset in econ.assets.iter().skip(1) {
        let h = Expr::div(asset.terminal.clone(), g0.clone());
        for l in 0..k {
            rows.push(h.differentiate(Variable::State(l)));
        }
    }
    let mut min_det = f64::INFINITY;
    let mut at = Vec::new();
    for x in points {
        let mut jac = vec![0.0; k * k];
        for (slot, e) in jac.iter_mut().zip(rows.iter()) {
            *slot = e
                .eval(t, x)
                .map_err(|err| format!("payoff Jacobian evaluation at x={x:?}: {err}"))?;
        }
        let det = linalg::determinant(&jac, k).abs();
        if det < min_det {
            min_det = det;
            at = x.clone();
        }
    }
    Ok((min_det, at))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::EconomyConfig;
    use crate::economy::load_economy;

    fn econ_from(json: &str) -> Economy {
        let cfg: EconomyConfig = serde_json::from_str(json).unwrap();
        load_economy(&cfg).unwrap()
    }

    fn log1() -> Economy {
        econ_from(
            r#"{
                "diffusion": {"K": 1, "b": ["0"], "sigma": [["1"]], "x0": [0.0]},
                "agents": [{"gamma": 1.0, "rho": 0.1, "entitlement": "0.1", "shares": [1.0, 1.0]}],
                "assets": [{"dividend": "0", "terminal": "1"},
                           {"dividend": "exp(x1)", "terminal": "exp(x1)"}],
                "horizon": 1.0,
                "region": {"lo": [-3.0], "hi": [3.0]},
                "rank_region": {"lo": [0.0], "hi": [1.0]}
            }"#,
        )
    }

    #[test]
    fn constant_coefficients_pass_with_zero_lipschitz() {
        let report = validate_assumptions(&log1(), 128, 7);
        assert!(report.passed());
        let lip = report
            .checks
            .iter()
            .find(|c| c.id == "coefficient_lipschitz")
            .unwrap();
        assert_eq!(lip.verdict, Verdict::Pass);
        assert_eq!(lip.witnesses["estimated_lipschitz_constant"], 0.0);
        let ell = report
            .checks
            .iter()
            .find(|c| c.id == "uniform_ellipticity")
            .unwrap();
        assert_eq!(ell.witnesses["min_eigenvalue"], 1.0);
    }

    #[test]
    fn monotone_payoff_ratio_passes_rank_check() {
        // h(x) = exp(x)/1, so min |h'| on [0, 1] is exp(0) = 1.
        let report = validate_assumptions(&log1(), 256, 3);
        let rank = report
            .checks
            .iter()
            .find(|c| c.id == "terminal_payoff_rank")
            .unwrap();
        assert_eq!(rank.verdict, Verdict::Pass);
        let got = rank.witnesses["min_abs_det_payoff_jacobian"];
        assert!((got - 1.0).abs() < 1e-2, "min |det Dh| = {got}");
    }

    #[test]
    fn constant_risky_payoff_fails_rank_check() {
        let econ = econ_from(
            r#"{
                "diffusion": {"K": 1, "b": ["0"], "sigma": [["1"]], "x0": [0.0]},
                "agents": [{"gamma": 1.0, "rho": 0.1, "entitlement": "0.1", "shares": [1.0, 1.0]}],
                "assets": [{"dividend": "0", "terminal": "1"},
                           {"dividend": "exp(x1)", "terminal": "1"}],
                "horizon": 1.0,
                "region": {"lo": [-3.0], "hi": [3.0]},
                "rank_region": {"lo": [0.0], "hi": [1.0]}
            }"#,
        );
        let report = validate_assumptions(&econ, 64, 1);
        assert!(!report.passed());
        let rank = report
            .checks
            .iter()
            .find(|c| c.id == "terminal_payoff_rank")
            .unwrap();
        assert_eq!(rank.verdict, Verdict::Fail);
        assert_eq!(rank.witnesses["min_abs_det_payoff_jacobian"], 0.0);
    }

    #[test]
    fn analyticity_is_never_pass() {
        let report = validate_assumptions(&log1(), 32, 0);
        let an = report.checks.iter().find(|c| c.id == "analyticity").unwrap();
        assert_eq!(an.verdict, Verdict::Unverifiable);
        assert!(report.passed(), "UNVERIFIABLE must not fail validation");
    }

    #[test]
    fn validation_is_deterministic_given_seed() {
        let a = validate_assumptions(&log1(), 100, 11);
        let b = validate_assumptions(&log1(), 100, 11);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn nonpositive_entitlement_is_flagged() {
        let econ = econ_from(
            r#"{
                "diffusion": {"K": 1, "b": ["0"], "sigma": [["1"]], "x0": [0.0]},
                "agents": [{"gamma": 1.0, "rho": 0.0, "entitlement": "x1", "shares": [1.0, 1.0]}],
                "assets": [{"dividend": "0", "terminal": "1"},
                           {"dividend": "exp(x1)", "terminal": "exp(x1)"}],
                "horizon": 1.0,
                "region": {"lo": [-1.0], "hi": [1.0]},
                "rank_region": {"lo": [-1.0], "hi": [1.0]}
            }"#,
        );
        let report = validate_assumptions(&econ, 64, 5);
        let ent = report
            .checks
            .iter()
            .find(|c| c.id == "entitlement_positivity")
            .unwrap();
        assert_eq!(ent.verdict, Verdict::Fail);
    }
}
