//! Shared setup for the criterion benchmarks: a small benchmark economy and
//! its discretization, built once per bench.

use radner_core::config::McSettings;
use radner_core::economy::{Agent, Asset, Crra, Diffusion, Economy, Region};
use radner_core::expr::{parse, Expr};
use radner_core::markov::{build_grid, GeneratorTables, Grid};

/// Two-agent economy with one bond and one stock on a unit-volatility
/// Brownian state: small enough for quick iteration, rich enough that the
/// sharing rule and the pricing solves do real work.
pub fn bench_economy() -> Economy {
    Economy {
        diffusion: Diffusion {
            k: 1,
            b: vec![Expr::zero()],
            sigma: vec![Expr::one()],
            x0: vec![0.0],
        },
        agents: vec![
            Agent {
                utility: Crra {
                    gamma: 1.0,
                    rho: 0.05,
                },
                entitlement: parse("0.05", 1).unwrap(),
                shares: vec![0.5, 0.5],
            },
            Agent {
                utility: Crra {
                    gamma: 2.0,
                    rho: 0.3,
                },
                entitlement: parse("0.05", 1).unwrap(),
                shares: vec![0.5, 0.5],
            },
        ],
        assets: vec![
            Asset {
                dividend: Expr::zero(),
                terminal: Expr::one(),
                is_numeraire_bond: true,
            },
            Asset {
                dividend: parse("exp(x1)", 1).unwrap(),
                terminal: parse("exp(x1)", 1).unwrap(),
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

pub fn bench_grid(econ: &Economy, nodes: usize, steps: usize) -> (Grid, GeneratorTables) {
    let grid = build_grid(
        &econ.region,
        &econ.diffusion.x0,
        &[nodes],
        econ.horizon,
        steps,
    )
    .unwrap();
    let tables = GeneratorTables::build(&econ.diffusion, &grid).unwrap();
    (grid, tables)
}

pub fn bench_quadrature() -> McSettings {
    McSettings {
        paths: 400,
        steps: 50,
        seed: 9,
    }
}
