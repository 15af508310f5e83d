//! Benchmarks for the hot kernels: expression evaluation, path simulation,
//! the pointwise sharing rule, the backward PDE solve, and the end-to-end
//! weight search.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;

use radner_bench::{bench_economy, bench_grid, bench_quadrature};
use radner_core::economy::Crra;
use radner_core::expr::parse;
use radner_core::markov::simulate_paths;
use radner_core::planner::{negishi_solve, sharing_rule_crra};
use radner_core::pricing::price_all_assets;

fn expr_eval(c: &mut Criterion) {
    let e = parse("exp(0.3*x1)*sin(t + x1) + log(1.5 + x1^2)/sqrt(1 + t^2)", 1).unwrap();
    c.bench_function("expr_eval", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..100 {
                let x = -2.0 + 0.04 * i as f64;
                acc += e.eval(black_box(0.5), black_box(&[x])).unwrap();
            }
            acc
        })
    });
}

fn expr_differentiate(c: &mut Criterion) {
    let e = parse("exp(0.3*x1)*sin(t + x1) + log(1.5 + x1^2)/sqrt(1 + t^2)", 1).unwrap();
    c.bench_function("expr_differentiate", |b| {
        b.iter(|| black_box(&e).differentiate(radner_core::expr::Variable::State(0)))
    });
}

fn path_simulation(c: &mut Criterion) {
    let econ = bench_economy();
    c.bench_function("simulate_paths_1k_x_100", |b| {
        b.iter(|| {
            simulate_paths(black_box(&econ.diffusion), 1.0, 100, 1000, 42).unwrap()
        })
    });
}

fn sharing_rule(c: &mut Criterion) {
    let utilities = vec![
        Crra {
            gamma: 1.0,
            rho: 0.05,
        },
        Crra {
            gamma: 2.0,
            rho: 0.3,
        },
        Crra {
            gamma: 4.0,
            rho: 0.1,
        },
    ];
    let lambda = vec![1.0, 0.8, 1.3];
    c.bench_function("sharing_rule_3_agents", |b| {
        b.iter(|| {
            let mut acc = 0.0;
            for i in 0..100 {
                let agg = 0.5 + 0.05 * i as f64;
                let (cons, mu) =
                    sharing_rule_crra(black_box(&utilities), black_box(&lambda), 0.5, agg)
                        .unwrap();
                acc += mu + cons[0];
            }
            acc
        })
    });
}

fn backward_pricing(c: &mut Criterion) {
    let econ = bench_economy();
    let (grid, tables) = bench_grid(&econ, 201, 100);
    let eq = negishi_solve(&econ, &grid, &bench_quadrature(), 1e-6).unwrap();
    assert!(eq.converged);
    c.bench_function("price_all_assets_201x100", |b| {
        b.iter_batched(
            || eq.clone(),
            |eq| price_all_assets(&econ, &grid, &tables, &eq, 0.5).unwrap(),
            BatchSize::LargeInput,
        )
    });
}

fn weight_search(c: &mut Criterion) {
    let econ = bench_economy();
    let (grid, _) = bench_grid(&econ, 101, 50);
    let quad = bench_quadrature();
    c.bench_function("negishi_solve_two_agents", |b| {
        b.iter(|| negishi_solve(black_box(&econ), &grid, &quad, 1e-6).unwrap())
    });
}

criterion_group!(
    benches,
    expr_eval,
    expr_differentiate,
    path_simulation,
    sharing_rule,
    backward_pricing,
    weight_search
);
criterion_main!(benches);
