//! Space-time grids, grid functions, and the diffusion's infinitesimal
//! generator.
//!
//! Grids are uniform tensor products over the verification box with time
//! levels `0 = t_0 < … < t_M = T`. Grid functions are stored flat,
//! row-major with the last spatial dimension fastest. Off-grid evaluation is
//! multilinear in space and linear in time.

pub mod paths;

pub use paths::{simulate_paths, PathBundle};

use crate::economy::{Diffusion, Region};
use crate::error::{Error, Result};
use crate::expr::{Expr, Variable};

/// Uniform tensor-product grid over a box, with uniform time levels.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    /// Node coordinates per dimension (strictly increasing, uniform).
    pub axes: Vec<Vec<f64>>,
    /// Spacing per dimension.
    pub dx: Vec<f64>,
    /// Time levels `0 = t_0 < … < t_M = T`.
    pub times: Vec<f64>,
    /// Time step.
    pub dt: f64,
    /// Multi-index of the node nearest to the initial state.
    pub x0_index: Vec<usize>,
    /// Max-norm distance between the initial state and its snapped node.
    pub x0_offset: f64,
}

/// Build a uniform grid on `region` with `nodes_per_dim[d] >= 3` nodes per
/// dimension and `time_steps >= 1` uniform steps on `[0, horizon]`. The
/// initial state is snapped to its nearest node with the offset recorded.
pub fn build_grid(
    region: &Region,
    x0: &[f64],
    nodes_per_dim: &[usize],
    horizon: f64,
    time_steps: usize,
) -> Result<Grid> {
    let k = region.dim();
    if nodes_per_dim.len() != k {
        return Err(Error::Config(format!(
            "nodes_per_dim must have {k} entries, found {}",
            nodes_per_dim.len()
        )));
    }
    if time_steps < 1 {
        return Err(Error::Config("time_steps must be >= 1".into()));
    }
    if !(horizon > 0.0) {
        return Err(Error::Config("horizon must be positive".into()));
    }
    let mut axes = Vec::with_capacity(k);
    let mut dx = Vec::with_capacity(k);
    for d in 0..k {
        let n = nodes_per_dim[d];
        if n < 3 {
            return Err(Error::Config(format!(
                "nodes_per_dim[{d}] must be >= 3, found {n}"
            )));
        }
        let (lo, hi) = (region.lo[d], region.hi[d]);
        if !(hi > lo) {
            return Err(Error::Config(format!("region dimension {d} is degenerate")));
        }
        let h = (hi - lo) / (n - 1) as f64;
        let axis: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        axes.push(axis);
        dx.push(h);
    }
    let dt = horizon / time_steps as f64;
    let times: Vec<f64> = (0..=time_steps).map(|m| m as f64 * dt).collect();

    let mut x0_index = Vec::with_capacity(k);
    let mut x0_offset: f64 = 0.0;
    for d in 0..k {
        let rel = (x0[d] - region.lo[d]) / dx[d];
        let i = (rel.round() as isize).clamp(0, (axes[d].len() - 1) as isize) as usize;
        x0_offset = x0_offset.max((axes[d][i] - x0[d]).abs());
        x0_index.push(i);
    }

    Ok(Grid {
        axes,
        dx,
        times,
        dt,
        x0_index,
        x0_offset,
    })
}

impl Grid {
    pub fn k(&self) -> usize {
        self.axes.len()
    }

    /// Number of spatial nodes (product over dimensions).
    pub fn spatial_len(&self) -> usize {
        self.axes.iter().map(|a| a.len()).product()
    }

    /// Number of time levels (`time_steps + 1`).
    pub fn n_levels(&self) -> usize {
        self.times.len()
    }

    /// Flatten a multi-index (last dimension fastest).
    pub fn flat(&self, idx: &[usize]) -> usize {
        let mut f = 0;
        for (d, &i) in idx.iter().enumerate() {
            f = f * self.axes[d].len() + i;
        }
        f
    }

    /// Inverse of [`Grid::flat`].
    pub fn unflat(&self, mut flat: usize, out: &mut Vec<usize>) {
        out.clear();
        out.resize(self.k(), 0);
        for d in (0..self.k()).rev() {
            let n = self.axes[d].len();
            out[d] = flat % n;
            flat /= n;
        }
    }

    /// Coordinates of a node by flat index.
    pub fn node(&self, flat: usize, out: &mut Vec<f64>) {
        out.clear();
        out.resize(self.k(), 0.0);
        let mut rem = flat;
        for d in (0..self.k()).rev() {
            let n = self.axes[d].len();
            out[d] = self.axes[d][rem % n];
            rem /= n;
        }
    }

    /// Whether the flat index lies on the spatial boundary of the box.
    pub fn is_boundary(&self, flat: usize) -> bool {
        let mut rem = flat;
        for d in (0..self.k()).rev() {
            let n = self.axes[d].len();
            let i = rem % n;
            if i == 0 || i == n - 1 {
                return true;
            }
            rem /= n;
        }
        false
    }

    /// Evaluate an expression on all spatial nodes at time `t`.
    pub fn eval_spatial(&self, e: &Expr, t: f64, context: &str) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.spatial_len()];
        let mut x = Vec::with_capacity(self.k());
        for (flat, slot) in out.iter_mut().enumerate() {
            self.node(flat, &mut x);
            *slot = crate::economy::eval_ctx(e, t, &x, context)?;
        }
        Ok(out)
    }
}

/// Grid function over all time levels: `levels[m]` holds the spatial field at
/// `times[m]`. For flow quantities the last level stores the flow's left
/// limit at the horizon; lump-at-horizon companions are stored separately as
/// plain spatial fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    pub levels: Vec<Vec<f64>>,
}

impl SpaceTimeField {
    pub fn zeros(grid: &Grid) -> Self {
        SpaceTimeField {
            levels: vec![vec![0.0; grid.spatial_len()]; grid.n_levels()],
        }
    }
}

/// Locate `x` in an axis: returns the left cell index `i` (clamped so that
/// `i + 1` is valid) and the interpolation weight toward node `i + 1`,
/// clamped to `[0, 1]` so off-box points evaluate to the boundary value.
fn locate(axis: &[f64], h: f64, x: f64) -> (usize, f64) {
    let n = axis.len();
    let rel = (x - axis[0]) / h;
    let i = (rel.floor() as isize).clamp(0, n as isize - 2) as usize;
    let w = ((x - axis[i]) / h).clamp(0.0, 1.0);
    (i, w)
}

/// Multilinear interpolation of a spatial field at `x` (clamped to the box).
pub fn interp_spatial(grid: &Grid, field: &[f64], x: &[f64]) -> f64 {
    let k = grid.k();
    debug_assert_eq!(x.len(), k);
    let mut cell = [0usize; 3];
    let mut w = [0.0f64; 3];
    for d in 0..k {
        let (i, wd) = locate(&grid.axes[d], grid.dx[d], x[d]);
        cell[d] = i;
        w[d] = wd;
    }
    let mut acc = 0.0;
    let mut idx = vec![0usize; k];
    for corner in 0..(1usize << k) {
        let mut weight = 1.0;
        for d in 0..k {
            if corner & (1 << d) != 0 {
                idx[d] = cell[d] + 1;
                weight *= w[d];
            } else {
                idx[d] = cell[d];
                weight *= 1.0 - w[d];
            }
        }
        if weight != 0.0 {
            acc += weight * field[grid.flat(&idx)];
        }
    }
    acc
}

/// Space-time interpolation: multilinear in space, linear in time, clamped to
/// the grid in both.
pub fn interp_space_time(grid: &Grid, field: &SpaceTimeField, t: f64, x: &[f64]) -> f64 {
    let m_max = grid.n_levels() - 1;
    let rel = (t / grid.dt).clamp(0.0, m_max as f64);
    let m = (rel.floor() as usize).min(m_max - 1);
    let wt = (rel - m as f64).clamp(0.0, 1.0);
    let lo = interp_spatial(grid, &field.levels[m], x);
    if wt == 0.0 {
        return lo;
    }
    let hi = interp_spatial(grid, &field.levels[m + 1], x);
    lo + wt * (hi - lo)
}

/// First spatial derivative of a field along `dim`: fourth-point third-order
/// one-sided stencils at the boundary (second-order when the axis has only 3
/// nodes), central differences inside.
pub fn spatial_gradient(grid: &Grid, field: &[f64], dim: usize) -> Vec<f64> {
    let k = grid.k();
    let n = grid.axes[dim].len();
    let h = grid.dx[dim];
    let mut out = vec![0.0; field.len()];
    let mut idx = vec![0usize; k];
    for flat in 0..field.len() {
        grid.unflat(flat, &mut idx);
        let i = idx[dim];
        let value_at = |j: usize, idx: &mut Vec<usize>| -> f64 {
            let saved = idx[dim];
            idx[dim] = j;
            let v = field[grid.flat(idx)];
            idx[dim] = saved;
            v
        };
        out[flat] = if i == 0 {
            if n >= 4 {
                (-11.0 * value_at(0, &mut idx) + 18.0 * value_at(1, &mut idx)
                    - 9.0 * value_at(2, &mut idx)
                    + 2.0 * value_at(3, &mut idx))
                    / (6.0 * h)
            } else {
                (-3.0 * value_at(0, &mut idx) + 4.0 * value_at(1, &mut idx)
                    - value_at(2, &mut idx))
                    / (2.0 * h)
            }
        } else if i == n - 1 {
            if n >= 4 {
                (11.0 * value_at(n - 1, &mut idx) - 18.0 * value_at(n - 2, &mut idx)
                    + 9.0 * value_at(n - 3, &mut idx)
                    - 2.0 * value_at(n - 4, &mut idx))
                    / (6.0 * h)
            } else {
                (3.0 * value_at(n - 1, &mut idx) - 4.0 * value_at(n - 2, &mut idx)
                    + value_at(n - 3, &mut idx))
                    / (2.0 * h)
            }
        } else {
            (value_at(i + 1, &mut idx) - value_at(i - 1, &mut idx)) / (2.0 * h)
        };
    }
    out
}

/// Second spatial derivative along `dim`: central inside, one-sided 4-point
/// (second-order) at the boundary.
pub fn second_derivative(grid: &Grid, field: &[f64], dim: usize) -> Vec<f64> {
    let k = grid.k();
    let n = grid.axes[dim].len();
    let h2 = grid.dx[dim] * grid.dx[dim];
    let mut out = vec![0.0; field.len()];
    let mut idx = vec![0usize; k];
    for flat in 0..field.len() {
        grid.unflat(flat, &mut idx);
        let i = idx[dim];
        let value_at = |j: usize, idx: &mut Vec<usize>| -> f64 {
            let saved = idx[dim];
            idx[dim] = j;
            let v = field[grid.flat(idx)];
            idx[dim] = saved;
            v
        };
        out[flat] = if i == 0 {
            if n >= 4 {
                (2.0 * value_at(0, &mut idx) - 5.0 * value_at(1, &mut idx)
                    + 4.0 * value_at(2, &mut idx)
                    - value_at(3, &mut idx))
                    / h2
            } else {
                (value_at(0, &mut idx) - 2.0 * value_at(1, &mut idx) + value_at(2, &mut idx)) / h2
            }
        } else if i == n - 1 {
            if n >= 4 {
                (2.0 * value_at(n - 1, &mut idx) - 5.0 * value_at(n - 2, &mut idx)
                    + 4.0 * value_at(n - 3, &mut idx)
                    - value_at(n - 4, &mut idx))
                    / h2
            } else {
                (value_at(n - 1, &mut idx) - 2.0 * value_at(n - 2, &mut idx)
                    + value_at(n - 3, &mut idx))
                    / h2
            }
        } else {
            (value_at(i + 1, &mut idx) - 2.0 * value_at(i, &mut idx) + value_at(i - 1, &mut idx))
                / h2
        };
    }
    out
}

/// Precomputed coefficient fields of the generator on a grid: `b_d(x)` and
/// `a_{ij}(x)` at every spatial node. The diffusion is autonomous, so one
/// table serves all time levels.
#[derive(Debug, Clone)]
pub struct GeneratorTables {
    pub k: usize,
    /// `b[d][node]`.
    pub b: Vec<Vec<f64>>,
    /// `a[i * k + j][node]`, row-major over `(i, j)`.
    pub a: Vec<Vec<f64>>,
}

impl GeneratorTables {
    pub fn build(d: &Diffusion, grid: &Grid) -> Result<GeneratorTables> {
        let k = d.k;
        let len = grid.spatial_len();
        let mut b = vec![vec![0.0; len]; k];
        let mut a = vec![vec![0.0; len]; k * k];
        let mut x = Vec::with_capacity(k);
        for flat in 0..len {
            grid.node(flat, &mut x);
            let bv = d.drift_at(&x)?;
            let av = d.a_at(&x)?;
            for dd in 0..k {
                b[dd][flat] = bv[dd];
            }
            for ij in 0..k * k {
                a[ij][flat] = av[ij];
            }
        }
        Ok(GeneratorTables { k, b, a })
    }
}

/// Apply the generator `L u = b · grad u + 1/2 tr(a D^2 u)` to a spatial
/// field using the precomputed coefficient tables. Mixed second derivatives
/// are formed by composing first-derivative stencils, so all entries are
/// second-order inside and one-sided at the boundary.
pub fn apply_generator_tables(grid: &Grid, tables: &GeneratorTables, u: &[f64]) -> Vec<f64> {
    let k = tables.k;
    let mut out = vec![0.0; u.len()];
    for d in 0..k {
        let du = spatial_gradient(grid, u, d);
        for (o, (&g, &bv)) in out.iter_mut().zip(du.iter().zip(tables.b[d].iter())) {
            *o += bv * g;
        }
        // Pure second derivative a_dd.
        let ddu = second_derivative(grid, u, d);
        for (o, (&g, &av)) in out.iter_mut().zip(ddu.iter().zip(tables.a[d * k + d].iter())) {
            *o += 0.5 * av * g;
        }
        // Mixed terms: d/dx_e of du for e > d, using symmetry of `a`.
        for e in d + 1..k {
            let cross = spatial_gradient(grid, &du, e);
            for (o, (&g, &av)) in out.iter_mut().zip(cross.iter().zip(tables.a[d * k + e].iter()))
            {
                *o += av * g;
            }
        }
    }
    out
}

/// Public entry matching the module contract: evaluate coefficients on the
/// grid and apply the generator to `u`.
pub fn apply_generator(d: &Diffusion, u: &[f64], grid: &Grid) -> Result<Vec<f64>> {
    let tables = GeneratorTables::build(d, grid)?;
    Ok(apply_generator_tables(grid, &tables, u))
}

/// Exact symbolic generator applied to an expression, for oracle tests and
/// residual diagnostics: `L u = sum_d b_d du/dx_d + 1/2 sum_{ij} a_ij
/// d2u/dx_i dx_j` built as an expression over `(t, x)`.
pub fn symbolic_generator(d: &Diffusion, u: &Expr) -> Expr {
    let k = d.k;
    let mut acc = Expr::zero();
    let grads: Vec<Expr> = (0..k).map(|l| u.differentiate(Variable::State(l))).collect();
    for (l, g) in grads.iter().enumerate() {
        acc = Expr::add(acc, Expr::mul(d.b[l].clone(), g.clone()));
    }
    for i in 0..k {
        for j in 0..k {
            // a_ij = sum_l sigma_il sigma_jl
            let mut aij = Expr::zero();
            for l in 0..k {
                aij = Expr::add(
                    aij,
                    Expr::mul(d.sigma[i * k + l].clone(), d.sigma[j * k + l].clone()),
                );
            }
            let dij = grads[i].differentiate(Variable::State(j));
            acc = Expr::add(
                acc,
                Expr::mul(Expr::constant(0.5), Expr::mul(aij, dij)),
            );
        }
    }
    acc
}
