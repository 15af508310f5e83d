//! Dense linear algebra for the small systems that arise per grid point.
//!
//! Everything here targets matrices of side `K` or `K+1` with `K <= 3`, plus
//! tridiagonal systems of grid length. Row-major `Vec<f64>` storage; no
//! external matrix crate is warranted at these sizes.

/// Row-major dense square matrix access helper.
#[inline]
fn at(a: &[f64], n: usize, i: usize, j: usize) -> f64 {
    a[i * n + j]
}

/// Determinant via LU with partial pivoting. `a` is row-major `n x n`.
pub fn determinant(a: &[f64], n: usize) -> f64 {
    debug_assert_eq!(a.len(), n * n);
    match n {
        0 => 1.0,
        1 => a[0],
        2 => a[0] * a[3] - a[1] * a[2],
        3 => {
            a[0] * (a[4] * a[8] - a[5] * a[7]) - a[1] * (a[3] * a[8] - a[5] * a[6])
                + a[2] * (a[3] * a[7] - a[4] * a[6])
        }
        _ => {
            let mut lu = a.to_vec();
            let mut det = 1.0;
            for col in 0..n {
                let mut piv = col;
                for r in col + 1..n {
                    if at(&lu, n, r, col).abs() > at(&lu, n, piv, col).abs() {
                        piv = r;
                    }
                }
                let p = at(&lu, n, piv, col);
                if p == 0.0 {
                    return 0.0;
                }
                if piv != col {
                    for j in 0..n {
                        lu.swap(col * n + j, piv * n + j);
                    }
                    det = -det;
                }
                det *= at(&lu, n, col, col);
                for r in col + 1..n {
                    let f = at(&lu, n, r, col) / at(&lu, n, col, col);
                    for j in col..n {
                        lu[r * n + j] -= f * at(&lu, n, col, j);
                    }
                }
            }
            det
        }
    }
}

/// Solve `A x = b` for dense `A` (row-major `n x n`) via Gaussian elimination
/// with partial pivoting. Returns `None` when a pivot vanishes (singular to
/// working precision).
pub fn solve(a: &[f64], b: &[f64], n: usize) -> Option<Vec<f64>> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let mut piv = col;
        for r in col + 1..n {
            if at(&m, n, r, col).abs() > at(&m, n, piv, col).abs() {
                piv = r;
            }
        }
        if at(&m, n, piv, col) == 0.0 {
            return None;
        }
        if piv != col {
            for j in 0..n {
                m.swap(col * n + j, piv * n + j);
            }
            x.swap(col, piv);
        }
        for r in col + 1..n {
            let f = at(&m, n, r, col) / at(&m, n, col, col);
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                m[r * n + j] -= f * at(&m, n, col, j);
            }
            x[r] -= f * x[col];
        }
    }
    for i in (0..n).rev() {
        let mut s = x[i];
        for j in i + 1..n {
            s -= at(&m, n, i, j) * x[j];
        }
        let d = at(&m, n, i, i);
        if d == 0.0 {
            return None;
        }
        x[i] = s / d;
    }
    if x.iter().all(|v| v.is_finite()) {
        Some(x)
    } else {
        None
    }
}

/// Matrix-vector product for row-major `n x n` `a`.
pub fn matvec(a: &[f64], x: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    debug_assert_eq!(x.len(), n);
    (0..n)
        .map(|i| (0..n).map(|j| at(a, n, i, j) * x[j]).sum())
        .collect()
}

/// `a * b` for row-major square matrices of side `n`.
pub fn matmul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let aik = at(a, n, i, k);
            if aik == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += aik * at(b, n, k, j);
            }
        }
    }
    c
}

/// Transpose of a row-major `n x n` matrix.
pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = at(a, n, i, j);
        }
    }
    t
}

/// Euclidean norm of a row of a row-major `rows x n` matrix.
pub fn row_norm(a: &[f64], n: usize, row: usize) -> f64 {
    (0..n)
        .map(|j| {
            let v = a[row * n + j];
            v * v
        })
        .sum::<f64>()
        .sqrt()
}

/// Solve a tridiagonal system in place (Thomas algorithm).
///
/// `lower[i]` multiplies `x[i-1]` in row `i` (entry 0 unused), `diag[i]`
/// multiplies `x[i]`, `upper[i]` multiplies `x[i+1]` (last entry unused).
/// `rhs` is overwritten with the solution. The scratch buffer must have the
/// same length and is clobbered.
pub fn solve_tridiagonal(
    lower: &[f64],
    diag: &[f64],
    upper: &[f64],
    rhs: &mut [f64],
    scratch: &mut [f64],
) {
    let n = diag.len();
    debug_assert!(lower.len() == n && upper.len() == n && rhs.len() == n && scratch.len() == n);
    debug_assert!(n >= 1);
    // Forward sweep: scratch holds the modified upper diagonal.
    let mut beta = diag[0];
    rhs[0] /= beta;
    scratch[0] = upper[0] / beta;
    for i in 1..n {
        beta = diag[i] - lower[i] * scratch[i - 1];
        scratch[i] = upper[i] / beta;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / beta;
    }
    // Back substitution.
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

/// Eigenvalues of a symmetric `n x n` matrix (`n <= 3`), ascending.
///
/// Used to check uniform ellipticity of the diffusion matrix `a = sigma
/// sigma^T` at sample points. Cyclic Jacobi iteration; at these sizes it
/// converges to machine precision in a handful of sweeps.
pub fn symmetric_eigenvalues(a: &[f64], n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), n * n);
    if n == 0 {
        return Vec::new();
    }
    if n == 1 {
        return vec![a[0]];
    }
    let mut m = a.to_vec();
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += at(&m, n, i, j).abs();
            }
        }
        if off < 1e-300 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = at(&m, n, p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = at(&m, n, p, p);
                let aqq = at(&m, n, q, q);
                let theta = 0.5 * (aqq - app) / apq;
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = at(&m, n, k, p);
                    let mkq = at(&m, n, k, q);
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = at(&m, n, p, k);
                    let mqk = at(&m, n, q, k);
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| at(&m, n, i, i)).collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn determinant_of_small_matrices() {
        assert_eq!(determinant(&[3.0], 1), 3.0);
        assert_eq!(determinant(&[1.0, 2.0, 3.0, 4.0], 2), -2.0);
        let a = [2.0, 0.0, 1.0, 0.0, 3.0, 0.0, 1.0, 0.0, 2.0];
        assert_abs_diff_eq!(determinant(&a, 3), 9.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_recovers_known_solution() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, -1.0, 0.5, -1.0, 5.0];
        let x_true = [1.0, -2.0, 0.5];
        let b = matvec(&a, &x_true, 3);
        let x = solve(&a, &b, 3).unwrap();
        for (xi, ti) in x.iter().zip(x_true.iter()) {
            assert_abs_diff_eq!(xi, ti, epsilon = 1e-12);
        }
    }

    #[test]
    fn solve_reports_singularity() {
        let a = [1.0, 2.0, 2.0, 4.0];
        assert!(solve(&a, &[1.0, 1.0], 2).is_none());
    }

    #[test]
    fn tridiagonal_matches_dense_solve() {
        let n = 6;
        let lower: Vec<f64> = (0..n).map(|i| if i == 0 { 0.0 } else { -1.0 + 0.1 * i as f64 }).collect();
        let diag: Vec<f64> = (0..n).map(|i| 4.0 + 0.2 * i as f64).collect();
        let upper: Vec<f64> = (0..n).map(|i| if i == n - 1 { 0.0 } else { -0.8 }).collect();
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            dense[i * n + i] = diag[i];
            if i > 0 {
                dense[i * n + i - 1] = lower[i];
            }
            if i + 1 < n {
                dense[i * n + i + 1] = upper[i];
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin() + 1.0).collect();
        let want = solve(&dense, &b, n).unwrap();
        let mut rhs = b.clone();
        let mut scratch = vec![0.0; n];
        solve_tridiagonal(&lower, &diag, &upper, &mut rhs, &mut scratch);
        for (got, want) in rhs.iter().zip(want.iter()) {
            assert_abs_diff_eq!(got, want, epsilon = 1e-12);
        }
    }

    #[test]
    fn eigenvalues_of_diagonal_and_coupled() {
        let ev = symmetric_eigenvalues(&[2.0, 0.0, 0.0, 5.0], 2);
        assert_abs_diff_eq!(ev[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 5.0, epsilon = 1e-12);
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let ev = symmetric_eigenvalues(&[2.0, 1.0, 1.0, 2.0], 2);
        assert_abs_diff_eq!(ev[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(ev[1], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn matmul_and_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [0.0, 1.0, 1.0, 0.0];
        assert_eq!(matmul(&a, &b, 2), vec![2.0, 1.0, 4.0, 3.0]);
        assert_eq!(transpose(&a, 2), vec![1.0, 3.0, 2.0, 4.0]);
    }
}
