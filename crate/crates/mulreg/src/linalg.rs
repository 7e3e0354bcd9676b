//! Dense symmetric-matrix routines sized for local polynomial fits.
//!
//! Shipped experiments never exceed 6x6 matrices, so a cyclic Jacobi
//! eigenvalue iteration and an unpivoted Cholesky factorization are exact
//! enough and keep the crate dependency-free on the linear-algebra side.

/// Eigenvalues of a symmetric matrix (row-major, `dim`x`dim`), ascending.
///
/// Cyclic Jacobi rotations, driven to off-diagonal Frobenius norm below
/// `1e-12 * (1 + ||diag||)`.
pub fn symmetric_eigenvalues(matrix: &[f64], dim: usize) -> Vec<f64> {
    assert_eq!(matrix.len(), dim * dim, "matrix shape mismatch");
    let mut a = matrix.to_vec();
    let idx = |r: usize, c: usize| r * dim + c;

    let diag_norm: f64 = (0..dim).map(|i| a[idx(i, i)] * a[idx(i, i)]).sum::<f64>().sqrt();
    let tol = 1e-12 * (1.0 + diag_norm);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..dim {
            for q in (p + 1)..dim {
                off += a[idx(p, q)] * a[idx(p, q)];
            }
        }
        if (2.0 * off).sqrt() < tol {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[idx(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let app = a[idx(p, p)];
                let aqq = a[idx(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable rotation: t = sign(theta) / (|theta| + sqrt(theta^2 + 1)).
                let t = if theta >= 0.0 {
                    1.0 / (theta + (theta * theta + 1.0).sqrt())
                } else {
                    -1.0 / (-theta + (theta * theta + 1.0).sqrt())
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..dim {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    a[idx(k, p)] = new_kp;
                    a[idx(p, k)] = new_kp;
                    a[idx(k, q)] = new_kq;
                    a[idx(q, k)] = new_kq;
                }
                a[idx(p, p)] = app - t * apq;
                a[idx(q, q)] = aqq + t * apq;
                a[idx(p, q)] = 0.0;
                a[idx(q, p)] = 0.0;
            }
        }
    }

    let mut eig: Vec<f64> = (0..dim).map(|i| a[idx(i, i)]).collect();
    eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
    eig
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn smallest_eigenvalue(matrix: &[f64], dim: usize) -> f64 {
    symmetric_eigenvalues(matrix, dim)[0]
}

/// Solve `A x = b` for symmetric positive definite `A` via Cholesky.
///
/// Returns `None` when a pivot drops to zero or below (not positive definite).
pub fn cholesky_solve(matrix: &[f64], rhs: &[f64], dim: usize) -> Option<Vec<f64>> {
    assert_eq!(matrix.len(), dim * dim);
    assert_eq!(rhs.len(), dim);
    let idx = |r: usize, c: usize| r * dim + c;

    // Lower-triangular factor, in place over a copy.
    let mut l = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..=i {
            let mut sum = matrix[idx(i, j)];
            for k in 0..j {
                sum -= l[idx(i, k)] * l[idx(j, k)];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[idx(i, j)] = sum.sqrt();
            } else {
                l[idx(i, j)] = sum / l[idx(j, j)];
            }
        }
    }

    // Forward then back substitution.
    let mut y = vec![0.0; dim];
    for i in 0..dim {
        let mut sum = rhs[i];
        for k in 0..i {
            sum -= l[idx(i, k)] * y[k];
        }
        y[i] = sum / l[idx(i, i)];
    }
    let mut x = vec![0.0; dim];
    for i in (0..dim).rev() {
        let mut sum = y[i];
        for k in (i + 1)..dim {
            sum -= l[idx(k, i)] * x[k];
        }
        x[i] = sum / l[idx(i, i)];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigenvalues_of_diagonal() {
        let m = [3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let eig = symmetric_eigenvalues(&m, 3);
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 2.0).abs() < 1e-12);
        assert!((eig[2] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigenvalues_of_2x2() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let m = [2.0, 1.0, 1.0, 2.0];
        let eig = symmetric_eigenvalues(&m, 2);
        assert!((eig[0] - 1.0).abs() < 1e-12);
        assert!((eig[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_solves_spd_system() {
        let m = [4.0, 1.0, 1.0, 3.0];
        let b = [1.0, 2.0];
        let x = cholesky_solve(&m, &b, 2).unwrap();
        assert!((4.0 * x[0] + x[1] - 1.0).abs() < 1e-12);
        assert!((x[0] + 3.0 * x[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let m = [1.0, 2.0, 2.0, 1.0];
        assert!(cholesky_solve(&m, &[1.0, 1.0], 2).is_none());
    }
}
