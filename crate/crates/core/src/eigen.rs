//! Dense symmetric eigendecomposition via cyclic Jacobi rotations.
//!
//! Graph Laplacians here are small (n <= ~200) and exactly symmetric, so a
//! dependency-free Jacobi solver is enough and keeps results bit-for-bit
//! deterministic across platforms: fixed sweep order, fixed sign convention,
//! eigenvalues sorted ascending with a stable permutation.

use ndarray::Array2;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EigenError {
    #[error("matrix is not square: {0} x {1}")]
    NotSquare(usize, usize),
    #[error("matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("non-finite entry at ({0}, {1})")]
    NonFinite(usize, usize),
    #[error("jacobi rotations did not converge within {0} sweeps")]
    NoConvergence(usize),
}

/// Eigenpairs of a symmetric matrix. `vectors` column `k` pairs with
/// `values[k]`; columns are orthonormal and sign-normalized so the first
/// component of absolute value above 1e-12 is positive.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Vec<f64>,
    pub vectors: Array2<f64>,
}

const MAX_SWEEPS: usize = 100;
/// Relative off-diagonal Frobenius tolerance for convergence.
const OFF_TOL: f64 = 1e-12;
const SYM_TOL: f64 = 1e-9;

/// Full eigendecomposition of a symmetric matrix.
///
/// Runs cyclic-by-row Jacobi sweeps until the off-diagonal Frobenius norm
/// drops below `1e-12` times the initial Frobenius norm.
pub fn sym_eigen(a: &Array2<f64>) -> Result<SymEigen, EigenError> {
    let (rows, cols) = a.dim();
    if rows != cols {
        return Err(EigenError::NotSquare(rows, cols));
    }
    let n = rows;
    for i in 0..n {
        for j in 0..n {
            if !a[[i, j]].is_finite() {
                return Err(EigenError::NonFinite(i, j));
            }
        }
    }
    let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[[i, j]] - a[[j, i]]).abs() > SYM_TOL * scale.max(1.0) {
                return Err(EigenError::NotSymmetric(i, j));
            }
        }
    }
    if n == 0 {
        return Ok(SymEigen { values: Vec::new(), vectors: Array2::zeros((0, 0)) });
    }

    // Work on a symmetrized copy so tiny input asymmetry cannot leak through.
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = avg;
            m[[j, i]] = avg;
        }
    }
    let mut v: Array2<f64> = Array2::eye(n);
    let tol = OFF_TOL * scale.max(f64::MIN_POSITIVE);

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        if off_norm(&m) <= tol {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let app = m[[p, p]];
                let aqq = m[[q, q]];
                // Rotation angle choice keeps |theta| <= pi/4 for stability.
                let tau = (aqq - app) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
                // Pin the rotated pair exactly; roundoff otherwise lingers.
                m[[p, q]] = 0.0;
                m[[q, p]] = 0.0;

                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_norm(&m) > tol {
        return Err(EigenError::NoConvergence(MAX_SWEEPS));
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort: equal eigenvalues keep their sweep order, so the
    // decomposition is a deterministic function of the input.
    order.sort_by(|&i, &j| m[[i, i]].partial_cmp(&m[[j, j]]).expect("finite eigenvalues"));

    let values: Vec<f64> = order.iter().map(|&i| m[[i, i]]).collect();
    let mut vectors = Array2::zeros((n, n));
    for (new, &old) in order.iter().enumerate() {
        let mut sign = 1.0;
        for k in 0..n {
            let x = v[[k, old]];
            if x.abs() > 1e-12 {
                sign = if x > 0.0 { 1.0 } else { -1.0 };
                break;
            }
        }
        for k in 0..n {
            vectors[[k, new]] = sign * v[[k, old]];
        }
    }
    Ok(SymEigen { values, vectors })
}

fn off_norm(m: &Array2<f64>) -> f64 {
    let n = m.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += m[[i, j]] * m[[i, j]];
            }
        }
    }
    s.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::prelude::*;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn path3_laplacian_has_known_spectrum() {
        let l = array![[1.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 1.0]];
        let e = sym_eigen(&l).unwrap();
        assert_abs_diff_eq!(e.values[0], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(e.values[2], 3.0, epsilon = 1e-10);
        // Fiedler direction of the path is (1, 0, -1)/sqrt(2) up to sign;
        // the sign convention makes the first nonzero component positive.
        let s = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(e.vectors[[0, 1]], s, epsilon = 1e-10);
        assert_abs_diff_eq!(e.vectors[[1, 1]], 0.0, epsilon = 1e-10);
        assert_abs_diff_eq!(e.vectors[[2, 1]], -s, epsilon = 1e-10);
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            sym_eigen(&Array2::zeros((2, 3))),
            Err(EigenError::NotSquare(2, 3))
        ));
        let m = array![[0.0, 1.0], [2.0, 0.0]];
        assert!(matches!(sym_eigen(&m), Err(EigenError::NotSymmetric(0, 1))));
        let m = array![[f64::NAN, 0.0], [0.0, 1.0]];
        assert!(matches!(sym_eigen(&m), Err(EigenError::NonFinite(0, 0))));
    }

    #[test]
    fn empty_and_single_entry() {
        let e = sym_eigen(&Array2::zeros((0, 0))).unwrap();
        assert!(e.values.is_empty());
        let e = sym_eigen(&array![[3.5]]).unwrap();
        assert_eq!(e.values, vec![3.5]);
        assert_eq!(e.vectors[[0, 0]], 1.0);
    }

    fn random_symmetric(n: usize, rng: &mut impl Rng) -> Array2<f64> {
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in i..n {
                let x: f64 = rng.random_range(-5.0..5.0);
                m[[i, j]] = x;
                m[[j, i]] = x;
            }
        }
        m
    }

    /// Cross-check against an independently implemented solver on random
    /// inputs: eigenvalues agree, residuals vanish, basis is orthonormal.
    #[test]
    fn agrees_with_reference_solver_on_random_matrices() {
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        for trial in 0..60 {
            let n = 1 + (trial % 12);
            let m = random_symmetric(n, &mut rng);
            let ours = sym_eigen(&m).unwrap();

            let na = nalgebra::DMatrix::from_fn(n, n, |i, j| m[[i, j]]);
            let mut reference: Vec<f64> = na.symmetric_eigen().eigenvalues.iter().copied().collect();
            reference.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (k, &want) in reference.iter().enumerate() {
                assert_abs_diff_eq!(ours.values[k], want, epsilon = 1e-8);
            }

            // Residual A v = lambda v and orthonormality.
            for k in 0..n {
                let v = ours.vectors.column(k);
                let av = m.dot(&v);
                for i in 0..n {
                    assert_abs_diff_eq!(av[i], ours.values[k] * v[i], epsilon = 1e-8);
                }
                for k2 in 0..n {
                    let dot: f64 = ours.vectors.column(k2).dot(&v);
                    let want = if k2 == k { 1.0 } else { 0.0 };
                    assert_abs_diff_eq!(dot, want, epsilon = 1e-9);
                }
            }
        }
    }

    #[test]
    fn deterministic_across_calls() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let m = random_symmetric(9, &mut rng);
        let a = sym_eigen(&m).unwrap();
        let b = sym_eigen(&m).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(a.vectors, b.vectors);
    }
}
