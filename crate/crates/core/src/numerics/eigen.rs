use alloc::vec::Vec;

use crate::error::ensure;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 100;
const OFF_DIAGONAL_TOL: f64 = 1e-12;

/// Eigenpairs of a dense symmetric matrix, eigenvalues in descending order.
#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    /// `vectors[k]` is the unit eigenvector belonging to `values[k]`.
    pub vectors: Vec<Vec<f64>>,
}

/// Cyclic Jacobi eigensolver for a row-major `n × n` symmetric matrix.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<SymmetricEigen> {
    ensure!(a.len() == n * n, "matrix storage {} does not match {n}x{n}", a.len());
    if n == 0 {
        return Ok(SymmetricEigen {
            values: Vec::new(),
            vectors: Vec::new(),
        });
    }
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (a[i * n + j] - a[j * n + i]).abs();
            ensure!(
                d <= 1e-12 * scale,
                "matrix is not symmetric: |a[{i},{j}] - a[{j},{i}]| = {d:e}"
            );
        }
    }

    // Work on the symmetrized copy so rounding asymmetry cannot leak in.
    let mut m: Vec<f64> = (0..n * n)
        .map(|k| {
            let (i, j) = (k / n, k % n);
            0.5 * (a[i * n + j] + a[j * n + i])
        })
        .collect();
    let mut v = alloc::vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }

    let frob: f64 = libm::sqrt(m.iter().map(|x| x * x).sum::<f64>());
    let target = OFF_DIAGONAL_TOL * frob;
    let mut sweeps = 0;
    while off_diagonal_norm(&m, n) > target {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numeric(alloc::format!(
                "Jacobi eigensolver did not converge in {MAX_SWEEPS} sweeps (off-diagonal norm {:e})",
                off_diagonal_norm(&m, n)
            )));
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut m, &mut v, n, p, q);
            }
        }
        sweeps += 1;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));
    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| (0..n).map(|i| v[i * n + k]).collect())
        .collect();
    Ok(SymmetricEigen { values, vectors })
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut sum = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            sum += 2.0 * m[i * n + j] * m[i * n + j];
        }
    }
    libm::sqrt(sum)
}

/// One Jacobi rotation annihilating `m[p][q]`; accumulates into `v`.
fn rotate(m: &mut [f64], v: &mut [f64], n: usize, p: usize, q: usize) {
    let apq = m[p * n + q];
    if apq == 0.0 {
        return;
    }
    let app = m[p * n + p];
    let aqq = m[q * n + q];
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + libm::sqrt(theta * theta + 1.0))
    };
    let c = 1.0 / libm::sqrt(t * t + 1.0);
    let s = t * c;

    m[p * n + p] = app - t * apq;
    m[q * n + q] = aqq + t * apq;
    m[p * n + q] = 0.0;
    m[q * n + p] = 0.0;
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let akp = m[k * n + p];
        let akq = m[k * n + q];
        let new_kp = c * akp - s * akq;
        let new_kq = s * akp + c * akq;
        m[k * n + p] = new_kp;
        m[p * n + k] = new_kp;
        m[k * n + q] = new_kq;
        m[q * n + k] = new_kq;
    }
    for k in 0..n {
        let vkp = v[k * n + p];
        let vkq = v[k * n + q];
        v[k * n + p] = c * vkp - s * vkq;
        v[k * n + q] = s * vkp + c * vkq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};

    fn check_pairs(a: &[f64], n: usize, e: &SymmetricEigen) {
        let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
        for (k, vk) in e.vectors.iter().enumerate() {
            for i in 0..n {
                let av: f64 = (0..n).map(|j| a[i * n + j] * vk[j]).sum();
                assert!((av - e.values[k] * vk[i]).abs() <= 1e-9 * scale);
            }
            for (l, vl) in e.vectors.iter().enumerate() {
                let dot: f64 = vk.iter().zip(vl).map(|(x, y)| x * y).sum();
                let expect = if k == l { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expect, epsilon = 1e-10);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn identity_and_diagonal() {
        let id = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let e = symmetric_eigen(&id, 3).unwrap();
        assert_eq!(e.values, [1.0, 1.0, 1.0]);
        check_pairs(&id, 3, &e);

        let d = [3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let e = symmetric_eigen(&d, 3).unwrap();
        assert_eq!(e.values, [3.0, 2.0, 1.0]);
        check_pairs(&d, 3, &e);
    }

    #[test]
    fn two_by_two_closed_form() {
        let a = [2.0, 1.0, 1.0, 2.0];
        let e = symmetric_eigen(&a, 2).unwrap();
        assert_abs_diff_eq!(e.values[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e.values[1], 1.0, epsilon = 1e-14);
        let r = core::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(e.vectors[0][0].abs(), r, epsilon = 1e-14);
        assert_abs_diff_eq!(e.vectors[0][0], e.vectors[0][1], epsilon = 1e-14);
        assert_abs_diff_eq!(e.vectors[1][0], -e.vectors[1][1], epsilon = 1e-14);
        check_pairs(&a, 2, &e);
    }

    #[test]
    fn rejects_asymmetric() {
        let a = [1.0, 2.0, 0.0, 1.0];
        assert!(matches!(symmetric_eigen(&a, 2), Err(Error::Contract(_))));
    }

    #[test]
    fn reconstructs_random_matrices() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in [1, 5, 40, 200] {
            let mut a = alloc::vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let x: f64 = rng.gen_range(-1.0..1.0);
                    a[i * n + j] = x;
                    a[j * n + i] = x;
                }
            }
            let e = symmetric_eigen(&a, n).unwrap();
            let amax = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut err = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    let r: f64 = (0..n).map(|k| e.values[k] * e.vectors[k][i] * e.vectors[k][j]).sum();
                    err = err.max((r - a[i * n + j]).abs());
                }
            }
            assert!(err <= 1e-8 * amax, "n={n}: reconstruction error {err:e}");
            if n <= 40 {
                check_pairs(&a, n, &e);
            }
        }
    }
}
