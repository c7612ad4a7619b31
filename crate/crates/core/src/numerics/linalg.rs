//! Symmetric eigendecomposition and PSD matrix functions.

use super::Tensor;
use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const EIGEN_CLAMP: f64 = 1e-10;

fn require_square(a: &Tensor, op: &'static str) -> Result<usize> {
    let s = a.shape();
    if s.len() == 2 && s[0] == s[1] {
        Ok(s[0])
    } else {
        Err(Error::DimensionMismatch {
            op,
            left: s.to_vec(),
            right: vec![s.first().copied().unwrap_or(0); 2],
        })
    }
}

/// Largest `|a_ij - a_ji|`.
pub fn asymmetry(a: &Tensor) -> f64 {
    let n = a.rows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    worst
}

fn check_symmetric(a: &Tensor, op: &'static str) -> Result<usize> {
    let n = require_square(a, op)?;
    let scale = a.max_abs().max(1.0);
    let asym = asymmetry(a);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(n)
}

/// Eigenvalues (ascending) and eigenvectors (as columns) of a symmetric matrix.
#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Tensor,
}

/// Cyclic Jacobi rotations on a symmetric matrix.
pub fn symmetric_eigen(a: &Tensor) -> Result<SymmetricEigen> {
    let n = check_symmetric(a, "symmetric_eigen")?;
    let mut m: Vec<f64> = a.data().to_vec();
    // symmetrize first so rotations act on an exactly symmetric matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[i * n + j] + m[j * n + i]);
            m[i * n + j] = avg;
            m[j * n + i] = avg;
        }
    }
    let mut v = Tensor::identity(n).into_data();
    let total: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j] * m[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * total.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, v[row * n + src]);
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// `V diag(f(λ)) Vᵀ`, symmetrized.
fn spectral_map(eig: &SymmetricEigen, f: impl Fn(f64) -> f64) -> Tensor {
    let n = eig.values.len();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in i..n {
            let mut s = 0.0;
            for (k, lam) in eig.values.iter().enumerate() {
                s += eig.vectors.get(i, k) * f(*lam) * eig.vectors.get(j, k);
            }
            out.set(i, j, s);
            out.set(j, i, s);
        }
    }
    out
}

/// Symmetric PSD square root. Eigenvalues within `1e-10` (relative) of zero are clamped to 0.
pub fn psd_sqrt(a: &Tensor) -> Result<Tensor> {
    let eig = symmetric_eigen(a)?;
    let scale = a.max_abs().max(1.0);
    let min = eig.values.first().copied().unwrap_or(0.0);
    if min < -EIGEN_CLAMP * scale {
        return Err(Error::NotPositiveSemidefinite(min));
    }
    let cutoff = EIGEN_CLAMP * scale;
    Ok(spectral_map(
        &eig,
        |l| if l <= cutoff { 0.0 } else { l.sqrt() },
    ))
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &Tensor) -> Result<f64> {
    Ok(symmetric_eigen(a)?.values.first().copied().unwrap_or(0.0))
}

/// Checks symmetric positive definiteness, returning the eigendecomposition.
pub fn require_pd(a: &Tensor) -> Result<SymmetricEigen> {
    let eig = symmetric_eigen(a)?;
    let min = eig.values.first().copied().unwrap_or(0.0);
    let max = eig.values.last().copied().unwrap_or(0.0);
    if min <= 1e-12 * max.abs().max(f64::MIN_POSITIVE) || min <= 0.0 {
        return Err(Error::NotPositiveDefinite(min));
    }
    Ok(eig)
}

/// Inverse square root of a symmetric positive definite matrix.
pub fn pd_inv_sqrt(a: &Tensor) -> Result<Tensor> {
    let eig = require_pd(a)?;
    Ok(spectral_map(&eig, |l| 1.0 / l.sqrt()))
}

/// Rotation by `theta` in the plane of the first two coordinates of `R^d`.
pub fn plane_rotation(d: usize, theta: f64) -> Result<Tensor> {
    if d < 2 {
        return Err(Error::invalid("rotation needs dimension >= 2"));
    }
    let mut r = Tensor::identity(d);
    let (s, c) = theta.sin_cos();
    r.set(0, 0, c);
    r.set(0, 1, -s);
    r.set(1, 0, s);
    r.set(1, 1, c);
    Ok(r)
}

pub fn trace(a: &Tensor) -> f64 {
    (0..a.rows().min(a.cols())).map(|i| a.get(i, i)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn random_matrix(rng: &mut Rng, m: usize, n: usize) -> Tensor {
        Tensor::new(vec![m, n], (0..m * n).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn sqrt_of_diagonal() {
        let b = psd_sqrt(&Tensor::diag(&[4.0, 9.0])).unwrap();
        assert!((b.get(0, 0) - 2.0).abs() < 1e-14);
        assert!((b.get(1, 1) - 3.0).abs() < 1e-14);
        assert!(b.get(0, 1).abs() < 1e-14);
    }

    #[test]
    fn sqrt_of_identity() {
        let b = psd_sqrt(&Tensor::identity(3)).unwrap();
        assert!(b.sub(&Tensor::identity(3)).unwrap().frobenius_norm() < 1e-14);
    }

    #[test]
    fn sqrt_reconstructs_gram_matrix() {
        let mut rng = Rng::new(11, 0);
        let m = random_matrix(&mut rng, 5, 5);
        let a = m.transpose().unwrap().matmul(&m).unwrap();
        let b = psd_sqrt(&a).unwrap();
        assert!(asymmetry(&b) < 1e-12);
        let err = b.matmul(&b).unwrap().sub(&a).unwrap().frobenius_norm();
        assert!(err < 1e-8, "reconstruction error {err}");
    }

    #[test]
    fn sqrt_of_projection_is_itself() {
        let mut rng = Rng::new(5, 0);
        // projection onto the column span of a random 4x2 matrix via its QR-free form P = Q Qᵀ
        let x = random_matrix(&mut rng, 4, 2);
        let xtx = x.transpose().unwrap().matmul(&x).unwrap();
        let inv_sqrt = pd_inv_sqrt(&xtx).unwrap();
        let q = x.matmul(&inv_sqrt).unwrap();
        let p = q.matmul(&q.transpose().unwrap()).unwrap();
        let s = psd_sqrt(&p).unwrap();
        assert!(s.sub(&p).unwrap().frobenius_norm() < 1e-10);
    }

    #[test]
    fn asymmetric_rejected() {
        let a = Tensor::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(psd_sqrt(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn indefinite_rejected() {
        let a = Tensor::diag(&[1.0, -1.0]);
        assert!(matches!(
            psd_sqrt(&a),
            Err(Error::NotPositiveSemidefinite(_))
        ));
    }

    #[test]
    fn tiny_negative_eigenvalue_clamped() {
        let a = Tensor::diag(&[1.0, -1e-12]);
        let b = psd_sqrt(&a).unwrap();
        assert_eq!(b.get(1, 1), 0.0);
    }

    #[test]
    fn eigenpairs_satisfy_definition() {
        let mut rng = Rng::new(2, 0);
        let m = random_matrix(&mut rng, 6, 6);
        let a = m.add(&m.transpose().unwrap()).unwrap();
        let eig = symmetric_eigen(&a).unwrap();
        for k in 0..6 {
            for i in 0..6 {
                let av: f64 = (0..6).map(|j| a.get(i, j) * eig.vectors.get(j, k)).sum();
                assert!((av - eig.values[k] * eig.vectors.get(i, k)).abs() < 1e-10);
            }
        }
        assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
    }
}
