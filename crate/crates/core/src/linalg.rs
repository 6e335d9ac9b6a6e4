//! Small dense symmetric eigen-solvers used by the frame estimator, the rigid
//! solver and the conditioning checks of the affine fit.

use crate::{Error, Mat3, Result, Vec3};

/// Eigen-decomposition of a symmetric `n x n` matrix by cyclic Jacobi rotations.
///
/// `a` is row-major. Returns eigenvalues in descending order and the matching
/// unit eigenvectors as the columns of a row-major `n x n` matrix.
pub fn jacobi_eigen(a: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(a.len(), n * n, "jacobi_eigen expects an n x n matrix");
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    if scale > 0.0 {
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in p + 1..n {
                    off += m[p * n + q] * m[p * n + q];
                }
            }
            if off.sqrt() <= 1e-17 * scale {
                break;
            }
            for p in 0..n {
                for q in p + 1..n {
                    let apq = m[p * n + q];
                    if apq == 0.0 {
                        continue;
                    }
                    let app = m[p * n + p];
                    let aqq = m[q * n + q];
                    let theta = (aqq - app) / (2.0 * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let mkp = m[k * n + p];
                        let mkq = m[k * n + q];
                        m[k * n + p] = c * mkp - s * mkq;
                        m[k * n + q] = s * mkp + c * mkq;
                    }
                    for k in 0..n {
                        let mpk = m[p * n + k];
                        let mqk = m[q * n + k];
                        m[p * n + k] = c * mpk - s * mqk;
                        m[q * n + k] = s * mpk + c * mqk;
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
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| m[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors[row * n + col] = v[row * n + src];
        }
    }
    (values, vectors)
}

/// Symmetric 3x3 eigen-decomposition: eigenvalues descending, eigenvectors as columns.
///
/// Uses the trigonometric closed form for the eigenvalues and cross products of
/// the shifted rows for the vectors, falling back to Jacobi rotations when two
/// eigenvalues are closer than `1e-10` (relative) or the closed form loses accuracy.
pub fn symmetric_eig3(m: &Mat3) -> Result<(Vec3, Mat3)> {
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * m.amax().max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    if !m.iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidInput("non-finite matrix".into()));
    }
    let m = (m + m.transpose()) * 0.5;
    let scale = m.amax();
    if scale == 0.0 {
        return Ok((Vec3::zeros(), Mat3::identity()));
    }
    if let Some(res) = closed_form_eig3(&m) {
        return Ok(res);
    }
    Ok(jacobi_eig3(&m))
}

fn jacobi_eig3(m: &Mat3) -> (Vec3, Mat3) {
    let flat: Vec<f64> = (0..9).map(|i| m[(i / 3, i % 3)]).collect();
    let (vals, vecs) = jacobi_eigen(&flat, 3);
    let values = Vec3::new(vals[0], vals[1], vals[2]);
    let mut axes = Mat3::from_row_slice(&vecs);
    for c in 0..3 {
        let n = axes.column(c).norm();
        axes.column_mut(c).unscale_mut(n);
    }
    (values, axes)
}

fn closed_form_eig3(m: &Mat3) -> Option<(Vec3, Mat3)> {
    let scale = m.amax();
    let a = m / scale;
    let q = a.trace() / 3.0;
    let p1 = a[(0, 1)].powi(2) + a[(0, 2)].powi(2) + a[(1, 2)].powi(2);
    let p2 = (a[(0, 0)] - q).powi(2) + (a[(1, 1)] - q).powi(2) + (a[(2, 2)] - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    if p < 1e-10 {
        return None;
    }
    let b = (a - Mat3::identity() * q) / p;
    let r = (b.determinant() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let l1 = q + 2.0 * p * phi.cos();
    let l3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::FRAC_PI_3).cos();
    let l2 = 3.0 * q - l1 - l3;
    let lambdas = [l1, l2, l3];
    if (l1 - l2).abs() < 1e-10 * p.max(1.0) || (l2 - l3).abs() < 1e-10 * p.max(1.0) {
        return None;
    }
    let mut axes = Mat3::zeros();
    for (c, &l) in lambdas.iter().enumerate() {
        let s = a - Mat3::identity() * l;
        let r0: Vec3 = s.row(0).transpose();
        let r1: Vec3 = s.row(1).transpose();
        let r2: Vec3 = s.row(2).transpose();
        let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
        let best = candidates
            .iter()
            .max_by(|x, y| x.norm_squared().total_cmp(&y.norm_squared()))
            .copied()?;
        let norm = best.norm();
        if norm < 1e-12 {
            return None;
        }
        axes.set_column(c, &(best / norm));
    }
    let values = Vec3::new(l1, l2, l3) * scale;
    // accept only when the decomposition is accurate
    let recon = axes * Mat3::from_diagonal(&values) * axes.transpose();
    if (recon - m).amax() > 1e-12 * scale {
        return None;
    }
    for c in 0..3 {
        let col: Vec3 = axes.column(c).into();
        if (m * col - col * values[c]).amax() > 1e-12 * scale {
            return None;
        }
    }
    Some((values, axes))
}

/// Condition number of a symmetric positive semi-definite matrix (row-major,
/// `n x n`), `inf` when the smallest eigenvalue is not positive.
pub fn spd_condition_number(a: &[f64], n: usize) -> f64 {
    let (vals, _) = jacobi_eigen(a, n);
    let max = vals[0];
    let min = vals[n - 1];
    if min <= 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(rng: &mut ChaCha8Rng) -> Mat3 {
        let m = Mat3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        m + m.transpose()
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let (vals, vecs) = symmetric_eig3(&Mat3::identity()).unwrap();
        assert_eq!(vals, Vec3::new(1.0, 1.0, 1.0));
        assert!((vecs.transpose() * vecs - Mat3::identity()).amax() < 1e-12);
    }

    #[test]
    fn diagonal_is_axis_aligned() {
        let (vals, vecs) = symmetric_eig3(&Mat3::from_diagonal(&Vec3::new(1.0, 3.0, 2.0))).unwrap();
        assert!((vals - Vec3::new(3.0, 2.0, 1.0)).amax() < 1e-12);
        assert!((vecs[(1, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((vecs[(2, 1)].abs() - 1.0).abs() < 1e-12);
        assert!((vecs[(0, 2)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..500 {
            let m = random_sym(&mut rng);
            let (vals, vecs) = symmetric_eig3(&m).unwrap();
            assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
            let recon = vecs * Mat3::from_diagonal(&vals) * vecs.transpose();
            assert!((recon - m).amax() < 1e-9, "{}", (recon - m).amax());
            for c in 0..3 {
                let v: Vec3 = vecs.column(c).into();
                assert!((v.norm() - 1.0).abs() < 1e-12);
                assert!((m * v - v * vals[c]).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn repeated_eigenvalue_uses_fallback() {
        // rank-1 update of identity: eigenvalues (3, 1, 1)
        let u = Vec3::new(1.0, 1.0, 1.0).normalize();
        let m = Mat3::identity() + u * u.transpose() * 2.0;
        let (vals, vecs) = symmetric_eig3(&m).unwrap();
        assert!((vals - Vec3::new(3.0, 1.0, 1.0)).amax() < 1e-12);
        let recon = vecs * Mat3::from_diagonal(&vals) * vecs.transpose();
        assert!((recon - m).amax() < 1e-12);
    }

    #[test]
    fn non_symmetric_is_rejected() {
        let mut m = Mat3::identity();
        m[(0, 1)] = 1.0;
        assert!(matches!(symmetric_eig3(&m), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn jacobi_4x4_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut a = vec![0.0; 16];
        for i in 0..4 {
            for j in i..4 {
                let x = rng.random_range(-1.0..1.0);
                a[i * 4 + j] = x;
                a[j * 4 + i] = x;
            }
        }
        let (vals, vecs) = jacobi_eigen(&a, 4);
        for i in 0..4 {
            for j in 0..4 {
                let r: f64 = (0..4).map(|k| vecs[i * 4 + k] * vals[k] * vecs[j * 4 + k]).sum();
                assert!((r - a[i * 4 + j]).abs() < 1e-12);
            }
        }
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn condition_number_of_diagonal() {
        let a = [4.0, 0.0, 0.0, 1.0];
        assert!((spd_condition_number(&a, 2) - 4.0).abs() < 1e-12);
        assert!(spd_condition_number(&[1.0, 0.0, 0.0, 0.0], 2).is_infinite());
    }
}
