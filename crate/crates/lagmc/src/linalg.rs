//! Small symmetric eigenproblems (2x2 closed form, 3x3 trigonometric form).

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Eigendecomposition of a symmetric 2x2 matrix.
///
/// `angle` is the direction of the eigenvector belonging to `lambda_max`, so
/// that with `v = (cos angle, sin angle)` and `w = (-sin angle, cos angle)`
/// the matrix reconstructs as `lambda_max v v^T + lambda_min w w^T`.
#[derive(Debug, Clone, Copy)]
pub struct Eig2 {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub angle: f64,
}

impl Eig2 {
    pub fn reconstruct(&self) -> Matrix2<f64> {
        let (s, c) = self.angle.sin_cos();
        let v = Vector2::new(c, s);
        let w = Vector2::new(-s, c);
        self.lambda_max * v * v.transpose() + self.lambda_min * w * w.transpose()
    }
}

/// Closed-form symmetric 2x2 eigendecomposition with a guarded discriminant
/// (the square-root argument is clamped at zero).
pub fn eig2(s: &Matrix2<f64>) -> Eig2 {
    let p = s[(0, 0)];
    let q = 0.5 * (s[(0, 1)] + s[(1, 0)]);
    let r = s[(1, 1)];
    let mean = 0.5 * (p + r);
    let disc = (0.25 * (p - r) * (p - r) + q * q).max(0.0).sqrt();
    Eig2 {
        lambda_min: mean - disc,
        lambda_max: mean + disc,
        // eigenvector of lambda_max; atan2 handles p == r and q == 0
        angle: 0.5 * f64::atan2(2.0 * q, p - r),
    }
}

/// Eigenvalues of a symmetric 3x3 matrix by the trigonometric closed form
/// (Smith's method), returned in ascending order.
pub fn eig3_values(a: &Matrix3<f64>) -> Vector3<f64> {
    let m = a.trace() / 3.0;
    let b = a - Matrix3::identity() * m;
    let q = b.determinant() / 2.0;
    let p = b.norm_squared() / 6.0;
    if p <= 0.0 {
        return Vector3::new(m, m, m);
    }
    let sp = p.sqrt();
    // cos(3 phi) = q / p^{3/2}, clamped against roundoff
    let ratio = (q / (sp * sp * sp)).clamp(-1.0, 1.0);
    let phi = ratio.acos() / 3.0;
    let l1 = m + 2.0 * sp * phi.cos();
    let l3 = m + 2.0 * sp * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let l2 = 3.0 * m - l1 - l3;
    let mut v = [l1, l2, l3];
    v.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Vector3::new(v[0], v[1], v[2])
}

/// Spectral projectors of a symmetric 3x3 matrix.
///
/// Returns `(lambdas ascending, projectors)` with `A = sum_i lambda_i P_i`.
/// Clustered eigenvalues (gap below `cluster_tol` relative to the spectral
/// radius) share one projector so the decomposition stays stable.
pub fn eig3_projectors(
    a: &Matrix3<f64>,
    cluster_tol: f64,
) -> (Vector3<f64>, Vec<(f64, Matrix3<f64>)>) {
    let lam = eig3_values(a);
    let scale = lam.amax().max(1.0);
    let id = Matrix3::identity();
    let close = |x: f64, y: f64| (x - y).abs() <= cluster_tol * scale;

    let projs = if close(lam[0], lam[2]) {
        vec![((lam[0] + lam[1] + lam[2]) / 3.0, id)]
    } else if close(lam[0], lam[1]) {
        // isolated top eigenvalue
        let p2 = (a - id * lam[0]) * (a - id * lam[1]) / ((lam[2] - lam[0]) * (lam[2] - lam[1]));
        vec![(0.5 * (lam[0] + lam[1]), id - p2), (lam[2], p2)]
    } else if close(lam[1], lam[2]) {
        let p0 = (a - id * lam[1]) * (a - id * lam[2]) / ((lam[0] - lam[1]) * (lam[0] - lam[2]));
        vec![(lam[0], p0), (0.5 * (lam[1] + lam[2]), id - p0)]
    } else {
        let p0 = (a - id * lam[1]) * (a - id * lam[2]) / ((lam[0] - lam[1]) * (lam[0] - lam[2]));
        let p1 = (a - id * lam[0]) * (a - id * lam[2]) / ((lam[1] - lam[0]) * (lam[1] - lam[2]));
        let p2 = id - p0 - p1;
        vec![(lam[0], p0), (lam[1], p1), (lam[2], p2)]
    };
    (lam, projs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eig2_identity_and_diag() {
        let e = eig2(&Matrix2::identity());
        assert_eq!(e.lambda_min, 1.0);
        assert_eq!(e.lambda_max, 1.0);
        let e = eig2(&Matrix2::new(1.0, 0.0, 0.0, 3.0));
        assert_eq!(e.lambda_min, 1.0);
        assert_eq!(e.lambda_max, 3.0);
    }

    #[test]
    fn eig2_reconstruction_and_charpoly() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100_000 {
            let p: f64 = rng.gen_range(-5.0..5.0);
            let q: f64 = rng.gen_range(-5.0..5.0);
            let r: f64 = rng.gen_range(-5.0..5.0);
            let s = Matrix2::new(p, q, q, r);
            let e = eig2(&s);
            assert!(e.lambda_min <= e.lambda_max);
            assert!((e.reconstruct() - s).amax() <= 1e-14 * (1.0 + s.amax()));
            for lam in [e.lambda_min, e.lambda_max] {
                let resid = lam * lam - s.trace() * lam + s.determinant();
                assert!(resid.abs() <= 1e-12 * (1.0 + s.amax()).powi(2));
            }
        }
    }

    #[test]
    fn eig3_matches_trace_and_det() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..1000 {
            let mut a = Matrix3::zeros();
            for i in 0..3 {
                for j in i..3 {
                    let v: f64 = rng.gen_range(-2.0..2.0);
                    a[(i, j)] = v;
                    a[(j, i)] = v;
                }
            }
            let lam = eig3_values(&a);
            assert!((lam.sum() - a.trace()).abs() <= 1e-12 * (1.0 + a.amax()));
            assert!(
                (lam[0] * lam[1] * lam[2] - a.determinant()).abs()
                    <= 1e-10 * (1.0 + a.amax()).powi(3)
            );
            let (_, projs) = eig3_projectors(&a, 1e-9);
            let rec: Matrix3<f64> = projs.iter().map(|(l, p)| p * *l).sum();
            assert!((rec - a).amax() <= 1e-9 * (1.0 + a.amax()));
        }
    }
}
