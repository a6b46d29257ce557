//! The operator family `F_tau` on Hessian eigenvalues, its derivatives,
//! limits, structure-condition bounds and Legendre dual.
//!
//! For `tau` in `(0, pi/2]` the operator is a sum of one scalar function over
//! the eigenvalues,
//!
//! ```text
//! F_tau(lambda) = sum_i phi_tau(lambda_i),
//!
//!                 | -(s/(2b)) * ln((l+a+b)/(l+a-b))   0 < tau < pi/4
//! phi_tau(l)   =  | -sqrt(2)/(1+l)                    tau = pi/4
//!                 | -(s/b) * arctan(b/(l+a))          pi/4 < tau < pi/2
//!                 | arctan(l)                         tau = pi/2
//! ```
//!
//! with `a = cot tau`, `b = sqrt(|cot^2 tau - 1|)`, `s = sqrt(a^2+1)`.
//!
//! The first and third branch are evaluated through `artanh(b/(l+a))` and
//! `arctan(b/(l+a))`, which stay well conditioned as `b -> 0`; both tend to
//! the harmonic-mean branch at `tau = pi/4`, so the family is continuous in
//! `tau` across the seam. For the arctan-quotient branch this normalizes the
//! textbook form by the constant `pi*s/(4b)` per eigenvalue; the constant is
//! absorbed by the additive unknown `c` of the boundary value problem and all
//! derivatives are unchanged.
//!
//! An experimental `log det` branch (`tau = 0`) is available only through an
//! explicit constructor; it violates the finite-limit structure condition and
//! is excluded from every certified code path.

use nalgebra::{DMatrix, Matrix2, Matrix3};
use serde::Serialize;
use thiserror::Error;

use crate::linalg::{eig2, eig3_projectors};

/// Half of the seam window around `pi/4` (and around `pi/2`) inside which the
/// exact-form branch is selected instead of the nearly degenerate quotient
/// forms.
pub const SEAM_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("tau = {0} outside the admissible range (0, pi/2]")]
    TauOutOfRange(f64),
    #[error("eigenvalue {value} at index {index} outside the operator domain (Gamma+ closure)")]
    SpectrumOutOfDomain { index: usize, value: f64 },
    #[error("matrix not positive definite: minimum eigenvalue {0}")]
    NotPositiveDefinite(f64),
    #[error("dimension {0} unsupported (matrix operators implemented for n <= 3)")]
    UnsupportedDimension(usize),
}

/// Branch of the operator family, uniquely determined by `tau`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// `0 < tau < pi/4`: logarithmic quotient.
    LogQuotient,
    /// `tau = pi/4`: harmonic-mean form `-sqrt(2)/(1+lambda)`.
    Harmonic,
    /// `pi/4 < tau < pi/2`: arctan quotient.
    ArctanQuotient,
    /// `tau = pi/2`: `arctan(lambda)` (special Lagrangian).
    Arctan,
    /// `tau = 0`: `(1/n) sum ln lambda_i` (log det). Experimental; never
    /// selected implicitly and excluded from certified runs.
    ExperimentalLogDet,
}

/// Descriptor of one member of the operator family.
///
/// `a = cot tau` and `b = sqrt(|cot^2 tau - 1|)` are stored as computed from
/// `tau`; the `Harmonic` and `Arctan` branches use their exact closed forms
/// and do not read them.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OperatorParams {
    pub tau: f64,
    pub a: f64,
    pub b: f64,
    pub branch: Branch,
}

impl OperatorParams {
    /// Selects the branch from `tau` in `(0, pi/2]`.
    ///
    /// Rounding rule: `tau` within `SEAM_TOL` of `pi/4` uses the `Harmonic`
    /// branch (the quotient forms are 0/0 there) and within `SEAM_TOL` of
    /// `pi/2` uses the `Arctan` branch. The experimental `tau = 0` branch is
    /// never selected here.
    pub fn new(tau: f64) -> Result<Self, OperatorError> {
        use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
        if !(tau > 0.0 && tau <= FRAC_PI_2 + SEAM_TOL) {
            return Err(OperatorError::TauOutOfRange(tau));
        }
        let branch = if (tau - FRAC_PI_4).abs() <= SEAM_TOL {
            Branch::Harmonic
        } else if (tau - FRAC_PI_2).abs() <= SEAM_TOL {
            Branch::Arctan
        } else if tau < FRAC_PI_4 {
            Branch::LogQuotient
        } else {
            Branch::ArctanQuotient
        };
        let (sin, cos) = (tau.sin(), tau.cos());
        let a = cos / sin;
        // cot^2 - 1 = cos(2 tau) / sin^2(tau)
        let b = ((2.0 * tau).cos().abs() / (sin * sin)).sqrt();
        Ok(Self { tau, a, b, branch })
    }

    /// Explicit constructor of the experimental `tau = 0` (log det) branch.
    pub fn experimental_log_det() -> Self {
        Self {
            tau: 0.0,
            a: f64::INFINITY,
            b: f64::INFINITY,
            branch: Branch::ExperimentalLogDet,
        }
    }

    /// `sqrt(a^2 + 1) = 1 / sin(tau)`.
    fn sqrt_a2p1(&self) -> f64 {
        1.0 / self.tau.sin()
    }

    fn check_lambda(&self, index: usize, lam: f64) -> Result<(), OperatorError> {
        let bad = if self.branch == Branch::ExperimentalLogDet {
            lam <= 0.0
        } else {
            lam < 0.0
        };
        if bad || !lam.is_finite() {
            return Err(OperatorError::SpectrumOutOfDomain { index, value: lam });
        }
        Ok(())
    }
}

/// A point of the (closed) positive cone: Hessian eigenvalues.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumPoint {
    pub lambdas: Vec<f64>,
}

impl SpectrumPoint {
    pub fn new(lambdas: Vec<f64>) -> Self {
        Self { lambdas }
    }

    pub fn dim(&self) -> usize {
        self.lambdas.len()
    }

    /// Strict membership in the open cone `Gamma+`.
    pub fn in_open_cone(&self) -> bool {
        self.lambdas.iter().all(|&l| l > 0.0 && l.is_finite())
    }
}

/// Uniform bounds for the structure conditions on a truncated cone
/// `Gamma+_{]s1,s2[}`: `lambda1 <= sum dF/dlambda_i <= lambda2` and
/// `lambda1 <= sum dF/dlambda_i lambda_i^2 <= lambda2`.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct StructureBounds {
    pub lambda1: f64,
    pub lambda2: f64,
    pub s1: f64,
    pub s2: f64,
    /// Interval of `sum dF/dlambda_i` (depends on `s1`).
    pub grad_sum: (f64, f64),
    /// Interval of `sum dF/dlambda_i lambda_i^2` (depends on `s2`).
    pub grad_lambda_sq_sum: (f64, f64),
}

/// Per-eigenvalue summand of `F_tau`. `lam >= 0` is accepted (closed-cone
/// limit evaluation); negative `lam` is a domain error.
pub fn scalar_phi(params: &OperatorParams, lam: f64) -> Result<f64, OperatorError> {
    params.check_lambda(0, lam)?;
    Ok(phi_unchecked(params, lam))
}

pub(crate) fn phi_unchecked(params: &OperatorParams, lam: f64) -> f64 {
    match params.branch {
        Branch::LogQuotient => {
            let s = params.sqrt_a2p1();
            -(s / params.b) * f64::atanh(params.b / (lam + params.a))
        }
        Branch::Harmonic => -std::f64::consts::SQRT_2 / (1.0 + lam),
        Branch::ArctanQuotient => {
            let s = params.sqrt_a2p1();
            -(s / params.b) * f64::atan(params.b / (lam + params.a))
        }
        Branch::Arctan => lam.atan(),
        Branch::ExperimentalLogDet => lam.ln(),
    }
}

/// `d phi / d lambda`, strictly positive on the closed cone.
pub(crate) fn dphi_unchecked(params: &OperatorParams, lam: f64) -> f64 {
    match params.branch {
        Branch::LogQuotient => {
            let s = params.sqrt_a2p1();
            let x = lam + params.a;
            s / (x * x - params.b * params.b)
        }
        Branch::Harmonic => std::f64::consts::SQRT_2 / ((1.0 + lam) * (1.0 + lam)),
        Branch::ArctanQuotient => {
            let s = params.sqrt_a2p1();
            let x = lam + params.a;
            s / (x * x + params.b * params.b)
        }
        Branch::Arctan => 1.0 / (1.0 + lam * lam),
        Branch::ExperimentalLogDet => 1.0 / lam,
    }
}

/// `d^2 phi / d lambda^2`, nonpositive on the closed cone.
pub(crate) fn d2phi_unchecked(params: &OperatorParams, lam: f64) -> f64 {
    match params.branch {
        Branch::LogQuotient => {
            let s = params.sqrt_a2p1();
            let x = lam + params.a;
            let d = x * x - params.b * params.b;
            -2.0 * s * x / (d * d)
        }
        Branch::Harmonic => {
            let d = 1.0 + lam;
            -2.0 * std::f64::consts::SQRT_2 / (d * d * d)
        }
        Branch::ArctanQuotient => {
            let s = params.sqrt_a2p1();
            let x = lam + params.a;
            let d = x * x + params.b * params.b;
            -2.0 * s * x / (d * d)
        }
        Branch::Arctan => {
            let d = 1.0 + lam * lam;
            -2.0 * lam / (d * d)
        }
        Branch::ExperimentalLogDet => -1.0 / (lam * lam),
    }
}

/// Limit of `phi` as `lambda -> +infinity` (closed form; no floating-point
/// infinity arithmetic).
pub(crate) fn phi_at_infinity(params: &OperatorParams) -> f64 {
    match params.branch {
        Branch::LogQuotient | Branch::Harmonic | Branch::ArctanQuotient => 0.0,
        Branch::Arctan => std::f64::consts::FRAC_PI_2,
        Branch::ExperimentalLogDet => f64::INFINITY,
    }
}

/// `F_tau(lambda) = sum_i phi(lambda_i)`, symmetric in the entries.
///
/// For the experimental log-det branch the sum is scaled by `1/n`.
pub fn eval_f(params: &OperatorParams, point: &SpectrumPoint) -> Result<f64, OperatorError> {
    let mut sum = 0.0;
    for (i, &l) in point.lambdas.iter().enumerate() {
        params.check_lambda(i, l)?;
        sum += phi_unchecked(params, l);
    }
    if params.branch == Branch::ExperimentalLogDet {
        sum /= point.dim() as f64;
    }
    Ok(sum)
}

/// Componentwise `dF/dlambda_i`; strictly positive (monotonicity).
pub fn grad_f(params: &OperatorParams, point: &SpectrumPoint) -> Result<Vec<f64>, OperatorError> {
    let scale = if params.branch == Branch::ExperimentalLogDet {
        1.0 / point.dim() as f64
    } else {
        1.0
    };
    point
        .lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            params.check_lambda(i, l)?;
            Ok(scale * dphi_unchecked(params, l))
        })
        .collect()
}

/// Diagonal of the eigenvalue Hessian `d^2 F / dlambda_i dlambda_j`;
/// off-diagonal entries vanish identically for this family and are not stored.
pub fn hess_f_diag(
    params: &OperatorParams,
    point: &SpectrumPoint,
) -> Result<Vec<f64>, OperatorError> {
    let scale = if params.branch == Branch::ExperimentalLogDet {
        1.0 / point.dim() as f64
    } else {
        1.0
    };
    point
        .lambdas
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            params.check_lambda(i, l)?;
            Ok(scale * d2phi_unchecked(params, l))
        })
        .collect()
}

/// Closed-form limits `(F(0,...,0), F(+inf,...,+inf))` for dimension `n`.
///
/// They satisfy `-inf < F(0) < F(+inf) < +inf` for every `tau` in `(0, pi/2]`;
/// the experimental log-det branch returns infinite limits.
pub fn limits(params: &OperatorParams, n: usize) -> (f64, f64) {
    if params.branch == Branch::ExperimentalLogDet {
        return (f64::NEG_INFINITY, f64::INFINITY);
    }
    let nf = n as f64;
    (
        nf * phi_unchecked(params, 0.0),
        nf * phi_at_infinity(params),
    )
}

/// Interval of `sum_i dF/dlambda_i` over the truncated cone (lower endpoint
/// from the eigenvalue pinned below `s1`, upper endpoint `n * phi'(0)`).
pub fn grad_sum_interval(params: &OperatorParams, n: usize, s1: f64) -> (f64, f64) {
    (
        dphi_unchecked(params, s1),
        n as f64 * dphi_unchecked(params, 0.0),
    )
}

/// Interval of `sum_i dF/dlambda_i lambda_i^2` over the truncated cone
/// (lower endpoint from the eigenvalue pinned above `s2`, upper endpoint
/// `n * lim lambda^2 phi'(lambda)`).
pub fn grad_lambda_sq_sum_interval(params: &OperatorParams, n: usize, s2: f64) -> (f64, f64) {
    // lambda^2 phi'(lambda) -> sqrt(a^2+1) (quotient branches, and the
    // harmonic/arctan special cases agree with it).
    let at_inf = match params.branch {
        Branch::Arctan => 1.0,
        Branch::Harmonic => std::f64::consts::SQRT_2,
        Branch::LogQuotient | Branch::ArctanQuotient => params.sqrt_a2p1(),
        Branch::ExperimentalLogDet => f64::INFINITY,
    };
    let low = if s2.is_infinite() {
        at_inf
    } else {
        s2 * s2 * dphi_unchecked(params, s2)
    };
    (low, n as f64 * at_inf)
}

/// Combined structure bounds: `lambda1` is the smaller of the two interval
/// lower endpoints, `lambda2` the larger of the two upper endpoints, so both
/// sandwich conditions hold on `Gamma+_{]s1,s2[}`.
///
/// `s1 = 0` and `s2 = +inf` are accepted as limit endpoints.
pub fn range_bounds(params: &OperatorParams, n: usize, s1: f64, s2: f64) -> StructureBounds {
    let grad_sum = grad_sum_interval(params, n, s1);
    let grad_lambda_sq_sum = grad_lambda_sq_sum_interval(params, n, s2);
    StructureBounds {
        lambda1: grad_sum.0.min(grad_lambda_sq_sum.0),
        lambda2: grad_sum.1.max(grad_lambda_sq_sum.1),
        s1,
        s2,
        grad_sum,
        grad_lambda_sq_sum,
    }
}

/// Largest admissible oscillation of the right-hand side,
/// `min{F(+inf,..) - F(theta0,+inf,..), F(0,..,theta0) - F(0,..)}`,
/// which collapses to `min{phi(inf) - phi(theta0), phi(theta0) - phi(0)}`.
pub fn delta_max(params: &OperatorParams, theta0: f64, _n: usize) -> f64 {
    let phi_t = phi_unchecked(params, theta0);
    (phi_at_infinity(params) - phi_t).min(phi_t - phi_unchecked(params, 0.0))
}

/// Legendre-dual operator value `F~(mu) = -F(1/mu)`.
pub fn dual_eval(params: &OperatorParams, mus: &SpectrumPoint) -> Result<f64, OperatorError> {
    for (i, &m) in mus.lambdas.iter().enumerate() {
        if !m.is_finite() || m <= 0.0 {
            return Err(OperatorError::SpectrumOutOfDomain { index: i, value: m });
        }
    }
    let recip = SpectrumPoint::new(mus.lambdas.iter().map(|&m| 1.0 / m).collect());
    Ok(-eval_f(params, &recip)?)
}

/// Dual gradient `dF~/dmu_i = lambda_i^2 dF/dlambda_i` with `lambda = 1/mu`.
pub fn dual_grad(params: &OperatorParams, mus: &SpectrumPoint) -> Result<Vec<f64>, OperatorError> {
    let scale = if params.branch == Branch::ExperimentalLogDet {
        1.0 / mus.dim() as f64
    } else {
        1.0
    };
    mus.lambdas
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if !m.is_finite() || m <= 0.0 {
                return Err(OperatorError::SpectrumOutOfDomain { index: i, value: m });
            }
            let lam = 1.0 / m;
            Ok(scale * lam * lam * dphi_unchecked(params, lam))
        })
        .collect()
}

/// Diagonal of the dual Hessian, `d^2F~/dmu_i^2 = -lambda^3 (lambda phi'' + 2 phi')`;
/// nonpositive on the cone for every branch.
pub fn dual_hess_diag(
    params: &OperatorParams,
    mus: &SpectrumPoint,
) -> Result<Vec<f64>, OperatorError> {
    let scale = if params.branch == Branch::ExperimentalLogDet {
        1.0 / mus.dim() as f64
    } else {
        1.0
    };
    mus.lambdas
        .iter()
        .enumerate()
        .map(|(i, &m)| {
            if !m.is_finite() || m <= 0.0 {
                return Err(OperatorError::SpectrumOutOfDomain { index: i, value: m });
            }
            let lam = 1.0 / m;
            let l3 = lam * lam * lam;
            Ok(scale
                * (-l3 * (lam * d2phi_unchecked(params, lam) + 2.0 * dphi_unchecked(params, lam))))
        })
        .collect()
}

/// Eigenvalues of a symmetric matrix `A` (ascending), dimensions `1..=3`.
pub fn sym_eigenvalues(a: &DMatrix<f64>) -> Result<Vec<f64>, OperatorError> {
    match a.nrows() {
        1 => Ok(vec![a[(0, 0)]]),
        2 => {
            let e = eig2(&Matrix2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]));
            Ok(vec![e.lambda_min, e.lambda_max])
        }
        3 => {
            let m = Matrix3::from_fn(|i, j| a[(i, j)]);
            let lam = crate::linalg::eig3_values(&m);
            Ok(vec![lam[0], lam[1], lam[2]])
        }
        n => Err(OperatorError::UnsupportedDimension(n)),
    }
}

/// `F[A] = F(lambda(A))` for a symmetric positive definite matrix.
pub fn eval_f_matrix(params: &OperatorParams, a: &DMatrix<f64>) -> Result<f64, OperatorError> {
    let lam = sym_eigenvalues(a)?;
    if lam[0] <= 0.0 {
        return Err(OperatorError::NotPositiveDefinite(lam[0]));
    }
    eval_f(params, &SpectrumPoint::new(lam))
}

/// Matrix derivative `F^{ij} = dF/da_ij = Q diag(phi'(lambda)) Q^T`,
/// symmetric positive definite.
pub fn df_matrix(params: &OperatorParams, a: &DMatrix<f64>) -> Result<DMatrix<f64>, OperatorError> {
    let lam = sym_eigenvalues(a)?;
    if lam[0] <= 0.0 {
        return Err(OperatorError::NotPositiveDefinite(lam[0]));
    }
    let scale = if params.branch == Branch::ExperimentalLogDet {
        1.0 / a.nrows() as f64
    } else {
        1.0
    };
    match a.nrows() {
        1 => Ok(DMatrix::from_element(
            1,
            1,
            scale * dphi_unchecked(params, a[(0, 0)]),
        )),
        2 => {
            let m = dphi_matrix2(
                params,
                &Matrix2::new(a[(0, 0)], a[(0, 1)], a[(1, 0)], a[(1, 1)]),
            );
            Ok(DMatrix::from_fn(2, 2, |i, j| scale * m[(i, j)]))
        }
        3 => {
            let m3 = Matrix3::from_fn(|i, j| a[(i, j)]);
            let (_, projs) = eig3_projectors(&m3, 1e-9);
            let mut out = Matrix3::zeros();
            for (l, p) in &projs {
                out += p * dphi_unchecked(params, *l);
            }
            Ok(DMatrix::from_fn(3, 3, |i, j| scale * out[(i, j)]))
        }
        n => Err(OperatorError::UnsupportedDimension(n)),
    }
}

/// 2x2 fast path of `df_matrix` used by the solver inner loop (no checks).
pub(crate) fn dphi_matrix2(params: &OperatorParams, a: &Matrix2<f64>) -> Matrix2<f64> {
    let e = eig2(a);
    let (s, c) = e.angle.sin_cos();
    let v = nalgebra::Vector2::new(c, s);
    let w = nalgebra::Vector2::new(-s, c);
    dphi_unchecked(params, e.lambda_max) * v * v.transpose()
        + dphi_unchecked(params, e.lambda_min) * w * w.transpose()
}
