//! Smooth uniformly convex planar domains and their concave defining functions.
//!
//! Domains are star-shaped about their radial origin by construction: the
//! boundary is `gamma(t) = center + R(t) (cos t, sin t)` with `R` a positive
//! smooth radial profile (constant disk, ellipse profile, or a finite Fourier
//! series). Uniform convexity (`curvature >= curvature_min > 0`) is validated
//! at construction and construction fails loudly when violated.
//!
//! The defining function of a domain is built from the signed interior
//! distance `d` as `h = d - (boost/2) d^2`, which vanishes on the boundary,
//! has unit boundary gradient identically, and is uniformly concave for
//! `0 < boost < 1/depth`; the concavity constant `theta` is measured over a
//! sample set at construction.

use nalgebra::{Matrix2, Vector2};
use thiserror::Error;

pub type Vec2 = Vector2<f64>;
pub type Mat2 = Matrix2<f64>;

const CURVATURE_SAMPLES: usize = 4096;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("radial profile not positive at t = {t}: R = {radius}")]
    NonPositiveRadius { t: f64, radius: f64 },
    #[error("uniform convexity violated at t = {t}: curvature = {curvature}")]
    NonConvex { t: f64, curvature: f64 },
    #[error("invalid shape parameter: {0}")]
    BadParameter(String),
    #[error("boundary projection did not converge within 50 iterations for p = ({0}, {1})")]
    ProjectionDiverged(f64, f64),
    #[error("defining function not uniformly concave (measured theta = {theta}); {hint}")]
    NotConcave { theta: f64, hint: String },
}

/// Radial boundary profile `R(t)` with two derivatives.
#[derive(Debug, Clone)]
pub enum RadialShape {
    Disk {
        radius: f64,
    },
    Ellipse {
        semi_axes: (f64, f64),
        rotation: f64,
    },
    /// `R(t) = r0 + sum_k (a_k cos k t + b_k sin k t)`, harmonics from k = 1.
    Fourier {
        r0: f64,
        harmonics: Vec<(f64, f64)>,
    },
}

impl RadialShape {
    /// `(R, R', R'')` at angle `t`.
    pub fn jet(&self, t: f64) -> (f64, f64, f64) {
        match self {
            RadialShape::Disk { radius } => (*radius, 0.0, 0.0),
            RadialShape::Ellipse {
                semi_axes: (a, b),
                rotation,
            } => {
                let phi = t - rotation;
                let (s, c) = phi.sin_cos();
                let w = b * b * c * c + a * a * s * s;
                let dw = (a * a - b * b) * (2.0 * phi).sin();
                let ddw = 2.0 * (a * a - b * b) * (2.0 * phi).cos();
                let ab = a * b;
                let r = ab / w.sqrt();
                let dr = -0.5 * ab * w.powf(-1.5) * dw;
                let ddr = 0.75 * ab * w.powf(-2.5) * dw * dw - 0.5 * ab * w.powf(-1.5) * ddw;
                (r, dr, ddr)
            }
            RadialShape::Fourier { r0, harmonics } => {
                let mut r = *r0;
                let mut dr = 0.0;
                let mut ddr = 0.0;
                for (k, (a, b)) in harmonics.iter().enumerate() {
                    let kf = (k + 1) as f64;
                    let (s, c) = (kf * t).sin_cos();
                    r += a * c + b * s;
                    dr += kf * (-a * s + b * c);
                    ddr += kf * kf * (-a * c - b * s);
                }
                (r, dr, ddr)
            }
        }
    }
}

/// Smooth uniformly convex bounded planar domain.
#[derive(Debug, Clone)]
pub struct ConvexDomain {
    /// Origin of the radial parametrization (interior star point).
    pub center: Vec2,
    pub shape: RadialShape,
    /// Region area (shoelace quadrature of the boundary).
    pub area: f64,
    /// Barycenter of the enclosed region.
    pub barycenter: Vec2,
    /// Uniform lower curvature bound attained on the boundary.
    pub curvature_min: f64,
    /// Distance from `center` to the boundary (= min R); depth scale for the
    /// defining-function boost.
    pub min_radius: f64,
}

impl ConvexDomain {
    pub fn disk(center: Vec2, radius: f64) -> Result<Self, GeometryError> {
        if radius <= 0.0 {
            return Err(GeometryError::BadParameter(format!("disk radius {radius}")));
        }
        Self::from_shape(center, RadialShape::Disk { radius })
    }

    pub fn ellipse(
        center: Vec2,
        semi_axes: (f64, f64),
        rotation: f64,
    ) -> Result<Self, GeometryError> {
        if semi_axes.0 <= 0.0 || semi_axes.1 <= 0.0 {
            return Err(GeometryError::BadParameter(format!(
                "ellipse semi-axes {semi_axes:?}"
            )));
        }
        Self::from_shape(
            center,
            RadialShape::Ellipse {
                semi_axes,
                rotation,
            },
        )
    }

    /// Fourier-perturbed radial profile; fails if the perturbation breaks
    /// positivity or uniform convexity.
    pub fn smooth_convex(
        center: Vec2,
        r0: f64,
        harmonics: Vec<(f64, f64)>,
    ) -> Result<Self, GeometryError> {
        Self::from_shape(center, RadialShape::Fourier { r0, harmonics })
    }

    fn from_shape(center: Vec2, shape: RadialShape) -> Result<Self, GeometryError> {
        let n = CURVATURE_SAMPLES;
        let mut kappa_min = f64::INFINITY;
        let mut t_min = 0.0;
        let mut min_radius = f64::INFINITY;
        let mut area = 0.0;
        let mut mx = 0.0;
        let mut my = 0.0;
        for i in 0..n {
            let t = 2.0 * std::f64::consts::PI * i as f64 / n as f64;
            let (r, dr, ddr) = shape.jet(t);
            if r <= 0.0 {
                return Err(GeometryError::NonPositiveRadius { t, radius: r });
            }
            let k = polar_curvature(r, dr, ddr);
            if k < kappa_min {
                kappa_min = k;
                t_min = t;
            }
            min_radius = min_radius.min(r);
            area += 0.5 * r * r;
            let (s, c) = t.sin_cos();
            mx += r * r * r * c / 3.0;
            my += r * r * r * s / 3.0;
        }
        let h = 2.0 * std::f64::consts::PI / n as f64;
        area *= h;
        mx *= h;
        my *= h;
        if kappa_min <= 0.0 {
            return Err(GeometryError::NonConvex {
                t: t_min,
                curvature: kappa_min,
            });
        }
        // refine the curvature minimum by golden-section around the coarse min
        let kappa_min = golden_min(
            |t| {
                let (r, dr, ddr) = shape.jet(t);
                polar_curvature(r, dr, ddr)
            },
            t_min - h,
            t_min + h,
        );
        if kappa_min <= 0.0 {
            return Err(GeometryError::NonConvex {
                t: t_min,
                curvature: kappa_min,
            });
        }
        Ok(Self {
            center,
            shape,
            area,
            barycenter: center + Vec2::new(mx / area, my / area),
            curvature_min: kappa_min,
            min_radius,
        })
    }

    /// Boundary point at parameter `t`.
    pub fn boundary_point(&self, t: f64) -> Vec2 {
        let (r, _, _) = self.shape.jet(t);
        self.center + r * Vec2::new(t.cos(), t.sin())
    }

    /// Velocity of the boundary parametrization (positively oriented).
    pub fn boundary_tangent(&self, t: f64) -> Vec2 {
        let (r, dr, _) = self.shape.jet(t);
        let (s, c) = t.sin_cos();
        Vec2::new(dr * c - r * s, dr * s + r * c)
    }

    fn boundary_accel(&self, t: f64) -> Vec2 {
        let (r, dr, ddr) = self.shape.jet(t);
        let (s, c) = t.sin_cos();
        Vec2::new((ddr - r) * c - 2.0 * dr * s, (ddr - r) * s + 2.0 * dr * c)
    }

    /// Boundary curvature at parameter `t` (positive; bounded below by
    /// `curvature_min`).
    pub fn curvature(&self, t: f64) -> f64 {
        let (r, dr, ddr) = self.shape.jet(t);
        polar_curvature(r, dr, ddr)
    }

    /// Unit inward normal at boundary parameter `t`.
    pub fn inward_normal_at(&self, t: f64) -> Vec2 {
        let g = self.boundary_tangent(t);
        Vec2::new(-g.y, g.x) / g.norm()
    }

    /// Unit inward normal at a point on (or near) the boundary.
    pub fn inward_normal(&self, q: Vec2) -> Result<Vec2, GeometryError> {
        let proj = self.project_to_boundary(q)?;
        Ok(self.inward_normal_at(proj.t))
    }

    /// Exact membership test via the radial profile (the domain is
    /// star-shaped about `center`).
    pub fn contains(&self, p: Vec2) -> bool {
        let rel = p - self.center;
        let rho = rel.norm();
        if rho == 0.0 {
            return true;
        }
        let (r, _, _) = self.shape.jet(rel.y.atan2(rel.x));
        rho < r
    }

    /// Nearest boundary point by damped-Newton multistart on the squared
    /// distance; `distance` is signed (positive inside, negative outside).
    pub fn project_to_boundary(&self, p: Vec2) -> Result<Projection, GeometryError> {
        let rel = p - self.center;
        let mut best: Option<(f64, f64)> = None; // (|p - gamma|, t)
        let mut seeds: Vec<f64> = (0..8)
            .map(|i| 2.0 * std::f64::consts::PI * i as f64 / 8.0)
            .collect();
        if rel.norm() > 1e-14 {
            seeds.push(rel.y.atan2(rel.x));
        }
        let scale = self.min_radius + rel.norm();
        let mut any_converged = false;
        for &seed in &seeds {
            let mut t = seed;
            let mut converged = false;
            for _ in 0..50 {
                let q = self.boundary_point(t);
                let tang = self.boundary_tangent(t);
                let gp = p - q;
                let f1 = -gp.dot(&tang);
                if f1.abs() <= 1e-12 * scale * scale {
                    converged = true;
                    break;
                }
                let f2 = tang.norm_squared() - gp.dot(&self.boundary_accel(t));
                if f2.abs() <= 1e-300 {
                    break;
                }
                let mut step = -f1 / f2;
                // keep the parameter step below a quarter turn
                let cap = 0.7;
                if step.abs() > cap {
                    step = cap * step.signum();
                }
                t += step;
            }
            if converged {
                any_converged = true;
                let d = (p - self.boundary_point(t)).norm();
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, t));
                }
            }
        }
        if !any_converged {
            return Err(GeometryError::ProjectionDiverged(p.x, p.y));
        }
        let (dist, t) = best.unwrap();
        let t = t.rem_euclid(2.0 * std::f64::consts::PI);
        let signed = if self.contains(p) { dist } else { -dist };
        Ok(Projection {
            point: self.boundary_point(t),
            t,
            distance: signed,
        })
    }

    /// Signed-distance jet `(d, Dd, D^2 d)` at `p`. `Dd` is the unit inward
    /// normal at the foot point; `D^2 d` has eigenvalues `0` (normal) and
    /// `-kappa/(1 - d kappa)` (tangential), nonpositive on convex domains.
    pub fn distance_jet(&self, p: Vec2) -> Result<(f64, Vec2, Mat2), GeometryError> {
        let proj = self.project_to_boundary(p)?;
        let nu = self.inward_normal_at(proj.t);
        let tg = Vec2::new(-nu.y, nu.x);
        let kappa = self.curvature(proj.t);
        let denom = 1.0 - proj.distance * kappa;
        // At the focal set the tangential curvature of d blows up; return the
        // capped one-sided value (the cancellation case is handled by the
        // defining function, which sees the product (1 - boost d)/denom).
        let tang = if denom.abs() <= 1e-12 {
            -1e12
        } else {
            -kappa / denom
        };
        Ok((proj.distance, nu, tang * tg * tg.transpose()))
    }

    /// Default quadratic boost for the defining function: half the inverse
    /// center depth, strictly inside the validity range `(0, 1/depth)`.
    pub fn default_concavity_boost(&self) -> f64 {
        0.5 / self.min_radius
    }
}

/// Result of a boundary projection.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub point: Vec2,
    /// Boundary parameter of the foot point.
    pub t: f64,
    /// Signed distance: positive inside, negative outside.
    pub distance: f64,
}

/// `Theta_0 = (|target| / |source|)^{1/n}`.
pub fn theta0(source: &ConvexDomain, target: &ConvexDomain, n: usize) -> f64 {
    (target.area / source.area).powf(1.0 / n as f64)
}

/// Value, gradient and Hessian of a defining function at one point.
#[derive(Debug, Clone, Copy)]
pub struct HJet {
    pub h: f64,
    pub grad: Vec2,
    pub hess: Mat2,
}

/// Uniformly concave defining function `h = d - (boost/2) d^2` of a convex
/// domain: positive inside, zero on the boundary, `|Dh| = 1` on the boundary,
/// `D^2 h <= -theta I` with the measured `theta > 0`.
#[derive(Debug, Clone)]
pub struct DefiningFunction {
    pub domain: ConvexDomain,
    pub boost: f64,
    /// Measured uniform concavity constant (infimum of `-xi^T D^2h xi / |xi|^2`
    /// over the construction sample set).
    pub theta: f64,
}

impl DefiningFunction {
    pub fn new(domain: ConvexDomain, boost: f64) -> Result<Self, GeometryError> {
        if boost <= 0.0 {
            return Err(GeometryError::NotConcave {
                theta: 0.0,
                hint: "concavity_boost must be positive (the distance function is flat in the normal direction)".into(),
            });
        }
        let mut theta = boost;
        // interior + boundary samples along rays from the star center
        for i in 0..=24 {
            let frac = i as f64 / 24.0;
            for j in 0..96 {
                let t = 2.0 * std::f64::consts::PI * j as f64 / 96.0;
                let p = domain.center + frac * (domain.boundary_point(t) - domain.center);
                let proj = domain.project_to_boundary(p)?;
                let kappa = domain.curvature(proj.t);
                let d = proj.distance;
                let denom = 1.0 - d * kappa;
                if denom <= 1e-9 {
                    // focal/medial point: the tangential direction is a
                    // concave kink (or the exact-cancellation disk case);
                    // only the normal direction constrains theta here
                    continue;
                }
                let g = (1.0 - boost * d) * kappa / denom;
                theta = theta.min(g);
            }
        }
        if theta <= 0.0 {
            let hint = if boost * domain.min_radius >= 1.0 {
                format!(
                    "concavity_boost = {boost} is too large (boost * depth >= 1 flips the gradient); decrease it below {}",
                    1.0 / domain.min_radius
                )
            } else {
                "increase concavity_boost".to_string()
            };
            return Err(GeometryError::NotConcave { theta, hint });
        }
        Ok(Self {
            domain,
            boost,
            theta,
        })
    }

    /// Full jet of `h` at `p` (inside, on, or moderately outside the domain).
    pub fn eval(&self, p: Vec2) -> Result<HJet, GeometryError> {
        let proj = self.domain.project_to_boundary(p)?;
        let d = proj.distance;
        let nu = self.domain.inward_normal_at(proj.t);
        let tg = Vec2::new(-nu.y, nu.x);
        let kappa = self.domain.curvature(proj.t);

        let h = d - 0.5 * self.boost * d * d;
        let hp = 1.0 - self.boost * d;
        let grad = hp * nu;

        let denom = 1.0 - d * kappa;
        let g_tang = if denom.abs() <= 1e-9 {
            if (1.0 - self.boost * d).abs() <= 1e-7 {
                // cancellation limit (boost = kappa at the focal point,
                // e.g. the disk with boost = 1/R): g -> boost
                self.boost
            } else {
                1e12f64.copysign(hp * kappa * denom)
            }
        } else {
            hp * kappa / denom
        };
        let hess = -self.boost * nu * nu.transpose() - g_tang * tg * tg.transpose();
        Ok(HJet { h, grad, hess })
    }
}

fn polar_curvature(r: f64, dr: f64, ddr: f64) -> f64 {
    (r * r + 2.0 * dr * dr - r * ddr) / (r * r + dr * dr).powf(1.5)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    fc.min(fd)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn disk_area_and_curvature() {
        let d = ConvexDomain::disk(Vec2::zeros(), 1.0).unwrap();
        assert_abs_diff_eq!(d.area, PI, epsilon = 1e-12);
        assert_abs_diff_eq!(d.curvature_min, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.barycenter.norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn ellipse_area_and_curvature() {
        let e = ConvexDomain::ellipse(Vec2::zeros(), (2.0, 1.0), 0.0).unwrap();
        assert_abs_diff_eq!(e.area, 2.0 * PI, epsilon = 1e-10);
        // flattest points: curvature b/a^2 = 1/4
        assert_abs_diff_eq!(e.curvature_min, 0.25, epsilon = 1e-9);
    }

    #[test]
    fn violent_fourier_perturbation_fails() {
        let r = ConvexDomain::smooth_convex(
            Vec2::zeros(),
            1.0,
            vec![
                (0.0, 0.0),
                (0.0, 0.0),
                (0.0, 0.0),
                (0.0, 0.0),
                (0.0, 0.0),
                (0.5, 0.0),
            ],
        );
        assert!(matches!(
            r,
            Err(GeometryError::NonConvex { .. }) | Err(GeometryError::NonPositiveRadius { .. })
        ));
    }

    #[test]
    fn mild_fourier_perturbation_ok() {
        let d = ConvexDomain::smooth_convex(Vec2::zeros(), 1.0, vec![(0.0, 0.0), (0.02, 0.01)])
            .unwrap();
        assert!(d.curvature_min > 0.0);
        assert!((d.area - PI).abs() < 0.2);
    }

    #[test]
    fn theta0_values() {
        let unit = ConvexDomain::disk(Vec2::zeros(), 1.0).unwrap();
        let two = ConvexDomain::disk(Vec2::zeros(), 2.0).unwrap();
        assert_abs_diff_eq!(theta0(&unit, &two, 2), 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(theta0(&unit, &unit, 2), 1.0, epsilon = 1e-15);
        let ell = ConvexDomain::ellipse(Vec2::zeros(), (2.0, 1.0), 0.0).unwrap();
        assert_abs_diff_eq!(theta0(&unit, &ell, 2), 2.0f64.sqrt(), epsilon = 1e-10);
        // scaling: target scaled by s multiplies theta0 by s (n = 2)
        let three = ConvexDomain::disk(Vec2::zeros(), 3.0).unwrap();
        assert_abs_diff_eq!(
            theta0(&unit, &three, 2),
            1.5 * theta0(&unit, &two, 2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn projection_examples() {
        let d = ConvexDomain::disk(Vec2::zeros(), 1.0).unwrap();
        let pr = d.project_to_boundary(Vec2::new(0.5, 0.0)).unwrap();
        assert_abs_diff_eq!(
            (pr.point - Vec2::new(1.0, 0.0)).norm(),
            0.0,
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(pr.distance, 0.5, epsilon = 1e-12);
        let nu = d.inward_normal(pr.point).unwrap();
        assert_abs_diff_eq!((nu - Vec2::new(-1.0, 0.0)).norm(), 0.0, epsilon = 1e-10);

        // ellipse center projects to the minor-axis ends
        let e = ConvexDomain::ellipse(Vec2::zeros(), (2.0, 1.0), 0.0).unwrap();
        let pr = e.project_to_boundary(Vec2::zeros()).unwrap();
        assert_abs_diff_eq!(pr.point.x.abs(), 0.0, epsilon = 1e-8);
        assert_abs_diff_eq!(pr.point.y.abs(), 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(pr.distance, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn projection_consistency_random() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        let e = ConvexDomain::ellipse(Vec2::new(0.3, -0.2), (2.0, 1.0), 0.4).unwrap();
        for _ in 0..500 {
            let t: f64 = rng.gen_range(0.0..2.0 * PI);
            let frac: f64 = rng.gen_range(0.0..0.999);
            let p = e.center + frac * (e.boundary_point(t) - e.center);
            let pr = e.project_to_boundary(p).unwrap();
            let nu = e.inward_normal_at(pr.t);
            // p = foot + distance * inward normal
            assert!(
                (p - (pr.point + pr.distance * nu)).norm() <= 1e-8,
                "p={p:?}"
            );
        }
    }

    #[test]
    fn distance_is_concave() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(18);
        let e = ConvexDomain::ellipse(Vec2::zeros(), (2.0, 1.0), 0.0).unwrap();
        for _ in 0..500 {
            let t: f64 = rng.gen_range(0.0..2.0 * PI);
            let frac: f64 = rng.gen_range(0.0..0.98);
            let p = e.center + frac * (e.boundary_point(t) - e.center);
            let (_, nu, hess) = e.distance_jet(p).unwrap();
            assert_abs_diff_eq!(nu.norm(), 1.0, epsilon = 1e-12);
            let eig = crate::linalg::eig2(&hess);
            assert!(eig.lambda_max <= 1e-6);
        }
    }

    #[test]
    fn disk_defining_function_closed_form() {
        // boost = 1/R reproduces h = (R^2 - |p|^2) / (2R)
        let r = 2.0;
        let d = ConvexDomain::disk(Vec2::zeros(), r).unwrap();
        let h = DefiningFunction::new(d, 1.0 / r).unwrap();
        assert!(h.theta > 0.0);
        for p in [Vec2::zeros(), Vec2::new(r / 2.0, 0.0), Vec2::new(0.3, -0.7)] {
            let jet = h.eval(p).unwrap();
            let exact_h = (r * r - p.norm_squared()) / (2.0 * r);
            let exact_grad = -p / r;
            assert!((jet.h - exact_h).abs() <= 1e-9 * exact_h.abs().max(1.0));
            assert!((jet.grad - exact_grad).norm() <= 1e-9);
            let exact_hess = -Mat2::identity() / r;
            assert!(
                (jet.hess - exact_hess).norm() <= 1e-6,
                "p={p:?} {:?}",
                jet.hess
            );
        }
    }

    #[test]
    fn boundary_gradient_is_unit_inward_normal() {
        let e = ConvexDomain::ellipse(Vec2::zeros(), (2.0, 1.0), 0.3).unwrap();
        let h = DefiningFunction::new(e.clone(), 0.3).unwrap();
        let mut worst = 0.0f64;
        for j in 0..512 {
            let t = 2.0 * PI * j as f64 / 512.0;
            let q = e.boundary_point(t);
            let jet = h.eval(q).unwrap();
            worst = worst.max((jet.grad.norm() - 1.0).abs());
            assert!((jet.grad - e.inward_normal_at(t)).norm() <= 1e-8);
            assert!(jet.h.abs() <= 1e-8);
        }
        assert!(worst <= 1e-8);
        // positive at the barycenter
        assert!(h.eval(e.barycenter).unwrap().h > 0.0);
    }

    #[test]
    fn ellipse_hessian_uniformly_concave() {
        let e = ConvexDomain::ellipse(Vec2::zeros(), (2.0, 1.0), 0.0).unwrap();
        let h = DefiningFunction::new(e.clone(), 0.5).unwrap();
        assert!(h.theta > 0.0);
        for i in 0..64 {
            for j in 0..64 {
                let x = -2.0 + 4.0 * (i as f64 + 0.5) / 64.0;
                let y = -1.0 + 2.0 * (j as f64 + 0.5) / 64.0;
                let p = Vec2::new(x, y);
                if !e.contains(p) {
                    continue;
                }
                let jet = h.eval(p).unwrap();
                let eig = crate::linalg::eig2(&jet.hess);
                assert!(eig.lambda_max <= -h.theta + 1e-9, "p={p:?} eig={eig:?}");
            }
        }
    }

    #[test]
    fn oversized_boost_rejected_with_hint() {
        let d = ConvexDomain::disk(Vec2::zeros(), 1.0).unwrap();
        match DefiningFunction::new(d, 2.0) {
            Err(GeometryError::NotConcave { hint, .. }) => assert!(hint.contains("decrease")),
            other => panic!("expected concavity failure, got {other:?}"),
        }
    }
}
