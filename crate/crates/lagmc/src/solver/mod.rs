//! Damped Newton inside a homotopy loop for the discretized second boundary
//! value problem
//!
//! ```text
//! F_tau[D^2 u] = t f(x) + c   at interior nodes,
//! h(Du) = 0                   at boundary nodes,
//! mean(u) = 0,
//! ```
//!
//! with unknowns `(u, c)`. The homotopy advances `t` from the solvable `t = 0`
//! problem to `t = 1` with adaptive steps, warm-starting each stage. Every
//! accepted iterate stays uniformly convex (node Hessian eigenvalues above
//! `eps_pos`); steps that would leave the cone are rejected by the line
//! search. The dual problem on the target domain is solved by the same
//! machinery with the reciprocal-spectrum operator and the gradient-composed
//! right-hand side.

mod linsys;

pub use linsys::LinSysError;

use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::geometry::{ConvexDomain, DefiningFunction, GeometryError, Mat2, Vec2};
use crate::grid::{GridError, MappedGrid, ScalarField};
use crate::linalg::eig2;
use crate::operators::{
    d2phi_unchecked, dphi_matrix2, dphi_unchecked, limits, phi_unchecked, OperatorError,
    OperatorParams,
};
use linsys::BlockArrowMatrix;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("right-hand side rejected: {0}")]
    Inadmissible(String),
    #[error("convexity breakdown at node {node} (min eigenvalue {min_eig:.3e}) at t = {t}; |kappa| likely exceeds the solvable range")]
    ConvexityBreakdown { node: usize, min_eig: f64, t: f64 },
    #[error("continuity path failure: homotopy step underflow, last good t = {last_good_t}")]
    PathFailure { last_good_t: f64 },
    #[error("Newton stagnated at t = {t}: residual {residual:.3e} after {iters} iterations")]
    NoConvergence { t: f64, residual: f64, iters: usize },
    #[error(transparent)]
    Linear(#[from] LinSysError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Right-hand side specification.
#[derive(Debug, Clone, Serialize)]
pub enum FSpec {
    /// `f = 0` (minimal Lagrangian case; the homotopy is trivial).
    Zero,
    /// `f = kappa . x`.
    Affine { kappa: [f64; 2] },
    /// Concave radial right-hand side matched to the closed-form solution
    /// `u = |x|^2 - eps |x|^4` on the unit disk:
    /// `f = phi(2 - 12 eps r^2) + phi(2 - 4 eps r^2) - 2 phi(2)`.
    RadialQuartic { eps: f64 },
}

impl FSpec {
    pub fn is_zero(&self) -> bool {
        matches!(self, FSpec::Zero)
    }

    pub fn value(&self, op: &OperatorParams, p: Vec2) -> f64 {
        match self {
            FSpec::Zero => 0.0,
            FSpec::Affine { kappa } => kappa[0] * p.x + kappa[1] * p.y,
            FSpec::RadialQuartic { eps } => {
                let s = p.norm_squared();
                phi_unchecked(op, 2.0 - 12.0 * eps * s) + phi_unchecked(op, 2.0 - 4.0 * eps * s)
                    - 2.0 * phi_unchecked(op, 2.0)
            }
        }
    }

    pub fn gradient(&self, op: &OperatorParams, p: Vec2) -> Vec2 {
        match self {
            FSpec::Zero => Vec2::zeros(),
            FSpec::Affine { kappa } => Vec2::new(kappa[0], kappa[1]),
            FSpec::RadialQuartic { eps } => {
                let s = p.norm_squared();
                let dphi_ds = -12.0 * eps * dphi_unchecked(op, 2.0 - 12.0 * eps * s)
                    - 4.0 * eps * dphi_unchecked(op, 2.0 - 4.0 * eps * s);
                2.0 * dphi_ds * p
            }
        }
    }

    pub fn hessian(&self, op: &OperatorParams, p: Vec2) -> Mat2 {
        match self {
            FSpec::Zero | FSpec::Affine { .. } => Mat2::zeros(),
            FSpec::RadialQuartic { eps } => {
                let s = p.norm_squared();
                let d1 = -12.0 * eps * dphi_unchecked(op, 2.0 - 12.0 * eps * s)
                    - 4.0 * eps * dphi_unchecked(op, 2.0 - 4.0 * eps * s);
                let d2 = 144.0 * eps * eps * d2phi_unchecked(op, 2.0 - 12.0 * eps * s)
                    + 16.0 * eps * eps * d2phi_unchecked(op, 2.0 - 4.0 * eps * s);
                2.0 * d1 * Mat2::identity() + 4.0 * d2 * p * p.transpose()
            }
        }
    }
}

/// Numerical controls of a solve.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Tolerances {
    pub residual_tol: f64,
    pub step_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            residual_tol: 1e-9,
            step_tol: 1e-13,
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct HomotopyControls {
    pub dt_init: f64,
    pub dt_min: f64,
    pub max_steps: usize,
    pub max_newton_iters: usize,
}

impl Default for HomotopyControls {
    fn default() -> Self {
        Self {
            dt_init: 1.0,
            dt_min: f64::powi(2.0, -10),
            max_steps: 64,
            max_newton_iters: 30,
        }
    }
}

/// Full problem description consumed by [`continuity_solve`].
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub operator: OperatorParams,
    pub source: ConvexDomain,
    pub target: ConvexDomain,
    pub target_h: DefiningFunction,
    pub f: FSpec,
    pub n_rho: usize,
    pub n_theta: usize,
    pub tolerances: Tolerances,
    pub homotopy: HomotopyControls,
    /// Uniform convexity floor for accepted iterates.
    pub eps_pos: f64,
}

impl ProblemSpec {
    pub fn new(
        operator: OperatorParams,
        source: ConvexDomain,
        target: ConvexDomain,
        f: FSpec,
        n_rho: usize,
        n_theta: usize,
    ) -> Result<Self, SolveError> {
        let target_h = DefiningFunction::new(target.clone(), target.default_concavity_boost())?;
        Ok(Self {
            operator,
            source,
            target,
            target_h,
            f,
            n_rho,
            n_theta,
            tolerances: Tolerances::default(),
            homotopy: HomotopyControls::default(),
            eps_pos: 1e-6,
        })
    }

    pub fn theta0(&self) -> f64 {
        crate::geometry::theta0(&self.source, &self.target, 2)
    }
}

/// Converged (or in-progress) solver state.
#[derive(Debug, Clone)]
pub struct SolveState {
    pub u: ScalarField,
    pub c: f64,
    pub t: f64,
    pub residual_interior: f64,
    pub residual_boundary: f64,
    pub residual_mean: f64,
    pub newton_iters: usize,
    pub min_hessian_eig: f64,
}

impl SolveState {
    pub fn max_residual(&self) -> f64 {
        self.residual_interior
            .max(self.residual_boundary)
            .max(self.residual_mean)
    }

    /// `|c| <= max(|F(0,..)|, |F(+inf,..)|) + max |t f|`, the constant bound
    /// of the continuity method.
    pub fn c_within_bound(&self, problem: &ProblemSpec) -> bool {
        let (z, i) = limits(&problem.operator, 2);
        let grid = &self.u.grid;
        let max_f = grid
            .nodes
            .iter()
            .map(|&p| (self.t * problem.f.value(&problem.operator, p)).abs())
            .fold(0.0f64, f64::max);
        self.c.abs() <= z.abs().max(i.abs()) + max_f + 1e-9
    }
}

/// One homotopy stage record for the solve log.
#[derive(Debug, Clone, Serialize)]
pub struct StageRecord {
    pub t: f64,
    pub c: f64,
    pub residual_interior: f64,
    pub residual_boundary: f64,
    pub residual_mean: f64,
    pub newton_iters: usize,
    pub min_hessian_eig: f64,
}

/// Result of a continuity solve: the final state plus the per-stage log.
#[derive(Debug)]
pub struct SolveOutcome {
    pub state: SolveState,
    pub log: Vec<StageRecord>,
}

/// Admissibility report of `validate_f`.
#[derive(Debug, Clone, Serialize)]
pub struct AdmissibilityReport {
    /// `-max` Hessian eigenvalue of `f` over the nodes (>= 0 means concave).
    pub concavity_margin: f64,
    pub osc: f64,
    pub delta_max: f64,
    /// `delta_max - osc` (>= 0 means admissible).
    pub osc_margin: f64,
}

/// Checks the admissible class: `f` concave on the grid and
/// `osc(f) <= delta_max(operator, Theta_0)`.
pub fn validate_f(
    f: &FSpec,
    op: &OperatorParams,
    grid: &MappedGrid,
    theta0: f64,
) -> Result<AdmissibilityReport, SolveError> {
    let mut max_eig = f64::NEG_INFINITY;
    let mut max_eig_node = 0;
    let mut fmin = f64::INFINITY;
    let mut fmax = f64::NEG_INFINITY;
    for (idx, &p) in grid.nodes.iter().enumerate() {
        let he = eig2(&f.hessian(op, p));
        if he.lambda_max > max_eig {
            max_eig = he.lambda_max;
            max_eig_node = idx;
        }
        let v = f.value(op, p);
        fmin = fmin.min(v);
        fmax = fmax.max(v);
    }
    let osc = fmax - fmin;
    let dmax = crate::operators::delta_max(op, theta0, 2);
    if max_eig > 1e-10 {
        return Err(SolveError::Inadmissible(format!(
            "f is not concave: Hessian eigenvalue {max_eig:.6e} > 0 at node {max_eig_node} ({:.4}, {:.4})",
            grid.nodes[max_eig_node].x, grid.nodes[max_eig_node].y
        )));
    }
    if osc > dmax {
        return Err(SolveError::Inadmissible(format!(
            "osc(f) = {osc:.6e} exceeds the admissible-class bound delta_max = {dmax:.6e} (margin {:.6e})",
            dmax - osc
        )));
    }
    Ok(AdmissibilityReport {
        concavity_margin: -max_eig,
        osc,
        delta_max: dmax,
        osc_margin: dmax - osc,
    })
}

/// Seed selection for the Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Seed {
    /// Moment-matched convex quadratic (exact for ball-to-ball).
    MomentQuadratic,
    /// The quadratic seed plus a sine bump, convexified by eigenvalue
    /// flooring; used by the uniqueness certificate.
    PerturbedQuadratic,
}

/// Moment-matched quadratic seed
/// `u0 = b~ . x + (x - xbar)^T M (x - xbar) / 2` with diagonal `M` matching
/// the area-normalized second moments of the domains; mean-normalized.
pub fn initial_guess(
    grid: &Arc<MappedGrid>,
    source: &ConvexDomain,
    target: &ConvexDomain,
) -> ScalarField {
    let (sx, sy) = centered_second_moments(source);
    let (tx, ty) = centered_second_moments(target);
    let m = Vec2::new((tx / sx).sqrt(), (ty / sy).sqrt());
    let xbar = source.barycenter;
    let btil = target.barycenter;
    let mut field = ScalarField::from_fn(grid.clone(), |p| {
        let d = p - xbar;
        btil.dot(&p) + 0.5 * (m.x * d.x * d.x + m.y * d.y * d.y)
    });
    let mean = grid.mean(&field.values).unwrap();
    for v in &mut field.values {
        *v -= mean;
    }
    field
}

/// Area-normalized second moments about the barycenter.
fn centered_second_moments(domain: &ConvexDomain) -> (f64, f64) {
    let n = 2048;
    let dt = 2.0 * std::f64::consts::PI / n as f64;
    let off = domain.center - domain.barycenter;
    let mut mxx = 0.0;
    let mut myy = 0.0;
    for k in 0..n {
        let t = k as f64 * dt;
        let (r, _, _) = domain.shape.jet(t);
        let (s, c) = t.sin_cos();
        // int_0^R (off + r e)^2 r dr per component
        mxx += 0.5 * off.x * off.x * r * r
            + (2.0 / 3.0) * off.x * c * r * r * r
            + 0.25 * c * c * r * r * r * r;
        myy += 0.5 * off.y * off.y * r * r
            + (2.0 / 3.0) * off.y * s * r * r * r
            + 0.25 * s * s * r * r * r * r;
    }
    (mxx * dt / domain.area, myy * dt / domain.area)
}

fn perturbed_guess(
    grid: &Arc<MappedGrid>,
    source: &ConvexDomain,
    target: &ConvexDomain,
) -> ScalarField {
    let base = initial_guess(grid, source, target);
    let scale = source.min_radius;
    let xbar = source.barycenter;
    let mut values = base.values.clone();
    for (idx, &p) in grid.nodes.iter().enumerate() {
        let q = (p - xbar) / scale;
        values[idx] +=
            0.05 * (std::f64::consts::PI * q.x).sin() * (std::f64::consts::PI * q.y).sin();
    }
    // convexify by eigenvalue flooring
    let hess = grid.hessian(&values).unwrap();
    let min_eig = hess
        .iter()
        .map(|h| eig2(h).lambda_min)
        .fold(f64::INFINITY, f64::min);
    let floor = 0.1;
    if min_eig < floor {
        let gamma = floor - min_eig;
        for (idx, &p) in grid.nodes.iter().enumerate() {
            let d = p - xbar;
            values[idx] += 0.5 * gamma * d.norm_squared();
        }
    }
    let mean = grid.mean(&values).unwrap();
    for v in &mut values {
        *v -= mean;
    }
    ScalarField::new(grid.clone(), values).unwrap()
}

/// Which form the interior equation takes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OpForm {
    /// `F[D^2 u] - t f(x) - c`
    Primal,
    /// `F~[D^2 u] + t f(Du) - c` (Legendre dual; `f` composed with the
    /// gradient adds the advection term `t f_p . grad w` to the linearization)
    Dual,
}

/// Discretized nonlinear system bound to one grid.
struct DiscreteSystem<'a> {
    grid: &'a Arc<MappedGrid>,
    op: OperatorParams,
    form: OpForm,
    f: &'a FSpec,
    boundary_h: &'a DefiningFunction,
    eps_pos: f64,
    blocks: Vec<usize>,
}

/// Per-iterate derivative data reused across the line search.
struct FieldJets {
    grad: Vec<Vec2>,
    hess: Vec<Mat2>,
    mean: f64,
}

struct ResidualParts {
    vector: Vec<f64>,
    interior: f64,
    boundary: f64,
    mean: f64,
    min_eig: f64,
}

impl<'a> DiscreteSystem<'a> {
    fn new(
        grid: &'a Arc<MappedGrid>,
        op: OperatorParams,
        form: OpForm,
        f: &'a FSpec,
        boundary_h: &'a DefiningFunction,
        eps_pos: f64,
    ) -> Self {
        // superblocks: [pole + ring 1], single rings, [last three rings]; the
        // pole fit and the one-sided boundary stencils stay within adjacent
        // blocks
        let nt = grid.n_theta;
        let mut blocks = vec![1 + nt];
        blocks.extend(std::iter::repeat_n(nt, grid.n_rho - 5));
        blocks.push(3 * nt);
        Self {
            grid,
            op,
            form,
            f,
            boundary_h,
            eps_pos,
            blocks,
        }
    }

    fn jets(&self, values: &[f64]) -> Result<FieldJets, SolveError> {
        Ok(FieldJets {
            grad: self.grid.gradient(values)?,
            hess: self.grid.hessian(values)?,
            mean: self.grid.mean(values)?,
        })
    }

    /// Spectrum-clamped operator value at one node; spectra are clamped to a
    /// tiny positive floor so transient line-search states stay evaluable.
    fn op_value(&self, hess: &Mat2) -> (f64, f64) {
        let e = eig2(hess);
        let lmin = e.lambda_min;
        let floor = 1e-12;
        let scale = self.op_scale();
        match self.form {
            OpForm::Primal => {
                let v = phi_unchecked(&self.op, e.lambda_min.max(floor))
                    + phi_unchecked(&self.op, e.lambda_max.max(floor));
                (scale * v, lmin)
            }
            OpForm::Dual => {
                let v = -(phi_unchecked(&self.op, 1.0 / e.lambda_min.max(floor))
                    + phi_unchecked(&self.op, 1.0 / e.lambda_max.max(floor)));
                (scale * v, lmin)
            }
        }
    }

    /// The experimental log-det branch carries the 1/n factor of its sum.
    fn op_scale(&self) -> f64 {
        if self.op.branch == crate::operators::Branch::ExperimentalLogDet {
            0.5
        } else {
            1.0
        }
    }

    /// `F^{ij}` (or the dual derivative) at one node.
    fn op_derivative(&self, hess: &Mat2) -> Mat2 {
        let scale = self.op_scale();
        match self.form {
            OpForm::Primal => scale * dphi_matrix2(&self.op, hess),
            OpForm::Dual => {
                let e = eig2(hess);
                let floor = 1e-12;
                let dl = |mu: f64| {
                    let m = mu.max(floor);
                    let lam = 1.0 / m;
                    lam * lam * dphi_unchecked(&self.op, lam)
                };
                let (s, c) = e.angle.sin_cos();
                let v = nalgebra::Vector2::new(c, s);
                let w = nalgebra::Vector2::new(-s, c);
                scale
                    * (dl(e.lambda_max) * v * v.transpose()
                        + dl(e.lambda_min) * w * w.transpose())
            }
        }
    }

    /// Right-hand-side sample bound to the form: `t f(x)` for the primal,
    /// `-t f(Du(x))` for the dual.
    fn rhs_value(&self, t: f64, x: Vec2, grad_u: Vec2) -> f64 {
        match self.form {
            OpForm::Primal => t * self.f.value(&self.op, x),
            OpForm::Dual => -t * self.f.value(&self.op, grad_u),
        }
    }

    fn residual(&self, jets: &FieldJets, c: f64, t: f64) -> Result<ResidualParts, SolveError> {
        let grid = self.grid;
        let n = grid.node_count();
        let mut vector = vec![0.0; n + 1];
        let mut interior = 0.0f64;
        let mut boundary = 0.0f64;
        let mut min_eig = f64::INFINITY;
        for idx in 0..n {
            if grid.is_boundary(idx) {
                let jet = self.boundary_h.eval(jets.grad[idx])?;
                vector[idx] = jet.h;
                boundary = boundary.max(jet.h.abs());
                min_eig = min_eig.min(eig2(&jets.hess[idx]).lambda_min);
            } else {
                let (val, lmin) = self.op_value(&jets.hess[idx]);
                min_eig = min_eig.min(lmin);
                let r = val - self.rhs_value(t, grid.nodes[idx], jets.grad[idx]) - c;
                vector[idx] = r;
                interior = interior.max(r.abs());
            }
        }
        vector[n] = jets.mean;
        Ok(ResidualParts {
            vector,
            interior,
            boundary,
            mean: jets.mean.abs(),
            min_eig,
        })
    }

    fn jacobian(&self, jets: &FieldJets, t: f64) -> Result<BlockArrowMatrix, SolveError> {
        let grid = self.grid;
        let n = grid.node_count();
        let nt = grid.n_theta;
        let mut m = BlockArrowMatrix::new(&self.blocks);

        for idx in 0..n {
            if grid.is_boundary(idx) {
                // oblique row: beta . grad w with beta = Dh(Du)
                let beta = self.boundary_h.eval(jets.grad[idx])?.grad;
                let coef = grid.inv_jac[idx] * beta;
                let i = grid.n_rho - 1;
                let j = idx - grid.index(i, 0);
                for (off, cf) in grid.rho_first_stencil(i) {
                    m.add(idx, grid.index((i as isize + off) as usize, j), coef.x * cf)?;
                }
                for k in 0..nt {
                    m.add(idx, grid.index(i, k), coef.y * grid.d1[(j, k)])?;
                }
                continue;
            }

            let s = self.op_derivative(&jets.hess[idx]);
            let adv = match self.form {
                OpForm::Primal => Vec2::zeros(),
                // d/dw [-t f(Du)] = -t f_p . grad w moved to the left side:
                // residual' = F~^{ij} d_ij w + t f_p . grad w
                OpForm::Dual => t * self.f.gradient(&self.op, jets.grad[idx]),
            };

            if idx == 0 {
                // pole row through the least-squares fit stencils
                let targets: Vec<usize> = (0..grid.pole_grad[0].len()).collect();
                for (q, &col) in targets.iter().enumerate() {
                    let hess_part = s[(0, 0)] * grid.pole_hess[0][q]
                        + 2.0 * s[(0, 1)] * grid.pole_hess[1][q]
                        + s[(1, 1)] * grid.pole_hess[2][q];
                    let adv_part = adv.x * grid.pole_grad[0][q] + adv.y * grid.pole_grad[1][q];
                    m.add(0, col, hess_part + adv_part)?;
                }
                m.add(0, n, -1.0)?;
                continue;
            }

            let i = (idx - 1) / nt + 1;
            let j = (idx - 1) % nt;
            let k = grid.inv_jac[idx];
            let msand = k * s * k.transpose();
            // S : D^2 w = msand : H_s(w) - sum_a (msand : X_a) (grad w)_a,
            // (grad w)_a = K[(0,a)] w_rho + K[(1,a)] w_theta
            let c_corr = [
                (msand.component_mul(&grid.map_xse[idx][0])).sum(),
                (msand.component_mul(&grid.map_xse[idx][1])).sum(),
            ];
            let w_rho_coef = adv.x * k[(0, 0)] + adv.y * k[(0, 1)]
                - c_corr[0] * k[(0, 0)]
                - c_corr[1] * k[(0, 1)];
            let w_theta_coef = adv.x * k[(1, 0)] + adv.y * k[(1, 1)]
                - c_corr[0] * k[(1, 0)]
                - c_corr[1] * k[(1, 1)];

            for (off, cf) in grid.rho_second_stencil(i) {
                m.add(
                    idx,
                    grid.index((i as isize + off) as usize, j),
                    msand[(0, 0)] * cf,
                )?;
            }
            for (off, cf) in grid.rho_first_stencil(i) {
                let ring = (i as isize + off) as usize;
                m.add(idx, grid.index(ring, j), w_rho_coef * cf)?;
                if ring > 0 {
                    // mixed derivative: rho stencil of the spectral
                    // theta-derivative (the pole ring is constant in theta)
                    for kk in 0..nt {
                        m.add(
                            idx,
                            grid.index(ring, kk),
                            2.0 * msand[(0, 1)] * cf * grid.d1[(j, kk)],
                        )?;
                    }
                }
            }
            for kk in 0..nt {
                m.add(
                    idx,
                    grid.index(i, kk),
                    msand[(1, 1)] * grid.d2[(j, kk)] + w_theta_coef * grid.d1[(j, kk)],
                )?;
            }
            m.add(idx, n, -1.0)?;
        }

        // mean row
        for idx in 0..n {
            let w = grid.quad_weight(idx);
            if w != 0.0 {
                m.add(n, idx, w / grid.domain.area)?;
            }
        }
        Ok(m)
    }

    /// One damped Newton step; the largest dyadic step that keeps every node
    /// uniformly convex and reduces the max-norm residual is taken.
    fn newton_step(
        &self,
        u: &mut [f64],
        c: &mut f64,
        t: f64,
        jets: &FieldJets,
        res: &ResidualParts,
    ) -> Result<(FieldJets, ResidualParts, f64), SolveError> {
        let n = self.grid.node_count();
        let jac = self.jacobian(jets, t)?;
        let mut rhs = res.vector.clone();
        for v in &mut rhs {
            *v = -*v;
        }
        let delta = jac.solve(&rhs)?;
        let du = &delta[..n];
        let dc = delta[n];
        let djets = self.jets(du)?;

        let mut alpha = 1.0f64;
        let mut worst_node = 0;
        let mut worst_eig = f64::NEG_INFINITY;
        for _ in 0..=20 {
            // convexity floor first (cheap linear combination of the jets)
            let mut min_eig = f64::INFINITY;
            let mut node = 0;
            for idx in 0..n {
                let h = jets.hess[idx] + alpha * djets.hess[idx];
                let e = eig2(&h).lambda_min;
                if e < min_eig {
                    min_eig = e;
                    node = idx;
                }
            }
            if min_eig <= self.eps_pos {
                if min_eig > worst_eig {
                    worst_eig = min_eig;
                    worst_node = node;
                }
                alpha *= 0.5;
                continue;
            }
            let trial_jets = FieldJets {
                grad: (0..n)
                    .map(|i| jets.grad[i] + alpha * djets.grad[i])
                    .collect(),
                hess: (0..n)
                    .map(|i| jets.hess[i] + alpha * djets.hess[i])
                    .collect(),
                mean: jets.mean + alpha * djets.mean,
            };
            let c_trial = *c + alpha * dc;
            let trial_res = self.residual(&trial_jets, c_trial, t)?;
            let old_norm = res.vector.iter().fold(0.0f64, |a, r| a.max(r.abs()));
            let new_norm = trial_res.vector.iter().fold(0.0f64, |a, r| a.max(r.abs()));
            if new_norm <= (1.0 - 1e-4 * alpha) * old_norm {
                for idx in 0..n {
                    u[idx] += alpha * du[idx];
                }
                *c = c_trial;
                return Ok((
                    trial_jets,
                    trial_res,
                    alpha * du.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(dc.abs()),
                ));
            }
            alpha *= 0.5;
        }
        Err(SolveError::ConvexityBreakdown {
            node: worst_node,
            min_eig: worst_eig,
            t,
        })
    }

    /// Newton iteration at fixed `t` to the residual tolerance.
    fn solve_stage(
        &self,
        u: &mut [f64],
        c: &mut f64,
        t: f64,
        tol: &Tolerances,
        max_iters: usize,
    ) -> Result<(usize, ResidualParts), SolveError> {
        let mut jets = self.jets(u)?;
        let mut res = self.residual(&jets, *c, t)?;
        for iter in 0..max_iters {
            if res.interior <= tol.residual_tol
                && res.boundary <= tol.residual_tol
                && res.mean <= tol.residual_tol
            {
                return Ok((iter, res));
            }
            let (j2, r2, step) = self.newton_step(u, c, t, &jets, &res)?;
            jets = j2;
            res = r2;
            if step <= tol.step_tol {
                break;
            }
        }
        if res.interior <= tol.residual_tol
            && res.boundary <= tol.residual_tol
            && res.mean <= tol.residual_tol
        {
            return Ok((max_iters, res));
        }
        Err(SolveError::NoConvergence {
            t,
            residual: res.interior.max(res.boundary).max(res.mean),
            iters: max_iters,
        })
    }
}

/// Solves the full problem by the continuity method; see the module docs.
pub fn continuity_solve(problem: &ProblemSpec) -> Result<SolveOutcome, SolveError> {
    continuity_solve_seeded(problem, Seed::MomentQuadratic)
}

pub fn continuity_solve_seeded(
    problem: &ProblemSpec,
    seed: Seed,
) -> Result<SolveOutcome, SolveError> {
    let grid = Arc::new(MappedGrid::build(
        problem.source.clone(),
        problem.n_rho,
        problem.n_theta,
    )?);
    if !problem.f.is_zero() {
        validate_f(&problem.f, &problem.operator, &grid, problem.theta0())?;
    }
    let sys = DiscreteSystem::new(
        &grid,
        problem.operator,
        OpForm::Primal,
        &problem.f,
        &problem.target_h,
        problem.eps_pos,
    );
    run_homotopy(problem, &grid, sys, seed, &problem.source, &problem.target)
}

/// Independent dual solve on the target domain: operator `F~`, boundary
/// condition `h~(Du~) = 0` with the source's defining function, right-hand
/// side `-f(Du~)`. Returns the dual outcome; its constant determines the
/// primal one as `c = -c~`.
pub fn solve_dual(problem: &ProblemSpec) -> Result<SolveOutcome, SolveError> {
    let dual_h = DefiningFunction::new(
        problem.source.clone(),
        problem.source.default_concavity_boost(),
    )?;
    // keep the physical grid spacing comparable to the primal grid when the
    // target domain is larger
    let ratio = (problem.target.min_radius / problem.source.min_radius).max(1.0);
    let n_rho = (problem.n_rho as f64 * ratio).round() as usize;
    let n_theta = 2 * ((problem.n_theta as f64 * ratio / 2.0).round() as usize);
    let grid = Arc::new(MappedGrid::build(problem.target.clone(), n_rho, n_theta)?);
    let sys = DiscreteSystem::new(
        &grid,
        problem.operator,
        OpForm::Dual,
        &problem.f,
        &dual_h,
        problem.eps_pos,
    );
    run_homotopy(
        problem,
        &grid,
        sys,
        Seed::MomentQuadratic,
        &problem.target,
        &problem.source,
    )
}

fn run_homotopy(
    problem: &ProblemSpec,
    grid: &Arc<MappedGrid>,
    sys: DiscreteSystem,
    seed: Seed,
    from: &ConvexDomain,
    to: &ConvexDomain,
) -> Result<SolveOutcome, SolveError> {
    let mut u = match seed {
        Seed::MomentQuadratic => initial_guess(grid, from, to).values,
        Seed::PerturbedQuadratic => perturbed_guess(grid, from, to).values,
    };
    // seed c with the mean interior operator value
    let jets = sys.jets(&u)?;
    let mut c = {
        let mut acc = 0.0;
        let mut cnt = 0usize;
        for idx in 0..grid.node_count() {
            if !grid.is_boundary(idx) {
                acc += sys.op_value(&jets.hess[idx]).0;
                cnt += 1;
            }
        }
        acc / cnt as f64
    };

    let mut log = Vec::new();
    let tol = problem.tolerances;
    let hom = problem.homotopy;

    let record = |t: f64, c: f64, iters: usize, res: &ResidualParts, log: &mut Vec<StageRecord>| {
        log.push(StageRecord {
            t,
            c,
            residual_interior: res.interior,
            residual_boundary: res.boundary,
            residual_mean: res.mean,
            newton_iters: iters,
            min_hessian_eig: res.min_eig,
        });
    };

    // base stage t = 0
    let (iters, res) = sys.solve_stage(&mut u, &mut c, 0.0, &tol, hom.max_newton_iters)?;
    record(0.0, c, iters, &res, &mut log);

    let trivial = problem.f.is_zero();
    let mut t = 0.0f64;
    let mut dt = hom.dt_init;
    let mut last = (u.clone(), c);
    let mut final_stats = (iters, res);
    if trivial {
        t = 1.0;
    }
    let mut steps = 0usize;
    while t < 1.0 {
        steps += 1;
        if steps > hom.max_steps {
            return Err(SolveError::PathFailure { last_good_t: t });
        }
        let t_next = (t + dt).min(1.0);
        match sys.solve_stage(&mut u, &mut c, t_next, &tol, hom.max_newton_iters) {
            Ok((iters, res)) => {
                t = t_next;
                last = (u.clone(), c);
                record(t, c, iters, &res, &mut log);
                final_stats = (iters, res);
                if iters <= 5 {
                    dt *= 1.5;
                }
            }
            Err(SolveError::NoConvergence { .. }) | Err(SolveError::ConvexityBreakdown { .. }) => {
                u = last.0.clone();
                c = last.1;
                dt *= 0.5;
                if dt < hom.dt_min {
                    return Err(SolveError::PathFailure { last_good_t: t });
                }
            }
            Err(e) => return Err(e),
        }
    }

    let (iters, res) = final_stats;
    let state = SolveState {
        u: ScalarField::new(grid.clone(), u)?,
        c,
        t,
        residual_interior: res.interior,
        residual_boundary: res.boundary,
        residual_mean: res.mean,
        newton_iters: iters,
        min_hessian_eig: res.min_eig,
    };
    Ok(SolveOutcome { state, log })
}

/// Finite-difference directional oracle for the Jacobian, used by tests:
/// max relative error of `J (w, wc)` against
/// `(residual(u + eps w, c + eps wc) - residual(u - eps w, c - eps wc)) / 2 eps`.
#[doc(hidden)]
pub fn jacobian_fd_check(
    problem: &ProblemSpec,
    u: &[f64],
    c: f64,
    t: f64,
    w: &[f64],
    wc: f64,
) -> f64 {
    let grid = Arc::new(
        MappedGrid::build(problem.source.clone(), problem.n_rho, problem.n_theta).unwrap(),
    );
    let sys = DiscreteSystem::new(
        &grid,
        problem.operator,
        OpForm::Primal,
        &problem.f,
        &problem.target_h,
        problem.eps_pos,
    );
    let jets = sys.jets(u).unwrap();
    let jac = sys.jacobian(&jets, t).unwrap();
    let mut dir = w.to_vec();
    dir.push(wc);
    let jw = jac.apply(&dir);

    let eps = 1e-6;
    let up: Vec<f64> = u.iter().zip(w).map(|(a, b)| a + eps * b).collect();
    let um: Vec<f64> = u.iter().zip(w).map(|(a, b)| a - eps * b).collect();
    let rp = sys
        .residual(&sys.jets(&up).unwrap(), c + eps * wc, t)
        .unwrap()
        .vector;
    let rm = sys
        .residual(&sys.jets(&um).unwrap(), c - eps * wc, t)
        .unwrap()
        .vector;

    let scale = jw.iter().fold(1e-12f64, |a, v| a.max(v.abs()));
    let mut err = 0.0f64;
    for idx in 0..jw.len() {
        let fd = (rp[idx] - rm[idx]) / (2.0 * eps);
        err = err.max((jw[idx] - fd).abs());
    }
    err / scale
}

/// Ball-to-ball closed-form constant: `F_tau(theta0, theta0)` for n = 2.
pub fn ball_to_ball_constant(op: &OperatorParams, theta0: f64) -> f64 {
    2.0 * phi_unchecked(op, theta0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn ball_to_ball(tau: f64, n_rho: usize, n_theta: usize, f: FSpec) -> ProblemSpec {
        let source = ConvexDomain::disk(Vec2::zeros(), 1.0).unwrap();
        let target = ConvexDomain::disk(Vec2::zeros(), 2.0).unwrap();
        ProblemSpec::new(
            OperatorParams::new(tau).unwrap(),
            source,
            target,
            f,
            n_rho,
            n_theta,
        )
        .unwrap()
    }

    #[test]
    fn initial_guess_examples() {
        let p = ball_to_ball(FRAC_PI_2, 8, 16, FSpec::Zero);
        let grid = Arc::new(MappedGrid::build(p.source.clone(), 8, 16).unwrap());
        let u0 = initial_guess(&grid, &p.source, &p.target);
        // u0 = |x|^2 - mean
        let mean = grid
            .mean(&ScalarField::from_fn(grid.clone(), |q| q.norm_squared()).values)
            .unwrap();
        for (idx, &q) in grid.nodes.iter().enumerate() {
            assert_abs_diff_eq!(u0.values[idx], q.norm_squared() - mean, epsilon = 1e-10);
        }

        // disk -> ellipse(2,1): u0 = x^2 + y^2/2 up to the mean
        let ell = ConvexDomain::ellipse(Vec2::zeros(), (2.0, 1.0), 0.0).unwrap();
        let u0 = initial_guess(&grid, &p.source, &ell);
        let f = ScalarField::from_fn(grid.clone(), |q| q.x * q.x + 0.5 * q.y * q.y);
        let mean = grid.mean(&f.values).unwrap();
        for (idx, &q) in grid.nodes.iter().enumerate() {
            assert!((u0.values[idx] - (q.x * q.x + 0.5 * q.y * q.y - mean)).abs() <= 1e-6);
        }

        // shifted target: the linear part equals the shift
        let shifted = ConvexDomain::disk(Vec2::new(0.7, -0.3), 1.0).unwrap();
        let u0 = initial_guess(&grid, &p.source, &shifted);
        let g = grid.gradient(&u0.values).unwrap();
        assert!((g[0] - Vec2::new(0.7, -0.3)).norm() <= 1e-8);
    }

    #[test]
    fn validate_f_cases() {
        let p = ball_to_ball(FRAC_PI_2, 16, 32, FSpec::Zero);
        let grid = Arc::new(MappedGrid::build(p.source.clone(), 16, 32).unwrap());
        // affine passes with exact concavity margin
        let r = validate_f(
            &FSpec::Affine { kappa: [0.1, 0.0] },
            &p.operator,
            &grid,
            2.0,
        )
        .unwrap();
        assert_abs_diff_eq!(r.concavity_margin, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.osc, 0.2, epsilon = 1e-12);
        assert!(r.osc_margin > 0.0);

        // convex f rejected: emulate f = |x|^2 through a spec-level check
        // (the concave sign flips)
        let bad = FSpec::RadialQuartic { eps: -0.05 };
        let err = validate_f(&bad, &p.operator, &grid, 2.0).unwrap_err();
        assert!(err.to_string().contains("not concave"), "{err}");

        // oscillation beyond the admissible bound rejected with the margin
        let err = validate_f(
            &FSpec::Affine { kappa: [0.5, 0.0] },
            &p.operator,
            &grid,
            2.0,
        )
        .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("delta_max") && msg.contains("margin"), "{msg}");
    }

    #[test]
    fn ball_to_ball_exact_recovery() {
        for tau in [PI / 8.0, FRAC_PI_4, 3.0 * PI / 8.0, FRAC_PI_2] {
            let p = ball_to_ball(tau, 16, 32, FSpec::Zero);
            let out = continuity_solve(&p).unwrap();
            let st = &out.state;
            assert!(st.max_residual() <= 1e-9);
            let c_exact = ball_to_ball_constant(&p.operator, 2.0);
            assert!(
                (st.c - c_exact).abs() <= 1e-9,
                "tau={tau}: c={} vs {}",
                st.c,
                c_exact
            );
            // u = |x|^2 after mean alignment
            let grid = &st.u.grid;
            let exact = ScalarField::from_fn(grid.clone(), |q| q.norm_squared());
            let mean = grid.mean(&exact.values).unwrap();
            let mut worst = 0.0f64;
            for idx in 0..grid.node_count() {
                worst = worst.max((st.u.values[idx] - (exact.values[idx] - mean)).abs());
            }
            assert!(worst <= 1e-9, "tau={tau}: u error {worst}");
            assert!(st.min_hessian_eig > 1.9);
            assert!(st.c_within_bound(&p));
        }
    }

    #[test]
    fn residual_structure() {
        let p = ball_to_ball(FRAC_PI_2, 12, 24, FSpec::Zero);
        let grid = Arc::new(MappedGrid::build(p.source.clone(), 12, 24).unwrap());
        let sys = DiscreteSystem::new(
            &grid,
            p.operator,
            OpForm::Primal,
            &p.f,
            &p.target_h,
            p.eps_pos,
        );
        let u = initial_guess(&grid, &p.source, &p.target);
        let jets = sys.jets(&u.values).unwrap();
        let c0 = ball_to_ball_constant(&p.operator, 2.0);
        let r0 = sys.residual(&jets, c0, 1.0).unwrap();
        // exact state: everything at discretization-exact level
        assert!(r0.interior <= 1e-11 && r0.boundary <= 1e-9 && r0.mean <= 1e-12);

        // shifting c by 0.1 shifts every interior entry by exactly -0.1
        let r1 = sys.residual(&jets, c0 + 0.1, 1.0).unwrap();
        for idx in 0..grid.node_count() {
            if !grid.is_boundary(idx) {
                assert_abs_diff_eq!(r1.vector[idx] - r0.vector[idx], -0.1, epsilon = 1e-14);
            } else {
                assert_eq!(r1.vector[idx], r0.vector[idx]);
            }
        }

        // boundary block equals h(Du) sampled independently
        let grad = grid.gradient(&u.values).unwrap();
        for &idx in &grid.boundary_indices() {
            let h = p.target_h.eval(grad[idx]).unwrap().h;
            assert_abs_diff_eq!(r0.vector[idx], h, epsilon = 1e-14);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let p = ball_to_ball(FRAC_PI_2, 10, 16, FSpec::Affine { kappa: [0.05, 0.0] });
        let grid = Arc::new(MappedGrid::build(p.source.clone(), 10, 16).unwrap());
        // a genuinely non-quadratic uniformly convex state
        let u = ScalarField::from_fn(grid.clone(), |q| {
            q.norm_squared() + 0.05 * (q.x * 1.7).sin() * (q.y * 1.3).cos()
        });
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..3 {
            let w: Vec<f64> = (0..grid.node_count())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let wc: f64 = rng.gen_range(-1.0..1.0);
            let err = jacobian_fd_check(&p, &u.values, -0.5, 0.7, &w, wc);
            assert!(err <= 1e-5, "jacobian fd error {err}");
        }
    }

    #[test]
    fn fixed_point_single_step() {
        // starting at the exact solution, one Newton stage changes u negligibly
        let p = ball_to_ball(FRAC_PI_2, 16, 32, FSpec::Zero);
        let grid = Arc::new(MappedGrid::build(p.source.clone(), 16, 32).unwrap());
        let sys = DiscreteSystem::new(
            &grid,
            p.operator,
            OpForm::Primal,
            &p.f,
            &p.target_h,
            p.eps_pos,
        );
        let mut u = initial_guess(&grid, &p.source, &p.target).values;
        let before = u.clone();
        let mut c = ball_to_ball_constant(&p.operator, 2.0);
        let (iters, _) = sys
            .solve_stage(&mut u, &mut c, 0.0, &p.tolerances, 5)
            .unwrap();
        assert!(iters <= 1);
        let drift = u
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(drift <= 1e-9);
    }

    #[test]
    fn newton_from_wrong_constant() {
        // u0 exact, c = 0: converges to c = F(2,2) in <= 5 iterations
        let p = ball_to_ball(FRAC_PI_2, 16, 32, FSpec::Zero);
        let grid = Arc::new(MappedGrid::build(p.source.clone(), 16, 32).unwrap());
        let sys = DiscreteSystem::new(
            &grid,
            p.operator,
            OpForm::Primal,
            &p.f,
            &p.target_h,
            p.eps_pos,
        );
        let mut u = initial_guess(&grid, &p.source, &p.target).values;
        let mut c = 0.0;
        let (iters, res) = sys
            .solve_stage(&mut u, &mut c, 0.0, &p.tolerances, 5)
            .unwrap();
        assert!(iters <= 5);
        assert!(res.interior <= 1e-10);
        assert_abs_diff_eq!(c, ball_to_ball_constant(&p.operator, 2.0), epsilon = 1e-10);
    }

    #[test]
    fn perturbed_solve_and_path() {
        let p = ball_to_ball(FRAC_PI_2, 16, 32, FSpec::Affine { kappa: [0.05, 0.0] });
        let out = continuity_solve(&p).unwrap();
        assert!(out.state.max_residual() <= 1e-9);
        assert!(out.state.t == 1.0);
        assert!(out.state.min_hessian_eig > 1.0);
        assert!(out.state.c_within_bound(&p));
        assert!(!out.log.is_empty());
        // c is even in kappa, so it stays within O(kappa^2) of the f = 0 constant
        let c0 = ball_to_ball_constant(&p.operator, 2.0);
        assert!((out.state.c - c0).abs() <= 5e-3, "{} vs {c0}", out.state.c);
    }

    #[test]
    fn dual_ball_to_ball() {
        let p = ball_to_ball(FRAC_PI_2, 16, 32, FSpec::Zero);
        let dual = solve_dual(&p).unwrap();
        // dual potential |x|^2 / 4 on the radius-2 disk, dual constant -c
        let grid = &dual.state.u.grid;
        let exact = ScalarField::from_fn(grid.clone(), |q| 0.25 * q.norm_squared());
        let mean = grid.mean(&exact.values).unwrap();
        let mut worst = 0.0f64;
        for idx in 0..grid.node_count() {
            worst = worst.max((dual.state.u.values[idx] - (exact.values[idx] - mean)).abs());
        }
        assert!(worst <= 1e-9, "dual u error {worst}");
        let c_exact = ball_to_ball_constant(&p.operator, 2.0);
        assert_abs_diff_eq!(-dual.state.c, c_exact, epsilon = 1e-9);
    }

    #[test]
    fn uniqueness_of_two_seeds() {
        let p = ball_to_ball(FRAC_PI_2, 16, 32, FSpec::Affine { kappa: [0.05, 0.0] });
        let a = continuity_solve_seeded(&p, Seed::MomentQuadratic).unwrap();
        let b = continuity_solve_seeded(&p, Seed::PerturbedQuadratic).unwrap();
        assert!((a.state.c - b.state.c).abs() <= 1e-8);
        let diff: Vec<f64> = a
            .state
            .u
            .values
            .iter()
            .zip(&b.state.u.values)
            .map(|(x, y)| x - y)
            .collect();
        let range = diff.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v))
            - diff.iter().fold(f64::INFINITY, |m, v| m.min(*v));
        assert!(range <= 1e-6, "difference range {range}");
    }

    #[test]
    fn jacobian_c_column_structure() {
        // derivative of the residual in c is -1 on interior rows, 0 on
        // boundary and mean rows
        let p = ball_to_ball(FRAC_PI_2, 12, 24, FSpec::Zero);
        let grid = Arc::new(MappedGrid::build(p.source.clone(), 12, 24).unwrap());
        let sys =
            DiscreteSystem::new(&grid, p.operator, OpForm::Primal, &p.f, &p.target_h, p.eps_pos);
        let u = initial_guess(&grid, &p.source, &p.target);
        let jets = sys.jets(&u.values).unwrap();
        let jac = sys.jacobian(&jets, 0.0).unwrap();
        let n = grid.node_count();
        let mut e_c = vec![0.0; n + 1];
        e_c[n] = 1.0;
        let col = jac.apply(&e_c);
        for idx in 0..n {
            if grid.is_boundary(idx) {
                assert_eq!(col[idx], 0.0);
            } else {
                assert_eq!(col[idx], -1.0);
            }
        }
        assert_eq!(col[n], 0.0);
    }

    #[test]
    fn homotopy_path_c_is_continuous() {
        // with small forced steps the recorded c(t) moves by O(dt)
        let mut p = ball_to_ball(FRAC_PI_2, 16, 32, FSpec::Affine { kappa: [0.2, 0.0] });
        p.homotopy.dt_init = 0.125;
        let out = continuity_solve(&p).unwrap();
        assert!(out.log.len() >= 4, "expected several stages, got {}", out.log.len());
        for w in out.log.windows(2) {
            let dt = w[1].t - w[0].t;
            let dc = (w[1].c - w[0].c).abs();
            assert!(dc <= 0.1 * dt + 1e-9, "dc {dc} over dt {dt}");
        }
        assert_eq!(out.log.last().unwrap().t, 1.0);
    }

    #[test]
    fn experimental_log_det_solves_monge_ampere_case() {
        // det D^2 u = e^{2c} between concentric disks: u = |x|^2, c = ln 2
        let source = ConvexDomain::disk(Vec2::zeros(), 1.0).unwrap();
        let target = ConvexDomain::disk(Vec2::zeros(), 2.0).unwrap();
        let p = ProblemSpec::new(
            OperatorParams::experimental_log_det(),
            source,
            target,
            FSpec::Zero,
            16,
            32,
        )
        .unwrap();
        let out = continuity_solve(&p).unwrap();
        assert_abs_diff_eq!(out.state.c, std::f64::consts::LN_2, epsilon = 1e-9);
    }

    #[test]
    fn stagnation_reports_no_convergence() {
        let mut p = ball_to_ball(FRAC_PI_2, 16, 32, FSpec::Zero);
        p.homotopy.max_newton_iters = 0;
        p.tolerances.residual_tol = 1e-30;
        match continuity_solve(&p) {
            Err(SolveError::NoConvergence { .. }) => {}
            other => panic!("expected stagnation, got {:?}", other.map(|o| o.state.c)),
        }
    }
}
