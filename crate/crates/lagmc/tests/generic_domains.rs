//! Solver and certificate coverage on non-canonical configurations: Fourier
//! profiles, shifted and rotated targets, quotient operator branches with
//! nonzero right-hand sides.

use lagmc::diagnostics::{self, DiagnosticsOptions};
use lagmc::geometry::{ConvexDomain, Vec2};
use lagmc::operators::OperatorParams;
use lagmc::solver::{self, FSpec, ProblemSpec};

use std::f64::consts::{FRAC_PI_4, PI};

fn solve_and_certify(problem: &ProblemSpec) -> diagnostics::DiagnosticsReport {
    let out = solver::continuity_solve(problem).unwrap();
    assert!(out.state.max_residual() <= problem.tolerances.residual_tol);
    assert!(out.state.min_hessian_eig > problem.eps_pos);
    assert!(out.state.c_within_bound(problem));
    let report =
        diagnostics::run_diagnostics(problem, &out, &DiagnosticsOptions::default()).unwrap();
    assert!(report.hard_pass(&out.state, problem));
    assert!(report.obliqueness_min > 0.05, "obliqueness {}", report.obliqueness_min);
    assert!(report.mass_err <= 1e-2, "mass {}", report.mass_err);
    report
}

#[test]
fn fourier_source_to_shifted_disk_log_quotient_branch() {
    let source =
        ConvexDomain::smooth_convex(Vec2::zeros(), 1.0, vec![(0.03, 0.0), (0.0, 0.02)]).unwrap();
    let target = ConvexDomain::disk(Vec2::new(0.4, -0.2), 1.5).unwrap();
    let problem = ProblemSpec::new(
        OperatorParams::new(PI / 8.0).unwrap(),
        source,
        target,
        FSpec::Affine { kappa: [0.1, 0.0] },
        24,
        48,
    )
    .unwrap();
    let report = solve_and_certify(&problem);
    assert!(report.pinching.det_bracketed);
}

#[test]
fn disk_to_rotated_ellipse_harmonic_branch() {
    let source = ConvexDomain::disk(Vec2::zeros(), 1.0).unwrap();
    let target = ConvexDomain::ellipse(Vec2::zeros(), (1.6, 1.1), 0.5).unwrap();
    let problem = ProblemSpec::new(
        OperatorParams::new(FRAC_PI_4).unwrap(),
        source,
        target,
        FSpec::Affine { kappa: [0.0, 0.05] },
        24,
        64,
    )
    .unwrap();
    solve_and_certify(&problem);
}

#[test]
fn ellipse_to_disk_arctan_quotient_branch() {
    let source = ConvexDomain::ellipse(Vec2::zeros(), (1.4, 0.9), 0.0).unwrap();
    let target = ConvexDomain::disk(Vec2::zeros(), 1.2).unwrap();
    let problem = ProblemSpec::new(
        OperatorParams::new(3.0 * PI / 8.0).unwrap(),
        source,
        target,
        FSpec::Zero,
        24,
        64,
    )
    .unwrap();
    let report = solve_and_certify(&problem);
    // with f = 0 the operator value is spatially constant, so the spectrum
    // stays pinched around Theta_0
    assert!(report.pinching.theta0_bracketed);
}

#[test]
fn dual_consistency_on_generic_pair() {
    let source = ConvexDomain::disk(Vec2::zeros(), 1.0).unwrap();
    let target =
        ConvexDomain::smooth_convex(Vec2::new(0.2, 0.1), 1.4, vec![(0.0, 0.03)]).unwrap();
    let problem = ProblemSpec::new(
        OperatorParams::new(1.2).unwrap(),
        source,
        target,
        FSpec::Affine { kappa: [0.05, 0.02] },
        24,
        64,
    )
    .unwrap();
    let primal = solver::continuity_solve(&problem).unwrap();
    let dual = solver::solve_dual(&problem).unwrap();
    let rec = diagnostics::check_duality(&primal.state, &dual.state, &problem, 3).unwrap();
    assert!(rec.c_dual_err <= 1e-4, "c_dual_err {}", rec.c_dual_err);
    let h = primal.state.u.grid.drho;
    assert!(rec.roundtrip_err <= 20.0 * h * h, "roundtrip {}", rec.roundtrip_err);
}
