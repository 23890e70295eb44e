use stokes_core::grid::{BoundaryCondition, GridSpec, StokesVector};
use stokes_core::krylov::{gmres_solve, GmresConfig, SolveStatus};
use stokes_core::operators::{rescale, ViscousForm};
use stokes_core::precond::{PrecondConfig, PrecondKind};
use stokes_core::problems::{bubble_coefficients, constant_coefficients, make_rhs, BubbleSpec};

fn tight() -> GmresConfig {
    GmresConfig { rtol: 1e-12, max_iters: 400, restart: 30, ..Default::default() }
}

#[test]
fn exact_subsolvers_on_periodic_steady_constant_problem() {
    let g = GridSpec::uniform(2, 16, 1.0, BoundaryCondition::Periodic).unwrap();
    let c = constant_coefficients(&g, 1.0, 1.0, 0.0, ViscousForm::Stress).unwrap();
    let (rhs, _) = make_rhs(&g, &c, 3).unwrap();
    for (kind, at_most) in [(PrecondKind::P1, 1), (PrecondKind::P2, 2), (PrecondKind::P3, 2), (PrecondKind::P5, 2)] {
        let (_, h) = gmres_solve(&rhs, &c, &PrecondConfig::exact(kind), &tight()).unwrap();
        let hit = h.first_true_below(1e-10).expect("converges");
        assert!(hit.iteration <= at_most, "{kind:?} took {}", hit.iteration);
    }
    // Block diagonal preconditioning leaves three distinct eigenvalues.
    let (_, h) = gmres_solve(&rhs, &c, &PrecondConfig::exact(PrecondKind::P4), &tight()).unwrap();
    assert!(h.first_true_below(1e-10).unwrap().iteration <= 3);
}

fn bubble(n: usize, r: f64) -> (stokes_core::operators::CoefficientSet, StokesVector, StokesVector, f64) {
    let g = GridSpec::uniform(2, n, 1.0, BoundaryCondition::NoSlip).unwrap();
    let spec = BubbleSpec { r_mu: r, r_rho: r, ..Default::default() };
    let c = bubble_coefficients(&g, &spec, 0.0, ViscousForm::Stress).unwrap();
    let (rhs, x) = make_rhs(&g, &c, 1).unwrap();
    let (cs, rs, spec) = rescale(&c, &rhs);
    (cs, rs, x, spec.c)
}

#[test]
fn solving_the_generated_system_recovers_the_reference_solution() {
    let (c, rhs, x, scale) = bubble(32, 10.0);
    let (sol, h) = gmres_solve(&rhs, &c, &PrecondConfig::new(PrecondKind::P2), &tight()).unwrap();
    assert_eq!(h.status, SolveStatus::Converged);
    let spec = stokes_core::operators::RescaleSpec { c: scale };
    let mut err = spec.unscale_solution(&sol);
    err.axpy(-1.0, &x).unwrap();
    assert!(err.norm2() <= 1e-8 * x.norm2(), "error {}", err.norm2() / x.norm2());
}

#[test]
fn rescaled_residuals_stay_within_two_orders() {
    let (c, rhs, _, _) = bubble(64, 100.0);
    let (_, h) = gmres_solve(&rhs, &c, &PrecondConfig::new(PrecondKind::P2), &tight()).unwrap();
    let r0 = h.initial();
    for r in &h.records {
        let rt = r.resid_true / r0.resid_true;
        let rp = r.resid_precond / r0.resid_precond;
        if rt > 1e-10 {
            let q = rt / rp;
            assert!((1e-2..=1e2).contains(&q), "iteration {}: {rt} vs {rp}", r.iteration);
        }
    }
}

#[test]
fn repeated_solves_are_identical() {
    let run = || {
        let (c, rhs, _, _) = bubble(32, 100.0);
        gmres_solve(&rhs, &c, &PrecondConfig::new(PrecondKind::P5), &GmresConfig::default()).unwrap()
    };
    let (x1, h1) = run();
    let (x2, h2) = run();
    assert_eq!(h1, h2);
    assert_eq!(x1, x2);
}

#[test]
fn consistent_sign_beats_flipped_sign() {
    let (c, rhs, _, _) = bubble(64, 100.0);
    let mut counts = vec![];
    for sign in [stokes_core::schur::SchurSign::Minus, stokes_core::schur::SchurSign::Plus] {
        let mut p = PrecondConfig::new(PrecondKind::P2);
        p.schur.sign = sign;
        let (_, h) = gmres_solve(&rhs, &c, &p, &tight()).unwrap();
        counts.push(h.first_true_below(1e-9).unwrap().iteration);
    }
    assert!(counts[0] < counts[1], "{counts:?}");
}
