//! Invariants of the outer fixed-point solver and the constrained oracle.

use abreu::abreu::{epsilon_continuation, phi_t_step, solve_abreu, AbreuProblem, HomotopyConfig, Penalization, RhsMode};
use abreu::grid::*;
use abreu::lagrangian::{rochet_chone, Gamma, Gauge};
use abreu::oracle::{audit, minimize_constrained, oracle_objective, ConvexityCone, OracleConfig, OracleStatus};
use abreu::Error;

fn mask(n: usize) -> DomainMask {
    let shape = DomainShape { omega: Region::square(-1.0, 1.0), omega0: Region::square(-0.5, 0.5) };
    build_domain(&shape, GridSpec::square(n, -1.0, 1.0).unwrap()).unwrap()
}

fn rc_problem(m: &DomainMask, rho: f64, pen: Penalization) -> abreu::Result<AbreuProblem> {
    let g = m.grid();
    AbreuProblem::new(
        m.clone(),
        ScalarField::from_fn(g, |x| x[0] * x[0] + x[1] * x[1]),
        ScalarField::constant(g, 1.0),
        rochet_chone(Gamma::Constant(1.0), rho, m)?,
        Gauge::log(),
        pen,
        RhsMode::Penalized,
    )
}

#[test]
fn converged_solve_is_a_consistent_fixed_point() {
    let m = mask(33);
    let prob = rc_problem(&m, 1.0, Penalization::FixedDelta(0.1)).unwrap();
    let cfg = HomotopyConfig::default();
    let rep = solve_abreu(&prob, &cfg).unwrap();
    assert!(rep.converged(), "{}", rep.message);
    assert!(rep.defect <= cfg.outer_tol);
    let scale = 1.0 + rep.w.max_abs_on(m.closure());
    assert!(rep.diagnostics.gauge_defect <= 10.0 * cfg.outer_tol * scale, "{}", rep.diagnostics.gauge_defect);
    // positivity along the whole history and strictly above the floor at the end
    assert!(rep.history.iter().all(|r| r.min_w >= cfg.w_floor));
    assert!(rep.w.min_on(m.closure()) > cfg.w_floor);
    assert!(check_discrete_convexity(&rep.u, &m, 1e-8).is_empty());

    // one more undamped evaluation at t = 1 barely moves w
    let step = phi_t_step(&rep.w, 1.0, 1.0, &prob, &cfg, Some(&rep.u)).unwrap();
    assert!(step.defect <= 10.0 * cfg.outer_tol * scale, "{}", step.defect);
}

#[test]
fn homotopy_start_is_exactly_one() {
    let m = mask(17);
    let prob = rc_problem(&m, 1.0, Penalization::FixedDelta(0.1)).unwrap();
    let w = ScalarField::from_fn(m.grid(), |x| 1.0 + 0.3 * x[0] * x[0]);
    let step = phi_t_step(&w, 0.0, 1.0, &prob, &HomotopyConfig::default(), None).unwrap();
    assert!(m.closure().all(|k| step.w_next[k] == 1.0));
}

#[test]
fn invalid_inputs_are_rejected() {
    let m = mask(17);
    let g = m.grid();
    let bad_psi = AbreuProblem::new(
        m.clone(),
        ScalarField::constant(g, 0.0),
        ScalarField::constant(g, 0.0),
        rochet_chone(Gamma::Constant(1.0), 1.0, &m).unwrap(),
        Gauge::log(),
        Penalization::FixedDelta(0.1),
        RhsMode::Penalized,
    );
    assert!(matches!(bad_psi, Err(Error::InvalidInput(_))));
    assert!(rc_problem(&m, 0.0, Penalization::Continuation(0.1)).is_err());
    assert!(rc_problem(&m, 1.0, Penalization::FixedDelta(0.0)).is_err());

    let prob = rc_problem(&m, 1.0, Penalization::Continuation(0.2)).unwrap();
    let cfg = HomotopyConfig::default();
    assert!(matches!(epsilon_continuation(&prob, &[0.1, 0.2], &cfg, false), Err(Error::Config(_))));
    assert!(matches!(epsilon_continuation(&prob, &[0.1, 0.0], &cfg, false), Err(Error::Config(_))));
    let w = ScalarField::constant(g, 1.0);
    assert!(phi_t_step(&w, 1.5, 1.0, &prob, &cfg, None).is_err());
    assert!(phi_t_step(&w, 0.5, 0.0, &prob, &cfg, None).is_err());
}

#[test]
fn oracle_objective_is_monotone_and_audited() {
    let m = mask(33);
    let g = m.grid();
    let phi = ScalarField::from_fn(g, |x| x[0] * x[0] + x[1] * x[1]);
    let model = rochet_chone(Gamma::Constant(1.0), 1.0, &m).unwrap();
    let cfg = OracleConfig::default();
    let res = minimize_constrained(&model, &phi, &m, &cfg).unwrap();
    assert_eq!(res.status, OracleStatus::Converged);
    for w in res.history.windows(2) {
        assert!(w[1].objective <= w[0].objective + 1e-12 * (1.0 + w[0].objective.abs()), "{:?}", w);
    }
    assert!(ConvexityCone::new(&m).max_violation(&res.u) <= cfg.violation_tol);
    let j = oracle_objective(&res.u, &phi, &model, &m, cfg.pen_eps);
    assert!((j - res.objective).abs() <= 1e-12 * (1.0 + j.abs()));
    let a = audit(&res.u, &phi, &model, &m, cfg.pen_eps, 50, 5);
    assert!(a.passed(), "{a:?}");
}

#[test]
fn continuation_never_beats_the_oracle() {
    let m = mask(33);
    let g = m.grid();
    let phi = ScalarField::from_fn(g, |x| x[0] * x[0] + x[1] * x[1]);
    let model = rochet_chone(Gamma::Constant(1.0), 1.0, &m).unwrap();
    let cfg = OracleConfig::default();
    let star = minimize_constrained(&model, &phi, &m, &cfg).unwrap();
    let j_star = oracle_objective(&star.u, &phi, &model, &m, cfg.pen_eps);

    let prob = rc_problem(&m, 1.0, Penalization::Continuation(0.2)).unwrap();
    let runs = epsilon_continuation(&prob, &[0.2, 0.1], &HomotopyConfig::default(), false).unwrap();
    for e in &runs {
        assert!(e.report.converged());
        let j = oracle_objective(&e.report.u, &phi, &model, &m, cfg.pen_eps);
        assert!(j - j_star >= -1e-6 * (1.0 + j_star.abs()), "eps {}: {j} < {j_star}", e.eps);
    }
}
