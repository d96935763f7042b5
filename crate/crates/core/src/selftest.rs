//! Closed-form sanity checks: quadratic and cubic stencil exactness,
//! cofactor identities, gauge inverses, trivial minimizers. Each case is
//! cheap (grids of at most 65^2) and deterministic.

use std::sync::Arc;

use crate::abreu::{
    assemble_rhs, boundary_diagnostics, multiplier_field, phi_t_step, AbreuProblem, HomotopyConfig, Penalization, RhsMode,
};
use crate::config::RunConfig;
use crate::grid::{
    build_domain, check_discrete_convexity, cofactor, cone_linf_bound, divergence_free_defect, hessian, interior_gradient_bound,
    Direction, DomainMask, DomainShape, GridSpec, HessianField, Region, ScalarField,
};
use crate::lagrangian::{
    allen_cahn, exp_lagrangian, power_lagrangian, rochet_chone, tracking_lagrangian, verify_assumptions, Gamma, Gauge, Lagrangian,
    LagrangianModel, ModelConstants, Point, SampleRegion,
};
use crate::linalg::Sym2;
use crate::lma::{lma_maximum_principle_check, solve_lma, stencil};
use crate::monge_ampere::{ma_residual, solve_dirichlet_ma, MaConfig};
use crate::oracle::{evaluate_j, evaluate_j_eps, minimize_constrained, JEps, OracleConfig};

pub struct Case {
    pub name: &'static str,
    run: fn() -> std::result::Result<(), String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

type Check = std::result::Result<(), String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Check {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> Check {
    ensure((a - b).abs() <= tol, || format!("{what}: got {a:e}, expected {b:e} (tol {tol:e})"))
}

fn std_mask(n: usize) -> DomainMask {
    let shape = DomainShape { omega: Region::square(-1.0, 1.0), omega0: Region::square(-0.5, 0.5) };
    build_domain(&shape, GridSpec::square(n, -1.0, 1.0).expect("valid grid")).expect("valid domain")
}

fn half_sq(x: Point) -> f64 {
    0.5 * (x[0] * x[0] + x[1] * x[1])
}

fn sq(x: Point) -> f64 {
    x[0] * x[0] + x[1] * x[1]
}

fn err(e: crate::Error) -> String {
    e.to_string()
}

fn rc_problem(m: &DomainMask, rho: f64, pen: Penalization) -> crate::Result<AbreuProblem> {
    let g = m.grid();
    AbreuProblem::new(
        m.clone(),
        ScalarField::from_fn(g, half_sq),
        ScalarField::constant(g, 1.0),
        rochet_chone(Gamma::Constant(1.0), rho, m)?,
        Gauge::log(),
        pen,
        RhsMode::Penalized,
    )
}

fn hessian_entries(u: &ScalarField, m: &DomainMask, f: impl Fn(Point, Sym2) -> f64, tol: f64, what: &str) -> Check {
    let h = hessian(u, m);
    for &k in m.unknowns() {
        let e = f(m.grid().point(k), h.at(k).unwrap());
        ensure(e <= tol, || format!("{what}: error {e:e} at node {k}"))?;
    }
    Ok(())
}

fn single_cofactor(h: Sym2) -> Sym2 {
    let g = GridSpec::square(5, 0.0, 1.0).unwrap();
    let mut entries = vec![None; g.len()];
    entries[12] = Some(h);
    cofactor(&HessianField::from_entries(g, entries).unwrap()).at(12).unwrap()
}

fn sym_close(a: Sym2, b: Sym2, what: &str) -> Check {
    ensure((a.a11 - b.a11).abs() + (a.a12 - b.a12).abs() + (a.a22 - b.a22).abs() < 1e-14, || {
        format!("{what}: got {a:?}, expected {b:?}")
    })
}

struct NegativeQuadratic;

impl Lagrangian for NegativeQuadratic {
    fn f0_energy(&self, _: Point, _: f64) -> f64 {
        0.0
    }
    fn f0(&self, _: Point, _: f64) -> f64 {
        0.0
    }
    fn f1(&self, _: Point, p: Point) -> f64 {
        -(p[0] * p[0] + p[1] * p[1])
    }
    fn grad_p_f1(&self, _: Point, p: Point) -> Point {
        [-2.0 * p[0], -2.0 * p[1]]
    }
    fn hess_p_f1(&self, _: Point, _: Point) -> Sym2 {
        Sym2::diag(-2.0, -2.0)
    }
    fn cross_f1_components(&self, _: Point, _: Point) -> Point {
        [0.0, 0.0]
    }
}

pub fn cases() -> Vec<Case> {
    vec![
        Case { name: "grid.rectangle_mask_65", run: || {
            let m = std_mask(65);
            ensure(m.omega0().len() == 33 * 33, || format!("Omega0 has {} nodes", m.omega0().len()))
        }},
        Case { name: "grid.disk_touching_boundary_rejected", run: || {
            let shape = DomainShape { omega: Region::square(-1.0, 1.0), omega0: Region::Disk { center: [0.0, 0.0], radius: 0.999 } };
            ensure(build_domain(&shape, GridSpec::square(65, -1.0, 1.0).unwrap()).is_err(), || "accepted".into())
        }},
        Case { name: "grid.coarse_omega0_rejected", run: || {
            let shape = DomainShape { omega: Region::square(0.0, 1.0), omega0: Region::square(0.25, 0.75) };
            ensure(build_domain(&shape, GridSpec::square(5, 0.0, 1.0).unwrap()).is_err(), || "accepted".into())
        }},
        Case { name: "grid.hessian_quadratic_exact", run: || {
            let m = std_mask(17);
            let u = ScalarField::from_fn(m.grid(), half_sq);
            hessian_entries(&u, &m, |_, h| (h.a11 - 1.0).abs().max((h.a22 - 1.0).abs()).max(h.a12.abs()), 1e-12, "D2 of |x|^2/2")
        }},
        Case { name: "grid.hessian_cubic_exact", run: || {
            let m = std_mask(17);
            let u = ScalarField::from_fn(m.grid(), |x| x[0].powi(3));
            hessian_entries(&u, &m, |x, h| (h.a11 - 6.0 * x[0]).abs(), 1e-11, "u11 of x1^3")
        }},
        Case { name: "grid.cofactor_identity", run: || sym_close(single_cofactor(Sym2::IDENTITY), Sym2::IDENTITY, "cof I") },
        Case { name: "grid.cofactor_diagonal_swap", run: || sym_close(single_cofactor(Sym2::diag(2.0, 3.0)), Sym2::diag(3.0, 2.0), "cof diag") },
        Case { name: "grid.cofactor_direct", run: || {
            sym_close(single_cofactor(Sym2::new(2.0, 1.0, 2.0)), Sym2::new(2.0, -1.0, 2.0), "cof [[2,1],[1,2]]")
        }},
        Case { name: "grid.divergence_free_cubic", run: || {
            let m = std_mask(17);
            let u = ScalarField::from_fn(m.grid(), |x| x[0].powi(3) + x[1].powi(3));
            let d = divergence_free_defect(&cofactor(&hessian(&u, &m)));
            let e = d[0].max_abs_on(0..m.grid().len()).max(d[1].max_abs_on(0..m.grid().len()));
            ensure(e <= 1e-12, || format!("defect {e:e}"))
        }},
        Case { name: "grid.divergence_free_quadratic", run: || {
            let m = std_mask(17);
            let u = ScalarField::from_fn(m.grid(), half_sq);
            let d = divergence_free_defect(&cofactor(&hessian(&u, &m)));
            let e = d[0].max_abs_on(0..m.grid().len()).max(d[1].max_abs_on(0..m.grid().len()));
            ensure(e <= 1e-14, || format!("defect {e:e}"))
        }},
        Case { name: "grid.convexity_quadratic", run: || {
            let m = std_mask(17);
            let v = check_discrete_convexity(&ScalarField::from_fn(m.grid(), half_sq), &m, 1e-12);
            ensure(v.is_empty(), || format!("{} violations", v.len()))
        }},
        Case { name: "grid.convexity_concave", run: || {
            let m = std_mask(17);
            let v = check_discrete_convexity(&ScalarField::from_fn(m.grid(), |x| -half_sq(x)), &m, 1e-12);
            let mut nodes: Vec<usize> = v.iter().map(|c| c.node).collect();
            nodes.dedup();
            ensure(nodes == m.unknowns(), || format!("{} of {} nodes flagged", nodes.len(), m.unknowns().len()))
        }},
        Case { name: "grid.convexity_saddle", run: || {
            let m = std_mask(17);
            let v = check_discrete_convexity(&ScalarField::from_fn(m.grid(), |x| x[0] * x[0] - x[1] * x[1]), &m, 1e-12);
            let ys: Vec<usize> = v.iter().filter(|c| c.direction == Direction::Y).map(|c| c.node).collect();
            ensure(ys == m.unknowns(), || format!("{} of {} nodes fail along x2", ys.len(), m.unknowns().len()))
        }},
        Case { name: "grid.cone_bound_constant", run: || {
            let m = std_mask(17);
            let b = cone_linf_bound(&ScalarField::constant(m.grid(), -1.0), &m).map_err(err)?;
            close(b.lhs, 1.0, 1e-14, "lhs")?;
            close(b.rhs, 3.0, 1e-12, "rhs")?;
            ensure(b.holds(m.grid().h()), || "bound fails".into())
        }},
        Case { name: "grid.gradient_bound_zero", run: || {
            let m = std_mask(17);
            let b = interior_gradient_bound(&ScalarField::constant(m.grid(), 0.0), &m);
            close(b.max_gradient, 0.0, 0.0, "gradient")?;
            close(b.bound, 0.0, 0.0, "bound")
        }},
        Case { name: "grid.gradient_bound_quadratic", run: || {
            let m = std_mask(17);
            let b = interior_gradient_bound(&ScalarField::from_fn(m.grid(), half_sq), &m);
            close(b.max_gradient, 0.5f64.sqrt(), 1e-12, "max |Du|")?;
            // max over the boundary is 1, at the corners
            close(b.bound, 4.0, 1e-12, "bound")?;
            ensure(b.holds(m.grid().h()), || "bound fails".into())
        }},
        Case { name: "model.rochet_chone_constant_gamma", run: || {
            let m = std_mask(17);
            let rc = rochet_chone(Gamma::Constant(1.0), 0.0, &m).map_err(err)?;
            let (x, p) = ([0.3, -0.2], [1.1, 0.4]);
            let g = rc.grad_p_f1(x, p);
            close(g[0], p[0] - x[0], 1e-15, "grad_p F1 [0]")?;
            close(g[1], p[1] - x[1], 1e-15, "grad_p F1 [1]")?;
            close(rc.cross_f1(x, p), -2.0, 1e-15, "cross F1")?;
            let rc = rochet_chone(Gamma::Constant(1.0), 1.0, &m).map_err(err)?;
            close(rc.f0([0.7, 0.1], 2.0), 3.0, 1e-15, "f0")
        }},
        Case { name: "model.allen_cahn_polynomials", run: || {
            let ac = allen_cahn();
            let x = [0.2, 0.4];
            close(ac.f0(x, 0.0), 0.0, 0.0, "f0(0)")?;
            close(ac.f0(x, 1.0), 0.0, 0.0, "f0(1)")?;
            close(ac.f0(x, 2.0), 6.0, 0.0, "f0(2)")?;
            close(ac.f0_energy(x, 1.0), 0.0, 0.0, "F0(1)")?;
            close(ac.f0_energy(x, -1.0), 0.0, 0.0, "F0(-1)")?;
            sym_close(ac.hess_p_f1(x, [3.0, -7.0]), Sym2::IDENTITY, "hess_p F1")
        }},
        Case { name: "model.power_and_exp_at_origin", run: || {
            let p2 = power_lagrangian(2).map_err(err)?;
            let g = p2.grad_p_f1([0.0, 0.0], [0.3, -1.2]);
            close(g[0], 0.3, 1e-15, "grad [0]")?;
            close(g[1], -1.2, 1e-15, "grad [1]")?;
            sym_close(exp_lagrangian().hess_p_f1([0.0, 0.0], [0.0, 0.0]), Sym2::IDENTITY, "exp hess at 0")
        }},
        Case { name: "model.allen_cahn_fails_monotonicity", run: || {
            let m = std_mask(17);
            let rep = verify_assumptions(&allen_cahn(), &SampleRegion::from_mask(&m, [-2.0, 2.0], 2.0), 50, 1);
            let c = rep.get("AsF0").ok_or("no AsF0 check")?;
            ensure(!c.passed && c.witness.is_some(), || format!("AsF0 passed={} witness={:?}", c.passed, c.witness))
        }},
        Case { name: "model.negative_hessian_fails", run: || {
            let m = std_mask(17);
            let consts = ModelConstants { rho: 0.0, c0: 0.0, c_star: 2.0, c0_bar: 2.0, c_star_bar: 0.0 };
            let model = LagrangianModel::custom("negative", Arc::new(NegativeQuadratic), consts, Arc::new(|r| 2.0 * (1.0 + r)), false);
            let rep = verify_assumptions(&model, &SampleRegion::from_mask(&m, [-2.0, 2.0], 2.0), 50, 1);
            ensure(!rep.get("AsH").ok_or("no AsH check")?.passed, || "AsH passed".into())
        }},
        Case { name: "gauge.log", run: || {
            let g = Gauge::log();
            close(g.eval(4.0).map_err(err)?.g_prime, 0.25, 0.0, "G'(4)")?;
            close(g.invert(0.25).map_err(err)?, 4.0, 0.0, "inverse")
        }},
        Case { name: "gauge.power_quarter", run: || {
            let g = Gauge::power(0.25).map_err(err)?;
            close(g.eval(16.0).map_err(err)?.g_prime, 0.125, 1e-15, "G'(16)")?;
            close(g.invert(0.125).map_err(err)?, 16.0, 1e-12, "inverse")
        }},
        Case { name: "gauge.custom_exponential", run: || {
            let g = Gauge::custom(|d| (-d).exp(), |w| -w.ln(), None, [1e-3, 20.0]).map_err(err)?;
            for w in [0.1, 0.5, 0.9] {
                close(g.invert(w).map_err(err)?, -f64::ln(w), 1e-15, "inverse")?;
            }
            Ok(())
        }},
        Case { name: "ma.quadratic_reproduced", run: || {
            let m = std_mask(17);
            let exact = ScalarField::from_fn(m.grid(), half_sq);
            let s = solve_dirichlet_ma(&ScalarField::constant(m.grid(), 1.0), &exact, &m, &MaConfig::default()).map_err(err)?;
            let e = s.u.max_abs_diff_on(&exact, m.closure());
            ensure(s.report.converged() && e <= 1e-8, || format!("status {:?}, error {e:e}", s.report.status))
        }},
        Case { name: "ma.negative_data_rejected", run: || {
            let m = std_mask(17);
            let r = solve_dirichlet_ma(&ScalarField::constant(m.grid(), -1.0), &ScalarField::constant(m.grid(), 0.0), &m, &MaConfig::default());
            ensure(matches!(r, Err(crate::Error::Domain(_))), || "not a domain error".into())
        }},
        Case { name: "ma.residual_examples", run: || {
            let m = std_mask(17);
            let u = ScalarField::from_fn(m.grid(), half_sq);
            let r1 = ma_residual(&u, &ScalarField::constant(m.grid(), 1.0), &m);
            ensure(r1.max_abs_on(0..m.grid().len()) <= 1e-14, || "residual with g = 1".into())?;
            let r2 = ma_residual(&u, &ScalarField::constant(m.grid(), 2.0), &m);
            ensure(m.unknowns().iter().all(|&k| (r2[k] + 1.0).abs() <= 1e-14), || "residual with g = 2".into())
        }},
        Case { name: "lma.laplacian_for_half_square", run: || {
            let m = std_mask(17);
            let h = m.grid().h();
            let hess = hessian(&ScalarField::from_fn(m.grid(), half_sq), &m);
            let k = m.unknowns()[0];
            let w = stencil(hess.at(k).unwrap().cofactor(), h, h);
            let expect = |di: isize, dj: isize| match (di, dj) {
                (0, 0) => -4.0 / (h * h),
                (a, b) if a == 0 || b == 0 => 1.0 / (h * h),
                _ => 0.0,
            };
            ensure(w.iter().all(|&(di, dj, c)| (c - expect(di, dj)).abs() <= 1e-9 / (h * h)), || format!("{w:?}"))
        }},
        Case { name: "lma.diagonal_cofactor_swap", run: || {
            let m = std_mask(17);
            let hess = hessian(&ScalarField::from_fn(m.grid(), |x| x[0] * x[0] + 0.5 * x[1] * x[1]), &m);
            let u = hess.at(m.unknowns()[0]).unwrap().cofactor();
            close(u.a11, 1.0, 1e-10, "U11")?;
            close(u.a22, 2.0, 1e-10, "U22")?;
            close(u.a12, 0.0, 1e-10, "U12")
        }},
        Case { name: "lma.off_diagonal_coefficient", run: || {
            let m = std_mask(17);
            let hess = hessian(&ScalarField::from_fn(m.grid(), |x| half_sq(x) + 0.5 * x[0] * x[1]), &m);
            let u = hess.at(m.unknowns()[0]).unwrap().cofactor();
            close(2.0 * u.a12, -1.0, 1e-10, "2 U12")?;
            close(u.det(), 0.75, 1e-10, "det U")
        }},
        Case { name: "lma.harmonic_polynomial", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let psi = ScalarField::from_fn(g, |x| x[0] * x[0] - x[1] * x[1]);
            let w = solve_lma(&ScalarField::from_fn(g, half_sq), &ScalarField::constant(g, 0.0), &psi, &m).map_err(err)?;
            let e = w.max_abs_diff_on(&psi, m.closure());
            ensure(e <= 1e-12, || format!("error {e:e}"))
        }},
        Case { name: "lma.poisson_square", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let psi = ScalarField::from_fn(g, sq);
            let f = ScalarField::constant(g, 4.0);
            let w = solve_lma(&ScalarField::from_fn(g, half_sq), &f, &psi, &m).map_err(err)?;
            let e = w.max_abs_diff_on(&psi, m.closure());
            ensure(e <= 1e-12, || format!("error {e:e}"))?;
            let rep = lma_maximum_principle_check(&f, &w, &m);
            ensure(rep.applicable && rep.passed, || format!("{rep:?}"))
        }},
        Case { name: "lma.maximum_principle_harmonic", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let psi = ScalarField::from_fn(g, |x| 1.5 + 0.5 * x[0] * x[1]);
            let zero = ScalarField::constant(g, 0.0);
            let w = solve_lma(&ScalarField::from_fn(g, half_sq), &zero, &psi, &m).map_err(err)?;
            let rep = lma_maximum_principle_check(&zero, &w, &m);
            ensure(rep.passed && rep.interior_range[0] >= 1.0 - 1e-8 && rep.interior_range[1] <= 2.0 + 1e-8, || format!("{rep:?}"))
        }},
        Case { name: "lma.maximum_principle_superharmonic", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let f = ScalarField::constant(g, -1.0);
            let w = solve_lma(&ScalarField::from_fn(g, half_sq), &f, &ScalarField::constant(g, 1.0), &m).map_err(err)?;
            let rep = lma_maximum_principle_check(&f, &w, &m);
            ensure(rep.passed && m.unknowns().iter().all(|&k| w[k] > 1.0), || format!("{rep:?}"))
        }},
        Case { name: "outer.penalty_vanishes_on_phi", run: || {
            let m = std_mask(17);
            let prob = rc_problem(&m, 0.0, Penalization::FixedDelta(0.1)).map_err(err)?;
            let f = assemble_rhs(prob.phi(), &prob);
            ensure(m.unknowns().iter().filter(|&&k| !m.class(k).in_omega0()).all(|&k| f[k] == 0.0), || "nonzero penalty".into())
        }},
        Case { name: "outer.allen_cahn_rhs", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let prob = AbreuProblem::new(
                m.clone(),
                ScalarField::from_fn(g, sq),
                ScalarField::constant(g, 1.0),
                allen_cahn(),
                Gauge::log(),
                Penalization::FixedDelta(1.0),
                RhsMode::AllenCahn,
            )
            .map_err(err)?;
            let u = ScalarField::from_fn(g, half_sq);
            let f = assemble_rhs(&u, &prob);
            for &k in m.unknowns() {
                close(f[k], u[k].powi(3) - u[k] - 2.0, 1e-10, "f")?;
            }
            Ok(())
        }},
        Case { name: "outer.w_below_floor_rejected", run: || {
            let m = std_mask(17);
            let prob = rc_problem(&m, 1.0, Penalization::FixedDelta(0.1)).map_err(err)?;
            let mut w = ScalarField::constant(m.grid(), 1.0);
            w[m.unknowns()[3]] = 0.0;
            ensure(phi_t_step(&w, 0.5, 1.0, &prob, &HomotopyConfig::default(), None).is_err(), || "accepted".into())
        }},
        Case { name: "outer.psi_vanishing_rejected", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let psi = ScalarField::from_fn(g, |x| 1.0 - x[0].abs());
            let r = AbreuProblem::new(
                m.clone(),
                ScalarField::from_fn(g, sq),
                psi,
                rochet_chone(Gamma::Constant(1.0), 1.0, &m).map_err(err)?,
                Gauge::log(),
                Penalization::FixedDelta(0.1),
                RhsMode::Penalized,
            );
            ensure(r.is_err(), || "accepted".into())
        }},
        Case { name: "outer.continuation_needs_rho", run: || {
            let m = std_mask(17);
            ensure(rc_problem(&m, 0.0, Penalization::Continuation(0.1)).is_err(), || "accepted".into())
        }},
        Case { name: "outer.multiplier_field", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let a = multiplier_field(&ScalarField::from_fn(g, half_sq), 0.1, &m).map_err(err)?;
            let b = multiplier_field(&ScalarField::from_fn(g, |x| x[0] * x[0] + 0.5 * x[1] * x[1]), 1.0, &m).map_err(err)?;
            for &k in m.unknowns() {
                let (ma, mb) = (a[k].unwrap(), b[k].unwrap());
                close(ma.a11, 0.1, 1e-10, "0.1 I (11)")?;
                close(ma.a22, 0.1, 1e-10, "0.1 I (22)")?;
                close(ma.a12, 0.0, 1e-10, "0.1 I (12)")?;
                close(mb.a11, 0.5, 1e-10, "diag(1/2, 1) (11)")?;
                close(mb.a22, 1.0, 1e-10, "diag(1/2, 1) (22)")?;
                ensure(ma.eigenvalues()[0] >= 0.0 && mb.eigenvalues()[0] >= 0.0, || "negative eigenvalue".into())?;
            }
            Ok(())
        }},
        Case { name: "outer.boundary_integrals_of_zero", run: || {
            let m = std_mask(17);
            let zero = ScalarField::constant(m.grid(), 0.0);
            let b = boundary_diagnostics(&zero, &ScalarField::constant(m.grid(), 1.0), &m);
            ensure(b.flux_sq == 0.0 && b.curvature_flux == 0.0 && b.max_flux == 0.0, || format!("{b:?}"))
        }},
        Case { name: "oracle.j_examples", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let rc = rochet_chone(Gamma::Constant(1.0), 0.0, &m).map_err(err)?;
            close(evaluate_j(&ScalarField::from_fn(g, half_sq), &rc, &m), 0.0, 1e-12, "J(|x|^2/2)")?;
            close(evaluate_j(&ScalarField::constant(g, 0.0), &rc, &m), 0.0, 1e-15, "J(0)")?;
            close(evaluate_j(&ScalarField::constant(g, 1.0), &rc, &m), 1.0, 1e-12, "J(1)")
        }},
        Case { name: "oracle.j_eps_examples", run: || {
            let m = std_mask(17);
            let g = m.grid();
            let rc = rochet_chone(Gamma::Constant(1.0), 0.0, &m).map_err(err)?;
            let u = ScalarField::from_fn(g, half_sq);
            for eps in [1.0, 0.5] {
                match evaluate_j_eps(&u, &u, &rc, &Gauge::log(), eps, &m).map_err(err)? {
                    JEps::Value(v) => close(v, 0.0, 1e-12, "J_eps")?,
                    JEps::Infeasible => return Err("infeasible".into()),
                }
            }
            let affine = ScalarField::from_fn(g, |x| 0.3 * x[0] - x[1]);
            let r = evaluate_j_eps(&affine, &u, &rc, &Gauge::log(), 1.0, &m).map_err(err)?;
            ensure(r == JEps::Infeasible, || format!("{r:?}"))
        }},
        Case { name: "oracle.convex_target_is_minimizer", run: || {
            let m = std_mask(17);
            let q = |x: Point| half_sq(x) + 0.25;
            let model = tracking_lagrangian(q, 1.0);
            let phi = ScalarField::from_fn(m.grid(), q);
            let r = minimize_constrained(&model, &phi, &m, &OracleConfig::default()).map_err(err)?;
            let e = r.u.max_abs_diff_on(&phi, m.closure());
            ensure(e <= 1e-6, || format!("|u* - q| = {e:e}"))
        }},
        Case { name: "cli.theta_out_of_range", run: || {
            match RunConfig::parse("solver.theta = 0.7") {
                Err(crate::Error::Config(msg)) if msg.contains("[0, 0.5)") => Ok(()),
                other => Err(format!("{other:?}")),
            }
        }},
    ]
}

/// Runs every case in order.
pub fn run_all() -> Vec<CaseResult> {
    cases()
        .into_iter()
        .map(|c| {
            let r = std::panic::catch_unwind(c.run).unwrap_or_else(|_| Err("panicked".into()));
            CaseResult { name: c.name, passed: r.is_ok(), detail: r.err().unwrap_or_default() }
        })
        .collect()
}
