//! Property tests of the structural invariants.

use abreu::grid::*;
use abreu::lagrangian::{allen_cahn, exp_lagrangian, power_lagrangian, rochet_chone, Gamma, Gauge, LagrangianModel};
use abreu::linalg::Sym2;
use abreu::lma::solve_lma;
use abreu::monge_ampere::{solve_dirichlet_ma, MaConfig};
use abreu::oracle::ConvexityCone;
use proptest::prelude::*;

fn mask(n: usize) -> DomainMask {
    let shape = DomainShape { omega: Region::square(-1.0, 1.0), omega0: Region::square(-0.5, 0.5) };
    build_domain(&shape, GridSpec::square(n, -1.0, 1.0).unwrap()).unwrap()
}

fn r2(x: [f64; 2]) -> f64 {
    x[0] * x[0] + x[1] * x[1]
}

/// `max_i (a_i . x + c_i)`, shifted so its maximum over the boundary is 0.
fn max_affine(m: &DomainMask, planes: &[(f64, f64, f64)]) -> ScalarField {
    let raw = ScalarField::from_fn(m.grid(), |x| planes.iter().map(|p| p.0 * x[0] + p.1 * x[1] + p.2).fold(f64::MIN, f64::max));
    let top = raw.max_on(m.boundary().iter().copied());
    raw.map(|v| v - top)
}

fn planes() -> impl Strategy<Value = Vec<(f64, f64, f64)>> {
    prop::collection::vec((-3.0..3.0f64, -3.0..3.0f64, -1.0..1.0f64), 1..20)
}

/// A convex quadratic `a x^2 + c xy + b y^2 + l . x` with `4ab > c^2`.
fn convex_quadratic() -> impl Strategy<Value = [f64; 5]> {
    (0.1..3.0f64, 0.1..3.0f64, -0.9..0.9f64, -1.0..1.0f64, -1.0..1.0f64)
        .prop_map(|(a, b, t, l1, l2)| [a, b, 2.0 * t * (a * b).sqrt(), l1, l2])
}

fn quad(q: [f64; 5]) -> impl Fn([f64; 2]) -> f64 {
    move |x| q[0] * x[0] * x[0] + q[2] * x[0] * x[1] + q[1] * x[1] * x[1] + q[3] * x[0] + q[4] * x[1]
}

fn fd_check(model: &LagrangianModel, x: [f64; 2], p: [f64; 2]) -> Result<(), TestCaseError> {
    let close = |a: f64, b: f64| (a - b).abs() <= 1e-6 * (1.0 + a.abs().max(b.abs()));
    let hp = 1e-5 * (1.0 + r2(p).sqrt());
    let g = model.grad_p_f1(x, p);
    let h = model.hess_p_f1(x, p);
    for i in 0..2 {
        let (mut pp, mut pm) = (p, p);
        pp[i] += hp;
        pm[i] -= hp;
        let fd = (model.f1(x, pp) - model.f1(x, pm)) / (2.0 * hp);
        prop_assert!(close(g[i], fd), "{} grad_p[{i}] {} vs fd {fd}", model.name(), g[i]);
        let gp = model.grad_p_f1(x, pp);
        let gm = model.grad_p_f1(x, pm);
        let row = if i == 0 { [h.a11, h.a12] } else { [h.a12, h.a22] };
        for j in 0..2 {
            let fd = (gp[j] - gm[j]) / (2.0 * hp);
            prop_assert!(close(row[j], fd), "{} hess_p[{i}][{j}] {} vs fd {fd}", model.name(), row[j]);
        }
    }
    // cross term: x-divergence of x -> grad_p F1(x, p) at frozen p
    let hx = 1e-5;
    let mut div = 0.0;
    for i in 0..2 {
        let (mut xp, mut xm) = (x, x);
        xp[i] += hx;
        xm[i] -= hx;
        div += (model.grad_p_f1(xp, p)[i] - model.grad_p_f1(xm, p)[i]) / (2.0 * hx);
    }
    let c = model.cross_f1(x, p);
    prop_assert!(close(c, div), "{} cross {c} vs fd {div}", model.name());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hessian_exact_on_quadratics(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64, l1 in -2.0..2.0f64, l2 in -2.0..2.0f64, k in -2.0..2.0f64) {
        let m = mask(17);
        let u = ScalarField::from_fn(m.grid(), |x| 0.5 * a * x[0] * x[0] + c * x[0] * x[1] + 0.5 * b * x[1] * x[1] + l1 * x[0] + l2 * x[1] + k);
        let hs = hessian(&u, &m);
        let scale = 1.0 + a.abs().max(b.abs()).max(c.abs());
        for &n in m.unknowns() {
            let h = hs.at(n).unwrap();
            prop_assert!((h.a11 - a).abs() <= 1e-12 * scale);
            prop_assert!((h.a12 - c).abs() <= 1e-12 * scale);
            prop_assert!((h.a22 - b).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn cofactor_determinant_identity(a in -5.0..5.0f64, b in -5.0..5.0f64, c in -5.0..5.0f64) {
        let s = Sym2::new(a, c, b);
        let cof = s.cofactor();
        let d = s.det();
        // A cof(A) = det(A) I
        prop_assert!((s.a11 * cof.a11 + s.a12 * cof.a12 - d).abs() <= 1e-12 * (1.0 + d.abs()));
        prop_assert!((s.a11 * cof.a12 + s.a12 * cof.a22).abs() <= 1e-12 * (1.0 + d.abs()));
        prop_assert!((s.a12 * cof.a12 + s.a22 * cof.a22 - d).abs() <= 1e-12 * (1.0 + d.abs()));
        prop_assert!((0.5 * s.contract(&cof) - d).abs() <= 1e-12 * (1.0 + d.abs()));
    }

    #[test]
    fn convexity_closed_under_convex_combinations(p in planes(), q in planes(), lambda in 0.0..=1.0f64) {
        let m = mask(17);
        let u = max_affine(&m, &p);
        let v = max_affine(&m, &q);
        prop_assert!(check_discrete_convexity(&u, &m, 1e-12).is_empty());
        prop_assert!(check_discrete_convexity(&v, &m, 1e-12).is_empty());
        let mix = u.zip_map(&v, |a, b| lambda * a + (1.0 - lambda) * b);
        prop_assert!(check_discrete_convexity(&mix, &m, 1e-12).is_empty());
    }

    #[test]
    fn convex_field_bounds_hold(p in planes()) {
        let m = mask(33);
        let u = max_affine(&m, &p);
        let h = m.grid().h();
        prop_assert!(cone_linf_bound(&u, &m).unwrap().holds(h));
        prop_assert!(interior_gradient_bound(&u, &m).holds(h));
    }

    #[test]
    fn gauge_round_trip(e in -6.0..6.0f64, theta in 0.0..0.49f64) {
        let d = 10f64.powf(e);
        for gauge in [Gauge::log(), Gauge::power(theta).unwrap()] {
            let w = gauge.eval(d).unwrap().g_prime;
            let back = gauge.invert(w).unwrap();
            prop_assert!((back - d).abs() <= 1e-12 * d, "theta {theta}: {back} vs {d}");
        }
    }

    #[test]
    fn model_derivatives_match_finite_differences(x0 in -0.5..0.5f64, x1 in -0.5..0.5f64, p0 in -2.0..2.0f64, p1 in -2.0..2.0f64, s in 2u32..6) {
        let m = mask(17);
        let x = [x0, x1];
        let p = [p0, p1];
        let models = [
            rochet_chone(Gamma::Constant(1.0), 1.0, &m).unwrap(),
            rochet_chone(Gamma::Affine { c: 1.0, slope: [0.1, -0.2] }, 0.5, &m).unwrap(),
            rochet_chone(Gamma::Bump { center: [0.0, 0.0], half_widths: [0.6, 0.6] }, 1.0, &m).unwrap(),
            allen_cahn(),
            power_lagrangian(s).unwrap(),
            exp_lagrangian(),
        ];
        for model in &models {
            fd_check(model, x, p)?;
        }
    }

    #[test]
    fn cone_rows_sign_on_paraboloids(n in 17usize..40) {
        let m = mask(n);
        let up = ScalarField::from_fn(m.grid(), |x| 0.5 * r2(x));
        let down = up.map(|v| -v);
        let cone = ConvexityCone::new(&m);
        for row in cone.rows() {
            prop_assert!(row.eval(&up) >= 0.0);
            prop_assert!(row.eval(&down) <= 0.0);
        }
    }

    #[test]
    fn projection_is_idempotent_on_feasible_fields(q in convex_quadratic()) {
        let m = mask(17);
        let u = ScalarField::from_fn(m.grid(), quad(q));
        let cone = ConvexityCone::new(&m);
        let p = cone.project(&u, &m, 1e-14).unwrap();
        prop_assert!(p.max_abs_diff_on(&u, m.closure()) <= 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn lma_is_linear(q in convex_quadratic(), alpha in -2.0..2.0f64, beta in -2.0..2.0f64, c1 in -1.0..1.0f64, c2 in -1.0..1.0f64) {
        let m = mask(17);
        let g = m.grid();
        let u = ScalarField::from_fn(g, |x| quad(q)(x) + 0.1 * (0.5 * r2(x)).exp());
        let f1 = ScalarField::from_fn(g, |x| 1.0 + c1 * x[0]);
        let f2 = ScalarField::from_fn(g, |x| c2 * x[1] * x[1] - 0.5);
        let psi1 = ScalarField::from_fn(g, |x| 1.0 + 0.3 * x[0]);
        let psi2 = ScalarField::from_fn(g, |x| x[1] - c1);
        let lhs = solve_lma(
            &u,
            &f1.zip_map(&f2, |a, b| alpha * a + beta * b),
            &psi1.zip_map(&psi2, |a, b| alpha * a + beta * b),
            &m,
        ).unwrap();
        let w1 = solve_lma(&u, &f1, &psi1, &m).unwrap();
        let w2 = solve_lma(&u, &f2, &psi2, &m).unwrap();
        let rhs = w1.zip_map(&w2, |a, b| alpha * a + beta * b);
        let scale = 1.0 + rhs.max_abs_on(m.closure());
        prop_assert!(lhs.max_abs_diff_on(&rhs, m.closure()) <= 1e-10 * scale);
    }

    #[test]
    fn monge_ampere_comparison(a in 0.5..2.0f64, bump in 0.0..1.0f64) {
        // g <= g~ with equal boundary data gives u >= u~
        let m = mask(17);
        let g = m.grid();
        let phi = ScalarField::from_fn(g, |x| 0.5 * r2(x));
        let lo = ScalarField::from_fn(g, |x| a * (1.0 + 0.2 * x[0] * x[0]));
        let hi = ScalarField::from_fn(g, |x| a * (1.0 + 0.2 * x[0] * x[0]) + bump * (1.0 - r2(x) / 2.0));
        let cfg = MaConfig::default();
        let u = solve_dirichlet_ma(&lo, &phi, &m, &cfg).unwrap();
        let ut = solve_dirichlet_ma(&hi, &phi, &m, &cfg).unwrap();
        prop_assert!(u.report.converged() && ut.report.converged());
        for k in m.closure() {
            prop_assert!(u.u[k] >= ut.u[k] - 10.0 * cfg.newton_tol, "node {k}: {} < {}", u.u[k], ut.u[k]);
        }
    }
}
