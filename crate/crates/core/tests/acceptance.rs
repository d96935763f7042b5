//! End-to-end acceptance suite: one line per criterion, PASS or FAIL, with
//! the measured quantities. Exits non-zero on failure only when
//! `ACCEPTANCE_STRICT` is set, so that a documented, known failure does not
//! mask the rest of the test run.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use abreu::abreu::{phi_t_step, solve_abreu, solve_abreu_from, AbreuProblem, HomotopyConfig, Penalization, RhsMode, WarmStart};
use abreu::config::RunConfig;
use abreu::grid::*;
use abreu::lagrangian::{rochet_chone, tracking_lagrangian, Gamma, Gauge};
use abreu::lma::solve_lma;
use abreu::monge_ampere::{solve_dirichlet_ma, MaConfig};
use abreu::oracle::{audit, minimize_constrained, minimize_constrained_from, ConvexityCone, OracleConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = (bool, String);

fn mask(n: usize) -> DomainMask {
    let shape = DomainShape { omega: Region::square(-1.0, 1.0), omega0: Region::square(-0.5, 0.5) };
    build_domain(&shape, GridSpec::square(n, -1.0, 1.0).unwrap()).unwrap()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> RunConfig {
    RunConfig::from_file(&configs().join(name)).unwrap()
}

fn ratio_ok(r: f64) -> bool {
    (3.0..=5.0).contains(&r)
}

fn r2(x: [f64; 2]) -> f64 {
    x[0] * x[0] + x[1] * x[1]
}

fn c1_monge_ampere() -> Outcome {
    let m = mask(33);
    let exact = ScalarField::from_fn(m.grid(), |x| 0.5 * r2(x));
    let q = solve_dirichlet_ma(&ScalarField::constant(m.grid(), 1.0), &exact, &m, &MaConfig::default()).unwrap();
    let eq = q.u.max_abs_diff_on(&exact, m.closure());
    let errs: Vec<f64> = [33, 65]
        .iter()
        .map(|&n| {
            let m = mask(n);
            let g = m.grid();
            let u = ScalarField::from_fn(g, |x| (0.5 * r2(x)).exp());
            let data = ScalarField::from_fn(g, |x| (1.0 + r2(x)) * r2(x).exp());
            let s = solve_dirichlet_ma(&data, &u, &m, &MaConfig::default()).unwrap();
            assert!(s.report.converged());
            s.u.max_abs_diff_on(&u, m.closure())
        })
        .collect();
    let r = errs[0] / errs[1];
    (eq <= 1e-8 && ratio_ok(r), format!("quadratic error {eq:.1e}; exp errors {:.3e} -> {:.3e}, ratio {r:.3}", errs[0], errs[1]))
}

fn c2_linearized() -> Outcome {
    let m = mask(33);
    let g = m.grid();
    let psi = ScalarField::from_fn(g, |x| x[0] * x[0] - x[1] * x[1]);
    let w = solve_lma(&ScalarField::from_fn(g, |x| 0.5 * r2(x)), &ScalarField::constant(g, 0.0), &psi, &m).unwrap();
    let eh = w.max_abs_diff_on(&psi, m.closure());
    let errs: Vec<f64> = [33, 65]
        .iter()
        .map(|&n| {
            let m = mask(n);
            let g = m.grid();
            let u = ScalarField::from_fn(g, |x| (0.5 * r2(x)).exp());
            let wm = ScalarField::from_fn(g, |x| 1.0 + 0.5 * x[0] * x[0]);
            // U^11 = u_22 = e^{|x|^2/2} (1 + x2^2), and (w_m)_11 = 1 is the only second derivative
            let f = ScalarField::from_fn(g, |x| (0.5 * r2(x)).exp() * (1.0 + x[1] * x[1]));
            solve_lma(&u, &f, &wm, &m).unwrap().max_abs_diff_on(&wm, m.closure())
        })
        .collect();
    let r = errs[0] / errs[1];
    (eh <= 1e-12 && ratio_ok(r), format!("harmonic error {eh:.1e}; manufactured errors {:.3e} -> {:.3e}, ratio {r:.3}", errs[0], errs[1]))
}

fn c3_divergence_free() -> Outcome {
    let defect = |u: &ScalarField, m: &DomainMask| {
        let d = divergence_free_defect(&cofactor(&hessian(u, m)));
        d[0].max_abs_on(0..m.grid().len()).max(d[1].max_abs_on(0..m.grid().len()))
    };
    let m = mask(33);
    let cubic = defect(&ScalarField::from_fn(m.grid(), |x| x[0].powi(3) + x[1].powi(3) + x[0] * x[0] * x[1]), &m);
    let errs: Vec<f64> = [33, 65]
        .iter()
        .map(|&n| {
            let m = mask(n);
            defect(&ScalarField::from_fn(m.grid(), |x| (0.5 * r2(x)).exp()), &m)
        })
        .collect();
    let r = errs[0] / errs[1];
    (cubic <= 1e-12 && ratio_ok(r), format!("cubic defect {cubic:.1e}; exp defects {:.3e} -> {:.3e}, ratio {r:.3}", errs[0], errs[1]))
}

fn c4_manufactured_fixed_point() -> Outcome {
    let mut errs = Vec::new();
    for n in [33, 65] {
        let m = mask(n);
        let g = m.grid();
        let ustar = ScalarField::from_fn(g, |x| 0.5 * r2(x) + (x[0].powi(4) + x[1].powi(4)) / 12.0);
        // det D^2 u* = (1 + x1^2)(1 + x2^2), so w* = 1 / det
        let wstar = ScalarField::from_fn(g, |x| 1.0 / ((1.0 + x[0] * x[0]) * (1.0 + x[1] * x[1])));
        let d2 = |s: f64| (6.0 * s * s - 2.0) / (1.0 + s * s).powi(3);
        let fstar = ScalarField::from_fn(g, |x| d2(x[0]) + d2(x[1]));
        let model = rochet_chone(Gamma::Constant(1.0), 1.0, &m).unwrap();
        let prob =
            AbreuProblem::new(m.clone(), ustar.clone(), wstar.clone(), model, Gauge::log(), Penalization::FixedDelta(1.0), RhsMode::Frozen(fstar))
                .unwrap();
        let r = solve_abreu(&prob, &HomotopyConfig { outer_tol: 1e-10, ..Default::default() }).unwrap();
        if !r.converged() {
            return (false, format!("{n}^2 solve {}: {}", r.status.as_str(), r.message));
        }
        errs.push((r.u.max_abs_diff_on(&ustar, m.closure()), r.w.max_abs_diff_on(&wstar, m.closure())));
    }
    let (ru, rw) = (errs[0].0 / errs[1].0, errs[0].1 / errs[1].1);
    (
        ratio_ok(ru) && ratio_ok(rw),
        format!("u errors {:.3e} -> {:.3e} (ratio {ru:.3}), w errors {:.3e} -> {:.3e} (ratio {rw:.3})", errs[0].0, errs[1].0, errs[0].1, errs[1].1),
    )
}

fn c5_homotopy_start() -> Outcome {
    let cfg = load("fixed_delta_rc.cfg");
    let m = mask(33);
    let prob = cfg.problem(&m).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let w = ScalarField::new(m.grid(), (0..m.grid().len()).map(|_| rng.gen_range(0.5..2.0)).collect()).unwrap();
    let step = phi_t_step(&w, 0.0, 1.0, &prob, &HomotopyConfig::default(), None).unwrap();
    let exact = m.closure().all(|k| step.w_next[k] == 1.0);
    let rep = solve_abreu(&prob, &HomotopyConfig::default()).unwrap();
    let first = rep.history.iter().rfind(|r| r.t == 0.0).map_or(f64::NAN, |r| r.defect);
    (exact && first == 0.0, format!("Phi_0(w) == 1 at every node: {exact}; defect at t = 0 after the solve: {first:e}"))
}

fn c6_fixed_delta() -> Outcome {
    let mut cfg = load("fixed_delta_rc.cfg");
    let m = cfg.mask().unwrap();
    let rep = solve_abreu(&cfg.problem(&m).unwrap(), &cfg.homotopy).unwrap();
    let w_min = rep.w.min_on(m.closure());
    let viol = check_discrete_convexity(&rep.u, &m, 1e-8).len();
    let (lo, hi) = rep.diagnostics.det_range;
    cfg.n = 33;
    let mc = cfg.mask().unwrap();
    let coarse = solve_abreu(&cfg.problem(&mc).unwrap(), &cfg.homotopy).unwrap();
    let (clo, chi) = coarse.diagnostics.det_range;
    let overlap = lo.max(clo) <= hi.min(chi);
    let ok = rep.converged() && coarse.converged() && w_min > 0.0 && viol == 0 && lo > 0.0 && hi.is_finite() && overlap;
    (
        ok,
        format!(
            "65^2 {} (defect {:.1e}), min w {w_min:.4}, {viol} convexity violations, det in [{lo:.6}, {hi:.6}]; 33^2 det in [{clo:.6}, {chi:.6}], overlap {overlap}",
            rep.status.as_str(),
            rep.defect
        ),
    )
}

fn c7_epsilon_convergence() -> Outcome {
    let cfg = load("rochet_chone_rho1.cfg");
    let m = cfg.mask().unwrap();
    let orc = minimize_constrained(&cfg.build_model(&m).unwrap(), &cfg.phi_field(&m), &m, &cfg.oracle).unwrap();
    let template = cfg.problem(&m).unwrap();
    let entries = abreu::abreu::epsilon_continuation(&template, &cfg.eps_list, &cfg.homotopy, true).unwrap();
    let all_converged = entries.len() == cfg.eps_list.len() && entries.iter().all(|e| e.report.converged());
    let gaps: Vec<f64> = entries.iter().map(|e| e.report.u.max_abs_diff_on(&orc.u, m.omega0().iter().copied())).collect();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let factor = gaps[0] / gaps[gaps.len() - 1];
    let names = ["eps int u_nu^2", "rho int_Omega0 |u-phi|^2", "eps^-1 int_outer |u-phi|^2"];
    let mut ratios = Vec::new();
    for i in 0..3 {
        let v: Vec<f64> = entries.iter().map(|e| e.bounds.as_array()[i]).collect();
        let hi = v.iter().cloned().fold(f64::MIN, f64::max);
        let lo = v.iter().cloned().fold(f64::MAX, f64::min);
        ratios.push(hi / lo);
    }
    let bounded = ratios.iter().all(|&r| r <= 10.0);
    let spread = names.iter().zip(&ratios).map(|(n, r)| format!("{n} {r:.2}")).collect::<Vec<_>>().join(", ");
    let diffs: Vec<String> = entries.iter().filter_map(|e| e.diff_prev).map(|d| format!("{d:.4}")).collect();
    (
        all_converged && decreasing && factor >= 2.0 && bounded,
        format!(
            "gaps {} (decreasing {decreasing}, factor {factor:.2}); consecutive diffs {}; uniform-bound max/min ratios: {spread} (all <= 10: {bounded})",
            gaps.iter().map(|g| format!("{g:.4}")).collect::<Vec<_>>().join(" > "),
            diffs.join(", ")
        ),
    )
}

fn c8_uniqueness() -> Outcome {
    let cfg = load("uniqueness_bump.cfg");
    let m = cfg.mask().unwrap();
    let g = m.grid();
    let prob = cfg.problem(&m).unwrap();
    let cold = solve_abreu(&prob, &cfg.homotopy).unwrap();
    let bump = ScalarField::from_fn(g, |x| (3.0 * x[0]).sin() * (2.0 * x[1]).cos());
    let perturbed = WarmStart { u: cold.u.clone(), w: cold.w.zip_map(&bump, |a, b| a * (1.0 + 0.2 * b)) };
    let p = solve_abreu_from(&prob, &cfg.homotopy, Some(&perturbed)).unwrap();
    let other = solve_abreu(&prob.with_penalization(Penalization::FixedDelta(0.2)).unwrap(), &cfg.homotopy).unwrap();
    let warm = solve_abreu_from(&prob, &cfg.homotopy, Some(&WarmStart { u: other.u.clone(), w: other.w.clone() })).unwrap();
    let d = |r: &abreu::abreu::SolveReport| r.u.max_abs_diff_on(&cold.u, m.closure()).max(r.w.max_abs_diff_on(&cold.w, m.closure()));
    let (dp, dw) = (d(&p), d(&warm));
    let ok = cold.converged() && p.converged() && warm.converged() && dp <= 1e-5 && dw <= 1e-5;
    (ok, format!("max |(u, w) - cold|: perturbed {dp:.2e}, warm from delta = 0.2 {dw:.2e}; constants {:?}", prob.model().constants()))
}

fn c9_allen_cahn() -> Outcome {
    let cfg = load("allen_cahn.cfg");
    let m = cfg.mask().unwrap();
    let rep = solve_abreu(&cfg.problem(&m).unwrap(), &cfg.homotopy).unwrap();
    let viol = check_discrete_convexity(&rep.u, &m, 1e-8).len();
    let w_min = rep.w.min_on(m.closure());
    (
        rep.converged() && viol == 0 && w_min > 0.0,
        format!("{} (defect {:.1e}), {viol} convexity violations, min w {w_min:.4}, det in {:?}", rep.status.as_str(), rep.defect, rep.diagnostics.det_range),
    )
}

fn c10_oracle() -> Outcome {
    // strongly convex instance: projection of a saddle onto the cone
    let m = mask(17);
    let g = m.grid();
    let target = |x: [f64; 2]| x[0] * x[0] - 0.5 * x[1] * x[1] + 0.3 * x[0] * x[1];
    let model = tracking_lagrangian(target, 1.0);
    let phi = ScalarField::from_fn(g, r2);
    let cfg = OracleConfig { pg_tol: 1e-7, ..Default::default() };
    let base = minimize_constrained(&model, &phi, &m, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut spread: f64 = 0.0;
    for _ in 0..5 {
        let start = ScalarField::new(g, (0..g.len()).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap();
        let r = minimize_constrained_from(&model, &phi, &m, &cfg, &start).unwrap();
        spread = spread.max(r.u.max_abs_diff_on(&base.u, m.closure()));
    }

    let rc = load("rochet_chone_rho1.cfg");
    let mr = rc.mask().unwrap();
    let rphi = rc.phi_field(&mr);
    let rmodel = rc.build_model(&mr).unwrap();
    let orc = minimize_constrained(&rmodel, &rphi, &mr, &rc.oracle).unwrap();
    let a = audit(&orc.u, &rphi, &rmodel, &mr, rc.oracle.pen_eps, 100, 99);

    let cone = ConvexityCone::new(&mr);
    let feasible = ScalarField::from_fn(mr.grid(), |x| 0.7 * x[0] * x[0] + 0.2 * x[0] * x[1] + 0.4 * x[1] * x[1] - x[0]);
    let p1 = cone.project(&feasible, &mr, 1e-14).unwrap().max_abs_diff_on(&feasible, mr.closure());
    let once = cone.project(&orc.u, &mr, 1e-14).unwrap();
    let p2 = cone.project(&once, &mr, 1e-14).unwrap().max_abs_diff_on(&once, mr.closure());
    let ok = spread <= 1e-5 && a.min_gap >= -1e-8 && p1 <= 1e-12 && p2 <= 1e-12;
    (
        ok,
        format!("multi-start spread {spread:.1e}; audit min gap {:.2e} over {} points; projection moves feasible fields by {p1:.1e} / {p2:.1e}", a.min_gap, a.points),
    )
}

fn c11_convex_bounds() -> Outcome {
    let m = mask(33);
    let g = m.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut cone_fail, mut grad_fail, mut nonconvex) = (0, 0, 0);
    for _ in 0..200 {
        let planes: Vec<[f64; 3]> = (0..20).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), rng.gen_range(-1.0..1.0)]).collect();
        let raw = ScalarField::from_fn(g, |x| planes.iter().map(|p| p[0] * x[0] + p[1] * x[1] + p[2]).fold(f64::MIN, f64::max));
        let top = raw.max_on(m.boundary().iter().copied());
        let u = raw.map(|v| v - top);
        if !check_discrete_convexity(&u, &m, 1e-12).is_empty() {
            nonconvex += 1;
        }
        if !cone_linf_bound(&u, &m).unwrap().holds(g.h()) {
            cone_fail += 1;
        }
        if !interior_gradient_bound(&u, &m).holds(g.h()) {
            grad_fail += 1;
        }
    }
    (
        cone_fail == 0 && grad_fail == 0 && nonconvex == 0,
        format!("200 fields: {cone_fail} cone-bound and {grad_fail} gradient-bound violations, {nonconvex} non-convex"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_abreu")).args(args).output().map(|o| o.status.success()).unwrap_or(false)
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

fn c12_determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = configs().join("rochet_chone_rho1.cfg");
    let cfg = cfg.to_str().unwrap();
    let mut runs = Vec::new();
    for i in 0..2 {
        let st = tmp.path().join(format!("selftest{i}"));
        let cmp = tmp.path().join(format!("compare{i}"));
        if !run_cli(&["selftest", "--out", st.to_str().unwrap()]) {
            return (false, "selftest run failed".into());
        }
        if !run_cli(&["compare", "--config", cfg, "--out", cmp.to_str().unwrap(), "--seed", "7"]) {
            return (false, "compare run failed".into());
        }
        runs.push((csv_files(&st), csv_files(&cmp)));
    }
    let same_st = runs[0].0 == runs[1].0;
    let same_cmp = runs[0].1 == runs[1].1;
    (
        same_st && same_cmp && !runs[0].1.is_empty(),
        format!("selftest CSV identical: {same_st}; compare run ({} CSV files) identical: {same_cmp}", runs[0].1.len()),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: Vec<Criterion> = vec![
        ("C1  Monge-Ampere manufactured solutions", c1_monge_ampere, Duration::from_secs(20)),
        ("C2  linearized MA exactness and order", c2_linearized, Duration::from_secs(10)),
        ("C3  cofactor divergence-free", c3_divergence_free, Duration::from_secs(5)),
        ("C4  manufactured full-system fixed point", c4_manufactured_fixed_point, Duration::from_secs(60)),
        ("C5  homotopy start w = 1", c5_homotopy_start, Duration::from_secs(60)),
        ("C6  fixed delta regime", c6_fixed_delta, Duration::from_secs(120)),
        ("C7  epsilon continuation vs oracle", c7_epsilon_convergence, Duration::from_secs(600)),
        ("C8  uniqueness cross-check", c8_uniqueness, Duration::from_secs(300)),
        ("C9  Allen-Cahn", c9_allen_cahn, Duration::from_secs(120)),
        ("C10 oracle integrity", c10_oracle, Duration::from_secs(60)),
        ("C11 convex-function bounds", c11_convex_bounds, Duration::from_secs(10)),
        ("C12 determinism", c12_determinism, Duration::from_secs(600)),
    ];
    let mut failed = 0;
    for (name, f, budget) in criteria {
        let t0 = Instant::now();
        let (ok, detail) = f();
        let dt = t0.elapsed();
        let in_time = dt <= budget;
        let pass = ok && in_time;
        failed += !pass as usize;
        println!(
            "[{}] {name}: {detail} [{:.1} s of {} s]",
            if pass { "PASS" } else { "FAIL" },
            dt.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 12 criteria passed", 12 - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
