//! Command dispatch for the `abreu` binary. Every command writes its
//! artifacts into the output directory; CSV contents depend only on the
//! config and seed.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::abreu::{
    epsilon_continuation, uniform_bounds, solve_abreu, ContinuationEntry, Penalization, SolveReport, SolveStatus,
};
use crate::config::{Mode, RunConfig};
use crate::error::{Error, Result};
use crate::grid::{
    build_domain, check_discrete_convexity, hessian, interior_gradient_bound, read_field_csv, write_field_csv, DomainMask,
    ScalarField,
};
use crate::lagrangian::{verify_assumptions, SampleRegion};
use crate::oracle::{audit, eight_direction_failure_fraction, evaluate_j, feasible_points, minimize_constrained, oracle_objective, OracleResult, OracleStatus};
use crate::selftest;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Solve,
    Continue,
    Oracle,
    Compare,
    Diagnose,
    Selftest,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub grid: Option<usize>,
    pub seed: Option<u64>,
    /// Field dump inspected by `diagnose`.
    pub field: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Success,
    NotConverged,
    SelftestFailed,
}

/// Exit code of a finished run: 0 success, 1 runtime error, 2 config error,
/// 3 solver not converged, 4 selftest failure.
pub fn exit_code(r: &Result<Outcome>) -> u8 {
    match r {
        Ok(Outcome::Success) => 0,
        Ok(Outcome::NotConverged) => 3,
        Ok(Outcome::SelftestFailed) => 4,
        Err(Error::Config(_)) => 2,
        Err(_) => 1,
    }
}

pub fn run(cmd: Command, opts: &RunOptions) -> Result<Outcome> {
    if cmd == Command::Selftest {
        return run_selftest(opts.out.as_deref());
    }
    let path = opts.config.as_ref().ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut cfg = RunConfig::from_file(path)?;
    if let Some(n) = opts.grid {
        cfg.n = n;
    }
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let out = opts
        .out
        .clone()
        .or_else(|| cfg.out.clone())
        .ok_or_else(|| Error::Config("no output directory: pass --out or set run.out".into()))?;
    fs::create_dir_all(&out)?;
    match cmd {
        Command::Solve => run_solve(&cfg, &out),
        Command::Continue => run_continue(&cfg, &out, false),
        Command::Compare => run_continue(&cfg, &out, true),
        Command::Oracle => {
            let mask = cfg.mask()?;
            let (orc, _) = run_oracle(&cfg, &mask, &out)?;
            Ok(if orc.status == OracleStatus::Converged { Outcome::Success } else { Outcome::NotConverged })
        }
        Command::Diagnose => run_diagnose(&cfg, opts.field.as_deref(), &out),
        Command::Selftest => unreachable!(),
    }
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn dump(dir: &Path, name: &str, u: &ScalarField, mask: &DomainMask) -> Result<()> {
    let mut f = create(dir, name)?;
    write_field_csv(&mut f, u, mask)?;
    f.flush()?;
    Ok(())
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "'"))
}

fn write_report(dir: &Path, suffix: &str, rep: &SolveReport, mask: &DomainMask) -> Result<()> {
    let mut f = create(dir, &format!("report{suffix}.csv"))?;
    rep.write_history_csv(&mut f)?;
    f.flush()?;
    dump(dir, &format!("u{suffix}.csv"), &rep.u, mask)?;
    dump(dir, &format!("w{suffix}.csv"), &rep.w, mask)?;

    let d = &rep.diagnostics;
    let mut s = create(dir, &format!("summary{suffix}.csv"))?;
    writeln!(s, "key,value")?;
    writeln!(s, "status,{}", rep.status.as_str())?;
    writeln!(s, "defect,{:.16e}", rep.defect)?;
    writeln!(s, "outer_evaluations,{}", rep.history.len())?;
    writeln!(s, "u_sup,{:.16e}", d.u_sup)?;
    writeln!(s, "det_min,{:.16e}", d.det_range.0)?;
    writeln!(s, "det_max,{:.16e}", d.det_range.1)?;
    writeln!(s, "w_min,{:.16e}", rep.w.min_on(mask.closure()))?;
    writeln!(s, "w_max,{:.16e}", rep.w.max_on(mask.closure()))?;
    writeln!(s, "boundary_flux_sq,{:.16e}", d.boundary.flux_sq)?;
    writeln!(s, "boundary_curvature_flux,{:.16e}", d.boundary.curvature_flux)?;
    writeln!(s, "boundary_max_flux,{:.16e}", d.boundary.max_flux)?;
    writeln!(s, "curvature_unrepresented,{}", d.boundary.curvature_unrepresented)?;
    writeln!(s, "outer_penalty,{:.16e}", d.outer_penalty)?;
    writeln!(s, "j,{:.16e}", d.j)?;
    writeln!(s, "j_pen,{:.16e}", d.j_pen)?;
    writeln!(s, "gauge_defect,{:.16e}", d.gauge_defect)?;
    let hint = rep.refinement_hint.map(|(a, b)| format!("{a}..{b}")).unwrap_or_default();
    writeln!(s, "refinement_hint,{hint}")?;
    writeln!(s, "message,{}", quote(&rep.message))?;
    s.flush()?;
    Ok(())
}

fn run_solve(cfg: &RunConfig, out: &Path) -> Result<Outcome> {
    if cfg.mode == Mode::Continuation {
        return Err(Error::Config("solver.mode = continuation is run with the 'continue' command".into()));
    }
    let mask = cfg.mask()?;
    let prob = cfg.problem(&mask)?;
    let rep = solve_abreu(&prob, &cfg.homotopy)?;
    write_report(out, "", &rep, &mask)?;
    println!(
        "{}: defect {:.3e}, det D2u in [{:.6}, {:.6}], {} outer evaluations",
        rep.status.as_str(),
        rep.defect,
        rep.diagnostics.det_range.0,
        rep.diagnostics.det_range.1,
        rep.history.len()
    );
    Ok(if rep.converged() { Outcome::Success } else { Outcome::NotConverged })
}

/// Runs the oracle and its audit, writing `u_star.csv`, `oracle.csv` and
/// `audit.csv`.
fn run_oracle(cfg: &RunConfig, mask: &DomainMask, out: &Path) -> Result<(OracleResult, ScalarField)> {
    let phi = cfg.phi_field(mask);
    let model = cfg.build_model(mask)?;
    let orc = minimize_constrained(&model, &phi, mask, &cfg.oracle)?;
    dump(out, "u_star.csv", &orc.u, mask)?;
    let mut f = create(out, "oracle.csv")?;
    orc.write_csv(&mut f)?;
    f.flush()?;

    let rep = audit(&orc.u, &phi, &model, mask, cfg.oracle.pen_eps, cfg.audit_points, cfg.seed);
    let points = feasible_points(&orc.u, &phi, mask, cfg.audit_points, cfg.seed);
    let frac = if points.is_empty() {
        0.0
    } else {
        points.iter().map(|v| eight_direction_failure_fraction(v, mask, 1e-10)).sum::<f64>() / points.len() as f64
    };
    let mut a = create(out, "audit.csv")?;
    writeln!(a, "key,value")?;
    writeln!(a, "status,{}", if orc.status == OracleStatus::Converged { "converged" } else { "max_iters" })?;
    writeln!(a, "iterations,{}", orc.history.len())?;
    writeln!(a, "objective,{:.16e}", orc.objective)?;
    writeln!(a, "audit_points,{}", rep.points)?;
    writeln!(a, "audit_min_gap,{:.16e}", rep.min_gap)?;
    writeln!(a, "audit_tolerance,{:.16e}", rep.tolerance)?;
    writeln!(a, "audit_passed,{}", rep.passed())?;
    writeln!(a, "u_star_eight_direction_failure,{:.16e}", eight_direction_failure_fraction(&orc.u, mask, 1e-10))?;
    writeln!(a, "audit_eight_direction_failure,{frac:.16e}")?;
    a.flush()?;
    println!(
        "oracle {}: {} iterations, objective {:.10e}, audit min gap {:.3e} ({})",
        if orc.status == OracleStatus::Converged { "converged" } else { "hit max_iters" },
        orc.history.len(),
        orc.objective,
        rep.min_gap,
        if rep.passed() { "passed" } else { "FAILED" }
    );
    Ok((orc, phi))
}

/// `cold_start` solves every `eps` independently, in parallel.
fn continuation(cfg: &RunConfig, mask: &DomainMask) -> Result<Vec<ContinuationEntry>> {
    let template = cfg.problem(mask)?;
    if !cfg.cold_start {
        return epsilon_continuation(&template, &cfg.eps_list, &cfg.homotopy, cfg.keep_going);
    }
    let reports: Vec<Result<(f64, SolveReport)>> = std::thread::scope(|s| {
        let handles: Vec<_> = cfg
            .eps_list
            .iter()
            .map(|&eps| {
                let template = &template;
                s.spawn(move || {
                    let prob = template.with_penalization(Penalization::Continuation(eps))?;
                    Ok((eps, solve_abreu(&prob, &cfg.homotopy)?))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("continuation worker panicked")).collect()
    });
    let mut out: Vec<ContinuationEntry> = Vec::new();
    for r in reports {
        let (eps, report) = r?;
        let prob = template.with_penalization(Penalization::Continuation(eps))?;
        let bounds = uniform_bounds(&report.u, &prob, eps);
        let diff_prev = out.last().map(|e| report.u.max_abs_diff_on(&e.report.u, mask.omega0().iter().copied()));
        out.push(ContinuationEntry { eps, report, diff_prev, bounds });
    }
    Ok(out)
}

fn run_continue(cfg: &RunConfig, out: &Path, compare: bool) -> Result<Outcome> {
    if cfg.mode != Mode::Continuation {
        return Err(Error::Config("the continue and compare commands need solver.mode = continuation".into()));
    }
    let mask = cfg.mask()?;
    let (orc, phi) = run_oracle(cfg, &mask, out)?;
    let entries = continuation(cfg, &mask)?;
    let omega0 = || mask.omega0().iter().copied();

    let mut t = create(out, "continuation.csv")?;
    writeln!(t, "eps,status,gap_to_oracle,diff_prev,boundary_flux,inner_deviation,outer_deviation")?;
    for (i, e) in entries.iter().enumerate() {
        write_report(out, &format!("_eps{i}"), &e.report, &mask)?;
        let gap = e.report.u.max_abs_diff_on(&orc.u, omega0());
        let diff = e.diff_prev.map(|d| format!("{d:.16e}")).unwrap_or_default();
        let [a, b, c] = e.bounds.as_array();
        writeln!(t, "{},{},{gap:.16e},{diff},{a:.16e},{b:.16e},{c:.16e}", e.eps, e.report.status.as_str())?;
        println!("eps {}: {}, |u_eps - u*| on Omega0 = {gap:.6e}", e.eps, e.report.status.as_str());
    }
    t.flush()?;

    if compare {
        let model = cfg.build_model(&mask)?;
        let j_star = evaluate_j(&orc.u, &model, &mask);
        let obj_star = oracle_objective(&orc.u, &phi, &model, &mask, cfg.oracle.pen_eps);
        let mut c = create(out, "compare.csv")?;
        writeln!(c, "eps,gap_to_oracle,gap_decreased,j_minus_j_star,objective_minus_oracle,convexity_violations")?;
        let mut prev_gap = f64::INFINITY;
        let mut gaps = Vec::new();
        for e in &entries {
            let gap = e.report.u.max_abs_diff_on(&orc.u, omega0());
            let dj = evaluate_j(&e.report.u, &model, &mask) - j_star;
            let dobj = oracle_objective(&e.report.u, &phi, &model, &mask, cfg.oracle.pen_eps) - obj_star;
            let viol = check_discrete_convexity(&e.report.u, &mask, 1e-8).len();
            writeln!(c, "{},{gap:.16e},{},{dj:.16e},{dobj:.16e},{viol}", e.eps, gap < prev_gap)?;
            prev_gap = gap;
            gaps.push(gap);
        }
        c.flush()?;
        let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
        let factor = gaps.first().zip(gaps.last()).map_or(f64::NAN, |(a, b)| a / b);
        println!("gap strictly decreasing: {decreasing}; first/last gap ratio {factor:.3}");
    }
    let all = entries.len() == cfg.eps_list.len() && entries.iter().all(|e| e.report.status == SolveStatus::Converged);
    Ok(if all && orc.status == OracleStatus::Converged { Outcome::Success } else { Outcome::NotConverged })
}

fn run_diagnose(cfg: &RunConfig, field: Option<&Path>, out: &Path) -> Result<Outcome> {
    let (mask, u) = match field {
        Some(p) => {
            let (u, _) = read_field_csv(BufReader::new(File::open(p)?))?;
            let mask = build_domain(&cfg.shape, u.grid())?;
            (mask, u)
        }
        None => {
            let mask = cfg.mask()?;
            let phi = cfg.phi_field(&mask);
            (mask, phi)
        }
    };
    let model = cfg.build_model(&mask)?;
    let omega0 = || mask.omega0().iter().copied();
    let z_range = [u.min_on(omega0()) - 1.0, u.max_on(omega0()) + 1.0];
    let grad = interior_gradient_bound(&u, &mask);
    let region = SampleRegion::from_mask(&mask, z_range, 1.0 + grad.max_gradient);
    let rep = verify_assumptions(&model, &region, 200, cfg.seed);

    let mut a = create(out, "assumptions.csv")?;
    writeln!(a, "check,passed,worst_margin,detail,x1,x2,z,z_tilde,p1,p2")?;
    for c in &rep.checks {
        let w = c.witness.map_or(String::from(",,,,,"), |w| {
            format!("{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", w.x[0], w.x[1], w.z, w.z_tilde, w.p[0], w.p[1])
        });
        writeln!(a, "{},{},{:.16e},{},{w}", c.name, c.passed, c.worst_margin, quote(&c.detail))?;
        println!("{}: {}", c.name, if c.passed { "pass" } else { "FAIL" });
    }
    a.flush()?;

    let psi = ScalarField::constant(mask.grid(), cfg.psi);
    let b = crate::abreu::boundary_diagnostics(&u, &psi, &mask);
    let (d_lo, d_hi) = hessian(&u, &mask).det_range();
    let mut f = create(out, "boundary.csv")?;
    writeln!(f, "key,value")?;
    writeln!(f, "flux_sq,{:.16e}", b.flux_sq)?;
    writeln!(f, "curvature_flux,{:.16e}", b.curvature_flux)?;
    writeln!(f, "max_flux,{:.16e}", b.max_flux)?;
    writeln!(f, "curvature_unrepresented,{}", b.curvature_unrepresented)?;
    writeln!(f, "det_min,{d_lo:.16e}")?;
    writeln!(f, "det_max,{d_hi:.16e}")?;
    writeln!(f, "convexity_violations,{}", check_discrete_convexity(&u, &mask, 1e-8).len())?;
    writeln!(f, "max_gradient_omega0,{:.16e}", grad.max_gradient)?;
    writeln!(f, "gradient_bound,{:.16e}", grad.bound)?;
    f.flush()?;
    Ok(Outcome::Success)
}

fn run_selftest(out: Option<&Path>) -> Result<Outcome> {
    let results = selftest::run_all();
    for r in &results {
        if r.passed {
            println!("PASS {}", r.name);
        } else {
            println!("FAIL {}: {}", r.name, r.detail);
        }
    }
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        let mut f = create(dir, "selftest.csv")?;
        writeln!(f, "case,passed,detail")?;
        for r in &results {
            writeln!(f, "{},{},{}", r.name, r.passed, quote(&r.detail))?;
        }
        f.flush()?;
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} of {} selftest cases passed", results.len() - failed, results.len());
    Ok(if failed == 0 { Outcome::Success } else { Outcome::SelftestFailed })
}
