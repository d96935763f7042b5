//! Second boundary value problem for the singular Abreu equation
//!
//! ```text
//! U^{ij} w_ij = f(u)  in Omega,   w = G'(det D^2 u),
//! u = phi, w = psi    on the boundary,
//! ```
//!
//! solved by damped Picard iteration on the homotopy map `Phi_t`
//! (Monge-Ampere solve for `u` given `w`, then a linearized Monge-Ampere
//! solve for the new `w` with data `t f` and `t psi + 1 - t`), continued in
//! `t` from 0 to 1.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::grid::{check_discrete_convexity, DomainMask, ScalarField};
use crate::lagrangian::{Gauge, LagrangianModel};
use crate::linalg::Sym2;
use crate::lma::{assemble_lma, NinePointSystem};
use crate::monge_ampere::{solve_dirichlet_ma_from, MaConfig, MaStatus};
use crate::oracle::{evaluate_j, outer_deviation};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Penalization {
    /// Fixed penalty `(u - phi) / delta` outside `Omega0`.
    FixedDelta(f64),
    /// The `eps`-scaled system: penalty `(u - phi) / eps`, and the whole
    /// right-hand side divided by `eps`.
    Continuation(f64),
}

impl Penalization {
    pub fn value(&self) -> f64 {
        match *self {
            Penalization::FixedDelta(v) | Penalization::Continuation(v) => v,
        }
    }
}

#[derive(Clone, Debug)]
pub enum RhsMode {
    /// `f0 - div grad_p F1` on `Omega0`, the penalty outside.
    Penalized,
    /// `-div grad_p F1(x, Du)` on all of `Omega`.
    GeneralDiv,
    /// `u^3 - u - Laplace u` on all of `Omega`.
    AllenCahn,
    /// A prescribed right-hand side, independent of `u`.
    Frozen(ScalarField),
}

#[derive(Clone, Debug)]
pub struct AbreuProblem {
    mask: DomainMask,
    phi: ScalarField,
    psi: ScalarField,
    model: LagrangianModel,
    gauge: Gauge,
    penalization: Penalization,
    rhs_mode: RhsMode,
}

impl AbreuProblem {
    /// Validates the data: `inf psi > 0` on the boundary, a positive penalty,
    /// and in continuation mode a uniformly convex `phi` and `rho > 0`.
    pub fn new(
        mask: DomainMask,
        phi: ScalarField,
        psi: ScalarField,
        model: LagrangianModel,
        gauge: Gauge,
        penalization: Penalization,
        rhs_mode: RhsMode,
    ) -> Result<Self> {
        let g = mask.grid();
        if phi.grid() != g || psi.grid() != g {
            return Err(Error::invalid("phi and psi must live on the mask's grid"));
        }
        if let RhsMode::Frozen(f) = &rhs_mode {
            if f.grid() != g {
                return Err(Error::invalid("frozen right-hand side lives on another grid"));
            }
        }
        let psi_min = psi.min_on(mask.boundary().iter().copied());
        if !(psi_min > 0.0) || !psi.max_on(mask.boundary().iter().copied()).is_finite() {
            return Err(Error::invalid(format!("psi must be positive on the boundary, inf psi = {psi_min}")));
        }
        if !mask.closure().all(|k| phi[k].is_finite()) {
            return Err(Error::invalid("phi must be finite on the closure of Omega"));
        }
        let pen = penalization.value();
        if !(pen > 0.0) || !pen.is_finite() {
            return Err(Error::invalid(format!("penalty parameter must be > 0, got {pen}")));
        }
        if model.non_convex_f0() && !matches!(rhs_mode, RhsMode::AllenCahn | RhsMode::Frozen(_)) {
            return Err(Error::Model(format!("model {} has a non-monotone f0; use the Allen-Cahn mode", model.name())));
        }
        if let Penalization::Continuation(_) = penalization {
            if !(model.rho() > 0.0) {
                return Err(Error::Model("continuation needs rho > 0".into()));
            }
            let kappa = mask
                .unknowns()
                .iter()
                .map(|&k| phi.hessian_at(k).eigenvalues()[0])
                .fold(f64::INFINITY, f64::min);
            if !(kappa > 0.0) {
                return Err(Error::invalid(format!("continuation needs a uniformly convex phi, min eigenvalue {kappa}")));
            }
        }
        Ok(AbreuProblem { mask, phi, psi, model, gauge, penalization, rhs_mode })
    }

    pub fn mask(&self) -> &DomainMask {
        &self.mask
    }
    pub fn phi(&self) -> &ScalarField {
        &self.phi
    }
    pub fn psi(&self) -> &ScalarField {
        &self.psi
    }
    pub fn model(&self) -> &LagrangianModel {
        &self.model
    }
    pub fn gauge(&self) -> &Gauge {
        &self.gauge
    }
    pub fn penalization(&self) -> Penalization {
        self.penalization
    }
    pub fn rhs_mode(&self) -> &RhsMode {
        &self.rhs_mode
    }

    /// Same problem with another penalization; continuation requirements are
    /// re-checked.
    pub fn with_penalization(&self, penalization: Penalization) -> Result<Self> {
        AbreuProblem::new(
            self.mask.clone(),
            self.phi.clone(),
            self.psi.clone(),
            self.model.clone(),
            self.gauge.clone(),
            penalization,
            self.rhs_mode.clone(),
        )
    }
}

/// The right-hand side `f(u)` at the interior nodes (zero elsewhere). In
/// continuation mode this is already divided by `eps`.
pub fn assemble_rhs(u: &ScalarField, prob: &AbreuProblem) -> ScalarField {
    let mask = &prob.mask;
    let g = mask.grid();
    let model = &prob.model;
    let mut f = ScalarField::constant(g, 0.0);
    let divergence = |k: usize| {
        let x = g.point(k);
        let p = u.gradient(k);
        -model.cross_f1(x, p) - model.hess_p_f1(x, p).contract(&u.hessian_at(k))
    };
    match &prob.rhs_mode {
        RhsMode::Penalized => {
            let pen = prob.penalization.value();
            for &k in mask.unknowns() {
                f[k] = if mask.class(k).in_omega0() {
                    model.f0(g.point(k), u[k]) + divergence(k)
                } else {
                    (u[k] - prob.phi[k]) / pen
                };
            }
            if let Penalization::Continuation(eps) = prob.penalization {
                for &k in mask.unknowns() {
                    f[k] /= eps;
                }
            }
        }
        RhsMode::GeneralDiv => {
            for &k in mask.unknowns() {
                f[k] = divergence(k);
            }
        }
        RhsMode::AllenCahn => {
            for &k in mask.unknowns() {
                let z = u[k];
                f[k] = z * z * z - z - u.hessian_at(k).trace();
            }
        }
        RhsMode::Frozen(given) => {
            for &k in mask.unknowns() {
                f[k] = given[k];
            }
        }
    }
    f
}

#[derive(Clone, Debug, PartialEq)]
pub struct HomotopyConfig {
    pub t_schedule: Vec<f64>,
    /// Initial Picard damping `sigma`.
    pub picard_damping: f64,
    pub w_floor: f64,
    /// Tolerance on the fixed-point defect `|Phi_t(w) - w|_inf`.
    pub outer_tol: f64,
    /// Evaluations of `Phi_t` allowed per homotopy step.
    pub max_outer: usize,
    /// Smallest homotopy step before giving up on bisection.
    pub min_t_step: f64,
    /// Residuals kept for Anderson mixing; 0 gives plain damped Picard.
    pub anderson_depth: usize,
    /// Defect growth, relative to the best iterate, tolerated before the
    /// mixing history is dropped.
    pub divergence_factor: f64,
    pub ma: MaConfig,
}

impl Default for HomotopyConfig {
    fn default() -> Self {
        HomotopyConfig {
            t_schedule: vec![0.0, 0.25, 0.5, 0.75, 1.0],
            picard_damping: 0.5,
            w_floor: 1e-8,
            outer_tol: 1e-7,
            max_outer: 200,
            min_t_step: 1.0 / 64.0,
            anderson_depth: 5,
            divergence_factor: 10.0,
            ma: MaConfig::default(),
        }
    }
}

impl HomotopyConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.t_schedule;
        if s.len() < 2 || s[0] != 0.0 || *s.last().unwrap() != 1.0 || s.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("t schedule must increase from 0 to 1, got {s:?}")));
        }
        if !(self.picard_damping > 0.0 && self.picard_damping <= 1.0) {
            return Err(Error::Config(format!("picard damping must lie in (0, 1], got {}", self.picard_damping)));
        }
        if !(self.divergence_factor >= 1.0) {
            return Err(Error::Config(format!("divergence factor must be >= 1, got {}", self.divergence_factor)));
        }
        if !(self.w_floor > 0.0) || !(self.outer_tol > 0.0) || self.max_outer == 0 {
            return Err(Error::Config("w_floor, outer_tol and max_outer must be positive".into()));
        }
        self.ma.validate()
    }
}

/// One evaluation of `Phi_t`.
#[derive(Clone, Debug)]
pub struct PhiStep {
    /// The Monge-Ampere solution for the input `w`.
    pub u: ScalarField,
    /// The linearized solve `w~` (undamped).
    pub w_tilde: ScalarField,
    /// `max(w_floor, (1 - sigma) w + sigma w~)`.
    pub w_next: ScalarField,
    /// `|w~ - w|_inf` over the closure.
    pub defect: f64,
    pub ma_status: MaStatus,
    pub ma_residual: f64,
    pub lma_residual: f64,
    pub det_range: (f64, f64),
}

fn check_floor(w: &ScalarField, mask: &DomainMask, floor: f64) -> Result<()> {
    match mask.unknowns().iter().find(|&&k| !(w[k] >= floor)) {
        Some(&k) => Err(Error::invalid(format!("w = {} below the floor {floor} at node {k}", w[k]))),
        None => Ok(()),
    }
}

/// `Phi_t(w)` with damping `sigma`. `u_warm` warm-starts the Monge-Ampere
/// solve.
pub fn phi_t_step(
    w: &ScalarField,
    t: f64,
    sigma: f64,
    prob: &AbreuProblem,
    cfg: &HomotopyConfig,
    u_warm: Option<&ScalarField>,
) -> Result<PhiStep> {
    let mask = &prob.mask;
    if !(0.0..=1.0).contains(&t) || !(sigma > 0.0 && sigma <= 1.0) {
        return Err(Error::invalid(format!("need t in [0, 1] and sigma in (0, 1], got t = {t}, sigma = {sigma}")));
    }
    check_floor(w, mask, cfg.w_floor)?;
    let mut g = ScalarField::constant(w.grid(), 1.0);
    for &k in mask.unknowns() {
        g[k] = prob.gauge.invert(w[k]).map_err(|e| {
            let (i, j) = w.grid().ij(k);
            match e {
                Error::Domain(_) => Error::Degenerate { i, j, det: f64::NAN },
                other => other,
            }
        })?;
    }
    let ma = solve_dirichlet_ma_from(&g, &prob.phi, mask, &cfg.ma, u_warm)?;
    let u = ma.u;
    let op = assemble_lma(&u, mask)?;
    let f = assemble_rhs(&u, prob).map(|v| t * v);
    let bc = prob.psi.map(|v| t * v + (1.0 - t));
    let w_tilde = solve_linear(&op.system, &f, &bc, mask)?;
    let lma_residual = {
        let lw = op.system.apply(&w_tilde);
        let scale = f.max_abs_on(mask.unknowns().iter().copied()).max(1.0);
        mask.unknowns().iter().map(|&k| (lw[k] - f[k]).abs()).fold(0.0, f64::max) / scale
    };
    let defect = w_tilde.max_abs_diff_on(w, mask.closure());
    let mut w_next = w.zip_map(&w_tilde, |a, b| ((1.0 - sigma) * a + sigma * b).max(cfg.w_floor));
    for &k in mask.boundary() {
        w_next[k] = w_tilde[k];
    }
    let dets: Vec<f64> = mask.unknowns().iter().map(|&k| u.hessian_at(k).det()).collect();
    let det_range = dets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    Ok(PhiStep {
        u,
        w_tilde,
        w_next,
        defect,
        ma_status: ma.report.status,
        ma_residual: ma.report.final_residual(),
        lma_residual,
        det_range,
    })
}

/// Linear solve with a shortcut for homogeneous data with constant boundary
/// values: the stencil annihilates constants, so the constant is the exact
/// discrete solution.
fn solve_linear(sys: &NinePointSystem, f: &ScalarField, bc: &ScalarField, mask: &DomainMask) -> Result<ScalarField> {
    let b0 = bc[mask.boundary()[0]];
    if mask.unknowns().iter().all(|&k| f[k] == 0.0) && mask.boundary().iter().all(|&k| bc[k] == b0) {
        let mut w = bc.clone();
        for &k in mask.unknowns() {
            w[k] = b0;
        }
        return Ok(w);
    }
    Ok(sys.solve(f, bc)?.0)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterateRecord {
    pub t: f64,
    pub k: usize,
    pub defect: f64,
    pub ma_residual: f64,
    pub lma_residual: f64,
    pub min_w: f64,
    pub max_w: f64,
    pub min_det: f64,
    pub max_det: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolveStatus {
    Converged,
    NotConverged,
    Degenerate,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Converged => "converged",
            SolveStatus::NotConverged => "not_converged",
            SolveStatus::Degenerate => "degenerate",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryDiagnostics {
    /// `int_{∂Omega} u_nu^2`.
    pub flux_sq: f64,
    /// `int_{∂Omega} K psi u_nu^2`.
    pub curvature_flux: f64,
    pub max_flux: f64,
    /// Set on rectangles, whose curvature sits in the corners and is not
    /// represented.
    pub curvature_unrepresented: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Diagnostics {
    pub u_sup: f64,
    pub det_range: (f64, f64),
    pub boundary: BoundaryDiagnostics,
    /// `int_{Omega \ Omega0} (u - phi)^2 / pen`.
    pub outer_penalty: f64,
    pub j: f64,
    /// `J(u) + (1 / 2 pen) int_{Omega \ Omega0} (u - phi)^2`.
    pub j_pen: f64,
    /// `max |w - G'(det D^2 u)|` at the interior nodes.
    pub gauge_defect: f64,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub status: SolveStatus,
    pub u: ScalarField,
    pub w: ScalarField,
    pub history: Vec<IterateRecord>,
    pub diagnostics: Diagnostics,
    /// Final fixed-point defect.
    pub defect: f64,
    /// The `t` interval to bisect next when the run stalled.
    pub refinement_hint: Option<(f64, f64)>,
    /// The schedule actually used, after bisections.
    pub t_schedule: Vec<f64>,
    pub message: String,
}

impl SolveReport {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    pub fn write_history_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,k,defect,ma_residual,lma_residual,min_w,max_w,min_det,max_det")?;
        for r in &self.history {
            writeln!(
                out,
                "{:.6},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.t, r.k, r.defect, r.ma_residual, r.lma_residual, r.min_w, r.max_w, r.min_det, r.max_det
            )?;
        }
        Ok(())
    }
}

/// Initial state for [`solve_abreu_from`].
#[derive(Clone, Debug)]
pub struct WarmStart {
    pub u: ScalarField,
    pub w: ScalarField,
}

/// Runs the homotopy from `t = 0` (where `w = 1`) to `t = 1`.
pub fn solve_abreu(prob: &AbreuProblem, cfg: &HomotopyConfig) -> Result<SolveReport> {
    solve_abreu_from(prob, cfg, None)
}

/// As [`solve_abreu`]. With a warm start the run goes straight to `t = 1`
/// from the given `(u, w)`; if that fails it falls back to the full schedule.
pub fn solve_abreu_from(prob: &AbreuProblem, cfg: &HomotopyConfig, warm: Option<&WarmStart>) -> Result<SolveReport> {
    cfg.validate()?;
    let mask = &prob.mask;
    let mut history = Vec::new();
    if let Some(ws) = warm {
        let mut w = ws.w.clone();
        for &k in mask.unknowns() {
            w[k] = w[k].max(cfg.w_floor);
        }
        for &k in mask.boundary() {
            w[k] = prob.psi[k];
        }
        let mut state = State { w, u: Some(ws.u.clone()) };
        match picard(prob, cfg, 1.0, &mut state, &mut history)? {
            Outcome::Converged(step) => return Ok(finish(prob, cfg, step, history, None, vec![1.0], String::new())),
            Outcome::Failed { .. } => {}
        }
    }

    let ones = ScalarField::constant(mask.grid(), 1.0);
    let mut state = State { w: ones, u: None };
    let mut pending: Vec<f64> = cfg.t_schedule.iter().rev().copied().collect();
    let mut done = vec![pending.pop().unwrap()];
    // the fixed point at t = 0
    let mut last = match picard(prob, cfg, done[0], &mut state, &mut history)? {
        Outcome::Converged(s) => s,
        Outcome::Failed { best, reason } => {
            return Ok(finish(prob, cfg, best, history, Some((0.0, 0.0)), done, reason));
        }
    };
    while let Some(&t) = pending.last() {
        let t_prev = *done.last().unwrap();
        let saved = state.clone();
        match picard(prob, cfg, t, &mut state, &mut history)? {
            Outcome::Converged(s) => {
                last = s;
                done.push(pending.pop().unwrap());
            }
            Outcome::Failed { best, reason } => {
                state = saved;
                if t - t_prev <= cfg.min_t_step {
                    let msg = format!("no fixed point at t = {t} from t = {t_prev}: {reason}");
                    return Ok(finish(prob, cfg, best, history, Some((t_prev, t)), done, msg));
                }
                pending.push(0.5 * (t_prev + t));
            }
        }
    }
    Ok(finish(prob, cfg, last, history, None, done, String::new()))
}

#[derive(Clone)]
struct State {
    w: ScalarField,
    u: Option<ScalarField>,
}

enum Outcome {
    Converged(PhiStep),
    Failed { best: PhiStep, reason: String },
}

fn record(history: &mut Vec<IterateRecord>, t: f64, k: usize, s: &PhiStep, w: &ScalarField, mask: &DomainMask) {
    let unk = mask.unknowns().iter().copied();
    history.push(IterateRecord {
        t,
        k,
        defect: s.defect,
        ma_residual: s.ma_residual,
        lma_residual: s.lma_residual,
        min_w: w.min_on(unk.clone()),
        max_w: w.max_on(unk),
        min_det: s.det_range.0,
        max_det: s.det_range.1,
    });
}

fn usable(s: &PhiStep) -> bool {
    s.ma_status == MaStatus::Converged && s.defect.is_finite()
}

/// Damped Picard iteration on `Phi_t` at fixed `t`, with Anderson mixing
/// over the last `anderson_depth` residuals. The damping doubles whenever
/// the defect reaches a new low and halves when an evaluation fails or the
/// defect grows past `divergence_factor` times the best; the mixing history
/// then restarts from the best iterate. With depth 0 every non-improving
/// step counts as divergence, which is plain adaptive damped Picard.
fn picard(prob: &AbreuProblem, cfg: &HomotopyConfig, t: f64, state: &mut State, history: &mut Vec<IterateRecord>) -> Result<Outcome> {
    let mask = &prob.mask;
    let unk = mask.unknowns();
    let mut sigma = cfg.picard_damping;
    let mut best = match phi_t_step(&state.w, t, sigma, prob, cfg, state.u.as_ref()) {
        Ok(s) if usable(&s) => s,
        Ok(s) => return Ok(Outcome::Failed { best: s, reason: "inner Monge-Ampere solve failed".into() }),
        Err(e @ (Error::Degenerate { .. } | Error::LinearSolve(_))) => {
            return Ok(Outcome::Failed { best: placeholder_step(prob, state), reason: e.to_string() })
        }
        Err(e) => return Err(e),
    };
    record(history, t, 0, &best, &state.w, mask);
    let growth = if cfg.anderson_depth == 0 { 1.0 } else { cfg.divergence_factor };
    let pack = |w: &ScalarField, s: &PhiStep| -> (Vec<f64>, Vec<f64>) {
        (unk.iter().map(|&k| w[k]).collect(), unk.iter().map(|&k| s.w_tilde[k] - w[k]).collect())
    };
    let mut mix = Anderson::new(cfg.anderson_depth);
    mix.push(pack(&state.w, &best));
    let mut last_u = best.u.clone();
    let mut k = 1;
    loop {
        if best.defect <= cfg.outer_tol {
            state.u = Some(best.u.clone());
            return Ok(Outcome::Converged(best));
        }
        if k >= cfg.max_outer {
            return Ok(Outcome::Failed { best, reason: format!("{k} evaluations without reaching the tolerance") });
        }
        let proposal = mix.propose(sigma);
        let mut trial_w = best.w_tilde.clone();
        for (&node, v) in unk.iter().zip(proposal) {
            trial_w[node] = v.max(cfg.w_floor);
        }
        match phi_t_step(&trial_w, t, sigma, prob, cfg, Some(&last_u)) {
            Ok(s) if usable(&s) => {
                record(history, t, k, &s, &trial_w, mask);
                last_u = s.u.clone();
                if s.defect < best.defect {
                    mix.push(pack(&trial_w, &s));
                    state.w = trial_w;
                    best = s;
                    sigma = (2.0 * sigma).min(1.0);
                } else if s.defect < growth * best.defect {
                    mix.push(pack(&trial_w, &s));
                } else {
                    mix.restart_from(pack(&state.w, &best));
                    last_u = best.u.clone();
                    sigma *= 0.5;
                }
            }
            Ok(_) | Err(Error::Degenerate { .. }) | Err(Error::LinearSolve(_)) => {
                mix.restart_from(pack(&state.w, &best));
                last_u = best.u.clone();
                sigma *= 0.5;
            }
            Err(e) => return Err(e),
        }
        if sigma < 1e-4 {
            return Ok(Outcome::Failed { best, reason: "damping underflow".into() });
        }
        k += 1;
    }
}

/// Anderson mixing (type II) over iterate/residual pairs.
struct Anderson {
    depth: usize,
    pairs: VecDeque<(Vec<f64>, Vec<f64>)>,
}

impl Anderson {
    fn new(depth: usize) -> Self {
        Anderson { depth, pairs: VecDeque::new() }
    }

    fn push(&mut self, pair: (Vec<f64>, Vec<f64>)) {
        self.pairs.push_back(pair);
        while self.pairs.len() > self.depth + 1 {
            self.pairs.pop_front();
        }
    }

    fn restart_from(&mut self, pair: (Vec<f64>, Vec<f64>)) {
        self.pairs.clear();
        self.pairs.push_back(pair);
    }

    /// `w + beta r - (dW + beta dR) gamma` around the latest pair, with
    /// `gamma` minimizing `|r - dR gamma|`.
    fn propose(&self, beta: f64) -> Vec<f64> {
        let (w, r) = self.pairs.back().expect("mixing history is never empty");
        let mut out: Vec<f64> = w.iter().zip(r).map(|(a, b)| a + beta * b).collect();
        let m = self.pairs.len() - 1;
        if m == 0 {
            return out;
        }
        let diff = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>();
        let diffs: Vec<(Vec<f64>, Vec<f64>)> = (0..m)
            .map(|j| {
                let (w0, r0) = &self.pairs[j];
                let (w1, r1) = &self.pairs[j + 1];
                (diff(w1, w0), diff(r1, r0))
            })
            .collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut gram = vec![vec![0.0; m]; m];
        let mut rhs = vec![0.0; m];
        for i in 0..m {
            for j in 0..=i {
                gram[i][j] = dot(&diffs[i].1, &diffs[j].1);
                gram[j][i] = gram[i][j];
            }
            rhs[i] = dot(&diffs[i].1, r);
        }
        let Some(gamma) = solve_spd_regularized(gram, rhs) else {
            return out;
        };
        for ((dw, dr), g) in diffs.iter().zip(gamma) {
            for (o, (a, b)) in out.iter_mut().zip(dw.iter().zip(dr)) {
                *o -= g * (a + beta * b);
            }
        }
        out
    }
}

/// Cholesky solve of a small Gram system with a relative ridge.
fn solve_spd_regularized(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    let ridge = 1e-12 * (0..n).map(|i| a[i][i]).fold(0.0, f64::max);
    if !(ridge > 0.0) {
        return None;
    }
    for i in 0..n {
        a[i][i] += ridge;
    }
    for j in 0..n {
        let d = a[j][j] - (0..j).map(|k| a[j][k] * a[j][k]).sum::<f64>();
        if !(d > 0.0) {
            return None;
        }
        a[j][j] = d.sqrt();
        for i in j + 1..n {
            a[i][j] = (a[i][j] - (0..j).map(|k| a[i][k] * a[j][k]).sum::<f64>()) / a[j][j];
        }
    }
    for i in 0..n {
        b[i] = (b[i] - (0..i).map(|k| a[i][k] * b[k]).sum::<f64>()) / a[i][i];
    }
    for i in (0..n).rev() {
        b[i] = (b[i] - (i + 1..n).map(|k| a[k][i] * b[k]).sum::<f64>()) / a[i][i];
    }
    Some(b)
}

/// Stand-in when not even the first evaluation at this `t` succeeded.
fn placeholder_step(prob: &AbreuProblem, state: &State) -> PhiStep {
    PhiStep {
        u: state.u.clone().unwrap_or_else(|| prob.phi.clone()),
        w_tilde: state.w.clone(),
        w_next: state.w.clone(),
        defect: f64::INFINITY,
        ma_status: MaStatus::NotConverged,
        ma_residual: f64::INFINITY,
        lma_residual: f64::INFINITY,
        det_range: (f64::NAN, f64::NAN),
    }
}

fn finish(
    prob: &AbreuProblem,
    cfg: &HomotopyConfig,
    step: PhiStep,
    history: Vec<IterateRecord>,
    hint: Option<(f64, f64)>,
    schedule: Vec<f64>,
    message: String,
) -> SolveReport {
    let mask = &prob.mask;
    let u = step.u;
    let w = step.w_tilde;
    let diagnostics = diagnostics(&u, &w, prob);
    let (d_lo, _) = diagnostics.det_range;
    let status = if hint.is_none() && step.defect <= cfg.outer_tol {
        let above_floor = mask.unknowns().iter().all(|&k| w[k] > cfg.w_floor);
        let convex = check_discrete_convexity(&u, mask, 1e-8).is_empty();
        if above_floor && convex && d_lo > 0.0 && step.ma_status == MaStatus::Converged {
            SolveStatus::Converged
        } else if d_lo <= 0.0 || !convex {
            SolveStatus::Degenerate
        } else {
            SolveStatus::NotConverged
        }
    } else if d_lo <= 0.0 {
        SolveStatus::Degenerate
    } else {
        SolveStatus::NotConverged
    };
    SolveReport {
        status,
        u,
        w,
        history,
        diagnostics,
        defect: step.defect,
        refinement_hint: hint,
        t_schedule: schedule,
        message,
    }
}

/// Diagnostics of a pair `(u, w)`.
pub fn diagnostics(u: &ScalarField, w: &ScalarField, prob: &AbreuProblem) -> Diagnostics {
    let mask = &prob.mask;
    let pen = prob.penalization.value();
    let dets: Vec<(usize, f64)> = mask.unknowns().iter().map(|&k| (k, u.hessian_at(k).det())).collect();
    let det_range = dets.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(_, d)| (a.min(d), b.max(d)));
    let gauge_defect = dets
        .iter()
        .map(|&(k, d)| prob.gauge.eval(d).map_or(f64::INFINITY, |v| (w[k] - v.g_prime).abs()))
        .fold(0.0, f64::max);
    let outer = outer_deviation(u, &prob.phi, mask);
    let j = evaluate_j(u, &prob.model, mask);
    Diagnostics {
        u_sup: u.max_abs_on(mask.closure()),
        det_range,
        boundary: boundary_diagnostics(u, &prob.psi, mask),
        outer_penalty: outer / pen,
        j,
        j_pen: j + outer / (2.0 * pen),
        gauge_defect,
    }
}

/// Outward normal derivative at a boundary node of a rectangle face, by the
/// one-sided second-order difference along the inward normal.
fn face_flux(u: &ScalarField, k: usize, normal: [i32; 2]) -> f64 {
    let g = u.grid();
    let h = if normal[0] != 0 { g.h1() } else { g.h2() };
    let (di, dj) = (-normal[0] as isize, -normal[1] as isize);
    let k1 = g.offset(k, di, dj).expect("face node has an inward neighbour");
    let k2 = g.offset(k, 2 * di, 2 * dj).expect("face node has two inward neighbours");
    (3.0 * u[k] - 4.0 * u[k1] + u[k2]) / (2.0 * h)
}

fn bilinear(u: &ScalarField, p: [f64; 2]) -> f64 {
    let g = u.grid();
    let [x0, _, y0, _] = g.bounds();
    let fx = ((p[0] - x0) / g.h1()).clamp(0.0, (g.nx() - 1) as f64 - 1e-9);
    let fy = ((p[1] - y0) / g.h2()).clamp(0.0, (g.ny() - 1) as f64 - 1e-9);
    let (i, j) = (fx.floor() as usize, fy.floor() as usize);
    let (a, b) = (fx - i as f64, fy - j as f64);
    (1.0 - a) * (1.0 - b) * u.get(i, j) + a * (1.0 - b) * u.get(i + 1, j) + (1.0 - a) * b * u.get(i, j + 1) + a * b * u.get(i + 1, j + 1)
}

/// `int u_nu^2`, `int K psi u_nu^2` and `max |u_nu|` over the boundary by
/// trapezoid quadrature. Rectangles are integrated face by face; curved
/// boundaries along the ordered boundary nodes, with `u_nu` from one-sided
/// differences of bilinear interpolants along the normal.
pub fn boundary_diagnostics(u: &ScalarField, psi: &ScalarField, mask: &DomainMask) -> BoundaryDiagnostics {
    let g = mask.grid();
    if mask.is_rectangle() {
        let (nx, ny) = (g.nx(), g.ny());
        let mut flux_sq = 0.0;
        let mut max_flux: f64 = 0.0;
        let faces: [([i32; 2], Vec<usize>, f64); 4] = [
            ([-1, 0], (0..ny).map(|j| g.index(0, j)).collect(), g.h2()),
            ([1, 0], (0..ny).map(|j| g.index(nx - 1, j)).collect(), g.h2()),
            ([0, -1], (0..nx).map(|i| g.index(i, 0)).collect(), g.h1()),
            ([0, 1], (0..nx).map(|i| g.index(i, ny - 1)).collect(), g.h1()),
        ];
        for (normal, nodes, h) in faces {
            let last = nodes.len() - 1;
            for (idx, &k) in nodes.iter().enumerate() {
                let q = face_flux(u, k, normal);
                let wgt = if idx == 0 || idx == last { 0.5 * h } else { h };
                flux_sq += wgt * q * q;
                max_flux = max_flux.max(q.abs());
            }
        }
        return BoundaryDiagnostics { flux_sq, curvature_flux: 0.0, max_flux, curvature_unrepresented: true };
    }
    let lp = mask.boundary_loop();
    let n = lp.len();
    let pts: Vec<[f64; 2]> = lp.iter().map(|&k| g.point(k)).collect();
    let dist = |a: [f64; 2], b: [f64; 2]| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let s = g.h();
    let mut flux_sq = 0.0;
    let mut curvature_flux = 0.0;
    let mut max_flux: f64 = 0.0;
    for (idx, &k) in lp.iter().enumerate() {
        let ds = 0.5 * (dist(pts[idx], pts[(idx + n - 1) % n]) + dist(pts[idx], pts[(idx + 1) % n]));
        let nu = mask.normal(k);
        let p = pts[idx];
        let u1 = bilinear(u, [p[0] - s * nu[0], p[1] - s * nu[1]]);
        let u2 = bilinear(u, [p[0] - 2.0 * s * nu[0], p[1] - 2.0 * s * nu[1]]);
        let q = (3.0 * u[k] - 4.0 * u1 + u2) / (2.0 * s);
        let kappa = mask.shape().omega.curvature(p);
        flux_sq += ds * q * q;
        curvature_flux += ds * kappa * psi[k] * q * q;
        max_flux = max_flux.max(q.abs());
    }
    BoundaryDiagnostics { flux_sq, curvature_flux, max_flux, curvature_unrepresented: false }
}

/// `eps (D^2 u)^{-1}` at the interior nodes, `None` elsewhere.
pub fn multiplier_field(u: &ScalarField, eps: f64, mask: &DomainMask) -> Result<Vec<Option<Sym2>>> {
    let g = mask.grid();
    let mut out = vec![None; g.len()];
    for &k in mask.unknowns() {
        let h = u.hessian_at(k);
        let d = h.det();
        if !(d > 0.0) || !(h.trace() > 0.0) {
            let (i, j) = g.ij(k);
            return Err(Error::Degenerate { i, j, det: d });
        }
        out[k] = Some(h.inverse().expect("positive determinant").scale(eps));
    }
    Ok(out)
}

/// The three quantities that stay bounded along the `eps` continuation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UniformBounds {
    /// `eps int_{∂Omega} u_nu^2`.
    pub boundary_flux: f64,
    /// `rho int_{Omega0} (u - phi)^2`.
    pub inner_deviation: f64,
    /// `(1 / eps) int_{Omega \ Omega0} (u - phi)^2`.
    pub outer_deviation: f64,
}

impl UniformBounds {
    pub fn as_array(&self) -> [f64; 3] {
        [self.boundary_flux, self.inner_deviation, self.outer_deviation]
    }
}

pub fn uniform_bounds(u: &ScalarField, prob: &AbreuProblem, eps: f64) -> UniformBounds {
    let mask = &prob.mask;
    let w0 = mask.omega0_weights();
    let inner: f64 = mask.omega0().iter().map(|&k| w0[k] * (u[k] - prob.phi[k]).powi(2)).sum();
    UniformBounds {
        boundary_flux: eps * boundary_diagnostics(u, &prob.psi, mask).flux_sq,
        inner_deviation: prob.model.rho() * inner,
        outer_deviation: outer_deviation(u, &prob.phi, mask) / eps,
    }
}

#[derive(Clone, Debug)]
pub struct ContinuationEntry {
    pub eps: f64,
    pub report: SolveReport,
    /// `|u_eps - u_prev|_inf` on `Omega0`.
    pub diff_prev: Option<f64>,
    pub bounds: UniformBounds,
}

/// Solves the `eps`-scaled system for each `eps` in the decreasing list,
/// warm-starting every solve from the previous one. Stops at the first
/// failure unless `keep_going`.
pub fn epsilon_continuation(
    template: &AbreuProblem,
    eps_list: &[f64],
    cfg: &HomotopyConfig,
    keep_going: bool,
) -> Result<Vec<ContinuationEntry>> {
    if eps_list.is_empty() || eps_list.windows(2).any(|w| !(w[1] < w[0])) || !(eps_list[eps_list.len() - 1] > 0.0) {
        return Err(Error::Config(format!("eps list must be positive and strictly decreasing, got {eps_list:?}")));
    }
    let mask = template.mask();
    let mut out: Vec<ContinuationEntry> = Vec::new();
    for &eps in eps_list {
        let prob = template.with_penalization(Penalization::Continuation(eps))?;
        let warm = out.last().filter(|e| e.report.converged()).map(|e| WarmStart { u: e.report.u.clone(), w: e.report.w.clone() });
        let report = solve_abreu_from(&prob, cfg, warm.as_ref())?;
        let diff_prev = out.last().map(|e| report.u.max_abs_diff_on(&e.report.u, mask.omega0().iter().copied()));
        let bounds = uniform_bounds(&report.u, &prob, eps);
        let ok = report.converged();
        out.push(ContinuationEntry { eps, report, diff_prev, bounds });
        if !ok && !keep_going {
            break;
        }
    }
    Ok(out)
}
