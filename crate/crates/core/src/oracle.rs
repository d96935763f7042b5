//! Direct evaluation of the discretized functionals and a brute-force
//! minimizer over the discrete convexity cone: accelerated projected
//! gradient, with the projection computed by dual coordinate ascent over the
//! cone's halfspaces.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{Direction, DomainMask, ScalarField};
use crate::lagrangian::{Gauge, LagrangianModel, Point};
use crate::linalg::{BandLu, Csr};

/// `J(u)`: trapezoid quadrature of `F0(x, u) + F1(x, Du)` over `Omega0` with
/// centered `Du`.
pub fn evaluate_j(u: &ScalarField, model: &LagrangianModel, mask: &DomainMask) -> f64 {
    let g = mask.grid();
    let w = mask.omega0_weights();
    mask.omega0()
        .iter()
        .map(|&k| {
            let x = g.point(k);
            w[k] * model.energy(x, u[k], u.gradient(k))
        })
        .sum()
}

/// Trapezoid weights of `Omega \ Omega0`.
pub fn outer_weights(mask: &DomainMask) -> Vec<f64> {
    mask.omega_weights().iter().zip(mask.omega0_weights()).map(|(a, b)| a - b).collect()
}

/// `int_{Omega \ Omega0} (u - phi)^2`.
pub fn outer_deviation(u: &ScalarField, phi: &ScalarField, mask: &DomainMask) -> f64 {
    outer_weights(mask).iter().enumerate().map(|(k, w)| w * (u[k] - phi[k]).powi(2)).sum()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum JEps {
    Value(f64),
    /// `det D^2 u <= 0` somewhere: the barrier term is infinite.
    Infeasible,
}

/// `J_eps(u) = J(u) + (1/2 eps) int_{Omega\Omega0} (u - phi)^2 - eps int_Omega G(det D^2 u)`,
/// the barrier integral taken over the interior nodes.
pub fn evaluate_j_eps(
    u: &ScalarField,
    phi: &ScalarField,
    model: &LagrangianModel,
    gauge: &Gauge,
    eps: f64,
    mask: &DomainMask,
) -> Result<JEps> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be > 0, got {eps}")));
    }
    let g = mask.grid();
    let cell = g.h1() * g.h2();
    let mut barrier = 0.0;
    for &k in mask.unknowns() {
        let d = u.hessian_at(k).det();
        if !(d > 0.0) {
            return Ok(JEps::Infeasible);
        }
        let gv = gauge.eval(d)?.g;
        if gv.is_nan() {
            return Err(Error::Domain("gauge has no antiderivative; J_eps is undefined".into()));
        }
        barrier += cell * gv;
    }
    Ok(JEps::Value(evaluate_j(u, model, mask) + outer_deviation(u, phi, mask) / (2.0 * eps) - eps * barrier))
}

/// One cone row: the raw second difference `u(x+e) - 2u(x) + u(x-e)` at an
/// interior node along one lattice direction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeRow {
    pub node: usize,
    pub direction: Direction,
    plus: usize,
    minus: usize,
}

impl ConeRow {
    pub fn eval(&self, u: &ScalarField) -> f64 {
        u[self.plus] - 2.0 * u[self.node] + u[self.minus]
    }
}

/// Discrete convexity cone: every row `>= 0`.
#[derive(Clone, Debug)]
pub struct ConvexityCone {
    rows: Vec<ConeRow>,
}

impl ConvexityCone {
    pub fn new(mask: &DomainMask) -> Self {
        let g = mask.grid();
        let mut rows = Vec::with_capacity(4 * mask.unknowns().len());
        for &k in mask.unknowns() {
            for direction in Direction::ALL {
                let (di, dj) = direction.offset();
                if let (Some(plus), Some(minus)) = (g.offset(k, di, dj), g.offset(k, -di, -dj)) {
                    if mask.class(plus).in_closure() && mask.class(minus).in_closure() {
                        rows.push(ConeRow { node: k, direction, plus, minus });
                    }
                }
            }
        }
        ConvexityCone { rows }
    }

    pub fn rows(&self) -> &[ConeRow] {
        &self.rows
    }

    /// `max(0, -row(u))` over all rows.
    pub fn max_violation(&self, u: &ScalarField) -> f64 {
        self.rows.iter().map(|r| (-r.eval(u)).max(0.0)).fold(0.0, f64::max)
    }

    /// Euclidean projection of `u` onto the cone with the boundary values of
    /// `u` held fixed.
    pub fn project(&self, u: &ScalarField, mask: &DomainMask, tol: f64) -> Result<ScalarField> {
        let mut p = Projector::new(self, mask, u);
        let y: Vec<f64> = mask.unknowns().iter().map(|&k| u[k]).collect();
        let x = p.project(&y, tol)?;
        let mut out = u.clone();
        for (&k, v) in mask.unknowns().iter().zip(x) {
            out[k] = v;
        }
        Ok(out)
    }
}

/// Halfspace `a . x >= b` over the unknowns, `a` with at most three entries.
#[derive(Clone, Debug)]
struct Halfspace {
    idx: [usize; 3],
    coef: [f64; 3],
    len: usize,
    b: f64,
    norm_sq: f64,
}

/// Hildreth's dual coordinate ascent for the projection onto an
/// intersection of halfspaces. Multipliers persist across calls, so
/// successive projections of nearby points are cheap.
struct Projector {
    rows: Vec<Halfspace>,
    lambda: Vec<f64>,
    max_sweeps: usize,
}

impl Projector {
    fn new(cone: &ConvexityCone, mask: &DomainMask, fixed: &ScalarField) -> Self {
        let rows = cone
            .rows
            .iter()
            .map(|r| {
                let mut h = Halfspace { idx: [0; 3], coef: [0.0; 3], len: 0, b: 0.0, norm_sq: 0.0 };
                for (node, c) in [(r.plus, 1.0), (r.node, -2.0), (r.minus, 1.0)] {
                    match mask.unknown_index(node) {
                        Some(i) => {
                            h.idx[h.len] = i;
                            h.coef[h.len] = c;
                            h.len += 1;
                            h.norm_sq += c * c;
                        }
                        None => h.b -= c * fixed[node],
                    }
                }
                h
            })
            .collect::<Vec<_>>();
        let n = rows.len();
        Projector { rows, lambda: vec![0.0; n], max_sweeps: 200_000 }
    }

    /// Hildreth from the stored multipliers. Far from the cone its linear
    /// rate is poor, so after a short budget the multipliers are reset by an
    /// interior-point solve and the sweeps resume from there. Hildreth's
    /// stopping test bounds the last sweep, not the distance to the true
    /// projection, so the result is refined on its active set.
    fn project(&mut self, y: &[f64], tol: f64) -> Result<Vec<f64>> {
        let x = match self.hildreth(y, tol, 2_000) {
            Some(x) => x,
            None => {
                self.interior_point(y);
                self.hildreth(y, tol, self.max_sweeps)
                    .ok_or_else(|| Error::LinearSolve("cone projection did not converge".into()))?
            }
        };
        Ok(self.polish(y, tol).unwrap_or(x))
    }

    /// Exact projection onto the face picked by the multipliers: augmented
    /// Lagrangian iterations for `A_act x = b_act` on the banded system
    /// `I + rho A_act^T A_act` (well posed even for redundant active rows),
    /// then rows with negative multipliers leave the set and violated rows
    /// join it. `None` if the active set does not settle.
    fn polish(&mut self, y: &[f64], tol: f64) -> Option<Vec<f64>> {
        const RHO: f64 = 1e6;
        let n = y.len();
        let scale = 1.0 + y.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let feas_tol = tol * scale;
        let mut active: Vec<bool> = self.lambda.iter().map(|&l| l > 0.0).collect();
        if !active.contains(&true) {
            return None;
        }
        let mut lam = self.lambda.clone();
        for _ in 0..8 {
            let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
            for h in self.rows.iter().zip(&active).filter(|(_, &a)| a).map(|(h, _)| h) {
                for a in 0..h.len {
                    for b in 0..h.len {
                        rows[h.idx[a]].push((h.idx[b], RHO * h.coef[a] * h.coef[b]));
                    }
                }
            }
            let lu = BandLu::factor(&Csr::from_rows(rows)).ok()?;
            let mut x = Vec::new();
            for _ in 0..30 {
                // (I + rho A^T A) x = y + A^T (lambda + rho b)
                let mut rhs = y.to_vec();
                for (r, h) in self.rows.iter().enumerate().filter(|&(r, _)| active[r]) {
                    let c = lam[r] + RHO * h.b;
                    for t in 0..h.len {
                        rhs[h.idx[t]] += c * h.coef[t];
                    }
                }
                x = lu.solve(&rhs);
                let mut res: f64 = 0.0;
                for (r, h) in self.rows.iter().enumerate().filter(|&(r, _)| active[r]) {
                    let e = Self::row_dot(h, &x) - h.b;
                    lam[r] -= RHO * e;
                    res = res.max(e.abs());
                }
                if res <= feas_tol {
                    break;
                }
            }
            let mut settled = true;
            for (r, h) in self.rows.iter().enumerate() {
                if active[r] {
                    if lam[r] < 0.0 {
                        active[r] = false;
                        lam[r] = 0.0;
                        settled = false;
                    } else if (Self::row_dot(h, &x) - h.b).abs() > feas_tol {
                        settled = false;
                    }
                } else if Self::row_dot(h, &x) - h.b < -feas_tol {
                    active[r] = true;
                    settled = false;
                }
            }
            if settled {
                self.lambda = lam;
                return Some(x);
            }
        }
        None
    }

    fn hildreth(&mut self, y: &[f64], tol: f64, sweeps: usize) -> Option<Vec<f64>> {
        let mut x = y.to_vec();
        for (h, &l) in self.rows.iter().zip(&self.lambda) {
            if l != 0.0 {
                for t in 0..h.len {
                    x[h.idx[t]] += l * h.coef[t];
                }
            }
        }
        let scale = 1.0 + y.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let n = self.rows.len();
        for sweep in 0..sweeps {
            let mut change: f64 = 0.0;
            let mut violation: f64 = 0.0;
            for s in 0..n {
                let r = if sweep % 2 == 0 { s } else { n - 1 - s };
                let h = &self.rows[r];
                let mut ax = 0.0;
                for t in 0..h.len {
                    ax += h.coef[t] * x[h.idx[t]];
                }
                let slack = ax - h.b;
                violation = violation.max(-slack);
                let delta = (-slack / h.norm_sq).max(-self.lambda[r]);
                if delta != 0.0 {
                    self.lambda[r] += delta;
                    for t in 0..h.len {
                        x[h.idx[t]] += delta * h.coef[t];
                    }
                    change = change.max(delta.abs() * h.norm_sq.sqrt());
                }
            }
            if change <= tol * scale && violation <= tol * scale {
                return Some(x);
            }
        }
        None
    }

    fn row_dot(h: &Halfspace, x: &[f64]) -> f64 {
        (0..h.len).map(|t| h.coef[t] * x[h.idx[t]]).sum()
    }

    /// Mehrotra predictor-corrector for `min |x - y|^2 / 2` s.t.
    /// `A x - b = s >= 0`; leaves its multipliers in `lambda`. Both Newton
    /// solves share one factorization of `I + A^T S^{-1} Lambda A`.
    fn interior_point(&mut self, y: &[f64]) {
        let m = self.rows.len();
        let n = y.len();
        let scale = 1.0 + y.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
        let mut x = y.to_vec();
        let mut s: Vec<f64> = self.rows.iter().map(|h| (Self::row_dot(h, &x) - h.b).max(scale)).collect();
        let mut lam = vec![scale; m];
        for _ in 0..200 {
            let mu = s.iter().zip(&lam).map(|(a, b)| a * b).sum::<f64>() / m as f64;
            let mut rd: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
            for (h, &l) in self.rows.iter().zip(&lam) {
                for t in 0..h.len {
                    rd[h.idx[t]] -= l * h.coef[t];
                }
            }
            let rp: Vec<f64> = self.rows.iter().zip(&s).map(|(h, &si)| Self::row_dot(h, &x) - h.b - si).collect();
            let infeas = rd.iter().chain(&rp).fold(0.0_f64, |a, v| a.max(v.abs()));
            if mu <= 1e-14 * scale * scale && infeas <= 1e-12 * scale {
                break;
            }
            let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 1.0)]).collect();
            for (r, h) in self.rows.iter().enumerate() {
                let d = lam[r] / s[r];
                for a in 0..h.len {
                    for b in 0..h.len {
                        rows[h.idx[a]].push((h.idx[b], d * h.coef[a] * h.coef[b]));
                    }
                }
            }
            let Ok(lu) = BandLu::factor(&Csr::from_rows(rows)) else { break };
            // direction for complementarity target rc = lambda s - target
            let direction = |rc: &[f64]| {
                let mut rhs: Vec<f64> = rd.iter().map(|v| -v).collect();
                for (r, h) in self.rows.iter().enumerate() {
                    let q = (rc[r] + lam[r] * rp[r]) / s[r];
                    for t in 0..h.len {
                        rhs[h.idx[t]] -= h.coef[t] * q;
                    }
                }
                let dx = lu.solve(&rhs);
                let ds: Vec<f64> = self.rows.iter().zip(&rp).map(|(h, &p)| Self::row_dot(h, &dx) + p).collect();
                let dl: Vec<f64> = (0..m).map(|r| -(rc[r] + lam[r] * ds[r]) / s[r]).collect();
                (dx, ds, dl)
            };
            let step = |ds: &[f64], dl: &[f64], frac: f64| {
                let mut alpha: f64 = 1.0;
                for r in 0..m {
                    if ds[r] < 0.0 {
                        alpha = alpha.min(-frac * s[r] / ds[r]);
                    }
                    if dl[r] < 0.0 {
                        alpha = alpha.min(-frac * lam[r] / dl[r]);
                    }
                }
                alpha
            };
            let rc: Vec<f64> = (0..m).map(|r| lam[r] * s[r]).collect();
            let (_, ds_a, dl_a) = direction(&rc);
            let alpha_a = step(&ds_a, &dl_a, 1.0);
            let mu_a = (0..m).map(|r| (s[r] + alpha_a * ds_a[r]) * (lam[r] + alpha_a * dl_a[r])).sum::<f64>() / m as f64;
            let sigma_mu = (mu_a / mu).powi(3) * mu;
            let rc: Vec<f64> = (0..m).map(|r| lam[r] * s[r] + ds_a[r] * dl_a[r] - sigma_mu).collect();
            let (dx, ds, dl) = direction(&rc);
            let alpha = step(&ds, &dl, 0.995);
            for (xi, d) in x.iter_mut().zip(&dx) {
                *xi += alpha * d;
            }
            for r in 0..m {
                s[r] += alpha * ds[r];
                lam[r] += alpha * dl[r];
            }
        }
        self.lambda = lam;
    }
}

/// Sum of `F` over `Omega0` and the outside penalty, i.e. the oracle
/// objective `sum F h^2 + (1 / 2 pen_eps) sum (u - phi)^2 h^2`. `F0` uses
/// trapezoid weights; `F1` is split over cell corners, each corner using the
/// one-sided differences along the two cell edges through it.
pub fn oracle_objective(u: &ScalarField, phi: &ScalarField, model: &LagrangianModel, mask: &DomainMask, pen_eps: f64) -> f64 {
    let mut grad = Vec::new();
    objective_and_gradient(u, phi, model, mask, pen_eps, &mut grad, false)
}

fn objective_and_gradient(
    u: &ScalarField,
    phi: &ScalarField,
    model: &LagrangianModel,
    mask: &DomainMask,
    pen_eps: f64,
    grad: &mut Vec<f64>,
    want_grad: bool,
) -> f64 {
    let g = mask.grid();
    let (h1, h2) = (g.h1(), g.h2());
    if want_grad {
        grad.clear();
        grad.resize(g.len(), 0.0);
    }
    let mut total = 0.0;
    for (k, w) in mask.omega0_weights().into_iter().enumerate() {
        if w > 0.0 {
            let x = g.point(k);
            total += w * model.f0_energy(x, u[k]);
            if want_grad {
                grad[k] += w * model.f0(x, u[k]);
            }
        }
    }
    let q = 0.25 * h1 * h2;
    for c in mask.omega0_cells() {
        let (i, j) = g.ij(c);
        for (ci, cj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            let k = g.index(i + ci, j + cj);
            let kx = g.index(i + 1 - ci, j + cj);
            let ky = g.index(i + ci, j + 1 - cj);
            let sx = if ci == 0 { h1 } else { -h1 };
            let sy = if cj == 0 { h2 } else { -h2 };
            let p: Point = [(u[kx] - u[k]) / sx, (u[ky] - u[k]) / sy];
            let x = g.point(k);
            total += q * model.f1(x, p);
            if want_grad {
                let gp = model.grad_p_f1(x, p);
                grad[kx] += q * gp[0] / sx;
                grad[k] -= q * gp[0] / sx + q * gp[1] / sy;
                grad[ky] += q * gp[1] / sy;
            }
        }
    }
    for (k, w) in outer_weights(mask).into_iter().enumerate() {
        if w > 0.0 {
            let d = u[k] - phi[k];
            total += w * d * d / (2.0 * pen_eps);
            if want_grad {
                grad[k] += w * d / pen_eps;
            }
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleConfig {
    pub pen_eps: f64,
    pub max_iters: usize,
    /// Relative projected-gradient tolerance.
    pub pg_tol: f64,
    pub violation_tol: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig { pen_eps: 1e-4, max_iters: 50_000, pg_tol: 1e-6, violation_tol: 1e-10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OracleRecord {
    pub iteration: usize,
    pub objective: f64,
    pub pg_norm: f64,
    pub max_violation: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OracleStatus {
    Converged,
    MaxIters,
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub u: ScalarField,
    pub status: OracleStatus,
    pub objective: f64,
    pub history: Vec<OracleRecord>,
}

impl OracleResult {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iteration,objective,pg_norm,max_violation")?;
        for r in &self.history {
            writeln!(out, "{},{:.16e},{:.16e},{:.16e}", r.iteration, r.objective, r.pg_norm, r.max_violation)?;
        }
        Ok(())
    }
}

/// Sampled convexity of `F` in `(z, p)` over `Omega0`, on the ranges the
/// minimizer can reach.
fn check_model_convex(model: &LagrangianModel, phi: &ScalarField, mask: &DomainMask) -> Result<()> {
    let g = mask.grid();
    let zlo = phi.min_on(mask.closure()) - 1.0;
    let zhi = phi.max_on(mask.closure()) + 1.0;
    let r = 1.0 + 2.0 * mask.unknowns().iter().map(|&k| phi.gradient(k)).map(|d| d[0].hypot(d[1])).fold(0.0, f64::max);
    let pts = mask.omega0();
    let step = (pts.len() / 25).max(1);
    for &k in pts.iter().step_by(step) {
        let x = g.point(k);
        for a in 0..9 {
            let z = zlo + (zhi - zlo) * a as f64 / 8.0;
            let zt = z + (zhi - zlo) / 8.0;
            let m = (model.f0(x, zt) - model.f0(x, z)) * (zt - z);
            if m < -1e-9 * (1.0 + model.f0(x, z).abs()) {
                return Err(Error::Model(format!("F is not convex in z at x = {x:?}, z = {z}")));
            }
            for b in 0..9 {
                let p = [-r + 2.0 * r * a as f64 / 8.0, -r + 2.0 * r * b as f64 / 8.0];
                let h = model.hess_p_f1(x, p);
                if h.eigenvalues()[0] < -1e-9 * (1.0 + h.trace().abs()) {
                    return Err(Error::Model(format!("F is not convex in p at x = {x:?}, p = {p:?}")));
                }
            }
        }
    }
    Ok(())
}

/// Minimizes the oracle objective over the discrete convexity cone with
/// `u = phi` on the boundary, starting from `phi`.
pub fn minimize_constrained(
    model: &LagrangianModel,
    phi: &ScalarField,
    mask: &DomainMask,
    cfg: &OracleConfig,
) -> Result<OracleResult> {
    minimize_constrained_from(model, phi, mask, cfg, phi)
}

/// As [`minimize_constrained`] from an arbitrary start (its boundary values
/// are replaced by `phi`).
pub fn minimize_constrained_from(
    model: &LagrangianModel,
    phi: &ScalarField,
    mask: &DomainMask,
    cfg: &OracleConfig,
    start: &ScalarField,
) -> Result<OracleResult> {
    if !(cfg.pen_eps > 0.0) {
        return Err(Error::invalid(format!("pen_eps must be > 0, got {}", cfg.pen_eps)));
    }
    check_model_convex(model, phi, mask)?;
    let unk = mask.unknowns();
    let cone = ConvexityCone::new(mask);
    let mut proj = Projector::new(&cone, mask, phi);
    let proj_tol = cfg.violation_tol * 1e-2;

    let field_of = |v: &[f64]| {
        let mut f = phi.clone();
        for (&k, &x) in unk.iter().zip(v) {
            f[k] = x;
        }
        f
    };
    let mut gbuf = Vec::new();
    let mut eval = |v: &[f64], want: bool| -> (f64, Vec<f64>) {
        let f = field_of(v);
        let val = objective_and_gradient(&f, phi, model, mask, cfg.pen_eps, &mut gbuf, want);
        let gr = if want { unk.iter().map(|&k| gbuf[k]).collect() } else { Vec::new() };
        (val, gr)
    };
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();

    let y0: Vec<f64> = unk.iter().map(|&k| start[k]).collect();
    let mut x = proj.project(&y0, proj_tol)?;
    let (mut fx, mut gx) = eval(&x, true);
    // scale of the stopping test from phi, so it does not depend on the start
    let g0 = norm(&eval(&unk.iter().map(|&k| phi[k]).collect::<Vec<_>>(), true).1);
    let target = cfg.pg_tol * (1.0 + g0);

    // Lipschitz estimate: start small, backtrack up.
    let mut lip: f64 = 1.0;
    let mut x_prev = x.clone();
    let mut t_mom: f64 = 1.0;
    let mut history = Vec::new();
    let mut status = OracleStatus::MaxIters;

    for it in 0..cfg.max_iters {
        // gradient mapping at the current iterate, for the stopping test
        let step: Vec<f64> = x.iter().zip(&gx).map(|(a, b)| a - b / lip).collect();
        let xp = proj.project(&step, proj_tol)?;
        let pg = lip * norm(&x.iter().zip(&xp).map(|(a, b)| a - b).collect::<Vec<_>>());
        let viol = cone.max_violation(&field_of(&x));
        history.push(OracleRecord { iteration: it, objective: fx, pg_norm: pg, max_violation: viol });
        if pg <= target && viol <= cfg.violation_tol {
            status = OracleStatus::Converged;
            break;
        }

        let beta = {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_mom * t_mom).sqrt());
            let b = (t_mom - 1.0) / t_next;
            t_mom = t_next;
            b
        };
        let y: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a + beta * (a - b)).collect();
        let (fy, gy) = if beta == 0.0 { (fx, gx.clone()) } else { eval(&y, true) };
        // backtracking on the quadratic upper model at y
        let (x_new, f_new) = loop {
            let s: Vec<f64> = y.iter().zip(&gy).map(|(a, b)| a - b / lip).collect();
            let cand = proj.project(&s, proj_tol)?;
            let (fc, _) = eval(&cand, false);
            let d: Vec<f64> = cand.iter().zip(&y).map(|(a, b)| a - b).collect();
            let model_val = fy + gy.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>() + 0.5 * lip * d.iter().map(|a| a * a).sum::<f64>();
            if fc <= model_val + 1e-13 * (1.0 + fy.abs()) {
                break (cand, fc);
            }
            lip *= 2.0;
        };
        if f_new > fx && beta != 0.0 {
            // function-value restart: drop momentum, retry from x
            t_mom = 1.0;
            x_prev = x.clone();
            continue;
        }
        x_prev = std::mem::replace(&mut x, x_new);
        let (f2, g2) = eval(&x, true);
        fx = f2;
        debug_assert!((f2 - f_new).abs() <= 1e-12 * (1.0 + f2.abs()));
        gx = g2;
        lip *= 0.95;
    }
    let u = field_of(&x);
    let objective = fx;
    Ok(OracleResult { u, status, objective, history })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuditReport {
    pub points: usize,
    /// `min_v J(v) - J(u*)` over the audit set.
    pub min_gap: f64,
    /// Tolerance `1e-8 max(1, |J(u*)|)`.
    pub tolerance: f64,
}

impl AuditReport {
    pub fn passed(&self) -> bool {
        self.min_gap >= -self.tolerance
    }
}

/// Random feasible points: `q = max(phi, c + s)` with `s` a random convex
/// quadratic and `c = min_boundary (phi - s)` so `q = phi` on the boundary,
/// then convex combinations `theta q + (1 - theta) u*`. Requires a convex
/// `phi`.
pub fn feasible_points(u_star: &ScalarField, phi: &ScalarField, mask: &DomainMask, n: usize, seed: u64) -> Vec<ScalarField> {
    let g = mask.grid();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let a: f64 = rng.gen_range(0.0..3.0);
            let b: f64 = rng.gen_range(0.0..3.0);
            let c = rng.gen_range(-1.0..1.0) * (a * b).sqrt();
            let l = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
            let s = ScalarField::from_fn(g, |x| 0.5 * a * x[0] * x[0] + c * x[0] * x[1] + 0.5 * b * x[1] * x[1] + l[0] * x[0] + l[1] * x[1]);
            let shift = mask.boundary().iter().map(|&k| phi[k] - s[k]).fold(f64::INFINITY, f64::min);
            let theta = rng.gen_range(0.05..=1.0);
            let mut v = phi.clone();
            for &k in mask.unknowns() {
                let q = phi[k].max(shift + s[k]);
                v[k] = theta * q + (1.0 - theta) * u_star[k];
            }
            v
        })
        .collect()
}

/// Checks `J(u*) <= J(v)` on generated feasible points.
pub fn audit(u_star: &ScalarField, phi: &ScalarField, model: &LagrangianModel, mask: &DomainMask, pen_eps: f64, n: usize, seed: u64) -> AuditReport {
    let j_star = oracle_objective(u_star, phi, model, mask, pen_eps);
    let min_gap = feasible_points(u_star, phi, mask, n, seed)
        .iter()
        .map(|v| oracle_objective(v, phi, model, mask, pen_eps) - j_star)
        .fold(f64::INFINITY, f64::min);
    AuditReport { points: n, min_gap, tolerance: 1e-8 * j_star.abs().max(1.0) }
}

/// Fraction of interior nodes where a second difference along one of the
/// knight directions (1,2), (2,1), (1,-2), (2,-1) is negative beyond `tol`,
/// among nodes where those stencils fit in the closure. Measures how much
/// the four-direction cone overshoots convexity.
pub fn eight_direction_failure_fraction(u: &ScalarField, mask: &DomainMask, tol: f64) -> f64 {
    let g = mask.grid();
    let mut tested = 0usize;
    let mut failed = 0usize;
    for &k in mask.unknowns() {
        let mut any = false;
        let mut bad = false;
        for (di, dj) in [(1, 2), (2, 1), (1, -2), (2, -1)] {
            let (Some(p), Some(m)) = (g.offset(k, di, dj), g.offset(k, -di, -dj)) else {
                continue;
            };
            if !(mask.class(p).in_closure() && mask.class(m).in_closure()) {
                continue;
            }
            any = true;
            let step = (di as f64 * g.h1()).powi(2) + (dj as f64 * g.h2()).powi(2);
            if (u[p] - 2.0 * u[k] + u[m]) / step < -tol {
                bad = true;
            }
        }
        if any {
            tested += 1;
            failed += bad as usize;
        }
    }
    if tested == 0 {
        0.0
    } else {
        failed as f64 / tested as f64
    }
}
