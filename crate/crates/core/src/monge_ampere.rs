//! Dirichlet Monge-Ampere solver: damped Newton on `det D^2 u = g` with an
//! eigenvalue-clipped linearization, started from the Poisson surrogate
//! `Laplace u = 2 sqrt(g)`.

use crate::error::{Error, Result};
use crate::grid::{check_discrete_convexity, DomainMask, ScalarField};
use crate::linalg::Sym2;
use crate::lma::NinePointSystem;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MaConfig {
    pub newton_tol: f64,
    pub max_newton: usize,
    /// Backtracking factor of the line search.
    pub damping: f64,
    /// Eigenvalue floor of the Hessian used in the linearization.
    pub convexification_floor: f64,
}

impl Default for MaConfig {
    fn default() -> Self {
        MaConfig { newton_tol: 1e-9, max_newton: 60, damping: 0.5, convexification_floor: 1e-8 }
    }
}

impl MaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.newton_tol > 0.0) {
            return Err(Error::Config(format!("newton_tol must be > 0, got {}", self.newton_tol)));
        }
        if !(self.damping > 0.0 && self.damping < 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1), got {}", self.damping)));
        }
        if !(self.convexification_floor > 0.0) {
            return Err(Error::Config("convexification floor must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaStatus {
    Converged,
    /// Iteration cap hit or line search stalled; the best iterate is returned.
    NotConverged,
    /// Residual converged but the iterate fails the discrete convexity check.
    NonConvex,
}

#[derive(Clone, Debug)]
pub struct MaReport {
    pub status: MaStatus,
    pub iterations: usize,
    /// Max-norm residual of the initial guess and of every accepted step.
    pub residual_history: Vec<f64>,
    /// Threshold `newton_tol (1 + |g|_inf)`.
    pub tolerance: f64,
}

impl MaReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().unwrap_or(&f64::INFINITY)
    }
    pub fn converged(&self) -> bool {
        self.status == MaStatus::Converged
    }
}

#[derive(Clone, Debug)]
pub struct MaSolution {
    pub u: ScalarField,
    pub report: MaReport,
}

/// `det D^2 u - g` at the interior nodes of `Omega`, zero elsewhere.
pub fn ma_residual(u: &ScalarField, g: &ScalarField, mask: &DomainMask) -> ScalarField {
    let mut r = ScalarField::constant(u.grid(), 0.0);
    for &k in mask.unknowns() {
        r[k] = u.hessian_at(k).det() - g[k];
    }
    r
}

fn residual_norm(u: &ScalarField, g: &ScalarField, mask: &DomainMask) -> f64 {
    mask.unknowns()
        .iter()
        .map(|&k| (u.hessian_at(k).det() - g[k]).abs())
        .fold(0.0, |a, b| if b.is_nan() { f64::INFINITY } else { a.max(b) })
}

fn check_inputs(g: &ScalarField, phi: &ScalarField, mask: &DomainMask) -> Result<()> {
    if g.grid() != mask.grid() || phi.grid() != mask.grid() {
        return Err(Error::invalid("fields and mask live on different grids"));
    }
    if let Some(&k) = mask.unknowns().iter().find(|&&k| !(g[k] > 0.0 && g[k].is_finite())) {
        return Err(Error::Domain(format!("Monge-Ampere data must be positive, got g = {} at node {k}", g[k])));
    }
    if let Some(&k) = mask.boundary().iter().find(|&&k| !phi[k].is_finite()) {
        return Err(Error::invalid(format!("non-finite boundary data at node {k}")));
    }
    Ok(())
}

/// Solves `Laplace u = 2 sqrt(g)`, `u = phi` on the boundary. Exact for
/// isotropic Hessians, and a convex start otherwise.
pub fn poisson_start(g: &ScalarField, phi: &ScalarField, mask: &DomainMask) -> Result<ScalarField> {
    let sys = NinePointSystem::assemble(mask, |_| Sym2::IDENTITY);
    let f = g.map(|v| 2.0 * v.max(0.0).sqrt());
    Ok(sys.solve(&f, phi)?.0)
}

/// Convex solution of `det D^2 u = g` in `Omega` with `u = phi` on the
/// boundary nodes, started from the Poisson surrogate.
pub fn solve_dirichlet_ma(g: &ScalarField, phi: &ScalarField, mask: &DomainMask, cfg: &MaConfig) -> Result<MaSolution> {
    solve_dirichlet_ma_from(g, phi, mask, cfg, None)
}

/// As [`solve_dirichlet_ma`], optionally warm-started: the interior values
/// of `initial` replace the Poisson start when they are strictly convex.
pub fn solve_dirichlet_ma_from(
    g: &ScalarField,
    phi: &ScalarField,
    mask: &DomainMask,
    cfg: &MaConfig,
    initial: Option<&ScalarField>,
) -> Result<MaSolution> {
    cfg.validate()?;
    check_inputs(g, phi, mask)?;
    let tolerance = cfg.newton_tol * (1.0 + g.max_abs_on(mask.unknowns().iter().copied()));

    let warm = initial.and_then(|init| {
        let mut w = phi.clone();
        for &k in mask.unknowns() {
            w[k] = init[k];
        }
        let strictly_convex = mask.unknowns().iter().all(|&k| w.hessian_at(k).det() > 0.0);
        (strictly_convex && check_discrete_convexity(&w, mask, 0.0).is_empty()).then_some(w)
    });
    let mut u = match warm {
        Some(w) => w,
        None => poisson_start(g, phi, mask)?,
    };
    let mut res = residual_norm(&u, g, mask);

    let mut history = vec![res];
    let mut iterations = 0;
    let mut stalled = false;
    while res > tolerance && iterations < cfg.max_newton {
        iterations += 1;
        let rhs = ma_residual(&u, g, mask).map(|v| -v);
        let sys = NinePointSystem::assemble(mask, |k| u.hessian_at(k).clip_below(cfg.convexification_floor).cofactor());
        let (du, _) = sys.solve(&rhs, &ScalarField::constant(u.grid(), 0.0))?;

        let mut alpha = 1.0;
        let mut accepted = None;
        while alpha > 1e-10 {
            let trial = u.zip_map(&du, |a, b| a + alpha * b);
            let r = residual_norm(&trial, g, mask);
            if r < res {
                accepted = Some((trial, r));
                break;
            }
            alpha *= cfg.damping;
        }
        match accepted {
            Some((trial, r)) => {
                u = trial;
                res = r;
                history.push(r);
            }
            None => {
                stalled = true;
                break;
            }
        }
    }
    for &k in mask.boundary() {
        u[k] = phi[k];
    }

    let status = if res > tolerance || stalled {
        MaStatus::NotConverged
    } else if !check_discrete_convexity(&u, mask, 1e-8).is_empty() {
        MaStatus::NonConvex
    } else {
        MaStatus::Converged
    };
    Ok(MaSolution { u, report: MaReport { status, iterations, residual_history: history, tolerance } })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainShape, GridSpec, Region};

    fn mask(n: usize) -> DomainMask {
        let shape = DomainShape { omega: Region::square(-1.0, 1.0), omega0: Region::square(-0.5, 0.5) };
        build_domain(&shape, GridSpec::square(n, -1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn quadratic_is_reproduced() {
        let m = mask(17);
        let g = m.grid();
        let exact = ScalarField::from_fn(g, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        let sol = solve_dirichlet_ma(&ScalarField::constant(g, 1.0), &exact, &m, &MaConfig::default()).unwrap();
        assert!(sol.report.converged());
        assert!(sol.u.max_abs_diff_on(&exact, m.closure()) < 1e-8);

        let aniso = ScalarField::from_fn(g, |x| x[0] * x[0] + 0.25 * x[1] * x[1] + 0.3 * x[0] * x[1]);
        let det = 2.0 * 0.5 - 0.3 * 0.3;
        let sol = solve_dirichlet_ma(&ScalarField::constant(g, det), &aniso, &m, &MaConfig::default()).unwrap();
        assert!(sol.report.converged(), "{:?}", sol.report);
        assert!(sol.u.max_abs_diff_on(&aniso, m.closure()) < 1e-8);
        assert!(sol.report.residual_history.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn residual_examples() {
        let m = mask(17);
        let g = m.grid();
        let u = ScalarField::from_fn(g, |x| 0.5 * (x[0] * x[0] + x[1] * x[1]));
        assert!(ma_residual(&u, &ScalarField::constant(g, 1.0), &m).max_abs_on(0..g.len()) < 1e-14);
        let r = ma_residual(&u, &ScalarField::constant(g, 2.0), &m);
        assert!(m.unknowns().iter().all(|&k| (r[k] + 1.0).abs() < 1e-12));
    }

    #[test]
    fn nonpositive_data_rejected() {
        let m = mask(17);
        let g = m.grid();
        let phi = ScalarField::constant(g, 0.0);
        let err = solve_dirichlet_ma(&ScalarField::constant(g, -1.0), &phi, &m, &MaConfig::default());
        assert!(matches!(err, Err(Error::Domain(_))));
        let bad = MaConfig { damping: 1.0, ..MaConfig::default() };
        assert!(solve_dirichlet_ma(&ScalarField::constant(g, 1.0), &phi, &m, &bad).is_err());
    }
}
