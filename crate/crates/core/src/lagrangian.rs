//! Lagrangians `F(x, z, p) = F0(x, z) + F1(x, p)`, gauge functions linking
//! `w` to `det D^2 u`, and sampling-based checks of the structural
//! assumptions the solver relies on.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::DomainMask;
use crate::linalg::Sym2;

pub type Point = [f64; 2];

/// Pointwise callbacks of a Lagrangian. Implementations must be pure.
pub trait Lagrangian: Send + Sync {
    /// `F0(x, z)`.
    fn f0_energy(&self, x: Point, z: f64) -> f64;
    /// `f0 = dF0/dz`.
    fn f0(&self, x: Point, z: f64) -> f64;
    fn f1(&self, x: Point, p: Point) -> f64;
    fn grad_p_f1(&self, x: Point, p: Point) -> Point;
    fn hess_p_f1(&self, x: Point, p: Point) -> Sym2;
    /// `[F1_{p_1 x_1}, F1_{p_2 x_2}]`: the x-derivatives of `grad_p F1` at
    /// frozen `p`, component by component.
    fn cross_f1_components(&self, x: Point, p: Point) -> Point;

    /// `sum_i F1_{p_i x_i}`.
    fn cross_f1(&self, x: Point, p: Point) -> f64 {
        let c = self.cross_f1_components(x, p);
        c[0] + c[1]
    }
}

/// Nonnegative constants of the structural assumptions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConstants {
    pub rho: f64,
    pub c0: f64,
    pub c_star: f64,
    pub c0_bar: f64,
    pub c_star_bar: f64,
}

pub type GrowthBound = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct LagrangianModel {
    name: String,
    density: Arc<dyn Lagrangian>,
    constants: ModelConstants,
    eta: GrowthBound,
    non_convex_f0: bool,
}

impl fmt::Debug for LagrangianModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LagrangianModel")
            .field("name", &self.name)
            .field("constants", &self.constants)
            .field("non_convex_f0", &self.non_convex_f0)
            .finish()
    }
}

impl LagrangianModel {
    /// Wraps arbitrary callbacks. `eta` is the growth bound used by the
    /// assumption validator.
    pub fn custom(
        name: impl Into<String>,
        density: Arc<dyn Lagrangian>,
        constants: ModelConstants,
        eta: GrowthBound,
        non_convex_f0: bool,
    ) -> Self {
        LagrangianModel { name: name.into(), density, constants, eta, non_convex_f0 }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn constants(&self) -> ModelConstants {
        self.constants
    }
    pub fn rho(&self) -> f64 {
        self.constants.rho
    }
    pub fn eta(&self, r: f64) -> f64 {
        (self.eta)(r)
    }
    /// Set when `f0` is not monotone in `z` (Allen-Cahn).
    pub fn non_convex_f0(&self) -> bool {
        self.non_convex_f0
    }
    pub fn density(&self) -> &dyn Lagrangian {
        self.density.as_ref()
    }

    pub fn f0_energy(&self, x: Point, z: f64) -> f64 {
        self.density.f0_energy(x, z)
    }
    pub fn f0(&self, x: Point, z: f64) -> f64 {
        self.density.f0(x, z)
    }
    pub fn f1(&self, x: Point, p: Point) -> f64 {
        self.density.f1(x, p)
    }
    pub fn grad_p_f1(&self, x: Point, p: Point) -> Point {
        self.density.grad_p_f1(x, p)
    }
    pub fn hess_p_f1(&self, x: Point, p: Point) -> Sym2 {
        self.density.hess_p_f1(x, p)
    }
    pub fn cross_f1(&self, x: Point, p: Point) -> f64 {
        self.density.cross_f1(x, p)
    }
    pub fn cross_f1_components(&self, x: Point, p: Point) -> Point {
        self.density.cross_f1_components(x, p)
    }
    /// `F(x, z, p)`.
    pub fn energy(&self, x: Point, z: f64, p: Point) -> f64 {
        self.density.f0_energy(x, z) + self.density.f1(x, p)
    }
}

/// Type density `gamma(x)` of the Rochet-Chone model.
#[derive(Clone)]
pub enum Gamma {
    Constant(f64),
    /// `c + slope . x`.
    Affine { c: f64, slope: Point },
    /// `prod_i (1 - ((x_i - c_i) / a_i)^2)`; vanishes on the rectangle
    /// `|x_i - c_i| = a_i`.
    Bump { center: Point, half_widths: Point },
    /// `1 - |x - c|^2 / r^2`; vanishes on the circle of radius `r`.
    RadialBump { center: Point, radius: f64 },
    /// Value and gradient.
    Custom(Arc<dyn Fn(Point) -> (f64, Point) + Send + Sync>),
}

impl fmt::Debug for Gamma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gamma::Constant(c) => write!(f, "Constant({c})"),
            Gamma::Affine { c, slope } => write!(f, "Affine({c}, {slope:?})"),
            Gamma::Bump { center, half_widths } => write!(f, "Bump({center:?}, {half_widths:?})"),
            Gamma::RadialBump { center, radius } => write!(f, "RadialBump({center:?}, {radius})"),
            Gamma::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl Gamma {
    pub fn value_grad(&self, x: Point) -> (f64, Point) {
        match self {
            Gamma::Constant(c) => (*c, [0.0, 0.0]),
            Gamma::Affine { c, slope } => (c + slope[0] * x[0] + slope[1] * x[1], *slope),
            Gamma::Bump { center, half_widths } => {
                let t = [(x[0] - center[0]) / half_widths[0], (x[1] - center[1]) / half_widths[1]];
                let a = 1.0 - t[0] * t[0];
                let b = 1.0 - t[1] * t[1];
                (a * b, [-2.0 * t[0] / half_widths[0] * b, -2.0 * t[1] / half_widths[1] * a])
            }
            Gamma::RadialBump { center, radius } => {
                let d = [x[0] - center[0], x[1] - center[1]];
                let r2 = radius * radius;
                (1.0 - (d[0] * d[0] + d[1] * d[1]) / r2, [-2.0 * d[0] / r2, -2.0 * d[1] / r2])
            }
            Gamma::Custom(f) => f(x),
        }
    }

    pub fn value(&self, x: Point) -> f64 {
        self.value_grad(x).0
    }
}

struct RochetChone {
    gamma: Gamma,
    rho: f64,
}

impl Lagrangian for RochetChone {
    fn f0_energy(&self, x: Point, z: f64) -> f64 {
        self.gamma.value(x) * z + 0.5 * self.rho * z * z
    }
    fn f0(&self, x: Point, z: f64) -> f64 {
        self.gamma.value(x) + self.rho * z
    }
    fn f1(&self, x: Point, p: Point) -> f64 {
        let g = self.gamma.value(x);
        0.5 * g * (p[0] * p[0] + p[1] * p[1]) - g * (x[0] * p[0] + x[1] * p[1])
    }
    fn grad_p_f1(&self, x: Point, p: Point) -> Point {
        let g = self.gamma.value(x);
        [g * (p[0] - x[0]), g * (p[1] - x[1])]
    }
    fn hess_p_f1(&self, x: Point, _p: Point) -> Sym2 {
        let g = self.gamma.value(x);
        Sym2::diag(g, g)
    }
    fn cross_f1_components(&self, x: Point, p: Point) -> Point {
        let (g, dg) = self.gamma.value_grad(x);
        [dg[0] * (p[0] - x[0]) - g, dg[1] * (p[1] - x[1]) - g]
    }
}

/// Perturbed Rochet-Chone Lagrangian
/// `F0 = gamma z + rho z^2 / 2`, `F1 = gamma |p|^2 / 2 - gamma x . p`.
///
/// `gamma` must be positive at interior `Omega0` nodes and nonnegative on the
/// `Omega0` band (it may vanish on the boundary of `Omega0`). The constants
/// are derived from the bounds of `gamma` and `|D gamma|` over `Omega0`.
pub fn rochet_chone(gamma: Gamma, rho: f64, mask: &DomainMask) -> Result<LagrangianModel> {
    if !(rho >= 0.0) || !rho.is_finite() {
        return Err(Error::Model(format!("rho must be >= 0, got {rho}")));
    }
    let g = mask.grid();
    let mut c1: f64 = 0.0;
    let mut c2: f64 = 0.0;
    let mut xmax: f64 = 0.0;
    let mut xnorm: f64 = 0.0;
    let mut gamma_bar: f64 = 0.0;
    let mut x_bar: f64 = 0.0;
    for &k in mask.omega0() {
        let x = g.point(k);
        let (v, dv) = gamma.value_grad(x);
        let on_band = mask.class(k) == crate::grid::NodeClass::BoundaryOmega0Band;
        if !v.is_finite() || v < 0.0 || (!on_band && v <= 0.0) {
            return Err(Error::Model(format!("gamma must be positive in Omega0, got {v} at ({}, {})", x[0], x[1])));
        }
        c1 = c1.max(v);
        c2 = c2.max(dv[0].abs().max(dv[1].abs()));
        xmax = xmax.max(x[0].abs().max(x[1].abs()));
        xnorm = xnorm.max((x[0] * x[0] + x[1] * x[1]).sqrt());
        if on_band {
            gamma_bar = gamma_bar.max(v);
            x_bar = x_bar.max(x[0].abs().max(x[1].abs()));
        }
    }
    let constants = ModelConstants {
        rho,
        c0: c2,
        c_star: c1.max(c2 * xmax + c1),
        c0_bar: gamma_bar,
        c_star_bar: gamma_bar * x_bar,
    };
    let a = c1.max(rho).max(c1 * xnorm.max(1.0));
    let eta: GrowthBound = Arc::new(move |r: f64| a * (1.0 + r));
    Ok(LagrangianModel {
        name: "rochet_chone".into(),
        density: Arc::new(RochetChone { gamma, rho }),
        constants,
        eta,
        non_convex_f0: false,
    })
}

struct AllenCahn;

impl Lagrangian for AllenCahn {
    fn f0_energy(&self, _x: Point, z: f64) -> f64 {
        0.25 * (z * z - 1.0).powi(2)
    }
    fn f0(&self, _x: Point, z: f64) -> f64 {
        z * z * z - z
    }
    fn f1(&self, _x: Point, p: Point) -> f64 {
        0.5 * (p[0] * p[0] + p[1] * p[1])
    }
    fn grad_p_f1(&self, _x: Point, p: Point) -> Point {
        p
    }
    fn hess_p_f1(&self, _x: Point, _p: Point) -> Sym2 {
        Sym2::IDENTITY
    }
    fn cross_f1_components(&self, _x: Point, _p: Point) -> Point {
        [0.0, 0.0]
    }
}

/// Allen-Cahn Lagrangian `(z^2 - 1)^2 / 4 + |p|^2 / 2`. Its `f0` is not
/// monotone, so the model is flagged and only accepted by the Allen-Cahn
/// right-hand side.
pub fn allen_cahn() -> LagrangianModel {
    LagrangianModel {
        name: "allen_cahn".into(),
        density: Arc::new(AllenCahn),
        constants: ModelConstants { rho: 0.0, c0: 0.0, c_star: 1.0, c0_bar: 1.0, c_star_bar: 0.0 },
        eta: Arc::new(|r: f64| (1.0 + r).powi(3)),
        non_convex_f0: true,
    }
}

struct PowerLagrangian {
    s: u32,
}

impl Lagrangian for PowerLagrangian {
    fn f0_energy(&self, _x: Point, _z: f64) -> f64 {
        0.0
    }
    fn f0(&self, _x: Point, _z: f64) -> f64 {
        0.0
    }
    fn f1(&self, _x: Point, p: Point) -> f64 {
        (p[0] * p[0] + p[1] * p[1]).sqrt().powi(self.s as i32) / self.s as f64
    }
    fn grad_p_f1(&self, _x: Point, p: Point) -> Point {
        let r2 = p[0] * p[0] + p[1] * p[1];
        let c = r2.powi((self.s as i32 - 2) / 2) * if self.s % 2 == 1 { r2.sqrt() } else { 1.0 };
        [c * p[0], c * p[1]]
    }
    fn hess_p_f1(&self, _x: Point, p: Point) -> Sym2 {
        let s = self.s as f64;
        let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
        if self.s == 2 {
            return Sym2::IDENTITY;
        }
        if r == 0.0 {
            return Sym2::diag(0.0, 0.0);
        }
        // |p|^(s-2) I + (s-2) |p|^(s-4) p p^T
        let a = r.powf(s - 2.0);
        let b = (s - 2.0) * r.powf(s - 4.0);
        Sym2::new(a + b * p[0] * p[0], b * p[0] * p[1], a + b * p[1] * p[1])
    }
    fn cross_f1_components(&self, _x: Point, _p: Point) -> Point {
        [0.0, 0.0]
    }
}

/// `F1(p) = |p|^s / s` (s >= 2 integer), `F0 = 0`.
pub fn power_lagrangian(s: u32) -> Result<LagrangianModel> {
    if s < 2 {
        return Err(Error::Model(format!("power Lagrangian needs s >= 2, got {s}")));
    }
    let sf = s as f64;
    Ok(LagrangianModel {
        name: format!("power{s}"),
        density: Arc::new(PowerLagrangian { s }),
        // The Hessian grows like |p|^(s-2): no uniform upper bound for s > 2.
        constants: ModelConstants {
            rho: 0.0,
            c0: 0.0,
            c_star: if s == 2 { 1.0 } else { f64::INFINITY },
            c0_bar: if s == 2 { 1.0 } else { f64::INFINITY },
            c_star_bar: 0.0,
        },
        eta: Arc::new(move |r: f64| (1.0 + r).powf(sf - 1.0)),
        non_convex_f0: false,
    })
}

struct ExpLagrangian;

impl Lagrangian for ExpLagrangian {
    fn f0_energy(&self, _x: Point, _z: f64) -> f64 {
        0.0
    }
    fn f0(&self, _x: Point, _z: f64) -> f64 {
        0.0
    }
    fn f1(&self, _x: Point, p: Point) -> f64 {
        (0.5 * (p[0] * p[0] + p[1] * p[1])).exp()
    }
    fn grad_p_f1(&self, x: Point, p: Point) -> Point {
        let e = self.f1(x, p);
        [e * p[0], e * p[1]]
    }
    fn hess_p_f1(&self, x: Point, p: Point) -> Sym2 {
        let e = self.f1(x, p);
        Sym2::new(e * (1.0 + p[0] * p[0]), e * p[0] * p[1], e * (1.0 + p[1] * p[1]))
    }
    fn cross_f1_components(&self, _x: Point, _p: Point) -> Point {
        [0.0, 0.0]
    }
}

/// `F1(p) = exp(|p|^2 / 2)`, `F0 = 0`.
pub fn exp_lagrangian() -> LagrangianModel {
    LagrangianModel {
        name: "exp".into(),
        density: Arc::new(ExpLagrangian),
        constants: ModelConstants {
            rho: 0.0,
            c0: 0.0,
            c_star: f64::INFINITY,
            c0_bar: f64::INFINITY,
            c_star_bar: 0.0,
        },
        eta: Arc::new(|r: f64| (1.0 + r) * (0.5 * r * r).exp()),
        non_convex_f0: false,
    }
}

type TargetFn = Arc<dyn Fn(Point) -> f64 + Send + Sync>;

struct Tracking {
    target: TargetFn,
    weight: f64,
}

impl Lagrangian for Tracking {
    fn f0_energy(&self, x: Point, z: f64) -> f64 {
        0.5 * self.weight * (z - (self.target)(x)).powi(2)
    }
    fn f0(&self, x: Point, z: f64) -> f64 {
        self.weight * (z - (self.target)(x))
    }
    fn f1(&self, _x: Point, _p: Point) -> f64 {
        0.0
    }
    fn grad_p_f1(&self, _x: Point, _p: Point) -> Point {
        [0.0, 0.0]
    }
    fn hess_p_f1(&self, _x: Point, _p: Point) -> Sym2 {
        Sym2::diag(0.0, 0.0)
    }
    fn cross_f1_components(&self, _x: Point, _p: Point) -> Point {
        [0.0, 0.0]
    }
}

/// `F = weight (z - q(x))^2 / 2` with no gradient dependence: the
/// constrained minimizer is the convexity-cone projection of `q`.
pub fn tracking_lagrangian(target: impl Fn(Point) -> f64 + Send + Sync + 'static, weight: f64) -> LagrangianModel {
    LagrangianModel {
        name: "tracking".into(),
        density: Arc::new(Tracking { target: Arc::new(target), weight }),
        constants: ModelConstants { rho: weight, c0: 0.0, c_star: 0.0, c0_bar: 0.0, c_star_bar: 0.0 },
        eta: Arc::new(move |r: f64| weight * (1.0 + r)),
        non_convex_f0: false,
    }
}

/// Where the validator samples: `x` from `Omega0` (and its boundary band for
/// the boundary bound), `z` from an interval, `p` from a centered box.
#[derive(Clone, Debug)]
pub struct SampleRegion {
    pub interior_points: Vec<Point>,
    pub boundary_points: Vec<Point>,
    pub z_range: [f64; 2],
    pub p_radius: f64,
}

impl SampleRegion {
    pub fn from_mask(mask: &DomainMask, z_range: [f64; 2], p_radius: f64) -> Self {
        let g = mask.grid();
        let interior_points = mask.omega0().iter().map(|&k| g.point(k)).collect();
        let boundary_points = mask
            .omega0()
            .iter()
            .filter(|&&k| mask.class(k) == crate::grid::NodeClass::BoundaryOmega0Band)
            .map(|&k| g.point(k))
            .collect();
        SampleRegion { interior_points, boundary_points, z_range, p_radius }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Witness {
    pub x: Point,
    pub z: f64,
    pub z_tilde: f64,
    pub p: Point,
}

#[derive(Clone, Debug)]
pub struct AssumptionCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Smallest `bound - value` seen; negative means violated.
    pub worst_margin: f64,
    pub witness: Option<Witness>,
    pub detail: String,
}

#[derive(Clone, Debug)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
    pub fn get(&self, name: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.name == name)
    }
}

struct Tracker {
    name: &'static str,
    worst: f64,
    witness: Option<Witness>,
    detail: String,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Tracker { name, worst: f64::INFINITY, witness: None, detail: String::new() }
    }
    /// Records `bound - value`, tolerating rounding relative to the magnitudes.
    fn record(&mut self, bound: f64, value: f64, w: Witness, what: &str) {
        let tol = 1e-9 * (1.0 + bound.abs().min(1e300) + value.abs());
        let margin = if bound.is_infinite() && bound > 0.0 { f64::INFINITY } else { bound - value + tol };
        if margin < self.worst || margin.is_nan() {
            self.worst = margin;
            self.witness = Some(w);
            self.detail = what.to_string();
        }
    }
    fn finish(self) -> AssumptionCheck {
        AssumptionCheck {
            name: self.name,
            passed: self.worst >= 0.0,
            worst_margin: self.worst,
            witness: self.witness,
            detail: self.detail,
        }
    }
}

/// Sampling check of the monotonicity/growth condition on `f0` ("AsF0"), the
/// Hessian and cross-derivative bounds on `F1` ("AsH"), and the boundary and
/// growth bounds on `grad_p F1` ("AsH1"). Combines a deterministic lattice in
/// `(z, p)` at a spread of sample points with `n_samples` random draws.
pub fn verify_assumptions(model: &LagrangianModel, region: &SampleRegion, n_samples: usize, seed: u64) -> AssumptionReport {
    let c = model.constants();
    let mut as_f0 = Tracker::new("AsF0");
    let mut as_h = Tracker::new("AsH");
    let mut as_h1 = Tracker::new("AsH1");
    let [z_lo, z_hi] = region.z_range;
    let r = region.p_radius;

    let check_f0 = |t: &mut Tracker, x: Point, z: f64, zt: f64| {
        let w = Witness { x, z, z_tilde: zt, p: [0.0, 0.0] };
        let lhs = (model.f0(x, z) - model.f0(x, zt)) * (z - zt);
        t.record(lhs, c.rho * (z - zt).powi(2), w, "monotonicity");
        t.record(model.eta(z.abs()), model.f0(x, z).abs(), w, "growth |f0| <= eta(|z|)");
    };
    let check_h = |t: &mut Tracker, x: Point, p: Point| {
        let w = Witness { x, z: 0.0, z_tilde: 0.0, p };
        let [lo, hi] = model.hess_p_f1(x, p).eigenvalues();
        t.record(lo, 0.0, w, "F1_pp >= 0");
        t.record(c.c_star, hi, w, "F1_pp <= C* I");
        let pn = (p[0] * p[0] + p[1] * p[1]).sqrt();
        for comp in model.cross_f1_components(x, p) {
            t.record(c.c0 * pn + c.c_star, comp.abs(), w, "|F1_{p_i x_i}| <= c0 |p| + C*");
        }
    };
    let check_h1_interior = |t: &mut Tracker, x: Point, p: Point| {
        let w = Witness { x, z: 0.0, z_tilde: 0.0, p };
        let g = model.grad_p_f1(x, p);
        let pn = (p[0] * p[0] + p[1] * p[1]).sqrt();
        t.record(model.eta(pn), (g[0] * g[0] + g[1] * g[1]).sqrt(), w, "growth |grad_p F1| <= eta(|p|)");
    };
    let check_h1_boundary = |t: &mut Tracker, x: Point, p: Point| {
        let w = Witness { x, z: 0.0, z_tilde: 0.0, p };
        let pn = (p[0] * p[0] + p[1] * p[1]).sqrt();
        for comp in model.grad_p_f1(x, p) {
            t.record(c.c0_bar * pn + c.c_star_bar, comp.abs(), w, "|F1_{p_i}| <= c0_bar |p| + C*_bar on boundary of Omega0");
        }
    };

    let spread = |pts: &[Point], m: usize| -> Vec<Point> {
        if pts.len() <= m {
            return pts.to_vec();
        }
        (0..m).map(|i| pts[i * (pts.len() - 1) / (m - 1).max(1)]).collect()
    };
    let lattice = |lo: f64, hi: f64, m: usize| -> Vec<f64> {
        (0..m).map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64).collect()
    };
    let zs = lattice(z_lo, z_hi, 13);
    let ps: Vec<Point> = {
        let axis = lattice(-r, r, 9);
        axis.iter().flat_map(|&a| axis.iter().map(move |&b| [a, b])).collect()
    };
    for x in spread(&region.interior_points, 25) {
        for &z in &zs {
            for &zt in &zs {
                if z != zt {
                    check_f0(&mut as_f0, x, z, zt);
                }
            }
        }
        for &p in &ps {
            check_h(&mut as_h, x, p);
            check_h1_interior(&mut as_h1, x, p);
        }
    }
    for x in spread(&region.boundary_points, 25) {
        for &p in &ps {
            check_h1_boundary(&mut as_h1, x, p);
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..n_samples {
        if !region.interior_points.is_empty() {
            let x = region.interior_points[rng.gen_range(0..region.interior_points.len())];
            let z = rng.gen_range(z_lo..=z_hi);
            let zt = rng.gen_range(z_lo..=z_hi);
            let p = [rng.gen_range(-r..=r), rng.gen_range(-r..=r)];
            if z != zt {
                check_f0(&mut as_f0, x, z, zt);
            }
            check_h(&mut as_h, x, p);
            check_h1_interior(&mut as_h1, x, p);
        }
        if !region.boundary_points.is_empty() {
            let x = region.boundary_points[rng.gen_range(0..region.boundary_points.len())];
            let p = [rng.gen_range(-r..=r), rng.gen_range(-r..=r)];
            check_h1_boundary(&mut as_h1, x, p);
        }
    }
    AssumptionReport { checks: vec![as_f0.finish(), as_h.finish(), as_h1.finish()] }
}

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Monotone link `w = H(d)` between `w` and `d = det D^2 u`.
#[derive(Clone)]
pub enum Gauge {
    /// `G(t) = t^theta / theta` (`log t` at `theta = 0`), so `w = d^(theta - 1)`.
    Power { theta: f64 },
    Custom {
        h: ScalarFn,
        h_inv: ScalarFn,
        /// Antiderivative `G` of `H`, when known (needed for the penalized
        /// energy only).
        antiderivative: Option<ScalarFn>,
    },
}

impl fmt::Debug for Gauge {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Gauge::Power { theta } => write!(f, "Power {{ theta: {theta} }}"),
            Gauge::Custom { .. } => f.write_str("Custom"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaugeValue {
    /// `G(d)`; NaN for a custom gauge without antiderivative.
    pub g: f64,
    /// `G'(d)`, the value of `w`.
    pub g_prime: f64,
}

impl Gauge {
    /// Power gauge; `theta` must lie in `[0, 1/2)`.
    pub fn power(theta: f64) -> Result<Self> {
        if !(0.0..0.5).contains(&theta) {
            return Err(Error::Domain(format!("theta must lie in [0, 0.5) in two dimensions, got {theta}")));
        }
        Ok(Gauge::Power { theta })
    }

    pub fn log() -> Self {
        Gauge::Power { theta: 0.0 }
    }

    /// Custom strictly monotone `H` with inverse, checked for strict
    /// monotonicity on `d_range` by sampling.
    pub fn custom(
        h: impl Fn(f64) -> f64 + Send + Sync + 'static,
        h_inv: impl Fn(f64) -> f64 + Send + Sync + 'static,
        antiderivative: Option<ScalarFn>,
        d_range: [f64; 2],
    ) -> Result<Self> {
        let m = 200;
        let vals: Vec<f64> = (0..=m)
            .map(|i| {
                let t = i as f64 / m as f64;
                h(d_range[0] * (d_range[1] / d_range[0]).powf(t))
            })
            .collect();
        let inc = vals.windows(2).all(|w| w[1] > w[0]);
        let dec = vals.windows(2).all(|w| w[1] < w[0]);
        if !(d_range[0] > 0.0 && d_range[1] > d_range[0]) || !(inc || dec) {
            return Err(Error::Domain("custom gauge H must be strictly monotone on its declared range".into()));
        }
        Ok(Gauge::Custom { h: Arc::new(h), h_inv: Arc::new(h_inv), antiderivative })
    }

    pub fn theta(&self) -> Option<f64> {
        match self {
            Gauge::Power { theta } => Some(*theta),
            Gauge::Custom { .. } => None,
        }
    }

    pub fn eval(&self, d: f64) -> Result<GaugeValue> {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::Domain(format!("gauge needs det D2u > 0, got {d}")));
        }
        Ok(match self {
            Gauge::Power { theta } if *theta == 0.0 => GaugeValue { g: d.ln(), g_prime: 1.0 / d },
            Gauge::Power { theta } => GaugeValue { g: d.powf(*theta) / theta, g_prime: d.powf(theta - 1.0) },
            Gauge::Custom { h, antiderivative, .. } => {
                GaugeValue { g: antiderivative.as_ref().map_or(f64::NAN, |g| g(d)), g_prime: h(d) }
            }
        })
    }

    /// `d` with `G'(d) = w`.
    pub fn invert(&self, w: f64) -> Result<f64> {
        if !(w > 0.0) || !w.is_finite() {
            return Err(Error::Domain(format!("gauge inverse needs w > 0, got {w}")));
        }
        let d = match self {
            Gauge::Power { theta } if *theta == 0.0 => 1.0 / w,
            Gauge::Power { theta } => w.powf(1.0 / (theta - 1.0)),
            Gauge::Custom { h_inv, .. } => h_inv(w),
        };
        if d > 0.0 && d.is_finite() {
            Ok(d)
        } else {
            Err(Error::Domain(format!("w = {w} lies outside the range of the gauge")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainShape, GridSpec, Region};

    fn mask() -> DomainMask {
        let shape = DomainShape { omega: Region::square(-1.0, 1.0), omega0: Region::square(-0.5, 0.5) };
        build_domain(&shape, GridSpec::square(17, -1.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn rochet_chone_examples() {
        let m = rochet_chone(Gamma::Constant(1.0), 0.0, &mask()).unwrap();
        assert_eq!(m.grad_p_f1([0.3, -0.2], [1.0, 2.0]), [0.7, 2.2]);
        assert_eq!(m.cross_f1([0.3, -0.2], [1.0, 2.0]), -2.0);
        let m = rochet_chone(Gamma::Constant(1.0), 1.0, &mask()).unwrap();
        assert_eq!(m.f0([0.1, 0.4], 2.0), 3.0);
        assert_eq!(m.constants().c0, 0.0);
        assert_eq!(m.constants().c_star, 1.0);
        let m = rochet_chone(Gamma::Affine { c: 1.0, slope: [0.1, 0.0] }, 0.0, &mask()).unwrap();
        assert!((m.cross_f1([0.0, 0.0], [1.0, 0.0]) + 1.9).abs() < 1e-15);
    }

    #[test]
    fn rochet_chone_rejects_nonpositive_gamma() {
        assert!(rochet_chone(Gamma::Constant(0.0), 1.0, &mask()).is_err());
        assert!(rochet_chone(Gamma::Affine { c: 0.1, slope: [1.0, 0.0] }, 1.0, &mask()).is_err());
        assert!(rochet_chone(Gamma::Constant(1.0), -1.0, &mask()).is_err());
        // vanishing on the boundary of Omega0 is allowed and zeroes the boundary constants
        let bump = Gamma::Bump { center: [0.0, 0.0], half_widths: [0.5, 0.5] };
        let m = rochet_chone(bump, 1.0, &mask()).unwrap();
        assert_eq!(m.constants().c0_bar, 0.0);
        assert_eq!(m.constants().c_star_bar, 0.0);
    }

    #[test]
    fn allen_cahn_examples() {
        let m = allen_cahn();
        assert_eq!(m.f0([0.0; 2], 0.0), 0.0);
        assert_eq!(m.f0([0.0; 2], 1.0), 0.0);
        assert_eq!(m.f0([0.0; 2], 2.0), 6.0);
        assert_eq!(m.f0_energy([0.0; 2], 1.0), 0.0);
        assert_eq!(m.f0_energy([0.0; 2], -1.0), 0.0);
        assert_eq!(m.hess_p_f1([0.2; 2], [3.0, -1.0]), Sym2::IDENTITY);
        assert!(m.non_convex_f0());
    }

    #[test]
    fn power_and_exp_examples() {
        let p2 = power_lagrangian(2).unwrap();
        assert_eq!(p2.grad_p_f1([0.0; 2], [0.3, -0.7]), [0.3, -0.7]);
        let p4 = power_lagrangian(4).unwrap();
        assert_eq!(p4.grad_p_f1([0.0; 2], [1.0, 0.0]), [1.0, 0.0]);
        assert_eq!(p4.hess_p_f1([0.0; 2], [1.0, 0.0]), Sym2::diag(3.0, 1.0));
        assert_eq!(exp_lagrangian().hess_p_f1([0.0; 2], [0.0, 0.0]), Sym2::IDENTITY);
        assert!(power_lagrangian(1).is_err());
    }

    #[test]
    fn gauge_examples() {
        let log = Gauge::log();
        assert_eq!(log.eval(4.0).unwrap().g_prime, 0.25);
        assert_eq!(log.invert(0.25).unwrap(), 4.0);
        let p = Gauge::power(0.25).unwrap();
        assert!((p.eval(16.0).unwrap().g_prime - 0.125).abs() < 1e-16);
        assert!((p.invert(0.125).unwrap() - 16.0).abs() < 1e-13);
        let h = Gauge::custom(|d: f64| (-d).exp(), |w: f64| -w.ln(), None, [1e-3, 30.0]).unwrap();
        assert!((h.invert(0.5).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(h.invert(1.5).is_err());
        assert!(log.eval(0.0).is_err() && log.eval(-1.0).is_err() && log.invert(0.0).is_err());
        assert!(Gauge::power(0.7).is_err() && Gauge::power(-0.1).is_err());
        assert!(Gauge::custom(|d: f64| (d - 1.0).powi(2), |w: f64| w, None, [0.1, 3.0]).is_err());
    }

    #[test]
    fn validator_examples() {
        let mk = mask();
        let region = SampleRegion::from_mask(&mk, [-3.0, 3.0], 3.0);
        let rc = rochet_chone(Gamma::Constant(1.0), 1.0, &mk).unwrap();
        let rep = verify_assumptions(&rc, &region, 500, 1);
        assert!(rep.all_passed(), "{rep:?}");

        let rep = verify_assumptions(&allen_cahn(), &region, 500, 1);
        let f0 = rep.get("AsF0").unwrap();
        assert!(!f0.passed);
        let w = f0.witness.unwrap();
        let s = 1.0 / 3f64.sqrt();
        // the worst pair straddles the decreasing stretch of z^3 - z
        assert!(w.z.min(w.z_tilde) < s && w.z.max(w.z_tilde) > -s, "{w:?}");

        struct Concave;
        impl Lagrangian for Concave {
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
        let consts = ModelConstants { rho: 0.0, c0: 0.0, c_star: 2.0, c0_bar: 2.0, c_star_bar: 0.0 };
        let m = LagrangianModel::custom("concave", Arc::new(Concave), consts, Arc::new(|r| 2.0 * (1.0 + r)), false);
        let rep = verify_assumptions(&m, &region, 100, 3);
        assert!(!rep.get("AsH").unwrap().passed);
        assert!(rep.get("AsF0").unwrap().passed);
    }
}
