//! Flat `section.key = value` run configuration.
//!
//! Blank lines and `#` comments are ignored, booleans are `true`/`false`,
//! lists are comma-separated. Unknown and repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::abreu::{AbreuProblem, HomotopyConfig, Penalization, RhsMode};
use crate::error::{Error, Result};
use crate::grid::{build_domain, DomainMask, DomainShape, GridSpec, Region, ScalarField};
use crate::lagrangian::{allen_cahn, exp_lagrangian, power_lagrangian, rochet_chone, Gamma, Gauge, LagrangianModel};
use crate::monge_ampere::MaConfig;
use crate::oracle::OracleConfig;

const KNOWN_KEYS: &[&str] = &[
    "domain.omega",
    "domain.omega_bounds",
    "domain.omega_center",
    "domain.omega_radius",
    "domain.omega_semi_axes",
    "domain.omega_exponent",
    "domain.omega0",
    "domain.omega0_bounds",
    "domain.omega0_center",
    "domain.omega0_radius",
    "domain.omega0_semi_axes",
    "domain.omega0_exponent",
    "grid.n",
    "model.kind",
    "model.rho",
    "model.s",
    "model.gamma",
    "model.gamma_value",
    "model.gamma_slope",
    "model.gamma_center",
    "model.gamma_half_widths",
    "model.gamma_radius",
    "boundary.phi",
    "boundary.phi_scale",
    "boundary.psi",
    "solver.mode",
    "solver.theta",
    "solver.delta",
    "solver.eps_list",
    "solver.keep_going",
    "homotopy.t_schedule",
    "homotopy.picard_damping",
    "homotopy.w_floor",
    "homotopy.outer_tol",
    "homotopy.max_outer",
    "homotopy.min_t_step",
    "homotopy.anderson_depth",
    "homotopy.divergence_factor",
    "homotopy.cold_start",
    "ma.newton_tol",
    "ma.max_newton",
    "ma.damping",
    "ma.convexification_floor",
    "oracle.pen_eps",
    "oracle.max_iters",
    "oracle.pg_tol",
    "oracle.violation_tol",
    "oracle.audit_points",
    "run.out",
    "run.seed",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    FixedDelta,
    Continuation,
    GeneralDiv,
    AllenCahn,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ModelKind {
    RochetChone,
    AllenCahn,
    Power(u32),
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PhiKind {
    /// `scale * |x|^2`.
    Quadratic(f64),
    /// `exp(|x|^2 / 2)`.
    Exp,
}

#[derive(Clone, Debug)]
pub struct RunConfig {
    pub shape: DomainShape,
    pub n: usize,
    pub model: ModelKind,
    pub rho: f64,
    pub gamma: Gamma,
    pub phi: PhiKind,
    pub psi: f64,
    pub mode: Mode,
    pub theta: f64,
    pub delta: f64,
    pub eps_list: Vec<f64>,
    pub keep_going: bool,
    pub cold_start: bool,
    pub homotopy: HomotopyConfig,
    pub oracle: OracleConfig,
    pub audit_points: usize,
    pub out: Option<PathBuf>,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            shape: DomainShape { omega: Region::square(-1.0, 1.0), omega0: Region::square(-0.5, 0.5) },
            n: 65,
            model: ModelKind::RochetChone,
            rho: 1.0,
            gamma: Gamma::Constant(1.0),
            phi: PhiKind::Quadratic(1.0),
            psi: 1.0,
            mode: Mode::FixedDelta,
            theta: 0.0,
            delta: 0.1,
            eps_list: vec![0.2, 0.1, 0.05],
            keep_going: true,
            cold_start: false,
            homotopy: HomotopyConfig::default(),
            oracle: OracleConfig::default(),
            audit_points: 100,
            out: None,
            seed: 0,
        }
    }
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let lineno = no + 1;
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {lineno}: expected 'section.key = value', got '{line}'")))?;
            let key = key.trim().to_string();
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::Config(format!("line {lineno}: unknown key '{key}'")));
            }
            if let Some((prev, _)) = map.insert(key.clone(), (lineno, value.trim().to_string())) {
                return Err(Error::Config(format!("line {lineno}: key '{key}' already set on line {prev}")));
            }
        }
        Ok(Entries { map })
    }

    fn raw(&self, key: &str) -> Option<(usize, &str)> {
        self.map.get(key).map(|(l, v)| (*l, v.as_str()))
    }

    fn parsed<T: std::str::FromStr>(&self, key: &str, what: &str) -> Result<Option<T>> {
        match self.raw(key) {
            None => Ok(None),
            Some((l, v)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("line {l}: {key} must be {what}, got '{v}'"))),
        }
    }

    fn f64(&self, key: &str) -> Result<Option<f64>> {
        let v: Option<f64> = self.parsed(key, "a number")?;
        match v {
            Some(x) if !x.is_finite() => Err(Error::Config(format!("{key} must be finite"))),
            v => Ok(v),
        }
    }

    fn usize(&self, key: &str) -> Result<Option<usize>> {
        self.parsed(key, "a non-negative integer")
    }

    fn bool(&self, key: &str) -> Result<Option<bool>> {
        self.parsed(key, "true or false")
    }

    fn list(&self, key: &str) -> Result<Option<Vec<f64>>> {
        let Some((l, v)) = self.raw(key) else { return Ok(None) };
        v.split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::Config(format!("line {l}: {key} has a bad entry '{}'", s.trim())))
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn pair(&self, key: &str) -> Result<Option<[f64; 2]>> {
        match self.list(key)? {
            None => Ok(None),
            Some(v) if v.len() == 2 => Ok(Some([v[0], v[1]])),
            Some(v) => Err(Error::Config(format!("{key} needs 2 values, got {}", v.len()))),
        }
    }

    fn region(&self, prefix: &str, default: Region) -> Result<Region> {
        let key = |s: &str| format!("domain.{prefix}{s}");
        let need = |name: String, v: Option<f64>| v.ok_or_else(|| Error::Config(format!("{name} is required")));
        let needp = |name: String, v: Option<[f64; 2]>| v.ok_or_else(|| Error::Config(format!("{name} is required")));
        let kind = match self.raw(&key("")) {
            None => return Ok(default),
            Some((_, k)) => k.to_string(),
        };
        let region = match kind.as_str() {
            "rectangle" => {
                let b = self.list(&key("_bounds"))?.ok_or_else(|| Error::Config(format!("{} is required", key("_bounds"))))?;
                if b.len() != 4 {
                    return Err(Error::Config(format!("{} needs xmin, xmax, ymin, ymax", key("_bounds"))));
                }
                Region::Rectangle { xmin: b[0], xmax: b[1], ymin: b[2], ymax: b[3] }
            }
            "disk" => Region::Disk {
                center: needp(key("_center"), self.pair(&key("_center"))?)?,
                radius: need(key("_radius"), self.f64(&key("_radius"))?)?,
            },
            "superellipse" => Region::Superellipse {
                center: needp(key("_center"), self.pair(&key("_center"))?)?,
                semi_axes: needp(key("_semi_axes"), self.pair(&key("_semi_axes"))?)?,
                exponent: need(key("_exponent"), self.f64(&key("_exponent"))?)?,
            },
            other => {
                return Err(Error::Config(format!("{} must be rectangle, disk or superellipse, got '{other}'", key(""))))
            }
        };
        Ok(region)
    }
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let e = Entries::parse(text)?;
        let mut c = RunConfig::default();

        c.shape.omega = e.region("omega", c.shape.omega)?;
        c.shape.omega0 = e.region("omega0", c.shape.omega0)?;
        c.n = e.usize("grid.n")?.unwrap_or(c.n);

        if let Some((_, kind)) = e.raw("model.kind") {
            c.model = match kind {
                "rochet_chone" => ModelKind::RochetChone,
                "allen_cahn" => ModelKind::AllenCahn,
                "power" => ModelKind::Power(e.parsed("model.s", "an integer")?.unwrap_or(2)),
                "exp" => ModelKind::Exp,
                other => {
                    return Err(Error::Config(format!(
                        "model.kind must be rochet_chone, allen_cahn, power or exp, got '{other}'"
                    )))
                }
            };
        }
        c.rho = e.f64("model.rho")?.unwrap_or(c.rho);
        let gval = e.f64("model.gamma_value")?.unwrap_or(1.0);
        if let Some((_, kind)) = e.raw("model.gamma") {
            let need2 = |k: &str| e.pair(k)?.ok_or_else(|| Error::Config(format!("{k} is required")));
            c.gamma = match kind {
                "constant" => Gamma::Constant(gval),
                "affine" => Gamma::Affine { c: gval, slope: need2("model.gamma_slope")? },
                "bump" => Gamma::Bump { center: need2("model.gamma_center")?, half_widths: need2("model.gamma_half_widths")? },
                "radial_bump" => Gamma::RadialBump {
                    center: need2("model.gamma_center")?,
                    radius: e.f64("model.gamma_radius")?.ok_or_else(|| Error::Config("model.gamma_radius is required".into()))?,
                },
                other => {
                    return Err(Error::Config(format!(
                        "model.gamma must be constant, affine, bump or radial_bump, got '{other}'"
                    )))
                }
            };
        } else {
            c.gamma = Gamma::Constant(gval);
        }

        if let Some((_, kind)) = e.raw("boundary.phi") {
            c.phi = match kind {
                "quadratic" => PhiKind::Quadratic(e.f64("boundary.phi_scale")?.unwrap_or(1.0)),
                "exp" => PhiKind::Exp,
                other => return Err(Error::Config(format!("boundary.phi must be quadratic or exp, got '{other}'"))),
            };
        } else if let Some(s) = e.f64("boundary.phi_scale")? {
            c.phi = PhiKind::Quadratic(s);
        }
        c.psi = e.f64("boundary.psi")?.unwrap_or(c.psi);

        if let Some((_, mode)) = e.raw("solver.mode") {
            c.mode = match mode {
                "fixed_delta" => Mode::FixedDelta,
                "continuation" => Mode::Continuation,
                "general_div" => Mode::GeneralDiv,
                "allen_cahn" => Mode::AllenCahn,
                other => {
                    return Err(Error::Config(format!(
                        "solver.mode must be fixed_delta, continuation, general_div or allen_cahn, got '{other}'"
                    )))
                }
            };
        }
        c.theta = e.f64("solver.theta")?.unwrap_or(c.theta);
        c.delta = e.f64("solver.delta")?.unwrap_or(c.delta);
        c.eps_list = e.list("solver.eps_list")?.unwrap_or(c.eps_list);
        c.keep_going = e.bool("solver.keep_going")?.unwrap_or(c.keep_going);

        let h = &mut c.homotopy;
        h.t_schedule = e.list("homotopy.t_schedule")?.unwrap_or(std::mem::take(&mut h.t_schedule));
        h.picard_damping = e.f64("homotopy.picard_damping")?.unwrap_or(h.picard_damping);
        h.w_floor = e.f64("homotopy.w_floor")?.unwrap_or(h.w_floor);
        h.outer_tol = e.f64("homotopy.outer_tol")?.unwrap_or(h.outer_tol);
        h.max_outer = e.usize("homotopy.max_outer")?.unwrap_or(h.max_outer);
        h.min_t_step = e.f64("homotopy.min_t_step")?.unwrap_or(h.min_t_step);
        h.anderson_depth = e.usize("homotopy.anderson_depth")?.unwrap_or(h.anderson_depth);
        h.divergence_factor = e.f64("homotopy.divergence_factor")?.unwrap_or(h.divergence_factor);
        c.cold_start = e.bool("homotopy.cold_start")?.unwrap_or(c.cold_start);

        let ma: &mut MaConfig = &mut h.ma;
        ma.newton_tol = e.f64("ma.newton_tol")?.unwrap_or(ma.newton_tol);
        ma.max_newton = e.usize("ma.max_newton")?.unwrap_or(ma.max_newton);
        ma.damping = e.f64("ma.damping")?.unwrap_or(ma.damping);
        ma.convexification_floor = e.f64("ma.convexification_floor")?.unwrap_or(ma.convexification_floor);

        let o = &mut c.oracle;
        o.pen_eps = e.f64("oracle.pen_eps")?.unwrap_or(o.pen_eps);
        o.max_iters = e.usize("oracle.max_iters")?.unwrap_or(o.max_iters);
        o.pg_tol = e.f64("oracle.pg_tol")?.unwrap_or(o.pg_tol);
        o.violation_tol = e.f64("oracle.violation_tol")?.unwrap_or(o.violation_tol);
        c.audit_points = e.usize("oracle.audit_points")?.unwrap_or(c.audit_points);

        c.out = e.raw("run.out").map(|(_, v)| PathBuf::from(v));
        c.seed = e.parsed("run.seed", "a non-negative integer")?.unwrap_or(c.seed);

        c.validate()?;
        Ok(c)
    }

    /// Range checks on every physical and numerical parameter.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..0.5).contains(&self.theta) {
            return bad(format!("solver.theta = {} is outside the admissible range [0, 0.5) (0 <= theta < 1/n, n = 2)", self.theta));
        }
        if !(self.delta > 0.0) {
            return bad(format!("solver.delta must be > 0, got {}", self.delta));
        }
        if self.eps_list.is_empty() || self.eps_list.iter().any(|&e| !(e > 0.0)) {
            return bad(format!("solver.eps_list must be non-empty with entries > 0, got {:?}", self.eps_list));
        }
        if self.eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return bad(format!("solver.eps_list must be strictly decreasing, got {:?}", self.eps_list));
        }
        if !(self.rho >= 0.0) {
            return bad(format!("model.rho must be >= 0, got {}", self.rho));
        }
        if !(self.psi > 0.0) {
            return bad(format!("boundary.psi must be > 0, got {}", self.psi));
        }
        if let ModelKind::Power(s) = self.model {
            if s < 2 {
                return bad(format!("model.s must be >= 2, got {s}"));
            }
        }
        if let PhiKind::Quadratic(s) = self.phi {
            if !(s > 0.0) {
                return bad(format!("boundary.phi_scale must be > 0, got {s}"));
            }
        }
        if self.n < 5 {
            return bad(format!("grid.n must be >= 5, got {}", self.n));
        }
        if !(self.oracle.pen_eps > 0.0 && self.oracle.pg_tol > 0.0 && self.oracle.violation_tol > 0.0) {
            return bad("oracle tolerances and pen_eps must be > 0".into());
        }
        self.homotopy.validate().map_err(as_config)?;
        Ok(())
    }

    /// Grid covering the bounding box of `Omega` with `n` nodes per axis.
    pub fn mask(&self) -> Result<DomainMask> {
        let grid = GridSpec::covering(&self.shape.omega, self.n).map_err(as_config)?;
        build_domain(&self.shape, grid).map_err(as_config)
    }

    pub fn phi_field(&self, mask: &DomainMask) -> ScalarField {
        match self.phi {
            PhiKind::Quadratic(s) => ScalarField::from_fn(mask.grid(), |x| s * (x[0] * x[0] + x[1] * x[1])),
            PhiKind::Exp => ScalarField::from_fn(mask.grid(), |x| (0.5 * (x[0] * x[0] + x[1] * x[1])).exp()),
        }
    }

    pub fn build_model(&self, mask: &DomainMask) -> Result<LagrangianModel> {
        match &self.model {
            ModelKind::RochetChone => rochet_chone(self.gamma.clone(), self.rho, mask),
            ModelKind::AllenCahn => Ok(allen_cahn()),
            ModelKind::Power(s) => power_lagrangian(*s),
            ModelKind::Exp => Ok(exp_lagrangian()),
        }
        .map_err(as_config)
    }

    pub fn gauge(&self) -> Result<Gauge> {
        Gauge::power(self.theta).map_err(as_config)
    }

    /// The problem at the configured penalty; in continuation mode the first
    /// `eps` of the list.
    pub fn problem(&self, mask: &DomainMask) -> Result<AbreuProblem> {
        let (pen, rhs) = match self.mode {
            Mode::FixedDelta => (Penalization::FixedDelta(self.delta), RhsMode::Penalized),
            Mode::Continuation => (Penalization::Continuation(self.eps_list[0]), RhsMode::Penalized),
            Mode::GeneralDiv => (Penalization::FixedDelta(self.delta), RhsMode::GeneralDiv),
            Mode::AllenCahn => (Penalization::FixedDelta(self.delta), RhsMode::AllenCahn),
        };
        let phi = self.phi_field(mask);
        let psi = ScalarField::constant(mask.grid(), self.psi);
        AbreuProblem::new(mask.clone(), phi, psi, self.build_model(mask)?, self.gauge()?, pen, rhs).map_err(as_config)
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects() {
        let c = RunConfig::parse(
            "# comment\nmodel.rho = 2\nsolver.mode = continuation\nsolver.eps_list = 0.3, 0.1\nhomotopy.cold_start = true\n",
        )
        .unwrap();
        assert_eq!(c.rho, 2.0);
        assert_eq!(c.mode, Mode::Continuation);
        assert_eq!(c.eps_list, vec![0.3, 0.1]);
        assert!(c.cold_start);

        let err = RunConfig::parse("solver.thetta = 0.1").unwrap_err().to_string();
        assert!(err.contains("unknown key"), "{err}");
        let err = RunConfig::parse("solver.theta = 0.7").unwrap_err().to_string();
        assert!(err.contains("[0, 0.5)"), "{err}");
        assert!(RunConfig::parse("model.rho = 1\nmodel.rho = 2").is_err());
        assert!(RunConfig::parse("solver.delta = 0").is_err());
        assert!(RunConfig::parse("solver.eps_list = 0.1, 0.2").is_err());
        assert!(RunConfig::parse("homotopy.cold_start = yes").is_err());
        assert!(RunConfig::parse("domain.omega0 = disk\ndomain.omega0_center = 0, 0").is_err());
    }

    #[test]
    fn builds_problem() {
        let c = RunConfig::parse("grid.n = 17\nsolver.mode = allen_cahn\nmodel.kind = allen_cahn").unwrap();
        let m = c.mask().unwrap();
        let p = c.problem(&m).unwrap();
        assert!(matches!(p.rhs_mode(), RhsMode::AllenCahn));
        let c = RunConfig::parse("grid.n = 17\nmodel.kind = allen_cahn").unwrap();
        assert!(c.problem(&c.mask().unwrap()).is_err());
    }
}
