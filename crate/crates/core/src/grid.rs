//! Uniform Cartesian grids, domain masks for the pair `Omega0 ⊂⊂ Omega`,
//! finite-difference calculus, and estimates for discrete convex functions.
//!
//! Nodes are numbered row-major with `x` fastest: `k = j * nx + i`.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::linalg::Sym2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridSpec {
    nx: usize,
    ny: usize,
    xmin: f64,
    xmax: f64,
    ymin: f64,
    ymax: f64,
}

impl GridSpec {
    pub fn new(nx: usize, ny: usize, x_range: [f64; 2], y_range: [f64; 2]) -> Result<Self> {
        if nx < 5 || ny < 5 {
            return Err(Error::invalid(format!("grid needs at least 5x5 nodes, got {nx}x{ny}")));
        }
        let ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && r[1] > r[0];
        if !ok(x_range) || !ok(y_range) {
            return Err(Error::invalid("grid bounds must be finite with max > min"));
        }
        Ok(GridSpec { nx, ny, xmin: x_range[0], xmax: x_range[1], ymin: y_range[0], ymax: y_range[1] })
    }

    /// `n x n` nodes on `[lo, hi]^2`.
    pub fn square(n: usize, lo: f64, hi: f64) -> Result<Self> {
        GridSpec::new(n, n, [lo, hi], [lo, hi])
    }

    /// Grid of `n x n` nodes on the bounding box of `region`.
    pub fn covering(region: &Region, n: usize) -> Result<Self> {
        let [x0, x1, y0, y1] = region.bounding_box();
        GridSpec::new(n, n, [x0, x1], [y0, y1])
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn ny(&self) -> usize {
        self.ny
    }
    pub fn len(&self) -> usize {
        self.nx * self.ny
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
    pub fn h1(&self) -> f64 {
        (self.xmax - self.xmin) / (self.nx - 1) as f64
    }
    pub fn h2(&self) -> f64 {
        (self.ymax - self.ymin) / (self.ny - 1) as f64
    }
    /// Larger of the two spacings.
    pub fn h(&self) -> f64 {
        self.h1().max(self.h2())
    }
    pub fn bounds(&self) -> [f64; 4] {
        [self.xmin, self.xmax, self.ymin, self.ymax]
    }
    pub fn x(&self, i: usize) -> f64 {
        self.xmin + i as f64 * self.h1()
    }
    pub fn y(&self, j: usize) -> f64 {
        self.ymin + j as f64 * self.h2()
    }
    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }
    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.nx, k / self.nx)
    }
    pub fn point(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        [self.x(i), self.y(j)]
    }
    /// Node at offset `(di, dj)` from `k`, if it lies on the grid.
    pub fn offset(&self, k: usize, di: isize, dj: isize) -> Option<usize> {
        let (i, j) = self.ij(k);
        let (ni, nj) = (i as isize + di, j as isize + dj);
        if ni < 0 || nj < 0 || ni >= self.nx as isize || nj >= self.ny as isize {
            None
        } else {
            Some(self.index(ni as usize, nj as usize))
        }
    }
}

/// Geometric primitives for `Omega` and `Omega0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    Rectangle { xmin: f64, xmax: f64, ymin: f64, ymax: f64 },
    Disk { center: [f64; 2], radius: f64 },
    /// `|dx / a|^p + |dy / b|^p <= 1`.
    Superellipse { center: [f64; 2], semi_axes: [f64; 2], exponent: f64 },
}

impl Region {
    pub fn square(lo: f64, hi: f64) -> Region {
        Region::Rectangle { xmin: lo, xmax: hi, ymin: lo, ymax: hi }
    }

    pub fn bounding_box(&self) -> [f64; 4] {
        match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax } => [xmin, xmax, ymin, ymax],
            Region::Disk { center, radius } => {
                [center[0] - radius, center[0] + radius, center[1] - radius, center[1] + radius]
            }
            Region::Superellipse { center, semi_axes, .. } => [
                center[0] - semi_axes[0],
                center[0] + semi_axes[0],
                center[1] - semi_axes[1],
                center[1] + semi_axes[1],
            ],
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax } => xmax > xmin && ymax > ymin,
            Region::Disk { radius, .. } => radius > 0.0,
            Region::Superellipse { semi_axes, exponent, .. } => {
                semi_axes[0] > 0.0 && semi_axes[1] > 0.0 && exponent >= 2.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("degenerate region {self:?} (superellipse exponent must be >= 2)")))
        }
    }

    /// Level function `rho`, its gradient and Hessian; `rho <= 1` inside.
    /// Rectangles use the sup-norm gauge, which is not differentiable.
    fn level(&self, p: [f64; 2]) -> (f64, [f64; 2], Sym2) {
        match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax } => {
                let cx = 0.5 * (xmin + xmax);
                let cy = 0.5 * (ymin + ymax);
                let rho = ((p[0] - cx) / (0.5 * (xmax - xmin))).abs().max(((p[1] - cy) / (0.5 * (ymax - ymin))).abs());
                (rho, [0.0; 2], Sym2::diag(0.0, 0.0))
            }
            Region::Disk { center, radius } => {
                let d = [p[0] - center[0], p[1] - center[1]];
                let r2 = radius * radius;
                ((d[0] * d[0] + d[1] * d[1]) / r2, [2.0 * d[0] / r2, 2.0 * d[1] / r2], Sym2::diag(2.0 / r2, 2.0 / r2))
            }
            Region::Superellipse { center, semi_axes, exponent: e } => {
                let mut rho = 0.0;
                let mut g = [0.0; 2];
                let mut hd = [0.0; 2];
                for a in 0..2 {
                    let t = (p[a] - center[a]) / semi_axes[a];
                    let at = t.abs();
                    rho += at.powf(e);
                    g[a] = e * at.powf(e - 1.0) * t.signum() / semi_axes[a];
                    hd[a] = e * (e - 1.0) * at.powf(e - 2.0) / (semi_axes[a] * semi_axes[a]);
                }
                (rho, g, Sym2::diag(hd[0], hd[1]))
            }
        }
    }

    pub fn contains(&self, p: [f64; 2], tol: f64) -> bool {
        match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax } => {
                p[0] >= xmin - tol && p[0] <= xmax + tol && p[1] >= ymin - tol && p[1] <= ymax + tol
            }
            Region::Disk { center, radius } => {
                let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
                d <= radius + tol
            }
            Region::Superellipse { .. } => self.level(p).0 <= 1.0 + tol,
        }
    }

    /// Outward unit normal of the boundary curve nearest to `p`. Rectangle
    /// corners get the angle bisector of the two face normals.
    pub fn outward_normal(&self, p: [f64; 2], tol: f64) -> [f64; 2] {
        match *self {
            Region::Rectangle { xmin, xmax, ymin, ymax } => {
                let dists = [p[0] - xmin, xmax - p[0], p[1] - ymin, ymax - p[1]];
                let normals = [[-1.0, 0.0], [1.0, 0.0], [0.0, -1.0], [0.0, 1.0]];
                let dmin = dists.iter().copied().fold(f64::INFINITY, f64::min);
                let mut n = [0.0, 0.0];
                for (d, nf) in dists.iter().zip(normals) {
                    if (d - dmin).abs() <= tol {
                        n[0] += nf[0];
                        n[1] += nf[1];
                    }
                }
                normalize(n)
            }
            _ => normalize(self.level(p).1),
        }
    }

    /// Curvature of the level curve of the region's gauge through `p`.
    /// Rectangle faces are flat (corners are not representable and return 0).
    pub fn curvature(&self, p: [f64; 2]) -> f64 {
        match *self {
            Region::Rectangle { .. } => 0.0,
            Region::Disk { radius, .. } => 1.0 / radius,
            Region::Superellipse { .. } => {
                let (_, g, h) = self.level(p);
                let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
                if gn == 0.0 {
                    return 0.0;
                }
                (h.a11 * g[1] * g[1] - 2.0 * h.a12 * g[0] * g[1] + h.a22 * g[0] * g[0]) / gn.powi(3)
            }
        }
    }

    fn center(&self) -> [f64; 2] {
        let [x0, x1, y0, y1] = self.bounding_box();
        [0.5 * (x0 + x1), 0.5 * (y0 + y1)]
    }
}

fn normalize(v: [f64; 2]) -> [f64; 2] {
    let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
    if n == 0.0 {
        [0.0, 0.0]
    } else {
        [v[0] / n, v[1] / n]
    }
}

/// The pair `(Omega, Omega0)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DomainShape {
    pub omega: Region,
    pub omega0: Region,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NodeClass {
    Exterior,
    InteriorOmega,
    InteriorOmega0,
    BoundaryOmega,
    /// Nodes of closed `Omega0` with a 4-neighbour outside `Omega0`.
    BoundaryOmega0Band,
}

impl NodeClass {
    /// Interior node of `Omega`, i.e. an unknown of the Dirichlet problems.
    pub fn is_unknown(self) -> bool {
        matches!(self, NodeClass::InteriorOmega | NodeClass::InteriorOmega0 | NodeClass::BoundaryOmega0Band)
    }
    pub fn in_omega0(self) -> bool {
        matches!(self, NodeClass::InteriorOmega0 | NodeClass::BoundaryOmega0Band)
    }
    pub fn in_closure(self) -> bool {
        self != NodeClass::Exterior
    }
    pub fn as_str(self) -> &'static str {
        match self {
            NodeClass::Exterior => "exterior",
            NodeClass::InteriorOmega => "interior_omega",
            NodeClass::InteriorOmega0 => "interior_omega0",
            NodeClass::BoundaryOmega => "boundary_omega",
            NodeClass::BoundaryOmega0Band => "boundary_omega0_band",
        }
    }
}

impl fmt::Display for NodeClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeClass {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "exterior" => NodeClass::Exterior,
            "interior_omega" => NodeClass::InteriorOmega,
            "interior_omega0" => NodeClass::InteriorOmega0,
            "boundary_omega" => NodeClass::BoundaryOmega,
            "boundary_omega0_band" => NodeClass::BoundaryOmega0Band,
            other => return Err(Error::invalid(format!("unknown node class '{other}'"))),
        })
    }
}

#[derive(Clone, Debug)]
pub struct DomainMask {
    grid: GridSpec,
    shape: DomainShape,
    classes: Vec<NodeClass>,
    /// `nu` on boundary nodes of `Omega`, `nu0` on band nodes, zero elsewhere.
    normals: Vec<[f64; 2]>,
    unknowns: Vec<usize>,
    unknown_index: Vec<Option<usize>>,
    boundary: Vec<usize>,
    omega0: Vec<usize>,
}

/// Classifies every node of `grid` for the domain pair `shape`.
///
/// A rectangular `Omega` must coincide with the grid bounds. Superellipse
/// boundaries are represented by the closure nodes that have an 8-neighbour
/// outside; boundary data is imposed at those nodes.
pub fn build_domain(shape: &DomainShape, grid: GridSpec) -> Result<DomainMask> {
    shape.omega.validate()?;
    shape.omega0.validate()?;
    let tol = 1e-9 * grid.h();
    let n = grid.len();
    let mut classes = vec![NodeClass::Exterior; n];

    match shape.omega {
        Region::Rectangle { xmin, xmax, ymin, ymax } => {
            let b = grid.bounds();
            let scale = (b[1] - b[0]).abs().max((b[3] - b[2]).abs());
            let mismatch =
                [xmin - b[0], xmax - b[1], ymin - b[2], ymax - b[3]].iter().any(|d| d.abs() > 1e-12 * scale);
            if mismatch {
                return Err(Error::invalid("rectangular Omega must coincide with the grid bounds"));
            }
            for k in 0..n {
                let (i, j) = grid.ij(k);
                let on_edge = i == 0 || j == 0 || i == grid.nx - 1 || j == grid.ny - 1;
                classes[k] = if on_edge { NodeClass::BoundaryOmega } else { NodeClass::InteriorOmega };
            }
        }
        Region::Superellipse { .. } => {
            let inside: Vec<bool> = (0..n).map(|k| shape.omega.contains(grid.point(k), 1e-12)).collect();
            for k in 0..n {
                if !inside[k] {
                    continue;
                }
                let mut touches_outside = false;
                for dj in -1..=1 {
                    for di in -1..=1 {
                        match grid.offset(k, di, dj) {
                            Some(m) if inside[m] => {}
                            _ => touches_outside = true,
                        }
                    }
                }
                classes[k] = if touches_outside { NodeClass::BoundaryOmega } else { NodeClass::InteriorOmega };
            }
        }
        Region::Disk { .. } => {
            return Err(Error::invalid("Omega must be a rectangle or a superellipse"));
        }
    }
    if matches!(shape.omega0, Region::Superellipse { .. }) {
        return Err(Error::invalid("Omega0 must be a rectangle or a disk"));
    }
    if matches!(shape.omega, Region::Superellipse { .. }) && !matches!(shape.omega0, Region::Disk { .. }) {
        return Err(Error::invalid("a superellipse Omega is paired with a disk Omega0"));
    }

    let in0: Vec<bool> = (0..n).map(|k| shape.omega0.contains(grid.point(k), tol)).collect();
    for k in 0..n {
        if in0[k] && classes[k] == NodeClass::InteriorOmega {
            let on_band = [(1, 0), (-1, 0), (0, 1), (0, -1)]
                .iter()
                .any(|&(di, dj)| grid.offset(k, di, dj).is_none_or(|m| !in0[m]));
            classes[k] = if on_band { NodeClass::BoundaryOmega0Band } else { NodeClass::InteriorOmega0 };
        }
    }

    let interior0 = classes.iter().filter(|c| **c == NodeClass::InteriorOmega0).count();
    if interior0 < 9 {
        return Err(Error::invalid(format!(
            "grid too coarse to resolve Omega0: {interior0} interior Omega0 nodes (need at least 9)"
        )));
    }
    // Omega0 ⊂⊂ Omega: every Omega0 point (node) keeps a 2-node buffer to ∂Omega.
    for k in 0..n {
        if !in0[k] {
            continue;
        }
        for dj in -2..=2 {
            for di in -2..=2 {
                let bad = match grid.offset(k, di, dj) {
                    Some(m) => !classes[m].is_unknown(),
                    None => true,
                };
                if bad {
                    let p = grid.point(k);
                    return Err(Error::invalid(format!(
                        "Omega0 comes within 2 nodes of the boundary of Omega near ({:.4}, {:.4})",
                        p[0], p[1]
                    )));
                }
            }
        }
    }

    let mut normals = vec![[0.0, 0.0]; n];
    for k in 0..n {
        match classes[k] {
            NodeClass::BoundaryOmega => normals[k] = shape.omega.outward_normal(grid.point(k), tol),
            NodeClass::BoundaryOmega0Band => normals[k] = shape.omega0.outward_normal(grid.point(k), tol),
            _ => {}
        }
    }
    if let Some(k) = (0..n).find(|&k| classes[k] == NodeClass::BoundaryOmega && normals[k] == [0.0, 0.0]) {
        return Err(Error::invalid(format!("no outward normal at boundary node {k}")));
    }

    let unknowns: Vec<usize> = (0..n).filter(|&k| classes[k].is_unknown()).collect();
    let mut unknown_index = vec![None; n];
    for (pos, &k) in unknowns.iter().enumerate() {
        unknown_index[k] = Some(pos);
    }
    let boundary = (0..n).filter(|&k| classes[k] == NodeClass::BoundaryOmega).collect();
    let omega0 = (0..n).filter(|&k| classes[k].in_omega0()).collect();
    Ok(DomainMask { grid, shape: *shape, classes, normals, unknowns, unknown_index, boundary, omega0 })
}

impl DomainMask {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }
    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }
    pub fn class(&self, k: usize) -> NodeClass {
        self.classes[k]
    }
    pub fn classes(&self) -> &[NodeClass] {
        &self.classes
    }
    pub fn normal(&self, k: usize) -> [f64; 2] {
        self.normals[k]
    }
    /// Interior nodes of `Omega` in row-major order (the Dirichlet unknowns).
    pub fn unknowns(&self) -> &[usize] {
        &self.unknowns
    }
    pub fn unknown_index(&self, k: usize) -> Option<usize> {
        self.unknown_index[k]
    }
    pub fn boundary(&self) -> &[usize] {
        &self.boundary
    }
    /// Nodes of closed `Omega0` (interior plus band).
    pub fn omega0(&self) -> &[usize] {
        &self.omega0
    }
    pub fn closure(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.grid.len()).filter(|&k| self.classes[k].in_closure())
    }
    pub fn is_rectangle(&self) -> bool {
        matches!(self.shape.omega, Region::Rectangle { .. })
    }

    /// Product-trapezoid node weights over `Omega`: each cell whose four
    /// corners lie in the closure contributes a quarter of its area to each
    /// corner. Exact trapezoid weights on rectangles.
    pub fn omega_weights(&self) -> Vec<f64> {
        self.cell_weights(|c| c.in_closure())
    }

    /// Same construction restricted to cells with all corners in `Omega0`.
    pub fn omega0_weights(&self) -> Vec<f64> {
        self.cell_weights(|c| c.in_omega0())
    }

    fn cell_weights(&self, member: impl Fn(NodeClass) -> bool) -> Vec<f64> {
        let g = self.grid;
        let q = 0.25 * g.h1() * g.h2();
        let mut w = vec![0.0; g.len()];
        for j in 0..g.ny - 1 {
            for i in 0..g.nx - 1 {
                let corners = [g.index(i, j), g.index(i + 1, j), g.index(i, j + 1), g.index(i + 1, j + 1)];
                if corners.iter().all(|&k| member(self.classes[k])) {
                    for k in corners {
                        w[k] += q;
                    }
                }
            }
        }
        w
    }

    /// Cells (by lower-left node) with all four corners in `Omega0`.
    pub fn omega0_cells(&self) -> Vec<usize> {
        let g = self.grid;
        let mut cells = Vec::new();
        for j in 0..g.ny - 1 {
            for i in 0..g.nx - 1 {
                let corners = [g.index(i, j), g.index(i + 1, j), g.index(i, j + 1), g.index(i + 1, j + 1)];
                if corners.iter().all(|&k| self.classes[k].in_omega0()) {
                    cells.push(g.index(i, j));
                }
            }
        }
        cells
    }

    pub fn area(&self) -> f64 {
        self.omega_weights().iter().sum()
    }

    /// Discrete `dist(Omega0, ∂Omega)`: smallest node-to-node distance between
    /// closed `Omega0` and the boundary nodes.
    pub fn dist_omega0_to_boundary(&self) -> f64 {
        let mut best = f64::INFINITY;
        for &a in &self.omega0 {
            let pa = self.grid.point(a);
            for &b in &self.boundary {
                let pb = self.grid.point(b);
                best = best.min(((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt());
            }
        }
        best
    }

    /// Boundary nodes ordered counter-clockwise around the centre of `Omega`.
    pub fn boundary_loop(&self) -> Vec<usize> {
        let c = self.shape.omega.center();
        let mut nodes = self.boundary.clone();
        let angle = |k: usize| {
            let p = self.grid.point(k);
            (p[1] - c[1]).atan2(p[0] - c[0])
        };
        nodes.sort_by(|&a, &b| angle(a).total_cmp(&angle(b)).then(a.cmp(&b)));
        nodes
    }
}

/// Grid function. Values outside the closure of `Omega` are carried but
/// ignored by every operation.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: GridSpec,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::invalid(format!("field has {} values, grid has {} nodes", values.len(), grid.len())));
        }
        Ok(ScalarField { grid, values })
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn([f64; 2]) -> f64) -> Self {
        let values = (0..grid.len()).map(|k| f(grid.point(k))).collect();
        ScalarField { grid, values }
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        ScalarField { grid, values: vec![c; grid.len()] }
    }

    pub fn grid(&self) -> GridSpec {
        self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.grid.index(i, j)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        ScalarField { grid: self.grid, values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect() }
    }

    /// Max of `|value|` over the listed nodes.
    pub fn max_abs_on(&self, nodes: impl IntoIterator<Item = usize>) -> f64 {
        nodes.into_iter().map(|k| self.values[k].abs()).fold(0.0, f64::max)
    }

    pub fn max_abs_diff_on(&self, other: &ScalarField, nodes: impl IntoIterator<Item = usize>) -> f64 {
        nodes.into_iter().map(|k| (self.values[k] - other.values[k]).abs()).fold(0.0, f64::max)
    }

    pub fn min_on(&self, nodes: impl IntoIterator<Item = usize>) -> f64 {
        nodes.into_iter().map(|k| self.values[k]).fold(f64::INFINITY, f64::min)
    }

    pub fn max_on(&self, nodes: impl IntoIterator<Item = usize>) -> f64 {
        nodes.into_iter().map(|k| self.values[k]).fold(f64::NEG_INFINITY, f64::max)
    }

    /// Centered-difference gradient at an interior node.
    pub fn gradient(&self, k: usize) -> [f64; 2] {
        let g = self.grid;
        let v = |di, dj| self.values[g.offset(k, di, dj).expect("gradient needs all four neighbours")];
        [(v(1, 0) - v(-1, 0)) / (2.0 * g.h1()), (v(0, 1) - v(0, -1)) / (2.0 * g.h2())]
    }

    /// Centered second differences at a node whose 8 neighbours exist.
    pub fn hessian_at(&self, k: usize) -> Sym2 {
        let g = self.grid;
        let (h1, h2) = (g.h1(), g.h2());
        let v = |di, dj| self.values[g.offset(k, di, dj).expect("Hessian stencil leaves the grid")];
        let c = self.values[k];
        Sym2 {
            a11: (v(1, 0) - 2.0 * c + v(-1, 0)) / (h1 * h1),
            a12: (v(1, 1) - v(1, -1) - v(-1, 1) + v(-1, -1)) / (4.0 * h1 * h2),
            a22: (v(0, 1) - 2.0 * c + v(0, -1)) / (h2 * h2),
        }
    }
}

impl std::ops::Index<usize> for ScalarField {
    type Output = f64;
    fn index(&self, k: usize) -> &f64 {
        &self.values[k]
    }
}

impl std::ops::IndexMut<usize> for ScalarField {
    fn index_mut(&mut self, k: usize) -> &mut f64 {
        &mut self.values[k]
    }
}

/// `D^2 u` at the interior nodes of `Omega`; `None` elsewhere.
#[derive(Clone, Debug)]
pub struct HessianField {
    grid: GridSpec,
    entries: Vec<Option<Sym2>>,
}

impl HessianField {
    pub fn from_entries(grid: GridSpec, entries: Vec<Option<Sym2>>) -> Result<Self> {
        if entries.len() != grid.len() {
            return Err(Error::invalid("Hessian entry count does not match grid"));
        }
        Ok(HessianField { grid, entries })
    }
    pub fn grid(&self) -> GridSpec {
        self.grid
    }
    pub fn at(&self, k: usize) -> Option<Sym2> {
        self.entries[k]
    }
    pub fn entries(&self) -> &[Option<Sym2>] {
        &self.entries
    }
    pub fn det(&self, k: usize) -> Option<f64> {
        self.entries[k].map(|h| h.det())
    }
    /// `(min, max)` of `det D^2 u` over the nodes where it is defined.
    pub fn det_range(&self) -> (f64, f64) {
        self.entries.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), h| {
            let d = h.det();
            (lo.min(d), hi.max(d))
        })
    }
}

/// Cofactor matrix `U = cof D^2 u` per node.
#[derive(Clone, Debug)]
pub struct CofactorField {
    grid: GridSpec,
    entries: Vec<Option<Sym2>>,
}

impl CofactorField {
    pub fn grid(&self) -> GridSpec {
        self.grid
    }
    pub fn at(&self, k: usize) -> Option<Sym2> {
        self.entries[k]
    }
}

/// Centered second differences at every interior node of `Omega`: 3-point
/// pure derivatives and the 4-point cross stencil.
pub fn hessian(u: &ScalarField, mask: &DomainMask) -> HessianField {
    assert_eq!(u.grid, mask.grid, "field and mask live on different grids");
    let entries = (0..u.grid.len())
        .map(|k| if mask.class(k).is_unknown() { Some(u.hessian_at(k)) } else { None })
        .collect();
    HessianField { grid: u.grid, entries }
}

pub fn cofactor(h: &HessianField) -> CofactorField {
    CofactorField { grid: h.grid, entries: h.entries.iter().map(|e| e.map(|m| m.cofactor())).collect() }
}

/// Row divergences `D_1 U^{i1} + D_2 U^{i2}` (i = 1, 2) by centered first
/// differences, at interior nodes whose four neighbours carry a cofactor.
/// Zero where the stencil is unavailable.
pub fn divergence_free_defect(cof: &CofactorField) -> [ScalarField; 2] {
    let g = cof.grid;
    let mut rows = [ScalarField::constant(g, 0.0), ScalarField::constant(g, 0.0)];
    for k in 0..g.len() {
        let nb = |di, dj| g.offset(k, di, dj).and_then(|m| cof.entries[m]);
        let (Some(e), Some(w), Some(n), Some(s)) = (nb(1, 0), nb(-1, 0), nb(0, 1), nb(0, -1)) else {
            continue;
        };
        if cof.entries[k].is_none() {
            continue;
        }
        let (h1, h2) = (g.h1(), g.h2());
        rows[0][k] = (e.a11 - w.a11) / (2.0 * h1) + (n.a12 - s.a12) / (2.0 * h2);
        rows[1][k] = (e.a12 - w.a12) / (2.0 * h1) + (n.a22 - s.a22) / (2.0 * h2);
    }
    rows
}

/// Lattice directions tested for discrete convexity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    X,
    Y,
    Diagonal,
    AntiDiagonal,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::X, Direction::Y, Direction::Diagonal, Direction::AntiDiagonal];

    pub fn offset(self) -> (isize, isize) {
        match self {
            Direction::X => (1, 0),
            Direction::Y => (0, 1),
            Direction::Diagonal => (1, 1),
            Direction::AntiDiagonal => (1, -1),
        }
    }

    /// Squared length of the lattice step.
    pub fn step_sq(self, g: &GridSpec) -> f64 {
        let (di, dj) = self.offset();
        (di as f64 * g.h1()).powi(2) + (dj as f64 * g.h2()).powi(2)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvexityViolation {
    pub node: usize,
    pub direction: Direction,
    /// Normalized second difference `(u(x+e) - 2u(x) + u(x-e)) / |e|^2`.
    pub value: f64,
}

/// Second difference along `dir` at `k` normalized by the squared step, if
/// both neighbours exist.
pub fn second_difference(u: &ScalarField, k: usize, dir: Direction) -> Option<f64> {
    let g = u.grid;
    let (di, dj) = dir.offset();
    let p = g.offset(k, di, dj)?;
    let m = g.offset(k, -di, -dj)?;
    Some((u.values[p] - 2.0 * u.values[k] + u.values[m]) / dir.step_sq(&g))
}

/// Interior nodes where any of the four directional second differences is
/// below `-tol`.
pub fn check_discrete_convexity(u: &ScalarField, mask: &DomainMask, tol: f64) -> Vec<ConvexityViolation> {
    let mut out = Vec::new();
    for &k in mask.unknowns() {
        for dir in Direction::ALL {
            if let Some(value) = second_difference(u, k, dir) {
                if value < -tol {
                    out.push(ConvexityViolation { node: k, direction: dir, value });
                }
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConeBound {
    /// `||u||_inf` over the closure.
    pub lhs: f64,
    /// `(n + 1) / |Omega| * integral of |u|`, n = 2.
    pub rhs: f64,
}

impl ConeBound {
    pub fn holds(&self, h: f64) -> bool {
        self.lhs <= self.rhs * (1.0 + 10.0 * h)
    }
}

/// Both sides of the cone-comparison estimate for a convex `u <= 0` on the
/// boundary.
pub fn cone_linf_bound(u: &ScalarField, mask: &DomainMask) -> Result<ConeBound> {
    let scale = u.max_abs_on(mask.closure()).max(1.0);
    if let Some(&k) = mask.boundary().iter().find(|&&k| u[k] > 1e-12 * scale) {
        return Err(Error::invalid(format!("u must be <= 0 on the boundary, found {:e} at node {k}", u[k])));
    }
    let w = mask.omega_weights();
    let integral: f64 = mask.closure().map(|k| w[k] * u[k].abs()).sum();
    let area: f64 = w.iter().sum();
    Ok(ConeBound { lhs: u.max_abs_on(mask.closure()), rhs: 3.0 / area * integral })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradientBound {
    /// `max |Du|` over closed `Omega0`, centered differences.
    pub max_gradient: f64,
    /// `(max_{∂Omega} u + ||u||_inf) / dist(Omega0, ∂Omega)`.
    pub bound: f64,
}

impl GradientBound {
    pub fn holds(&self, h: f64) -> bool {
        self.max_gradient <= self.bound * (1.0 + 10.0 * h)
    }
}

pub fn interior_gradient_bound(u: &ScalarField, mask: &DomainMask) -> GradientBound {
    let max_gradient = mask
        .omega0()
        .iter()
        .map(|&k| {
            let d = u.gradient(k);
            (d[0] * d[0] + d[1] * d[1]).sqrt()
        })
        .fold(0.0, f64::max);
    let max_boundary = u.max_on(mask.boundary().iter().copied());
    let sup = u.max_abs_on(mask.closure());
    GradientBound { max_gradient, bound: (max_boundary + sup) / mask.dist_omega0_to_boundary() }
}

/// Writes `x,y,value,node_class` rows in node order, 17 significant digits.
pub fn write_field_csv<W: Write>(mut out: W, u: &ScalarField, mask: &DomainMask) -> Result<()> {
    writeln!(out, "x,y,value,node_class")?;
    for k in 0..u.grid.len() {
        let p = u.grid.point(k);
        writeln!(out, "{:.16e},{:.16e},{:.16e},{}", p[0], p[1], u[k], mask.class(k))?;
    }
    Ok(())
}

/// Reads a dump produced by [`write_field_csv`]; the grid is recovered from
/// the distinct coordinates.
pub fn read_field_csv<R: BufRead>(input: R) -> Result<(ScalarField, Vec<NodeClass>)> {
    let mut lines = input.lines();
    let header = lines.next().ok_or_else(|| Error::invalid("empty field dump"))??;
    if header.trim() != "x,y,value,node_class" {
        return Err(Error::invalid(format!("unexpected field dump header '{header}'")));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut vals = Vec::new();
    let mut classes = Vec::new();
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::invalid(format!("bad field dump row '{line}'")));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::invalid(format!("bad number '{s}': {e}")));
        xs.push(num(parts[0])?);
        ys.push(num(parts[1])?);
        vals.push(num(parts[2])?);
        classes.push(parts[3].trim().parse()?);
    }
    if vals.is_empty() {
        return Err(Error::invalid("field dump has no rows"));
    }
    let nx = ys.iter().take_while(|&&y| y == ys[0]).count();
    if vals.len() % nx != 0 {
        return Err(Error::invalid("field dump is not a rectangular grid"));
    }
    let ny = vals.len() / nx;
    let grid = GridSpec::new(nx, ny, [xs[0], xs[nx - 1]], [ys[0], ys[vals.len() - 1]])?;
    Ok((ScalarField::new(grid, vals)?, classes))
}
