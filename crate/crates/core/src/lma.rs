//! Nine-point non-divergence operators `a11 D11 + 2 a12 D12 + a22 D22` with
//! Dirichlet data, and the linearized Monge-Ampere equation `U^{ij} w_ij = f`
//! built on them.

use crate::error::{Error, Result};
use crate::grid::{hessian, DomainMask, ScalarField};
use crate::linalg::{solve_sparse, Csr, Sym2};

/// Relative residual required of every linear solve.
pub const LINEAR_TOL: f64 = 1e-10;

/// Stencil weights `(di, dj, weight)` of `a : D^2` on a uniform grid.
pub fn stencil(a: Sym2, h1: f64, h2: f64) -> [(isize, isize, f64); 9] {
    let ex = a.a11 / (h1 * h1);
    let ny = a.a22 / (h2 * h2);
    let xy = a.a12 / (2.0 * h1 * h2);
    [
        (0, 0, -2.0 * ex - 2.0 * ny),
        (1, 0, ex),
        (-1, 0, ex),
        (0, 1, ny),
        (0, -1, ny),
        (1, 1, xy),
        (-1, -1, xy),
        (-1, 1, -xy),
        (1, -1, -xy),
    ]
}

/// A nine-point operator restricted to the unknowns of a mask. Couplings to
/// boundary nodes are kept aside and moved to the right-hand side.
#[derive(Clone, Debug)]
pub struct NinePointSystem {
    grid: crate::grid::GridSpec,
    unknowns: Vec<usize>,
    matrix: Csr,
    boundary: Vec<Vec<(usize, f64)>>,
}

impl NinePointSystem {
    /// `coeff(k)` gives the coefficient matrix at unknown node `k`.
    pub fn assemble(mask: &DomainMask, coeff: impl Fn(usize) -> Sym2) -> Self {
        let g = mask.grid();
        let (h1, h2) = (g.h1(), g.h2());
        let unknowns = mask.unknowns().to_vec();
        let mut rows = Vec::with_capacity(unknowns.len());
        let mut boundary = Vec::with_capacity(unknowns.len());
        for &k in &unknowns {
            let mut row = Vec::with_capacity(9);
            let mut bnd = Vec::new();
            for (di, dj, w) in stencil(coeff(k), h1, h2) {
                if w == 0.0 {
                    continue;
                }
                let m = g.offset(k, di, dj).expect("unknown node with stencil off the grid");
                match mask.unknown_index(m) {
                    Some(c) => row.push((c, w)),
                    None => bnd.push((m, w)),
                }
            }
            rows.push(row);
            boundary.push(bnd);
        }
        NinePointSystem { grid: g, unknowns, matrix: Csr::from_rows(rows), boundary }
    }

    pub fn matrix(&self) -> &Csr {
        &self.matrix
    }

    /// Solves `L w = f` at the unknowns with `w = bc` at every other node.
    /// Returns `w` and the achieved relative residual.
    pub fn solve(&self, f: &ScalarField, bc: &ScalarField) -> Result<(ScalarField, f64)> {
        let rhs: Vec<f64> = self
            .unknowns
            .iter()
            .zip(&self.boundary)
            .map(|(&k, bnd)| f[k] - bnd.iter().map(|&(m, w)| w * bc[m]).sum::<f64>())
            .collect();
        if let Some(&k) = self.unknowns.iter().find(|&&k| !f[k].is_finite()) {
            return Err(Error::invalid(format!("non-finite right-hand side at node {k}")));
        }
        let (x, rel) = solve_sparse(&self.matrix, &rhs, LINEAR_TOL)?;
        let mut w = bc.clone();
        for (&k, v) in self.unknowns.iter().zip(x) {
            w[k] = v;
        }
        Ok((w, rel))
    }

    /// `L w` at the unknowns, zero elsewhere.
    pub fn apply(&self, w: &ScalarField) -> ScalarField {
        let x: Vec<f64> = self.unknowns.iter().map(|&k| w[k]).collect();
        let ax = self.matrix.mul_vec(&x);
        let mut out = ScalarField::constant(self.grid, 0.0);
        for (r, &k) in self.unknowns.iter().enumerate() {
            out[k] = ax[r] + self.boundary[r].iter().map(|&(m, c)| c * w[m]).sum::<f64>();
        }
        out
    }
}

/// The assembled linearized Monge-Ampere operator of a convex `u`.
#[derive(Clone, Debug)]
pub struct LmaOperator {
    pub system: NinePointSystem,
    /// Smallest `det D^2 u` over the unknowns.
    pub d_min: f64,
}

/// Freezes `U = cof D^2 u` nodewise. Fails with [`Error::Degenerate`] at the
/// first interior node where `det D^2 u <= 0`.
pub fn assemble_lma(u: &ScalarField, mask: &DomainMask) -> Result<LmaOperator> {
    let hess = hessian(u, mask);
    let g = mask.grid();
    let mut d_min = f64::INFINITY;
    for &k in mask.unknowns() {
        let d = hess.det(k).expect("Hessian defined at unknowns");
        if !(d > 0.0) {
            let (i, j) = g.ij(k);
            return Err(Error::Degenerate { i, j, det: d });
        }
        d_min = d_min.min(d);
    }
    let system = NinePointSystem::assemble(mask, |k| hess.at(k).unwrap().cofactor());
    Ok(LmaOperator { system, d_min })
}

/// Solves `U^{ij} w_ij = f` in `Omega` with `w = psi_bc` on the boundary.
pub fn solve_lma(u: &ScalarField, f: &ScalarField, psi_bc: &ScalarField, mask: &DomainMask) -> Result<ScalarField> {
    if let Some(&k) = mask.boundary().iter().find(|&&k| !psi_bc[k].is_finite()) {
        return Err(Error::invalid(format!("non-finite boundary data at node {k}")));
    }
    let op = assemble_lma(u, mask)?;
    Ok(op.system.solve(f, psi_bc)?.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaxPrincipleReport {
    /// `f` has a sign on `Omega`, so the check applies.
    pub applicable: bool,
    pub passed: bool,
    pub interior_range: [f64; 2],
    pub boundary_range: [f64; 2],
    /// Interior node with the largest violation, if any.
    pub witness: Option<usize>,
}

/// Discrete weak maximum principle: `f <= 0` forces `min w` onto the
/// boundary, `f >= 0` forces `max w` onto it, up to `1e-8` times the size of
/// `w`.
pub fn lma_maximum_principle_check(f: &ScalarField, w: &ScalarField, mask: &DomainMask) -> MaxPrincipleReport {
    let unk = mask.unknowns();
    let bnd = mask.boundary();
    let interior_range = [w.min_on(unk.iter().copied()), w.max_on(unk.iter().copied())];
    let boundary_range = [w.min_on(bnd.iter().copied()), w.max_on(bnd.iter().copied())];
    let tol = 1e-8 * w.max_abs_on(mask.closure()).max(1.0);
    let nonpos = unk.iter().all(|&k| f[k] <= 0.0);
    let nonneg = unk.iter().all(|&k| f[k] >= 0.0);
    let mut worst: Option<(usize, f64)> = None;
    let mut note = |k: usize, excess: f64| {
        if excess > tol && worst.is_none_or(|(_, e)| excess > e) {
            worst = Some((k, excess));
        }
    };
    for &k in unk {
        if nonpos {
            note(k, boundary_range[0] - w[k]);
        }
        if nonneg {
            note(k, w[k] - boundary_range[1]);
        }
    }
    MaxPrincipleReport {
        applicable: nonpos || nonneg,
        passed: worst.is_none(),
        interior_range,
        boundary_range,
        witness: worst.map(|(k, _)| k),
    }
}
