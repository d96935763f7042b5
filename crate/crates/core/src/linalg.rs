//! Small dense helpers and the sparse direct solver used by every grid solve.
//!
//! The 9-point systems produced on an `n x n` grid with row-major unknown
//! ordering have bandwidth `n + 1`, so a banded LU factorization with partial
//! pivoting is both exact (up to rounding) and cheap at the grid sizes this
//! crate targets. The factorization works for nonsymmetric matrices.

use crate::error::{Error, Result};

/// Symmetric 2x2 matrix `[[a11, a12], [a12, a22]]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sym2 {
    pub a11: f64,
    pub a12: f64,
    pub a22: f64,
}

impl Sym2 {
    pub const IDENTITY: Sym2 = Sym2 { a11: 1.0, a12: 0.0, a22: 1.0 };

    pub fn new(a11: f64, a12: f64, a22: f64) -> Self {
        Sym2 { a11, a12, a22 }
    }

    pub fn diag(a11: f64, a22: f64) -> Self {
        Sym2 { a11, a12: 0.0, a22 }
    }

    pub fn det(&self) -> f64 {
        self.a11 * self.a22 - self.a12 * self.a12
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22
    }

    /// Cofactor matrix; in two dimensions this is the adjugate.
    pub fn cofactor(&self) -> Sym2 {
        Sym2 { a11: self.a22, a12: -self.a12, a22: self.a11 }
    }

    /// Frobenius inner product `A : B`.
    pub fn contract(&self, other: &Sym2) -> f64 {
        self.a11 * other.a11 + 2.0 * self.a12 * other.a12 + self.a22 * other.a22
    }

    pub fn scale(&self, s: f64) -> Sym2 {
        Sym2 { a11: s * self.a11, a12: s * self.a12, a22: s * self.a22 }
    }

    pub fn inverse(&self) -> Option<Sym2> {
        let d = self.det();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        Some(self.cofactor().scale(1.0 / d))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [f64; 2] {
        let m = 0.5 * (self.a11 + self.a22);
        let r = (0.25 * (self.a11 - self.a22).powi(2) + self.a12 * self.a12).sqrt();
        [m - r, m + r]
    }

    /// Same eigenvectors, eigenvalues clipped from below at `floor`.
    pub fn clip_below(&self, floor: f64) -> Sym2 {
        let [l1, l2] = self.eigenvalues();
        if l1 >= floor {
            return *self;
        }
        let (c1, c2) = (l1.max(floor), l2.max(floor));
        if l2 - l1 <= f64::EPSILON * (l1.abs() + l2.abs() + 1.0) {
            return Sym2::diag(c1, c2);
        }
        // Spectral projector onto the l2 eigenspace: (A - l1 I) / (l2 - l1).
        let p = Sym2 {
            a11: (self.a11 - l1) / (l2 - l1),
            a12: self.a12 / (l2 - l1),
            a22: (self.a22 - l1) / (l2 - l1),
        };
        Sym2 {
            a11: c1 + (c2 - c1) * p.a11,
            a12: (c2 - c1) * p.a12,
            a22: c1 + (c2 - c1) * p.a22,
        }
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct Csr {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl Csr {
    /// Builds a square matrix from per-row `(column, value)` lists. Duplicate
    /// columns within a row are summed.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut last: Option<usize> = None;
            for (c, v) in row {
                assert!(c < n, "column {c} out of range for {n}x{n} matrix");
                if last == Some(c) {
                    *vals.last_mut().unwrap() += v;
                } else {
                    cols.push(c);
                    vals.push(v);
                    last = Some(c);
                }
            }
            row_ptr.push(cols.len());
        }
        Csr { n, row_ptr, cols, vals }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).map(|(c, v)| v * x[c]).sum()).collect()
    }

    /// `(lower, upper)` bandwidths.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0;
        let mut ku = 0;
        for i in 0..self.n {
            for (c, _) in self.row(i) {
                if c < i {
                    kl = kl.max(i - c);
                } else {
                    ku = ku.max(c - i);
                }
            }
        }
        (kl, ku)
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n).map(|i| self.row(i).map(|(_, v)| v.abs()).sum::<f64>()).fold(0.0, f64::max)
    }
}

/// Banded LU factorization `P A = L U` with partial pivoting.
///
/// Rows are stored with `2 kl + ku + 1` slots so pivoting fill-in fits.
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandLu {
    pub fn factor(a: &Csr) -> Result<Self> {
        let n = a.dim();
        let (kl, ku) = a.bandwidths();
        let width = 2 * kl + ku + 1;
        let mut data = vec![0.0; n * width];
        for i in 0..n {
            for (c, v) in a.row(i) {
                data[i * width + (c + kl - i)] = v;
            }
        }
        let mut lu = BandLu { n, kl, ku, width, data, pivots: vec![0; n] };
        lu.eliminate(a.norm_inf())?;
        Ok(lu)
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        debug_assert!(j + self.kl >= i && j + self.kl - i < self.width);
        i * self.width + (j + self.kl - i)
    }

    fn eliminate(&mut self, scale: f64) -> Result<()> {
        let n = self.n;
        let reach = self.kl + self.ku;
        for k in 0..n {
            let last_row = (k + self.kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.slot(k, k)].abs();
            for r in k + 1..=last_row {
                let v = self.data[self.slot(r, k)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best <= f64::EPSILON * scale * 1e-3 || !best.is_finite() {
                return Err(Error::LinearSolve(format!("singular pivot at column {k} (|pivot| = {best:e})")));
            }
            self.pivots[k] = p;
            let last_col = (k + reach).min(n - 1);
            if p != k {
                for j in k..=last_col {
                    let (a, b) = (self.slot(k, j), self.slot(p, j));
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.slot(k, k)];
            let len = last_col - k;
            for r in k + 1..=last_row {
                let srk = self.slot(r, k);
                let l = self.data[srk] / pivot;
                self.data[srk] = l;
                if l == 0.0 {
                    continue;
                }
                // row k and row r are contiguous over columns k+1..=last_col
                let (head, tail) = self.data.split_at_mut(r * self.width);
                let src = &head[k * self.width + self.kl + 1..][..len];
                let dst = &mut tail[srk - r * self.width + 1..][..len];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d -= l * s;
                }
            }
        }
        Ok(())
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            if xk != 0.0 {
                for r in k + 1..=(k + self.kl).min(n - 1) {
                    x[r] -= self.data[self.slot(r, k)] * xk;
                }
            }
        }
        let reach = self.kl + self.ku;
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + reach).min(n - 1) {
                s -= self.data[self.slot(i, j)] * x[j];
            }
            x[i] = s / self.data[self.slot(i, i)];
        }
        x
    }
}

fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Solves `A x = b` by banded LU plus up to two steps of iterative refinement.
/// Returns the solution and the achieved relative residual `|b - A x| / |b|`.
/// Fails with [`Error::LinearSolve`] if the residual stays above `rel_tol`.
pub fn solve_sparse(a: &Csr, b: &[f64], rel_tol: f64) -> Result<(Vec<f64>, f64)> {
    let lu = BandLu::factor(a)?;
    let bnorm = norm2(b);
    if bnorm == 0.0 {
        return Ok((vec![0.0; b.len()], 0.0));
    }
    let mut x = lu.solve(b);
    let mut rel = f64::INFINITY;
    for _ in 0..3 {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        rel = norm2(&r) / bnorm;
        if rel <= rel_tol * 1e-2 {
            break;
        }
        let dx = lu.solve(&r);
        for (xi, d) in x.iter_mut().zip(dx) {
            *xi += d;
        }
    }
    if !(rel <= rel_tol) {
        let ax = a.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
        rel = norm2(&r) / bnorm;
    }
    if rel <= rel_tol {
        Ok((x, rel))
    } else {
        Err(Error::LinearSolve(format!("relative residual {rel:e} above tolerance {rel_tol:e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_from(a: &[Vec<f64>]) -> Csr {
        Csr::from_rows(
            a.iter()
                .map(|row| row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
                .collect(),
        )
    }

    #[test]
    fn sym2_cofactor_examples() {
        assert_eq!(Sym2::IDENTITY.cofactor(), Sym2::IDENTITY);
        assert_eq!(Sym2::diag(2.0, 3.0).cofactor(), Sym2::diag(3.0, 2.0));
        assert_eq!(Sym2::new(2.0, 1.0, 2.0).cofactor(), Sym2::new(2.0, -1.0, 2.0));
    }

    #[test]
    fn clip_keeps_eigenvectors() {
        let a = Sym2::new(1.0, 2.0, 1.0); // eigenvalues -1, 3
        let c = a.clip_below(0.5);
        let [l1, l2] = c.eigenvalues();
        assert!((l1 - 0.5).abs() < 1e-14 && (l2 - 3.0).abs() < 1e-14);
        // eigenvector (1,1)/sqrt2 for 3 is preserved
        assert!((c.a11 + c.a12 - 3.0).abs() < 1e-14);
        assert_eq!(Sym2::diag(2.0, 3.0).clip_below(1.0), Sym2::diag(2.0, 3.0));
    }

    #[test]
    fn band_lu_needs_pivoting() {
        // Zero leading pivot forces a row swap.
        let a = vec![
            vec![0.0, 2.0, 0.0, 0.0],
            vec![1.0, 1.0, 3.0, 0.0],
            vec![0.0, 4.0, 1.0, 1.0],
            vec![0.0, 0.0, 2.0, 5.0],
        ];
        let m = dense_from(&a);
        let x_true = [1.0, -2.0, 0.5, 3.0];
        let b = m.mul_vec(&x_true);
        let (x, rel) = solve_sparse(&m, &b, 1e-12).unwrap();
        assert!(rel < 1e-14);
        for (u, v) in x.iter().zip(x_true) {
            assert!((u - v).abs() < 1e-13);
        }
    }

    #[test]
    fn band_lu_random_banded_nonsymmetric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let n: usize = 60;
        let bw: usize = 7;
        let rows: Vec<Vec<(usize, f64)>> = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(bw);
                let hi = (i + bw).min(n - 1);
                (lo..=hi).map(|j| (j, rng.gen_range(-1.0..1.0))).collect()
            })
            .collect();
        let m = Csr::from_rows(rows);
        let x_true: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = m.mul_vec(&x_true);
        let (x, _) = solve_sparse(&m, &b, 1e-10).unwrap();
        let err = x.iter().zip(&x_true).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "err = {err:e}");
    }

    #[test]
    fn singular_matrix_is_reported() {
        let m = dense_from(&[vec![1.0, 1.0], vec![1.0, 1.0]]);
        assert!(matches!(solve_sparse(&m, &[1.0, 2.0], 1e-10), Err(Error::LinearSolve(_))));
    }
}
