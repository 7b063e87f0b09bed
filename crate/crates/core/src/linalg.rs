//! Structured linear algebra for the block model.
//!
//! Every channel operator in this crate is a lower-triangular banded Toeplitz
//! matrix, and every covariance is `Σ wᵢ·TᵢTᵢᴴ + σ²I`, which is Hermitian and
//! banded with the same bandwidth. The banded Cholesky factor gives solves and
//! log-determinants in `O(N·w²)`, and the selected inverse gives the in-band
//! entries of `C⁻¹` needed by gradient traces at the same cost. Dense forms
//! exist for oracles and for the few trace terms that need all of `C⁻¹`.

use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

/// `N×N` Toeplitz operator stored by its first column and first row.
///
/// Entries beyond the stored vectors are zero, so a short `first_col` with
/// `first_row = [first_col[0]]` is a lower-triangular banded matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedToeplitz {
    first_col: Vec<Complex64>,
    first_row: Vec<Complex64>,
    n: usize,
}

impl BandedToeplitz {
    pub fn new(first_col: Vec<Complex64>, first_row: Vec<Complex64>, n: usize) -> Result<Self> {
        if first_col.is_empty() || first_row.is_empty() {
            return Err(invalid("Toeplitz first column and row must be non-empty"));
        }
        if first_col[0] != first_row[0] {
            return Err(invalid("first_col[0] must equal first_row[0]"));
        }
        if first_col.len() > n || first_row.len() > n {
            return Err(invalid(format!(
                "Toeplitz band ({}, {}) exceeds dimension {n}",
                first_col.len(),
                first_row.len()
            )));
        }
        Ok(Self { first_col, first_row, n })
    }

    /// Lower-triangular Toeplitz matrix with the given leading taps.
    ///
    /// Taps past `n` are dropped.
    pub fn lower(taps: &[Complex64], n: usize) -> Self {
        let mut first_col: Vec<Complex64> = taps.iter().take(n).copied().collect();
        if first_col.is_empty() {
            first_col.push(Complex64::new(0.0, 0.0));
        }
        let first_row = vec![first_col[0]];
        Self { first_col, first_row, n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn first_col(&self) -> &[Complex64] {
        &self.first_col
    }

    pub fn first_row(&self) -> &[Complex64] {
        &self.first_row
    }

    pub fn is_lower(&self) -> bool {
        self.first_row[1..].iter().all(|v| v.norm_sqr() == 0.0)
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i >= j {
            self.first_col.get(i - j).copied().unwrap_or_default()
        } else {
            self.first_row.get(j - i).copied().unwrap_or_default()
        }
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n, "matvec dimension mismatch");
        let mut y = vec![Complex64::new(0.0, 0.0); self.n];
        for (k, &c) in self.first_col.iter().enumerate() {
            if c.norm_sqr() == 0.0 {
                continue;
            }
            for i in k..self.n {
                y[i] += c * x[i - k];
            }
        }
        for (k, &r) in self.first_row.iter().enumerate().skip(1) {
            if r.norm_sqr() == 0.0 {
                continue;
            }
            for i in 0..self.n - k {
                y[i] += r * x[i + k];
            }
        }
        y
    }

    /// `Aᴴ·x`.
    pub fn matvec_adjoint(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n, "matvec dimension mismatch");
        let mut y = vec![Complex64::new(0.0, 0.0); self.n];
        for (k, &c) in self.first_col.iter().enumerate() {
            if c.norm_sqr() == 0.0 {
                continue;
            }
            let c = c.conj();
            for j in 0..self.n - k {
                y[j] += c * x[j + k];
            }
        }
        for (k, &r) in self.first_row.iter().enumerate().skip(1) {
            if r.norm_sqr() == 0.0 {
                continue;
            }
            let r = r.conj();
            for j in k..self.n {
                y[j] += r * x[j - k];
            }
        }
        y
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }
}

/// Row-major dense complex matrix used for oracles and full-inverse traces.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Complex64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![Complex64::new(0.0, 0.0); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { Complex64::new(1.0, 0.0) } else { Complex64::new(0.0, 0.0) })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Complex64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[Complex64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i).conj())
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a.norm_sqr() == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(orow) {
                    *o += a * b;
                }
            }
        }
        out
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.cols, "matvec dimension mismatch");
        (0..self.rows)
            .map(|i| self.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.rows.min(self.cols)).map(|i| self.get(i, i)).sum()
    }

    /// `tr(A·B)` without forming the product.
    pub fn trace_of_product(&self, other: &Self) -> Complex64 {
        assert_eq!(self.cols, other.rows);
        assert_eq!(self.rows, other.cols);
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 0..self.rows {
            for k in 0..self.cols {
                acc += self.get(i, k) * other.get(k, i);
            }
        }
        acc
    }
}

/// Hermitian matrix with lower bandwidth `bw`; `lower[i][d] = A[i][i−d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianBand {
    n: usize,
    bw: usize,
    lower: Vec<Vec<Complex64>>,
}

impl HermitianBand {
    pub fn scaled_identity(n: usize, s: f64) -> Self {
        let lower = (0..n).map(|_| vec![Complex64::new(s, 0.0)]).collect();
        Self { n, bw: 0, lower }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    fn widen(&mut self, bw: usize) {
        if bw <= self.bw {
            return;
        }
        for (i, row) in self.lower.iter_mut().enumerate() {
            row.resize(bw.min(i) + 1, Complex64::new(0.0, 0.0));
        }
        self.bw = bw;
    }

    /// Adds `weight·T·Tᴴ` for the lower Toeplitz matrix `T` with `taps`.
    ///
    /// Near the top-left corner the Gram matrix is not Toeplitz (the row sums
    /// are truncated), so each entry is accumulated from its own tap window.
    pub fn add_gram(&mut self, taps: &[Complex64], weight: f64) {
        let taps = &taps[..taps.len().min(self.n)];
        if taps.is_empty() {
            return;
        }
        let l = taps.len();
        self.widen(l - 1);
        for i in 0..self.n {
            for k in 0..=(l - 1).min(i) {
                let j = i - k;
                let smax = j.min(l - 1 - k);
                let mut acc = Complex64::new(0.0, 0.0);
                for s in 0..=smax {
                    acc += taps[k + s] * taps[s].conj();
                }
                self.lower[i][k] += acc * weight;
            }
        }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i >= j {
            let d = i - j;
            if d <= self.bw {
                self.lower[i][d]
            } else {
                Complex64::new(0.0, 0.0)
            }
        } else {
            self.get(j, i).conj()
        }
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![Complex64::new(0.0, 0.0); self.n];
        for i in 0..self.n {
            for (d, &a) in self.lower[i].iter().enumerate() {
                let j = i - d;
                y[i] += a * x[j];
                if d > 0 {
                    y[j] += a.conj() * x[i];
                }
            }
        }
        y
    }

    pub fn to_dense(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Banded Cholesky factorization `A = R·Rᴴ` with `R` lower banded.
    pub fn cholesky(&self) -> Result<BandCholesky> {
        let n = self.n;
        let bw = self.bw;
        let mut r: Vec<Vec<Complex64>> = Vec::with_capacity(n);
        for i in 0..n {
            let width = bw.min(i);
            let mut row = vec![Complex64::new(0.0, 0.0); width + 1];
            for d in (1..=width).rev() {
                let j = i - d;
                // R[i][j] = (A[i][j] − Σ_k R[i][k]·conj(R[j][k])) / R[j][j]
                let mut acc = self.lower[i][d];
                let kmin = i.saturating_sub(bw).max(j.saturating_sub(bw));
                for k in kmin..j {
                    acc -= row[i - k] * r[j][j - k].conj();
                }
                row[d] = acc / r[j][0].re;
            }
            let diag = self.lower[i][0].re;
            let diag = row[1..=width].iter().fold(diag, |acc, v| acc - v.norm_sqr());
            if !(diag > 0.0) || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: i, value: diag });
            }
            row[0] = Complex64::new(diag.sqrt(), 0.0);
            r.push(row);
        }
        Ok(BandCholesky { n, bw, r })
    }
}

/// Lower banded Cholesky factor, `r[i][d] = R[i][i−d]` with real positive diagonal.
#[derive(Debug, Clone)]
pub struct BandCholesky {
    n: usize,
    bw: usize,
    r: Vec<Vec<Complex64>>,
}

impl BandCholesky {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.r.iter().map(|row| row[0].re.ln()).sum::<f64>()
    }

    /// Solves `R·z = b` (the whitening map).
    pub fn solve_lower(&self, b: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(b.len(), self.n);
        let mut z = b.to_vec();
        for i in 0..self.n {
            let row = &self.r[i];
            let mut acc = z[i];
            for d in 1..row.len() {
                acc -= row[d] * z[i - d];
            }
            z[i] = acc / row[0].re;
        }
        z
    }

    /// Solves `Rᴴ·x = b`.
    pub fn solve_upper(&self, b: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(b.len(), self.n);
        let mut x = b.to_vec();
        for i in (0..self.n).rev() {
            x[i] /= self.r[i][0].re;
            let xi = x[i];
            let row = &self.r[i];
            for d in 1..row.len() {
                x[i - d] -= row[d].conj() * xi;
            }
        }
        x
    }

    /// Solves `A·x = b`.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        self.solve_upper(&self.solve_lower(b))
    }

    /// `R·z`, the inverse of [`Self::solve_lower`].
    pub fn color(&self, z: &[Complex64]) -> Vec<Complex64> {
        assert_eq!(z.len(), self.n);
        (0..self.n)
            .map(|i| self.r[i].iter().enumerate().map(|(d, &a)| a * z[i - d]).sum())
            .collect()
    }

    pub fn factor_entry(&self, i: usize, j: usize) -> Complex64 {
        if j > i || i - j > self.bw {
            return Complex64::new(0.0, 0.0);
        }
        self.r[i].get(i - j).copied().unwrap_or_default()
    }

    /// Entries of `A⁻¹` inside the band of `A` (Takahashi recursion).
    pub fn selected_inverse(&self) -> HermitianBand {
        let n = self.n;
        let bw = self.bw;
        // upper[i][d] = Z[i][i+d]
        let mut upper: Vec<Vec<Complex64>> = (0..n)
            .map(|i| vec![Complex64::new(0.0, 0.0); bw.min(n - 1 - i) + 1])
            .collect();
        let zget = |upper: &Vec<Vec<Complex64>>, k: usize, j: usize| -> Complex64 {
            if k <= j {
                upper[k][j - k]
            } else {
                upper[j][k - j].conj()
            }
        };
        for i in (0..n).rev() {
            let rii = self.r[i][0].re;
            let kmax = (i + bw).min(n - 1);
            for j in (i..=(i + bw).min(n - 1)).rev() {
                let mut acc = if i == j { Complex64::new(1.0 / (rii * rii), 0.0) } else { Complex64::new(0.0, 0.0) };
                for k in (i + 1)..=kmax {
                    // L[k][i] = R[k][i] / R[i][i]
                    let lki = match self.r[k].get(k - i) {
                        Some(v) => *v / rii,
                        None => continue,
                    };
                    acc -= lki.conj() * zget(&upper, k, j);
                }
                upper[i][j - i] = acc;
            }
        }
        let mut out = HermitianBand::scaled_identity(n, 0.0);
        out.widen(bw);
        for (i, row) in upper.iter().enumerate() {
            for (d, &v) in row.iter().enumerate() {
                out.lower[i + d][d] = v.conj();
            }
        }
        out
    }

    pub fn inverse_dense(&self) -> DenseMatrix {
        let n = self.n;
        let mut inv = DenseMatrix::zeros(n, n);
        let mut e = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
            e[j] = Complex64::new(1.0, 0.0);
            let col = self.solve(&e);
            for (i, v) in col.into_iter().enumerate() {
                inv.set(i, j, v);
            }
        }
        inv
    }
}

/// `tr(Z·A·Bᴴ)` for lower Toeplitz `A`, `B` whose bands fit inside `Z`'s band.
pub fn trace_z_a_bh(z: &HermitianBand, a: &BandedToeplitz, b: &BandedToeplitz) -> Complex64 {
    let n = z.n();
    let (ta, tb) = (a.first_col(), b.first_col());
    let mut acc = Complex64::new(0.0, 0.0);
    for m in 0..n {
        for (p, &ap) in ta.iter().enumerate() {
            if m + p >= n {
                break;
            }
            for (q, &bq) in tb.iter().enumerate() {
                if m + q >= n {
                    break;
                }
                acc += ap * bq.conj() * z.get(m + q, m + p);
            }
        }
    }
    acc
}

/// `A·Bᴴ` for two lower-triangular banded Toeplitz operators, returned dense.
///
/// The result vanishes outside `|i−j| < max(len_a, len_b)`.
pub fn product_adjoint(a: &BandedToeplitz, b: &BandedToeplitz) -> DenseMatrix {
    let n = a.n();
    let (ta, tb) = (a.first_col(), b.first_col());
    let bw = ta.len().max(tb.len());
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in i.saturating_sub(bw)..(i + bw).min(n) {
            let lo = i.saturating_sub(ta.len() - 1).max(j.saturating_sub(tb.len() - 1));
            let mut acc = Complex64::new(0.0, 0.0);
            for k in lo..=i.min(j) {
                acc += ta[i - k] * tb[j - k].conj();
            }
            out.set(i, j, acc);
        }
    }
    out
}

/// `Z·A` where `A` vanishes outside `|i−j| ≤ bw`.
pub(crate) fn mul_dense_banded(z: &DenseMatrix, a: &DenseMatrix, bw: usize) -> DenseMatrix {
    let n = z.rows();
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let zi = z.row(i);
        for j in 0..n {
            let lo = j.saturating_sub(bw);
            let acc: Complex64 = zi[lo..(j + bw + 1).min(n)].iter().enumerate().map(|(k, v)| v * a.get(lo + k, j)).sum();
            out.set(i, j, acc);
        }
    }
    out
}

/// `tr(Z·A·Z·B)` for dense `Z` and `A`, `B` vanishing outside `|i−j| ≤ bw`.
pub fn trace_zazb(z: &DenseMatrix, a: &DenseMatrix, b: &DenseMatrix, bw: usize) -> Complex64 {
    let za = mul_dense_banded(z, a, bw);
    let zb = mul_dense_banded(z, b, bw);
    za.trace_of_product(&zb)
}

pub fn convolve(a: &[Complex64], b: &[Complex64]) -> Vec<Complex64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![Complex64::new(0.0, 0.0); a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

pub fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

pub fn norm_sqr(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
    }

    fn close(a: Complex64, b: Complex64, tol: f64) -> bool {
        (a - b).norm() <= tol * (1.0 + b.norm())
    }

    #[test]
    fn general_toeplitz_matvec_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in [1usize, 5, 17, 64] {
            let col = random_vec(&mut rng, n.min(4));
            let mut row = random_vec(&mut rng, n.min(3));
            row[0] = col[0];
            let t = BandedToeplitz::new(col, row, n).unwrap();
            let x = random_vec(&mut rng, n);
            let dense = t.to_dense();
            for (a, b) in t.matvec(&x).iter().zip(dense.matvec(&x)) {
                assert!(close(*a, b, 1e-13));
            }
            for (a, b) in t.matvec_adjoint(&x).iter().zip(dense.adjoint().matvec(&x)) {
                assert!(close(*a, b, 1e-13));
            }
        }
    }

    #[test]
    fn rejects_mismatched_corner() {
        assert!(BandedToeplitz::new(vec![c(1.0, 0.0)], vec![c(2.0, 0.0)], 3).is_err());
        assert!(BandedToeplitz::new(vec![c(1.0, 0.0); 4], vec![c(1.0, 0.0)], 3).is_err());
    }

    #[test]
    fn gram_matches_dense_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 12;
        let taps = random_vec(&mut rng, 4);
        let mut band = HermitianBand::scaled_identity(n, 0.7);
        band.add_gram(&taps, 2.5);
        let t = BandedToeplitz::lower(&taps, n).to_dense();
        let g = t.matmul(&t.adjoint());
        for i in 0..n {
            for j in 0..n {
                let expect = g.get(i, j) * 2.5 + if i == j { c(0.7, 0.0) } else { c(0.0, 0.0) };
                assert!(close(band.get(i, j), expect, 1e-13), "({i},{j})");
            }
        }
    }

    #[test]
    fn cholesky_solves_and_log_det() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let mut band = HermitianBand::scaled_identity(n, 1.0);
        band.add_gram(&random_vec(&mut rng, 5), 3.0);
        band.add_gram(&random_vec(&mut rng, 3), 1.0);
        let chol = band.cholesky().unwrap();
        let b = random_vec(&mut rng, n);
        let x = chol.solve(&b);
        for (a, e) in band.matvec(&x).iter().zip(&b) {
            assert!(close(*a, *e, 1e-11));
        }
        let back = chol.color(&chol.solve_lower(&b));
        for (a, e) in back.iter().zip(&b) {
            assert!(close(*a, *e, 1e-12));
        }
        // log det via product of squared pivots of an independent dense elimination
        let mut d = band.to_dense();
        let mut logdet = 0.0;
        for k in 0..n {
            let p = d.get(k, k);
            logdet += p.re.ln();
            for i in k + 1..n {
                let f = d.get(i, k) / p;
                for j in k..n {
                    let v = d.get(i, j) - f * d.get(k, j);
                    d.set(i, j, v);
                }
            }
        }
        assert!((chol.log_det() - logdet).abs() < 1e-10 * logdet.abs().max(1.0));
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut band = HermitianBand::scaled_identity(4, -1.0);
        band.add_gram(&[c(0.1, 0.0)], 1.0);
        assert!(matches!(band.cholesky(), Err(Error::NotPositiveDefinite { .. })));
    }

    #[test]
    fn selected_inverse_matches_dense_inverse_in_band() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 25;
        let mut band = HermitianBand::scaled_identity(n, 0.5);
        band.add_gram(&random_vec(&mut rng, 4), 2.0);
        let chol = band.cholesky().unwrap();
        let z = chol.selected_inverse();
        let full = chol.inverse_dense();
        for i in 0..n {
            for j in 0..n {
                if i.abs_diff(j) <= band.bandwidth() {
                    assert!(close(z.get(i, j), full.get(i, j), 1e-10), "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn banded_products_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 15;
        let a = BandedToeplitz::lower(&random_vec(&mut rng, 3), n);
        let b = BandedToeplitz::lower(&random_vec(&mut rng, 4), n);
        let ab = product_adjoint(&a, &b);
        let dense = a.to_dense().matmul(&b.to_dense().adjoint());
        for i in 0..n {
            for j in 0..n {
                assert!(close(ab.get(i, j), dense.get(i, j), 1e-12));
            }
        }
        let mut band = HermitianBand::scaled_identity(n, 2.0);
        band.add_gram(a.first_col(), 1.0);
        let z = band.cholesky().unwrap().inverse_dense();
        let ba = product_adjoint(&b, &a);
        let fast = trace_zazb(&z, &ab, &ba, 4);
        let slow = z.matmul(&ab).matmul(&z).matmul(&ba).trace();
        assert!(close(fast, slow, 1e-10));
    }

    #[test]
    fn band_trace_matches_dense_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 20;
        let ta = random_vec(&mut rng, 4);
        let tb = random_vec(&mut rng, 4);
        let mut band = HermitianBand::scaled_identity(n, 1.0);
        band.add_gram(&ta, 1.5);
        let chol = band.cholesky().unwrap();
        let a = BandedToeplitz::lower(&ta, n);
        let b = BandedToeplitz::lower(&tb, n);
        let fast = trace_z_a_bh(&chol.selected_inverse(), &a, &b);
        let dense = chol.inverse_dense().matmul(&a.to_dense()).matmul(&b.to_dense().adjoint()).trace();
        assert!(close(fast, dense, 1e-10));
    }

    #[test]
    fn lower_toeplitz_products_are_convolutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 16;
        let a = random_vec(&mut rng, 3);
        let b = random_vec(&mut rng, 5);
        let prod = BandedToeplitz::lower(&a, n).to_dense().matmul(&BandedToeplitz::lower(&b, n).to_dense());
        let conv = BandedToeplitz::lower(&convolve(&a, &b), n).to_dense();
        for i in 0..n {
            for j in 0..n {
                assert!(close(prod.get(i, j), conv.get(i, j), 1e-13));
            }
        }
    }
}
