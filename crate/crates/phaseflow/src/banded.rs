//! Complex banded matrices and their LU factorization with partial pivoting.
//!
//! Factorizations are row- and column-equilibrated. Row `i` of the factor
//! stores columns `i - kl ..= i + kl + ku`, which leaves room for the fill-in
//! produced by row interchanges.

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Square banded matrix with `kl` sub- and `ku` super-diagonals.
#[derive(Clone, Debug)]
pub struct BandMatrix {
    pub n: usize,
    pub kl: usize,
    pub ku: usize,
    data: Vec<Complex64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Self { n, kl, ku, data: vec![ZERO; n * (kl + ku + 1)] }
    }

    /// Builds a band matrix from `(row, col, value)` entries; duplicates add.
    pub fn from_entries(n: usize, entries: &[(usize, usize, Complex64)]) -> Self {
        let (mut kl, mut ku) = (0, 0);
        for &(i, j, _) in entries {
            if i > j {
                kl = kl.max(i - j);
            } else {
                ku = ku.max(j - i);
            }
        }
        let mut m = Self::zeros(n, kl, ku);
        for &(i, j, v) in entries {
            m.add(i, j, v);
        }
        m
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> Option<usize> {
        if j + self.kl < i || j > i + self.ku || i >= self.n || j >= self.n {
            None
        } else {
            Some(i * (self.kl + self.ku + 1) + (j + self.kl - i))
        }
    }

    /// Adds `v` at `(i, j)`. Panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: Complex64) {
        let k = self.idx(i, j).unwrap_or_else(|| panic!("entry ({i}, {j}) outside band"));
        self.data[k] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.idx(i, j).map(|k| self.data[k]).unwrap_or(ZERO)
    }

    fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.get(i, j).norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_1(&self) -> f64 {
        let mut col = vec![0.0; self.n];
        for i in 0..self.n {
            for j in self.row_range(i) {
                col[j] += self.get(i, j).norm();
            }
        }
        col.into_iter().fold(0.0, f64::max)
    }

    /// Dense copy, for tests.
    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        (0..self.n).map(|i| (0..self.n).map(|j| self.get(i, j)).collect()).collect()
    }
}

/// Equilibrated LU factorization of a [`BandMatrix`].
#[derive(Clone, Debug)]
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    lu: Vec<Complex64>,
    piv: Vec<usize>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
    original: BandMatrix,
    scaled_norm_1: f64,
}

impl BandLu {
    pub fn factor(a: &BandMatrix) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let width = 2 * kl + ku + 1;
        let mut row_scale = vec![1.0; n];
        for (i, r) in row_scale.iter_mut().enumerate() {
            let m = a.row_range(i).map(|j| a.get(i, j).norm()).fold(0.0, f64::max);
            if m == 0.0 {
                return Err(Error::Solver(format!("row {i} of the mode matrix is zero")));
            }
            *r = 1.0 / m;
        }
        let mut col_max = vec![0.0f64; n];
        for i in 0..n {
            for j in a.row_range(i) {
                col_max[j] = col_max[j].max(row_scale[i] * a.get(i, j).norm());
            }
        }
        let mut col_scale = vec![1.0; n];
        for (j, c) in col_scale.iter_mut().enumerate() {
            if col_max[j] == 0.0 {
                return Err(Error::Solver(format!("column {j} of the mode matrix is zero")));
            }
            *c = 1.0 / col_max[j];
        }
        let mut lu = vec![ZERO; n * width];
        let at = |i: usize, j: usize| i * width + (j + kl - i);
        let mut scaled_col = vec![0.0f64; n];
        for i in 0..n {
            for j in a.row_range(i) {
                let v = a.get(i, j) * row_scale[i] * col_scale[j];
                lu[at(i, j)] = v;
                scaled_col[j] += v.norm();
            }
        }
        let scaled_norm_1 = scaled_col.into_iter().fold(0.0, f64::max);
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = lu[at(k, k)].norm();
            for i in k + 1..=last {
                let v = lu[at(i, k)].norm();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 {
                return Err(Error::Solver(format!("singular mode matrix: zero pivot in column {k}")));
            }
            piv[k] = p;
            let right = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=right {
                    lu.swap(at(k, j), at(p, j));
                }
            }
            let pivot = lu[at(k, k)];
            for i in k + 1..=last {
                let l = lu[at(i, k)] / pivot;
                lu[at(i, k)] = l;
                if l != ZERO {
                    for j in k + 1..=right {
                        let u = lu[at(k, j)];
                        lu[at(i, j)] -= l * u;
                    }
                }
            }
        }
        Ok(Self { n, kl, ku, width, lu, piv, row_scale, col_scale, original: a.clone(), scaled_norm_1 })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// The matrix that was factored.
    pub fn matrix(&self) -> &BandMatrix {
        &self.original
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> Complex64 {
        self.lu[i * self.width + (j + self.kl - i)]
    }

    /// Solves the equilibrated system in place.
    fn solve_scaled(&self, y: &mut [Complex64]) {
        let n = self.n;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                y.swap(k, p);
            }
            let yk = y[k];
            if yk != ZERO {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    y[i] -= self.at(i, k) * yk;
                }
            }
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for j in k + 1..=(k + self.kl + self.ku).min(n - 1) {
                s -= self.at(k, j) * y[j];
            }
            y[k] = s / self.at(k, k);
        }
    }

    /// Solves the conjugate-transposed equilibrated system in place.
    fn solve_scaled_adjoint(&self, y: &mut [Complex64]) {
        let n = self.n;
        let band = self.kl + self.ku;
        for k in 0..n {
            let mut s = y[k];
            for j in k.saturating_sub(band)..k {
                s -= self.at(j, k).conj() * y[j];
            }
            y[k] = s / self.at(k, k).conj();
        }
        for k in (0..n).rev() {
            let mut s = y[k];
            for i in k + 1..=(k + self.kl).min(n - 1) {
                s -= self.at(i, k).conj() * y[i];
            }
            y[k] = s;
            let p = self.piv[k];
            if p != k {
                y.swap(k, p);
            }
        }
    }

    /// Solves `A x = b` with one step of iterative refinement.
    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut x = self.solve_once(b);
        let ax = self.original.matvec(&x);
        let r: Vec<Complex64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        let dx = self.solve_once(&r);
        for (x, d) in x.iter_mut().zip(dx) {
            *x += d;
        }
        x
    }

    fn solve_once(&self, b: &[Complex64]) -> Vec<Complex64> {
        let mut y: Vec<Complex64> = b.iter().zip(&self.row_scale).map(|(v, r)| v * r).collect();
        self.solve_scaled(&mut y);
        y.iter().zip(&self.col_scale).map(|(v, c)| v * c).collect()
    }

    /// `||A x - b||_inf / (||A||_inf ||x||_inf + ||b||_inf)`.
    pub fn relative_residual(&self, x: &[Complex64], b: &[Complex64]) -> f64 {
        let ax = self.original.matvec(x);
        let r = ax.iter().zip(b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let xn = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let bn = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let denom = self.original.norm_inf() * xn + bn;
        if denom == 0.0 {
            0.0
        } else {
            r / denom
        }
    }

    /// Estimated 1-norm condition number of the equilibrated matrix.
    pub fn condition_estimate(&self) -> f64 {
        self.scaled_norm_1 * self.inverse_norm_1_estimate()
    }

    /// Hager-Higham estimate of `||A_s^{-1}||_1` for the equilibrated matrix.
    fn inverse_norm_1_estimate(&self) -> f64 {
        let n = self.n;
        let norm1 = |v: &[Complex64]| v.iter().map(|c| c.norm()).sum::<f64>();
        let mut x = vec![Complex64::new(1.0 / n as f64, 0.0); n];
        let mut est = 0.0f64;
        let mut last_j = usize::MAX;
        for iter in 0..5 {
            let mut y = x.clone();
            self.solve_scaled(&mut y);
            let new_est = norm1(&y);
            if iter > 0 && new_est <= est {
                est = est.max(new_est);
                break;
            }
            est = new_est;
            let mut xi: Vec<Complex64> = y
                .iter()
                .map(|v| if v.norm() == 0.0 { Complex64::new(1.0, 0.0) } else { v / v.norm() })
                .collect();
            self.solve_scaled_adjoint(&mut xi);
            let (j, zmax) = xi
                .iter()
                .enumerate()
                .map(|(j, v)| (j, v.norm()))
                .fold((0, -1.0), |a, b| if b.1 > a.1 { b } else { a });
            if j == last_j {
                break;
            }
            let zx: f64 = xi.iter().zip(&x).map(|(z, x)| (z.conj() * x).re).sum();
            if iter > 0 && zmax <= zx {
                break;
            }
            last_j = j;
            x = vec![ZERO; n];
            x[j] = Complex64::new(1.0, 0.0);
        }
        let mut alt: Vec<Complex64> = (0..n)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                Complex64::new(s * (1.0 + i as f64 / (n.max(2) - 1) as f64), 0.0)
            })
            .collect();
        self.solve_scaled(&mut alt);
        est.max(2.0 * norm1(&alt) / (3.0 * n as f64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn lcg(seed: u64) -> impl FnMut() -> f64 {
        let mut s = seed.wrapping_add(0x9E3779B97F4A7C15);
        move || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
    }

    fn random_band(n: usize, kl: usize, ku: usize, seed: u64, diag_boost: f64) -> BandMatrix {
        let mut r = lcg(seed);
        let mut m = BandMatrix::zeros(n, kl, ku);
        for i in 0..n {
            for j in i.saturating_sub(kl)..(i + ku + 1).min(n) {
                let mut v = c(r(), r());
                if i == j {
                    v += c(diag_boost, 0.0);
                }
                m.add(i, j, v);
            }
        }
        m
    }

    /// Dense Gaussian elimination, used as an independent oracle.
    fn dense_solve(a: Vec<Vec<Complex64>>, b: Vec<Complex64>) -> Vec<Complex64> {
        let n = b.len();
        let mut m: Vec<Vec<Complex64>> = a.into_iter().zip(b).map(|(mut r, v)| { r.push(v); r }).collect();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| m[i][k].norm().partial_cmp(&m[j][k].norm()).unwrap()).unwrap();
            m.swap(k, p);
            for i in k + 1..n {
                let l = m[i][k] / m[k][k];
                for j in k..=n {
                    let t = m[k][j];
                    m[i][j] -= l * t;
                }
            }
        }
        let mut x = vec![ZERO; n];
        for k in (0..n).rev() {
            let mut s = m[k][n];
            for j in k + 1..n {
                s -= m[k][j] * x[j];
            }
            x[k] = s / m[k][k];
        }
        x
    }

    #[test]
    fn matches_dense_elimination_without_diagonal_dominance() {
        let a = random_band(40, 3, 5, 11, 0.0);
        let mut r = lcg(5);
        let b: Vec<Complex64> = (0..40).map(|_| c(r(), r())).collect();
        let lu = BandLu::factor(&a).unwrap();
        let x = lu.solve(&b);
        let xd = dense_solve(a.to_dense(), b.clone());
        let err = x.iter().zip(&xd).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = xd.iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err / scale < 1e-10, "{}", err / scale);
        assert!(lu.relative_residual(&x, &b) < 1e-14);
    }

    #[test]
    fn adjoint_solve_inverts_conjugate_transpose() {
        let a = random_band(30, 2, 4, 3, 1.0);
        let lu = BandLu::factor(&a).unwrap();
        let mut r = lcg(9);
        let v: Vec<Complex64> = (0..30).map(|_| c(r(), r())).collect();
        let mut y = v.clone();
        lu.solve_scaled_adjoint(&mut y);
        // Rebuild the equilibrated matrix and apply its conjugate transpose.
        let d = a.to_dense();
        for j in 0..30 {
            let mut s = ZERO;
            for i in 0..30 {
                s += (d[i][j] * lu.row_scale[i] * lu.col_scale[j]).conj() * y[i];
            }
            assert!((s - v[j]).norm() < 1e-10);
        }
    }

    #[test]
    fn condition_estimate_is_close_to_exact_for_small_systems() {
        let a = random_band(25, 2, 2, 21, 0.5);
        let lu = BandLu::factor(&a).unwrap();
        let n = 25;
        let mut exact_inv = 0.0f64;
        for j in 0..n {
            let mut e = vec![ZERO; n];
            e[j] = c(1.0, 0.0);
            lu.solve_scaled(&mut e);
            exact_inv = exact_inv.max(e.iter().map(|v| v.norm()).sum());
        }
        let exact = lu.scaled_norm_1 * exact_inv;
        let est = lu.condition_estimate();
        assert!(est <= exact * (1.0 + 1e-12) && est >= exact / 10.0, "est {est} exact {exact}");
    }

    #[test]
    fn singular_matrices_are_reported() {
        let mut a = BandMatrix::zeros(3, 1, 1);
        a.add(0, 0, c(1.0, 0.0));
        a.add(1, 1, c(1.0, 0.0));
        assert!(matches!(BandLu::factor(&a), Err(Error::Solver(_))));
        let a = BandMatrix::from_entries(
            2,
            &[(0, 0, c(1.0, 0.0)), (0, 1, c(1.0, 0.0)), (1, 0, c(1.0, 0.0)), (1, 1, c(1.0, 0.0))],
        );
        assert!(matches!(BandLu::factor(&a), Err(Error::Solver(_))));
    }

    #[test]
    fn from_entries_infers_bandwidths() {
        let a = BandMatrix::from_entries(5, &[(0, 3, c(1.0, 0.0)), (4, 2, c(2.0, 0.0)), (4, 2, c(1.0, 0.0))]);
        assert_eq!((a.kl, a.ku), (2, 3));
        assert_eq!(a.get(4, 2), c(3.0, 0.0));
    }

    proptest! {
        #[test]
        fn solutions_have_tiny_residuals(seed in 0u64..500, kl in 0usize..5, ku in 0usize..5) {
            let a = random_band(60, kl, ku, seed, 0.0);
            let mut r = lcg(seed + 1);
            let b: Vec<Complex64> = (0..60).map(|_| c(r(), r())).collect();
            if let Ok(lu) = BandLu::factor(&a) {
                let x = lu.solve(&b);
                prop_assert!(lu.relative_residual(&x, &b) < 1e-12);
            }
        }

        #[test]
        fn solve_is_linear(seed in 0u64..200, alpha in -2.0..2.0f64) {
            let a = random_band(20, 2, 3, seed, 2.0);
            let lu = BandLu::factor(&a).unwrap();
            let mut r = lcg(seed + 7);
            let b1: Vec<Complex64> = (0..20).map(|_| c(r(), r())).collect();
            let b2: Vec<Complex64> = (0..20).map(|_| c(r(), r())).collect();
            let x1 = lu.solve(&b1);
            let x2 = lu.solve(&b2);
            let b: Vec<Complex64> = b1.iter().zip(&b2).map(|(u, v)| u * alpha + v).collect();
            let x = lu.solve(&b);
            for i in 0..20 {
                prop_assert!((x[i] - (x1[i] * alpha + x2[i])).norm() < 1e-10);
            }
        }
    }
}
