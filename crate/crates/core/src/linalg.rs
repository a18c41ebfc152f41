//! Dense least squares for small, tall design matrices.
//!
//! Fits go through a column-pivoted Householder QR so that nearly collinear
//! designs (centered interaction columns, for instance) are detected instead
//! of silently producing garbage coefficients. Both the classic covariance
//! `s² (X'X)⁻¹` and the HC0 sandwich `(X'X)⁻¹ X' diag(ε²) X (X'X)⁻¹` are
//! returned with every fit.

use crate::error::{Error, Result};

/// Relative tolerance on the diagonal of `R` below which a column is
/// considered linearly dependent on the previous ones.
pub const RANK_TOLERANCE: f64 = 1e-10;

/// Column-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

/// A regression design. Rows are units, columns are regressors.
pub type DesignMatrix = Matrix;

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from columns; every column must have the same length.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            if c.len() != rows {
                return Err(Error::DimensionMismatch {
                    context: "matrix columns",
                    expected: rows,
                    found: c.len(),
                });
            }
            data.extend_from_slice(c);
        }
        Ok(Matrix {
            rows,
            cols: columns.len(),
            data,
        })
    }

    /// Build from rows; every row must have the same length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let cols = rows.first().map_or(0, Vec::len);
        let mut m = Matrix::zeros(n, cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    context: "matrix rows",
                    expected: cols,
                    found: r.len(),
                });
            }
            for (j, v) in r.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Ok(m)
    }

    /// An `n × 0` matrix, used for datasets without covariates.
    pub fn empty(rows: usize) -> Self {
        Matrix::zeros(rows, 0)
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn column_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn columns(&self) -> impl Iterator<Item = &[f64]> {
        (0..self.cols).map(move |j| self.column(j))
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self[(i, j)]).collect()
    }

    /// Rows selected by index, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(idx.len(), self.cols);
        for j in 0..self.cols {
            let src = self.column(j);
            let dst = out.column_mut(j);
            for (d, &i) in dst.iter_mut().zip(idx) {
                *d = src[i];
            }
        }
        out
    }

    /// Columns of `self` followed by columns of `other`.
    pub fn hstack(&self, other: &Matrix) -> Result<Matrix> {
        if self.rows != other.rows {
            return Err(Error::DimensionMismatch {
                context: "hstack",
                expected: self.rows,
                found: other.rows,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols + other.cols,
            data,
        })
    }

    /// `[1, self]`.
    pub fn with_intercept(&self) -> Matrix {
        let mut data = vec![1.0; self.rows];
        data.extend_from_slice(&self.data);
        Matrix {
            rows: self.rows,
            cols: self.cols + 1,
            data,
        }
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul",
                expected: self.cols,
                found: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for j in 0..other.cols {
            for k in 0..self.cols {
                let b = other[(k, j)];
                if b == 0.0 {
                    continue;
                }
                let src = self.column(k);
                for (o, a) in out.column_mut(j).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.cols);
        let mut out = vec![0.0; self.rows];
        for (j, &b) in v.iter().enumerate() {
            for (o, a) in out.iter_mut().zip(self.column(j)) {
                *o += a * b;
            }
        }
        out
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for j in 0..self.cols {
            for i in 0..self.rows {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[j * self.rows + i]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[j * self.rows + i]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Column-pivoted Householder QR, `X P = Q R`.
#[derive(Debug, Clone)]
pub struct PivotedQr {
    rows: usize,
    cols: usize,
    /// Upper triangle holds `R`; the strict lower part is scratch.
    r: Matrix,
    /// Householder vectors, one per column, each of length `rows - k`.
    reflectors: Vec<Vec<f64>>,
    /// Column `k` of `X P` is column `perm[k]` of `X`.
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(x: &Matrix) -> Self {
        let (n, p) = (x.nrows(), x.ncols());
        let mut a = x.clone();
        let mut perm: Vec<usize> = (0..p).collect();
        let mut reflectors = Vec::with_capacity(p.min(n));
        let steps = p.min(n);
        for k in 0..steps {
            // pivot on the largest remaining column norm
            let (mut best, mut best_norm) = (k, -1.0);
            for j in k..p {
                let s = norm2(&a.column(j)[k..]);
                if s > best_norm {
                    best = j;
                    best_norm = s;
                }
            }
            if best != k {
                for i in 0..n {
                    let tmp = a[(i, k)];
                    a[(i, k)] = a[(i, best)];
                    a[(i, best)] = tmp;
                }
                perm.swap(k, best);
            }
            let norm = best_norm.max(0.0).sqrt();
            let mut v: Vec<f64> = a.column(k)[k..].to_vec();
            if norm == 0.0 {
                reflectors.push(vec![0.0; n - k]);
                continue;
            }
            let alpha = if v[0] > 0.0 { -norm } else { norm };
            v[0] -= alpha;
            let vnorm = norm2(&v);
            if vnorm > 0.0 {
                for j in k + 1..p {
                    let col = &mut a.column_mut(j)[k..];
                    let f = 2.0 * dot(&v, col) / vnorm;
                    for (c, vi) in col.iter_mut().zip(&v) {
                        *c -= f * vi;
                    }
                }
            }
            let col = &mut a.column_mut(k)[k..];
            col[0] = alpha;
            col[1..].iter_mut().for_each(|c| *c = 0.0);
            reflectors.push(v);
        }
        let r00 = if steps > 0 { a[(0, 0)].abs() } else { 0.0 };
        let rank = (0..steps)
            .filter(|&k| r00 > 0.0 && a[(k, k)].abs() > RANK_TOLERANCE * r00)
            .count();
        PivotedQr {
            rows: n,
            cols: p,
            r: a,
            reflectors,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// `Q' y`.
    pub fn qt_mul(&self, y: &[f64]) -> Vec<f64> {
        let mut out = y.to_vec();
        for (k, v) in self.reflectors.iter().enumerate() {
            let vnorm = norm2(v);
            if vnorm == 0.0 {
                continue;
            }
            let seg = &mut out[k..];
            let f = 2.0 * dot(v, seg) / vnorm;
            for (s, vi) in seg.iter_mut().zip(v) {
                *s -= f * vi;
            }
        }
        out
    }

    /// Thin `Q` (`rows × cols`) with orthonormal columns spanning the
    /// column space of `X`. Requires full rank.
    pub fn thin_q(&self) -> Result<Matrix> {
        self.require_full_rank()?;
        let (n, p) = (self.rows, self.cols);
        let mut q = Matrix::zeros(n, p);
        for k in 0..p {
            let col = q.column_mut(k);
            col[k] = 1.0;
            for (r, v) in self.reflectors.iter().enumerate().rev() {
                let vnorm = norm2(v);
                if vnorm == 0.0 {
                    continue;
                }
                let seg = &mut col[r..];
                let f = 2.0 * dot(v, seg) / vnorm;
                for (s, vi) in seg.iter_mut().zip(v) {
                    *s -= f * vi;
                }
            }
        }
        Ok(q)
    }

    /// Inverse of the leading `p × p` block of `R`. Requires full rank.
    fn r_inverse(&self) -> Matrix {
        let p = self.cols;
        let mut inv = Matrix::zeros(p, p);
        for j in 0..p {
            inv[(j, j)] = 1.0 / self.r[(j, j)];
            for i in (0..j).rev() {
                let mut s = 0.0;
                for k in i + 1..=j {
                    s += self.r[(i, k)] * inv[(k, j)];
                }
                inv[(i, j)] = -s / self.r[(i, i)];
            }
        }
        inv
    }

    /// Least-squares coefficients in the original column order.
    pub fn solve(&self, y: &[f64]) -> Result<Vec<f64>> {
        self.require_full_rank()?;
        let p = self.cols;
        let qty = self.qt_mul(y);
        let mut b = vec![0.0; p];
        for i in (0..p).rev() {
            let mut s = qty[i];
            for k in i + 1..p {
                s -= self.r[(i, k)] * b[k];
            }
            b[i] = s / self.r[(i, i)];
        }
        let mut beta = vec![0.0; p];
        for (k, &j) in self.perm.iter().enumerate() {
            beta[j] = b[k];
        }
        Ok(beta)
    }

    /// `(X'X)⁻¹` in the original column order.
    pub fn gram_inverse(&self) -> Result<Matrix> {
        self.require_full_rank()?;
        let p = self.cols;
        let rinv = self.r_inverse();
        let mut g = Matrix::zeros(p, p);
        for a in 0..p {
            for b in a..p {
                let mut s = 0.0;
                for k in b..p {
                    s += rinv[(a, k)] * rinv[(b, k)];
                }
                let (ia, ib) = (self.perm[a], self.perm[b]);
                g[(ia, ib)] = s;
                g[(ib, ia)] = s;
            }
        }
        Ok(g)
    }

    fn require_full_rank(&self) -> Result<()> {
        if self.rank < self.cols || self.rows < self.cols {
            return Err(Error::RankDeficient {
                rank: self.rank,
                cols: self.cols,
            });
        }
        Ok(())
    }
}

/// Result of an ordinary least-squares fit.
#[derive(Debug, Clone)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub residuals: Vec<f64>,
    pub rss: f64,
    pub gram_inverse: Matrix,
    pub classic_cov: Matrix,
    pub robust_cov: Matrix,
    pub dof: usize,
}

impl OlsFit {
    pub fn se_classic(&self, j: usize) -> f64 {
        self.classic_cov[(j, j)].max(0.0).sqrt()
    }

    pub fn se_robust(&self, j: usize) -> f64 {
        self.robust_cov[(j, j)].max(0.0).sqrt()
    }

    pub fn fitted(&self, y: &[f64]) -> Vec<f64> {
        y.iter().zip(&self.residuals).map(|(a, e)| a - e).collect()
    }
}

/// Ordinary least squares of `y` on the columns of `x`.
pub fn fit_ols(x: &DesignMatrix, y: &[f64]) -> Result<OlsFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            context: "fit_ols response",
            expected: n,
            found: y.len(),
        });
    }
    if n <= p {
        return Err(Error::InvalidInput(format!(
            "least squares needs more rows than columns ({n} rows, {p} columns)"
        )));
    }
    if !y.iter().all(|v| v.is_finite()) || !x.is_finite() {
        return Err(Error::InvalidInput("non-finite value in regression".into()));
    }
    let qr = PivotedQr::new(x);
    let coefficients = qr.solve(y)?;
    let gram_inverse = qr.gram_inverse()?;
    let fitted = x.mul_vec(&coefficients);
    let residuals: Vec<f64> = y.iter().zip(&fitted).map(|(a, b)| a - b).collect();
    let rss = norm2(&residuals);
    let dof = n - p;
    let mut classic_cov = gram_inverse.clone();
    classic_cov.scale(rss / dof as f64);
    let robust_cov = sandwich(&gram_inverse, x, &residuals);
    Ok(OlsFit {
        coefficients,
        residuals,
        rss,
        gram_inverse,
        classic_cov,
        robust_cov,
        dof,
    })
}

/// HC0 covariance `(X'X)⁻¹ X' diag(ε²) X (X'X)⁻¹` for a fit produced from `x`.
pub fn hc0_cov(fit: &OlsFit, x: &DesignMatrix) -> Matrix {
    sandwich(&fit.gram_inverse, x, &fit.residuals)
}

fn sandwich(gram_inverse: &Matrix, x: &Matrix, residuals: &[f64]) -> Matrix {
    let p = x.ncols();
    let mut meat = Matrix::zeros(p, p);
    let mut row = vec![0.0; p];
    for (i, e) in residuals.iter().enumerate() {
        let w = e * e;
        if w == 0.0 {
            continue;
        }
        for (j, r) in row.iter_mut().enumerate() {
            *r = x[(i, j)];
        }
        for a in 0..p {
            let ra = w * row[a];
            for b in a..p {
                meat[(a, b)] += ra * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            meat[(a, b)] = meat[(b, a)];
        }
    }
    let left = gram_inverse
        .matmul(&meat)
        .expect("square matrices of equal size");
    let mut out = left
        .matmul(gram_inverse)
        .expect("square matrices of equal size");
    // enforce exact symmetry
    for a in 0..p {
        for b in 0..a {
            let s = 0.5 * (out[(a, b)] + out[(b, a)]);
            out[(a, b)] = s;
            out[(b, a)] = s;
        }
    }
    out
}

/// Coefficient and standard errors of a no-intercept regression of `u` on a
/// single regressor `v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnivariateFit {
    pub coefficient: f64,
    pub se_classic: f64,
    pub se_robust: f64,
}

pub fn univariate_ols(u: &[f64], v: &[f64]) -> Result<UnivariateFit> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            context: "univariate_ols",
            expected: v.len(),
            found: u.len(),
        });
    }
    let n = u.len();
    if n < 2 {
        return Err(Error::InvalidInput(
            "univariate_ols needs at least two points".into(),
        ));
    }
    let vv = norm2(v);
    if vv == 0.0 {
        return Err(Error::ZeroRegressor);
    }
    let coefficient = dot(v, u) / vv;
    let mut rss = 0.0;
    let mut meat = 0.0;
    for (ui, vi) in u.iter().zip(v) {
        let eta = ui - vi * coefficient;
        rss += eta * eta;
        meat += vi * vi * eta * eta;
    }
    let se_classic = (rss / vv / (n - 1) as f64).max(0.0).sqrt();
    let se_robust = (meat / (vv * vv)).sqrt();
    Ok(UnivariateFit {
        coefficient,
        se_classic,
        se_robust,
    })
}

/// Cholesky factor `L` of a symmetric positive definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: Matrix,
}

impl Cholesky {
    /// Fails with [`Error::SingularCovariance`] when a pivot falls below
    /// `1e-12` times the largest diagonal entry.
    pub fn new(a: &Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::DimensionMismatch {
                context: "cholesky",
                expected: n,
                found: a.ncols(),
            });
        }
        let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = a[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > 1e-12 * scale) {
                return Err(Error::SingularCovariance);
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in j + 1..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / d;
            }
        }
        Ok(Cholesky { l })
    }

    /// `L⁻¹ b`, so that `b' A⁻¹ b = ‖L⁻¹ b‖²`.
    pub fn whiten(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.nrows();
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.l[(i, k)] * w[k];
            }
            w[i] = s / self.l[(i, i)];
        }
        w
    }

    /// `b' A⁻¹ b`.
    pub fn inv_quadratic_form(&self, b: &[f64]) -> f64 {
        norm2(&self.whiten(b))
    }

    /// `A⁻¹ b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.l.nrows();
        let w = self.whiten(b);
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut s = w[i];
            for k in i + 1..n {
                s -= self.l[(k, i)] * x[k];
            }
            x[i] = s / self.l[(i, i)];
        }
        x
    }
}

/// Finite-population covariance of the columns of `x` (denominator `N - 1`).
pub fn covariance(x: &Matrix) -> Matrix {
    let (n, j) = (x.nrows(), x.ncols());
    let means: Vec<f64> = x
        .columns()
        .map(|c| c.iter().sum::<f64>() / n as f64)
        .collect();
    let mut s = Matrix::zeros(j, j);
    for a in 0..j {
        for b in a..j {
            let v: f64 = x
                .column(a)
                .iter()
                .zip(x.column(b))
                .map(|(p, q)| (p - means[a]) * (q - means[b]))
                .sum::<f64>()
                / (n as f64 - 1.0);
            s[(a, b)] = v;
            s[(b, a)] = v;
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ones(n: usize) -> Matrix {
        Matrix::from_columns(&[vec![1.0; n]]).unwrap()
    }

    #[test]
    fn constant_fit() {
        let fit = fit_ols(&ones(3), &[2.0, 2.0, 2.0]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 2.0, epsilon = 1e-14);
        assert!(fit.residuals.iter().all(|e| e.abs() < 1e-14));
        assert_abs_diff_eq!(fit.rss, 0.0, epsilon = 1e-28);
        assert_eq!(fit.dof, 2);
    }

    #[test]
    fn two_group_fit() {
        let x = Matrix::from_rows(&[
            vec![1.0, 0.0],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
        ])
        .unwrap();
        let fit = fit_ols(&x, &[0.0, 2.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(fit.coefficients[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.coefficients[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn duplicated_column_is_rank_deficient() {
        let c = vec![1.0, 2.0, 3.0, 5.0];
        let x = Matrix::from_columns(&[vec![1.0; 4], c.clone(), c]).unwrap();
        let err = fit_ols(&x, &[1.0, 2.0, 3.0, 4.0]).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { rank: 2, cols: 3 }));
    }

    #[test]
    fn dimension_mismatch() {
        let err = fit_ols(&ones(3), &[1.0, 2.0]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn hc0_zero_residuals() {
        let x = Matrix::from_columns(&[vec![1.0; 4], vec![0.0, 1.0, 2.0, 3.0]]).unwrap();
        let fit = fit_ols(&x, &[1.0, 3.0, 5.0, 7.0]).unwrap();
        let v = hc0_cov(&fit, &x);
        assert!(v.max_abs_diff(&Matrix::zeros(2, 2)) < 1e-20);
    }

    #[test]
    fn hc0_two_group() {
        // Y ~ (1, Z) with Z = (1,1,0,0), Y = (0,2,1,3)
        let x = Matrix::from_columns(&[vec![1.0; 4], vec![1.0, 1.0, 0.0, 0.0]]).unwrap();
        let fit = fit_ols(&x, &[0.0, 2.0, 1.0, 3.0]).unwrap();
        assert_abs_diff_eq!(hc0_cov(&fit, &x)[(1, 1)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hc0_constant_magnitude_residuals() {
        // residuals ±1 in a design where that is exact
        let x = Matrix::from_columns(&[vec![1.0; 4], vec![1.0, 1.0, 0.0, 0.0]]).unwrap();
        let fit = fit_ols(&x, &[1.0, 3.0, 0.0, 2.0]).unwrap();
        assert!(fit.residuals.iter().all(|e| (e.abs() - 1.0).abs() < 1e-12));
        let v = hc0_cov(&fit, &x);
        assert!(v.max_abs_diff(&fit.gram_inverse) < 1e-12);
    }

    #[test]
    fn univariate_examples() {
        let f = univariate_ols(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(f.coefficient, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.se_classic, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.se_robust, 0.0, epsilon = 1e-15);

        let f = univariate_ols(&[1.0, -1.0], &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(f.coefficient, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(f.se_classic.powi(2), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(f.se_robust.powi(2), 0.5, epsilon = 1e-14);

        assert_eq!(
            univariate_ols(&[1.0, 2.0], &[0.0, 0.0]).unwrap_err(),
            Error::ZeroRegressor
        );
    }

    #[test]
    fn univariate_matches_full_fit() {
        let u = [0.3, -1.2, 2.5, 0.7, -0.4, 1.9];
        let v = [1.0, 0.5, -0.3, 2.2, -1.1, 0.4];
        let f = univariate_ols(&u, &v).unwrap();
        let fit = fit_ols(&Matrix::from_columns(&[v.to_vec()]).unwrap(), &u).unwrap();
        assert_abs_diff_eq!(f.coefficient, fit.coefficients[0], epsilon = 1e-12);
        assert_abs_diff_eq!(f.se_classic, fit.se_classic(0), epsilon = 1e-12);
        assert_abs_diff_eq!(f.se_robust, fit.se_robust(0), epsilon = 1e-12);
    }

    #[test]
    fn cholesky_quadratic_form() {
        let a = Matrix::from_rows(&[vec![4.0, 2.0], vec![2.0, 3.0]]).unwrap();
        let c = Cholesky::new(&a).unwrap();
        // A^{-1} = [[3, -2], [-2, 4]] / 8
        let b = [1.0, 2.0];
        let expected = (3.0 - 8.0 + 16.0) / 8.0;
        assert_abs_diff_eq!(c.inv_quadratic_form(&b), expected, epsilon = 1e-14);
        let x = c.solve(&b);
        assert_abs_diff_eq!(x[0], (3.0 - 4.0) / 8.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], (-2.0 + 8.0) / 8.0, epsilon = 1e-14);
        let singular = Matrix::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        assert!(matches!(
            Cholesky::new(&singular),
            Err(Error::SingularCovariance)
        ));
    }
}
