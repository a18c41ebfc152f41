//! Per-assignment evaluation of the four estimators with everything that
//! does not depend on the assignment precomputed once.
//!
//! The kernel works on an outcome pencil `y - c·w`. For a fixed assignment
//! each estimate is linear in the outcomes and each squared standard error
//! is a quadratic form in the residuals, so a single pass yields the
//! statistic at every `c`. Plain evaluation uses the single channel `y`.

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::estimators::{
    center_covariates, studentize, zero_tolerance, Adjustment, StatisticSpec, Studentization,
};
use crate::linalg::{Cholesky, Matrix, PivotedQr};

/// Estimate and variances of one adjustment, as functions of `c`:
/// `tau(c) = tau[0] - c·tau[1]` and `v(c) = v[0] - 2c·v[1] + c²·v[2]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Moments {
    pub tau: [f64; 2],
    pub var_classic: [f64; 3],
    pub var_robust: [f64; 3],
}

fn quad(v: &[f64; 3], c: f64) -> f64 {
    (v[0] - 2.0 * c * v[1] + c * c * v[2]).max(0.0)
}

impl Moments {
    pub fn tau_at(&self, c: f64) -> f64 {
        self.tau[0] - c * self.tau[1]
    }

    pub fn se_at(&self, s: Studentization, c: f64) -> Option<f64> {
        match s {
            Studentization::None => None,
            Studentization::Classic => Some(quad(&self.var_classic, c).sqrt()),
            Studentization::Robust => Some(quad(&self.var_robust, c).sqrt()),
        }
    }

    fn accumulate(&mut self, other: &Moments, w: f64) {
        for a in 0..2 {
            self.tau[a] += w * other.tau[a];
        }
        for a in 0..3 {
            self.var_classic[a] += w * w * other.var_classic[a];
            self.var_robust[a] += w * w * other.var_robust[a];
        }
    }
}

/// Kernel output for one assignment.
#[derive(Debug, Clone)]
pub struct Evaluation {
    parts: [Option<Result<Moments>>; 4],
}

impl Evaluation {
    pub fn moments(&self, adjustment: Adjustment) -> Result<Moments> {
        match &self.parts[adjustment.index()] {
            Some(r) => r.clone(),
            None => Err(Error::InvalidInput(format!(
                "adjustment {} was not prepared in this kernel",
                adjustment.letter()
            ))),
        }
    }

    /// Signed statistic at shift `c` with zero threshold `tol`.
    pub fn statistic(&self, spec: StatisticSpec, c: f64, tol: f64) -> Result<f64> {
        let m = self.moments(spec.adjustment)?;
        Ok(studentize(
            m.tau_at(c),
            m.se_at(spec.studentization, c),
            tol,
        ))
    }
}

#[derive(Debug, Clone)]
struct Stratum {
    idx: Vec<usize>,
    /// Outcome channels restricted to the stratum.
    u: Vec<Vec<f64>>,
    /// Channels with the intercept and covariates projected out.
    e: Vec<Vec<f64>>,
    /// `(1, Xc)` with covariates centered within the stratum.
    xt: Matrix,
    /// Orthonormal basis of the column space of `xt`.
    q: Matrix,
}

/// Precomputed state for evaluating statistics on many assignments of a
/// fixed dataset.
#[derive(Debug, Clone)]
pub struct StatKernel {
    strata: Vec<Stratum>,
    weights: Vec<f64>,
    adjustments: [bool; 4],
    channels: usize,
    j: usize,
    y: Vec<f64>,
    w: Option<Vec<f64>>,
}

impl StatKernel {
    pub fn new(data: &Dataset, adjustments: &[Adjustment]) -> Result<Self> {
        Self::build(data, None, adjustments)
    }

    /// Kernel on the outcome pencil `y - c·w`.
    pub fn with_shift(data: &Dataset, w: &[f64], adjustments: &[Adjustment]) -> Result<Self> {
        if w.len() != data.n() {
            return Err(Error::DimensionMismatch {
                context: "shift direction",
                expected: data.n(),
                found: w.len(),
            });
        }
        Self::build(data, Some(w.to_vec()), adjustments)
    }

    fn build(data: &Dataset, w: Option<Vec<f64>>, adjustments: &[Adjustment]) -> Result<Self> {
        let mut wanted = [false; 4];
        for a in adjustments {
            wanted[a.index()] = true;
        }
        let j = data.n_covariates();
        let adjusted = wanted[1..].iter().any(|b| *b);
        if adjusted && j == 0 {
            return Err(Error::MissingCovariates);
        }
        let groups = data.stratum_indices();
        let n = data.n() as f64;
        let mut strata = Vec::with_capacity(groups.len());
        let mut weights = Vec::with_capacity(groups.len());
        for idx in groups {
            let mut u = vec![idx.iter().map(|&i| data.y()[i]).collect::<Vec<_>>()];
            if let Some(w) = &w {
                u.push(idx.iter().map(|&i| w[i]).collect());
            }
            let (xt, q, e) = if adjusted {
                let xt = center_covariates(&data.x().select_rows(&idx)).with_intercept();
                if xt.nrows() <= xt.ncols() {
                    return Err(Error::InvalidInput(format!(
                        "stratum with {} units cannot be adjusted for {} covariates",
                        xt.nrows(),
                        j
                    )));
                }
                let q = PivotedQr::new(&xt).thin_q()?;
                let e = u.iter().map(|ch| residual(&q, ch)).collect();
                (xt, q, e)
            } else {
                (
                    Matrix::empty(idx.len()),
                    Matrix::empty(idx.len()),
                    Vec::new(),
                )
            };
            weights.push(idx.len() as f64 / n);
            strata.push(Stratum { idx, u, e, xt, q });
        }
        Ok(StatKernel {
            strata,
            weights,
            adjustments: wanted,
            channels: if w.is_some() { 2 } else { 1 },
            j,
            y: data.y().to_vec(),
            w,
        })
    }

    /// Zero threshold for statistics computed on `y - c·w`.
    pub fn tolerance(&self, c: f64) -> f64 {
        match &self.w {
            None => zero_tolerance(&self.y),
            Some(w) => {
                let shifted: Vec<f64> = self.y.iter().zip(w).map(|(a, b)| a - c * b).collect();
                zero_tolerance(&shifted)
            }
        }
    }

    pub fn evaluate(&self, z: &[bool]) -> Evaluation {
        let mut parts: [Option<Result<Moments>>; 4] = [None, None, None, None];
        for adj in Adjustment::ALL {
            if self.adjustments[adj.index()] {
                parts[adj.index()] = Some(self.combine(z, adj));
            }
        }
        Evaluation { parts }
    }

    fn combine(&self, z: &[bool], adj: Adjustment) -> Result<Moments> {
        let mut total = Moments::default();
        let mut zs = Vec::new();
        for (k, (s, w)) in self.strata.iter().zip(&self.weights).enumerate() {
            zs.clear();
            zs.extend(s.idx.iter().map(|&i| z[i]));
            let m = match adj {
                Adjustment::Neyman => two_sample(&s.u, &zs, self.channels),
                Adjustment::Rosenbaum => two_sample(&s.e, &zs, self.channels),
                Adjustment::Fisher => fisher(s, &zs, self.channels, self.j),
                Adjustment::Lin => lin(s, &zs, self.channels, self.j),
            }
            .map_err(|e| tag_stratum(e, k, self.strata.len()))?;
            total.accumulate(&m, *w);
        }
        Ok(total)
    }
}

fn tag_stratum(e: Error, k: usize, count: usize) -> Error {
    match e {
        Error::DegenerateArm {
            stratum: None,
            arm,
            size,
            required,
        } if count > 1 => Error::DegenerateArm {
            stratum: Some(k),
            arm,
            size,
            required,
        },
        other => other,
    }
}

fn residual(q: &Matrix, u: &[f64]) -> Vec<f64> {
    let mut r = u.to_vec();
    for col in q.columns() {
        let c: f64 = col.iter().zip(u).map(|(a, b)| a * b).sum();
        r.iter_mut().zip(col).for_each(|(v, qi)| *v -= c * qi);
    }
    r
}

fn arm_check(z: &[bool], required: usize) -> Result<(usize, usize)> {
    let n1 = z.iter().filter(|t| **t).count();
    let n0 = z.len() - n1;
    for (arm, size) in [(1u8, n1), (0u8, n0)] {
        if size < required {
            return Err(Error::DegenerateArm {
                stratum: None,
                arm,
                size,
                required,
            });
        }
    }
    Ok((n1, n0))
}

/// Adds `weight · r_a · r_b` into the packed (00, 01, 11) cross products.
#[inline]
fn add_cross(acc: &mut [f64; 3], r: &[f64; 2], weight: f64, channels: usize) {
    acc[0] += weight * r[0] * r[0];
    if channels == 2 {
        acc[1] += weight * r[0] * r[1];
        acc[2] += weight * r[1] * r[1];
    }
}

fn two_sample(u: &[Vec<f64>], z: &[bool], channels: usize) -> Result<Moments> {
    let (n1, n0) = arm_check(z, 2)?;
    let n = z.len() as f64;
    let (n1f, n0f) = (n1 as f64, n0 as f64);
    let mut means = [[0.0; 2]; 2];
    for a in 0..channels {
        for (v, &t) in u[a].iter().zip(z) {
            means[t as usize][a] += v;
        }
        means[1][a] /= n1f;
        means[0][a] /= n0f;
    }
    let mut m = Moments::default();
    for a in 0..channels {
        m.tau[a] = means[1][a] - means[0][a];
    }
    let kappa = n / ((n - 2.0) * n1f * n0f);
    let h = [1.0 / (n0f * n0f), 1.0 / (n1f * n1f)];
    let mut ss = [0.0; 3];
    let mut robust = [0.0; 3];
    let mut r = [0.0; 2];
    for (i, &t) in z.iter().enumerate() {
        let arm = t as usize;
        for a in 0..channels {
            r[a] = u[a][i] - means[arm][a];
        }
        add_cross(&mut ss, &r, 1.0, channels);
        add_cross(&mut robust, &r, h[arm], channels);
    }
    m.var_classic = ss.map(|v| kappa * v);
    m.var_robust = robust;
    Ok(m)
}

fn fisher(s: &Stratum, z: &[bool], channels: usize, j: usize) -> Result<Moments> {
    let n = z.len();
    arm_check(z, 1)?;
    if n <= j + 2 {
        return Err(Error::InvalidInput(format!(
            "ANCOVA needs more than {} units, found {n}",
            j + 2
        )));
    }
    let zf: Vec<f64> = z.iter().map(|&t| t as u8 as f64).collect();
    let delta = residual(&s.q, &zf);
    let dd: f64 = delta.iter().map(|d| d * d).sum();
    if dd <= 1e-12 * n as f64 {
        return Err(Error::ZeroDenominator);
    }
    let mut m = Moments::default();
    for a in 0..channels {
        m.tau[a] = delta.iter().zip(&s.e[a]).map(|(d, e)| d * e).sum::<f64>() / dd;
    }
    let mut ss = [0.0; 3];
    let mut robust = [0.0; 3];
    let mut r = [0.0; 2];
    for (i, d) in delta.iter().enumerate() {
        for a in 0..channels {
            r[a] = s.e[a][i] - d * m.tau[a];
        }
        add_cross(&mut ss, &r, 1.0, channels);
        add_cross(&mut robust, &r, d * d, channels);
    }
    let kappa = 1.0 / ((n - 2 - j) as f64 * dd);
    m.var_classic = ss.map(|v| kappa * v);
    m.var_robust = robust.map(|v| v / (dd * dd));
    Ok(m)
}

fn lin(s: &Stratum, z: &[bool], channels: usize, j: usize) -> Result<Moments> {
    let n = z.len();
    arm_check(z, j + 2)?;
    let p = j + 1;
    let mut gram = [Matrix::zeros(p, p), Matrix::zeros(p, p)];
    let mut xu = [[vec![0.0; p], vec![0.0; p]], [vec![0.0; p], vec![0.0; p]]];
    let mut row = vec![0.0; p];
    for (i, &t) in z.iter().enumerate() {
        let arm = t as usize;
        for (c, v) in row.iter_mut().enumerate() {
            *v = s.xt[(i, c)];
        }
        let g = &mut gram[arm];
        for a in 0..p {
            for b in a..p {
                g[(a, b)] += row[a] * row[b];
            }
        }
        for ch in 0..channels {
            let ui = s.u[ch][i];
            xu[arm][ch]
                .iter_mut()
                .zip(&row)
                .for_each(|(acc, x)| *acc += x * ui);
        }
    }
    let mut beta = [[vec![], vec![]], [vec![], vec![]]];
    let mut lead = [vec![], vec![]];
    for arm in 0..2 {
        let g = &mut gram[arm];
        for a in 0..p {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        let chol = Cholesky::new(g).map_err(|_| Error::RankDeficient {
            rank: p.saturating_sub(1),
            cols: 2 + 2 * j,
        })?;
        let mut e0 = vec![0.0; p];
        e0[0] = 1.0;
        lead[arm] = chol.solve(&e0);
        for ch in 0..channels {
            beta[arm][ch] = chol.solve(&xu[arm][ch]);
        }
    }
    let mut m = Moments::default();
    for ch in 0..channels {
        m.tau[ch] = beta[1][ch][0] - beta[0][ch][0];
    }
    let mut ss = [0.0; 3];
    let mut robust = [0.0; 3];
    let mut r = [0.0; 2];
    for (i, &t) in z.iter().enumerate() {
        let arm = t as usize;
        let mut lev = 0.0;
        for (c, v) in row.iter_mut().enumerate() {
            *v = s.xt[(i, c)];
            lev += lead[arm][c] * *v;
        }
        for ch in 0..channels {
            let fit: f64 = row.iter().zip(&beta[arm][ch]).map(|(x, b)| x * b).sum();
            r[ch] = s.u[ch][i] - fit;
        }
        add_cross(&mut ss, &r, 1.0, channels);
        add_cross(&mut robust, &r, lev * lev, channels);
    }
    let kappa = (lead[0][0] + lead[1][0]) / (n - 2 - 2 * j) as f64;
    m.var_classic = ss.map(|v| kappa * v);
    m.var_robust = robust;
    Ok(m)
}
