//! Reference implementations of the twelve test statistics.
//!
//! Every estimator here is computed from full least-squares fits. The
//! randomization engine uses the faster [`crate::kernel`] instead, and the
//! two paths are tested against each other.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{fit_ols, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Adjustment {
    /// Difference in means.
    Neyman,
    /// Difference in means of covariate residuals.
    Rosenbaum,
    /// ANCOVA coefficient.
    Fisher,
    /// Fully interacted regression on centered covariates.
    Lin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Studentization {
    None,
    Classic,
    Robust,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct StatisticSpec {
    pub adjustment: Adjustment,
    pub studentization: Studentization,
}

impl Adjustment {
    pub const ALL: [Adjustment; 4] = [
        Adjustment::Neyman,
        Adjustment::Rosenbaum,
        Adjustment::Fisher,
        Adjustment::Lin,
    ];

    pub fn needs_covariates(self) -> bool {
        self != Adjustment::Neyman
    }

    pub fn letter(self) -> char {
        match self {
            Adjustment::Neyman => 'N',
            Adjustment::Rosenbaum => 'R',
            Adjustment::Fisher => 'F',
            Adjustment::Lin => 'L',
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

impl Studentization {
    pub const ALL: [Studentization; 3] = [
        Studentization::None,
        Studentization::Classic,
        Studentization::Robust,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Studentization::None => "none",
            Studentization::Classic => "classic",
            Studentization::Robust => "robust",
        }
    }
}

impl FromStr for Adjustment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "n" | "neyman" => Ok(Adjustment::Neyman),
            "r" | "rosenbaum" => Ok(Adjustment::Rosenbaum),
            "f" | "fisher" => Ok(Adjustment::Fisher),
            "l" | "lin" => Ok(Adjustment::Lin),
            _ => Err(Error::InvalidInput(format!("unknown adjustment `{s}`"))),
        }
    }
}

impl FromStr for Studentization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Studentization::None),
            "classic" => Ok(Studentization::Classic),
            "robust" => Ok(Studentization::Robust),
            _ => Err(Error::InvalidInput(format!("unknown studentization `{s}`"))),
        }
    }
}

impl StatisticSpec {
    pub fn new(adjustment: Adjustment, studentization: Studentization) -> Self {
        StatisticSpec {
            adjustment,
            studentization,
        }
    }

    /// All twelve statistics, adjustment-major.
    pub fn all() -> Vec<StatisticSpec> {
        Adjustment::ALL
            .iter()
            .flat_map(|&a| {
                Studentization::ALL
                    .iter()
                    .map(move |&s| StatisticSpec::new(a, s))
            })
            .collect()
    }

    /// The four robust-t statistics.
    pub fn robust() -> Vec<StatisticSpec> {
        Adjustment::ALL
            .iter()
            .map(|&a| StatisticSpec::new(a, Studentization::Robust))
            .collect()
    }

    /// Short label such as `L/robust`.
    pub fn label(&self) -> String {
        format!(
            "{}/{}",
            self.adjustment.letter(),
            self.studentization.name()
        )
    }
}

impl FromStr for StatisticSpec {
    type Err = Error;

    /// Parses labels such as `L/robust` or `n/none`.
    fn from_str(s: &str) -> Result<Self> {
        let (a, t) = s.split_once('/').ok_or_else(|| {
            Error::InvalidInput(format!("statistic `{s}` is not of the form ADJ/STUDENT"))
        })?;
        Ok(StatisticSpec::new(a.parse()?, t.parse()?))
    }
}

impl From<StatisticSpec> for String {
    fn from(s: StatisticSpec) -> String {
        s.label()
    }
}

impl TryFrom<String> for StatisticSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for StatisticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Covariate coefficients reported alongside an adjusted estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gamma {
    Rosenbaum(Vec<f64>),
    Fisher(Vec<f64>),
    Lin {
        treated: Vec<f64>,
        control: Vec<f64>,
        combined: Vec<f64>,
    },
}

impl Gamma {
    /// The vector entering `tau_N - tau_x' gamma`.
    pub fn effective(&self) -> &[f64] {
        match self {
            Gamma::Rosenbaum(g) | Gamma::Fisher(g) => g,
            Gamma::Lin { combined, .. } => combined,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateTriple {
    pub tau_hat: f64,
    pub se_classic: f64,
    pub se_robust: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<Gamma>,
}

impl EstimateTriple {
    pub fn se(&self, s: Studentization) -> Option<f64> {
        match s {
            Studentization::None => None,
            Studentization::Classic => Some(self.se_classic),
            Studentization::Robust => Some(self.se_robust),
        }
    }
}

/// Columns of `x` shifted to mean zero.
pub fn center_covariates(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    let n = x.nrows() as f64;
    for j in 0..x.ncols() {
        let col = out.column_mut(j);
        let mean = col.iter().sum::<f64>() / n;
        col.iter_mut().for_each(|v| *v -= mean);
    }
    out
}

/// Difference in means with the two-sample classic and robust standard
/// errors, returned as `(tau, se_classic, se_robust)`.
pub fn two_sample(y: &[f64], z: &[bool]) -> Result<(f64, f64, f64)> {
    let n = y.len();
    let (mut n1, mut s1) = (0usize, 0.0);
    let mut s0 = 0.0;
    for (v, &t) in y.iter().zip(z) {
        if t {
            n1 += 1;
            s1 += v;
        } else {
            s0 += v;
        }
    }
    let n0 = n - n1;
    for (arm, size) in [(1u8, n1), (0u8, n0)] {
        if size < 2 {
            return Err(Error::DegenerateArm {
                stratum: None,
                arm,
                size,
                required: 2,
            });
        }
    }
    let (m1, m0) = (s1 / n1 as f64, s0 / n0 as f64);
    let (mut ss1, mut ss0) = (0.0, 0.0);
    for (v, &t) in y.iter().zip(z) {
        if t {
            ss1 += (v - m1).powi(2);
        } else {
            ss0 += (v - m0).powi(2);
        }
    }
    let (nf, n1f, n0f) = (n as f64, n1 as f64, n0 as f64);
    let var1 = ss1 / (n1f - 1.0);
    let var0 = ss0 / (n0f - 1.0);
    let classic = nf * (n1f - 1.0) / ((nf - 2.0) * n1f * n0f) * var1
        + nf * (n0f - 1.0) / ((nf - 2.0) * n1f * n0f) * var0;
    let robust = (n1f - 1.0) / (n1f * n1f) * var1 + (n0f - 1.0) / (n0f * n0f) * var0;
    Ok((m1 - m0, classic.max(0.0).sqrt(), robust.max(0.0).sqrt()))
}

/// Treated-minus-control difference in covariate means.
pub fn tau_x(x: &Matrix, z: &[bool]) -> Vec<f64> {
    let n1 = z.iter().filter(|t| **t).count() as f64;
    let n0 = z.len() as f64 - n1;
    x.columns()
        .map(|c| {
            let (mut a, mut b) = (0.0, 0.0);
            for (v, &t) in c.iter().zip(z) {
                if t {
                    a += v;
                } else {
                    b += v;
                }
            }
            a / n1 - b / n0
        })
        .collect()
}

fn z_column(z: &[bool]) -> Vec<f64> {
    z.iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()
}

fn require_covariates(data: &Dataset) -> Result<()> {
    if data.n_covariates() == 0 {
        Err(Error::MissingCovariates)
    } else {
        Ok(())
    }
}

pub fn tau_neyman(data: &Dataset) -> Result<EstimateTriple> {
    let (tau_hat, se_classic, se_robust) = two_sample(data.y(), data.z())?;
    Ok(EstimateTriple {
        tau_hat,
        se_classic,
        se_robust,
        gamma: None,
    })
}

pub fn tau_rosenbaum(data: &Dataset) -> Result<EstimateTriple> {
    require_covariates(data)?;
    let fit = fit_ols(&data.x().with_intercept(), data.y())?;
    let (tau_hat, se_classic, se_robust) = two_sample(&fit.residuals, data.z())?;
    Ok(EstimateTriple {
        tau_hat,
        se_classic,
        se_robust,
        gamma: Some(Gamma::Rosenbaum(fit.coefficients[1..].to_vec())),
    })
}

pub fn tau_fisher(data: &Dataset) -> Result<EstimateTriple> {
    require_covariates(data)?;
    let design =
        Matrix::from_columns(&[vec![1.0; data.n()], z_column(data.z())])?.hstack(data.x())?;
    let fit = fit_ols(&design, data.y())?;
    Ok(EstimateTriple {
        tau_hat: fit.coefficients[1],
        se_classic: fit.se_classic(1),
        se_robust: fit.se_robust(1),
        gamma: Some(Gamma::Fisher(fit.coefficients[2..].to_vec())),
    })
}

pub fn tau_lin(data: &Dataset) -> Result<EstimateTriple> {
    require_covariates(data)?;
    let j = data.n_covariates();
    let n1 = data.n_treated();
    for (arm, size) in [(1u8, n1), (0u8, data.n() - n1)] {
        if size < j + 2 {
            return Err(Error::DegenerateArm {
                stratum: None,
                arm,
                size,
                required: j + 2,
            });
        }
    }
    let xc = center_covariates(data.x());
    let zc = z_column(data.z());
    let mut interacted = xc.clone();
    for k in 0..j {
        interacted
            .column_mut(k)
            .iter_mut()
            .zip(&zc)
            .for_each(|(v, t)| *v *= t);
    }
    let design = Matrix::from_columns(&[vec![1.0; data.n()], zc])?
        .hstack(&xc)?
        .hstack(&interacted)?;
    let fit = fit_ols(&design, data.y())?;
    let control: Vec<f64> = fit.coefficients[2..2 + j].to_vec();
    let treated: Vec<f64> = control
        .iter()
        .zip(&fit.coefficients[2 + j..])
        .map(|(a, b)| a + b)
        .collect();
    let p1 = n1 as f64 / data.n() as f64;
    let p0 = 1.0 - p1;
    let combined = treated
        .iter()
        .zip(&control)
        .map(|(g1, g0)| p0 * g1 + p1 * g0)
        .collect();
    Ok(EstimateTriple {
        tau_hat: fit.coefficients[1],
        se_classic: fit.se_classic(1),
        se_robust: fit.se_robust(1),
        gamma: Some(Gamma::Lin {
            treated,
            control,
            combined,
        }),
    })
}

fn estimate_unstratified(data: &Dataset, adjustment: Adjustment) -> Result<EstimateTriple> {
    match adjustment {
        Adjustment::Neyman => tau_neyman(data),
        Adjustment::Rosenbaum => tau_rosenbaum(data),
        Adjustment::Fisher => tau_fisher(data),
        Adjustment::Lin => tau_lin(data),
    }
}

/// Estimate under the dataset's own structure: per-stratum estimates
/// combined by stratum share when strata are present.
///
/// Cluster labels are ignored here; collapse with [`cluster_collapse`] first.
pub fn estimate(data: &Dataset, adjustment: Adjustment) -> Result<EstimateTriple> {
    if data.strata().is_none() {
        return estimate_unstratified(data, adjustment);
    }
    let groups = data.stratum_indices();
    let n = data.n() as f64;
    let mut parts = Vec::with_capacity(groups.len());
    let mut weights = Vec::with_capacity(groups.len());
    for (k, idx) in groups.iter().enumerate() {
        let part = estimate_unstratified(&data.subset(idx), adjustment).map_err(|e| match e {
            Error::DegenerateArm {
                stratum: None,
                arm,
                size,
                required,
            } => Error::DegenerateArm {
                stratum: Some(k),
                arm,
                size,
                required,
            },
            other => other,
        })?;
        parts.push(part);
        weights.push(idx.len() as f64 / n);
    }
    stratified_combine(&parts, &weights)
}

/// Divides by `se` when given. Estimates and standard errors at or below
/// `tol` count as zero: a zero estimate gives 0 and a nonzero estimate over a
/// zero standard error gives a signed infinity.
pub fn studentize(tau: f64, se: Option<f64>, tol: f64) -> f64 {
    match se {
        None if tau.abs() <= tol => 0.0,
        None => tau,
        Some(se) if se > tol => tau / se,
        Some(_) if tau.abs() <= tol => 0.0,
        Some(_) => tau.signum() * f64::INFINITY,
    }
}

/// Scale-aware zero threshold for a statistic computed from outcomes `y`.
pub fn zero_tolerance(y: &[f64]) -> f64 {
    1e-12 * y.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn statistic(data: &Dataset, spec: StatisticSpec) -> Result<f64> {
    let est = estimate(data, spec.adjustment)?;
    Ok(studentize(
        est.tau_hat,
        est.se(spec.studentization),
        zero_tolerance(data.y()),
    ))
}

/// Replaces each cluster by its outcome and covariate totals divided by the
/// average cluster size `N / M`.
pub fn cluster_collapse(data: &Dataset) -> Result<Dataset> {
    let labels = data
        .clusters()
        .ok_or_else(|| Error::InvalidInput("cluster design requires cluster labels".into()))?;
    let m = data.n_clusters().unwrap_or(0);
    let nbar = data.n() as f64 / m as f64;
    let j = data.n_covariates();
    let mut y = vec![0.0; m];
    let mut z: Vec<Option<bool>> = vec![None; m];
    let mut x = Matrix::zeros(m, j);
    for (i, &c) in labels.iter().enumerate() {
        y[c] += data.y()[i] / nbar;
        match z[c] {
            None => z[c] = Some(data.z()[i]),
            Some(t) if t != data.z()[i] => return Err(Error::MixedClusterTreatment { cluster: c }),
            _ => {}
        }
        for k in 0..j {
            x[(c, k)] += data.x()[(i, k)] / nbar;
        }
    }
    Dataset::new(y, z.into_iter().map(|t| t.unwrap_or(false)).collect(), x)
}

/// Combines per-stratum estimates with weights `N_k / N`.
pub fn stratified_combine(parts: &[EstimateTriple], weights: &[f64]) -> Result<EstimateTriple> {
    if parts.len() != weights.len() {
        return Err(Error::DimensionMismatch {
            context: "stratum weights",
            expected: parts.len(),
            found: weights.len(),
        });
    }
    if parts.is_empty() {
        return Err(Error::EmptyStratum { stratum: 0 });
    }
    if let Some(k) = weights.iter().position(|w| *w <= 0.0) {
        return Err(Error::EmptyStratum { stratum: k });
    }
    let (mut tau, mut vc, mut vr) = (0.0, 0.0, 0.0);
    for (p, w) in parts.iter().zip(weights) {
        tau += w * p.tau_hat;
        vc += w * w * p.se_classic * p.se_classic;
        vr += w * w * p.se_robust * p.se_robust;
    }
    Ok(EstimateTriple {
        tau_hat: tau,
        se_classic: vc.sqrt(),
        se_robust: vr.sqrt(),
        gamma: if parts.len() == 1 {
            parts[0].gamma.clone()
        } else {
            None
        },
    })
}
