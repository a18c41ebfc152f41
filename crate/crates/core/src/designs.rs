//! Assignment mechanisms and the rerandomization balance criterion.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{covariance, Cholesky, Matrix};

pub const DEFAULT_MAX_TRIES: u64 = 1_000_000;

/// Assignment mechanism over `N` units (or `M` clusters).
#[derive(Debug, Clone, PartialEq)]
pub enum DesignSpec {
    Complete {
        n: usize,
        n1: usize,
    },
    /// Complete randomization of `m1` out of `m` clusters.
    Cluster {
        m: usize,
        m1: usize,
    },
    /// Independent complete randomization within each stratum; `labels[i]`
    /// is the stratum of unit `i` and `treated[k]` the arm size in stratum `k`.
    Stratified {
        labels: Vec<usize>,
        treated: Vec<usize>,
    },
    /// Complete randomization restricted to assignments whose covariate
    /// balance criterion falls below `threshold`.
    Rem {
        n: usize,
        n1: usize,
        threshold: f64,
        covariates: Matrix,
    },
}

/// Serializable summary of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignEcho {
    Complete {
        n: usize,
        n1: usize,
    },
    Cluster {
        m: usize,
        m1: usize,
    },
    Stratified {
        sizes: Vec<(usize, usize)>,
    },
    Rem {
        n: usize,
        n1: usize,
        threshold: f64,
        covariates: usize,
    },
}

impl DesignSpec {
    /// Contiguous strata of the given `(N_k, N_k1)` sizes.
    pub fn stratified_from_sizes(sizes: &[(usize, usize)]) -> Result<Self> {
        let labels = sizes
            .iter()
            .enumerate()
            .flat_map(|(k, &(nk, _))| std::iter::repeat_n(k, nk))
            .collect();
        let d = DesignSpec::Stratified {
            labels,
            treated: sizes.iter().map(|s| s.1).collect(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn complete_for(data: &Dataset) -> Self {
        DesignSpec::Complete {
            n: data.n(),
            n1: data.n_treated(),
        }
    }

    /// Within-stratum permutation keeping the observed arm sizes.
    pub fn stratified_for(data: &Dataset) -> Result<Self> {
        let labels = data
            .strata()
            .ok_or_else(|| Error::InvalidInput("stratified design requires stratum labels".into()))?
            .to_vec();
        let mut treated = vec![0; data.n_strata()];
        for (&s, &t) in labels.iter().zip(data.z()) {
            treated[s] += t as usize;
        }
        Ok(DesignSpec::Stratified { labels, treated })
    }

    /// Cluster-level complete randomization matching the observed counts.
    pub fn cluster_for(data: &Dataset) -> Result<Self> {
        let labels = data
            .clusters()
            .ok_or_else(|| Error::InvalidInput("cluster design requires cluster labels".into()))?;
        let m = data.n_clusters().unwrap_or(0);
        let mut treated = vec![false; m];
        for (&c, &t) in labels.iter().zip(data.z()) {
            treated[c] |= t;
        }
        Ok(DesignSpec::Cluster {
            m,
            m1: treated.iter().filter(|t| **t).count(),
        })
    }

    /// Rerandomization on the listed covariate columns (all when empty).
    pub fn rem_for(data: &Dataset, threshold: f64, columns: &[usize]) -> Result<Self> {
        let cols: Vec<usize> = if columns.is_empty() {
            (0..data.n_covariates()).collect()
        } else {
            columns.to_vec()
        };
        if cols.is_empty() {
            return Err(Error::MissingCovariates);
        }
        let mut picked = Vec::with_capacity(cols.len());
        for &c in &cols {
            if c >= data.n_covariates() {
                return Err(Error::InvalidInput(format!(
                    "covariate column {c} out of range"
                )));
            }
            picked.push(data.x().column(c).to_vec());
        }
        let d = DesignSpec::Rem {
            n: data.n(),
            n1: data.n_treated(),
            threshold,
            covariates: Matrix::from_columns(&picked)?,
        };
        d.validate()?;
        Ok(d)
    }

    /// Number of units an assignment from this design covers.
    pub fn units(&self) -> usize {
        match self {
            DesignSpec::Complete { n, .. } | DesignSpec::Rem { n, .. } => *n,
            DesignSpec::Cluster { m, .. } => *m,
            DesignSpec::Stratified { labels, .. } => labels.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes_ok = |n: usize, n1: usize| n1 >= 1 && n1 < n;
        match self {
            DesignSpec::Complete { n, n1 } | DesignSpec::Cluster { m: n, m1: n1 } => {
                if !sizes_ok(*n, *n1) {
                    return Err(Error::InvalidSizes(format!("cannot treat {n1} of {n}")));
                }
            }
            DesignSpec::Stratified { labels, treated } => {
                let mut counts = vec![0usize; treated.len()];
                for &l in labels {
                    if l >= treated.len() {
                        return Err(Error::InvalidSizes(format!(
                            "stratum label {l} has no arm size"
                        )));
                    }
                    counts[l] += 1;
                }
                for (k, (&nk, &nk1)) in counts.iter().zip(treated).enumerate() {
                    if nk == 0 {
                        return Err(Error::EmptyStratum { stratum: k });
                    }
                    if !sizes_ok(nk, nk1) {
                        return Err(Error::InvalidSizes(format!(
                            "stratum {k}: cannot treat {nk1} of {nk}"
                        )));
                    }
                }
            }
            DesignSpec::Rem {
                n,
                n1,
                threshold,
                covariates,
            } => {
                if !sizes_ok(*n, *n1) {
                    return Err(Error::InvalidSizes(format!("cannot treat {n1} of {n}")));
                }
                if threshold.is_nan() || *threshold <= 0.0 {
                    return Err(Error::InvalidInput(format!(
                        "rerandomization threshold must be positive, got {threshold}"
                    )));
                }
                if covariates.nrows() != *n {
                    return Err(Error::DimensionMismatch {
                        context: "design covariates",
                        expected: *n,
                        found: covariates.nrows(),
                    });
                }
                if covariates.ncols() == 0 {
                    return Err(Error::MissingCovariates);
                }
            }
        }
        Ok(())
    }

    pub fn echo(&self) -> DesignEcho {
        match self {
            DesignSpec::Complete { n, n1 } => DesignEcho::Complete { n: *n, n1: *n1 },
            DesignSpec::Cluster { m, m1 } => DesignEcho::Cluster { m: *m, m1: *m1 },
            DesignSpec::Stratified { labels, treated } => {
                let mut sizes: Vec<(usize, usize)> = treated.iter().map(|&t| (0, t)).collect();
                for &l in labels {
                    sizes[l].0 += 1;
                }
                DesignEcho::Stratified { sizes }
            }
            DesignSpec::Rem {
                n,
                n1,
                threshold,
                covariates,
            } => DesignEcho::Rem {
                n: *n,
                n1: *n1,
                threshold: *threshold,
                covariates: covariates.ncols(),
            },
        }
    }
}

/// Uniform assignment of `n1` treated units among `n`.
pub fn draw_complete<R: Rng + ?Sized>(n: usize, n1: usize, rng: &mut R) -> Result<Vec<bool>> {
    DesignSpec::Complete { n, n1 }.validate()?;
    let mut z: Vec<bool> = (0..n).map(|i| i < n1).collect();
    z.shuffle(rng);
    Ok(z)
}

/// Independent complete randomization within each stratum.
pub fn draw_stratified<R: Rng + ?Sized>(
    labels: &[usize],
    treated: &[usize],
    rng: &mut R,
) -> Result<Vec<bool>> {
    let mut groups = vec![Vec::new(); treated.len()];
    for (i, &l) in labels.iter().enumerate() {
        if l >= treated.len() {
            return Err(Error::InvalidSizes(format!(
                "stratum label {l} has no arm size"
            )));
        }
        groups[l].push(i);
    }
    let mut z = vec![false; labels.len()];
    for (k, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::EmptyStratum { stratum: k });
        }
        for (i, t) in g.iter().zip(draw_complete(g.len(), treated[k], rng)?) {
            z[*i] = t;
        }
    }
    Ok(z)
}

/// Covariate balance of one assignment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BalanceReport {
    pub tau_x_hat: Vec<f64>,
    pub mahalanobis: f64,
    pub accepted: bool,
}

/// Precomputed balance criterion for repeated checks against one
/// covariate matrix.
#[derive(Debug, Clone)]
pub struct BalanceChecker {
    x: Matrix,
    totals: Vec<f64>,
    chol: Cholesky,
    threshold: f64,
}

impl BalanceChecker {
    pub fn new(x: &Matrix, threshold: f64) -> Result<Self> {
        if x.ncols() == 0 {
            return Err(Error::MissingCovariates);
        }
        if x.nrows() < 2 {
            return Err(Error::InvalidInput(
                "balance check needs at least two units".into(),
            ));
        }
        let chol = Cholesky::new(&covariance(x))?;
        Ok(BalanceChecker {
            x: x.clone(),
            totals: x.columns().map(|c| c.iter().sum()).collect(),
            chol,
            threshold,
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Returns `(tau_x, distance)`.
    fn distance(&self, z: &[bool]) -> Result<(Vec<f64>, f64)> {
        if z.len() != self.x.nrows() {
            return Err(Error::DimensionMismatch {
                context: "balance check",
                expected: self.x.nrows(),
                found: z.len(),
            });
        }
        let n = z.len() as f64;
        let n1 = z.iter().filter(|t| **t).count() as f64;
        let n0 = n - n1;
        if n1 == 0.0 || n0 == 0.0 {
            return Err(Error::DegenerateArm {
                stratum: None,
                arm: if n1 == 0.0 { 1 } else { 0 },
                size: 0,
                required: 1,
            });
        }
        let tau: Vec<f64> = self
            .x
            .columns()
            .zip(&self.totals)
            .map(|(c, total)| {
                let s1: f64 = c.iter().zip(z).filter(|(_, t)| **t).map(|(v, _)| v).sum();
                s1 / n1 - (total - s1) / n0
            })
            .collect();
        let q = self.chol.inv_quadratic_form(&tau) * n1 * n0 / n;
        Ok((tau, q))
    }

    pub fn report(&self, z: &[bool]) -> Result<BalanceReport> {
        let (tau_x_hat, mahalanobis) = self.distance(z)?;
        Ok(BalanceReport {
            tau_x_hat,
            mahalanobis,
            accepted: mahalanobis < self.threshold,
        })
    }

    pub fn accepts(&self, z: &[bool]) -> Result<bool> {
        Ok(self.distance(z)?.1 < self.threshold)
    }
}

/// Balance of `z` on `x` with an unbounded threshold.
pub fn mahalanobis(z: &[bool], x: &Matrix) -> Result<BalanceReport> {
    BalanceChecker::new(x, f64::INFINITY)?.report(z)
}

/// Rejection sampling from complete randomization until the balance
/// criterion accepts.
pub fn draw_rem<R: Rng + ?Sized>(
    n: usize,
    n1: usize,
    checker: &BalanceChecker,
    max_tries: u64,
    rng: &mut R,
) -> Result<Vec<bool>> {
    let mut z: Vec<bool> = (0..n).map(|i| i < n1).collect();
    DesignSpec::Complete { n, n1 }.validate()?;
    for _ in 0..max_tries {
        z.shuffle(rng);
        if checker.accepts(&z)? {
            return Ok(z);
        }
    }
    Err(Error::AcceptanceTimeout {
        tries: max_tries,
        rate: 0.0,
    })
}

/// A design prepared for repeated sampling.
#[derive(Debug, Clone)]
pub struct Sampler {
    design: DesignSpec,
    checker: Option<BalanceChecker>,
    max_tries: u64,
}

impl Sampler {
    pub fn new(design: &DesignSpec) -> Result<Self> {
        design.validate()?;
        let checker = match design {
            DesignSpec::Rem {
                threshold,
                covariates,
                ..
            } => Some(BalanceChecker::new(covariates, *threshold)?),
            _ => None,
        };
        Ok(Sampler {
            design: design.clone(),
            checker,
            max_tries: DEFAULT_MAX_TRIES,
        })
    }

    pub fn with_max_tries(mut self, max_tries: u64) -> Self {
        self.max_tries = max_tries;
        self
    }

    pub fn design(&self) -> &DesignSpec {
        &self.design
    }

    pub fn checker(&self) -> Option<&BalanceChecker> {
        self.checker.as_ref()
    }

    /// Whether `z` belongs to the design's admissible set (arm sizes are
    /// assumed to match).
    pub fn admissible(&self, z: &[bool]) -> Result<bool> {
        match &self.checker {
            Some(c) => c.accepts(z),
            None => Ok(true),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Vec<bool>> {
        match &self.design {
            DesignSpec::Complete { n, n1 } | DesignSpec::Cluster { m: n, m1: n1 } => {
                draw_complete(*n, *n1, rng)
            }
            DesignSpec::Stratified { labels, treated } => draw_stratified(labels, treated, rng),
            DesignSpec::Rem { n, n1, .. } => {
                let checker = self.checker.as_ref().expect("checker built for ReM");
                draw_rem(*n, *n1, checker, self.max_tries, rng)
            }
        }
    }
}

/// `P(χ²_k ≤ x)`.
pub fn chi2_cdf(x: f64, k: usize) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x.is_infinite() {
        return 1.0;
    }
    ChiSquared::new(k as f64)
        .expect("positive degrees of freedom")
        .cdf(x)
}

/// Quantile of `χ²_k` at probability `p`.
pub fn chi2_quantile(p: f64, k: usize) -> f64 {
    ChiSquared::new(k as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(p)
}

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> f64 {
    Normal::standard().inverse_cdf(p)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}
