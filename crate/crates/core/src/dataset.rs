use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Observed outcomes, a binary treatment vector, covariates and optional
/// stratum / cluster labels for a finite population of `N` units.
///
/// Stratum and cluster labels are renumbered to `0..K` in order of first
/// appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    y: Vec<f64>,
    z: Vec<bool>,
    x: Matrix,
    strata: Option<Vec<usize>>,
    clusters: Option<Vec<usize>>,
}

impl Dataset {
    /// Builds a dataset and checks that each arm has at least two units.
    pub fn new(y: Vec<f64>, z: Vec<bool>, x: Matrix) -> Result<Self> {
        let n = y.len();
        if z.len() != n {
            return Err(Error::DimensionMismatch {
                context: "treatment vector",
                expected: n,
                found: z.len(),
            });
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                context: "covariate rows",
                expected: n,
                found: x.nrows(),
            });
        }
        if !y.iter().all(|v| v.is_finite()) || !x.is_finite() {
            return Err(Error::InvalidInput(
                "non-finite outcome or covariate".into(),
            ));
        }
        check_arms(&z, None)?;
        Ok(Dataset {
            y,
            z,
            x,
            strata: None,
            clusters: None,
        })
    }

    /// Attaches stratum labels; every stratum needs two units per arm.
    pub fn with_strata(mut self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "stratum labels",
                expected: self.n(),
                found: labels.len(),
            });
        }
        let labels = renumber(labels);
        let k = labels.iter().max().map_or(0, |m| m + 1);
        for s in 0..k {
            let zs: Vec<bool> = labels
                .iter()
                .zip(&self.z)
                .filter(|(l, _)| **l == s)
                .map(|(_, z)| *z)
                .collect();
            check_arms(&zs, Some(s))?;
        }
        self.strata = Some(labels);
        Ok(self)
    }

    /// Attaches cluster labels; treatment must be constant within a cluster.
    pub fn with_clusters(mut self, labels: &[usize]) -> Result<Self> {
        if labels.len() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "cluster labels",
                expected: self.n(),
                found: labels.len(),
            });
        }
        let labels = renumber(labels);
        let m = labels.iter().max().map_or(0, |m| m + 1);
        let mut arm: Vec<Option<bool>> = vec![None; m];
        for (&c, &z) in labels.iter().zip(&self.z) {
            match arm[c] {
                None => arm[c] = Some(z),
                Some(a) if a != z => return Err(Error::MixedClusterTreatment { cluster: c }),
                _ => {}
            }
        }
        self.clusters = Some(labels);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_treated(&self) -> usize {
        self.z.iter().filter(|z| **z).count()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn z(&self) -> &[bool] {
        &self.z
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn strata(&self) -> Option<&[usize]> {
        self.strata.as_deref()
    }

    pub fn clusters(&self) -> Option<&[usize]> {
        self.clusters.as_deref()
    }

    pub fn n_strata(&self) -> usize {
        self.strata
            .as_ref()
            .and_then(|s| s.iter().max())
            .map_or(1, |m| m + 1)
    }

    pub fn n_clusters(&self) -> Option<usize> {
        self.clusters
            .as_ref()
            .map(|c| c.iter().max().map_or(0, |m| m + 1))
    }

    /// Unit indices of each stratum (a single group when unstratified).
    pub fn stratum_indices(&self) -> Vec<Vec<usize>> {
        match &self.strata {
            None => vec![(0..self.n()).collect()],
            Some(labels) => {
                let mut groups = vec![Vec::new(); self.n_strata()];
                for (i, &s) in labels.iter().enumerate() {
                    groups[s].push(i);
                }
                groups
            }
        }
    }

    /// Same units with a different assignment. Arm sizes are not re-checked;
    /// callers draw assignments from a design that preserves them.
    pub fn with_assignment(&self, z: Vec<bool>) -> Dataset {
        debug_assert_eq!(z.len(), self.n());
        Dataset { z, ..self.clone() }
    }

    /// Same units and assignment with different outcomes.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Dataset {
        debug_assert_eq!(y.len(), self.n());
        Dataset { y, ..self.clone() }
    }

    /// Same units with a different covariate matrix.
    pub fn with_covariates(&self, x: Matrix) -> Result<Dataset> {
        if x.nrows() != self.n() {
            return Err(Error::DimensionMismatch {
                context: "covariate rows",
                expected: self.n(),
                found: x.nrows(),
            });
        }
        Ok(Dataset { x, ..self.clone() })
    }

    /// Rows `idx` as a new unlabeled dataset. Arm sizes are not re-checked.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            x: self.x.select_rows(idx),
            strata: None,
            clusters: None,
        }
    }

    /// Drops stratum and cluster labels.
    pub fn without_labels(&self) -> Dataset {
        Dataset {
            strata: None,
            clusters: None,
            ..self.clone()
        }
    }
}

fn check_arms(z: &[bool], stratum: Option<usize>) -> Result<()> {
    let n1 = z.iter().filter(|v| **v).count();
    let n0 = z.len() - n1;
    if n1 < 2 {
        return Err(Error::DegenerateArm {
            stratum,
            arm: 1,
            size: n1,
            required: 2,
        });
    }
    if n0 < 2 {
        return Err(Error::DegenerateArm {
            stratum,
            arm: 0,
            size: n0,
            required: 2,
        });
    }
    Ok(())
}

/// Maps labels to `0..K` by order of first appearance.
pub(crate) fn renumber(labels: &[usize]) -> Vec<usize> {
    let mut map = std::collections::HashMap::new();
    labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect()
}
