//! Linear-model permutation tests of the treatment coefficient in the
//! regression of `Y` on `(1, Z, X)`: Freedman-Lane, Kennedy, ter Braak and
//! Manly. Replicates use closed forms built from the projection `H` onto
//! `(1, X)` and `δ = (I - H)Z`; a full-refit path is kept for checking.
//!
//! Romano's robust ANCOVA test is the randomization test with statistic
//! `F/robust` in [`crate::frt`].

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::dataset::Dataset;
use crate::designs::DesignSpec;
use crate::error::{Error, Result};
use crate::estimators::{studentize, zero_tolerance, Adjustment, StatisticSpec, Studentization};
use crate::frt::{p_value_from, FrtOptions, FrtResult, Mode};
use crate::linalg::{dot, fit_ols, norm2, Matrix, PivotedQr};
use crate::rng::stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    FreedmanLane,
    Kennedy,
    TerBraak,
    Manly,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [
        Scheme::FreedmanLane,
        Scheme::Kennedy,
        Scheme::TerBraak,
        Scheme::Manly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::FreedmanLane => "fl",
            Scheme::Kennedy => "kennedy",
            Scheme::TerBraak => "terbraak",
            Scheme::Manly => "manly",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fl" | "freedman-lane" | "freedmanlane" => Ok(Scheme::FreedmanLane),
            "kennedy" => Ok(Scheme::Kennedy),
            "terbraak" | "ter-braak" | "tb" => Ok(Scheme::TerBraak),
            "manly" => Ok(Scheme::Manly),
            _ => Err(Error::InvalidInput(format!(
                "unknown permutation scheme `{s}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PermLmSpec {
    pub scheme: Scheme,
    pub studentization: Studentization,
}

/// Replicate coefficient (centered at the observed ANCOVA estimate for
/// ter Braak) with its classic and robust standard errors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicateForms {
    pub coefficient: f64,
    pub se_classic: f64,
    pub se_robust: f64,
}

impl ReplicateForms {
    pub fn statistic(&self, s: Studentization, tol: f64) -> f64 {
        let se = match s {
            Studentization::None => None,
            Studentization::Classic => Some(self.se_classic),
            Studentization::Robust => Some(self.se_robust),
        };
        studentize(self.coefficient, se, tol)
    }
}

/// Quantities shared by every replicate of one dataset.
#[derive(Debug, Clone)]
pub struct PermLm {
    n: usize,
    j: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    x: Matrix,
    q: Matrix,
    delta: Vec<f64>,
    /// `1 / ‖δ‖²`
    c: f64,
    e: Vec<f64>,
    eps_f: Vec<f64>,
    tau_f: f64,
    observed: ReplicateForms,
    tol: f64,
}

impl PermLm {
    pub fn new(data: &Dataset) -> Result<Self> {
        let (n, j) = (data.n(), data.n_covariates());
        if j == 0 {
            return Err(Error::MissingCovariates);
        }
        if n <= j + 2 {
            return Err(Error::InvalidInput(format!(
                "{n} units cannot support {j} covariates"
            )));
        }
        let x = data.x().clone();
        let q = PivotedQr::new(&x.with_intercept()).thin_q()?;
        let z: Vec<f64> = data.z().iter().map(|&t| t as u8 as f64).collect();
        let delta = project_out(&q, &z);
        let dd = norm2(&delta);
        if dd <= 1e-12 * n as f64 {
            return Err(Error::ZeroDenominator);
        }
        let c = 1.0 / dd;
        let e = project_out(&q, data.y());
        let tau_f = dot(&delta, &e) * c;
        let eps_f: Vec<f64> = e.iter().zip(&delta).map(|(a, d)| a - d * tau_f).collect();
        let observed = ReplicateForms {
            coefficient: tau_f,
            se_classic: (norm2(&eps_f) * c / (n - 2 - j) as f64).sqrt(),
            se_robust: robust_se(&delta, &eps_f, c),
        };
        Ok(PermLm {
            n,
            j,
            y: data.y().to_vec(),
            z,
            x,
            q,
            delta,
            c,
            e,
            eps_f,
            tau_f,
            observed,
            tol: zero_tolerance(data.y()),
        })
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// `Z'(I - H)Z`.
    pub fn delta_norm2(&self) -> f64 {
        1.0 / self.c
    }

    pub fn tau_fisher(&self) -> f64 {
        self.tau_f
    }

    /// `H v` for the projection onto `(1, X)`.
    pub fn project(&self, v: &[f64]) -> Vec<f64> {
        let r = project_out(&self.q, v);
        v.iter().zip(&r).map(|(a, b)| a - b).collect()
    }

    pub fn observed(&self) -> ReplicateForms {
        self.observed
    }

    pub fn observed_statistic(&self, s: Studentization) -> f64 {
        self.observed.statistic(s, self.tol)
    }

    fn source(&self, scheme: Scheme) -> &[f64] {
        match scheme {
            Scheme::FreedmanLane | Scheme::Kennedy => &self.e,
            Scheme::TerBraak => &self.eps_f,
            Scheme::Manly => &self.y,
        }
    }

    /// Closed-form replicate for the permutation `perm` (unit `i` receives
    /// the value of unit `perm[i]`).
    pub fn forms(&self, scheme: Scheme, perm: &[usize]) -> ReplicateForms {
        let src = self.source(scheme);
        let v: Vec<f64> = perm.iter().map(|&p| src[p]).collect();
        let c = self.c;
        let beta = dot(&self.delta, &v) * c;
        let qv: Vec<f64> = self.q.columns().map(|col| dot(col, &v)).collect();
        let vhv = norm2(&qv);
        let vv = norm2(src);
        let (classic2, eta) = match scheme {
            Scheme::Kennedy => {
                let eta: Vec<f64> = v
                    .iter()
                    .zip(&self.delta)
                    .map(|(a, d)| a - d * beta)
                    .collect();
                ((c * vv - beta * beta) / (self.n - 2) as f64, eta)
            }
            _ => {
                let mut eta = v.clone();
                for (col, k) in self.q.columns().zip(&qv) {
                    eta.iter_mut().zip(col).for_each(|(a, q)| *a -= k * q);
                }
                eta.iter_mut()
                    .zip(&self.delta)
                    .for_each(|(a, d)| *a -= d * beta);
                (
                    (c * vv - c * vhv - beta * beta) / (self.n - 2 - self.j) as f64,
                    eta,
                )
            }
        };
        ReplicateForms {
            coefficient: beta,
            se_classic: classic2.max(0.0).sqrt(),
            se_robust: robust_se(&self.delta, &eta, c),
        }
    }

    /// The same replicate computed by refitting the regression the scheme
    /// prescribes.
    pub fn refit(&self, scheme: Scheme, perm: &[usize]) -> Result<ReplicateForms> {
        let permute = |src: &[f64]| -> Vec<f64> { perm.iter().map(|&p| src[p]).collect() };
        let full = Matrix::from_columns(&[vec![1.0; self.n], self.z.clone()])?.hstack(&self.x)?;
        let (design, response, centre) = match scheme {
            Scheme::FreedmanLane => {
                let e_pi = permute(&self.e);
                let y: Vec<f64> = (0..self.n)
                    .map(|i| self.y[i] - self.e[i] + e_pi[i])
                    .collect();
                (full, y, 0.0)
            }
            Scheme::Kennedy => {
                let design = Matrix::from_columns(&[vec![1.0; self.n], self.delta.clone()])?;
                (design, permute(&self.e), 0.0)
            }
            Scheme::TerBraak => {
                let eps_pi = permute(&self.eps_f);
                let y: Vec<f64> = (0..self.n)
                    .map(|i| self.y[i] - self.eps_f[i] + eps_pi[i])
                    .collect();
                (full, y, self.tau_f)
            }
            Scheme::Manly => (full, permute(&self.y), 0.0),
        };
        let fit = fit_ols(&design, &response)?;
        Ok(ReplicateForms {
            coefficient: fit.coefficients[1] - centre,
            se_classic: fit.se_classic(1),
            se_robust: fit.se_robust(1),
        })
    }
}

fn project_out(q: &Matrix, v: &[f64]) -> Vec<f64> {
    let mut r = v.to_vec();
    for col in q.columns() {
        let k = dot(col, v);
        r.iter_mut().zip(col).for_each(|(a, b)| *a -= k * b);
    }
    r
}

fn robust_se(delta: &[f64], eta: &[f64], c: f64) -> f64 {
    let meat: f64 = delta.iter().zip(eta).map(|(d, e)| d * d * e * e).sum();
    c * meat.sqrt()
}

fn factorial(n: usize) -> Option<u128> {
    (1..=n as u128).try_fold(1u128, |acc, k| acc.checked_mul(k))
}

/// Permutation number `idx` of `0..n` in the factorial number system.
fn unrank_permutation(mut idx: u128, n: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut out = Vec::with_capacity(n);
    for k in (1..=n).rev() {
        let f = factorial(k - 1).unwrap_or(u128::MAX);
        let pick = (idx / f) as usize;
        idx %= f;
        out.push(pool.remove(pick));
    }
    out
}

/// Permutation test of the ANCOVA treatment coefficient under `spec`.
/// Monte Carlo replicates shuffle unit labels; exact mode runs over all
/// `N!` permutations.
pub fn perm_lm_p_value(data: &Dataset, spec: PermLmSpec, opts: &FrtOptions) -> Result<FrtResult> {
    let prep = PermLm::new(data)?;
    let s = spec.studentization;
    let t_obs = prep.observed_statistic(s);
    let eval = |perm: &[usize]| prep.forms(spec.scheme, perm).statistic(s, prep.tol);
    let replicates: Vec<f64> = match opts.mode {
        Mode::MonteCarlo { replicates } => {
            if replicates == 0 {
                return Err(Error::InvalidInput(
                    "at least one replicate is required".into(),
                ));
            }
            (0..replicates as u64)
                .into_par_iter()
                .map(|i| {
                    let mut perm: Vec<usize> = (0..prep.n).collect();
                    perm.shuffle(&mut stream(opts.seed, i));
                    eval(&perm)
                })
                .collect()
        }
        Mode::Exact => {
            let total = factorial(prep.n).unwrap_or(u128::MAX);
            if total > opts.exact_cap {
                return Err(Error::TooLarge {
                    count: total,
                    cap: opts.exact_cap,
                });
            }
            (0..total as u64)
                .into_par_iter()
                .map(|i| eval(&unrank_permutation(i as u128, prep.n)))
                .collect()
        }
    };
    let (p_value, mc_se, extreme) = p_value_from(t_obs, &replicates, opts.mode, opts.sided);
    Ok(FrtResult {
        t_obs,
        replicates,
        p_value,
        mc_se,
        mode: opts.mode,
        seed: opts.seed,
        sided: opts.sided,
        design: DesignSpec::complete_for(data),
        spec: StatisticSpec::new(Adjustment::Fisher, s),
        extreme,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::draw_complete;
    use crate::estimators::{tau_fisher, tau_x};
    use crate::linalg::{covariance, Cholesky};
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_data(n: usize, j: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..j)
            .map(|_| {
                (0..n)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let x = Matrix::from_columns(&cols).unwrap();
        let z = draw_complete(n, n / 3, &mut rng).unwrap();
        let y = (0..n)
            .map(|i| {
                x[(i, 0)] * 0.8
                    + if z[i] { 0.4 } else { 0.0 }
                    + rng.sample::<f64, _>(StandardNormal) * (1.0 + x[(i, 0)].abs())
            })
            .collect();
        Dataset::new(y, z, x).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() <= tol * (1.0 + b.abs()), "{a} vs {b}");
    }

    #[test]
    fn closed_forms_match_refits() {
        for seed in 0..5 {
            let d = random_data(30, 2, seed);
            let prep = PermLm::new(&d).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
            for _ in 0..10 {
                let mut perm: Vec<usize> = (0..30).collect();
                perm.shuffle(&mut rng);
                for scheme in Scheme::ALL {
                    let a = prep.forms(scheme, &perm);
                    let b = prep.refit(scheme, &perm).unwrap();
                    close(a.coefficient, b.coefficient, 1e-8);
                    close(a.se_classic, b.se_classic, 1e-8);
                    close(a.se_robust, b.se_robust, 1e-8);
                }
            }
        }
    }

    #[test]
    fn kennedy_coefficient_equals_freedman_lane() {
        let d = random_data(40, 3, 1);
        let prep = PermLm::new(&d).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let mut perm: Vec<usize> = (0..40).collect();
            perm.shuffle(&mut rng);
            let fl = prep.refit(Scheme::FreedmanLane, &perm).unwrap().coefficient;
            let k = prep.refit(Scheme::Kennedy, &perm).unwrap().coefficient;
            assert_abs_diff_eq!(fl, k, epsilon = 1e-10);
        }
    }

    #[test]
    fn ter_braak_identity_permutation_is_zero() {
        let d = random_data(25, 2, 3);
        let prep = PermLm::new(&d).unwrap();
        let id: Vec<usize> = (0..25).collect();
        assert_abs_diff_eq!(
            prep.forms(Scheme::TerBraak, &id).coefficient,
            0.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            prep.refit(Scheme::TerBraak, &id).unwrap().coefficient,
            0.0,
            epsilon = 1e-10
        );
    }

    #[test]
    fn observed_matches_ancova() {
        let d = random_data(30, 2, 4);
        let prep = PermLm::new(&d).unwrap();
        let f = tau_fisher(&d).unwrap();
        close(prep.observed().coefficient, f.tau_hat, 1e-10);
        close(prep.observed().se_classic, f.se_classic, 1e-10);
        close(prep.observed().se_robust, f.se_robust, 1e-10);
    }

    #[test]
    fn delta_is_orthogonal_to_covariate_space() {
        let d = random_data(30, 2, 5);
        let prep = PermLm::new(&d).unwrap();
        for v in prep.project(prep.delta()) {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn delta_norm_formula() {
        // whiten the covariates so that their sample covariance is the identity
        let d = random_data(50, 2, 6);
        let s = covariance(d.x());
        let chol = Cholesky::new(&s).unwrap();
        let mut white = Matrix::zeros(50, 2);
        for i in 0..50 {
            let w = chol.whiten(&d.x().row(i));
            for k in 0..2 {
                white[(i, k)] = w[k];
            }
        }
        let d = d.with_covariates(white).unwrap();
        let s = covariance(d.x());
        assert_abs_diff_eq!(s[(0, 1)], 0.0, epsilon = 1e-12);
        let n = 50.0;
        let p1 = d.n_treated() as f64 / n;
        let p0 = 1.0 - p1;
        let tx = tau_x(d.x(), d.z());
        let lambda = (n - 1.0) / n;
        let expected = n * (p1 * p0 - p1 * p1 * p0 * p0 * dot(&tx, &tx) / lambda);
        let prep = PermLm::new(&d).unwrap();
        close(prep.delta_norm2(), expected, 1e-8);
    }

    #[test]
    fn scheme_parsing() {
        assert_eq!("fl".parse::<Scheme>().unwrap(), Scheme::FreedmanLane);
        assert_eq!("Kennedy".parse::<Scheme>().unwrap(), Scheme::Kennedy);
        assert!("romano".parse::<Scheme>().is_err());
    }

    #[test]
    fn permutation_unranking_is_bijective() {
        let mut all: Vec<Vec<usize>> = (0..24).map(|i| unrank_permutation(i, 4)).collect();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 24);
    }

    #[test]
    fn kennedy_and_freedman_lane_share_unstudentized_p() {
        let d = random_data(30, 1, 7);
        let opts = FrtOptions::monte_carlo(200, 11);
        let spec = |scheme| PermLmSpec {
            scheme,
            studentization: Studentization::None,
        };
        let a = perm_lm_p_value(&d, spec(Scheme::FreedmanLane), &opts).unwrap();
        let b = perm_lm_p_value(&d, spec(Scheme::Kennedy), &opts).unwrap();
        assert_eq!(a.p_value, b.p_value);
    }
}
