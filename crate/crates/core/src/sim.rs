//! Simulation scenarios: a fixed finite population, repeated assignments
//! from a design, and randomization p-values for a set of statistics.
//! Also samplers for the limiting laws under rerandomization.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::designs::{chi2_cdf, chi2_quantile, DesignSpec, Sampler};
use crate::error::{Error, Result};
use crate::estimators::StatisticSpec;
use crate::frt::{frt_multi, FrtOptions};
use crate::linalg::Matrix;
use crate::rng::{derive_seed, stream};

const TAG_POPULATION: u64 = 1;
const TAG_ASSIGNMENT: u64 = 2;
const TAG_PERMUTATION: u64 = 3;

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum CovariateLaw {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

impl Default for CovariateLaw {
    fn default() -> Self {
        CovariateLaw::Uniform { lo: -1.0, hi: 1.0 }
    }
}

/// `Y(z) = Σ_k mean[k]·x^k + sd·ε` with standard normal `ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModel {
    pub mean: Vec<f64>,
    pub sd: f64,
}

impl OutcomeModel {
    fn mean_at(&self, x: f64) -> f64 {
        self.mean.iter().rev().fold(0.0, |acc, c| acc * x + c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignConfig {
    Complete {
        treated: usize,
    },
    /// Strata are the intervals between sorted `cutoffs` (upper endpoints
    /// included); each stratum treats `floor(fraction · N_k)` units.
    Stratified {
        cutoffs: Vec<f64>,
        fraction: f64,
    },
    /// Rerandomization on the covariate with threshold equal to the
    /// `acceptance` quantile of the chi-square distribution with one degree
    /// of freedom.
    Rem {
        treated: usize,
        acceptance: f64,
    },
    /// Equal-sized contiguous clusters.
    Cluster {
        clusters: usize,
        treated: usize,
    },
}

fn default_alpha() -> f64 {
    0.05
}

fn default_true() -> bool {
    true
}

fn default_statistics() -> Vec<StatisticSpec> {
    StatisticSpec::all()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub n: usize,
    #[serde(default)]
    pub covariate: CovariateLaw,
    pub treated: OutcomeModel,
    pub control: OutcomeModel,
    /// Center both potential outcome vectors so that the average effect is 0.
    #[serde(default = "default_true")]
    pub center: bool,
    /// Use one noise draw per unit for both potential outcomes.
    #[serde(default)]
    pub shared_noise: bool,
    pub design: DesignConfig,
    pub reps: usize,
    pub permutations: usize,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_statistics")]
    pub statistics: Vec<StatisticSpec>,
    #[serde(default)]
    pub population_seed: u64,
    #[serde(default)]
    pub seed: u64,
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.permutations == 0 {
            return Err(Error::InvalidInput(
                "reps and permutations must be at least 1".into(),
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidInput(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        if self.statistics.is_empty() {
            return Err(Error::InvalidInput("no statistics requested".into()));
        }
        if self.n < 4 {
            return Err(Error::InvalidSizes(format!(
                "population of {} units is too small",
                self.n
            )));
        }
        Ok(())
    }
}

fn null_config(name: &str, n: usize, design: DesignConfig) -> ScenarioConfig {
    ScenarioConfig {
        name: name.into(),
        n,
        covariate: CovariateLaw::default(),
        treated: OutcomeModel {
            mean: vec![0.0, 0.0, 0.0, 1.0],
            sd: 1.0,
        },
        control: OutcomeModel {
            mean: vec![0.0, 0.0, 0.0, -1.0],
            sd: 0.5,
        },
        center: true,
        shared_noise: false,
        design,
        reps: 1000,
        permutations: 500,
        alpha: 0.05,
        statistics: StatisticSpec::all(),
        population_seed: 2021,
        seed: 0,
    }
}

fn strata_cuts() -> DesignConfig {
    DesignConfig::Stratified {
        cutoffs: vec![-0.3, 0.3],
        fraction: 0.2,
    }
}

pub const BUILTIN_SCENARIOS: [&str; 4] =
    ["strat-null", "strat-power", "rem-invalid", "complete-null"];

/// Named scenario with its default settings.
pub fn builtin(name: &str) -> Result<ScenarioConfig> {
    match name {
        "strat-null" => Ok(null_config(name, 500, strata_cuts())),
        "strat-power" => Ok(ScenarioConfig {
            treated: OutcomeModel {
                mean: vec![0.1, 1.0],
                sd: 0.4,
            },
            control: OutcomeModel {
                mean: vec![0.0, -1.0],
                sd: 0.1,
            },
            center: false,
            ..null_config(name, 500, strata_cuts())
        }),
        "rem-invalid" => Ok(ScenarioConfig {
            covariate: CovariateLaw::Normal { mean: 0.0, sd: 1.0 },
            treated: OutcomeModel {
                mean: vec![0.0],
                sd: 1.0,
            },
            control: OutcomeModel {
                mean: vec![0.0, 1.0],
                sd: 1.0,
            },
            shared_noise: true,
            permutations: 300,
            statistics: StatisticSpec::robust(),
            ..null_config(
                name,
                500,
                DesignConfig::Rem {
                    treated: 25,
                    acceptance: 0.05,
                },
            )
        }),
        "complete-null" => Ok(null_config(
            name,
            100,
            DesignConfig::Complete { treated: 20 },
        )),
        _ => Err(Error::UnknownScenario(name.into())),
    }
}

/// Fixed finite population of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub x: Vec<f64>,
    pub y1: Vec<f64>,
    pub y0: Vec<f64>,
}

impl Population {
    /// Average treatment effect.
    pub fn tau(&self) -> f64 {
        let n = self.x.len() as f64;
        self.y1
            .iter()
            .zip(&self.y0)
            .map(|(a, b)| a - b)
            .sum::<f64>()
            / n
    }
}

pub fn generate_population(cfg: &ScenarioConfig) -> Result<Population> {
    let mut rng = stream(derive_seed(cfg.population_seed, TAG_POPULATION, 0), 0);
    let n = cfg.n;
    let x: Vec<f64> = match &cfg.covariate {
        CovariateLaw::Uniform { lo, hi } => {
            let u = Uniform::new(*lo, *hi).map_err(|e| Error::InvalidInput(e.to_string()))?;
            (0..n).map(|_| u.sample(&mut rng)).collect()
        }
        CovariateLaw::Normal { mean, sd } => {
            let d = Normal::new(*mean, *sd).map_err(|e| Error::InvalidInput(e.to_string()))?;
            (0..n).map(|_| d.sample(&mut rng)).collect()
        }
    };
    let mut noise = || -> Vec<f64> {
        (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    };
    let e1 = noise();
    let e0 = if cfg.shared_noise {
        e1.clone()
    } else {
        noise()
    };
    let draw = |m: &OutcomeModel, e: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(e)
            .map(|(&xi, &ei)| m.mean_at(xi) + m.sd * ei)
            .collect()
    };
    let mut y1 = draw(&cfg.treated, &e1);
    let mut y0 = draw(&cfg.control, &e0);
    if cfg.center {
        for v in [&mut y1, &mut y0] {
            let mean = v.iter().sum::<f64>() / n as f64;
            v.iter_mut().for_each(|a| *a -= mean);
        }
    }
    Ok(Population { x, y1, y0 })
}

/// Design over the population plus the unit labels it needs.
struct Setup {
    design: DesignSpec,
    strata: Option<Vec<usize>>,
    clusters: Option<Vec<usize>>,
}

fn setup(cfg: &ScenarioConfig, pop: &Population) -> Result<Setup> {
    let n = cfg.n;
    match &cfg.design {
        DesignConfig::Complete { treated } => Ok(Setup {
            design: DesignSpec::Complete { n, n1: *treated },
            strata: None,
            clusters: None,
        }),
        DesignConfig::Stratified { cutoffs, fraction } => {
            let mut cuts = cutoffs.clone();
            cuts.sort_by(f64::total_cmp);
            let labels: Vec<usize> = pop
                .x
                .iter()
                .map(|&x| cuts.iter().filter(|&&c| x > c).count())
                .collect();
            let mut sizes = vec![0usize; cuts.len() + 1];
            for &l in &labels {
                sizes[l] += 1;
            }
            if let Some(k) = sizes.iter().position(|&s| s == 0) {
                return Err(Error::EmptyStratum { stratum: k });
            }
            let treated = sizes
                .iter()
                .map(|&s| (fraction * s as f64).floor() as usize)
                .collect();
            let design = DesignSpec::Stratified {
                labels: labels.clone(),
                treated,
            };
            design.validate()?;
            Ok(Setup {
                design,
                strata: Some(labels),
                clusters: None,
            })
        }
        DesignConfig::Rem {
            treated,
            acceptance,
        } => Ok(Setup {
            design: DesignSpec::Rem {
                n,
                n1: *treated,
                threshold: chi2_quantile(*acceptance, 1),
                covariates: Matrix::from_columns(std::slice::from_ref(&pop.x))?,
            },
            strata: None,
            clusters: None,
        }),
        DesignConfig::Cluster { clusters, treated } => {
            if *clusters == 0 || *clusters > n {
                return Err(Error::InvalidSizes(format!(
                    "cannot form {clusters} clusters of {n} units"
                )));
            }
            Ok(Setup {
                design: DesignSpec::Cluster {
                    m: *clusters,
                    m1: *treated,
                },
                strata: None,
                clusters: Some((0..n).map(|i| i * clusters / n).collect()),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRow {
    pub statistic: StatisticSpec,
    pub rate: f64,
    pub mc_se: f64,
    pub reps: usize,
    /// Counts of p-values in 20 equal bins of (0, 1].
    pub histogram: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionTable {
    pub alpha: f64,
    pub rows: Vec<RejectionRow>,
}

impl RejectionTable {
    pub fn rate(&self, spec: StatisticSpec) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.statistic == spec)
            .map(|r| r.rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub table: RejectionTable,
    /// `p_values[k][r]`: statistic `k`, replication `r`.
    pub p_values: Vec<Vec<f64>>,
    pub tau: f64,
}

pub fn histogram(p: &[f64]) -> Vec<usize> {
    let mut h = vec![0; HISTOGRAM_BINS];
    for &v in p {
        let b = ((v * HISTOGRAM_BINS as f64).ceil() as usize).clamp(1, HISTOGRAM_BINS) - 1;
        h[b] += 1;
    }
    h
}

/// Runs every replication of a scenario. Replication `r` draws its
/// assignment and permutations from streams derived from `(seed, r)`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome> {
    cfg.validate()?;
    let pop = generate_population(cfg)?;
    let setup = setup(cfg, &pop)?;
    let sampler = Sampler::new(&setup.design)?;
    let x = Matrix::from_columns(std::slice::from_ref(&pop.x))?;
    let assign_seed = derive_seed(cfg.seed, TAG_ASSIGNMENT, 0);
    let per_rep: Vec<Vec<f64>> = (0..cfg.reps as u64)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let mut rng = stream(assign_seed, r);
            let z_design = sampler.draw(&mut rng)?;
            let z: Vec<bool> = match &setup.clusters {
                Some(c) => c.iter().map(|&k| z_design[k]).collect(),
                None => z_design,
            };
            let y = z
                .iter()
                .enumerate()
                .map(|(i, &t)| if t { pop.y1[i] } else { pop.y0[i] })
                .collect();
            let mut data = Dataset::new(y, z, x.clone())?;
            if let Some(s) = &setup.strata {
                data = data.with_strata(s)?;
            }
            if let Some(c) = &setup.clusters {
                data = data.with_clusters(c)?;
            }
            let opts = FrtOptions::monte_carlo(
                cfg.permutations,
                derive_seed(cfg.seed, TAG_PERMUTATION, r),
            );
            let res = frt_multi(&data, &cfg.statistics, &setup.design, &opts)?;
            Ok(res.iter().map(|r| r.p_value).collect())
        })
        .collect::<Result<_>>()?;
    let reps = cfg.reps as f64;
    let mut p_values = Vec::with_capacity(cfg.statistics.len());
    let rows = cfg
        .statistics
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let p: Vec<f64> = per_rep.iter().map(|row| row[k]).collect();
            let rate = p.iter().filter(|&&v| v <= cfg.alpha).count() as f64 / reps;
            let row = RejectionRow {
                statistic: *spec,
                rate,
                mc_se: (rate * (1.0 - rate) / reps).sqrt(),
                reps: cfg.reps,
                histogram: histogram(&p),
            };
            p_values.push(p);
            row
        })
        .collect();
    Ok(ScenarioOutcome {
        table: RejectionTable {
            alpha: cfg.alpha,
            rows,
        },
        p_values,
        tau: pop.tau(),
    })
}

/// `P(χ²_{J+2} ≤ a) / P(χ²_J ≤ a)`: the variance of the first coordinate of
/// a standard `J`-normal vector conditioned on `‖D‖² ≤ a`.
pub fn r_constant(j: usize, a: f64) -> f64 {
    if a.is_infinite() {
        return 1.0;
    }
    chi2_cdf(a, j + 2) / chi2_cdf(a, j)
}

/// First coordinate of a standard `J`-normal vector conditioned on
/// `‖D‖² ≤ a`, by rejection.
pub fn sample_truncated_l<R: Rng + ?Sized>(j: usize, a: f64, rng: &mut R) -> Result<f64> {
    if j == 0 || !(a > 0.0) {
        return Err(Error::InvalidInput(format!(
            "need J ≥ 1 and a > 0, got J = {j}, a = {a}"
        )));
    }
    let rate = chi2_cdf(a, j);
    if rate < 1e-6 {
        return Err(Error::AcceptanceTimeout { tries: 0, rate });
    }
    let mut d = vec![0.0; j];
    loop {
        d.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
        if d.iter().map(|v| v * v).sum::<f64>() <= a {
            return Ok(d[0]);
        }
    }
}

/// `sqrt(1 - ρ²)·ε + ρ·L` with `ε` standard normal and `L` from
/// [`sample_truncated_l`].
pub fn sample_u<R: Rng + ?Sized>(rho: f64, j: usize, a: f64, rng: &mut R) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidInput(format!(
            "rho must lie in [0, 1], got {rho}"
        )));
    }
    let eps: f64 = rng.sample(StandardNormal);
    let l = if rho > 0.0 {
        sample_truncated_l(j, a, rng)?
    } else {
        0.0
    };
    Ok((1.0 - rho * rho).sqrt() * eps + rho * l)
}

/// `1 - (1 - r_{J,a})ρ²`.
pub fn u_variance(rho: f64, j: usize, a: f64) -> f64 {
    1.0 - (1.0 - r_constant(j, a)) * rho * rho
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::normal_cdf;
    use crate::estimators::{Adjustment, Studentization};
    use approx::assert_abs_diff_eq;

    fn moments(draws: &[f64]) -> (f64, f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let m4 = draws.iter().map(|v| (v - mean).powi(4)).sum::<f64>() / n;
        (mean, var, ((m4 - var * var) / n).sqrt())
    }

    #[test]
    fn r_constant_values() {
        assert_eq!(r_constant(3, f64::INFINITY), 1.0);
        let a = 2.0 * 2.0f64.ln();
        // k = 2: 1 - e^{-a/2} = 1/2; k = 4: 1 - e^{-a/2}(1 + a/2)
        let num = 1.0 - 0.5 * (1.0 + a / 2.0);
        assert_abs_diff_eq!(r_constant(2, a), num / 0.5, epsilon = 1e-10);
        let values: Vec<f64> = (1..=5).map(|j| r_constant(j, 3.0)).collect();
        assert!(values.windows(2).all(|w| w[1] < w[0]));
        assert_abs_diff_eq!(r_constant(2, 1e6), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn truncated_l_moments() {
        let mut rng = stream(5, 0);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_l(2, 1.386, &mut rng).unwrap())
            .collect();
        let (mean, var, var_se) = moments(&draws);
        let mean_se = (var / draws.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * mean_se);
        assert!((var - r_constant(2, 1.386)).abs() < 3.0 * var_se);

        let wide: Vec<f64> = (0..20_000)
            .map(|_| sample_truncated_l(1, 1e9, &mut rng).unwrap())
            .collect();
        assert!((moments(&wide).1 - 1.0).abs() < 0.05);
    }

    #[test]
    fn u_at_extremes() {
        let mut rng = stream(6, 0);
        let mut draws: Vec<f64> = (0..100_000)
            .map(|_| sample_u(0.0, 2, 1.0, &mut rng).unwrap())
            .collect();
        draws.sort_by(f64::total_cmp);
        let n = draws.len() as f64;
        let ks = draws
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let f = normal_cdf(v);
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        assert!(ks < 0.02, "ks = {ks}");

        let a = 0.5;
        for _ in 0..1000 {
            assert!(sample_u(1.0, 1, a, &mut rng).unwrap().powi(2) <= a);
        }
    }

    #[test]
    fn u_variance_matches() {
        let mut rng = stream(7, 0);
        let a = 2.0 * 2.0f64.ln();
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_u(0.7, 2, a, &mut rng).unwrap())
            .collect();
        let (_, var, se) = moments(&draws);
        assert!((var - u_variance(0.7, 2, a)).abs() < 3.0 * se);
    }

    #[test]
    fn tiny_acceptance_refused() {
        let mut rng = stream(0, 0);
        assert!(matches!(
            sample_truncated_l(5, 1e-4, &mut rng),
            Err(Error::AcceptanceTimeout { .. })
        ));
    }

    #[test]
    fn builtins_resolve() {
        for name in BUILTIN_SCENARIOS {
            let cfg = builtin(name).unwrap();
            cfg.validate().unwrap();
            let pop = generate_population(&cfg).unwrap();
            setup(&cfg, &pop).unwrap();
        }
        assert!(matches!(builtin("nope"), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn shared_noise_ties_outcomes() {
        let cfg = ScenarioConfig {
            center: false,
            ..builtin("rem-invalid").unwrap()
        };
        let pop = generate_population(&cfg).unwrap();
        for i in 0..cfg.n {
            assert_abs_diff_eq!(pop.y0[i] - pop.y1[i], pop.x[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn strat_null_population() {
        let cfg = builtin("strat-null").unwrap();
        let pop = generate_population(&cfg).unwrap();
        assert_abs_diff_eq!(pop.tau(), 0.0, epsilon = 1e-12);
        let s = setup(&cfg, &pop).unwrap();
        let DesignSpec::Stratified { labels, treated } = &s.design else {
            panic!("expected a stratified design")
        };
        for k in 0..3 {
            let nk = labels.iter().filter(|&&l| l == k).count();
            assert_eq!(treated[k], nk / 5);
            for (i, &l) in labels.iter().enumerate() {
                if l == k {
                    let x = pop.x[i];
                    let inside = match k {
                        0 => x <= -0.3,
                        1 => x > -0.3 && x <= 0.3,
                        _ => x > 0.3,
                    };
                    assert!(inside);
                }
            }
        }
    }

    #[test]
    fn noiseless_null_gives_unit_p_values() {
        let cfg = ScenarioConfig {
            name: "flat".into(),
            n: 12,
            covariate: CovariateLaw::default(),
            treated: OutcomeModel {
                mean: vec![1.0],
                sd: 0.0,
            },
            control: OutcomeModel {
                mean: vec![1.0],
                sd: 0.0,
            },
            center: false,
            shared_noise: false,
            design: DesignConfig::Complete { treated: 6 },
            reps: 5,
            permutations: 20,
            alpha: 0.05,
            statistics: StatisticSpec::robust(),
            population_seed: 1,
            seed: 2,
        };
        let out = run_scenario(&cfg).unwrap();
        for p in out.p_values.iter().flatten() {
            assert_eq!(*p, 1.0);
        }
    }

    #[test]
    fn scenario_is_reproducible() {
        let cfg = ScenarioConfig {
            reps: 20,
            permutations: 50,
            seed: 9,
            statistics: vec![StatisticSpec::new(Adjustment::Lin, Studentization::Robust)],
            ..builtin("complete-null").unwrap()
        };
        assert_eq!(run_scenario(&cfg).unwrap(), run_scenario(&cfg).unwrap());
    }

    #[test]
    fn cluster_scenario_smoke() {
        let cfg = ScenarioConfig {
            reps: 10,
            permutations: 30,
            design: DesignConfig::Cluster {
                clusters: 20,
                treated: 8,
            },
            ..builtin("complete-null").unwrap()
        };
        let out = run_scenario(&cfg).unwrap();
        assert_eq!(out.table.rows.len(), 12);
    }

    #[test]
    fn histogram_bins() {
        let h = histogram(&[0.01, 0.05, 0.051, 1.0, 0.5]);
        assert_eq!(h[0], 2);
        assert_eq!(h[1], 1);
        assert_eq!(h[9], 1);
        assert_eq!(h[19], 1);
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = builtin("rem-invalid").unwrap();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ScenarioConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
