//! Fisher randomization tests: exact and Monte Carlo p-values, and
//! confidence intervals by test inversion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::designs::{normal_quantile, BalanceChecker, DesignSpec, Sampler};
use crate::error::{Error, Result};
use crate::estimators::{
    cluster_collapse, estimate, Adjustment, EstimateTriple, StatisticSpec, Studentization,
};
use crate::kernel::StatKernel;
use crate::rng::stream;

/// Largest assignment space enumerated in exact mode by default.
pub const DEFAULT_EXACT_CAP: u128 = 1_000_000;

/// Relative slack used when comparing a replicate to the observed statistic,
/// so that mathematically tied values that differ by rounding count as ties.
const TIE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Mode {
    Exact,
    MonteCarlo { replicates: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sided {
    #[default]
    Two,
    /// Right tail of the signed statistic.
    One,
}

impl std::str::FromStr for Sided {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "two" => Ok(Sided::Two),
            "one" => Ok(Sided::One),
            _ => Err(Error::InvalidInput(format!("unknown sidedness `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrtOptions {
    pub mode: Mode,
    pub seed: u64,
    pub sided: Sided,
    pub exact_cap: u128,
}

impl FrtOptions {
    pub fn monte_carlo(replicates: usize, seed: u64) -> Self {
        FrtOptions {
            mode: Mode::MonteCarlo { replicates },
            seed,
            sided: Sided::Two,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }

    pub fn exact() -> Self {
        FrtOptions {
            mode: Mode::Exact,
            seed: 0,
            sided: Sided::Two,
            exact_cap: DEFAULT_EXACT_CAP,
        }
    }

    pub fn sided(mut self, sided: Sided) -> Self {
        self.sided = sided;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrtResult {
    pub t_obs: f64,
    /// Replicate statistics; `NaN` marks a replicate whose statistic failed.
    pub replicates: Vec<f64>,
    pub p_value: f64,
    pub mc_se: f64,
    pub mode: Mode,
    pub seed: u64,
    pub sided: Sided,
    pub design: DesignSpec,
    pub spec: StatisticSpec,
    /// Number of replicates at least as extreme as the observed statistic.
    pub extreme: usize,
}

/// `a` at least as extreme as `b` in the right tail. Failed replicates
/// (`NaN`) always count.
fn at_least(a: f64, b: f64) -> bool {
    a.is_nan() || a >= b || (b.is_finite() && a >= b - TIE_TOLERANCE * b.abs())
}

pub fn is_extreme(t: f64, t_obs: f64, sided: Sided) -> bool {
    match sided {
        Sided::Two => at_least(t.abs(), t_obs.abs()),
        Sided::One => at_least(t, t_obs),
    }
}

/// p-value and Monte Carlo standard error from replicate statistics.
/// Returns `(p, mc_se, extreme)`.
pub fn p_value_from(t_obs: f64, replicates: &[f64], mode: Mode, sided: Sided) -> (f64, f64, usize) {
    let extreme = replicates
        .iter()
        .filter(|t| is_extreme(**t, t_obs, sided))
        .count();
    let r = replicates.len() as f64;
    match mode {
        Mode::Exact => (extreme as f64 / r, 0.0, extreme),
        Mode::MonteCarlo { .. } => {
            let p = (1.0 + extreme as f64) / (1.0 + r);
            (p, (p * (1.0 - p) / r).sqrt(), extreme)
        }
    }
}

/// Binomial coefficients `C(a, b)` for `a ≤ n`, `b ≤ k`, saturating.
#[derive(Debug, Clone)]
struct Binomials {
    k: usize,
    table: Vec<u128>,
}

impl Binomials {
    fn new(n: usize, k: usize) -> Self {
        let w = k + 1;
        let mut table = vec![0u128; (n + 1) * w];
        for a in 0..=n {
            table[a * w] = 1;
            for b in 1..=k.min(a) {
                table[a * w + b] =
                    table[(a - 1) * w + b - 1].saturating_add(table[(a - 1) * w + b]);
            }
        }
        Binomials { k, table }
    }

    fn get(&self, a: usize, b: usize) -> u128 {
        if b > self.k || b > a {
            0
        } else {
            self.table[a * (self.k + 1) + b]
        }
    }
}

/// Combinations of `k` out of `n` in lexicographic order.
#[derive(Debug, Clone)]
struct Combinations {
    n: usize,
    k: usize,
    binom: Binomials,
}

impl Combinations {
    fn new(n: usize, k: usize) -> Self {
        Combinations {
            n,
            k,
            binom: Binomials::new(n, k),
        }
    }

    fn count(&self) -> u128 {
        self.binom.get(self.n, self.k)
    }

    fn unrank(&self, mut idx: u128, out: &mut [bool]) {
        let mut left = self.k;
        for (p, slot) in out.iter_mut().enumerate() {
            if left == 0 {
                *slot = false;
                continue;
            }
            let with = self.binom.get(self.n - p - 1, left - 1);
            if idx < with {
                *slot = true;
                left -= 1;
            } else {
                idx -= with;
                *slot = false;
            }
        }
    }
}

/// Every assignment of a design, addressable by index.
#[derive(Debug, Clone)]
pub struct Enumeration {
    /// Unit indices and combination generator of each block.
    blocks: Vec<(Vec<usize>, Combinations)>,
    n: usize,
    total: u128,
    filter: Option<BalanceChecker>,
}

impl Enumeration {
    /// Size of the unfiltered product space.
    pub fn raw_len(&self) -> u128 {
        self.total
    }

    /// Assignment number `idx` of the unfiltered space.
    pub fn get(&self, mut idx: u128) -> Vec<bool> {
        let mut z = vec![false; self.n];
        let mut buf = Vec::new();
        for (units, comb) in &self.blocks {
            let c = comb.count();
            buf.resize(units.len(), false);
            comb.unrank(idx % c, &mut buf);
            idx /= c;
            for (u, t) in units.iter().zip(&buf) {
                z[*u] = *t;
            }
        }
        z
    }

    fn admissible(&self, z: &[bool]) -> bool {
        match &self.filter {
            Some(c) => c.accepts(z).unwrap_or(false),
            None => true,
        }
    }

    /// Admissible assignments, each exactly once.
    pub fn iter(&self) -> impl Iterator<Item = Vec<bool>> + '_ {
        (0..self.total)
            .map(|i| self.get(i))
            .filter(|z| self.admissible(z))
    }
}

/// Enumerates the assignment space of `design`, failing when the
/// unfiltered space exceeds `cap`.
pub fn exhaustive_assignments(design: &DesignSpec, cap: u128) -> Result<Enumeration> {
    design.validate()?;
    let (blocks, n, filter) = match design {
        DesignSpec::Complete { n, n1 } | DesignSpec::Cluster { m: n, m1: n1 } => (
            vec![((0..*n).collect(), Combinations::new(*n, *n1))],
            *n,
            None,
        ),
        DesignSpec::Rem {
            n,
            n1,
            threshold,
            covariates,
        } => (
            vec![((0..*n).collect(), Combinations::new(*n, *n1))],
            *n,
            Some(BalanceChecker::new(covariates, *threshold)?),
        ),
        DesignSpec::Stratified { labels, treated } => {
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); treated.len()];
            for (i, &l) in labels.iter().enumerate() {
                groups[l].push(i);
            }
            let blocks = groups
                .into_iter()
                .zip(treated)
                .map(|(g, &k)| {
                    let c = Combinations::new(g.len(), k);
                    (g, c)
                })
                .collect();
            (blocks, labels.len(), None)
        }
    };
    let total = blocks
        .iter()
        .try_fold(1u128, |acc: u128, (_, c)| acc.checked_mul(c.count()))
        .unwrap_or(u128::MAX);
    if total > cap || total == u128::MAX {
        return Err(Error::TooLarge { count: total, cap });
    }
    Ok(Enumeration {
        blocks,
        n,
        total,
        filter,
    })
}

/// Source of permuted assignments for one test.
enum Plan {
    MonteCarlo {
        sampler: Sampler,
        replicates: usize,
        seed: u64,
    },
    Exact(Enumeration),
}

impl Plan {
    fn new(design: &DesignSpec, opts: &FrtOptions) -> Result<Self> {
        match opts.mode {
            Mode::MonteCarlo { replicates } => {
                if replicates == 0 {
                    return Err(Error::InvalidInput(
                        "at least one replicate is required".into(),
                    ));
                }
                Ok(Plan::MonteCarlo {
                    sampler: Sampler::new(design)?,
                    replicates,
                    seed: opts.seed,
                })
            }
            Mode::Exact => Ok(Plan::Exact(exhaustive_assignments(design, opts.exact_cap)?)),
        }
    }

    /// Applies `f` to every permuted assignment, in a fixed order.
    fn map<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&[bool]) -> T + Sync + Send,
    {
        match self {
            Plan::MonteCarlo {
                sampler,
                replicates,
                seed,
            } => (0..*replicates as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = stream(*seed, i);
                    sampler.draw(&mut rng).map(|z| f(&z))
                })
                .collect(),
            Plan::Exact(e) => Ok((0..e.total as u64)
                .into_par_iter()
                .filter_map(|i| {
                    let z = e.get(i as u128);
                    e.admissible(&z).then(|| f(&z))
                })
                .collect()),
        }
    }
}

/// Dataset and design seen by the test: clusters collapse to scaled totals
/// and a cluster-level complete design.
fn prepare(data: &Dataset, design: &DesignSpec) -> Result<(Dataset, DesignSpec)> {
    design.validate()?;
    match design {
        DesignSpec::Cluster { m, m1 } => {
            let collapsed = cluster_collapse(data)?;
            if collapsed.n() != *m {
                return Err(Error::DimensionMismatch {
                    context: "cluster count",
                    expected: *m,
                    found: collapsed.n(),
                });
            }
            Ok((collapsed, DesignSpec::Complete { n: *m, n1: *m1 }))
        }
        DesignSpec::Stratified { labels, .. } => {
            let strata = data.strata().ok_or_else(|| {
                Error::InvalidInput("stratified design requires stratum labels".into())
            })?;
            if strata.len() != labels.len() {
                return Err(Error::DimensionMismatch {
                    context: "stratum labels",
                    expected: labels.len(),
                    found: strata.len(),
                });
            }
            Ok((data.clone(), design.clone()))
        }
        _ => {
            if design.units() != data.n() {
                return Err(Error::DimensionMismatch {
                    context: "design size",
                    expected: data.n(),
                    found: design.units(),
                });
            }
            // strata only shape the estimator under a stratified design
            Ok((data.without_labels(), design.clone()))
        }
    }
}

fn adjustments_of(specs: &[StatisticSpec]) -> Vec<Adjustment> {
    let mut adj: Vec<Adjustment> = specs.iter().map(|s| s.adjustment).collect();
    adj.sort();
    adj.dedup();
    adj
}

fn check_observed(design: &DesignSpec, data: &Dataset) -> Result<()> {
    if let DesignSpec::Rem {
        threshold,
        covariates,
        ..
    } = design
    {
        if !BalanceChecker::new(covariates, *threshold)?.accepts(data.z())? {
            return Err(Error::ObservedNotAdmissible);
        }
    }
    Ok(())
}

/// Randomization tests of several statistics sharing one set of permuted
/// assignments.
pub fn frt_multi(
    data: &Dataset,
    specs: &[StatisticSpec],
    design: &DesignSpec,
    opts: &FrtOptions,
) -> Result<Vec<FrtResult>> {
    let (data, inner) = prepare(data, design)?;
    let kernel = StatKernel::new(&data, &adjustments_of(specs))?;
    let tol = kernel.tolerance(0.0);
    let observed = kernel.evaluate(data.z());
    let t_obs = specs
        .iter()
        .map(|s| observed.statistic(*s, 0.0, tol))
        .collect::<Result<Vec<f64>>>()?;
    if opts.mode == Mode::Exact {
        check_observed(&inner, &data)?;
    }
    let plan = Plan::new(&inner, opts)?;
    let rows = plan.map(|z| {
        let ev = kernel.evaluate(z);
        specs
            .iter()
            .map(|s| ev.statistic(*s, 0.0, tol).unwrap_or(f64::NAN))
            .collect::<Vec<f64>>()
    })?;
    Ok(specs
        .iter()
        .enumerate()
        .map(|(k, spec)| {
            let replicates: Vec<f64> = rows.iter().map(|r| r[k]).collect();
            let (p_value, mc_se, extreme) =
                p_value_from(t_obs[k], &replicates, opts.mode, opts.sided);
            FrtResult {
                t_obs: t_obs[k],
                replicates,
                p_value,
                mc_se,
                mode: opts.mode,
                seed: opts.seed,
                sided: opts.sided,
                design: design.clone(),
                spec: *spec,
                extreme,
            }
        })
        .collect())
}

pub fn frt_p_value(
    data: &Dataset,
    spec: StatisticSpec,
    design: &DesignSpec,
    opts: &FrtOptions,
) -> Result<FrtResult> {
    Ok(frt_multi(data, &[spec], design, opts)?.remove(0))
}

/// Point estimate under the design's own estimator structure.
pub fn design_estimate(
    data: &Dataset,
    adjustment: Adjustment,
    design: &DesignSpec,
) -> Result<EstimateTriple> {
    let (data, _) = prepare(data, design)?;
    estimate(&data, adjustment)
}

/// `tau ± q·se_robust` with `q` the standard normal `1 - alpha/2` quantile.
pub fn wald_ci(triple: &EstimateTriple, alpha: f64) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if triple.se_robust <= 0.0 {
        return Err(Error::ZeroSe);
    }
    let half = normal_quantile(1.0 - alpha / 2.0) * triple.se_robust;
    Ok((triple.tau_hat - half, triple.tau_hat + half))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl Grid {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step).round() as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiResult {
    pub lower: f64,
    pub upper: f64,
    pub alpha: f64,
    pub grid: Grid,
    pub wald_init: (f64, f64),
    #[serde(skip)]
    pub p_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CiOptions {
    pub alpha: f64,
    pub points: usize,
    /// Explicit `(lo, hi)`; by default the Wald interval widened by three
    /// widths on each side.
    pub range: Option<(f64, f64)>,
}

impl CiOptions {
    pub fn new(alpha: f64) -> Self {
        CiOptions {
            alpha,
            points: 201,
            range: None,
        }
    }
}

/// Confidence interval collecting every grid value `c` whose test of the
/// constant effect `c` (outcomes `Y - cZ`) is not rejected at level `alpha`.
/// All grid points share the same permuted assignments.
pub fn invert_ci(
    data: &Dataset,
    spec: StatisticSpec,
    design: &DesignSpec,
    opts: &FrtOptions,
    ci: &CiOptions,
) -> Result<CiResult> {
    if ci.points < 2 {
        return Err(Error::InvalidInput("grid needs at least two points".into()));
    }
    let triple = design_estimate(data, spec.adjustment, design)?;
    let wald_init = wald_ci(&triple, ci.alpha)?;
    let (lo, hi) = ci.range.unwrap_or_else(|| {
        let w = wald_init.1 - wald_init.0;
        (wald_init.0 - 3.0 * w, wald_init.1 + 3.0 * w)
    });
    if !(hi > lo) {
        return Err(Error::InvalidInput(format!(
            "empty grid range [{lo}, {hi}]"
        )));
    }
    let grid = Grid {
        lo,
        hi,
        step: (hi - lo) / (ci.points - 1) as f64,
    };
    let cs: Vec<f64> = (0..ci.points).map(|i| lo + i as f64 * grid.step).collect();

    let (inner_data, inner) = prepare(data, design)?;
    let w: Vec<f64> = match design {
        DesignSpec::Cluster { .. } => {
            let ones: Vec<f64> = data.z().iter().map(|&t| t as u8 as f64).collect();
            cluster_collapse(&data.with_outcomes(ones))?.y().to_vec()
        }
        _ => inner_data.z().iter().map(|&t| t as u8 as f64).collect(),
    };
    let kernel = StatKernel::with_shift(&inner_data, &w, &[spec.adjustment])?;
    let tols: Vec<f64> = cs.iter().map(|&c| kernel.tolerance(c)).collect();
    let observed = kernel.evaluate(inner_data.z()).moments(spec.adjustment)?;
    let t_obs: Vec<f64> = cs
        .iter()
        .zip(&tols)
        .map(|(&c, &tol)| stat_at(&observed, spec.studentization, c, tol))
        .collect();
    if opts.mode == Mode::Exact {
        check_observed(&inner, &inner_data)?;
    }
    let plan = Plan::new(&inner, opts)?;
    let words = cs.len().div_ceil(64);
    let flags = plan.map(|z| {
        let mut bits = vec![0u64; words];
        match kernel.evaluate(z).moments(spec.adjustment) {
            Ok(m) => {
                for (g, (&c, &tol)) in cs.iter().zip(&tols).enumerate() {
                    if is_extreme(
                        stat_at(&m, spec.studentization, c, tol),
                        t_obs[g],
                        opts.sided,
                    ) {
                        bits[g / 64] |= 1 << (g % 64);
                    }
                }
            }
            Err(_) => bits.iter_mut().for_each(|b| *b = u64::MAX),
        }
        bits
    })?;
    let r = flags.len() as f64;
    let p_values: Vec<f64> = (0..cs.len())
        .map(|g| {
            let count = flags
                .iter()
                .filter(|b| b[g / 64] >> (g % 64) & 1 == 1)
                .count() as f64;
            match opts.mode {
                Mode::Exact => count / r,
                Mode::MonteCarlo { .. } => (1.0 + count) / (1.0 + r),
            }
        })
        .collect();
    let kept: Vec<usize> = (0..cs.len()).filter(|&g| p_values[g] > ci.alpha).collect();
    match (kept.first(), kept.last()) {
        (Some(&a), Some(&b)) => Ok(CiResult {
            lower: cs[a],
            upper: cs[b],
            alpha: ci.alpha,
            grid,
            wald_init,
            p_values,
        }),
        _ => {
            let best = (0..cs.len())
                .max_by(|&a, &b| {
                    let gap = |g: usize| (cs[g] - triple.tau_hat).abs();
                    p_values[a]
                        .total_cmp(&p_values[b])
                        .then(gap(b).total_cmp(&gap(a)))
                })
                .unwrap_or(0);
            Err(Error::EmptyAcceptanceRegion {
                nearest: cs[best],
                p_value: p_values[best],
            })
        }
    }
}

fn stat_at(m: &crate::kernel::Moments, s: Studentization, c: f64, tol: f64) -> f64 {
    crate::estimators::studentize(m.tau_at(c), m.se_at(s, c), tol)
}
