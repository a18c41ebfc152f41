//! Acceptance checks. Each criterion prints one PASS or FAIL line; the
//! process exits nonzero when any criterion fails.

use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;

use randtest::designs::{chi2_cdf, chi2_quantile, draw_complete, BalanceChecker, DesignSpec};
use randtest::estimators::estimate;
use randtest::frt::{
    exhaustive_assignments, frt_multi, invert_ci, CiOptions, FrtOptions, DEFAULT_EXACT_CAP,
};
use randtest::linalg::{fit_ols, Matrix};
use randtest::perm_lm::{PermLm, Scheme};
use randtest::rng::stream;
use randtest::sim::{
    builtin, r_constant, run_scenario, sample_truncated_l, sample_u, u_variance, RejectionTable,
};
use randtest::{Adjustment, Dataset, StatisticSpec, Studentization};

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn normal_vec<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_dataset(n: usize, n1: usize, j: usize, seed: u64) -> Dataset {
    let mut rng = stream(seed, 0);
    let cols: Vec<Vec<f64>> = (0..j).map(|_| normal_vec(n, &mut rng)).collect();
    let z = draw_complete(n, n1, &mut rng).unwrap();
    let y = (0..n)
        .map(|i| {
            let signal: f64 = cols
                .iter()
                .enumerate()
                .map(|(k, c)| (k as f64 + 1.0) * c[i])
                .sum();
            let scale = if z[i] { 2.0 } else { 0.5 };
            signal + scale * rng.sample::<f64, _>(StandardNormal) + if z[i] { 0.3 } else { 0.0 }
        })
        .collect();
    let x = if j == 0 {
        Matrix::empty(n)
    } else {
        Matrix::from_columns(&cols).unwrap()
    };
    Dataset::new(y, z, x).unwrap()
}

/// Least squares by normal equations and Gaussian elimination.
fn normal_equations(cols: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let p = cols.len();
    let mut a: Vec<Vec<f64>> = (0..p)
        .map(|r| {
            let mut row: Vec<f64> = (0..p)
                .map(|c| cols[r].iter().zip(&cols[c]).map(|(u, v)| u * v).sum())
                .collect();
            row.push(cols[r].iter().zip(y).map(|(u, v)| u * v).sum());
            row
        })
        .collect();
    for k in 0..p {
        let piv = (k..p)
            .max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))
            .unwrap();
        a.swap(k, piv);
        let pivot_row = a[k].clone();
        for row in a.iter_mut().skip(k + 1) {
            let f = row[k] / pivot_row[k];
            for (v, w) in row.iter_mut().zip(&pivot_row).skip(k) {
                *v -= f * w;
            }
        }
    }
    let mut b = vec![0.0; p];
    for k in (0..p).rev() {
        let s: f64 = (k + 1..p).map(|c| a[k][c] * b[c]).sum();
        b[k] = (a[k][p] - s) / a[k][k];
    }
    b
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn arm_mean(v: &[f64], z: &[bool], arm: bool) -> f64 {
    let picked: Vec<f64> = v
        .iter()
        .zip(z)
        .filter(|(_, &t)| t == arm)
        .map(|(a, _)| *a)
        .collect();
    mean(&picked)
}

fn criterion_1() -> Check {
    let mut rng = stream(11, 0);
    let y = normal_vec(8, &mut rng);
    let x = Matrix::from_columns(&[normal_vec(8, &mut rng)]).unwrap();
    let base = Dataset::new(
        y,
        vec![true, true, true, true, false, false, false, false],
        x,
    )
    .unwrap();
    let design = DesignSpec::Complete { n: 8, n1: 4 };
    let specs = StatisticSpec::all();
    let all: Vec<Vec<bool>> = exhaustive_assignments(&design, DEFAULT_EXACT_CAP)
        .unwrap()
        .iter()
        .collect();
    if all.len() != 70 {
        return Err(format!("enumerated {} assignments", all.len()));
    }
    let mut p = vec![Vec::with_capacity(70); specs.len()];
    for z in &all {
        let res = frt_multi(
            &base.with_assignment(z.clone()),
            &specs,
            &design,
            &FrtOptions::exact(),
        )
        .map_err(|e| e.to_string())?;
        for (k, r) in res.iter().enumerate() {
            p[k].push(r.p_value);
        }
    }
    let mut worst = f64::NEG_INFINITY;
    for (k, ps) in p.iter().enumerate() {
        for &alpha in ps {
            let rate = ps.iter().filter(|&&q| q <= alpha).count() as f64 / 70.0;
            worst = worst.max(rate - alpha);
            if rate > alpha + 1e-12 {
                return Err(format!("{}: P(p <= {alpha:.4}) = {rate:.4}", specs[k]));
            }
        }
    }
    Ok(format!(
        "12 statistics x 70 assignments, max P(p<=a) - a = {worst:.4}"
    ))
}

fn criterion_2() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let data = random_dataset(40, 20, 3, 1000 + seed);
        let (y, z) = (data.y(), data.z());
        let n = 40.0;
        let p1 = data.n_treated() as f64 / n;
        let cols: Vec<Vec<f64>> = data.x().columns().map(|c| c.to_vec()).collect();
        let tau_n = arm_mean(y, z, true) - arm_mean(y, z, false);
        let tau_x: Vec<f64> = cols
            .iter()
            .map(|c| arm_mean(c, z, true) - arm_mean(c, z, false))
            .collect();
        let ones = vec![1.0; 40];
        let zf: Vec<f64> = z.iter().map(|&t| t as u8 as f64).collect();

        let mut reg = vec![ones.clone()];
        reg.extend(cols.iter().cloned());
        let gamma_r = normal_equations(&reg, y)[1..].to_vec();

        let mut reg = vec![ones.clone(), zf];
        reg.extend(cols.iter().cloned());
        let gamma_f = normal_equations(&reg, y)[2..].to_vec();

        let centered: Vec<Vec<f64>> = cols
            .iter()
            .map(|c| c.iter().map(|v| v - mean(c)).collect())
            .collect();
        let arm_slopes = |arm: bool| -> Vec<f64> {
            let idx: Vec<usize> = (0..40).filter(|&i| z[i] == arm).collect();
            let mut reg = vec![vec![1.0; idx.len()]];
            reg.extend(
                centered
                    .iter()
                    .map(|c| idx.iter().map(|&i| c[i]).collect::<Vec<f64>>()),
            );
            let ya: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            normal_equations(&reg, &ya)[1..].to_vec()
        };
        let (g1, g0) = (arm_slopes(true), arm_slopes(false));
        let gamma_l: Vec<f64> = g1
            .iter()
            .zip(&g0)
            .map(|(a, b)| (1.0 - p1) * a + p1 * b)
            .collect();

        for (adj, gamma) in [
            (Adjustment::Rosenbaum, gamma_r),
            (Adjustment::Fisher, gamma_f),
            (Adjustment::Lin, gamma_l),
        ] {
            let lhs = estimate(&data, adj).map_err(|e| e.to_string())?.tau_hat;
            let rhs = tau_n - tau_x.iter().zip(&gamma).map(|(a, b)| a * b).sum::<f64>();
            let gap = (lhs - rhs).abs();
            worst = worst.max(gap);
            if gap >= 1e-8 {
                return Err(format!("dataset {seed}, {adj:?}: gap {gap:e}"));
            }
        }
    }
    Ok(format!("100 datasets, max gap {worst:.2e}"))
}

fn criterion_3() -> Check {
    let mut worst_f: f64 = 0.0;
    let mut worst_forms: f64 = 0.0;
    let mut worst_k: f64 = 0.0;
    for seed in 0..20 {
        let data = random_dataset(30, 14, 2, 2000 + seed);
        let prep = PermLm::new(&data).map_err(|e| e.to_string())?;
        let mut design = vec![data
            .z()
            .iter()
            .map(|&t| t as u8 as f64)
            .collect::<Vec<f64>>()];
        design.extend(data.x().columns().map(|c| c.to_vec()));
        let full = fit_ols(
            &Matrix::from_columns(&design).unwrap().with_intercept(),
            data.y(),
        )
        .map_err(|e| e.to_string())?;
        let refit = full.coefficients[1];
        worst_f = worst_f.max((prep.tau_fisher() - refit).abs());

        let mut rng = stream(3000 + seed, 0);
        for _ in 0..10 {
            let mut perm: Vec<usize> = (0..30).collect();
            rand::seq::SliceRandom::shuffle(perm.as_mut_slice(), &mut rng);
            for scheme in Scheme::ALL {
                let a = prep.forms(scheme, &perm);
                let b = prep.refit(scheme, &perm).map_err(|e| e.to_string())?;
                for (u, v) in [
                    (a.coefficient, b.coefficient),
                    (a.se_classic, b.se_classic),
                    (a.se_robust, b.se_robust),
                ] {
                    worst_forms = worst_forms.max((u - v).abs());
                }
            }
            let k = prep.forms(Scheme::Kennedy, &perm).coefficient;
            let fl = prep.forms(Scheme::FreedmanLane, &perm).coefficient;
            worst_k = worst_k.max((k - fl).abs());
        }
    }
    if worst_f >= 1e-8 || worst_forms >= 1e-8 || worst_k >= 1e-10 {
        return Err(format!(
            "tau_F {worst_f:e}, forms {worst_forms:e}, K vs FL {worst_k:e}"
        ));
    }
    Ok(format!(
        "tau_F gap {worst_f:.1e}, replicate gap {worst_forms:.1e}, K vs FL {worst_k:.1e}"
    ))
}

fn rates(table: &RejectionTable, s: Studentization) -> Vec<(Adjustment, f64)> {
    Adjustment::ALL
        .iter()
        .map(|&a| (a, table.rate(StatisticSpec::new(a, s)).unwrap()))
        .collect()
}

fn format_rates(r: &[(Adjustment, f64)]) -> String {
    r.iter()
        .map(|(a, v)| format!("{}={v:.3}", a.letter()))
        .collect::<Vec<_>>()
        .join(" ")
}

fn scenario(name: &str, seed: u64) -> Result<RejectionTable, String> {
    let cfg = randtest::sim::ScenarioConfig {
        seed,
        ..builtin(name).map_err(|e| e.to_string())?
    };
    Ok(run_scenario(&cfg).map_err(|e| e.to_string())?.table)
}

fn criterion_4() -> Check {
    let table = scenario("strat-null", 1)?;
    let robust = rates(&table, Studentization::Robust);
    let plain = rates(&table, Studentization::None);
    let detail = format!(
        "robust [{}], unstudentized [{}]",
        format_rates(&robust),
        format_rates(&plain)
    );
    if robust.iter().all(|(_, r)| *r <= 0.07) && plain.iter().all(|(_, r)| *r >= 0.07) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_5() -> Check {
    let table = scenario("strat-power", 1)?;
    let robust = rates(&table, Studentization::Robust);
    let lin = robust
        .iter()
        .find(|(a, _)| *a == Adjustment::Lin)
        .unwrap()
        .1;
    let detail = format!("robust [{}]", format_rates(&robust));
    let ok = robust.iter().all(|(_, r)| lin > r - 0.02 && lin >= *r);
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_6() -> Check {
    let mut rng = stream(6, 0);
    let n = 200;
    let cols: Vec<Vec<f64>> = (0..2)
        .map(|_| {
            let c = normal_vec(n, &mut rng);
            let m = mean(&c);
            let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n as f64 - 1.0)).sqrt();
            c.iter().map(|v| (v - m) / sd).collect()
        })
        .collect();
    let a = chi2_quantile(0.5, 2);
    let oracle = chi2_cdf(a, 2);
    let checker =
        BalanceChecker::new(&Matrix::from_columns(&cols).unwrap(), a).map_err(|e| e.to_string())?;
    let attempts = 10_000;
    let mut accepted = 0;
    for _ in 0..attempts {
        let z = draw_complete(n, n / 2, &mut rng).map_err(|e| e.to_string())?;
        accepted += checker.accepts(&z).map_err(|e| e.to_string())? as usize;
    }
    let rate = accepted as f64 / attempts as f64;
    let detail = format!("acceptance {rate:.4} (chi-square oracle {oracle:.4})");
    if (0.45..=0.55).contains(&rate) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn variance_with_se(draws: &[f64]) -> (f64, f64) {
    let n = draws.len() as f64;
    let m = mean(draws);
    let var = draws.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    let m4 = draws.iter().map(|v| (v - m).powi(4)).sum::<f64>() / n;
    (var, ((m4 - var * var) / n).sqrt())
}

fn criterion_7() -> Check {
    let mut rng = stream(7, 0);
    let mut parts = Vec::new();
    for (j, q) in [(1usize, 0.05), (2, 0.5)] {
        let a = chi2_quantile(q, j);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| sample_truncated_l(j, a, &mut rng))
            .collect::<randtest::Result<_>>()
            .map_err(|e| e.to_string())?;
        let (var, se) = variance_with_se(&draws);
        let target = r_constant(j, a);
        parts.push(format!("L(J={j}) {var:.5} vs {target:.5}"));
        if (var - target).abs() > 3.0 * se {
            return Err(parts.join(", "));
        }
        for rho in [0.3, 0.7, 1.0] {
            let draws: Vec<f64> = (0..100_000)
                .map(|_| sample_u(rho, j, a, &mut rng))
                .collect::<randtest::Result<_>>()
                .map_err(|e| e.to_string())?;
            let (var, se) = variance_with_se(&draws);
            let target = u_variance(rho, j, a);
            if (var - target).abs() > 3.0 * se {
                parts.push(format!("U(rho={rho}, J={j}) {var:.5} vs {target:.5}"));
                return Err(parts.join(", "));
            }
        }
    }
    parts.push("U(rho) variances within 3 se".into());
    Ok(parts.join(", "))
}

fn criterion_8() -> Check {
    let table = scenario("rem-invalid", 1)?;
    let robust = rates(&table, Studentization::Robust);
    let detail = format!("robust [{}]", format_rates(&robust));
    let ok = robust.iter().all(|(a, r)| {
        if *a == Adjustment::Neyman {
            *r > 0.07
        } else {
            *r <= 0.07
        }
    });
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_9() -> Check {
    let n = 500;
    let tau = 1.0;
    let mut rng = stream(9, 0);
    let x = normal_vec(n, &mut rng);
    let y0: Vec<f64> = x
        .iter()
        .map(|v| v + rng.sample::<f64, _>(StandardNormal))
        .collect();
    let xm = Matrix::from_columns(&[x]).unwrap();
    let spec = StatisticSpec::new(Adjustment::Lin, Studentization::Robust);
    let design = DesignSpec::Complete { n, n1: n / 2 };
    let observe = |z: Vec<bool>| {
        let y = z
            .iter()
            .zip(&y0)
            .map(|(&t, &v)| if t { v + tau } else { v })
            .collect();
        Dataset::new(y, z, xm.clone()).unwrap()
    };

    let data = observe(draw_complete(n, n / 2, &mut rng).unwrap());
    let ci = invert_ci(
        &data,
        spec,
        &design,
        &FrtOptions::monte_carlo(5000, 91),
        &CiOptions::new(0.05),
    )
    .map_err(|e| e.to_string())?;
    let (dl, du) = (
        (ci.lower - ci.wald_init.0).abs(),
        (ci.upper - ci.wald_init.1).abs(),
    );
    let endpoints = format!(
        "FRT [{:.4}, {:.4}] vs Wald [{:.4}, {:.4}], step {:.4}",
        ci.lower, ci.upper, ci.wald_init.0, ci.wald_init.1, ci.grid.step
    );
    if dl > ci.grid.step || du > ci.grid.step {
        return Err(endpoints);
    }

    let reps = 300;
    let mut covered = 0;
    for r in 0..reps {
        let mut arng = stream(92, r);
        let data = observe(draw_complete(n, n / 2, &mut arng).unwrap());
        let ci = invert_ci(
            &data,
            spec,
            &design,
            &FrtOptions::monte_carlo(500, 93 + r),
            &CiOptions::new(0.05),
        )
        .map_err(|e| e.to_string())?;
        covered += (ci.lower <= tau && tau <= ci.upper) as usize;
    }
    let coverage = covered as f64 / reps as f64;
    let detail = format!("{endpoints}; coverage {coverage:.3} over {reps} reps");
    if (0.92..=0.98).contains(&coverage) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn criterion_10() -> Check {
    let dir = std::env::temp_dir().join(format!("randtest-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let csv = dir.join("data.csv");
    let data = random_dataset(60, 30, 2, 10);
    let mut text = String::from("y,z,x1,x2,stratum,cluster\n");
    for i in 0..60 {
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            data.y()[i],
            data.z()[i] as u8,
            data.x().column(0)[i],
            data.x().column(1)[i],
            i % 2,
            i
        ));
    }
    std::fs::write(&csv, text).map_err(|e| e.to_string())?;
    let path = csv.to_str().unwrap();
    let commands: Vec<Vec<&str>> = vec![
        vec![
            "analyze",
            "--stat",
            "l",
            "--reps",
            "400",
            "--seed",
            "7",
            "--ci",
            "--histogram",
            path,
        ],
        vec![
            "analyze",
            "--stat",
            "f",
            "--design",
            "stratified",
            "--reps",
            "300",
            "--seed",
            "3",
            path,
        ],
        vec![
            "analyze", "--stat", "n", "--design", "rem", "--rem-a", "2", "--reps", "300", "--seed",
            "5", path,
        ],
        vec![
            "permlm", "--scheme", "terbraak", "--reps", "300", "--seed", "4", path,
        ],
        vec![
            "simulate",
            "complete-null",
            "--seed",
            "12",
            "--reps",
            "40",
            "--permutations",
            "60",
            "--p-values",
        ],
    ];
    let bin = env!("CARGO_BIN_EXE_randtest");
    for args in &commands {
        let mut outputs = Vec::new();
        for threads in ["1", "8", "8"] {
            let out = Command::new(bin)
                .args(args)
                .env("RANDTEST_THREADS", threads)
                .output()
                .map_err(|e| e.to_string())?;
            if !out.status.success() {
                return Err(format!(
                    "`{}` failed: {}",
                    args.join(" "),
                    String::from_utf8_lossy(&out.stdout)
                ));
            }
            outputs.push(out.stdout);
        }
        if outputs.windows(2).any(|w| w[0] != w[1]) {
            return Err(format!("`{}` output differs across runs", args[0]));
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
    Ok(format!(
        "{} commands byte-identical with 1 and 8 threads",
        commands.len()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("exactness under the sharp null", criterion_1),
        ("regression-adjustment identities", criterion_2),
        ("closed-form ANCOVA and permutation replicates", criterion_3),
        ("stratified type-I error pattern", criterion_4),
        ("stratified power ordering", criterion_5),
        ("rerandomization acceptance rate", criterion_6),
        ("truncated-normal constructs", criterion_7),
        (
            "rerandomization invalidity of unadjusted robust-t",
            criterion_8,
        ),
        ("confidence interval duality and coverage", criterion_9),
        ("determinism across thread counts", criterion_10),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = run();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail} [{secs:.1}s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail} [{secs:.1}s]", i + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
