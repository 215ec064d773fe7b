//! Monte Carlo engine: null calibration, power curves against the
//! asymptotic prediction, and moment-formula verification.
//!
//! Trials run on a dedicated rayon pool. Every trial draws from its own
//! counter-based stream and results are reduced in trial order, so output
//! does not depend on the number of workers.

use std::io::Write;
use std::path::Path;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generators::{calibrate_to_theta, sample_gaussian, AlternativeFamily, Seed};
use crate::matrix::CorrMatrix;
use crate::moments::{
    central_pair_moment, central_product_moment, expected_ii1, f_partial, h1, h2, h2_bar, h3, h3_bar,
    isserlis_moment, kernel_expectations, kernel_expectations_by_expansion, pair_partitions, s_sum,
    var_i_exact, MultiIndex,
};
use crate::statistics::{decompose, statistic_t, term_i, term_ii, CovMode, DataMatrix, TestReport};
use crate::theory::{asymptotic_power, normal_cdf};

pub const VERSION: &str = concat!("hidim ", env!("CARGO_PKG_VERSION"));

/// Largest relative decomposition residual tolerated inside simulated trials.
pub const DECOMPOSITION_TOLERANCE: f64 = 1e-9;

/// `|z|` bound for Monte Carlo gates.
pub const Z_GATE: f64 = 3.0;

pub const MIN_TRIALS: usize = 100;

pub const POWER_TOLERANCE_NOTE: &str = "the asymptotic power is a limit statement with no finite-sample error rate; \
     tolerances on empirical vs predicted power are engineering choices";

fn default_workers() -> usize {
    1
}

/// Experiment configuration. `workers` only affects scheduling and is not
/// written into reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    pub alpha: f64,
    pub seed: Seed,
    pub family: AlternativeFamily,
    pub b_grid: Vec<f64>,
    pub cov_mode: CovMode,
    #[serde(skip_serializing, default = "default_workers")]
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            m: 40,
            n: 80,
            trials: 1000,
            alpha: 0.05,
            seed: Seed(42),
            family: AlternativeFamily::Equicorrelation,
            b_grid: vec![0.0, 1.0, 2.0, 3.0],
            cov_mode: CovMode::KnownZeroMean,
            workers: default_workers(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.m < 2 || self.n < 2 {
            return fail(format!("need m >= 2 and n >= 2 (got m = {}, n = {})", self.m, self.n));
        }
        if self.trials < MIN_TRIALS {
            return fail(format!("trials must be at least {MIN_TRIALS}, got {}", self.trials));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return fail(format!("alpha must lie in (0, 1), got {}", self.alpha));
        }
        if self.workers == 0 {
            return fail("workers must be positive".into());
        }
        if let Some(b) = self.b_grid.iter().find(|b| !(**b >= 0.0) || !b.is_finite()) {
            return fail(format!("b grid values must be finite and >= 0, got {b}"));
        }
        if self.b_grid.windows(2).any(|w| w[0] > w[1]) {
            return fail("b grid must be sorted ascending".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Runs `trial(t)` for `t = 0..trials` on `workers` threads, returning
/// results in trial order. The first error in trial order wins.
pub fn run_trials<T, F>(workers: usize, trials: usize, trial: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<T>> = pool.install(|| (0..trials as u64).into_par_iter().map(&trial).collect());
    results.into_iter().collect()
}

/// Kolmogorov–Smirnov distance between the empirical distribution of
/// `samples` and `Φ`.
pub fn ks_statistic(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal_cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// Statistic `T` for one simulated dataset. With zero-mean covariances and
/// a known `R` the exact decomposition is checked on the way.
fn trial_statistic(data: &DataMatrix, r: &CorrMatrix, mode: CovMode) -> Result<f64> {
    match mode {
        CovMode::KnownZeroMean => {
            let dec = decompose(data, r)?;
            if dec.relative_residual() > DECOMPOSITION_TOLERANCE {
                return Err(Error::Invariant(format!(
                    "decomposition residual {:.3e} relative to T exceeds {DECOMPOSITION_TOLERANCE:e}",
                    dec.relative_residual()
                )));
            }
            Ok(dec.t_value)
        }
        CovMode::SampleCentered => statistic_t(data, mode),
    }
}

/// Null calibration summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullReport {
    pub version: String,
    pub config: SimConfig,
    pub empirical_size: f64,
    pub mc_stderr: f64,
    /// KS distance of the standardized statistics `n (T − m(m−1)/(2n)) / m` to `Φ`.
    pub ks_statistic: f64,
    pub z_samples_path: Option<String>,
    #[serde(skip)]
    pub z_samples: Vec<f64>,
}

impl NullReport {
    /// Writes the standardized statistics, one per line in trial order, and records the path.
    pub fn write_z_samples(&mut self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "trial,z")?;
        for (t, z) in self.z_samples.iter().enumerate() {
            writeln!(out, "{t},{z:?}")?;
        }
        out.flush()?;
        self.z_samples_path = Some(path.display().to_string());
        Ok(())
    }
}

pub fn run_null(config: &SimConfig) -> Result<NullReport> {
    config.validate()?;
    let (m, n) = (config.m, config.n);
    let r = CorrMatrix::identity(m);
    let chol = r.cholesky()?;
    let reports = run_trials(config.workers, config.trials, |t| {
        let data = sample_gaussian(&chol, n, config.seed, t);
        let stat = trial_statistic(&data, &r, config.cov_mode)?;
        TestReport::from_statistic(stat, m, n, config.alpha)
    })?;
    let rejections = reports.iter().filter(|r| r.reject).count();
    let size = rejections as f64 / config.trials as f64;
    let z_samples: Vec<f64> = reports.iter().map(|r| r.z_value).collect();
    Ok(NullReport {
        version: VERSION.into(),
        config: config.clone(),
        empirical_size: size,
        mc_stderr: binomial_stderr(size, config.trials),
        ks_statistic: ks_statistic(&z_samples),
        z_samples_path: None,
        z_samples,
    })
}

fn binomial_stderr(p: f64, trials: usize) -> f64 {
    (p * (1.0 - p) / trials as f64).sqrt()
}

/// One grid point of a power curve. Skipped points carry no empirical values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub b: f64,
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    pub empirical_power: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub predicted_power: f64,
    pub skipped: bool,
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub version: String,
    pub config: SimConfig,
    pub note: String,
    pub points: Vec<PowerPoint>,
}

impl PowerReport {
    /// Largest `|empirical − predicted|` over the points that ran.
    pub fn max_abs_deviation(&self) -> Option<f64> {
        self.points
            .iter()
            .filter_map(|p| p.empirical_power.map(|e| (e - p.predicted_power).abs()))
            .reduce(f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("b,m,n,trials,empirical_power,mc_stderr,predicted_power,skipped\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        for p in &self.points {
            out.push_str(&format!(
                "{:?},{},{},{},{},{},{:?},{}\n",
                p.b,
                p.m,
                p.n,
                p.trials,
                opt(p.empirical_power),
                opt(p.mc_stderr),
                p.predicted_power,
                p.skipped
            ));
        }
        out
    }
}

/// Empirical rejection rate at every `b` of the grid. All grid points reuse
/// the same per-trial streams.
pub fn run_power_curve(config: &SimConfig) -> Result<PowerReport> {
    config.validate()?;
    let (m, n) = (config.m, config.n);
    let mut points = Vec::with_capacity(config.b_grid.len());
    for &b in &config.b_grid {
        let predicted = asymptotic_power(config.alpha, b)?.power;
        let r = match calibrate_to_theta(config.family, b, m, n) {
            Ok(r) => r,
            Err(Error::Unachievable(reason)) => {
                points.push(PowerPoint {
                    b,
                    m,
                    n,
                    trials: config.trials,
                    empirical_power: None,
                    mc_stderr: None,
                    predicted_power: predicted,
                    skipped: true,
                    skip_reason: Some(reason),
                });
                continue;
            }
            Err(e) => return Err(e),
        };
        let chol = r.cholesky()?;
        let rejects = run_trials(config.workers, config.trials, |t| {
            let data = sample_gaussian(&chol, n, config.seed, t);
            let stat = trial_statistic(&data, &r, config.cov_mode)?;
            Ok(TestReport::from_statistic(stat, m, n, config.alpha)?.reject)
        })?;
        let power = rejects.iter().filter(|&&x| x).count() as f64 / config.trials as f64;
        points.push(PowerPoint {
            b,
            m,
            n,
            trials: config.trials,
            empirical_power: Some(power),
            mc_stderr: Some(binomial_stderr(power, config.trials)),
            predicted_power: predicted,
            skipped: false,
            skip_reason: None,
        });
    }
    Ok(PowerReport {
        version: VERSION.into(),
        config: config.clone(),
        note: POWER_TOLERANCE_NOTE.into(),
        points,
    })
}

/// One verification row. Monte Carlo rows carry a standard error and
/// z-score; exact rows carry an error and tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub observed: f64,
    pub expected: f64,
    pub stderr: Option<f64>,
    pub z_score: Option<f64>,
    pub error: Option<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    pub fn monte_carlo(name: impl Into<String>, observed: f64, expected: f64, stderr: f64) -> Self {
        let z = (observed - expected) / stderr;
        Self {
            name: name.into(),
            observed,
            expected,
            stderr: Some(stderr),
            z_score: Some(z),
            error: None,
            tolerance: Z_GATE,
            pass: z.abs() <= Z_GATE,
        }
    }

    /// Relative error against `expected` (absolute when `expected` is 0).
    pub fn exact(name: impl Into<String>, observed: f64, expected: f64, tolerance: f64) -> Self {
        let err = if expected == 0.0 {
            observed.abs()
        } else {
            (observed - expected).abs() / expected.abs()
        };
        Self {
            name: name.into(),
            observed,
            expected,
            stderr: None,
            z_score: None,
            error: Some(err),
            tolerance,
            pass: err <= tolerance,
        }
    }

    /// Largest absolute error over a batch of comparisons, reported as one row.
    pub fn max_abs(name: impl Into<String>, max_err: f64, count: usize, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            observed: max_err,
            expected: 0.0,
            stderr: None,
            z_score: None,
            error: Some(max_err),
            tolerance,
            pass: max_err <= tolerance && count > 0,
        }
    }
}

/// Sample mean and the standard error of the mean.
fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn check_trials(trials: usize) -> Result<()> {
    if trials < 2 {
        return Err(Error::Config(format!("need at least 2 trials, got {trials}")));
    }
    Ok(())
}

/// Monte Carlo variance of `I` against the exact formula.
pub fn verify_var_i(r: &CorrMatrix, n: usize, trials: usize, seed: Seed, workers: usize) -> Result<Check> {
    check_trials(trials)?;
    let exact = var_i_exact(r, n)?;
    let chol = r.cholesky()?;
    let samples = run_trials(workers, trials, |t| {
        let data = sample_gaussian(&chol, n, seed, t);
        term_i(&data, r)
    })?;
    let count = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / count;
    let m2 = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / count;
    let m4 = samples.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / count;
    let mc_var = m2 * count / (count - 1.0);
    let stderr = ((m4 - m2 * m2) / count).sqrt();
    Ok(Check::monte_carlo(
        format!("var(I) m={} n={n}", r.dim()),
        mc_var,
        exact,
        stderr,
    ))
}

/// Monte Carlo mean of `II₁` against its exact expectation, and the mean of `I` against 0.
pub fn verify_e_ii1(r: &CorrMatrix, n: usize, trials: usize, seed: Seed, workers: usize) -> Result<[Check; 2]> {
    check_trials(trials)?;
    let exact = expected_ii1(r, n)?;
    let chol = r.cholesky()?;
    let samples = run_trials(workers, trials, |t| {
        let data = sample_gaussian(&chol, n, seed, t);
        Ok((term_ii(&data, r)?.ii1, term_i(&data, r)?))
    })?;
    let ii1: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let i: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (m_ii1, se_ii1) = mean_and_stderr(&ii1);
    let (m_i, se_i) = mean_and_stderr(&i);
    let tag = format!("m={} n={n}", r.dim());
    Ok([
        Check::monte_carlo(format!("E[II1] {tag}"), m_ii1, exact, se_ii1),
        Check::monte_carlo(format!("E[I] {tag}"), m_i, 0.0, se_i),
    ])
}

/// Monte Carlo means of the five kernels on i.i.d. bivariate normal quadruples.
pub fn verify_kernels(rho: f64, n: usize, trials: usize, seed: Seed, workers: usize) -> Result<Vec<Check>> {
    if !(rho.abs() < 1.0) {
        return Err(Error::Domain(format!("kernel checks need |rho| < 1, got {rho}")));
    }
    check_trials(trials)?;
    let closed = kernel_expectations(rho, n)?;
    let r = CorrMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]])?;
    let chol = r.cholesky()?;
    let samples = run_trials(workers, trials, |t| {
        let data = sample_gaussian(&chol, 4, seed, t);
        let pts: [(f64, f64); 4] = std::array::from_fn(|i| (data.get(i, 0), data.get(i, 1)));
        Ok([
            h1(&pts, rho, n),
            h2(&pts, rho, n),
            h2_bar(&pts, rho, n),
            h3(&pts, rho, n),
            h3_bar(&pts, rho, n),
        ])
    })?;
    let names = ["h1", "h2", "h2bar", "h3", "h3bar"];
    let expected = [closed.e_h1, closed.e_h2, closed.e_h2, closed.e_h3, closed.e_h3];
    Ok((0..5)
        .map(|k| {
            let col: Vec<f64> = samples.iter().map(|s| s[k]).collect();
            let (mean, se) = mean_and_stderr(&col);
            Check::monte_carlo(format!("E[{}] rho={rho} n={n}", names[k]), mean, expected[k], se)
        })
        .collect())
}

fn splitmix(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn double_factorial_odd(k: usize) -> f64 {
    (1..=k).map(|j| (2 * j - 1) as f64).product()
}

/// Deterministic identity checks of the moment engine and the decomposition.
pub fn verify_identities(seed: Seed) -> Result<Vec<Check>> {
    let mut rows = Vec::new();
    let mut state = seed.0;
    let mut next_index = |bound: usize| (splitmix(&mut state) % bound as u64) as usize;

    for k in 1..=6 {
        let count = pair_partitions(k)?.len() as f64;
        rows.push(Check::exact(format!("pair partitions k={k}"), count, double_factorial_odd(k), 0.0));
    }

    // central pair moments: closed form vs termwise Isserlis expansion
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for case in 0..50 {
        let m = 2 + next_index(6);
        let r = crate::generators::random_correlation(m, 2, seed.0.wrapping_add(case))?;
        for _ in 0..20 {
            let idx: [usize; 4] = std::array::from_fn(|_| next_index(m));
            let closed = central_pair_moment(idx[0], idx[1], idx[2], idx[3], &r)?;
            let expanded = central_product_moment(&[(idx[0], idx[1]), (idx[2], idx[3])], &r)?;
            let direct = isserlis_moment(&idx, &r)? - r.rho(idx[0], idx[1]) * r.rho(idx[2], idx[3]);
            let scale = closed.abs().max(1.0);
            worst = worst.max((closed - expanded).abs() / scale).max((closed - direct).abs() / scale);
            cases += 1;
        }
    }
    rows.push(Check::max_abs("central pair moment vs Isserlis", worst, cases, 1e-12));

    // Taylor-coefficient partials vs central differences
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for &u1 in &[0.5, 1.0, 2.0] {
        for &u2 in &[0.5, 1.0, 2.0] {
            for &u3 in &[-0.9, 0.0, 0.9] {
                for lam in MultiIndex::all_with_order(0, 4) {
                    let fd = finite_difference_partial(lam, [u1, u2, u3]);
                    let exact = f_partial(lam, u1, u2, u3)?;
                    worst = worst.max((fd - exact).abs());
                    cases += 1;
                }
            }
        }
    }
    rows.push(Check::max_abs("f partials vs finite differences", worst, cases, 1e-6));

    // S(2) closed form
    let r = crate::generators::random_correlation(20, 3, seed.0)?;
    let closed: f64 = (0..20)
        .flat_map(|p| ((p + 1)..20).map(move |q| (p, q)))
        .map(|(p, q)| {
            let r2 = r.rho(p, q).powi(2);
            1.0 + 2.0 * r2 + r2 * r2
        })
        .sum();
    rows.push(Check::exact("S(2) closed form", s_sum(2, &r)?, closed, 1e-12));

    // kernel closed forms vs polynomial expansion
    for &(rho, n) in &[(0.0, 10usize), (0.5, 10), (0.7, 6), (-0.3, 25)] {
        let closed = kernel_expectations(rho, n)?;
        let expanded = kernel_expectations_by_expansion(rho, n)?;
        for (name, a, b) in [
            ("h1", expanded.e_h1, closed.e_h1),
            ("h2", expanded.e_h2, closed.e_h2),
            ("h3", expanded.e_h3, closed.e_h3),
        ] {
            rows.push(Check::exact(format!("E[{name}] expansion rho={rho} n={n}"), a, b, 1e-12));
        }
    }

    // decomposition identity and martingale sum on random data
    let mut worst_dec: f64 = 0.0;
    let mut worst_mart: f64 = 0.0;
    for case in 0..20u64 {
        let m = 2 + next_index(10);
        let n = 2 + next_index(60);
        let r = crate::generators::random_correlation(m, 2, seed.0 ^ (case + 1))?;
        let data = sample_gaussian(&r.cholesky()?, n, seed, case);
        let dec = decompose(&data, &r)?;
        worst_dec = worst_dec.max(dec.relative_residual());
        let y = crate::statistics::martingale_differences(&data, &r)?;
        let i = term_i(&data, &r)?;
        worst_mart = worst_mart.max((y.iter().sum::<f64>() - i).abs() / i.abs().max(f64::MIN_POSITIVE));
    }
    rows.push(Check::max_abs("decomposition residual (relative)", worst_dec, 20, 1e-9));
    rows.push(Check::max_abs("sum of martingale differences vs I (relative)", worst_mart, 20, 1e-12));
    Ok(rows)
}

/// Step of the finite-difference check.
pub const FD_STEP: (i64, i64) = (1, 100_000);

/// `∂^λ f` for `f = u₃² / (u₁ u₂)` by mixed central differences with step
/// `h = 10⁻⁵` and one Richardson extrapolation against `2h`. Stencil values
/// are summed in exact rational arithmetic, which leaves only truncation
/// error.
pub fn finite_difference_partial(lam: MultiIndex, u: [f64; 3]) -> f64 {
    let h = BigRational::new(BigInt::from(FD_STEP.0), BigInt::from(FD_STEP.1));
    let u = u.map(|x| BigRational::from_float(x).expect("finite grid point"));
    let d1 = central_difference(lam, &u, &h);
    let d2 = central_difference(lam, &u, &(&h * BigInt::from(2)));
    let extrapolated = (d1 * BigInt::from(4) - d2) / BigInt::from(3);
    extrapolated.to_f64().unwrap_or(f64::NAN)
}

fn central_difference(lam: MultiIndex, u: &[BigRational; 3], h: &BigRational) -> BigRational {
    let f = |x: &[BigRational; 3]| &x[2] * &x[2] / (&x[0] * &x[1]);
    // δ^k with nodes at (k/2 − j) h, weights (−1)^j C(k, j)
    let stencil = |k: u32| -> Vec<(BigRational, BigRational)> {
        let half = BigRational::new(BigInt::from(k), BigInt::from(2));
        let mut binom = BigInt::from(1);
        let mut out = Vec::new();
        for j in 0..=k {
            let offset = (&half - BigRational::from_integer(BigInt::from(j))) * h;
            let w = if j % 2 == 0 { binom.clone() } else { -binom.clone() };
            out.push((offset, BigRational::from_integer(w)));
            binom = binom * BigInt::from(k - j) / BigInt::from(j + 1);
        }
        out
    };
    let (s0, s1, s2) = (stencil(lam.0), stencil(lam.1), stencil(lam.2));
    let mut acc = BigRational::from_integer(BigInt::from(0));
    for (a, wa) in &s0 {
        for (b, wb) in &s1 {
            for (c, wc) in &s2 {
                let x = [&u[0] + a, &u[1] + b, &u[2] + c];
                acc += wa * wb * wc * f(&x);
            }
        }
    }
    let order = lam.order() as i32;
    acc / num_traits::pow::pow(h.clone(), order as usize)
}
