//! Sample-level quantities: covariances, squared correlations, the sum
//! statistic `T`, the max statistic, the Rao-score test and the exact
//! `I / II / III` decomposition of `T`.

use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CorrMatrix;
use crate::moments::{f_partial_unchecked, MultiIndex};
use crate::theory::{normal_sf, upper_quantile_unchecked};

// Centered sum of squares at or below this fraction of the raw sum of
// squares is treated as a zero-variance column.
const DEGENERATE_RATIO: f64 = 1e-20;

/// `n` samples of `m` variables, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    n: usize,
    m: usize,
    values: Vec<f64>,
    names: Option<Vec<String>>,
}

impl DataMatrix {
    /// Builds from column-major values (`values[p * n + i]` is sample `i` of variable `p`).
    pub fn from_columns(n: usize, m: usize, values: Vec<f64>) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::DimensionMismatch(format!(
                "data needs at least one sample and one variable (got n = {n}, m = {m})"
            )));
        }
        if values.len() != n * m {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for {n} x {m}, got {}",
                n * m,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Parse(format!(
                "non-finite value at sample {}, variable {}",
                pos % n,
                pos / n
            )));
        }
        Ok(Self {
            n,
            m,
            values,
            names: None,
        })
    }

    /// Builds from sample rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        let mut values = vec![0.0; n * m];
        for (i, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::DimensionMismatch(format!(
                    "row {i} has {} values, expected {m}",
                    row.len()
                )));
            }
            for (p, &v) in row.iter().enumerate() {
                values[p * n + i] = v;
            }
        }
        Self::from_columns(n, m, values)
    }

    /// Parses CSV with one sample per line; `header` skips and records a
    /// first line of column names.
    pub fn from_csv<R: Read>(reader: R, header: bool) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(header)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(reader);
        let names = if header {
            Some(rdr.headers()?.iter().map(str::to_string).collect::<Vec<_>>())
        } else {
            None
        };
        let mut rows = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>().map_err(|_| {
                        Error::Parse(format!("record {}: cannot parse {f:?} as a number", line + 1))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::Parse("no data rows".into()));
        }
        let mut data = Self::from_rows(&rows)?;
        if let Some(names) = names {
            if names.len() != data.m {
                return Err(Error::DimensionMismatch(format!(
                    "header has {} names but rows have {} values",
                    names.len(),
                    data.m
                )));
            }
            data.names = Some(names);
        }
        Ok(data)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            let row: Vec<String> = (0..self.m).map(|p| format!("{}", self.get(i, p))).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, p: usize) -> f64 {
        self.values[p * self.n + i]
    }

    #[inline]
    pub fn column(&self, p: usize) -> &[f64] {
        &self.values[p * self.n..(p + 1) * self.n]
    }

    pub fn column_name(&self, p: usize) -> Option<&str> {
        self.names.as_ref().map(|names| names[p].as_str())
    }

    /// Same data with columns reordered so that new column `k` is old column `perm[k]`.
    pub fn permute_columns(&self, perm: &[usize]) -> Self {
        let mut values = Vec::with_capacity(self.values.len());
        for &p in perm {
            values.extend_from_slice(self.column(p));
        }
        Self {
            n: self.n,
            m: self.m,
            values,
            names: None,
        }
    }

    fn degenerate(&self, p: usize) -> Error {
        Error::DegenerateColumn {
            column: p,
            name: self.column_name(p).map(str::to_string),
        }
    }

    fn check_index(&self, p: usize) -> Result<()> {
        if p >= self.m {
            Err(Error::IndexOutOfRange { index: p, dim: self.m })
        } else {
            Ok(())
        }
    }
}

/// Sample covariance convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
pub enum CovMode {
    /// `S_pq = n⁻¹ Σᵢ X_pi X_qi`, no mean subtraction.
    #[default]
    #[serde(rename = "zero-mean")]
    #[value(name = "zero-mean")]
    KnownZeroMean,
    /// Column means removed, divisor `n − 1`.
    #[serde(rename = "centered")]
    #[value(name = "centered")]
    SampleCentered,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// `S_pq` under the given convention.
pub fn sample_cov(data: &DataMatrix, p: usize, q: usize, mode: CovMode) -> Result<f64> {
    data.check_index(p)?;
    data.check_index(q)?;
    let (xp, xq) = (data.column(p), data.column(q));
    let n = data.n as f64;
    Ok(match mode {
        CovMode::KnownZeroMean => xp.iter().zip(xq).map(|(a, b)| a * b).sum::<f64>() / n,
        CovMode::SampleCentered => {
            let (mp, mq) = (mean(xp), mean(xq));
            xp.iter().zip(xq).map(|(a, b)| (a - mp) * (b - mq)).sum::<f64>() / (n - 1.0)
        }
    })
}

fn column_is_degenerate(col: &[f64], mode: CovMode) -> bool {
    let raw: f64 = col.iter().map(|v| v * v).sum();
    match mode {
        CovMode::KnownZeroMean => raw == 0.0,
        CovMode::SampleCentered => {
            let mu = mean(col);
            let ss: f64 = col.iter().map(|v| (v - mu) * (v - mu)).sum();
            ss <= DEGENERATE_RATIO * raw
        }
    }
}

/// `ρ̂²_pq = S_pq² / (S_pp S_qq)`.
pub fn rho_hat_sq(data: &DataMatrix, p: usize, q: usize, mode: CovMode) -> Result<f64> {
    data.check_index(p)?;
    data.check_index(q)?;
    for c in [p, q] {
        if column_is_degenerate(data.column(c), mode) {
            return Err(data.degenerate(c));
        }
    }
    let spq = sample_cov(data, p, q, mode)?;
    let spp = sample_cov(data, p, p, mode)?;
    let sqq = sample_cov(data, q, q, mode)?;
    Ok((spq * spq / (spp * sqq)).min(1.0))
}

/// Shifted columns and their sums of squares, ready for pairwise products.
struct PreparedColumns {
    n: usize,
    values: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl PreparedColumns {
    fn new(data: &DataMatrix, mode: CovMode) -> Result<Self> {
        let n = data.n;
        let mut values = Vec::with_capacity(n * data.m);
        let mut sum_sq = Vec::with_capacity(data.m);
        for p in 0..data.m {
            let col = data.column(p);
            if column_is_degenerate(col, mode) {
                return Err(data.degenerate(p));
            }
            let shift = match mode {
                CovMode::KnownZeroMean => 0.0,
                CovMode::SampleCentered => mean(col),
            };
            let start = values.len();
            values.extend(col.iter().map(|v| v - shift));
            sum_sq.push(values[start..].iter().map(|v| v * v).sum());
        }
        Ok(Self { n, values, sum_sq })
    }

    #[inline]
    fn rho_sq(&self, p: usize, q: usize) -> f64 {
        let a = &self.values[p * self.n..(p + 1) * self.n];
        let b = &self.values[q * self.n..(q + 1) * self.n];
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        (dot * dot / (self.sum_sq[p] * self.sum_sq[q])).min(1.0)
    }
}

/// `T` and the max statistic from one pass over all pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairSummary {
    pub t: f64,
    pub max: f64,
}

pub fn pair_summary(data: &DataMatrix, mode: CovMode) -> Result<PairSummary> {
    let cols = PreparedColumns::new(data, mode)?;
    let mut t = 0.0;
    let mut max = 0.0_f64;
    for p in 0..data.m {
        for q in (p + 1)..data.m {
            let r2 = cols.rho_sq(p, q);
            t += r2;
            max = max.max(r2);
        }
    }
    Ok(PairSummary { t, max })
}

/// `T = Σ_{p<q} ρ̂²_pq`.
pub fn statistic_t(data: &DataMatrix, mode: CovMode) -> Result<f64> {
    Ok(pair_summary(data, mode)?.t)
}

/// `max_{p<q} ρ̂²_pq`.
pub fn max_statistic(data: &DataMatrix, mode: CovMode) -> Result<f64> {
    Ok(pair_summary(data, mode)?.max)
}

/// Outcome of the level-`α` Rao-score test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub m: usize,
    pub n: usize,
    /// `T`
    pub t_value: f64,
    /// `T − m(m−1)/(2n)`
    pub centered: f64,
    /// `n · centered / m`
    pub z_value: f64,
    pub p_value: f64,
    pub alpha: f64,
    pub z_alpha: f64,
    pub reject: bool,
}

impl TestReport {
    /// Applies the decision rule `T − m(m−1)/(2n) > (m/n) z_α` to a computed `T`.
    pub fn from_statistic(t_value: f64, m: usize, n: usize, alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
        }
        let (mf, nf) = (m as f64, n as f64);
        let centered = t_value - mf * (mf - 1.0) / (2.0 * nf);
        let z_alpha = upper_quantile_unchecked(alpha);
        let z_value = nf * centered / mf;
        Ok(Self {
            m,
            n,
            t_value,
            centered,
            z_value,
            p_value: normal_sf(z_value),
            alpha,
            z_alpha,
            reject: centered > (mf / nf) * z_alpha,
        })
    }
}

pub fn rao_score_test(data: &DataMatrix, alpha: f64, mode: CovMode) -> Result<TestReport> {
    if data.m < 2 || data.n < 2 {
        return Err(Error::DimensionMismatch(format!(
            "the test needs n >= 2 and m >= 2 (got n = {}, m = {})",
            data.n, data.m
        )));
    }
    let t = statistic_t(data, mode)?;
    TestReport::from_statistic(t, data.m, data.n, alpha)
}

fn check_dims(data: &DataMatrix, r: &CorrMatrix) -> Result<()> {
    if data.m != r.dim() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} variables but R is {} x {}",
            data.m,
            r.dim(),
            r.dim()
        )));
    }
    Ok(())
}

/// Centered pair products `c_i = X_pi X_qi − ρ_pq`.
fn centered_products<'a>(data: &'a DataMatrix, p: usize, q: usize, rho: f64) -> impl Iterator<Item = f64> + 'a {
    data.column(p)
        .iter()
        .zip(data.column(q))
        .map(move |(a, b)| a * b - rho)
}

/// `I_pq = ((Σᵢ cᵢ)² − Σᵢ cᵢ²) / n²`.
fn term_i_pair(data: &DataMatrix, p: usize, q: usize, rho: f64) -> f64 {
    let (mut s, mut s2) = (0.0, 0.0);
    for c in centered_products(data, p, q, rho) {
        s += c;
        s2 += c * c;
    }
    let n = data.n as f64;
    (s * s - s2) / (n * n)
}

/// `I = Σ_{p<q} (2/n²) Σ_{i<j} c_i c_j` (zero-mean covariances).
pub fn term_i(data: &DataMatrix, r: &CorrMatrix) -> Result<f64> {
    check_dims(data, r)?;
    let mut acc = 0.0;
    for p in 0..data.m {
        for q in (p + 1)..data.m {
            acc += term_i_pair(data, p, q, r.rho(p, q));
        }
    }
    Ok(acc)
}

/// `Y₀..Y_n` with `Y₀ = Y₁ = 0` and
/// `Y_i = (2/n²) Σ_{p<q} Σ_{j<i} c_{pq,i} c_{pq,j}` (here `i` is 1-based).
pub fn martingale_differences(data: &DataMatrix, r: &CorrMatrix) -> Result<Vec<f64>> {
    check_dims(data, r)?;
    let n = data.n;
    let scale = 2.0 / (n as f64 * n as f64);
    let mut y = vec![0.0; n + 1];
    for p in 0..data.m {
        for q in (p + 1)..data.m {
            let mut prefix = 0.0;
            for (i, c) in centered_products(data, p, q, r.rho(p, q)).enumerate() {
                // sample i (0-based) is Y_{i+1}
                y[i + 1] += scale * c * prefix;
                prefix += c;
            }
        }
    }
    Ok(y)
}

/// Centered zero-mean covariances `(S̄_pp, S̄_qq, S̄_pq)` of one pair.
fn centered_covs(data: &DataMatrix, p: usize, q: usize, rho: f64) -> (f64, f64, f64) {
    let n = data.n as f64;
    let (xp, xq) = (data.column(p), data.column(q));
    let spp = xp.iter().map(|v| v * v).sum::<f64>() / n;
    let sqq = xq.iter().map(|v| v * v).sum::<f64>() / n;
    let spq = xp.iter().zip(xq).map(|(a, b)| a * b).sum::<f64>() / n;
    (spp - 1.0, sqq - 1.0, spq - rho)
}

/// Which part of `II` a Taylor multi-index contributes to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaylorGroup {
    /// `(0, 0, 2)`: split into the diagonal square sum (in `II₁`) and `I`.
    Split,
    First,
    Second,
}

pub fn taylor_group(lambda: MultiIndex) -> TaylorGroup {
    match lambda {
        MultiIndex(0, 0, 2) => TaylorGroup::Split,
        MultiIndex(1, 1, 2) => TaylorGroup::Second,
        MultiIndex(_, _, 2) => TaylorGroup::First,
        _ => TaylorGroup::Second,
    }
}

/// Terms of one pair.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PairTerms {
    i: f64,
    ii1: f64,
    ii2: f64,
}

fn pair_terms(data: &DataMatrix, p: usize, q: usize, rho: f64, lambdas: &[MultiIndex]) -> PairTerms {
    let n = data.n as f64;
    let diag = centered_products(data, p, q, rho).map(|c| c * c).sum::<f64>() / (n * n);
    let (dpp, dqq, dpq) = centered_covs(data, p, q, rho);
    let mut ii1 = diag;
    let mut ii2 = 0.0;
    for &lam in lambdas {
        let group = taylor_group(lam);
        if group == TaylorGroup::Split {
            continue;
        }
        let coef = f_partial_unchecked(lam, 1.0, 1.0, rho) / lam.factorial();
        if coef == 0.0 {
            continue;
        }
        let term = coef * dpp.powi(lam.0 as i32) * dqq.powi(lam.1 as i32) * dpq.powi(lam.2 as i32);
        match group {
            TaylorGroup::First => ii1 += term,
            _ => ii2 += term,
        }
    }
    PairTerms {
        i: term_i_pair(data, p, q, rho),
        ii1,
        ii2,
    }
}

/// `II` together with its split `II = II₁ + II₂`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TermII {
    pub ii: f64,
    pub ii1: f64,
    pub ii2: f64,
}

pub fn term_ii(data: &DataMatrix, r: &CorrMatrix) -> Result<TermII> {
    check_dims(data, r)?;
    let lambdas = MultiIndex::all_with_order(1, 4);
    let (mut ii1, mut ii2) = (0.0, 0.0);
    for p in 0..data.m {
        for q in (p + 1)..data.m {
            let t = pair_terms(data, p, q, r.rho(p, q), &lambdas);
            ii1 += t.ii1;
            ii2 += t.ii2;
        }
    }
    Ok(TermII {
        ii: ii1 + ii2,
        ii1,
        ii2,
    })
}

/// `T − ½‖R − I‖²_F = I + II + III` with `III` the exact per-pair Taylor remainder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub t_value: f64,
    pub half_signal_sq: f64,
    pub term_i: f64,
    pub term_ii: f64,
    pub term_ii1: f64,
    pub term_ii2: f64,
    pub term_iii: f64,
    /// `|T − ½‖R − I‖²_F − (I + II + III)|`
    pub residual: f64,
}

impl Decomposition {
    pub fn relative_residual(&self) -> f64 {
        self.residual / self.t_value.abs().max(f64::MIN_POSITIVE)
    }
}

/// Decomposes `T` (zero-mean covariances) around the population `R`.
pub fn decompose(data: &DataMatrix, r: &CorrMatrix) -> Result<Decomposition> {
    check_dims(data, r)?;
    let t_value = statistic_t(data, CovMode::KnownZeroMean)?;
    let lambdas = MultiIndex::all_with_order(1, 4);
    let (mut ti, mut ii1, mut ii2, mut iii) = (0.0, 0.0, 0.0, 0.0);
    for p in 0..data.m {
        for q in (p + 1)..data.m {
            let rho = r.rho(p, q);
            let terms = pair_terms(data, p, q, rho, &lambdas);
            let (dpp, dqq, dpq) = centered_covs(data, p, q, rho);
            let spq = dpq + rho;
            let r2 = spq * spq / ((dpp + 1.0) * (dqq + 1.0));
            ti += terms.i;
            ii1 += terms.ii1;
            ii2 += terms.ii2;
            iii += (r2 - rho * rho) - terms.i - (terms.ii1 + terms.ii2);
        }
    }
    let half = r.half_signal_sq();
    let ii = ii1 + ii2;
    Ok(Decomposition {
        t_value,
        half_signal_sq: half,
        term_i: ti,
        term_ii: ii,
        term_ii1: ii1,
        term_ii2: ii2,
        term_iii: iii,
        residual: (t_value - half - (ti + ii + iii)).abs(),
    })
}

/// `max_{p,q} |S_pq − ρ_pq|` over all ordered pairs including the diagonal.
pub fn max_abs_centered_cov(data: &DataMatrix, r: &CorrMatrix) -> Result<f64> {
    check_dims(data, r)?;
    let mut best = 0.0_f64;
    for p in 0..data.m {
        for q in p..data.m {
            let s = sample_cov(data, p, q, CovMode::KnownZeroMean)?;
            best = best.max((s - r.rho(p, q)).abs());
        }
    }
    Ok(best)
}
