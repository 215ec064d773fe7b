//! Correlation matrices on the alternative side, calibrated to an exact
//! signal size, and reproducible Gaussian sampling from them.

use std::fmt;
use std::str::FromStr;

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::matrix::{CholeskyFactor, CorrMatrix};
use crate::statistics::DataMatrix;
use crate::theory::upper_quantile_unchecked;

/// Master seed of every random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

// Each row owns a 2^32-word window of its (master, trial) stream.
const ROW_WORDS: u128 = 1 << 32;

impl Seed {
    /// Generator positioned at the start of `(trial, row)`.
    pub fn stream(self, trial: u64, row: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.0);
        rng.set_stream(trial);
        rng.set_word_pos(row as u128 * ROW_WORDS);
        rng
    }
}

/// Uniform on the open interval (0, 1) from the top 53 bits of a draw.
#[inline]
fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Standard normal draw by inversion.
#[inline]
pub fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    upper_quantile_unchecked(open_uniform(rng))
}

/// Dependence pattern of a one-parameter alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlternativeFamily {
    /// Every off-diagonal entry equal to `ρ`.
    Equicorrelation,
    /// `ρ` on the disjoint pairs `(0, 1), (2, 3), ...`, `count` of them.
    SparsePairs { count: usize },
    /// `ρ` wherever `1 <= |p − q| <= bandwidth`.
    Banded { bandwidth: usize },
}

impl AlternativeFamily {
    /// Number of nonzero off-diagonal entries (both triangles) at dimension `m`.
    pub fn off_diagonal_count(&self, m: usize) -> usize {
        match *self {
            Self::Equicorrelation => m * m.saturating_sub(1),
            Self::SparsePairs { count } => 2 * count.min(m / 2),
            Self::Banded { bandwidth } => {
                let w = bandwidth.min(m.saturating_sub(1));
                (1..=w).map(|d| 2 * (m - d)).sum()
            }
        }
    }

    fn has_entry(&self, p: usize, q: usize) -> bool {
        if p == q {
            return false;
        }
        match *self {
            Self::Equicorrelation => true,
            Self::SparsePairs { count } => p / 2 == q / 2 && p / 2 < count,
            Self::Banded { bandwidth } => p.abs_diff(q) <= bandwidth,
        }
    }
}

impl fmt::Display for AlternativeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Equicorrelation => write!(f, "equicorrelation"),
            Self::SparsePairs { count } => write!(f, "sparse-pairs:{count}"),
            Self::Banded { bandwidth } => write!(f, "banded:{bandwidth}"),
        }
    }
}

impl FromStr for AlternativeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let param = |name: &str| -> Result<usize> {
            let a = arg.ok_or_else(|| Error::Config(format!("family {name} needs a parameter, e.g. {name}:2")))?;
            match a.parse::<usize>() {
                Ok(v) if v > 0 => Ok(v),
                _ => Err(Error::Config(format!("family {name}: parameter must be a positive integer, got {a:?}"))),
            }
        };
        match kind {
            "equicorrelation" if arg.is_none() => Ok(Self::Equicorrelation),
            "sparse-pairs" => Ok(Self::SparsePairs { count: param(kind)? }),
            "banded" => Ok(Self::Banded { bandwidth: param(kind)? }),
            _ => Err(Error::Config(format!(
                "unknown family {s:?} (expected equicorrelation, sparse-pairs:K or banded:W)"
            ))),
        }
    }
}

impl Serialize for AlternativeFamily {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for AlternativeFamily {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// The family's matrix at level `rho`.
pub fn make_family_matrix(family: AlternativeFamily, rho: f64, m: usize) -> Result<CorrMatrix> {
    if m == 0 {
        return Err(Error::InvalidMatrix("dimension must be positive".into()));
    }
    if !rho.is_finite() {
        return Err(Error::InvalidMatrix(format!("rho must be finite, got {rho}")));
    }
    let in_range = match family {
        Family::Equicorrelation => rho < 1.0 && (m < 2 || rho > -1.0 / (m as f64 - 1.0)),
        Family::SparsePairs { count } => {
            if 2 * count > m {
                return Err(Error::Config(format!(
                    "sparse-pairs:{count} needs m >= {}, got m = {m}",
                    2 * count
                )));
            }
            rho.abs() < 1.0
        }
        Family::Banded { .. } => rho.abs() < 1.0,
    };
    if !in_range {
        return Err(Error::NotPositiveSemidefinite { pivot: 0 });
    }
    let mut entries = vec![0.0; m * m];
    for p in 0..m {
        for q in 0..m {
            entries[p * m + q] = if p == q {
                1.0
            } else if family.has_entry(p, q) {
                rho
            } else {
                0.0
            };
        }
    }
    CorrMatrix::from_entries(m, entries)
}

type Family = AlternativeFamily;

/// Member of the family with `‖R − I‖_F = b √(m/n)`.
pub fn calibrate_to_theta(family: AlternativeFamily, b: f64, m: usize, n: usize) -> Result<CorrMatrix> {
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("signal level b must be >= 0, got {b}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::Domain(format!("m and n must be positive (got m = {m}, n = {n})")));
    }
    if b == 0.0 {
        return Ok(CorrMatrix::identity(m));
    }
    let target = b * (m as f64 / n as f64).sqrt();
    let nnz = family.off_diagonal_count(m);
    if nnz == 0 {
        return Err(Error::Unachievable(format!(
            "{family} has no off-diagonal entries at m = {m}"
        )));
    }
    let rho = target / (nnz as f64).sqrt();
    match make_family_matrix(family, rho, m) {
        Ok(r) => Ok(r),
        Err(Error::NotPositiveSemidefinite { .. }) => Err(Error::Unachievable(format!(
            "{family}: signal {target:.6} at m = {m}, n = {n} needs rho = {rho:.6}, outside the positive semidefinite range"
        ))),
        Err(e) => Err(e),
    }
}

/// `n` rows `x = L z` with `z` drawn from the `(seed, trial, row)` streams.
pub fn sample_gaussian(chol: &CholeskyFactor, n: usize, seed: Seed, trial: u64) -> DataMatrix {
    let m = chol.dim();
    let identity = chol.is_identity();
    let mut values = vec![0.0; n * m];
    let mut z = vec![0.0; m];
    let mut x = vec![0.0; m];
    for i in 0..n {
        let mut rng = seed.stream(trial, i as u64);
        for zp in z.iter_mut() {
            *zp = standard_normal(&mut rng);
        }
        let row = if identity {
            &z
        } else {
            chol.apply(&z, &mut x);
            &x
        };
        for (p, &v) in row.iter().enumerate() {
            values[p * n + i] = v;
        }
    }
    DataMatrix::from_columns(n, m, values).expect("sampled values are finite and sized n x m")
}

/// Random correlation matrix from a `factors`-dimensional loading model
/// plus idiosyncratic noise, normalized to unit diagonal.
pub fn random_correlation(m: usize, factors: usize, seed: u64) -> Result<CorrMatrix> {
    if m == 0 {
        return Err(Error::InvalidMatrix("dimension must be positive".into()));
    }
    let mut rng = Seed(seed).stream(u64::MAX, 0);
    let loadings: Vec<f64> = (0..m * factors).map(|_| standard_normal(&mut rng)).collect();
    let noise: Vec<f64> = (0..m).map(|_| 0.2 + open_uniform(&mut rng)).collect();
    let mut cov = vec![0.0; m * m];
    for p in 0..m {
        for q in 0..m {
            let mut s: f64 = (0..factors)
                .map(|k| loadings[p * factors + k] * loadings[q * factors + k])
                .sum();
            if p == q {
                s += noise[p];
            }
            cov[p * m + q] = s;
        }
    }
    let scale: Vec<f64> = (0..m).map(|p| cov[p * m + p].sqrt()).collect();
    let mut entries = vec![0.0; m * m];
    for p in 0..m {
        for q in 0..m {
            entries[p * m + q] = if p == q {
                1.0
            } else {
                cov[p * m + q] / (scale[p] * scale[q])
            };
        }
    }
    // exact symmetry
    for p in 0..m {
        for q in (p + 1)..m {
            entries[q * m + p] = entries[p * m + q];
        }
    }
    CorrMatrix::from_entries(m, entries)
}
