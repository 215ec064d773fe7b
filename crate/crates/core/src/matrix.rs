//! Dense correlation matrices and their Cholesky factors.
//!
//! Storage is row-major `m * m`. All values are immutable after
//! construction.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Diagonal jitter ladder tried when the plain factorization fails.
pub const JITTER_LADDER: [f64; 3] = [1e-12, 1e-10, 1e-8];

const SYMMETRY_TOL: f64 = 1e-12;

/// A population correlation matrix `R` with unit diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMatrix {
    m: usize,
    entries: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct CorrMatrixJson {
    m: usize,
    rho: Vec<Vec<f64>>,
}

impl CorrMatrix {
    pub fn identity(m: usize) -> Self {
        let mut entries = vec![0.0; m * m];
        for p in 0..m {
            entries[p * m + p] = 1.0;
        }
        Self { m, entries }
    }

    /// Builds a correlation matrix from rows, checking unit diagonal,
    /// symmetry, `|rho| <= 1` and positive semidefiniteness.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let mut entries = Vec::with_capacity(m * m);
        for (p, row) in rows.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidMatrix(format!(
                    "row {p} has {} entries, expected {m}",
                    row.len()
                )));
            }
            entries.extend_from_slice(row);
        }
        Self::from_entries(m, entries)
    }

    /// Builds from a row-major buffer with the same validation as [`from_rows`](Self::from_rows).
    pub fn from_entries(m: usize, entries: Vec<f64>) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidMatrix("dimension must be positive".into()));
        }
        if entries.len() != m * m {
            return Err(Error::InvalidMatrix(format!(
                "expected {} entries, got {}",
                m * m,
                entries.len()
            )));
        }
        let mut entries = entries;
        for p in 0..m {
            if entries[p * m + p] != 1.0 {
                return Err(Error::InvalidMatrix(format!(
                    "diagonal entry ({p},{p}) is {}, expected 1",
                    entries[p * m + p]
                )));
            }
            for q in (p + 1)..m {
                let a = entries[p * m + q];
                let b = entries[q * m + p];
                if !a.is_finite() || !b.is_finite() {
                    return Err(Error::InvalidMatrix(format!("entry ({p},{q}) is not finite")));
                }
                if (a - b).abs() > SYMMETRY_TOL {
                    return Err(Error::InvalidMatrix(format!(
                        "not symmetric at ({p},{q}): {a} vs {b}"
                    )));
                }
                // Snap to exact symmetry so downstream sums are order independent.
                entries[q * m + p] = a;
                if a.abs() > 1.0 {
                    return Err(Error::NotPositiveSemidefinite { pivot: q });
                }
            }
        }
        cholesky_entries(m, &entries)?;
        Ok(Self { m, entries })
    }

    /// Dimension `m`.
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn rho(&self, p: usize, q: usize) -> f64 {
        self.entries[p * self.m + q]
    }

    /// Row-major entries.
    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.m).map(<[f64]>::to_vec).collect()
    }

    pub fn is_identity(&self) -> bool {
        (0..self.m).all(|p| (0..self.m).all(|q| p == q || self.rho(p, q) == 0.0))
    }

    /// `sum_{p<q} rho_pq^2`, i.e. half the squared Frobenius signal.
    pub fn half_signal_sq(&self) -> f64 {
        let mut acc = 0.0;
        for p in 0..self.m {
            for q in (p + 1)..self.m {
                let r = self.rho(p, q);
                acc += r * r;
            }
        }
        acc
    }

    /// Signal size `||R - I||_F`.
    pub fn frobenius_signal(&self) -> f64 {
        (2.0 * self.half_signal_sq()).sqrt()
    }

    /// Membership in the alternative class: `||R - I||_F >= b * sqrt(m / n)`.
    pub fn in_theta(&self, b: f64, n: usize) -> bool {
        self.frobenius_signal() >= b * (self.m as f64 / n as f64).sqrt()
    }

    pub fn cholesky(&self) -> Result<CholeskyFactor> {
        cholesky_entries(self.m, &self.entries)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&CorrMatrixJson {
            m: self.m,
            rho: self.rows(),
        })?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let parsed: CorrMatrixJson = serde_json::from_str(s)?;
        if parsed.rho.len() != parsed.m {
            return Err(Error::InvalidMatrix(format!(
                "field m = {} but rho has {} rows",
                parsed.m,
                parsed.rho.len()
            )));
        }
        Self::from_rows(&parsed.rho)
    }

    /// Headerless CSV, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for row in self.entries.chunks(self.m) {
            let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let row = rec
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad matrix entry {f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        Self::from_rows(&rows)
    }
}

/// Lower-triangular factor with `lower * lower^T = R + jitter_applied * I`.
#[derive(Debug, Clone, PartialEq)]
pub struct CholeskyFactor {
    m: usize,
    lower: Vec<f64>,
    jitter_applied: f64,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.lower[p * self.m + q]
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn jitter_applied(&self) -> f64 {
        self.jitter_applied
    }

    pub fn is_identity(&self) -> bool {
        let m = self.m;
        (0..m).all(|p| (0..=p).all(|q| self.get(p, q) == if p == q { 1.0 } else { 0.0 }))
    }

    /// `out = lower * z`, only touching the lower triangle.
    pub fn apply(&self, z: &[f64], out: &mut [f64]) {
        let m = self.m;
        for p in 0..m {
            let row = &self.lower[p * m..p * m + p + 1];
            out[p] = row.iter().zip(&z[..=p]).map(|(l, x)| l * x).sum();
        }
    }

    /// `lower * lower^T`, row-major.
    pub fn reconstruct(&self) -> Vec<f64> {
        let m = self.m;
        let mut out = vec![0.0; m * m];
        for p in 0..m {
            for q in 0..=p {
                let s: f64 = (0..=q).map(|k| self.get(p, k) * self.get(q, k)).sum();
                out[p * m + q] = s;
                out[q * m + p] = s;
            }
        }
        out
    }
}

/// Cholesky factorization of a symmetric row-major matrix, retrying with
/// the jitter ladder when a pivot is not strictly positive.
pub fn cholesky_entries(m: usize, entries: &[f64]) -> Result<CholeskyFactor> {
    let mut last_pivot = 0;
    for jitter in std::iter::once(0.0).chain(JITTER_LADDER) {
        match try_cholesky(m, entries, jitter) {
            Ok(lower) => {
                return Ok(CholeskyFactor {
                    m,
                    lower,
                    jitter_applied: jitter,
                })
            }
            Err(pivot) => last_pivot = pivot,
        }
    }
    Err(Error::NotPositiveSemidefinite { pivot: last_pivot })
}

fn try_cholesky(m: usize, a: &[f64], jitter: f64) -> std::result::Result<Vec<f64>, usize> {
    let mut l = vec![0.0; m * m];
    for j in 0..m {
        let mut d = a[j * m + j] + jitter;
        for k in 0..j {
            d -= l[j * m + k] * l[j * m + k];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let djj = d.sqrt();
        l[j * m + j] = djj;
        for i in (j + 1)..m {
            let mut s = a[i * m + j];
            for k in 0..j {
                s -= l[i * m + k] * l[j * m + k];
            }
            l[i * m + j] = s / djj;
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two(rho: f64) -> Result<CorrMatrix> {
        CorrMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]])
    }

    #[test]
    fn identity_has_zero_signal() {
        for m in 1..6 {
            assert_eq!(CorrMatrix::identity(m).frobenius_signal(), 0.0);
        }
    }

    #[test]
    fn signal_small_cases() {
        let r = two_by_two(0.5).unwrap();
        assert!((r.frobenius_signal() - 0.5f64.sqrt()).abs() < 1e-12);
        assert!((r.frobenius_signal() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);

        let r3 = CorrMatrix::from_rows(&[
            vec![1.0, 0.2, 0.2],
            vec![0.2, 1.0, 0.2],
            vec![0.2, 0.2, 1.0],
        ])
        .unwrap();
        // six off-diagonal entries of 0.2
        let direct: f64 = (0..6).map(|_| 0.04).sum::<f64>().sqrt();
        assert!((r3.frobenius_signal() - direct).abs() < 1e-12);
        assert!((r3.frobenius_signal() - 0.4898979486).abs() < 1e-10);
    }

    #[test]
    fn theta_boundary_is_inclusive() {
        // m = 4, n = 100: need signal 2 * sqrt(0.04) = 0.4 = rho * sqrt(12)
        let rho = 0.4 / 12f64.sqrt();
        let mut rows = vec![vec![rho; 4]; 4];
        for (p, row) in rows.iter_mut().enumerate() {
            row[p] = 1.0;
        }
        let r = CorrMatrix::from_rows(&rows).unwrap();
        let b = r.frobenius_signal() / (4.0f64 / 100.0).sqrt();
        assert!(r.in_theta(b, 100));
        assert!((b - 2.0).abs() < 1e-12);
        assert!(!r.in_theta(2.01, 100));
        assert!(!CorrMatrix::identity(4).in_theta(0.1, 100));
    }

    #[test]
    fn cholesky_examples() {
        let id = CorrMatrix::identity(3).cholesky().unwrap();
        assert_eq!(id.lower(), CorrMatrix::identity(3).entries());
        assert_eq!(id.jitter_applied(), 0.0);

        let l = two_by_two(0.6).unwrap().cholesky().unwrap();
        let expected = [1.0, 0.0, 0.6, 0.8];
        for (a, b) in l.lower().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn rho_above_one_is_rejected() {
        assert!(matches!(
            two_by_two(1.0000001),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
        let raw = [1.0, 1.0000001, 1.0000001, 1.0];
        assert!(matches!(
            cholesky_entries(2, &raw),
            Err(Error::NotPositiveSemidefinite { .. })
        ));
    }

    #[test]
    fn jitter_rescues_boundary_matrix() {
        // rank-one all-ones matrix is PSD but singular
        let m = 5;
        let ones = vec![1.0; m * m];
        let f = cholesky_entries(m, &ones).unwrap();
        assert!(f.jitter_applied() > 0.0);
        let rec = f.reconstruct();
        for p in 0..m {
            for q in 0..m {
                let target = ones[p * m + q] + if p == q { f.jitter_applied() } else { 0.0 };
                assert!((rec[p * m + q] - target).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn invalid_structure() {
        assert!(CorrMatrix::from_rows(&[vec![1.0, 0.1], vec![0.2, 1.0]]).is_err());
        assert!(CorrMatrix::from_rows(&[vec![0.9, 0.1], vec![0.1, 1.0]]).is_err());
        assert!(CorrMatrix::from_rows(&[vec![1.0, 0.1]]).is_err());
        // three mutually anti-correlated variables at -0.9 is not PSD
        let bad = CorrMatrix::from_rows(&[
            vec![1.0, -0.9, -0.9],
            vec![-0.9, 1.0, -0.9],
            vec![-0.9, -0.9, 1.0],
        ]);
        assert!(matches!(bad, Err(Error::NotPositiveSemidefinite { .. })));
    }

    #[test]
    fn csv_and_json_formats() {
        let r = two_by_two(0.25).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv, "1,0.25\n0.25,1\n");
        assert_eq!(CorrMatrix::from_csv(csv.as_bytes()).unwrap(), r);

        let json = r.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["m"], 2);
        assert_eq!(v["rho"][0][1], 0.25);
        assert_eq!(CorrMatrix::from_json(&json).unwrap(), r);
        assert!(CorrMatrix::from_json(r#"{"m": 3, "rho": [[1.0]]}"#).is_err());
    }
}
