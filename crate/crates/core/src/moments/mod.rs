//! Exact Gaussian moment engine.
//!
//! Everything here is evaluated exactly (up to floating point) from the
//! correlation matrix through Isserlis' pair-partition expansion: product
//! moments, centered product moments, the duple sums `S(k)` that make up
//! `Var[I]`, and the expectations of the degree-4 kernels behind `II₁`.

mod kernels;
mod poly;

pub use kernels::{
    bar_expectations_by_expansion, h1, h2, h2_bar, h3, h3_bar, kernel_expectations_by_expansion,
    KernelScalar,
};
pub use poly::{Poly, SlotSum};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::CorrMatrix;

/// Largest `k` for which [`pair_partitions`] enumerates `2k` points.
pub const MAX_PARTITION_K: usize = 8;
/// Largest `m` accepted by `s_sum(3, _)`.
pub const MAX_M_S3: usize = 200;
/// Largest `m` accepted by `s_sum(4, _)`.
pub const MAX_M_S4: usize = 60;

/// A perfect matching of `{0, .., 2k-1}` (0-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PairPartition {
    pub pairs: Vec<(usize, usize)>,
}

/// All `(2k)! / (2^k k!)` perfect matchings of `2k` points.
///
/// Each pair is stored as `(i, j)` with `i < j`, pairs ordered by `i`.
pub fn pair_partitions(k: usize) -> Result<Vec<PairPartition>> {
    if k > MAX_PARTITION_K {
        return Err(Error::TooLarge(format!(
            "pair partitions of {} points (k = {k} > {MAX_PARTITION_K})",
            2 * k
        )));
    }
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(k);
    let remaining: Vec<usize> = (0..2 * k).collect();
    enumerate_matchings(&remaining, &mut current, &mut out);
    Ok(out)
}

fn enumerate_matchings(
    remaining: &[usize],
    current: &mut Vec<(usize, usize)>,
    out: &mut Vec<PairPartition>,
) {
    let Some((&first, rest)) = remaining.split_first() else {
        out.push(PairPartition {
            pairs: current.clone(),
        });
        return;
    };
    for (j, &partner) in rest.iter().enumerate() {
        let mut next: Vec<usize> = Vec::with_capacity(rest.len() - 1);
        next.extend_from_slice(&rest[..j]);
        next.extend_from_slice(&rest[j + 1..]);
        current.push((first, partner));
        enumerate_matchings(&next, current, out);
        current.pop();
    }
}

fn check_index(index: usize, dim: usize) -> Result<()> {
    if index >= dim {
        Err(Error::IndexOutOfRange { index, dim })
    } else {
        Ok(())
    }
}

/// `E[Z_{i_1} ... Z_{i_2k}]` for a standardized Gaussian vector with
/// correlation `r` (indices 0-based, repeats allowed). Odd counts give 0.
pub fn isserlis_moment(indices: &[usize], r: &CorrMatrix) -> Result<f64> {
    for &i in indices {
        check_index(i, r.dim())?;
    }
    if indices.len() % 2 == 1 {
        return Ok(0.0);
    }
    if indices.len() / 2 > MAX_PARTITION_K {
        return Err(Error::TooLarge(format!(
            "Isserlis expansion of {} indices",
            indices.len()
        )));
    }
    let mut buf = indices.to_vec();
    Ok(wick_sum(&mut buf, r))
}

// Sum over pairings of `idx`: pair the first index with each of the
// others in turn and recurse on what is left. `idx` is restored on return.
fn wick_sum(idx: &mut [usize], r: &CorrMatrix) -> f64 {
    let len = idx.len();
    if len == 0 {
        return 1.0;
    }
    let first = idx[0];
    let mut total = 0.0;
    for j in 1..len {
        let w = r.rho(first, idx[j]);
        if w == 0.0 {
            continue;
        }
        // move the partner to slot 1, recurse on idx[2..]
        idx.swap(1, j);
        total += w * wick_sum(&mut idx[2..], r);
        idx.swap(1, j);
    }
    total
}

/// Closed form `E[(X_{p1}X_{q1} − ρ_{p1q1})(X_{p2}X_{q2} − ρ_{p2q2})] = ρ_{p1q2}ρ_{q1p2} + ρ_{p1p2}ρ_{q1q2}`.
pub fn central_pair_moment(p1: usize, q1: usize, p2: usize, q2: usize, r: &CorrMatrix) -> Result<f64> {
    for i in [p1, q1, p2, q2] {
        check_index(i, r.dim())?;
    }
    Ok(pair_moment_unchecked(p1, q1, p2, q2, r))
}

#[inline]
fn pair_moment_unchecked(p1: usize, q1: usize, p2: usize, q2: usize, r: &CorrMatrix) -> f64 {
    r.rho(p1, q2) * r.rho(q1, p2) + r.rho(p1, p2) * r.rho(q1, q2)
}

/// `E[Π_d (X_{p_d} X_{q_d} − ρ_{p_d q_d})]` for up to four duples, by
/// expanding the product and applying Isserlis to every mixed moment.
pub fn central_product_moment(duples: &[(usize, usize)], r: &CorrMatrix) -> Result<f64> {
    if duples.len() > 4 {
        return Err(Error::TooLarge(format!(
            "central product moment of {} duples (max 4)",
            duples.len()
        )));
    }
    for &(p, q) in duples {
        check_index(p, r.dim())?;
        check_index(q, r.dim())?;
    }
    let d = duples.len();
    let mut total = 0.0;
    let mut idx = Vec::with_capacity(2 * d);
    for mask in 0u32..(1 << d) {
        idx.clear();
        let mut coef = 1.0;
        for (bit, &(p, q)) in duples.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                idx.push(p);
                idx.push(q);
            } else {
                coef *= -r.rho(p, q);
            }
        }
        if coef != 0.0 {
            total += coef * wick_sum(&mut idx, r);
        }
    }
    Ok(total)
}

/// Multi-index `λ = (λ₁, λ₂, λ₃)` for partial derivatives of
/// `f(u₁, u₂, u₃) = u₃² / (u₁ u₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub u32, pub u32, pub u32);

impl MultiIndex {
    pub fn order(&self) -> u32 {
        self.0 + self.1 + self.2
    }

    /// `λ! = λ₁! λ₂! λ₃!`
    pub fn factorial(&self) -> f64 {
        factorial(self.0) * factorial(self.1) * factorial(self.2)
    }

    /// All multi-indices with `lo <= |λ| <= hi`, in lexicographic order.
    pub fn all_with_order(lo: u32, hi: u32) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        for a in 0..=hi {
            for b in 0..=(hi - a) {
                for c in 0..=(hi - a - b) {
                    let lam = MultiIndex(a, b, c);
                    if lam.order() >= lo {
                        out.push(lam);
                    }
                }
            }
        }
        out
    }
}

fn factorial(k: u32) -> f64 {
    (1..=k).map(f64::from).product()
}

/// `∂^λ f(u₁, u₂, u₃)` for `f = u₃² u₁⁻¹ u₂⁻¹`.
pub fn f_partial(lambda: MultiIndex, u1: f64, u2: f64, u3: f64) -> Result<f64> {
    if !(u1 > 0.0 && u2 > 0.0) {
        return Err(Error::Domain(format!(
            "f is defined for u1, u2 > 0 (got u1 = {u1}, u2 = {u2})"
        )));
    }
    Ok(f_partial_unchecked(lambda, u1, u2, u3))
}

pub(crate) fn f_partial_unchecked(lambda: MultiIndex, u1: f64, u2: f64, u3: f64) -> f64 {
    let MultiIndex(l1, l2, l3) = lambda;
    let u3_factor = match l3 {
        0 => u3 * u3,
        1 => 2.0 * u3,
        2 => 2.0,
        _ => return 0.0,
    };
    let sign = if (l1 + l2) % 2 == 0 { 1.0 } else { -1.0 };
    sign * factorial(l1) * factorial(l2) * u3_factor
        / (u1.powi(1 + l1 as i32) * u2.powi(1 + l2 as i32))
}

/// `S(k)`: the sum of `M²` over ordered pairs of duples `p_d < q_d`
/// whose union has exactly `k` distinct variables.
pub fn s_sum(k: usize, r: &CorrMatrix) -> Result<f64> {
    let m = r.dim();
    let sq = |p1, q1, p2, q2| {
        let v = pair_moment_unchecked(p1, q1, p2, q2, r);
        v * v
    };
    match k {
        2 => {
            let mut acc = 0.0;
            for p in 0..m {
                for q in (p + 1)..m {
                    acc += sq(p, q, p, q);
                }
            }
            Ok(acc)
        }
        3 => {
            if m > MAX_M_S3 {
                return Err(Error::TooLarge(format!("S(3) with m = {m} > {MAX_M_S3}")));
            }
            let mut acc = 0.0;
            for a in 0..m {
                for b in (a + 1)..m {
                    for c in (b + 1)..m {
                        let duples = [(a, b), (a, c), (b, c)];
                        for (i, &(p1, q1)) in duples.iter().enumerate() {
                            for (j, &(p2, q2)) in duples.iter().enumerate() {
                                if i != j {
                                    acc += sq(p1, q1, p2, q2);
                                }
                            }
                        }
                    }
                }
            }
            Ok(acc)
        }
        4 => {
            if m > MAX_M_S4 {
                return Err(Error::TooLarge(format!("S(4) with m = {m} > {MAX_M_S4}")));
            }
            let mut acc = 0.0;
            for a in 0..m {
                for b in (a + 1)..m {
                    for c in (b + 1)..m {
                        for d in (c + 1)..m {
                            let matchings = [((a, b), (c, d)), ((a, c), (b, d)), ((a, d), (b, c))];
                            for ((p1, q1), (p2, q2)) in matchings {
                                acc += 2.0 * sq(p1, q1, p2, q2);
                            }
                        }
                    }
                }
            }
            Ok(acc)
        }
        _ => Err(Error::Domain(format!("S(k) is defined for k in {{2, 3, 4}}, got {k}"))),
    }
}

/// Exact finite-sample `Var[I] = 2n(n−1)/n⁴ · (S(2) + S(3) + S(4))`.
pub fn var_i_exact(r: &CorrMatrix, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("sample size must be positive".into()));
    }
    let total = s_sum(2, r)? + s_sum(3, r)? + s_sum(4, r)?;
    let nf = n as f64;
    Ok(2.0 * nf * (nf - 1.0) / nf.powi(4) * total)
}

/// Expectations of the kernels `h₁`, `h₂`, `h₃` over four i.i.d. draws.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelExpectations {
    pub e_h1: f64,
    pub e_h2: f64,
    pub e_h3: f64,
}

/// Closed forms `(1+ρ²)/n`, `2(1+3ρ²)/n²`, `2(4+n)(1+5ρ²)/n³`.
pub fn kernel_expectations(rho: f64, n: usize) -> Result<KernelExpectations> {
    check_kernel_args(rho, n)?;
    let nf = n as f64;
    let r2 = rho * rho;
    Ok(KernelExpectations {
        e_h1: (1.0 + r2) / nf,
        e_h2: 2.0 * (1.0 + 3.0 * r2) / (nf * nf),
        e_h3: 2.0 * (4.0 + nf) * (1.0 + 5.0 * r2) / nf.powi(3),
    })
}

pub(crate) fn check_kernel_args(rho: f64, n: usize) -> Result<()> {
    if !(rho.abs() <= 1.0) {
        return Err(Error::Domain(format!("|rho| must be <= 1, got {rho}")));
    }
    if n < 4 {
        return Err(Error::Domain(format!("kernels need n >= 4, got {n}")));
    }
    Ok(())
}

/// Exact mean of `II₁`: `Σ_{p<q} (16 + n² + (80 + 8n + n²) ρ_pq²) / n³`.
pub fn expected_ii1(r: &CorrMatrix, n: usize) -> Result<f64> {
    if n < 4 {
        return Err(Error::Domain(format!("E[II1] needs n >= 4, got {n}")));
    }
    let nf = n as f64;
    let m = r.dim();
    let mut acc = 0.0;
    for p in 0..m {
        for q in (p + 1)..m {
            let r2 = r.rho(p, q) * r.rho(p, q);
            acc += 16.0 + nf * nf + (80.0 + 8.0 * nf + nf * nf) * r2;
        }
    }
    Ok(acc / nf.powi(3))
}
