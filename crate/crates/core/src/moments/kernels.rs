//! The symmetric degree-4 kernels whose U-statistics make up `II₁`.
//!
//! Each kernel is written once, generically over [`KernelScalar`], so the
//! same definition is evaluated numerically on sampled points (`f64`) and
//! expanded symbolically ([`SlotSum`], or fully into monomials with
//! [`Poly`]) to get its exact Gaussian expectation.
//!
//! Notation: for a slot `s` holding the bivariate point `(x_p, x_q)`,
//! `a_s = x_p² − 1` and `b_s = x_p x_q − ρ`.

use std::ops::{Add, Mul, Sub};

use super::poly::{Poly, SlotSum, SLOTS};
use super::{check_kernel_args, KernelExpectations};
use crate::error::Result;

/// Arithmetic needed to evaluate a kernel.
pub trait KernelScalar:
    Clone + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self>
{
    fn constant(c: f64) -> Self;

    fn scale(self, c: f64) -> Self {
        self * Self::constant(c)
    }
}

impl KernelScalar for f64 {
    fn constant(c: f64) -> Self {
        c
    }
    fn scale(self, c: f64) -> Self {
        self * c
    }
}

impl KernelScalar for Poly {
    fn constant(c: f64) -> Self {
        Poly::constant(c)
    }
}

impl KernelScalar for SlotSum {
    fn constant(c: f64) -> Self {
        SlotSum::constant(c)
    }
}

fn binom(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

fn subsets(size: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    for mask in 0u32..(1 << SLOTS) {
        if mask.count_ones() as usize == size {
            out.push((0..SLOTS).filter(|s| mask & (1 << s) != 0).collect());
        }
    }
    out
}

struct Factors<T> {
    a: Vec<T>,
    b: Vec<T>,
}

impl<T: KernelScalar> Factors<T> {
    fn new(points: &[(T, T); SLOTS], rho: f64) -> Self {
        let a = points
            .iter()
            .map(|(xp, _)| xp.clone() * xp.clone() - T::constant(1.0))
            .collect();
        let b = points
            .iter()
            .map(|(xp, xq)| xp.clone() * xq.clone() - T::constant(rho))
            .collect();
        Self { a, b }
    }

    fn a(&self, s: usize) -> T {
        self.a[s].clone()
    }

    fn b(&self, s: usize) -> T {
        self.b[s].clone()
    }
}

/// Sums `term(perm)` over every ordering of every `size`-subset of slots.
fn sum_over_ordered<T: KernelScalar>(size: usize, mut term: impl FnMut(&[usize]) -> T) -> T {
    let mut acc = T::constant(0.0);
    for set in subsets(size) {
        for perm in permutations(&set) {
            acc = acc + term(&perm);
        }
    }
    acc
}

/// `h₁`: the diagonal square sum `n⁻² Σᵢ (X_pi X_qi − ρ)²` as a degree-4 kernel.
pub fn h1<T: KernelScalar>(points: &[(T, T); SLOTS], rho: f64, n: usize) -> T {
    let f = Factors::new(points, rho);
    let coef = binom(n, 4) / ((n * n) as f64 * binom(n - 1, 3));
    let mut acc = T::constant(0.0);
    for s in 0..SLOTS {
        acc = acc + f.b(s) * f.b(s);
    }
    acc.scale(coef)
}

/// `h₂`: kernel for `−S̄_pp S̄_pq²` (multi-index `(1, 0, 2)`), sign excluded.
pub fn h2<T: KernelScalar>(points: &[(T, T); SLOTS], rho: f64, n: usize) -> T {
    let f = Factors::new(points, rho);
    let nf = n as f64;
    let base = binom(n, 4) / nf.powi(3);
    let c3 = base / binom(n - 3, 1);
    let c2 = base / binom(n - 2, 2);
    let c1 = base / binom(n - 1, 3);

    let three = sum_over_ordered(3, |s| f.a(s[0]) * f.b(s[1]) * f.b(s[2]));
    let two = sum_over_ordered(2, |s| {
        f.a(s[0]) * f.b(s[1]) * f.b(s[1])
            + (f.a(s[0]) * f.b(s[0]) * f.b(s[1])).scale(2.0)
    });
    let one = sum_over_ordered(1, |s| f.a(s[0]) * f.b(s[0]) * f.b(s[0]));
    three.scale(c3) + two.scale(c2) + one.scale(c1)
}

/// `h₃`: kernel for `S̄_pp² S̄_pq²` (multi-index `(2, 0, 2)`).
pub fn h3<T: KernelScalar>(points: &[(T, T); SLOTS], rho: f64, n: usize) -> T {
    let f = Factors::new(points, rho);
    let base = binom(n, 4) / (n as f64).powi(4);
    let d4 = base;
    let d3 = base / binom(n - 3, 1);
    let d2 = base / binom(n - 2, 2);
    let d1 = base / binom(n - 1, 3);

    let four = sum_over_ordered(4, |s| f.a(s[0]) * f.a(s[1]) * f.b(s[2]) * f.b(s[3]));
    let three = sum_over_ordered(3, |s| {
        f.b(s[0]) * f.b(s[0]) * f.a(s[1]) * f.a(s[2])
            + f.a(s[0]) * f.a(s[0]) * f.b(s[1]) * f.b(s[2])
            + (f.a(s[0]) * f.b(s[0]) * f.a(s[1]) * f.b(s[2])).scale(4.0)
    });
    let two = sum_over_ordered(2, |s| {
        f.a(s[0]) * f.a(s[0]) * f.b(s[1]) * f.b(s[1])
            + (f.a(s[0]) * f.a(s[1]) * f.b(s[1]) * f.b(s[1])).scale(2.0)
            + (f.b(s[0]) * f.b(s[1]) * f.a(s[1]) * f.a(s[1])).scale(2.0)
            + (f.a(s[0]) * f.b(s[0]) * f.a(s[1]) * f.b(s[1])).scale(2.0)
    });
    let one = sum_over_ordered(1, |s| f.a(s[0]) * f.a(s[0]) * f.b(s[0]) * f.b(s[0]));
    four.scale(d4) + three.scale(d3) + two.scale(d2) + one.scale(d1)
}

fn swapped<T: Clone>(points: &[(T, T); SLOTS]) -> [(T, T); SLOTS] {
    std::array::from_fn(|s| (points[s].1.clone(), points[s].0.clone()))
}

/// `h₂` with the coordinates of every point exchanged.
pub fn h2_bar<T: KernelScalar>(points: &[(T, T); SLOTS], rho: f64, n: usize) -> T {
    h2(&swapped(points), rho, n)
}

/// `h₃` with the coordinates of every point exchanged.
pub fn h3_bar<T: KernelScalar>(points: &[(T, T); SLOTS], rho: f64, n: usize) -> T {
    h3(&swapped(points), rho, n)
}

fn symbolic_points() -> [(SlotSum, SlotSum); SLOTS] {
    std::array::from_fn(|s| (SlotSum::x_p(s), SlotSum::x_q(s)))
}

/// Kernel expectations obtained by expanding each kernel into monomials
/// and evaluating every monomial's moment with Isserlis' theorem.
pub fn kernel_expectations_by_expansion(rho: f64, n: usize) -> Result<KernelExpectations> {
    check_kernel_args(rho, n)?;
    let pts = symbolic_points();
    Ok(KernelExpectations {
        e_h1: h1(&pts, rho, n).expectation_iid(rho)?,
        e_h2: h2(&pts, rho, n).expectation_iid(rho)?,
        e_h3: h3(&pts, rho, n).expectation_iid(rho)?,
    })
}

/// Expectations of the swapped kernels `(h̄₂, h̄₃)` by the same expansion.
pub fn bar_expectations_by_expansion(rho: f64, n: usize) -> Result<(f64, f64)> {
    check_kernel_args(rho, n)?;
    let pts = symbolic_points();
    Ok((
        h2_bar(&pts, rho, n).expectation_iid(rho)?,
        h3_bar(&pts, rho, n).expectation_iid(rho)?,
    ))
}
