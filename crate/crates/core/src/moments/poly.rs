use std::collections::{BTreeMap, HashMap};
use std::ops::{Add, Mul, Neg, Sub};

use crate::error::Result;
use crate::matrix::CorrMatrix;

use super::isserlis_moment;

/// Number of bivariate sample slots a kernel polynomial ranges over.
pub const SLOTS: usize = 4;

type Exponents = [u8; 2 * SLOTS];

/// Sparse polynomial in `X_{p,s}, X_{q,s}` for sample slots `s = 0..4`.
///
/// Exponent layout is `[p₀, q₀, p₁, q₁, p₂, q₂, p₃, q₃]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Poly {
    terms: BTreeMap<Exponents, f64>,
}

impl Poly {
    pub fn constant(c: f64) -> Self {
        let mut terms = BTreeMap::new();
        if c != 0.0 {
            terms.insert([0; 2 * SLOTS], c);
        }
        Self { terms }
    }

    /// `X_{p,slot}`.
    pub fn x_p(slot: usize) -> Self {
        Self::monomial(2 * slot)
    }

    /// `X_{q,slot}`.
    pub fn x_q(slot: usize) -> Self {
        Self::monomial(2 * slot + 1)
    }

    fn monomial(var: usize) -> Self {
        let mut e = [0; 2 * SLOTS];
        e[var] = 1;
        let mut terms = BTreeMap::new();
        terms.insert(e, 1.0);
        Self { terms }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Expectation when the four slots are i.i.d. standardized bivariate
    /// normal with correlation `rho`; each slot's mixed moment
    /// `E[X_p^a X_q^b]` comes from the Isserlis expansion.
    pub fn expectation_iid(&self, rho: f64) -> Result<f64> {
        let r = CorrMatrix::from_rows(&[vec![1.0, rho], vec![rho, 1.0]])?;
        let mut cache: HashMap<(u8, u8), f64> = HashMap::new();
        // Neumaier summation: the terms cancel heavily for large n
        let (mut total, mut comp) = (0.0_f64, 0.0_f64);
        for (exps, &coef) in &self.terms {
            let mut prod = coef;
            for s in 0..SLOTS {
                let key = (exps[2 * s], exps[2 * s + 1]);
                let moment = match cache.get(&key) {
                    Some(&v) => v,
                    None => {
                        let mut idx = vec![0usize; key.0 as usize];
                        idx.extend(std::iter::repeat_n(1usize, key.1 as usize));
                        let v = isserlis_moment(&idx, &r)?;
                        cache.insert(key, v);
                        v
                    }
                };
                prod *= moment;
                if prod == 0.0 {
                    break;
                }
            }
            let t = total + prod;
            comp += if total.abs() >= prod.abs() {
                (total - t) + prod
            } else {
                (prod - t) + total
            };
            total = t;
        }
        Ok(total + comp)
    }

    fn accumulate(&mut self, e: Exponents, c: f64) {
        let entry = self.terms.entry(e).or_insert(0.0);
        *entry += c;
        if *entry == 0.0 {
            self.terms.remove(&e);
        }
    }
}

impl Add for Poly {
    type Output = Poly;
    fn add(mut self, rhs: Poly) -> Poly {
        for (e, c) in rhs.terms {
            self.accumulate(e, c);
        }
        self
    }
}

impl Neg for Poly {
    type Output = Poly;
    fn neg(mut self) -> Poly {
        for c in self.terms.values_mut() {
            *c = -*c;
        }
        self
    }
}

impl Sub for Poly {
    type Output = Poly;
    fn sub(self, rhs: Poly) -> Poly {
        self + (-rhs)
    }
}

impl Mul for Poly {
    type Output = Poly;
    fn mul(self, rhs: Poly) -> Poly {
        let mut out = Poly::default();
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let mut e = *ea;
                for (x, y) in e.iter_mut().zip(eb) {
                    *x += *y;
                }
                out.accumulate(e, ca * cb);
            }
        }
        out
    }
}

/// Sum of products of single-slot polynomials.
///
/// Slots are independent, so the expectation of each product is the
/// product of per-slot expectations. Centered factors then have mean
/// exactly zero instead of leaving rounding residue after a full
/// monomial expansion.
#[derive(Debug, Clone, Default)]
pub struct SlotSum {
    terms: Vec<(f64, [Poly; SLOTS])>,
}

fn unit_slots() -> [Poly; SLOTS] {
    std::array::from_fn(|_| Poly::constant(1.0))
}

impl SlotSum {
    pub fn constant(c: f64) -> Self {
        Self {
            terms: vec![(c, unit_slots())],
        }
    }

    fn in_slot(slot: usize, p: Poly) -> Self {
        let mut slots = unit_slots();
        slots[slot] = p;
        Self {
            terms: vec![(1.0, slots)],
        }
    }

    pub fn x_p(slot: usize) -> Self {
        Self::in_slot(slot, Poly::x_p(slot))
    }

    pub fn x_q(slot: usize) -> Self {
        Self::in_slot(slot, Poly::x_q(slot))
    }

    pub fn expectation_iid(&self, rho: f64) -> Result<f64> {
        let (mut total, mut comp) = (0.0_f64, 0.0_f64);
        for (coef, slots) in &self.terms {
            let mut prod = *coef;
            for p in slots {
                if prod == 0.0 {
                    break;
                }
                prod *= p.expectation_iid(rho)?;
            }
            let t = total + prod;
            comp += if total.abs() >= prod.abs() {
                (total - t) + prod
            } else {
                (prod - t) + total
            };
            total = t;
        }
        Ok(total + comp)
    }
}

impl Add for SlotSum {
    type Output = SlotSum;
    fn add(mut self, rhs: SlotSum) -> SlotSum {
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for SlotSum {
    type Output = SlotSum;
    fn sub(mut self, rhs: SlotSum) -> SlotSum {
        self.terms.extend(rhs.terms.into_iter().map(|(c, s)| (-c, s)));
        self
    }
}

impl Mul for SlotSum {
    type Output = SlotSum;
    fn mul(self, rhs: SlotSum) -> SlotSum {
        let mut terms = Vec::with_capacity(self.terms.len() * rhs.terms.len());
        for (ca, sa) in &self.terms {
            for (cb, sb) in &rhs.terms {
                let slots = std::array::from_fn(|s| sa[s].clone() * sb[s].clone());
                terms.push((ca * cb, slots));
            }
        }
        SlotSum { terms }
    }
}
