//! Standard normal distribution functions and the asymptotic power of the
//! Rao-score test.
//!
//! `Φ` is evaluated through the complementary error function,
//! `Φ(x) = erfc(-x / √2) / 2`, using the FreeBSD-derived `erfc` from
//! `libm` (about 1 ulp relative error across the real line). Evaluating
//! the upper tail as `erfc(x / √2) / 2` avoids cancellation for large `x`.
//!
//! The upper quantile `z_p = Φ̄⁻¹(p)` is solved by safeguarded Newton
//! iteration on `ln Φ̄`, seeded with Acklam's rational approximation,
//! so thresholds and p-values are consistent to rounding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `Φ(x)`.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Upper tail `Φ̄(x) = 1 - Φ(x)`.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

pub fn normal_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Upper-tail quantile: the `x` with `Φ̄(x) = p`, so `normal_quantile(0.05) ≈ 1.645`.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!(
            "quantile probability must lie in (0, 1), got {p}"
        )));
    }
    Ok(upper_quantile_unchecked(p))
}

/// Same as [`normal_quantile`] for callers that guarantee `0 < p < 1`.
pub(crate) fn upper_quantile_unchecked(p: f64) -> f64 {
    if p > 0.5 {
        // 1 - p is exact for p in [0.5, 1]
        return -upper_tail_root(1.0 - p);
    }
    upper_tail_root(p)
}

// Solves Φ̄(x) = p for p in (0, 0.5], x >= 0.
fn upper_tail_root(p: f64) -> f64 {
    if p == 0.5 {
        return 0.0;
    }
    let mut x = -acklam_lower(p);
    let log_p = p.ln();
    // Φ̄ is decreasing: Φ̄(lo) >= p >= Φ̄(hi).
    let mut lo = 0.0_f64;
    let mut hi = 40.0_f64;
    for _ in 0..100 {
        let sf = normal_sf(x);
        if sf > p {
            lo = lo.max(x);
        } else if sf < p {
            hi = hi.min(x);
        } else {
            return x;
        }
        // Newton on ln Φ̄, which is nearly quadratic in the tail
        let step = (sf.ln() - log_p) * sf / normal_pdf(x);
        let mut next = x + step;
        if !(next >= lo && next <= hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
            return next;
        }
        x = next;
    }
    x
}

// Acklam's lower-quantile approximation, relative error below 1.2e-9.
fn acklam_lower(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_690e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let q = (-2.0 * p.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    }
}

/// Predicted asymptotic power at signal level `b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPrediction {
    pub alpha: f64,
    pub b: f64,
    pub z_alpha: f64,
    pub power: f64,
}

/// `Φ̄(z_α − b²/2)`.
pub fn asymptotic_power(alpha: f64, b: f64) -> Result<PowerPrediction> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if !(b >= 0.0) || !b.is_finite() {
        return Err(Error::Domain(format!("signal level b must be >= 0, got {b}")));
    }
    let z_alpha = upper_quantile_unchecked(alpha);
    Ok(PowerPrediction {
        alpha,
        b,
        z_alpha,
        power: normal_sf(z_alpha - 0.5 * b * b),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference values computed with 40-digit arithmetic.
    const CDF_REF: [(f64, f64); 13] = [
        (-8.0, 6.220960574271784e-16),
        (-5.0, 2.866515718791939e-7),
        (-3.0, 0.001349898031630094527),
        (-1.5, 0.066807201268858066),
        (-0.5, 0.308537538725986896),
        (0.0, 0.5),
        (0.5, 0.691462461274013104),
        (1.0, 0.841344746068542949),
        (1.6448536270, 0.950000000005004893),
        (2.0, 0.977249868051820793),
        (3.0, 0.998650101968369905),
        (5.0, 0.999999713348428121),
        (8.0, 0.999999999999999378),
    ];

    #[test]
    fn cdf_matches_reference_values() {
        for (x, want) in CDF_REF {
            let got = normal_cdf(x);
            assert!((got - want).abs() <= 1e-15, "x={x}: {got} vs {want}");
        }
        // relative accuracy deep in the lower tail as well
        assert!((normal_cdf(-8.0) / 6.220960574271784e-16 - 1.0).abs() < 1e-13);
    }

    #[test]
    fn cdf_symmetry() {
        let mut x = -8.0;
        while x <= 8.0 {
            assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() <= 1e-12);
            x += 0.01;
        }
        assert_eq!(normal_cdf(0.0), 0.5);
    }

    #[test]
    fn cdf_monotone() {
        let mut prev = 0.0;
        for i in -4000..=4000 {
            let v = normal_cdf(i as f64 * 0.002);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn quantile_examples() {
        assert_eq!(normal_quantile(0.5).unwrap(), 0.0);
        assert!((normal_quantile(0.05).unwrap() - 1.644_853_626_951_472_7).abs() < 1e-12);
        assert!((normal_quantile(0.025).unwrap() - 1.959_963_984_540_054_2).abs() < 1e-12);
        assert!((normal_quantile(0.01).unwrap() - 2.326_347_874_040_841).abs() < 1e-12);
        assert!((normal_quantile(1e-6).unwrap() - 4.753_424_308_822_899).abs() < 1e-10);
        assert!((normal_quantile(0.95).unwrap() + 1.644_853_626_951_472_7).abs() < 1e-12);
        assert!(normal_quantile(0.0).is_err());
        assert!(normal_quantile(1.0).is_err());
        assert!(normal_quantile(f64::NAN).is_err());
    }

    #[test]
    fn quantile_round_trip() {
        let mut p = 1e-6;
        while p < 1.0 - 1e-6 {
            let x = normal_quantile(p).unwrap();
            assert!((normal_sf(x) - p).abs() <= 1e-9, "p={p}");
            p += 1.37e-4;
        }
        for k in 7..300 {
            let p = 2f64.powi(-k);
            let x = normal_quantile(p).unwrap();
            assert!((normal_sf(x) / p - 1.0).abs() < 1e-12, "p=2^-{k}");
        }
    }

    #[test]
    fn power_examples() {
        let at_zero = asymptotic_power(0.05, 0.0).unwrap();
        assert!((at_zero.power - 0.05).abs() < 1e-14);
        let p2 = asymptotic_power(0.05, 2.0).unwrap();
        assert!((p2.power - 0.638_760_031_312_335).abs() < 1e-12);
        assert!((asymptotic_power(0.05, 1.0).unwrap().power - 0.126_134_898_193_430_3).abs() < 1e-12);
        assert!((asymptotic_power(0.05, 3.0).unwrap().power - 0.997_849_150_087_983_8).abs() < 1e-12);
        assert!(asymptotic_power(0.05, 6.0).unwrap().power > 0.9999);
        assert!(asymptotic_power(0.0, 1.0).is_err());
        assert!(asymptotic_power(1.0, 1.0).is_err());
    }

    #[test]
    fn power_monotone_in_b_and_alpha() {
        for &alpha in &[0.01, 0.05, 0.1, 0.3] {
            let mut prev = asymptotic_power(alpha, 0.0).unwrap().power;
            assert!(prev >= alpha - 1e-15);
            for i in 1..40 {
                let cur = asymptotic_power(alpha, i as f64 * 0.1).unwrap().power;
                assert!(cur > prev);
                prev = cur;
            }
        }
        for &b in &[0.5, 1.0, 2.0] {
            let lo = asymptotic_power(0.01, b).unwrap().power;
            let hi = asymptotic_power(0.02, b).unwrap().power;
            assert!(hi > lo);
        }
    }
}
