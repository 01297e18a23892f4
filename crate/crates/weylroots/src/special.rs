//! Special functions shared by the numerical modules.

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

/// Largest `i` whose `ln(i!)` is served from the table.
pub const LN_FACTORIAL_CACHE: usize = 1 << 20;

static LN_FACT: OnceLock<Vec<f64>> = OnceLock::new();

fn ln_fact_table() -> &'static [f64] {
    LN_FACT.get_or_init(|| {
        (0..=LN_FACTORIAL_CACHE)
            .map(|i| libm::lgamma(i as f64 + 1.0))
            .collect()
    })
}

/// `ln(i!)`, cached for `i <= LN_FACTORIAL_CACHE`.
#[inline]
pub fn ln_factorial(i: usize) -> f64 {
    match ln_fact_table().get(i) {
        Some(v) => *v,
        None => libm::lgamma(i as f64 + 1.0),
    }
}

/// Forces the factorial table to be built (call once before spawning workers).
pub fn warm_caches() {
    let _ = ln_fact_table();
}

#[inline]
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / SQRT_2)
}

/// Inverse standard normal CDF (Wichura's AS241, PPND16), about 1e-16 relative.
pub fn inv_normal_cdf(p: f64) -> f64 {
    debug_assert!(p > 0.0 && p < 1.0);
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((2.509_080_928_730_122_7e3 * r + 3.343_057_558_358_813e4) * r
                + 6.726_577_092_700_87e4)
                * r
                + 4.592_195_393_154_987e4)
                * r
                + 1.373_169_376_550_946e4)
                * r
                + 1.971_590_950_306_551_3e3)
                * r
                + 1.331_416_678_917_843_8e2)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((5.226_495_278_852_545e3 * r + 2.872_908_573_572_194_3e4) * r
                + 3.930_789_580_009_271e4)
                * r
                + 2.121_379_430_158_659_7e4)
                * r
                + 5.394_196_021_424_751e3)
                * r
                + 6.871_870_074_920_579e2)
                * r
                + 4.231_333_070_160_091e1)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        let r = r - 1.6;
        (((((((7.745_450_142_783_414e-4 * r + 2.272_384_498_926_918_4e-2) * r
            + 2.417_807_251_774_506e-1)
            * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((1.050_750_071_644_416_9e-9 * r + 5.475_938_084_995_345e-4) * r
                + 1.519_866_656_361_645_7e-2)
                * r
                + 1.481_039_764_274_800_7e-1)
                * r
                + 6.897_673_349_851e-1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        let r = r - 5.0;
        (((((((2.010_334_399_292_288_1e-7 * r + 2.711_555_568_743_487_6e-5) * r
            + 1.242_660_947_388_078_4e-3)
            * r
            + 2.653_218_952_657_612_4e-2)
            * r
            + 2.965_605_718_285_048_7e-1)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((2.044_263_103_389_939_7e-15 * r + 1.421_511_758_316_446e-7) * r
                + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 1.487_536_129_085_061_5e-2)
                * r
                + 1.369_298_809_227_358e-1)
                * r
                + 5.998_322_065_558_88e-1)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// `E|Z|^m` for a standard normal `Z`.
pub fn abs_normal_moment(m: u32) -> f64 {
    let m = f64::from(m);
    (0.5 * m * 2f64.ln() + ln_gamma(0.5 * (m + 1.0))).exp() / PI.sqrt()
}

/// Distance to the nearest integer.
#[inline]
pub fn dist_to_int(w: f64) -> f64 {
    (w - w.round()).abs()
}

/// `ln(exp(a) + exp(b))` without overflow.
#[inline]
pub fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factorial_table_matches_products() {
        let mut acc = 0.0;
        for i in 1..=30usize {
            acc += (i as f64).ln();
            assert!((ln_factorial(i) - acc).abs() < 1e-12 * acc.max(1.0));
        }
        assert_eq!(ln_factorial(0), 0.0);
    }

    #[test]
    fn inverse_cdf_round_trips() {
        for &p in &[1e-300, 1e-12, 1e-3, 0.02, 0.3, 0.5, 0.77, 0.975, 1.0 - 1e-9] {
            let z = inv_normal_cdf(p);
            let back = normal_cdf(z);
            assert!(((back - p) / p).abs() < 1e-12, "p={p} z={z} back={back}");
        }
        assert!((inv_normal_cdf(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
    }

    #[test]
    fn abs_moments() {
        let c = (2.0 / PI).sqrt();
        assert!((abs_normal_moment(1) - c).abs() < 1e-15);
        assert!((abs_normal_moment(2) - 1.0).abs() < 1e-14);
        assert!((abs_normal_moment(3) - 2.0 * c).abs() < 1e-14);
        assert!((abs_normal_moment(5) - 8.0 * c).abs() < 1e-13);
        assert!((abs_normal_moment(4) - 3.0).abs() < 1e-13);
    }
}
