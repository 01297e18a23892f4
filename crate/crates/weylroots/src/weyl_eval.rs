//! Localized, log-domain evaluation of the normalized Weyl polynomial
//! `e^{-x^2/2} sum xi_i x^i / sqrt(i!)` and its derivative.

use crate::coeff_dist::CoefficientDistribution;
use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::special::{ln_factorial, LN_FACTORIAL_CACHE};

pub const DEFAULT_TAU: f64 = 60.0;

/// Below this abscissa every index is summed.
pub const DIRECT_SUM_BELOW: f64 = 2.0;

/// One random polynomial: `coeffs[i]` multiplies `x^i / sqrt(i!)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeylSample {
    coeffs: Vec<f64>,
}

impl WeylSample {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::Domain("a Weyl sample needs at least one coefficient".into()));
        }
        if coeffs.len() > LN_FACTORIAL_CACHE + 1 {
            return Err(Error::Domain(format!("degree {} exceeds the supported maximum", coeffs.len() - 1)));
        }
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Domain("coefficients must be finite".into()));
        }
        Ok(WeylSample { coeffs })
    }

    /// Degree `n` polynomial with i.i.d. coefficients drawn from `stream`.
    pub fn draw(dist: &CoefficientDistribution, n: usize, stream: &mut Stream) -> Self {
        let mut coeffs = vec![0.0; n + 1];
        dist.sample_into(stream, &mut coeffs);
        WeylSample { coeffs }
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [f64] {
        &mut self.coeffs
    }

    /// `(p, dp)` at `x >= 0` with the default truncation.
    ///
    /// Weights are generated by the two-term recurrence outward from the
    /// peak index, anchored by one log-domain evaluation.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        eval_coeffs(&self.coeffs, x, DEFAULT_TAU)
    }
}

pub(crate) fn eval_coeffs(coeffs: &[f64], x: f64, tau: f64) -> (f64, f64) {
    let n = coeffs.len() - 1;
    if x == 0.0 {
        return (coeffs[0], coeffs.get(1).copied().unwrap_or(0.0));
    }
    let x2 = x * x;
    let peak = (x2.floor() as usize).min(n);
    let (lo, hi) = window_bounds(x, n, tau);
    let peak = peak.clamp(lo, hi);
    let lx = x.ln();
    let cut = (-tau).exp();
    let t0 = log_weight_unchecked(peak, x2, lx).exp();
    let mut p = 0.0;
    let mut d = 0.0;
    // upward
    let mut t = t0;
    let mut i = peak;
    loop {
        let c = coeffs[i] * t;
        p += c;
        d += c * (i as f64 - x2);
        if i == hi {
            break;
        }
        i += 1;
        t *= x / (i as f64).sqrt();
        if t < cut && i as f64 > x2 {
            break;
        }
    }
    // downward
    let mut t = t0;
    let mut i = peak;
    while i > lo {
        t *= (i as f64).sqrt() / x;
        i -= 1;
        if t < cut && (i as f64) < x2 {
            break;
        }
        let c = coeffs[i] * t;
        p += c;
        d += c * (i as f64 - x2);
    }
    (p, d / x)
}

#[inline]
fn log_weight_unchecked(i: usize, x2: f64, lx: f64) -> f64 {
    -0.5 * x2 + i as f64 * lx - 0.5 * ln_factorial(i)
}

/// `ln b~_i(x) = -x^2/2 + i ln x - lgamma(i+1)/2`.
pub fn basis_log_weight(i: usize, x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("basis weight needs x > 0, got {x}")));
    }
    Ok(log_weight_unchecked(i, x * x, x.ln()))
}

/// Half-width of the index window around `x^2`.
pub fn window_half_width(x: f64, tau: f64) -> usize {
    (x * (tau.sqrt() + 2.0)).ceil() as usize
}

/// Index range `[lo, hi]` before trimming.
fn window_bounds(x: f64, n: usize, tau: f64) -> (usize, usize) {
    if x < DIRECT_SUM_BELOW {
        return (0, n);
    }
    let c = x * x;
    let w = window_half_width(x, tau) as f64;
    let mut lo = ((c - w).floor().max(0.0) as usize).min(n);
    let mut hi = ((c + w).ceil() as usize).min(n);
    // The width rule only reaches about -(sqrt(tau) + 2)^2 / 4 on Gaussian
    // tails, and the Poisson upper tail is heavier still; extend to -tau.
    let level = -tau;
    let lx = x.ln();
    while hi < n && log_weight_unchecked(hi, c, lx) > level {
        hi += 1;
    }
    while lo > 0 && log_weight_unchecked(lo, c, lx) > level {
        lo -= 1;
    }
    (lo.min(hi), hi)
}

/// Basis weights localized at one abscissa.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisWindow {
    pub x: f64,
    pub n: usize,
    pub i_lo: usize,
    pub i_hi: usize,
    pub tau: f64,
    pub log_w: Vec<f64>,
    /// `(i - x^2)/x`; at `x = 0` this holds the derivative weights directly.
    pub deriv_ratio: Vec<f64>,
    /// `exp(log_w)`
    pub weights: Vec<f64>,
    /// `weights * deriv_ratio`
    pub deriv_weights: Vec<f64>,
    /// `1 - sum weights^2`
    pub mass_defect: f64,
    /// The window hit index `n` and lost more than `e^{-tau/2}` of mass.
    pub edge_clipped: bool,
}

impl BasisWindow {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.i_lo..=self.i_hi
    }
}

/// Builds the window at `x` for degree `n`, dropping weights below `e^{-tau}`.
pub fn support_window(x: f64, n: usize, tau: f64) -> Result<BasisWindow> {
    if !(tau > 0.0) {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    if !(x >= 0.0) || x > (n as f64).sqrt() + 1.0 {
        return Err(Error::Domain(format!("x = {x} outside [0, sqrt(n) + 1] for n = {n}")));
    }
    if n > LN_FACTORIAL_CACHE {
        return Err(Error::Domain(format!("degree {n} exceeds the supported maximum")));
    }
    if x == 0.0 {
        let hi = n.min(1);
        let weights: Vec<f64> = (0..=hi).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
        let deriv_weights: Vec<f64> = (0..=hi).map(|i| if i == 1 { 1.0 } else { 0.0 }).collect();
        return Ok(BasisWindow {
            x,
            n,
            i_lo: 0,
            i_hi: hi,
            tau,
            log_w: weights.iter().map(|w| w.ln()).collect(),
            deriv_ratio: deriv_weights.clone(),
            weights,
            deriv_weights,
            mass_defect: 0.0,
            edge_clipped: false,
        });
    }
    let (mut lo, mut hi) = window_bounds(x, n, tau);
    let x2 = x * x;
    let lx = x.ln();
    while lo < hi && log_weight_unchecked(lo, x2, lx) < -tau {
        lo += 1;
    }
    while hi > lo && log_weight_unchecked(hi, x2, lx) < -tau {
        hi -= 1;
    }
    let log_w: Vec<f64> = (lo..=hi).map(|i| log_weight_unchecked(i, x2, lx)).collect();
    let deriv_ratio: Vec<f64> = (lo..=hi).map(|i| (i as f64 - x2) / x).collect();
    let weights: Vec<f64> = log_w.iter().map(|l| if *l > -700.0 { l.exp() } else { 0.0 }).collect();
    let deriv_weights: Vec<f64> = weights.iter().zip(&deriv_ratio).map(|(w, r)| w * r).collect();
    let mass: f64 = weights.iter().map(|w| w * w).sum();
    let mass_defect = 1.0 - mass;
    let edge_clipped = hi == n && mass_defect > (-tau / 2.0).exp();
    Ok(BasisWindow { x, n, i_lo: lo, i_hi: hi, tau, log_w, deriv_ratio, weights, deriv_weights, mass_defect, edge_clipped })
}

/// `(p, dp)` summed over the window.
pub fn evaluate(sample: &WeylSample, window: &BasisWindow) -> Result<(f64, f64)> {
    if sample.degree() != window.n {
        return Err(Error::Domain(format!(
            "window built for degree {} but sample has degree {}",
            window.n,
            sample.degree()
        )));
    }
    let xi = &sample.coeffs[window.i_lo..=window.i_hi];
    Ok((dot(xi, &window.weights), dot(xi, &window.deriv_weights)))
}

/// Four-accumulator dot product (vectorizes and keeps the summation order fixed).
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let ra = ca.remainder();
    let rb = cb.remainder();
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
}

/// Full direct sums `sum b~_i(x) b~_i(y)` style cross moments over all indices.
///
/// Returns the 2x2 block `[[sum b(x)b(y), sum b(x)c(y)], [sum c(x)b(y), sum c(x)c(y)]]`.
pub fn cross_moments(x: f64, y: f64, n: usize) -> Result<[[f64; 2]; 2]> {
    let wx = support_window(x, n, DEFAULT_TAU)?;
    let wy = support_window(y, n, DEFAULT_TAU)?;
    let lo = wx.i_lo.max(wy.i_lo);
    let hi = wx.i_hi.min(wy.i_hi);
    let mut m = [[0.0; 2]; 2];
    if lo > hi {
        return Ok(m);
    }
    for i in lo..=hi {
        let (bx, cx) = (wx.weights[i - wx.i_lo], wx.deriv_weights[i - wx.i_lo]);
        let (by, cy) = (wy.weights[i - wy.i_lo], wy.deriv_weights[i - wy.i_lo]);
        m[0][0] += bx * by;
        m[0][1] += bx * cy;
        m[1][0] += cx * by;
        m[1][1] += cx * cy;
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(coeffs: &[f64], x: f64) -> (f64, f64) {
        // Log-domain term by term, every index.
        let mut p = 0.0;
        let mut d = 0.0;
        for (i, c) in coeffs.iter().enumerate() {
            let w = basis_log_weight(i, x).unwrap().exp();
            p += c * w;
            d += c * w * (i as f64 - x * x) / x;
        }
        (p, d)
    }

    #[test]
    fn log_weight_values() {
        assert!((basis_log_weight(0, 1.0).unwrap() + 0.5).abs() < 1e-15);
        let peak = basis_log_weight(900, 30.0).unwrap();
        let stirling = -0.25 * (2.0 * std::f64::consts::PI * 900.0).ln();
        assert!((peak - stirling).abs() < 1.0);
        let off = basis_log_weight(900 + 150, 30.0).unwrap();
        let drop = peak - off;
        assert!((25.0 / 8.0..=25.0).contains(&drop), "drop {drop}");
        assert!(basis_log_weight(3, 0.0).is_err());
        assert!(basis_log_weight(3, -1.0).is_err());
    }

    #[test]
    fn window_width_and_mass() {
        let w = support_window(30.0, 1000, 40.0).unwrap();
        let width = 900.0 - w.i_lo as f64;
        assert!(width >= 30.0 * 40f64.sqrt() && width <= 4.0 * 30.0 * 40f64.sqrt(), "width {width}");
        let full: f64 = (0..=1000).map(|i| (2.0 * basis_log_weight(i, 30.0).unwrap()).exp()).sum();
        let kept: f64 = w.weights.iter().map(|v| v * v).sum();
        assert!(full - kept < (-20f64).exp());
        assert!(w.log_w.iter().all(|l| *l >= -40.0));
        assert!(w.i_lo <= 900 && 900 <= w.i_hi);
        for x in [2.5, 12.0, 26.0, 40.0] {
            let w = support_window(x, 2000, 60.0).unwrap();
            if w.i_lo > 0 {
                assert!(basis_log_weight(w.i_lo - 1, x).unwrap() < -60.0, "x={x}");
            }
            if w.i_hi < 2000 {
                assert!(basis_log_weight(w.i_hi + 1, x).unwrap() < -60.0, "x={x}");
            }
        }
    }

    #[test]
    fn small_x_window_starts_at_zero() {
        let w = support_window(0.5, 100, 40.0).unwrap();
        assert_eq!(w.i_lo, 0);
        assert!(w.i_hi < 60);
    }

    #[test]
    fn hard_edge_window_is_flagged() {
        let w = support_window(20.0, 400, 40.0).unwrap();
        assert_eq!(w.i_hi, 400);
        assert!(w.edge_clipped);
        assert!(w.mass_defect > 0.3 && w.mass_defect < 0.6);
    }

    #[test]
    fn bad_tau_is_domain_error() {
        assert!(support_window(3.0, 100, 0.0).is_err());
    }

    #[test]
    fn two_term_polynomial() {
        let mut c = vec![0.0; 11];
        c[0] = 0.7;
        c[1] = -1.3;
        let s = WeylSample::new(c).unwrap();
        for &x in &[0.0, 0.3, 1.1, 2.5] {
            let (p, dp) = s.eval(x);
            let e = (-x * x / 2.0).exp();
            assert!((p - e * (0.7 - 1.3 * x)).abs() < 1e-15);
            let dexact = e * (-1.3) - x * e * (0.7 - 1.3 * x);
            assert!((dp - dexact).abs() < 1e-14);
        }
    }

    #[test]
    fn linear_root_at_two() {
        let mut c = vec![0.0; 5];
        c[0] = -2.0;
        c[1] = 1.0;
        let s = WeylSample::new(c).unwrap();
        assert!(s.eval(1.999).0 < 0.0 && s.eval(2.001).0 > 0.0);
    }

    #[test]
    fn windowed_matches_direct() {
        let mut st = Stream::new(9, 0);
        let s = WeylSample::draw(&CoefficientDistribution::gaussian(), 2000, &mut st);
        for &x in &[0.0f64, 0.7, 1.99, 2.0, 5.3, 17.2, 31.0, 44.0] {
            let (p0, d0) = direct(s.coeffs(), x.max(1e-300));
            let (p1, d1) = s.eval(x);
            if x > 0.0 {
                assert!((p0 - p1).abs() < 1e-9 && (d0 - d1).abs() < 1e-9, "x={x}");
                let w = support_window(x, 2000, DEFAULT_TAU).unwrap();
                let (p2, d2) = evaluate(&s, &w).unwrap();
                assert!((p0 - p2).abs() < 1e-9 && (d0 - d2).abs() < 1e-9, "x={x}");
            }
        }
    }

    #[test]
    fn degree_mismatch_is_rejected() {
        let s = WeylSample::new(vec![1.0; 11]).unwrap();
        let w = support_window(2.0, 20, 30.0).unwrap();
        assert!(evaluate(&s, &w).is_err());
    }

    #[test]
    fn normalization_and_orthogonality() {
        let n = 1600;
        let top = (n as f64).sqrt() - 3.0 * (n as f64).ln().sqrt();
        let mut x = 5.0;
        while x <= top {
            let m = cross_moments(x, x, n).unwrap();
            assert!((m[0][0] - 1.0).abs() < 1e-6, "x={x}");
            assert!(m[0][1].abs() < 1e-8, "x={x}");
            assert!((m[1][1] - 1.0).abs() < 1e-6, "x={x}");
            x += 1.7;
        }
    }
}
