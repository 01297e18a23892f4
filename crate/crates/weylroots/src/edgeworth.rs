//! Edgeworth corrections for `S/sqrt(N)` with `S = sum xi_i v_i`.
//!
//! Hermite polynomials are the probabilists' ones (`H_2 = x^2 - 1`).
//! Cumulant tables go to order 4; the 1-d density goes to order 5.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;

use num_rational::Ratio;
use serde::Serialize;

use crate::coeff_dist::CoefficientDistribution;
use crate::error::{Error, Result};
use crate::special::{abs_normal_moment, ln_gamma, normal_cdf, normal_pdf, INV_SQRT_2PI};
use crate::weyl_eval::{support_window, BasisWindow, DEFAULT_TAU};

pub const MAX_HERMITE: usize = 12;

/// `H_k(x)` by `H_{k+1} = x H_k - k H_{k-1}`.
pub fn hermite(k: usize, x: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, x);
    if k == 0 {
        return h0;
    }
    for j in 1..k {
        let h2 = x * h1 - j as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1
}

/// Integer power-basis coefficients of `H_k`, lowest degree first.
pub fn hermite_coeffs(k: usize) -> Vec<i64> {
    let mut prev = vec![1i64];
    if k == 0 {
        return prev;
    }
    let mut cur = vec![0i64, 1];
    for j in 1..k {
        let mut next = vec![0i64; j + 2];
        for (d, c) in cur.iter().enumerate() {
            next[d + 1] += c;
        }
        for (d, c) in prev.iter().enumerate() {
            next[d] -= j as i64 * c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

fn poly_mul(a: &[i64], b: &[i64]) -> Vec<i64> {
    let mut out = vec![0i64; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Coefficients of `H_a H_b`.
pub fn hermite_product(a: usize, b: usize) -> Vec<i64> {
    poly_mul(&hermite_coeffs(a), &hermite_coeffs(b))
}

/// `int |t| p(t) phi(t) dt` in units of `sqrt(2/pi)`; exact integer.
pub fn poly_abs_moment_units(p: &[i64]) -> i64 {
    // E|Z|^{2j+1} = 2^j j! sqrt(2/pi)
    p.iter()
        .enumerate()
        .filter(|(d, _)| d % 2 == 0)
        .map(|(d, c)| {
            let j = d / 2;
            c * (1i64 << j) * (1..=j as i64).product::<i64>()
        })
        .sum()
}

/// `int |t| p(t) phi(t) dt`.
pub fn poly_abs_moment(p: &[i64]) -> f64 {
    p.iter()
        .enumerate()
        .filter(|(d, _)| d % 2 == 0)
        .map(|(d, c)| *c as f64 * abs_normal_moment(d as u32 + 1))
        .sum()
}

/// `p(0) phi(0)`, the limit of `(1/2d) int_{|t|<d} p phi`.
pub fn poly_density_at_zero(p: &[i64]) -> f64 {
    p[0] as f64 * INV_SQRT_2PI
}

/// `int |t| H_k(t) phi(t) dt`; zero for odd `k`.
pub fn hermite_moment_abs(k: usize) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    poly_abs_moment(&hermite_coeffs(k))
}

/// `H_k(0) phi(0)`; zero for odd `k`.
pub fn hermite_density_at_zero(k: usize) -> f64 {
    if k % 2 == 1 {
        return 0.0;
    }
    hermite(k, 0.0) * INV_SQRT_2PI
}

/// Exponent vector `(n_1, ..., n_d)`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct MultiIndex(Vec<u8>);

impl MultiIndex {
    pub fn new(entries: Vec<u8>) -> Result<Self> {
        if entries.is_empty() || entries.len() > 4 {
            return Err(Error::Domain(format!("multi-index dimension {} not in 1..=4", entries.len())));
        }
        Ok(MultiIndex(entries))
    }

    /// From a list of coordinates `(a_1, ..., a_l)` in `1..=d`.
    pub fn from_coords(coords: &[usize], d: usize) -> Result<Self> {
        let mut e = vec![0u8; d];
        for &c in coords {
            if c == 0 || c > d {
                return Err(Error::Domain(format!("coordinate {c} outside 1..={d}")));
            }
            e[c - 1] += 1;
        }
        Self::new(e)
    }

    pub fn entries(&self) -> &[u8] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn weight(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    /// `prod n_j!`
    pub fn factorial(&self) -> u64 {
        self.0.iter().map(|&e| (1..=e as u64).product::<u64>()).product()
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// Every exponent vector of dimension `d` and the given weight.
    pub fn all(d: usize, weight: usize) -> Vec<MultiIndex> {
        fn rec(d: usize, left: usize, cur: &mut Vec<u8>, out: &mut Vec<MultiIndex>) {
            if cur.len() + 1 == d {
                cur.push(left as u8);
                out.push(MultiIndex(cur.clone()));
                cur.pop();
                return;
            }
            for k in (0..=left).rev() {
                cur.push(k as u8);
                rec(d, left - k, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(d, weight, &mut Vec::with_capacity(d), &mut out);
        out
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|e| e.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// `prod_j H_{n_j}(x_j)`.
pub fn hermite_multi(alpha: &MultiIndex, x: &[f64]) -> Result<f64> {
    if alpha.dim() != x.len() {
        return Err(Error::Domain(format!("multi-index of dimension {} at a point of dimension {}", alpha.dim(), x.len())));
    }
    Ok(alpha.0.iter().zip(x).map(|(&k, &xj)| hermite(k as usize, xj)).product())
}

/// Averaged cumulants `c(alpha) = chi_|alpha| / N * sum_k prod_j v_kj^alpha_j`
/// for `|alpha|` in {3, 4}.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CumulantTable {
    pub d: usize,
    pub n_norm: f64,
    pub entries: BTreeMap<MultiIndex, f64>,
}

impl CumulantTable {
    /// All entries zero (Gaussian input).
    pub fn zero(d: usize, n_norm: f64) -> Result<Self> {
        Self::with_entries(d, n_norm, [])
    }

    /// Explicit entries; every other weight-3/4 entry is zero.
    pub fn with_entries(d: usize, n_norm: f64, given: impl IntoIterator<Item = (MultiIndex, f64)>) -> Result<Self> {
        if d == 0 || d > 4 {
            return Err(Error::Domain(format!("table dimension {d} not in 1..=4")));
        }
        let mut entries: BTreeMap<MultiIndex, f64> =
            [3, 4].iter().flat_map(|&w| MultiIndex::all(d, w)).map(|a| (a, 0.0)).collect();
        for (a, v) in given {
            if a.dim() != d || !(a.weight() == 3 || a.weight() == 4) {
                return Err(Error::Domain(format!("entry {a} does not fit a {d}-d table of weights 3, 4")));
            }
            entries.insert(a, v);
        }
        Ok(CumulantTable { d, n_norm, entries })
    }

    /// `cols[j][k]` is coordinate `j` of the `k`-th step vector (already
    /// carrying the `sqrt(N)` scale).
    pub fn from_columns(cols: &[&[f64]], dist: &CoefficientDistribution, n_norm: f64) -> Result<Self> {
        let d = cols.len();
        let mut t = Self::zero(d, n_norm)?;
        for (a, v) in t.entries.iter_mut() {
            *v = dist.cumulant(a.weight() as u32) * power_sum(cols, a) / n_norm;
        }
        Ok(t)
    }

    /// `v_i = sqrt(N) b~_i(x)`.
    pub fn weyl_1d(x: f64, n: usize, dist: &CoefficientDistribution, n_norm: f64) -> Result<Self> {
        let w = support_window(x, n, DEFAULT_TAU)?;
        let b = scaled(&w.weights, n_norm);
        Self::from_columns(&[&b], dist, n_norm)
    }

    /// `v_i = sqrt(N) (b~_i(x), b~_i'(x))`.
    pub fn weyl_2d(x: f64, n: usize, dist: &CoefficientDistribution, n_norm: f64) -> Result<Self> {
        let w = support_window(x, n, DEFAULT_TAU)?;
        let b = scaled(&w.weights, n_norm);
        let c = scaled(&w.deriv_weights, n_norm);
        Self::from_columns(&[&b, &c], dist, n_norm)
    }

    /// `v_i = sqrt(N) (b~_i(x), b~_i'(x), b~_i(y), b~_i'(y))`.
    pub fn weyl_4d(x: f64, y: f64, n: usize, dist: &CoefficientDistribution, n_norm: f64) -> Result<Self> {
        let wx = support_window(x, n, DEFAULT_TAU)?;
        let wy = support_window(y, n, DEFAULT_TAU)?;
        let lo = wx.i_lo.min(wy.i_lo);
        let hi = wx.i_hi.max(wy.i_hi);
        let spread = |w: &BasisWindow, src: &[f64]| -> Vec<f64> {
            (lo..=hi)
                .map(|i| if (w.i_lo..=w.i_hi).contains(&i) { src[i - w.i_lo] * n_norm.sqrt() } else { 0.0 })
                .collect()
        };
        let cols = [
            spread(&wx, &wx.weights),
            spread(&wx, &wx.deriv_weights),
            spread(&wy, &wy.weights),
            spread(&wy, &wy.deriv_weights),
        ];
        let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
        Self::from_columns(&refs, dist, n_norm)
    }

    pub fn get(&self, alpha: &MultiIndex) -> f64 {
        self.entries.get(alpha).copied().unwrap_or(0.0)
    }

    fn of_weight(&self, w: usize) -> impl Iterator<Item = (&MultiIndex, &f64)> {
        self.entries.iter().filter(move |(a, _)| a.weight() == w)
    }

    fn check_point(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d {
            return Err(Error::Domain(format!("{}-d table evaluated at a {}-d point", self.d, x.len())));
        }
        Ok(())
    }
}

fn scaled(w: &[f64], n_norm: f64) -> Vec<f64> {
    let s = n_norm.sqrt();
    w.iter().map(|v| v * s).collect()
}

fn power_sum(cols: &[&[f64]], a: &MultiIndex) -> f64 {
    let len = cols.first().map_or(0, |c| c.len());
    (0..len)
        .map(|k| cols.iter().zip(&a.0).map(|(c, &e)| c[k].powi(e as i32)).product::<f64>())
        .sum()
}

/// `c_n(alpha)` from the value/derivative weights of one window (dimension
/// 1 or 2).
pub fn avg_cumulant(alpha: &MultiIndex, window: &BasisWindow, dist: &CoefficientDistribution, n_norm: f64) -> Result<f64> {
    let w = alpha.weight();
    if w != 3 && w != 4 {
        return Err(Error::Domain(format!("cumulant weight {w} not in {{3, 4}}")));
    }
    let b = scaled(&window.weights, n_norm);
    let c = scaled(&window.deriv_weights, n_norm);
    let cols: Vec<&[f64]> = match alpha.dim() {
        1 => vec![&b],
        2 => vec![&b, &c],
        d => return Err(Error::Domain(format!("window cumulants need dimension 1 or 2, got {d}"))),
    };
    Ok(dist.cumulant(w as u32) * power_sum(&cols, alpha) / n_norm)
}

/// `Gamma_1 = sum_{|a|=3} c(a)/a! H_a`.
pub fn gamma1(table: &CumulantTable, x: &[f64]) -> Result<f64> {
    table.check_point(x)?;
    let mut s = 0.0;
    for (a, c) in table.of_weight(3) {
        if *c != 0.0 {
            s += c / a.factorial() as f64 * hermite_multi(a, x)?;
        }
    }
    Ok(s)
}

/// How the squared third-order term is turned into a polynomial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Gamma2Convention {
    /// `H_a(x) H_b(x)`, the pointwise square of `Gamma_1`.
    Product,
    /// `H_{a+b}(x)`, the term of the formal cumulant expansion.
    Merged,
}

fn gamma2_prime(table: &CumulantTable, x: &[f64]) -> Result<f64> {
    let mut s = 0.0;
    for (g, c) in table.of_weight(4) {
        if *c != 0.0 {
            s += c / g.factorial() as f64 * hermite_multi(g, x)?;
        }
    }
    Ok(s)
}

/// `Gamma_2 = Gamma' + Gamma''` with the product convention for `Gamma''`.
pub fn gamma2(table: &CumulantTable, x: &[f64]) -> Result<f64> {
    gamma2_with(table, x, Gamma2Convention::Product)
}

pub fn gamma2_with(table: &CumulantTable, x: &[f64], conv: Gamma2Convention) -> Result<f64> {
    table.check_point(x)?;
    let prime = gamma2_prime(table, x)?;
    let second = match conv {
        Gamma2Convention::Product => 0.5 * gamma1(table, x)?.powi(2),
        Gamma2Convention::Merged => {
            let third: Vec<(&MultiIndex, f64)> =
                table.of_weight(3).filter(|(_, c)| **c != 0.0).map(|(a, c)| (a, c / a.factorial() as f64)).collect();
            let mut s = 0.0;
            for (a, ca) in &third {
                for (b, cb) in &third {
                    s += ca * cb * hermite_multi(&a.add(b), x)?;
                }
            }
            0.5 * s
        }
    };
    Ok(prime + second)
}

/// `prod phi(x_j)`.
pub fn std_normal_density(x: &[f64]) -> f64 {
    x.iter().map(|&v| normal_pdf(v)).product()
}

/// Order-2 expansion density `(1 + Gamma_1/sqrt N + Gamma_2/N) phi_d`, with the
/// merged convention so that the signed mass is exactly one.
pub fn density_q2(table: &CumulantTable, x: &[f64], n_norm: f64) -> Result<f64> {
    let g1 = gamma1(table, x)?;
    let g2 = gamma2_with(table, x, Gamma2Convention::Merged)?;
    Ok((1.0 + g1 / n_norm.sqrt() + g2 / n_norm) * std_normal_density(x))
}

/// One-dimensional Edgeworth density of order 3, 4 or 5.
///
/// `chi_k` are averaged cumulants `chi_k(xi) / N * sum v_i^k` with
/// `sum v_i^2 = N`; the density carries `chi_k / k!`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeworthDensity1D {
    pub order: u8,
    pub chi3: f64,
    pub chi4: f64,
    pub chi5: f64,
    pub n_norm: f64,
}

impl EdgeworthDensity1D {
    pub fn new(order: u8, chi3: f64, chi4: f64, chi5: f64, n_norm: f64) -> Result<Self> {
        if !(3..=5).contains(&order) {
            return Err(Error::Domain(format!("Edgeworth order {order} not in 3..=5")));
        }
        if !(n_norm > 0.0) {
            return Err(Error::Domain("normalization N must be positive".into()));
        }
        Ok(EdgeworthDensity1D { order, chi3, chi4, chi5, n_norm })
    }

    /// Averaged cumulants of `sum xi_i w_i`, rescaled so that `sum v^2 = N`.
    pub fn from_weights(order: u8, weights: &[f64], dist: &CoefficientDistribution, n_norm: f64) -> Result<Self> {
        let s2: f64 = weights.iter().map(|w| w * w).sum();
        if !(s2 > 0.0) {
            return Err(Error::Domain("weights have zero norm".into()));
        }
        let scale = (n_norm / s2).sqrt();
        let chi = |k: i32| -> f64 {
            dist.cumulant(k as u32) * weights.iter().map(|w| (w * scale).powi(k)).sum::<f64>() / n_norm
        };
        Self::new(order, chi(3), chi(4), chi(5), n_norm)
    }

    /// `(k, coefficient of H_k)` pairs after the leading 1.
    fn terms(&self) -> Vec<(usize, f64)> {
        let n = self.n_norm;
        let (c3, c4, c5) = (self.chi3, self.chi4, self.chi5);
        let mut t = vec![(3, c3 / 6.0 / n.sqrt())];
        if self.order >= 4 {
            t.push((4, c4 / 24.0 / n));
            t.push((6, c3 * c3 / 72.0 / n));
        }
        if self.order >= 5 {
            let k = n.powf(-1.5);
            t.push((5, c5 / 120.0 * k));
            t.push((7, c3 * c4 / 144.0 * k));
            t.push((9, c3.powi(3) / 1296.0 * k));
        }
        t
    }

    pub fn density(&self, x: f64) -> f64 {
        let poly: f64 = 1.0 + self.terms().iter().map(|(k, c)| c * hermite(*k, x)).sum::<f64>();
        poly * normal_pdf(x)
    }

    /// Uses `int_{-inf}^x H_k phi = -H_{k-1}(x) phi(x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        normal_cdf(x) - normal_pdf(x) * self.terms().iter().map(|(k, c)| c * hermite(k - 1, x)).sum::<f64>()
    }
}

pub fn density_1d(params: &EdgeworthDensity1D, x: f64) -> f64 {
    params.density(x)
}

pub fn cdf_1d(params: &EdgeworthDensity1D, x: f64) -> f64 {
    params.cdf(x)
}

/// Leading constant `C(t, s)` of `sum_i b~_i^t ((i - x^2)/x)^s ~ C(t,s) x^{-(t-2)/2}`.
/// Odd `s` cancels at leading order and gives 0.
pub fn sum_constant(t: u32, s: u32) -> f64 {
    if s % 2 == 1 {
        return 0.0;
    }
    let (t, s) = (f64::from(t), f64::from(s));
    ((-t / 4.0) * (2.0 * PI).ln() + 0.5 * (s + 1.0) * (4.0 / t).ln() + ln_gamma(0.5 * (s + 1.0))).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AsymptoticSum {
    pub exact: f64,
    pub closed_form: f64,
    /// The index window ran into `n`; the exact value is then truncated.
    pub edge_clipped: bool,
}

impl AsymptoticSum {
    pub fn rel_err(&self) -> f64 {
        (self.exact / self.closed_form - 1.0).abs()
    }
}

/// `sum_{i<=n} b~_i(x)^t ((i - x^2)/x)^s` against `C(t,s) x^{-(t-2)/2}`.
pub fn asymptotic_sum(t: u32, s: u32, x: f64, n: usize) -> Result<AsymptoticSum> {
    if t < 2 {
        return Err(Error::Domain(format!("power t = {t} must be at least 2")));
    }
    if !(x > 0.0) {
        return Err(Error::Domain(format!("x = {x} must be positive")));
    }
    let w = support_window(x, n, DEFAULT_TAU)?;
    let term = |k: usize| w.weights[k].powi(t as i32) * w.deriv_ratio[k].powi(s as i32);
    // Pairwise from the peak outward.
    let peak = ((x * x).floor() as usize).clamp(w.i_lo, w.i_hi) - w.i_lo;
    let mut exact = term(peak);
    for j in 1..w.len() {
        let lo = peak.checked_sub(j).map(term).unwrap_or(0.0);
        let hi = if peak + j < w.len() { term(peak + j) } else { 0.0 };
        exact += lo + hi;
    }
    let closed_form = sum_constant(t, s) * x.powf(-(f64::from(t) - 2.0) / 2.0);
    let need = x * x + 10.0 * x * (n as f64).ln().max(0.0).sqrt();
    Ok(AsymptoticSum { exact, closed_form, edge_clipped: w.edge_clipped || (n as f64) < need })
}

/// Which Gaussian coordinate carries the `|.|` factor in the Kac–Rice pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Pairing {
    /// `|t_1|` on coordinate 1 (value), delta on coordinate 2 (derivative):
    /// the published assembly.
    AbsOnValue,
    /// Delta on the value, `|.|` on the derivative: `E |P'| delta(P)`.
    DeltaOnValue,
}

/// Source of the products `C(3,a) C(3,b)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossConstants {
    /// Products of the leading constants.
    Lemma,
    /// Published values `sqrt2/3`, `4 sqrt2/9`, `8 sqrt2/27` (over `sqrt pi`).
    Printed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AssemblyOptions {
    pub pairing: Pairing,
    pub convention: Gamma2Convention,
    pub cross: CrossConstants,
}

impl AssemblyOptions {
    /// Reproduces the published `C_1, C_2`.
    pub fn published() -> Self {
        AssemblyOptions { pairing: Pairing::AbsOnValue, convention: Gamma2Convention::Product, cross: CrossConstants::Lemma }
    }

    /// `E|P'| delta(P)` with the formal-expansion second-order term.
    pub fn kac_rice() -> Self {
        AssemblyOptions { pairing: Pairing::DeltaOnValue, convention: Gamma2Convention::Merged, cross: CrossConstants::Lemma }
    }
}

pub type Q = Ratio<i64>;

/// `C_4 = -7/(192 pi sqrt pi)`.
pub fn c1_closed() -> f64 {
    -7.0 / (192.0 * PI * PI.sqrt())
}

/// `C_3^2` coefficient `sqrt2/(12 pi sqrt pi)`.
pub fn c2_closed() -> f64 {
    2f64.sqrt() / (12.0 * PI * PI.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    /// Multiplies `E xi^4 - 3`; unit `1/(pi sqrt pi)`.
    Kurtosis,
    /// Multiplies `(E xi^3)^2`; unit `sqrt2/(pi sqrt pi)`.
    Skew,
}

impl Group {
    pub fn unit(self) -> f64 {
        match self {
            Group::Kurtosis => 1.0 / (PI * PI.sqrt()),
            Group::Skew => 2f64.sqrt() / (PI * PI.sqrt()),
        }
    }

    pub fn unit_label(self) -> &'static str {
        match self {
            Group::Kurtosis => "1/(pi sqrt(pi))",
            Group::Skew => "sqrt(2)/(pi sqrt(pi))",
        }
    }
}

/// One nonzero term of the correction assembly. Each factor is kept both as
/// a float computed from the special-function routines and as an exact
/// rational in the factor's natural unit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LedgerLine {
    pub group: Group,
    pub term: String,
    /// Combinatorial prefactor (`1/gamma!` or `1/(2 a! b!)` per ordered pair).
    pub weight: (Q, f64),
    /// `int |t| p(t) phi`, unit `sqrt(2/pi)`.
    pub abs_factor: (i64, f64),
    /// `p(0) phi(0)`, unit `1/sqrt(2 pi)`.
    pub delta_factor: (i64, f64),
    /// Coefficient of `log(c2/c1)` from the x-integral, unit `1/sqrt pi`
    /// (kurtosis) or `sqrt2/sqrt pi` (skew).
    pub x_factor: (Q, f64),
    /// Product, unit [`Group::unit`].
    pub contribution: (Q, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrectionAssembly {
    pub options: AssemblyOptions,
    pub lines: Vec<LedgerLine>,
    /// Coefficient of `(E xi^4 - 3) log(c2/c1)`.
    pub kurtosis: (Q, f64),
    /// Coefficient of `(E xi^3)^2 log(c2/c1)`.
    pub skew: (Q, f64),
}

fn ratio_to_f64(q: Q) -> f64 {
    *q.numer() as f64 / *q.denom() as f64
}

/// `Gamma((s+1)/2)/sqrt(pi) = (s-1)!!/2^{s/2}` for even `s`.
fn half_gamma_ratio(s: u8) -> Q {
    let mut q = Q::from_integer(1);
    let mut k = 1i64;
    while k < s as i64 {
        q *= Q::new(k, 2);
        k += 2;
    }
    q
}

/// `C(4,s) sqrt(pi)`.
fn x_factor_quartic(s: u8) -> Q {
    half_gamma_ratio(s) * Q::new(1, 2)
}

/// `C(3,a) C(3,b) sqrt(pi)/sqrt(2)`.
fn x_factor_cubic_pair(a: u8, b: u8, cross: CrossConstants) -> Q {
    let lemma = {
        let k = (a as i64 + b as i64) / 2 + 1;
        let mut q = Q::new(1, 4);
        for _ in 0..k {
            q *= Q::new(4, 3);
        }
        q * half_gamma_ratio(a) * half_gamma_ratio(b)
    };
    match (cross, a, b) {
        (CrossConstants::Printed, 0, 2) | (CrossConstants::Printed, 2, 0) => Q::new(4, 9),
        (CrossConstants::Printed, 2, 2) => Q::new(8, 27),
        _ => lemma,
    }
}

/// Splits a 2-d polynomial factor into the `|.|` and delta coordinates.
fn t_factors(p_value: &[i64], p_deriv: &[i64], pairing: Pairing) -> ((i64, f64), (i64, f64)) {
    let (abs_p, delta_p) = match pairing {
        Pairing::AbsOnValue => (p_value, p_deriv),
        Pairing::DeltaOnValue => (p_deriv, p_value),
    };
    ((poly_abs_moment_units(abs_p), poly_abs_moment(abs_p)), (delta_p[0], poly_density_at_zero(delta_p)))
}

/// Coefficients of `(E xi^4 - 3)` and `(E xi^3)^2` in the `log(c2/c1)` term of
/// `E N(xi) - E N(G)` over `[c1 M, c2 M]`, assembled term by term.
pub fn assemble_correction(opts: AssemblyOptions) -> CorrectionAssembly {
    let rt2 = 2f64.sqrt();
    let rtpi = PI.sqrt();
    let mut lines = Vec::new();

    for g in MultiIndex::all(2, 4) {
        let (g1, g2) = (g.0[0], g.0[1]);
        if g2 % 2 == 1 {
            continue;
        }
        let (abs_f, delta_f) = t_factors(&hermite_coeffs(g1 as usize), &hermite_coeffs(g2 as usize), opts.pairing);
        let w = Q::new(1, g.factorial() as i64);
        let xq = x_factor_quartic(g2);
        let xf = sum_constant(4, u32::from(g2));
        let value = ratio_to_f64(w) * abs_f.1 * delta_f.1 * xf;
        let exact = w * Q::from_integer(abs_f.0 * delta_f.0) * xq;
        if exact == Q::from_integer(0) {
            continue;
        }
        lines.push(LedgerLine {
            group: Group::Kurtosis,
            term: format!("Gamma' {g}"),
            weight: (w, ratio_to_f64(w)),
            abs_factor: abs_f,
            delta_factor: delta_f,
            x_factor: (xq, xf),
            contribution: (exact, value / Group::Kurtosis.unit()),
        });
    }

    let cubic: Vec<MultiIndex> = MultiIndex::all(2, 3).into_iter().filter(|a| a.0[1] % 2 == 0).collect();
    for a in &cubic {
        for b in &cubic {
            let (pv, pd) = match opts.convention {
                Gamma2Convention::Product => (
                    hermite_product(a.0[0] as usize, b.0[0] as usize),
                    hermite_product(a.0[1] as usize, b.0[1] as usize),
                ),
                Gamma2Convention::Merged => {
                    let m = a.add(b);
                    (hermite_coeffs(m.0[0] as usize), hermite_coeffs(m.0[1] as usize))
                }
            };
            let (abs_f, delta_f) = t_factors(&pv, &pd, opts.pairing);
            let w = Q::new(1, 2 * (a.factorial() * b.factorial()) as i64);
            let xq = x_factor_cubic_pair(a.0[1], b.0[1], opts.cross);
            let xf = match opts.cross {
                CrossConstants::Lemma => sum_constant(3, u32::from(a.0[1])) * sum_constant(3, u32::from(b.0[1])),
                CrossConstants::Printed => ratio_to_f64(xq) * rt2 / rtpi,
            };
            let value = ratio_to_f64(w) * abs_f.1 * delta_f.1 * xf;
            let exact = w * Q::from_integer(abs_f.0 * delta_f.0) * xq;
            if exact == Q::from_integer(0) {
                continue;
            }
            lines.push(LedgerLine {
                group: Group::Skew,
                term: format!("Gamma'' {a}x{b}"),
                weight: (w, ratio_to_f64(w)),
                abs_factor: abs_f,
                delta_factor: delta_f,
                x_factor: (xq, xf),
                contribution: (exact, value / Group::Skew.unit()),
            });
        }
    }

    let total = |grp: Group| -> (Q, f64) {
        let q = lines.iter().filter(|l| l.group == grp).fold(Q::from_integer(0), |s, l| s + l.contribution.0);
        let f = lines.iter().filter(|l| l.group == grp).map(|l| l.contribution.1).sum::<f64>() * grp.unit();
        (q, f)
    };
    let kurtosis = total(Group::Kurtosis);
    let skew = total(Group::Skew);
    CorrectionAssembly { options: opts, lines, kurtosis, skew }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectationCorrection {
    pub assembled: f64,
    pub closed_form: f64,
}

/// `E N(xi) - E N(G)` over `[c1 M, c2 M]` at leading order:
/// `(C_1 (E xi^4 - 3) + C_2 (E xi^3)^2) log(c2/c1)`.
pub fn expectation_correction(c1: f64, c2: f64, dist: &CoefficientDistribution) -> Result<ExpectationCorrection> {
    expectation_correction_with(c1, c2, dist, AssemblyOptions::published())
        .and_then(|(e, closed)| {
            let scale = e.abs().max(closed.abs());
            if (e - closed).abs() > 1e-10 * scale {
                return Err(Error::Numerical(format!("assembled correction {e} disagrees with closed form {closed}")));
            }
            Ok(ExpectationCorrection { assembled: e, closed_form: closed })
        })
}

/// `(assembled, published closed form)` under the given assembly options.
pub fn expectation_correction_with(
    c1: f64,
    c2: f64,
    dist: &CoefficientDistribution,
    opts: AssemblyOptions,
) -> Result<(f64, f64)> {
    if !(c1 > 0.0 && c2 > c1 && c2.is_finite()) {
        return Err(Error::Domain(format!("need 0 < c1 < c2, got c1 = {c1}, c2 = {c2}")));
    }
    let (m3, k4) = dist.excess_cumulants();
    let log = (c2 / c1).ln();
    let asm = assemble_correction(opts);
    let assembled = (asm.kurtosis.1 * k4 + asm.skew.1 * m3 * m3) * log;
    let closed = (c1_closed() * k4 + c2_closed() * m3 * m3) * log;
    Ok((assembled, closed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::{adaptive, GaussLegendre};

    fn gl_1d<F: Fn(f64) -> f64>(f: F) -> f64 {
        GaussLegendre::cached(120).integrate(-14.0, 14.0, f)
    }

    fn gl_2d<F: Fn(f64, f64) -> f64>(f: F) -> f64 {
        let r = GaussLegendre::cached(100);
        r.integrate(-13.0, 13.0, |a| r.integrate(-13.0, 13.0, |b| f(a, b)))
    }

    #[test]
    fn hermite_values() {
        assert_eq!(hermite(0, 7.3), 1.0);
        for &x in &[-2.0, 0.3, 1.7] {
            assert!((hermite(2, x) - (x * x - 1.0)).abs() < 1e-14);
        }
        let x = 1.5f64;
        let h6 = x.powi(6) - 15.0 * x.powi(4) + 45.0 * x * x - 15.0;
        assert!((hermite(6, x) - h6).abs() < 1e-12);
        assert!((hermite(6, x) - 21.703125).abs() < 1e-12);
        assert_eq!(hermite_coeffs(6), vec![-15, 0, 45, 0, -15, 0, 1]);
        for k in 0..=MAX_HERMITE {
            let c = hermite_coeffs(k);
            let x = 0.77f64;
            let v: f64 = c.iter().enumerate().map(|(d, a)| *a as f64 * x.powi(d as i32)).sum();
            assert!((v - hermite(k, x)).abs() < 1e-9 * v.abs().max(1.0));
        }
    }

    #[test]
    fn hermite_orthogonality() {
        for j in 0..=8 {
            for k in 0..=8 {
                let v = gl_1d(|x| hermite(j, x) * hermite(k, x) * normal_pdf(x));
                let want = if j == k { (1..=j).product::<usize>() as f64 } else { 0.0 };
                assert!((v - want).abs() < 1e-9, "j={j} k={k} v={v}");
            }
        }
    }

    #[test]
    fn multi_index_products() {
        let a = MultiIndex::new(vec![2, 0]).unwrap();
        assert!((hermite_multi(&a, &[1.3, 9.0]).unwrap() - (1.69 - 1.0)).abs() < 1e-14);
        let a = MultiIndex::new(vec![3, 1]).unwrap();
        assert_eq!(hermite_multi(&a, &[1.0, 1.0]).unwrap(), -2.0);
        let b = MultiIndex::new(vec![3, 0]).unwrap();
        let p = hermite_multi(&b, &[2.0, 0.0]).unwrap().powi(2);
        assert_eq!(p, 4.0);
        let l1 = MultiIndex::from_coords(&[1, 2, 1], 2).unwrap();
        let l2 = MultiIndex::from_coords(&[2, 1, 1], 2).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(l1.entries(), &[2, 1]);
        assert!(hermite_multi(&a, &[1.0]).is_err());
        assert_eq!(MultiIndex::all(2, 4).len(), 5);
        assert_eq!(MultiIndex::all(4, 3).len(), 20);
    }

    #[test]
    fn abs_and_delta_tables() {
        let s = (2.0 / PI).sqrt();
        let r = INV_SQRT_2PI;
        assert!((hermite_moment_abs(4) + s).abs() < 1e-14);
        assert!((hermite_moment_abs(2) - s).abs() < 1e-14);
        assert!((hermite_moment_abs(0) - s).abs() < 1e-14);
        assert_eq!(hermite_moment_abs(3), 0.0);
        assert!((hermite_density_at_zero(4) - 3.0 * r).abs() < 1e-14);
        assert!((hermite_density_at_zero(4) - 1.196_826_841_2).abs() < 1e-9);
        assert!((hermite_density_at_zero(2) + r).abs() < 1e-15);
        assert_eq!(hermite_density_at_zero(5), 0.0);
        // products
        assert!((poly_abs_moment(&hermite_product(3, 3)) - 18.0 * s).abs() < 1e-12);
        assert!((poly_abs_moment(&hermite_product(1, 1)) - 2.0 * s).abs() < 1e-12);
        assert!((poly_abs_moment(&hermite_product(2, 2)) - 5.0 * s).abs() < 1e-12);
        assert!((poly_abs_moment(&hermite_product(3, 1)) - 2.0 * s).abs() < 1e-12);
        assert!((poly_density_at_zero(&hermite_product(2, 2)) - r).abs() < 1e-15);
        assert_eq!(poly_density_at_zero(&hermite_product(3, 3)), 0.0);
        assert_eq!(poly_abs_moment_units(&hermite_product(3, 3)), 18);
    }

    #[test]
    fn abs_and_delta_match_quadrature() {
        for k in 0..=10usize {
            let (q, _) = adaptive(|t: f64| t.abs() * hermite(k, t) * normal_pdf(t), -40.0, 40.0, 1e-13, 1e-15);
            assert!((q - hermite_moment_abs(k)).abs() < 1e-10, "k={k}");
            let d = 1e-3;
            let (z, _) = adaptive(|t: f64| hermite(k, t) * normal_pdf(t), -d, d, 1e-14, 0.0);
            let lim = hermite_density_at_zero(k);
            // O(d^2) bias of the finite window
            assert!((z / (2.0 * d) - lim).abs() < 1e-4 * lim.abs().max(1.0) * (k as f64 + 1.0).powi(2), "k={k}");
        }
    }

    #[test]
    fn gamma_terms() {
        let g = CumulantTable::zero(2, 30.0).unwrap();
        assert_eq!(gamma1(&g, &[0.4, -1.0]).unwrap(), 0.0);
        assert_eq!(gamma2(&g, &[0.4, -1.0]).unwrap(), 0.0);
        let c = 0.37;
        let t = CumulantTable::with_entries(2, 30.0, [(MultiIndex::new(vec![4, 0]).unwrap(), c)]).unwrap();
        for &x in &[-1.2, 0.0, 2.5] {
            assert!((gamma2(&t, &[x, 0.7]).unwrap() - c / 24.0 * hermite(4, x)).abs() < 1e-14);
        }
        let t = CumulantTable::with_entries(2, 30.0, [(MultiIndex::new(vec![3, 0]).unwrap(), c)]).unwrap();
        let x = 1.1;
        assert!((gamma2(&t, &[x, 0.3]).unwrap() - c * c / 72.0 * hermite(3, x).powi(2)).abs() < 1e-14);
        assert_eq!(gamma2(&t, &[0.0, 0.3]).unwrap(), 0.0);
        let t1 = CumulantTable::with_entries(1, 10.0, [(MultiIndex::new(vec![3]).unwrap(), c)]).unwrap();
        assert!((gamma1(&t1, &[0.8]).unwrap() - c / 6.0 * hermite(3, 0.8)).abs() < 1e-15);
        assert_eq!(gamma1(&t1, &[0.0]).unwrap(), 0.0);
    }

    #[test]
    fn gamma1_pairs_to_zero_with_even_functions() {
        let t = CumulantTable::with_entries(
            2,
            30.0,
            [(MultiIndex::new(vec![3, 0]).unwrap(), 0.4), (MultiIndex::new(vec![2, 1]).unwrap(), -0.3)],
        )
        .unwrap();
        let v = gl_2d(|a, b| (a * a + b.abs()).cos() * gamma1(&t, &[a, b]).unwrap() * normal_pdf(a) * normal_pdf(b));
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn density_q2_mass_and_moments() {
        let n = 25.0;
        let c3 = 0.8;
        let t1 = CumulantTable::with_entries(
            1,
            n,
            [(MultiIndex::new(vec![3]).unwrap(), c3), (MultiIndex::new(vec![4]).unwrap(), -1.1)],
        )
        .unwrap();
        let mass = gl_1d(|x| density_q2(&t1, &[x], n).unwrap());
        assert!((mass - 1.0).abs() < 1e-9);
        let m3 = gl_1d(|x| x.powi(3) * density_q2(&t1, &[x], n).unwrap());
        assert!((m3 - c3 / n.sqrt()).abs() < 1e-8);
        let g = CumulantTable::zero(2, n).unwrap();
        assert_eq!(density_q2(&g, &[0.3, -0.2], n).unwrap(), std_normal_density(&[0.3, -0.2]));
        let t2 = CumulantTable::weyl_2d(6.0, 200, &CoefficientDistribution::discrete(&[0.0, 1.0, 4.0], &[0.6, 0.3, 0.1]).unwrap(), 6.0)
            .unwrap();
        let mass = gl_2d(|a, b| density_q2(&t2, &[a, b], 6.0).unwrap());
        assert!((mass - 1.0).abs() < 1e-9, "mass {mass}");
    }

    #[test]
    fn one_d_densities() {
        let p = EdgeworthDensity1D::new(5, 0.0, 0.0, 0.0, 9.0).unwrap();
        assert_eq!(p.density(0.7), normal_pdf(0.7));
        let k = -1.7;
        let n = 12.0;
        let p = EdgeworthDensity1D::new(4, 0.0, k, 0.0, n).unwrap();
        assert!((p.density(0.0) - normal_pdf(0.0) * (1.0 + k / (8.0 * n))).abs() < 1e-15);
        let p = EdgeworthDensity1D::new(5, 0.9, -0.4, 0.3, 4.0).unwrap();
        let mass = gl_1d(|x| p.density(x));
        assert!((mass - 1.0).abs() < 1e-9);
        let (q, _) = adaptive(|x| p.density(x), -40.0, 0.6, 1e-13, 1e-15);
        assert!((q - p.cdf(0.6)).abs() < 1e-11);
        assert!(EdgeworthDensity1D::new(6, 0.0, 0.0, 0.0, 1.0).is_err());
    }

    #[test]
    fn cumulant_tables() {
        let g = CumulantTable::weyl_2d(20.0, 1000, &CoefficientDistribution::gaussian(), 20.0).unwrap();
        assert!(g.entries.values().all(|v| *v == 0.0));
        assert_eq!(g.entries.len(), 4 + 5);
        let r = CoefficientDistribution::rademacher();
        let w = support_window(30.0, 2000, DEFAULT_TAU).unwrap();
        let a40 = MultiIndex::new(vec![4, 0]).unwrap();
        let v = avg_cumulant(&a40, &w, &r, 30.0).unwrap();
        assert!((v + 1.0 / PI.sqrt()).abs() < 0.01 * PI.sqrt().recip(), "{v}");
        let a30 = MultiIndex::new(vec![3, 0]).unwrap();
        assert_eq!(avg_cumulant(&a30, &w, &r, 30.0).unwrap(), 0.0);
        let a2 = MultiIndex::new(vec![2, 0]).unwrap();
        assert!(matches!(avg_cumulant(&a2, &w, &r, 30.0), Err(Error::Domain(_))));
        let t4 = CumulantTable::weyl_4d(10.0, 12.0, 400, &r, 10.0).unwrap();
        assert_eq!(t4.entries.len(), 20 + 35);
        let t2 = CumulantTable::weyl_2d(10.0, 400, &r, 10.0).unwrap();
        let x_only = MultiIndex::new(vec![4, 0, 0, 0]).unwrap();
        assert!((t4.get(&x_only) - t2.get(&a40)).abs() < 1e-12 * t2.get(&a40).abs());
    }

    #[test]
    fn sum_constants() {
        assert!((sum_constant(2, 0) - 1.0).abs() < 1e-15);
        assert!((sum_constant(4, 0) - 1.0 / (2.0 * PI.sqrt())).abs() < 1e-15);
        let c = sum_constant(3, 0).powi(2);
        assert!((c - (2.0 / 3.0) / (2.0 * PI).sqrt()).abs() < 1e-15);
        assert!((c - 2f64.sqrt() / (3.0 * PI.sqrt())).abs() < 1e-15);
        assert_eq!(sum_constant(4, 3), 0.0);
        let s = asymptotic_sum(4, 0, 30.0, 2000).unwrap();
        assert!((s.closed_form - 9.4031e-3).abs() < 1e-7);
        assert!(s.rel_err() < 0.01);
        assert!(!s.edge_clipped);
        let s = asymptotic_sum(2, 0, 15.0, 1000).unwrap();
        assert!((s.exact - 1.0).abs() < 1e-12);
        assert!(asymptotic_sum(4, 0, 30.0, 950).unwrap().edge_clipped);
    }

    #[test]
    fn published_constants_reassemble() {
        let a = assemble_correction(AssemblyOptions::published());
        assert_eq!(a.kurtosis.0, Q::new(-7, 192));
        assert_eq!(a.skew.0, Q::new(1, 12));
        assert!((a.kurtosis.1 - c1_closed()).abs() < 1e-12 * c1_closed().abs());
        assert!((a.skew.1 - c2_closed()).abs() < 1e-12 * c2_closed());
        assert!((c1_closed() + 6.547_447_160_8e-3).abs() < 1e-13);
        let printed = assemble_correction(AssemblyOptions { cross: CrossConstants::Printed, ..AssemblyOptions::published() });
        assert_eq!(printed.skew.0, Q::new(1, 12));
        // line count: (4,0), (2,2), (0,4) and four cubic pairs
        assert_eq!(a.lines.len(), 7);
        for l in &a.lines {
            let f = ratio_to_f64(l.contribution.0);
            assert!((l.contribution.1 - f).abs() < 1e-12 * f.abs().max(1e-3), "{}", l.term);
        }
    }

    #[test]
    fn kac_rice_pairing_constants() {
        let a = assemble_correction(AssemblyOptions::kac_rice());
        assert_eq!(a.kurtosis.0, Q::new(-1, 64));
        assert_eq!(a.skew.0, Q::new(1, 216));
    }

    #[test]
    fn correction_examples() {
        let g = expectation_correction(1.0, 2.0, &CoefficientDistribution::gaussian()).unwrap();
        assert_eq!((g.assembled, g.closed_form), (0.0, 0.0));
        let r = expectation_correction(1.0, 2.0, &CoefficientDistribution::rademacher()).unwrap();
        let want = 7.0 / (96.0 * PI * PI.sqrt()) * 2f64.ln();
        assert!((r.closed_form - want).abs() < 1e-15);
        assert!((r.closed_form - 9.076e-3).abs() < 1e-6);
        assert!((r.assembled - r.closed_form).abs() < 1e-12 * r.closed_form);
        let d = CoefficientDistribution::discrete(&[0.0, 1.0, 5.0], &[0.5, 0.3, 0.2]).unwrap();
        let e = expectation_correction(0.5, 3.0, &d).unwrap();
        assert!((e.assembled - e.closed_form).abs() < 1e-12 * e.closed_form.abs());
        assert!(expectation_correction(2.0, 1.0, &d).is_err());
    }
}
