//! Anti-concentration quantities: xi-norms, the characteristic-function
//! bound, and brute-force least-common-denominator scans.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff_dist::{CoefficientDistribution, Kind};
use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;
use crate::special::dist_to_int;
use crate::weyl_eval::support_window;

/// Largest excluded set the scanner supports.
pub const MAX_EXCLUDED: usize = 3;
/// Upper limit on `n * (D_max / step)^d`.
pub const SCAN_BUDGET: f64 = 1e10;
/// Cells are halved until their width falls below `step / REFINE_DEPTH_FACTOR`.
pub const REFINE_DEPTH_FACTOR: f64 = 1024.0;

const QUAD_ORDER: usize = 64;

/// `E ||w (xi_1 - xi_2)||^2_{R/Z}` for two independent copies of `dist`.
pub fn xi_norm_sq(w: f64, dist: &CoefficientDistribution) -> f64 {
    match &dist.kind {
        Kind::Rademacher => 0.5 * dist_to_int(2.0 * w).powi(2),
        Kind::Discrete { values, probs, .. } => {
            let mut acc = 0.0;
            for (a, pa) in values.iter().zip(probs) {
                for (b, pb) in values.iter().zip(probs) {
                    acc += pa * pb * dist_to_int(w * (a - b)).powi(2);
                }
            }
            acc
        }
        Kind::Gaussian => {
            // xi_1 - xi_2 ~ N(0, 2)
            let s2 = 2.0;
            let dens = move |t: f64| (-t * t / (2.0 * s2)).exp() / (2.0 * std::f64::consts::PI * s2).sqrt();
            2.0 * kinked_integral(w, 12.0 * s2.sqrt(), dens)
        }
        Kind::UniformSym => {
            let h = 2.0 * 3f64.sqrt();
            let dens = move |t: f64| ((h - t.abs()) / (h * h)).max(0.0);
            2.0 * kinked_integral(w, h, dens)
        }
    }
}

/// `int_0^t_max ||w t||^2 dens(t) dt`, split at the kinks `t = (k + 1/2)/|w|`.
fn kinked_integral<F: Fn(f64) -> f64>(w: f64, t_max: f64, dens: F) -> f64 {
    let rule = GaussLegendre::cached(QUAD_ORDER);
    let aw = w.abs();
    let f = |t: f64| dist_to_int(w * t).powi(2) * dens(t);
    if aw == 0.0 {
        return 0.0;
    }
    let mut acc = 0.0;
    let mut lo = 0.0;
    let mut k = 0u64;
    loop {
        let kink = (k as f64 + 0.5) / aw;
        let hi = kink.min(t_max);
        acc += rule.integrate(lo, hi, f);
        if hi >= t_max {
            break;
        }
        lo = hi;
        k += 1;
    }
    acc
}

/// `exp(-sum_i ||<v_i, eta / 2 pi>||_xi^2)`, an upper bound on `|prod phi_i(eta)|`.
pub fn char_bound(weights: &[Vec<f64>], eta: &[f64], dist: &CoefficientDistribution) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    let s: f64 = weights
        .iter()
        .map(|v| {
            let phase: f64 = v.iter().zip(eta).map(|(a, b)| a * b).sum::<f64>() / tau;
            xi_norm_sq(phase, dist)
        })
        .sum();
    (-s).exp()
}

/// Which terms may be dropped from the sum.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Excluded {
    #[default]
    None,
    /// A fixed index set.
    Fixed(Vec<usize>),
    /// The best set of at most this size, chosen separately at every `D`
    /// (equivalently, drop the largest terms).
    AnyUpTo(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LCDQuery {
    /// `v_1 .. v_n`, all of the same dimension 1 or 2.
    pub weights: Vec<Vec<f64>>,
    pub r: f64,
    pub d_max: f64,
    /// `log M_n`
    pub tau: f64,
    pub excluded: Excluded,
    pub scan_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LCDResult {
    /// Smallest `||D||` in `[r, D_max]` with objective `<= tau`, `+inf` if none.
    pub d_star: f64,
    /// Smallest objective seen at any evaluated point.
    pub min_objective: f64,
    pub argmin: Vec<f64>,
    /// Lower bound on the objective over the whole scanned range.
    pub certified_lower_bound: f64,
    /// Width of the finest cells the refinement visited.
    pub certified_resolution: f64,
    /// Lipschitz constant `sum ||v_i||` used for the certificate.
    pub lipschitz: f64,
    /// Smallest `||D||` of a finest-level cell that could neither be cleared
    /// nor confirmed (`+inf` if none). Below `min(d_star, unresolved_from)`
    /// the absence of crossings is certified.
    pub unresolved_from: f64,
    pub excluded_max: usize,
}

impl LCDQuery {
    pub fn dim(&self) -> usize {
        self.weights.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if !(d == 1 || d == 2) {
            return Err(Error::Domain(format!("scanner supports dimension 1 or 2, got {d}")));
        }
        if self.weights.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Domain("weights must be finite vectors of one common dimension".into()));
        }
        if !(self.r > 0.0) {
            return Err(Error::Domain(format!("r must be positive, got {}", self.r)));
        }
        if !(self.d_max > self.r) || !self.d_max.is_finite() {
            return Err(Error::Domain(format!("D_max = {} must exceed r = {}", self.d_max, self.r)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Domain(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.scan_step > 0.0) {
            return Err(Error::Domain(format!("scan step must be positive, got {}", self.scan_step)));
        }
        match &self.excluded {
            Excluded::Fixed(idx) if idx.len() > MAX_EXCLUDED || idx.iter().any(|&i| i >= self.weights.len()) => {
                Err(Error::Domain(format!("excluded set must hold at most {MAX_EXCLUDED} valid indices")))
            }
            Excluded::AnyUpTo(k) if *k > MAX_EXCLUDED => {
                Err(Error::Domain(format!("excluded set size {k} exceeds {MAX_EXCLUDED}")))
            }
            _ => Ok(()),
        }
    }

    /// `n (D_max / step)^d`
    pub fn cost(&self) -> f64 {
        self.weights.len() as f64 * (self.d_max / self.scan_step).powi(self.dim() as i32)
    }

    fn excluded_max(&self) -> usize {
        match &self.excluded {
            Excluded::None => 0,
            Excluded::Fixed(v) => v.len(),
            Excluded::AnyUpTo(k) => *k,
        }
    }
}

/// Flattened weights with the fixed exclusions already removed.
struct Objective {
    d: usize,
    v: Vec<f64>,
    drop_top: usize,
}

impl Objective {
    fn new(q: &LCDQuery) -> Self {
        let d = q.dim();
        let skip: Vec<usize> = match &q.excluded {
            Excluded::Fixed(idx) => idx.clone(),
            _ => Vec::new(),
        };
        let v = q
            .weights
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.contains(i))
            .flat_map(|(_, w)| w.iter().copied())
            .collect();
        let drop_top = if let Excluded::AnyUpTo(k) = q.excluded { k } else { 0 };
        Objective { d, v, drop_top }
    }

    /// Compensated sum of `||<v_i, D>||^2`, minus the `drop_top` largest terms.
    fn eval(&self, dd: &[f64]) -> f64 {
        let mut sum = 0.0;
        let mut comp = 0.0;
        let mut top = [0.0f64; MAX_EXCLUDED];
        for w in self.v.chunks_exact(self.d) {
            let phase = if self.d == 1 { w[0] * dd[0] } else { w[0] * dd[0] + w[1] * dd[1] };
            let t = dist_to_int(phase).powi(2);
            if self.drop_top > 0 && t > top[self.drop_top - 1] {
                let mut k = self.drop_top - 1;
                while k > 0 && top[k - 1] < t {
                    top[k] = top[k - 1];
                    k -= 1;
                }
                top[k] = t;
            }
            let s = sum + t;
            comp += if sum.abs() >= t { (sum - s) + t } else { (t - s) + sum };
            sum = s;
        }
        let dropped: f64 = top[..self.drop_top].iter().sum();
        (sum + comp - dropped).max(0.0)
    }
}

/// Partial scan result over one chunk of coarse cells.
#[derive(Debug, Clone)]
struct Partial {
    d_star: f64,
    min_obj: f64,
    argmin: Vec<f64>,
    lower: f64,
    finest: f64,
    unresolved: f64,
}

impl Partial {
    fn empty() -> Self {
        Partial {
            d_star: f64::INFINITY,
            min_obj: f64::INFINITY,
            argmin: Vec::new(),
            lower: f64::INFINITY,
            finest: f64::INFINITY,
            unresolved: f64::INFINITY,
        }
    }

    fn see(&mut self, obj: f64, at: &[f64]) {
        if obj < self.min_obj {
            self.min_obj = obj;
            self.argmin = at.to_vec();
        }
    }

    /// Merge keeping the earlier chunk's argmin on ties.
    fn merge(mut self, other: Partial) -> Partial {
        self.d_star = self.d_star.min(other.d_star);
        if other.min_obj < self.min_obj {
            self.min_obj = other.min_obj;
            self.argmin = other.argmin;
        }
        self.lower = self.lower.min(other.lower);
        self.finest = self.finest.min(other.finest);
        self.unresolved = self.unresolved.min(other.unresolved);
        self
    }
}

struct Scan<'a> {
    obj: &'a Objective,
    lip: f64,
    tau: f64,
    r: f64,
    d_max: f64,
    floor: f64,
}

fn norm(p: &[f64]) -> f64 {
    p.iter().map(|x| x * x).sum::<f64>().sqrt()
}

impl Scan<'_> {
    /// 1-d cell `[lo, hi]` inside `[r, D_max]`, values at the ends known.
    fn cell_1d(&self, lo: f64, hi: f64, f_lo: f64, f_hi: f64, out: &mut Partial) {
        let h = hi - lo;
        // Each end bounds the objective on its side by slope `lip`; the two
        // cones meet at the lowest point.
        let lb = (0.5 * (f_lo + f_hi - self.lip * h)).max(0.0);
        let lb = lb.min(f_lo).min(f_hi);
        if lo >= out.d_star {
            out.lower = out.lower.min(lb);
            return;
        }
        if f_lo <= self.tau {
            out.d_star = out.d_star.min(lo);
        }
        if lb > self.tau || h <= self.floor {
            out.lower = out.lower.min(lb);
            out.finest = out.finest.min(h);
            if lb <= self.tau && f_lo > self.tau && f_hi > self.tau {
                out.unresolved = out.unresolved.min(lo);
            }
            if f_hi <= self.tau {
                out.d_star = out.d_star.min(hi);
            }
            return;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = self.obj.eval(&[mid]);
        out.see(f_mid, &[mid]);
        self.cell_1d(lo, mid, f_lo, f_mid, out);
        self.cell_1d(mid, hi, f_mid, f_hi, out);
    }

    /// 2-d square cell with centre `c` and half side `h`.
    fn cell_2d(&self, c: [f64; 2], h: f64, out: &mut Partial) {
        let half_diag = h * std::f64::consts::SQRT_2;
        let cn = norm(&c);
        let near = (cn - half_diag).max(0.0);
        if near > self.d_max || cn + half_diag < self.r || near >= out.d_star {
            return;
        }
        let f = self.obj.eval(&c);
        let inside = cn >= self.r && cn <= self.d_max;
        if inside {
            out.see(f, &c);
            if f <= self.tau {
                out.d_star = out.d_star.min(cn);
            }
        }
        let lb = (f - self.lip * half_diag).max(0.0);
        if lb > self.tau || 2.0 * h <= self.floor {
            out.lower = out.lower.min(lb);
            out.finest = out.finest.min(2.0 * h);
            if lb <= self.tau && !(inside && f <= self.tau) {
                out.unresolved = out.unresolved.min(near.max(self.r));
            }
            return;
        }
        let q = 0.5 * h;
        // Children nearest the origin first so `d_star` prunes early.
        let mut kids = [
            [c[0] - q, c[1] - q],
            [c[0] + q, c[1] - q],
            [c[0] - q, c[1] + q],
            [c[0] + q, c[1] + q],
        ];
        kids.sort_by(|a, b| norm(a).total_cmp(&norm(b)));
        for k in kids {
            self.cell_2d(k, q, out);
        }
    }
}

/// Certified coarse-to-fine scan of `||D||` over `[r, D_max]`.
pub fn lcd_search(query: &LCDQuery) -> Result<LCDResult> {
    query.validate()?;
    let cost = query.cost();
    if cost > SCAN_BUDGET {
        return Err(Error::Resource(format!(
            "scan cost n*(D_max/step)^d = {cost:.3e} exceeds {SCAN_BUDGET:.0e} (n = {}, D_max = {}, step = {}, d = {})",
            query.weights.len(),
            query.d_max,
            query.scan_step,
            query.dim()
        )));
    }
    let obj = Objective::new(query);
    let lip: f64 = query
        .weights
        .iter()
        .map(|v| norm(v))
        .sum();
    let scan = Scan { obj: &obj, lip, tau: query.tau, r: query.r, d_max: query.d_max, floor: query.scan_step / REFINE_DEPTH_FACTOR };
    let partial = if query.dim() == 1 { scan_1d(&scan, query) } else { scan_2d(&scan, query) };
    Ok(LCDResult {
        d_star: partial.d_star,
        min_objective: partial.min_obj,
        argmin: partial.argmin,
        certified_lower_bound: partial.lower,
        certified_resolution: partial.finest,
        lipschitz: lip,
        unresolved_from: partial.unresolved,
        excluded_max: query.excluded_max(),
    })
}

const CHUNK: usize = 256;

fn scan_1d(scan: &Scan, q: &LCDQuery) -> Partial {
    let k = ((q.d_max - q.r) / q.scan_step).ceil().max(1.0) as usize;
    let h = (q.d_max - q.r) / k as f64;
    let node = |j: usize| if j == k { q.d_max } else { q.r + j as f64 * h };
    let chunks: Vec<usize> = (0..k).step_by(CHUNK).collect();
    let parts: Vec<Partial> = chunks
        .par_iter()
        .map(|&start| {
            let end = (start + CHUNK).min(k);
            let mut out = Partial::empty();
            let mut f_lo = scan.obj.eval(&[node(start)]);
            out.see(f_lo, &[node(start)]);
            for j in start..end {
                let hi = node(j + 1);
                let f_hi = scan.obj.eval(&[hi]);
                out.see(f_hi, &[hi]);
                scan.cell_1d(node(j), hi, f_lo, f_hi, &mut out);
                f_lo = f_hi;
            }
            out
        })
        .collect();
    parts.into_iter().fold(Partial::empty(), Partial::merge)
}

fn scan_2d(scan: &Scan, q: &LCDQuery) -> Partial {
    // f(D) = f(-D): scan the upper half plane.
    let k = (2.0 * q.d_max / q.scan_step).ceil().max(1.0) as usize;
    let side = 2.0 * q.d_max / k as f64;
    let rows = ((q.d_max / side).ceil() as usize).max(1);
    let cells: Vec<[f64; 2]> = (0..rows)
        .flat_map(|j| (0..k).map(move |i| [-q.d_max + (i as f64 + 0.5) * side, (j as f64 + 0.5) * side]))
        .collect();
    let parts: Vec<Partial> = cells
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut out = Partial::empty();
            for c in chunk {
                scan.cell_2d(*c, 0.5 * side, &mut out);
            }
            out
        })
        .collect();
    parts.into_iter().fold(Partial::empty(), Partial::merge)
}

/// Objective on a caller-chosen list of points (for plotting a profile).
pub fn objective_profile(query: &LCDQuery, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    query.validate()?;
    if points.iter().any(|p| p.len() != query.dim()) {
        return Err(Error::Domain("profile points must match the weight dimension".into()));
    }
    let obj = Objective::new(query);
    Ok(points.iter().map(|p| obj.eval(p)).collect())
}

/// Alternating weights `1, sqrt 2, 1, sqrt 2, ...` of length `n`.
pub fn sk_weights(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![if i % 2 == 0 { 1.0 } else { std::f64::consts::SQRT_2 }]).collect()
}

/// `(n/2)(||D||^2 + ||D sqrt 2||^2)`, the closed form of the SK objective.
pub fn sk_objective(n: usize, d: f64) -> Result<f64> {
    if !n.is_multiple_of(2) {
        return Err(Error::Domain(format!("SK family needs even n, got {n}")));
    }
    Ok((n / 2) as f64 * (dist_to_int(d).powi(2) + dist_to_int(d * std::f64::consts::SQRT_2).powi(2)))
}

/// `sqrt(N) b~_i(x)` over the support window at `x`.
pub fn weyl_weights_1d(x: f64, n: usize, n_norm: f64, tau: f64) -> Result<Vec<Vec<f64>>> {
    let win = support_window(x, n, tau)?;
    let s = n_norm.sqrt();
    Ok(win.weights.iter().map(|w| vec![s * w]).collect())
}

/// `sqrt(N) (b~_i(x), b~_i'(x))` over the support window at `x`.
pub fn weyl_weights_2d(x: f64, n: usize, n_norm: f64, tau: f64) -> Result<Vec<Vec<f64>>> {
    let win = support_window(x, n, tau)?;
    let s = n_norm.sqrt();
    Ok(win.weights.iter().zip(&win.deriv_weights).map(|(w, c)| vec![s * w, s * c]).collect())
}
