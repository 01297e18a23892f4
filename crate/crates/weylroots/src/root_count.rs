//! Real zeros of one sample on an interval: a sign-change scan, the smoothed
//! Kac–Rice count `(1/2d) int |P'| 1{|P| < d}`, and the validity guard
//! `|P(a)|, |P(b)| > d`, `|P| + |P'| > d`.
//!
//! Signs use `sgn(0) = +`; intervals are half-open `[a, b)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::adaptive;
use crate::weyl_eval::{support_window, WeylSample};

pub const DEFAULT_STEP: f64 = 0.02;
pub const STEP_FLOOR: f64 = 1e-4;
pub const ROOT_TOL: f64 = 1e-10;
pub const DEFAULT_THETA: f64 = 5.0;
pub const DEFAULT_GUARD_EXPONENT: f64 = 0.2;

/// Cells whose grid margin `|P| + |P'|` falls below this get a local search.
const MARGIN_REFINE: f64 = 0.05;
/// Hermite-cubic extrema this close to zero are treated as possible crossings.
const CUBIC_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dyadic {
    pub c1: f64,
    pub c2: f64,
    pub m: f64,
}

/// `[a, b)`, optionally written as `[c1 M, c2 M]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalSpec {
    pub a: f64,
    pub b: f64,
    /// Soft-edge gap: `b <= sqrt(n) - n^{g/2}` unless `edge_mode`.
    pub guard_exponent: f64,
    pub edge_mode: bool,
    pub dyadic: Option<Dyadic>,
}

impl IntervalSpec {
    /// `0 <= a <= b`; a zero-length interval is allowed and holds no roots.
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= a && b.is_finite()) {
            return Err(Error::Domain(format!("interval [{a}, {b}] needs 0 <= a <= b")));
        }
        Ok(IntervalSpec { a, b, guard_exponent: DEFAULT_GUARD_EXPONENT, edge_mode: false, dyadic: None })
    }

    pub fn dyadic(c1: f64, c2: f64, m: f64) -> Result<Self> {
        if !(c1 > 0.0 && c2 > c1 && m > 0.0) {
            return Err(Error::Domain(format!("dyadic interval needs 0 < c1 < c2 and M > 0, got {c1}, {c2}, {m}")));
        }
        let mut iv = Self::new(c1 * m, c2 * m)?;
        iv.dyadic = Some(Dyadic { c1, c2, m });
        Ok(iv)
    }

    pub fn with_edge_mode(mut self, on: bool) -> Self {
        self.edge_mode = on;
        self
    }

    pub fn with_guard(mut self, g: f64) -> Self {
        self.guard_exponent = g;
        self
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn is_empty(&self) -> bool {
        self.b <= self.a
    }

    /// Checks the soft-edge gap for degree `n`.
    pub fn check(&self, n: usize) -> Result<()> {
        let rn = (n as f64).sqrt();
        if self.edge_mode {
            if self.b > rn {
                return Err(Error::Domain(format!("b = {} beyond sqrt(n) = {rn}", self.b)));
            }
            return Ok(());
        }
        let top = rn - (n as f64).powf(self.guard_exponent / 2.0);
        if self.b > top {
            return Err(Error::Domain(format!(
                "b = {} exceeds sqrt(n) - n^(g/2) = {top:.4} (g = {}); enable edge mode to allow it",
                self.b, self.guard_exponent
            )));
        }
        Ok(())
    }

    /// `N = M`, the scale of the endpoints (the upper endpoint).
    pub fn scale(&self) -> f64 {
        self.dyadic.map_or(self.b, |d| d.m * d.c2).max(1.0)
    }

    /// `delta = N^{-theta}`.
    pub fn delta(&self, theta: f64) -> f64 {
        self.scale().powf(-theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootCountResult {
    pub count: usize,
    pub roots: Vec<f64>,
    /// Filled by [`count_roots`]; `None` from the bare scan.
    pub kac_rice_value: Option<f64>,
    pub validity: bool,
    pub delta_used: f64,
}

/// Uniform grid on `[a, b]` with cells at most `h0` wide, aligned to every
/// break point. Returns the nodes and, per cell, the index of its piece.
pub fn grid_with_breaks(breaks: &[f64], h0: f64) -> (Vec<f64>, Vec<u32>) {
    let mut xs = vec![breaks[0]];
    let mut piece = Vec::new();
    for (k, w) in breaks.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        let m = ((hi - lo) / h0).ceil().max(1.0) as usize;
        let h = (hi - lo) / m as f64;
        for j in 1..=m {
            xs.push(if j == m { hi } else { lo + j as f64 * h });
            piece.push(k as u32);
        }
    }
    (xs, piece)
}

#[inline]
fn pos(v: f64) -> bool {
    v >= 0.0
}

/// Hermite cubic through `(0, p0, m0)`, `(1, p1, m1)` with `m = h dp`.
/// Returns `true` when its interior extrema can hide a crossing the endpoint
/// signs do not show.
fn cubic_suspicious(p0: f64, d0: f64, p1: f64, d1: f64, h: f64, slack: f64) -> bool {
    let (m0, m1) = (d0 * h, d1 * h);
    let b = -3.0 * p0 - 2.0 * m0 + 3.0 * p1 - m1;
    let c = 2.0 * p0 + m0 - 2.0 * p1 + m1;
    let eval = |s: f64| p0 + s * (m0 + s * (b + s * c));
    // c'(s) = m0 + 2 b s + 3 c s^2
    let (qa, qb, qc) = (3.0 * c, 2.0 * b, m0);
    let mut crit = [f64::NAN; 2];
    if qa.abs() < 1e-300 {
        if qb != 0.0 {
            crit[0] = -qc / qb;
        }
    } else {
        let disc = qb * qb - 4.0 * qa * qc;
        if disc >= 0.0 {
            let sq = disc.sqrt();
            let q = -0.5 * (qb + qb.signum() * sq);
            crit[0] = q / qa;
            if q != 0.0 {
                crit[1] = qc / q;
            }
        }
    }
    let mut inner: Vec<(f64, f64)> =
        crit.iter().filter(|s| s.is_finite() && **s > 0.0 && **s < 1.0).map(|&s| (s, eval(s))).collect();
    inner.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut seq = vec![p0];
    seq.extend(inner.iter().map(|v| v.1));
    seq.push(p1);
    let changes = seq.windows(2).filter(|w| pos(w[0]) != pos(w[1])).count();
    changes >= 2 || inner.iter().any(|(_, v)| v.abs() < slack)
}

/// Resolves grid cells into sign changes, halving suspicious cells with the
/// exact evaluator.
struct Scanner<'a, F: Fn(f64) -> (f64, f64)> {
    f: &'a F,
    delta: f64,
    floor: f64,
    keep: bool,
    count: usize,
    brackets: Vec<(f64, f64, bool)>,
    ambiguous: bool,
}

impl<'a, F: Fn(f64) -> (f64, f64)> Scanner<'a, F> {
    fn new(f: &'a F, delta: f64, keep: bool) -> Self {
        Scanner { f, delta, floor: STEP_FLOOR, keep, count: 0, brackets: Vec::new(), ambiguous: false }
    }

    fn cell(&mut self, x0: f64, p0: f64, d0: f64, x1: f64, p1: f64, d1: f64) {
        let h = x1 - x0;
        let changed = pos(p0) != pos(p1);
        let near = p0.abs() < 10.0 * self.delta && p1.abs() < 10.0 * self.delta;
        let hidden = cubic_suspicious(p0, d0, p1, d1, h, CUBIC_SLACK);
        if !(near || hidden) {
            if changed {
                self.hit(x0, x1, pos(p0));
            }
            return;
        }
        if h <= self.floor {
            // At the floor the cubic is accurate; only an unresolved hidden
            // pair is ambiguous.
            self.ambiguous |= hidden;
            if changed {
                self.hit(x0, x1, pos(p0));
            }
            return;
        }
        let xm = 0.5 * (x0 + x1);
        let (pm, dm) = (self.f)(xm);
        self.cell(x0, p0, d0, xm, pm, dm);
        self.cell(xm, pm, dm, x1, p1, d1);
    }

    fn hit(&mut self, x0: f64, x1: f64, left_pos: bool) {
        self.count += 1;
        if self.keep {
            self.brackets.push((x0, x1, left_pos));
        }
    }
}

/// Safeguarded Newton inside a sign-change bracket.
fn refine_root<F: Fn(f64) -> (f64, f64)>(f: &F, mut lo: f64, mut hi: f64, lo_pos: bool) -> f64 {
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (p, d) = f(x);
        if pos(p) == lo_pos {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= ROOT_TOL {
            break;
        }
        let nx = x - p / d;
        if nx > lo && nx < hi {
            if (nx - x).abs() < 0.1 * ROOT_TOL {
                return nx;
            }
            x = nx;
        } else {
            x = 0.5 * (lo + hi);
        }
    }
    0.5 * (lo + hi)
}

/// Golden-section minimum of `g` on `[lo, hi]`.
fn golden_min<G: Fn(f64) -> f64>(g: G, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    const R: f64 = 0.618_033_988_749_894_8;
    let mut c = hi - R * (hi - lo);
    let mut d = lo + R * (hi - lo);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..300 {
        if hi - lo <= tol {
            break;
        }
        if gc < gd {
            hi = d;
            d = c;
            gd = gc;
            c = hi - R * (hi - lo);
            gc = g(c);
        } else {
            lo = c;
            c = d;
            gc = gd;
            d = lo + R * (hi - lo);
            gd = g(d);
        }
    }
    if gc < gd {
        (c, gc)
    } else {
        (d, gd)
    }
}

/// Smallest `|P| + |P'|` over the grid, with a local search around every
/// node whose grid value is small.
fn margin_min<F: Fn(f64) -> (f64, f64)>(f: &F, xs: &[f64], ps: &[f64], ds: &[f64]) -> f64 {
    let g = |x: f64| {
        let (p, d) = f(x);
        p.abs() + d.abs()
    };
    let mut best = f64::INFINITY;
    for j in 0..xs.len() {
        let v = ps[j].abs() + ds[j].abs();
        best = best.min(v);
        if v < MARGIN_REFINE {
            let lo = xs[j.saturating_sub(1)];
            let hi = xs[(j + 1).min(xs.len() - 1)];
            if hi > lo {
                best = best.min(golden_min(g, lo, hi, 1e-9).1);
            }
        }
    }
    best
}

/// Sign changes of `P` on `[a, b)` scanned at step `h0`, with bracket
/// refinement to `1e-10`.
pub fn count_sign_changes(sample: &WeylSample, iv: &IntervalSpec, h0: f64) -> Result<RootCountResult> {
    scan_sample(sample, iv, h0, iv.delta(DEFAULT_THETA), true)
}

fn check_step(h0: f64) -> Result<()> {
    if !(h0 > 0.0) || !h0.is_finite() {
        return Err(Error::Domain(format!("scan step must be positive, got {h0}")));
    }
    Ok(())
}

fn scan_sample(sample: &WeylSample, iv: &IntervalSpec, h0: f64, delta: f64, keep: bool) -> Result<RootCountResult> {
    check_step(h0)?;
    if iv.b > (sample.degree() as f64).sqrt() + 1.0 {
        return Err(Error::Domain(format!("interval end {} outside the evaluation range", iv.b)));
    }
    let f = |x: f64| sample.eval(x);
    if iv.is_empty() {
        return Ok(RootCountResult { count: 0, roots: vec![], kac_rice_value: None, validity: true, delta_used: delta });
    }
    let (xs, _) = grid_with_breaks(&[iv.a, iv.b], h0);
    let vals: Vec<(f64, f64)> = xs.iter().map(|&x| f(x)).collect();
    let mut sc = Scanner::new(&f, delta, keep);
    for j in 0..xs.len() - 1 {
        sc.cell(xs[j], vals[j].0, vals[j].1, xs[j + 1], vals[j + 1].0, vals[j + 1].1);
    }
    let roots: Vec<f64> = sc.brackets.iter().map(|&(lo, hi, lp)| refine_root(&f, lo, hi, lp)).collect();
    Ok(RootCountResult { count: sc.count, roots, kac_rice_value: None, validity: !sc.ambiguous, delta_used: delta })
}

/// `|P(a)| > d`, `|P(b)| > d` and `min (|P| + |P'|) > d` on `[a, b]`.
pub fn validity_check(sample: &WeylSample, iv: &IntervalSpec, delta: f64) -> bool {
    validity_with_step(sample, iv, delta, DEFAULT_STEP)
}

fn validity_with_step(sample: &WeylSample, iv: &IntervalSpec, delta: f64, h0: f64) -> bool {
    let f = |x: f64| sample.eval(x);
    if f(iv.a).0.abs() <= delta || f(iv.b).0.abs() <= delta {
        return false;
    }
    if iv.is_empty() {
        return true;
    }
    let (xs, _) = grid_with_breaks(&[iv.a, iv.b], h0);
    let (ps, ds): (Vec<f64>, Vec<f64>) = xs.iter().map(|&x| f(x)).unzip();
    margin_min(&f, &xs, &ps, &ds) > delta
}

/// Endpoint of the `|P| < d` excursion that contains `x0`, searching in
/// direction `dir` and clipping at `limit`.
fn excursion_end<F: Fn(f64) -> (f64, f64)>(f: &F, x0: f64, dir: f64, limit: f64, delta: f64) -> f64 {
    let (_, d0) = f(x0);
    let mut step = (2.0 * delta / d0.abs().max(1e-12)).max(1e-13);
    let mut inside = x0;
    loop {
        let x = x0 + dir * step;
        if dir * (x - limit) >= 0.0 {
            if f(limit).0.abs() < delta {
                return limit;
            }
            return bisect_level(f, inside, limit, delta);
        }
        if f(x).0.abs() >= delta {
            return bisect_level(f, inside, x, delta);
        }
        inside = x;
        step *= 2.0;
    }
}

fn bisect_level<F: Fn(f64) -> (f64, f64)>(f: &F, mut inside: f64, mut outside: f64, delta: f64) -> f64 {
    let span = (outside - inside).abs();
    let tol = (span * 1e-9).max(4.0 * f64::EPSILON * inside.abs().max(outside.abs()));
    for _ in 0..200 {
        if (outside - inside).abs() <= tol {
            break;
        }
        let m = 0.5 * (inside + outside);
        if f(m).0.abs() < delta {
            inside = m;
        } else {
            outside = m;
        }
    }
    0.5 * (inside + outside)
}

fn excursion_integral<F: Fn(f64) -> (f64, f64)>(f: &F, spans: &mut [(f64, f64)], delta: f64) -> f64 {
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for &(l, u) in spans.iter() {
        match merged.last_mut() {
            Some(last) if l <= last.1 => last.1 = last.1.max(u),
            _ => merged.push((l, u)),
        }
    }
    merged
        .iter()
        .map(|&(l, u)| adaptive(|x| f(x).1.abs(), l, u, 1e-9, 1e-300).0)
        .sum::<f64>()
        / (2.0 * delta)
}

/// `(1/2d) int_a^b |P'| 1{|P| < d}`, over the excursions around detected
/// roots and around grid dips of `|P|` below `d`.
pub fn kac_rice_count(sample: &WeylSample, iv: &IntervalSpec, delta: f64) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let res = scan_sample(sample, iv, DEFAULT_STEP, delta, true)?;
    Ok(kac_rice_from_roots(sample, iv, delta, &res.roots))
}

fn kac_rice_from_roots(sample: &WeylSample, iv: &IntervalSpec, delta: f64, roots: &[f64]) -> f64 {
    if iv.is_empty() {
        return 0.0;
    }
    let f = |x: f64| sample.eval(x);
    let mut spans: Vec<(f64, f64)> = roots
        .iter()
        .map(|&r| (excursion_end(&f, r, -1.0, iv.a, delta), excursion_end(&f, r, 1.0, iv.b, delta)))
        .collect();
    // Dips that touch the band without crossing.
    let (xs, _) = grid_with_breaks(&[iv.a, iv.b], DEFAULT_STEP);
    let ps: Vec<f64> = xs.iter().map(|&x| f(x).0).collect();
    for j in 0..xs.len() {
        if ps[j].abs() < MARGIN_REFINE {
            let lo = xs[j.saturating_sub(1)];
            let hi = xs[(j + 1).min(xs.len() - 1)];
            let (xm, vm) = golden_min(|x| f(x).0.abs(), lo, hi, 1e-12);
            if vm < delta && !spans.iter().any(|&(l, u)| xm >= l && xm <= u) {
                spans.push((excursion_end(&f, xm, -1.0, iv.a, delta), excursion_end(&f, xm, 1.0, iv.b, delta)));
            }
        }
    }
    excursion_integral(&f, &mut spans, delta)
}

/// Scan, roots, validity and the Kac–Rice value in one call.
pub fn count_roots(sample: &WeylSample, iv: &IntervalSpec, h0: f64, delta: f64) -> Result<RootCountResult> {
    if !(delta > 0.0) {
        return Err(Error::Domain(format!("delta must be positive, got {delta}")));
    }
    let mut res = scan_sample(sample, iv, h0, delta, true)?;
    res.validity = res.validity && validity_with_step(sample, iv, delta, h0);
    res.kac_rice_value = Some(kac_rice_from_roots(sample, iv, delta, &res.roots));
    Ok(res)
}

/// Precomputed basis rows for a fixed grid and degree; shared read-only by
/// every trial.
#[derive(Debug, Clone)]
pub struct GridTable {
    pub n: usize,
    pub xs: Vec<f64>,
    /// Piece index of each cell (`xs.len() - 1` entries).
    pub piece: Vec<u32>,
    pub pieces: usize,
    rows: Vec<Row>,
    /// Coefficient range touched by any row.
    pub span: (usize, usize),
}

#[derive(Debug, Clone)]
struct Row {
    lo: usize,
    w: Vec<f64>,
    dw: Vec<f64>,
}

impl GridTable {
    pub fn new(breaks: &[f64], h0: f64, n: usize, tau: f64) -> Result<Self> {
        check_step(h0)?;
        if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Domain("grid breaks must be strictly increasing".into()));
        }
        let (xs, piece) = grid_with_breaks(breaks, h0);
        let rows = xs
            .iter()
            .map(|&x| {
                support_window(x, n, tau).map(|w| Row { lo: w.i_lo, w: w.weights, dw: w.deriv_weights })
            })
            .collect::<Result<Vec<_>>>()?;
        let span = (
            rows.iter().map(|r| r.lo).min().unwrap_or(0),
            rows.iter().map(|r| r.lo + r.w.len()).max().unwrap_or(0),
        );
        Ok(GridTable { n, xs, piece, pieces: breaks.len() - 1, rows, span })
    }

    /// Multiply-adds per trial.
    pub fn work_per_trial(&self) -> usize {
        self.rows.iter().map(|r| 2 * r.w.len()).sum()
    }

    /// `out_p[t * rows + j]`, `out_d[t * rows + j]` for the coefficient
    /// vectors in `coeffs`. Rows are the outer loop so each row is read once
    /// per batch.
    ///
    /// Coefficients are interleaved in groups of [`LANES`] trials so the inner
    /// loop runs across trials; each trial's sum is a plain left-to-right sum,
    /// so the result does not depend on how trials are grouped.
    pub fn eval_batch(&self, coeffs: &[&[f64]], out_p: &mut [f64], out_d: &mut [f64]) {
        let rows = self.rows.len();
        let (s0, s1) = self.span;
        let width = s1 - s0;
        let mut xt = vec![0.0; width * LANES];
        let mut acc = [[0.0; LANES]; 2];
        for (g, group) in coeffs.chunks(LANES).enumerate() {
            xt.iter_mut().for_each(|v| *v = 0.0);
            for (t, c) in group.iter().enumerate() {
                for (i, v) in c[s0..s1].iter().enumerate() {
                    xt[i * LANES + t] = *v;
                }
            }
            for (j, row) in self.rows.iter().enumerate() {
                let x = &xt[(row.lo - s0) * LANES..(row.lo - s0 + row.w.len()) * LANES];
                row_kernel(x, &row.w, &row.dw, &mut acc);
                for (t, (p, d)) in acc[0].iter().zip(&acc[1]).take(group.len()).enumerate() {
                    let k = (g * LANES + t) * rows + j;
                    out_p[k] = *p;
                    out_d[k] = *d;
                }
            }
        }
    }
}

/// Trials evaluated side by side in [`GridTable::eval_batch`].
pub const LANES: usize = 8;

#[inline(always)]
fn row_kernel_generic(x: &[f64], w: &[f64], dw: &[f64], acc: &mut [[f64; LANES]; 2]) {
    let mut p = [0.0f64; LANES];
    let mut d = [0.0f64; LANES];
    for ((xs, wi), di) in x.chunks_exact(LANES).zip(w).zip(dw) {
        for t in 0..LANES {
            p[t] += wi * xs[t];
            d[t] += di * xs[t];
        }
    }
    acc[0] = p;
    acc[1] = d;
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn row_kernel_avx2(x: &[f64], w: &[f64], dw: &[f64], acc: &mut [[f64; LANES]; 2]) {
    row_kernel_generic(x, w, dw, acc)
}

/// Same arithmetic on every path (no fused multiply-add), so results are
/// identical whichever vector width the CPU offers.
fn row_kernel(x: &[f64], w: &[f64], dw: &[f64], acc: &mut [[f64; LANES]; 2]) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { row_kernel_avx2(x, w, dw, acc) };
            return;
        }
    }
    row_kernel_generic(x, w, dw, acc)
}

/// Per-trial outcome of the grid scan.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridCount {
    /// Sign changes per piece.
    pub counts: Vec<u32>,
    /// Validity guard at `delta` and no unresolved cell.
    pub valid: bool,
    pub ambiguous: bool,
}

impl GridCount {
    pub fn total(&self) -> u32 {
        self.counts.iter().sum()
    }
}

/// Counts sign changes from precomputed grid values, refining suspicious
/// cells and the validity margin with the exact evaluator.
pub fn count_on_grid(table: &GridTable, sample: &WeylSample, ps: &[f64], ds: &[f64], delta: f64) -> GridCount {
    let f = |x: f64| sample.eval(x);
    let mut counts = vec![0u32; table.pieces];
    let mut ambiguous = false;
    let xs = &table.xs;
    let mut sc = Scanner::new(&f, delta, false);
    for j in 0..xs.len() - 1 {
        sc.count = 0;
        sc.cell(xs[j], ps[j], ds[j], xs[j + 1], ps[j + 1], ds[j + 1]);
        counts[table.piece[j] as usize] += sc.count as u32;
    }
    ambiguous |= sc.ambiguous;
    let last = xs.len() - 1;
    let ends_ok = ps[0].abs() > delta && ps[last].abs() > delta;
    let valid = !ambiguous && ends_ok && margin_min(&f, xs, ps, ds) > delta;
    GridCount { counts, valid, ambiguous }
}
