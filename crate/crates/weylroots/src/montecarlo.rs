//! Monte Carlo experiments over i.i.d. trials.
//!
//! Trial `t` draws its coefficients from `Stream::new(seed, t)`, so every
//! per-trial outcome is fixed by `(seed, t)` alone. Workers only change who
//! computes which trial; results are stored by trial index and reduced in
//! index order (or with exact integer sums), so output is bit-identical for
//! any worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::coeff_dist::CoefficientDistribution;
use crate::edgeworth::{expectation_correction, EdgeworthDensity1D};
use crate::error::{Error, Result};
use crate::gaussian_theory::{expected_count_gaussian, variance_constant_weyl};
use crate::rng::Stream;
use crate::root_count::{count_on_grid, count_roots, GridTable, IntervalSpec, DEFAULT_STEP, DEFAULT_THETA};
use crate::special::normal_cdf;
use crate::weyl_eval::{dot, support_window, WeylSample, DEFAULT_TAU};

/// Refuse runs above this many multiply-adds.
pub const DEFAULT_FLOP_BUDGET: f64 = 5e12;
pub const DEFAULT_BLOCK_EXPONENT: f64 = 0.3;
/// Validity-failure rates above these trigger a warning / an error.
pub const WARN_INVALID_RATE: f64 = 0.01;
pub const FAIL_INVALID_RATE: f64 = 0.10;

const BATCH: usize = 32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub n: usize,
    pub iv: IntervalSpec,
    pub dist: CoefficientDistribution,
    pub trials: u64,
    pub seed: u64,
    /// `theta` in `delta = N^{-theta}`.
    pub delta_exponent: f64,
    pub grid_step: f64,
    /// Block width is `N^eps`.
    pub block_exponent: f64,
    pub workers: usize,
    pub tau: f64,
    pub flop_budget: f64,
}

impl ExperimentConfig {
    pub fn new(n: usize, iv: IntervalSpec, dist: CoefficientDistribution, trials: u64, seed: u64) -> Self {
        ExperimentConfig {
            n,
            iv,
            dist,
            trials,
            seed,
            delta_exponent: DEFAULT_THETA,
            grid_step: DEFAULT_STEP,
            block_exponent: DEFAULT_BLOCK_EXPONENT,
            workers: default_workers(),
            tau: DEFAULT_TAU,
            flop_budget: DEFAULT_FLOP_BUDGET,
        }
    }

    pub fn with_dist(&self, dist: CoefficientDistribution) -> Self {
        ExperimentConfig { dist, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.delta_exponent > 0.0) {
            return Err(Error::Config(format!("delta exponent must be positive, got {}", self.delta_exponent)));
        }
        if !(self.block_exponent > 0.0 && self.block_exponent < 0.5) {
            return Err(Error::Config(format!("block exponent must lie in (0, 1/2), got {}", self.block_exponent)));
        }
        if !(self.grid_step > 0.0) {
            return Err(Error::Config(format!("grid step must be positive, got {}", self.grid_step)));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be positive, got {}", self.tau)));
        }
        self.iv.check(self.n)
    }

    pub fn delta(&self) -> f64 {
        self.iv.delta(self.delta_exponent)
    }
}

pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Resource(format!("cannot start {workers} workers: {e}")))
}

/// Per-trial piece counts, row-major by trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTable {
    pub pieces: usize,
    pub counts: Vec<u32>,
    pub valid: Vec<bool>,
    pub ambiguous: Vec<bool>,
}

impl TrialTable {
    pub fn trials(&self) -> usize {
        self.valid.len()
    }

    pub fn row(&self, t: usize) -> &[u32] {
        &self.counts[t * self.pieces..(t + 1) * self.pieces]
    }

    pub fn totals(&self) -> Vec<u32> {
        (0..self.trials()).map(|t| self.row(t).iter().sum()).collect()
    }

    pub fn piece(&self, s: usize) -> Vec<u32> {
        (0..self.trials()).map(|t| self.row(t)[s]).collect()
    }

    pub fn invalid_rate(&self) -> f64 {
        self.valid.iter().filter(|v| !**v).count() as f64 / self.trials().max(1) as f64
    }

    pub fn ambiguous_rate(&self) -> f64 {
        self.ambiguous.iter().filter(|v| **v).count() as f64 / self.trials().max(1) as f64
    }
}

/// Runs every trial over the grid with the given break points (`breaks[0] =
/// a`, last `= b`) and records per-piece counts.
pub fn simulate(cfg: &ExperimentConfig, breaks: &[f64]) -> Result<TrialTable> {
    cfg.validate()?;
    let trials = usize::try_from(cfg.trials).map_err(|_| Error::Resource("trial count too large".into()))?;
    if cfg.iv.is_empty() {
        return Ok(TrialTable { pieces: 1, counts: vec![0; trials], valid: vec![true; trials], ambiguous: vec![false; trials] });
    }
    let table = GridTable::new(breaks, cfg.grid_step, cfg.n, cfg.tau)?;
    let work = table.work_per_trial() as f64 * cfg.trials as f64;
    if work > cfg.flop_budget {
        return Err(Error::Resource(format!(
            "estimated {work:.3e} multiply-adds ({} trials x {} per trial) exceeds the budget {:.3e}",
            cfg.trials,
            table.work_per_trial(),
            cfg.flop_budget
        )));
    }
    let delta = cfg.delta();
    let rows = table.xs.len();
    let batches: Vec<usize> = (0..trials).step_by(BATCH).collect();
    let per_batch: Vec<Vec<(Vec<u32>, bool, bool)>> = pool(cfg.workers)?.install(|| {
        batches
            .par_iter()
            .map(|&start| {
                let end = (start + BATCH).min(trials);
                let samples: Vec<WeylSample> = (start..end)
                    .map(|t| WeylSample::draw(&cfg.dist, cfg.n, &mut Stream::new(cfg.seed, t as u64)))
                    .collect();
                let coeffs: Vec<&[f64]> = samples.iter().map(|s| s.coeffs()).collect();
                let mut ps = vec![0.0; rows * coeffs.len()];
                let mut ds = vec![0.0; rows * coeffs.len()];
                table.eval_batch(&coeffs, &mut ps, &mut ds);
                samples
                    .iter()
                    .enumerate()
                    .map(|(k, s)| {
                        let g = count_on_grid(&table, s, &ps[k * rows..(k + 1) * rows], &ds[k * rows..(k + 1) * rows], delta);
                        (g.counts, g.valid, g.ambiguous)
                    })
                    .collect()
            })
            .collect()
    });
    let mut out = TrialTable {
        pieces: table.pieces,
        counts: Vec::with_capacity(trials * table.pieces),
        valid: Vec::with_capacity(trials),
        ambiguous: Vec::with_capacity(trials),
    };
    for (c, v, a) in per_batch.into_iter().flatten() {
        out.counts.extend(c);
        out.valid.push(v);
        out.ambiguous.push(a);
    }
    Ok(out)
}

/// Moments of integer samples, exact in `f64` while sums stay below `2^53`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleStats {
    pub trials: u64,
    pub mean: f64,
    pub variance: Option<f64>,
    pub se_mean: Option<f64>,
    /// Jackknife standard error of the sample variance.
    pub se_variance: Option<f64>,
}

impl SampleStats {
    pub fn from_counts(xs: &[f64]) -> Self {
        let t = xs.len();
        let tf = t as f64;
        let s1: f64 = xs.iter().sum();
        let s2: f64 = xs.iter().map(|x| x * x).sum();
        let mean = s1 / tf;
        if t < 2 {
            return SampleStats { trials: t as u64, mean, variance: None, se_mean: None, se_variance: None };
        }
        let var = ((s2 - s1 * s1 / tf) / (tf - 1.0)).max(0.0);
        let se_var = if t < 3 {
            None
        } else {
            let m = tf - 1.0;
            let loo: Vec<f64> = xs
                .iter()
                .map(|x| {
                    let a = s1 - x;
                    let b = s2 - x * x;
                    (b - a * a / m) / (m - 1.0)
                })
                .collect();
            let lbar = loo.iter().sum::<f64>() / tf;
            let ss: f64 = loo.iter().map(|v| (v - lbar).powi(2)).sum();
            Some((m / tf * ss).sqrt())
        };
        SampleStats { trials: t as u64, mean, variance: Some(var), se_mean: Some((var / tf).sqrt()), se_variance: se_var }
    }
}

fn z_score(value: f64, theory: f64, se: Option<f64>) -> Option<f64> {
    se.filter(|s| *s > 0.0).map(|s| (value - theory) / s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateSummary {
    pub dist: String,
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub trials: u64,
    pub mean: f64,
    /// Missing with a single trial.
    pub variance: Option<f64>,
    pub se_mean: Option<f64>,
    pub se_variance: Option<f64>,
    pub theory_mean: f64,
    pub theory_variance: f64,
    /// `(mean, variance)` z-scores; missing when the SE is missing or zero.
    pub z_scores: (Option<f64>, Option<f64>),
    pub validity_failure_rate: f64,
    pub ambiguous_rate: f64,
    pub warnings: Vec<String>,
}

/// `E N(G)` on `[a, b]` plus the leading correction for `dist`.
pub fn theory_mean(dist: &CoefficientDistribution, a: f64, b: f64, n: usize, warnings: &mut Vec<String>) -> Result<f64> {
    let base = expected_count_gaussian(a, b, n)?;
    if b <= a || dist.is_gaussian() {
        return Ok(base);
    }
    if a <= 0.0 {
        warnings.push("correction term needs a > 0; theory mean is the Gaussian value".into());
        return Ok(base);
    }
    Ok(base + expectation_correction(a, b, dist)?.closed_form)
}

fn check_validity(table: &TrialTable, warnings: &mut Vec<String>) -> Result<()> {
    let rate = table.invalid_rate();
    if rate > FAIL_INVALID_RATE {
        return Err(Error::Numerical(format!(
            "validity check failed on {:.2}% of trials (limit {:.0}%)",
            100.0 * rate,
            100.0 * FAIL_INVALID_RATE
        )));
    }
    if rate > WARN_INVALID_RATE {
        warnings.push(format!("validity check failed on {:.2}% of trials", 100.0 * rate));
    }
    Ok(())
}

fn summarize(cfg: &ExperimentConfig, table: &TrialTable) -> Result<EstimateSummary> {
    let mut warnings = Vec::new();
    check_validity(table, &mut warnings)?;
    let totals: Vec<f64> = table.totals().into_iter().map(f64::from).collect();
    let st = SampleStats::from_counts(&totals);
    let tm = theory_mean(&cfg.dist, cfg.iv.a, cfg.iv.b, cfg.n, &mut warnings)?;
    let tv = variance_constant_weyl()?.selected * cfg.iv.len();
    Ok(EstimateSummary {
        dist: cfg.dist.name().to_string(),
        n: cfg.n,
        a: cfg.iv.a,
        b: cfg.iv.b,
        trials: st.trials,
        mean: st.mean,
        variance: st.variance,
        se_mean: st.se_mean,
        se_variance: st.se_variance,
        theory_mean: tm,
        theory_variance: tv,
        z_scores: (z_score(st.mean, tm, st.se_mean), st.variance.and_then(|v| z_score(v, tv, st.se_variance))),
        validity_failure_rate: table.invalid_rate(),
        ambiguous_rate: table.ambiguous_rate(),
        warnings,
    })
}

fn whole(cfg: &ExperimentConfig) -> Vec<f64> {
    vec![cfg.iv.a, cfg.iv.b]
}

/// Mean root count against `E N(G) + correction`.
pub fn run_expectation(cfg: &ExperimentConfig) -> Result<EstimateSummary> {
    summarize(cfg, &simulate(cfg, &whole(cfg))?)
}

/// Sample variance (jackknife SE) against `C_W |I|`. Same trials as
/// [`run_expectation`] for equal configs.
pub fn run_variance(cfg: &ExperimentConfig) -> Result<EstimateSummary> {
    summarize(cfg, &simulate(cfg, &whole(cfg))?)
}

/// Two laws run on trial-matched streams.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSummary {
    pub first: EstimateSummary,
    pub second: EstimateSummary,
    /// `mean(first) - mean(second)`
    pub diff_mean: f64,
    /// SE from the per-trial paired differences.
    pub se_diff: Option<f64>,
    /// SE as if the two runs were independent.
    pub se_diff_unpaired: Option<f64>,
    pub theory_diff: f64,
    pub z_diff: Option<f64>,
    /// `var(first) - var(second)` with the jackknife SE of the difference.
    pub diff_variance: Option<f64>,
    pub se_diff_variance: Option<f64>,
}

pub fn run_paired(cfg: &ExperimentConfig, second: &CoefficientDistribution) -> Result<PairedSummary> {
    let cfg2 = cfg.with_dist(second.clone());
    let ta = simulate(cfg, &whole(cfg))?;
    let tb = simulate(&cfg2, &whole(&cfg2))?;
    let first = summarize(cfg, &ta)?;
    let second_s = summarize(&cfg2, &tb)?;
    let xa: Vec<f64> = ta.totals().into_iter().map(f64::from).collect();
    let xb: Vec<f64> = tb.totals().into_iter().map(f64::from).collect();
    let diffs: Vec<f64> = xa.iter().zip(&xb).map(|(a, b)| a - b).collect();
    let sd = SampleStats::from_counts(&diffs);
    let theory_diff = first.theory_mean - second_s.theory_mean;
    let se_unpaired = match (first.se_mean, second_s.se_mean) {
        (Some(a), Some(b)) => Some(a.hypot(b)),
        _ => None,
    };
    let (dv, se_dv) = paired_variance_diff(&xa, &xb);
    Ok(PairedSummary {
        diff_mean: sd.mean,
        se_diff: sd.se_mean,
        se_diff_unpaired: se_unpaired,
        theory_diff,
        z_diff: z_score(sd.mean, theory_diff, sd.se_mean),
        diff_variance: dv,
        se_diff_variance: se_dv,
        first,
        second: second_s,
    })
}

/// `var(a) - var(b)` over matched trials with a jackknife SE.
fn paired_variance_diff(a: &[f64], b: &[f64]) -> (Option<f64>, Option<f64>) {
    let t = a.len();
    if t < 3 {
        let d = match (SampleStats::from_counts(a).variance, SampleStats::from_counts(b).variance) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        };
        return (d, None);
    }
    let tf = t as f64;
    let sums = |x: &[f64]| (x.iter().sum::<f64>(), x.iter().map(|v| v * v).sum::<f64>());
    let (a1, a2) = sums(a);
    let (b1, b2) = sums(b);
    let var = |s1: f64, s2: f64, m: f64| (s2 - s1 * s1 / m) / (m - 1.0);
    let full = var(a1, a2, tf) - var(b1, b2, tf);
    let m = tf - 1.0;
    let loo: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| var(a1 - x, a2 - x * x, m) - var(b1 - y, b2 - y * y, m))
        .collect();
    let lbar = loo.iter().sum::<f64>() / tf;
    let ss: f64 = loo.iter().map(|v| (v - lbar).powi(2)).sum();
    (Some(full), Some((m / tf * ss).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmallBallRow {
    pub dist: String,
    pub n: usize,
    pub x: f64,
    pub delta: f64,
    pub dim: u8,
    pub freq: f64,
    pub freq_over_vol: f64,
    /// Gaussian density at the origin for the exact covariance of
    /// `P_n(x)` (dim 1) or `(P_n(x), P_n'(x))` (dim 2).
    pub theory: f64,
}

/// Frequencies of `|P_n(x)| < delta` and `||(P_n(x), P_n'(x))|| < delta`.
pub fn run_smallball(x: f64, deltas: &[f64], cfg: &ExperimentConfig) -> Result<Vec<SmallBallRow>> {
    cfg.validate()?;
    if deltas.is_empty() || deltas.iter().any(|d| !(*d > 0.0)) {
        return Err(Error::Config("small-ball radii must be positive".into()));
    }
    let win = support_window(x, cfg.n, DEFAULT_TAU)?;
    let work = 2.0 * win.len() as f64 * cfg.trials as f64;
    if work > cfg.flop_budget {
        return Err(Error::Resource(format!("estimated {work:.3e} multiply-adds exceeds the budget {:.3e}", cfg.flop_budget)));
    }
    let trials = cfg.trials as usize;
    let k = deltas.len();
    let batches: Vec<usize> = (0..trials).step_by(4096).collect();
    let per: Vec<Vec<u64>> = pool(cfg.workers)?.install(|| {
        batches
            .par_iter()
            .map(|&start| {
                let mut hits = vec![0u64; 2 * k];
                for t in start..(start + 4096).min(trials) {
                    let s = WeylSample::draw(&cfg.dist, cfg.n, &mut Stream::new(cfg.seed, t as u64));
                    let xi = &s.coeffs()[win.i_lo..=win.i_hi];
                    let p = dot(xi, &win.weights);
                    let d = dot(xi, &win.deriv_weights);
                    let r = p.hypot(d);
                    for (j, delta) in deltas.iter().enumerate() {
                        hits[j] += u64::from(p.abs() < *delta);
                        hits[k + j] += u64::from(r < *delta);
                    }
                }
                hits
            })
            .collect()
    });
    let mut hits = vec![0u64; 2 * k];
    for h in per {
        for (a, b) in hits.iter_mut().zip(h) {
            *a += b;
        }
    }
    let v11: f64 = win.weights.iter().map(|w| w * w).sum();
    let v22: f64 = win.deriv_weights.iter().map(|w| w * w).sum();
    let v12: f64 = win.weights.iter().zip(&win.deriv_weights).map(|(a, b)| a * b).sum();
    let tau = 2.0 * std::f64::consts::PI;
    let th1 = 1.0 / (tau * v11).sqrt();
    let th2 = 1.0 / (tau * (v11 * v22 - v12 * v12).sqrt());
    let mut rows = Vec::with_capacity(2 * k);
    for dim in [1u8, 2] {
        for (j, delta) in deltas.iter().enumerate() {
            let h = hits[(dim as usize - 1) * k + j];
            let freq = h as f64 / trials as f64;
            let vol = if dim == 1 { 2.0 * delta } else { std::f64::consts::PI * delta * delta };
            rows.push(SmallBallRow {
                dist: cfg.dist.name().to_string(),
                n: cfg.n,
                x,
                delta: *delta,
                dim,
                freq,
                freq_over_vol: freq / vol,
                theory: if dim == 1 { th1 } else { th2 },
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockCovariance {
    pub breaks: Vec<f64>,
    /// `cov[s][t]`, unbiased.
    pub cov: Vec<Vec<f64>>,
    pub total_variance: f64,
    pub sum_entries: f64,
    /// `|sum_entries - total_variance|`
    pub identity_gap: f64,
    /// `sum_{|s-t|>1} cov / total_variance`
    pub offdiag_fraction: f64,
    pub trials: u64,
    pub validity_failure_rate: f64,
}

/// `[a, a + w, a + 2w, ..., b]` with `w = N^eps`, last block clipped.
pub fn block_breaks(iv: &IntervalSpec, eps: f64) -> Vec<f64> {
    let w = iv.scale().powf(eps);
    let mut out = vec![iv.a];
    let mut k = 1.0;
    while iv.a + k * w < iv.b - 1e-9 * w {
        out.push(iv.a + k * w);
        k += 1.0;
    }
    out.push(iv.b);
    out
}

/// Empirical covariance of block counts. Cross products are accumulated in
/// integers so the additivity identity holds to rounding of the final
/// divisions.
pub fn block_covariance(cfg: &ExperimentConfig) -> Result<BlockCovariance> {
    if cfg.trials < 2 {
        return Err(Error::Config("block covariance needs at least 2 trials".into()));
    }
    let breaks = block_breaks(&cfg.iv, cfg.block_exponent);
    let table = simulate(cfg, &breaks)?;
    let mut w = Vec::new();
    check_validity(&table, &mut w)?;
    let k = table.pieces;
    let t = table.trials() as i128;
    let mut s = vec![0i128; k];
    let mut sxy = vec![0i128; k * k];
    for tr in 0..table.trials() {
        let row = table.row(tr);
        for i in 0..k {
            s[i] += row[i] as i128;
            for j in 0..k {
                sxy[i * k + j] += (row[i] * row[j]) as i128;
            }
        }
    }
    let denom = (t * (t - 1)) as f64;
    let num = |i: usize, j: usize| t * sxy[i * k + j] - s[i] * s[j];
    let cov: Vec<Vec<f64>> = (0..k).map(|i| (0..k).map(|j| num(i, j) as f64 / denom).collect()).collect();
    let total_num: i128 = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).map(|(i, j)| num(i, j)).sum();
    let total_variance = total_num as f64 / denom;
    let sum_entries: f64 = cov.iter().flatten().sum();
    let off: f64 = (0..k)
        .flat_map(|i| (0..k).map(move |j| (i, j)))
        .filter(|(i, j)| i.abs_diff(*j) > 1)
        .map(|(i, j)| cov[i][j])
        .sum();
    Ok(BlockCovariance {
        breaks,
        identity_gap: (sum_entries - total_variance).abs(),
        offdiag_fraction: if total_variance > 0.0 { off / total_variance } else { 0.0 },
        cov,
        total_variance,
        sum_entries,
        trials: cfg.trials,
        validity_failure_rate: table.invalid_rate(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeworthFit {
    /// Sup distance of the empirical CDF to the order-4 expansion.
    pub dist_edgeworth: f64,
    /// Sup distance to the standard normal CDF.
    pub dist_gauss: f64,
    pub trials: u64,
}

/// Kolmogorov distances of standardized `P_n(x)` to the expansion and to Phi.
pub fn edgeworth_fit(x: f64, cfg: &ExperimentConfig) -> Result<EdgeworthFit> {
    cfg.validate()?;
    let win = support_window(x, cfg.n, DEFAULT_TAU)?;
    let sd = win.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
    let trials = cfg.trials as usize;
    let batches: Vec<usize> = (0..trials).step_by(4096).collect();
    let mut vals: Vec<f64> = pool(cfg.workers)?.install(|| {
        batches
            .par_iter()
            .flat_map_iter(|&start| {
                (start..(start + 4096).min(trials)).map(|t| {
                    let s = WeylSample::draw(&cfg.dist, cfg.n, &mut Stream::new(cfg.seed, t as u64));
                    dot(&s.coeffs()[win.i_lo..=win.i_hi], &win.weights) / sd
                })
            })
            .collect()
    });
    vals.sort_by(f64::total_cmp);
    // N only sets the bookkeeping scale of chi-bar; the corrected CDF does not depend on it.
    let ew = EdgeworthDensity1D::from_weights(4, &win.weights, &cfg.dist, x.max(1.0))?;
    let dist_edgeworth = ks_distance(&vals, |s| ew.cdf(s));
    let dist_gauss = ks_distance(&vals, normal_cdf);
    Ok(EdgeworthFit { dist_edgeworth, dist_gauss, trials: cfg.trials })
}

/// `sup |F_emp - F|` for sorted samples.
pub fn ks_distance<F: Fn(f64) -> f64>(sorted: &[f64], f: F) -> f64 {
    let n = sorted.len() as f64;
    let mut best: f64 = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let fx = f(sorted[i]);
        best = best.max((fx - i as f64 / n).abs()).max(((j + 1) as f64 / n - fx).abs());
        i = j + 1;
    }
    best
}

/// Mean count per piece against the per-piece theory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PieceRow {
    pub lo: f64,
    pub hi: f64,
    pub mean: f64,
    pub se: Option<f64>,
    pub theory: f64,
    pub z: Option<f64>,
}

pub fn run_pieces(cfg: &ExperimentConfig, breaks: &[f64]) -> Result<(Vec<PieceRow>, Vec<String>)> {
    let table = simulate(cfg, breaks)?;
    let mut warnings = Vec::new();
    check_validity(&table, &mut warnings)?;
    let rows = (0..table.pieces)
        .map(|s| {
            let xs: Vec<f64> = table.piece(s).into_iter().map(f64::from).collect();
            let st = SampleStats::from_counts(&xs);
            let (lo, hi) = (breaks[s], breaks[s + 1]);
            let theory = theory_mean(&cfg.dist, lo, hi, cfg.n, &mut warnings)?;
            Ok(PieceRow { lo, hi, mean: st.mean, se: st.se_mean, theory, z: z_score(st.mean, theory, st.se_mean) })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((rows, warnings))
}

/// `a, a + w, ..., b`
pub fn uniform_breaks(a: f64, b: f64, w: f64) -> Result<Vec<f64>> {
    if !(w > 0.0 && b > a) {
        return Err(Error::Config(format!("bins need w > 0 and b > a, got w = {w}, [{a}, {b}]")));
    }
    let k = ((b - a) / w - 1e-9).ceil() as usize;
    Ok((0..=k).map(|j| if j == k { b } else { a + j as f64 * w }).collect())
}

/// `a, 2a, 4a, ..., b` (last octave clipped).
pub fn dyadic_breaks(a: f64, b: f64) -> Result<Vec<f64>> {
    if !(a > 0.0 && b > a) {
        return Err(Error::Config(format!("octaves need 0 < a < b, got [{a}, {b}]")));
    }
    let mut out = vec![a];
    while out[out.len() - 1] * 2.0 < b {
        let next = out[out.len() - 1] * 2.0;
        out.push(next);
    }
    out.push(b);
    Ok(out)
}

/// Per-octave means over `[a, b]`; no pass/fail, the per-octave shift is
/// below desk-scale resolution.
pub fn dyadic_diagnostic(cfg: &ExperimentConfig) -> Result<(Vec<PieceRow>, Vec<String>)> {
    run_pieces(cfg, &dyadic_breaks(cfg.iv.a, cfg.iv.b)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KacRiceAgreement {
    pub trials: u64,
    pub valid: u64,
    /// Valid trials where `round(kac_rice) == sign-change count`.
    pub agree: u64,
    pub max_abs_diff: f64,
    pub validity_failure_rate: f64,
}

/// Cycles through `laws` trial by trial and compares the two counters.
pub fn kac_rice_agreement(cfg: &ExperimentConfig, laws: &[CoefficientDistribution]) -> Result<KacRiceAgreement> {
    cfg.validate()?;
    if laws.is_empty() {
        return Err(Error::Config("need at least one law".into()));
    }
    let delta = cfg.delta();
    let trials = cfg.trials as usize;
    let per: Vec<(bool, bool, f64)> = pool(cfg.workers)?.install(|| {
        (0..trials)
            .into_par_iter()
            .map(|t| {
                let law = &laws[t % laws.len()];
                let s = WeylSample::draw(law, cfg.n, &mut Stream::new(cfg.seed, t as u64));
                let r = count_roots(&s, &cfg.iv, cfg.grid_step, delta)?;
                let kr = r.kac_rice_value.unwrap_or(f64::NAN);
                let diff = (kr - r.count as f64).abs();
                Ok((r.validity, kr.round() == r.count as f64, diff))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let valid = per.iter().filter(|p| p.0).count() as u64;
    let agree = per.iter().filter(|p| p.0 && p.1).count() as u64;
    let max_abs_diff = per.iter().filter(|p| p.0).map(|p| p.2).fold(0.0, f64::max);
    Ok(KacRiceAgreement {
        trials: cfg.trials,
        valid,
        agree,
        max_abs_diff,
        validity_failure_rate: 1.0 - valid as f64 / cfg.trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(dist: CoefficientDistribution, trials: u64) -> ExperimentConfig {
        let mut c = ExperimentConfig::new(100, IntervalSpec::new(2.0, 6.0).unwrap(), dist, trials, 42);
        c.workers = 1;
        c
    }

    #[test]
    fn stats_of_known_sample() {
        let st = SampleStats::from_counts(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(st.mean, 2.5);
        assert!((st.variance.unwrap() - 5.0 / 3.0).abs() < 1e-15);
        assert!((st.se_mean.unwrap() - (5.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!(st.se_variance.unwrap() > 0.0);
        let one = SampleStats::from_counts(&[3.0]);
        assert_eq!(one.mean, 3.0);
        assert_eq!(one.variance, None);
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let xs = [3.0, 5.0, 4.0, 7.0, 2.0, 6.0, 5.0];
        let st = SampleStats::from_counts(&xs);
        let n = xs.len();
        let loo: Vec<f64> = (0..n)
            .map(|i| {
                let v: Vec<f64> = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| *x).collect();
                SampleStats::from_counts(&v).variance.unwrap()
            })
            .collect();
        let m = loo.iter().sum::<f64>() / n as f64;
        let se = ((n as f64 - 1.0) / n as f64 * loo.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt();
        assert!((st.se_variance.unwrap() - se).abs() < 1e-12);
    }

    #[test]
    fn single_trial_has_missing_variance() {
        let s = run_expectation(&cfg(CoefficientDistribution::gaussian(), 1)).unwrap();
        assert_eq!(s.trials, 1);
        assert!(s.variance.is_none() && s.z_scores.0.is_none());
        assert_eq!(s.mean, s.mean.round());
    }

    #[test]
    fn empty_interval_has_zero_variance() {
        let mut c = cfg(CoefficientDistribution::gaussian(), 20);
        c.iv = IntervalSpec::new(3.0, 3.0).unwrap();
        let s = run_variance(&c).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.variance, Some(0.0));
    }

    #[test]
    fn workers_do_not_change_results() {
        let mut c = cfg(CoefficientDistribution::rademacher(), 200);
        let a = simulate(&c, &[2.0, 4.0, 6.0]).unwrap();
        c.workers = 3;
        let b = simulate(&c, &[2.0, 4.0, 6.0]).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn grid_counts_match_direct_scan() {
        let c = cfg(CoefficientDistribution::uniform_sym(), 40);
        let table = simulate(&c, &[2.0, 6.0]).unwrap();
        for t in 0..40 {
            let s = WeylSample::draw(&c.dist, c.n, &mut Stream::new(c.seed, t as u64));
            let direct = crate::root_count::count_sign_changes(&s, &c.iv, c.grid_step).unwrap();
            assert_eq!(table.row(t)[0] as usize, direct.count, "trial {t}");
        }
    }

    #[test]
    fn block_identity_is_exact() {
        let mut c = cfg(CoefficientDistribution::gaussian(), 300);
        c.block_exponent = 0.2;
        let bc = block_covariance(&c).unwrap();
        assert!(bc.breaks.len() > 3);
        assert!(bc.identity_gap <= 1e-10);
        c.block_exponent = 0.49;
        c.iv = IntervalSpec::new(2.0, 3.0).unwrap();
        let one = block_covariance(&c).map_err(|e| e.to_string()).unwrap();
        assert_eq!(one.cov.len(), 1);
        assert!((one.cov[0][0] - one.total_variance).abs() < 1e-12);
    }

    #[test]
    fn budget_guard_refuses() {
        let mut c = cfg(CoefficientDistribution::gaussian(), 1000);
        c.flop_budget = 1e3;
        assert!(matches!(run_expectation(&c), Err(Error::Resource(_))));
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(CoefficientDistribution::gaussian(), 0);
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        c.trials = 1;
        c.block_exponent = 0.5;
        assert!(c.validate().is_err());
        c.block_exponent = 0.3;
        c.iv = IntervalSpec::new(2.0, 9.9).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn gaussian_fit_is_degenerate() {
        let mut c = cfg(CoefficientDistribution::gaussian(), 4000);
        c.n = 400;
        let f = edgeworth_fit(10.0, &c).unwrap();
        assert!((f.dist_edgeworth - f.dist_gauss).abs() < 1e-12);
    }

    #[test]
    fn breaks() {
        assert_eq!(uniform_breaks(2.0, 3.0, 0.5).unwrap(), vec![2.0, 2.5, 3.0]);
        assert_eq!(dyadic_breaks(1.0, 5.0).unwrap(), vec![1.0, 2.0, 4.0, 5.0]);
        let iv = IntervalSpec::new(5.0, 35.0).unwrap();
        let b = block_breaks(&iv, 3f64.ln() / 35f64.ln());
        assert_eq!(b.len(), 11);
        assert!((b[1] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn ks_of_exact_quantiles() {
        let n = 1000;
        let xs: Vec<f64> = (0..n).map(|i| crate::special::inv_normal_cdf((i as f64 + 0.5) / n as f64)).collect();
        let d = ks_distance(&xs, normal_cdf);
        assert!((d - 0.5 / n as f64).abs() < 1e-9);
    }
}
