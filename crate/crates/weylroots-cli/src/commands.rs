//! One runner per subcommand. Each parses its section, writes its files and
//! returns the resolved parameters for the manifest.

use std::path::Path;

use serde::Serialize;
use serde_json::Value;
use weylroots::diophantine::{self, Excluded, LCDQuery};
use weylroots::edgeworth::{self, AssemblyOptions, CorrectionAssembly, Q};
use weylroots::gaussian_theory::{self, intensity_gaussian, variance_constant_weyl};
use weylroots::montecarlo::{self, default_workers, ExperimentConfig};
use weylroots::root_count::IntervalSpec;
use weylroots::{Error, Result};

use crate::config::{
    self, Convention, CountConfig, CwConfig, DensityConfig, EdgeworthConfig, Family, FitConfig, LcdConfig,
    SmallBallConfig, SumcheckConfig,
};
use crate::output::{num, opt, Manifest, OutDir};
use crate::{Cli, Subcommand};

/// Points allowed in a grid-valued output before the run is refused.
const MAX_OUTPUT_POINTS: f64 = 1e6;

pub fn run(cli: &Cli) -> Result<()> {
    let sub = cli.subcommand;
    let section = config::load_section(&cli.config, sub, cli.seed)?;
    let workers = cli.workers.unwrap_or_else(default_workers);
    if workers == 0 {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    let mut out = OutDir::create(&cli.out)?;
    let base = cli.config.parent().unwrap_or(Path::new("."));
    let outcome = match sub {
        Subcommand::Density => density(config::parse(section, sub)?, &mut out),
        Subcommand::Expect => expect(config::parse(section, sub)?, workers, &mut out),
        Subcommand::Variance => variance(config::parse(section, sub)?, workers, &mut out),
        Subcommand::Blocks => blocks(config::parse(section, sub)?, workers, &mut out),
        Subcommand::Smallball => smallball(config::parse(section, sub)?, workers, &mut out),
        Subcommand::Fit => fit(config::parse(section, sub)?, workers, &mut out),
        Subcommand::Edgeworth => edgeworth_ledger(config::parse(section, sub)?, &mut out),
        Subcommand::Sumcheck => sumcheck(config::parse(section, sub)?, &mut out),
        Subcommand::Lcd => lcd(config::parse(section, sub)?, base, &mut out),
        Subcommand::Cw => cw(config::parse(section, sub)?, &mut out),
    };
    // Files are kept and the manifest written even when a gate fails.
    let (resolved, gate) = match outcome {
        Ok(Outcome { resolved, gate }) => (resolved, gate),
        Err(e) => return Err(e),
    };
    let seed = resolved.get("seed").and_then(Value::as_u64);
    out.finish(Manifest {
        subcommand: sub.name(),
        config_path: cli.config.display().to_string(),
        out_dir: cli.out.display().to_string(),
        seed,
        workers,
        version: env!("CARGO_PKG_VERSION"),
        commit: option_env!("WEYLROOTS_COMMIT").unwrap_or("unknown"),
        resolved,
        files: Vec::new(),
    })?;
    match gate {
        Some(msg) => Err(Error::Acceptance(msg)),
        None => Ok(()),
    }
}

struct Outcome {
    resolved: Value,
    gate: Option<String>,
}

impl Outcome {
    fn ok<T: Serialize>(cfg: &T) -> Result<Self> {
        Ok(Outcome { resolved: resolved(cfg)?, gate: None })
    }
}

/// The parsed section with defaults filled in and absent options dropped,
/// so it parses back into the same value.
fn resolved<T: Serialize>(cfg: &T) -> Result<Value> {
    let mut v = serde_json::to_value(cfg).map_err(|e| Error::Resource(e.to_string()))?;
    if let Value::Object(m) = &mut v {
        m.retain(|_, x| !x.is_null());
    }
    Ok(v)
}

fn grid(lo: f64, hi: f64, step: f64, what: &str) -> Result<Vec<f64>> {
    if !(step > 0.0 && hi >= lo && lo.is_finite() && hi.is_finite()) {
        return Err(Error::Config(format!("{what}: need lo <= hi and step > 0, got [{lo}, {hi}] step {step}")));
    }
    let count = ((hi - lo) / step * (1.0 + 1e-12)).floor() + 1.0;
    if count > MAX_OUTPUT_POINTS {
        return Err(Error::Resource(format!("{what}: {count} points exceeds {MAX_OUTPUT_POINTS:e}")));
    }
    Ok((0..count as usize).map(|k| lo + k as f64 * step).collect())
}

fn density(cfg: DensityConfig, out: &mut OutDir) -> Result<Outcome> {
    let rows = grid(cfg.x_min, cfg.x_max, cfg.x_step, "density grid")?
        .into_iter()
        .map(|x| Ok(vec![num(x), num(intensity_gaussian(x, cfg.n)?)]))
        .collect::<Result<Vec<_>>>()?;
    out.csv("density.csv", &["x", "rho"], &rows)?;
    Outcome::ok(&cfg)
}

fn experiment(cfg: &CountConfig, workers: usize) -> Result<ExperimentConfig> {
    let iv = IntervalSpec::new(cfg.a, cfg.b)?.with_guard(cfg.guard_exponent).with_edge_mode(cfg.edge_mode);
    let mut e = ExperimentConfig::new(cfg.n, iv, cfg.dist.build()?, cfg.trials, cfg.seed);
    e.delta_exponent = cfg.delta_exponent;
    e.grid_step = cfg.grid_step;
    e.tau = cfg.tau;
    e.flop_budget = cfg.flop_budget;
    e.block_exponent = cfg.block_exponent;
    e.workers = workers;
    e.validate()?;
    Ok(e)
}

fn z_gate(limit: Option<f64>, zs: &[(&str, Option<f64>)]) -> Option<String> {
    let limit = limit?;
    let bad: Vec<String> = zs
        .iter()
        .filter(|(_, z)| z.is_none_or(|z| !(z.abs() <= limit)))
        .map(|(what, z)| format!("{what} z = {}", opt(*z)))
        .collect();
    (!bad.is_empty()).then(|| format!("|z| above {limit}: {}", bad.join(", ")))
}

fn warn(ws: &[String]) {
    for w in ws {
        eprintln!("weylroots: warning: {w}");
    }
}

const EXPECT_HEADER: [&str; 9] = ["dist", "n", "a", "b", "trials", "mean", "se_mean", "theory_mean", "z"];
const VARIANCE_HEADER: [&str; 9] = ["dist", "n", "a", "b", "trials", "var", "se_var", "theory_var", "z"];
const PAIRED_HEADER: [&str; 11] =
    ["first", "second", "n", "a", "b", "trials", "diff", "se_diff", "se_diff_unpaired", "theory_diff", "z"];

fn expect_row(s: &montecarlo::EstimateSummary) -> Vec<String> {
    vec![
        s.dist.clone(),
        s.n.to_string(),
        num(s.a),
        num(s.b),
        s.trials.to_string(),
        num(s.mean),
        opt(s.se_mean),
        num(s.theory_mean),
        opt(s.z_scores.0),
    ]
}

fn variance_row(s: &montecarlo::EstimateSummary) -> Vec<String> {
    vec![
        s.dist.clone(),
        s.n.to_string(),
        num(s.a),
        num(s.b),
        s.trials.to_string(),
        opt(s.variance),
        opt(s.se_variance),
        num(s.theory_variance),
        opt(s.z_scores.1),
    ]
}

/// Rows for one law or a matched pair, plus the summary JSON.
fn count_run(
    cfg: &CountConfig,
    workers: usize,
    out: &mut OutDir,
    name: &str,
    header: &[&str],
    row: fn(&montecarlo::EstimateSummary) -> Vec<String>,
    variance: bool,
) -> Result<Option<String>> {
    let e = experiment(cfg, workers)?;
    let pick = |s: &montecarlo::EstimateSummary| if variance { s.z_scores.1 } else { s.z_scores.0 };
    match &cfg.compare {
        None => {
            let s = if variance { montecarlo::run_variance(&e)? } else { montecarlo::run_expectation(&e)? };
            warn(&s.warnings);
            out.csv(name, header, &[row(&s)])?;
            out.json("summary.json", &s)?;
            Ok(z_gate(cfg.max_abs_z, &[(s.dist.as_str(), pick(&s))]))
        }
        Some(second) => {
            let p = montecarlo::run_paired(&e, &second.build()?)?;
            warn(&p.first.warnings);
            warn(&p.second.warnings);
            out.csv(name, header, &[row(&p.first), row(&p.second)])?;
            let (diff, se) = if variance {
                (opt(p.diff_variance), opt(p.se_diff_variance))
            } else {
                (num(p.diff_mean), opt(p.se_diff))
            };
            let paired = vec![
                p.first.dist.clone(),
                p.second.dist.clone(),
                e.n.to_string(),
                num(e.iv.a),
                num(e.iv.b),
                e.trials.to_string(),
                diff,
                se,
                if variance { String::new() } else { opt(p.se_diff_unpaired) },
                if variance { num(0.0) } else { num(p.theory_diff) },
                if variance {
                    match (p.diff_variance, p.se_diff_variance) {
                        (Some(d), Some(s)) if s > 0.0 => num(d / s),
                        _ => String::new(),
                    }
                } else {
                    opt(p.z_diff)
                },
            ];
            out.csv("paired.csv", &PAIRED_HEADER, &[paired])?;
            out.json("summary.json", &p)?;
            let zd = if variance {
                p.diff_variance.zip(p.se_diff_variance).filter(|(_, s)| *s > 0.0).map(|(d, s)| d / s)
            } else {
                p.z_diff
            };
            Ok(z_gate(
                cfg.max_abs_z,
                &[(p.first.dist.as_str(), pick(&p.first)), (p.second.dist.as_str(), pick(&p.second)), ("paired difference", zd)],
            ))
        }
    }
}

fn expect(cfg: CountConfig, workers: usize, out: &mut OutDir) -> Result<Outcome> {
    let gate = count_run(&cfg, workers, out, "expectation.csv", &EXPECT_HEADER, expect_row, false)?;
    Ok(Outcome { resolved: resolved(&cfg)?, gate })
}

fn variance(cfg: CountConfig, workers: usize, out: &mut OutDir) -> Result<Outcome> {
    let gate = count_run(&cfg, workers, out, "variance.csv", &VARIANCE_HEADER, variance_row, true)?;
    Ok(Outcome { resolved: resolved(&cfg)?, gate })
}

fn blocks(cfg: CountConfig, workers: usize, out: &mut OutDir) -> Result<Outcome> {
    if cfg.compare.is_some() || cfg.max_abs_z.is_some() {
        return Err(Error::Config("[blocks] takes neither `compare` nor `max_abs_z`".into()));
    }
    let bc = montecarlo::block_covariance(&experiment(&cfg, workers)?)?;
    let mut rows = Vec::new();
    for (s, r) in bc.cov.iter().enumerate() {
        for (t, c) in r.iter().enumerate() {
            rows.push(vec![s.to_string(), t.to_string(), num(*c)]);
        }
    }
    out.csv("blocks.csv", &["s", "t", "cov"], &rows)?;
    out.json("summary.json", &bc)?;
    Outcome::ok(&cfg)
}

/// Degenerate interval at `x` so the shared validation sees the bulk point.
fn point_experiment(n: usize, x: f64, dist: &config::DistSpec, trials: u64, seed: u64, workers: usize) -> Result<ExperimentConfig> {
    let mut e = ExperimentConfig::new(n, IntervalSpec::new(x, x)?, dist.build()?, trials, seed);
    e.workers = workers;
    Ok(e)
}

fn smallball(cfg: SmallBallConfig, workers: usize, out: &mut OutDir) -> Result<Outcome> {
    let mut e = point_experiment(cfg.n, cfg.x, &cfg.dist, cfg.trials, cfg.seed, workers)?;
    e.flop_budget = cfg.flop_budget;
    let rows = montecarlo::run_smallball(cfg.x, &cfg.deltas, &e)?
        .iter()
        .map(|r| {
            vec![
                r.dist.clone(),
                r.n.to_string(),
                num(r.x),
                num(r.delta),
                r.dim.to_string(),
                num(r.freq),
                num(r.freq_over_vol),
                num(r.theory),
            ]
        })
        .collect::<Vec<_>>();
    out.csv("smallball.csv", &["dist", "n", "x", "delta", "dim", "freq", "freq_over_vol", "theory"], &rows)?;
    Outcome::ok(&cfg)
}

fn fit(cfg: FitConfig, workers: usize, out: &mut OutDir) -> Result<Outcome> {
    let e = point_experiment(cfg.n, cfg.x, &cfg.dist, cfg.trials, cfg.seed, workers)?;
    let f = montecarlo::edgeworth_fit(cfg.x, &e)?;
    let row = vec![
        e.dist.name().to_string(),
        cfg.n.to_string(),
        num(cfg.x),
        f.trials.to_string(),
        num(f.dist_edgeworth),
        num(f.dist_gauss),
    ];
    out.csv("fit.csv", &["dist", "n", "x", "trials", "ks_edgeworth", "ks_gauss"], &[row])?;
    Outcome::ok(&cfg)
}

fn q(r: Q) -> String {
    if *r.denom() == 1 {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

fn ledger_rows(asm: &CorrectionAssembly) -> Vec<Vec<String>> {
    asm.lines
        .iter()
        .map(|l| {
            vec![
                format!("{:?}", l.group).to_lowercase(),
                l.term.clone(),
                q(l.weight.0),
                num(l.weight.1),
                l.abs_factor.0.to_string(),
                num(l.abs_factor.1),
                l.delta_factor.0.to_string(),
                num(l.delta_factor.1),
                q(l.x_factor.0),
                num(l.x_factor.1),
                q(l.contribution.0),
                num(l.contribution.1),
            ]
        })
        .collect()
}

const LEDGER_HEADER: [&str; 12] = [
    "group",
    "term",
    "weight",
    "weight_value",
    "abs_factor",
    "abs_value",
    "delta_factor",
    "delta_value",
    "x_factor",
    "x_value",
    "contribution",
    "contribution_value",
];

fn edgeworth_ledger(cfg: EdgeworthConfig, out: &mut OutDir) -> Result<Outcome> {
    let opts = match cfg.convention {
        Convention::Published => AssemblyOptions::published(),
        Convention::KacRice => AssemblyOptions::kac_rice(),
    };
    let asm = edgeworth::assemble_correction(opts);
    out.csv("ledger.csv", &LEDGER_HEADER, &ledger_rows(&asm))?;

    use edgeworth::Group;
    let mut rows = vec![
        vec!["C1".into(), q(asm.kurtosis.0), Group::Kurtosis.unit_label().into(), num(asm.kurtosis.1)],
        vec!["C2".into(), q(asm.skew.0), Group::Skew.unit_label().into(), num(asm.skew.1)],
    ];
    println!("C1 = {} * {} = {}", q(asm.kurtosis.0), Group::Kurtosis.unit_label(), num(asm.kurtosis.1));
    println!("C2 = {} * {} = {}", q(asm.skew.0), Group::Skew.unit_label(), num(asm.skew.1));
    if let Some(d) = &cfg.dist {
        let law = d.build()?;
        let (assembled, _) = edgeworth::expectation_correction_with(cfg.c1, cfg.c2, &law, opts)?;
        let per_log = assembled / (cfg.c2 / cfg.c1).ln();
        rows.push(vec![format!("C_xi[{}]", law.name()), String::new(), String::new(), num(per_log)]);
        rows.push(vec![
            format!("shift[{}; c2/c1 = {}]", law.name(), num(cfg.c2 / cfg.c1)),
            String::new(),
            String::new(),
            num(assembled),
        ]);
        println!("C_xi[{}] = {}", law.name(), num(per_log));
    }
    out.csv("constants.csv", &["name", "exact", "unit", "value"], &rows)?;
    Outcome::ok(&cfg)
}

fn sumcheck(cfg: SumcheckConfig, out: &mut OutDir) -> Result<Outcome> {
    if cfg.t.is_empty() || cfg.s.is_empty() || cfg.x.is_empty() {
        return Err(Error::Config("[sumcheck] t, s and x must be non-empty".into()));
    }
    let x_max = cfg.x.iter().copied().fold(0.0, f64::max);
    let n = cfg.n.unwrap_or((4.0 * x_max * x_max + 400.0).ceil() as usize);
    let mut rows = Vec::new();
    for &t in &cfg.t {
        for &s in &cfg.s {
            for &x in &cfg.x {
                let a = edgeworth::asymptotic_sum(t, s, x, n)?;
                rows.push(vec![
                    t.to_string(),
                    s.to_string(),
                    num(x),
                    n.to_string(),
                    num(a.exact),
                    num(a.closed_form),
                    num(a.rel_err()),
                    a.edge_clipped.to_string(),
                ]);
            }
        }
    }
    out.csv("sumcheck.csv", &["t", "s", "x", "n", "exact", "closed_form", "rel_err", "edge_clipped"], &rows)?;
    Outcome::ok(&SumcheckConfig { n: Some(n), ..cfg })
}

fn read_weights(path: &Path) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Resource(format!("{}: {e}", path.display())))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .enumerate()
        .map(|(k, l)| {
            l.split(',')
                .map(|c| {
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Config(format!("{} row {}: {e}", path.display(), k + 1)))
                })
                .collect()
        })
        .collect()
}

fn lcd(mut cfg: LcdConfig, base: &Path, out: &mut OutDir) -> Result<Outcome> {
    cfg.check()?;
    let weights = match cfg.family {
        Family::Sk => {
            if cfg.dim != 1 {
                return Err(Error::Config("the sk family is one-dimensional".into()));
            }
            diophantine::sk_weights(cfg.n.unwrap_or_default())
        }
        Family::Weyl => {
            let (n, x) = (cfg.n.unwrap_or_default(), cfg.x.unwrap_or_default());
            let n_norm = *cfg.n_norm.get_or_insert(x);
            match cfg.dim {
                1 => diophantine::weyl_weights_1d(x, n, n_norm, weylroots::weyl_eval::DEFAULT_TAU)?,
                2 => diophantine::weyl_weights_2d(x, n, n_norm, weylroots::weyl_eval::DEFAULT_TAU)?,
                d => return Err(Error::Config(format!("dim must be 1 or 2, got {d}"))),
            }
        }
        Family::Custom => {
            let p = base.join(cfg.weights_file.as_deref().unwrap_or_default());
            let p = p.canonicalize().map_err(|e| Error::Resource(format!("{}: {e}", p.display())))?;
            cfg.weights_file = Some(p.display().to_string());
            read_weights(&p)?
        }
    };
    let query = LCDQuery {
        weights,
        r: cfg.r,
        d_max: cfg.d_max,
        tau: cfg.tau,
        excluded: if cfg.excluded == 0 { Excluded::None } else { Excluded::AnyUpTo(cfg.excluded) },
        scan_step: cfg.step,
    };
    let res = diophantine::lcd_search(&query)?;
    let step = *cfg.profile_step.get_or_insert(cfg.step);
    let ds = grid(cfg.r, cfg.d_max, step, "lcd profile")?;
    // 2-d profiles run along the direction of the minimizer.
    let dir: Vec<f64> = match query.dim() {
        1 => vec![1.0],
        _ => {
            let norm = res.argmin.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 0.0 {
                res.argmin.iter().map(|a| a / norm).collect()
            } else {
                vec![1.0, 0.0]
            }
        }
    };
    let points: Vec<Vec<f64>> = ds.iter().map(|d| dir.iter().map(|u| u * d).collect()).collect();
    let obj = diophantine::objective_profile(&query, &points)?;
    let rows: Vec<Vec<String>> = ds.iter().zip(&obj).map(|(d, o)| vec![num(*d), num(*o)]).collect();
    out.csv("lcd_profile.csv", &["D", "objective"], &rows)?;
    out.json("lcd_result.json", &res)?;
    println!(
        "d_star = {}  min_objective = {}  certified_lower_bound = {}  unresolved_from = {}",
        num(res.d_star),
        num(res.min_objective),
        num(res.certified_lower_bound),
        num(res.unresolved_from)
    );
    Outcome::ok(&cfg)
}

fn cw(cfg: CwConfig, out: &mut OutDir) -> Result<Outcome> {
    let c = variance_constant_weyl()?;
    let rows = grid(cfg.t_step, cfg.t_max, cfg.t_step, "cw grid")?
        .into_iter()
        .map(|t| Ok(vec![num(t), num(gaussian_theory::delta_t(t)), num(gaussian_theory::pair_correlation_limit(t)?)]))
        .collect::<Result<Vec<_>>>()?;
    out.csv("pair_correlation.csv", &["t", "delta", "rho"], &rows)?;
    out.json("cw.json", &c)?;
    println!("C_W reading a = {}", num(c.reading_a));
    println!("C_W reading b = {}", num(c.reading_b));
    println!("C_W selected ({}) = {}", c.selected_reading, num(c.selected));
    Outcome::ok(&cfg)
}
