//! Strict config schema: one table per subcommand, unknown keys rejected,
//! missing required keys listed together.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use weylroots::diophantine::MAX_EXCLUDED;
use weylroots::{CoefficientDistribution, Error, Result};

use crate::Subcommand;

/// `dist = "rademacher"` or `dist = { values = [...], probs = [...] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DistSpec {
    Named(String),
    Table { values: Vec<f64>, probs: Vec<f64> },
}

impl DistSpec {
    pub fn build(&self) -> Result<CoefficientDistribution> {
        match self {
            DistSpec::Named(n) => CoefficientDistribution::named(n),
            DistSpec::Table { values, probs } => CoefficientDistribution::discrete(values, probs),
        }
    }
}

fn default_theta() -> f64 {
    weylroots::root_count::DEFAULT_THETA
}
fn default_step() -> f64 {
    weylroots::root_count::DEFAULT_STEP
}
fn default_tau() -> f64 {
    weylroots::weyl_eval::DEFAULT_TAU
}
fn default_budget() -> f64 {
    weylroots::montecarlo::DEFAULT_FLOP_BUDGET
}
fn default_guard() -> f64 {
    weylroots::root_count::DEFAULT_GUARD_EXPONENT
}
fn default_block() -> f64 {
    weylroots::montecarlo::DEFAULT_BLOCK_EXPONENT
}

/// Shared by `expect`, `variance` and `blocks`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CountConfig {
    pub n: usize,
    pub a: f64,
    pub b: f64,
    pub dist: DistSpec,
    pub trials: u64,
    pub seed: u64,
    /// Second law run on matched streams.
    pub compare: Option<DistSpec>,
    #[serde(default = "default_theta")]
    pub delta_exponent: f64,
    #[serde(default = "default_step")]
    pub grid_step: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_budget")]
    pub flop_budget: f64,
    #[serde(default = "default_guard")]
    pub guard_exponent: f64,
    #[serde(default)]
    pub edge_mode: bool,
    #[serde(default = "default_block")]
    pub block_exponent: f64,
    /// Exit with the acceptance code when `|z|` exceeds this.
    pub max_abs_z: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    pub n: usize,
    pub x_min: f64,
    pub x_max: f64,
    pub x_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmallBallConfig {
    pub n: usize,
    pub x: f64,
    pub deltas: Vec<f64>,
    pub dist: DistSpec,
    pub trials: u64,
    pub seed: u64,
    #[serde(default = "default_budget")]
    pub flop_budget: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub n: usize,
    pub x: f64,
    pub dist: DistSpec,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    #[default]
    Published,
    KacRice,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeworthConfig {
    #[serde(default)]
    pub convention: Convention,
    /// Law whose `C_xi` is reported.
    pub dist: Option<DistSpec>,
    #[serde(default = "one")]
    pub c1: f64,
    #[serde(default = "two")]
    pub c2: f64,
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SumcheckConfig {
    pub t: Vec<u32>,
    pub s: Vec<u32>,
    pub x: Vec<f64>,
    /// Degree; defaults to a value well past the soft edge of the largest `x`.
    pub n: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Sk,
    Weyl,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LcdConfig {
    pub family: Family,
    pub r: f64,
    pub d_max: f64,
    pub tau: f64,
    pub step: f64,
    /// SK length or Weyl degree.
    pub n: Option<usize>,
    /// Weyl abscissa.
    pub x: Option<f64>,
    /// Weyl normalization `N`; defaults to `x`.
    pub n_norm: Option<f64>,
    /// 1 or 2 (Weyl).
    #[serde(default = "dim_one")]
    pub dim: usize,
    /// One weight vector per line, comma separated (custom family).
    pub weights_file: Option<String>,
    #[serde(default)]
    pub excluded: usize,
    /// Spacing of the emitted profile; the scan itself uses `step`.
    pub profile_step: Option<f64>,
}

fn dim_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwConfig {
    #[serde(default = "t_max")]
    pub t_max: f64,
    #[serde(default = "t_step")]
    pub t_step: f64,
}

fn t_max() -> f64 {
    6.0
}
fn t_step() -> f64 {
    0.1
}

/// Required keys per section, listed in config errors.
pub fn required_keys(sub: Subcommand) -> &'static [&'static str] {
    match sub {
        Subcommand::Density => &["n", "x_min", "x_max", "x_step"],
        Subcommand::Expect | Subcommand::Variance | Subcommand::Blocks => &["n", "a", "b", "dist", "trials", "seed"],
        Subcommand::Smallball => &["n", "x", "deltas", "dist", "trials", "seed"],
        Subcommand::Fit => &["n", "x", "dist", "trials", "seed"],
        Subcommand::Edgeworth | Subcommand::Cw => &[],
        Subcommand::Sumcheck => &["t", "s", "x"],
        Subcommand::Lcd => &["family", "r", "d_max", "tau", "step"],
    }
}

const SECTIONS: [&str; 10] = ["density", "expect", "variance", "smallball", "blocks", "edgeworth", "sumcheck", "lcd", "cw", "fit"];

/// Loads the section for `sub`, from TOML or from a replayed manifest.
/// `seed` from the command line is merged in before the required-key check.
pub fn load_section(path: &Path, sub: Subcommand, seed: Option<u64>) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut section = if path.extension().is_some_and(|e| e == "json") {
        from_manifest(&text, sub)?
    } else {
        let root: toml::Table =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        if let Some(k) = root.keys().find(|k| !SECTIONS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown section `{k}` (known: {})", SECTIONS.join(", "))));
        }
        match root.get(sub.name()) {
            Some(toml::Value::Table(t)) => t.clone(),
            Some(_) => return Err(Error::Config(format!("`{}` must be a table", sub.name()))),
            None => toml::Table::new(),
        }
    };
    if let Some(s) = seed {
        if required_keys(sub).contains(&"seed") {
            let v = i64::try_from(s).map_err(|_| Error::Config(format!("seed {s} exceeds the TOML integer range")))?;
            section.insert("seed".into(), toml::Value::Integer(v));
        }
    }
    let missing: Vec<&str> = required_keys(sub).iter().copied().filter(|k| !section.contains_key(*k)).collect();
    if !missing.is_empty() {
        return Err(Error::Config(format!(
            "section [{}] is missing required keys: {}",
            sub.name(),
            missing.join(", ")
        )));
    }
    Ok(section)
}

fn from_manifest(text: &str, sub: Subcommand) -> Result<toml::Table> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
    let recorded = v.get("subcommand").and_then(|s| s.as_str()).unwrap_or_default();
    if recorded != sub.name() {
        return Err(Error::Config(format!("manifest is for `{recorded}`, not `{}`", sub.name())));
    }
    let resolved = v
        .get("resolved")
        .cloned()
        .ok_or_else(|| Error::Config("manifest has no `resolved` parameters".into()))?;
    // JSON -> TOML keeps integers as integers and floats as floats.
    let s = serde_json::to_string(&resolved).map_err(|e| Error::Config(e.to_string()))?;
    let t: toml::Table = serde_json::from_str(&s).map_err(|e| Error::Config(format!("manifest parameters: {e}")))?;
    Ok(t)
}

pub fn parse<T: DeserializeOwned>(section: toml::Table, sub: Subcommand) -> Result<T> {
    T::deserialize(toml::Value::Table(section)).map_err(|e| Error::Config(format!("[{}] {e}", sub.name())))
}

impl LcdConfig {
    pub fn check(&self) -> Result<()> {
        if self.excluded > MAX_EXCLUDED {
            return Err(Error::Config(format!("excluded = {} exceeds {MAX_EXCLUDED}", self.excluded)));
        }
        let need = |ok: bool, key: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!("family {:?} requires `{key}`", self.family)))
            }
        };
        match self.family {
            Family::Sk => need(self.n.is_some(), "n"),
            Family::Weyl => {
                need(self.n.is_some(), "n")?;
                need(self.x.is_some(), "x")
            }
            Family::Custom => need(self.weights_file.is_some(), "weights_file"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_key_is_rejected() {
        let mut t = toml::Table::new();
        t.insert("n".into(), toml::Value::Integer(10));
        t.insert("x_min".into(), toml::Value::Float(1.0));
        t.insert("x_max".into(), toml::Value::Float(2.0));
        t.insert("x_step".into(), toml::Value::Float(0.5));
        assert!(parse::<DensityConfig>(t.clone(), Subcommand::Density).is_ok());
        t.insert("colour".into(), toml::Value::String("red".into()));
        let err = parse::<DensityConfig>(t, Subcommand::Density).unwrap_err();
        assert!(err.to_string().contains("colour"));
    }

    #[test]
    fn dist_forms() {
        let t: toml::Table = toml::from_str("dist = 'rademacher'").unwrap();
        let d: DistSpec = t["dist"].clone().try_into().unwrap();
        assert_eq!(d.build().unwrap().name(), "rademacher");
        let t: toml::Table = toml::from_str("dist = { values = [0, 1], probs = [0.5, 0.5] }").unwrap();
        let d: DistSpec = t["dist"].clone().try_into().unwrap();
        assert_eq!(d.build().unwrap().name(), "discrete");
    }
}
