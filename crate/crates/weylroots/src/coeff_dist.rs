//! Coefficient laws: mean 0, variance 1, exact low moments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::special::inv_normal_cdf;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Gaussian,
    Rademacher,
    UniformSym,
    /// Finite table, already standardized. `cdf` holds cumulative probabilities.
    Discrete {
        values: Vec<f64>,
        probs: Vec<f64>,
        #[serde(skip)]
        cdf: Vec<f64>,
    },
}

/// A standardized coefficient law with its third and fourth moments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefficientDistribution {
    pub kind: Kind,
    /// `E xi^3`
    pub m3: f64,
    /// `E xi^4`
    pub m4: f64,
    /// `E xi^8`, recorded for sanity checks only.
    pub subgaussian_proxy: f64,
}

impl CoefficientDistribution {
    pub fn gaussian() -> Self {
        CoefficientDistribution { kind: Kind::Gaussian, m3: 0.0, m4: 3.0, subgaussian_proxy: 105.0 }
    }

    pub fn rademacher() -> Self {
        CoefficientDistribution { kind: Kind::Rademacher, m3: 0.0, m4: 1.0, subgaussian_proxy: 1.0 }
    }

    /// Uniform on (-sqrt 3, sqrt 3).
    pub fn uniform_sym() -> Self {
        CoefficientDistribution { kind: Kind::UniformSym, m3: 0.0, m4: 9.0 / 5.0, subgaussian_proxy: 9.0 }
    }

    /// Builds a finite law from `(value, probability)` pairs, rescaled to mean 0
    /// and variance 1. Probabilities are normalized to sum 1.
    pub fn discrete(values: &[f64], probs: &[f64]) -> Result<Self> {
        if values.is_empty() || values.len() != probs.len() {
            return Err(Error::Config("discrete law needs equally many values and probs".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("discrete law has a non-finite value or negative probability".into()));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::Config("discrete law probabilities sum to zero".into()));
        }
        let p: Vec<f64> = probs.iter().map(|q| q / total).collect();
        let mean: f64 = values.iter().zip(&p).map(|(v, q)| v * q).sum();
        let var: f64 = values.iter().zip(&p).map(|(v, q)| q * (v - mean).powi(2)).sum();
        if var <= 0.0 {
            return Err(Error::Config("discrete law is degenerate (zero variance)".into()));
        }
        let sd = var.sqrt();
        let mut vals: Vec<f64> = values.iter().map(|v| (v - mean) / sd).collect();

        let symmetric = is_symmetric(&vals, &p);
        if symmetric {
            // Snap mirrored atoms so odd moments vanish exactly.
            let snapped: Vec<f64> = vals
                .iter()
                .map(|v| {
                    let partner = vals
                        .iter()
                        .map(|w| -w)
                        .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
                        .unwrap_or(*v);
                    0.5 * (v + partner)
                })
                .collect();
            vals = snapped;
        }
        // Exact renormalization after snapping.
        let var2: f64 = vals.iter().zip(&p).map(|(v, q)| q * v * v).sum();
        let s2 = var2.sqrt();
        for v in &mut vals {
            *v /= s2;
        }
        let m3 = if symmetric { 0.0 } else { vals.iter().zip(&p).map(|(v, q)| q * v.powi(3)).sum() };
        let m4 = vals.iter().zip(&p).map(|(v, q)| q * v.powi(4)).sum();
        let m8 = vals.iter().zip(&p).map(|(v, q)| q * v.powi(8)).sum();
        let mut order: Vec<usize> = (0..vals.len()).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        let values: Vec<f64> = order.iter().map(|&i| vals[i]).collect();
        let probs: Vec<f64> = order.iter().map(|&i| p[i]).collect();
        let cdf = cumulative(&probs);
        Ok(CoefficientDistribution { kind: Kind::Discrete { values, probs, cdf }, m3, m4, subgaussian_proxy: m8 })
    }

    /// Looks a named law up (`gaussian`, `rademacher`, `uniform_sym`).
    pub fn named(name: &str) -> Result<Self> {
        match name {
            "gaussian" => Ok(Self::gaussian()),
            "rademacher" => Ok(Self::rademacher()),
            "uniform_sym" => Ok(Self::uniform_sym()),
            other => Err(Error::Config(format!("unsupported coefficient law `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            Kind::Gaussian => "gaussian",
            Kind::Rademacher => "rademacher",
            Kind::UniformSym => "uniform_sym",
            Kind::Discrete { .. } => "discrete",
        }
    }

    pub fn is_gaussian(&self) -> bool {
        matches!(self.kind, Kind::Gaussian)
    }

    /// `(E xi^3 - E G^3, E xi^4 - E G^4)`.
    pub fn excess_cumulants(&self) -> (f64, f64) {
        (self.m3, self.m4 - 3.0)
    }

    /// Cumulant `chi_k` for `k <= 5` (mean 0, variance 1).
    pub fn cumulant(&self, k: u32) -> f64 {
        match k {
            0 | 1 => 0.0,
            2 => 1.0,
            3 => self.m3,
            4 => self.m4 - 3.0,
            5 => self.fifth_moment() - 10.0 * self.m3,
            _ => f64::NAN,
        }
    }

    fn fifth_moment(&self) -> f64 {
        match &self.kind {
            Kind::Discrete { values, probs, .. } if self.m3 != 0.0 => {
                values.iter().zip(probs).map(|(v, p)| p * v.powi(5)).sum()
            }
            _ => 0.0,
        }
    }

    /// Maps one uniform in (0, 1) to one draw. All laws consume exactly one
    /// uniform per draw, which is what lets two laws share a stream.
    #[inline]
    pub fn from_uniform(&self, u: f64) -> f64 {
        match &self.kind {
            Kind::Gaussian => inv_normal_cdf(u),
            Kind::Rademacher => {
                if u < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            Kind::UniformSym => 3f64.sqrt() * (2.0 * u - 1.0),
            Kind::Discrete { values, cdf, .. } => {
                let k = cdf.partition_point(|c| *c < u);
                values[k.min(values.len() - 1)]
            }
        }
    }

    pub fn sample_into(&self, stream: &mut Stream, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.from_uniform(stream.uniform());
        }
    }

    pub fn sample(&self, stream: &mut Stream, count: usize) -> Result<Vec<f64>> {
        if count == 0 {
            return Err(Error::Domain("sample count must be positive".into()));
        }
        let mut out = vec![0.0; count];
        self.sample_into(stream, &mut out);
        Ok(out)
    }

    /// Restores the derived lookup table after deserialization.
    pub fn rebuilt(self) -> Result<Self> {
        match &self.kind {
            Kind::Discrete { values, probs, .. } => Self::discrete(values, probs),
            _ => Ok(self),
        }
    }
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = p
        .iter()
        .map(|q| {
            acc += q;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

fn is_symmetric(vals: &[f64], p: &[f64]) -> bool {
    let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    vals.iter().zip(p).all(|(v, q)| {
        vals.iter()
            .zip(p)
            .any(|(w, r)| (w + v).abs() <= 1e-12 * scale && (r - q).abs() <= 1e-12)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moments(xs: &[f64]) -> (f64, f64, f64) {
        let n = xs.len() as f64;
        let m1 = xs.iter().sum::<f64>() / n;
        let m2 = xs.iter().map(|x| x * x).sum::<f64>() / n;
        let m4 = xs.iter().map(|x| x.powi(4)).sum::<f64>() / n;
        (m1, m2, m4)
    }

    #[test]
    fn rademacher_support() {
        let d = CoefficientDistribution::rademacher();
        let xs = d.sample(&mut Stream::new(3, 0), 4).unwrap();
        assert!(xs.iter().all(|x| *x == 1.0 || *x == -1.0));
    }

    #[test]
    fn gaussian_mean_is_small() {
        let d = CoefficientDistribution::gaussian();
        let xs = d.sample(&mut Stream::new(11, 0), 1_000_000).unwrap();
        let (m1, m2, _) = moments(&xs);
        assert!(m1.abs() < 5e-3);
        assert!((m2 - 1.0).abs() < 5.0 * (2.0f64 / 1e6).sqrt());
    }

    #[test]
    fn uniform_fourth_moment() {
        let d = CoefficientDistribution::uniform_sym();
        let xs = d.sample(&mut Stream::new(5, 2), 1_000_000).unwrap();
        let (_, _, m4) = moments(&xs);
        assert!((m4 - 1.8).abs() < 0.02);
    }

    #[test]
    fn excess_cumulants_of_named_laws() {
        assert_eq!(CoefficientDistribution::gaussian().excess_cumulants(), (0.0, 0.0));
        assert_eq!(CoefficientDistribution::rademacher().excess_cumulants(), (0.0, -2.0));
        let (c3, c4) = CoefficientDistribution::uniform_sym().excess_cumulants();
        assert_eq!(c3, 0.0);
        assert!((c4 + 1.2).abs() < 1e-15);
    }

    #[test]
    fn discrete_is_standardized() {
        let d = CoefficientDistribution::discrete(&[0.0, 1.0, 5.0], &[0.5, 0.3, 0.2]).unwrap();
        let Kind::Discrete { values, probs, .. } = &d.kind else { panic!() };
        let mean: f64 = values.iter().zip(probs).map(|(v, p)| v * p).sum();
        let var: f64 = values.iter().zip(probs).map(|(v, p)| v * v * p).sum();
        assert!(mean.abs() < 1e-14);
        assert!((var - 1.0).abs() < 1e-14);
        assert!(d.m3 > 0.0);
        assert!(d.m4 >= 1.0 + d.m3 * d.m3);
    }

    #[test]
    fn symmetric_discrete_has_zero_skew() {
        let d = CoefficientDistribution::discrete(&[-2.0, -0.5, 0.5, 2.0], &[0.1, 0.4, 0.4, 0.1]).unwrap();
        assert_eq!(d.excess_cumulants().0, 0.0);
        let d = CoefficientDistribution::discrete(&[3.0, 5.0], &[1.0, 1.0]).unwrap();
        assert_eq!(d.m3, 0.0);
        assert!((d.m4 - 1.0).abs() < 1e-14);
    }

    #[test]
    fn unknown_name_is_config_error() {
        assert!(matches!(CoefficientDistribution::named("cauchy"), Err(Error::Config(_))));
    }
}
