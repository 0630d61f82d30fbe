//! Posterior summaries, contrasts and convergence diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dataset::Likelihood;
use super::deviance::Dic;
use crate::elicitation::{BandProbabilities, EffectModel};
use crate::error::{Error, Result};

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(draws: &[f64], p: f64) -> f64 {
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    quantile_sorted(&sorted, p)
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Median and central 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn of(draws: &[f64]) -> Self {
        let mut sorted = draws.to_vec();
        sorted.sort_by(f64::total_cmp);
        Self {
            median: quantile_sorted(&sorted, 0.5),
            lower: quantile_sorted(&sorted, 0.025),
            upper: quantile_sorted(&sorted, 0.975),
        }
    }

    /// Quantiles commute with monotone maps.
    pub fn exp(&self) -> Self {
        Self {
            median: self.median.exp(),
            lower: self.lower.exp(),
            upper: self.upper.exp(),
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Monte Carlo standard error of the `p` quantile by batch means.
pub fn mcse_quantile(draws: &[f64], p: f64, batches: usize) -> f64 {
    let size = draws.len() / batches;
    if size < 2 {
        return f64::NAN;
    }
    let qs: Vec<f64> = draws.chunks_exact(size).take(batches).map(|c| quantile(c, p)).collect();
    (variance(&qs) / qs.len() as f64).sqrt()
}

pub fn mcse_mean(draws: &[f64], batches: usize) -> f64 {
    let size = draws.len() / batches;
    if size < 2 {
        return f64::NAN;
    }
    let ms: Vec<f64> = draws.chunks_exact(size).take(batches).map(mean).collect();
    (variance(&ms) / ms.len() as f64).sqrt()
}

/// Split-chain potential scale reduction factor.
pub fn split_psrf(chains: &[&[f64]]) -> f64 {
    let mut halves: Vec<&[f64]> = Vec::with_capacity(chains.len() * 2);
    for c in chains {
        let h = c.len() / 2;
        if h < 2 {
            return f64::NAN;
        }
        halves.push(&c[..h]);
        halves.push(&c[h..2 * h]);
    }
    let n = halves[0].len() as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let w = halves.iter().map(|h| variance(h)).sum::<f64>() / halves.len() as f64;
    let b = n * variance(&means);
    if w <= 0.0 || !w.is_finite() {
        return 1.0;
    }
    let var_plus = (n - 1.0) / n * w + b / n;
    (var_plus / w).sqrt()
}

/// Kept draws pooled chain after chain.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Traces {
    pub chains: usize,
    pub per_chain: usize,
    /// `d[k]` for every treatment (index 0 is the reference and stays 0).
    pub d: Vec<Vec<f64>>,
    /// New-study effects vs the reference; empty for fixed effect.
    pub d_new: Vec<Vec<f64>>,
    pub tau_model: Vec<f64>,
    pub tau_or: Vec<f64>,
    pub resdev: Vec<f64>,
}

impl Traces {
    pub fn chain<'a>(&self, series: &'a [f64], c: usize) -> &'a [f64] {
        &series[c * self.per_chain..(c + 1) * self.per_chain]
    }

    fn split<'a>(&self, series: &'a [f64]) -> Vec<&'a [f64]> {
        (0..self.chains)
            .map(|c| &series[c * self.per_chain..(c + 1) * self.per_chain])
            .collect()
    }

    pub fn psrf(&self, series: &[f64]) -> f64 {
        split_psrf(&self.split(series))
    }

    /// CSV with one row per kept iteration.
    pub fn to_csv(&self, names: &[String]) -> String {
        let nt = self.d.len();
        let mut out = String::from("chain,iteration");
        for name in names.iter().take(nt).skip(1) {
            out.push_str(&format!(",d[{name}]"));
        }
        if !self.d_new.is_empty() {
            for name in names.iter().take(nt).skip(1) {
                out.push_str(&format!(",d_new[{name}]"));
            }
            out.push_str(",tau,tau_or");
        }
        out.push_str(",resdev\n");
        for c in 0..self.chains {
            for it in 0..self.per_chain {
                let j = c * self.per_chain + it;
                out.push_str(&format!("{},{}", c + 1, it + 1));
                for k in 1..nt {
                    out.push_str(&format!(",{}", self.d[k][j]));
                }
                if !self.d_new.is_empty() {
                    for k in 1..nt {
                        out.push_str(&format!(",{}", self.d_new[k][j]));
                    }
                    out.push_str(&format!(",{},{}", self.tau_model[j], self.tau_or[j]));
                }
                out.push_str(&format!(",{}\n", self.resdev[j]));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastSummary {
    /// `d[a] - d[b]`, 1-based ids.
    pub a: usize,
    pub b: usize,
    pub effect: Interval,
    /// Exponentiated effect (odds ratio) for binomial data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ratio: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictive: Option<Interval>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predictive_ratio: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TauSummary {
    /// On the analysis scale.
    pub tau: Interval,
    /// Divided by `omega`; the bands are defined on this scale.
    pub tau_or: Interval,
    pub omega: f64,
    pub bands: BandProbabilities,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub acceptance: BTreeMap<String, f64>,
    pub psrf: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSummary {
    pub effect: EffectModel,
    pub likelihood: Likelihood,
    pub treatment_names: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    /// Every treatment against the reference, then any requested extras.
    pub contrasts: Vec<ContrastSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<TauSummary>,
    pub dic: Dic,
    pub total_resdev: f64,
    pub n_data_points: usize,
    pub diagnostics: Diagnostics,
    #[serde(skip)]
    pub traces: Traces,
}

impl PosteriorSummary {
    pub fn n_treatments(&self) -> usize {
        self.traces.d.len()
    }

    fn check_id(&self, id: usize) -> Result<()> {
        if id == 0 || id > self.n_treatments() {
            return Err(Error::Domain(format!(
                "treatment id {id} outside 1..={}",
                self.n_treatments()
            )));
        }
        Ok(())
    }

    /// Per-draw difference `d[a] - d[b]`.
    pub fn contrast_draws(&self, a: usize, b: usize) -> Result<Vec<f64>> {
        self.check_id(a)?;
        self.check_id(b)?;
        Ok(self.traces.d[a - 1]
            .iter()
            .zip(&self.traces.d[b - 1])
            .map(|(x, y)| x - y)
            .collect())
    }

    pub fn predictive_draws(&self, a: usize, b: usize) -> Result<Option<Vec<f64>>> {
        self.check_id(a)?;
        self.check_id(b)?;
        if self.traces.d_new.is_empty() {
            return Ok(None);
        }
        Ok(Some(
            self.traces.d_new[a - 1]
                .iter()
                .zip(&self.traces.d_new[b - 1])
                .map(|(x, y)| x - y)
                .collect(),
        ))
    }

    /// Summary of `d[a] - d[b]`; odds-ratio scale is exponentiated per draw.
    pub fn contrast(&self, a: usize, b: usize) -> Result<ContrastSummary> {
        let effect = Interval::of(&self.contrast_draws(a, b)?);
        let predictive = self.predictive_draws(a, b)?.map(|p| Interval::of(&p));
        let binomial = self.likelihood == Likelihood::BinomialLogit;
        Ok(ContrastSummary {
            a,
            b,
            effect,
            ratio: binomial.then(|| effect.exp()),
            predictive,
            predictive_ratio: if binomial { predictive.map(|p| p.exp()) } else { None },
        })
    }

    pub fn find_contrast(&self, a: usize, b: usize) -> Option<&ContrastSummary> {
        self.contrasts.iter().find(|c| c.a == a && c.b == b)
    }

    /// Posterior band probabilities of `tau` on the log-OR scale.
    pub fn tau_bands(&self) -> Result<BandProbabilities> {
        posterior_tau_bands(self.effect, &self.traces.tau_or)
    }
}

pub fn posterior_tau_bands(effect: EffectModel, tau_or: &[f64]) -> Result<BandProbabilities> {
    if effect == EffectModel::FixedEffect {
        return Err(Error::State("a fixed-effect run has no heterogeneity parameter".into()));
    }
    BandProbabilities::from_sample(tau_or)
}
