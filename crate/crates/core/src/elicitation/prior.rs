//! Heterogeneity priors, heterogeneity bands and prior feedback.

use serde::{Deserialize, Serialize};

use super::fit::FittedRatioDistribution;
use super::scale::{ratio_to_tau, OutcomeScale, RANGE_WIDTH};
use crate::dist::{DistributionSpec, RngStream};
use crate::error::{Error, Result};

/// Empirical log-OR prior for `tau^2`: `log tau^2 ~ N(log_mean, log_sd^2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnerDefault {
    pub log_mean: f64,
    pub log_sd: f64,
}

pub const TURNER_LOG_MEAN: f64 = -2.56;
pub const TURNER_LOG_SD: f64 = 1.74;

impl Default for TurnerDefault {
    fn default() -> Self {
        Self {
            log_mean: TURNER_LOG_MEAN,
            log_sd: TURNER_LOG_SD,
        }
    }
}

/// Upper bound on `tau^2` implied by a maximum plausible ratio.
pub fn tau_sq_bound(r_max: f64) -> Result<f64> {
    let t = ratio_to_tau(r_max)?;
    Ok(t * t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PriorVariant {
    /// `tau ~ U(lower, upper)` directly on the analysis scale.
    UniformTau { lower: f64, upper: f64 },
    /// `log tau^2 ~ N(m, v)`, `v` a variance.
    LogNormalTauSq { m: f64, v: f64 },
    /// As above restricted to `tau^2 <= upper`.
    TruncatedLogNormalTauSq { m: f64, v: f64, upper: f64 },
    /// `tau = ln(shift + G) / 3.92` with `G` from the fitted law.
    ElicitedRatio { fit: FittedRatioDistribution },
    /// `tau ~ |N(0, sd^2)|`.
    HalfNormalTau { sd: f64 },
}

/// Prior for the between-study SD together with the scale it is applied on.
///
/// Apart from `UniformTau`, every variant describes `tau` on the log-OR
/// scale and is multiplied by `omega` for the analysis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPrior")]
pub struct HeterogeneityPrior {
    #[serde(flatten)]
    pub variant: PriorVariant,
    pub scale: OutcomeScale,
    pub omega: f64,
}

#[derive(Deserialize)]
struct RawPrior {
    #[serde(flatten)]
    variant: PriorVariant,
    #[serde(default = "OutcomeScale::log_or")]
    scale: OutcomeScale,
}

impl TryFrom<RawPrior> for HeterogeneityPrior {
    type Error = Error;

    fn try_from(raw: RawPrior) -> Result<Self> {
        HeterogeneityPrior::new(raw.variant, raw.scale)
    }
}

impl HeterogeneityPrior {
    pub fn new(variant: PriorVariant, scale: OutcomeScale) -> Result<Self> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Domain(format!("{name} must be finite and > 0, got {v}")))
            }
        };
        match variant {
            PriorVariant::UniformTau { lower, upper } => {
                if !(lower >= 0.0 && upper.is_finite() && upper > lower) {
                    return Err(Error::Domain(format!(
                        "uniform tau prior needs 0 <= lower < upper, got [{lower}, {upper}]"
                    )));
                }
            }
            PriorVariant::LogNormalTauSq { m, v } => {
                if !m.is_finite() {
                    return Err(Error::Domain("m must be finite".into()));
                }
                pos("v", v)?;
            }
            PriorVariant::TruncatedLogNormalTauSq { m, v, upper } => {
                pos("v", v)?;
                pos("upper", upper)?;
                DistributionSpec::truncated_lognormal(m, v.sqrt(), upper)?;
            }
            PriorVariant::ElicitedRatio { .. } => {}
            PriorVariant::HalfNormalTau { sd } => pos("sd", sd)?,
        }
        Ok(Self {
            variant,
            scale,
            omega: scale.omega(),
        })
    }

    pub fn uniform(lower: f64, upper: f64, scale: OutcomeScale) -> Result<Self> {
        Self::new(PriorVariant::UniformTau { lower, upper }, scale)
    }

    pub fn turner(turner: TurnerDefault, scale: OutcomeScale) -> Result<Self> {
        Self::new(
            PriorVariant::LogNormalTauSq {
                m: turner.log_mean,
                v: turner.log_sd * turner.log_sd,
            },
            scale,
        )
    }

    /// Default prior truncated so that `R <= r_max`; untruncated when `r_max` is infinite.
    pub fn turner_truncated(turner: TurnerDefault, r_max: f64, scale: OutcomeScale) -> Result<Self> {
        let upper = tau_sq_bound(r_max)?;
        if upper.is_infinite() {
            return Self::turner(turner, scale);
        }
        Self::new(
            PriorVariant::TruncatedLogNormalTauSq {
                m: turner.log_mean,
                v: turner.log_sd * turner.log_sd,
                upper,
            },
            scale,
        )
    }

    pub fn elicited(fit: FittedRatioDistribution, scale: OutcomeScale) -> Result<Self> {
        Self::new(PriorVariant::ElicitedRatio { fit }, scale)
    }

    pub fn half_normal(sd: f64, scale: OutcomeScale) -> Result<Self> {
        Self::new(PriorVariant::HalfNormalTau { sd }, scale)
    }

    /// Same prior, re-expressed for another analysis scale.
    pub fn with_scale(&self, scale: OutcomeScale) -> Result<Self> {
        Self::new(self.variant, scale)
    }

    /// One draw of `tau` on the log-OR scale.
    pub fn draw_tau_or<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.variant {
            PriorVariant::UniformTau { lower, upper } => {
                let u = DistributionSpec::uniform(lower, upper).expect("validated");
                u.draw(rng) / self.omega
            }
            PriorVariant::LogNormalTauSq { m, v } => {
                let d = DistributionSpec::lognormal(m, v.sqrt()).expect("validated");
                d.draw(rng).sqrt()
            }
            PriorVariant::TruncatedLogNormalTauSq { m, v, upper } => {
                let d = DistributionSpec::truncated_lognormal(m, v.sqrt(), upper).expect("validated");
                d.draw(rng).sqrt()
            }
            PriorVariant::ElicitedRatio { fit } => fit.tau_of(fit.spec().draw(rng)),
            PriorVariant::HalfNormalTau { sd } => {
                DistributionSpec::half_normal(sd).expect("validated").draw(rng)
            }
        }
    }

    /// `P(tau_or <= t)` in closed form.
    pub fn tau_or_cdf(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self.variant {
            PriorVariant::UniformTau { lower, upper } => DistributionSpec::uniform(lower, upper)
                .expect("validated")
                .cdf(t * self.omega),
            PriorVariant::LogNormalTauSq { m, v } => DistributionSpec::lognormal(m, v.sqrt())
                .expect("validated")
                .cdf(t * t),
            PriorVariant::TruncatedLogNormalTauSq { m, v, upper } => {
                DistributionSpec::truncated_lognormal(m, v.sqrt(), upper)
                    .expect("validated")
                    .cdf(t * t)
            }
            PriorVariant::ElicitedRatio { fit } => fit.tau_cdf(t),
            PriorVariant::HalfNormalTau { sd } => {
                DistributionSpec::half_normal(sd).expect("validated").cdf(t)
            }
        }
    }

    /// Exact band masses from the CDF.
    pub fn exact_band_probabilities(&self) -> BandProbabilities {
        let f: Vec<f64> = BAND_EDGES.iter().map(|&b| self.tau_or_cdf(b)).collect();
        BandProbabilities::from_masses([f[0], f[1] - f[0], f[2] - f[1], 1.0 - f[2]])
    }
}

/// Boundaries between low, moderate, high and extreme heterogeneity.
pub const BAND_EDGES: [f64; 3] = [0.1, 0.5, 1.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandProbabilities {
    pub p_low: f64,
    pub p_moderate: f64,
    pub p_high: f64,
    pub p_extreme: f64,
}

/// Index of the band containing `tau`.
pub fn band_of(tau: f64) -> usize {
    BAND_EDGES.iter().take_while(|&&b| tau >= b).count()
}

impl BandProbabilities {
    fn from_masses(m: [f64; 4]) -> Self {
        let m = m.map(|x| x.clamp(0.0, 1.0));
        let total: f64 = m.iter().sum();
        Self {
            p_low: m[0] / total,
            p_moderate: m[1] / total,
            p_high: m[2] / total,
            p_extreme: m[3] / total,
        }
    }

    /// Empirical band frequencies of a sample of `tau` (log-OR scale).
    pub fn from_sample(taus: &[f64]) -> Result<Self> {
        if taus.is_empty() {
            return Err(Error::Domain("empty tau sample".into()));
        }
        let mut counts = [0usize; 4];
        for &t in taus {
            counts[band_of(t)] += 1;
        }
        let n = taus.len() as f64;
        Ok(Self {
            p_low: counts[0] as f64 / n,
            p_moderate: counts[1] as f64 / n,
            p_high: counts[2] as f64 / n,
            p_extreme: counts[3] as f64 / n,
        })
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.p_low, self.p_moderate, self.p_high, self.p_extreme]
    }
}

pub const MIN_FEEDBACK_DRAWS: usize = 10_000;

fn require_draws(n: usize) -> Result<()> {
    if n < MIN_FEEDBACK_DRAWS {
        return Err(Error::Domain(format!(
            "feedback needs at least {MIN_FEEDBACK_DRAWS} draws, got {n}"
        )));
    }
    Ok(())
}

pub fn sample_tau_or(prior: &HeterogeneityPrior, n: usize, stream: RngStream) -> Vec<f64> {
    let mut rng = stream.rng();
    (0..n).map(|_| prior.draw_tau_or(&mut rng)).collect()
}

/// Monte Carlo band probabilities of the prior (log-OR scale `tau`).
pub fn prior_band_probabilities(
    prior: &HeterogeneityPrior,
    n: usize,
    stream: RngStream,
) -> Result<BandProbabilities> {
    require_draws(n)?;
    BandProbabilities::from_sample(&sample_tau_or(prior, n, stream))
}

pub const DENSITY_BIN_WIDTH: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    pub lower: f64,
    pub upper: f64,
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityFeedback {
    pub sample: Vec<f64>,
    pub bin_width: f64,
    pub bins: Vec<DensityBin>,
}

impl DensityFeedback {
    /// Gaussian KDE with Silverman's bandwidth, evaluated at `points`.
    pub fn kde(&self, points: &[f64]) -> Vec<f64> {
        let n = self.sample.len() as f64;
        let mean = self.sample.iter().sum::<f64>() / n;
        let sd = (self.sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        let mut sorted = self.sample.clone();
        sorted.sort_by(f64::total_cmp);
        let iqr = crate::engine::summary::quantile_sorted(&sorted, 0.75)
            - crate::engine::summary::quantile_sorted(&sorted, 0.25);
        let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
        let h = 0.9 * spread * n.powf(-0.2);
        let norm = 1.0 / (n * h * (2.0 * std::f64::consts::PI).sqrt());
        points
            .iter()
            .map(|&x| {
                norm * self
                    .sample
                    .iter()
                    .map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp())
                    .sum::<f64>()
            })
            .collect()
    }

    /// Evenly thinned copy of the sample with at most `cap` points.
    pub fn capped_sample(&self, cap: usize) -> Vec<f64> {
        if self.sample.len() <= cap {
            return self.sample.clone();
        }
        let step = self.sample.len() as f64 / cap as f64;
        (0..cap).map(|i| self.sample[(i as f64 * step) as usize]).collect()
    }
}

/// Raw `tau` sample and a fixed-width histogram for display.
pub fn feedback_density(
    prior: &HeterogeneityPrior,
    n: usize,
    stream: RngStream,
) -> Result<DensityFeedback> {
    require_draws(n)?;
    let sample = sample_tau_or(prior, n, stream);
    let max = sample.iter().copied().fold(0.0, f64::max);
    let nbins = ((max / DENSITY_BIN_WIDTH).ceil() as usize).max(1);
    let mut counts = vec![0usize; nbins];
    for &t in &sample {
        let idx = ((t / DENSITY_BIN_WIDTH) as usize).min(nbins - 1);
        counts[idx] += 1;
    }
    let scale = 1.0 / (n as f64 * DENSITY_BIN_WIDTH);
    let bins = counts
        .iter()
        .enumerate()
        .map(|(j, &c)| DensityBin {
            lower: j as f64 * DENSITY_BIN_WIDTH,
            upper: (j + 1) as f64 * DENSITY_BIN_WIDTH,
            density: c as f64 * scale,
        })
        .collect();
    Ok(DensityFeedback {
        sample,
        bin_width: DENSITY_BIN_WIDTH,
        bins,
    })
}

/// Median of `tau` for an elicited-ratio prior via the monotone transform.
pub fn elicited_tau_quantile(fit: &FittedRatioDistribution, p: f64) -> Result<f64> {
    Ok((fit.shift + fit.spec().quantile(p)?).ln() / RANGE_WIDTH)
}
