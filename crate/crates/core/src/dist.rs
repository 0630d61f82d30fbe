//! Univariate distribution primitives shared by the elicitation and synthesis code.
//!
//! Every family exposes density, CDF, quantile and sampling. Parameters are
//! validated once at construction, after which all evaluations are total.

use std::f64::consts::{PI, SQRT_2};

use rand::distr::{Distribution, Open01};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc, erfc_inv};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Reproducible random stream token.
///
/// A `(seed, stream)` pair always produces the same sequence; different
/// streams under one seed are independent ChaCha streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Stream with the same seed and a different id.
    pub fn fork(&self, stream: u64) -> Self {
        Self {
            seed: self.seed,
            stream,
        }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

/// Family and parameters of a univariate distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
pub enum Family {
    Normal { mean: f64, sd: f64 },
    /// `log X ~ N(log_mean, log_sd^2)`.
    LogNormal { log_mean: f64, log_sd: f64 },
    Gamma { shape: f64, rate: f64 },
    Uniform { lower: f64, upper: f64 },
    HalfNormal { sd: f64 },
    /// LogNormal restricted to `(0, upper]` and renormalized.
    TruncatedLogNormal { log_mean: f64, log_sd: f64, upper: f64 },
}

/// A validated distribution. Serializes as `{"family": ..., "params": {...}}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Family", into = "Family")]
pub struct DistributionSpec {
    family: Family,
    /// Cached untruncated CDF at the upper bound for the truncated family.
    #[serde(skip)]
    mass: f64,
}

impl TryFrom<Family> for DistributionSpec {
    type Error = Error;

    fn try_from(family: Family) -> Result<Self> {
        Self::new(family)
    }
}

impl From<DistributionSpec> for Family {
    fn from(spec: DistributionSpec) -> Self {
        spec.family
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite and > 0, got {v}")))
    }
}

fn finite(name: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} must be finite, got {v}")))
    }
}

pub(crate) fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / SQRT_2)
}

pub(crate) fn std_normal_quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

impl DistributionSpec {
    pub fn new(family: Family) -> Result<Self> {
        let mut mass = 1.0;
        match family {
            Family::Normal { mean, sd } => {
                finite("mean", mean)?;
                positive("sd", sd)?;
            }
            Family::LogNormal { log_mean, log_sd } => {
                finite("log_mean", log_mean)?;
                positive("log_sd", log_sd)?;
            }
            Family::Gamma { shape, rate } => {
                positive("shape", shape)?;
                positive("rate", rate)?;
            }
            Family::Uniform { lower, upper } => {
                finite("lower", lower)?;
                finite("upper", upper)?;
                if lower >= upper {
                    return Err(Error::Domain(format!(
                        "uniform requires lower < upper, got [{lower}, {upper}]"
                    )));
                }
            }
            Family::HalfNormal { sd } => positive("sd", sd)?,
            Family::TruncatedLogNormal {
                log_mean,
                log_sd,
                upper,
            } => {
                finite("log_mean", log_mean)?;
                positive("log_sd", log_sd)?;
                positive("upper", upper)?;
                mass = std_normal_cdf((upper.ln() - log_mean) / log_sd);
                if mass <= f64::MIN_POSITIVE {
                    return Err(Error::Domain(format!(
                        "truncated lognormal has no mass below {upper}"
                    )));
                }
            }
        }
        Ok(Self { family, mass })
    }

    pub fn normal(mean: f64, sd: f64) -> Result<Self> {
        Self::new(Family::Normal { mean, sd })
    }

    pub fn lognormal(log_mean: f64, log_sd: f64) -> Result<Self> {
        Self::new(Family::LogNormal { log_mean, log_sd })
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::new(Family::Gamma { shape, rate })
    }

    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        Self::new(Family::Uniform { lower, upper })
    }

    pub fn half_normal(sd: f64) -> Result<Self> {
        Self::new(Family::HalfNormal { sd })
    }

    pub fn truncated_lognormal(log_mean: f64, log_sd: f64, upper: f64) -> Result<Self> {
        Self::new(Family::TruncatedLogNormal {
            log_mean,
            log_sd,
            upper,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    /// Lower and upper ends of the support.
    pub fn support(&self) -> (f64, f64) {
        match self.family {
            Family::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            Family::LogNormal { .. } | Family::Gamma { .. } | Family::HalfNormal { .. } => {
                (0.0, f64::INFINITY)
            }
            Family::Uniform { lower, upper } => (lower, upper),
            Family::TruncatedLogNormal { upper, .. } => (0.0, upper),
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x.is_nan() {
            return f64::NAN;
        }
        match self.family {
            Family::Normal { mean, sd } => std_normal_cdf((x - mean) / sd),
            Family::LogNormal { log_mean, log_sd } => {
                if x <= 0.0 {
                    0.0
                } else {
                    std_normal_cdf((x.ln() - log_mean) / log_sd)
                }
            }
            Family::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else if x.is_infinite() {
                    1.0
                } else {
                    gamma_lr(shape, rate * x)
                }
            }
            Family::Uniform { lower, upper } => ((x - lower) / (upper - lower)).clamp(0.0, 1.0),
            Family::HalfNormal { sd } => {
                if x <= 0.0 {
                    0.0
                } else {
                    erf(x / (sd * SQRT_2))
                }
            }
            Family::TruncatedLogNormal {
                log_mean,
                log_sd,
                upper,
            } => {
                if x <= 0.0 {
                    0.0
                } else if x >= upper {
                    1.0
                } else {
                    (std_normal_cdf((x.ln() - log_mean) / log_sd) / self.mass).min(1.0)
                }
            }
        }
    }

    /// Log density; `-inf` outside the support.
    pub fn ln_pdf(&self, x: f64) -> f64 {
        const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
        match self.family {
            Family::Normal { mean, sd } => {
                let z = (x - mean) / sd;
                -0.5 * z * z - sd.ln() - LN_SQRT_2PI
            }
            Family::LogNormal { log_mean, log_sd } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - log_mean) / log_sd;
                -0.5 * z * z - log_sd.ln() - LN_SQRT_2PI - x.ln()
            }
            Family::Gamma { shape, rate } => {
                if x <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                shape * rate.ln() - ln_gamma(shape) + (shape - 1.0) * x.ln() - rate * x
            }
            Family::Uniform { lower, upper } => {
                if x < lower || x > upper {
                    f64::NEG_INFINITY
                } else {
                    -(upper - lower).ln()
                }
            }
            Family::HalfNormal { sd } => {
                if x < 0.0 {
                    return f64::NEG_INFINITY;
                }
                let z = x / sd;
                -0.5 * z * z - sd.ln() + (2.0 / PI).sqrt().ln()
            }
            Family::TruncatedLogNormal {
                log_mean,
                log_sd,
                upper,
            } => {
                if x <= 0.0 || x > upper {
                    return f64::NEG_INFINITY;
                }
                let z = (x.ln() - log_mean) / log_sd;
                -0.5 * z * z - log_sd.ln() - LN_SQRT_2PI - x.ln() - self.mass.ln()
            }
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.ln_pdf(x).exp()
    }

    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Domain(format!("quantile requires 0 < p < 1, got {p}")));
        }
        Ok(match self.family {
            Family::Normal { mean, sd } => mean + sd * std_normal_quantile(p),
            Family::LogNormal { log_mean, log_sd } => {
                (log_mean + log_sd * std_normal_quantile(p)).exp()
            }
            Family::Gamma { .. } => self.bracketed_quantile(p),
            Family::Uniform { lower, upper } => lower + p * (upper - lower),
            Family::HalfNormal { sd } => sd * std_normal_quantile(0.5 * (1.0 + p)),
            Family::TruncatedLogNormal {
                log_mean,
                log_sd,
                upper,
            } => (log_mean + log_sd * std_normal_quantile(p * self.mass))
                .exp()
                .min(upper),
        })
    }

    /// Bisection on the CDF over a doubling bracket.
    fn bracketed_quantile(&self, p: f64) -> f64 {
        let mut lo = 0.0;
        let mut hi = 1.0;
        while self.cdf(hi) < p {
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return f64::INFINITY;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// One draw from `rng`.
    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.family {
            Family::Normal { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Family::LogNormal { log_mean, log_sd } => {
                let z: f64 = StandardNormal.sample(rng);
                (log_mean + log_sd * z).exp()
            }
            Family::Gamma { shape, rate } => rand_distr::Gamma::new(shape, 1.0 / rate)
                .expect("validated gamma parameters")
                .sample(rng),
            Family::Uniform { lower, upper } => {
                let u: f64 = Open01.sample(rng);
                lower + u * (upper - lower)
            }
            Family::HalfNormal { sd } => {
                let z: f64 = StandardNormal.sample(rng);
                sd * z.abs()
            }
            Family::TruncatedLogNormal { .. } => {
                let u: f64 = Open01.sample(rng);
                self.quantile(u).expect("u in (0,1)")
            }
        }
    }

    /// `n` draws from a fresh generator for `stream`.
    pub fn sample(&self, stream: RngStream, n: usize) -> Vec<f64> {
        let mut rng = stream.rng();
        (0..n).map(|_| self.draw(&mut rng)).collect()
    }

    pub fn mean(&self) -> f64 {
        match self.family {
            Family::Normal { mean, .. } => mean,
            Family::LogNormal { log_mean, log_sd } => (log_mean + 0.5 * log_sd * log_sd).exp(),
            Family::Gamma { shape, rate } => shape / rate,
            Family::Uniform { lower, upper } => 0.5 * (lower + upper),
            Family::HalfNormal { sd } => sd * (2.0 / PI).sqrt(),
            Family::TruncatedLogNormal {
                log_mean,
                log_sd,
                upper,
            } => {
                let shifted = std_normal_cdf((upper.ln() - log_mean - log_sd * log_sd) / log_sd);
                (log_mean + 0.5 * log_sd * log_sd).exp() * shifted / self.mass
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    fn all_families() -> Vec<DistributionSpec> {
        vec![
            DistributionSpec::normal(0.3, 1.7).unwrap(),
            DistributionSpec::lognormal(-2.56, 1.74).unwrap(),
            DistributionSpec::gamma(2.62, 0.721).unwrap(),
            DistributionSpec::gamma(0.4, 3.0).unwrap(),
            DistributionSpec::uniform(0.0, 5.0).unwrap(),
            DistributionSpec::half_normal(0.32).unwrap(),
            DistributionSpec::truncated_lognormal(-2.56, 1.74, 0.345).unwrap(),
        ]
    }

    #[test]
    fn cdf_reference_values() {
        assert_close!(DistributionSpec::normal(0.0, 1.0).unwrap().cdf(0.0), 0.5, 1e-15);
        assert_close!(
            DistributionSpec::gamma(1.0, 1.0).unwrap().cdf(1.0),
            1.0 - (-1.0f64).exp(),
            1e-12
        );
        let t = DistributionSpec::truncated_lognormal(-2.56, 1.74, 0.345).unwrap();
        assert_eq!(t.cdf(0.345), 1.0);
        assert_eq!(t.cdf(10.0), 1.0);
    }

    #[test]
    fn quantile_reference_values() {
        let z = DistributionSpec::normal(0.0, 1.0).unwrap();
        assert_close!(z.quantile(0.975).unwrap(), 1.959964, 1e-6);
        let u = DistributionSpec::uniform(0.0, 5.0).unwrap();
        assert_close!(u.quantile(0.5).unwrap(), 2.5, 1e-15);
    }

    #[test]
    fn gamma_median_matches_independent_bisection() {
        let g = DistributionSpec::gamma(2.62, 0.721).unwrap();
        // Independent oracle: plain bisection on the CDF over a fixed bracket.
        let (mut lo, mut hi) = (0.0f64, 100.0f64);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if gamma_lr(2.62, 0.721 * mid) < 0.5 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let q = g.quantile(0.5).unwrap();
        assert_close!(q, 0.5 * (lo + hi), 1e-9);
        assert_close!(g.cdf(q), 0.5, 1e-6);
    }

    #[test]
    fn quantile_rejects_out_of_range() {
        let z = DistributionSpec::normal(0.0, 1.0).unwrap();
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(z.quantile(p), Err(Error::Domain(_))));
        }
    }

    #[test]
    fn construction_rejects_bad_parameters() {
        assert!(DistributionSpec::normal(0.0, 0.0).is_err());
        assert!(DistributionSpec::gamma(-1.0, 1.0).is_err());
        assert!(DistributionSpec::uniform(2.0, 1.0).is_err());
        assert!(DistributionSpec::half_normal(f64::NAN).is_err());
        assert!(DistributionSpec::truncated_lognormal(0.0, 1.0, 0.0).is_err());
        assert!(DistributionSpec::truncated_lognormal(50.0, 0.1, 1e-300).is_err());
    }

    #[test]
    fn truncated_cdf_is_ratio_of_untruncated() {
        let base = DistributionSpec::lognormal(-2.56, 1.74).unwrap();
        let t = DistributionSpec::truncated_lognormal(-2.56, 1.74, 0.345).unwrap();
        for x in [1e-4, 0.01, 0.05, 0.1, 0.2, 0.3, 0.3449] {
            assert_close!(t.cdf(x), base.cdf(x) / base.cdf(0.345), 1e-12);
        }
    }

    #[test]
    fn uniform_sample_mean() {
        let u = DistributionSpec::uniform(0.0, 5.0).unwrap();
        let xs = u.sample(RngStream::new(7, 0), 100_000);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert_close!(mean, 2.5, 0.02);
    }

    #[test]
    fn half_normal_95_percent_below_1_96_sd() {
        let h = DistributionSpec::half_normal(0.32).unwrap();
        let xs = h.sample(RngStream::new(11, 0), 100_000);
        let frac = xs.iter().filter(|&&x| x < 1.96 * 0.32).count() as f64 / xs.len() as f64;
        assert_close!(frac, 0.95, 0.005);
    }

    #[test]
    fn truncated_draws_respect_bound() {
        let t = DistributionSpec::truncated_lognormal(-2.56, 1.74, 0.345).unwrap();
        let xs = t.sample(RngStream::new(3, 1), 100_000);
        assert!(xs.iter().all(|&x| x > 0.0 && x <= 0.345));
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let g = DistributionSpec::gamma(2.0, 1.0).unwrap();
        let a = g.sample(RngStream::new(1, 0), 50);
        let b = g.sample(RngStream::new(1, 0), 50);
        let c = g.sample(RngStream::new(1, 1), 50);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn samples_match_cdf_kolmogorov_smirnov() {
        for (i, d) in all_families().into_iter().enumerate() {
            let mut xs = d.sample(RngStream::new(99, i as u64), 20_000);
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let n = xs.len() as f64;
            let ks = xs
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    let f = d.cdf(x);
                    (f - j as f64 / n).abs().max(((j + 1) as f64 / n - f).abs())
                })
                .fold(0.0, f64::max);
            // 1.63/sqrt(n) is the 1% critical value
            assert!(ks < 1.63 / n.sqrt(), "{:?}: KS {ks}", d.family());
        }
    }

    #[test]
    fn pdf_integrates_to_cdf() {
        // trapezoid on a fine grid between two interior quantiles
        for d in all_families() {
            let a = d.quantile(0.1).unwrap();
            let b = d.quantile(0.8).unwrap();
            let n = 20_000;
            let h = (b - a) / n as f64;
            let mut s = 0.5 * (d.pdf(a) + d.pdf(b));
            for k in 1..n {
                s += d.pdf(a + k as f64 * h);
            }
            assert_close!(s * h, d.cdf(b) - d.cdf(a), 1e-5);
        }
    }

    #[test]
    fn json_shape() {
        let g = DistributionSpec::gamma(2.62, 0.721).unwrap();
        let v = serde_json::to_value(g).unwrap();
        assert_eq!(
            v,
            serde_json::json!({"family": "gamma", "params": {"shape": 2.62, "rate": 0.721}})
        );
        let back: DistributionSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, g);
        let bad = serde_json::json!({"family": "gamma", "params": {"shape": -1.0, "rate": 1.0}});
        assert!(serde_json::from_value::<DistributionSpec>(bad).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quantile_inverts_cdf(idx in 0usize..7, p in 0.001f64..0.999) {
                let d = all_families()[idx];
                let q = d.quantile(p).unwrap();
                let tol = if matches!(d.family(), Family::Gamma { .. }) { 1e-6 } else { 1e-9 };
                prop_assert!((d.cdf(q) - p).abs() <= tol);
            }

            #[test]
            fn cdf_monotone(idx in 0usize..7, a in -5.0f64..20.0, b in -5.0f64..20.0) {
                let d = all_families()[idx];
                let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
                prop_assert!(d.cdf(lo) <= d.cdf(hi));
                prop_assert!((0.0..=1.0).contains(&d.cdf(lo)));
            }
        }
    }
}
