//! Least-squares fitting of a gamma or lognormal distribution to `R - shift`.

use serde::{Deserialize, Serialize};

use super::chips::ChipAllocation;
use super::scale::RANGE_WIDTH;
use crate::dist::DistributionSpec;
use crate::error::{Error, Result};
use crate::optim::NelderMead;

/// Parametric family for `G = R - shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum RatioFamily {
    GammaOnRminus1 { shape: f64, rate: f64 },
    /// `log G ~ N(m, v)` with `v` a variance.
    LogNormalOnRminus1 { m: f64, v: f64 },
}

impl RatioFamily {
    pub fn distribution(&self) -> Result<DistributionSpec> {
        match *self {
            RatioFamily::GammaOnRminus1 { shape, rate } => DistributionSpec::gamma(shape, rate),
            RatioFamily::LogNormalOnRminus1 { m, v } => {
                if !(v > 0.0) {
                    return Err(Error::Domain(format!("variance must be > 0, got {v}")));
                }
                DistributionSpec::lognormal(m, v.sqrt())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub sse: f64,
    pub alternative: RatioFamily,
    pub alternative_sse: f64,
}

/// Distribution of `R`, expressed as a fitted law for `R - shift`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFitted")]
pub struct FittedRatioDistribution {
    pub dist: RatioFamily,
    pub shift: f64,
    /// Present when produced by [`fit_ratio`]; absent for priors entered directly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fit: Option<FitDiagnostics>,
    #[serde(skip)]
    spec: Option<DistributionSpec>,
}

#[derive(Deserialize)]
struct RawFitted {
    dist: RatioFamily,
    #[serde(default = "default_shift")]
    shift: f64,
    #[serde(default)]
    fit: Option<FitDiagnostics>,
}

fn default_shift() -> f64 {
    1.0
}

impl TryFrom<RawFitted> for FittedRatioDistribution {
    type Error = Error;

    fn try_from(raw: RawFitted) -> Result<Self> {
        let mut f = FittedRatioDistribution::new(raw.dist, raw.shift)?;
        f.fit = raw.fit;
        Ok(f)
    }
}

impl FittedRatioDistribution {
    pub fn new(dist: RatioFamily, shift: f64) -> Result<Self> {
        if !(shift.is_finite() && shift >= 1.0) {
            return Err(Error::Domain(format!("shift must be >= 1, got {shift}")));
        }
        let spec = dist.distribution()?;
        Ok(Self {
            dist,
            shift,
            fit: None,
            spec: Some(spec),
        })
    }

    /// `R - 1 ~ Gamma(shape, rate)`.
    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        Self::new(RatioFamily::GammaOnRminus1 { shape, rate }, 1.0)
    }

    pub fn spec(&self) -> DistributionSpec {
        self.spec
            .unwrap_or_else(|| self.dist.distribution().expect("validated at construction"))
    }

    /// `tau` implied by a draw `g` of `R - shift`.
    pub fn tau_of(&self, g: f64) -> f64 {
        (self.shift + g).ln() / RANGE_WIDTH
    }

    /// `P(tau <= t)` on the log-OR scale.
    pub fn tau_cdf(&self, t: f64) -> f64 {
        if t <= 0.0 && self.shift <= 1.0 {
            return 0.0;
        }
        self.spec().cdf((RANGE_WIDTH * t).exp() - self.shift)
    }
}

/// Sum of squared differences between elicited and fitted cumulative probabilities.
pub fn fit_objective(points: &[(f64, f64)], dist: &DistributionSpec) -> f64 {
    points
        .iter()
        .map(|&(x, p)| {
            let e = dist.cdf(x) - p;
            e * e
        })
        .sum()
}

/// Evaluation points `(upper edge - shift, cumulative probability)`.
pub fn fit_points(chips: &ChipAllocation) -> Vec<(f64, f64)> {
    chips
        .cumulative()
        .into_iter()
        .map(|(edge, p)| (edge - chips.lower, p))
        .collect()
}

pub(crate) fn gamma_sse(points: &[(f64, f64)], shape: f64, rate: f64) -> f64 {
    match DistributionSpec::gamma(shape, rate) {
        Ok(d) => fit_objective(points, &d),
        Err(_) => f64::INFINITY,
    }
}

pub(crate) fn lognormal_sse(points: &[(f64, f64)], m: f64, sd: f64) -> f64 {
    match DistributionSpec::lognormal(m, sd) {
        Ok(d) => fit_objective(points, &d),
        Err(_) => f64::INFINITY,
    }
}

/// Chip-weighted moments of the bin midpoints (shifted), and of their logs.
fn midpoint_moments(chips: &ChipAllocation) -> ((f64, f64), (f64, f64)) {
    let edges = chips.edges();
    let total = f64::from(chips.placed());
    let mids: Vec<(f64, f64)> = chips
        .chips
        .iter()
        .enumerate()
        .map(|(j, &c)| (0.5 * (edges[j] + edges[j + 1]) - chips.lower, f64::from(c) / total))
        .collect();
    let mean = mids.iter().map(|(x, w)| x * w).sum::<f64>();
    let var = mids.iter().map(|(x, w)| w * (x - mean).powi(2)).sum::<f64>();
    let lmean = mids.iter().map(|(x, w)| x.ln() * w).sum::<f64>();
    let lvar = mids.iter().map(|(x, w)| w * (x.ln() - lmean).powi(2)).sum::<f64>();
    ((mean, var), (lmean, lvar))
}

fn minimize_2d<F>(objective: F, start: [f64; 2], grid: ([f64; 2], [f64; 2])) -> ([f64; 2], f64)
where
    F: Fn(f64, f64) -> f64,
{
    let nm = NelderMead::default();
    let f = |x: &[f64]| objective(x[0], x[1]);
    let mut best = nm.minimize(f, &start);
    // restart from the reported optimum; a collapsed simplex can stop early
    let again = nm.minimize(f, &best.x);
    if again.value <= best.value {
        best = again;
    }
    if !best.converged || !best.value.is_finite() {
        let steps = 60;
        let mut grid_best = (start, f64::INFINITY);
        for i in 0..steps {
            let a = grid.0[0] + (grid.0[1] - grid.0[0]) * i as f64 / (steps - 1) as f64;
            for j in 0..steps {
                let b = grid.1[0] + (grid.1[1] - grid.1[0]) * j as f64 / (steps - 1) as f64;
                let v = objective(a, b);
                if v < grid_best.1 {
                    grid_best = ([a, b], v);
                }
            }
        }
        let polished = nm.minimize(f, &grid_best.0);
        if polished.value < best.value {
            best = polished;
        }
    }
    ([best.x[0], best.x[1]], best.value)
}

/// Fits both a gamma and a lognormal law to `R - chips.lower` and keeps the better one.
pub fn fit_ratio(chips: &ChipAllocation) -> Result<FittedRatioDistribution> {
    if chips.is_degenerate() {
        return Err(Error::FitDegenerate(format!(
            "chips occupy {} bin(s); spread them over at least two bins or widen the range",
            chips.positive_bins()
        )));
    }
    if !chips.is_complete() {
        return Err(Error::Domain(format!(
            "{} of {} chips still to place",
            chips.remaining(),
            chips.total_chips
        )));
    }
    let points = fit_points(chips);
    let ((mean, var), (lmean, lvar)) = midpoint_moments(chips);

    let gamma_start = [(mean * mean / var).ln(), (mean / var).ln()];
    let (g, gamma_value) = minimize_2d(
        |ls, lr| gamma_sse(&points, ls.exp(), lr.exp()),
        gamma_start,
        ([-3.0, 4.0], [-5.0, 3.0]),
    );
    let gamma = RatioFamily::GammaOnRminus1 {
        shape: g[0].exp(),
        rate: g[1].exp(),
    };

    let ln_start = [lmean, 0.5 * lvar.max(1e-4).ln()];
    let (l, ln_value) = minimize_2d(
        |m, lsd| lognormal_sse(&points, m, lsd.exp()),
        ln_start,
        ([lmean - 3.0, lmean + 3.0], [-4.0, 2.0]),
    );
    let lognormal = RatioFamily::LogNormalOnRminus1 {
        m: l[0],
        v: (2.0 * l[1]).exp(),
    };

    let (dist, sse, alternative, alternative_sse) = if gamma_value <= ln_value {
        (gamma, gamma_value, lognormal, ln_value)
    } else {
        (lognormal, ln_value, gamma, gamma_value)
    };
    let mut fitted = FittedRatioDistribution::new(dist, chips.lower)?;
    fitted.fit = Some(FitDiagnostics {
        sse,
        alternative,
        alternative_sse,
    });
    Ok(fitted)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chips(counts: &[u32]) -> ChipAllocation {
        let total = counts.iter().sum();
        ChipAllocation::new(1.0, 10.0, counts.len(), counts.to_vec(), total).unwrap()
    }

    fn gamma_params(f: &FittedRatioDistribution) -> (f64, f64) {
        let candidates = [Some(f.dist), f.fit.map(|d| d.alternative)];
        for c in candidates.into_iter().flatten() {
            if let RatioFamily::GammaOnRminus1 { shape, rate } = c {
                return (shape, rate);
            }
        }
        unreachable!()
    }

    #[test]
    fn ta163_allocation_gives_gamma() {
        let f = fit_ratio(&chips(&[4, 5, 6, 6, 5, 4, 2, 1, 1])).unwrap();
        let (shape, rate) = gamma_params(&f);
        assert!(matches!(f.dist, RatioFamily::GammaOnRminus1 { .. }));
        assert!((shape - 2.62).abs() / 2.62 < 0.1, "shape {shape}");
        assert!((rate - 0.721).abs() / 0.721 < 0.1, "rate {rate}");
        let diag = f.fit.unwrap();
        assert!(diag.sse <= diag.alternative_sse);
        assert_eq!(f.shift, 1.0);
    }

    #[test]
    fn ta336_allocation_gives_gamma() {
        let f = fit_ratio(&chips(&[4, 5, 4, 3, 2, 1, 1, 0, 0])).unwrap();
        let (shape, rate) = gamma_params(&f);
        assert!((shape - 1.94).abs() / 1.94 < 0.1, "shape {shape}");
        assert!((rate - 0.741).abs() / 0.741 < 0.1, "rate {rate}");
    }

    #[test]
    fn uniform_chips_match_grid_optimum() {
        // A gamma law cannot follow a uniform CDF closely on [0, 9]; the best
        // least-squares fit (SSE 0.02415, max edge error 0.108, computed
        // independently) is what the optimizer must find.
        let c = chips(&[2; 9]);
        let points = fit_points(&c);
        let f = fit_ratio(&c).unwrap();
        let spec = f.spec();
        let worst = points
            .iter()
            .map(|&(x, p)| (spec.cdf(x) - p).abs())
            .fold(0.0, f64::max);
        assert!(worst < 0.11, "max edge error {worst}");
        let (shape, rate) = gamma_params(&f);
        assert!((gamma_sse(&points, shape, rate) - 0.024152).abs() < 1e-5);
    }

    #[test]
    fn all_chips_in_one_bin_is_degenerate() {
        let c = chips(&[0, 0, 20, 0, 0, 0, 0, 0, 0]);
        assert!(matches!(fit_ratio(&c), Err(Error::FitDegenerate(_))));
    }

    #[test]
    fn incomplete_allocation_rejected() {
        let c = ChipAllocation::new(1.0, 10.0, 9, vec![4, 5, 4, 3, 2, 1, 1, 0, 0], 25).unwrap();
        assert!(matches!(fit_ratio(&c), Err(Error::Domain(_))));
    }

    #[test]
    fn rmin_shifts_support() {
        let c = ChipAllocation::new(2.0, 11.0, 9, vec![4, 5, 4, 3, 2, 1, 1, 0, 0], 20).unwrap();
        let f = fit_ratio(&c).unwrap();
        assert_eq!(f.shift, 2.0);
        assert!(f.tau_of(0.0) > 0.0);
    }

    #[test]
    fn optimizer_beats_brute_force_grid() {
        // Independent oracle: exhaustive 200 x 200 search on the same objective.
        let c = chips(&[4, 5, 6, 6, 5, 4, 2, 1, 1]);
        let points = fit_points(&c);
        let f = fit_ratio(&c).unwrap();
        let (shape, rate) = gamma_params(&f);
        let mut grid_min = f64::INFINITY;
        for i in 0..200 {
            let s = 0.1 + (20.0 - 0.1) * i as f64 / 199.0;
            for j in 0..200 {
                let r = 0.05 + (5.0 - 0.05) * j as f64 / 199.0;
                grid_min = grid_min.min(gamma_sse(&points, s, r));
            }
        }
        assert!(gamma_sse(&points, shape, rate) <= grid_min * 1.02);
    }

    #[test]
    fn json_round_trip() {
        let f = fit_ratio(&chips(&[4, 5, 4, 3, 2, 1, 1, 0, 0])).unwrap();
        let text = serde_json::to_string(&f).unwrap();
        let back: FittedRatioDistribution = serde_json::from_str(&text).unwrap();
        assert_eq!(back.dist, f.dist);
        assert_eq!(back.fit, f.fit);
    }
}
