//! Outcome scales and the mapping between the ratio `R` and `tau`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `2 * 1.96`: width of the central 95% interval in units of `tau`.
pub const RANGE_WIDTH: f64 = 3.92;

/// Logistic approximation to the normal: `sqrt(3) / pi`.
pub fn logistic_factor() -> f64 {
    3f64.sqrt() / PI
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    LogOr,
    LogHr,
    LogRr,
    LogRom,
    MeanDifference,
    StdMeanDifference,
    Probit,
}

impl ScaleKind {
    pub fn is_ratio(self) -> bool {
        matches!(
            self,
            ScaleKind::LogOr | ScaleKind::LogHr | ScaleKind::LogRr | ScaleKind::LogRom
        )
    }

    /// Continuous and probit outcomes are dichotomized and elicited as odds ratios.
    pub fn is_dichotomized(self) -> bool {
        matches!(
            self,
            ScaleKind::MeanDifference | ScaleKind::StdMeanDifference | ScaleKind::Probit
        )
    }

    /// Whether the empirical log-OR default prior applies.
    pub fn allows_default_prior(self) -> bool {
        self == ScaleKind::LogOr || self.is_dichotomized()
    }
}

impl FromStr for ScaleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "log_or" | "or" | "logor" => ScaleKind::LogOr,
            "log_hr" | "hr" | "loghr" => ScaleKind::LogHr,
            "log_rr" | "rr" | "logrr" => ScaleKind::LogRr,
            "log_rom" | "rom" | "logrom" => ScaleKind::LogRom,
            "mean_difference" | "md" => ScaleKind::MeanDifference,
            "std_mean_difference" | "smd" => ScaleKind::StdMeanDifference,
            "probit" => ScaleKind::Probit,
            other => return Err(Error::Config(format!("unknown outcome scale '{other}'"))),
        })
    }
}

impl fmt::Display for ScaleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ScaleKind::LogOr => "log_or",
            ScaleKind::LogHr => "log_hr",
            ScaleKind::LogRr => "log_rr",
            ScaleKind::LogRom => "log_rom",
            ScaleKind::MeanDifference => "mean_difference",
            ScaleKind::StdMeanDifference => "std_mean_difference",
            ScaleKind::Probit => "probit",
        };
        f.write_str(s)
    }
}

/// Scale on which treatment effects are analysed.
///
/// `sigma` is the individual-level SD and is present exactly for mean differences.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScale")]
pub struct OutcomeScale {
    pub kind: ScaleKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
}

#[derive(Deserialize)]
struct RawScale {
    kind: ScaleKind,
    #[serde(default)]
    sigma: Option<f64>,
}

impl TryFrom<RawScale> for OutcomeScale {
    type Error = Error;

    fn try_from(raw: RawScale) -> Result<Self> {
        OutcomeScale::new(raw.kind, raw.sigma)
    }
}

impl OutcomeScale {
    pub fn new(kind: ScaleKind, sigma: Option<f64>) -> Result<Self> {
        match (kind, sigma) {
            (ScaleKind::MeanDifference, Some(s)) if s.is_finite() && s > 0.0 => {}
            (ScaleKind::MeanDifference, Some(s)) => {
                return Err(Error::Config(format!("sigma must be positive, got {s}")))
            }
            (ScaleKind::MeanDifference, None) => {
                return Err(Error::Config(
                    "mean-difference scale requires the individual-level SD sigma".into(),
                ))
            }
            (_, Some(_)) => {
                return Err(Error::Config(format!("sigma is only meaningful for mean differences, not {kind}")))
            }
            (_, None) => {}
        }
        Ok(Self { kind, sigma })
    }

    pub fn log_or() -> Self {
        Self {
            kind: ScaleKind::LogOr,
            sigma: None,
        }
    }

    pub fn mean_difference(sigma: f64) -> Result<Self> {
        Self::new(ScaleKind::MeanDifference, Some(sigma))
    }

    /// Multiplier taking `tau` on the log-OR scale to this scale.
    pub fn omega(&self) -> f64 {
        match self.kind {
            k if k.is_ratio() => 1.0,
            ScaleKind::MeanDifference => self.sigma.unwrap_or(1.0) * logistic_factor(),
            _ => logistic_factor(),
        }
    }
}

/// `tau = ln(R) / 3.92`.
pub fn ratio_to_tau(r: f64) -> Result<f64> {
    if r.is_nan() || r < 1.0 {
        return Err(Error::Domain(format!("R must be >= 1, got {r}")));
    }
    Ok(r.ln() / RANGE_WIDTH)
}

/// Inverse of [`ratio_to_tau`].
pub fn tau_to_ratio(tau: f64) -> f64 {
    (RANGE_WIDTH * tau).exp()
}

/// Converts a log-OR scale `tau` to the given scale (`omega * tau`).
pub fn convert_scale(tau_or: f64, scale: &OutcomeScale) -> Result<f64> {
    if tau_or.is_nan() || tau_or < 0.0 {
        return Err(Error::Domain(format!("tau must be >= 0, got {tau_or}")));
    }
    if scale.kind == ScaleKind::MeanDifference && scale.sigma.is_none() {
        return Err(Error::Config("mean-difference conversion requires sigma".into()));
    }
    Ok(scale.omega() * tau_or)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretationRow {
    pub heterogeneity: String,
    pub r: f64,
    pub tau: f64,
    pub tau_scaled: f64,
}

const TABLE_TAUS: [f64; 14] = [
    0.0, 0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 1.5, 2.0,
];

fn table_label(tau: f64) -> &'static str {
    match tau {
        t if t == 0.0 => "none",
        t if t < 0.1 => "low",
        t if t <= 0.5 => "moderate",
        t if t <= 1.0 => "high",
        _ => "extreme",
    }
}

/// Reference rows relating `R`, `tau` and the scaled `tau`.
pub fn interpretation_table(scale: &OutcomeScale) -> Vec<InterpretationRow> {
    let omega = scale.omega();
    TABLE_TAUS
        .iter()
        .map(|&tau| InterpretationRow {
            heterogeneity: table_label(tau).to_string(),
            r: tau_to_ratio(tau),
            tau,
            tau_scaled: omega * tau,
        })
        .collect()
}

pub fn interpretation_csv(rows: &[InterpretationRow]) -> String {
    let mut out = String::from("heterogeneity,r,tau,tau_scaled\n");
    for row in rows {
        out.push_str(&format!(
            "{},{:.2},{},{:.4}\n",
            row.heterogeneity, row.r, row.tau, row.tau_scaled
        ));
    }
    out
}

/// How a continuous or categorical response was split into two groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dichotomization {
    /// Responses at or above `value` count as events.
    Cutoff {
        value: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        units: Option<String>,
    },
    /// Categories `1..k-1` against `k..of`.
    Category { k: u32, of: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DichotomizationRecord {
    pub scale: ScaleKind,
    pub dichotomization: Dichotomization,
    /// Human-readable wording of the event definition.
    pub description: String,
}

/// Records the framing under which odds-ratio judgements are elicited.
pub fn dichotomize_guidance(
    scale: &OutcomeScale,
    how: Dichotomization,
) -> Result<DichotomizationRecord> {
    if !scale.kind.is_dichotomized() {
        return Err(Error::State(format!(
            "{} is already a ratio scale; no dichotomization needed",
            scale.kind
        )));
    }
    let description = match &how {
        Dichotomization::Cutoff { value, units } => {
            if !value.is_finite() {
                return Err(Error::Domain("cutoff must be finite".into()));
            }
            match units {
                Some(u) => format!("event: response >= {value} {u}"),
                None => format!("event: response >= {value}"),
            }
        }
        Dichotomization::Category { k, of } => {
            if *k < 2 || k > of {
                return Err(Error::Domain(format!(
                    "split category must satisfy 2 <= k <= K, got k={k}, K={of}"
                )));
            }
            let below = if *k == 2 {
                "c1".to_string()
            } else {
                format!("c1..c{}", k - 1)
            };
            let above = if k == of {
                format!("c{k}")
            } else {
                format!("c{k}..c{of}")
            };
            format!("{{{below}}} | {{{above}}}")
        }
    };
    Ok(DichotomizationRecord {
        scale: scale.kind,
        dichotomization: how,
        description,
    })
}
