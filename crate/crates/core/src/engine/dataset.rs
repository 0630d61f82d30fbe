//! Arm-level trial data.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Likelihood {
    BinomialLogit,
    NormalIdentity,
}

/// One treatment arm. Treatment ids are 1-based; 1 is the network reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Arm {
    Binomial { treatment: usize, r: u64, n: u64 },
    Normal { treatment: usize, y: f64, se: f64 },
}

impl Arm {
    pub fn treatment(&self) -> usize {
        match *self {
            Arm::Binomial { treatment, .. } | Arm::Normal { treatment, .. } => treatment,
        }
    }
}

/// A trial; the first arm is its control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Study {
    pub arms: Vec<Arm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDataset")]
pub struct TrialDataset {
    pub n_treatments: usize,
    pub likelihood: Likelihood,
    pub studies: Vec<Study>,
    /// Individual-level SD for mean-difference prior conversion.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_individual: Option<f64>,
    /// Display names indexed by treatment id - 1.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub treatment_names: Vec<String>,
}

#[derive(Deserialize)]
struct RawDataset {
    n_treatments: usize,
    likelihood: Likelihood,
    studies: Vec<Study>,
    #[serde(default)]
    sigma_individual: Option<f64>,
    #[serde(default)]
    treatment_names: Vec<String>,
}

impl TryFrom<RawDataset> for TrialDataset {
    type Error = Error;

    fn try_from(raw: RawDataset) -> Result<Self> {
        let ds = TrialDataset {
            n_treatments: raw.n_treatments,
            likelihood: raw.likelihood,
            studies: raw.studies,
            sigma_individual: raw.sigma_individual,
            treatment_names: raw.treatment_names,
        };
        ds.validate()?;
        Ok(ds)
    }
}

impl TrialDataset {
    pub fn validate(&self) -> Result<()> {
        if self.n_treatments < 2 {
            return Err(Error::Domain("a network needs at least 2 treatments".into()));
        }
        if self.studies.is_empty() {
            return Err(Error::Domain("dataset has no studies".into()));
        }
        if let Some(s) = self.sigma_individual {
            if !(s.is_finite() && s > 0.0) {
                return Err(Error::Domain(format!("sigma_individual must be > 0, got {s}")));
            }
        }
        if !self.treatment_names.is_empty() && self.treatment_names.len() != self.n_treatments {
            return Err(Error::Domain(format!(
                "{} treatment names for {} treatments",
                self.treatment_names.len(),
                self.n_treatments
            )));
        }
        for (i, study) in self.studies.iter().enumerate() {
            let label = i + 1;
            if study.arms.len() < 2 {
                return Err(Error::Domain(format!("study {label} has fewer than 2 arms")));
            }
            let mut seen = vec![false; self.n_treatments + 1];
            for arm in &study.arms {
                let t = arm.treatment();
                if t == 0 || t > self.n_treatments {
                    return Err(Error::Domain(format!(
                        "study {label}: unknown treatment id {t} (expected 1..={})",
                        self.n_treatments
                    )));
                }
                if seen[t] {
                    return Err(Error::Domain(format!("study {label}: treatment {t} appears twice")));
                }
                seen[t] = true;
                match (*arm, self.likelihood) {
                    (Arm::Binomial { r, n, .. }, Likelihood::BinomialLogit) => {
                        if n == 0 || r > n {
                            return Err(Error::Domain(format!(
                                "study {label}: need 0 <= r <= n and n > 0, got r={r}, n={n}"
                            )));
                        }
                    }
                    (Arm::Normal { y, se, .. }, Likelihood::NormalIdentity) => {
                        if !y.is_finite() || !(se.is_finite() && se > 0.0) {
                            return Err(Error::Domain(format!(
                                "study {label}: need finite y and se > 0, got y={y}, se={se}"
                            )));
                        }
                    }
                    _ => {
                        return Err(Error::Domain(format!(
                            "study {label}: arm data does not match {:?} likelihood",
                            self.likelihood
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n_studies(&self) -> usize {
        self.studies.len()
    }

    pub fn n_arms(&self) -> usize {
        self.studies.iter().map(|s| s.arms.len()).sum()
    }

    pub fn treatment_name(&self, id: usize) -> String {
        self.treatment_names
            .get(id.wrapping_sub(1))
            .cloned()
            .unwrap_or_else(|| format!("treatment {id}"))
    }

    pub fn max_arms(&self) -> usize {
        self.studies.iter().map(|s| s.arms.len()).max().unwrap_or(0)
    }

    /// `-2 log L` of the saturated model with all normalising constants.
    ///
    /// Adding this to the residual deviance gives the full deviance.
    pub fn saturated_offset(&self) -> f64 {
        use statrs::function::factorial::ln_binomial;
        self.studies
            .iter()
            .flat_map(|s| s.arms.iter())
            .map(|arm| match *arm {
                Arm::Binomial { r, n, .. } => {
                    let (rf, nf) = (r as f64, n as f64);
                    let xlogy = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * y.ln() };
                    -2.0 * (ln_binomial(n, r) + xlogy(rf, rf / nf) + xlogy(nf - rf, (nf - rf) / nf))
                }
                Arm::Normal { se, .. } => (2.0 * std::f64::consts::PI * se * se).ln(),
            })
            .sum()
    }
}
