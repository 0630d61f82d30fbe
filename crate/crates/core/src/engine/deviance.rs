//! Residual deviance and DIC.

use serde::{Deserialize, Serialize};

use super::dataset::{Arm, TrialDataset};

fn xlogy_ratio(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * (x / y).ln()
    }
}

/// Inverse logit without overflow.
pub fn expit(eta: f64) -> f64 {
    if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    }
}

/// Residual deviance of one arm given its fitted value.
///
/// `fitted` is the event probability for binomial arms and the mean for
/// normal arms.
pub fn arm_resdev(arm: &Arm, fitted: f64) -> f64 {
    match *arm {
        Arm::Binomial { r, n, .. } => {
            let (r, n) = (r as f64, n as f64);
            let rhat = n * fitted;
            2.0 * (xlogy_ratio(r, rhat) + xlogy_ratio(n - r, n - rhat))
        }
        Arm::Normal { y, se, .. } => ((y - fitted) / se).powi(2),
    }
}

/// Residual deviance summed over arms; `fitted` is indexed `[study][arm]`.
pub fn total_resdev(data: &TrialDataset, fitted: &[Vec<f64>]) -> f64 {
    data.studies
        .iter()
        .zip(fitted)
        .flat_map(|(s, f)| s.arms.iter().zip(f))
        .map(|(arm, &v)| arm_resdev(arm, v))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    /// Posterior mean of the deviance.
    pub dbar: f64,
    /// Deviance at the posterior mean of the fitted values.
    pub dhat: f64,
    pub p_d: f64,
    pub dic: f64,
}

/// DIC from deviance draws and the plug-in deviance.
pub fn dic(deviance_draws: &[f64], plug_in: f64) -> Dic {
    let dbar = deviance_draws.iter().sum::<f64>() / deviance_draws.len() as f64;
    let p_d = dbar - plug_in;
    Dic {
        dbar,
        dhat: plug_in,
        p_d,
        dic: dbar + p_d,
    }
}
