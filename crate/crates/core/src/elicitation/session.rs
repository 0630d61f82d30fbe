//! The staged elicitation protocol as a value-typed state machine.
//!
//! Each transition takes a session by reference and returns the next session,
//! leaving the input untouched. Finalized sessions reject every transition.

use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use super::chips::ChipAllocation;
use super::fit::{fit_ratio, FittedRatioDistribution};
use super::prior::{HeterogeneityPrior, PriorVariant, TurnerDefault};
use super::scale::{dichotomize_guidance, Dichotomization, DichotomizationRecord, OutcomeScale};
use crate::error::{Error, Result};

pub const STAGE1_QUESTION: &str = "Can you be certain that the treatment effects across the studies will be identical, ignoring within-study sampling variability?";
pub const STAGE2_QUESTION: &str = "Let R be the ratio of the largest to the smallest OR. Are you able to judge a maximum plausible value for R? Denoting this limit by Rmax, this means that you would think values of R above Rmax are too implausible to be contemplated.";
pub const STAGE3_QUESTION: &str = "Do you judge some values in the range [Rmin, Rmax] to be more likely than others? If so, place chips in the bins so that the proportion of chips in each bin is your probability that R lies in that bin.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Stage1,
    Stage2,
    Stage3,
    Finalized,
}

impl Stage {
    pub fn question(self) -> Option<&'static str> {
        match self {
            Stage::Stage1 => Some(STAGE1_QUESTION),
            Stage::Stage2 => Some(STAGE2_QUESTION),
            Stage::Stage3 => Some(STAGE3_QUESTION),
            Stage::Finalized => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectModel {
    FixedEffect,
    RandomEffects,
}

/// Which of the four terminal outcomes a session reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Endpoint {
    FixedEffect,
    DefaultPrior,
    TruncatedDefaultPrior,
    ElicitedRatio,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub model: EffectModel,
    pub prior: Option<HeterogeneityPrior>,
}

impl SessionResult {
    pub fn endpoint(&self) -> Endpoint {
        match self.prior.map(|p| p.variant) {
            None => Endpoint::FixedEffect,
            Some(PriorVariant::LogNormalTauSq { .. }) => Endpoint::DefaultPrior,
            Some(PriorVariant::TruncatedLogNormalTauSq { .. }) => Endpoint::TruncatedDefaultPrior,
            Some(_) => Endpoint::ElicitedRatio,
        }
    }
}

/// One judgement supplied by the expert or facilitator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "judgment", rename_all = "snake_case")]
pub enum Judgment {
    CertainIdentical { certain: bool },
    MaxRatio { r_max: Option<f64> },
    /// Optional lower limit on `R`, accepted in stages 1 and 2.
    MinRatio { r_min: f64 },
    Chips { chips: ChipAllocation },
    DeclineChips,
    FinalizeElicited,
    Dichotomize { record: DichotomizationRecord },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub timestamp_ms: u64,
    #[serde(flatten)]
    pub judgment: Judgment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationSession {
    pub id: String,
    pub scale: OutcomeScale,
    pub stage: Stage,
    pub certain_identical: Option<bool>,
    pub r_max: Option<f64>,
    pub r_min: f64,
    pub chips: Option<ChipAllocation>,
    pub fit: Option<FittedRatioDistribution>,
    pub result: Option<SessionResult>,
    #[serde(default)]
    pub turner: TurnerDefault,
    pub audit_log: Vec<AuditRecord>,
}

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

fn state_error(session: &ElicitationSession, action: &str, expected: &str) -> Error {
    Error::State(format!(
        "cannot {action} in {:?} (requires {expected})",
        session.stage
    ))
}

impl ElicitationSession {
    pub fn new(scale: OutcomeScale) -> Self {
        Self::with_id(uuid::Uuid::new_v4().simple().to_string(), scale)
    }

    pub fn with_id(id: impl Into<String>, scale: OutcomeScale) -> Self {
        Self {
            id: id.into(),
            scale,
            stage: Stage::Stage1,
            certain_identical: None,
            r_max: None,
            r_min: 1.0,
            chips: None,
            fit: None,
            result: None,
            turner: TurnerDefault::default(),
            audit_log: Vec::new(),
        }
    }

    pub fn is_finalized(&self) -> bool {
        self.stage == Stage::Finalized
    }

    pub fn stage1(&self, certain_identical: bool) -> Result<Self> {
        self.apply(Judgment::CertainIdentical { certain: certain_identical }, now_ms())
    }

    pub fn stage2(&self, r_max: Option<f64>) -> Result<Self> {
        self.apply(Judgment::MaxRatio { r_max }, now_ms())
    }

    pub fn set_r_min(&self, r_min: f64) -> Result<Self> {
        self.apply(Judgment::MinRatio { r_min }, now_ms())
    }

    pub fn set_chips(&self, chips: ChipAllocation) -> Result<Self> {
        self.apply(Judgment::Chips { chips }, now_ms())
    }

    pub fn stage3_decline(&self) -> Result<Self> {
        self.apply(Judgment::DeclineChips, now_ms())
    }

    pub fn finalize_elicited(&self) -> Result<Self> {
        self.apply(Judgment::FinalizeElicited, now_ms())
    }

    pub fn dichotomize(&self, how: Dichotomization) -> Result<Self> {
        let record = dichotomize_guidance(&self.scale, how)?;
        self.apply(Judgment::Dichotomize { record }, now_ms())
    }

    /// Allocation template matching the session's range.
    pub fn chip_template(&self, nbins: usize, total_chips: u32) -> Result<ChipAllocation> {
        let r_max = self
            .r_max
            .ok_or_else(|| state_error(self, "build a chip grid", "Rmax"))?;
        ChipAllocation::empty(self.r_min, r_max, nbins, total_chips)
    }

    /// Prior implied by the current judgements, if any; used for live feedback.
    pub fn provisional_prior(&self) -> Option<HeterogeneityPrior> {
        match self.stage {
            Stage::Stage1 => None,
            Stage::Stage2 => HeterogeneityPrior::turner(self.turner, self.scale).ok(),
            Stage::Stage3 => match &self.fit {
                Some(fit) => HeterogeneityPrior::elicited(*fit, self.scale).ok(),
                None => HeterogeneityPrior::turner_truncated(self.turner, self.r_max?, self.scale).ok(),
            },
            Stage::Finalized => self.result.as_ref().and_then(|r| r.prior),
        }
    }

    /// Applies one judgement at time `timestamp_ms`.
    pub fn apply(&self, judgment: Judgment, timestamp_ms: u64) -> Result<Self> {
        if self.is_finalized() {
            return Err(Error::State(format!("session {} is finalized", self.id)));
        }
        let mut next = self.clone();
        match &judgment {
            Judgment::CertainIdentical { certain } => {
                if self.stage != Stage::Stage1 {
                    return Err(state_error(self, "answer stage 1", "Stage1"));
                }
                next.certain_identical = Some(*certain);
                if *certain {
                    next.stage = Stage::Finalized;
                    next.result = Some(SessionResult {
                        model: EffectModel::FixedEffect,
                        prior: None,
                    });
                } else {
                    next.stage = Stage::Stage2;
                }
            }
            Judgment::MinRatio { r_min } => {
                if !matches!(self.stage, Stage::Stage1 | Stage::Stage2) {
                    return Err(state_error(self, "set Rmin", "Stage1 or Stage2"));
                }
                if !(r_min.is_finite() && *r_min >= 1.0) {
                    return Err(Error::Domain(format!("Rmin must be >= 1, got {r_min}")));
                }
                next.r_min = *r_min;
            }
            Judgment::MaxRatio { r_max } => {
                if self.stage != Stage::Stage2 {
                    return Err(state_error(self, "answer stage 2", "Stage2"));
                }
                match r_max {
                    Some(r) => {
                        if !(r.is_finite() && *r > self.r_min) {
                            return Err(Error::Domain(format!(
                                "Rmax must be finite and exceed Rmin = {}, got {r}",
                                self.r_min
                            )));
                        }
                        next.r_max = Some(*r);
                        next.stage = Stage::Stage3;
                    }
                    None => {
                        if !self.scale.kind.allows_default_prior() {
                            return Err(Error::UnsupportedDefault(format!(
                                "the empirical default was derived from odds ratios and is not offered on the {} scale; ask the expert for Rmax",
                                self.scale.kind
                            )));
                        }
                        next.stage = Stage::Finalized;
                        next.result = Some(SessionResult {
                            model: EffectModel::RandomEffects,
                            prior: Some(HeterogeneityPrior::turner(self.turner, self.scale)?),
                        });
                    }
                }
            }
            Judgment::Chips { chips } => {
                if self.stage != Stage::Stage3 {
                    return Err(state_error(self, "place chips", "Stage3"));
                }
                let r_max = self.r_max.expect("stage 3 has Rmax");
                if (chips.lower - self.r_min).abs() > 1e-9 || (chips.upper - r_max).abs() > 1e-9 {
                    return Err(Error::Domain(format!(
                        "chip range [{}, {}] must equal [Rmin, Rmax] = [{}, {r_max}]",
                        chips.lower, chips.upper, self.r_min
                    )));
                }
                next.fit = if chips.is_complete() && !chips.is_degenerate() {
                    Some(fit_ratio(chips)?)
                } else {
                    None
                };
                next.chips = Some(chips.clone());
            }
            Judgment::DeclineChips => {
                if self.stage != Stage::Stage3 {
                    return Err(state_error(self, "decline the roulette", "Stage3"));
                }
                let r_max = self.r_max.expect("stage 3 has Rmax");
                next.stage = Stage::Finalized;
                next.result = Some(SessionResult {
                    model: EffectModel::RandomEffects,
                    prior: Some(HeterogeneityPrior::turner_truncated(self.turner, r_max, self.scale)?),
                });
            }
            Judgment::FinalizeElicited => {
                if self.stage != Stage::Stage3 {
                    return Err(state_error(self, "finalize an elicited prior", "Stage3"));
                }
                let chips = self.chips.as_ref().ok_or_else(|| {
                    Error::State(
                        "no chips placed yet; place chips or decline to use the truncated default prior"
                            .into(),
                    )
                })?;
                let fit = match self.fit {
                    Some(f) => f,
                    None => fit_ratio(chips)?,
                };
                next.fit = Some(fit);
                next.stage = Stage::Finalized;
                next.result = Some(SessionResult {
                    model: EffectModel::RandomEffects,
                    prior: Some(HeterogeneityPrior::elicited(fit, self.scale)?),
                });
            }
            Judgment::Dichotomize { record } => {
                if !self.scale.kind.is_dichotomized() || record.scale != self.scale.kind {
                    return Err(Error::State(format!(
                        "dichotomization does not apply to the {} scale",
                        self.scale.kind
                    )));
                }
            }
        }
        next.audit_log.push(AuditRecord {
            timestamp_ms,
            judgment,
        });
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::elicitation::scale::ScaleKind;

    fn fresh() -> ElicitationSession {
        ElicitationSession::with_id("t", OutcomeScale::log_or())
    }

    fn ta163_chips() -> ChipAllocation {
        ChipAllocation::new(1.0, 10.0, 9, vec![4, 5, 6, 6, 5, 4, 2, 1, 1], 34).unwrap()
    }

    #[test]
    fn stage1_certain_gives_fixed_effect() {
        let s = fresh().stage1(true).unwrap();
        assert_eq!(s.stage, Stage::Finalized);
        assert_eq!(s.result.as_ref().unwrap().endpoint(), Endpoint::FixedEffect);
        assert_eq!(s.audit_log.len(), 1);
    }

    #[test]
    fn stage1_uncertain_moves_on() {
        let s = fresh().stage1(false).unwrap();
        assert_eq!(s.stage, Stage::Stage2);
        assert!(matches!(s.stage1(false), Err(Error::State(_))));
    }

    #[test]
    fn finalized_is_immutable() {
        let s = fresh().stage1(true).unwrap();
        assert!(matches!(s.stage1(false), Err(Error::State(_))));
        assert!(matches!(s.stage3_decline(), Err(Error::State(_))));
    }

    #[test]
    fn stage2_paths() {
        let s2 = fresh().stage1(false).unwrap();
        let s3 = s2.stage2(Some(10.0)).unwrap();
        assert_eq!((s3.stage, s3.r_max), (Stage::Stage3, Some(10.0)));
        let d = s2.stage2(None).unwrap();
        let prior = d.result.unwrap().prior.unwrap();
        assert_eq!(
            prior.variant,
            PriorVariant::LogNormalTauSq {
                m: -2.56,
                v: 1.74 * 1.74
            }
        );
        assert!(matches!(s2.stage2(Some(0.5)), Err(Error::Domain(_))));
        assert!(matches!(s2.stage2(Some(1.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn default_refused_on_hazard_ratio_scale() {
        let s = ElicitationSession::with_id("hr", OutcomeScale::new(ScaleKind::LogHr, None).unwrap())
            .stage1(false)
            .unwrap();
        assert!(matches!(s.stage2(None), Err(Error::UnsupportedDefault(_))));
        assert!(s.stage2(Some(5.0)).is_ok());
    }

    #[test]
    fn decline_truncates_default() {
        let s = fresh().stage1(false).unwrap().stage2(Some(10.0)).unwrap();
        let done = s.stage3_decline().unwrap();
        match done.result.unwrap().prior.unwrap().variant {
            PriorVariant::TruncatedLogNormalTauSq { upper, .. } => {
                assert_eq!(upper, (10f64.ln() / 3.92).powi(2));
                assert!((upper - 0.345).abs() < 5e-4);
            }
            other => panic!("unexpected {other:?}"),
        }
        let big = fresh()
            .stage1(false)
            .unwrap()
            .stage2(Some(3.92f64.exp()))
            .unwrap()
            .stage3_decline()
            .unwrap();
        match big.result.unwrap().prior.unwrap().variant {
            PriorVariant::TruncatedLogNormalTauSq { upper, .. } => assert!((upper - 1.0).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(fresh().stage3_decline(), Err(Error::State(_))));
    }

    #[test]
    fn elicited_path() {
        let s = fresh().stage1(false).unwrap().stage2(Some(10.0)).unwrap();
        assert!(matches!(s.finalize_elicited(), Err(Error::State(_))));
        let with = s.set_chips(ta163_chips()).unwrap();
        assert!(with.fit.is_some());
        let done = with.finalize_elicited().unwrap();
        assert_eq!(done.result.unwrap().endpoint(), Endpoint::ElicitedRatio);
        assert_eq!(done.audit_log.len(), 4);
    }

    #[test]
    fn chips_must_match_range() {
        let s = fresh().stage1(false).unwrap().stage2(Some(8.0)).unwrap();
        assert!(matches!(s.set_chips(ta163_chips()), Err(Error::Domain(_))));
    }

    #[test]
    fn partial_chips_stored_without_fit() {
        let s = fresh().stage1(false).unwrap().stage2(Some(10.0)).unwrap();
        let partial = ChipAllocation::new(1.0, 10.0, 9, vec![4, 5, 0, 0, 0, 0, 0, 0, 0], 20).unwrap();
        let s = s.set_chips(partial).unwrap();
        assert!(s.fit.is_none());
        assert!(s.finalize_elicited().is_err());
        assert!(matches!(
            s.provisional_prior().unwrap().variant,
            PriorVariant::TruncatedLogNormalTauSq { .. }
        ));
    }

    #[test]
    fn rmin_shifts_everything() {
        let s = fresh().stage1(false).unwrap().set_r_min(2.0).unwrap();
        assert!(s.stage2(Some(1.5)).is_err());
        let s = s.stage2(Some(11.0)).unwrap();
        let t = s.chip_template(9, 20).unwrap();
        assert_eq!((t.lower, t.upper), (2.0, 11.0));
    }

    #[test]
    fn dichotomize_recorded_only_for_dichotomized_scales() {
        let md = ElicitationSession::with_id("md", OutcomeScale::mean_difference(2.61).unwrap());
        let s = md
            .dichotomize(Dichotomization::Cutoff {
                value: 5.0,
                units: Some("kg".into()),
            })
            .unwrap();
        assert_eq!(s.stage, Stage::Stage1);
        assert_eq!(s.audit_log.len(), 1);
        assert!(fresh()
            .dichotomize(Dichotomization::Cutoff {
                value: 1.0,
                units: None
            })
            .is_err());
    }

    /// Drives every path of judgements and checks each ends at one of four endpoints.
    #[test]
    fn exhaustive_paths_reach_exactly_four_endpoints() {
        use std::collections::HashSet;
        let mut seen = HashSet::new();
        let mut dead_ends = 0;
        let judgements = |s: &ElicitationSession| -> Vec<Judgment> {
            let _ = s;
            vec![
                Judgment::CertainIdentical { certain: true },
                Judgment::CertainIdentical { certain: false },
                Judgment::MaxRatio { r_max: None },
                Judgment::MaxRatio { r_max: Some(10.0) },
                Judgment::Chips { chips: ta163_chips() },
                Judgment::DeclineChips,
                Judgment::FinalizeElicited,
            ]
        };
        let mut frontier = vec![(fresh(), 0)];
        while let Some((s, depth)) = frontier.pop() {
            if s.is_finalized() {
                let r = s.result.as_ref().unwrap();
                seen.insert(r.endpoint());
                for j in judgements(&s) {
                    assert!(s.apply(j, 0).is_err());
                }
                continue;
            }
            if depth > 6 {
                dead_ends += 1;
                continue;
            }
            for j in judgements(&s) {
                if let Ok(n) = s.apply(j, 0) {
                    frontier.push((n, depth + 1));
                }
            }
        }
        // re-placing chips forever is the only non-terminating loop
        assert!(dead_ends > 0);
        assert_eq!(seen.len(), 4);
    }

    #[test]
    fn session_json_round_trip() {
        let s = fresh()
            .stage1(false)
            .unwrap()
            .stage2(Some(10.0))
            .unwrap()
            .set_chips(ta163_chips())
            .unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: ElicitationSession = serde_json::from_str(&text).unwrap();
        assert_eq!(back.stage, s.stage);
        assert_eq!(back.chips, s.chips);
        assert_eq!(back.audit_log, s.audit_log);
    }
}
