use proptest::prelude::*;

use tauprior::dist::RngStream;
use tauprior::elicitation::prior::{sample_tau_or, tau_sq_bound};
use tauprior::elicitation::{
    convert_scale, ratio_to_tau, tau_to_ratio, ChipAllocation, ElicitationSession, HeterogeneityPrior, OutcomeScale,
    TurnerDefault,
};

fn allocation() -> impl Strategy<Value = ChipAllocation> {
    (1.0f64..3.0, 2.0f64..30.0, prop::collection::vec(0u32..8, 3..12), 0u32..10).prop_map(|(lo, width, chips, spare)| {
        let placed: u32 = chips.iter().sum();
        let n = chips.len();
        ChipAllocation::new(lo, lo + width, n, chips, placed + spare).unwrap()
    })
}

fn sum(b: [f64; 4]) -> f64 {
    b.iter().sum()
}

proptest! {
    #[test]
    fn ratio_tau_round_trip(r in 1.0f64..1e5) {
        let tau = ratio_to_tau(r).unwrap();
        prop_assert!(tau >= 0.0);
        prop_assert!((tau_to_ratio(tau) / r - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ratio_below_one_is_rejected(r in 0.0f64..0.999) {
        prop_assert!(ratio_to_tau(r).is_err());
    }

    #[test]
    fn scale_conversion_is_linear(tau in 0.0f64..5.0, sigma in 0.01f64..50.0) {
        let md = OutcomeScale::mean_difference(sigma).unwrap();
        let one = convert_scale(1.0, &md).unwrap();
        prop_assert!((convert_scale(tau, &md).unwrap() - tau * one).abs() < 1e-12 * (1.0 + tau * one));
        prop_assert_eq!(convert_scale(tau, &OutcomeScale::log_or()).unwrap(), tau);
    }

    #[test]
    fn tau_sq_bound_is_increasing(a in 1.0f64..1e4, gap in 0.001f64..1e3) {
        prop_assert!(tau_sq_bound(a).unwrap() < tau_sq_bound(a + gap).unwrap());
    }

    #[test]
    fn chip_csv_round_trip(chips in allocation()) {
        let back = ChipAllocation::from_csv(&chips.to_csv()).unwrap();
        prop_assert_eq!(back, chips);
    }

    #[test]
    fn chip_cumulative_is_monotone(chips in allocation()) {
        let cum = chips.cumulative();
        prop_assert_eq!(cum.len(), chips.nbins);
        for w in cum.windows(2) {
            prop_assert!(w[0].0 < w[1].0 && w[0].1 <= w[1].1);
        }
        prop_assert!(cum.last().unwrap().1 <= 1.0 + 1e-12);
    }

    #[test]
    fn exact_bands_sum_to_one(m in -5.0f64..1.0, s in 0.1f64..3.0, upper in 0.05f64..10.0, r_max in 1.5f64..500.0) {
        let t = TurnerDefault { log_mean: m, log_sd: s };
        let scale = OutcomeScale::log_or();
        let priors = [
            HeterogeneityPrior::turner(t, scale).unwrap(),
            HeterogeneityPrior::turner_truncated(t, r_max, scale).unwrap(),
            HeterogeneityPrior::uniform(0.0, upper, scale).unwrap(),
        ];
        for p in &priors {
            let b = p.exact_band_probabilities().as_array();
            prop_assert!(b.iter().all(|x| (0.0..=1.0 + 1e-12).contains(x)), "{b:?}");
            prop_assert!((sum(b) - 1.0).abs() < 1e-9, "{b:?}");
        }
    }

    #[test]
    fn truncated_draws_respect_bound(m in -4.0f64..0.0, s in 0.2f64..2.5, r_max in 1.5f64..100.0, seed in any::<u64>()) {
        let t = TurnerDefault { log_mean: m, log_sd: s };
        let prior = HeterogeneityPrior::turner_truncated(t, r_max, OutcomeScale::log_or()).unwrap();
        let bound = tau_sq_bound(r_max).unwrap();
        for tau in sample_tau_or(&prior, 500, RngStream::new(seed, 0)) {
            prop_assert!(tau >= 0.0 && tau * tau <= bound * (1.0 + 1e-12));
        }
    }

    #[test]
    fn session_serde_round_trip(certain in any::<bool>(), r_max in prop::option::of(1.01f64..1e3), chips in allocation()) {
        let mut s = ElicitationSession::with_id("s", OutcomeScale::log_or()).stage1(certain).unwrap();
        if !certain {
            s = s.stage2(r_max).unwrap();
            if r_max.is_some() {
                if let Ok(next) = s.set_chips(chips) {
                    s = next;
                }
            }
        }
        let json = serde_json::to_string(&s).unwrap();
        let back: ElicitationSession = serde_json::from_str(&json).unwrap();
        prop_assert_eq!(back, s);
    }
}
