//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero when any criterion fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

use tauprior::dist::{DistributionSpec, RngStream};
use tauprior::elicitation::fit::{fit_objective, fit_points};
use tauprior::elicitation::prior::tau_sq_bound;
use tauprior::elicitation::scale::interpretation_table;
use tauprior::elicitation::{
    fit_ratio, prior_band_probabilities, BandProbabilities, ChipAllocation, ElicitationSession, HeterogeneityPrior,
    OutcomeScale, PriorVariant, RatioFamily, TurnerDefault,
};
use tauprior::engine::summary::{mcse_mean, mcse_quantile, mean, quantile, variance};
use tauprior::engine::{run_mcmc, Arm, Likelihood, McmcConfig, ModelConfig, Study, TrialDataset};
use tauprior::ingest::report::ComparisonRow;
use tauprior::ingest::{compare, fixtures, CompareOptions, ComparisonTable, PriorChoice};

struct Report {
    notes: Vec<String>,
    ok: bool,
}

impl Report {
    fn check(&mut self, cond: bool, msg: impl Into<String>) {
        let msg = msg.into();
        self.notes.push(format!("{} {msg}", if cond { "ok  " } else { "FAIL" }));
        self.ok &= cond;
    }

    fn note(&mut self, msg: impl Into<String>) {
        self.notes.push(format!("note {}", msg.into()));
    }

    fn within(&mut self, what: &str, got: f64, want: f64, tol: f64) {
        self.check((got - want).abs() <= tol, format!("{what}: {got:.4} vs {want} (tol {tol})"));
    }

    fn within_rel(&mut self, what: &str, got: f64, want: f64, rel: f64) {
        self.check(
            (got - want).abs() <= rel * want.abs(),
            format!("{what}: {got:.4} vs {want} (rel tol {rel})"),
        );
    }
}

fn bands_array(b: &BandProbabilities) -> [f64; 4] {
    b.as_array()
}

fn round_to(x: f64, dp: i32) -> f64 {
    let f = 10f64.powi(dp);
    (x * f).round() / f
}

fn trunc_to(x: f64, dp: i32) -> f64 {
    let f = 10f64.powi(dp);
    (x * f).trunc() / f
}

// (R, tau, scaled tau, decimals of the scaled column) as printed
const TABLE: [(f64, f64, f64, i32); 14] = [
    (1.0, 0.0, 0.0, 2),
    (1.21, 0.05, 0.028, 3),
    (1.48, 0.1, 0.06, 2),
    (2.19, 0.2, 0.11, 2),
    (3.24, 0.3, 0.17, 2),
    (4.80, 0.4, 0.22, 2),
    (7.10, 0.5, 0.28, 2),
    (10.51, 0.6, 0.33, 2),
    (15.55, 0.7, 0.39, 2),
    (23.01, 0.8, 0.44, 2),
    (34.06, 0.9, 0.50, 2),
    (50.40, 1.0, 0.55, 2),
    (357.81, 1.5, 0.83, 2),
    (2540.20, 2.0, 1.10, 2),
];

// printed mean-difference column in units of sigma, where it differs from the probit column
const MD_MISPRINT: (f64, f64) = (0.2, 0.1);

fn criterion_1(r: &mut Report) {
    let ratio = interpretation_table(&OutcomeScale::log_or());
    let probit = interpretation_table(&OutcomeScale::new("probit".parse().unwrap(), None).unwrap());
    let smd = interpretation_table(&OutcomeScale::new("std_mean_difference".parse().unwrap(), None).unwrap());
    let md = interpretation_table(&OutcomeScale::mean_difference(1.0).unwrap());
    r.check(ratio.len() == TABLE.len(), format!("{} rows", ratio.len()));
    for (i, &(want_r, tau, want_s, dp)) in TABLE.iter().enumerate() {
        let row = &ratio[i];
        r.check(row.tau == tau, format!("row {i}: tau {}", row.tau));
        let got_r = round_to(row.r, 2);
        if (got_r - want_r).abs() < 1e-9 {
            r.check(true, format!("R({tau}) = {:.4} -> {got_r:.2}", row.r));
        } else {
            // printed value truncated instead of rounded
            let truncated = (trunc_to(row.r, 2) - want_r).abs() < 1e-9;
            r.check(truncated, format!("R({tau}) = {:.4}: printed {want_r:.2} is the truncated value", row.r));
            r.note(format!("printed R for tau={tau} is {want_r}; exp(3.92 x {tau}) rounds to {got_r:.2}"));
        }
        for (name, rows) in [("probit", &probit), ("smd", &smd)] {
            let got = round_to(rows[i].tau_scaled, dp);
            r.check((got - want_s).abs() < 1e-9, format!("{name} tau({tau}) = {:.4} -> {got}", rows[i].tau_scaled));
        }
        let got_md = round_to(md[i].tau_scaled, dp);
        if tau == MD_MISPRINT.0 {
            r.note(format!(
                "mean-difference column prints {}sigma for tau={tau}; the other columns and the formula give {got_md}sigma",
                MD_MISPRINT.1
            ));
        }
        r.check((got_md - want_s).abs() < 1e-9, format!("md tau({tau}) = {:.4} sigma", md[i].tau_scaled));
    }
    let named: Vec<(f64, f64)> = vec![(0.1, 1.48), (0.6, 10.51), (1.0, 50.40), (2.0, 2540.20)];
    for (tau, want) in named {
        let row = ratio.iter().find(|x| x.tau == tau).unwrap();
        r.within(&format!("R at tau={tau}"), row.r, want, 0.005);
    }
    let smd06 = smd.iter().find(|x| x.tau == 0.6).unwrap();
    r.within("SMD tau at tau_OR=0.6", smd06.tau_scaled, 0.33, 0.005);
}

fn gamma_of(f: &tauprior::elicitation::FittedRatioDistribution) -> (f64, f64) {
    match f.dist {
        RatioFamily::GammaOnRminus1 { shape, rate } => (shape, rate),
        other => panic!("expected a gamma fit, got {other:?}"),
    }
}

fn criterion_2(r: &mut Report) {
    for (name, (shape0, rate0), bands0) in [
        ("ta163", (2.62, 0.721), [0.01, 0.85, 0.14]),
        ("ta336", (1.94, 0.741), [0.06, 0.88, 0.06]),
    ] {
        let fit = fit_ratio(&fixtures::chips(name).unwrap()).unwrap();
        let (shape, rate) = gamma_of(&fit);
        r.within_rel(&format!("{name} shape"), shape, shape0, 0.10);
        r.within_rel(&format!("{name} rate"), rate, rate0, 0.10);
        let prior = HeterogeneityPrior::elicited(fit, OutcomeScale::log_or()).unwrap();
        let b = bands_array(&prior.exact_band_probabilities());
        for (k, label) in ["P_L", "P_M", "P_H"].iter().enumerate() {
            r.within(&format!("{name} {label}"), b[k], bands0[k], 0.02);
        }
    }
}

fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (lo.ln() + (hi.ln() - lo.ln()) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn lin_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn grid_min(points: &[(f64, f64)], family: &str) -> f64 {
    let mut best = f64::INFINITY;
    let (xs, ys) = match family {
        "gamma" => (log_grid(0.05, 50.0, 200), log_grid(0.01, 20.0, 200)),
        _ => (lin_grid(-3.0, 4.0, 200), log_grid(0.02, 5.0, 200)),
    };
    for &a in &xs {
        for &b in &ys {
            let dist = match family {
                "gamma" => DistributionSpec::gamma(a, b),
                _ => DistributionSpec::lognormal(a, b),
            };
            if let Ok(d) = dist {
                best = best.min(fit_objective(points, &d));
            }
        }
    }
    best
}

fn criterion_3(r: &mut Report) {
    let mut cases: Vec<(String, ChipAllocation)> = vec![
        ("ta163".into(), fixtures::chips("ta163").unwrap()),
        ("ta336".into(), fixtures::chips("ta336").unwrap()),
    ];
    let synthetic: [(f64, f64, &[u32]); 5] = [
        (1.0, 10.0, &[1, 2, 3, 4, 5, 4, 3, 2, 1]),
        (1.0, 10.0, &[10, 5, 3, 1, 1, 0, 0, 0, 0]),
        (1.0, 10.0, &[0, 0, 1, 2, 4, 6, 4, 2, 1]),
        (1.0, 20.0, &[3, 6, 5, 3, 2, 1, 0, 0, 0, 0]),
        (2.0, 8.0, &[1, 4, 8, 4, 2, 1]),
    ];
    for (i, (lo, hi, counts)) in synthetic.iter().enumerate() {
        let total = counts.iter().sum();
        cases.push((format!("synthetic {}", i + 1), ChipAllocation::new(*lo, *hi, counts.len(), counts.to_vec(), total).unwrap()));
    }
    for (name, chips) in cases {
        let fit = fit_ratio(&chips).unwrap();
        let diag = fit.fit.expect("fit diagnostics");
        let points = fit_points(&chips);
        let (gamma_sse, ln_sse) = match fit.dist {
            RatioFamily::GammaOnRminus1 { .. } => (diag.sse, diag.alternative_sse),
            RatioFamily::LogNormalOnRminus1 { .. } => (diag.alternative_sse, diag.sse),
        };
        let g = grid_min(&points, "gamma");
        let l = grid_min(&points, "lognormal");
        r.check(gamma_sse <= g * 1.02 + 1e-12, format!("{name} gamma sse {gamma_sse:.6} vs grid {g:.6}"));
        r.check(ln_sse <= l * 1.02 + 1e-12, format!("{name} lognormal sse {ln_sse:.6} vs grid {l:.6}"));
        r.check(diag.sse <= g.min(l) * 1.02 + 1e-12, format!("{name} chosen sse {:.6}", diag.sse));
    }
}

fn ta163_truncated_prior() -> HeterogeneityPrior {
    let s = ElicitationSession::new(OutcomeScale::log_or())
        .stage1(false)
        .and_then(|s| s.stage2(Some(10.0)))
        .and_then(|s| s.stage3_decline())
        .unwrap();
    s.result.unwrap().prior.unwrap()
}

fn criterion_4(r: &mut Report) {
    let exact = (10f64.ln() / 3.92).powi(2);
    let prior = ta163_truncated_prior();
    let upper = match prior.variant {
        PriorVariant::TruncatedLogNormalTauSq { upper, .. } => upper,
        other => panic!("unexpected prior {other:?}"),
    };
    r.check(upper == exact, format!("upper bound {upper:.6} == (ln 10 / 3.92)^2"));
    r.check(tau_sq_bound(10.0).unwrap() == exact, "tau_sq_bound(10) agrees");
    r.check(format!("{upper:.3}") == "0.345", format!("upper bound prints as {upper:.3}"));

    let data = fixtures::dataset("ta163").unwrap();
    let out = run_mcmc(&data, &ModelConfig::random_effects(prior), &McmcConfig::with_seed(1)).unwrap();
    let over = out.traces.tau_or.iter().filter(|t| *t * *t > upper).count();
    r.check(over == 0, format!("{over} of {} tau^2 draws exceed the bound", out.traces.tau_or.len()));
    let b = out.tau_bands().unwrap();
    r.check(b.p_extreme == 0.0, format!("posterior P_EH = {}", b.p_extreme));
}

fn row(table: &ComparisonTable, choice: PriorChoice) -> &ComparisonRow {
    table.rows.iter().find(|r| r.choice == choice).expect("row present")
}

fn contrast(row: &ComparisonRow, a: usize, b: usize) -> &tauprior::engine::ContrastSummary {
    row.contrasts.iter().find(|c| c.a == a && c.b == b).expect("contrast present")
}

fn full_compare(name: &str) -> ComparisonTable {
    let mut opts = CompareOptions::for_fixture(name).unwrap();
    opts.mcmc = McmcConfig::with_seed(1);
    compare(&fixtures::dataset(name).unwrap(), &opts).unwrap()
}

fn criterion_5(r: &mut Report) {
    let t = full_compare("ta163");
    r.note("the reported 0.13 contrast is treatment 2 vs 1 of the data block (named infliximab there)");
    let fe = row(&t, PriorChoice::FixedEffect);
    let or = contrast(fe, 2, 1).ratio.unwrap();
    r.within("FE OR median", or.median, 0.13, 0.02);
    r.within_rel("FE OR lower", or.lower, 0.03, 0.20);
    r.within_rel("FE OR upper", or.upper, 0.44, 0.20);
    r.within("FE DIC", fe.dic.dic, 34.72, 0.7);

    let uni = row(&t, PriorChoice::Uniform);
    r.within("U(0,5) posterior P_EH", uni.bands.p_extreme, 0.87, 0.05);

    let el = row(&t, PriorChoice::Elicited);
    r.within("elicited OR median", contrast(el, 2, 1).ratio.unwrap().median, 0.12, 0.02);
    let b = bands_array(&el.bands);
    for (k, (label, want)) in [("P_L", 0.01), ("P_M", 0.85), ("P_H", 0.14), ("P_EH", 0.0)].iter().enumerate() {
        r.within(&format!("elicited posterior {label}"), b[k], *want, 0.05);
    }
}

fn criterion_6(r: &mut Report) {
    let t = full_compare("ta336");
    let fe = row(&t, PriorChoice::FixedEffect);
    let c = contrast(fe, 3, 1).effect;
    r.within("FE MD vs placebo median", c.median, -1.77, 0.05);
    r.within("FE MD vs placebo lower", c.lower, -2.18, 0.1);
    r.within("FE MD vs placebo upper", c.upper, -1.35, 0.1);
    r.within("FE MD vs linagliptin median", contrast(fe, 3, 4).effect.median, -2.10, 0.05);
    r.within("FE DIC", fe.dic.dic, 3.82, 0.7);
    let el = contrast(row(&t, PriorChoice::Elicited), 3, 1).effect;
    r.within("elicited CrI lower", el.lower, -2.76, 0.15);
    r.within("elicited CrI upper", el.upper, -0.80, 0.15);
}

fn criterion_7(r: &mut Report) {
    let (y1, s1, y2, s2) = (0.2, 0.3, 1.0, 0.5);
    let data = TrialDataset {
        n_treatments: 2,
        likelihood: Likelihood::NormalIdentity,
        studies: vec![Study {
            arms: vec![
                Arm::Normal { treatment: 1, y: y1, se: s1 },
                Arm::Normal { treatment: 2, y: y2, se: s2 },
            ],
        }],
        sigma_individual: None,
        treatment_names: vec![],
    };
    let model = ModelConfig::fixed_effect();
    // (mu, d) with independent N(0, sd^2) priors; y1 ~ N(mu, s1^2), y2 ~ N(mu + d, s2^2)
    let (w1, w2) = (1.0 / (s1 * s1), 1.0 / (s2 * s2));
    let pm = 1.0 / model.baseline_prior_sd.powi(2);
    let pd = 1.0 / model.effect_prior_sd.powi(2);
    let (a, b, c) = (w1 + w2 + pm, w2, w2 + pd);
    let det = a * c - b * b;
    let (rhs_mu, rhs_d) = (w1 * y1 + w2 * y2, w2 * y2);
    let post_mean = (a * rhs_d - b * rhs_mu) / det;
    let post_sd = (a / det).sqrt();

    let mcmc = McmcConfig {
        burn_in: 5_000,
        keep: 50_000,
        seed: 1,
        ..McmcConfig::default()
    };
    let out = run_mcmc(&data, &model, &mcmc).unwrap();
    let d = &out.traces.d[1];
    let se = mcse_mean(d, 50);
    r.check(
        (mean(d) - post_mean).abs() <= 3.0 * se,
        format!("posterior mean {:.5} vs {post_mean:.5} (3 MCSE = {:.5})", mean(d), 3.0 * se),
    );
    for p in [0.025, 0.5, 0.975] {
        let want = post_mean + post_sd * std_normal_quantile(p);
        let got = quantile(d, p);
        let se = mcse_quantile(d, p, 50);
        r.check((got - want).abs() <= 3.0 * se, format!("q{p}: {got:.5} vs {want:.5} (3 MCSE = {:.5})", 3.0 * se));
    }
    r.note(format!("posterior sd {:.5} vs {post_sd:.5}", variance(d).sqrt()));
}

fn std_normal_quantile(p: f64) -> f64 {
    DistributionSpec::normal(0.0, 1.0).unwrap().quantile(p).unwrap()
}

fn criterion_8(r: &mut Report) {
    let data = fixtures::dataset("ta163").unwrap();
    let mcmc = McmcConfig::with_seed(1);
    let fe = run_mcmc(&data, &ModelConfig::fixed_effect(), &mcmc).unwrap();
    let re = run_mcmc(&data, &ModelConfig::random_effects_fixed_tau(0.0), &mcmc.clone()).unwrap();
    for k in 1..data.n_treatments {
        let (a, b) = (&fe.traces.d[k], &re.traces.d[k]);
        let se = (mcse_mean(a, 50).powi(2) + mcse_mean(b, 50).powi(2)).sqrt();
        r.check(
            (mean(a) - mean(b)).abs() <= 3.0 * se,
            format!("d[{}] FE {:.4} vs RE(tau=0) {:.4} (3 MCSE = {:.4})", k + 1, mean(a), mean(b), 3.0 * se),
        );
        for p in [0.025, 0.975] {
            let se = (mcse_quantile(a, p, 50).powi(2) + mcse_quantile(b, p, 50).powi(2)).sqrt();
            let (qa, qb) = (quantile(a, p), quantile(b, p));
            r.check((qa - qb).abs() <= 3.0 * se, format!("d[{}] q{p} {qa:.4} vs {qb:.4}", k + 1));
        }
    }
}

fn criterion_9(r: &mut Report) {
    let bin = env!("CARGO_BIN_EXE_tauprior");
    let run = || {
        Command::new(bin)
            .args(["compare", "--dataset", "ta163", "--priors", "all", "--seed", "1"])
            .env_remove("TAUPRIOR_SEED")
            .output()
            .unwrap()
    };
    let (a, b) = (run(), run());
    r.check(a.status.success() && b.status.success(), "both runs exit 0");
    r.check(!a.stdout.is_empty(), format!("{} bytes of output", a.stdout.len()));
    r.check(a.stdout == b.stdout, "outputs are byte-identical");
}

fn criterion_10(r: &mut Report) {
    let n = 200_000;
    let turner = HeterogeneityPrior::turner(TurnerDefault::default(), OutcomeScale::log_or()).unwrap();
    let uniform = HeterogeneityPrior::uniform(0.0, 5.0, OutcomeScale::log_or()).unwrap();
    for (name, prior, stream) in [("lognormal tau^2", turner, 11), ("uniform tau", uniform, 12)] {
        let exact = bands_array(&prior.exact_band_probabilities());
        let mc = bands_array(&prior_band_probabilities(&prior, n, RngStream::new(7, stream)).unwrap());
        for k in 0..4 {
            let se = (exact[k] * (1.0 - exact[k]) / n as f64).sqrt();
            r.check(
                (mc[k] - exact[k]).abs() <= 3.0 * se,
                format!("{name} band {k}: MC {:.5} vs exact {:.5} (3 SE = {:.5})", mc[k], exact[k], 3.0 * se),
            );
        }
    }
    let exact = bands_array(&uniform.exact_band_probabilities());
    for (k, want) in [0.02, 0.08, 0.10, 0.80].iter().enumerate() {
        r.within(&format!("uniform exact band {k}"), exact[k], *want, 1e-12);
    }
}

type Criterion = (u32, &'static str, fn(&mut Report));

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "ratio/tau interpretation table", criterion_1),
        (2, "chip fit reproduction", criterion_2),
        (3, "fit optimality vs brute-force grid", criterion_3),
        (4, "truncated default prior bound", criterion_4),
        (5, "TA163 reproduction", criterion_5),
        (6, "TA336 reproduction", criterion_6),
        (7, "conjugate normal oracle", criterion_7),
        (8, "fixed effect equals random effects with tau = 0", criterion_8),
        (9, "compare determinism", criterion_9),
        (10, "band probabilities vs closed form", criterion_10),
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, f) in criteria {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let mut report = Report { notes: Vec::new(), ok: true };
        if let Err(panic) = catch_unwind(AssertUnwindSafe(|| f(&mut report))) {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            report.check(false, format!("panicked: {msg}"));
        }
        for n in &report.notes {
            println!("    {n}");
        }
        println!(
            "{} criterion {id}: {name} ({:.1}s)",
            if report.ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !report.ok {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} criterion/criteria failed");
        std::process::exit(1);
    }
}
