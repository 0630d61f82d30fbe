//! Analysis configs, report bundles and the multi-prior comparison table.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::AtomicU64;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::dataset_io::{load_dataset, to_rectangular};
use super::fixtures;
use crate::elicitation::{
    BandProbabilities, EffectModel, FittedRatioDistribution, HeterogeneityPrior, OutcomeScale, PriorVariant,
    RatioFamily, TurnerDefault,
};
use crate::engine::{run_mcmc, run_mcmc_with_progress, ContrastSummary, Dic, Interval, Likelihood, McmcConfig, ModelConfig, PosteriorSummary, TrialDataset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    #[default]
    Json,
    Csv,
    Markdown,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "csv" => Ok(Self::Csv),
            "markdown" | "md" => Ok(Self::Markdown),
            other => Err(Error::Config(format!("unknown report format '{other}'"))),
        }
    }
}

/// A dataset file path, or the name of a bundled dataset.
pub fn resolve_dataset(reference: &str) -> Result<TrialDataset> {
    let path = Path::new(reference);
    if path.exists() {
        return load_dataset(path);
    }
    fixtures::dataset(reference).map_err(|_| {
        Error::NotFound(format!(
            "'{reference}' is neither a file nor a bundled dataset ({})",
            fixtures::DATASETS.join(", ")
        ))
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub dataset: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub mcmc: McmcConfig,
    /// Extra `(a, b)` contrasts beyond every treatment vs the reference.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub contrasts: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(default)]
    pub format: ReportFormat,
}

impl AnalysisConfig {
    pub fn validate(&self, data: &TrialDataset) -> Result<()> {
        self.model.validate()?;
        self.mcmc.validate()?;
        if let Some(p) = &self.model.prior {
            if data.likelihood == Likelihood::BinomialLogit && !p.scale.kind.is_ratio() {
                return Err(Error::Config(format!("prior scale {} does not fit binomial data", p.scale.kind)));
            }
        }
        for &(a, b) in &self.contrasts {
            if a == 0 || b == 0 || a > data.n_treatments || b > data.n_treatments {
                return Err(Error::Config(format!("contrast ({a}, {b}) names an unknown treatment")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub dataset_sha256: String,
    pub seed: u64,
    pub version: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Provenance {
    pub fn new<C: Serialize>(config: &C, data: &TrialDataset, seed: u64) -> Result<Self> {
        Ok(Self {
            config_sha256: sha256_hex(&serde_json::to_vec(config)?),
            dataset_sha256: sha256_hex(to_rectangular(data).as_bytes()),
            seed,
            version: env!("CARGO_PKG_VERSION").to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub summary: PosteriorSummary,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonTable>,
}

pub fn run_analysis(config: &AnalysisConfig) -> Result<ReportBundle> {
    let data = resolve_dataset(&config.dataset)?;
    run_analysis_on(config, &data)
}

pub fn run_analysis_on(config: &AnalysisConfig, data: &TrialDataset) -> Result<ReportBundle> {
    run_analysis_with_progress(config, data, None)
}

/// As [`run_analysis_on`], counting completed sweeps into `progress`.
pub fn run_analysis_with_progress(
    config: &AnalysisConfig,
    data: &TrialDataset,
    progress: Option<&AtomicU64>,
) -> Result<ReportBundle> {
    config.validate(data)?;
    let mut summary = run_mcmc_with_progress(data, &config.model, &config.mcmc, progress)?;
    for &(a, b) in &config.contrasts {
        let c = summary.contrast(a, b)?;
        summary.contrasts.push(c);
    }
    Ok(ReportBundle {
        provenance: Provenance::new(config, data, config.mcmc.seed)?,
        summary,
        comparison: None,
    })
}

fn fmt_interval(i: &Interval) -> String {
    format!("{:.2} ({:.2}, {:.2})", i.median, i.lower, i.upper)
}

impl ReportBundle {
    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Json => Ok(serde_json::to_string_pretty(self)? + "\n"),
            ReportFormat::Csv => Ok(summary_csv(&self.summary)),
            ReportFormat::Markdown => Ok(summary_markdown(&self.summary)),
        }
    }
}

fn contrast_label(names: &[String], c: &ContrastSummary) -> String {
    format!("{} vs {}", names[c.a - 1], names[c.b - 1])
}

pub fn summary_csv(s: &PosteriorSummary) -> String {
    let mut out = String::from("contrast,a,b,kind,scale,median,lower,upper\n");
    for c in &s.contrasts {
        let label = contrast_label(&s.treatment_names, c);
        let rows = [
            ("credible", "effect", Some(c.effect)),
            ("credible", "ratio", c.ratio),
            ("predictive", "effect", c.predictive),
            ("predictive", "ratio", c.predictive_ratio),
        ];
        for (kind, scale, iv) in rows {
            if let Some(i) = iv {
                let _ = writeln!(out, "\"{label}\",{},{},{kind},{scale},{},{},{}", c.a, c.b, i.median, i.lower, i.upper);
            }
        }
    }
    out
}

pub fn summary_markdown(s: &PosteriorSummary) -> String {
    let binomial = s.likelihood == Likelihood::BinomialLogit;
    let mut out = String::new();
    let _ = writeln!(out, "| Contrast | {} median (95% CrI) |", if binomial { "OR" } else { "Effect" });
    out.push_str("|---|---|\n");
    for c in &s.contrasts {
        let main = if binomial { c.ratio.unwrap_or(c.effect) } else { c.effect };
        let _ = writeln!(out, "| {} | {} |", contrast_label(&s.treatment_names, c), fmt_interval(&main));
        let pred = if binomial { c.predictive_ratio } else { c.predictive };
        if let Some(p) = pred {
            let _ = writeln!(out, "| | **{}** |", fmt_interval(&p));
        }
    }
    out.push('\n');
    if let Some(t) = &s.tau {
        let [l, m, h, e] = t.bands.as_array();
        let _ = writeln!(out, "tau: {}; bands P_L {l:.2}, P_M {m:.2}, P_H {h:.2}, P_EH {e:.2}", fmt_interval(&t.tau));
    }
    let _ = writeln!(
        out,
        "DIC {:.2} (Dbar {:.2}, pD {:.2}); mean residual deviance {:.2} on {} data points",
        s.dic.dic, s.dic.dbar, s.dic.p_d, s.total_resdev, s.n_data_points
    );
    for w in &s.diagnostics.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}

/// The five model/prior configurations of the comparison table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorChoice {
    FixedEffect,
    Uniform,
    Default,
    TruncatedDefault,
    Elicited,
}

impl PriorChoice {
    pub const ALL: [PriorChoice; 5] = [
        PriorChoice::FixedEffect,
        PriorChoice::Uniform,
        PriorChoice::Default,
        PriorChoice::TruncatedDefault,
        PriorChoice::Elicited,
    ];

    /// Parses `all` or a comma-separated list.
    pub fn parse_list(s: &str) -> Result<Vec<PriorChoice>> {
        if s.trim() == "all" {
            return Ok(Self::ALL.to_vec());
        }
        s.split(',')
            .map(|p| match p.trim() {
                "fe" | "fixed" | "fixed_effect" => Ok(PriorChoice::FixedEffect),
                "uniform" => Ok(PriorChoice::Uniform),
                "default" | "turner" => Ok(PriorChoice::Default),
                "truncated" | "truncated_default" => Ok(PriorChoice::TruncatedDefault),
                "elicited" => Ok(PriorChoice::Elicited),
                other => Err(Error::Config(format!("unknown prior choice '{other}'"))),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOptions {
    pub priors: Vec<PriorChoice>,
    pub mcmc: McmcConfig,
    /// Outcome scale for the heterogeneity priors; derived from the data when absent.
    pub scale: Option<OutcomeScale>,
    pub uniform_upper: f64,
    pub r_max: f64,
    pub turner: TurnerDefault,
    pub elicited: Option<FittedRatioDistribution>,
    /// Contrasts to tabulate; every treatment vs the reference when empty.
    pub contrasts: Vec<(usize, usize)>,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            priors: PriorChoice::ALL.to_vec(),
            mcmc: McmcConfig::default(),
            scale: None,
            uniform_upper: 5.0,
            r_max: 10.0,
            turner: TurnerDefault::default(),
            elicited: None,
            contrasts: Vec::new(),
        }
    }
}

impl CompareOptions {
    /// Defaults for a bundled dataset: its published elicited prior and headline contrasts.
    pub fn for_fixture(name: &str) -> Result<Self> {
        Ok(Self {
            elicited: Some(fixtures::elicited_prior(name)?),
            contrasts: fixtures::headline_contrasts(name)?,
            ..Self::default()
        })
    }
}

/// The scale implied by the data: log-OR for binomial, mean difference when `sigma` is known.
pub fn default_scale(data: &TrialDataset) -> Result<OutcomeScale> {
    match (data.likelihood, data.sigma_individual) {
        (Likelihood::BinomialLogit, _) => Ok(OutcomeScale::log_or()),
        (Likelihood::NormalIdentity, Some(s)) => OutcomeScale::mean_difference(s),
        (Likelihood::NormalIdentity, None) => Err(Error::Config(
            "normal data without sigma_individual; give the outcome scale explicitly".into(),
        )),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub choice: PriorChoice,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<HeterogeneityPrior>,
    pub contrasts: Vec<ContrastSummary>,
    pub bands: BandProbabilities,
    pub dic: Dic,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub likelihood: Likelihood,
    pub treatment_names: Vec<String>,
    pub rows: Vec<ComparisonRow>,
    pub provenance: Provenance,
}

fn describe_prior(p: &HeterogeneityPrior) -> String {
    let base = match p.variant {
        PriorVariant::UniformTau { lower, upper } => return format!("RE, tau ~ U({lower}, {upper})"),
        PriorVariant::LogNormalTauSq { m, v } => format!("RE, log tau_OR^2 ~ N({m}, {:.2}^2)", v.sqrt()),
        PriorVariant::TruncatedLogNormalTauSq { m, v, upper } => {
            format!("RE, log tau_OR^2 ~ N({m}, {:.2}^2), tau_OR^2 <= {upper:.3}", v.sqrt())
        }
        PriorVariant::ElicitedRatio { fit } => {
            let law = match fit.dist {
                RatioFamily::GammaOnRminus1 { shape, rate } => format!("Gamma({shape:.3}, {rate:.3})"),
                RatioFamily::LogNormalOnRminus1 { m, v } => format!("LogNormal({m:.3}, {v:.3})"),
            };
            format!("RE, R_OR - {} ~ {law}", fit.shift)
        }
        PriorVariant::HalfNormalTau { sd } => format!("RE, tau_OR ~ HalfNormal({sd})"),
    };
    if p.scale.kind.is_ratio() {
        base
    } else {
        format!("{base}, tau = {:.4} x tau_OR", p.omega)
    }
}

pub fn build_prior(choice: PriorChoice, opts: &CompareOptions, scale: OutcomeScale) -> Result<Option<HeterogeneityPrior>> {
    Ok(match choice {
        PriorChoice::FixedEffect => None,
        PriorChoice::Uniform => Some(HeterogeneityPrior::uniform(0.0, opts.uniform_upper, scale)?),
        PriorChoice::Default => Some(HeterogeneityPrior::turner(opts.turner, scale)?),
        PriorChoice::TruncatedDefault => Some(HeterogeneityPrior::turner_truncated(opts.turner, opts.r_max, scale)?),
        PriorChoice::Elicited => {
            let fit = opts
                .elicited
                .ok_or_else(|| Error::Config("the elicited row needs a fitted prior or a chips file".into()))?;
            Some(HeterogeneityPrior::elicited(fit, scale)?)
        }
    })
}

/// Fits every requested configuration on independent RNG streams.
pub fn compare(data: &TrialDataset, opts: &CompareOptions) -> Result<ComparisonTable> {
    opts.mcmc.validate()?;
    let scale = match opts.scale {
        Some(s) => s,
        None => default_scale(data)?,
    };
    let contrasts: Vec<(usize, usize)> = if opts.contrasts.is_empty() {
        (2..=data.n_treatments).map(|k| (k, 1)).collect()
    } else {
        opts.contrasts.clone()
    };
    let mut jobs = Vec::new();
    for (j, &choice) in opts.priors.iter().enumerate() {
        let prior = build_prior(choice, opts, scale)?;
        let model = match prior {
            None => ModelConfig::fixed_effect(),
            Some(p) => ModelConfig::random_effects(p),
        };
        let mcmc = McmcConfig {
            stream_base: opts.mcmc.stream_base + 1000 * j as u64,
            ..opts.mcmc.clone()
        };
        jobs.push((choice, prior, model, mcmc));
    }
    let results: Vec<Result<PosteriorSummary>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .iter()
            .map(|(_, _, model, mcmc)| scope.spawn(move || run_mcmc(data, model, mcmc)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("analysis thread panicked")).collect()
    });
    let mut rows = Vec::with_capacity(jobs.len());
    for ((choice, prior, _, _), result) in jobs.into_iter().zip(results) {
        let summary = result?;
        let cs = contrasts
            .iter()
            .map(|&(a, b)| summary.contrast(a, b))
            .collect::<Result<Vec<_>>>()?;
        let bands = match summary.effect {
            EffectModel::FixedEffect => BandProbabilities {
                p_low: 0.0,
                p_moderate: 0.0,
                p_high: 0.0,
                p_extreme: 0.0,
            },
            EffectModel::RandomEffects => summary.tau_bands()?,
        };
        rows.push(ComparisonRow {
            choice,
            label: prior.as_ref().map_or("FE".to_string(), describe_prior),
            prior,
            contrasts: cs,
            bands,
            dic: summary.dic,
            warnings: summary.diagnostics.warnings.clone(),
        });
    }
    Ok(ComparisonTable {
        likelihood: data.likelihood,
        treatment_names: (1..=data.n_treatments).map(|k| data.treatment_name(k)).collect(),
        rows,
        provenance: Provenance::new(opts, data, opts.mcmc.seed)?,
    })
}

impl ComparisonTable {
    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Json => Ok(serde_json::to_string_pretty(self)? + "\n"),
            ReportFormat::Csv => Ok(self.to_csv()),
            ReportFormat::Markdown => Ok(self.to_markdown()),
        }
    }

    fn headline(&self, c: &ContrastSummary) -> (Interval, Option<Interval>) {
        match self.likelihood {
            Likelihood::BinomialLogit => (c.ratio.unwrap_or(c.effect), c.predictive_ratio),
            Likelihood::NormalIdentity => (c.effect, c.predictive),
        }
    }

    /// One credible row per configuration plus a bold predictive row for random effects.
    pub fn to_markdown(&self) -> String {
        let measure = match self.likelihood {
            Likelihood::BinomialLogit => "OR",
            Likelihood::NormalIdentity => "Effect",
        };
        let mut out = String::from("| Model |");
        let first = self.rows.first().map(|r| r.contrasts.as_slice()).unwrap_or_default();
        for c in first {
            let _ = write!(out, " {measure}, median (95% CrI) {} |", contrast_label(&self.treatment_names, c));
        }
        out.push_str(" P_L | P_M | P_H | P_EH | DIC |\n|---|");
        for _ in first {
            out.push_str("---|");
        }
        out.push_str("---|---|---|---|---|\n");
        for row in &self.rows {
            let _ = write!(out, "| {} |", row.label);
            for c in &row.contrasts {
                let _ = write!(out, " {} |", fmt_interval(&self.headline(c).0));
            }
            let [l, m, h, e] = row.bands.as_array();
            let _ = writeln!(out, " {l:.2} | {m:.2} | {h:.2} | {e:.2} | {:.2} |", row.dic.dic);
            if row.contrasts.iter().any(|c| self.headline(c).1.is_some()) {
                out.push_str("| |");
                for c in &row.contrasts {
                    match self.headline(c).1 {
                        Some(p) => {
                            let _ = write!(out, " **{}** |", fmt_interval(&p));
                        }
                        None => out.push_str(" |"),
                    }
                }
                out.push_str(" | | | | |\n");
            }
        }
        out
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,contrast,a,b,kind,median,lower,upper,p_low,p_moderate,p_high,p_extreme,dic\n");
        for row in &self.rows {
            let [l, m, h, e] = row.bands.as_array();
            for c in &row.contrasts {
                let (cred, pred) = self.headline(c);
                let label = contrast_label(&self.treatment_names, c);
                for (kind, iv) in [("credible", Some(cred)), ("predictive", pred)] {
                    if let Some(i) = iv {
                        let _ = writeln!(
                            out,
                            "\"{}\",\"{label}\",{},{},{kind},{},{},{},{l},{m},{h},{e},{}",
                            row.label, c.a, c.b, i.median, i.lower, i.upper, row.dic.dic
                        );
                    }
                }
            }
        }
        out
    }
}
