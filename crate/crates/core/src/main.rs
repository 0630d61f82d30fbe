use std::fs;
use std::io::{self, BufRead, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;
use tauprior::elicitation::scale::{interpretation_csv, interpretation_table};
use tauprior::elicitation::session::now_ms;
use tauprior::elicitation::{
    fit_ratio, ChipAllocation, ElicitationSession, HeterogeneityPrior, Judgment, OutcomeScale, ScaleKind, Stage,
};
use tauprior::engine::{McmcConfig, ModelConfig};
use tauprior::ingest::report::{build_prior, default_scale};
use tauprior::ingest::{
    compare, resolve_dataset, run_analysis_on, AnalysisConfig, CompareOptions, PriorChoice, ReportFormat,
};
use tauprior::service::{serve, ServiceConfig};
use tauprior::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "tauprior", version, about = "Elicited heterogeneity priors and Bayesian network meta-analysis")]
struct Cli {
    /// Directory that relative output paths are resolved against.
    #[arg(long, global = true, env = "TAUPRIOR_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Walk through the three elicitation stages on the terminal.
    Elicit(ElicitArgs),
    /// Fit a ratio distribution to a chip allocation file.
    Fit(FitArgs),
    /// Run one MCMC analysis.
    Analyze(AnalyzeArgs),
    /// Print the ratio/tau interpretation table for an outcome scale.
    Table(TableArgs),
    /// Run the five-prior comparison on one dataset.
    Compare(CompareArgs),
    /// Start the local HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
struct ScaleArgs {
    /// Outcome scale: log_or, log_hr, log_rr, log_rom, mean_difference, std_mean_difference, probit.
    #[arg(long, default_value = "log_or")]
    scale: ScaleKind,
    /// Individual-level SD, required for mean differences.
    #[arg(long)]
    sigma: Option<f64>,
}

impl ScaleArgs {
    fn resolve(&self) -> Result<OutcomeScale> {
        OutcomeScale::new(self.scale, self.sigma)
    }
}

#[derive(Debug, Args)]
struct McmcArgs {
    #[arg(long, env = "TAUPRIOR_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
}

impl McmcArgs {
    fn apply(&self, mut cfg: McmcConfig) -> McmcConfig {
        cfg.seed = self.seed;
        cfg.burn_in = self.burn_in.unwrap_or(cfg.burn_in);
        cfg.keep = self.keep.unwrap_or(cfg.keep);
        cfg.thin = self.thin.unwrap_or(cfg.thin);
        cfg.chains = self.chains.unwrap_or(cfg.chains);
        cfg
    }
}

#[derive(Debug, Args)]
struct ElicitArgs {
    #[command(flatten)]
    scale: ScaleArgs,
    /// Use this chip allocation in stage 3 instead of asking for counts.
    #[arg(long)]
    chips: Option<PathBuf>,
    #[arg(long, default_value_t = 9)]
    nbins: usize,
    #[arg(long, default_value_t = 20)]
    total_chips: u32,
    /// Seed for the Monte Carlo feedback.
    #[arg(long, env = "TAUPRIOR_SEED", default_value_t = 1)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long)]
    chips: PathBuf,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    /// Analysis configuration (JSON); other flags override its MCMC settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file or bundled dataset name.
    #[arg(long, required_unless_present = "config")]
    dataset: Option<String>,
    /// fe, uniform, default, truncated or elicited.
    #[arg(long, default_value = "fe")]
    prior: String,
    /// Heterogeneity prior as JSON; implies random effects.
    #[arg(long, conflicts_with = "prior")]
    prior_file: Option<PathBuf>,
    /// Chip allocation for the elicited prior.
    #[arg(long)]
    chips: Option<PathBuf>,
    #[arg(long, default_value_t = 10.0)]
    r_max: f64,
    #[arg(long, default_value_t = 5.0)]
    uniform_upper: f64,
    /// Extra contrast `a,b` (1-based treatment indices); repeatable.
    #[arg(long = "contrast", value_parser = parse_pair)]
    contrasts: Vec<(usize, usize)>,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Write kept draws as CSV.
    #[arg(long)]
    traces: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TableArgs {
    #[command(flatten)]
    scale: ScaleArgs,
    /// csv or json.
    #[arg(long, default_value = "csv")]
    format: String,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long)]
    dataset: String,
    #[arg(long, default_value = "all")]
    priors: String,
    /// Chip allocation for the elicited row; bundled datasets default to their published prior.
    #[arg(long)]
    chips: Option<PathBuf>,
    #[command(flatten)]
    mcmc: McmcArgs,
    #[arg(long, default_value = "markdown")]
    format: ReportFormat,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8787")]
    addr: SocketAddr,
    /// Append-only session journal; sessions are kept in memory only when absent.
    #[arg(long)]
    journal: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    workers: usize,
}

fn parse_pair(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(',').ok_or("expected a,b")?;
    let a = a.trim().parse().map_err(|e| format!("{e}"))?;
    let b = b.trim().parse().map_err(|e| format!("{e}"))?;
    Ok((a, b))
}

struct Output {
    dir: Option<PathBuf>,
}

impl Output {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.dir {
            Some(d) if p.is_relative() => d.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn write(&self, target: Option<&Path>, text: &str) -> Result<()> {
        match target {
            Some(p) => {
                let p = self.path(p);
                if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    fs::create_dir_all(parent)?;
                }
                fs::write(p, text)?;
            }
            None => io::stdout().write_all(text.as_bytes())?,
        }
        Ok(())
    }
}

fn read_chips(path: &Path) -> Result<ChipAllocation> {
    ChipAllocation::from_csv(&fs::read_to_string(path)?)
}

fn run(cli: Cli) -> Result<()> {
    let out = Output { dir: cli.output_dir };
    match cli.command {
        Command::Elicit(args) => elicit(args, &out),
        Command::Fit(args) => {
            let fit = fit_ratio(&read_chips(&args.chips)?)?;
            let prior = HeterogeneityPrior::elicited(fit, OutcomeScale::log_or())?;
            let body = json!({"fit": fit, "bands": prior.exact_band_probabilities()});
            out.write(args.output.as_deref(), &(serde_json::to_string_pretty(&body)? + "\n"))
        }
        Command::Analyze(args) => analyze(args, &out),
        Command::Table(args) => {
            let rows = interpretation_table(&args.scale.resolve()?);
            let text = match args.format.as_str() {
                "csv" => interpretation_csv(&rows),
                "json" => serde_json::to_string_pretty(&rows)? + "\n",
                other => return Err(Error::Config(format!("unknown table format '{other}'"))),
            };
            out.write(None, &text)
        }
        Command::Compare(args) => {
            let data = resolve_dataset(&args.dataset)?;
            let mut opts = CompareOptions::for_fixture(&args.dataset).unwrap_or_default();
            opts.priors = PriorChoice::parse_list(&args.priors)?;
            opts.mcmc = args.mcmc.apply(McmcConfig::default());
            if let Some(path) = &args.chips {
                opts.elicited = Some(fit_ratio(&read_chips(path)?)?);
            }
            let table = compare(&data, &opts)?;
            out.write(args.output.as_deref(), &table.render(args.format)?)
        }
        Command::Serve(args) => {
            let config = ServiceConfig {
                addr: args.addr,
                journal: args.journal.map(|p| out.path(&p)),
                workers: args.workers,
                ..ServiceConfig::default()
            };
            eprintln!("listening on http://{}", config.addr);
            tokio::runtime::Runtime::new()?.block_on(serve(config))
        }
    }
}

fn analyze(args: AnalyzeArgs, out: &Output) -> Result<()> {
    let mut config: AnalysisConfig = match &args.config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => {
            let dataset = args.dataset.clone().expect("clap requires dataset without config");
            let data = resolve_dataset(&dataset)?;
            let prior = match &args.prior_file {
                Some(path) => Some(serde_json::from_str::<HeterogeneityPrior>(&fs::read_to_string(path)?)?),
                None => {
                    let choice = match PriorChoice::parse_list(&args.prior)?.as_slice() {
                        [one] => *one,
                        _ => return Err(Error::Config("--prior takes exactly one choice".into())),
                    };
                    let mut opts = CompareOptions::for_fixture(&dataset).unwrap_or_default();
                    opts.r_max = args.r_max;
                    opts.uniform_upper = args.uniform_upper;
                    if let Some(path) = &args.chips {
                        opts.elicited = Some(fit_ratio(&read_chips(path)?)?);
                    }
                    build_prior(choice, &opts, default_scale(&data)?)?
                }
            };
            AnalysisConfig {
                dataset,
                model: match prior {
                    Some(p) => ModelConfig::random_effects(p),
                    None => ModelConfig::fixed_effect(),
                },
                mcmc: McmcConfig::default(),
                contrasts: Vec::new(),
                output: None,
                format: args.format,
            }
        }
    };
    config.mcmc = args.mcmc.apply(config.mcmc.clone());
    config.contrasts.extend(args.contrasts.iter().copied());
    if args.output.is_some() {
        config.output = args.output.as_ref().map(|p| p.display().to_string());
    }
    let data = resolve_dataset(&config.dataset)?;
    let bundle = run_analysis_on(&config, &data)?;
    if let Some(path) = &args.traces {
        out.write(Some(path), &bundle.summary.traces.to_csv(&bundle.summary.treatment_names))?;
    }
    let format = if args.config.is_some() { config.format } else { args.format };
    out.write(config.output.as_deref().map(Path::new), &bundle.render(format)?)
}

struct Prompter<R> {
    input: R,
}

impl<R: BufRead> Prompter<R> {
    fn ask(&mut self, prompt: &str) -> Result<String> {
        eprint!("{prompt}\n> ");
        io::stderr().flush()?;
        let mut line = String::new();
        if self.input.read_line(&mut line)? == 0 {
            eprintln!();
            return Err(Error::State("input ended before the session was finalized".into()));
        }
        Ok(line.trim().to_string())
    }

    fn yes_no(&mut self, prompt: &str) -> Result<bool> {
        loop {
            match self.ask(&format!("{prompt} [y/n]"))?.to_ascii_lowercase().as_str() {
                "y" | "yes" => return Ok(true),
                "n" | "no" => return Ok(false),
                _ => eprintln!("please answer y or n"),
            }
        }
    }
}

fn parse_counts(line: &str, template: &ChipAllocation) -> Result<ChipAllocation> {
    let chips = line
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<u32>().map_err(|e| Error::Config(format!("'{t}': {e}"))))
        .collect::<Result<Vec<_>>>()?;
    ChipAllocation::new(template.lower, template.upper, template.nbins, chips, template.total_chips)
}

fn elicit(args: ElicitArgs, out: &Output) -> Result<()> {
    let stdin = io::stdin();
    let mut p = Prompter { input: stdin.lock() };
    let mut s = ElicitationSession::new(args.scale.resolve()?);
    let step = |s: &ElicitationSession, j: Judgment| s.apply(j, now_ms());

    while !s.is_finalized() {
        let question = s.stage.question().unwrap_or_default();
        s = match s.stage {
            Stage::Stage1 => step(&s, Judgment::CertainIdentical { certain: p.yes_no(question)? })?,
            Stage::Stage2 => {
                let answer = p.ask(&format!("{question}\n(enter R_max, or leave blank to decline)"))?;
                let r_max = if answer.is_empty() || answer.eq_ignore_ascii_case("decline") {
                    None
                } else {
                    Some(answer.parse::<f64>().map_err(|e| Error::Config(format!("R_max '{answer}': {e}")))?)
                };
                match step(&s, Judgment::MaxRatio { r_max }) {
                    Ok(next) => next,
                    Err(e) => {
                        eprintln!("{e}");
                        continue;
                    }
                }
            }
            Stage::Stage3 => {
                let template = s.chip_template(args.nbins, args.total_chips)?;
                let chips = match &args.chips {
                    Some(path) => read_chips(path)?,
                    None => {
                        let edges = template.edges();
                        let bins: Vec<String> = edges.windows(2).map(|w| format!("({:.0},{:.0}]", w[0], w[1])).collect();
                        let answer = p.ask(&format!(
                            "{question}\nbins {}\nplace {} chips (counts per bin), or leave blank to decline",
                            bins.join(" "),
                            template.total_chips
                        ))?;
                        if answer.is_empty() {
                            s = step(&s, Judgment::DeclineChips)?;
                            continue;
                        }
                        match parse_counts(&answer, &template) {
                            Ok(c) => c,
                            Err(e) => {
                                eprintln!("{e}");
                                continue;
                            }
                        }
                    }
                };
                let next = match step(&s, Judgment::Chips { chips }) {
                    Ok(next) => next,
                    Err(e) if args.chips.is_none() => {
                        eprintln!("{e}");
                        continue;
                    }
                    Err(e) => return Err(e),
                };
                let prior = next.provisional_prior().expect("fitted chips give a prior");
                let b = prior.exact_band_probabilities();
                eprintln!(
                    "implied tau bands: low {:.2}, moderate {:.2}, high {:.2}, extreme {:.2}",
                    b.p_low, b.p_moderate, b.p_high, b.p_extreme
                );
                if args.chips.is_some() || p.yes_no("accept this distribution?")? {
                    step(&next, Judgment::FinalizeElicited)?
                } else {
                    s
                }
            }
            Stage::Finalized => unreachable!(),
        };
    }
    let result = s.result.as_ref().expect("finalized");
    let body = json!({
        "endpoint": result.endpoint(),
        "model": result.model,
        "prior": result.prior,
        "session": s,
        "feedback_seed": args.seed,
    });
    out.write(args.output.as_deref(), &(serde_json::to_string_pretty(&body)? + "\n"))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let body = json!({"error": "usage", "message": e.to_string()});
            eprintln!("{body}");
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({"error": e.kind(), "message": e.to_string()});
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
