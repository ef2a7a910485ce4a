//! Command-line front end for the `rescore` library.
//!
//! Subcommands:
//! - `run` — score essays with the roundtable panel or the vanilla baseline
//! - `ablate` — sweep one pipeline axis (agents, traits, dr) over the same data
//! - `score` — compute quadratic weighted kappa for a predictions file
//! - `report` — combine finished run directories into one comparison table
//! - `validate-corpus` — check a TSV corpus and print per-prompt statistics
//!
//! Exit codes: 0 success, 1 argument/validation errors, 2 runtime failures
//! (backend or pipeline). API keys are read from environment variables named
//! in the provider config; they are never accepted as flags.

use std::io::BufRead;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use rescore::corpus::{
    corpus_stats, load_corpus, Corpus, CorpusError, Fraction, LoadOptions, PromptTable,
};
use rescore::experiment::{
    collect_run_report, render_ablation, render_report, run_ablation, run_experiment, AblationAxis,
    ExperimentError, RunOptions, RunSummary,
};
use rescore::gateway::{
    load_provider_config, Gateway, GatewayError, GatewayOptions, HttpBackend, Pricing, RetryPolicy,
    ScriptedBackend,
};
use rescore::metrics::{build_report, MetricsError, PredictedScore, QwkReport};
use rescore::pipeline::{PipelineConfig, TraitRangeMode};
use rescore::prompts::{PromptError, TemplateSet};

// ============================================================================
// Argument surface
// ============================================================================

#[derive(Parser)]
#[command(
    name = "rescore",
    version,
    about = "Multi-agent roundtable essay scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score essays with the roundtable pipeline or the vanilla baseline.
    Run(RunArgs),
    /// Sweep one pipeline axis over the same data and compare cells.
    Ablate(AblateArgs),
    /// Compute quadratic weighted kappa for an existing predictions file.
    Score(ScoreArgs),
    /// Combine finished runs into one comparison table.
    Report(ReportArgs),
    /// Check a TSV corpus and print per-prompt statistics.
    ValidateCorpus(ValidateCorpusArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Essay TSV file (essay_id, essay_set, essay, score columns).
    #[arg(long, value_name = "FILE")]
    data: PathBuf,

    /// Prompt metadata JSON replacing the built-in ASAP table.
    #[arg(long, value_name = "FILE")]
    prompt_table: Option<PathBuf>,

    /// Column holding the human score.
    #[arg(long, default_value = "domain1_score")]
    score_column: String,
}

impl DataArgs {
    fn load(&self) -> Result<Corpus, Failure> {
        let prompts = match &self.prompt_table {
            Some(path) => PromptTable::from_path(path)?,
            None => PromptTable::builtin(),
        };
        let options = LoadOptions {
            score_column: self.score_column.clone(),
            ..LoadOptions::default()
        };
        Ok(load_corpus(&self.data, &prompts, &options)?)
    }
}

#[derive(Args)]
struct BackendArgs {
    /// Directory of scripted response fixtures (offline backend).
    #[arg(long, value_name = "DIR", conflicts_with = "provider_config")]
    mock: Option<PathBuf>,

    /// Provider profile JSON for live HTTP backends. API keys come from the
    /// environment variable each profile names, never from flags.
    #[arg(long, value_name = "FILE")]
    provider_config: Option<PathBuf>,

    /// Profile to pick from the provider config (default: the first).
    #[arg(long, requires = "provider_config")]
    provider: Option<String>,

    /// Cache responses under <out>/cache (default for live backends).
    #[arg(long, overrides_with = "no_cache")]
    cache: bool,

    /// Disable the response cache.
    #[arg(long, overrides_with = "cache")]
    no_cache: bool,
}

impl BackendArgs {
    /// Builds one gateway. `out` anchors the cache directory.
    fn build_gateway(&self, out: &Path, jobs: usize) -> Result<(Gateway, String), Failure> {
        match (&self.mock, &self.provider_config) {
            (Some(dir), None) => {
                let cache_dir = self.cache.then(|| out.join("cache"));
                let options = GatewayOptions {
                    retry: RetryPolicy::default(),
                    pricing: Pricing::FREE,
                    cache_dir,
                    max_in_flight: jobs.max(1),
                };
                let gateway = Gateway::new(Box::new(ScriptedBackend::new(dir)), options);
                Ok((gateway, "scripted".to_string()))
            }
            (None, Some(path)) => {
                let config = load_provider_config(path)?;
                let profile = config.profile(self.provider.as_deref())?.clone();
                let provider_id = profile.provider_id.clone();
                let cache_dir = (!self.no_cache).then(|| out.join("cache"));
                let options = GatewayOptions {
                    retry: RetryPolicy {
                        max_retries: profile.max_retries,
                        backoff_base: profile.backoff_base,
                    },
                    pricing: profile.pricing,
                    cache_dir,
                    max_in_flight: jobs.max(1),
                };
                let gateway = Gateway::new(Box::new(HttpBackend::new(profile)?), options);
                Ok((gateway, provider_id))
            }
            (None, None) => Err(Failure::usage(anyhow::anyhow!(
                "choose a backend: --mock <dir> for scripted fixtures or \
                 --provider-config <file> for live calls"
            ))),
            (Some(_), Some(_)) => unreachable!("clap rejects the combination"),
        }
    }
}

#[derive(Args)]
struct PipelineArgs {
    /// Scoring method.
    #[arg(long, value_enum, default_value_t = MethodArg::Res)]
    method: MethodArg,

    /// Panel size for the roundtable method.
    #[arg(long, default_value_t = 4)]
    n_agents: usize,

    /// Traits each persona defines and scores.
    #[arg(long, default_value_t = 3)]
    n_traits: usize,

    /// Skip the roundtable synthesis and aggregate trait scores directly.
    #[arg(long)]
    no_dr: bool,

    /// Model identifier sent to the backend.
    #[arg(long, default_value = "gpt-4.1-mini")]
    model: String,

    /// Sampling temperature.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,

    /// Fix every persona rubric to this trait score range instead of the
    /// prompt's holistic range.
    #[arg(long, value_name = "MIN:MAX", value_parser = parse_trait_range)]
    trait_range: Option<(i32, i32)>,

    /// Directory of instruction templates overriding the built-in set.
    #[arg(long, value_name = "DIR")]
    templates: Option<PathBuf>,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig, Failure> {
        if self.no_dr && self.method == MethodArg::Vanilla {
            return Err(Failure::usage(anyhow::anyhow!(
                "--no-dr only applies to --method res"
            )));
        }
        let mut config = PipelineConfig {
            n_agents: self.n_agents,
            n_traits_per_agent: self.n_traits,
            dr_enabled: !self.no_dr,
            model_id: self.model.clone(),
            temperature: self.temperature,
            ..PipelineConfig::default()
        };
        if let Some((min, max)) = self.trait_range {
            config.trait_range_mode = TraitRangeMode::Fixed { min, max };
        }
        config.validate().map_err(|e| Failure {
            code: 1,
            error: e.into(),
        })?;
        Ok(config)
    }

    fn templates(&self) -> Result<TemplateSet, Failure> {
        Ok(match &self.templates {
            Some(dir) => TemplateSet::from_dir(dir)?,
            None => TemplateSet::builtin(),
        })
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Res,
    Vanilla,
}

fn parse_trait_range(raw: &str) -> Result<(i32, i32), String> {
    let (lo, hi) = raw
        .split_once(':')
        .ok_or_else(|| format!("expected MIN:MAX, got {raw:?}"))?;
    let min: i32 = lo
        .trim()
        .parse()
        .map_err(|_| format!("bad MIN in {raw:?}"))?;
    let max: i32 = hi
        .trim()
        .parse()
        .map_err(|_| format!("bad MAX in {raw:?}"))?;
    if min >= max {
        return Err(format!("MIN must be below MAX, got {raw:?}"));
    }
    Ok((min, max))
}

#[derive(Args)]
struct SelectionArgs {
    /// Fraction of each prompt's essays to score, e.g. 0.1.
    #[arg(long, default_value = "1")]
    fraction: String,

    /// Seed for the per-prompt subsample.
    #[arg(long, default_value_t = 42)]
    seed: u64,

    /// Restrict to these prompt ids (comma-separated).
    #[arg(long, value_delimiter = ',', value_name = "IDS")]
    prompt_ids: Option<Vec<u32>>,

    /// Concurrent scoring workers.
    #[arg(long, default_value_t = 4)]
    jobs: usize,

    /// Stop after this many essays; rerun the same command to resume.
    #[arg(long)]
    max_essays: Option<usize>,
}

impl SelectionArgs {
    fn fraction(&self) -> Result<Fraction, Failure> {
        Ok(Fraction::parse(&self.fraction)?)
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    selection: SelectionArgs,

    /// Output directory for the run.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    backend: BackendArgs,
    #[command(flatten)]
    pipeline: PipelineArgs,
    #[command(flatten)]
    selection: SelectionArgs,

    /// Output directory; each cell becomes a subdirectory.
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Axis to sweep.
    #[arg(long, value_enum)]
    axis: AxisArg,

    /// Cell values for the agents/traits axes (comma-separated). The traits
    /// axis counts total traits across the panel.
    #[arg(long, value_delimiter = ',')]
    values: Option<Vec<usize>>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    /// Panel sizes.
    Agents,
    /// Total trait counts across the panel.
    Traits,
    /// Roundtable on vs off.
    Dr,
}

#[derive(Args)]
struct ScoreArgs {
    /// Predictions JSONL (objects with essay_id and prediction), or a run
    /// directory containing predictions.jsonl.
    #[arg(long, value_name = "PATH")]
    predictions: PathBuf,

    #[command(flatten)]
    data: DataArgs,

    /// Write the per-prompt table as CSV to this file.
    #[arg(long, value_name = "FILE")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directories to combine (space- or comma-separated).
    #[arg(long, num_args = 1.., value_delimiter = ',', value_name = "DIRS", required = true)]
    runs: Vec<PathBuf>,

    #[command(flatten)]
    data: DataArgs,

    /// Write report.txt and report.csv into this directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateCorpusArgs {
    #[command(flatten)]
    data: DataArgs,
}

// ============================================================================
// Failure plumbing
// ============================================================================

/// An error plus the exit code it maps to: 1 for argument/validation
/// problems, 2 for runtime failures.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn usage(error: anyhow::Error) -> Self {
        Failure { code: 1, error }
    }

    fn runtime(error: anyhow::Error) -> Self {
        Failure { code: 2, error }
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        Failure::usage(e.into())
    }
}

impl From<MetricsError> for Failure {
    fn from(e: MetricsError) -> Self {
        Failure::usage(e.into())
    }
}

impl From<PromptError> for Failure {
    fn from(e: PromptError) -> Self {
        Failure::usage(e.into())
    }
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        match e {
            GatewayError::Config { .. } => Failure::usage(e.into()),
            _ => Failure::runtime(e.into()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config { .. }
            | ExperimentError::ManifestMismatch { .. }
            | ExperimentError::Corpus(_)
            | ExperimentError::Metrics(_) => Failure::usage(e.into()),
            ExperimentError::Gateway(GatewayError::Config { .. }) => Failure::usage(e.into()),
            _ => Failure::runtime(e.into()),
        }
    }
}

// ============================================================================
// Entry point
// ============================================================================

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };

    let result = match cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Score(args) => cmd_score(args),
        Command::Report(args) => cmd_report(args),
        Command::ValidateCorpus(args) => cmd_validate_corpus(args),
    };

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {:#}", failure.error);
            ExitCode::from(failure.code)
        }
    }
}

// ============================================================================
// Subcommands
// ============================================================================

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let corpus = args.data.load()?;
    let templates = args.pipeline.templates()?;
    let (gateway, provider_id) = args.backend.build_gateway(&args.out, args.selection.jobs)?;

    let options = RunOptions {
        pipeline: args.pipeline.config()?,
        vanilla: args.pipeline.method == MethodArg::Vanilla,
        fraction: args.selection.fraction()?,
        seed: args.selection.seed,
        prompt_ids: args.selection.prompt_ids.clone(),
        jobs: args.selection.jobs,
        max_essays: args.selection.max_essays,
        provider_id,
    };

    let summary = run_experiment(&corpus, &options, &gateway, &templates, &args.out)?;
    print_run_summary(&summary);

    if summary.failed > 0 {
        return Err(Failure::runtime(anyhow::anyhow!(
            "{} essays failed; rerun the same command to retry them",
            summary.failed
        )));
    }
    Ok(())
}

fn print_run_summary(summary: &RunSummary) {
    println!("run {} -> {}", summary.run_id, summary.out_dir.display());
    println!(
        "planned {} essays ({} already done), scored {}, failed {}",
        summary.planned, summary.already_done, summary.scored, summary.failed
    );
    let usage = summary.usage;
    println!(
        "requests {}, tokens {} prompt / {} completion",
        usage.requests, usage.prompt_tokens, usage.completion_tokens
    );
    let scored = summary.scored.max(1) as f64;
    println!(
        "cost {} total (${:.4}/essay), mean latency {:.1} ms/essay",
        usage.cost_micro_usd,
        usage.cost_micro_usd.as_usd() / scored,
        usage.latency_ms as f64 / scored
    );
    for failure in &summary.failures {
        eprintln!(
            "essay {} (prompt {}): {}",
            failure.essay_id, failure.prompt_id, failure.error
        );
    }
}

fn cmd_ablate(args: AblateArgs) -> Result<(), Failure> {
    let corpus = args.data.load()?;
    let templates = args.pipeline.templates()?;

    let axis = match args.axis {
        AxisArg::Agents | AxisArg::Traits => {
            let values = args
                .values
                .clone()
                .filter(|v| !v.is_empty())
                .ok_or_else(|| {
                    Failure::usage(anyhow::anyhow!("--axis {} needs --values", {
                        match args.axis {
                            AxisArg::Agents => "agents",
                            _ => "traits",
                        }
                    }))
                })?;
            match args.axis {
                AxisArg::Agents => AblationAxis::Agents(values),
                _ => AblationAxis::TraitsTotal(values),
            }
        }
        AxisArg::Dr => {
            if args.values.is_some() {
                return Err(Failure::usage(anyhow::anyhow!(
                    "--axis dr does not take --values"
                )));
            }
            AblationAxis::Dr
        }
    };

    // Each cell needs its own gateway: request tags repeat across cells.
    let backend = &args.backend;
    let out = args.out.clone();
    let jobs = args.selection.jobs;
    let (_, provider_id) = backend.build_gateway(&out, jobs)?;

    let base = RunOptions {
        pipeline: args.pipeline.config()?,
        vanilla: args.pipeline.method == MethodArg::Vanilla,
        fraction: args.selection.fraction()?,
        seed: args.selection.seed,
        prompt_ids: args.selection.prompt_ids.clone(),
        jobs: args.selection.jobs,
        max_essays: args.selection.max_essays,
        provider_id,
    };
    let make_gateway = move || -> Result<Gateway, ExperimentError> {
        backend
            .build_gateway(&out, jobs)
            .map(|(gateway, _)| gateway)
            .map_err(|failure| ExperimentError::Config {
                detail: format!("{:#}", failure.error),
            })
    };

    let cells = run_ablation(&corpus, &base, &axis, &make_gateway, &templates, &args.out)?;
    let (text, csv) = render_ablation(&cells);
    print!("{text}");
    write_text(&args.out.join("ablation.txt"), &text)?;
    write_text(&args.out.join("ablation.csv"), &csv)?;

    let failed: usize = cells.iter().map(|c| c.summary.failed).sum();
    if failed > 0 {
        return Err(Failure::runtime(anyhow::anyhow!(
            "{failed} essays failed across cells; rerun to retry them"
        )));
    }
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), Failure> {
    let corpus = args.data.load()?;
    let path = if args.predictions.is_dir() {
        args.predictions.join("predictions.jsonl")
    } else {
        args.predictions.clone()
    };
    let pairs = read_prediction_pairs(&path)?;
    let report = build_report(&pairs, &corpus)?;

    print!("{}", render_score_table(&report));
    if let Some(out) = &args.out {
        write_text(out, &render_score_csv(&report))?;
    }
    Ok(())
}

fn read_prediction_pairs(path: &Path) -> Result<Vec<PredictedScore>, Failure> {
    let file = std::fs::File::open(path)
        .with_context(|| format!("open {}", path.display()))
        .map_err(Failure::usage)?;
    let mut pairs = Vec::new();
    for (idx, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line
            .with_context(|| format!("read {}", path.display()))
            .map_err(Failure::runtime)?;
        if line.trim().is_empty() {
            continue;
        }
        let bad_line = || {
            Failure::usage(anyhow::anyhow!(
                "{}:{}: expected an object with integer essay_id and prediction",
                path.display(),
                idx + 1
            ))
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(|_| bad_line())?;
        let essay_id = value.get("essay_id").and_then(|v| v.as_u64());
        let prediction = value
            .get("prediction")
            .and_then(|v| v.as_i64())
            .and_then(|v| i32::try_from(v).ok());
        match (essay_id, prediction) {
            (Some(essay_id), Some(prediction)) => pairs.push(PredictedScore {
                essay_id,
                prediction,
            }),
            _ => return Err(bad_line()),
        }
    }
    if pairs.is_empty() {
        return Err(Failure::usage(anyhow::anyhow!(
            "{} holds no predictions",
            path.display()
        )));
    }
    Ok(pairs)
}

fn render_score_table(report: &QwkReport) -> String {
    let mut out = String::new();
    out.push_str("prompt  essays  qwk\n");
    let mut any_degenerate = false;
    for row in &report.per_prompt {
        any_degenerate |= row.degenerate;
        out.push_str(&format!(
            "{:<6}  {:<6}  {:.3}{}\n",
            row.prompt_id,
            row.n,
            row.kappa,
            if row.degenerate { " *" } else { "" }
        ));
    }
    let essays: usize = report.per_prompt.iter().map(|r| r.n).sum();
    out.push_str(&format!(
        "macro average over {} prompts ({} essays): {:.3}\n",
        report.per_prompt.len(),
        essays,
        report.macro_average
    ));
    if any_degenerate {
        out.push_str("* both raters constant; agreement is defined as 1.0\n");
    }
    out
}

fn render_score_csv(report: &QwkReport) -> String {
    let mut out = String::from("prompt_id,essays,qwk,degenerate\n");
    for row in &report.per_prompt {
        out.push_str(&format!(
            "{},{},{:.6},{}\n",
            row.prompt_id, row.n, row.kappa, row.degenerate
        ));
    }
    out.push_str(&format!(
        "macro,{},{:.6},\n",
        report.per_prompt.iter().map(|r| r.n).sum::<usize>(),
        report.macro_average
    ));
    out
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let corpus = args.data.load()?;
    let mut rows = Vec::new();
    for run_dir in &args.runs {
        rows.push(collect_run_report(run_dir, &corpus)?);
    }
    let (text, csv) = render_report(&rows);
    print!("{text}");
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out)
            .with_context(|| format!("create {}", out.display()))
            .map_err(Failure::runtime)?;
        write_text(&out.join("report.txt"), &text)?;
        write_text(&out.join("report.csv"), &csv)?;
    }
    Ok(())
}

fn cmd_validate_corpus(args: ValidateCorpusArgs) -> Result<(), Failure> {
    let corpus = args.data.load()?;
    let stats = corpus_stats(&corpus);

    println!("prompt  genre  range  essays  expected  mean_words");
    let mut total: u64 = 0;
    for row in &stats {
        total += row.count;
        println!(
            "{:<6}  {:<5}  {:<5}  {:<6}  {:<8}  {}",
            row.prompt_id,
            format!("{:?}", row.genre),
            format!("{}-{}", row.min_score, row.max_score),
            row.count,
            row.expected_count
                .map(|n| n.to_string())
                .unwrap_or_else(|| "-".into()),
            row.mean_length
                .map(|n| n.to_string())
                .unwrap_or_else(|| "-".into()),
        );
    }
    println!("total {} essays across {} prompts: OK", total, stats.len());
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text)
        .with_context(|| format!("write {}", path.display()))
        .map_err(Failure::runtime)
}
