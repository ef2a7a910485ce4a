//! Batch experiment runner: deterministic, resumable, parallel.
//!
//! A run turns a corpus subset into an output directory:
//!
//! ```text
//! <out>/
//!   manifest.json        the full run configuration and its run id
//!   predictions.jsonl    one record per scored essay (the commit point)
//!   ledger.jsonl         one usage record per successful model call
//!   audit.jsonl          one record per model call, success or failure
//!   artifacts/<id>.json  personas, rubrics, evaluations, roundtable
//! ```
//!
//! Determinism: the run id is a digest of the configuration, essays are
//! processed from a canonically ordered worklist, and a reorder buffer
//! persists results in worklist order no matter how many worker threads ran
//! them — so every output file is byte-identical across repeated runs and
//! across `--jobs` settings (given a deterministic backend).
//!
//! Resumability: `predictions.jsonl` is the ledger of finished essays. A
//! re-run with the same configuration skips them and continues appending;
//! essays that previously failed are retried. A torn trailing line (from a
//! crash mid-write) is truncated away. A re-run with a *different*
//! configuration against the same directory is refused with a field-level
//! diff.

pub mod report;

pub use report::{collect_run_report, render_ablation, render_report, RunReportRow};

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{sample_eval_subset, Corpus, CorpusError, EssayRecord, Fraction};
use crate::gateway::{CallRecord, Gateway, GatewayError, UsageRollup};
use crate::metrics::MetricsError;
use crate::pipeline::{
    EssayRunOutcome, Pipeline, PipelineConfig, PipelineError, ScoringMethod, TraitRangeMode,
};
use crate::prompts::TemplateSet;

// ============================================================================
// Errors
// ============================================================================

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("output directory belongs to a different run configuration: {}", diffs.join("; "))]
    ManifestMismatch { diffs: Vec<String> },
    #[error("run state is corrupt: {detail}")]
    CorruptState { detail: String },
    #[error("invalid experiment configuration: {detail}")]
    Config { detail: String },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

fn io_err(context: impl Into<String>, source: std::io::Error) -> ExperimentError {
    ExperimentError::Io {
        context: context.into(),
        source,
    }
}

// ============================================================================
// Run configuration
// ============================================================================

/// Everything a run needs besides the corpus and the gateway.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub pipeline: PipelineConfig,
    /// Score with the single-call baseline instead of the panel pipeline.
    pub vanilla: bool,
    pub fraction: Fraction,
    pub seed: u64,
    /// Restrict the run to these prompts; `None` means every prompt present.
    pub prompt_ids: Option<Vec<u32>>,
    /// Worker threads scoring essays concurrently.
    pub jobs: usize,
    /// Stop after scoring this many essays in this invocation. A runtime
    /// limiter only — it does not change the run's identity.
    pub max_essays: Option<usize>,
    pub provider_id: String,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            vanilla: false,
            fraction: Fraction::ONE,
            seed: 42,
            prompt_ids: None,
            jobs: 4,
            max_essays: None,
            provider_id: "scripted".into(),
        }
    }
}

impl RunOptions {
    pub fn method(&self) -> ScoringMethod {
        self.pipeline.method(self.vanilla)
    }
}

/// The persisted identity of a run. Two runs with equal manifests (apart
/// from `created_at`) produce byte-identical outputs on a deterministic
/// backend; their shared digest is the `run_id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub created_at: String,
    pub method: ScoringMethod,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub repair_reprompts: u32,
    pub n_agents: usize,
    pub n_traits_per_agent: usize,
    pub dr_enabled: bool,
    pub trait_range_mode: TraitRangeMode,
    pub fraction: String,
    pub seed: u64,
    pub prompt_ids: Vec<u32>,
    pub planned_essays: usize,
    pub template_checksum: String,
    pub provider_id: String,
}

impl RunManifest {
    fn build(
        options: &RunOptions,
        prompt_ids: Vec<u32>,
        planned_essays: usize,
        template_checksum: String,
    ) -> Self {
        let p = &options.pipeline;
        let mut manifest = Self {
            run_id: String::new(),
            created_at: chrono::Utc::now().to_rfc3339(),
            method: options.method(),
            model_id: p.model_id.clone(),
            temperature: p.temperature,
            max_output_tokens: p.max_output_tokens,
            repair_reprompts: p.repair_reprompts,
            n_agents: p.n_agents,
            n_traits_per_agent: p.n_traits_per_agent,
            dr_enabled: p.dr_enabled,
            trait_range_mode: p.trait_range_mode,
            fraction: options.fraction.to_string(),
            seed: options.seed,
            prompt_ids,
            planned_essays,
            template_checksum,
            provider_id: options.provider_id.clone(),
        };
        manifest.run_id = manifest.fingerprint();
        manifest
    }

    /// Digest of every identity-bearing field; `created_at` is a timestamp,
    /// not identity, and `run_id` is the digest itself.
    fn fingerprint(&self) -> String {
        let mut value = serde_json::to_value(self).expect("manifest serializes");
        let obj = value.as_object_mut().expect("manifest is an object");
        obj.remove("run_id");
        obj.remove("created_at");
        let canonical = serde_json::to_string(&value).expect("manifest serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex::encode(hasher.finalize())[..12].to_string()
    }

    /// Field-level differences between two manifests, ignoring `created_at`.
    /// Empty means the runs are interchangeable.
    pub fn diff(&self, other: &RunManifest) -> Vec<String> {
        let a = serde_json::to_value(self).expect("manifest serializes");
        let b = serde_json::to_value(other).expect("manifest serializes");
        let (a, b) = (a.as_object().unwrap(), b.as_object().unwrap());
        let mut diffs = Vec::new();
        for (key, existing) in a {
            if key == "created_at" {
                continue;
            }
            let incoming = &b[key];
            if existing != incoming {
                diffs.push(format!("{key}: {existing} != {incoming}"));
            }
        }
        diffs
    }
}

// ============================================================================
// Persisted records
// ============================================================================

/// One line of `predictions.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub run_id: String,
    pub essay_id: u64,
    pub prompt_id: u32,
    pub method: ScoringMethod,
    pub prediction: i32,
    pub holistic_raw: f64,
    /// Path of the artifact bundle, relative to the run directory.
    pub artifacts: String,
    pub usage: UsageRollup,
}

/// One line of `audit.jsonl`: a call record with its global sequence number.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub call: CallRecord,
}

/// One essay the run could not score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureReport {
    pub essay_id: u64,
    pub prompt_id: u32,
    pub error: String,
}

/// What one invocation accomplished.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_id: String,
    pub out_dir: PathBuf,
    /// Essays the full run covers.
    pub planned: usize,
    /// Already present from earlier invocations and skipped.
    pub already_done: usize,
    /// Newly scored now.
    pub scored: usize,
    pub failed: usize,
    /// Usage across this invocation's calls.
    pub usage: UsageRollup,
    pub failures: Vec<FailureReport>,
}

// ============================================================================
// State files
// ============================================================================

fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), ExperimentError> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(|e| io_err(format!("write {}", tmp.display()), e))?;
    std::fs::rename(&tmp, path).map_err(|e| io_err(format!("rename to {}", path.display()), e))
}

/// Drops a torn trailing line (no final newline) and returns the number of
/// complete lines. Missing file counts as zero lines.
fn truncate_to_complete_lines(path: &Path) -> Result<u64, ExperimentError> {
    let raw = match std::fs::read(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(0),
        Err(e) => return Err(io_err(format!("read {}", path.display()), e)),
    };
    let complete_len = match raw.iter().rposition(|&b| b == b'\n') {
        Some(last_newline) => last_newline + 1,
        None => 0,
    };
    if complete_len < raw.len() {
        let file = std::fs::OpenOptions::new()
            .write(true)
            .open(path)
            .map_err(|e| io_err(format!("open {}", path.display()), e))?;
        file.set_len(complete_len as u64)
            .map_err(|e| io_err(format!("truncate {}", path.display()), e))?;
    }
    Ok(raw[..complete_len].iter().filter(|&&b| b == b'\n').count() as u64)
}

/// Reads the set of already-scored essays from `predictions.jsonl`,
/// verifying every record belongs to this run.
fn load_done(path: &Path, run_id: &str) -> Result<BTreeSet<u64>, ExperimentError> {
    truncate_to_complete_lines(path)?;
    let raw = match std::fs::read_to_string(path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(BTreeSet::new()),
        Err(e) => return Err(io_err(format!("read {}", path.display()), e)),
    };
    let mut done = BTreeSet::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(line).map_err(|e| ExperimentError::CorruptState {
                detail: format!(
                    "{} line {}: unparseable prediction: {e}",
                    path.display(),
                    lineno + 1
                ),
            })?;
        if record.run_id != run_id {
            return Err(ExperimentError::CorruptState {
                detail: format!(
                    "{} line {}: run_id {} does not match manifest run_id {run_id}",
                    path.display(),
                    lineno + 1,
                    record.run_id
                ),
            });
        }
        if !done.insert(record.essay_id) {
            return Err(ExperimentError::CorruptState {
                detail: format!(
                    "{} line {}: essay {} recorded twice",
                    path.display(),
                    lineno + 1,
                    record.essay_id
                ),
            });
        }
    }
    Ok(done)
}

/// Reads every prediction in a run directory (tolerating a torn trailing
/// line, which is skipped).
pub fn load_predictions(run_dir: &Path) -> Result<Vec<PredictionRecord>, ExperimentError> {
    let path = run_dir.join("predictions.jsonl");
    let raw = match std::fs::read_to_string(&path) {
        Ok(raw) => raw,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(format!("read {}", path.display()), e)),
    };
    let mut records = Vec::new();
    let mut lines = raw.split_inclusive('\n').peekable();
    while let Some(line) = lines.next() {
        let is_last = lines.peek().is_none();
        let body = line.trim_end_matches('\n');
        if body.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<PredictionRecord>(body) {
            Ok(record) => records.push(record),
            Err(_) if is_last && !line.ends_with('\n') => break,
            Err(e) => {
                return Err(ExperimentError::CorruptState {
                    detail: format!("{}: unparseable prediction: {e}", path.display()),
                })
            }
        }
    }
    Ok(records)
}

/// Reads a run directory's manifest.
pub fn load_manifest(run_dir: &Path) -> Result<RunManifest, ExperimentError> {
    let path = run_dir.join("manifest.json");
    let raw = std::fs::read_to_string(&path)
        .map_err(|e| io_err(format!("read {}", path.display()), e))?;
    serde_json::from_str(&raw).map_err(|e| ExperimentError::CorruptState {
        detail: format!("{}: unparseable manifest: {e}", path.display()),
    })
}

// ============================================================================
// The runner
// ============================================================================

struct Persister {
    run_id: String,
    out_dir: PathBuf,
    predictions: std::fs::File,
    ledger: std::fs::File,
    audit: std::fs::File,
    next_seq: u64,
    scored: usize,
    failed: usize,
    usage: UsageRollup,
    failures: Vec<FailureReport>,
}

impl Persister {
    fn append_line<T: Serialize>(
        file: &mut std::fs::File,
        what: &str,
        record: &T,
    ) -> Result<(), ExperimentError> {
        let mut line = serde_json::to_vec(record).expect("record serializes");
        line.push(b'\n');
        file.write_all(&line)
            .map_err(|e| io_err(format!("append {what}"), e))?;
        file.flush().map_err(|e| io_err(format!("flush {what}"), e))
    }

    /// Writes one essay's complete block: artifacts, then per-call ledger
    /// and audit lines, then the prediction line as the commit point.
    fn persist(&mut self, outcome: &EssayRunOutcome) -> Result<(), ExperimentError> {
        let essay_usage = outcome.usage();
        self.usage.merge(&essay_usage);

        if let Ok(scored) = &outcome.result {
            let artifact_rel = format!("artifacts/{}.json", outcome.essay_id);
            let mut body =
                serde_json::to_vec_pretty(&scored.artifacts).expect("artifacts serialize");
            body.push(b'\n');
            atomic_write(&self.out_dir.join(&artifact_rel), &body)?;

            for call in &outcome.calls {
                if let Some(usage) = call.usage() {
                    Self::append_line(&mut self.ledger, "ledger.jsonl", &usage)?;
                }
            }
            for call in &outcome.calls {
                let record = AuditRecord {
                    seq: self.next_seq,
                    call: call.clone(),
                };
                Self::append_line(&mut self.audit, "audit.jsonl", &record)?;
                self.next_seq += 1;
            }

            let prediction = PredictionRecord {
                run_id: self.run_id.clone(),
                essay_id: outcome.essay_id,
                prompt_id: outcome.prompt_id,
                method: scored.method,
                prediction: scored.prediction,
                holistic_raw: scored.holistic_raw,
                artifacts: artifact_rel,
                usage: essay_usage,
            };
            Self::append_line(&mut self.predictions, "predictions.jsonl", &prediction)?;
            self.scored += 1;
        } else {
            for call in &outcome.calls {
                if let Some(usage) = call.usage() {
                    Self::append_line(&mut self.ledger, "ledger.jsonl", &usage)?;
                }
            }
            for call in &outcome.calls {
                let record = AuditRecord {
                    seq: self.next_seq,
                    call: call.clone(),
                };
                Self::append_line(&mut self.audit, "audit.jsonl", &record)?;
                self.next_seq += 1;
            }
            let error = outcome.result.as_ref().unwrap_err();
            self.failures.push(FailureReport {
                essay_id: outcome.essay_id,
                prompt_id: outcome.prompt_id,
                error: error.to_string(),
            });
            self.failed += 1;
        }
        Ok(())
    }
}

/// Runs (or resumes) an experiment into `out_dir`.
pub fn run_experiment(
    corpus: &Corpus,
    options: &RunOptions,
    gateway: &Gateway,
    templates: &TemplateSet,
    out_dir: &Path,
) -> Result<RunSummary, ExperimentError> {
    let method = options.method();
    let pipeline = Pipeline::new(gateway, templates, options.pipeline.clone())?;

    // ---- Plan the worklist -------------------------------------------------
    let mut split = sample_eval_subset(corpus, options.fraction, options.seed);
    if let Some(ids) = &options.prompt_ids {
        let wanted: BTreeSet<u32> = ids.iter().copied().collect();
        for &id in &wanted {
            if corpus.prompts.get(id).is_none() {
                return Err(ExperimentError::Config {
                    detail: format!("prompt {id} is not in the prompt table"),
                });
            }
        }
        split.records.retain(|r| wanted.contains(&r.prompt_id));
    }
    let worklist = split.records;
    if worklist.is_empty() {
        return Err(ExperimentError::Config {
            detail: "worklist is empty: no essays match the prompts and fraction".into(),
        });
    }
    let resolved_prompt_ids: Vec<u32> = worklist
        .iter()
        .map(|r| r.prompt_id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();

    // ---- Establish the run directory --------------------------------------
    std::fs::create_dir_all(out_dir.join("artifacts"))
        .map_err(|e| io_err(format!("create {}", out_dir.display()), e))?;
    let manifest = RunManifest::build(
        options,
        resolved_prompt_ids,
        worklist.len(),
        templates.checksum(),
    );
    let manifest_path = out_dir.join("manifest.json");
    if manifest_path.exists() {
        let existing = load_manifest(out_dir)?;
        let diffs = existing.diff(&manifest);
        if !diffs.is_empty() {
            return Err(ExperimentError::ManifestMismatch { diffs });
        }
    } else {
        let mut body = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        body.push(b'\n');
        atomic_write(&manifest_path, &body)?;
    }
    let run_id = manifest.run_id.clone();

    // ---- Resume state ------------------------------------------------------
    let predictions_path = out_dir.join("predictions.jsonl");
    let ledger_path = out_dir.join("ledger.jsonl");
    let audit_path = out_dir.join("audit.jsonl");
    let done = load_done(&predictions_path, &run_id)?;
    truncate_to_complete_lines(&ledger_path)?;
    let next_seq = truncate_to_complete_lines(&audit_path)?;

    let remaining: Vec<&EssayRecord> = worklist
        .iter()
        .filter(|r| !done.contains(&r.essay_id))
        .collect();
    let capped: Vec<&EssayRecord> = match options.max_essays {
        Some(n) => remaining.into_iter().take(n).collect(),
        None => remaining,
    };

    let open_append = |path: &Path| {
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_err(format!("open {}", path.display()), e))
    };
    let mut persister = Persister {
        run_id: run_id.clone(),
        out_dir: out_dir.to_path_buf(),
        predictions: open_append(&predictions_path)?,
        ledger: open_append(&ledger_path)?,
        audit: open_append(&audit_path)?,
        next_seq,
        scored: 0,
        failed: 0,
        usage: UsageRollup::default(),
        failures: Vec::new(),
    };

    // ---- Score, in parallel, persisting in worklist order ------------------
    let cursor = AtomicUsize::new(0);
    let jobs = options.jobs.max(1).min(capped.len().max(1));
    let (tx, rx) = mpsc::channel::<(usize, EssayRunOutcome)>();

    std::thread::scope(|scope| -> Result<(), ExperimentError> {
        for _ in 0..jobs {
            let tx = tx.clone();
            let cursor = &cursor;
            let capped = &capped;
            let pipeline = &pipeline;
            let prompts = &corpus.prompts;
            scope.spawn(move || loop {
                let idx = cursor.fetch_add(1, Ordering::SeqCst);
                if idx >= capped.len() {
                    break;
                }
                let essay = capped[idx];
                let spec = prompts
                    .get(essay.prompt_id)
                    .expect("worklist prompts were validated at load");
                let outcome = pipeline.score_essay(essay, spec, method);
                if tx.send((idx, outcome)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder buffer: essays finish in any order; blocks are written in
        // worklist order so output files are independent of scheduling.
        let mut pending: BTreeMap<usize, EssayRunOutcome> = BTreeMap::new();
        let mut next_idx = 0usize;
        for (idx, outcome) in rx {
            pending.insert(idx, outcome);
            while let Some(ready) = pending.remove(&next_idx) {
                persister.persist(&ready)?;
                next_idx += 1;
            }
        }
        debug_assert!(pending.is_empty(), "all finished essays were persisted");
        Ok(())
    })?;

    Ok(RunSummary {
        run_id,
        out_dir: out_dir.to_path_buf(),
        planned: worklist.len(),
        already_done: done.len(),
        scored: persister.scored,
        failed: persister.failed,
        usage: persister.usage,
        failures: persister.failures,
    })
}

// ============================================================================
// Ablation
// ============================================================================

/// Which configuration dimension an ablation sweeps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AblationAxis {
    /// Panel sizes to try.
    Agents(Vec<usize>),
    /// Total trait counts across the panel; each must divide evenly among
    /// the base configuration's agents.
    TraitsTotal(Vec<usize>),
    /// Roundtable on vs. off.
    Dr,
}

/// One completed ablation cell.
#[derive(Debug, Clone)]
pub struct AblationCell {
    pub label: String,
    pub n_agents: usize,
    pub n_traits_per_agent: usize,
    pub dr_enabled: bool,
    pub method: ScoringMethod,
    pub summary: RunSummary,
    /// Macro-averaged agreement with human scores; absent if nothing scored.
    pub macro_qwk: Option<f64>,
}

/// Runs one configuration per cell of `axis`, each into
/// `<out_root>/<label>/`, and measures each cell against human scores.
/// Cells need fresh gateways (request tags repeat across cells), hence the
/// factory.
pub fn run_ablation(
    corpus: &Corpus,
    base: &RunOptions,
    axis: &AblationAxis,
    make_gateway: &dyn Fn() -> Result<Gateway, ExperimentError>,
    templates: &TemplateSet,
    out_root: &Path,
) -> Result<Vec<AblationCell>, ExperimentError> {
    let mut cells: Vec<(String, PipelineConfig)> = Vec::new();
    match axis {
        AblationAxis::Agents(counts) => {
            if counts.is_empty() {
                return Err(ExperimentError::Config {
                    detail: "agents ablation needs at least one panel size".into(),
                });
            }
            for &n in counts {
                let config = PipelineConfig {
                    n_agents: n,
                    ..base.pipeline.clone()
                };
                cells.push((format!("agents_{n}"), config));
            }
        }
        AblationAxis::TraitsTotal(totals) => {
            if totals.is_empty() {
                return Err(ExperimentError::Config {
                    detail: "traits ablation needs at least one trait total".into(),
                });
            }
            for &total in totals {
                let n_agents = base.pipeline.n_agents;
                if total == 0 || total % n_agents != 0 {
                    return Err(ExperimentError::Config {
                        detail: format!(
                            "trait total {total} does not divide evenly among {n_agents} agents"
                        ),
                    });
                }
                let config = PipelineConfig {
                    n_traits_per_agent: total / n_agents,
                    ..base.pipeline.clone()
                };
                cells.push((format!("traits_{total}"), config));
            }
        }
        AblationAxis::Dr => {
            for enabled in [true, false] {
                let config = PipelineConfig {
                    dr_enabled: enabled,
                    ..base.pipeline.clone()
                };
                let label = if enabled { "dr_on" } else { "dr_off" };
                cells.push((label.to_string(), config));
            }
        }
    }

    let mut results = Vec::with_capacity(cells.len());
    for (label, config) in cells {
        let options = RunOptions {
            pipeline: config.clone(),
            ..base.clone()
        };
        let gateway = make_gateway()?;
        let out_dir = out_root.join(&label);
        let summary = run_experiment(corpus, &options, &gateway, templates, &out_dir)?;

        let predictions = load_predictions(&out_dir)?;
        let macro_qwk = if predictions.is_empty() {
            None
        } else {
            let pairs: Vec<crate::metrics::PredictedScore> = predictions
                .iter()
                .map(|p| crate::metrics::PredictedScore {
                    essay_id: p.essay_id,
                    prediction: p.prediction,
                })
                .collect();
            Some(crate::metrics::build_report(&pairs, corpus)?.macro_average)
        };

        results.push(AblationCell {
            label,
            n_agents: config.n_agents,
            n_traits_per_agent: config.n_traits_per_agent,
            dr_enabled: config.dr_enabled,
            method: options.method(),
            summary,
            macro_qwk,
        });
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PromptTable;
    use crate::gateway::scripted::{sanitize_tag, ScriptedBackend};
    use crate::gateway::GatewayOptions;

    fn essay(essay_id: u64, prompt_id: u32, score: i32) -> EssayRecord {
        EssayRecord {
            essay_id,
            prompt_id,
            text: format!("Essay {essay_id} body text."),
            human_score: Some(score),
        }
    }

    fn corpus() -> Corpus {
        Corpus {
            records: vec![essay(101, 4, 2), essay(102, 4, 1), essay(103, 4, 3)],
            prompts: PromptTable::builtin(),
        }
    }

    fn write_fixture(dir: &Path, tag: &str, body: &str) {
        std::fs::write(dir.join(format!("{}.txt", sanitize_tag(tag))), body).unwrap();
    }

    fn write_vanilla_fixtures(dir: &Path) {
        for (id, score) in [(101, 2), (102, 1), (103, 3)] {
            write_fixture(
                dir,
                &format!("vanilla_scoring:{id}"),
                &format!(r#"{{"rationale": "Reasoned assessment of {id}.", "score": {score}}}"#),
            );
        }
    }

    fn gateway(dir: &Path) -> Gateway {
        Gateway::new(
            Box::new(ScriptedBackend::new(dir)),
            GatewayOptions::default(),
        )
    }

    fn vanilla_options() -> RunOptions {
        RunOptions {
            vanilla: true,
            ..RunOptions::default()
        }
    }

    fn read(path: &Path) -> String {
        std::fs::read_to_string(path).unwrap()
    }

    #[test]
    fn run_id_is_deterministic_and_sensitive_to_config() {
        let a = RunManifest::build(&vanilla_options(), vec![4], 3, "tpl".into());
        let b = RunManifest::build(&vanilla_options(), vec![4], 3, "tpl".into());
        assert_eq!(a.run_id, b.run_id);
        assert_ne!(a.created_at, String::new());
        assert!(a.diff(&b).is_empty(), "created_at must not count as a diff");

        let changed = RunOptions {
            seed: 43,
            ..vanilla_options()
        };
        let c = RunManifest::build(&changed, vec![4], 3, "tpl".into());
        assert_ne!(a.run_id, c.run_id);
        let diffs = a.diff(&c);
        assert!(diffs.iter().any(|d| d.starts_with("seed:")), "{diffs:?}");
    }

    #[test]
    fn scores_everything_and_keeps_books_consistent() {
        let fixtures = tempfile::tempdir().unwrap();
        write_vanilla_fixtures(fixtures.path());
        let out = tempfile::tempdir().unwrap();

        let summary = run_experiment(
            &corpus(),
            &vanilla_options(),
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap();

        assert_eq!(summary.planned, 3);
        assert_eq!(summary.scored, 3);
        assert_eq!(summary.failed, 0);
        assert_eq!(summary.already_done, 0);
        assert_eq!(summary.usage.requests, 3);

        let predictions = load_predictions(out.path()).unwrap();
        assert_eq!(predictions.len(), 3);
        // Worklist order is canonical (prompt, essay id).
        let ids: Vec<u64> = predictions.iter().map(|p| p.essay_id).collect();
        assert_eq!(ids, vec![101, 102, 103]);
        assert_eq!(predictions[0].prediction, 2);
        assert_eq!(predictions[1].prediction, 1);
        assert_eq!(predictions[2].prediction, 3);

        // Audit sequence numbers are gapless from zero.
        let audit_raw = read(&out.path().join("audit.jsonl"));
        let seqs: Vec<u64> = audit_raw
            .lines()
            .map(|l| serde_json::from_str::<AuditRecord>(l).unwrap().seq)
            .collect();
        assert_eq!(seqs, vec![0, 1, 2]);

        // The ledger's total cost equals the sum over prediction usages.
        let ledger_raw = read(&out.path().join("ledger.jsonl"));
        assert_eq!(ledger_raw.lines().count(), 3);

        // Artifacts exist and deserialize.
        for prediction in &predictions {
            let body = read(&out.path().join(&prediction.artifacts));
            let bundle: crate::pipeline::ArtifactBundle = serde_json::from_str(&body).unwrap();
            assert!(bundle.vanilla_rationale.is_some());
        }

        let manifest = load_manifest(out.path()).unwrap();
        assert_eq!(manifest.planned_essays, 3);
        assert_eq!(manifest.prompt_ids, vec![4]);
        assert_eq!(manifest.run_id, predictions[0].run_id);
    }

    #[test]
    fn outputs_are_byte_identical_across_runs_and_job_counts() {
        let fixtures = tempfile::tempdir().unwrap();
        write_vanilla_fixtures(fixtures.path());

        let mut outputs = Vec::new();
        for jobs in [1, 4] {
            let out = tempfile::tempdir().unwrap();
            let options = RunOptions {
                jobs,
                ..vanilla_options()
            };
            run_experiment(
                &corpus(),
                &options,
                &gateway(fixtures.path()),
                &TemplateSet::builtin(),
                out.path(),
            )
            .unwrap();
            outputs.push((
                read(&out.path().join("predictions.jsonl")),
                read(&out.path().join("ledger.jsonl")),
                read(&out.path().join("audit.jsonl")),
            ));
        }
        assert_eq!(outputs[0], outputs[1]);
    }

    #[test]
    fn interrupted_run_resumes_to_identical_bytes() {
        let fixtures = tempfile::tempdir().unwrap();
        write_vanilla_fixtures(fixtures.path());

        // Uninterrupted reference run.
        let reference = tempfile::tempdir().unwrap();
        run_experiment(
            &corpus(),
            &vanilla_options(),
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            reference.path(),
        )
        .unwrap();

        // Interrupt after each possible prefix, then resume.
        for stop_after in 1..=2usize {
            let out = tempfile::tempdir().unwrap();
            let capped = RunOptions {
                max_essays: Some(stop_after),
                ..vanilla_options()
            };
            let first = run_experiment(
                &corpus(),
                &capped,
                &gateway(fixtures.path()),
                &TemplateSet::builtin(),
                out.path(),
            )
            .unwrap();
            assert_eq!(first.scored, stop_after);

            let resumed = run_experiment(
                &corpus(),
                &vanilla_options(),
                &gateway(fixtures.path()),
                &TemplateSet::builtin(),
                out.path(),
            )
            .unwrap();
            assert_eq!(resumed.already_done, stop_after);
            assert_eq!(resumed.scored, 3 - stop_after);

            for file in ["predictions.jsonl", "ledger.jsonl", "audit.jsonl"] {
                assert_eq!(
                    read(&out.path().join(file)),
                    read(&reference.path().join(file)),
                    "{file} diverged after interrupt at {stop_after}"
                );
            }
        }
    }

    #[test]
    fn resume_with_changed_config_is_refused_with_a_diff() {
        let fixtures = tempfile::tempdir().unwrap();
        write_vanilla_fixtures(fixtures.path());
        let out = tempfile::tempdir().unwrap();

        run_experiment(
            &corpus(),
            &vanilla_options(),
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap();

        let changed = RunOptions {
            seed: 7,
            ..vanilla_options()
        };
        match run_experiment(
            &corpus(),
            &changed,
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap_err()
        {
            ExperimentError::ManifestMismatch { diffs } => {
                assert!(diffs.iter().any(|d| d.starts_with("seed:")), "{diffs:?}");
            }
            other => panic!("expected ManifestMismatch, got {other:?}"),
        }
    }

    #[test]
    fn torn_trailing_prediction_line_is_dropped_and_rescored() {
        let fixtures = tempfile::tempdir().unwrap();
        write_vanilla_fixtures(fixtures.path());
        let out = tempfile::tempdir().unwrap();

        run_experiment(
            &corpus(),
            &RunOptions {
                max_essays: Some(2),
                ..vanilla_options()
            },
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap();

        // Simulate a crash mid-append: garbage with no trailing newline.
        let predictions_path = out.path().join("predictions.jsonl");
        let mut file = std::fs::OpenOptions::new()
            .append(true)
            .open(&predictions_path)
            .unwrap();
        file.write_all(b"{\"run_id\": \"abc\", \"essay_id\": 103")
            .unwrap();
        drop(file);

        let resumed = run_experiment(
            &corpus(),
            &vanilla_options(),
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap();
        assert_eq!(resumed.already_done, 2);
        assert_eq!(resumed.scored, 1);
        let predictions = load_predictions(out.path()).unwrap();
        assert_eq!(predictions.len(), 3);
    }

    #[test]
    fn failures_are_recorded_not_committed_and_retried_on_resume() {
        let fixtures = tempfile::tempdir().unwrap();
        write_vanilla_fixtures(fixtures.path());
        // Remove essay 102's fixture so it fails.
        std::fs::remove_file(fixtures.path().join("vanilla_scoring_102.txt")).unwrap();
        let out = tempfile::tempdir().unwrap();

        let summary = run_experiment(
            &corpus(),
            &vanilla_options(),
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap();
        assert_eq!(summary.scored, 2);
        assert_eq!(summary.failed, 1);
        assert_eq!(summary.failures[0].essay_id, 102);
        assert!(summary.failures[0].error.contains("vanilla_scoring_102"));

        // The failed call is audited but not committed as a prediction.
        let audit_raw = read(&out.path().join("audit.jsonl"));
        assert_eq!(audit_raw.lines().count(), 3);
        assert!(audit_raw.contains("\"ok\":false"));
        assert_eq!(load_predictions(out.path()).unwrap().len(), 2);

        // Restore the fixture; resume retries only the failed essay.
        write_fixture(
            fixtures.path(),
            "vanilla_scoring:102",
            r#"{"rationale": "Reasoned assessment of 102.", "score": 1}"#,
        );
        let resumed = run_experiment(
            &corpus(),
            &vanilla_options(),
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap();
        assert_eq!(resumed.already_done, 2);
        assert_eq!(resumed.scored, 1);
        assert_eq!(resumed.failed, 0);
        assert_eq!(load_predictions(out.path()).unwrap().len(), 3);
    }

    #[test]
    fn prompt_filter_restricts_the_worklist_and_unknown_ids_fail() {
        let fixtures = tempfile::tempdir().unwrap();
        write_vanilla_fixtures(fixtures.path());
        // Add a prompt-1 essay that the filter must exclude.
        let mut corpus = corpus();
        corpus.records.push(essay(900, 1, 8));
        let out = tempfile::tempdir().unwrap();

        let options = RunOptions {
            prompt_ids: Some(vec![4]),
            ..vanilla_options()
        };
        let summary = run_experiment(
            &corpus,
            &options,
            &gateway(fixtures.path()),
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap();
        assert_eq!(summary.planned, 3);
        assert_eq!(summary.scored, 3);

        let unknown = RunOptions {
            prompt_ids: Some(vec![99]),
            ..vanilla_options()
        };
        assert!(matches!(
            run_experiment(
                &corpus,
                &unknown,
                &gateway(fixtures.path()),
                &TemplateSet::builtin(),
                tempfile::tempdir().unwrap().path(),
            )
            .unwrap_err(),
            ExperimentError::Config { .. }
        ));
    }

    #[test]
    fn dr_ablation_produces_a_cell_per_setting() {
        let fixtures = tempfile::tempdir().unwrap();
        // Panel fixtures for all three essays, two agents, one trait each.
        for id in [101u64, 102, 103] {
            let personas: Vec<serde_json::Value> = (0..2)
                .map(|i| {
                    serde_json::json!({
                        "name": format!("Persona {i}"),
                        "background": "teacher",
                        "expertise": "writing",
                        "focus": "clarity"
                    })
                })
                .collect();
            write_fixture(
                fixtures.path(),
                &format!("persona_creation:{id}"),
                &serde_json::to_string(&personas).unwrap(),
            );
            for agent in 0..2 {
                write_fixture(
                    fixtures.path(),
                    &format!("rubric_construction:{id}:{agent}"),
                    &serde_json::json!({"traits": [{
                        "name": "Focus",
                        "description": "d",
                        "criteria": [
                            {"score": 0, "description": "low"},
                            {"score": 3, "description": "high"}
                        ]
                    }]})
                    .to_string(),
                );
                write_fixture(
                    fixtures.path(),
                    &format!("trait_evaluation:{id}:{agent}"),
                    &serde_json::json!({"trait_scores": [{
                        "trait_name": "Focus",
                        "rationale": "well grounded",
                        "score": 2
                    }]})
                    .to_string(),
                );
            }
            write_fixture(
                fixtures.path(),
                &format!("dialectical_reasoning:{id}"),
                &serde_json::json!({
                    "reasoning_dialogue": [
                        {"speaker": "Persona 0", "statement": "s"},
                        {"speaker": "Moderator", "statement": "done"}
                    ],
                    "holistic_score": 2
                })
                .to_string(),
            );
        }

        let base = RunOptions {
            pipeline: PipelineConfig {
                n_agents: 2,
                n_traits_per_agent: 1,
                ..PipelineConfig::default()
            },
            ..RunOptions::default()
        };
        let out = tempfile::tempdir().unwrap();
        let fixtures_path = fixtures.path().to_path_buf();
        let cells = run_ablation(
            &corpus(),
            &base,
            &AblationAxis::Dr,
            &move || {
                Ok(Gateway::new(
                    Box::new(ScriptedBackend::new(fixtures_path.clone())),
                    GatewayOptions::default(),
                ))
            },
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap();

        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].label, "dr_on");
        assert_eq!(cells[0].method, ScoringMethod::Res);
        assert!(cells[0].macro_qwk.is_some());
        assert_eq!(cells[1].label, "dr_off");
        assert_eq!(cells[1].method, ScoringMethod::ResNoDr);
        assert!(out.path().join("dr_on/predictions.jsonl").exists());
        assert!(out.path().join("dr_off/predictions.jsonl").exists());
        // Each cell scored all three essays with the expected call count.
        assert_eq!(cells[0].summary.scored, 3);
        assert_eq!(cells[0].summary.usage.requests, 3 * 6);
        assert_eq!(cells[1].summary.usage.requests, 3 * 5);
    }

    #[test]
    fn traits_ablation_requires_even_split() {
        let base = RunOptions::default(); // 4 agents
        let out = tempfile::tempdir().unwrap();
        let err = run_ablation(
            &corpus(),
            &base,
            &AblationAxis::TraitsTotal(vec![10]),
            &|| {
                Ok(Gateway::new(
                    Box::new(ScriptedBackend::new("/nonexistent")),
                    GatewayOptions::default(),
                ))
            },
            &TemplateSet::builtin(),
            out.path(),
        )
        .unwrap_err();
        assert!(matches!(err, ExperimentError::Config { .. }));
    }
}
