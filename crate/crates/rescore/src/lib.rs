//! Multi-agent roundtable essay scoring.
//!
//! `rescore` scores student essays with a panel of LLM evaluator personas:
//! a persona-creation call builds the panel, each persona writes its own
//! trait rubric and a rationale-first evaluation, and a single roundtable
//! call synthesizes the panel's holistic score. A single-call baseline
//! (`vanilla`) is included for comparison, along with quadratic-weighted-kappa
//! reporting and a resumable experiment runner.
//!
//! Module map:
//! - [`corpus`] — TSV essay ingestion, prompt metadata, seeded subsampling
//! - [`gateway`] — chat-completion backends (live HTTP, scripted fixtures),
//!   retries, caching, usage accounting
//! - [`prompts`] — instruction templates, rendering, JSON payload extraction
//!   and stage-output validation
//! - [`pipeline`] — the multi-agent scoring pipeline and the vanilla baseline
//! - [`metrics`] — quadratic weighted kappa and report assembly
//! - [`experiment`] — resumable runs, ablation sweeps, report emission

pub mod corpus;
pub mod experiment;
pub mod gateway;
pub mod metrics;
pub mod pipeline;
pub mod prompts;
