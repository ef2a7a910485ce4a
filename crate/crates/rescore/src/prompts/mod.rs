//! Prompt templates and model-output handling.
//!
//! Three layers, used in order by the pipeline:
//!
//! 1. [`templates`] — named instruction templates with `{placeholder}`
//!    substitution, loaded from built-in text or a directory override;
//! 2. [`extract`] — pulling the JSON payload out of a raw model reply that
//!    may wrap it in prose or a fenced code block;
//! 3. [`validate`] — checking the payload against the shape each stage
//!    demands (persona lists, rubrics, trait evaluations, roundtables) and
//!    converting it to typed pipeline data.

pub mod extract;
pub mod templates;
pub mod validate;

pub use extract::{extract_json_payload, ExtractedDocument};
pub use templates::{RenderContext, TemplateId, TemplateSet};

/// Failures in template rendering, payload extraction, or validation.
///
/// Every variant names what was wrong precisely enough that a log line alone
/// explains the rejection; validation failures drive one corrective
/// re-prompt before an essay is abandoned.
#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("template '{template}' uses placeholder '{{{placeholder}}}' but no value was bound")]
    UnboundPlaceholder {
        template: String,
        placeholder: String,
    },
    #[error("cannot load templates from directory: {detail}")]
    TemplateDir { detail: String },
    #[error("no JSON payload found in model reply: {raw}")]
    Extraction { raw: String },
    #[error("expected {expected} {what}, got {actual}")]
    Cardinality {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("payload shape mismatch: {detail}")]
    Schema { detail: String },
    #[error("score {score} for trait '{trait_name}' outside declared range {min}..={max}")]
    ScoreOutOfRange {
        trait_name: String,
        score: i64,
        min: i32,
        max: i32,
    },
    #[error("rubric trait '{trait_name}' defines score level {score} more than once")]
    DuplicateLevel { trait_name: String, score: i64 },
    #[error("score for '{context}' is not an integer: {found}")]
    NonIntegerScore { context: String, found: String },
    #[error("empty rationale for trait '{trait_name}'")]
    EmptyRationale { trait_name: String },
    #[error("trait '{trait_name}': score appears before rationale; rationale must come first")]
    RationaleOrder { trait_name: String },
    #[error("evaluation names unknown trait '{trait_name}'")]
    UnknownTrait { trait_name: String },
    #[error("evaluation is missing trait '{trait_name}'")]
    MissingTrait { trait_name: String },
    #[error("dialogue must end with the Moderator, but ends with '{last_speaker}' (speakers seen: {expected})")]
    NonModeratorEnd {
        last_speaker: String,
        expected: String,
    },
    #[error("roundtable dialogue is empty")]
    EmptyDialogue,
    #[error("holistic score is not a JSON number: found {found}")]
    NonNumericScore { found: String },
}
