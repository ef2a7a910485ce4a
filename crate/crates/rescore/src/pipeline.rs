//! The scoring pipeline: persona panel, per-persona rubrics and trait
//! evaluations, and a moderated roundtable that settles the holistic score.
//!
//! For one essay the full pipeline runs, in order:
//!
//! 1. **Persona creation** — one call proposes `n_agents` evaluator personas
//!    tailored to the essay and its prompt;
//! 2. **Rubric construction** — each persona designs its own multi-trait
//!    rubric (one call per persona);
//! 3. **Trait evaluation** — each persona applies its rubric to the essay,
//!    writing a rationale before each trait score (one call per persona);
//! 4. **Dialectical reasoning** — a single call simulates the personas
//!    debating their assessments, with a Moderator closing the discussion
//!    and naming the holistic score.
//!
//! That is `2·n_agents + 2` model calls per essay. With the roundtable
//! disabled the holistic score is instead the mean of all range-normalized
//! trait scores, rescaled to the prompt's declared range (`2·n_agents + 1`
//! calls). A `vanilla` baseline scores the essay in one call.
//!
//! Every stage validates the model's reply; an invalid reply earns one
//! corrective re-prompt (configurable) before the essay is abandoned with a
//! typed error. Gateway failures are never re-prompted — the retry policy
//! inside the gateway already handled transient faults.

use serde::{Deserialize, Serialize};

use crate::corpus::{EssayRecord, PromptSpec};
use crate::gateway::{CallRecord, ChatRequest, Gateway, GatewayError, UsageRollup};
use crate::prompts::{
    extract_json_payload, validate, PromptError, RenderContext, TemplateId, TemplateSet,
};

// ============================================================================
// Stage output data
// ============================================================================

/// One synthesized evaluator persona.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub name: String,
    pub background: String,
    pub expertise: String,
    pub focus: String,
}

/// What one score level means for one trait.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricCriterion {
    pub score: i32,
    pub description: String,
}

/// One trait of a persona's rubric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricTrait {
    pub name: String,
    pub description: String,
    pub criteria: Vec<RubricCriterion>,
}

/// A persona's complete rubric, with the score range its traits use.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rubric {
    pub persona_name: String,
    pub trait_min: i32,
    pub trait_max: i32,
    pub traits: Vec<RubricTrait>,
}

/// A scored trait: the rationale is stated first by construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraitScore {
    pub trait_name: String,
    pub rationale: String,
    pub score: i32,
}

/// One persona's full evaluation of an essay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentEvaluation {
    pub persona_name: String,
    pub trait_scores: Vec<TraitScore>,
}

/// One turn of the roundtable dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DialogueTurn {
    pub speaker: String,
    pub statement: String,
}

/// The roundtable's synthesis: the dialogue, the Moderator's holistic score
/// (possibly fractional), and consensus feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundtableOutcome {
    pub dialogue: Vec<DialogueTurn>,
    pub holistic_raw: f64,
    pub feedback: String,
}

/// Everything the pipeline produced for one essay, persisted alongside the
/// prediction for inspection.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactBundle {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub personas: Vec<Persona>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub rubrics: Vec<Rubric>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub evaluations: Vec<AgentEvaluation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roundtable: Option<RoundtableOutcome>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vanilla_rationale: Option<String>,
}

// ============================================================================
// Configuration
// ============================================================================

/// How a scored essay was produced; recorded with every prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoringMethod {
    /// Full pipeline with the roundtable.
    Res,
    /// Personas, rubrics, and evaluations, but trait scores are averaged
    /// instead of debated.
    ResNoDr,
    /// Single-call baseline: rationale, then a score.
    Vanilla,
}

impl std::fmt::Display for ScoringMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScoringMethod::Res => "res",
            ScoringMethod::ResNoDr => "res_no_dr",
            ScoringMethod::Vanilla => "vanilla",
        })
    }
}

/// Score range the per-persona rubric traits use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TraitRangeMode {
    /// Traits use the prompt's own declared score range.
    Holistic,
    /// Traits use a fixed range regardless of prompt.
    Fixed { min: i32, max: i32 },
}

/// Pipeline knobs. Defaults mirror the reference configuration: a panel of
/// four personas, three traits each, roundtable on, deterministic sampling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub n_agents: usize,
    pub n_traits_per_agent: usize,
    pub dr_enabled: bool,
    pub trait_range_mode: TraitRangeMode,
    pub model_id: String,
    pub temperature: f64,
    pub max_output_tokens: u32,
    /// Corrective re-prompts allowed per stage after an invalid reply.
    pub repair_reprompts: u32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            n_agents: 4,
            n_traits_per_agent: 3,
            dr_enabled: true,
            trait_range_mode: TraitRangeMode::Holistic,
            model_id: "gpt-4.1-mini".into(),
            temperature: 0.0,
            max_output_tokens: 8192,
            repair_reprompts: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.n_agents == 0 {
            return Err(PipelineError::Config {
                detail: "n_agents must be at least 1".into(),
            });
        }
        if self.n_traits_per_agent == 0 {
            return Err(PipelineError::Config {
                detail: "n_traits_per_agent must be at least 1".into(),
            });
        }
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(PipelineError::Config {
                detail: format!("temperature {} outside 0.0..=2.0", self.temperature),
            });
        }
        if self.max_output_tokens == 0 {
            return Err(PipelineError::Config {
                detail: "max_output_tokens must be at least 1".into(),
            });
        }
        if let TraitRangeMode::Fixed { min, max } = self.trait_range_mode {
            if min >= max {
                return Err(PipelineError::Config {
                    detail: format!("fixed trait range {min}..{max} is not increasing"),
                });
            }
        }
        if self.model_id.trim().is_empty() {
            return Err(PipelineError::Config {
                detail: "model_id must not be empty".into(),
            });
        }
        Ok(())
    }

    /// The score range rubric traits use for a given prompt.
    pub fn trait_range(&self, spec: &PromptSpec) -> (i32, i32) {
        match self.trait_range_mode {
            TraitRangeMode::Holistic => (spec.min_score, spec.max_score),
            TraitRangeMode::Fixed { min, max } => (min, max),
        }
    }

    /// Gateway calls a repair-free essay costs under this configuration.
    pub fn calls_per_essay(&self, method: ScoringMethod) -> usize {
        match method {
            ScoringMethod::Res => 2 * self.n_agents + 2,
            ScoringMethod::ResNoDr => 2 * self.n_agents + 1,
            ScoringMethod::Vanilla => 1,
        }
    }

    /// The method this configuration produces for a given baseline choice.
    pub fn method(&self, vanilla: bool) -> ScoringMethod {
        if vanilla {
            ScoringMethod::Vanilla
        } else if self.dr_enabled {
            ScoringMethod::Res
        } else {
            ScoringMethod::ResNoDr
        }
    }
}

// ============================================================================
// Errors
// ============================================================================

/// Why a stage could not produce usable output.
#[derive(Debug, thiserror::Error)]
pub enum StageFailure {
    #[error(transparent)]
    Gateway(GatewayError),
    #[error("invalid reply after all repair attempts: {error}")]
    Invalid {
        #[source]
        error: PromptError,
        /// The final rejected reply, kept for post-mortems.
        raw: String,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("stage {stage} failed for request '{tag}': {source}")]
    Stage {
        stage: &'static str,
        tag: String,
        #[source]
        source: StageFailure,
    },
    #[error("template rendering failed: {0}")]
    Render(#[from] PromptError),
    #[error("holistic score is not a finite number: {value}")]
    NonFiniteScore { value: f64 },
    #[error("trait range {min}..{max} has zero width; cannot normalize scores")]
    DegenerateTraitRange { min: i32, max: i32 },
    #[error("no trait scores to aggregate")]
    EmptyAggregation,
    #[error("invalid pipeline configuration: {detail}")]
    Config { detail: String },
}

// ============================================================================
// Score arithmetic
// ============================================================================

/// Averages all trait scores, each normalized by its own rubric's range,
/// then rescales the mean onto the prompt's declared range. Used in place of
/// the roundtable when it is disabled.
pub fn aggregate_without_dr(
    evaluations: &[AgentEvaluation],
    rubrics: &[Rubric],
    spec: &PromptSpec,
) -> Result<f64, PipelineError> {
    let mut sum = 0.0;
    let mut count = 0u32;
    for (evaluation, rubric) in evaluations.iter().zip(rubrics) {
        if rubric.trait_max == rubric.trait_min {
            return Err(PipelineError::DegenerateTraitRange {
                min: rubric.trait_min,
                max: rubric.trait_max,
            });
        }
        let width = f64::from(rubric.trait_max - rubric.trait_min);
        for trait_score in &evaluation.trait_scores {
            sum += f64::from(trait_score.score - rubric.trait_min) / width;
            count += 1;
        }
    }
    if count == 0 {
        return Err(PipelineError::EmptyAggregation);
    }
    let mean = sum / f64::from(count);
    Ok(f64::from(spec.min_score) + mean * f64::from(spec.max_score - spec.min_score))
}

/// Turns a raw holistic value into the final integer prediction: round half
/// away from zero, then clamp into the prompt's declared range.
pub fn finalize_score(raw: f64, spec: &PromptSpec) -> Result<i32, PipelineError> {
    if !raw.is_finite() {
        return Err(PipelineError::NonFiniteScore { value: raw });
    }
    let clamped = raw
        .round()
        .clamp(f64::from(spec.min_score), f64::from(spec.max_score));
    Ok(clamped as i32)
}

// ============================================================================
// Pipeline
// ============================================================================

/// Final output for one essay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredOutput {
    pub method: ScoringMethod,
    pub prediction: i32,
    /// The holistic value before rounding and clamping.
    pub holistic_raw: f64,
    pub artifacts: ArtifactBundle,
}

/// What happened when one essay went through the pipeline. Call records are
/// captured even on failure so the audit trail stays complete.
#[derive(Debug)]
pub struct EssayRunOutcome {
    pub essay_id: u64,
    pub prompt_id: u32,
    pub result: Result<ScoredOutput, PipelineError>,
    pub calls: Vec<CallRecord>,
}

impl EssayRunOutcome {
    /// Usage across this essay's successful calls.
    pub fn usage(&self) -> UsageRollup {
        let mut rollup = UsageRollup::default();
        for call in &self.calls {
            if let Some(usage) = call.usage() {
                rollup.absorb(&usage);
            }
        }
        rollup
    }
}

/// Sentence appended to an instruction when re-prompting after an invalid
/// reply.
fn repair_suffix(violation: &str) -> String {
    format!(
        "\n\nYour previous response was invalid: {violation}. \
         Respond again and follow the required output format exactly."
    )
}

pub struct Pipeline<'a> {
    gateway: &'a Gateway,
    templates: &'a TemplateSet,
    config: PipelineConfig,
}

impl<'a> Pipeline<'a> {
    pub fn new(
        gateway: &'a Gateway,
        templates: &'a TemplateSet,
        config: PipelineConfig,
    ) -> Result<Self, PipelineError> {
        config.validate()?;
        Ok(Self {
            gateway,
            templates,
            config,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    /// Scores one essay with the configured method.
    pub fn score_essay(
        &self,
        essay: &EssayRecord,
        spec: &PromptSpec,
        method: ScoringMethod,
    ) -> EssayRunOutcome {
        let mut calls = Vec::new();
        let result = match method {
            ScoringMethod::Res | ScoringMethod::ResNoDr => {
                self.run_panel(essay, spec, method, &mut calls)
            }
            ScoringMethod::Vanilla => self.run_vanilla(essay, spec, &mut calls),
        };
        EssayRunOutcome {
            essay_id: essay.essay_id,
            prompt_id: essay.prompt_id,
            result,
            calls,
        }
    }

    // ------------------------------------------------------------------
    // Stage driver
    // ------------------------------------------------------------------

    /// Sends one instruction and validates the reply, re-prompting with a
    /// corrective suffix up to `repair_reprompts` times. Gateway errors are
    /// terminal: the gateway already retried anything transient.
    fn stage<T>(
        &self,
        id: TemplateId,
        tag_base: &str,
        instruction: &str,
        calls: &mut Vec<CallRecord>,
        validate: impl Fn(&str) -> Result<T, PromptError>,
    ) -> Result<T, PipelineError> {
        let mut violation: Option<String> = None;
        for attempt in 0..=self.config.repair_reprompts {
            let tag = if attempt == 0 {
                tag_base.to_string()
            } else {
                format!("{tag_base}:r{attempt}")
            };
            let instruction = match &violation {
                None => instruction.to_string(),
                Some(v) => format!("{instruction}{}", repair_suffix(v)),
            };
            let outcome = self.gateway.call(&ChatRequest {
                model_id: self.config.model_id.clone(),
                instruction,
                temperature: self.config.temperature,
                max_output_tokens: self.config.max_output_tokens,
                request_tag: tag.clone(),
            });
            calls.push(outcome.record);
            let response = match outcome.result {
                Ok(response) => response,
                Err(err) => {
                    return Err(PipelineError::Stage {
                        stage: id.stage_name(),
                        tag,
                        source: StageFailure::Gateway(err),
                    })
                }
            };
            match validate(&response.text) {
                Ok(value) => return Ok(value),
                Err(error) => {
                    if attempt == self.config.repair_reprompts {
                        return Err(PipelineError::Stage {
                            stage: id.stage_name(),
                            tag,
                            source: StageFailure::Invalid {
                                error,
                                raw: response.text,
                            },
                        });
                    }
                    violation = Some(error.to_string());
                }
            }
        }
        unreachable!("loop always returns");
    }

    fn essay_context(&self, essay: &EssayRecord, spec: &PromptSpec) -> RenderContext {
        RenderContext::new()
            .bind("essay", &essay.text)
            .bind("essay_prompt", &spec.essay_prompt)
            .bind("essay_type", &spec.essay_type)
            .bind("grade_level", &spec.grade_level)
    }

    // ------------------------------------------------------------------
    // Stages
    // ------------------------------------------------------------------

    fn create_personas(
        &self,
        essay: &EssayRecord,
        spec: &PromptSpec,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Vec<Persona>, PipelineError> {
        let context = self
            .essay_context(essay, spec)
            .bind("n_agents", self.config.n_agents);
        let instruction = self
            .templates
            .render(TemplateId::PersonaCreation, &context)?;
        let tag = format!("persona_creation:{}", essay.essay_id);
        let n_agents = self.config.n_agents;
        self.stage(
            TemplateId::PersonaCreation,
            &tag,
            &instruction,
            calls,
            |raw| validate::validate_personas(&extract_json_payload(raw)?, n_agents),
        )
    }

    fn build_rubric(
        &self,
        persona: &Persona,
        essay: &EssayRecord,
        spec: &PromptSpec,
        agent_idx: usize,
        calls: &mut Vec<CallRecord>,
    ) -> Result<Rubric, PipelineError> {
        let (trait_min, trait_max) = self.config.trait_range(spec);
        let context = self
            .essay_context(essay, spec)
            .bind("name", &persona.name)
            .bind("background", &persona.background)
            .bind("expertise", &persona.expertise)
            .bind("focus", &persona.focus)
            .bind("n_traits", self.config.n_traits_per_agent)
            .bind("min_score", trait_min)
            .bind("max_score", trait_max);
        let instruction = self
            .templates
            .render(TemplateId::RubricConstruction, &context)?;
        let tag = format!("rubric_construction:{}:{agent_idx}", essay.essay_id);
        let n_traits = self.config.n_traits_per_agent;
        let traits = self.stage(
            TemplateId::RubricConstruction,
            &tag,
            &instruction,
            calls,
            |raw| {
                validate::validate_rubric(
                    &extract_json_payload(raw)?,
                    n_traits,
                    trait_min,
                    trait_max,
                )
            },
        )?;
        Ok(Rubric {
            persona_name: persona.name.clone(),
            trait_min,
            trait_max,
            traits,
        })
    }

    fn evaluate_essay(
        &self,
        persona: &Persona,
        rubric: &Rubric,
        essay: &EssayRecord,
        spec: &PromptSpec,
        agent_idx: usize,
        calls: &mut Vec<CallRecord>,
    ) -> Result<AgentEvaluation, PipelineError> {
        let context = self
            .essay_context(essay, spec)
            .bind("name", &persona.name)
            .bind("background", &persona.background)
            .bind("expertise", &persona.expertise)
            .bind("persona_focus", &persona.focus)
            .bind("min_score", rubric.trait_min)
            .bind("max_score", rubric.trait_max)
            .bind("rubric_json", instructed_rubric_json(persona, rubric));
        let instruction = self
            .templates
            .render(TemplateId::TraitEvaluation, &context)?;
        let tag = format!("trait_evaluation:{}:{agent_idx}", essay.essay_id);
        self.stage(
            TemplateId::TraitEvaluation,
            &tag,
            &instruction,
            calls,
            |raw| validate::validate_evaluation(&extract_json_payload(raw)?, rubric),
        )
    }

    fn run_roundtable(
        &self,
        personas: &[Persona],
        rubrics: &[Rubric],
        evaluations: &[AgentEvaluation],
        essay: &EssayRecord,
        spec: &PromptSpec,
        calls: &mut Vec<CallRecord>,
    ) -> Result<RoundtableOutcome, PipelineError> {
        let context = self
            .essay_context(essay, spec)
            .bind("n_agents", self.config.n_agents)
            .bind("min_holistic_score", spec.min_score)
            .bind("max_holistic_score", spec.max_score)
            .bind(
                "evaluations_json",
                instructed_evaluations_json(personas, evaluations),
            )
            .bind("rubrics_json", instructed_rubrics_json(personas, rubrics));
        let instruction = self
            .templates
            .render(TemplateId::DialecticalReasoning, &context)?;
        let tag = format!("dialectical_reasoning:{}", essay.essay_id);
        let mut speakers: Vec<String> = personas.iter().map(|p| p.name.clone()).collect();
        speakers.push("Moderator".into());
        self.stage(
            TemplateId::DialecticalReasoning,
            &tag,
            &instruction,
            calls,
            |raw| validate::validate_roundtable(&extract_json_payload(raw)?, &speakers),
        )
    }

    // ------------------------------------------------------------------
    // Methods
    // ------------------------------------------------------------------

    fn run_panel(
        &self,
        essay: &EssayRecord,
        spec: &PromptSpec,
        method: ScoringMethod,
        calls: &mut Vec<CallRecord>,
    ) -> Result<ScoredOutput, PipelineError> {
        let personas = self.create_personas(essay, spec, calls)?;

        let mut rubrics = Vec::with_capacity(personas.len());
        let mut evaluations = Vec::with_capacity(personas.len());
        for (agent_idx, persona) in personas.iter().enumerate() {
            let rubric = self.build_rubric(persona, essay, spec, agent_idx, calls)?;
            let evaluation =
                self.evaluate_essay(persona, &rubric, essay, spec, agent_idx, calls)?;
            rubrics.push(rubric);
            evaluations.push(evaluation);
        }

        let (holistic_raw, roundtable) = if method == ScoringMethod::Res {
            let outcome =
                self.run_roundtable(&personas, &rubrics, &evaluations, essay, spec, calls)?;
            (outcome.holistic_raw, Some(outcome))
        } else {
            (aggregate_without_dr(&evaluations, &rubrics, spec)?, None)
        };

        let prediction = finalize_score(holistic_raw, spec)?;
        Ok(ScoredOutput {
            method,
            prediction,
            holistic_raw,
            artifacts: ArtifactBundle {
                personas,
                rubrics,
                evaluations,
                roundtable,
                vanilla_rationale: None,
            },
        })
    }

    fn run_vanilla(
        &self,
        essay: &EssayRecord,
        spec: &PromptSpec,
        calls: &mut Vec<CallRecord>,
    ) -> Result<ScoredOutput, PipelineError> {
        let context = self
            .essay_context(essay, spec)
            .bind("min_score", spec.min_score)
            .bind("max_score", spec.max_score);
        let instruction = self
            .templates
            .render(TemplateId::VanillaScoring, &context)?;
        let tag = format!("vanilla_scoring:{}", essay.essay_id);
        let (rationale, holistic_raw) = self.stage(
            TemplateId::VanillaScoring,
            &tag,
            &instruction,
            calls,
            |raw| parse_vanilla(raw),
        )?;
        let prediction = finalize_score(holistic_raw, spec)?;
        Ok(ScoredOutput {
            method: ScoringMethod::Vanilla,
            prediction,
            holistic_raw,
            artifacts: ArtifactBundle {
                vanilla_rationale: Some(rationale),
                ..ArtifactBundle::default()
            },
        })
    }
}

// ============================================================================
// Instructed JSON shapes
// ============================================================================

/// The rubric as the evaluation instruction presents it: the persona header
/// plus its traits.
fn instructed_rubric_json(persona: &Persona, rubric: &Rubric) -> String {
    let value = serde_json::json!({
        "persona": {"name": persona.name, "focus": persona.focus},
        "traits": rubric.traits,
    });
    serde_json::to_string_pretty(&value).expect("rubric serializes")
}

/// All rubrics, persona-labelled, for the roundtable instruction.
fn instructed_rubrics_json(personas: &[Persona], rubrics: &[Rubric]) -> String {
    let value: Vec<serde_json::Value> = personas
        .iter()
        .zip(rubrics)
        .map(|(persona, rubric)| {
            serde_json::json!({
                "persona": {"name": persona.name, "focus": persona.focus},
                "traits": rubric.traits,
            })
        })
        .collect();
    serde_json::to_string_pretty(&value).expect("rubrics serialize")
}

/// All trait evaluations, persona-labelled, for the roundtable instruction.
fn instructed_evaluations_json(personas: &[Persona], evaluations: &[AgentEvaluation]) -> String {
    let value: Vec<serde_json::Value> = personas
        .iter()
        .zip(evaluations)
        .map(|(persona, evaluation)| {
            serde_json::json!({
                "persona": {"name": persona.name, "focus": persona.focus},
                "trait_scores": evaluation.trait_scores,
            })
        })
        .collect();
    serde_json::to_string_pretty(&value).expect("evaluations serialize")
}

// ============================================================================
// Vanilla reply parsing
// ============================================================================

/// Parses a vanilla-baseline reply into (rationale, raw score).
///
/// Primary form is the instructed JSON object with `rationale` before
/// `score`. A plain-text reply is accepted as a fallback by scanning for the
/// last "score" mention followed by a number, since single-call baselines
/// frequently ignore formatting instructions.
fn parse_vanilla(raw: &str) -> Result<(String, f64), PromptError> {
    if let Ok(doc) = extract_json_payload(raw) {
        if let Some(obj) = doc.value.as_object() {
            if let Some(score_value) = obj.get("score") {
                let keys: Vec<&String> = obj.keys().collect();
                let rationale_pos = keys.iter().position(|k| *k == "rationale");
                let score_pos = keys.iter().position(|k| *k == "score");
                if let (Some(r), Some(s)) = (rationale_pos, score_pos) {
                    if s < r {
                        return Err(PromptError::RationaleOrder {
                            trait_name: "overall".into(),
                        });
                    }
                }
                let score = match score_value {
                    serde_json::Value::Number(n) => {
                        n.as_f64().ok_or_else(|| PromptError::NonNumericScore {
                            found: n.to_string(),
                        })?
                    }
                    other => {
                        return Err(PromptError::NonNumericScore {
                            found: other.to_string(),
                        })
                    }
                };
                let rationale = obj
                    .get("rationale")
                    .and_then(serde_json::Value::as_str)
                    .unwrap_or("")
                    .to_string();
                return Ok((rationale, score));
            }
        }
    }
    parse_score_from_text(raw)
        .map(|score| (raw.trim().to_string(), score))
        .ok_or_else(|| PromptError::Extraction {
            raw: raw.chars().take(160).collect(),
        })
}

/// Finds the number after the last "score" mention: `Score: 8`,
/// `final score = 7.5`, `**score** 4`.
fn parse_score_from_text(raw: &str) -> Option<f64> {
    let lower = raw.to_lowercase();
    let mut result = None;
    let mut search_from = 0;
    while let Some(found) = lower[search_from..].find("score") {
        let after = search_from + found + "score".len();
        search_from = after;
        let rest = &raw[after..];
        let trimmed = rest.trim_start_matches([' ', '\t', ':', '*', '=', '_', '-']);
        let end = trimmed
            .find(|c: char| !(c.is_ascii_digit() || c == '.' || c == '+' || c == '-'))
            .unwrap_or(trimmed.len());
        let token = &trimmed[..end];
        if token.is_empty() || token.chars().all(|c| !c.is_ascii_digit()) {
            continue;
        }
        if let Ok(value) = token.trim_end_matches('.').parse::<f64>() {
            result = Some(value);
        }
    }
    result
}
