//! Instruction templates with `{placeholder}` substitution.
//!
//! Five templates drive the pipeline, one per model-facing stage. The
//! built-in set is compiled into the binary; `--templates <dir>` can override
//! any subset by file name. Placeholders are written `{name}`; only names
//! from the known vocabulary are treated as placeholders, so JSON braces in
//! the template text (and doubled braces like `{{PERSON}}` in instructions to
//! the model) pass through untouched.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::PromptError;

/// The stages that send an instruction to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TemplateId {
    PersonaCreation,
    RubricConstruction,
    TraitEvaluation,
    DialecticalReasoning,
    VanillaScoring,
}

impl TemplateId {
    pub const ALL: [TemplateId; 5] = [
        TemplateId::PersonaCreation,
        TemplateId::RubricConstruction,
        TemplateId::TraitEvaluation,
        TemplateId::DialecticalReasoning,
        TemplateId::VanillaScoring,
    ];

    /// File name of this template inside a template directory.
    pub fn file_name(self) -> &'static str {
        match self {
            TemplateId::PersonaCreation => "persona_creation.txt",
            TemplateId::RubricConstruction => "rubric_construction.txt",
            TemplateId::TraitEvaluation => "trait_evaluation.txt",
            TemplateId::DialecticalReasoning => "dialectical_reasoning.txt",
            TemplateId::VanillaScoring => "vanilla_scoring.txt",
        }
    }

    /// Stage name used in request tags and audit records.
    pub fn stage_name(self) -> &'static str {
        match self {
            TemplateId::PersonaCreation => "persona_creation",
            TemplateId::RubricConstruction => "rubric_construction",
            TemplateId::TraitEvaluation => "trait_evaluation",
            TemplateId::DialecticalReasoning => "dialectical_reasoning",
            TemplateId::VanillaScoring => "vanilla_scoring",
        }
    }

    fn builtin_text(self) -> &'static str {
        match self {
            TemplateId::PersonaCreation => include_str!("../../templates/persona_creation.txt"),
            TemplateId::RubricConstruction => {
                include_str!("../../templates/rubric_construction.txt")
            }
            TemplateId::TraitEvaluation => include_str!("../../templates/trait_evaluation.txt"),
            TemplateId::DialecticalReasoning => {
                include_str!("../../templates/dialectical_reasoning.txt")
            }
            TemplateId::VanillaScoring => include_str!("../../templates/vanilla_scoring.txt"),
        }
    }
}

/// Placeholder names that templates may use. Anything else inside braces is
/// literal text.
const PLACEHOLDER_VOCABULARY: [&str; 18] = [
    "n_agents",
    "n_traits",
    "essay",
    "essay_prompt",
    "grade_level",
    "essay_type",
    "min_score",
    "max_score",
    "min_holistic_score",
    "max_holistic_score",
    "name",
    "background",
    "expertise",
    "focus",
    "persona_focus",
    "rubric_json",
    "evaluations_json",
    "rubrics_json",
];

/// Scans template text for `{word}` occurrences of known placeholders,
/// skipping doubled braces (`{{` / `}}`), which are literal.
fn required_placeholders(text: &str) -> Vec<&'static str> {
    let mut found = Vec::new();
    let bytes = text.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] != b'{' {
            i += 1;
            continue;
        }
        if i + 1 < bytes.len() && bytes[i + 1] == b'{' {
            i += 2;
            continue;
        }
        if let Some(end) = text[i + 1..].find('}') {
            let candidate = &text[i + 1..i + 1 + end];
            if let Some(&known) = PLACEHOLDER_VOCABULARY.iter().find(|&&w| w == candidate) {
                if !found.contains(&known) {
                    found.push(known);
                }
            }
            i += 1;
        } else {
            break;
        }
    }
    found
}

/// A complete set of the five stage templates.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    texts: BTreeMap<&'static str, String>,
}

impl TemplateSet {
    /// The compiled-in templates.
    pub fn builtin() -> Self {
        let mut texts = BTreeMap::new();
        for id in TemplateId::ALL {
            texts.insert(id.file_name(), id.builtin_text().to_string());
        }
        Self { texts }
    }

    /// Built-in templates with any present files in `dir` overriding them.
    pub fn from_dir(dir: &Path) -> Result<Self, PromptError> {
        if !dir.is_dir() {
            return Err(PromptError::TemplateDir {
                detail: format!("{} is not a directory", dir.display()),
            });
        }
        let mut set = Self::builtin();
        for id in TemplateId::ALL {
            let path = dir.join(id.file_name());
            if path.exists() {
                let text =
                    std::fs::read_to_string(&path).map_err(|e| PromptError::TemplateDir {
                        detail: format!("cannot read {}: {e}", path.display()),
                    })?;
                set.texts.insert(id.file_name(), text);
            }
        }
        Ok(set)
    }

    pub fn text(&self, id: TemplateId) -> &str {
        &self.texts[id.file_name()]
    }

    /// Digest over all template names and bodies; recorded in run manifests
    /// so replays can detect template drift.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for (name, text) in &self.texts {
            hasher.update(name.as_bytes());
            hasher.update(b"\0");
            hasher.update(text.as_bytes());
            hasher.update(b"\0");
        }
        hex::encode(hasher.finalize())
    }

    /// Substitutes bound values into the template. Every known placeholder
    /// the template mentions must be bound; unknown brace content and
    /// doubled braces are left verbatim.
    pub fn render(&self, id: TemplateId, context: &RenderContext) -> Result<String, PromptError> {
        let text = self.text(id);
        for needed in required_placeholders(text) {
            if !context.values.contains_key(needed) {
                return Err(PromptError::UnboundPlaceholder {
                    template: id.file_name().to_string(),
                    placeholder: needed.to_string(),
                });
            }
        }
        let mut out = String::with_capacity(text.len());
        let bytes = text.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            if bytes[i] == b'{' {
                if i + 1 < bytes.len() && bytes[i + 1] == b'{' {
                    out.push_str("{{");
                    i += 2;
                    continue;
                }
                if let Some(end) = text[i + 1..].find('}') {
                    let candidate = &text[i + 1..i + 1 + end];
                    if let Some(value) = context.values.get(candidate) {
                        out.push_str(value);
                        i += end + 2;
                        continue;
                    }
                }
            }
            let ch = text[i..].chars().next().unwrap();
            out.push(ch);
            i += ch.len_utf8();
        }
        Ok(out)
    }
}

/// Placeholder bindings for one render.
#[derive(Debug, Clone, Default)]
pub struct RenderContext {
    values: BTreeMap<String, String>,
}

impl RenderContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(mut self, name: &str, value: impl ToString) -> Self {
        self.values.insert(name.to_string(), value.to_string());
        self
    }
}
