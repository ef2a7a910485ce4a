//! Shape validation for each stage's model output.
//!
//! Each validator takes an extracted JSON payload and either produces typed
//! pipeline data or a [`PromptError`] precise enough to drive a corrective
//! re-prompt. Validators are deliberately tolerant of harmless wrapping (an
//! extra `{"personas": …}` layer, an ignored `persona` echo block) and
//! deliberately strict about substance: counts, score ranges, integer-ness,
//! non-empty rationales, and rationale-before-score ordering.

use serde_json::{Map, Value};

use super::extract::ExtractedDocument;
use super::PromptError;
use crate::pipeline::{
    AgentEvaluation, DialogueTurn, Persona, RoundtableOutcome, Rubric, RubricCriterion,
    RubricTrait, TraitScore,
};

// ============================================================================
// Shared helpers
// ============================================================================

fn schema(detail: impl Into<String>) -> PromptError {
    PromptError::Schema {
        detail: detail.into(),
    }
}

fn as_object<'a>(value: &'a Value, what: &str) -> Result<&'a Map<String, Value>, PromptError> {
    value
        .as_object()
        .ok_or_else(|| schema(format!("{what} must be a JSON object")))
}

fn require_str<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    context: &str,
) -> Result<&'a str, PromptError> {
    obj.get(key)
        .and_then(Value::as_str)
        .ok_or_else(|| schema(format!("{context} is missing string field '{key}'")))
}

fn require_nonempty_str<'a>(
    obj: &'a Map<String, Value>,
    key: &str,
    context: &str,
) -> Result<&'a str, PromptError> {
    let s = require_str(obj, key, context)?;
    if s.trim().is_empty() {
        return Err(schema(format!("{context} has empty field '{key}'")));
    }
    Ok(s)
}

/// Extracts an integer score, rejecting decimals and strings with an error
/// that names what held the bad value.
fn require_integer_score(value: &Value, context: &str) -> Result<i64, PromptError> {
    match value {
        Value::Number(n) => n.as_i64().ok_or_else(|| PromptError::NonIntegerScore {
            context: context.to_string(),
            found: n.to_string(),
        }),
        other => Err(PromptError::NonIntegerScore {
            context: context.to_string(),
            found: render_value(other),
        }),
    }
}

/// Short single-line rendering of a value for error messages.
fn render_value(value: &Value) -> String {
    let text = value.to_string();
    if text.len() > 60 {
        let mut end = 60;
        while !text.is_char_boundary(end) {
            end -= 1;
        }
        format!("{}…", &text[..end])
    } else {
        text
    }
}

/// Unwraps `{"wrapper": X}` one level when the object holds exactly one
/// object- or array-valued entry and none of `keys` itself.
fn descend_single_wrapper<'a>(value: &'a Value, keys: &[&str]) -> &'a Value {
    let Some(obj) = value.as_object() else {
        return value;
    };
    if keys.iter().any(|k| obj.contains_key(*k)) {
        return value;
    }
    let containers: Vec<&Value> = obj
        .values()
        .filter(|v| v.is_object() || v.is_array())
        .collect();
    match containers.as_slice() {
        [single] => single,
        _ => value,
    }
}

// ============================================================================
// Persona lists
// ============================================================================

/// Validates a persona-creation reply: an array of `n_agents` persona
/// objects, each with non-empty `name`, `background`, `expertise`, `focus`.
/// A single wrapper object around the array (e.g. `{"personas": […]}`) is
/// accepted.
pub fn validate_personas(
    doc: &ExtractedDocument,
    n_agents: usize,
) -> Result<Vec<Persona>, PromptError> {
    let candidate = descend_single_wrapper(&doc.value, &[]);
    let array = candidate
        .as_array()
        .ok_or_else(|| schema("expected a JSON array of persona objects"))?;
    if array.len() != n_agents {
        return Err(PromptError::Cardinality {
            what: "personas".into(),
            expected: n_agents,
            actual: array.len(),
        });
    }
    array
        .iter()
        .enumerate()
        .map(|(i, entry)| {
            let context = format!("persona {}", i + 1);
            let obj = as_object(entry, &context)?;
            Ok(Persona {
                name: require_nonempty_str(obj, "name", &context)?.to_string(),
                background: require_nonempty_str(obj, "background", &context)?.to_string(),
                expertise: require_nonempty_str(obj, "expertise", &context)?.to_string(),
                focus: require_nonempty_str(obj, "focus", &context)?.to_string(),
            })
        })
        .collect()
}

// ============================================================================
// Rubrics
// ============================================================================

/// Validates a rubric-construction reply into `n_traits` traits whose
/// criteria levels are integers within `trait_min..=trait_max`, each level
/// defined at most once per trait. Accepted shapes: the instructed
/// `{"persona": …, "traits": […]}`, a bare trait array, or a single trait
/// object when one trait was requested.
pub fn validate_rubric(
    doc: &ExtractedDocument,
    n_traits: usize,
    trait_min: i32,
    trait_max: i32,
) -> Result<Vec<RubricTrait>, PromptError> {
    let candidate = descend_single_wrapper(&doc.value, &["traits", "name"]);
    let array: Vec<&Value> = if let Some(arr) = candidate.as_array() {
        arr.iter().collect()
    } else if let Some(arr) = candidate.get("traits").and_then(Value::as_array) {
        arr.iter().collect()
    } else if candidate.get("name").is_some() && candidate.get("criteria").is_some() {
        vec![candidate]
    } else {
        return Err(schema(
            "expected a 'traits' array, a bare trait array, or a single trait object",
        ));
    };
    if array.len() != n_traits {
        return Err(PromptError::Cardinality {
            what: "rubric traits".into(),
            expected: n_traits,
            actual: array.len(),
        });
    }

    array
        .into_iter()
        .map(|entry| {
            let obj = as_object(entry, "rubric trait")?;
            let name = require_nonempty_str(obj, "name", "rubric trait")?.to_string();
            let description =
                require_str(obj, "description", &format!("trait '{name}'"))?.to_string();
            let criteria_value = obj
                .get("criteria")
                .ok_or_else(|| schema(format!("trait '{name}' has no criteria")))?;
            let criteria_array = criteria_value
                .as_array()
                .ok_or_else(|| schema(format!("criteria of trait '{name}' must be an array")))?;
            if criteria_array.is_empty() {
                return Err(schema(format!("trait '{name}' has an empty criteria list")));
            }

            let mut criteria = Vec::with_capacity(criteria_array.len());
            let mut seen_levels = std::collections::BTreeSet::new();
            for criterion in criteria_array {
                let cobj = as_object(criterion, &format!("criterion of trait '{name}'"))?;
                let score_value = cobj
                    .get("score")
                    .ok_or_else(|| schema(format!("criterion of trait '{name}' has no score")))?;
                let score =
                    require_integer_score(score_value, &format!("criterion of trait '{name}'"))?;
                if score < trait_min as i64 || score > trait_max as i64 {
                    return Err(PromptError::ScoreOutOfRange {
                        trait_name: name.clone(),
                        score,
                        min: trait_min,
                        max: trait_max,
                    });
                }
                if !seen_levels.insert(score) {
                    return Err(PromptError::DuplicateLevel {
                        trait_name: name.clone(),
                        score,
                    });
                }
                criteria.push(RubricCriterion {
                    score: score as i32,
                    description: require_str(
                        cobj,
                        "description",
                        &format!("criterion {score} of trait '{name}'"),
                    )?
                    .to_string(),
                });
            }
            criteria.sort_by_key(|c| c.score);
            Ok(RubricTrait {
                name,
                description,
                criteria,
            })
        })
        .collect()
}

// ============================================================================
// Trait evaluations
// ============================================================================

/// Validates a trait-evaluation reply against the rubric it was asked to
/// apply. Every rubric trait must be scored exactly once, each score must be
/// an integer within the rubric's range, every rationale must be non-empty,
/// and within each entry the rationale must be stated before the score —
/// score-first output means the reasoning was written to justify a
/// pre-chosen number. Results come back in rubric order regardless of reply
/// order; any `persona` echo block is ignored (the rubric already knows who
/// is evaluating).
pub fn validate_evaluation(
    doc: &ExtractedDocument,
    rubric: &Rubric,
) -> Result<AgentEvaluation, PromptError> {
    let candidate = descend_single_wrapper(&doc.value, &["trait_scores"]);
    let array = if let Some(arr) = candidate.get("trait_scores").and_then(Value::as_array) {
        arr
    } else if let Some(arr) = candidate.as_array() {
        arr
    } else {
        return Err(schema("expected a 'trait_scores' array"));
    };

    let mut by_name: std::collections::BTreeMap<String, TraitScore> =
        std::collections::BTreeMap::new();
    for entry in array {
        let obj = as_object(entry, "trait score entry")?;
        let trait_name = require_nonempty_str(obj, "trait_name", "trait score entry")?.to_string();
        if !rubric.traits.iter().any(|t| t.name == trait_name) {
            return Err(PromptError::UnknownTrait { trait_name });
        }
        if by_name.contains_key(&trait_name) {
            return Err(schema(format!(
                "trait '{trait_name}' is scored more than once"
            )));
        }

        // Key order within the entry mirrors the model's generation order;
        // the rationale must have been produced before the score.
        let keys: Vec<&String> = obj.keys().collect();
        let rationale_pos = keys.iter().position(|k| *k == "rationale");
        let score_pos = keys.iter().position(|k| *k == "score");
        if let (Some(r), Some(s)) = (rationale_pos, score_pos) {
            if s < r {
                return Err(PromptError::RationaleOrder {
                    trait_name: trait_name.clone(),
                });
            }
        }

        let rationale = obj
            .get("rationale")
            .and_then(Value::as_str)
            .unwrap_or("")
            .trim()
            .to_string();
        if rationale.is_empty() {
            return Err(PromptError::EmptyRationale {
                trait_name: trait_name.clone(),
            });
        }

        let score_value = obj
            .get("score")
            .ok_or_else(|| schema(format!("trait '{trait_name}' entry has no score")))?;
        let score = require_integer_score(score_value, &trait_name)?;
        if score < rubric.trait_min as i64 || score > rubric.trait_max as i64 {
            return Err(PromptError::ScoreOutOfRange {
                trait_name: trait_name.clone(),
                score,
                min: rubric.trait_min,
                max: rubric.trait_max,
            });
        }

        by_name.insert(
            trait_name.clone(),
            TraitScore {
                trait_name,
                rationale,
                score: score as i32,
            },
        );
    }

    let trait_scores = rubric
        .traits
        .iter()
        .map(|t| {
            by_name.remove(&t.name).ok_or(PromptError::MissingTrait {
                trait_name: t.name.clone(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;

    Ok(AgentEvaluation {
        persona_name: rubric.persona_name.clone(),
        trait_scores,
    })
}

// ============================================================================
// Roundtable synthesis
// ============================================================================

/// Validates a dialectical-reasoning reply: a non-empty dialogue whose final
/// turn belongs to the Moderator, plus a numeric holistic score. The
/// dialogue may sit under `reasoning_dialogue` or `dialectical_reasoning`,
/// at the top level or one wrapper deep. `expected_speakers` is used only to
/// make the wrong-final-speaker diagnostic self-explanatory.
pub fn validate_roundtable(
    doc: &ExtractedDocument,
    expected_speakers: &[String],
) -> Result<RoundtableOutcome, PromptError> {
    const DIALOGUE_KEYS: [&str; 2] = ["reasoning_dialogue", "dialectical_reasoning"];

    let has_dialogue = |v: &Value| DIALOGUE_KEYS.iter().any(|k| v.get(k).is_some());

    let top = as_object(&doc.value, "roundtable reply")?;
    let working = if has_dialogue(&doc.value) {
        &doc.value
    } else {
        top.values()
            .find(|v| v.is_object() && has_dialogue(v))
            .ok_or_else(|| schema("no 'reasoning_dialogue' found in reply"))?
    };
    let working = as_object(working, "roundtable body")?;

    let dialogue_value = DIALOGUE_KEYS
        .iter()
        .find_map(|k| working.get(*k))
        .expect("checked above");
    let turns = dialogue_value
        .as_array()
        .ok_or_else(|| schema("'reasoning_dialogue' must be an array of turns"))?;
    if turns.is_empty() {
        return Err(PromptError::EmptyDialogue);
    }

    let dialogue = turns
        .iter()
        .map(|turn| {
            let obj = as_object(turn, "dialogue turn")?;
            Ok(DialogueTurn {
                speaker: require_nonempty_str(obj, "speaker", "dialogue turn")?.to_string(),
                statement: require_str(obj, "statement", "dialogue turn")?.to_string(),
            })
        })
        .collect::<Result<Vec<DialogueTurn>, PromptError>>()?;

    let last_speaker = &dialogue.last().expect("non-empty").speaker;
    if last_speaker != "Moderator" {
        return Err(PromptError::NonModeratorEnd {
            last_speaker: last_speaker.clone(),
            expected: expected_speakers.join(", "),
        });
    }

    let score_value = working
        .get("holistic_score")
        .ok_or_else(|| schema("missing 'holistic_score'"))?;
    let holistic_raw = match score_value {
        Value::Number(n) => n.as_f64().ok_or_else(|| PromptError::NonNumericScore {
            found: n.to_string(),
        })?,
        other => {
            return Err(PromptError::NonNumericScore {
                found: render_value(other),
            })
        }
    };

    let feedback = working
        .get("feedback")
        .and_then(Value::as_str)
        .unwrap_or("")
        .to_string();

    Ok(RoundtableOutcome {
        dialogue,
        holistic_raw,
        feedback,
    })
}
