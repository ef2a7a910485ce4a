//! Shared helpers for integration tests: tiny corpora and scripted fixture
//! sets that satisfy every stage of the panel pipeline.

#![allow(dead_code)]

use std::path::Path;

use rescore::corpus::{Corpus, EssayRecord, PromptTable};
use serde_json::json;

/// Mirrors the scripted backend's tag-to-filename rule.
pub fn write_fixture(dir: &Path, tag: &str, content: &str) {
    let name: String = tag
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    std::fs::write(dir.join(format!("{name}.txt")), content).unwrap();
}

/// Builds a corpus over the built-in prompt table from (essay_id, prompt_id,
/// text, human_score) rows.
pub fn corpus_of(rows: &[(u64, u32, &str, i32)]) -> Corpus {
    Corpus {
        records: rows
            .iter()
            .map(|&(essay_id, prompt_id, text, human)| EssayRecord {
                essay_id,
                prompt_id,
                text: text.to_string(),
                human_score: Some(human),
            })
            .collect(),
        prompts: PromptTable::builtin(),
    }
}

/// Shape of one essay's scripted panel responses.
#[derive(Clone)]
pub struct PanelFixtures {
    pub n_agents: usize,
    pub n_traits: usize,
    pub trait_min: i32,
    pub trait_max: i32,
    /// Score every persona gives every trait.
    pub trait_score: i32,
    /// The moderator's final number.
    pub holistic: f64,
    pub vanilla_score: i32,
}

impl Default for PanelFixtures {
    fn default() -> Self {
        PanelFixtures {
            n_agents: 4,
            n_traits: 3,
            trait_min: 0,
            trait_max: 3,
            trait_score: 2,
            holistic: 2.0,
            vanilla_score: 2,
        }
    }
}

pub fn persona_name(idx: usize) -> String {
    format!("Evaluator {}", idx + 1)
}

fn trait_name(agent_idx: usize, trait_idx: usize) -> String {
    format!("Trait {}-{}", agent_idx + 1, trait_idx + 1)
}

pub fn personas_json(n_agents: usize) -> String {
    let personas: Vec<_> = (0..n_agents)
        .map(|i| {
            json!({
                "name": persona_name(i),
                "background": format!("Assessment specialist {} with classroom experience.", i + 1),
                "expertise": format!("Writing dimension {}.", i + 1),
                "focus": format!("Judges dimension {} of the essay.", i + 1),
            })
        })
        .collect();
    serde_json::to_string_pretty(&personas).unwrap()
}

pub fn rubric_json(agent_idx: usize, fx: &PanelFixtures) -> String {
    let traits: Vec<_> = (0..fx.n_traits)
        .map(|t| {
            let criteria: Vec<_> = (fx.trait_min..=fx.trait_max)
                .map(|level| {
                    json!({
                        "score": level,
                        "description": format!("Work at level {level} for this trait."),
                    })
                })
                .collect();
            json!({
                "name": trait_name(agent_idx, t),
                "description": format!("Measures facet {} of dimension {}.", t + 1, agent_idx + 1),
                "criteria": criteria,
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({
        "persona": {
            "name": persona_name(agent_idx),
            "focus": format!("Judges dimension {} of the essay.", agent_idx + 1),
        },
        "traits": traits,
    }))
    .unwrap()
}

pub fn evaluation_json(agent_idx: usize, fx: &PanelFixtures) -> String {
    let scores: Vec<_> = (0..fx.n_traits)
        .map(|t| {
            json!({
                "trait_name": trait_name(agent_idx, t),
                "rationale": format!(
                    "Facet {} shows steady control for this grade level.",
                    t + 1
                ),
                "score": fx.trait_score,
            })
        })
        .collect();
    serde_json::to_string_pretty(&json!({
        "persona": { "name": persona_name(agent_idx), "focus": "as assigned" },
        "trait_scores": scores,
    }))
    .unwrap()
}

pub fn roundtable_json(fx: &PanelFixtures) -> String {
    let mut dialogue: Vec<_> = (0..fx.n_agents)
        .map(|i| {
            json!({
                "speaker": persona_name(i),
                "statement": format!("My trait scores support a holistic {} here.", fx.holistic),
            })
        })
        .collect();
    dialogue.push(json!({
        "speaker": "Moderator",
        "statement": format!("Weighing the panel, the final holistic score is {}.", fx.holistic),
    }));
    serde_json::to_string_pretty(&json!({
        "reasoning_dialogue": dialogue,
        "holistic_score": fx.holistic,
        "feedback": "Consistent panel judgment.",
    }))
    .unwrap()
}

pub fn vanilla_json(score: i32) -> String {
    serde_json::to_string_pretty(&json!({
        "rationale": "Taken as a whole the response earns this band.",
        "score": score,
    }))
    .unwrap()
}

/// Installs every fixture one panel run over an essay needs.
pub fn install_res_fixtures(dir: &Path, essay_id: u64, fx: &PanelFixtures) {
    write_fixture(
        dir,
        &format!("persona_creation:{essay_id}"),
        &personas_json(fx.n_agents),
    );
    for agent in 0..fx.n_agents {
        write_fixture(
            dir,
            &format!("rubric_construction:{essay_id}:{agent}"),
            &rubric_json(agent, fx),
        );
        write_fixture(
            dir,
            &format!("trait_evaluation:{essay_id}:{agent}"),
            &evaluation_json(agent, fx),
        );
    }
    write_fixture(
        dir,
        &format!("dialectical_reasoning:{essay_id}"),
        &roundtable_json(fx),
    );
}

pub fn install_vanilla_fixture(dir: &Path, essay_id: u64, fx: &PanelFixtures) {
    write_fixture(
        dir,
        &format!("vanilla_scoring:{essay_id}"),
        &vanilla_json(fx.vanilla_score),
    );
}
