//! Essay corpus ingestion, prompt metadata, and seeded subsampling.
//!
//! Essays arrive as a tab-separated file with a header row (the ASAP layout:
//! `essay_id`, `essay_set`, `essay`, and a resolved human score column,
//! `domain1_score` by default). Prompt metadata — score ranges, genre, grade
//! level, and the prompt text handed to evaluators — ships built in for the
//! eight ASAP prompts and can be replaced wholesale from a JSON file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Errors raised while loading or sampling a corpus.
#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not valid UTF-8 and the Latin-1 fallback is disabled")]
    Decode { path: String },
    #[error("missing required column '{column}' in header")]
    MissingColumn { column: String },
    #[error("line {line}: {detail}")]
    MalformedRow { line: usize, detail: String },
    #[error("essay {essay_id}: unknown prompt id {prompt_id}")]
    UnknownPrompt { essay_id: u64, prompt_id: u32 },
    #[error("essay {essay_id}: score {score} outside declared range {min}..={max} for prompt {prompt_id}")]
    ScoreOutOfRange {
        essay_id: u64,
        prompt_id: u32,
        score: i32,
        min: i32,
        max: i32,
    },
    #[error("duplicate essay id {essay_id}")]
    DuplicateEssay { essay_id: u64 },
    #[error("essay {essay_id}: essay text is empty")]
    EmptyEssay { essay_id: u64 },
    #[error("invalid sampling fraction '{value}': {detail}")]
    InvalidFraction { value: String, detail: String },
    #[error("invalid prompt table: {detail}")]
    InvalidPromptTable { detail: String },
}

/// Broad genre of an essay prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Genre {
    /// Argumentative / persuasive writing.
    ARG,
    /// Source-dependent response.
    RES,
    /// Narrative writing.
    NAR,
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Genre::ARG => "ARG",
            Genre::RES => "RES",
            Genre::NAR => "NAR",
        };
        f.write_str(s)
    }
}

/// Metadata for one essay prompt: the task text handed to evaluators plus the
/// declared holistic score range used for validation, aggregation, and kappa.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub prompt_id: u32,
    pub genre: Genre,
    /// Inclusive lower bound of the resolved human score.
    pub min_score: i32,
    /// Inclusive upper bound of the resolved human score.
    pub max_score: i32,
    /// Audience descriptor interpolated into instructions, e.g. "grade 8".
    pub grade_level: String,
    /// Task descriptor interpolated into instructions, e.g. "persuasive".
    pub essay_type: String,
    /// Prompt text shown to evaluator personas.
    pub essay_prompt: String,
    /// Full-corpus record count, when known; used for reporting only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_count: Option<u64>,
}

#[derive(Deserialize)]
struct PromptTableFile {
    prompts: Vec<PromptSpec>,
}

/// Prompt table keyed by prompt id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptTable {
    prompts: BTreeMap<u32, PromptSpec>,
}

impl PromptTable {
    /// The eight ASAP prompts compiled into the binary.
    pub fn builtin() -> Self {
        let raw = include_str!("../assets/asap_prompts.json");
        Self::from_json(raw).expect("built-in prompt table must parse")
    }

    /// Parses a prompt table from JSON text (`{"prompts": [...]}`).
    pub fn from_json(raw: &str) -> Result<Self, CorpusError> {
        let file: PromptTableFile =
            serde_json::from_str(raw).map_err(|e| CorpusError::InvalidPromptTable {
                detail: e.to_string(),
            })?;
        let mut prompts = BTreeMap::new();
        for spec in file.prompts {
            if spec.min_score >= spec.max_score {
                return Err(CorpusError::InvalidPromptTable {
                    detail: format!(
                        "prompt {}: min_score {} must be below max_score {}",
                        spec.prompt_id, spec.min_score, spec.max_score
                    ),
                });
            }
            if prompts.insert(spec.prompt_id, spec).is_some() {
                return Err(CorpusError::InvalidPromptTable {
                    detail: "duplicate prompt_id".into(),
                });
            }
        }
        if prompts.is_empty() {
            return Err(CorpusError::InvalidPromptTable {
                detail: "table defines no prompts".into(),
            });
        }
        Ok(Self { prompts })
    }

    /// Loads a replacement table from a JSON file.
    pub fn from_path(path: &Path) -> Result<Self, CorpusError> {
        let raw = std::fs::read_to_string(path).map_err(|e| CorpusError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_json(&raw)
    }

    pub fn get(&self, prompt_id: u32) -> Option<&PromptSpec> {
        self.prompts.get(&prompt_id)
    }

    pub fn prompt_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.prompts.keys().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &PromptSpec> {
        self.prompts.values()
    }
}

/// One essay row from the corpus file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EssayRecord {
    pub essay_id: u64,
    pub prompt_id: u32,
    pub text: String,
    /// Resolved human score; absent for unlabeled rows.
    pub human_score: Option<i32>,
}

/// A loaded corpus: records in file order plus the prompt table they were
/// validated against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Corpus {
    pub records: Vec<EssayRecord>,
    pub prompts: PromptTable,
}

/// How to treat corpus bytes that are not valid UTF-8.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DecodeFallback {
    /// Reinterpret the file as Latin-1 (every byte maps to U+00..U+FF).
    /// The ASAP release is Latin-1-encoded, so this is the default.
    #[default]
    Latin1,
    /// Fail on invalid UTF-8.
    Strict,
}

/// Options for [`load_corpus`].
#[derive(Debug, Clone)]
pub struct LoadOptions {
    /// Header name of the resolved human score column.
    pub score_column: String,
    pub fallback: DecodeFallback,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            score_column: "domain1_score".into(),
            fallback: DecodeFallback::Latin1,
        }
    }
}

fn decode(bytes: Vec<u8>, path: &str, fallback: DecodeFallback) -> Result<String, CorpusError> {
    match String::from_utf8(bytes) {
        Ok(s) => Ok(s),
        Err(err) => match fallback {
            DecodeFallback::Latin1 => Ok(err.into_bytes().iter().map(|&b| b as char).collect()),
            DecodeFallback::Strict => Err(CorpusError::Decode { path: path.into() }),
        },
    }
}

/// Loads a tab-separated essay corpus and validates every row against the
/// prompt table: prompt ids must be known, essay text non-empty, essay ids
/// unique, and scores (when present) inside the prompt's declared range.
pub fn load_corpus(
    path: &Path,
    prompts: &PromptTable,
    options: &LoadOptions,
) -> Result<Corpus, CorpusError> {
    let bytes = std::fs::read(path).map_err(|e| CorpusError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    let text = decode(bytes, &path.display().to_string(), options.fallback)?;
    parse_corpus(&text, prompts, options)
}

/// Parses corpus text that has already been read and decoded.
pub fn parse_corpus(
    text: &str,
    prompts: &PromptTable,
    options: &LoadOptions,
) -> Result<Corpus, CorpusError> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| CorpusError::MissingColumn {
        column: "essay_id".into(),
    })?;
    let columns: Vec<&str> = header.split('\t').map(str::trim).collect();
    let col = |name: &str| -> Result<usize, CorpusError> {
        columns
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| CorpusError::MissingColumn {
                column: name.into(),
            })
    };
    let id_col = col("essay_id")?;
    let set_col = col("essay_set")?;
    let text_col = col("essay")?;
    let score_col = col(&options.score_column)?;

    let mut records = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = idx + 1; // 1-based for error messages
        let fields: Vec<&str> = line.split('\t').collect();
        let field = |i: usize, what: &str| -> Result<&str, CorpusError> {
            fields
                .get(i)
                .copied()
                .ok_or_else(|| CorpusError::MalformedRow {
                    line: line_no,
                    detail: format!("missing '{what}' field"),
                })
        };
        let essay_id: u64 =
            field(id_col, "essay_id")?
                .trim()
                .parse()
                .map_err(|_| CorpusError::MalformedRow {
                    line: line_no,
                    detail: format!("essay_id '{}' is not an integer", fields[id_col]),
                })?;
        let prompt_id: u32 =
            field(set_col, "essay_set")?
                .trim()
                .parse()
                .map_err(|_| CorpusError::MalformedRow {
                    line: line_no,
                    detail: format!("essay_set '{}' is not an integer", fields[set_col]),
                })?;
        let spec = prompts.get(prompt_id).ok_or(CorpusError::UnknownPrompt {
            essay_id,
            prompt_id,
        })?;
        let essay_text = field(text_col, "essay")?.trim();
        if essay_text.is_empty() {
            return Err(CorpusError::EmptyEssay { essay_id });
        }
        let score_raw = field(score_col, &options.score_column)?.trim();
        let human_score = if score_raw.is_empty() {
            None
        } else {
            let score: i32 = score_raw.parse().map_err(|_| CorpusError::MalformedRow {
                line: line_no,
                detail: format!("score '{score_raw}' is not an integer"),
            })?;
            if score < spec.min_score || score > spec.max_score {
                return Err(CorpusError::ScoreOutOfRange {
                    essay_id,
                    prompt_id,
                    score,
                    min: spec.min_score,
                    max: spec.max_score,
                });
            }
            Some(score)
        };
        if !seen.insert(essay_id) {
            return Err(CorpusError::DuplicateEssay { essay_id });
        }
        records.push(EssayRecord {
            essay_id,
            prompt_id,
            text: essay_text.to_string(),
            human_score,
        });
    }
    Ok(Corpus {
        records,
        prompts: prompts.clone(),
    })
}

/// Exact sampling fraction, kept as a rational so per-prompt subset sizes are
/// arithmetic facts rather than float accidents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fraction {
    pub numerator: u64,
    pub denominator: u64,
}

impl Fraction {
    pub const ONE: Fraction = Fraction {
        numerator: 1,
        denominator: 1,
    };

    /// Parses a decimal like "0.1", "1", or "0.25" into an exact rational.
    pub fn parse(value: &str) -> Result<Self, CorpusError> {
        let err = |detail: &str| CorpusError::InvalidFraction {
            value: value.into(),
            detail: detail.into(),
        };
        let value = value.trim();
        let (int_part, frac_part) = match value.split_once('.') {
            Some((i, f)) => (i, f),
            None => (value, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(err("empty"));
        }
        if !int_part.chars().all(|c| c.is_ascii_digit())
            || !frac_part.chars().all(|c| c.is_ascii_digit())
        {
            return Err(err("expected a non-negative decimal"));
        }
        if frac_part.len() > 9 {
            return Err(err("at most 9 decimal places supported"));
        }
        let den = 10u64.pow(frac_part.len() as u32);
        let int_val: u64 = if int_part.is_empty() {
            0
        } else {
            int_part
                .parse()
                .map_err(|_| err("integer part too large"))?
        };
        let frac_val: u64 = if frac_part.is_empty() {
            0
        } else {
            frac_part
                .parse()
                .map_err(|_| err("fraction part too large"))?
        };
        let num = int_val
            .checked_mul(den)
            .and_then(|v| v.checked_add(frac_val))
            .ok_or_else(|| err("value too large"))?;
        if num > den {
            return Err(err("fraction must be at most 1"));
        }
        if num == 0 {
            return Err(err("fraction must be positive"));
        }
        Ok(Self {
            numerator: num,
            denominator: den,
        })
    }

    /// Subset size for a group of `n` records: `n × fraction`, rounded half up,
    /// in exact integer arithmetic.
    pub fn scaled_count(&self, n: u64) -> u64 {
        let num = self.numerator as u128;
        let den = self.denominator as u128;
        ((2 * n as u128 * num + den) / (2 * den)) as u64
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// A deterministic evaluation subset of a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub records: Vec<EssayRecord>,
    pub fraction: Fraction,
    pub seed: u64,
}

fn prompt_rng(seed: u64, prompt_id: u32) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"rescore.subset");
    hasher.update(seed.to_le_bytes());
    hasher.update(prompt_id.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Draws a per-prompt evaluation subset: for each prompt independently,
/// `round_half_up(fraction × count)` essays chosen uniformly without
/// replacement from a generator derived from `(seed, prompt_id)`.
///
/// Selection is independent of the corpus file's row order: records are
/// put in canonical `(prompt_id, essay_id)` order before drawing, and the
/// returned split is in canonical order too, so `fraction = 1` reproduces
/// the full corpus sorted canonically.
pub fn sample_eval_subset(corpus: &Corpus, fraction: Fraction, seed: u64) -> CorpusSplit {
    let mut by_prompt: BTreeMap<u32, Vec<&EssayRecord>> = BTreeMap::new();
    for rec in &corpus.records {
        by_prompt.entry(rec.prompt_id).or_default().push(rec);
    }
    let mut records = Vec::new();
    for (&prompt_id, group) in by_prompt.iter_mut() {
        group.sort_by_key(|r| r.essay_id);
        let k = fraction.scaled_count(group.len() as u64) as usize;
        let mut indices: Vec<usize> = (0..group.len()).collect();
        let mut rng = prompt_rng(seed, prompt_id);
        // Partial Fisher-Yates: the first k slots end up holding the sample.
        for i in 0..k.min(indices.len()) {
            let j = rng.gen_range(i..indices.len());
            indices.swap(i, j);
        }
        let mut chosen: Vec<&EssayRecord> = indices[..k.min(group.len())]
            .iter()
            .map(|&i| group[i])
            .collect();
        chosen.sort_by_key(|r| r.essay_id);
        records.extend(chosen.into_iter().cloned());
    }
    CorpusSplit {
        records,
        fraction,
        seed,
    }
}

/// Summary statistics for one prompt's essays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptStats {
    pub prompt_id: u32,
    pub count: u64,
    /// Mean whitespace-delimited token count, rounded to nearest; absent for
    /// empty groups.
    pub mean_length: Option<u64>,
    pub min_score: i32,
    pub max_score: i32,
    pub genre: Genre,
    pub expected_count: Option<u64>,
}

/// Per-prompt counts, mean token lengths, and declared ranges. Covers every
/// prompt in the table, including prompts with no essays in this corpus.
pub fn corpus_stats(corpus: &Corpus) -> Vec<PromptStats> {
    let mut counts: BTreeMap<u32, (u64, u64)> = BTreeMap::new();
    for rec in &corpus.records {
        let entry = counts.entry(rec.prompt_id).or_insert((0, 0));
        entry.0 += 1;
        entry.1 += rec.text.split_whitespace().count() as u64;
    }
    corpus
        .prompts
        .iter()
        .map(|spec| {
            let (count, tokens) = counts.get(&spec.prompt_id).copied().unwrap_or((0, 0));
            let mean_length = if count == 0 {
                None
            } else {
                // round to nearest integer
                Some((2 * tokens + count) / (2 * count))
            };
            PromptStats {
                prompt_id: spec.prompt_id,
                count,
                mean_length,
                min_score: spec.min_score,
                max_score: spec.max_score,
                genre: spec.genre,
                expected_count: spec.expected_count,
            }
        })
        .collect()
}
