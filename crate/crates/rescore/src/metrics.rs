//! Agreement metrics and score reporting.
//!
//! The headline metric is quadratic weighted kappa (QWK) over a declared
//! integer score range: categories are indexed from the range minimum, the
//! disagreement weight between categories `i` and `j` is `(i-j)²/(k-1)²`, and
//! kappa compares observed weighted disagreement against the disagreement
//! expected from the two marginal distributions. The declared range — not the
//! set of labels that happen to occur — fixes the category count, so a
//! clustered sample on a wide range is penalized accordingly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::Corpus;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("score pair set is empty")]
    EmptyPairs,
    #[error("no values to average")]
    EmptyAverage,
    #[error("{which} score {value} outside declared range {min}..={max}")]
    ValueOutOfRange {
        which: &'static str,
        value: i32,
        min: i32,
        max: i32,
    },
    #[error("declared range {min}..={max} is invalid")]
    InvalidRange { min: i32, max: i32 },
    #[error("human and predicted lists differ in length ({human} vs {predicted})")]
    LengthMismatch { human: usize, predicted: usize },
    #[error("relative improvement undefined for baseline 0")]
    ZeroBaseline,
    #[error("prediction for essay {essay_id} has no matching corpus record")]
    UnknownEssay { essay_id: u64 },
    #[error("essay {essay_id} has no human score; cannot be used for kappa")]
    UnlabeledEssay { essay_id: u64 },
    #[error("essay {essay_id}: {source}")]
    BadPair {
        essay_id: u64,
        #[source]
        source: Box<MetricsError>,
    },
    #[error("no predictions to report")]
    EmptyReport,
}

/// Paired human/predicted integer scores on a declared inclusive range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorePairSet {
    human: Vec<i32>,
    predicted: Vec<i32>,
    min_score: i32,
    max_score: i32,
}

impl ScorePairSet {
    /// Builds a pair set, validating lengths and that every value sits inside
    /// the declared range.
    pub fn new(
        human: Vec<i32>,
        predicted: Vec<i32>,
        min_score: i32,
        max_score: i32,
    ) -> Result<Self, MetricsError> {
        if min_score > max_score {
            return Err(MetricsError::InvalidRange {
                min: min_score,
                max: max_score,
            });
        }
        if human.len() != predicted.len() {
            return Err(MetricsError::LengthMismatch {
                human: human.len(),
                predicted: predicted.len(),
            });
        }
        let check = |which: &'static str, v: i32| {
            if v < min_score || v > max_score {
                Err(MetricsError::ValueOutOfRange {
                    which,
                    value: v,
                    min: min_score,
                    max: max_score,
                })
            } else {
                Ok(())
            }
        };
        for &v in &human {
            check("human", v)?;
        }
        for &v in &predicted {
            check("predicted", v)?;
        }
        Ok(Self {
            human,
            predicted,
            min_score,
            max_score,
        })
    }

    pub fn len(&self) -> usize {
        self.human.len()
    }

    pub fn is_empty(&self) -> bool {
        self.human.is_empty()
    }
}

/// Kappa value plus a flag marking the degenerate all-one-category case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappa {
    pub value: f64,
    /// True when expected disagreement is zero (all mass in one identical
    /// category on both sides); the value is 1.0 by convention then.
    pub degenerate: bool,
}

/// Quadratic weighted kappa over the declared range.
///
/// Implementation note: the `(k-1)²` weight normalization cancels between
/// numerator and denominator, so this computes
/// `1 − n·Σ(h−p)² / Σ_{i,j} (i−j)²·count_h(i)·count_p(j)`
/// with exact integer accumulation and a single floating-point division.
pub fn quadratic_weighted_kappa(pairs: &ScorePairSet) -> Result<f64, MetricsError> {
    Ok(weighted_kappa(pairs)?.value)
}

/// As [`quadratic_weighted_kappa`], but also reports degeneracy.
pub fn weighted_kappa(pairs: &ScorePairSet) -> Result<Kappa, MetricsError> {
    if pairs.is_empty() {
        return Err(MetricsError::EmptyPairs);
    }
    let k = (pairs.max_score - pairs.min_score + 1) as usize;
    if k == 1 {
        // The declared range admits a single category, so construction already
        // forced every pair identical: perfect agreement by convention.
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    let n = pairs.human.len() as i128;
    let mut human_counts = vec![0i128; k];
    let mut predicted_counts = vec![0i128; k];
    let mut observed_disagreement: i128 = 0;
    for (&h, &p) in pairs.human.iter().zip(&pairs.predicted) {
        let hi = (h - pairs.min_score) as i128;
        let pi = (p - pairs.min_score) as i128;
        human_counts[hi as usize] += 1;
        predicted_counts[pi as usize] += 1;
        observed_disagreement += (hi - pi) * (hi - pi);
    }
    let mut expected_disagreement: i128 = 0;
    for (i, &hc) in human_counts.iter().enumerate() {
        if hc == 0 {
            continue;
        }
        for (j, &pc) in predicted_counts.iter().enumerate() {
            let d = i as i128 - j as i128;
            expected_disagreement += d * d * hc * pc;
        }
    }
    if expected_disagreement == 0 {
        return Ok(Kappa {
            value: 1.0,
            degenerate: true,
        });
    }
    let ratio = (observed_disagreement * n) as f64 / expected_disagreement as f64;
    Ok(Kappa {
        value: 1.0 - ratio,
        degenerate: false,
    })
}

/// Unweighted mean of per-prompt kappas (or any values).
pub fn macro_average(values: &[f64]) -> Result<f64, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyAverage);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Relative improvement of `new` over `baseline`: `(new − baseline) / baseline`.
pub fn relative_improvement(baseline: f64, new: f64) -> Result<f64, MetricsError> {
    if baseline == 0.0 {
        return Err(MetricsError::ZeroBaseline);
    }
    Ok((new - baseline) / baseline)
}

/// A prediction joined against the corpus by essay id.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedScore {
    pub essay_id: u64,
    pub prediction: i32,
}

/// Kappa for one prompt's essays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptKappa {
    pub prompt_id: u32,
    pub kappa: f64,
    pub n: usize,
    pub degenerate: bool,
}

/// Per-prompt kappas plus their macro average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QwkReport {
    pub per_prompt: Vec<PromptKappa>,
    pub macro_average: f64,
}

impl QwkReport {
    pub fn kappa_for(&self, prompt_id: u32) -> Option<f64> {
        self.per_prompt
            .iter()
            .find(|p| p.prompt_id == prompt_id)
            .map(|p| p.kappa)
    }
}

/// Joins predictions to corpus labels by essay id, computes per-prompt kappa
/// on each prompt's declared range, and macro-averages across prompts.
pub fn build_report(
    predictions: &[PredictedScore],
    corpus: &Corpus,
) -> Result<QwkReport, MetricsError> {
    if predictions.is_empty() {
        return Err(MetricsError::EmptyReport);
    }
    let by_id: BTreeMap<u64, &crate::corpus::EssayRecord> =
        corpus.records.iter().map(|r| (r.essay_id, r)).collect();
    let mut grouped: BTreeMap<u32, (Vec<i32>, Vec<i32>)> = BTreeMap::new();
    for pred in predictions {
        let record = by_id
            .get(&pred.essay_id)
            .ok_or(MetricsError::UnknownEssay {
                essay_id: pred.essay_id,
            })?;
        let human = record.human_score.ok_or(MetricsError::UnlabeledEssay {
            essay_id: pred.essay_id,
        })?;
        let entry = grouped.entry(record.prompt_id).or_default();
        entry.0.push(human);
        entry.1.push(pred.prediction);
    }
    let mut per_prompt = Vec::new();
    for (prompt_id, (human, predicted)) in grouped {
        let spec = corpus
            .prompts
            .get(prompt_id)
            .expect("load_corpus validated prompt ids");
        let n = human.len();
        let pairs =
            ScorePairSet::new(human, predicted, spec.min_score, spec.max_score).map_err(|e| {
                MetricsError::BadPair {
                    // The offending essay is in this prompt group; report the
                    // group's first essay for context.
                    essay_id: predictions
                        .iter()
                        .find(|p| by_id.get(&p.essay_id).map(|r| r.prompt_id) == Some(prompt_id))
                        .map(|p| p.essay_id)
                        .unwrap_or_default(),
                    source: Box::new(e),
                }
            })?;
        let kappa = weighted_kappa(&pairs)?;
        per_prompt.push(PromptKappa {
            prompt_id,
            kappa: kappa.value,
            n,
            degenerate: kappa.degenerate,
        });
    }
    let values: Vec<f64> = per_prompt.iter().map(|p| p.kappa).collect();
    Ok(QwkReport {
        macro_average: macro_average(&values)?,
        per_prompt,
    })
}
