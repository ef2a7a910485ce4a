//! Cross-run comparison tables.
//!
//! A report row summarizes one run directory: agreement with human scores
//! per prompt and macro-averaged, coverage, and mean per-essay cost and
//! latency. Rows render side by side as an aligned text table and as CSV,
//! with a roundtable-effect line whenever the same model appears both with
//! and without dialectical reasoning.

use std::collections::BTreeMap;
use std::path::Path;

use crate::corpus::Corpus;
use crate::metrics::{build_report, PredictedScore};
use crate::pipeline::ScoringMethod;

use super::{load_manifest, load_predictions, AblationCell, ExperimentError};

/// One run, reduced to comparable numbers.
#[derive(Debug, Clone)]
pub struct RunReportRow {
    pub label: String,
    pub method: ScoringMethod,
    pub model_id: String,
    pub per_prompt: BTreeMap<u32, f64>,
    pub macro_average: f64,
    /// Essays with committed predictions.
    pub essays: usize,
    /// Planned essays that have no prediction (failed or not yet scored).
    pub excluded: usize,
    pub mean_cost_usd: f64,
    pub mean_latency_ms: f64,
}

/// Summarizes one run directory against the corpus's human scores.
pub fn collect_run_report(
    run_dir: &Path,
    corpus: &Corpus,
) -> Result<RunReportRow, ExperimentError> {
    let manifest = load_manifest(run_dir)?;
    let predictions = load_predictions(run_dir)?;
    if predictions.is_empty() {
        return Err(ExperimentError::Config {
            detail: format!("{} has no predictions to report", run_dir.display()),
        });
    }

    let pairs: Vec<PredictedScore> = predictions
        .iter()
        .map(|p| PredictedScore {
            essay_id: p.essay_id,
            prediction: p.prediction,
        })
        .collect();
    let report = build_report(&pairs, corpus)?;

    let n = predictions.len();
    let total_cost_usd: f64 = predictions
        .iter()
        .map(|p| p.usage.cost_micro_usd.as_usd())
        .sum();
    let total_latency_ms: u64 = predictions.iter().map(|p| p.usage.latency_ms).sum();

    Ok(RunReportRow {
        label: format!("{} {}", manifest.method, manifest.model_id),
        method: manifest.method,
        model_id: manifest.model_id,
        per_prompt: report
            .per_prompt
            .iter()
            .map(|p| (p.prompt_id, p.kappa))
            .collect(),
        macro_average: report.macro_average,
        essays: n,
        excluded: manifest.planned_essays.saturating_sub(n),
        mean_cost_usd: total_cost_usd / n as f64,
        mean_latency_ms: total_latency_ms as f64 / n as f64,
    })
}

fn fmt_kappa(value: f64) -> String {
    format!("{value:.3}")
}

/// Renders rows as an aligned text table plus CSV.
pub fn render_report(rows: &[RunReportRow]) -> (String, String) {
    let prompt_ids: Vec<u32> = rows
        .iter()
        .flat_map(|r| r.per_prompt.keys().copied())
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();

    let mut header: Vec<String> = vec!["run".into()];
    header.extend(prompt_ids.iter().map(|id| format!("P{id}")));
    header.extend(
        ["Avg", "Essays", "Excl", "$/essay", "ms/essay"]
            .iter()
            .map(|s| s.to_string()),
    );

    let mut body: Vec<Vec<String>> = Vec::new();
    for row in rows {
        let mut cells = vec![row.label.clone()];
        for id in &prompt_ids {
            cells.push(
                row.per_prompt
                    .get(id)
                    .map(|&k| fmt_kappa(k))
                    .unwrap_or_else(|| "-".into()),
            );
        }
        cells.push(fmt_kappa(row.macro_average));
        cells.push(row.essays.to_string());
        cells.push(row.excluded.to_string());
        cells.push(format!("{:.4}", row.mean_cost_usd));
        cells.push(format!("{:.1}", row.mean_latency_ms));
        body.push(cells);
    }

    let mut text = render_table(&header, &body);

    // Roundtable effect: pair up res and res_no_dr rows per model.
    for row in rows {
        if row.method != ScoringMethod::Res {
            continue;
        }
        if let Some(without) = rows
            .iter()
            .find(|r| r.method == ScoringMethod::ResNoDr && r.model_id == row.model_id)
        {
            let delta = row.macro_average - without.macro_average;
            text.push_str(&format!(
                "\nroundtable effect for {}: res {} vs res_no_dr {} (delta {}{})\n",
                row.model_id,
                fmt_kappa(row.macro_average),
                fmt_kappa(without.macro_average),
                if delta >= 0.0 { "+" } else { "" },
                fmt_kappa(delta),
            ));
        }
    }

    let mut csv = String::new();
    let mut csv_header: Vec<String> = vec!["run".into(), "method".into(), "model".into()];
    csv_header.extend(prompt_ids.iter().map(|id| format!("p{id}")));
    csv_header.extend(
        [
            "macro_avg",
            "essays",
            "excluded",
            "mean_cost_usd",
            "mean_latency_ms",
        ]
        .iter()
        .map(|s| s.to_string()),
    );
    csv.push_str(&csv_header.join(","));
    csv.push('\n');
    for row in rows {
        let mut cells = vec![
            row.label.clone(),
            row.method.to_string(),
            row.model_id.clone(),
        ];
        for id in &prompt_ids {
            cells.push(
                row.per_prompt
                    .get(id)
                    .map(|&k| fmt_kappa(k))
                    .unwrap_or_default(),
            );
        }
        cells.push(fmt_kappa(row.macro_average));
        cells.push(row.essays.to_string());
        cells.push(row.excluded.to_string());
        cells.push(format!("{:.4}", row.mean_cost_usd));
        cells.push(format!("{:.1}", row.mean_latency_ms));
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }

    (text, csv)
}

/// Renders ablation cells as an aligned text table plus CSV.
pub fn render_ablation(cells: &[AblationCell]) -> (String, String) {
    let header: Vec<String> = [
        "cell", "agents", "traits", "dr", "method", "scored", "failed", "qwk",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();

    let row_cells = |cell: &AblationCell| -> Vec<String> {
        vec![
            cell.label.clone(),
            cell.n_agents.to_string(),
            cell.n_traits_per_agent.to_string(),
            if cell.dr_enabled { "on" } else { "off" }.to_string(),
            cell.method.to_string(),
            cell.summary.scored.to_string(),
            cell.summary.failed.to_string(),
            cell.macro_qwk.map(fmt_kappa).unwrap_or_else(|| "-".into()),
        ]
    };

    let body: Vec<Vec<String>> = cells.iter().map(row_cells).collect();
    let text = render_table(&header, &body);

    let mut csv = String::new();
    csv.push_str("cell,agents,traits_per_agent,dr,method,scored,failed,macro_qwk\n");
    for cell in cells {
        csv.push_str(&row_cells(cell).join(","));
        csv.push('\n');
    }

    (text, csv)
}

/// Left-aligns the first column, right-aligns the rest, pads to fit.
fn render_table(header: &[String], body: &[Vec<String>]) -> String {
    let columns = header.len();
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.chars().count());
        }
    }

    let mut out = String::new();
    let write_row = |cells: &[String], out: &mut String| {
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                out.push_str("  ");
            }
            let pad = widths[i].saturating_sub(cell.chars().count());
            if i == 0 {
                out.push_str(cell);
                if i + 1 < columns {
                    out.push_str(&" ".repeat(pad));
                }
            } else {
                out.push_str(&" ".repeat(pad));
                out.push_str(cell);
            }
        }
        out.push('\n');
    };

    write_row(header, &mut out);
    let rule_width = widths.iter().sum::<usize>() + 2 * (columns - 1);
    out.push_str(&"-".repeat(rule_width));
    out.push('\n');
    for row in body {
        write_row(row, &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(
        method: ScoringMethod,
        model: &str,
        kappas: &[(u32, f64)],
        macro_average: f64,
    ) -> RunReportRow {
        RunReportRow {
            label: format!("{method} {model}"),
            method,
            model_id: model.into(),
            per_prompt: kappas.iter().copied().collect(),
            macro_average,
            essays: 120,
            excluded: 3,
            mean_cost_usd: 0.0021,
            mean_latency_ms: 0.0,
        }
    }

    #[test]
    fn table_aligns_columns_and_fills_missing_prompts() {
        let rows = vec![
            row(
                ScoringMethod::Vanilla,
                "model-a",
                &[(1, 0.063), (2, 0.184)],
                0.364,
            ),
            row(ScoringMethod::Res, "model-a", &[(1, 0.229)], 0.483),
        ];
        let (text, csv) = render_report(&rows);
        assert!(text.contains("P1"));
        assert!(text.contains("P2"));
        assert!(text.contains("0.063"));
        // The res row has no P2 value.
        assert!(text
            .lines()
            .any(|l| l.contains("res model-a") && l.contains('-')));

        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "run,method,model,p1,p2,macro_avg,essays,excluded,mean_cost_usd,mean_latency_ms"
        );
        assert!(csv.contains("vanilla model-a,vanilla,model-a,0.063,0.184,0.364,120,3,0.0021,0.0"));
    }

    #[test]
    fn roundtable_effect_line_pairs_matching_models() {
        let rows = vec![
            row(ScoringMethod::Res, "model-a", &[(1, 0.5)], 0.483),
            row(ScoringMethod::ResNoDr, "model-a", &[(1, 0.4)], 0.439),
            row(ScoringMethod::ResNoDr, "model-b", &[(1, 0.4)], 0.300),
        ];
        let (text, _) = render_report(&rows);
        assert!(text.contains("roundtable effect for model-a"));
        assert!(text.contains("delta +0.044"));
        assert!(!text.contains("roundtable effect for model-b"));
    }

    #[test]
    fn negative_delta_is_signed_naturally() {
        let rows = vec![
            row(ScoringMethod::Res, "m", &[(1, 0.3)], 0.300),
            row(ScoringMethod::ResNoDr, "m", &[(1, 0.4)], 0.400),
        ];
        let (text, _) = render_report(&rows);
        assert!(text.contains("delta -0.100"));
    }
}
