//! Report tables over aggregated runs: accuracy, efficiency (with AES
//! against a baseline run), behavioral stability, and answer-inclusion
//! stratification. Tables render as aligned text or comma-delimited rows
//! with fixed precisions (two decimals for accuracies and AES, four for the
//! stagnation scores, integers for degeneration counts and lengths).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{aes, AesPoint, AesWeights, MetricError, MetricReport};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("baseline run `{0}` not among the supplied reports")]
    MissingBaseline(String),
    #[error("baseline run `{0}` has no overall mean length")]
    BaselineWithoutLength(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// One rendered table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// The four standard report tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTables {
    pub accuracy: Table,
    pub efficiency: Table,
    pub behavioral: Table,
    pub inclusion: Table,
}

/// Output format for [`emit`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmitFormat {
    AlignedText,
    Delimited,
}

impl std::str::FromStr for EmitFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "aligned_text" | "text" => Ok(EmitFormat::AlignedText),
            "delimited" | "csv" => Ok(EmitFormat::Delimited),
            other => Err(format!("unknown report format: {other}")),
        }
    }
}

const ABSENT: &str = "-";

fn fmt2(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}"))
        .unwrap_or_else(|| ABSENT.to_string())
}

fn fmt4(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}"))
        .unwrap_or_else(|| ABSENT.to_string())
}

fn fmt_int(v: Option<f64>) -> String {
    v.map(|x| format!("{}", x.round() as i64))
        .unwrap_or_else(|| ABSENT.to_string())
}

/// Build the report tables for a set of runs, normalizing AES against the
/// named baseline run (whose own AES cells are zero by construction).
pub fn build_report(
    runs: &[MetricReport],
    baseline_id: &str,
    weights: AesWeights,
) -> Result<ReportTables, ReportError> {
    let baseline = runs
        .iter()
        .find(|r| r.run_id == baseline_id)
        .ok_or_else(|| ReportError::MissingBaseline(baseline_id.to_string()))?;
    let base_len = baseline
        .lengths
        .overall
        .ok_or_else(|| ReportError::BaselineWithoutLength(baseline_id.to_string()))?;

    let accuracy = Table {
        title: "accuracy".into(),
        headers: ["run", "em", "f1", "llm"].map(String::from).to_vec(),
        rows: runs
            .iter()
            .map(|r| {
                vec![
                    r.run_id.clone(),
                    fmt2(Some(r.em)),
                    fmt2(Some(r.f1)),
                    fmt2(r.llm_acc),
                ]
            })
            .collect(),
    };

    let mut efficiency_rows = Vec::new();
    for run in runs {
        let run_len = run.lengths.overall;
        let aes_for = |base_acc: f64, acc: Option<f64>| -> Result<Option<f64>, ReportError> {
            match (run_len, acc) {
                (Some(len), Some(acc)) => {
                    let value = aes(
                        AesPoint {
                            mean_len: base_len,
                            acc: base_acc,
                        },
                        AesPoint { mean_len: len, acc },
                        weights,
                    )?;
                    Ok(Some(value))
                }
                _ => Ok(None),
            }
        };
        let aes_em = aes_for(baseline.em, Some(run.em))?;
        let aes_f1 = aes_for(baseline.f1, Some(run.f1))?;
        let aes_llm = match baseline.llm_acc {
            Some(base_llm) => aes_for(base_llm, run.llm_acc)?,
            None => None,
        };
        efficiency_rows.push(vec![
            run.run_id.clone(),
            fmt_int(Some(run.degen_count as f64)),
            fmt_int(run.lengths.overall),
            fmt_int(run.lengths.correct),
            fmt_int(run.lengths.incorrect),
            fmt_int(run.lengths.valid),
            fmt2(aes_em),
            fmt2(aes_f1),
            fmt2(aes_llm),
        ]);
    }
    let efficiency = Table {
        title: "efficiency".into(),
        headers: [
            "run",
            "degen",
            "len_overall",
            "len_correct",
            "len_incorrect",
            "len_valid",
            "aes_em",
            "aes_f1",
            "aes_llm",
        ]
        .map(String::from)
        .to_vec(),
        rows: efficiency_rows,
    };

    let behavioral = Table {
        title: "behavioral".into(),
        headers: ["run", "xi_ot", "xi_ut", "meta"].map(String::from).to_vec(),
        rows: runs
            .iter()
            .map(|r| {
                vec![
                    r.run_id.clone(),
                    fmt4(r.xi_ot),
                    fmt4(r.xi_ut),
                    fmt2(r.meta_avg),
                ]
            })
            .collect(),
    };

    let inclusion = Table {
        title: "inclusion".into(),
        headers: [
            "run",
            "accuracy",
            "substring_correct",
            "substring_incorrect",
            "llm_judge_correct",
            "llm_judge_incorrect",
        ]
        .map(String::from)
        .to_vec(),
        rows: runs
            .iter()
            .map(|r| {
                vec![
                    r.run_id.clone(),
                    fmt2(r.llm_acc.or(Some(r.em))),
                    fmt2(r.substring_correct),
                    fmt2(r.substring_incorrect),
                    fmt2(r.inclusion_correct),
                    fmt2(r.inclusion_incorrect),
                ]
            })
            .collect(),
    };

    Ok(ReportTables {
        accuracy,
        efficiency,
        behavioral,
        inclusion,
    })
}

fn emit_aligned(table: &Table, out: &mut String) {
    let mut widths: Vec<usize> = table.headers.iter().map(String::len).collect();
    for row in &table.rows {
        for (i, cell) in row.iter().enumerate() {
            widths[i] = widths[i].max(cell.len());
        }
    }
    out.push_str("== ");
    out.push_str(&table.title);
    out.push_str(" ==\n");
    let mut line = String::new();
    for (i, header) in table.headers.iter().enumerate() {
        if i > 0 {
            line.push_str("  ");
        }
        line.push_str(&format!("{header:<width$}", width = widths[i]));
    }
    out.push_str(line.trim_end());
    out.push('\n');
    for row in &table.rows {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("  ");
            }
            line.push_str(&format!("{cell:<width$}", width = widths[i]));
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
}

fn emit_delimited(table: &Table, out: &mut String) {
    out.push_str("# ");
    out.push_str(&table.title);
    out.push('\n');
    out.push_str(&table.headers.join(","));
    out.push('\n');
    for row in &table.rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
}

/// Render all four tables deterministically.
pub fn emit(tables: &ReportTables, format: EmitFormat) -> String {
    let mut out = String::new();
    let all = [
        &tables.accuracy,
        &tables.efficiency,
        &tables.behavioral,
        &tables.inclusion,
    ];
    for (i, table) in all.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        match format {
            EmitFormat::AlignedText => emit_aligned(table, &mut out),
            EmitFormat::Delimited => emit_delimited(table, &mut out),
        }
    }
    out
}
