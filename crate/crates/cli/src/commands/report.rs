//! `report`: splits a long score table into one tidy CSV per figure family
//! plus a summary table.
//!
//! Inputs are read from `<dir>/scores.csv` only and outputs go to
//! `<dir>/report/`, so re-running is idempotent.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use stfusion::metrics::ScoreRow;

use super::prepare_out;
use crate::error::{CliError, CliResult};
use crate::io::{num, write_csv, Table};

pub const SCORE_HEADER: [&str; 6] = ["model", "scenario", "replicate", "radius", "score_name", "value"];

pub fn write_scores(path: &Path, rows: &[ScoreRow]) -> CliResult<()> {
    write_csv(
        path,
        &SCORE_HEADER,
        rows.iter().map(|r| {
            vec![
                r.model.clone(),
                r.scenario.clone(),
                r.replicate.to_string(),
                r.radius.map(num).unwrap_or_default(),
                r.score_name.clone(),
                num(r.value),
            ]
        }),
    )
}

pub fn read_scores(path: &Path) -> CliResult<Vec<ScoreRow>> {
    let t = Table::read(path)?;
    let c: Vec<usize> = SCORE_HEADER.iter().map(|h| t.column(h)).collect::<CliResult<_>>()?;
    (0..t.len())
        .map(|i| {
            let replicate = t.text(i, c[2])?;
            Ok(ScoreRow {
                model: t.text(i, c[0])?.to_string(),
                scenario: t.text(i, c[1])?.to_string(),
                replicate: replicate.parse().map_err(|_| {
                    CliError::validation(format!(
                        "{} line {}: bad replicate `{replicate}`",
                        path.display(),
                        i + 2
                    ))
                })?,
                radius: t.optional(i, c[3])?,
                score_name: t.text(i, c[4])?.to_string(),
                // NaN marks an undefined score (MAPE with every y = 0).
                value: if t.text(i, c[5])? == "NaN" {
                    f64::NAN
                } else {
                    t.number(i, c[5])?
                },
            })
        })
        .collect()
}

/// Mean, SD and count of one score over replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub model: String,
    pub scenario: String,
    pub radius: Option<f64>,
    pub score_name: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
}

/// Groups by (model, scenario, radius, score) in first-appearance order.
pub fn summarize(rows: &[ScoreRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, Option<u64>, String)> = Vec::new();
    let mut groups: BTreeMap<(String, String, Option<u64>, String), Vec<f64>> = BTreeMap::new();
    for r in rows {
        let key = (
            r.model.clone(),
            r.scenario.clone(),
            r.radius.map(f64::to_bits),
            r.score_name.clone(),
        );
        let e = groups.entry(key.clone()).or_default();
        if e.is_empty() {
            order.push(key);
        }
        e.push(r.value);
    }
    order
        .into_iter()
        .map(|k| {
            let v = &groups[&k];
            let n = v.len();
            let mean = v.iter().sum::<f64>() / n as f64;
            let sd = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                model: k.0,
                scenario: k.1,
                radius: k.2.map(f64::from_bits),
                score_name: k.3,
                n,
                mean,
                sd,
            }
        })
        .collect()
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> CliResult<()> {
    write_csv(
        path,
        &["model", "scenario", "radius", "score_name", "n", "mean", "sd"],
        rows.iter().map(|s| {
            vec![
                s.model.clone(),
                s.scenario.clone(),
                s.radius.map(num).unwrap_or_default(),
                s.score_name.clone(),
                s.n.to_string(),
                num(s.mean),
                num(s.sd),
            ]
        }),
    )
}

/// Figure family of a score row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    /// Prediction quality over the field (squared error, posterior SD, DS).
    Field,
    /// Relative errors of hyperparameters and fixed effects, and α̂₁.
    Parameters,
    /// Averaging weight per α₁ value.
    Weights,
    /// Cross-validation scores per radius.
    CrossValidation,
    Other,
}

pub fn classify(r: &ScoreRow) -> Family {
    let n = r.score_name.as_str();
    if r.radius.is_some() {
        Family::CrossValidation
    } else if matches!(n, "avg_squared_error" | "avg_posterior_sd" | "avg_ds_score") {
        Family::Field
    } else if n.starts_with("rel_error_") || n == "alpha1_hat" {
        Family::Parameters
    } else if weight_alpha1(n).is_some() {
        Family::Weights
    } else {
        Family::Other
    }
}

fn weight_alpha1(name: &str) -> Option<f64> {
    name.strip_prefix("bma_weight[")?.strip_suffix(']')?.parse().ok()
}

pub fn run(dir: &Path, out: Option<PathBuf>) -> CliResult<()> {
    let rows = read_scores(&dir.join("scores.csv"))?;
    let out = out.unwrap_or_else(|| dir.join("report"));
    prepare_out(&out)?;
    let pick = |f: Family| rows.iter().filter(move |r| classify(r) == f);
    let plain = |r: &ScoreRow| {
        vec![
            r.model.clone(),
            r.scenario.clone(),
            r.replicate.to_string(),
            r.score_name.clone(),
            num(r.value),
        ]
    };
    let plain_header = ["model", "scenario", "replicate", "score_name", "value"];
    write_csv(
        &out.join("field_scores.csv"),
        &plain_header,
        pick(Family::Field).map(plain),
    )?;
    write_csv(
        &out.join("parameter_recovery.csv"),
        &plain_header,
        pick(Family::Parameters).map(plain),
    )?;
    write_csv(
        &out.join("other_scores.csv"),
        &plain_header,
        pick(Family::Other).map(plain),
    )?;
    write_csv(
        &out.join("bma_weights.csv"),
        &["model", "scenario", "replicate", "alpha1", "weight"],
        pick(Family::Weights).map(|r| {
            vec![
                r.model.clone(),
                r.scenario.clone(),
                r.replicate.to_string(),
                weight_alpha1(&r.score_name).map(num).unwrap_or_default(),
                num(r.value),
            ]
        }),
    )?;
    write_scores(
        &out.join("cv_scores.csv"),
        &pick(Family::CrossValidation).cloned().collect::<Vec<_>>(),
    )?;
    write_summary(&out.join("summary.csv"), &summarize(&rows))
}
