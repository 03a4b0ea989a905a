//! Final-result summaries and their plain-text rendering.
//!
//! A summary holds the aggregated metrics of one experiment run in a
//! serializable form; the renderer lays any number of summaries out as one
//! fixed-width comparison table with ✓/✗ architecture columns. Metrics a
//! run never optimized (weight 0) are omitted from the summary and shown
//! as `-` in the table.

use serde::{Deserialize, Serialize};

use crate::train::{ExperimentConfig, ExperimentOutcome, MetricSummary, SeedMeans};

/// One seed's fold-averaged test metrics, kept alongside the aggregate so a
/// summary file is self-contained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub means: SeedMeans,
}

/// Serializable final results of one experiment run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub self_attention: bool,
    pub cross_attention: bool,
    pub bridge_tokens: bool,
    pub rmm: bool,
    pub n_seeds: usize,
    pub n_folds: usize,
    /// Classification metrics; `None` when the categorical weight is 0.
    pub war: Option<MetricSummary>,
    pub uar: Option<MetricSummary>,
    /// `None` when the valence weight is 0.
    pub ccc_valence: Option<MetricSummary>,
    /// `None` when the arousal weight is 0.
    pub ccc_arousal: Option<MetricSummary>,
    pub per_seed: Vec<SeedSummary>,
}

/// Condenses an experiment outcome into its summary, dropping metrics whose
/// loss weight was zero.
pub fn summarize(
    name: &str,
    config: &ExperimentConfig,
    outcome: &ExperimentOutcome,
) -> ExperimentSummary {
    let weights = config
        .train
        .normalized_weights()
        .expect("outcome exists, so the config validated");
    ExperimentSummary {
        name: name.to_string(),
        self_attention: config.model.use_self_attention,
        cross_attention: config.model.use_cross_attention,
        bridge_tokens: config.model.use_bridge_tokens,
        rmm: config.rmm.enabled,
        n_seeds: config.train.seeds.len(),
        n_folds: outcome.fold_plan.folds.len(),
        war: (weights.h_ce > 0.0).then_some(outcome.war),
        uar: (weights.h_ce > 0.0).then_some(outcome.uar),
        ccc_valence: (weights.h_valence > 0.0).then_some(outcome.ccc_valence),
        ccc_arousal: (weights.h_arousal > 0.0).then_some(outcome.ccc_arousal),
        per_seed: outcome
            .per_seed
            .iter()
            .map(|s| SeedSummary {
                seed: s.seed,
                means: s.means,
            })
            .collect(),
    }
}

/// `0.61738` → `"61.74"`.
pub fn format_percent(value: f64) -> String {
    format!("{:.2}", value * 100.0)
}

/// `0.6327` → `".633"`, `-0.12` → `"-.120"`; values at or beyond ±1 keep
/// their integer digit.
pub fn format_ccc(value: f64) -> String {
    let s = format!("{value:.3}");
    if let Some(rest) = s.strip_prefix("0.") {
        format!(".{rest}")
    } else if let Some(rest) = s.strip_prefix("-0.") {
        format!("-.{rest}")
    } else {
        s
    }
}

fn format_metric(
    metric: Option<MetricSummary>,
    n_seeds: usize,
    fmt: impl Fn(f64) -> String,
) -> String {
    match metric {
        None => "-".to_string(),
        Some(m) if n_seeds > 1 => format!("{} ± {}", fmt(m.mean), fmt(m.std)),
        Some(m) => fmt(m.mean),
    }
}

fn flag(on: bool) -> &'static str {
    if on {
        "✓"
    } else {
        "✗"
    }
}

/// Display width in characters (the flags are multi-byte but single-column).
fn width(s: &str) -> usize {
    s.chars().count()
}

fn pad(s: &str, to: usize) -> String {
    let mut out = s.to_string();
    for _ in width(s)..to {
        out.push(' ');
    }
    out
}

/// Renders summaries as one aligned comparison table.
pub fn render_table(rows: &[ExperimentSummary]) -> String {
    let header = [
        "run", "SA", "CA", "BT", "RMM", "WAR (%)", "UAR (%)", "CCC-V", "CCC-A",
    ];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for row in rows {
        cells.push(vec![
            row.name.clone(),
            flag(row.self_attention).to_string(),
            flag(row.cross_attention).to_string(),
            flag(row.bridge_tokens).to_string(),
            flag(row.rmm).to_string(),
            format_metric(row.war, row.n_seeds, format_percent),
            format_metric(row.uar, row.n_seeds, format_percent),
            format_metric(row.ccc_valence, row.n_seeds, format_ccc),
            format_metric(row.ccc_arousal, row.n_seeds, format_ccc),
        ]);
    }
    let n_cols = header.len();
    let widths: Vec<usize> = (0..n_cols)
        .map(|c| cells.iter().map(|row| width(&row[c])).max().unwrap_or(0))
        .collect();

    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        out.push('|');
        for (c, cell) in row.iter().enumerate() {
            out.push(' ');
            out.push_str(&pad(cell, widths[c]));
            out.push_str(" |");
        }
        out.push('\n');
        if i == 0 {
            out.push('|');
            for w in &widths {
                out.push_str(&"-".repeat(w + 2));
                out.push('|');
            }
            out.push('\n');
        }
    }
    out
}

/// Renders one run's report: the table plus a per-seed breakdown.
pub fn render_report(summary: &ExperimentSummary) -> String {
    let mut out = render_table(std::slice::from_ref(summary));
    out.push('\n');
    let seed_word = if summary.n_seeds == 1 { "seed" } else { "seeds" };
    out.push_str(&format!(
        "{} {} x {} folds, speaker-independent\n",
        summary.n_seeds, seed_word, summary.n_folds
    ));
    for seed in &summary.per_seed {
        out.push_str(&format!(
            "seed {}: WAR {} UAR {} CCC-V {} CCC-A {}\n",
            seed.seed,
            format_percent(seed.means.war),
            format_percent(seed.means.uar),
            format_ccc(seed.means.ccc_valence),
            format_ccc(seed.means.ccc_arousal),
        ));
    }
    out
}
