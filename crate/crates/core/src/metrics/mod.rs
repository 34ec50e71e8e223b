//! AUROC-based diagnostic, race-encoding and inter-group disparity metrics
//! computed from prediction files.

mod auroc;
mod predictions;
mod report;

use std::fmt;
use std::str::FromStr;

use log::warn;

use crate::config::Method;
use crate::error::{Error, Result};
use crate::manifest::RaceGroup;

pub use auroc::auroc;
pub(crate) use auroc::auroc_named;
pub use predictions::{parse_predictions, read_predictions, render_predictions};
pub use report::{build_report, CellStats, DatasetSummary, ReportHeader, ReportRow, ReportTable, RunMetrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Dataset {
    Internal,
    External,
}

impl Dataset {
    pub const ALL: [Dataset; 2] = [Dataset::Internal, Dataset::External];

    pub fn as_str(self) -> &'static str {
        match self {
            Dataset::Internal => "internal",
            Dataset::External => "external",
        }
    }
}

impl fmt::Display for Dataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dataset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "internal" => Ok(Dataset::Internal),
            "external" => Ok(Dataset::External),
            other => Err(Error::InvalidArgument(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionRow {
    pub sample_id: String,
    pub race_group: RaceGroup,
    /// Per label; `None` when ground truth is absent.
    pub truth: Vec<Option<bool>>,
    pub scores: Vec<f64>,
    /// Aligned with [`PredictionSet::race_score_groups`]; empty when the file
    /// carries no race head output.
    pub race_scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    pub method: Method,
    pub seed: i64,
    pub dataset: Dataset,
    pub labels: Vec<String>,
    pub race_score_groups: Vec<RaceGroup>,
    pub rows: Vec<PredictionRow>,
}

impl PredictionSet {
    fn label_column(&self, label: usize) -> (Vec<f64>, Vec<bool>) {
        self.rows
            .iter()
            .filter_map(|r| r.truth[label].map(|t| (r.scores[label], t)))
            .unzip()
    }

    /// Groups that have at least one row, in canonical order.
    pub fn groups_present(&self) -> Vec<RaceGroup> {
        RaceGroup::ALL
            .into_iter()
            .filter(|g| self.rows.iter().any(|r| r.race_group == *g))
            .collect()
    }
}

/// Per-label AUROC over rows with ground truth.
pub fn per_label_auroc(p: &PredictionSet) -> Result<Vec<f64>> {
    (0..p.labels.len())
        .map(|l| {
            let (scores, truth) = p.label_column(l);
            auroc::auroc_named(&scores, &truth, &p.labels[l])
        })
        .collect()
}

/// Unweighted mean of per-label AUROC.
pub fn macro_diagnostic_auroc(p: &PredictionSet) -> Result<f64> {
    let per_label = per_label_auroc(p)?;
    if per_label.is_empty() {
        return Err(Error::InvalidArgument("prediction set has no labels".into()));
    }
    Ok(per_label.iter().sum::<f64>() / per_label.len() as f64)
}

/// Macro one-vs-rest AUROC of the race head over the groups present that
/// have a score column. Rows of other groups (typically `Other`) only act as
/// negatives.
pub fn race_auroc(p: &PredictionSet) -> Result<f64> {
    if p.race_score_groups.is_empty() {
        return Err(Error::MissingRaceScores);
    }
    let scored: Vec<(usize, RaceGroup)> = p
        .groups_present()
        .into_iter()
        .filter_map(|g| p.race_score_groups.iter().position(|x| *x == g).map(|col| (col, g)))
        .collect();
    if scored.len() < 2 {
        return Err(Error::DegenerateLabels(
            "race (fewer than two scored groups present)".into(),
        ));
    }
    let mut total = 0.0;
    for (col, g) in &scored {
        let scores: Vec<f64> = p.rows.iter().map(|r| r.race_scores[*col]).collect();
        let truth: Vec<bool> = p.rows.iter().map(|r| r.race_group == *g).collect();
        total += auroc::auroc_named(&scores, &truth, &format!("race:{g}"))?;
    }
    Ok(total / scored.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DisparityMode {
    /// Mean absolute difference over all unordered group pairs.
    #[default]
    PairwiseMean,
    /// Largest minus smallest group AUROC.
    MaxMinusMin,
}

impl DisparityMode {
    pub fn as_str(self) -> &'static str {
        match self {
            DisparityMode::PairwiseMean => "pairwise-mean",
            DisparityMode::MaxMinusMin => "max-min",
        }
    }
}

impl FromStr for DisparityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pairwise-mean" => Ok(DisparityMode::PairwiseMean),
            "max-min" => Ok(DisparityMode::MaxMinusMin),
            other => Err(Error::InvalidArgument(format!(
                "unknown disparity mode {other:?} (pairwise-mean | max-min)"
            ))),
        }
    }
}

/// Spread of a set of group AUROCs; `None` with fewer than two values.
pub fn spread(values: &[f64], mode: DisparityMode) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    Some(match mode {
        DisparityMode::PairwiseMean => {
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for i in 0..values.len() {
                for j in i + 1..values.len() {
                    sum += (values[i] - values[j]).abs();
                    pairs += 1;
                }
            }
            sum / pairs as f64
        }
        DisparityMode::MaxMinusMin => {
            let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = values.iter().copied().fold(f64::INFINITY, f64::min);
            max - min
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disparity {
    pub value: f64,
    pub labels_used: usize,
    /// (label, group) cells with a computable AUROC.
    pub cells_used: usize,
    /// Cells skipped because a group lacked positives or negatives.
    pub cells_skipped: usize,
}

/// Average over labels of the spread of within-group AUROCs. Rows in group
/// `Other` are not a comparison group.
pub fn group_disparity(p: &PredictionSet, mode: DisparityMode) -> Result<Disparity> {
    let groups: Vec<RaceGroup> = p
        .groups_present()
        .into_iter()
        .filter(|g| *g != RaceGroup::Other)
        .collect();
    let mut total = 0.0;
    let mut labels_used = 0;
    let mut cells_used = 0;
    let mut cells_skipped = 0;
    for l in 0..p.labels.len() {
        let mut values = Vec::with_capacity(groups.len());
        for g in &groups {
            let (scores, truth): (Vec<f64>, Vec<bool>) = p
                .rows
                .iter()
                .filter(|r| r.race_group == *g)
                .filter_map(|r| r.truth[l].map(|t| (r.scores[l], t)))
                .unzip();
            match auroc::auroc(&scores, &truth) {
                Ok(v) => {
                    values.push(v);
                    cells_used += 1;
                }
                Err(Error::DegenerateLabels(_)) => {
                    warn!("skipping disparity cell ({}, {g}): single-class", p.labels[l]);
                    cells_skipped += 1;
                }
                Err(e) => return Err(e),
            }
        }
        if let Some(s) = spread(&values, mode) {
            total += s;
            labels_used += 1;
        }
    }
    if labels_used == 0 {
        return Err(Error::NoValidCells);
    }
    Ok(Disparity {
        value: total / labels_used as f64,
        labels_used,
        cells_used,
        cells_skipped,
    })
}

/// Mean and sample standard deviation (n - 1); the deviation is absent for a
/// single value.
pub fn aggregate_seeds(values: &[f64]) -> Result<(f64, Option<f64>)> {
    if values.is_empty() {
        return Err(Error::InvalidArgument("no values to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, None));
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((mean, Some((ss / (n - 1.0)).sqrt())))
}
