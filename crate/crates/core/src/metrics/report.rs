//! Per-method summary table: race and diagnostic AUROC on internal and
//! external data as mean ± std across seeds, plus the inter-group disparity.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use super::{
    aggregate_seeds, group_disparity, macro_diagnostic_auroc, race_auroc, Dataset, Disparity, DisparityMode,
    PredictionSet,
};
use crate::config::Method;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub method: Method,
    pub seed: i64,
    pub dataset: Dataset,
    pub race: Option<f64>,
    pub diagnostic: f64,
    pub disparity: Option<Disparity>,
    pub disparity_cells_skipped: usize,
}

impl RunMetrics {
    pub fn compute(p: &PredictionSet, mode: DisparityMode) -> Result<Self> {
        let race = match race_auroc(p) {
            Ok(v) => Some(v),
            Err(Error::MissingRaceScores) => None,
            Err(e) => return Err(e),
        };
        let diagnostic = macro_diagnostic_auroc(p)?;
        let (disparity, skipped) = match group_disparity(p, mode) {
            Ok(d) => (Some(d), d.cells_skipped),
            Err(Error::NoValidCells) => (None, 0),
            Err(e) => return Err(e),
        };
        Ok(RunMetrics {
            method: p.method,
            seed: p.seed,
            dataset: p.dataset,
            race,
            diagnostic,
            disparity,
            disparity_cells_skipped: skipped,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellStats {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl CellStats {
    fn from_values(values: &[f64]) -> Option<Self> {
        let (mean, std) = aggregate_seeds(values).ok()?;
        Some(CellStats {
            mean,
            std,
            n: values.len(),
        })
    }

    fn display(&self, decimals: usize) -> String {
        match self.std {
            Some(s) => format!("{:.*} ± {:.*}", decimals, self.mean, decimals, s),
            None => format!("{:.*}", decimals, self.mean),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub seeds: Vec<i64>,
    pub race: Option<CellStats>,
    pub diagnostic: CellStats,
    pub disparity: Option<CellStats>,
    pub disparity_cells_used: usize,
    pub disparity_cells_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub method: Method,
    pub internal: Option<DatasetSummary>,
    pub external: Option<DatasetSummary>,
}

impl ReportRow {
    pub fn dataset(&self, d: Dataset) -> Option<&DatasetSummary> {
        match d {
            Dataset::Internal => self.internal.as_ref(),
            Dataset::External => self.external.as_ref(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportHeader {
    pub tool_version: String,
    pub config_hash: String,
    pub disparity_mode: DisparityMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub header: ReportHeader,
    pub rows: Vec<ReportRow>,
}

pub fn build_report(runs: &[PredictionSet], header: ReportHeader) -> Result<ReportTable> {
    if runs.is_empty() {
        return Err(Error::EmptyRunSet);
    }
    let mut seen = BTreeSet::new();
    for r in runs {
        if !seen.insert((r.method, r.seed, r.dataset)) {
            return Err(Error::DuplicateRun {
                method: r.method.as_str().to_string(),
                seed: r.seed,
                dataset: r.dataset.as_str().to_string(),
            });
        }
    }
    let mut grouped: BTreeMap<(Method, Dataset), Vec<RunMetrics>> = BTreeMap::new();
    for r in runs {
        let m = RunMetrics::compute(r, header.disparity_mode)?;
        grouped.entry((m.method, m.dataset)).or_default().push(m);
    }
    let summarize = |metrics: &mut Vec<RunMetrics>| -> DatasetSummary {
        metrics.sort_by_key(|m| m.seed);
        let race: Vec<f64> = metrics.iter().filter_map(|m| m.race).collect();
        let diag: Vec<f64> = metrics.iter().map(|m| m.diagnostic).collect();
        let disp: Vec<f64> = metrics.iter().filter_map(|m| m.disparity.map(|d| d.value)).collect();
        DatasetSummary {
            seeds: metrics.iter().map(|m| m.seed).collect(),
            race: CellStats::from_values(&race),
            diagnostic: CellStats::from_values(&diag).expect("at least one run"),
            disparity: CellStats::from_values(&disp),
            disparity_cells_used: metrics.iter().filter_map(|m| m.disparity.map(|d| d.cells_used)).sum(),
            disparity_cells_skipped: metrics.iter().map(|m| m.disparity_cells_skipped).sum(),
        }
    };
    let mut rows = Vec::new();
    for method in Method::REPORT_ORDER {
        let internal = grouped.get_mut(&(method, Dataset::Internal)).map(&summarize);
        let external = grouped.get_mut(&(method, Dataset::External)).map(&summarize);
        if internal.is_some() || external.is_some() {
            rows.push(ReportRow {
                method,
                internal,
                external,
            });
        }
    }
    Ok(ReportTable { header, rows })
}

fn opt_num(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

impl ReportTable {
    pub fn to_csv(&self) -> String {
        let h = &self.header;
        let mut out = format!(
            "#tool=cxrprep {}\n#config_hash={}\n#disparity={}\n",
            h.tool_version,
            h.config_hash,
            h.disparity_mode.as_str()
        );
        let mut cols = vec!["method".to_string()];
        for metric in ["race_auroc", "diagnostic_auroc", "disparity"] {
            for d in Dataset::ALL {
                cols.push(format!("{metric}_{d}_mean"));
                cols.push(format!("{metric}_{d}_std"));
            }
        }
        for d in Dataset::ALL {
            cols.push(format!("seeds_{d}"));
            cols.push(format!("disparity_cells_used_{d}"));
            cols.push(format!("disparity_cells_skipped_{d}"));
        }
        out.push_str(&cols.join(","));
        out.push('\n');
        for row in &self.rows {
            let mut fields = vec![row.method.as_str().to_string()];
            let pick: [fn(&DatasetSummary) -> Option<CellStats>; 3] =
                [|s| s.race, |s| Some(s.diagnostic), |s| s.disparity];
            for f in pick {
                for d in Dataset::ALL {
                    let cell = row.dataset(d).and_then(f);
                    fields.push(opt_num(cell.map(|c| c.mean)));
                    fields.push(opt_num(cell.and_then(|c| c.std)));
                }
            }
            for d in Dataset::ALL {
                match row.dataset(d) {
                    Some(s) => {
                        fields.push(s.seeds.len().to_string());
                        fields.push(s.disparity_cells_used.to_string());
                        fields.push(s.disparity_cells_skipped.to_string());
                    }
                    None => fields.extend(["0".to_string(), "0".to_string(), "0".to_string()]),
                }
            }
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    pub fn to_markdown(&self) -> String {
        let h = &self.header;
        let mut out = String::new();
        let _ = writeln!(
            out,
            "<!-- cxrprep {} | config_hash={} | disparity={} -->",
            h.tool_version,
            h.config_hash,
            h.disparity_mode.as_str()
        );
        out.push('\n');
        out.push_str("Race and diagnostic AUROC, mean ± standard deviation across seeds.\n\n");
        out.push_str("| Method | Race AUROC Internal | Race AUROC External | Diagnostic AUROC Internal | Diagnostic AUROC External |\n");
        out.push_str("|:--|:-:|:-:|:-:|:-:|\n");
        let cell = |s: Option<&DatasetSummary>, f: fn(&DatasetSummary) -> Option<CellStats>, dec: usize| {
            s.and_then(f).map_or_else(|| "n/a".to_string(), |c| c.display(dec))
        };
        for row in &self.rows {
            let (i, e) = (row.internal.as_ref(), row.external.as_ref());
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                row.method.display_name(),
                cell(i, |s| s.race, 3),
                cell(e, |s| s.race, 3),
                cell(i, |s| Some(s.diagnostic), 3),
                cell(e, |s| Some(s.diagnostic), 3),
            );
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "Average inter-group diagnostic AUROC difference ({}), mean ± standard deviation across seeds.\n",
            h.disparity_mode.as_str()
        );
        out.push_str("| Method | Internal | External | Seeds (int/ext) | Cells used/skipped (int) | Cells used/skipped (ext) |\n");
        out.push_str("|:--|:-:|:-:|:-:|:-:|:-:|\n");
        let coverage = |s: Option<&DatasetSummary>| {
            s.map_or_else(
                || "n/a".to_string(),
                |s| format!("{}/{}", s.disparity_cells_used, s.disparity_cells_skipped),
            )
        };
        for row in &self.rows {
            let (i, e) = (row.internal.as_ref(), row.external.as_ref());
            let _ = writeln!(
                out,
                "| {} | {} | {} | {}/{} | {} | {} |",
                row.method.display_name(),
                cell(i, |s| s.disparity, 4),
                cell(e, |s| s.disparity, 4),
                i.map_or(0, |s| s.seeds.len()),
                e.map_or(0, |s| s.seeds.len()),
                coverage(i),
                coverage(e),
            );
        }
        out
    }
}
