//! Prediction CSV schema.
//!
//! ```text
//! #method=baseline
//! #seed=3
//! #dataset=internal
//! sample_id,race_group,score:Edema,gt:Edema,race_score:White,race_score:Black
//! s1,White,0.82,1,0.7,0.3
//! ```
//!
//! Further `#key=value` lines before the header are accepted and ignored.
//! Ground truth is `1`, `0` or empty (absent); scores must lie in `[0, 1]`.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use super::{Dataset, PredictionRow, PredictionSet};
use crate::config::Method;
use crate::error::{Error, Result};
use crate::manifest::RaceGroup;

pub fn read_predictions(path: &Path) -> Result<PredictionSet> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    parse_predictions(&text, &path.display().to_string())
}

enum Column {
    SampleId,
    RaceGroup,
    Score(usize),
    Truth(usize),
    RaceScore(usize),
}

pub fn parse_predictions(text: &str, file: &str) -> Result<PredictionSet> {
    let mut method = None;
    let mut seed = None;
    let mut dataset = None;
    let mut meta_lines = 0usize;
    let mut body_start = 0usize;
    for line in text.split_inclusive('\n') {
        let Some(rest) = line.strip_prefix('#') else { break };
        meta_lines += 1;
        body_start += line.len();
        let Some((k, v)) = rest.trim_end().split_once('=') else {
            continue;
        };
        let err = |m: String| Error::parse(file, meta_lines, m);
        match k.trim() {
            "method" => method = Some(v.parse::<Method>().map_err(|e| err(e.to_string()))?),
            "seed" => {
                seed = Some(
                    v.trim()
                        .parse::<i64>()
                        .map_err(|_| err(format!("invalid seed {v:?}")))?,
                )
            }
            "dataset" => dataset = Some(v.parse::<Dataset>().map_err(|e| err(e.to_string()))?),
            _ => {}
        }
    }
    let missing = |k: &str| Error::parse(file, meta_lines + 1, format!("missing #{k}= metadata line"));
    let method = method.ok_or_else(|| missing("method"))?;
    let seed = seed.ok_or_else(|| missing("seed"))?;
    let dataset = dataset.ok_or_else(|| missing("dataset"))?;

    let header_line = meta_lines + 1;
    let mut reader = csv::ReaderBuilder::new().from_reader(&text.as_bytes()[body_start..]);
    let headers = reader
        .headers()
        .map_err(|e| Error::parse(file, header_line, e.to_string()))?
        .clone();

    let mut labels: Vec<String> = Vec::new();
    let mut race_groups: Vec<RaceGroup> = Vec::new();
    let mut truth_labels: Vec<String> = Vec::new();
    for h in headers.iter() {
        if let Some(l) = h.strip_prefix("score:") {
            labels.push(l.to_string());
        } else if let Some(l) = h.strip_prefix("gt:") {
            truth_labels.push(l.to_string());
        }
    }
    let mut columns = Vec::with_capacity(headers.len());
    for h in headers.iter() {
        let col = if h == "sample_id" {
            Column::SampleId
        } else if h == "race_group" {
            Column::RaceGroup
        } else if let Some(l) = h.strip_prefix("score:") {
            Column::Score(labels.iter().position(|x| x == l).expect("collected above"))
        } else if let Some(l) = h.strip_prefix("gt:") {
            let idx = labels
                .iter()
                .position(|x| x == l)
                .ok_or_else(|| Error::parse(file, header_line, format!("gt:{l} has no matching score:{l}")))?;
            Column::Truth(idx)
        } else if let Some(g) = h.strip_prefix("race_score:") {
            let group = g
                .parse::<RaceGroup>()
                .map_err(|e| Error::parse(file, header_line, e.to_string()))?;
            race_groups.push(group);
            Column::RaceScore(race_groups.len() - 1)
        } else {
            return Err(Error::parse(file, header_line, format!("unknown column {h:?}")));
        };
        columns.push(col);
    }
    for l in &labels {
        if !truth_labels.contains(l) {
            return Err(Error::parse(
                file,
                header_line,
                format!("score:{l} has no matching gt:{l}"),
            ));
        }
    }
    if truth_labels.len() != labels.len() || HashSet::<&String>::from_iter(&labels).len() != labels.len() {
        return Err(Error::parse(file, header_line, "duplicate label columns"));
    }
    if HashSet::<&RaceGroup>::from_iter(&race_groups).len() != race_groups.len() {
        return Err(Error::parse(file, header_line, "duplicate race_score columns"));
    }
    if !columns.iter().any(|c| matches!(c, Column::SampleId)) || !columns.iter().any(|c| matches!(c, Column::RaceGroup))
    {
        return Err(Error::parse(file, header_line, "header needs sample_id and race_group"));
    }

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(file, line + meta_lines, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize) + meta_lines;
        let bad = |m: String| Error::parse(file, line, m);
        let mut row = PredictionRow {
            sample_id: String::new(),
            race_group: RaceGroup::Other,
            truth: vec![None; labels.len()],
            scores: vec![f64::NAN; labels.len()],
            race_scores: vec![f64::NAN; race_groups.len()],
        };
        let mut has_group = false;
        for (value, col) in rec.iter().zip(&columns) {
            let value = value.trim();
            let score = |v: &str| -> Result<f64> {
                match v.parse::<f64>() {
                    Ok(s) if s.is_finite() && (0.0..=1.0).contains(&s) => Ok(s),
                    _ => Err(bad(format!("score {v:?} is not a number in [0, 1]"))),
                }
            };
            match col {
                Column::SampleId => row.sample_id = value.to_string(),
                Column::RaceGroup => {
                    row.race_group = value.parse().map_err(|e: Error| bad(e.to_string()))?;
                    has_group = true;
                }
                Column::Score(i) => row.scores[*i] = score(value)?,
                Column::Truth(i) => {
                    row.truth[*i] = match value {
                        "" => None,
                        "1" => Some(true),
                        "0" => Some(false),
                        other => return Err(bad(format!("ground truth {other:?} must be 1, 0 or empty"))),
                    }
                }
                Column::RaceScore(i) => row.race_scores[*i] = score(value)?,
            }
        }
        if rec.len() != columns.len() {
            return Err(bad(format!("expected {} fields, found {}", columns.len(), rec.len())));
        }
        if row.sample_id.is_empty() || !has_group {
            return Err(bad("empty sample_id or race_group".into()));
        }
        if !seen.insert(row.sample_id.clone()) {
            return Err(bad(format!("duplicate sample_id {:?}", row.sample_id)));
        }
        rows.push(row);
    }
    Ok(PredictionSet {
        method,
        seed,
        dataset,
        labels,
        race_score_groups: race_groups,
        rows,
    })
}

/// Inverse of [`parse_predictions`]; scores use the shortest exact decimal.
pub fn render_predictions(p: &PredictionSet) -> String {
    let mut out = format!(
        "#method={}\n#seed={}\n#dataset={}\n",
        p.method.as_str(),
        p.seed,
        p.dataset.as_str()
    );
    let mut header = vec!["sample_id".to_string(), "race_group".to_string()];
    for l in &p.labels {
        header.push(format!("score:{l}"));
        header.push(format!("gt:{l}"));
    }
    header.extend(p.race_score_groups.iter().map(|g| format!("race_score:{g}")));
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(&header).expect("write to memory");
    for r in &p.rows {
        let mut fields = vec![r.sample_id.clone(), r.race_group.to_string()];
        for (s, t) in r.scores.iter().zip(&r.truth) {
            fields.push(s.to_string());
            fields.push(match t {
                Some(true) => "1".into(),
                Some(false) => "0".into(),
                None => String::new(),
            });
        }
        fields.extend(r.race_scores.iter().map(|s| s.to_string()));
        w.write_record(&fields).expect("write to memory");
    }
    out.push_str(&String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8"));
    out
}
