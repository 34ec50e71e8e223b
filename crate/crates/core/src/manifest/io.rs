//! Metadata ingestion and manifest CSV rendering.
//!
//! Input schemas (CSV with a header row):
//!
//! - records: `record_id, patient_id, view, image_path[, mask_path]`
//! - labels: `record_id` plus one column per finding (1, 0, -1 or blank)
//! - demographics (optional): `record_id, race[, ethnicity]`
//! - rca (optional): `record_id, rca_score`

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use super::{BuildMode, ExclusionReason, LabelValue, Manifest, ManifestRecord, RaceGroup, Split, View};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct MetadataPaths {
    pub records: PathBuf,
    pub labels: PathBuf,
    pub demographics: Option<PathBuf>,
    pub rca: Option<PathBuf>,
}

impl MetadataPaths {
    pub fn all(&self) -> Vec<&Path> {
        let mut v = vec![self.records.as_path(), self.labels.as_path()];
        v.extend(self.demographics.as_deref());
        v.extend(self.rca.as_deref());
        v
    }
}

/// A row that could not be used, with its location.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestError {
    pub file: String,
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct Ingested {
    /// Sorted by record id.
    pub records: Vec<ManifestRecord>,
    pub errors: Vec<IngestError>,
}

struct Table {
    name: String,
    headers: Vec<String>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn column(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn require(&self, name: &str) -> Result<usize> {
        self.column(name).ok_or_else(|| Error::SchemaMismatch {
            file: self.name.clone(),
            message: format!("missing column {name:?}"),
        })
    }
}

fn read_table(path: &Path) -> Result<Table> {
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let name = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| Error::SchemaMismatch {
            file: name.clone(),
            message: e.to_string(),
        })?;
    let headers = reader
        .headers()
        .map_err(|e| Error::SchemaMismatch {
            file: name.clone(),
            message: e.to_string(),
        })?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            Error::parse(name.clone(), line as usize, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        rows.push((line, rec));
    }
    Ok(Table { name, headers, rows })
}

fn field(rec: &csv::StringRecord, idx: usize) -> &str {
    rec.get(idx).unwrap_or("").trim()
}

/// Join the metadata tables on `record_id`. Orphan rows (ids not present in
/// the records table) and unparseable rows are reported, not dropped
/// silently. Records without demographics fall into [`RaceGroup::Other`].
pub fn ingest_metadata(paths: &MetadataPaths, label_list: &[String]) -> Result<Ingested> {
    for p in paths.all() {
        if !p.exists() {
            return Err(Error::FileNotFound(p.to_path_buf()));
        }
    }
    let mut errors = Vec::new();
    let mut report = |table: &Table, line: u64, message: String| {
        errors.push(IngestError {
            file: table.name.clone(),
            line,
            message,
        })
    };

    let records = read_table(&paths.records)?;
    let c_id = records.require("record_id")?;
    let c_patient = records.require("patient_id")?;
    let c_view = records.require("view")?;
    let c_image = records.require("image_path")?;
    let c_mask = records.column("mask_path");

    let mut base: BTreeMap<String, ManifestRecord> = BTreeMap::new();
    for (line, rec) in &records.rows {
        let id = field(rec, c_id);
        let patient = field(rec, c_patient);
        if id.is_empty() || patient.is_empty() {
            report(&records, *line, "empty record_id or patient_id".into());
            continue;
        }
        if base.contains_key(id) {
            return Err(Error::DuplicateRecordId(id.to_string()));
        }
        let mask = c_mask.map(|c| field(rec, c)).filter(|m| !m.is_empty());
        base.insert(
            id.to_string(),
            ManifestRecord {
                record_id: id.to_string(),
                patient_id: patient.to_string(),
                view: View::parse(field(rec, c_view)),
                labels: Vec::new(),
                race_group: RaceGroup::Other,
                rca_score: None,
                image_path: field(rec, c_image).to_string(),
                mask_path: mask.map(str::to_string),
                split: Split::Train,
                exclusion: None,
            },
        );
    }

    let labels = read_table(&paths.labels)?;
    let l_id = labels.require("record_id")?;
    let label_cols: Vec<usize> = label_list.iter().map(|l| labels.require(l)).collect::<Result<_>>()?;
    let mut labeled: HashMap<String, Vec<LabelValue>> = HashMap::new();
    for (line, rec) in &labels.rows {
        let id = field(rec, l_id);
        if !base.contains_key(id) {
            report(&labels, *line, format!("orphan label row for unknown record {id:?}"));
            continue;
        }
        if labeled.contains_key(id) {
            return Err(Error::DuplicateRecordId(id.to_string()));
        }
        let parsed: Option<Vec<LabelValue>> = label_cols.iter().map(|&c| LabelValue::parse(field(rec, c))).collect();
        match parsed {
            Some(values) => {
                labeled.insert(id.to_string(), values);
            }
            None => report(&labels, *line, format!("unparseable label value for {id:?}")),
        }
    }

    if let Some(path) = &paths.demographics {
        let demo = read_table(path)?;
        let d_id = demo.require("record_id")?;
        let d_race = demo.require("race")?;
        let d_eth = demo.column("ethnicity");
        for (line, rec) in &demo.rows {
            let id = field(rec, d_id);
            let Some(r) = base.get_mut(id) else {
                report(
                    &demo,
                    *line,
                    format!("orphan demographics row for unknown record {id:?}"),
                );
                continue;
            };
            let mut group = RaceGroup::from_metadata(field(rec, d_race));
            if let Some(c) = d_eth {
                if RaceGroup::from_metadata(field(rec, c)) == RaceGroup::Hispanic {
                    group = RaceGroup::Hispanic;
                }
            }
            r.race_group = group;
        }
    }

    if let Some(path) = &paths.rca {
        let rca = read_table(path)?;
        let r_id = rca.require("record_id")?;
        let r_score = rca.require("rca_score")?;
        for (line, rec) in &rca.rows {
            let id = field(rec, r_id);
            let Some(r) = base.get_mut(id) else {
                report(&rca, *line, format!("orphan rca row for unknown record {id:?}"));
                continue;
            };
            let text = field(rec, r_score);
            if text.is_empty() {
                continue;
            }
            match text.parse::<f64>() {
                Ok(v) if (0.0..=1.0).contains(&v) => r.rca_score = Some(v),
                _ => report(&rca, *line, format!("invalid rca_score {text:?} for {id:?}")),
            }
        }
    }

    let mut out = Vec::with_capacity(base.len());
    for (id, mut r) in base {
        match labeled.remove(&id) {
            Some(values) => {
                r.labels = values;
                out.push(r);
            }
            None => errors.push(IngestError {
                file: records.name.clone(),
                line: 0,
                message: format!("record {id:?} has no usable label row"),
            }),
        }
    }
    Ok(Ingested { records: out, errors })
}

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const EXCLUSIONS_FILE: &str = "exclusions.csv";
pub const INGEST_ERRORS_FILE: &str = "ingest_errors.csv";

const FIXED_COLUMNS: [&str; 10] = [
    "record_id",
    "patient_id",
    "view",
    "race_group",
    "rca_score",
    "image_path",
    "mask_path",
    "split",
    "exclusion_reason",
    "exclusion_detail",
];

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new())
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

pub fn render_manifest(m: &Manifest, tool_version: &str) -> Result<String> {
    let mut out = String::new();
    out.push_str(&format!("#tool=cxrprep {tool_version}\n"));
    out.push_str(&format!("#mode={}\n", m.mode.as_str()));
    out.push_str(&format!("#seed={}\n", m.seed));
    out.push_str(&format!("#rng={}\n", super::RNG_DESCRIPTION));
    out.push_str(&format!("#spec_hash={}\n", m.spec_hash));
    let mut w = csv_writer();
    let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    header.extend(m.labels.iter().map(|l| format!("label:{l}")));
    w.write_record(&header).map_err(csv_err)?;
    for r in &m.records {
        let rca = r.rca_score.map(|v| v.to_string()).unwrap_or_default();
        let (code, detail) = r
            .exclusion
            .as_ref()
            .map(|e| (e.code().to_string(), e.detail()))
            .unwrap_or_default();
        let mut row = vec![
            r.record_id.clone(),
            r.patient_id.clone(),
            r.view.as_str().to_string(),
            r.race_group.as_str().to_string(),
            rca,
            r.image_path.clone(),
            r.mask_path.clone().unwrap_or_default(),
            r.split.as_str().to_string(),
            code,
            detail,
        ];
        row.extend(r.labels.iter().map(|l| l.as_str().to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    out.push_str(&finish(w)?);
    Ok(out)
}

pub fn render_exclusions(m: &Manifest) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["record_id", "patient_id", "reason", "detail"])
        .map_err(csv_err)?;
    for r in m.excluded() {
        let e = r.exclusion.as_ref().expect("excluded records carry a reason");
        w.write_record([r.record_id.as_str(), r.patient_id.as_str(), e.code(), &e.detail()])
            .map_err(csv_err)?;
    }
    finish(w)
}

pub fn render_ingest_errors(errors: &[IngestError]) -> Result<String> {
    let mut w = csv_writer();
    w.write_record(["file", "line", "message"]).map_err(csv_err)?;
    for e in errors {
        w.write_record([e.file.as_str(), &e.line.to_string(), e.message.as_str()])
            .map_err(csv_err)?;
    }
    finish(w)
}

/// Write manifest, exclusion log and ingest error report into `dir`. Files
/// are staged under temporary names and renamed once all are written.
pub fn write_manifest_files(
    dir: &Path,
    m: &Manifest,
    errors: &[IngestError],
    tool_version: &str,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let outputs = [
        (MANIFEST_FILE, render_manifest(m, tool_version)?),
        (EXCLUSIONS_FILE, render_exclusions(m)?),
        (INGEST_ERRORS_FILE, render_ingest_errors(errors)?),
    ];
    let mut written = Vec::new();
    for (name, body) in &outputs {
        let tmp = dir.join(format!(".{name}.tmp"));
        fs::write(&tmp, body)?;
        written.push((tmp, dir.join(name)));
    }
    for (tmp, dst) in &written {
        fs::rename(tmp, dst)?;
    }
    Ok(written.into_iter().map(|(_, d)| d).collect())
}

fn parse_exclusion(code: &str, detail: &str) -> Option<ExclusionReason> {
    let kv = |key: &str| {
        detail
            .split(' ')
            .find_map(|part| part.strip_prefix(key).and_then(|v| v.strip_prefix('=')))
    };
    match code {
        "" => None,
        "non_frontal_view" => Some(ExclusionReason::NonFrontalView(View::parse(kv("view").unwrap_or("")))),
        "rca_missing" => Some(ExclusionReason::RcaMissing),
        "rca_below_threshold" => Some(ExclusionReason::RcaAtOrBelow {
            score: kv("rca")?.parse().ok()?,
            threshold: kv("threshold")?.parse().ok()?,
        }),
        "mask_missing" => Some(ExclusionReason::MaskMissing),
        "duplicate_patient" => Some(ExclusionReason::DuplicatePatient {
            kept: kv("kept").unwrap_or("").to_string(),
        }),
        "patient_in_test" => Some(ExclusionReason::PatientInTest),
        _ => None,
    }
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut meta: HashMap<&str, &str> = HashMap::new();
    let mut body_start = 0;
    let mut header_lines = 0;
    for line in text.split_inclusive('\n') {
        let Some(rest) = line.strip_prefix('#') else { break };
        if let Some((k, v)) = rest.trim_end().split_once('=') {
            meta.insert(k, v);
        }
        body_start += line.len();
        header_lines += 1;
    }
    let mode = match meta.get("mode").copied() {
        Some("evaluation") => BuildMode::EvaluationOnly,
        _ => BuildMode::Split,
    };
    let seed = meta.get("seed").and_then(|s| s.parse().ok()).unwrap_or(0);
    let spec_hash = meta.get("spec_hash").copied().unwrap_or("").to_string();

    let mut reader = csv::ReaderBuilder::new().from_reader(&text.as_bytes()[body_start..]);
    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::parse(&name, header_lines + 1, e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    for (i, col) in FIXED_COLUMNS.iter().enumerate() {
        if headers.get(i).map(String::as_str) != Some(*col) {
            return Err(Error::SchemaMismatch {
                file: name,
                message: format!("expected column {col:?} at position {i}"),
            });
        }
    }
    let labels: Vec<String> = headers[FIXED_COLUMNS.len()..]
        .iter()
        .map(|h| {
            h.strip_prefix("label:")
                .map(str::to_string)
                .ok_or_else(|| Error::SchemaMismatch {
                    file: name.clone(),
                    message: format!("unexpected column {h:?}"),
                })
        })
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(&name, line + header_lines, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize) + header_lines;
        let bad = |msg: String| Error::parse(&name, line, msg);
        let get = |i: usize| rec.get(i).unwrap_or("");
        let split = Split::parse(get(7)).ok_or_else(|| bad(format!("unknown split {:?}", get(7))))?;
        let race_group = get(3).parse::<RaceGroup>().map_err(|e| bad(e.to_string()))?;
        let rca_score = match get(4) {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|_| bad(format!("invalid rca_score {s:?}")))?),
        };
        let label_values: Vec<LabelValue> = (0..labels.len())
            .map(|i| LabelValue::parse(get(FIXED_COLUMNS.len() + i)).ok_or_else(|| bad("invalid label value".into())))
            .collect::<Result<_>>()?;
        records.push(ManifestRecord {
            record_id: get(0).to_string(),
            patient_id: get(1).to_string(),
            view: View::parse(get(2)),
            labels: label_values,
            race_group,
            rca_score,
            image_path: get(5).to_string(),
            mask_path: Some(get(6)).filter(|s| !s.is_empty()).map(str::to_string),
            split,
            exclusion: parse_exclusion(get(8), get(9)),
        });
    }
    Ok(Manifest {
        labels,
        mode,
        seed,
        spec_hash,
        records,
        shortfalls: Vec::new(),
    })
}
