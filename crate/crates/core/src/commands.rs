//! Subcommand implementations behind the `cxrprep` binary.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{Method, PipelineConfig};
use crate::error::{Error, Result};
use crate::hashing::{sha256_hex, short_hash};
use crate::image::{encode, load_image, load_image_with_format, ImageFormat};
use crate::manifest::{
    build_manifest, ingest_metadata, read_manifest, write_manifest_files, BuildMode, BuildOptions, Manifest,
    ManifestRecord, MetadataPaths, RaceGroup, Split, EXCLUSIONS_FILE, INGEST_ERRORS_FILE, MANIFEST_FILE,
};
use crate::mask::BinaryMask;
use crate::metrics::{build_report, read_predictions, ReportHeader, ReportTable};
use crate::pipeline::process_image;
use crate::probe::{featurize, probe_auroc, train_probe, ProbeModel};
use crate::TOOL_VERSION;

pub const PREP_LOG_FILE: &str = "prep_log.csv";
pub const REPORT_CSV_FILE: &str = "report.csv";
pub const REPORT_MD_FILE: &str = "report.md";
pub const PROBE_REPORT_FILE: &str = "probe_report.csv";

fn refuse_existing(paths: &[PathBuf], force: bool) -> Result<()> {
    if force {
        return Ok(());
    }
    match paths.iter().find(|p| p.exists()) {
        Some(p) => Err(Error::OutputExists(p.clone())),
        None => Ok(()),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .map_or_else(|| "out".into(), |n| n.to_string_lossy().into_owned());
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ManifestArgs {
    pub metadata: MetadataPaths,
    pub out_dir: PathBuf,
    pub mode: BuildMode,
    pub force: bool,
}

#[derive(Debug, Clone)]
pub struct ManifestSummary {
    pub manifest: Manifest,
    pub ingest_errors: usize,
    pub outputs: Vec<PathBuf>,
}

pub fn cmd_manifest(args: &ManifestArgs, cfg: &PipelineConfig) -> Result<ManifestSummary> {
    cfg.validate()?;
    let outputs: Vec<PathBuf> = [MANIFEST_FILE, EXCLUSIONS_FILE, INGEST_ERRORS_FILE]
        .iter()
        .map(|n| args.out_dir.join(n))
        .collect();
    refuse_existing(&outputs, args.force)?;
    let ingested = ingest_metadata(&args.metadata, &cfg.sampling.label_list)?;
    for e in &ingested.errors {
        warn!("{}:{}: {}", e.file, e.line, e.message);
    }
    let opts = BuildOptions {
        spec: cfg.sampling.clone(),
        mode: args.mode,
        require_mask: cfg.method.requires_mask(),
        rca_threshold: cfg.rca_threshold,
    };
    let manifest = build_manifest(ingested.records, &opts)?;
    for s in &manifest.shortfalls {
        warn!(
            "test cell {} / {} has {} of {} requested positives",
            s.label, s.group, s.available, s.requested
        );
    }
    let outputs = write_manifest_files(&args.out_dir, &manifest, &ingested.errors, TOOL_VERSION)?;
    info!(
        "manifest: {} test, {} train, {} val, {} excluded",
        manifest.split(Split::Test).count(),
        manifest.split(Split::Train).count(),
        manifest.split(Split::Val).count(),
        manifest.excluded().count()
    );
    Ok(ManifestSummary {
        manifest,
        ingest_errors: ingested.errors.len(),
        outputs,
    })
}

/// Output file stem for a record id: anything outside `[A-Za-z0-9._-]`
/// becomes `_`.
pub fn sanitize_id(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn output_name(record: &ManifestRecord) -> String {
    let ext = ImageFormat::from_path(Path::new(&record.image_path)).map_or("png", |f| f.extension());
    format!("{}.{ext}", sanitize_id(&record.record_id))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".sha256");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Sidecar {
    sha256: String,
    size: u64,
    config_hash: String,
}

impl Sidecar {
    fn render(&self) -> String {
        format!(
            "sha256={}\nsize={}\nconfig_hash={}\n",
            self.sha256, self.size, self.config_hash
        )
    }

    fn read(path: &Path) -> Option<Sidecar> {
        let text = fs::read_to_string(path).ok()?;
        let mut kv = BTreeMap::new();
        for line in text.lines() {
            let (k, v) = line.split_once('=')?;
            kv.insert(k.to_string(), v.to_string());
        }
        Some(Sidecar {
            sha256: kv.get("sha256")?.clone(),
            size: kv.get("size")?.parse().ok()?,
            config_hash: kv.get("config_hash")?.clone(),
        })
    }

    /// True if `out` still holds exactly the bytes this sidecar describes.
    fn verifies(&self, out: &Path) -> bool {
        match fs::read(out) {
            Ok(bytes) => bytes.len() as u64 == self.size && sha256_hex(&bytes) == self.sha256,
            Err(_) => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PrepArgs {
    pub manifest: PathBuf,
    /// Base for relative image and mask paths; defaults to the manifest's
    /// directory.
    pub image_root: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub force: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrepEntry {
    pub record_id: String,
    pub output: String,
    pub status: &'static str,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct PrepSummary {
    pub config_hash: String,
    pub entries: Vec<PrepEntry>,
    pub written: usize,
    pub resumed: usize,
}

impl PrepSummary {
    pub fn failed(&self) -> usize {
        self.entries.iter().filter(|e| e.status != "ok").count()
    }
}

enum Outcome {
    Written,
    Resumed,
}

fn prep_one(
    record: &ManifestRecord,
    root: &Path,
    out_dir: &Path,
    cfg: &PipelineConfig,
    hash: &str,
    force: bool,
) -> Result<Outcome> {
    let out = out_dir.join(output_name(record));
    let side = sidecar_path(&out);
    if let Some(existing) = Sidecar::read(&side) {
        if existing.config_hash == hash && existing.verifies(&out) {
            return Ok(Outcome::Resumed);
        }
        if existing.config_hash != hash && !force {
            return Err(Error::OutputExists(out));
        }
    }
    let (img, format) = load_image_with_format(&root.join(&record.image_path))?;
    let mask = if cfg.method.requires_mask() {
        let rel = record
            .mask_path
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("record {} has no mask", record.record_id)))?;
        Some(BinaryMask::load(&root.join(rel))?)
    } else {
        None
    };
    let processed = process_image(&img, mask.as_ref(), cfg)?;
    let comment = format!("cxrprep {TOOL_VERSION} config_hash={hash}");
    let bytes = encode(&processed, format, Some(&comment))?;
    write_atomic(&out, &bytes)?;
    let sidecar = Sidecar {
        sha256: sha256_hex(&bytes),
        size: bytes.len() as u64,
        config_hash: hash.to_string(),
    };
    write_atomic(&side, sidecar.render().as_bytes())?;
    Ok(Outcome::Written)
}

fn render_prep_log(entries: &[PrepEntry], hash: &str) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["record_id", "output", "status", "detail"])
        .map_err(csv_err)?;
    for e in entries {
        w.write_record([e.record_id.as_str(), e.output.as_str(), e.status, e.detail.as_str()])
            .map_err(csv_err)?;
    }
    let body = String::from_utf8(
        w.into_inner()
            .map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?,
    )
    .expect("csv output is utf-8");
    Ok(format!("#tool=cxrprep {TOOL_VERSION}\n#config_hash={hash}\n{body}"))
}

/// Preprocess every non-excluded manifest record with `cfg.workers` threads.
/// Outputs that already match their sidecar digest and config hash are kept;
/// the log is identical whether a record was resumed or freshly written.
pub fn cmd_prep(args: &PrepArgs, cfg: &PipelineConfig) -> Result<PrepSummary> {
    cfg.validate()?;
    let manifest = read_manifest(&args.manifest)?;
    let root = match &args.image_root {
        Some(r) => r.clone(),
        None => args
            .manifest
            .parent()
            .map_or_else(|| PathBuf::from("."), Path::to_path_buf),
    };
    fs::create_dir_all(&args.out_dir)?;
    let hash = cfg.prep_hash();
    let records: Vec<&ManifestRecord> = manifest.records.iter().filter(|r| r.split != Split::Excluded).collect();

    if !args.force {
        for r in &records {
            let out = args.out_dir.join(output_name(r));
            if let Some(s) = Sidecar::read(&sidecar_path(&out)) {
                if s.config_hash != hash {
                    return Err(Error::OutputExists(out));
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(e.to_string()))?;
    let results: Vec<(PrepEntry, Option<Outcome>)> = pool.install(|| {
        records
            .par_iter()
            .map(|r| {
                let output = output_name(r);
                match prep_one(r, &root, &args.out_dir, cfg, &hash, args.force) {
                    Ok(o) => (
                        PrepEntry {
                            record_id: r.record_id.clone(),
                            output,
                            status: "ok",
                            detail: String::new(),
                        },
                        Some(o),
                    ),
                    Err(e) => {
                        warn!("{}: {e}", r.record_id);
                        (
                            PrepEntry {
                                record_id: r.record_id.clone(),
                                output,
                                status: "failed",
                                detail: e.to_string(),
                            },
                            None,
                        )
                    }
                }
            })
            .collect()
    });

    let mut entries = Vec::with_capacity(results.len());
    let (mut written, mut resumed) = (0, 0);
    for (e, o) in results {
        match o {
            Some(Outcome::Written) => written += 1,
            Some(Outcome::Resumed) => resumed += 1,
            None => {}
        }
        entries.push(e);
    }
    entries.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    write_atomic(
        &args.out_dir.join(PREP_LOG_FILE),
        render_prep_log(&entries, &hash)?.as_bytes(),
    )?;

    let summary = PrepSummary {
        config_hash: hash,
        entries,
        written,
        resumed,
    };
    let failed = summary.failed();
    let total = summary.entries.len();
    info!("prep: {written} written, {resumed} resumed, {failed} failed of {total}");
    if total > 0 && failed as f64 > cfg.max_failure_rate * total as f64 {
        return Err(Error::FailureRate {
            failed,
            total,
            max_rate: cfg.max_failure_rate,
        });
    }
    Ok(summary)
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    /// Prediction CSV files, or directories whose `*.csv` files are all read.
    pub inputs: Vec<PathBuf>,
    pub out_dir: PathBuf,
    pub force: bool,
}

fn collect_prediction_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)?
                .map(|e| e.map(|e| e.path()))
                .collect::<std::io::Result<_>>()?;
            found.retain(|f| f.extension().is_some_and(|e| e == "csv"));
            found.sort();
            files.extend(found);
        } else if p.exists() {
            files.push(p.clone());
        } else {
            return Err(Error::FileNotFound(p.clone()));
        }
    }
    Ok(files)
}

/// Aggregate prediction files into `report.csv` and `report.md`.
pub fn cmd_eval(args: &EvalArgs, cfg: &PipelineConfig) -> Result<ReportTable> {
    let outputs = [args.out_dir.join(REPORT_CSV_FILE), args.out_dir.join(REPORT_MD_FILE)];
    refuse_existing(&outputs, args.force)?;
    let files = collect_prediction_files(&args.inputs)?;
    let mut digests = Vec::with_capacity(files.len());
    let mut runs = Vec::with_capacity(files.len());
    for f in &files {
        digests.push(sha256_hex(&fs::read(f)?));
        runs.push(read_predictions(f)?);
    }
    digests.sort();
    let canonical = format!("disparity={}\ninputs={}\n", cfg.disparity.as_str(), digests.join(";"));
    let header = ReportHeader {
        tool_version: TOOL_VERSION.to_string(),
        config_hash: short_hash(canonical.as_bytes()),
        disparity_mode: cfg.disparity,
    };
    let table = build_report(&runs, header)?;
    fs::create_dir_all(&args.out_dir)?;
    write_atomic(&outputs[0], table.to_csv().as_bytes())?;
    write_atomic(&outputs[1], table.to_markdown().as_bytes())?;
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeBundle {
    pub tool_version: String,
    pub method: String,
    pub config_hash: String,
    /// Default featurisation for the method: background excluded for masking
    /// and cropping.
    pub background_excluded_default: bool,
    pub all_pixels: ProbeModel,
    pub background_excluded: ProbeModel,
}

#[derive(Debug, Clone)]
pub struct ProbeArgs {
    pub manifest: PathBuf,
    /// Directory of preprocessed images written by `prep`.
    pub images: PathBuf,
    pub out: PathBuf,
    pub force: bool,
}

type Samples = (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<RaceGroup>);
type Sample = (Vec<f64>, Vec<f64>, RaceGroup);

fn load_samples(manifest: &Manifest, images: &Path, splits: &[Split]) -> Result<Samples> {
    let records: Vec<&ManifestRecord> = manifest.records.iter().filter(|r| splits.contains(&r.split)).collect();
    let loaded: Vec<Result<Sample>> = records
        .par_iter()
        .map(|r| {
            let img = load_image(&images.join(output_name(r)))?;
            Ok((featurize(&img, false), featurize(&img, true), r.race_group))
        })
        .collect();
    let mut all = Vec::new();
    let mut fg = Vec::new();
    let mut groups = Vec::new();
    for (r, item) in records.iter().zip(loaded) {
        match item {
            Ok((a, b, g)) => {
                all.push(a);
                fg.push(b);
                groups.push(g);
            }
            Err(Error::FileNotFound(p)) => warn!("{}: missing preprocessed image {}", r.record_id, p.display()),
            Err(e) => return Err(e),
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidArgument(
            "no preprocessed images found for the probe".into(),
        ));
    }
    Ok((all, fg, groups))
}

/// Fit the probe on the manifest's train split, once on all pixels and once
/// with zero-valued background excluded.
pub fn cmd_probe_train(args: &ProbeArgs, cfg: &PipelineConfig) -> Result<ProbeBundle> {
    cfg.validate()?;
    refuse_existing(std::slice::from_ref(&args.out), args.force)?;
    let manifest = read_manifest(&args.manifest)?;
    let (all, fg, groups) = load_samples(&manifest, &args.images, &[Split::Train])?;
    let bundle = ProbeBundle {
        tool_version: TOOL_VERSION.to_string(),
        method: cfg.method.as_str().to_string(),
        config_hash: cfg.prep_hash(),
        background_excluded_default: cfg.method.requires_mask(),
        all_pixels: train_probe(&all, &groups, &cfg.probe)?,
        background_excluded: train_probe(&fg, &groups, &cfg.probe)?,
    };
    let json = serde_json::to_string_pretty(&bundle).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    if let Some(dir) = args.out.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    write_atomic(&args.out, json.as_bytes())?;
    Ok(bundle)
}

pub fn read_bundle(path: &Path) -> Result<ProbeBundle> {
    let text = fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.line(), e.to_string()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReportRow {
    pub method: Method,
    pub background_excluded: bool,
    pub is_default: bool,
    pub n_samples: usize,
    pub macro_auroc: f64,
}

/// Evaluate a bundle on the manifest's test split and write
/// `probe_report.csv` into `args.out`, a directory.
pub fn cmd_probe_eval(args: &ProbeArgs, bundle_path: &Path) -> Result<Vec<ProbeReportRow>> {
    let report = args.out.join(PROBE_REPORT_FILE);
    refuse_existing(std::slice::from_ref(&report), args.force)?;
    let bundle = read_bundle(bundle_path)?;
    let method: Method = bundle.method.parse()?;
    let manifest = read_manifest(&args.manifest)?;
    let (all, fg, groups) = load_samples(&manifest, &args.images, &[Split::Test])?;
    let mut rows = Vec::new();
    for (excluded, model, feats) in [
        (false, &bundle.all_pixels, &all),
        (true, &bundle.background_excluded, &fg),
    ] {
        rows.push(ProbeReportRow {
            method,
            background_excluded: excluded,
            is_default: excluded == bundle.background_excluded_default,
            n_samples: groups.len(),
            macro_auroc: probe_auroc(model, feats, &groups)?,
        });
    }
    let mut out = format!(
        "#tool=cxrprep {TOOL_VERSION}\n#config_hash={}\nmethod,background_excluded,default,n_samples,macro_auroc\n",
        bundle.config_hash
    );
    for r in &rows {
        out.push_str(&format!(
            "{},{},{},{},{:.6}\n",
            r.method.as_str(),
            r.background_excluded,
            r.is_default,
            r.n_samples,
            r.macro_auroc
        ));
    }
    fs::create_dir_all(&args.out)?;
    write_atomic(&report, out.as_bytes())?;
    Ok(rows)
}
