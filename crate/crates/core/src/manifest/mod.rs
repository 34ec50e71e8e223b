//! Reproducible train/val/test manifests built from dataset metadata.
//!
//! The build pipeline is: frontal-view filter, optional RCA quality filter
//! (mask-based methods only), one recording per patient, stratified test
//! sampling per (label, race group) cell, and a patient-level train/val split.
//! Every dropped record keeps a machine-readable exclusion reason.

mod io;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use io::{
    ingest_metadata, read_manifest, render_exclusions, render_manifest, write_manifest_files, IngestError, Ingested,
    MetadataPaths, EXCLUSIONS_FILE, INGEST_ERRORS_FILE, MANIFEST_FILE,
};

/// Recorded in every manifest header so splits can be reproduced elsewhere.
pub const RNG_DESCRIPTION: &str =
    "ChaCha8Rng::seed_from_u64 (rand_chacha 0.9), SliceRandom::shuffle (rand 0.9); test stream 0, split stream 1";

/// Default 11-label subset of the CheXpert schema: the 14 labels minus
/// "No Finding", "Support Devices" and "Pleural Other".
pub const DEFAULT_LABELS: [&str; 11] = [
    "Atelectasis",
    "Cardiomegaly",
    "Consolidation",
    "Edema",
    "Enlarged Cardiomediastinum",
    "Fracture",
    "Lung Lesion",
    "Lung Opacity",
    "Pleural Effusion",
    "Pneumonia",
    "Pneumothorax",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum View {
    Ap,
    Pa,
    Lateral,
    Other,
}

impl View {
    pub fn parse(s: &str) -> View {
        match s.trim().to_ascii_uppercase().as_str() {
            "AP" => View::Ap,
            "PA" => View::Pa,
            "LATERAL" | "LL" | "LAT" | "RL" => View::Lateral,
            _ => View::Other,
        }
    }

    pub fn is_frontal(self) -> bool {
        matches!(self, View::Ap | View::Pa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            View::Ap => "AP",
            View::Pa => "PA",
            View::Lateral => "LATERAL",
            View::Other => "OTHER",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RaceGroup {
    White,
    Black,
    Asian,
    Hispanic,
    Other,
}

impl RaceGroup {
    pub const ALL: [RaceGroup; 5] = [
        RaceGroup::White,
        RaceGroup::Black,
        RaceGroup::Asian,
        RaceGroup::Hispanic,
        RaceGroup::Other,
    ];

    pub const STUDY_GROUPS: [RaceGroup; 4] = [
        RaceGroup::White,
        RaceGroup::Black,
        RaceGroup::Asian,
        RaceGroup::Hispanic,
    ];

    /// Map a free-text race/ethnicity string (MIMIC or CheXpert style) to a
    /// group. Hispanic/Latino takes precedence; anything unrecognised is
    /// `Other`.
    pub fn from_metadata(s: &str) -> RaceGroup {
        let mut s = s.trim().to_ascii_uppercase();
        for negated in [
            "NON-HISPANIC",
            "NON HISPANIC",
            "NOT HISPANIC",
            "NON-LATINO",
            "NON LATINO",
            "NOT LATINO",
        ] {
            s = s.replace(negated, "");
        }
        if s.contains("HISPANIC") || s.contains("LATINO") {
            RaceGroup::Hispanic
        } else if s.starts_with("WHITE") {
            RaceGroup::White
        } else if s.starts_with("BLACK") || s.starts_with("AFRICAN AMERICAN") {
            RaceGroup::Black
        } else if s.starts_with("ASIAN") {
            RaceGroup::Asian
        } else {
            RaceGroup::Other
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RaceGroup::White => "White",
            RaceGroup::Black => "Black",
            RaceGroup::Asian => "Asian",
            RaceGroup::Hispanic => "Hispanic",
            RaceGroup::Other => "Other",
        }
    }
}

impl fmt::Display for RaceGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Strict parse of a canonical group name (case-insensitive).
impl FromStr for RaceGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RaceGroup::ALL
            .into_iter()
            .find(|g| g.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown race group {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LabelValue {
    Positive,
    Negative,
    Unlabeled,
}

impl LabelValue {
    /// CheXpert-labeler encoding: 1 positive, 0 negative, -1 uncertain, blank
    /// missing. Uncertain counts as unlabeled.
    pub fn parse(s: &str) -> Option<LabelValue> {
        let s = s.trim();
        if s.is_empty() {
            return Some(LabelValue::Unlabeled);
        }
        match s.parse::<f64>().ok()? {
            1.0 => Some(LabelValue::Positive),
            0.0 => Some(LabelValue::Negative),
            -1.0 => Some(LabelValue::Unlabeled),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LabelValue::Positive => "1",
            LabelValue::Negative => "0",
            LabelValue::Unlabeled => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
    Excluded,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Excluded => "excluded",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            "excluded" => Some(Split::Excluded),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExclusionReason {
    NonFrontalView(View),
    RcaMissing,
    RcaAtOrBelow { score: f64, threshold: f64 },
    MaskMissing,
    DuplicatePatient { kept: String },
    PatientInTest,
}

impl ExclusionReason {
    /// Stable code written to manifests and exclusion logs.
    pub fn code(&self) -> &'static str {
        match self {
            ExclusionReason::NonFrontalView(_) => "non_frontal_view",
            ExclusionReason::RcaMissing => "rca_missing",
            ExclusionReason::RcaAtOrBelow { .. } => "rca_below_threshold",
            ExclusionReason::MaskMissing => "mask_missing",
            ExclusionReason::DuplicatePatient { .. } => "duplicate_patient",
            ExclusionReason::PatientInTest => "patient_in_test",
        }
    }

    pub fn detail(&self) -> String {
        match self {
            ExclusionReason::NonFrontalView(v) => format!("view={}", v.as_str()),
            ExclusionReason::RcaMissing => String::new(),
            ExclusionReason::RcaAtOrBelow { score, threshold } => format!("rca={score} threshold={threshold}"),
            ExclusionReason::MaskMissing => String::new(),
            ExclusionReason::DuplicatePatient { kept } => format!("kept={kept}"),
            ExclusionReason::PatientInTest => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRecord {
    pub record_id: String,
    pub patient_id: String,
    pub view: View,
    /// Aligned with the manifest's label list.
    pub labels: Vec<LabelValue>,
    pub race_group: RaceGroup,
    pub rca_score: Option<f64>,
    pub image_path: String,
    pub mask_path: Option<String>,
    pub split: Split,
    pub exclusion: Option<ExclusionReason>,
}

impl ManifestRecord {
    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l != LabelValue::Unlabeled).count()
    }

    pub fn is_positive(&self, label: usize) -> bool {
        self.labels[label] == LabelValue::Positive
    }

    fn excluded(mut self, reason: ExclusionReason) -> Self {
        self.split = Split::Excluded;
        self.exclusion = Some(reason);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingSpec {
    pub positives_per_cell: usize,
    pub label_list: Vec<String>,
    pub groups: Vec<RaceGroup>,
    pub seed: u64,
    pub val_fraction: f64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        SamplingSpec {
            positives_per_cell: 35,
            label_list: DEFAULT_LABELS.iter().map(|s| s.to_string()).collect(),
            groups: RaceGroup::STUDY_GROUPS.to_vec(),
            seed: 0,
            val_fraction: 0.05,
        }
    }
}

impl SamplingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.positives_per_cell == 0 {
            return Err(Error::Config("positives_per_cell must be at least 1".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config(format!(
                "val_fraction must be in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if self.label_list.is_empty() {
            return Err(Error::Config("label list is empty".into()));
        }
        let unique: BTreeSet<_> = self.label_list.iter().collect();
        if unique.len() != self.label_list.len() {
            return Err(Error::Config("label list has duplicates".into()));
        }
        Ok(())
    }

    /// Upper bound on the test-set size.
    pub fn max_test_size(&self) -> usize {
        self.positives_per_cell * self.label_list.len() * self.groups.len()
    }
}

/// Result of a filtering step: the kept records and the dropped ones, each
/// carrying its reason.
#[derive(Debug, Clone, Default)]
pub struct Partition {
    pub kept: Vec<ManifestRecord>,
    pub excluded: Vec<ManifestRecord>,
}

pub fn select_frontal(records: Vec<ManifestRecord>) -> Partition {
    let mut out = Partition::default();
    for r in records {
        if r.view.is_frontal() {
            out.kept.push(r);
        } else {
            let view = r.view;
            out.excluded.push(r.excluded(ExclusionReason::NonFrontalView(view)));
        }
    }
    out
}

/// Keep scores strictly above `threshold`; records without a score are
/// excluded and logged.
pub fn filter_by_rca(records: Vec<ManifestRecord>, threshold: f64) -> Partition {
    let mut out = Partition::default();
    for r in records {
        match r.rca_score {
            Some(score) if score > threshold => out.kept.push(r),
            Some(score) => out
                .excluded
                .push(r.excluded(ExclusionReason::RcaAtOrBelow { score, threshold })),
            None => {
                log::info!("excluding {}: no RCA score", r.record_id);
                out.excluded.push(r.excluded(ExclusionReason::RcaMissing));
            }
        }
    }
    out
}

fn require_mask(records: Vec<ManifestRecord>) -> Partition {
    let mut out = Partition::default();
    for r in records {
        if r.mask_path.as_deref().is_some_and(|p| !p.is_empty()) {
            out.kept.push(r);
        } else {
            out.excluded.push(r.excluded(ExclusionReason::MaskMissing));
        }
    }
    out
}

/// One record per patient: the one with the most labeled (non-uncertain,
/// non-missing) findings, ties to the smallest record id.
pub fn select_one_per_patient(records: Vec<ManifestRecord>) -> Partition {
    let mut by_patient: BTreeMap<String, Vec<ManifestRecord>> = BTreeMap::new();
    for r in records {
        by_patient.entry(r.patient_id.clone()).or_default().push(r);
    }
    let mut out = Partition::default();
    for (_, mut group) in by_patient {
        group.sort_by(|a, b| {
            b.labeled_count()
                .cmp(&a.labeled_count())
                .then_with(|| a.record_id.cmp(&b.record_id))
        });
        let mut it = group.into_iter();
        let best = it.next().expect("non-empty patient group");
        for r in it {
            let kept = best.record_id.clone();
            out.excluded
                .push(r.excluded(ExclusionReason::DuplicatePatient { kept }));
        }
        out.kept.push(best);
    }
    out.kept.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Shortfall {
    pub label: String,
    pub group: RaceGroup,
    pub available: usize,
    pub requested: usize,
}

#[derive(Debug, Clone)]
pub struct TestSample {
    pub test: Vec<ManifestRecord>,
    pub remaining: Vec<ManifestRecord>,
    pub shortfalls: Vec<Shortfall>,
}

/// Draw up to `positives_per_cell` positives for every (label, group) cell,
/// independently per cell and without replacement. A record drawn for
/// several cells appears once. Cells are visited label-major in
/// configuration order, each drawing from one shared seeded stream.
pub fn sample_test_set(records: Vec<ManifestRecord>, spec: &SamplingSpec) -> TestSample {
    let mut records = records;
    records.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut chosen = BTreeSet::new();
    let mut shortfalls = Vec::new();
    for (li, label) in spec.label_list.iter().enumerate() {
        for &group in &spec.groups {
            let mut candidates: Vec<usize> = records
                .iter()
                .enumerate()
                .filter(|(_, r)| r.race_group == group && r.is_positive(li))
                .map(|(i, _)| i)
                .collect();
            if candidates.len() < spec.positives_per_cell {
                warn!(
                    "test cell ({label}, {group}) has {} positives, wanted {}",
                    candidates.len(),
                    spec.positives_per_cell
                );
                shortfalls.push(Shortfall {
                    label: label.clone(),
                    group,
                    available: candidates.len(),
                    requested: spec.positives_per_cell,
                });
            }
            candidates.shuffle(&mut rng);
            chosen.extend(candidates.into_iter().take(spec.positives_per_cell));
        }
    }
    let mut test = Vec::with_capacity(chosen.len());
    let mut remaining = Vec::with_capacity(records.len() - chosen.len());
    for (i, mut r) in records.into_iter().enumerate() {
        if chosen.contains(&i) {
            r.split = Split::Test;
            test.push(r);
        } else {
            remaining.push(r);
        }
    }
    TestSample {
        test,
        remaining,
        shortfalls,
    }
}

/// Patient-level split: `round(patients * val_fraction)` patients go to
/// validation, chosen by a seeded shuffle of the sorted patient ids.
pub fn split_train_val(
    records: Vec<ManifestRecord>,
    spec: &SamplingSpec,
) -> Result<(Vec<ManifestRecord>, Vec<ManifestRecord>)> {
    let mut patients: Vec<String> = records
        .iter()
        .map(|r| r.patient_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    patients.shuffle(&mut rng);
    let n_val = (patients.len() as f64 * spec.val_fraction).round() as usize;
    let val_patients: BTreeSet<&String> = patients[..n_val].iter().collect();

    let mut train = Vec::new();
    let mut val = Vec::new();
    for mut r in records {
        if val_patients.contains(&r.patient_id) {
            r.split = Split::Val;
            val.push(r);
        } else {
            r.split = Split::Train;
            train.push(r);
        }
    }
    check_disjoint(&[&train, &val])?;
    Ok((train, val))
}

/// No patient may appear in more than one of the given sets.
pub fn check_disjoint(sets: &[&[ManifestRecord]]) -> Result<()> {
    let mut owner: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, set) in sets.iter().enumerate() {
        for r in set.iter() {
            if let Some(&j) = owner.get(r.patient_id.as_str()) {
                if j != i {
                    return Err(Error::OverlapViolation(format!(
                        "patient {} appears in two splits",
                        r.patient_id
                    )));
                }
            } else {
                owner.insert(&r.patient_id, i);
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BuildMode {
    /// Internal dataset: test sampling plus train/val split.
    Split,
    /// External dataset: every surviving record is an evaluation record.
    EvaluationOnly,
}

impl BuildMode {
    pub fn as_str(self) -> &'static str {
        match self {
            BuildMode::Split => "split",
            BuildMode::EvaluationOnly => "evaluation",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions {
    pub spec: SamplingSpec,
    pub mode: BuildMode,
    /// Mask-based methods need a mask path and an RCA score above threshold.
    pub require_mask: bool,
    pub rca_threshold: f64,
}

impl BuildOptions {
    pub fn canonical_string(&self) -> String {
        let groups: Vec<&str> = self.spec.groups.iter().map(|g| g.as_str()).collect();
        format!(
            "mode={}\npositives_per_cell={}\nlabels={}\ngroups={}\nseed={}\nval_fraction={}\nrequire_mask={}\nrca_threshold={}\nrng={}\n",
            self.mode.as_str(),
            self.spec.positives_per_cell,
            self.spec.label_list.join(";"),
            groups.join(";"),
            self.spec.seed,
            self.spec.val_fraction,
            self.require_mask,
            self.rca_threshold,
            RNG_DESCRIPTION,
        )
    }

    pub fn spec_hash(&self) -> String {
        crate::hashing::sha256_hex(self.canonical_string().as_bytes())
    }
}

#[derive(Debug, Clone)]
pub struct Manifest {
    pub labels: Vec<String>,
    pub mode: BuildMode,
    pub seed: u64,
    pub spec_hash: String,
    /// All records, sorted by id, including excluded ones.
    pub records: Vec<ManifestRecord>,
    pub shortfalls: Vec<Shortfall>,
}

impl Manifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn excluded(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.split(Split::Excluded)
    }
}

pub fn build_manifest(records: Vec<ManifestRecord>, opts: &BuildOptions) -> Result<Manifest> {
    opts.spec.validate()?;
    let mut excluded = Vec::new();
    let keep = |p: Partition, excluded: &mut Vec<ManifestRecord>| {
        excluded.extend(p.excluded);
        p.kept
    };

    let mut current = keep(select_frontal(records), &mut excluded);
    if opts.require_mask {
        current = keep(require_mask(current), &mut excluded);
        current = keep(filter_by_rca(current, opts.rca_threshold), &mut excluded);
    }
    current = keep(select_one_per_patient(current), &mut excluded);

    let mut out: Vec<ManifestRecord>;
    let mut shortfalls = Vec::new();
    match opts.mode {
        BuildMode::EvaluationOnly => {
            out = current
                .into_iter()
                .map(|mut r| {
                    r.split = Split::Test;
                    r
                })
                .collect();
        }
        BuildMode::Split => {
            let sample = sample_test_set(current, &opts.spec);
            shortfalls = sample.shortfalls;
            let test_patients: BTreeSet<String> = sample.test.iter().map(|r| r.patient_id.clone()).collect();
            let (pool, clash): (Vec<_>, Vec<_>) = sample
                .remaining
                .into_iter()
                .partition(|r| !test_patients.contains(&r.patient_id));
            excluded.extend(clash.into_iter().map(|r| r.excluded(ExclusionReason::PatientInTest)));
            let (train, val) = split_train_val(pool, &opts.spec)?;
            check_disjoint(&[&train, &val, &sample.test])?;
            out = sample.test;
            out.extend(train);
            out.extend(val);
        }
    }
    out.extend(excluded);
    out.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    Ok(Manifest {
        labels: opts.spec.label_list.clone(),
        mode: opts.mode,
        seed: opts.spec.seed,
        spec_hash: opts.spec_hash(),
        records: out,
        shortfalls,
    })
}
