//! Pipeline configuration.
//!
//! Values are resolved in order: built-in defaults, `--config FILE` (flat
//! `key = value` TOML), `CXRPREP_<KEY>` environment variables, then command
//! line flags. The canonical form is one `key=value` line per key in a fixed
//! order; hashes of it are embedded in every output.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::clahe::ClaheParams;
use crate::error::{Error, Result};
use crate::hashing::short_hash;
use crate::manifest::{RaceGroup, SamplingSpec};
use crate::mask::{DEFAULT_MARGIN_PX, DEFAULT_NATIVE_RESOLUTION};
use crate::metrics::DisparityMode;
use crate::probe::ProbeHyper;

pub const ENV_PREFIX: &str = "CXRPREP_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Baseline,
    Masking,
    Cropping,
    Clahe,
}

impl Method {
    pub const REPORT_ORDER: [Method; 4] = [Method::Baseline, Method::Masking, Method::Cropping, Method::Clahe];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Masking => "masking",
            Method::Cropping => "cropping",
            Method::Clahe => "clahe",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Method::Baseline => "Baseline",
            Method::Masking => "Masking",
            Method::Cropping => "Cropping",
            Method::Clahe => "CLAHE",
        }
    }

    pub fn requires_mask(self) -> bool {
        matches!(self, Method::Masking | Method::Cropping)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::REPORT_ORDER
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| {
                Error::InvalidArgument(format!("unknown method {s:?} (baseline | masking | cropping | clahe)"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClaheOrder {
    /// CLAHE at native resolution, then downscale.
    BeforeDownscale,
    AfterDownscale,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BBoxSource {
    Dilated,
    Raw,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: Method,
    pub clahe: ClaheParams,
    pub clahe_order: ClaheOrder,
    pub margin_px: usize,
    pub mask_native_res: usize,
    pub letterbox: bool,
    pub bbox_source: BBoxSource,
    pub target_width: usize,
    pub target_height: usize,
    pub export_8bit: bool,
    pub rca_threshold: f64,
    pub sampling: SamplingSpec,
    pub workers: usize,
    pub max_failure_rate: f64,
    pub disparity: DisparityMode,
    pub probe: ProbeHyper,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: Method::Baseline,
            clahe: ClaheParams::default(),
            clahe_order: ClaheOrder::BeforeDownscale,
            margin_px: DEFAULT_MARGIN_PX,
            mask_native_res: DEFAULT_NATIVE_RESOLUTION,
            letterbox: false,
            bbox_source: BBoxSource::Dilated,
            target_width: 224,
            target_height: 224,
            export_8bit: false,
            rca_threshold: 0.7,
            sampling: SamplingSpec::default(),
            workers: std::thread::available_parallelism().map_or(1, |n| n.get()),
            max_failure_rate: 0.05,
            disparity: DisparityMode::PairwiseMean,
            probe: ProbeHyper::default(),
        }
    }
}

/// Every recognised key, in canonical order.
pub const KEYS: [&str; 23] = [
    "method",
    "clahe_grid",
    "clahe_clip",
    "clahe_bins",
    "clahe_order",
    "margin_px",
    "mask_native_res",
    "letterbox",
    "bbox_source",
    "target_size",
    "export_8bit",
    "rca_threshold",
    "positives_per_cell",
    "labels",
    "groups",
    "seed",
    "val_fraction",
    "workers",
    "max_failure_rate",
    "disparity",
    "probe_lr",
    "probe_steps",
    "probe_l2",
];

/// Keys that change preprocessed pixels.
const PREP_KEYS: [&str; 10] = [
    "method",
    "clahe_grid",
    "clahe_clip",
    "clahe_bins",
    "clahe_order",
    "margin_px",
    "mask_native_res",
    "letterbox",
    "bbox_source",
    "target_size",
];

fn parse_pair(v: &str, what: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("{what} must look like 8x8, got {v:?}"));
    let (a, b) = v.split_once(['x', 'X', '×']).ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}

fn parse_bool(v: &str) -> Result<bool> {
    match v.trim().to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::Config(format!("expected a boolean, got {v:?}"))),
    }
}

fn parse_num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
}

impl PipelineConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "method" => self.method = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "clahe_grid" => {
                let (rows, cols) = parse_pair(value, key)?;
                self.clahe.grid_rows = rows;
                self.clahe.grid_cols = cols;
            }
            "clahe_clip" => self.clahe.clip_limit = parse_num(key, value)?,
            "clahe_bins" => self.clahe.bins = parse_num(key, value)?,
            "clahe_order" => {
                self.clahe_order = match value.trim() {
                    "before-downscale" => ClaheOrder::BeforeDownscale,
                    "after-downscale" => ClaheOrder::AfterDownscale,
                    other => return Err(Error::Config(format!("clahe_order {other:?}"))),
                }
            }
            "margin_px" => self.margin_px = parse_num(key, value)?,
            "mask_native_res" => self.mask_native_res = parse_num(key, value)?,
            "letterbox" => self.letterbox = parse_bool(value)?,
            "bbox_source" => {
                self.bbox_source = match value.trim() {
                    "dilated" => BBoxSource::Dilated,
                    "raw" => BBoxSource::Raw,
                    other => return Err(Error::Config(format!("bbox_source {other:?}"))),
                }
            }
            "target_size" => {
                let (w, h) = parse_pair(value, key)?;
                self.target_width = w;
                self.target_height = h;
            }
            "export_8bit" => self.export_8bit = parse_bool(value)?,
            "rca_threshold" => self.rca_threshold = parse_num(key, value)?,
            "positives_per_cell" => self.sampling.positives_per_cell = parse_num(key, value)?,
            "labels" => {
                self.sampling.label_list = value
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "groups" => {
                self.sampling.groups = value
                    .split(';')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|g| g.parse::<RaceGroup>().map_err(|e| Error::Config(e.to_string())))
                    .collect::<Result<_>>()?
            }
            "seed" => {
                let seed: u64 = parse_num(key, value)?;
                self.sampling.seed = seed;
                self.probe.seed = seed;
            }
            "val_fraction" => self.sampling.val_fraction = parse_num(key, value)?,
            "workers" => self.workers = parse_num(key, value)?,
            "max_failure_rate" => self.max_failure_rate = parse_num(key, value)?,
            "disparity" => self.disparity = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "probe_lr" => self.probe.learning_rate = parse_num(key, value)?,
            "probe_steps" => self.probe.steps = parse_num(key, value)?,
            "probe_l2" => self.probe.l2 = parse_num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "method" => self.method.as_str().to_string(),
            "clahe_grid" => format!("{}x{}", self.clahe.grid_rows, self.clahe.grid_cols),
            "clahe_clip" => self.clahe.clip_limit.to_string(),
            "clahe_bins" => self.clahe.bins.to_string(),
            "clahe_order" => match self.clahe_order {
                ClaheOrder::BeforeDownscale => "before-downscale".into(),
                ClaheOrder::AfterDownscale => "after-downscale".into(),
            },
            "margin_px" => self.margin_px.to_string(),
            "mask_native_res" => self.mask_native_res.to_string(),
            "letterbox" => self.letterbox.to_string(),
            "bbox_source" => match self.bbox_source {
                BBoxSource::Dilated => "dilated".into(),
                BBoxSource::Raw => "raw".into(),
            },
            "target_size" => format!("{}x{}", self.target_width, self.target_height),
            "export_8bit" => self.export_8bit.to_string(),
            "rca_threshold" => self.rca_threshold.to_string(),
            "positives_per_cell" => self.sampling.positives_per_cell.to_string(),
            "labels" => self.sampling.label_list.join(";"),
            "groups" => self
                .sampling
                .groups
                .iter()
                .map(|g| g.as_str())
                .collect::<Vec<_>>()
                .join(";"),
            "seed" => self.sampling.seed.to_string(),
            "val_fraction" => self.sampling.val_fraction.to_string(),
            "workers" => self.workers.to_string(),
            "max_failure_rate" => self.max_failure_rate.to_string(),
            "disparity" => self.disparity.as_str().to_string(),
            "probe_lr" => self.probe.learning_rate.to_string(),
            "probe_steps" => self.probe.steps.to_string(),
            "probe_l2" => self.probe.l2.to_string(),
            _ => return None,
        })
    }

    /// One `key=value` line per key in canonical order.
    pub fn canonical(&self) -> String {
        self.render_keys(&KEYS)
    }

    fn render_keys(&self, keys: &[&str]) -> String {
        keys.iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    /// Hash of the settings that affect preprocessed pixels. Worker count
    /// and paths are deliberately outside it.
    pub fn prep_hash(&self) -> String {
        short_hash(self.render_keys(&PREP_KEYS).as_bytes())
    }

    pub fn export_suffix(&self) -> &'static str {
        if self.export_8bit {
            "8bit"
        } else {
            "native"
        }
    }

    /// Apply a flat TOML document.
    pub fn apply_toml(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        for (key, value) in table {
            let v = match value {
                toml::Value::String(s) => s,
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                other => return Err(Error::Config(format!("{key}: unsupported value {other}"))),
            };
            self.set(&key, &v)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        self.apply_toml(&text)
    }

    /// Apply `CXRPREP_<KEY>` overrides from the given environment.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> Result<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (k, v) in vars {
            let Some(rest) = k.as_ref().strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let key = rest.to_ascii_lowercase();
            if KEYS.contains(&key.as_str()) {
                self.set(&key, v.as_ref())?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.target_width == 0 || self.target_height == 0 {
            return Err(Error::Config("target_size must be positive".into()));
        }
        if self.mask_native_res == 0 {
            return Err(Error::Config("mask_native_res must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::Config("max_failure_rate must be in [0, 1]".into()));
        }
        self.sampling.validate()?;
        if self.clahe.grid_rows == 0
            || self.clahe.grid_cols == 0
            || self.clahe.clip_limit.is_nan()
            || self.clahe.clip_limit <= 0.0
            || self.clahe.bins < 2
        {
            return Err(Error::Config("invalid CLAHE parameters".into()));
        }
        self.probe.validate()?;
        Ok(())
    }
}
