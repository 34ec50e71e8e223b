//! Race-encoding probe on intensity histograms.
//!
//! Each image becomes a normalised intensity histogram; a multinomial
//! logistic regression is fitted on standardised features by full-batch
//! gradient descent from a zero start, so training is deterministic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{histogram, histogram_where, GrayImage};
use crate::manifest::RaceGroup;
use crate::metrics::auroc_named;

pub const FEATURE_BINS: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeHyper {
    pub learning_rate: f64,
    pub steps: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeHyper {
    fn default() -> Self {
        ProbeHyper {
            learning_rate: 0.1,
            steps: 2000,
            l2: 1e-3,
            seed: 0,
        }
    }
}

impl ProbeHyper {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 || self.l2.is_nan() || self.l2 < 0.0 {
            return Err(Error::Config("probe needs lr > 0 and l2 >= 0".into()));
        }
        Ok(())
    }
}

/// Normalised `FEATURE_BINS`-bin histogram. With `exclude_zero`, pixels equal
/// to 0 (masked-out background) are left out unless nothing else remains.
pub fn featurize(img: &GrayImage, exclude_zero: bool) -> Vec<f64> {
    let mut h = histogram(img, FEATURE_BINS).expect("256 bins fit every depth");
    if exclude_zero {
        let fg = histogram_where(img, FEATURE_BINS, |_, v| v != 0).expect("256 bins fit every depth");
        if fg.total() > 0 {
            h = fg;
        }
    }
    let total = h.total().max(1) as f64;
    h.bins().iter().map(|&c| c as f64 / total).collect()
}

/// Mean cross-entropy plus `l2 / 2 * |W|^2` over non-bias weights.
///
/// `weights` is row-major `classes x (dim + 1)`, bias last in each row.
pub fn loss_and_gradient(
    weights: &[f64],
    features: &[Vec<f64>],
    targets: &[usize],
    classes: usize,
    l2: f64,
) -> (f64, Vec<f64>) {
    let dim = features.first().map_or(0, Vec::len);
    let stride = dim + 1;
    assert_eq!(weights.len(), classes * stride, "weight shape");
    let n = features.len().max(1) as f64;

    const CHUNK: usize = 256;
    let partials: Vec<(f64, Vec<f64>)> = features
        .par_chunks(CHUNK)
        .zip(targets.par_chunks(CHUNK))
        .map(|(xs, ys)| {
            let mut loss = 0.0;
            let mut grad = vec![0.0; weights.len()];
            let mut probs = vec![0.0; classes];
            for (x, &y) in xs.iter().zip(ys) {
                logits_into(weights, x, &mut probs);
                let log_z = softmax_in_place(&mut probs);
                loss += log_z - probs_logit(weights, x, y);
                for (k, p) in probs.iter().enumerate() {
                    let coef = p - if k == y { 1.0 } else { 0.0 };
                    let row = &mut grad[k * stride..(k + 1) * stride];
                    for (g, xi) in row.iter_mut().zip(x) {
                        *g += coef * xi;
                    }
                    row[dim] += coef;
                }
            }
            (loss, grad)
        })
        .collect();

    let mut loss = 0.0;
    let mut grad = vec![0.0; weights.len()];
    for (l, g) in partials {
        loss += l;
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    loss /= n;
    for g in &mut grad {
        *g /= n;
    }
    for k in 0..classes {
        for j in 0..dim {
            let w = weights[k * stride + j];
            loss += 0.5 * l2 * w * w;
            grad[k * stride + j] += l2 * w;
        }
    }
    (loss, grad)
}

fn logits_into(weights: &[f64], x: &[f64], out: &mut [f64]) {
    let stride = x.len() + 1;
    for (k, o) in out.iter_mut().enumerate() {
        let row = &weights[k * stride..(k + 1) * stride];
        *o = row[x.len()] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

fn probs_logit(weights: &[f64], x: &[f64], k: usize) -> f64 {
    let stride = x.len() + 1;
    let row = &weights[k * stride..(k + 1) * stride];
    row[x.len()] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
}

/// Turns logits into probabilities and returns log-sum-exp.
fn softmax_in_place(v: &mut [f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
    max + sum.ln()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    pub groups: Vec<String>,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weights: Vec<f64>,
    pub learning_rate: f64,
    pub steps: usize,
    pub l2: f64,
    pub seed: u64,
    pub final_loss: f64,
}

impl ProbeModel {
    pub fn groups(&self) -> Result<Vec<RaceGroup>> {
        self.groups.iter().map(|g| g.parse()).collect()
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Io(std::io::Error::other(e)))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::parse("probe model", e.line(), e.to_string()))
    }

    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    /// Class probabilities in `groups` order.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "feature length {} does not match probe dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let z = self.standardize(x);
        let mut p = vec![0.0; self.groups.len()];
        logits_into(&self.weights, &z, &mut p);
        softmax_in_place(&mut p);
        Ok(p)
    }
}

pub fn train_probe(features: &[Vec<f64>], groups: &[RaceGroup], hyper: &ProbeHyper) -> Result<ProbeModel> {
    train_probe_traced(features, groups, hyper).map(|(m, _)| m)
}

/// As [`train_probe`], also returning the training loss before each step
/// followed by the final loss (`steps + 1` values).
pub fn train_probe_traced(
    features: &[Vec<f64>],
    groups: &[RaceGroup],
    hyper: &ProbeHyper,
) -> Result<(ProbeModel, Vec<f64>)> {
    hyper.validate()?;
    if features.len() != groups.len() {
        return Err(Error::InvalidArgument("features and groups differ in length".into()));
    }
    let dim = features.first().map_or(0, Vec::len);
    if dim == 0 || features.iter().any(|f| f.len() != dim) {
        return Err(Error::InvalidArgument(
            "features must be non-empty and equal length".into(),
        ));
    }
    let mut classes: Vec<RaceGroup> = groups.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::SingleGroup);
    }
    let targets: Vec<usize> = groups
        .iter()
        .map(|g| classes.binary_search(g).expect("collected above"))
        .collect();

    let n = features.len() as f64;
    let mut mean = vec![0.0; dim];
    for f in features {
        for (m, v) in mean.iter_mut().zip(f) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut scale = vec![0.0; dim];
    for f in features {
        for ((s, v), m) in scale.iter_mut().zip(f).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut scale {
        let sd = (*s / n).sqrt();
        *s = if sd > 1e-12 { sd } else { 1.0 };
    }
    let standardized: Vec<Vec<f64>> = features
        .iter()
        .map(|f| f.iter().zip(&mean).zip(&scale).map(|((v, m), s)| (v - m) / s).collect())
        .collect();

    let mut weights = vec![0.0; classes.len() * (dim + 1)];
    let mut trace = Vec::with_capacity(hyper.steps + 1);
    for _ in 0..hyper.steps {
        let (loss, grad) = loss_and_gradient(&weights, &standardized, &targets, classes.len(), hyper.l2);
        trace.push(loss);
        for (w, g) in weights.iter_mut().zip(&grad) {
            *w -= hyper.learning_rate * g;
        }
    }
    let (final_loss, _) = loss_and_gradient(&weights, &standardized, &targets, classes.len(), hyper.l2);
    trace.push(final_loss);
    let model = ProbeModel {
        groups: classes.iter().map(|g| g.as_str().to_string()).collect(),
        mean,
        scale,
        weights,
        learning_rate: hyper.learning_rate,
        steps: hyper.steps,
        l2: hyper.l2,
        seed: hyper.seed,
        final_loss,
    };
    Ok((model, trace))
}

/// Macro one-vs-rest AUROC over the model's groups that occur in `groups`
/// alongside at least one other group.
pub fn probe_auroc(model: &ProbeModel, features: &[Vec<f64>], groups: &[RaceGroup]) -> Result<f64> {
    if features.len() != groups.len() {
        return Err(Error::InvalidArgument("features and groups differ in length".into()));
    }
    let classes = model.groups()?;
    let probs: Vec<Vec<f64>> = features.iter().map(|f| model.predict_proba(f)).collect::<Result<_>>()?;
    let mut sum = 0.0;
    let mut used = 0usize;
    for (k, class) in classes.iter().enumerate() {
        let labels: Vec<bool> = groups.iter().map(|g| g == class).collect();
        let pos = labels.iter().filter(|&&b| b).count();
        if pos == 0 || pos == labels.len() {
            continue;
        }
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        sum += auroc_named(&scores, &labels, class.as_str())?;
        used += 1;
    }
    if used == 0 {
        return Err(Error::SingleGroup);
    }
    Ok(sum / used as f64)
}
