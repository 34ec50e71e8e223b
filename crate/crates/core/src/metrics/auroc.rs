//! Tie-aware AUROC as the normalised Mann-Whitney statistic.

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Probability that a random positive outscores a random negative, ties
/// counted half. Pair counts are accumulated in integers, so the only
/// rounding is the final division.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    auroc_named(scores, labels, "labels")
}

pub(crate) fn auroc_named(scores: &[f64], labels: &[bool], what: &str) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidArgument(format!("non-finite score {s}")));
    }
    let positives = labels.iter().filter(|&&l| l).count() as u64;
    let negatives = labels.len() as u64 - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::DegenerateLabels(what.to_string()));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));

    // Twice the U statistic: 2 per concordant pair, 1 per tied pair.
    let mut doubled_u = 0u128;
    let mut negatives_below = 0u64;
    let mut i = 0;
    while i < order.len() {
        let value = scores[order[i]];
        let mut pos = 0u64;
        let mut neg = 0u64;
        while i < order.len() && scores[order[i]] == value {
            if labels[order[i]] {
                pos += 1;
            } else {
                neg += 1;
            }
            i += 1;
        }
        doubled_u += 2 * pos as u128 * negatives_below as u128 + pos as u128 * neg as u128;
        negatives_below += neg;
    }
    Ok(doubled_u as f64 / (2 * positives as u128 * negatives as u128) as f64)
}
