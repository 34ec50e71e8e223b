//! Oracles and synthetic fixtures shared by the integration tests.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use cxrprep_core::image::{BitDepth, GrayImage};
use cxrprep_core::manifest::{MetadataPaths, DEFAULT_LABELS};
use cxrprep_core::mask::BinaryMask;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// (concordant + ties / 2) / (pos * neg) by enumerating every pair.
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let mut pairs = 0u64;
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            pairs += 1;
            if si > sj {
                twice += 2;
            } else if si == sj {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

/// Scores drawn from a small set of values so ties are common.
pub fn tied_instance(rng: &mut ChaCha8Rng, n: usize) -> (Vec<f64>, Vec<bool>) {
    let levels = rng.random_range(2..=20);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n)
        .map(|_| rng.random_range(0..levels) as f64 / levels as f64)
        .collect();
    (scores, labels)
}

pub fn random_image(rng: &mut ChaCha8Rng, w: usize, h: usize, depth: BitDepth) -> GrayImage {
    let max = depth.max_value();
    // Mix smooth structure with noise so tiles differ.
    let a = rng.random_range(0.0..1.0);
    let b = rng.random_range(0.0..1.0);
    let noise = rng.random_range(0.0..0.5);
    let mut px = Vec::with_capacity(w * h);
    for r in 0..h {
        for c in 0..w {
            let base = 0.5 + 0.25 * ((r as f64 * a * 0.1).sin() + (c as f64 * b * 0.13).cos());
            let v = (base + noise * (rng.random::<f64>() - 0.5)).clamp(0.0, 1.0);
            px.push((v * max as f64).round() as u16);
        }
    }
    GrayImage::from_pixels(w, h, depth, px).unwrap()
}

/// Unclipped tiled equalization computed pixel by pixel: each tile's CDF is
/// read by counting tile pixels directly, and the four surrounding tile
/// centres are blended bilinearly with exact rationals.
pub fn naive_tiled_equalization(img: &GrayImage, grid_rows: usize, grid_cols: usize, bins: usize) -> GrayImage {
    let (w, h) = img.dimensions();
    let depth = img.bit_depth();
    let bits = depth.bits();
    let max = depth.max_value() as u128;
    let tw = w.div_ceil(grid_cols);
    let th = h.div_ceil(grid_rows);
    let bin = |v: u16| ((v as u64 * bins as u64) >> bits) as usize;
    let padded = |r: usize, c: usize| img.get(r.min(h - 1), c.min(w - 1));

    // cdf[t][b] = number of tile pixels whose bin is <= b.
    let mut cdf = vec![vec![0u128; bins]; grid_rows * grid_cols];
    for tr in 0..grid_rows {
        for tc in 0..grid_cols {
            let table = &mut cdf[tr * grid_cols + tc];
            for r in tr * th..(tr + 1) * th {
                for c in tc * tw..(tc + 1) * tw {
                    let b = bin(padded(r, c));
                    for entry in table.iter_mut().skip(b) {
                        *entry += 1;
                    }
                }
            }
        }
    }
    let total = (tw * th) as u128;
    let lut = |t: usize, b: usize| -> u128 {
        // round(cdf / total * max), halves up
        (2 * cdf[t][b] * max + total) / (2 * total)
    };

    // Position along an axis in tile-centre units as lo index and weight num/den.
    let axis = |x: usize, tile: usize, tiles: usize| -> (usize, usize, u128, u128) {
        let den = 2 * tile as i128;
        let pos = 2 * x as i128 + 1 - tile as i128;
        if pos <= 0 {
            return (0, 0, 0, den as u128);
        }
        let lo = (pos / den) as usize;
        if lo + 1 >= tiles {
            return (tiles - 1, tiles - 1, 0, den as u128);
        }
        (lo, lo + 1, (pos % den) as u128, den as u128)
    };

    GrayImage::from_fn(w, h, depth, |r, c| {
        let b = bin(img.get(r, c));
        let (y0, y1, fy, dy) = axis(r, th, grid_rows);
        let (x0, x1, fx, dx) = axis(c, tw, grid_cols);
        let v = lut(y0 * grid_cols + x0, b) * (dy - fy) * (dx - fx)
            + lut(y0 * grid_cols + x1, b) * (dy - fy) * fx
            + lut(y1 * grid_cols + x0, b) * fy * (dx - fx)
            + lut(y1 * grid_cols + x1, b) * fy * fx;
        let d = dx * dy;
        ((2 * v + d) / (2 * d)) as u16
    })
    .unwrap()
}

pub fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    BinaryMask::from_fn(w, h, |_, _| rng.random_bool(density)).unwrap()
}

/// Set iff some set input pixel lies within Euclidean distance `radius`.
pub fn brute_dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    let (w, h) = mask.dimensions();
    let r2 = (radius * radius) as i64;
    let set: Vec<(i64, i64)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| mask.get(r, c))
        .map(|(r, c)| (r as i64, c as i64))
        .collect();
    BinaryMask::from_fn(w, h, |r, c| {
        set.iter()
            .any(|&(sr, sc)| (sr - r as i64).pow(2) + (sc - c as i64).pow(2) <= r2)
    })
    .unwrap()
}

const RACE_TEXT: [&str; 9] = [
    "WHITE",
    "White, non-Hispanic",
    "BLACK/AFRICAN AMERICAN",
    "Black or African American",
    "ASIAN",
    "Asian - Chinese",
    "HISPANIC/LATINO - PUERTO RICAN",
    "UNKNOWN",
    "AMERICAN INDIAN/ALASKA NATIVE",
];

/// Write a synthetic metadata set with `n` recordings into `dir`.
///
/// About 15% lateral views, several recordings per patient, CheXpert-style
/// labels (1, 0, -1, blank), free-text race, and RCA scores that include
/// exactly 0.70 for some records.
pub fn write_metadata_fixture(dir: &Path, n: usize, seed: u64) -> MetadataPaths {
    fs::create_dir_all(dir).unwrap();
    let mut rng = rng(seed);
    let mut records = String::from("record_id,patient_id,view,image_path,mask_path\n");
    let mut labels = String::from("record_id");
    for l in DEFAULT_LABELS {
        write!(labels, ",{l}").unwrap();
    }
    labels.push('\n');
    let mut demo = String::from("record_id,race\n");
    let mut rca = String::from("record_id,rca_score\n");
    let patients = (n * 2 / 5).max(1);
    for i in 0..n {
        let id = format!("s{i:06}");
        let patient = format!("p{:05}", rng.random_range(0..patients));
        let view = match rng.random_range(0..20) {
            0..=8 => "AP",
            9..=16 => "PA",
            _ => "LATERAL",
        };
        writeln!(records, "{id},{patient},{view},images/{id}.png,masks/{id}.png").unwrap();
        labels.push_str(&id);
        for _ in DEFAULT_LABELS {
            let v = match rng.random_range(0..10) {
                0..=2 => "1",
                3..=5 => "0",
                6 => "-1",
                _ => "",
            };
            write!(labels, ",{v}").unwrap();
        }
        labels.push('\n');
        let race = RACE_TEXT[rng.random_range(0..RACE_TEXT.len())];
        writeln!(demo, "{id},\"{race}\"").unwrap();
        let score = match rng.random_range(0..10) {
            0 => "0.70".to_string(),
            1 => String::new(),
            _ => format!("{:.3}", rng.random_range(0.3..1.0)),
        };
        writeln!(rca, "{id},{score}").unwrap();
    }
    let paths = MetadataPaths {
        records: dir.join("records.csv"),
        labels: dir.join("labels.csv"),
        demographics: Some(dir.join("demographics.csv")),
        rca: Some(dir.join("rca.csv")),
    };
    fs::write(&paths.records, records).unwrap();
    fs::write(&paths.labels, labels).unwrap();
    fs::write(paths.demographics.as_ref().unwrap(), demo).unwrap();
    fs::write(paths.rca.as_ref().unwrap(), rca).unwrap();
    paths
}

/// Synthetic 8-bit "radiographs": a fixed two-component intensity mixture
/// with per-image jitter; `shift` is added to every pixel of group-1 images.
pub fn probe_images(rng: &mut ChaCha8Rng, count: usize, side: usize, shift: u16) -> Vec<(GrayImage, usize)> {
    (0..count)
        .map(|i| {
            let group = i % 2;
            let jitter: f64 = rng.random_range(-6.0..6.0);
            let dark = 70.0 + jitter;
            let bright = 160.0 + jitter;
            let img = GrayImage::from_fn(side, side, BitDepth::Eight, |_, _| {
                let centre = if rng.random_bool(0.4) { dark } else { bright };
                let v = centre + 25.0 * (rng.random::<f64>() + rng.random::<f64>() - 1.0);
                let v = v.round().clamp(1.0, 235.0) as u16;
                if group == 1 {
                    v + shift
                } else {
                    v
                }
            })
            .unwrap();
            (img, group)
        })
        .collect()
}

pub fn write_pgm(path: &Path, img: &GrayImage) {
    let bytes = cxrprep_core::image::encode(img, cxrprep_core::image::ImageFormat::Pgm, None).unwrap();
    fs::write(path, bytes).unwrap();
}
