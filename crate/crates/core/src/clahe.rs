//! Contrast limited adaptive histogram equalization.
//!
//! The image is split into a `grid_rows x grid_cols` grid of equal tiles
//! (after edge-replication padding on the right/bottom). Each tile gets a
//! clipped histogram and a CDF lookup table; output pixels blend the tables of
//! the nearest tile centres. All blending is done in exact integer arithmetic,
//! so results do not depend on evaluation order or worker count.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::{bin_index, BitDepth, GrayImage, Histogram};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClaheParams {
    pub grid_cols: usize,
    pub grid_rows: usize,
    /// Multiple of the mean per-bin count of a tile.
    pub clip_limit: f64,
    pub bins: usize,
}

impl Default for ClaheParams {
    fn default() -> Self {
        ClaheParams {
            grid_cols: 8,
            grid_rows: 8,
            clip_limit: 2.0,
            bins: 256,
        }
    }
}

impl ClaheParams {
    pub fn validate(&self, depth: BitDepth) -> Result<()> {
        if self.grid_cols == 0 || self.grid_rows == 0 {
            return Err(Error::InvalidArgument("CLAHE grid must be at least 1x1".into()));
        }
        if self.clip_limit.is_nan() || self.clip_limit <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "CLAHE clip limit must be positive, got {}",
                self.clip_limit
            )));
        }
        if self.bins < 2 || self.bins as u64 > depth.levels() as u64 {
            return Err(Error::InvalidArgument(format!(
                "CLAHE bin count {} must be in 2..={}",
                self.bins,
                depth.levels()
            )));
        }
        Ok(())
    }
}

/// Per-tile lookup table from histogram bin to output intensity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TileMapping {
    lut: Vec<u16>,
}

impl TileMapping {
    pub fn lut(&self) -> &[u16] {
        &self.lut
    }
}

/// Absolute clip threshold: `max(1, floor(clip_limit * total / bins))`, or
/// `total` when that would not clip anything.
pub fn clip_threshold(total: u64, bins: usize, clip_limit: f64) -> u64 {
    let t = (clip_limit * total as f64 / bins as f64).floor();
    if t.is_nan() || t >= total as f64 {
        total
    } else {
        (t as u64).max(1)
    }
}

/// Clip every bin at the threshold and spread the excess in one pass: each
/// bin gets `excess / bins`, and the `excess % bins` leftover counts go one
/// each to the lowest-index bins. Total mass is preserved exactly.
pub fn clip_and_redistribute(h: &Histogram, clip_limit: f64) -> Histogram {
    let bins = h.len();
    let limit = clip_threshold(h.total(), bins, clip_limit);
    let mut counts = h.bins().to_vec();
    let mut excess = 0u64;
    for c in counts.iter_mut() {
        if *c > limit {
            excess += *c - limit;
            *c = limit;
        }
    }
    if excess > 0 {
        let share = excess / bins as u64;
        let remainder = (excess % bins as u64) as usize;
        for (i, c) in counts.iter_mut().enumerate() {
            *c += share + u64::from(i < remainder);
        }
    }
    Histogram::from_counts(counts)
}

/// `lut[v] = round(cdf(v) / total * max_value)`, rounding halves up.
pub fn build_tile_mapping(h: &Histogram, depth: BitDepth) -> TileMapping {
    let total = h.total().max(1);
    let max = depth.max_value() as u64;
    let mut cdf = 0u64;
    let lut = h
        .bins()
        .iter()
        .map(|&c| {
            cdf += c;
            ((2 * cdf * max + total) / (2 * total)) as u16
        })
        .collect();
    TileMapping { lut }
}

/// Interpolation source along one axis: the two lattice indices and the
/// weight of the second as `num / den`.
#[derive(Debug, Clone, Copy)]
struct AxisWeight {
    lo: usize,
    hi: usize,
    num: u64,
}

/// Tile centres sit at `(j + 0.5) * tile - 0.5`. In doubled coordinates the
/// offset of pixel `x` from centre 0 is `2x + 1 - tile`, over a period of
/// `2 * tile`. Pixels before the first or after the last centre clamp to it.
fn axis_weights(len: usize, tile: usize, tiles: usize) -> (Vec<AxisWeight>, u64) {
    let den = 2 * tile as u64;
    let weights = (0..len)
        .map(|x| {
            let offset = 2 * x as i64 + 1 - tile as i64;
            if offset <= 0 {
                return AxisWeight { lo: 0, hi: 0, num: 0 };
            }
            let lo = (offset as u64 / den) as usize;
            if lo >= tiles - 1 {
                return AxisWeight {
                    lo: tiles - 1,
                    hi: tiles - 1,
                    num: 0,
                };
            }
            AxisWeight {
                lo,
                hi: lo + 1,
                num: offset as u64 % den,
            }
        })
        .collect();
    (weights, den)
}

pub fn apply_clahe(img: &GrayImage, p: &ClaheParams) -> Result<GrayImage> {
    p.validate(img.bit_depth())?;
    let (width, height) = img.dimensions();
    if width < p.grid_cols || height < p.grid_rows {
        return Err(Error::ImageTooSmall {
            width,
            height,
            grid_cols: p.grid_cols,
            grid_rows: p.grid_rows,
        });
    }
    let depth = img.bit_depth();
    let tile_w = width.div_ceil(p.grid_cols);
    let tile_h = height.div_ceil(p.grid_rows);
    let padded_w = tile_w * p.grid_cols;

    // Bin indices of the edge-replicated padded image, computed once.
    let bin_rows: Vec<Vec<u16>> = (0..tile_h * p.grid_rows)
        .into_par_iter()
        .map(|r| {
            let src = img.row(r.min(height - 1));
            (0..padded_w)
                .map(|c| bin_index(src[c.min(width - 1)], p.bins, depth) as u16)
                .collect()
        })
        .collect();

    let mappings: Vec<TileMapping> = (0..p.grid_rows * p.grid_cols)
        .into_par_iter()
        .map(|t| {
            let (tr, tc) = (t / p.grid_cols, t % p.grid_cols);
            let mut counts = vec![0u64; p.bins];
            for row in &bin_rows[tr * tile_h..(tr + 1) * tile_h] {
                for &b in &row[tc * tile_w..(tc + 1) * tile_w] {
                    counts[b as usize] += 1;
                }
            }
            let clipped = clip_and_redistribute(&Histogram::from_counts(counts), p.clip_limit);
            build_tile_mapping(&clipped, depth)
        })
        .collect();

    let (xw, den_x) = axis_weights(width, tile_w, p.grid_cols);
    let (yw, den_y) = axis_weights(height, tile_h, p.grid_rows);
    let den = den_x * den_y;

    let mut pixels = vec![0u16; width * height];
    pixels.par_chunks_mut(width).enumerate().for_each(|(r, out)| {
        let y = yw[r];
        let bins = &bin_rows[r];
        let top = &mappings[y.lo * p.grid_cols..(y.lo + 1) * p.grid_cols];
        let bottom = &mappings[y.hi * p.grid_cols..(y.hi + 1) * p.grid_cols];
        for (c, o) in out.iter_mut().enumerate() {
            let x = xw[c];
            let b = bins[c] as usize;
            let tl = top[x.lo].lut[b] as u64;
            let tr = top[x.hi].lut[b] as u64;
            let bl = bottom[x.lo].lut[b] as u64;
            let br = bottom[x.hi].lut[b] as u64;
            let upper = tl * (den_x - x.num) + tr * x.num;
            let lower = bl * (den_x - x.num) + br * x.num;
            let blended = upper * (den_y - y.num) + lower * y.num;
            *o = ((2 * blended + den) / (2 * den)) as u16;
        }
    });

    GrayImage::from_pixels(width, height, depth, pixels)
}
