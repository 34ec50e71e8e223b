//! Binary lung masks: disk dilation, nearest-neighbour resampling, masking and
//! bounding-box cropping.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{self, GrayImage};

/// Resolution at which lung masks and the dilation margin are defined.
pub const DEFAULT_NATIVE_RESOLUTION: usize = 1024;
pub const DEFAULT_MARGIN_PX: usize = 60;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
    native_resolution: usize,
}

impl BinaryMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "mask dimensions must be positive, got {width}x{height}"
            )));
        }
        if bits.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: (bits.len(), 1),
            });
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
            native_resolution: DEFAULT_NATIVE_RESOLUTION,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let mut bits = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                bits.push(f(r, c));
            }
        }
        Self::from_bits(width, height, bits)
    }

    /// Nonzero pixels are lung.
    pub fn from_image(img: &GrayImage) -> Self {
        BinaryMask {
            width: img.width(),
            height: img.height(),
            bits: img.pixels().iter().map(|&v| v != 0).collect(),
            native_resolution: DEFAULT_NATIVE_RESOLUTION,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self::from_image(&image::load_image(path)?))
    }

    pub fn with_native_resolution(mut self, native_resolution: usize) -> Self {
        self.native_resolution = native_resolution;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dimensions(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn native_resolution(&self) -> usize {
        self.native_resolution
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.width + col]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Dilation radius for a margin defined at the native resolution, scaled
    /// to this mask's width and rounded to the nearest pixel.
    pub fn scaled_radius(&self, margin_px: usize) -> usize {
        let num = 2 * margin_px as u64 * self.width as u64 + self.native_resolution as u64;
        (num / (2 * self.native_resolution as u64)) as usize
    }
}

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BBox {
    pub row_min: usize,
    pub row_max: usize,
    pub col_min: usize,
    pub col_max: usize,
}

impl BBox {
    pub fn height(&self) -> usize {
        self.row_max - self.row_min + 1
    }

    pub fn width(&self) -> usize {
        self.col_max - self.col_min + 1
    }

    /// Map a box on a `from` grid to the smallest box on a `to` grid that
    /// covers the same physical area.
    pub fn rescale(&self, from: (usize, usize), to: (usize, usize)) -> BBox {
        let (fw, fh) = (from.0 as u64, from.1 as u64);
        let (tw, th) = (to.0 as u64, to.1 as u64);
        let lo = |v: usize, f: u64, t: u64| (v as u64 * t / f) as usize;
        let hi = |v: usize, f: u64, t: u64| (((v as u64 + 1) * t).div_ceil(f) - 1).min(t - 1) as usize;
        BBox {
            row_min: lo(self.row_min, fh, th),
            row_max: hi(self.row_max, fh, th),
            col_min: lo(self.col_min, fw, tw),
            col_max: hi(self.col_max, fw, tw),
        }
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "rows {}..={} cols {}..={}",
            self.row_min, self.row_max, self.col_min, self.col_max
        )
    }
}

fn isqrt(n: u64) -> u64 {
    let mut r = (n as f64).sqrt() as u64;
    while r * r > n {
        r -= 1;
    }
    while (r + 1) * (r + 1) <= n {
        r += 1;
    }
    r
}

/// Dilation by a Euclidean disk of the given radius. A pixel is set iff some
/// input pixel lies within distance `radius`.
///
/// Each row first records the horizontal distance to its nearest set pixel;
/// a pixel is then covered if, for some row offset `dy`, that distance is at
/// most the disk's half-width at `dy`.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let (w, h) = mask.dimensions();
    const FAR: u32 = u32::MAX;
    let mut row_dist = vec![FAR; w * h];
    for r in 0..h {
        let row = &mask.bits[r * w..(r + 1) * w];
        let dist = &mut row_dist[r * w..(r + 1) * w];
        let mut last: Option<usize> = None;
        for c in 0..w {
            if row[c] {
                last = Some(c);
            }
            if let Some(l) = last {
                dist[c] = (c - l) as u32;
            }
        }
        last = None;
        for c in (0..w).rev() {
            if row[c] {
                last = Some(c);
            }
            if let Some(l) = last {
                dist[c] = dist[c].min((l - c) as u32);
            }
        }
    }
    let r2 = (radius * radius) as u64;
    let half_widths: Vec<u32> = (0..=radius).map(|dy| isqrt(r2 - (dy * dy) as u64) as u32).collect();

    let mut bits = vec![false; w * h];
    for r in 0..h {
        let lo = r.saturating_sub(radius);
        let hi = (r + radius).min(h - 1);
        let out = &mut bits[r * w..(r + 1) * w];
        for src in lo..=hi {
            let hw = half_widths[src.abs_diff(r)];
            let dist = &row_dist[src * w..(src + 1) * w];
            for (o, &d) in out.iter_mut().zip(dist) {
                *o |= d <= hw;
            }
        }
    }
    BinaryMask {
        width: w,
        height: h,
        bits,
        native_resolution: mask.native_resolution,
    }
}

/// Nearest-neighbour source index: `floor((i + 0.5) * src / dst)`.
#[inline]
pub(crate) fn nearest_source(i: usize, src: usize, dst: usize) -> usize {
    (((2 * i + 1) * src) / (2 * dst)).min(src - 1)
}

pub fn resample_mask(mask: &BinaryMask, target_w: usize, target_h: usize) -> Result<BinaryMask> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size must be positive, got {target_w}x{target_h}"
        )));
    }
    if (target_w, target_h) == mask.dimensions() {
        return Ok(mask.clone());
    }
    let cols: Vec<usize> = (0..target_w).map(|c| nearest_source(c, mask.width, target_w)).collect();
    let mut bits = Vec::with_capacity(target_w * target_h);
    for r in 0..target_h {
        let sr = nearest_source(r, mask.height, target_h);
        bits.extend(cols.iter().map(|&sc| mask.get(sr, sc)));
    }
    Ok(BinaryMask {
        width: target_w,
        height: target_h,
        bits,
        native_resolution: mask.native_resolution,
    })
}

pub fn apply_mask(img: &GrayImage, mask: &BinaryMask, background: u16) -> Result<GrayImage> {
    if img.dimensions() != mask.dimensions() {
        return Err(Error::DimensionMismatch {
            expected: img.dimensions(),
            actual: mask.dimensions(),
        });
    }
    if background > img.bit_depth().max_value() {
        return Err(Error::InvalidArgument(format!(
            "background {background} exceeds the image bit depth"
        )));
    }
    let pixels = img
        .pixels()
        .iter()
        .zip(&mask.bits)
        .map(|(&v, &keep)| if keep { v } else { background })
        .collect();
    GrayImage::from_pixels(img.width(), img.height(), img.bit_depth(), pixels)
}

pub fn bounding_box(mask: &BinaryMask) -> Result<BBox> {
    let mut bbox: Option<BBox> = None;
    for r in 0..mask.height {
        let row = &mask.bits[r * mask.width..(r + 1) * mask.width];
        let Some(first) = row.iter().position(|&b| b) else {
            continue;
        };
        let last = row.iter().rposition(|&b| b).expect("row has a set pixel");
        bbox = Some(match bbox {
            None => BBox {
                row_min: r,
                row_max: r,
                col_min: first,
                col_max: last,
            },
            Some(b) => BBox {
                row_min: b.row_min,
                row_max: r,
                col_min: b.col_min.min(first),
                col_max: b.col_max.max(last),
            },
        });
    }
    bbox.ok_or(Error::EmptyMask)
}

pub fn crop(img: &GrayImage, bbox: &BBox) -> Result<GrayImage> {
    if bbox.row_min > bbox.row_max
        || bbox.col_min > bbox.col_max
        || bbox.row_max >= img.height()
        || bbox.col_max >= img.width()
    {
        return Err(Error::OutOfBounds(bbox.to_string()));
    }
    let mut pixels = Vec::with_capacity(bbox.width() * bbox.height());
    for r in bbox.row_min..=bbox.row_max {
        pixels.extend_from_slice(&img.row(r)[bbox.col_min..=bbox.col_max]);
    }
    GrayImage::from_pixels(bbox.width(), bbox.height(), img.bit_depth(), pixels)
}

/// Pad to a square canvas with `background`, content centred.
pub fn letterbox(img: &GrayImage, background: u16) -> Result<GrayImage> {
    let side = img.width().max(img.height());
    let top = (side - img.height()) / 2;
    let left = (side - img.width()) / 2;
    GrayImage::from_fn(side, side, img.bit_depth(), |r, c| {
        if r >= top && r < top + img.height() && c >= left && c < left + img.width() {
            img.get(r - top, c - left)
        } else {
            background
        }
    })
}
