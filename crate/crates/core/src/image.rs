//! Grayscale rasters, lossless PGM/PNG I/O, bilinear resizing and intensity
//! histograms.
//!
//! Pixels are stored as `u16` for both bit depths so every operation works on
//! a single representation; the [`BitDepth`] tag bounds the valid range.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn bits(self) -> u32 {
        match self {
            BitDepth::Eight => 8,
            BitDepth::Sixteen => 16,
        }
    }

    /// Largest representable intensity, `2^bits - 1`.
    pub fn max_value(self) -> u16 {
        match self {
            BitDepth::Eight => u8::MAX as u16,
            BitDepth::Sixteen => u16::MAX,
        }
    }

    /// Number of distinct intensities, `2^bits`.
    pub fn levels(self) -> u32 {
        1 << self.bits()
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        match bits {
            8 => Ok(BitDepth::Eight),
            16 => Ok(BitDepth::Sixteen),
            other => Err(Error::UnsupportedFormat(format!("bit depth {other}"))),
        }
    }
}

/// Raster container format, chosen from the file's magic bytes on load.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Pgm,
    Png,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Pgm => "pgm",
            ImageFormat::Png => "png",
        }
    }

    pub fn from_path(path: &Path) -> Option<Self> {
        let ext = path.extension()?.to_str()?.to_ascii_lowercase();
        match ext.as_str() {
            "pgm" => Some(ImageFormat::Pgm),
            "png" => Some(ImageFormat::Png),
            _ => None,
        }
    }
}

/// Single-channel raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    depth: BitDepth,
    pixels: Vec<u16>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, depth: BitDepth) -> Result<Self> {
        Self::from_pixels(width, height, depth, vec![0; width * height])
    }

    pub fn from_pixels(width: usize, height: usize, depth: BitDepth, pixels: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                actual: (pixels.len(), 1),
            });
        }
        let max = depth.max_value();
        if let Some(v) = pixels.iter().find(|&&v| v > max) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} exceeds {}-bit range",
                depth.bits()
            )));
        }
        Ok(GrayImage {
            width,
            height,
            depth,
            pixels,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        depth: BitDepth,
        mut f: impl FnMut(usize, usize) -> u16,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for row in 0..height {
            for col in 0..width {
                pixels.push(f(row, col));
            }
        }
        Self::from_pixels(width, height, depth, pixels)
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

    pub fn bit_depth(&self) -> BitDepth {
        self.depth
    }

    pub fn pixels(&self) -> &[u16] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u16> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.pixels[row * self.width + col]
    }

    pub fn row(&self, row: usize) -> &[u16] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    /// Linear min-max rescale to 8 bits. A constant image maps to 0.
    pub fn to_eight_bit(&self) -> GrayImage {
        if self.depth == BitDepth::Eight {
            return self.clone();
        }
        let lo = *self.pixels.iter().min().expect("non-empty image") as u64;
        let hi = *self.pixels.iter().max().expect("non-empty image") as u64;
        let span = hi - lo;
        let pixels = self
            .pixels
            .iter()
            .map(|&v| {
                if span == 0 {
                    0
                } else {
                    (((v as u64 - lo) * 510 + span) / (2 * span)) as u16
                }
            })
            .collect();
        GrayImage {
            width: self.width,
            height: self.height,
            depth: BitDepth::Eight,
            pixels,
        }
    }
}

/// Intensity histogram with `bins.len()` equal-width buckets over the full
/// bit-depth range.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histogram {
    bins: Vec<u64>,
    total: u64,
}

impl Histogram {
    pub fn from_counts(bins: Vec<u64>) -> Self {
        let total = bins.iter().sum();
        Histogram { bins, total }
    }

    pub fn bins(&self) -> &[u64] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total(&self) -> u64 {
        self.total
    }
}

/// Bucket index of intensity `value`: `floor(value * bins / 2^bits)`.
#[inline]
pub fn bin_index(value: u16, bins: usize, depth: BitDepth) -> usize {
    ((value as u64 * bins as u64) >> depth.bits()) as usize
}

fn check_bins(bins: usize, depth: BitDepth) -> Result<()> {
    if bins < 2 || bins as u64 > depth.levels() as u64 {
        return Err(Error::InvalidArgument(format!(
            "bin count {bins} must be in 2..={}",
            depth.levels()
        )));
    }
    Ok(())
}

pub fn histogram(img: &GrayImage, bins: usize) -> Result<Histogram> {
    check_bins(bins, img.depth)?;
    let mut counts = vec![0u64; bins];
    for &v in &img.pixels {
        counts[bin_index(v, bins, img.depth)] += 1;
    }
    Ok(Histogram::from_counts(counts))
}

/// Histogram restricted to pixels where `keep` returns true.
pub fn histogram_where(img: &GrayImage, bins: usize, mut keep: impl FnMut(usize, u16) -> bool) -> Result<Histogram> {
    check_bins(bins, img.depth)?;
    let mut counts = vec![0u64; bins];
    for (i, &v) in img.pixels.iter().enumerate() {
        if keep(i, v) {
            counts[bin_index(v, bins, img.depth)] += 1;
        }
    }
    Ok(Histogram::from_counts(counts))
}

/// Bilinear resize with pixel centers at half-integer coordinates and edge
/// clamping. Output values are rounded to the nearest integer.
pub fn downscale(img: &GrayImage, target_w: usize, target_h: usize) -> Result<GrayImage> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::InvalidArgument(format!(
            "target size must be positive, got {target_w}x{target_h}"
        )));
    }
    if (target_w, target_h) == img.dimensions() {
        return Ok(img.clone());
    }
    let xs = sample_positions(img.width, target_w);
    let ys = sample_positions(img.height, target_h);
    let mut pixels = Vec::with_capacity(target_w * target_h);
    for &(y0, y1, wy) in &ys {
        let r0 = img.row(y0);
        let r1 = img.row(y1);
        for &(x0, x1, wx) in &xs {
            let top = r0[x0] as f64 * (1.0 - wx) + r0[x1] as f64 * wx;
            let bottom = r1[x0] as f64 * (1.0 - wx) + r1[x1] as f64 * wx;
            let v = top * (1.0 - wy) + bottom * wy;
            pixels.push(v.round() as u16);
        }
    }
    Ok(GrayImage {
        width: target_w,
        height: target_h,
        depth: img.depth,
        pixels,
    })
}

/// For each output index, the two source neighbours and the weight of the
/// second one.
fn sample_positions(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    let last = (src - 1) as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, last);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, s - lo as f64)
        })
        .collect()
}

pub fn load_image(path: &Path) -> Result<GrayImage> {
    Ok(load_image_with_format(path)?.0)
}

pub fn load_image_with_format(path: &Path) -> Result<(GrayImage, ImageFormat)> {
    let file = File::open(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    let mut reader = BufReader::new(file);
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    decode(&bytes)
}

/// Decode an in-memory PGM or PNG.
pub fn decode(bytes: &[u8]) -> Result<(GrayImage, ImageFormat)> {
    if bytes.starts_with(b"\x89PNG\r\n\x1a\n") {
        decode_png(bytes).map(|img| (img, ImageFormat::Png))
    } else if bytes.starts_with(b"P2") || bytes.starts_with(b"P5") {
        decode_pgm(bytes).map(|img| (img, ImageFormat::Pgm))
    } else if bytes.starts_with(b"P3") || bytes.starts_with(b"P6") {
        Err(Error::UnsupportedFormat("color PNM (P3/P6)".into()))
    } else {
        Err(Error::UnsupportedFormat("not a PGM or PNG file".into()))
    }
}

fn decode_png(bytes: &[u8]) -> Result<GrayImage> {
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(|e| Error::CorruptData(e.to_string()))?;
    let info = reader.info();
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::UnsupportedFormat(format!(
            "PNG color type {:?}, expected single-channel grayscale",
            info.color_type
        )));
    }
    let depth = match info.bit_depth {
        png::BitDepth::Eight => BitDepth::Eight,
        png::BitDepth::Sixteen => BitDepth::Sixteen,
        other => return Err(Error::UnsupportedFormat(format!("PNG bit depth {other:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::CorruptData("PNG too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::CorruptData(e.to_string()))?;
    let data = &buf[..frame.buffer_size()];
    let pixels: Vec<u16> = match depth {
        BitDepth::Eight => data.iter().map(|&b| b as u16).collect(),
        BitDepth::Sixteen => data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect(),
    };
    GrayImage::from_pixels(width, height, depth, pixels).map_err(|e| Error::CorruptData(e.to_string()))
}

struct PgmHeader {
    width: usize,
    height: usize,
    maxval: u32,
    /// Offset of the first raster byte (P5) or token (P2).
    data_start: usize,
}

fn skip_ws_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize) -> Result<(u32, usize)> {
    let start = skip_ws_and_comments(bytes, pos);
    let mut end = start;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(Error::CorruptData(format!("expected integer at byte {start}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<u32>()
        .map_err(|_| Error::CorruptData(format!("integer out of range: {text}")))?;
    Ok((value, end))
}

fn parse_pgm_header(bytes: &[u8]) -> Result<PgmHeader> {
    let (width, pos) = read_uint(bytes, 2)?;
    let (height, pos) = read_uint(bytes, pos)?;
    let (maxval, pos) = read_uint(bytes, pos)?;
    if width == 0 || height == 0 {
        return Err(Error::CorruptData("zero image dimension".into()));
    }
    if maxval == 0 || maxval > u16::MAX as u32 {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval}")));
    }
    Ok(PgmHeader {
        width: width as usize,
        height: height as usize,
        maxval,
        data_start: pos,
    })
}

fn decode_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let header = parse_pgm_header(bytes)?;
    let depth = if header.maxval <= u8::MAX as u32 {
        BitDepth::Eight
    } else {
        BitDepth::Sixteen
    };
    let count = header
        .width
        .checked_mul(header.height)
        .ok_or_else(|| Error::CorruptData("PGM dimensions overflow".into()))?;
    let mut pixels = Vec::with_capacity(count);
    if bytes[1] == b'5' {
        // Exactly one whitespace byte separates maxval from the raster.
        let start = header.data_start + 1;
        let sample_bytes = if depth == BitDepth::Eight { 1 } else { 2 };
        let needed = count * sample_bytes;
        if bytes.len() < start + needed {
            return Err(Error::CorruptData(format!("PGM raster truncated: need {needed} bytes")));
        }
        let raster = &bytes[start..start + needed];
        match depth {
            BitDepth::Eight => pixels.extend(raster.iter().map(|&b| b as u16)),
            BitDepth::Sixteen => pixels.extend(raster.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]))),
        }
    } else {
        let mut pos = header.data_start;
        for _ in 0..count {
            let (v, next) = read_uint(bytes, pos)?;
            pixels.push(v as u16);
            pos = next;
        }
    }
    if let Some(v) = pixels.iter().find(|&&v| v as u32 > header.maxval) {
        return Err(Error::CorruptData(format!(
            "pixel {v} exceeds maxval {}",
            header.maxval
        )));
    }
    GrayImage::from_pixels(header.width, header.height, depth, pixels)
}

/// Encode `img`; `comment` becomes a PGM comment line or a PNG tEXt chunk.
pub fn encode(img: &GrayImage, format: ImageFormat, comment: Option<&str>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match format {
        ImageFormat::Pgm => {
            out.extend_from_slice(b"P5\n");
            if let Some(c) = comment {
                for line in c.lines() {
                    writeln!(out, "# {line}")?;
                }
            }
            writeln!(out, "{} {}\n{}", img.width, img.height, img.depth.max_value())?;
            match img.depth {
                BitDepth::Eight => out.extend(img.pixels.iter().map(|&v| v as u8)),
                BitDepth::Sixteen => {
                    for &v in &img.pixels {
                        out.extend_from_slice(&v.to_be_bytes());
                    }
                }
            }
        }
        ImageFormat::Png => {
            let mut encoder = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
            encoder.set_color(png::ColorType::Grayscale);
            encoder.set_depth(match img.depth {
                BitDepth::Eight => png::BitDepth::Eight,
                BitDepth::Sixteen => png::BitDepth::Sixteen,
            });
            if let Some(c) = comment {
                encoder
                    .add_text_chunk("Comment".to_string(), c.to_string())
                    .map_err(|e| Error::CorruptData(e.to_string()))?;
            }
            let mut writer = encoder.write_header().map_err(|e| Error::CorruptData(e.to_string()))?;
            let data: Vec<u8> = match img.depth {
                BitDepth::Eight => img.pixels.iter().map(|&v| v as u8).collect(),
                BitDepth::Sixteen => img.pixels.iter().flat_map(|v| v.to_be_bytes()).collect(),
            };
            writer
                .write_image_data(&data)
                .map_err(|e| Error::CorruptData(e.to_string()))?;
            writer.finish().map_err(|e| Error::CorruptData(e.to_string()))?;
        }
    }
    Ok(out)
}

pub fn save_image(img: &GrayImage, path: &Path, format: ImageFormat) -> Result<()> {
    let bytes = encode(img, format, None)?;
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}
