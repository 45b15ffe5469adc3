//! RGB images, HSV conversion, working-region masking, objective-image
//! reconstruction, global SSIM and PNG I/O.
//!
//! HSV uses the hexcone model with `h` in degrees `[0, 360)` and `s`, `v` in
//! `[0, 1]`.

use std::fs::File;
use std::cell::Cell;
use std::io::BufReader;
use std::io::{BufRead, BufWriter, Cursor, Read, Seek, SeekFrom};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::nn::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),
    #[error("{width}x{height} image needs {expected} bytes, got {actual}")]
    BadBuffer {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("empty image list")]
    Empty,
    #[error("malformed PNG at byte {offset}: {message}")]
    Png { offset: u64, message: String },
    #[error("unsupported PNG layout: {0}")]
    Unsupported(String),
    #[error("tensor of shape {0:?} is not an H×W×3 image")]
    TensorShape(Vec<usize>),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 8-bit RGB image, row-major, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self, ImageError> {
        let expected = width * height * 3;
        if data.len() != expected || width == 0 || height == 0 {
            return Err(ImageError::BadBuffer {
                width,
                height,
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    fn same_dims(&self, other: &RgbImage) -> Result<(), ImageError> {
        if self.width != other.width || self.height != other.height {
            return Err(ImageError::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// `H×W×3` tensor with channel values scaled to `[0, 1]`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&b| b as f64 / 255.0).collect();
        Tensor::new(vec![self.height, self.width, 3], data).expect("consistent image buffer")
    }

    /// Quantize an `H×W×3` tensor in `[0, 1]` (values are clamped).
    pub fn from_tensor(t: &Tensor) -> Result<Self, ImageError> {
        match *t.shape() {
            [h, w, 3] => {
                let data = t
                    .data()
                    .iter()
                    .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect();
                Self::new(w, h, data)
            }
            _ => Err(ImageError::TensorShape(t.shape().to_vec())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hsv {
    pub h: f64,
    pub s: f64,
    pub v: f64,
}

impl Hsv {
    pub const fn new(h: f64, s: f64, v: f64) -> Self {
        Self { h, s, v }
    }
}

pub fn rgb_to_hsv(rgb: [u8; 3]) -> Hsv {
    let r = rgb[0] as f64 / 255.0;
    let g = rgb[1] as f64 / 255.0;
    let b = rgb[2] as f64 / 255.0;
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / delta + 2.0)
    } else {
        60.0 * ((r - g) / delta + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { delta / max };
    Hsv {
        h: if h >= 360.0 { h - 360.0 } else { h },
        s,
        v: max,
    }
}

pub fn hsv_to_rgb(hsv: Hsv) -> [u8; 3] {
    let Hsv { h, s, v } = hsv;
    let c = v * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r1, g1, b1) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    let q = |u: f64| ((u + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    [q(r1), q(g1), q(b1)]
}

/// Inclusive HSV box; a hue interval with `low.h > high.h` wraps through 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HsvBounds {
    pub low: Hsv,
    pub high: Hsv,
}

impl HsvBounds {
    /// Default green family: `h ∈ [90, 150]`, `s ≥ 0.3`, `v ≥ 0.3`.
    pub fn default_green() -> Self {
        Self {
            low: Hsv::new(90.0, 0.3, 0.3),
            high: Hsv::new(150.0, 1.0, 1.0),
        }
    }

    pub fn contains(&self, p: Hsv) -> bool {
        let hue_ok = if self.low.h <= self.high.h {
            p.h >= self.low.h && p.h <= self.high.h
        } else {
            p.h >= self.low.h || p.h <= self.high.h
        };
        hue_ok
            && p.s >= self.low.s
            && p.s <= self.high.s
            && p.v >= self.low.v
            && p.v <= self.high.v
    }

    pub fn contains_rgb(&self, rgb: [u8; 3]) -> bool {
        self.contains(rgb_to_hsv(rgb))
    }
}

/// Componentwise minimum and maximum HSV over the pixels selected by `keep`.
pub fn hsv_extent(image: &RgbImage, keep: impl Fn([u8; 3]) -> bool) -> Option<HsvBounds> {
    let mut lo = Hsv::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
    let mut hi = Hsv::new(f64::NEG_INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let mut any = false;
    for p in image.pixels().filter(|&p| keep(p)) {
        any = true;
        let q = rgb_to_hsv(p);
        lo = Hsv::new(lo.h.min(q.h), lo.s.min(q.s), lo.v.min(q.v));
        hi = Hsv::new(hi.h.max(q.h), hi.s.max(q.s), hi.v.max(q.v));
    }
    any.then_some(HsvBounds { low: lo, high: hi })
}

pub const MASK_KEEP: [u8; 3] = [0, 0, 0];
pub const MASK_DROP: [u8; 3] = [255, 255, 255];

/// Binary working-region mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub image: RgbImage,
    pub working_pixels: usize,
}

/// Pixels whose hue, saturation and value all exceed `color_low` become black
/// (working region); all others become HSV `(0, 0, 255)`, i.e. white.
pub fn build_mask(punch: &RgbImage, color_low: Hsv) -> Mask {
    let mut image = punch.clone();
    let mut working_pixels = 0;
    for (dst, src) in image.data.chunks_exact_mut(3).zip(punch.data.chunks_exact(3)) {
        let q = rgb_to_hsv([src[0], src[1], src[2]]);
        let inside = q.h > color_low.h && q.s > color_low.s && q.v > color_low.v;
        let out = if inside {
            working_pixels += 1;
            MASK_KEEP
        } else {
            MASK_DROP
        };
        dst.copy_from_slice(&out);
    }
    if working_pixels == 0 {
        log::warn!("mask has an empty working region; no punch pixel exceeds {color_low:?}");
    }
    Mask {
        image,
        working_pixels,
    }
}

/// Per-channel saturating sum of image and mask.
pub fn apply_mask(fld: &RgbImage, mask: &RgbImage) -> Result<RgbImage, ImageError> {
    fld.same_dims(mask)?;
    let data = fld
        .data
        .iter()
        .zip(&mask.data)
        .map(|(a, b)| a.saturating_add(*b))
        .collect();
    RgbImage::new(fld.width, fld.height, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReconstructReport {
    pub green_pixels: usize,
    pub non_green_pixels: usize,
    /// Green pixels of the starting image.
    pub initial_green_pixels: usize,
}

impl ReconstructReport {
    pub fn green_fraction(&self) -> f64 {
        self.green_pixels as f64 / (self.green_pixels + self.non_green_pixels) as f64
    }
}

/// Start from the first image and fill every non-green pixel with the first
/// green pixel at the same position in the remaining images (list order).
pub fn reconstruct_objective(
    flds: &[RgbImage],
    green: &HsvBounds,
) -> Result<(RgbImage, ReconstructReport), ImageError> {
    let first = flds.first().ok_or(ImageError::Empty)?;
    for img in &flds[1..] {
        first.same_dims(img)?;
    }
    let mut out = first.clone();
    let mut initial_green = 0;
    let mut green_pixels = 0;
    for px in 0..first.pixel_count() {
        let i = px * 3;
        let cur = [out.data[i], out.data[i + 1], out.data[i + 2]];
        if green.contains_rgb(cur) {
            initial_green += 1;
            green_pixels += 1;
            continue;
        }
        for img in &flds[1..] {
            let cand = [img.data[i], img.data[i + 1], img.data[i + 2]];
            if green.contains_rgb(cand) {
                out.data[i..i + 3].copy_from_slice(&cand);
                green_pixels += 1;
                break;
            }
        }
    }
    Ok((
        out,
        ReconstructReport {
            green_pixels,
            non_green_pixels: first.pixel_count() - green_pixels,
            initial_green_pixels: initial_green,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        let c2 = 0.03f64 * 0.03;
        Self {
            c1: 0.01 * 0.01,
            c2,
            c3: 0.5 * c2,
            alpha: 1.0,
            beta: 1.0,
            gamma: 1.0,
        }
    }
}

impl SsimParams {
    fn is_simplified(&self) -> bool {
        self.alpha == 1.0 && self.beta == 1.0 && self.gamma == 1.0 && self.c3 == 0.5 * self.c2
    }
}

/// Luminance plane `0.299 R + 0.587 G + 0.114 B`, scaled to `[0, 1]`.
pub fn luminance(image: &RgbImage) -> Vec<f64> {
    image
        .pixels()
        .map(|[r, g, b]| (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0)
        .collect()
}

/// Global SSIM of two luminance planes.
pub fn ssim_planes(x: &[f64], y: &[f64], params: &SsimParams) -> f64 {
    let n = x.len() as f64;
    let ux = x.iter().sum::<f64>() / n;
    let uy = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - ux, b - uy);
        vx += da * da;
        vy += db * db;
        cxy += da * db;
    }
    vx /= n;
    vy /= n;
    cxy /= n;
    let SsimParams {
        c1,
        c2,
        c3,
        alpha,
        beta,
        gamma,
    } = *params;
    if params.is_simplified() {
        return ((2.0 * ux * uy + c1) * (2.0 * cxy + c2))
            / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
    }
    let (sx, sy) = (vx.sqrt(), vy.sqrt());
    let l = (2.0 * ux * uy + c1) / (ux * ux + uy * uy + c1);
    let c = (2.0 * sx * sy + c2) / (vx + vy + c2);
    let s = (cxy + c3) / (sx * sy + c3);
    l.powf(alpha) * c.powf(beta) * s.powf(gamma)
}

/// Global SSIM on the luminance plane.
pub fn ssim(x: &RgbImage, y: &RgbImage, params: &SsimParams) -> Result<f64, ImageError> {
    x.same_dims(y)?;
    Ok(ssim_planes(&luminance(x), &luminance(y), params))
}

/// In-memory PNG source that remembers the furthest byte the decoder reached,
/// so failures can report an offset.
struct TrackedCursor<'a> {
    inner: Cursor<&'a [u8]>,
    furthest: &'a Cell<u64>,
}

impl TrackedCursor<'_> {
    fn note(&self) {
        self.furthest.set(self.furthest.get().max(self.inner.position()));
    }
}

impl Read for TrackedCursor<'_> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.note();
        Ok(n)
    }
}

impl BufRead for TrackedCursor<'_> {
    fn fill_buf(&mut self) -> std::io::Result<&[u8]> {
        self.inner.fill_buf()
    }

    fn consume(&mut self, amt: usize) {
        self.inner.consume(amt);
        self.note();
    }
}

impl Seek for TrackedCursor<'_> {
    fn seek(&mut self, pos: SeekFrom) -> std::io::Result<u64> {
        let p = self.inner.seek(pos)?;
        self.note();
        Ok(p)
    }
}

/// Decode an 8-bit (or expanded) PNG. Grayscale is promoted to RGB by channel
/// replication; alpha is dropped.
pub fn decode_png<R: Read>(mut reader: R) -> Result<RgbImage, ImageError> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    let furthest = Cell::new(0);
    let result = (|| {
        let source = TrackedCursor {
            inner: Cursor::new(&bytes[..]),
            furthest: &furthest,
        };
        let mut decoder = png::Decoder::new(source);
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder.read_info()?;
        let size = reader
            .output_buffer_size()
            .ok_or(png::DecodingError::LimitsExceeded)?;
        let mut buf = vec![0u8; size];
        let info = reader.next_frame(&mut buf)?;
        buf.truncate(info.buffer_size());
        Ok::<_, png::DecodingError>((info, buf))
    })();
    let (info, buf) = result.map_err(|e| ImageError::Png {
        offset: furthest.get(),
        message: e.to_string(),
    })?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(ImageError::Unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let data: Vec<u8> = match info.color_type {
        png::ColorType::Rgb => buf,
        png::ColorType::Rgba => buf.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        png::ColorType::Grayscale => buf.iter().flat_map(|&g| [g, g, g]).collect(),
        png::ColorType::GrayscaleAlpha => buf.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
        png::ColorType::Indexed => {
            return Err(ImageError::Unsupported("unexpanded palette".into()));
        }
    };
    RgbImage::new(w, h, data)
}

pub fn encode_png<W: std::io::Write>(image: &RgbImage, writer: W) -> Result<(), ImageError> {
    let mut enc = png::Encoder::new(writer, image.width as u32, image.height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(|e| ImageError::Png {
        offset: 0,
        message: e.to_string(),
    })?;
    w.write_image_data(&image.data).map_err(|e| ImageError::Png {
        offset: 0,
        message: e.to_string(),
    })?;
    w.finish().map_err(|e| ImageError::Png {
        offset: 0,
        message: e.to_string(),
    })?;
    Ok(())
}

pub fn load_png(path: impl AsRef<Path>) -> Result<RgbImage, ImageError> {
    decode_png(BufReader::new(File::open(path)?))
}

pub fn save_png(image: &RgbImage, path: impl AsRef<Path>) -> Result<(), ImageError> {
    let f = BufWriter::new(File::create(path)?);
    encode_png(image, f)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> RgbImage {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        RgbImage::new(w, h, (0..w * h * 3).map(|_| rng.random()).collect()).unwrap()
    }

    #[test]
    fn primary_colors() {
        let red = rgb_to_hsv([255, 0, 0]);
        assert_eq!((red.h, red.s, red.v), (0.0, 1.0, 1.0));
        let green = rgb_to_hsv([0, 255, 0]);
        assert_eq!((green.h, green.s, green.v), (120.0, 1.0, 1.0));
        assert_eq!(rgb_to_hsv([128, 128, 128]).s, 0.0);
    }

    #[test]
    fn hsv_round_trip_is_exact_for_every_color() {
        for r in 0..=255u8 {
            for g in 0..=255u8 {
                for b in 0..=255u8 {
                    let p = [r, g, b];
                    assert_eq!(hsv_to_rgb(rgb_to_hsv(p)), p);
                }
            }
        }
    }

    #[test]
    fn hue_wraparound_bounds() {
        let reds = HsvBounds {
            low: Hsv::new(340.0, 0.5, 0.5),
            high: Hsv::new(20.0, 1.0, 1.0),
        };
        assert!(reds.contains_rgb([255, 0, 0]));
        assert!(reds.contains_rgb([255, 0, 40]));
        assert!(!reds.contains_rgb([0, 255, 0]));
    }

    #[test]
    fn mask_uniform_cases() {
        let above = RgbImage::filled(4, 3, [200, 40, 200]);
        let low = Hsv::new(250.0, 0.5, 0.5);
        let m = build_mask(&above, low);
        assert!(m.image.pixels().all(|p| p == MASK_KEEP));
        assert_eq!(m.working_pixels, 12);
        let below = RgbImage::filled(4, 3, [60, 60, 60]);
        let m = build_mask(&below, low);
        assert!(m.image.pixels().all(|p| p == MASK_DROP));
        assert_eq!(m.working_pixels, 0);
    }

    #[test]
    fn apply_mask_cases() {
        let img = random_image(5, 4, 1);
        let black = RgbImage::filled(5, 4, MASK_KEEP);
        assert_eq!(apply_mask(&img, &black).unwrap(), img);
        let white = RgbImage::filled(5, 4, MASK_DROP);
        assert!(apply_mask(&img, &white).unwrap().pixels().all(|p| p == [255; 3]));
        let small = RgbImage::filled(2, 2, MASK_KEEP);
        assert!(apply_mask(&img, &small).is_err());
    }

    #[test]
    fn reconstruct_cases() {
        let green = HsvBounds::default_green();
        let g1 = RgbImage::filled(2, 1, [0, 255, 0]);
        let g2 = RgbImage::filled(2, 1, [20, 200, 30]);
        let (out, rep) = reconstruct_objective(&[g1.clone(), g2.clone()], &green).unwrap();
        assert_eq!(out, g1);
        assert_eq!(rep.non_green_pixels, 0);

        let mut a = RgbImage::filled(2, 1, [0, 255, 0]);
        a.set(1, 0, [255, 0, 0]);
        let (out, rep) = reconstruct_objective(&[a.clone(), g2.clone(), g1.clone()], &green).unwrap();
        assert_eq!(out.get(1, 0), [20, 200, 30]);
        assert_eq!(out.get(0, 0), [0, 255, 0]);
        assert_eq!(rep.initial_green_pixels, 1);
        assert_eq!(rep.green_pixels, 2);

        let (single, _) = reconstruct_objective(&[a.clone()], &green).unwrap();
        assert_eq!(single, a);
        assert!(reconstruct_objective(&[], &green).is_err());
    }

    #[test]
    fn ssim_constant_images() {
        let p = SsimParams::default();
        let x = RgbImage::filled(4, 4, [100, 100, 100]);
        let y = RgbImage::filled(4, 4, [30, 30, 30]);
        let a = 100.0 * (0.299 + 0.587 + 0.114) / 255.0;
        let b = 30.0 * (0.299 + 0.587 + 0.114) / 255.0;
        let expected = (2.0 * a * b + p.c1) / (a * a + b * b + p.c1);
        assert!((ssim(&x, &y, &p).unwrap() - expected).abs() < 1e-12);
        assert_eq!(ssim(&x, &x, &p).unwrap(), 1.0);
    }

    #[test]
    fn ssim_simplified_equals_product_form() {
        let x = random_image(8, 8, 4);
        let y = random_image(8, 8, 5);
        let simplified = ssim(&x, &y, &SsimParams::default()).unwrap();
        let (lx, ly) = (luminance(&x), luminance(&y));
        let p = SsimParams::default();
        // Perturb an exponent by zero in a way that disables the shortcut.
        let general = SsimParams {
            c3: p.c3 * (1.0 + 1e-15),
            ..p
        };
        let product = ssim_planes(&lx, &ly, &general);
        assert!((simplified - product).abs() < 1e-9);
    }

    #[test]
    fn png_round_trip_and_promotion() {
        let img = random_image(7, 5, 9);
        let mut buf = Vec::new();
        encode_png(&img, &mut buf).unwrap();
        assert_eq!(decode_png(&buf[..]).unwrap(), img);

        let one = RgbImage::filled(1, 1, [1, 2, 3]);
        let mut buf = Vec::new();
        encode_png(&one, &mut buf).unwrap();
        assert_eq!(decode_png(&buf[..]).unwrap(), one);

        let mut gray = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut gray, 2, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[10, 200]).unwrap();
        }
        let g = decode_png(&gray[..]).unwrap();
        assert_eq!(g.get(0, 0), [10, 10, 10]);
        assert_eq!(g.get(1, 0), [200, 200, 200]);

        let mut rgba = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut rgba, 1, 1);
            enc.set_color(png::ColorType::Rgba);
            enc.set_depth(png::BitDepth::Eight);
            enc.write_header().unwrap().write_image_data(&[9, 8, 7, 6]).unwrap();
        }
        assert_eq!(decode_png(&rgba[..]).unwrap().get(0, 0), [9, 8, 7]);
    }

    #[test]
    fn malformed_png_reports_offset() {
        let img = random_image(4, 4, 2);
        let mut buf = Vec::new();
        encode_png(&img, &mut buf).unwrap();
        buf.truncate(40);
        match decode_png(&buf[..]) {
            Err(ImageError::Png { offset, .. }) => assert!(offset <= 40),
            other => panic!("expected PNG error, got {other:?}"),
        }
        let junk = b"not a png at all";
        assert!(matches!(decode_png(&junk[..]), Err(ImageError::Png { .. })));
    }

    #[test]
    fn tensor_conversion_round_trip() {
        let img = random_image(3, 2, 8);
        assert_eq!(RgbImage::from_tensor(&img.to_tensor()).unwrap(), img);
    }

    proptest! {
        #[test]
        fn ssim_symmetric_and_reflexive(seed_a in 0u64..1000, seed_b in 0u64..1000) {
            let x = random_image(6, 6, seed_a);
            let y = random_image(6, 6, seed_b);
            let p = SsimParams::default();
            prop_assert!((ssim(&x, &y, &p).unwrap() - ssim(&y, &x, &p).unwrap()).abs() < 1e-15);
            prop_assert!((ssim(&x, &x, &p).unwrap() - 1.0).abs() < 1e-15);
        }

        #[test]
        fn apply_mask_idempotent(seed in 0u64..1000, mseed in 0u64..1000) {
            let img = random_image(5, 5, seed);
            let mut rng = ChaCha8Rng::seed_from_u64(mseed);
            let mut mask = RgbImage::filled(5, 5, MASK_KEEP);
            for y in 0..5 {
                for x in 0..5 {
                    if rng.random::<bool>() {
                        mask.set(x, y, MASK_DROP);
                    }
                }
            }
            let once = apply_mask(&img, &mask).unwrap();
            prop_assert_eq!(apply_mask(&once, &mask).unwrap(), once);
        }
    }
}
