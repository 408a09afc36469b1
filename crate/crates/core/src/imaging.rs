//! Raster primitives shared by detection, data generation and recognition.
//!
//! All rasters follow the ink-high convention (1.0 = ink, 0.0 = background).
//! PGM files on disk use the conventional dark-on-light polarity and are
//! inverted on load and save.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Row-major grayscale raster with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, fill: f64) -> Self {
        Self {
            width,
            height,
            data: vec![fill.clamp(0.0, 1.0); width * height],
        }
    }

    /// Builds an image from raw data. Values are validated to lie in `[0, 1]`.
    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {}x{} image",
                data.len(),
                width,
                height
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidArgument(format!(
                "pixel value {v} outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y).clamp(0.0, 1.0));
            }
        }
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn same_dims(&self, other: &GrayImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Sum of intensities.
    pub fn ink(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Reads a binary PGM (P5, maxval 255), inverting polarity.
    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode_pgm(&bytes).map_err(|msg| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            msg,
        })
    }

    pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<Self, String> {
        let mut pos = 0usize;
        let mut fields = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            while pos < bytes.len() {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else if bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                } else {
                    break;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err("truncated PGM header".into());
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        if fields[0] != "P5" {
            return Err(format!("unsupported PGM magic {:?}", fields[0]));
        }
        let parse = |s: &str, what: &str| {
            s.parse::<usize>()
                .map_err(|_| format!("bad PGM {what}: {s:?}"))
        };
        let width = parse(&fields[1], "width")?;
        let height = parse(&fields[2], "height")?;
        let maxval = parse(&fields[3], "maxval")?;
        if maxval != 255 {
            return Err(format!("unsupported PGM maxval {maxval}"));
        }
        // exactly one whitespace byte separates header from raster
        pos += 1;
        let raster = bytes
            .get(pos..pos + width * height)
            .ok_or_else(|| "truncated PGM raster".to_string())?;
        let data = raster
            .iter()
            .map(|&b| f64::from(255 - b) / 255.0)
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn encode_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(
            self.data
                .iter()
                .map(|&v| 255 - (v.clamp(0.0, 1.0) * 255.0).round() as u8),
        );
        out
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.encode_pgm())
            .map_err(|e| Error::io(path, e))
    }
}

/// Row-major bit raster (0 = background, 1 = ink).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl BinaryImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut img = Self::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.data[y * width + x] = u8::from(f(x, y));
            }
        }
        img
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ink: bool) {
        self.data[y * self.width + x] = u8::from(ink);
    }

    pub fn count_ink(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    /// True when every ink pixel of `self` is also ink in `other`.
    pub fn is_subset_of(&self, other: &BinaryImage) -> bool {
        self.data
            .iter()
            .zip(&other.data)
            .all(|(&a, &b)| a == 0 || b != 0)
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&b| f64::from(b)).collect(),
        }
    }
}

/// Histogram bin of an intensity; `v >= k/255` iff `bin(v) >= k`.
#[inline]
fn intensity_bin(v: f64) -> usize {
    ((v * 255.0).floor() as usize).min(255)
}

/// Otsu threshold over 256 uniform bins; ties go to the lowest bin.
///
/// The returned value `k/255` splits pixels into bins `< k` and `>= k`.
pub fn otsu_threshold(img: &GrayImage) -> Result<f64> {
    if img.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut hist = [0u64; 256];
    for &v in img.data() {
        hist[intensity_bin(v)] += 1;
    }
    let total_n: u64 = hist.iter().sum();
    let total_s: u64 = hist.iter().enumerate().map(|(b, &c)| b as u64 * c).sum();

    let mut best_k = 1usize;
    let mut best_var = -1.0f64;
    let (mut n0, mut s0) = (0u64, 0u64);
    for k in 1..256 {
        n0 += hist[k - 1];
        s0 += (k as u64 - 1) * hist[k - 1];
        let n1 = total_n - n0;
        let s1 = total_s - s0;
        let var = if n0 == 0 || n1 == 0 {
            0.0
        } else {
            // proportional to w0 * w1 * (mu0 - mu1)^2
            let diff = n0 as f64 * s1 as f64 - n1 as f64 * s0 as f64;
            diff * diff / (n0 as f64 * n1 as f64)
        };
        if var > best_var {
            best_var = var;
            best_k = k;
        }
    }
    Ok(best_k as f64 / 255.0)
}

pub fn binarize(img: &GrayImage, threshold: f64) -> BinaryImage {
    BinaryImage {
        width: img.width,
        height: img.height,
        data: img.data.iter().map(|&v| u8::from(v >= threshold)).collect(),
    }
}

/// Dilation with a square structuring element of side `2 * radius + 1`.
///
/// Separable: a horizontal pass followed by a vertical pass.
pub fn dilate(img: &BinaryImage, radius: usize) -> BinaryImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = (img.width, img.height);
    let mut horiz = BinaryImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            let hit = (lo..=hi).any(|xx| img.get(xx, y));
            horiz.set(x, y, hit);
        }
    }
    let mut out = BinaryImage::new(w, h);
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            let hit = (lo..=hi).any(|yy| horiz.get(x, yy));
            out.set(x, y, hit);
        }
    }
    out
}

/// Flips exactly `round(density * N)` distinct pixels to 0.0 or 1.0.
pub fn salt_pepper(img: &GrayImage, density: f64, seed: u64) -> GrayImage {
    let density = density.clamp(0.0, 1.0);
    let n = img.data.len();
    let flips = (density * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut out = img.clone();
    // partial Fisher-Yates
    for i in 0..flips.min(n) {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
        let v = if rng.gen_bool(0.5) { 1.0 } else { 0.0 };
        out.data[idx[i]] = v;
    }
    out
}

/// Rotates about the image center by `angle` degrees (positive turns the
/// content counterclockwise as displayed). Output keeps the input size;
/// samples falling outside take `fill`.
pub fn rotate(img: &GrayImage, angle: f64, fill: f64) -> GrayImage {
    let mut a = angle % 360.0;
    if a > 180.0 {
        a -= 360.0;
    } else if a <= -180.0 {
        a += 360.0;
    }
    if a == 0.0 {
        return img.clone();
    }
    let fill = fill.clamp(0.0, 1.0);
    let (w, h) = (img.width, img.height);
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = a.to_radians().sin_cos();
    let pixel = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            fill
        } else {
            img.data[y as usize * w + x as usize]
        }
    };
    let mut out = GrayImage::new(w, h, 0.0);
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 + 0.5 - cx;
            let dy = y as f64 + 0.5 - cy;
            // inverse map; y axis points down
            let sx = cos * dx - sin * dy + cx - 0.5;
            let sy = sin * dx + cos * dy + cy - 0.5;
            let x0 = sx.floor();
            let y0 = sy.floor();
            let fx = sx - x0;
            let fy = sy - y0;
            let (xi, yi) = (x0 as isize, y0 as isize);
            let v = (1.0 - fy) * ((1.0 - fx) * pixel(xi, yi) + fx * pixel(xi + 1, yi))
                + fy * ((1.0 - fx) * pixel(xi, yi + 1) + fx * pixel(xi + 1, yi + 1));
            out.data[y * w + x] = v.clamp(0.0, 1.0);
        }
    }
    out
}

/// Concatenates images right-to-left: the first image ends up rightmost.
pub fn hconcat_rtl(images: &[GrayImage], spacing: usize, fill: f64) -> Result<GrayImage> {
    let first = images.first().ok_or(Error::EmptyInput)?;
    let height = first.height;
    if let Some(bad) = images.iter().find(|im| im.height != height) {
        return Err(Error::HeightMismatch {
            expected: height,
            found: bad.height,
        });
    }
    let width: usize =
        images.iter().map(|im| im.width).sum::<usize>() + spacing * (images.len() - 1);
    let mut out = GrayImage::new(width, height, fill);
    let mut x_off = width;
    for im in images {
        x_off -= im.width;
        for y in 0..height {
            let dst = y * width + x_off;
            out.data[dst..dst + im.width]
                .copy_from_slice(&im.data[y * im.width..(y + 1) * im.width]);
        }
        x_off = x_off.saturating_sub(spacing);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Default for Connectivity {
    fn default() -> Self {
        Connectivity::Eight
    }
}

/// Axis-aligned inclusive pixel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub min_x: usize,
    pub min_y: usize,
    pub max_x: usize,
    pub max_y: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComponentSet {
    pub width: usize,
    pub height: usize,
    /// Per-pixel component id, 0 = background.
    pub labels: Vec<u32>,
    pub count: usize,
    /// Indexed by `id - 1`.
    pub boxes: Vec<PixelBox>,
    /// Indexed by `id - 1`.
    pub areas: Vec<usize>,
}

impl ComponentSet {
    #[inline]
    pub fn label(&self, x: usize, y: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    /// Mask of a single component.
    pub fn mask(&self, id: u32) -> BinaryImage {
        BinaryImage::from_fn(self.width, self.height, |x, y| self.label(x, y) == id)
    }
}

fn find(parent: &mut [u32], mut x: u32) -> u32 {
    while parent[x as usize] != x {
        parent[x as usize] = parent[parent[x as usize] as usize];
        x = parent[x as usize];
    }
    x
}

/// Two-pass labeling with union-find; ids follow first-encounter scan order.
pub fn connected_components(img: &BinaryImage, connectivity: Connectivity) -> ComponentSet {
    let (w, h) = (img.width, img.height);
    let mut provisional = vec![0u32; w * h];
    let mut parent: Vec<u32> = vec![0];
    for y in 0..h {
        for x in 0..w {
            if !img.get(x, y) {
                continue;
            }
            let mut neighbours = [0u32; 4];
            let mut k = 0;
            if x > 0 {
                neighbours[k] = provisional[y * w + x - 1];
                k += 1;
            }
            if y > 0 {
                neighbours[k] = provisional[(y - 1) * w + x];
                k += 1;
                if connectivity == Connectivity::Eight {
                    if x > 0 {
                        neighbours[k] = provisional[(y - 1) * w + x - 1];
                        k += 1;
                    }
                    if x + 1 < w {
                        neighbours[k] = provisional[(y - 1) * w + x + 1];
                        k += 1;
                    }
                }
            }
            let mut label = 0u32;
            for &n in neighbours[..k].iter().filter(|&&n| n != 0) {
                let root = find(&mut parent, n);
                if label == 0 {
                    label = root;
                } else if root != label {
                    let (lo, hi) = (label.min(root), label.max(root));
                    parent[hi as usize] = lo;
                    label = lo;
                }
            }
            if label == 0 {
                label = parent.len() as u32;
                parent.push(label);
            }
            provisional[y * w + x] = label;
        }
    }

    let mut remap = vec![0u32; parent.len()];
    let mut labels = vec![0u32; w * h];
    let mut boxes: Vec<PixelBox> = Vec::new();
    let mut areas: Vec<usize> = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let p = provisional[y * w + x];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p) as usize;
            if remap[root] == 0 {
                boxes.push(PixelBox {
                    min_x: x,
                    min_y: y,
                    max_x: x,
                    max_y: y,
                });
                areas.push(0);
                remap[root] = boxes.len() as u32;
            }
            let id = remap[root];
            labels[y * w + x] = id;
            let b = &mut boxes[id as usize - 1];
            b.min_x = b.min_x.min(x);
            b.max_x = b.max_x.max(x);
            b.min_y = b.min_y.min(y);
            b.max_y = b.max_y.max(y);
            areas[id as usize - 1] += 1;
        }
    }
    ComponentSet {
        width: w,
        height: h,
        labels,
        count: boxes.len(),
        boxes,
        areas,
    }
}
