//! Image, depth and camera loading, plus ground-truth normals from depth.
//!
//! Pixel `(x, y)` is centered at the continuous image coordinate
//! `(x + 0.5, y + 0.5)`. Normalized camera coordinates are
//! `u = (x - cx) / fx`, `v = (y - cy) / fy`, and a pixel with depth `z`
//! back-projects to `z * (u, v, 1)`.

use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default storage scale of 16-bit depth images (millimetres).
pub const DEFAULT_DEPTH_SCALE: f64 = 0.001;

#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("zero-dimension image"));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::invalid(format!(
                "unsupported channel count {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid(format!(
                "image data length {} != {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("intensity {bad} outside [0, 1]")));
        }
        Ok(Image2D {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds a single-channel image from a closure over pixel indices.
    pub fn from_fn_gray(
        width: usize,
        height: usize,
        f: impl Fn(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image2D::new(width, height, 1, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Luma (0.299 R + 0.587 G + 0.114 B) per pixel; identity for gray input.
    pub fn to_gray(&self) -> Vec<f64> {
        match self.channels {
            1 => self.data.clone(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("zero-dimension depth map"));
        }
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "depth data length {} != {width}x{height}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("invalid depth value {bad}")));
        }
        Ok(DepthMap {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        DepthMap::new(width, height, data)
    }

    /// All-invalid map.
    pub fn empty(width: usize, height: usize) -> Self {
        DepthMap {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) > 0.0
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d > 0.0).count()
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    /// Keeps only pixels for which `keep` returns true; others become invalid.
    pub fn masked(&self, keep: impl Fn(usize, usize) -> bool) -> DepthMap {
        let mut out = self.clone();
        for y in 0..self.height {
            for x in 0..self.width {
                if !keep(x, y) {
                    out.set(x, y, 0.0);
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl NormalMap {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid(format!(
                "normal data length {} != {width}x{height}",
                data.len()
            )));
        }
        Ok(NormalMap {
            width,
            height,
            data,
        })
    }

    /// All-invalid (zero vector) map.
    pub fn invalid(width: usize, height: usize) -> Self {
        NormalMap {
            width,
            height,
            data: vec![[0.0; 3]; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.get(x, y) != [0.0; 3]
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, n: [f64; 3]) {
        self.data[y * self.width + x] = n;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Intrinsics { fx, fy, cx, cy };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) || !self.cx.is_finite() || !self.cy.is_finite() {
            return Err(Error::invalid(format!(
                "intrinsics need fx > 0, fy > 0 and finite principal point, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Normalized camera coordinates of a continuous image point.
    #[inline]
    pub fn normalize(&self, x: f64, y: f64) -> (f64, f64) {
        ((x - self.cx) / self.fx, (y - self.cy) / self.fy)
    }

    /// Normalized coordinates of the center of pixel `(px, py)`.
    #[inline]
    pub fn pixel_ray(&self, px: usize, py: usize) -> (f64, f64) {
        self.normalize(px as f64 + 0.5, py as f64 + 0.5)
    }

    #[inline]
    pub fn project(&self, p: [f64; 3]) -> (f64, f64) {
        (
            self.fx * p[0] / p[2] + self.cx,
            self.fy * p[1] / p[2] + self.cy,
        )
    }

    #[inline]
    pub fn back_project(&self, x: f64, y: f64, depth: f64) -> [f64; 3] {
        let (u, v) = self.normalize(x, y);
        [u * depth, v * depth, depth]
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn decode(bytes: &[u8]) -> Result<DynamicImage> {
    let format = image::guess_format(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    if !matches!(format, ImageFormat::Png | ImageFormat::Pnm) {
        return Err(Error::Decode(format!(
            "{format:?} images are not supported"
        )));
    }
    let img = image::load_from_memory_with_format(bytes, format)
        .map_err(|e| Error::Decode(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(Error::Decode("zero-dimension image".into()));
    }
    Ok(img)
}

/// Loads an 8- or 16-bit PNG/PGM/PPM image, scaling intensities to `[0, 1]`.
/// Alpha channels are dropped.
pub fn load_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let img = decode(&read_bytes(path.as_ref())?)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let gray = !img.color().has_color();
    let (channels, data): (usize, Vec<f64>) = match (&img, gray) {
        (DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_), _) => (
            1,
            img.to_luma16()
                .into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 65535.0)
                .collect(),
        ),
        (DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_), _) => (
            3,
            img.to_rgb16()
                .into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 65535.0)
                .collect(),
        ),
        (_, true) => (
            1,
            img.to_luma8()
                .into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 255.0)
                .collect(),
        ),
        (_, false) => (
            3,
            img.to_rgb8()
                .into_raw()
                .into_iter()
                .map(|v| f64::from(v) / 255.0)
                .collect(),
        ),
    };
    Image2D::new(w, h, channels, data)
}

/// Writes an image as 8-bit PNG (or PGM/PPM when the extension says so).
pub fn save_image(img: &Image2D, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    let dynimg = if img.channels() == 1 {
        DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).expect("buffer length checked"),
        )
    } else {
        DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).expect("buffer length checked"),
        )
    };
    let format = if is_pnm_path(path) {
        ImageFormat::Pnm
    } else {
        ImageFormat::Png
    };
    dynimg
        .save_with_format(path, format)
        .map_err(|e| Error::Decode(e.to_string()))
}

fn is_pnm_path(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

/// Loads a 16-bit single-channel depth image; stored value `u` becomes
/// `u * depth_scale` metres and `u = 0` marks an invalid pixel.
pub fn load_depth(path: impl AsRef<Path>, depth_scale: f64) -> Result<DepthMap> {
    if !(depth_scale > 0.0 && depth_scale.is_finite()) {
        return Err(Error::invalid(format!(
            "depth scale must be > 0, got {depth_scale}"
        )));
    }
    let img = decode(&read_bytes(path.as_ref())?)?;
    let DynamicImage::ImageLuma16(buf) = img else {
        return Err(Error::Decode(format!(
            "depth images must be 16-bit single channel, got {:?}",
            img.color()
        )));
    };
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    let data = buf
        .into_raw()
        .into_iter()
        .map(|u| f64::from(u) * depth_scale)
        .collect();
    DepthMap::new(w, h, data)
}

/// Quantizes depth to 16-bit integers (`round(d / depth_scale)`, saturating)
/// and writes PNG, or binary PGM for `.pgm` paths.
pub fn save_depth(depth: &DepthMap, path: impl AsRef<Path>, depth_scale: f64) -> Result<()> {
    if !(depth_scale > 0.0 && depth_scale.is_finite()) {
        return Err(Error::invalid(format!(
            "depth scale must be > 0, got {depth_scale}"
        )));
    }
    let path = path.as_ref();
    let raw: Vec<u16> = depth
        .data()
        .iter()
        .map(|d| (d / depth_scale).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let (w, h) = (depth.width(), depth.height());
    if is_pnm_path(path) {
        let mut out = Vec::with_capacity(raw.len() * 2 + 32);
        write!(out, "P5\n{w} {h}\n65535\n").expect("write to vec");
        for v in &raw {
            out.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    } else {
        let buf =
            image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(w as u32, h as u32, raw)
                .expect("buffer length checked");
        buf.save_with_format(path, ImageFormat::Png)
            .map_err(|e| Error::Decode(e.to_string()))
    }
}

/// Writes normals as 8-bit RGB with each component mapped by `(n + 1) / 2`.
pub fn save_normals(normals: &NormalMap, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes: Vec<u8> = normals
        .data()
        .iter()
        .flat_map(|n| n.map(|c| ((c + 1.0) * 0.5 * 255.0).round().clamp(0.0, 255.0) as u8))
        .collect();
    let buf = image::RgbImage::from_raw(normals.width() as u32, normals.height() as u32, bytes)
        .expect("buffer length checked");
    buf.save_with_format(path, ImageFormat::Png)
        .map_err(|e| Error::Decode(e.to_string()))
}

/// Reads a normal image written by [`save_normals`]. Pixels that decode to
/// nearly zero length (mid-gray) become invalid; the rest are renormalized.
pub fn load_normals(path: impl AsRef<Path>) -> Result<NormalMap> {
    let img = decode(&read_bytes(path.as_ref())?)?.to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img
        .pixels()
        .map(|p| {
            let n = p.0.map(|c| f64::from(c) / 255.0 * 2.0 - 1.0);
            let len = norm3(n);
            if len < 0.5 {
                [0.0; 3]
            } else {
                n.map(|c| c / len)
            }
        })
        .collect();
    NormalMap::new(w, h, data)
}

/// Reads `{fx, fy, cx, cy}` from a JSON file.
pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<Intrinsics> {
    let k: Intrinsics = crate::json::read_file(path)?;
    k.validate()?;
    Ok(k)
}

pub(crate) fn norm3(v: [f64; 3]) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Ground-truth normals by central differences of back-projected pixel
/// centers. A pixel is valid only when it and its four neighbours all have
/// valid depth; normals are oriented with negative z.
pub fn normals_from_depth(depth: &DepthMap, k: &Intrinsics) -> Result<NormalMap> {
    if depth.valid_count() == 0 {
        return Err(Error::NoValidPixels(
            "depth map for normal estimation".into(),
        ));
    }
    let (w, h) = depth.dims();
    let mut out = NormalMap::invalid(w, h);
    let point = |x: usize, y: usize| {
        let (u, v) = k.pixel_ray(x, y);
        let z = depth.get(x, y);
        [u * z, v * z, z]
    };
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            if !(depth.is_valid(x, y)
                && depth.is_valid(x - 1, y)
                && depth.is_valid(x + 1, y)
                && depth.is_valid(x, y - 1)
                && depth.is_valid(x, y + 1))
            {
                continue;
            }
            let tx = sub3(point(x + 1, y), point(x - 1, y));
            let ty = sub3(point(x, y + 1), point(x, y - 1));
            let n = cross3(tx, ty);
            let len = norm3(n);
            if !(len > 0.0) || n[2] == 0.0 {
                continue;
            }
            let sign = if n[2] > 0.0 { -1.0 } else { 1.0 };
            out.set(x, y, n.map(|c| sign * c / len));
        }
    }
    Ok(out)
}
