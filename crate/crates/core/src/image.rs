//! Grayscale rasters and the handful of filters the scale spaces need.

use std::path::Path;

use crate::error::{Error, Result};

/// Real-valued raster with no range restriction (levels, derivatives, DoG).
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "plane buffer size");
        Plane { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Plane::new(width, height, vec![0.0; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Plane::new(width, height, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Pixel lookup with replicate padding.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y)
    }

    /// Bilinear interpolation with replicate padding outside the raster.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let (xi, yi) = (x0 as isize, y0 as isize);
        let a = self.get_clamped(xi, yi);
        let b = self.get_clamped(xi + 1, yi);
        let c = self.get_clamped(xi, yi + 1);
        let d = self.get_clamped(xi + 1, yi + 1);
        (a * (1.0 - fx) + b * fx) * (1.0 - fy) + (c * (1.0 - fx) + d * fx) * fy
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Plane) -> Plane {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Plane::new(self.width, self.height, data)
    }

    /// Keeps every second pixel; output is `ceil(w/2) x ceil(h/2)`.
    pub fn downsample(&self) -> Plane {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        Plane::from_fn(w, h, |x, y| self.get(2 * x, 2 * y))
    }

    /// Central-difference gradient `(dx, dy)` with zero-flux borders.
    #[inline]
    pub fn gradient_at(&self, x: usize, y: usize) -> (f64, f64) {
        let (xi, yi) = (x as isize, y as isize);
        let dx = 0.5 * (self.get_clamped(xi + 1, yi) - self.get_clamped(xi - 1, yi));
        let dy = 0.5 * (self.get_clamped(xi, yi + 1) - self.get_clamped(xi, yi - 1));
        (dx, dy)
    }

    pub fn gradient_magnitude(&self) -> Plane {
        Plane::from_fn(self.width, self.height, |x, y| {
            let (dx, dy) = self.gradient_at(x, y);
            dx.hypot(dy)
        })
    }

    /// Gradient sampled at a real position (bilinear over per-pixel gradients).
    pub fn gradient_sample(&self, x: f64, y: f64) -> (f64, f64) {
        let dx = 0.5 * (self.sample(x + 1.0, y) - self.sample(x - 1.0, y));
        let dy = 0.5 * (self.sample(x, y + 1.0) - self.sample(x, y - 1.0));
        (dx, dy)
    }
}

/// Validated grayscale input image, intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    plane: Plane,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "{width}x{height} image with {} samples",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0, 1]")));
        }
        Ok(GrayImage { plane: Plane::new(width, height, data) })
    }

    pub fn from_fn(width: usize, height: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let plane = Plane::from_fn(width, height, f);
        GrayImage::new(width, height, plane.data)
    }

    /// 8-bit luma, divided by 255.
    pub fn from_luma8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        GrayImage::new(width, height, bytes.iter().map(|&b| b as f64 / 255.0).collect())
    }

    /// 8-bit RGB, converted with 0.299 R + 0.587 G + 0.114 B.
    pub fn from_rgb8(width: usize, height: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != width * height * 3 {
            return Err(Error::InvalidImage("rgb buffer size".into()));
        }
        let data = bytes
            .chunks_exact(3)
            .map(|p| luma(p[0], p[1], p[2]))
            .collect();
        GrayImage::new(width, height, data)
    }

    /// Decodes a PNG or JPEG file, optionally shrinking so neither side exceeds `max_side`.
    pub fn open(path: &Path, max_side: Option<usize>) -> Result<Self> {
        GrayImage::open_resized(path, max_side).map(|(img, _)| img)
    }

    /// Like [`GrayImage::open`], also returning the applied `(x, y)` scale factors.
    pub fn open_resized(path: &Path, max_side: Option<usize>) -> Result<(Self, (f64, f64))> {
        let decode_err = |reason: String| Error::Decode { path: path.to_path_buf(), reason };
        let reader = image::ImageReader::open(path)?
            .with_guessed_format()
            .map_err(|e| decode_err(e.to_string()))?;
        let mut img = reader.decode().map_err(|e| decode_err(e.to_string()))?;
        let (w0, h0) = (img.width() as f64, img.height() as f64);
        if let Some(max_side) = max_side.filter(|&m| m > 0) {
            if img.width() as usize > max_side || img.height() as usize > max_side {
                img = img.resize(
                    max_side as u32,
                    max_side as u32,
                    image::imageops::FilterType::Triangle,
                );
            }
        }
        let rgb = img.to_rgb8();
        let scale = (rgb.width() as f64 / w0, rgb.height() as f64 / h0);
        let gray = GrayImage::from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())?;
        Ok((gray, scale))
    }

    /// Writes an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let bytes: Vec<u8> = self.plane.data.iter().map(|v| (v * 255.0).round() as u8).collect();
        image::save_buffer(
            path,
            &bytes,
            self.width() as u32,
            self.height() as u32,
            image::ExtendedColorType::L8,
        )
        .map_err(|e| Error::Decode { path: path.to_path_buf(), reason: e.to_string() })
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.plane.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.plane.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.plane.get(x, y)
    }

    pub fn as_plane(&self) -> &Plane {
        &self.plane
    }

    /// Multiplies every intensity by `gain`, clamping to `[0, 1]`.
    pub fn scaled(&self, gain: f64) -> GrayImage {
        let data = self.plane.data.iter().map(|v| (v * gain).clamp(0.0, 1.0)).collect();
        GrayImage { plane: Plane::new(self.width(), self.height(), data) }
    }
}

#[inline]
fn luma(r: u8, g: u8, b: u8) -> f64 {
    (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
}

/// Normalized sampled Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (5.0 * sigma).ceil().max(1.0) as isize;
    let denom = 2.0 * sigma * sigma;
    let mut taps: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / denom).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    taps
}

/// Half-sample symmetric reflection of an index into `0..n`.
#[inline]
fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let period = 2 * n;
    let m = i.rem_euclid(period);
    (if m >= n { period - 1 - m } else { m }) as usize
}

/// Separable Gaussian blur with symmetric (zero-flux) borders.
pub fn gaussian_blur(src: &Plane, sigma: f64) -> Plane {
    if sigma < 1e-3 {
        return src.clone();
    }
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let (w, h) = (src.width, src.height);

    let mut tmp = vec![0.0; w * h];
    let mut padded = vec![0.0; w + 2 * radius as usize];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for (j, p) in padded.iter_mut().enumerate() {
            *p = row[reflect(j as isize - radius, w)];
        }
        let dst = &mut tmp[y * w..(y + 1) * w];
        for (k, t) in taps.iter().enumerate() {
            for (d, v) in dst.iter_mut().zip(&padded[k..k + w]) {
                *d += t * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for (k, t) in taps.iter().enumerate() {
            let sy = reflect(y as isize + k as isize - radius, h);
            let src_row = &tmp[sy * w..(sy + 1) * w];
            let dst_row = &mut out[y * w..(y + 1) * w];
            for (d, s) in dst_row.iter_mut().zip(src_row) {
                *d += t * s;
            }
        }
    }
    Plane::new(w, h, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_is_half_sample_symmetric() {
        assert_eq!(reflect(-1, 5), 0);
        assert_eq!(reflect(-2, 5), 1);
        assert_eq!(reflect(5, 5), 4);
        assert_eq!(reflect(6, 5), 3);
        assert_eq!(reflect(2, 5), 2);
        assert_eq!(reflect(12, 3), 0);
    }

    #[test]
    fn blur_preserves_constant_and_mean() {
        let p = Plane::from_fn(20, 17, |_, _| 0.25);
        let b = gaussian_blur(&p, 2.0);
        assert!(b.data().iter().all(|v| (v - 0.25).abs() < 1e-12));

        let q = Plane::from_fn(20, 17, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0);
        let bq = gaussian_blur(&q, 1.5);
        assert!((bq.mean() - q.mean()).abs() < 1e-12);
    }

    #[test]
    fn rejects_out_of_range_intensity() {
        assert!(GrayImage::new(2, 1, vec![0.0, 1.5]).is_err());
        assert!(GrayImage::new(2, 1, vec![0.0, f64::NAN]).is_err());
        assert!(GrayImage::new(2, 2, vec![0.0]).is_err());
    }

    #[test]
    fn downsample_dims_round_up() {
        let p = Plane::zeros(17, 10);
        let d = p.downsample();
        assert_eq!((d.width(), d.height()), (9, 5));
    }

    #[test]
    fn rgb_conversion_weights() {
        let img = GrayImage::from_rgb8(1, 1, &[255, 0, 0]).unwrap();
        assert!((img.get(0, 0) - 0.299).abs() < 1e-12);
    }
}
