//! Procedural test corpora.
//!
//! The boundary corpus places striped polygons on a background of scattered
//! blobs and records their exact boxes. The
//! class corpus draws one object per image whose class fixes both its
//! outline and its surface texture.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dataset::write_voc_xml;
use crate::error::Result;
use crate::image::GrayImage;
use crate::kosmetrics::{Annotation, BoundingBox, LabeledBox};

const BOUNDARY_SHAPES: [Shape; 3] = [Shape::Rectangle, Shape::Triangle, Shape::Cross];
const OBJECT_TEXTURE: f64 = 0.15;
const CLASS_CHECKER_AMP: f64 = 0.3;
const CLASS_SPECKLE_AMP: f64 = 0.6;
const SPECKLE_SIGMA: f64 = 2.5;
/// Dart-throwing budget: one attempt per this much `rx * ry`, times four.
const SPECKLE_AREA: f64 = 10.0;
/// Minimum dot distance in units of the dot sigma.
const SPECKLE_SPACING: f64 = 3.5;
const BG_BLOB_SIGMA: std::ops::Range<f64> = 2.5..5.0;
const BG_BLOB_ASPECT: std::ops::Range<f64> = 1.0..1.3;
const BOUNDARY_CLUTTER: Clutter = Clutter { pixels_per_blob: 300, amplitude: 0.3..0.5 };
const CLASS_CLUTTER: Clutter = Clutter { pixels_per_blob: 600, amplitude: 0.05..0.15 };
const OBJECT_CONTRAST: std::ops::Range<f64> = 0.35..0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    Rectangle,
    Ellipse,
    Triangle,
    Cross,
    Ring,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Rectangle, Shape::Ellipse, Shape::Triangle, Shape::Cross, Shape::Ring];

    pub fn name(self) -> &'static str {
        match self {
            Shape::Rectangle => "rectangle",
            Shape::Ellipse => "ellipse",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
            Shape::Ring => "ring",
        }
    }

    /// Whether the normalized point `(u, v)` in `[-1, 1]^2` lies inside the
    /// shape inscribed in that square.
    fn contains(self, u: f64, v: f64) -> bool {
        if u.abs() > 1.0 || v.abs() > 1.0 {
            return false;
        }
        match self {
            Shape::Rectangle => true,
            Shape::Ellipse => u * u + v * v <= 1.0,
            // apex at the top, base along the bottom edge
            Shape::Triangle => u.abs() <= (v + 1.0) / 2.0,
            Shape::Cross => u.abs() <= 0.34 || v.abs() <= 0.34,
            Shape::Ring => {
                let r2 = u * u + v * v;
                (0.3..=1.0).contains(&r2)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Texture {
    /// Fine stripes along a random direction.
    Stripes,
    /// Scattered dots.
    Speckle,
    /// Product of two perpendicular waves.
    Checker,
}

#[derive(Clone, Copy, Debug)]
struct Placed {
    shape: Shape,
    texture: Texture,
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    fill: f64,
    angle: f64,
    period: f64,
    /// Peak amplitude of the surface texture.
    texture_amp: f64,
}

impl Placed {
    fn bbox(&self) -> BoundingBox {
        BoundingBox { xmin: self.cx - self.rx, ymin: self.cy - self.ry, xmax: self.cx + self.rx, ymax: self.cy + self.ry }
    }

    fn covers(&self, x: f64, y: f64) -> bool {
        self.shape.contains((x - self.cx) / self.rx, (y - self.cy) / self.ry)
    }
}

/// Background of the given mean: scattered, slightly elongated blobs plus grain.
/// Density and strength of background blobs.
struct Clutter {
    pixels_per_blob: usize,
    amplitude: std::ops::Range<f64>,
}

fn background(w: usize, h: usize, mean: f64, clutter: &Clutter, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut img = vec![mean; w * h];
    let n_blobs = (w * h) / clutter.pixels_per_blob;
    for _ in 0..n_blobs {
        let (cx, cy) = (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64));
        let long = rng.random_range(BG_BLOB_SIGMA);
        let short = long / rng.random_range(BG_BLOB_ASPECT);
        let angle = rng.random_range(0.0..std::f64::consts::PI);
        let a = rng.random_range(clutter.amplitude.clone()) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        splat(&mut img, w, h, (cx, cy), (long, short, angle), a);
    }
    let grain = Normal::new(0.0, 0.008).unwrap();
    img.iter_mut().for_each(|v| *v += grain.sample(rng));
    img
}

/// Adds an oriented Gaussian with standard deviations `(long, short)`.
fn splat(img: &mut [f64], w: usize, h: usize, (cx, cy): (f64, f64), (long, short, angle): (f64, f64, f64), a: f64) {
    let r = (3.0 * long).ceil() as isize;
    let (c, s) = (angle.cos(), angle.sin());
    for y in (cy as isize - r).max(0)..(cy as isize + r + 1).min(h as isize) {
        for x in (cx as isize - r).max(0)..(cx as isize + r + 1).min(w as isize) {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let (u, v) = (dx * c + dy * s, -dx * s + dy * c);
            img[y as usize * w + x as usize] += a * (-0.5 * (u * u / (long * long) + v * v / (short * short))).exp();
        }
    }
}

/// Renders `objects` over `img` with 4x4 supersampled coverage.
fn draw(img: &mut [f64], w: usize, h: usize, objects: &[Placed], rng: &mut ChaCha8Rng) {
    const SS: usize = 4;
    for o in objects {
        let b = o.bbox();
        let (dx, dy) = (o.angle.cos(), o.angle.sin());
        let speckle: Vec<(f64, f64)> = match o.texture {
            Texture::Speckle => {
                // dart throwing keeps dots apart so each stays a separate blob
                let mut dots: Vec<(f64, f64)> = Vec::new();
                for _ in 0..((o.rx * o.ry) / SPECKLE_AREA) as usize * 4 {
                    let p = (rng.random_range(b.xmin..b.xmax), rng.random_range(b.ymin..b.ymax));
                    if dots.iter().all(|d| (d.0 - p.0).hypot(d.1 - p.1) >= SPECKLE_SPACING * SPECKLE_SIGMA) {
                        dots.push(p);
                    }
                }
                dots
            }
            _ => Vec::new(),
        };
        // mean dot coverage, subtracted so the fill level stays put
        let mean_dot = speckle.len() as f64 * std::f64::consts::PI * 2.0 * SPECKLE_SIGMA * SPECKLE_SIGMA / ((b.xmax - b.xmin) * (b.ymax - b.ymin)).max(1.0);
        let x0 = (b.xmin - 1.0).floor().max(0.0) as usize;
        let y0 = (b.ymin - 1.0).floor().max(0.0) as usize;
        let x1 = ((b.xmax + 1.0).ceil() as usize).min(w - 1);
        let y1 = ((b.ymax + 1.0).ceil() as usize).min(h - 1);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let mut cov = 0usize;
                for sy in 0..SS {
                    for sx in 0..SS {
                        let px = x as f64 - 0.5 + (sx as f64 + 0.5) / SS as f64;
                        let py = y as f64 - 0.5 + (sy as f64 + 0.5) / SS as f64;
                        cov += o.covers(px, py) as usize;
                    }
                }
                if cov == 0 {
                    continue;
                }
                let (fx, fy) = (x as f64, y as f64);
                let tex = match o.texture {
                    Texture::Stripes => o.texture_amp * ((fx * dx + fy * dy) * std::f64::consts::TAU / o.period).sin(),
                    Texture::Checker => {
                        let (u, v) = (fx * dx + fy * dy, -fx * dy + fy * dx);
                        let k = std::f64::consts::TAU / o.period;
                        o.texture_amp * (u * k).sin() * (v * k).sin()
                    }
                    Texture::Speckle => {
                        let s2 = 2.0 * SPECKLE_SIGMA * SPECKLE_SIGMA;
                        let dots: f64 = speckle.iter().map(|(sx, sy)| (-((fx - sx).powi(2) + (fy - sy).powi(2)) / s2).exp()).sum();
                        o.texture_amp * (dots - mean_dot)
                    }
                };
                let a = cov as f64 / (SS * SS) as f64;
                let i = y * w + x;
                img[i] = (1.0 - a) * img[i] + a * (o.fill + tex);
            }
        }
    }
}

fn finish(w: usize, h: usize, data: Vec<f64>) -> GrayImage {
    // 8-bit quantization, as if the image had been stored
    let q = data.into_iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    GrayImage::new(w, h, q).expect("clamped data is valid")
}

fn boxes_overlap(a: &BoundingBox, b: &BoundingBox, gap: f64) -> bool {
    a.xmin - gap < b.xmax && b.xmin - gap < a.xmax && a.ymin - gap < b.ymax && b.ymin - gap < a.ymax
}

/// One boundary-corpus image of `size` x `size` with 1 to 3 objects.
pub fn boundary_image(size: usize, rng: &mut ChaCha8Rng) -> (GrayImage, Vec<LabeledBox>) {
    let bg_mean = rng.random_range(0.4..0.6);
    let mut img = background(size, size, bg_mean, &BOUNDARY_CLUTTER, rng);
    let want = rng.random_range(1..=3);
    let mut objects: Vec<Placed> = Vec::new();
    let s = size as f64;
    for _ in 0..50 {
        if objects.len() == want {
            break;
        }
        let (rx, ry) = (rng.random_range(0.1..0.22) * s, rng.random_range(0.1..0.22) * s);
        let margin = 0.06 * s;
        let cx = rng.random_range(margin + rx..s - margin - rx);
        let cy = rng.random_range(margin + ry..s - margin - ry);
        let shape = BOUNDARY_SHAPES[rng.random_range(0..BOUNDARY_SHAPES.len())];
        let texture = Texture::Stripes;
        let contrast = rng.random_range(OBJECT_CONTRAST) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let p = Placed {
            shape,
            texture,
            cx,
            cy,
            rx,
            ry,
            fill: bg_mean + contrast,
            angle: rng.random_range(0.0..std::f64::consts::PI),
            period: rng.random_range(5.0..9.0),
            texture_amp: OBJECT_TEXTURE,
        };
        if objects.iter().all(|o| !boxes_overlap(&o.bbox(), &p.bbox(), 4.0)) {
            objects.push(p);
        }
    }
    draw(&mut img, size, size, &objects, rng);
    let boxes = objects.iter().map(|o| LabeledBox { label: o.shape.name().into(), bbox: o.bbox() }).collect();
    (finish(size, size, img), boxes)
}

/// `n` annotated images, deterministic in `seed`.
pub fn boundary_corpus(n: usize, size: usize, seed: u64) -> Vec<(GrayImage, Annotation)> {
    (0..n)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let (img, boxes) = boundary_image(size, &mut rng);
            (img, Annotation { image_id: format!("img_{i:04}.png"), boxes })
        })
        .collect()
}

/// Writes [`boundary_corpus`] as PNG plus VOC-style XML pairs.
pub fn write_boundary_corpus(dir: &Path, n: usize, size: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (img, ann) in boundary_corpus(n, size, seed) {
        img.save_png(&dir.join(&ann.image_id))?;
        let xml = write_voc_xml(&ann, &ann.image_id, size, size);
        std::fs::write(dir.join(&ann.image_id).with_extension("xml"), xml)?;
    }
    Ok(())
}

/// Class `c` pairs shape `c % 5` with texture `c / 5 % 2`; supports up to 10 classes.
pub fn class_spec(class: usize) -> (Shape, Texture) {
    let tex = if (class / Shape::ALL.len()) % 2 == 0 { Texture::Checker } else { Texture::Speckle };
    (Shape::ALL[class % Shape::ALL.len()], tex)
}

/// One image of `class`: a single centered-ish object on a textured background.
pub fn class_image(class: usize, size: usize, rng: &mut ChaCha8Rng) -> GrayImage {
    let (shape, texture) = class_spec(class);
    let bg_mean = rng.random_range(0.3..0.7);
    let mut img = background(size, size, bg_mean, &CLASS_CLUTTER, rng);
    let s = size as f64;
    let r = rng.random_range(0.22..0.34) * s;
    let aspect: f64 = rng.random_range(0.8..1.25);
    let (rx, ry) = (r * aspect.sqrt(), r / aspect.sqrt());
    let cx = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    let cy = s / 2.0 + rng.random_range(-0.08..0.08) * s;
    // object and dots head toward the middle of the range so neither clips
    let toward_mid = if bg_mean > 0.5 { -1.0 } else { 1.0 };
    let fill = bg_mean + toward_mid * rng.random_range(0.25..0.4);
    let p = Placed {
        shape,
        texture,
        cx,
        cy,
        rx,
        ry,
        fill,
        angle: rng.random_range(0.0..std::f64::consts::PI),
        period: rng.random_range(10.0..14.0),
        texture_amp: match texture {
            Texture::Speckle => if fill > 0.5 { -CLASS_SPECKLE_AMP } else { CLASS_SPECKLE_AMP },
            _ => CLASS_CHECKER_AMP,
        },
    };
    draw(&mut img, size, size, &[p], rng);
    finish(size, size, img)
}

/// `class_XX/img_YYY.png` folders for `n_classes` classes.
pub fn write_class_corpus(dir: &Path, n_classes: usize, per_class: usize, size: usize, seed: u64) -> Result<()> {
    for c in 0..n_classes {
        let sub = dir.join(format!("class_{c:02}"));
        std::fs::create_dir_all(&sub)?;
        for i in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((c as u64) << 32) | i as u64);
            class_image(c, size, &mut rng).save_png(&sub.join(format!("img_{i:03}.png")))?;
        }
    }
    Ok(())
}
