//! Browser bindings: Gaussian vs nonlinear smoothing, keypoint detection and
//! conductivity curves on a canvas image.

use siftkaze::harness::config::{DetectorConfig, GaussianConfig};
use siftkaze::harness::synth::boundary_corpus;
use siftkaze::image::{GrayImage, Plane};
use siftkaze::keypoints::{detect_kaze, detect_sift, top_responses, Keypoint};
use siftkaze::scalespace::{
    build_gaussian_scalespace, build_nonlinear_scalespace, conductivity, ConductivityKind, DiffusionParams, MIN_IMAGE_SIDE,
};
use siftkaze::{Error, Result};
use wasm_bindgen::prelude::*;

const DEMO_SUBLEVELS: usize = 4;

fn from_rgba(rgba: &[u8], width: usize, height: usize) -> Result<GrayImage> {
    if rgba.len() != width * height * 4 {
        return Err(Error::InvalidImage(format!("expected {} rgba bytes, got {}", width * height * 4, rgba.len())));
    }
    let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect();
    GrayImage::from_rgb8(width, height, &rgb)
}

fn to_rgba(p: &Plane, out: &mut Vec<u8>) {
    for &v in p.data() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        out.extend_from_slice(&[g, g, g, 255]);
    }
}

/// Octaves that keep the smallest side at or above the minimum image size.
fn octaves_for(img: &GrayImage, wanted: usize) -> usize {
    let mut side = img.width().min(img.height());
    let mut n = 1;
    while n < wanted && side / 2 >= MIN_IMAGE_SIDE {
        side /= 2;
        n += 1;
    }
    n
}

/// The `level`-th first-octave level of both scale spaces, Gaussian on the
/// left and nonlinear on the right, as one `2w x h` RGBA buffer.
pub fn smoothing_pair_impl(rgba: &[u8], width: usize, height: usize, level: usize) -> Result<Vec<u8>> {
    let img = from_rgba(rgba, width, height)?;
    let g = GaussianConfig::default();
    let gss = build_gaussian_scalespace(&img, 1, DEMO_SUBLEVELS, g.base_sigma)?;
    let params = DiffusionParams { octaves: 1, sublevels_per_octave: DEMO_SUBLEVELS, ..DiffusionParams::default() };
    let nss = build_nonlinear_scalespace(&img, &params)?;
    let pick = |levels: &[siftkaze::scalespace::Level]| levels[level.min(levels.len() - 1)].image.clone();
    let (left, right) = (pick(&gss.levels), pick(&nss.levels));
    let mut out = Vec::with_capacity(width * height * 8);
    for y in 0..height {
        for p in [&left, &right] {
            let row = Plane::new(width, 1, p.data()[y * width..(y + 1) * width].to_vec());
            to_rgba(&row, &mut out);
        }
    }
    Ok(out)
}

/// Strongest `top_percent` keypoints of one detector, flattened as
/// `x, y, sigma` triples in image pixels.
pub fn detect_impl(rgba: &[u8], width: usize, height: usize, detector: &str, top_percent: f64) -> Result<Vec<f32>> {
    let img = from_rgba(rgba, width, height)?;
    let det = DetectorConfig::default();
    let kps: Vec<Keypoint> = match detector {
        "sift" => {
            let g = GaussianConfig::default();
            let ss = build_gaussian_scalespace(&img, octaves_for(&img, g.octaves), g.sublevels, g.base_sigma)?;
            detect_sift(&ss, det.sift_contrast_threshold, det.sift_edge_ratio)?
        }
        "kaze" => {
            let d = DiffusionParams::default();
            let params = DiffusionParams { octaves: octaves_for(&img, d.octaves), ..d };
            detect_kaze(&build_nonlinear_scalespace(&img, &params)?, det.kaze_threshold)?
        }
        other => return Err(Error::InvalidParams(format!("unknown detector {other:?}"))),
    };
    if kps.is_empty() {
        return Ok(Vec::new());
    }
    Ok(top_responses(&kps, top_percent)?.iter().flat_map(|k| [k.x, k.y, k.sigma]).collect())
}

fn parse_kind(kind: &str) -> Result<ConductivityKind> {
    Ok(match kind {
        "pm_g1" => ConductivityKind::PmG1,
        "pm_g2" => ConductivityKind::PmG2,
        "weickert_g3" => ConductivityKind::WeickertG3,
        "unit" => ConductivityKind::Unit,
        other => return Err(Error::InvalidParams(format!("unknown conductivity {other:?}"))),
    })
}

/// `samples` values of g(|grad|) for |grad| evenly spaced over `[0, max_grad]`.
pub fn conductivity_curve_impl(kind: &str, k: f64, max_grad: f64, samples: usize) -> Result<Vec<f64>> {
    let kind = parse_kind(kind)?;
    let n = samples.max(2);
    (0..n).map(|i| conductivity(max_grad * i as f64 / (n - 1) as f64, k, kind)).collect()
}

/// A synthetic scene with shapes on clutter, as `size x size` RGBA.
pub fn synthetic_scene_impl(size: usize, seed: u64) -> Vec<u8> {
    let (img, _) = boundary_corpus(1, size, seed).remove(0);
    let mut out = Vec::with_capacity(size * size * 4);
    to_rgba(img.as_plane(), &mut out);
    out
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub fn smoothing_pair(rgba: &[u8], width: usize, height: usize, level: usize) -> std::result::Result<Vec<u8>, JsError> {
    smoothing_pair_impl(rgba, width, height, level).map_err(js)
}

#[wasm_bindgen]
pub fn detect(rgba: &[u8], width: usize, height: usize, detector: &str, top_percent: f64) -> std::result::Result<Vec<f32>, JsError> {
    detect_impl(rgba, width, height, detector, top_percent).map_err(js)
}

#[wasm_bindgen]
pub fn conductivity_curve(kind: &str, k: f64, max_grad: f64, samples: usize) -> std::result::Result<Vec<f64>, JsError> {
    conductivity_curve_impl(kind, k, max_grad, samples).map_err(js)
}

#[wasm_bindgen]
pub fn synthetic_scene(size: usize, seed: u64) -> Vec<u8> {
    synthetic_scene_impl(size, seed)
}
