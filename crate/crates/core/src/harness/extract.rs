use crate::error::Result;
use crate::image::GrayImage;
use crate::keypoints::{describe_all, detect_kaze, detect_sift, DescribeOptions, Descriptor, FeatureKind, Keypoint};
use crate::scalespace::{build_gaussian_scalespace, build_nonlinear_scalespace};

use super::config::RunConfig;

/// Both descriptor sets of one image, keypoints in source-image coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageFeatures {
    pub image_id: String,
    pub sift: Vec<Descriptor>,
    pub kaze: Vec<Descriptor>,
}

impl ImageFeatures {
    pub fn of_kind(&self, kind: FeatureKind) -> &[Descriptor] {
        match kind {
            FeatureKind::Sift => &self.sift,
            FeatureKind::Kaze => &self.kaze,
        }
    }

    pub fn keypoints(&self, kind: FeatureKind) -> Vec<Keypoint> {
        self.of_kind(kind).iter().map(|d| d.keypoint).collect()
    }
}

/// Keypoints of both detectors on `img` (no descriptors).
pub fn detect_both(img: &GrayImage, cfg: &RunConfig) -> Result<(Vec<Keypoint>, Vec<Keypoint>)> {
    let det = &cfg.detector;
    let g = &cfg.gaussian;
    let gss = build_gaussian_scalespace(img, g.octaves, g.sublevels, g.base_sigma)?;
    let sift = detect_sift(&gss, det.sift_contrast_threshold, det.sift_edge_ratio)?;
    let nss = build_nonlinear_scalespace(img, &cfg.diffusion)?;
    let kaze = detect_kaze(&nss, det.kaze_threshold)?;
    Ok((sift, kaze))
}

/// Detects and describes both kinds. `scale` is the factor the image was
/// resized by at load; keypoints are mapped back through it.
pub fn extract_features(image_id: &str, img: &GrayImage, scale: (f64, f64), cfg: &RunConfig) -> Result<ImageFeatures> {
    let opts = DescribeOptions { rotation_invariant: cfg.detector.rotation_invariant };
    let det = &cfg.detector;
    let g = &cfg.gaussian;

    let gss = build_gaussian_scalespace(img, g.octaves, g.sublevels, g.base_sigma)?;
    let sift_kps = detect_sift(&gss, det.sift_contrast_threshold, det.sift_edge_ratio)?;
    let mut sift = describe_all(&gss, &sift_kps, &opts)?;
    drop(gss);

    let nss = build_nonlinear_scalespace(img, &cfg.diffusion)?;
    let kaze_kps = detect_kaze(&nss, det.kaze_threshold)?;
    let mut kaze = describe_all(&nss, &kaze_kps, &opts)?;

    for d in sift.iter_mut().chain(kaze.iter_mut()) {
        d.keypoint = to_source_frame(d.keypoint, scale);
    }
    Ok(ImageFeatures { image_id: image_id.to_string(), sift, kaze })
}

/// Inverse of a resize by `scale`, using pixel-center coordinates.
pub fn to_source_frame(kp: Keypoint, scale: (f64, f64)) -> Keypoint {
    if scale == (1.0, 1.0) {
        return kp;
    }
    let (sx, sy) = scale;
    Keypoint {
        x: ((kp.x as f64 + 0.5) / sx - 0.5) as f32,
        y: ((kp.y as f64 + 0.5) / sy - 0.5) as f32,
        sigma: (kp.sigma as f64 / (0.5 * (sx + sy))) as f32,
        ..kp
    }
}
