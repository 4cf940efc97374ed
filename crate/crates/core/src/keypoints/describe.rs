use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Plane;
use crate::scalespace::{Level, ScaleKind, ScaleSpace};

use super::{Descriptor, FeatureKind, Keypoint};

pub const SIFT_DESCRIPTOR_LEN: usize = 128;
pub const KAZE_DESCRIPTOR_LEN: usize = 64;

const SIFT_CLIP: f64 = 0.2;
const ORIENTATION_BINS: usize = 36;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescribeOptions {
    /// Rotate the sampling grid to the dominant gradient orientation.
    pub rotation_invariant: bool,
}

/// Upright descriptor for `kp`.
pub fn describe(ss: &ScaleSpace, kp: &Keypoint) -> Result<Descriptor> {
    describe_with(ss, kp, &DescribeOptions::default())
}

pub fn describe_with(ss: &ScaleSpace, kp: &Keypoint, opts: &DescribeOptions) -> Result<Descriptor> {
    let expected = match kp.kind {
        FeatureKind::Sift => ScaleKind::Gaussian,
        FeatureKind::Kaze => ScaleKind::Nonlinear,
    };
    if ss.kind != expected {
        return Err(Error::KindMismatch("scale space kind"));
    }
    let inside = kp.x.is_finite()
        && kp.y.is_finite()
        && kp.x >= 0.0
        && kp.y >= 0.0
        && (kp.x as f64) < ss.width as f64
        && (kp.y as f64) < ss.height as f64;
    if !inside || !(kp.sigma > 0.0) {
        return Err(Error::OutOfBounds { x: kp.x, y: kp.y, width: ss.width, height: ss.height });
    }
    let values = match kp.kind {
        FeatureKind::Sift => sift_descriptor(ss, kp, opts),
        FeatureKind::Kaze => kaze_descriptor(ss, kp, opts),
    };
    Ok(Descriptor { keypoint: *kp, values })
}

/// Describes every keypoint; output order follows input order.
pub fn describe_all(ss: &ScaleSpace, kps: &[Keypoint], opts: &DescribeOptions) -> Result<Vec<Descriptor>> {
    kps.par_iter().map(|kp| describe_with(ss, kp, opts)).collect()
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        v.iter_mut().for_each(|x| *x = 0.0);
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Level of octave `o` closest to `sigma`, plus the octave index.
fn sift_level<'a>(ss: &'a ScaleSpace, sigma: f64) -> (&'a Level, usize) {
    let rel = (sigma / ss.base_sigma).log2().max(0.0);
    let octave = (rel.floor() as usize).min(ss.octaves - 1);
    let sub = ((rel - octave as f64) * ss.sublevels as f64).round().clamp(0.0, ss.sublevels as f64) as usize;
    (&ss.levels[octave * (ss.sublevels + 1) + sub], octave)
}

fn sift_descriptor(ss: &ScaleSpace, kp: &Keypoint, opts: &DescribeOptions) -> Vec<f32> {
    let (level, octave) = sift_level(ss, kp.sigma as f64);
    let scale = 2f64.powi(octave as i32);
    let (cx, cy) = (kp.x as f64 / scale, kp.y as f64 / scale);
    let sigma = kp.sigma as f64 / scale;
    let img = &level.image;
    let theta = if opts.rotation_invariant { dominant_orientation(img, cx, cy, sigma) } else { 0.0 };
    let (sin, cos) = theta.sin_cos();

    // 16x16 samples, 4 per cell side, cell width 3 sigma
    let spacing = 0.75 * sigma;
    let weight_sigma = 8.0 * spacing;
    let mut hist = [0.0f64; SIFT_DESCRIPTOR_LEN];
    for j in 0..16 {
        for i in 0..16 {
            let u = (i as f64 + 0.5 - 8.0) * spacing;
            let v = (j as f64 + 0.5 - 8.0) * spacing;
            let px = cx + cos * u - sin * v;
            let py = cy + sin * u + cos * v;
            let (gx, gy) = img.gradient_sample(px, py);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let weight = (-(u * u + v * v) / (2.0 * weight_sigma * weight_sigma)).exp();
            let angle = (gy.atan2(gx) - theta).rem_euclid(2.0 * PI);
            let ob = angle / (2.0 * PI) * 8.0;
            let cu = (i as f64 + 0.5) / 4.0 - 0.5;
            let cv = (j as f64 + 0.5) / 4.0 - 0.5;
            trilinear(&mut hist, cu, cv, ob, mag * weight);
        }
    }
    let mut values = hist.to_vec();
    if normalize(&mut values) {
        values.iter_mut().for_each(|x| *x = x.min(SIFT_CLIP));
        normalize(&mut values);
    }
    values.into_iter().map(|x| x as f32).collect()
}

fn trilinear(hist: &mut [f64; SIFT_DESCRIPTOR_LEN], cu: f64, cv: f64, ob: f64, amount: f64) {
    let (u0, v0, o0) = (cu.floor(), cv.floor(), ob.floor());
    let (fu, fv, fo) = (cu - u0, cv - v0, ob - o0);
    for (dv, wv) in [(0, 1.0 - fv), (1, fv)] {
        let cell_v = v0 as isize + dv;
        if !(0..4).contains(&cell_v) {
            continue;
        }
        for (du, wu) in [(0, 1.0 - fu), (1, fu)] {
            let cell_u = u0 as isize + du;
            if !(0..4).contains(&cell_u) {
                continue;
            }
            for (dor, wo) in [(0, 1.0 - fo), (1, fo)] {
                let bin = (o0 as usize + dor) % 8;
                hist[((cell_v * 4 + cell_u) as usize) * 8 + bin] += amount * wv * wu * wo;
            }
        }
    }
}

fn kaze_descriptor(ss: &ScaleSpace, kp: &Keypoint, opts: &DescribeOptions) -> Vec<f32> {
    let sigma = kp.sigma as f64;
    let idx = ((sigma / ss.base_sigma).log2() * ss.sublevels as f64)
        .round()
        .clamp(0.0, (ss.levels.len() - 1) as f64) as usize;
    let img = &ss.levels[idx].image;
    let (cx, cy) = (kp.x as f64, kp.y as f64);
    let theta = if opts.rotation_invariant { dominant_orientation(img, cx, cy, sigma) } else { 0.0 };
    let (sin, cos) = theta.sin_cos();

    // 12 sigma window: 24x24 samples at sigma/2, 4x4 subregions of 6x6 samples
    let spacing = 0.5 * sigma;
    let weight_sigma = 4.0 * sigma;
    let mut acc = [0.0f64; KAZE_DESCRIPTOR_LEN];
    for j in 0..24 {
        for i in 0..24 {
            let u = (i as f64 + 0.5 - 12.0) * spacing;
            let v = (j as f64 + 0.5 - 12.0) * spacing;
            let px = cx + cos * u - sin * v;
            let py = cy + sin * u + cos * v;
            let (gx, gy) = img.gradient_sample(px, py);
            let weight = (-(u * u + v * v) / (2.0 * weight_sigma * weight_sigma)).exp();
            let rx = weight * (cos * gx + sin * gy);
            let ry = weight * (-sin * gx + cos * gy);
            let cell = (j / 6) * 4 + i / 6;
            let slot = &mut acc[cell * 4..cell * 4 + 4];
            slot[0] += rx;
            slot[1] += ry;
            slot[2] += rx.abs();
            slot[3] += ry.abs();
        }
    }
    let mut values = acc.to_vec();
    normalize(&mut values);
    values.into_iter().map(|x| x as f32).collect()
}

/// Peak of a Gaussian-weighted 36-bin gradient orientation histogram.
fn dominant_orientation(img: &Plane, cx: f64, cy: f64, sigma: f64) -> f64 {
    let radius = 4.5 * sigma;
    let spacing = (0.5 * sigma).max(0.5);
    let steps = (radius / spacing).ceil() as isize;
    let weight_sigma = 1.5 * sigma;
    let mut hist = [0.0f64; ORIENTATION_BINS];
    for j in -steps..=steps {
        for i in -steps..=steps {
            let (u, v) = (i as f64 * spacing, j as f64 * spacing);
            if u * u + v * v > radius * radius {
                continue;
            }
            let (gx, gy) = img.gradient_sample(cx + u, cy + v);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let w = (-(u * u + v * v) / (2.0 * weight_sigma * weight_sigma)).exp();
            let angle = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((angle / (2.0 * PI) * ORIENTATION_BINS as f64) as usize) % ORIENTATION_BINS;
            hist[bin] += w * mag;
        }
    }
    let (peak, _) = hist
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &h)| if h > best.1 { (i, h) } else { best });
    let left = hist[(peak + ORIENTATION_BINS - 1) % ORIENTATION_BINS];
    let right = hist[(peak + 1) % ORIENTATION_BINS];
    let denom = left - 2.0 * hist[peak] + right;
    let shift = if denom.abs() > 1e-12 { 0.5 * (left - right) / denom } else { 0.0 };
    (peak as f64 + 0.5 + shift) * 2.0 * PI / ORIENTATION_BINS as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::GrayImage;
    use crate::scalespace::{build_gaussian_scalespace, build_nonlinear_scalespace, DiffusionParams};

    fn textured(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, y| {
            let (xf, yf) = (x as f64, y as f64);
            0.45 + 0.2 * (xf * 0.31).sin() * (yf * 0.17 + 0.4).cos() + 0.1 * ((xf + 2.0 * yf) * 0.11).sin()
        })
        .unwrap()
    }

    fn params() -> DiffusionParams {
        DiffusionParams { octaves: 2, sublevels_per_octave: 3, ..Default::default() }
    }

    fn kp(x: f32, y: f32, sigma: f32, kind: FeatureKind) -> Keypoint {
        Keypoint { x, y, sigma, response: 1.0, kind }
    }

    fn norm(v: &[f32]) -> f64 {
        v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt()
    }

    #[test]
    fn flat_patch_gives_zero_descriptor() {
        let img = GrayImage::from_fn(48, 48, |_, _| 0.3).unwrap();
        let gs = build_gaussian_scalespace(&img, 2, 3, 1.6).unwrap();
        let nl = build_nonlinear_scalespace(&img, &params()).unwrap();
        let d = describe(&gs, &kp(20.0, 20.0, 2.0, FeatureKind::Sift)).unwrap();
        assert_eq!(d.values.len(), 128);
        assert!(d.values.iter().all(|&v| v == 0.0));
        let d = describe(&nl, &kp(20.0, 20.0, 2.0, FeatureKind::Kaze)).unwrap();
        assert_eq!(d.values.len(), 64);
        assert!(d.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn descriptors_are_unit_length() {
        let img = textured(64, 48);
        let gs = build_gaussian_scalespace(&img, 2, 3, 1.6).unwrap();
        let nl = build_nonlinear_scalespace(&img, &params()).unwrap();
        for &(x, y, s) in &[(10.0, 12.0, 1.7), (63.5, 47.9, 4.0), (0.0, 0.0, 9.0), (30.0, 20.0, 2.5)] {
            for opts in [DescribeOptions::default(), DescribeOptions { rotation_invariant: true }] {
                let d = describe_with(&gs, &kp(x, y, s, FeatureKind::Sift), &opts).unwrap();
                assert!((norm(&d.values) - 1.0).abs() < 1e-6);
                assert!(d.values.iter().all(|&v| v <= 0.2 / 0.2 + 1e-6));
                let d = describe_with(&nl, &kp(x, y, s, FeatureKind::Kaze), &opts).unwrap();
                assert!((norm(&d.values) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn brightness_gain_cancels() {
        let img = GrayImage::from_fn(64, 64, |x, y| {
            0.4 + 0.3 * ((x as f64) * 0.3).sin() * ((y as f64) * 0.2).cos()
        })
        .unwrap();
        let bright = img.scaled(1.1);
        let gs_a = build_gaussian_scalespace(&img, 2, 3, 1.6).unwrap();
        let gs_b = build_gaussian_scalespace(&bright, 2, 3, 1.6).unwrap();
        let nl_a = build_nonlinear_scalespace(&img, &params()).unwrap();
        let nl_b = build_nonlinear_scalespace(&bright, &params()).unwrap();
        for &(x, y, s) in &[(31.0, 29.5, 2.2), (12.0, 40.0, 3.1)] {
            let a = describe(&gs_a, &kp(x, y, s, FeatureKind::Sift)).unwrap();
            let b = describe(&gs_b, &kp(x, y, s, FeatureKind::Sift)).unwrap();
            let diff = a.values.iter().zip(&b.values).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
            assert!(diff < 1e-6, "sift diff {diff}");
            let a = describe(&nl_a, &kp(x, y, s, FeatureKind::Kaze)).unwrap();
            let b = describe(&nl_b, &kp(x, y, s, FeatureKind::Kaze)).unwrap();
            let diff = a.values.iter().zip(&b.values).map(|(p, q)| (p - q).abs()).fold(0.0f32, f32::max);
            assert!(diff < 1e-6, "kaze diff {diff}");
        }
    }

    #[test]
    fn kind_and_bounds_checked() {
        let img = textured(32, 32);
        let gs = build_gaussian_scalespace(&img, 1, 3, 1.6).unwrap();
        assert!(matches!(describe(&gs, &kp(5.0, 5.0, 2.0, FeatureKind::Kaze)), Err(Error::KindMismatch(_))));
        assert!(matches!(describe(&gs, &kp(32.0, 5.0, 2.0, FeatureKind::Sift)), Err(Error::OutOfBounds { .. })));
        assert!(matches!(describe(&gs, &kp(-0.1, 5.0, 2.0, FeatureKind::Sift)), Err(Error::OutOfBounds { .. })));
    }

    #[test]
    fn rotation_invariant_mode_follows_rotation() {
        // a quarter-turn of the image should leave the rotation-invariant descriptor nearly unchanged
        let base = textured(64, 64);
        let rot = GrayImage::from_fn(64, 64, |x, y| base.get(y, 63 - x)).unwrap();
        let opts = DescribeOptions { rotation_invariant: true };
        let gs_a = build_gaussian_scalespace(&base, 1, 3, 1.6).unwrap();
        let gs_b = build_gaussian_scalespace(&rot, 1, 3, 1.6).unwrap();
        let a = describe_with(&gs_a, &kp(31.5, 31.5, 2.0, FeatureKind::Sift), &opts).unwrap();
        let b = describe_with(&gs_b, &kp(31.5, 31.5, 2.0, FeatureKind::Sift), &opts).unwrap();
        let dot: f64 = a.values.iter().zip(&b.values).map(|(p, q)| (*p as f64) * (*q as f64)).sum();
        assert!(dot > 0.9, "cosine {dot}");
    }
}
