//! Gaussian and nonlinear-diffusion scale spaces.
//!
//! The nonlinear space integrates `dL/dt = div(c * grad L)` with an explicit
//! 4-neighbor scheme, zero-flux borders and a conductivity `c = g(|grad L_s|)`
//! evaluated on a Gaussian-presmoothed copy of the current level. Every level
//! keeps the input resolution; level `i` sits at evolution time `sigma_i^2 / 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, GrayImage, Plane};

/// Smallest accepted input side.
pub const MIN_IMAGE_SIDE: usize = 16;

/// Explicit-scheme stability bound for the 4-neighbor stencil.
pub const MAX_STEP_TAU: f64 = 0.25;

/// Default step: below the bound, so the checkerboard mode is damped
/// (amplification `1 - 8 tau`) rather than merely kept bounded.
pub const DEFAULT_STEP_TAU: f64 = 0.2;

/// Contrast factor returned when an image has no gradients at all.
pub const FALLBACK_CONTRAST_K: f64 = 0.01;

const NONZERO_GRADIENT: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConductivityKind {
    /// `exp(-|g|^2 / k^2)`, favours high-contrast edges.
    PmG1,
    /// `1 / (1 + |g|^2 / k^2)`, favours wide regions.
    PmG2,
    /// `1 - exp(-3.315 / (|g| / k)^8)`, smooths inside regions before across them.
    WeickertG3,
    /// `c = 1` everywhere: the scheme reduces to linear heat flow.
    Unit,
}

/// Edge-stopping function `g(|grad|)` with values in `(0, 1]`.
pub fn conductivity(grad_mag: f64, k: f64, kind: ConductivityKind) -> Result<f64> {
    if !(k > 0.0) || !k.is_finite() {
        return Err(Error::NonPositiveK(k));
    }
    Ok(conductivity_unchecked(grad_mag, k, kind))
}

#[inline]
fn conductivity_unchecked(grad_mag: f64, k: f64, kind: ConductivityKind) -> f64 {
    let r = grad_mag / k;
    match kind {
        ConductivityKind::PmG1 => (-r * r).exp(),
        ConductivityKind::PmG2 => 1.0 / (1.0 + r * r),
        ConductivityKind::WeickertG3 => {
            if grad_mag == 0.0 {
                1.0
            } else {
                1.0 - (-3.315 / r.powi(8)).exp()
            }
        }
        ConductivityKind::Unit => 1.0,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionParams {
    pub conductivity_kind: ConductivityKind,
    pub k_percentile: f64,
    pub gradient_presmooth_sigma: f64,
    pub step_tau: f64,
    pub octaves: usize,
    pub sublevels_per_octave: usize,
    pub base_sigma: f64,
}

impl Default for DiffusionParams {
    fn default() -> Self {
        DiffusionParams {
            conductivity_kind: ConductivityKind::PmG2,
            k_percentile: 70.0,
            gradient_presmooth_sigma: 1.0,
            step_tau: DEFAULT_STEP_TAU,
            octaves: 4,
            sublevels_per_octave: 4,
            base_sigma: 1.6,
        }
    }
}

impl DiffusionParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParams(msg));
        if !(self.k_percentile > 0.0 && self.k_percentile < 100.0) {
            return bad(format!("k_percentile {} outside (0, 100)", self.k_percentile));
        }
        if !(self.gradient_presmooth_sigma > 0.0) || !self.gradient_presmooth_sigma.is_finite() {
            return bad(format!("presmooth sigma {}", self.gradient_presmooth_sigma));
        }
        if !(self.step_tau > 0.0 && self.step_tau <= MAX_STEP_TAU) {
            return bad(format!("step_tau {} outside (0, 0.25]", self.step_tau));
        }
        if self.octaves < 1 || self.sublevels_per_octave < 1 {
            return bad("octaves and sublevels must be at least 1".into());
        }
        if !(self.base_sigma > 0.0) || !self.base_sigma.is_finite() {
            return bad(format!("base_sigma {}", self.base_sigma));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleKind {
    Gaussian,
    Nonlinear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub image: Plane,
    /// Scale in original-image pixels.
    pub sigma: f64,
    /// Evolution time `sigma^2 / 2` (original-image pixels).
    pub time: f64,
    pub octave: usize,
    pub sublevel: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSpace {
    pub kind: ScaleKind,
    pub levels: Vec<Level>,
    pub octaves: usize,
    pub sublevels: usize,
    pub base_sigma: f64,
    /// Size of the source image.
    pub width: usize,
    pub height: usize,
    /// Contrast factor used by the nonlinear space.
    pub contrast_k: Option<f64>,
}

impl ScaleSpace {
    /// Levels belonging to one octave, in sublevel order.
    pub fn octave_levels(&self, octave: usize) -> impl Iterator<Item = &Level> {
        self.levels.iter().filter(move |l| l.octave == octave)
    }
}

fn check_size(img: &GrayImage) -> Result<()> {
    if img.width() < MIN_IMAGE_SIDE || img.height() < MIN_IMAGE_SIDE {
        return Err(Error::ImageTooSmall {
            width: img.width(),
            height: img.height(),
            min: MIN_IMAGE_SIDE,
        });
    }
    Ok(())
}

/// Contrast factor `k`: the given percentile of nonzero presmoothed gradient magnitudes.
pub fn estimate_contrast_k(img: &GrayImage, presmooth_sigma: f64, percentile: f64) -> f64 {
    let smooth = gaussian_blur(img.as_plane(), presmooth_sigma);
    let mut mags: Vec<f64> = smooth
        .gradient_magnitude()
        .data()
        .iter()
        .copied()
        .filter(|&m| m > NONZERO_GRADIENT)
        .collect();
    if mags.is_empty() {
        return FALLBACK_CONTRAST_K;
    }
    mags.sort_by(f64::total_cmp);
    nearest_rank(&mags, percentile)
}

/// Nearest-rank percentile of an ascending slice.
pub(crate) fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let p = percentile.clamp(0.0, 100.0);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Advances `level` by diffusion time `duration` in substeps of at most `tau`.
pub fn diffuse(level: &mut Plane, duration: f64, params: &DiffusionParams, k: f64) {
    let mut remaining = duration;
    let mut cond = Plane::zeros(level.width(), level.height());
    let mut next = level.clone();
    while remaining > 1e-12 {
        let dt = remaining.min(params.step_tau);
        fill_conductivity(level, params, k, &mut cond);
        explicit_step(level, &cond, dt, &mut next);
        std::mem::swap(level, &mut next);
        remaining -= dt;
    }
}

fn fill_conductivity(level: &Plane, params: &DiffusionParams, k: f64, out: &mut Plane) {
    if params.conductivity_kind == ConductivityKind::Unit {
        out.data_mut().iter_mut().for_each(|c| *c = 1.0);
        return;
    }
    let smooth = gaussian_blur(level, params.gradient_presmooth_sigma);
    let (w, h) = (level.width(), level.height());
    let s = smooth.data();
    let inv_k2 = 1.0 / (k * k);
    let o = out.data_mut();
    for y in 0..h {
        let (up, down) = (y.saturating_sub(1) * w, (y + 1).min(h - 1) * w);
        for x in 0..w {
            let (left, right) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let dx = 0.5 * (s[y * w + right] - s[y * w + left]);
            let dy = 0.5 * (s[down + x] - s[up + x]);
            let r2 = (dx * dx + dy * dy) * inv_k2;
            o[y * w + x] = match params.conductivity_kind {
                ConductivityKind::PmG1 => (-r2).exp(),
                ConductivityKind::PmG2 => 1.0 / (1.0 + r2),
                ConductivityKind::WeickertG3 => {
                    if r2 == 0.0 {
                        1.0
                    } else {
                        1.0 - (-3.315 / (r2 * r2 * r2 * r2)).exp()
                    }
                }
                ConductivityKind::Unit => 1.0,
            };
        }
    }
}

/// One forward-Euler step of the flux-form scheme. Face conductivities are
/// the mean of the two adjacent pixels; faces on the border carry no flux.
fn explicit_step(cur: &Plane, cond: &Plane, dt: f64, out: &mut Plane) {
    let (w, h) = (cur.width(), cur.height());
    let l = cur.data();
    let c = cond.data();
    let o = out.data_mut();
    // flux through the face below each pixel of the previous row
    let mut below = vec![0.0; w];
    let mut right = vec![0.0; w];
    for y in 0..h {
        let row = y * w..(y + 1) * w;
        let (lr, cr) = (&l[row.clone()], &c[row.clone()]);
        for x in 0..w - 1 {
            right[x] = 0.5 * (cr[x] + cr[x + 1]) * (lr[x + 1] - lr[x]);
        }
        let orow = &mut o[row];
        orow[0] = right[0];
        for x in 1..w - 1 {
            orow[x] = right[x] - right[x - 1];
        }
        orow[w - 1] = -right[w - 2];
        for x in 0..w {
            orow[x] -= below[x];
        }
        if y + 1 < h {
            let (ln, cn) = (&l[(y + 1) * w..(y + 2) * w], &c[(y + 1) * w..(y + 2) * w]);
            for x in 0..w {
                below[x] = 0.5 * (cr[x] + cn[x]) * (ln[x] - lr[x]);
                orow[x] += below[x];
            }
        }
        for x in 0..w {
            orow[x] = lr[x] + dt * orow[x];
        }
    }
}

/// Nonlinear scale space: `octaves * sublevels` full-resolution levels at
/// `sigma = base * 2^(o + s/S)`, each diffused from the previous one.
pub fn build_nonlinear_scalespace(img: &GrayImage, params: &DiffusionParams) -> Result<ScaleSpace> {
    check_size(img)?;
    params.validate()?;
    let k = estimate_contrast_k(img, params.gradient_presmooth_sigma, params.k_percentile);
    let s_count = params.sublevels_per_octave;

    let mut levels = Vec::with_capacity(params.octaves * s_count);
    let mut current = img.as_plane().clone();
    let mut t_prev = 0.0;
    for o in 0..params.octaves {
        for s in 0..s_count {
            let sigma = params.base_sigma * 2f64.powf(o as f64 + s as f64 / s_count as f64);
            let time = 0.5 * sigma * sigma;
            diffuse(&mut current, time - t_prev, params, k);
            t_prev = time;
            levels.push(Level { image: current.clone(), sigma, time, octave: o, sublevel: s });
        }
    }
    Ok(ScaleSpace {
        kind: ScaleKind::Nonlinear,
        levels,
        octaves: params.octaves,
        sublevels: s_count,
        base_sigma: params.base_sigma,
        width: img.width(),
        height: img.height(),
        contrast_k: Some(k),
    })
}

/// Smallest octave side the Gaussian pyramid will produce.
const MIN_OCTAVE_SIDE: usize = 8;

/// Gaussian scale space with `sublevels + 1` levels per octave at
/// `sigma_s = base * 2^(s/S)` (octave pixels). Octave `o > 0` starts from a
/// 2x downsample of octave `o - 1`'s top level, which sits at `2 * base`.
pub fn build_gaussian_scalespace(
    img: &GrayImage,
    octaves: usize,
    sublevels: usize,
    base_sigma: f64,
) -> Result<ScaleSpace> {
    check_size(img)?;
    if octaves < 1 || sublevels < 1 || !(base_sigma > 0.0) || !base_sigma.is_finite() {
        return Err(Error::InvalidParams(format!(
            "gaussian space: octaves={octaves} sublevels={sublevels} base_sigma={base_sigma}"
        )));
    }
    let min_side = img.width().min(img.height()) >> (octaves - 1);
    if min_side < MIN_OCTAVE_SIDE {
        return Err(Error::InvalidParams(format!(
            "{octaves} octaves shrink a {}x{} image below {MIN_OCTAVE_SIDE} px",
            img.width(),
            img.height()
        )));
    }

    let mut levels = Vec::with_capacity(octaves * (sublevels + 1));
    let mut base = gaussian_blur(img.as_plane(), base_sigma);
    for o in 0..octaves {
        let scale = 2f64.powi(o as i32);
        let mut prev_sigma = base_sigma;
        let mut current = base.clone();
        for s in 0..=sublevels {
            let local = base_sigma * 2f64.powf(s as f64 / sublevels as f64);
            if s > 0 {
                let incr = (local * local - prev_sigma * prev_sigma).sqrt();
                current = gaussian_blur(&current, incr);
            }
            prev_sigma = local;
            let sigma = local * scale;
            levels.push(Level {
                image: current.clone(),
                sigma,
                time: 0.5 * sigma * sigma,
                octave: o,
                sublevel: s,
            });
        }
        base = current.downsample();
    }
    Ok(ScaleSpace {
        kind: ScaleKind::Gaussian,
        levels,
        octaves,
        sublevels,
        base_sigma,
        width: img.width(),
        height: img.height(),
        contrast_k: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_edge(w: usize, h: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, _| if x < w / 2 { 0.0 } else { 1.0 }).unwrap()
    }

    #[test]
    fn conductivity_point_values() {
        let k = 0.37;
        for kind in [ConductivityKind::PmG1, ConductivityKind::PmG2, ConductivityKind::WeickertG3] {
            assert_eq!(conductivity(0.0, k, kind).unwrap(), 1.0);
        }
        assert!((conductivity(k, k, ConductivityKind::PmG1).unwrap() - 0.367_879_441_171_442_3).abs() < 1e-12);
        assert!((conductivity(k, k, ConductivityKind::PmG2).unwrap() - 0.5).abs() < 1e-12);
        assert!(matches!(conductivity(1.0, 0.0, ConductivityKind::PmG1), Err(Error::NonPositiveK(_))));
        assert!(conductivity(1.0, -2.0, ConductivityKind::PmG2).is_err());
    }

    #[test]
    fn conductivity_is_monotone_and_bounded() {
        for kind in [ConductivityKind::PmG1, ConductivityKind::PmG2, ConductivityKind::WeickertG3] {
            let mut prev = 1.0;
            for i in 0..400 {
                let g = i as f64 * 0.01;
                let c = conductivity(g, 0.5, kind).unwrap();
                assert!(c <= prev + 1e-15 && c <= 1.0 && c >= 0.0, "{kind:?} at {g}");
                prev = c;
            }
        }
    }

    #[test]
    fn contrast_k_fallback_and_max() {
        let flat = GrayImage::from_fn(32, 32, |_, _| 0.5).unwrap();
        assert_eq!(estimate_contrast_k(&flat, 1.0, 70.0), FALLBACK_CONTRAST_K);

        let img = step_edge(32, 32);
        let smooth = gaussian_blur(img.as_plane(), 1.0);
        let max = smooth.gradient_magnitude().min_max().1;
        assert_eq!(estimate_contrast_k(&img, 1.0, 100.0), max);
    }

    #[test]
    fn constant_image_is_fixed_point() {
        let img = GrayImage::from_fn(24, 20, |_, _| 0.5).unwrap();
        let params = DiffusionParams { octaves: 2, sublevels_per_octave: 2, ..Default::default() };
        let ss = build_nonlinear_scalespace(&img, &params).unwrap();
        for level in &ss.levels {
            assert!(level.image.data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn nonlinear_metadata() {
        let img = step_edge(32, 32);
        let params = DiffusionParams { octaves: 2, sublevels_per_octave: 3, ..Default::default() };
        let ss = build_nonlinear_scalespace(&img, &params).unwrap();
        assert_eq!(ss.levels.len(), 6);
        for pair in ss.levels.windows(2) {
            assert!(pair[1].sigma > pair[0].sigma);
        }
        for l in &ss.levels {
            assert!((l.time - l.sigma * l.sigma / 2.0).abs() < 1e-12);
            assert_eq!((l.image.width(), l.image.height()), (32, 32));
        }
        let rel = (ss.levels[5].image.mean() - img.as_plane().mean()).abs() / img.as_plane().mean();
        assert!(rel < 1e-4);
    }

    #[test]
    fn invalid_params_rejected() {
        let img = step_edge(32, 32);
        let mut p = DiffusionParams { step_tau: 0.3, ..Default::default() };
        assert!(matches!(build_nonlinear_scalespace(&img, &p), Err(Error::InvalidParams(_))));
        p.step_tau = 0.25;
        p.k_percentile = 100.0;
        assert!(build_nonlinear_scalespace(&img, &p).is_err());
        let tiny = GrayImage::from_fn(8, 32, |_, _| 0.0).unwrap();
        assert!(matches!(
            build_nonlinear_scalespace(&tiny, &DiffusionParams::default()),
            Err(Error::ImageTooSmall { .. })
        ));
        assert!(matches!(build_gaussian_scalespace(&tiny, 1, 3, 1.6), Err(Error::ImageTooSmall { .. })));
    }

    #[test]
    fn gaussian_structure() {
        let img = step_edge(33, 21);
        let ss = build_gaussian_scalespace(&img, 1, 1, 1.6).unwrap();
        assert_eq!(ss.levels.len(), 2);
        assert!((ss.levels[1].sigma - 3.2).abs() < 1e-12);
        assert_eq!(ss.levels[1].image.width(), 33);

        let ss = build_gaussian_scalespace(&img, 2, 3, 1.6).unwrap();
        let o1 = ss.octave_levels(1).next().unwrap();
        assert_eq!((o1.image.width(), o1.image.height()), (17, 11));
    }
}
