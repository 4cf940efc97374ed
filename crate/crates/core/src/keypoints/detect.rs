use crate::error::{Error, Result};
use crate::image::Plane;
use crate::scalespace::{ScaleKind, ScaleSpace};

use super::{response_order, FeatureKind, Keypoint};

const MAX_REFINE_ITERS: usize = 5;
const BORDER: usize = 2;

/// Grid-aligned extremum before sub-pixel refinement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Candidate {
    pub level: usize,
    pub x: usize,
    pub y: usize,
    pub value: f64,
}

#[derive(Clone, Copy, Debug)]
struct Refined {
    level: usize,
    x: usize,
    y: usize,
    offset: [f64; 3],
    value: f64,
}

/// Scale-normalized determinant of the Hessian, `sigma^4 * |Lxx Lyy - Lxy^2|`.
/// Second derivatives are finite differences with step `round(sigma)`, so a
/// sharp edge preserved by the diffusion does not dominate coarse levels.
pub fn hessian_response(level: &Plane, sigma: f64) -> Plane {
    let step = derivative_step(sigma);
    let norm = (sigma / step as f64).powi(4);
    Plane::from_fn(level.width(), level.height(), |x, y| {
        let (lxx, lyy, lxy) = second_differences(level, x, y, step);
        norm * (lxx * lyy - lxy * lxy).abs()
    })
}

#[inline]
fn derivative_step(sigma: f64) -> isize {
    (sigma.round() as isize).max(1)
}

/// Second differences at spacing `step`, in units of the step.
#[inline]
fn second_differences(p: &Plane, x: usize, y: usize, step: isize) -> (f64, f64, f64) {
    let (xi, yi) = (x as isize, y as isize);
    let c = p.get_clamped(xi, yi);
    let lxx = p.get_clamped(xi + step, yi) - 2.0 * c + p.get_clamped(xi - step, yi);
    let lyy = p.get_clamped(xi, yi + step) - 2.0 * c + p.get_clamped(xi, yi - step);
    let lxy = 0.25
        * (p.get_clamped(xi + step, yi + step) - p.get_clamped(xi + step, yi - step)
            - p.get_clamped(xi - step, yi + step)
            + p.get_clamped(xi - step, yi - step));
    (lxx, lyy, lxy)
}

/// Strict 3x3x3 extrema on interior levels of a same-size stack.
pub(crate) fn local_extrema(stack: &[Plane], min_abs: f64, maxima_only: bool) -> Vec<Candidate> {
    let mut out = Vec::new();
    if stack.len() < 3 {
        return out;
    }
    let (w, h) = (stack[0].width(), stack[0].height());
    if w <= 2 * BORDER || h <= 2 * BORDER {
        return out;
    }
    for l in 1..stack.len() - 1 {
        for y in BORDER..h - BORDER {
            for x in BORDER..w - BORDER {
                let v = stack[l].get(x, y);
                if !(v.abs() > min_abs) {
                    continue;
                }
                let is_max = v > 0.0 && beats_neighbors(stack, l, x, y, |n| v > n);
                let is_min = !maxima_only && v < 0.0 && beats_neighbors(stack, l, x, y, |n| v < n);
                if is_max || is_min {
                    out.push(Candidate { level: l, x, y, value: v });
                }
            }
        }
    }
    out
}

fn beats_neighbors(stack: &[Plane], l: usize, x: usize, y: usize, cmp: impl Fn(f64) -> bool) -> bool {
    for dl in [l - 1, l, l + 1] {
        let p = &stack[dl];
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                if dl == l && xx == x && yy == y {
                    continue;
                }
                if !cmp(p.get(xx, yy)) {
                    return false;
                }
            }
        }
    }
    true
}

/// Quadratic fit in (x, y, level); moves to the neighbouring sample while any
/// offset exceeds half a step. Returns `None` when the fit does not settle.
fn refine(stack: &[Plane], c: Candidate) -> Option<Refined> {
    let (w, h) = (stack[0].width(), stack[0].height());
    let (mut l, mut x, mut y) = (c.level, c.x, c.y);
    for _ in 0..MAX_REFINE_ITERS {
        let d = |dl: isize, dx: isize, dy: isize| {
            stack[(l as isize + dl) as usize].get((x as isize + dx) as usize, (y as isize + dy) as usize)
        };
        let v = d(0, 0, 0);
        let g = [
            0.5 * (d(0, 1, 0) - d(0, -1, 0)),
            0.5 * (d(0, 0, 1) - d(0, 0, -1)),
            0.5 * (d(1, 0, 0) - d(-1, 0, 0)),
        ];
        let dxx = d(0, 1, 0) - 2.0 * v + d(0, -1, 0);
        let dyy = d(0, 0, 1) - 2.0 * v + d(0, 0, -1);
        let dss = d(1, 0, 0) - 2.0 * v + d(-1, 0, 0);
        let dxy = 0.25 * (d(0, 1, 1) - d(0, 1, -1) - d(0, -1, 1) + d(0, -1, -1));
        let dxs = 0.25 * (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0));
        let dys = 0.25 * (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1));
        let hess = [[dxx, dxy, dxs], [dxy, dyy, dys], [dxs, dys, dss]];
        let offset = solve3(hess, [-g[0], -g[1], -g[2]])?;
        if offset.iter().all(|o| o.abs() <= 0.5) {
            let value = v + 0.5 * (g[0] * offset[0] + g[1] * offset[1] + g[2] * offset[2]);
            return Some(Refined { level: l, x, y, offset, value });
        }
        let nx = x as isize + offset[0].round() as isize;
        let ny = y as isize + offset[1].round() as isize;
        let nl = l as isize + offset[2].round() as isize;
        if nx < BORDER as isize
            || ny < BORDER as isize
            || nx >= (w - BORDER) as isize
            || ny >= (h - BORDER) as isize
            || nl < 1
            || nl >= stack.len() as isize - 1
        {
            return None;
        }
        (x, y, l) = (nx as usize, ny as usize, nl as usize);
    }
    None
}

/// Cramer's rule for a symmetric 3x3 system.
fn solve3(m: [[f64; 3]; 3], b: [f64; 3]) -> Option<[f64; 3]> {
    let det = |a: [[f64; 3]; 3]| {
        a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
            + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
    };
    let d = det(m);
    let scale = m.iter().flatten().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if d.abs() <= 1e-12 * scale.powi(3) || d == 0.0 {
        return None;
    }
    let mut out = [0.0; 3];
    for (col, slot) in out.iter_mut().enumerate() {
        let mut mc = m;
        for row in 0..3 {
            mc[row][col] = b[row];
        }
        *slot = det(mc) / d;
    }
    Some(out)
}

pub(crate) fn kaze_responses(ss: &ScaleSpace) -> Vec<Plane> {
    ss.levels.iter().map(|l| hessian_response(&l.image, l.sigma)).collect()
}

pub(crate) fn kaze_candidates(ss: &ScaleSpace, threshold: f64) -> Result<(Vec<Plane>, Vec<Candidate>)> {
    if ss.kind != ScaleKind::Nonlinear {
        return Err(Error::KindMismatch("nonlinear scale space"));
    }
    if ss.levels.len() < 3 {
        return Err(Error::TooFewLevels { got: ss.levels.len(), need: 3 });
    }
    let responses = kaze_responses(ss);
    let candidates = if threshold.is_finite() {
        local_extrema(&responses, threshold.max(0.0), true)
    } else {
        Vec::new()
    };
    Ok((responses, candidates))
}

/// Determinant-of-Hessian maxima of a nonlinear scale space.
pub fn detect_kaze(ss: &ScaleSpace, threshold: f64) -> Result<Vec<Keypoint>> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidParams(format!("kaze threshold {threshold}")));
    }
    let (responses, candidates) = kaze_candidates(ss, threshold)?;
    let s_count = ss.sublevels as f64;
    let mut kps: Vec<Keypoint> = candidates
        .into_iter()
        .filter_map(|c| refine(&responses, c))
        .filter(|r| r.value > threshold)
        .filter_map(|r| {
            let x = r.x as f64 + r.offset[0];
            let y = r.y as f64 + r.offset[1];
            let sigma = ss.levels[r.level].sigma * 2f64.powf(r.offset[2] / s_count);
            make_keypoint(x, y, sigma, r.value, FeatureKind::Kaze, ss)
        })
        .collect();
    kps.sort_by(response_order);
    Ok(kps)
}

fn make_keypoint(x: f64, y: f64, sigma: f64, response: f64, kind: FeatureKind, ss: &ScaleSpace) -> Option<Keypoint> {
    let kp = Keypoint { x: x as f32, y: y as f32, sigma: sigma as f32, response: response as f32, kind };
    let inside = kp.x >= 0.0 && kp.y >= 0.0 && (kp.x as f64) < ss.width as f64 && (kp.y as f64) < ss.height as f64;
    (inside && kp.response.is_finite() && kp.response >= 0.0 && kp.sigma > 0.0).then_some(kp)
}

pub(crate) fn dog_stack(ss: &ScaleSpace, octave: usize) -> Vec<Plane> {
    let levels: Vec<_> = ss.octave_levels(octave).collect();
    levels.windows(2).map(|p| p[1].image.sub(&p[0].image)).collect()
}

/// Difference-of-Gaussian extrema with contrast and edge rejection.
pub fn detect_sift(ss: &ScaleSpace, contrast_threshold: f64, edge_ratio: f64) -> Result<Vec<Keypoint>> {
    if ss.kind != ScaleKind::Gaussian {
        return Err(Error::KindMismatch("gaussian scale space"));
    }
    if !(edge_ratio > 0.0) || !(contrast_threshold >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "contrast threshold {contrast_threshold}, edge ratio {edge_ratio}"
        )));
    }
    if ss.sublevels + 1 < 4 {
        return Err(Error::TooFewLevels { got: ss.sublevels + 1, need: 4 });
    }
    let edge_limit = (edge_ratio + 1.0).powi(2) / edge_ratio;
    let s_count = ss.sublevels as f64;
    let mut kps = Vec::new();
    for o in 0..ss.octaves {
        let dogs = dog_stack(ss, o);
        let scale = 2f64.powi(o as i32);
        for c in local_extrema(&dogs, 0.5 * contrast_threshold, false) {
            let Some(r) = refine(&dogs, c) else { continue };
            if r.value.abs() < contrast_threshold {
                continue;
            }
            let (dxx, dyy, dxy) = second_differences(&dogs[r.level], r.x, r.y, 1);
            let det = dxx * dyy - dxy * dxy;
            let trace = dxx + dyy;
            if det <= 0.0 || trace * trace / det > edge_limit {
                continue;
            }
            let x = (r.x as f64 + r.offset[0]) * scale;
            let y = (r.y as f64 + r.offset[1]) * scale;
            let sigma = ss.base_sigma * 2f64.powf(o as f64 + (r.level as f64 + r.offset[2]) / s_count);
            if let Some(kp) = make_keypoint(x, y, sigma, r.value.abs(), FeatureKind::Sift, ss) {
                kps.push(kp);
            }
        }
    }
    kps.sort_by(response_order);
    Ok(kps)
}
