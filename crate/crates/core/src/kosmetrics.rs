//! Keypoint overlap scores against ground-truth boxes.
//!
//! KOS is the fraction of an image's keypoints that fall inside the union of
//! its object boxes (or inside the union of boundary bands); MKOS averages it
//! over images. Curves evaluate MKOS on the top-N% strongest keypoints.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::keypoints::{top_responses, Keypoint};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BoundingBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self> {
        let b = BoundingBox { xmin, ymin, xmax, ymax };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.xmin, self.ymin, self.xmax, self.ymax].iter().all(|v| v.is_finite());
        if !finite || self.xmin >= self.xmax || self.ymin >= self.ymax {
            return Err(Error::InvalidBox(format!("{self:?}")));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }

    /// Closed-box membership.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.xmin <= x && x <= self.xmax && self.ymin <= y && y <= self.ymax
    }

    #[inline]
    fn contains_strictly(&self, x: f64, y: f64) -> bool {
        self.xmin < x && x < self.xmax && self.ymin < y && y < self.ymax
    }

    /// Same center, each side multiplied by `factor`.
    pub fn scaled_about_center(&self, factor: f64) -> BoundingBox {
        let (cx, cy) = self.center();
        let (hw, hh) = (0.5 * self.width() * factor, 0.5 * self.height() * factor);
        BoundingBox { xmin: cx - hw, ymin: cy - hh, xmax: cx + hw, ymax: cy + hh }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    pub label: String,
    pub bbox: BoundingBox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub image_id: String,
    pub boxes: Vec<LabeledBox>,
}

impl Annotation {
    pub fn validate(&self) -> Result<()> {
        if self.image_id.is_empty() {
            return Err(Error::InvalidBox("annotation with empty image id".into()));
        }
        self.boxes.iter().try_for_each(|b| b.bbox.validate())
    }
}

/// Annulus between the area-extended and area-reduced copies of a box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryBand {
    pub outer: BoundingBox,
    pub inner: BoundingBox,
    pub beta: f64,
}

impl BoundaryBand {
    /// Inside the closed outer box and not strictly inside the inner box.
    #[inline]
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.outer.contains(x, y) && !self.inner.contains_strictly(x, y)
    }
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidBeta(beta))
    }
}

/// Sides scale by `sqrt(1 +/- beta)` so areas scale by exactly `1 +/- beta`.
pub fn boundary_band(bbox: &BoundingBox, beta: f64) -> Result<BoundaryBand> {
    check_beta(beta)?;
    bbox.validate()?;
    Ok(BoundaryBand {
        outer: bbox.scaled_about_center((1.0 + beta).sqrt()),
        inner: bbox.scaled_about_center((1.0 - beta).sqrt()),
        beta,
    })
}

/// 1 when the keypoint lies in the closed box, else 0.
pub fn chi(bbox: &BoundingBox, kp: &Keypoint) -> u8 {
    bbox.contains(kp.x as f64, kp.y as f64) as u8
}

/// Fraction of keypoints inside the union of the annotation's boxes.
pub fn kos(ann: &Annotation, kps: &[Keypoint]) -> Result<f64> {
    if kps.is_empty() {
        return Err(Error::EmptyKeypointList);
    }
    let inside = kps
        .iter()
        .filter(|kp| ann.boxes.iter().any(|b| chi(&b.bbox, kp) == 1))
        .count();
    Ok(inside as f64 / kps.len() as f64)
}

/// Fraction of keypoints inside the union of the objects' boundary bands.
pub fn kos_band(ann: &Annotation, kps: &[Keypoint], beta: f64) -> Result<f64> {
    check_beta(beta)?;
    if kps.is_empty() {
        return Err(Error::EmptyKeypointList);
    }
    let bands = ann
        .boxes
        .iter()
        .map(|b| boundary_band(&b.bbox, beta))
        .collect::<Result<Vec<_>>>()?;
    let inside = kps
        .iter()
        .filter(|kp| bands.iter().any(|band| band.contains(kp.x as f64, kp.y as f64)))
        .count();
    Ok(inside as f64 / kps.len() as f64)
}

/// Arithmetic mean of per-image scores.
pub fn mkos(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::EmptyList);
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum OverlapMode {
    FullBox,
    Band { beta: f64 },
}

impl OverlapMode {
    pub fn name(&self) -> &'static str {
        match self {
            OverlapMode::FullBox => "full_box",
            OverlapMode::Band { .. } => "band",
        }
    }

    pub fn beta(&self) -> Option<f64> {
        match self {
            OverlapMode::FullBox => None,
            OverlapMode::Band { beta } => Some(*beta),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub n_percent: f64,
    pub mkos: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub points: Vec<CurvePoint>,
    /// Images left out because they had no keypoints.
    pub skipped: usize,
}

/// MKOS of the top-N% keypoints for every N in `n_grid`.
pub fn mkos_curve(dataset: &[(Annotation, Vec<Keypoint>)], n_grid: &[f64], mode: OverlapMode) -> Result<Curve> {
    if let OverlapMode::Band { beta } = mode {
        check_beta(beta)?;
    }
    let usable: Vec<_> = dataset.iter().filter(|(_, kps)| !kps.is_empty()).collect();
    let skipped = dataset.len() - usable.len();
    if skipped > 0 {
        log::warn!("mkos_curve: skipping {skipped} image(s) without keypoints");
    }
    let mut points = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let scores = usable
            .iter()
            .map(|(ann, kps)| {
                let top = top_responses(kps, n)?;
                match mode {
                    OverlapMode::FullBox => kos(ann, &top),
                    OverlapMode::Band { beta } => kos_band(ann, &top, beta),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        points.push(CurvePoint { n_percent: n, mkos: mkos(&scores)? });
    }
    Ok(Curve { points, skipped })
}
