//! Keypoint overlap curves for both detectors over an annotated dataset.

use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::config::RunConfig;
use super::dataset::{load_dataset, DatasetManifest};
use super::extract::{detect_both, to_source_frame};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::keypoints::{FeatureKind, Keypoint};
use crate::kosmetrics::{mkos_curve, Annotation, OverlapMode};

/// One row of a curve CSV.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurveRow {
    pub n_percent: f64,
    pub mkos: f64,
    pub detector: String,
    pub mode: String,
    /// Empty for `full_box`.
    pub beta: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KosResult {
    pub rows: Vec<CurveRow>,
    /// Annotated images with no keypoints, per detector.
    pub skipped_sift: usize,
    pub skipped_kaze: usize,
    pub excluded: Vec<(String, String)>,
}

impl KosResult {
    pub fn curve(&self, detector: FeatureKind, mode: &str) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.detector == detector.name() && r.mode == mode)
            .map(|r| (r.n_percent, r.mkos))
            .collect()
    }
}

/// Detector keypoints per annotated image, mapped to source coordinates.
pub struct KosInput {
    pub annotation: Annotation,
    pub sift: Vec<Keypoint>,
    pub kaze: Vec<Keypoint>,
}

/// Curves for both detectors in `full_box` and `band` modes.
pub fn kos_curves(inputs: &[KosInput], n_grid: &[f64], beta: f64) -> Result<KosResult> {
    if inputs.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let mut rows = Vec::new();
    let mut skipped = [0usize; 2];
    for (i, kind) in [FeatureKind::Sift, FeatureKind::Kaze].into_iter().enumerate() {
        let data: Vec<(Annotation, Vec<Keypoint>)> = inputs
            .iter()
            .map(|k| (k.annotation.clone(), if kind == FeatureKind::Sift { k.sift.clone() } else { k.kaze.clone() }))
            .collect();
        for mode in [OverlapMode::FullBox, OverlapMode::Band { beta }] {
            let curve = mkos_curve(&data, n_grid, mode)?;
            skipped[i] = curve.skipped;
            rows.extend(curve.points.iter().map(|p| CurveRow {
                n_percent: p.n_percent,
                mkos: p.mkos,
                detector: kind.name().to_string(),
                mode: mode.name().to_string(),
                beta: mode.beta(),
            }));
        }
    }
    Ok(KosResult { rows, skipped_sift: skipped[0], skipped_kaze: skipped[1], excluded: Vec::new() })
}

fn detect_annotated(m: &DatasetManifest, cfg: &RunConfig) -> (Vec<KosInput>, Vec<(String, String)>) {
    let max_side = (cfg.max_image_side > 0).then_some(cfg.max_image_side);
    let entries: Vec<_> = m.images().filter(|e| m.annotations.contains_key(&e.id)).collect();
    let results: Vec<_> = entries
        .par_iter()
        .map(|e| {
            let run = || -> Result<KosInput> {
                let (img, scale) = GrayImage::open_resized(&e.path, max_side)?;
                let (sift, kaze) = detect_both(&img, cfg)?;
                let back = |v: Vec<Keypoint>| v.into_iter().map(|k| to_source_frame(k, scale)).collect();
                Ok(KosInput { annotation: m.annotations[&e.id].clone(), sift: back(sift), kaze: back(kaze) })
            };
            (e.id.clone(), run())
        })
        .collect();
    let mut inputs = Vec::new();
    let mut excluded = Vec::new();
    for (id, r) in results {
        match r {
            Ok(k) => inputs.push(k),
            Err(e) => {
                log::warn!("excluding {id}: {e}");
                excluded.push((id, e.to_string()));
            }
        }
    }
    (inputs, excluded)
}

/// Loads the configured dataset and computes every curve.
pub fn run_kos_experiment(cfg: &RunConfig) -> Result<KosResult> {
    cfg.validate()?;
    let m = load_dataset(&cfg.dataset.root, cfg.dataset.layout)?;
    if m.annotations.is_empty() {
        return Err(Error::NoAnnotations);
    }
    let (inputs, excluded) = detect_annotated(&m, cfg);
    let mut result = kos_curves(&inputs, &cfg.kos.n_grid, cfg.kos.beta)?;
    result.excluded = excluded;
    Ok(result)
}

pub fn write_curve_csv(rows: &[CurveRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidParams(format!("csv: {other:?}")),
    }
}

/// Writes `kos_full_box.csv` and `kos_band.csv` into `dir`; returns their paths.
pub fn write_curve_files(result: &KosResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for mode in ["full_box", "band"] {
        let rows: Vec<CurveRow> = result.rows.iter().filter(|r| r.mode == mode).cloned().collect();
        let path = dir.join(format!("kos_{mode}.csv"));
        write_curve_csv(&rows, std::fs::File::create(&path)?)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kosmetrics::{kos, BoundingBox, LabeledBox};

    fn kp(x: f32, y: f32, response: f32, kind: FeatureKind) -> Keypoint {
        Keypoint { x, y, sigma: 1.5, response, kind }
    }

    fn input() -> KosInput {
        let bbox = BoundingBox::new(10.0, 10.0, 30.0, 30.0).unwrap();
        KosInput {
            annotation: Annotation { image_id: "a".into(), boxes: vec![LabeledBox { label: "o".into(), bbox }] },
            sift: vec![kp(5.0, 5.0, 0.9, FeatureKind::Sift), kp(20.0, 20.0, 0.5, FeatureKind::Sift)],
            kaze: vec![kp(10.0, 20.0, 0.9, FeatureKind::Kaze), kp(20.0, 20.0, 0.1, FeatureKind::Kaze)],
        }
    }

    #[test]
    fn single_point_grid_is_plain_mkos() {
        let i = input();
        let r = kos_curves(std::slice::from_ref(&i), &[100.0], 0.1).unwrap();
        assert_eq!(r.rows.len(), 4);
        let full_sift = r.curve(FeatureKind::Sift, "full_box");
        assert_eq!(full_sift, vec![(100.0, kos(&i.annotation, &i.sift).unwrap())]);
        assert_eq!(r.curve(FeatureKind::Kaze, "full_box")[0].1, 1.0);
        // only the keypoint on the box edge lies in the band
        assert_eq!(r.curve(FeatureKind::Kaze, "band")[0].1, 0.5);
        assert_eq!(r.curve(FeatureKind::Sift, "band")[0].1, 0.0);
    }

    #[test]
    fn band_never_exceeds_full_box_on_nested_fixture() {
        let r = kos_curves(&[input()], &[50.0, 100.0], 0.1).unwrap();
        for kind in [FeatureKind::Sift, FeatureKind::Kaze] {
            for (f, b) in r.curve(kind, "full_box").iter().zip(r.curve(kind, "band")) {
                assert!(b.1 <= f.1);
            }
        }
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(kos_curves(&[], &[100.0], 0.1), Err(Error::NoAnnotations)));
    }

    #[test]
    fn csv_columns_and_empty_beta() {
        let r = kos_curves(&[input()], &[100.0], 0.1).unwrap();
        let mut buf = Vec::new();
        write_curve_csv(&r.rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n_percent,mkos,detector,mode,beta");
        assert_eq!(lines[1], "100.0,0.5,sift,full_box,");
        assert_eq!(lines[2], "100.0,0.0,sift,band,0.1");
    }
}
