//! The accuracy grid: n_train x feature set x classifier.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Instant;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cache::{extract_and_cache, FeatureStore};
use super::config::RunConfig;
use super::dataset::{load_dataset, DatasetManifest, Split};
use super::extract::ImageFeatures;
use super::kos::csv_error;
use crate::bovw::{build_codebook, encode, fuse, Codebook};
use crate::classify::{predict_ovo, train_ovo, ClassifierKind, LabeledSet, OvoEnsemble};
use crate::error::{Error, Result};
use crate::keypoints::{response_order, Descriptor, FeatureKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    Sift,
    Kaze,
    Fused,
}

impl FeatureSet {
    pub const ALL: [FeatureSet; 3] = [FeatureSet::Sift, FeatureSet::Kaze, FeatureSet::Fused];

    pub fn name(self) -> &'static str {
        match self {
            FeatureSet::Sift => "sift",
            FeatureSet::Kaze => "kaze",
            FeatureSet::Fused => "fused",
        }
    }

    pub fn parse(s: &str) -> Option<FeatureSet> {
        FeatureSet::ALL.into_iter().find(|f| f.name() == s)
    }
}

/// Fraction of positions where the two lists agree.
pub fn accuracy(predictions: &[i32], truth: &[i32]) -> Result<f64> {
    if predictions.len() != truth.len() {
        return Err(Error::LengthMismatch(predictions.len(), truth.len()));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyList);
    }
    let hits = predictions.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predictions.len() as f64)
}

/// The strongest `top_percent` of an image's descriptors of one kind.
pub fn top_descriptors(f: &ImageFeatures, kind: FeatureKind, top_percent: f64) -> Vec<Descriptor> {
    let mut ds = f.of_kind(kind).to_vec();
    ds.sort_by(|a, b| response_order(&a.keypoint, &b.keypoint));
    let keep = (ds.len() as f64 * top_percent / 100.0 - 1e-9).ceil().max(0.0) as usize;
    ds.truncate(keep.min(ds.len()));
    ds
}

/// Codebook of one kind over the given training images' descriptors,
/// subsampled to `cfg.bovw.max_descriptors`. Also returns the ids of the
/// images that actually contributed.
pub fn train_codebook(store: &FeatureStore, train_ids: &[&str], kind: FeatureKind, cfg: &RunConfig) -> Result<(Codebook, Vec<String>)> {
    let mut pool: Vec<(usize, Descriptor)> = Vec::new();
    for (i, id) in train_ids.iter().enumerate() {
        let f = store.get(id).ok_or_else(|| Error::InvalidDataset(format!("no features for {id}")))?;
        pool.extend(top_descriptors(f, kind, cfg.top_percent).into_iter().map(|d| (i, d)));
    }
    if pool.len() > cfg.bovw.max_descriptors {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(kind.as_byte() as u64 + 1);
        let mut keep = sample(&mut rng, pool.len(), cfg.bovw.max_descriptors).into_vec();
        keep.sort_unstable();
        let mut slots: Vec<Option<(usize, Descriptor)>> = pool.into_iter().map(Some).collect();
        pool = keep.into_iter().map(|i| slots[i].take().expect("indices are distinct")).collect();
    }
    let sources: BTreeSet<usize> = pool.iter().map(|(i, _)| *i).collect();
    let descriptors: Vec<Descriptor> = pool.into_iter().map(|(_, d)| d).collect();
    let k = match kind {
        FeatureKind::Sift => cfg.bovw.vocab_sift,
        FeatureKind::Kaze => cfg.bovw.vocab_kaze,
    };
    let cb = build_codebook(&descriptors, k, cfg.seed, cfg.bovw.max_iters)?;
    Ok((cb, sources.into_iter().map(|i| train_ids[i].to_string()).collect()))
}

fn need<'a>(cb: Option<&'a Codebook>, what: &str) -> Result<&'a Codebook> {
    cb.ok_or_else(|| Error::InvalidParams(format!("{what} codebook unavailable")))
}

/// Feature vector of one image for a feature set.
pub fn image_vector(f: &ImageFeatures, set: FeatureSet, sift: Option<&Codebook>, kaze: Option<&Codebook>, cfg: &RunConfig) -> Result<Vec<f64>> {
    let hist = |kind: FeatureKind, cb: &Codebook| encode(&top_descriptors(f, kind, cfg.top_percent), cb);
    Ok(match set {
        FeatureSet::Sift => hist(FeatureKind::Sift, need(sift, "sift")?)?.values,
        FeatureSet::Kaze => hist(FeatureKind::Kaze, need(kaze, "kaze")?)?.values,
        FeatureSet::Fused => {
            let hs = hist(FeatureKind::Sift, need(sift, "sift")?)?;
            let hk = hist(FeatureKind::Kaze, need(kaze, "kaze")?)?;
            fuse(&hs, &hk, cfg.bovw.fusion_weight)?.values
        }
    })
}

/// Ids the codebooks and classifiers of one `n_train` row were built from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LeakageAudit {
    pub n_train: usize,
    pub codebook_sources: BTreeMap<String, Vec<String>>,
    pub classifier_train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

impl LeakageAudit {
    /// Every codebook source and classifier training id is a train id, and
    /// none of them is a test id.
    pub fn is_clean(&self, split: &Split) -> bool {
        let train: BTreeSet<&str> = split.train_ids().map(|(_, id)| id).collect();
        let test: BTreeSet<&str> = self.test_ids.iter().map(String::as_str).collect();
        let used = self.codebook_sources.values().flatten().chain(&self.classifier_train_ids);
        let mut ok = true;
        for id in used {
            ok &= train.contains(id.as_str()) && !test.contains(id.as_str());
        }
        ok
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellResult {
    pub feature_set: FeatureSet,
    pub classifier: ClassifierKind,
    pub n_train: usize,
    pub accuracy: Option<f64>,
    pub support_vectors_total: Option<usize>,
    pub train_seconds: f64,
    pub test_seconds: f64,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timings {
    pub extraction_seconds: f64,
    pub codebook_seconds: BTreeMap<usize, f64>,
    /// `(feature set, classifier, n_train, train seconds, test seconds)`.
    pub cells: Vec<(FeatureSet, ClassifierKind, usize, f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub class_names: Vec<String>,
    pub cells: Vec<CellResult>,
    pub excluded: Vec<(String, String)>,
    pub audits: Vec<LeakageAudit>,
    pub timings: Timings,
    pub config: RunConfig,
}

#[derive(Serialize)]
struct CsvRow {
    feature_set: &'static str,
    classifier: &'static str,
    n_train: usize,
    accuracy: Option<f64>,
    support_vectors_total: Option<usize>,
    train_seconds: f64,
    test_seconds: f64,
}

impl Report {
    pub fn cell(&self, set: FeatureSet, kind: ClassifierKind, n_train: usize) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.feature_set == set && c.classifier == kind && c.n_train == n_train)
    }

    /// One row per cell; failed cells leave accuracy and support count empty.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for c in &self.cells {
            out.serialize(CsvRow {
                feature_set: c.feature_set.name(),
                classifier: c.classifier.name(),
                n_train: c.n_train,
                accuracy: c.accuracy,
                support_vectors_total: c.support_vectors_total,
                train_seconds: c.train_seconds,
                test_seconds: c.test_seconds,
            })
            .map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn without_excluded(m: &DatasetManifest, excluded: &[(String, String)]) -> DatasetManifest {
    let bad: BTreeSet<&str> = excluded.iter().map(|(id, _)| id.as_str()).collect();
    let mut out = m.clone();
    for c in &mut out.classes {
        c.images.retain(|e| !bad.contains(e.id.as_str()));
    }
    out
}

fn failed_cell(set: FeatureSet, kind: ClassifierKind, n_train: usize, err: &str) -> CellResult {
    CellResult {
        feature_set: set,
        classifier: kind,
        n_train,
        accuracy: None,
        support_vectors_total: None,
        train_seconds: 0.0,
        test_seconds: 0.0,
        confusion: Vec::new(),
        error: Some(err.to_string()),
    }
}

struct Evaluated {
    ensemble: OvoEnsemble,
    predictions: Vec<i32>,
    train_seconds: f64,
    test_seconds: f64,
}

fn evaluate(train: LabeledSet, test: &[Vec<f64>], kind: ClassifierKind, c: f64) -> Result<Evaluated> {
    let t = Instant::now();
    let ensemble = train_ovo(&train, kind, c)?;
    let train_seconds = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let predictions = test.iter().map(|x| predict_ovo(&ensemble, x)).collect::<Result<Vec<_>>>()?;
    Ok(Evaluated { ensemble, predictions, train_seconds, test_seconds: t.elapsed().as_secs_f64() })
}

/// Runs every cell of one `n_train` row on an existing feature store.
pub fn run_row(store: &FeatureStore, split: &Split, cfg: &RunConfig, timings: &mut Timings) -> (Vec<CellResult>, LeakageAudit) {
    let n_train = split.n_train_per_class;
    let train: Vec<(usize, &str)> = split.train_ids().collect();
    let test: Vec<(usize, &str)> = split.test_ids().collect();
    let train_ids: Vec<&str> = train.iter().map(|(_, id)| *id).collect();
    let mut audit = LeakageAudit {
        n_train,
        codebook_sources: BTreeMap::new(),
        classifier_train_ids: train_ids.iter().map(|s| s.to_string()).collect(),
        test_ids: test.iter().map(|(_, id)| id.to_string()).collect(),
    };

    let t = Instant::now();
    let mut books: BTreeMap<FeatureKind, std::result::Result<Codebook, String>> = BTreeMap::new();
    for kind in [FeatureKind::Sift, FeatureKind::Kaze] {
        let r = train_codebook(store, &train_ids, kind, cfg).map(|(cb, sources)| {
            audit.codebook_sources.insert(kind.name().to_string(), sources);
            cb
        });
        if let Err(e) = &r {
            log::warn!("n_train {n_train}: {} codebook failed: {e}", kind.name());
        }
        books.insert(kind, r.map_err(|e| e.to_string()));
    }
    timings.codebook_seconds.insert(n_train, t.elapsed().as_secs_f64());
    let sift = books[&FeatureKind::Sift].as_ref().ok();
    let kaze = books[&FeatureKind::Kaze].as_ref().ok();
    let n_classes = split.classes.len();

    let mut cells = Vec::new();
    for set in FeatureSet::ALL {
        let vectors = |ids: &[(usize, &str)]| -> Result<Vec<Vec<f64>>> {
            ids.iter()
                .map(|(_, id)| {
                    let f = store.get(id).ok_or_else(|| Error::InvalidDataset(format!("no features for {id}")))?;
                    image_vector(f, set, sift, kaze, cfg)
                })
                .collect()
        };
        let encoded = vectors(&train).and_then(|tr| Ok((tr, vectors(&test)?)));
        for &kind in &cfg.classifier.kinds {
            let mut run = || -> Result<CellResult> {
                let (tr, te) = encoded.as_ref().map_err(|e| Error::InvalidParams(e.to_string()))?;
                let labels: Vec<i32> = train.iter().map(|(c, _)| *c as i32).collect();
                let truth: Vec<i32> = test.iter().map(|(c, _)| *c as i32).collect();
                let ev = evaluate(LabeledSet::new(tr.clone(), labels)?, te, kind, cfg.classifier.c)?;
                let mut confusion = vec![vec![0usize; n_classes]; n_classes];
                for (&t, &p) in truth.iter().zip(&ev.predictions) {
                    confusion[t as usize][p as usize] += 1;
                }
                timings.cells.push((set, kind, n_train, ev.train_seconds, ev.test_seconds));
                let (train_seconds, test_seconds) =
                    if cfg.report_timings { (ev.train_seconds, ev.test_seconds) } else { (0.0, 0.0) };
                Ok(CellResult {
                    feature_set: set,
                    classifier: kind,
                    n_train,
                    accuracy: Some(accuracy(&ev.predictions, &truth)?),
                    support_vectors_total: Some(ev.ensemble.support_vectors_total()),
                    train_seconds,
                    test_seconds,
                    confusion,
                    error: None,
                })
            };
            cells.push(run().unwrap_or_else(|e| {
                log::warn!("cell {}/{}/{n_train} failed: {e}", set.name(), kind.name());
                failed_cell(set, kind, n_train, &e.to_string())
            }));
        }
    }
    (cells, audit)
}

/// Loads a classification dataset and its features. Returns the full
/// manifest, the manifest without excluded images, and the feature store.
pub fn load_features(cfg: &RunConfig) -> Result<(DatasetManifest, DatasetManifest, FeatureStore)> {
    cfg.validate()?;
    let manifest = load_dataset(&cfg.dataset.root, cfg.dataset.layout)?;
    if manifest.classes.len() < 2 {
        return Err(Error::SingleClass);
    }
    let store = extract_and_cache(&manifest, cfg)?;
    let usable = without_excluded(&manifest, &store.excluded);
    Ok((manifest, usable, store))
}

/// Extracts (or reuses cached) features, then fills the whole grid. A
/// failing cell is recorded with its error and does not stop the others.
pub fn run_benchmark(cfg: &RunConfig) -> Result<Report> {
    let t = Instant::now();
    let (manifest, usable, store) = load_features(cfg)?;
    let mut timings = Timings { extraction_seconds: t.elapsed().as_secs_f64(), codebook_seconds: BTreeMap::new(), cells: Vec::new() };

    let mut cells = Vec::new();
    let mut audits = Vec::new();
    for &n_train in &cfg.split.n_train {
        match super::dataset::make_split(&usable, n_train, cfg.split.test_cap, cfg.seed) {
            Ok(split) => {
                let (row, audit) = run_row(&store, &split, cfg, &mut timings);
                cells.extend(row);
                audits.push(audit);
            }
            Err(e) => {
                log::warn!("n_train {n_train}: {e}");
                for set in FeatureSet::ALL {
                    for &kind in &cfg.classifier.kinds {
                        cells.push(failed_cell(set, kind, n_train, &e.to_string()));
                    }
                }
            }
        }
    }
    Ok(Report {
        class_names: manifest.classes.iter().map(|c| c.name.clone()).collect(),
        cells,
        excluded: store.excluded.clone(),
        audits,
        timings,
        config: cfg.clone(),
    })
}
