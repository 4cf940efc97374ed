use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::classify::ClassifierKind;
use crate::error::{Error, Result};
use crate::scalespace::DiffusionParams;

/// Directory layout of a dataset on disk.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// One subdirectory of images per class.
    ClassFolders,
    /// Images next to per-image `.xml` (VOC-style) or `.json` annotations.
    AnnotatedFlat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub root: PathBuf,
    pub layout: Layout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussianConfig {
    pub octaves: usize,
    pub sublevels: usize,
    pub base_sigma: f64,
}

impl Default for GaussianConfig {
    fn default() -> Self {
        GaussianConfig { octaves: 4, sublevels: 3, base_sigma: 1.6 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectorConfig {
    pub kaze_threshold: f64,
    pub sift_contrast_threshold: f64,
    pub sift_edge_ratio: f64,
    pub rotation_invariant: bool,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            kaze_threshold: 0.001,
            sift_contrast_threshold: 0.03,
            sift_edge_ratio: 10.0,
            rotation_invariant: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BovwConfig {
    pub vocab_sift: usize,
    pub vocab_kaze: usize,
    pub max_iters: usize,
    /// Per-kind cap on descriptors fed to k-means.
    pub max_descriptors: usize,
    /// Weight of the SIFT half of a fused vector.
    pub fusion_weight: f64,
}

impl Default for BovwConfig {
    fn default() -> Self {
        BovwConfig { vocab_sift: 256, vocab_kaze: 256, max_iters: 100, max_descriptors: 200_000, fusion_weight: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub kinds: Vec<ClassifierKind>,
    #[serde(rename = "C")]
    pub c: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig { kinds: vec![ClassifierKind::Mcm, ClassifierKind::Svm], c: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub n_train: Vec<usize>,
    pub test_cap: usize,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { n_train: vec![15, 30, 45, 60], test_cap: 25 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KosConfig {
    pub n_grid: Vec<f64>,
    pub beta: f64,
}

impl Default for KosConfig {
    fn default() -> Self {
        KosConfig { n_grid: (1..=10).map(|i| i as f64 * 10.0).collect(), beta: 0.1 }
    }
}

/// Every tunable of a run. Missing keys take their defaults; unknown keys
/// are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    /// Longer image side is downscaled to this before extraction; 0 disables.
    #[serde(default = "default_max_side")]
    pub max_image_side: usize,
    #[serde(default)]
    pub diffusion: DiffusionParams,
    #[serde(default)]
    pub gaussian: GaussianConfig,
    #[serde(default)]
    pub detector: DetectorConfig,
    /// Percentage of strongest keypoints per image kept for BoVW.
    #[serde(default = "default_top_percent")]
    pub top_percent: f64,
    #[serde(default)]
    pub bovw: BovwConfig,
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub split: SplitConfig,
    #[serde(default)]
    pub kos: KosConfig,
    /// Write measured wall-clock seconds into the report CSV. Off by default
    /// so that repeated runs produce identical files; the JSON report always
    /// carries them.
    #[serde(default)]
    pub report_timings: bool,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

fn default_max_side() -> usize {
    256
}

fn default_top_percent() -> f64 {
    100.0
}

/// The part of the configuration that determines extracted features.
#[derive(Serialize)]
struct ExtractionKey<'a> {
    format: u32,
    max_image_side: usize,
    diffusion: &'a DiffusionParams,
    gaussian: &'a GaussianConfig,
    detector: &'a DetectorConfig,
}

impl RunConfig {
    pub fn new(root: impl Into<PathBuf>, layout: Layout) -> RunConfig {
        RunConfig {
            dataset: DatasetConfig { root: root.into(), layout },
            seed: 0,
            cache_dir: default_cache_dir(),
            max_image_side: default_max_side(),
            diffusion: DiffusionParams::default(),
            gaussian: GaussianConfig::default(),
            detector: DetectorConfig::default(),
            top_percent: default_top_percent(),
            bovw: BovwConfig::default(),
            classifier: ClassifierConfig::default(),
            split: SplitConfig::default(),
            kos: KosConfig::default(),
            report_timings: false,
        }
    }

    pub fn from_json(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        RunConfig::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.diffusion.validate().map_err(|e| Error::Config(format!("diffusion: {e}")))?;
        let g = &self.gaussian;
        if g.octaves < 1 || g.sublevels < 3 || !(g.base_sigma > 0.0 && g.base_sigma.is_finite()) {
            return bad(format!("gaussian: need octaves >= 1, sublevels >= 3, base_sigma > 0 (got {g:?})"));
        }
        let d = &self.detector;
        if !(d.kaze_threshold >= 0.0) || !(d.sift_contrast_threshold >= 0.0) {
            return bad("detector thresholds must be >= 0".into());
        }
        if !(d.sift_edge_ratio > 0.0 && d.sift_edge_ratio.is_finite()) {
            return bad(format!("sift_edge_ratio must be positive, got {}", d.sift_edge_ratio));
        }
        if !(self.top_percent > 0.0 && self.top_percent <= 100.0) {
            return bad(format!("top_percent {} outside (0, 100]", self.top_percent));
        }
        let b = &self.bovw;
        if b.vocab_sift < 2 || b.vocab_kaze < 2 || b.max_iters < 1 || b.max_descriptors < 2 {
            return bad(format!("bovw: vocab sizes >= 2, max_iters >= 1 (got {b:?})"));
        }
        if !(0.0..=1.0).contains(&b.fusion_weight) {
            return bad(format!("fusion_weight {} outside [0, 1]", b.fusion_weight));
        }
        if self.classifier.kinds.is_empty() || !(self.classifier.c > 0.0 && self.classifier.c.is_finite()) {
            return bad("classifier: need at least one kind and C > 0".into());
        }
        if self.split.n_train.is_empty() || self.split.n_train.contains(&0) || self.split.test_cap == 0 {
            return bad("split: n_train values and test_cap must be positive".into());
        }
        if self.kos.n_grid.is_empty() || self.kos.n_grid.iter().any(|n| !(*n > 0.0 && *n <= 100.0)) {
            return bad("kos: n_grid values must lie in (0, 100]".into());
        }
        if !(self.kos.beta > 0.0 && self.kos.beta < 1.0) {
            return bad(format!("kos: beta {} outside (0, 1)", self.kos.beta));
        }
        Ok(())
    }

    /// Stable 64-bit digest of everything that affects extracted features.
    pub fn extraction_hash(&self) -> u64 {
        let key = ExtractionKey {
            format: super::cache::CACHE_VERSION,
            max_image_side: self.max_image_side,
            diffusion: &self.diffusion,
            gaussian: &self.gaussian,
            detector: &self.detector,
        };
        let bytes = serde_json::to_vec(&key).expect("key serializes");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"dataset": {"root": "data", "layout": "class_folders"}}"#;

    #[test]
    fn defaults_fill_missing_keys() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        assert_eq!(cfg, RunConfig::new("data", Layout::ClassFolders));
        assert_eq!(cfg.split.n_train, [15, 30, 45, 60]);
        assert_eq!(cfg.kos.n_grid.len(), 10);
    }

    #[test]
    fn unknown_keys_rejected_at_any_depth() {
        let top = r#"{"dataset": {"root": "d", "layout": "class_folders"}, "sed": 1}"#;
        assert!(matches!(RunConfig::from_json(top), Err(Error::Config(_))));
        let nested = r#"{"dataset": {"root": "d", "layout": "class_folders"}, "bovw": {"vocab": 3}}"#;
        assert!(RunConfig::from_json(nested).is_err());
        let diff = r#"{"dataset": {"root": "d", "layout": "class_folders"}, "diffusion": {"k": 1}}"#;
        assert!(RunConfig::from_json(diff).is_err());
    }

    #[test]
    fn range_rules_enforced() {
        let mut cfg = RunConfig::new("d", Layout::ClassFolders);
        cfg.bovw.fusion_weight = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::new("d", Layout::ClassFolders);
        cfg.diffusion.step_tau = 0.3;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::new("d", Layout::ClassFolders);
        cfg.kos.beta = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::new("d", Layout::ClassFolders);
        cfg.gaussian.sublevels = 2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig::new("x/y", Layout::AnnotatedFlat);
        cfg.classifier.c = 3.5;
        cfg.seed = 99;
        assert_eq!(RunConfig::from_json(&cfg.to_json()).unwrap(), cfg);
        assert!(cfg.to_json().contains("\"C\": 3.5"));
    }

    #[test]
    fn hash_tracks_only_extraction_settings() {
        let a = RunConfig::new("d", Layout::ClassFolders);
        let mut b = a.clone();
        b.seed = 7;
        b.classifier.c = 10.0;
        b.cache_dir = "elsewhere".into();
        assert_eq!(a.extraction_hash(), b.extraction_hash());
        b.detector.kaze_threshold = 0.002;
        assert_ne!(a.extraction_hash(), b.extraction_hash());
        let mut c = a.clone();
        c.diffusion.k_percentile = 60.0;
        assert_ne!(a.extraction_hash(), c.extraction_hash());
    }
}
