//! `KFC1` per-image descriptor records, namespaced by the extraction hash.
//!
//! Layout, all little-endian: magic `KFC1`, u32 version, u64 config hash,
//! u32 id length, UTF-8 id, u32 SIFT count, u32 KAZE count, then every SIFT
//! record followed by every KAZE record. A record is f32 x, y, sigma,
//! response, u8 kind, u32 descriptor length and that many f32 values.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::dataset::DatasetManifest;
use super::extract::{extract_features, ImageFeatures};
use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::keypoints::{Descriptor, FeatureKind, Keypoint};

pub const CACHE_MAGIC: &[u8; 4] = b"KFC1";
pub const CACHE_VERSION: u32 = 1;

pub fn write_record(w: &mut impl Write, f: &ImageFeatures, config_hash: u64) -> Result<()> {
    w.write_all(CACHE_MAGIC)?;
    w.write_all(&CACHE_VERSION.to_le_bytes())?;
    w.write_all(&config_hash.to_le_bytes())?;
    w.write_all(&(f.image_id.len() as u32).to_le_bytes())?;
    w.write_all(f.image_id.as_bytes())?;
    w.write_all(&(f.sift.len() as u32).to_le_bytes())?;
    w.write_all(&(f.kaze.len() as u32).to_le_bytes())?;
    for d in f.sift.iter().chain(&f.kaze) {
        let k = &d.keypoint;
        for v in [k.x, k.y, k.sigma, k.response] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[k.kind.as_byte()])?;
        w.write_all(&(d.values.len() as u32).to_le_bytes())?;
        for v in &d.values {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> Result<f32> {
    read_u32(r).map(f32::from_bits)
}

/// Parses one record and returns it with its config hash.
pub fn read_record(r: &mut impl Read) -> Result<(ImageFeatures, u64)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != CACHE_VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let mut b8 = [0u8; 8];
    r.read_exact(&mut b8)?;
    let hash = u64::from_le_bytes(b8);
    let id_len = read_u32(r)? as usize;
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id)?;
    let image_id = String::from_utf8(id).map_err(|_| Error::Cache("image id is not UTF-8".into()))?;
    let n_sift = read_u32(r)? as usize;
    let n_kaze = read_u32(r)? as usize;
    let mut read_kind = |expected: FeatureKind, n: usize| -> Result<Vec<Descriptor>> {
        let mut out = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            let (x, y, sigma, response) = (read_f32(r)?, read_f32(r)?, read_f32(r)?, read_f32(r)?);
            let mut kb = [0u8; 1];
            r.read_exact(&mut kb)?;
            let kind = FeatureKind::from_byte(kb[0]).ok_or_else(|| Error::Cache(format!("unknown kind byte {}", kb[0])))?;
            if kind != expected {
                return Err(Error::Cache(format!("{} record in {} section", kind.name(), expected.name())));
            }
            let len = read_u32(r)? as usize;
            if len != kind.descriptor_len() {
                return Err(Error::Cache(format!("descriptor length {len} for {}", kind.name())));
            }
            let values = (0..len).map(|_| read_f32(r)).collect::<Result<Vec<f32>>>()?;
            out.push(Descriptor { keypoint: Keypoint { x, y, sigma, response, kind }, values });
        }
        Ok(out)
    };
    let sift = read_kind(FeatureKind::Sift, n_sift)?;
    let kaze = read_kind(FeatureKind::Kaze, n_kaze)?;
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(Error::Cache("trailing bytes".into()));
    }
    Ok((ImageFeatures { image_id, sift, kaze }, hash))
}

/// `<cache_dir>/<hash>/<digest of id>.kfc`
pub fn record_path(cache_dir: &Path, config_hash: u64, image_id: &str) -> PathBuf {
    let digest = Sha256::digest(image_id.as_bytes());
    let name: String = digest[..8].iter().map(|b| format!("{b:02x}")).collect();
    cache_dir.join(format!("{config_hash:016x}")).join(format!("{name}.kfc"))
}

fn load_valid(path: &Path, config_hash: u64, image_id: &str) -> Option<ImageFeatures> {
    let bytes = std::fs::read(path).ok()?;
    match read_record(&mut bytes.as_slice()) {
        Ok((f, h)) if h == config_hash && f.image_id == image_id => Some(f),
        Ok(_) => None,
        Err(e) => {
            log::warn!("ignoring unreadable cache record {}: {e}", path.display());
            None
        }
    }
}

fn store(path: &Path, f: &ImageFeatures, config_hash: u64) -> Result<()> {
    let dir = path.parent().expect("record path has a parent");
    std::fs::create_dir_all(dir)?;
    let mut buf = Vec::new();
    write_record(&mut buf, f, config_hash)?;
    // write-then-rename so an interrupted run never leaves a partial record
    let tmp = path.with_extension(format!("kfc.{}.tmp", std::process::id()));
    std::fs::write(&tmp, &buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Features of every readable image, plus the images that were left out.
#[derive(Clone, Debug, Default)]
pub struct FeatureStore {
    pub config_hash: u64,
    pub features: BTreeMap<String, ImageFeatures>,
    /// `(image id, reason)` for images that failed to decode or extract.
    pub excluded: Vec<(String, String)>,
    pub computed: usize,
    pub reused: usize,
}

impl FeatureStore {
    pub fn get(&self, id: &str) -> Option<&ImageFeatures> {
        self.features.get(id)
    }
}

/// Loads cached records where present and valid, extracts the rest in
/// parallel and writes them back.
pub fn extract_and_cache(m: &DatasetManifest, cfg: &RunConfig) -> Result<FeatureStore> {
    let hash = cfg.extraction_hash();
    let max_side = (cfg.max_image_side > 0).then_some(cfg.max_image_side);
    let computed = AtomicUsize::new(0);
    let entries: Vec<_> = m.images().collect();
    let results: Vec<(String, std::result::Result<ImageFeatures, String>)> = entries
        .par_iter()
        .map(|e| {
            let path = record_path(&cfg.cache_dir, hash, &e.id);
            if let Some(f) = load_valid(&path, hash, &e.id) {
                return (e.id.clone(), Ok(f));
            }
            let run = || -> Result<ImageFeatures> {
                let (img, scale) = GrayImage::open_resized(&e.path, max_side)?;
                let f = extract_features(&e.id, &img, scale, cfg)?;
                store(&path, &f, hash)?;
                Ok(f)
            };
            computed.fetch_add(1, Ordering::Relaxed);
            (e.id.clone(), run().map_err(|err| err.to_string()))
        })
        .collect();

    let mut store = FeatureStore { config_hash: hash, ..FeatureStore::default() };
    for (id, r) in results {
        match r {
            Ok(f) => {
                store.features.insert(id, f);
            }
            Err(reason) => {
                log::warn!("excluding {id}: {reason}");
                store.excluded.push((id, reason));
            }
        }
    }
    store.computed = computed.into_inner();
    store.reused = m.n_images() - store.computed;
    log::info!("features: {} extracted, {} from cache, {} excluded", store.computed, store.reused, store.excluded.len());
    Ok(store)
}
