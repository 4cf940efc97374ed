use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::Layout;
use crate::error::{Error, Result};
use crate::kosmetrics::{Annotation, BoundingBox, LabeledBox};

const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

#[derive(Clone, Debug, PartialEq)]
pub struct ImageEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub id: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassEntry {
    pub name: String,
    pub images: Vec<ImageEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub layout: Layout,
    pub classes: Vec<ClassEntry>,
    /// Keyed by image id; only populated for annotated layouts.
    pub annotations: BTreeMap<String, Annotation>,
}

impl DatasetManifest {
    pub fn images(&self) -> impl Iterator<Item = &ImageEntry> {
        self.classes.iter().flat_map(|c| c.images.iter())
    }

    pub fn n_images(&self) -> usize {
        self.classes.iter().map(|c| c.images.len()).sum()
    }
}

fn is_image(p: &Path) -> bool {
    p.is_file()
        && p.extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    out.sort();
    Ok(out)
}

fn image_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

/// Scans `root`. Classes and files come out in lexicographic order.
pub fn load_dataset(root: &Path, layout: Layout) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::MissingRoot(root.to_path_buf()));
    }
    let mut classes = Vec::new();
    let mut annotations = BTreeMap::new();
    match layout {
        Layout::ClassFolders => {
            for dir in sorted_entries(root)?.into_iter().filter(|p| p.is_dir()) {
                let images: Vec<ImageEntry> = sorted_entries(&dir)?
                    .into_iter()
                    .filter(|p| is_image(p))
                    .map(|p| ImageEntry { id: image_id(root, &p), path: p })
                    .collect();
                if images.is_empty() {
                    return Err(Error::EmptyClass(dir));
                }
                let name = dir.file_name().unwrap().to_string_lossy().into_owned();
                classes.push(ClassEntry { name, images });
            }
        }
        Layout::AnnotatedFlat => {
            let mut images = Vec::new();
            for p in sorted_entries(root)?.into_iter().filter(|p| is_image(p)) {
                let id = image_id(root, &p);
                let xml = p.with_extension("xml");
                let json = p.with_extension("json");
                let ann = if xml.is_file() {
                    Some(read_voc_xml(&xml, &id)?)
                } else if json.is_file() {
                    Some(read_json_annotation(&json, &id)?)
                } else {
                    None
                };
                if let Some(a) = ann {
                    annotations.insert(id.clone(), a);
                }
                images.push(ImageEntry { id, path: p });
            }
            if images.is_empty() {
                return Err(Error::EmptyClass(root.to_path_buf()));
            }
            classes.push(ClassEntry { name: "images".into(), images });
        }
    }
    Ok(DatasetManifest { root: root.to_path_buf(), layout, classes, annotations })
}

fn unreadable(path: &Path, reason: impl ToString) -> Error {
    Error::UnreadableAnnotation { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Reads `object/name` and `object/bndbox/{xmin,ymin,xmax,ymax}`; everything
/// else in the file is ignored. Coordinates are taken as given.
pub fn read_voc_xml(path: &Path, image_id: &str) -> Result<Annotation> {
    let text = std::fs::read_to_string(path)?;
    parse_voc_xml(&text, image_id).map_err(|e| unreadable(path, e))
}

fn child<'a, 'i>(n: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    n.children().find(|c| c.has_tag_name(tag))
}

pub fn parse_voc_xml(text: &str, image_id: &str) -> std::result::Result<Annotation, String> {
    let doc = roxmltree::Document::parse(text).map_err(|e| e.to_string())?;
    let mut boxes = Vec::new();
    for obj in doc.root_element().children().filter(|n| n.has_tag_name("object")) {
        let label = child(obj, "name").and_then(|n| n.text()).unwrap_or("").trim().to_string();
        let bb = child(obj, "bndbox").ok_or("object without bndbox")?;
        let coord = |tag: &str| -> std::result::Result<f64, String> {
            let t = child(bb, tag).and_then(|n| n.text()).ok_or(format!("missing {tag}"))?;
            t.trim().parse::<f64>().map_err(|e| format!("{tag}: {e}"))
        };
        let bbox = BoundingBox::new(coord("xmin")?, coord("ymin")?, coord("xmax")?, coord("ymax")?).map_err(|e| e.to_string())?;
        boxes.push(LabeledBox { label, bbox });
    }
    Ok(Annotation { image_id: image_id.to_string(), boxes })
}

/// VOC-shaped JSON annotation: `{"objects": [{"name", "bndbox": {...}}]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonAnnotation {
    pub objects: Vec<JsonObject>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonObject {
    pub name: String,
    pub bndbox: JsonBox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JsonBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

pub fn read_json_annotation(path: &Path, image_id: &str) -> Result<Annotation> {
    let text = std::fs::read_to_string(path)?;
    let parsed: JsonAnnotation = serde_json::from_str(&text).map_err(|e| unreadable(path, e))?;
    let mut boxes = Vec::with_capacity(parsed.objects.len());
    for o in parsed.objects {
        let b = o.bndbox;
        let bbox = BoundingBox::new(b.xmin, b.ymin, b.xmax, b.ymax).map_err(|e| unreadable(path, e))?;
        boxes.push(LabeledBox { label: o.name, bbox });
    }
    Ok(Annotation { image_id: image_id.to_string(), boxes })
}

/// Minimal VOC-style XML for `ann`, readable by [`parse_voc_xml`].
pub fn write_voc_xml(ann: &Annotation, filename: &str, width: usize, height: usize) -> String {
    let mut s = format!(
        "<annotation>\n  <filename>{filename}</filename>\n  <size><width>{width}</width><height>{height}</height><depth>1</depth></size>\n"
    );
    for b in &ann.boxes {
        let bb = &b.bbox;
        s += &format!(
            "  <object>\n    <name>{}</name>\n    <bndbox><xmin>{}</xmin><ymin>{}</ymin><xmax>{}</xmax><ymax>{}</ymax></bndbox>\n  </object>\n",
            b.label, bb.xmin, bb.ymin, bb.xmax, bb.ymax
        );
    }
    s + "</annotation>\n"
}

/// Train and test image ids for one class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassSplit {
    pub class: String,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Split {
    pub n_train_per_class: usize,
    pub seed: u64,
    pub classes: Vec<ClassSplit>,
}

impl Split {
    pub fn train_ids(&self) -> impl Iterator<Item = (usize, &str)> {
        self.classes.iter().enumerate().flat_map(|(c, s)| s.train.iter().map(move |id| (c, id.as_str())))
    }

    pub fn test_ids(&self) -> impl Iterator<Item = (usize, &str)> {
        self.classes.iter().enumerate().flat_map(|(c, s)| s.test.iter().map(move |id| (c, id.as_str())))
    }
}

/// Per class: seeded shuffle, first `n_train` to train, up to `test_cap` of
/// the rest to test. Each class gets its own stream derived from `seed`.
pub fn make_split(m: &DatasetManifest, n_train: usize, test_cap: usize, seed: u64) -> Result<Split> {
    let mut classes = Vec::with_capacity(m.classes.len());
    for (ci, class) in m.classes.iter().enumerate() {
        if class.images.len() <= n_train {
            return Err(Error::ClassTooSmall { class: class.name.clone(), available: class.images.len(), needed: n_train + 1 });
        }
        let mut ids: Vec<String> = class.images.iter().map(|e| e.id.clone()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(ci as u64);
        ids.shuffle(&mut rng);
        let test = ids[n_train..].iter().take(test_cap).cloned().collect();
        ids.truncate(n_train);
        classes.push(ClassSplit { class: class.name.clone(), train: ids, test });
    }
    Ok(Split { n_train_per_class: n_train, seed, classes })
}
