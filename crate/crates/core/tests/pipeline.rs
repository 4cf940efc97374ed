use std::path::Path;

use siftkaze::harness::config::Layout;
use siftkaze::harness::kos::write_curve_files;
use siftkaze::harness::synth::{boundary_corpus, write_boundary_corpus, write_class_corpus};
use siftkaze::harness::{extract_and_cache, load_dataset, make_split, run_benchmark, run_kos_experiment, RunConfig};

fn small_config(data: &Path, cache: &Path) -> RunConfig {
    let mut cfg = RunConfig::new(data, Layout::ClassFolders);
    cfg.cache_dir = cache.to_path_buf();
    cfg.seed = 3;
    cfg.split.n_train = vec![3];
    cfg.split.test_cap = 3;
    cfg.bovw.vocab_sift = 8;
    cfg.bovw.vocab_kaze = 8;
    cfg
}

fn files_under(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            out.extend(files_under(&p));
        } else {
            out.push((p.display().to_string(), std::fs::read(&p).unwrap()));
        }
    }
    out.sort();
    out
}

#[test]
fn cache_is_reused_and_rewritten_identically() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_class_corpus(&data, 2, 4, 64, 1).unwrap();
    let cfg = small_config(&data, &dir.path().join("cache"));
    let m = load_dataset(&data, Layout::ClassFolders).unwrap();

    let first = extract_and_cache(&m, &cfg).unwrap();
    assert_eq!((first.computed, first.reused), (8, 0));
    let snapshot = files_under(&cfg.cache_dir);
    assert_eq!(snapshot.len(), 8);

    let second = extract_and_cache(&m, &cfg).unwrap();
    assert_eq!((second.computed, second.reused), (0, 8));
    assert_eq!(first.features, second.features);
    assert_eq!(files_under(&cfg.cache_dir), snapshot);

    // a fresh extraction into another directory writes the same bytes
    let mut other = cfg.clone();
    other.cache_dir = dir.path().join("cache2");
    extract_and_cache(&m, &other).unwrap();
    let strip = |v: Vec<(String, Vec<u8>)>| v.into_iter().map(|(_, b)| b).collect::<Vec<_>>();
    assert_eq!(strip(files_under(&other.cache_dir)), strip(snapshot));
}

#[test]
fn changed_extraction_settings_miss_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_class_corpus(&data, 2, 3, 64, 2).unwrap();
    let mut cfg = small_config(&data, &dir.path().join("cache"));
    let m = load_dataset(&data, Layout::ClassFolders).unwrap();
    extract_and_cache(&m, &cfg).unwrap();

    cfg.classifier.c = 5.0;
    assert_eq!(extract_and_cache(&m, &cfg).unwrap().computed, 0);
    cfg.detector.kaze_threshold = 0.002;
    assert_eq!(extract_and_cache(&m, &cfg).unwrap().computed, 6);
}

#[test]
fn corrupt_cache_record_is_recomputed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_class_corpus(&data, 2, 2, 64, 3).unwrap();
    let cfg = small_config(&data, &dir.path().join("cache"));
    let m = load_dataset(&data, Layout::ClassFolders).unwrap();
    let first = extract_and_cache(&m, &cfg).unwrap();
    let (victim, _) = files_under(&cfg.cache_dir).remove(0);
    std::fs::write(&victim, b"KFC1 truncated").unwrap();
    let second = extract_and_cache(&m, &cfg).unwrap();
    assert_eq!(second.computed, 1);
    assert_eq!(first.features, second.features);
}

#[test]
fn undecodable_image_is_excluded_and_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_class_corpus(&data, 3, 5, 64, 4).unwrap();
    std::fs::write(data.join("class_01").join("img_999.png"), b"not a png at all").unwrap();
    let cfg = small_config(&data, &dir.path().join("cache"));
    let report = run_benchmark(&cfg).unwrap();

    assert_eq!(report.excluded.len(), 1);
    assert!(report.excluded[0].0.contains("img_999"));
    assert!(report.cells.iter().all(|c| c.error.is_none() && c.accuracy.is_some()));
    assert!(report.to_json().contains("img_999"));
    for audit in &report.audits {
        assert!(audit.test_ids.iter().chain(&audit.classifier_train_ids).all(|id| !id.contains("img_999")));
    }
}

#[test]
fn codebooks_and_classifiers_see_only_training_images() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_class_corpus(&data, 3, 6, 64, 5).unwrap();
    let mut cfg = small_config(&data, &dir.path().join("cache"));
    cfg.split.n_train = vec![2, 4];
    let report = run_benchmark(&cfg).unwrap();
    let m = load_dataset(&data, Layout::ClassFolders).unwrap();

    assert_eq!(report.audits.len(), 2);
    for audit in &report.audits {
        let split = make_split(&m, audit.n_train, cfg.split.test_cap, cfg.seed).unwrap();
        assert!(audit.is_clean(&split));
        let mut expected_test: Vec<String> = split.test_ids().map(|(_, id)| id.to_string()).collect();
        let mut got_test = audit.test_ids.clone();
        expected_test.sort();
        got_test.sort();
        assert_eq!(got_test, expected_test);
        assert_eq!(audit.classifier_train_ids.len(), 3 * audit.n_train);
        assert!(!audit.codebook_sources.is_empty());
    }
}

#[test]
fn too_few_images_fail_only_that_row() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    write_class_corpus(&data, 2, 4, 64, 6).unwrap();
    let mut cfg = small_config(&data, &dir.path().join("cache"));
    cfg.split.n_train = vec![2, 4];
    let report = run_benchmark(&cfg).unwrap();
    let (ok, failed): (Vec<_>, Vec<_>) = report.cells.iter().partition(|c| c.n_train == 2);
    assert!(ok.iter().all(|c| c.accuracy.is_some()));
    assert!(failed.iter().all(|c| c.accuracy.is_none() && c.error.is_some()));
    let mut csv = Vec::new();
    report.write_csv(&mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    assert!(text.starts_with("feature_set,classifier,n_train,accuracy,support_vectors_total,train_seconds,test_seconds\n"));
    assert!(text.lines().any(|l| l.starts_with("fused,mcm,4,,,")));
}

#[test]
fn annotated_corpus_round_trips_and_yields_curves() {
    let dir = tempfile::tempdir().unwrap();
    write_boundary_corpus(dir.path(), 3, 96, 9).unwrap();
    let m = load_dataset(dir.path(), Layout::AnnotatedFlat).unwrap();
    assert_eq!(m.n_images(), 3);
    for (_, ann) in boundary_corpus(3, 96, 9) {
        let read: Vec<_> = m.annotations[&ann.image_id].boxes.iter().map(|b| b.bbox).collect();
        let written: Vec<_> = ann.boxes.iter().map(|b| b.bbox).collect();
        assert_eq!(read.len(), written.len());
        for (r, w) in read.iter().zip(&written) {
            for (a, b) in [(r.xmin, w.xmin), (r.ymin, w.ymin), (r.xmax, w.xmax), (r.ymax, w.ymax)] {
                assert!((a - b).abs() < 1e-6, "{r:?} vs {w:?}");
            }
        }
    }

    let mut cfg = RunConfig::new(dir.path(), Layout::AnnotatedFlat);
    cfg.kos.n_grid = vec![50.0, 100.0];
    let result = run_kos_experiment(&cfg).unwrap();
    let out = dir.path().join("curves");
    let paths = write_curve_files(&result, &out).unwrap();
    for (path, mode) in paths.iter().zip(["full_box", "band"]) {
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "n_percent,mkos,detector,mode,beta");
        assert_eq!(lines.len(), 1 + 2 * 2);
        assert!(lines[1..].iter().all(|l| l.contains(mode)));
    }
}

#[test]
fn trivially_separable_classes_score_perfectly() {
    use siftkaze::image::GrayImage;
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    for (class, dots) in [("square", false), ("dots", true)] {
        std::fs::create_dir_all(data.join(class)).unwrap();
        for i in 0..12 {
            let shift = i as f64 * 1.7;
            let img = GrayImage::from_fn(64, 64, |x, y| {
                let (x, y) = (x as f64 + shift, y as f64 + 0.5 * shift);
                if dots {
                    let (dx, dy) = ((x % 12.0) - 6.0, (y % 12.0) - 6.0);
                    0.2 + 0.6 * (-(dx * dx + dy * dy) / 8.0).exp()
                } else if (16.0..48.0).contains(&(x - 0.5 * shift)) && (14.0..46.0).contains(&y) {
                    0.8
                } else {
                    0.3
                }
            })
            .unwrap();
            img.save_png(&data.join(class).join(format!("{i}.png"))).unwrap();
        }
    }
    let mut cfg = small_config(&data, &dir.path().join("cache"));
    cfg.split.n_train = vec![9];
    let report = run_benchmark(&cfg).unwrap();
    assert_eq!(report.cells.len(), 6);
    for c in &report.cells {
        assert_eq!(c.accuracy, Some(1.0), "{:?} {:?}", c.feature_set, c.classifier);
        let rows: Vec<usize> = c.confusion.iter().map(|r| r.iter().sum()).collect();
        assert_eq!(rows, [3, 3]);
    }
}
