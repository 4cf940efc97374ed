//! `siftkaze` command-line driver.

mod table;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use siftkaze::bovw::{encode, Codebook};
use siftkaze::classify::{predict_ovo, train_ovo, ClassifierKind, LabeledSet, ModelRecord};
use siftkaze::harness::bench::{image_vector, top_descriptors, train_codebook};
use siftkaze::harness::kos::write_curve_files;
use siftkaze::harness::synth::{write_boundary_corpus, write_class_corpus};
use siftkaze::harness::{
    accuracy, extract_and_cache, load_dataset, load_features, make_split, run_benchmark, run_kos_experiment, FeatureSet,
    RunConfig,
};
use siftkaze::keypoints::FeatureKind;

#[derive(Parser)]
#[command(name = "siftkaze", version, about = "Nonlinear vs Gaussian keypoints, overlap curves and BoVW classification benchmarks")]
struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured feature cache directory.
    #[arg(long, global = true)]
    cache_dir: Option<PathBuf>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect and describe keypoints for every image, filling the cache.
    Extract,
    /// Top-N% keypoint overlap curves on an annotated dataset.
    KosCurve,
    /// Build one visual-word codebook from a training split.
    Codebook {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        n_train: Option<usize>,
    },
    /// Word histograms of every image under a codebook, as CSV.
    Encode {
        #[arg(long)]
        codebook: PathBuf,
    },
    /// Train a one-vs-one ensemble on a training split and save it as JSON.
    Train {
        #[arg(long, value_enum)]
        features: Features,
        #[arg(long, value_enum)]
        classifier: Classifier,
        #[arg(long)]
        n_train: Option<usize>,
        /// Reuse a saved SIFT codebook instead of building one.
        #[arg(long)]
        sift_codebook: Option<PathBuf>,
        /// Reuse a saved KAZE codebook instead of building one.
        #[arg(long)]
        kaze_codebook: Option<PathBuf>,
    },
    /// Full grid: every n_train x feature set x classifier.
    Bench,
    /// Print the accuracy tables of a report CSV.
    Report {
        #[arg(long)]
        input: PathBuf,
    },
    /// Write a synthetic corpus.
    Synth {
        #[arg(value_enum)]
        corpus: Corpus,
        /// Images (boundary corpus) or classes (class corpus).
        #[arg(long, default_value_t = 20)]
        count: usize,
        /// Images per class (class corpus).
        #[arg(long, default_value_t = 40)]
        per_class: usize,
        #[arg(long, default_value_t = 128)]
        size: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Sift,
    Kaze,
}

impl From<Kind> for FeatureKind {
    fn from(k: Kind) -> FeatureKind {
        match k {
            Kind::Sift => FeatureKind::Sift,
            Kind::Kaze => FeatureKind::Kaze,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    Sift,
    Kaze,
    Fused,
}

impl From<Features> for FeatureSet {
    fn from(f: Features) -> FeatureSet {
        match f {
            Features::Sift => FeatureSet::Sift,
            Features::Kaze => FeatureSet::Kaze,
            Features::Fused => FeatureSet::Fused,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Classifier {
    Mcm,
    Svm,
}

impl From<Classifier> for ClassifierKind {
    fn from(c: Classifier) -> ClassifierKind {
        match c {
            Classifier::Mcm => ClassifierKind::Mcm,
            Classifier::Svm => ClassifierKind::Svm,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Corpus {
    Boundary,
    Classes,
}

/// Saved ensemble: one record per class pair plus what is needed to encode
/// new images consistently.
#[derive(Serialize)]
struct ModelBundle {
    feature_set: &'static str,
    classifier: &'static str,
    n_train: usize,
    fusion_weight: f64,
    top_percent: f64,
    class_names: Vec<String>,
    train_accuracy: f64,
    test_accuracy: Option<f64>,
    models: Vec<ModelRecord>,
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::Extract => extract(&cli),
        Command::KosCurve => kos_curve(&cli),
        Command::Codebook { kind, n_train } => codebook(&cli, (*kind).into(), *n_train),
        Command::Encode { codebook } => encode_all(&cli, codebook),
        Command::Train { features, classifier, n_train, sift_codebook, kaze_codebook } => train(
            &cli,
            (*features).into(),
            (*classifier).into(),
            *n_train,
            [sift_codebook.as_deref(), kaze_codebook.as_deref()],
        ),
        Command::Bench => bench(&cli),
        Command::Report { input } => report(&cli, input),
        Command::Synth { corpus, count, per_class, size } => synth(&cli, *corpus, *count, *per_class, *size),
    }
}

fn config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().context("this command needs --config <file>")?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(dir) = &cli.cache_dir {
        cfg.cache_dir = dir.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_path(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

#[derive(Serialize)]
struct ExtractSummary {
    config_hash: String,
    images: usize,
    computed: usize,
    reused: usize,
    keypoints: BTreeMap<&'static str, usize>,
    excluded: Vec<(String, String)>,
}

fn extract(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let m = load_dataset(&cfg.dataset.root, cfg.dataset.layout)?;
    let store = extract_and_cache(&m, &cfg)?;
    let mut keypoints = BTreeMap::new();
    for kind in [FeatureKind::Sift, FeatureKind::Kaze] {
        keypoints.insert(kind.name(), store.features.values().map(|f| f.of_kind(kind).len()).sum());
    }
    let summary = ExtractSummary {
        config_hash: format!("{:016x}", store.config_hash),
        images: m.n_images(),
        computed: store.computed,
        reused: store.reused,
        keypoints,
        excluded: store.excluded.clone(),
    };
    println!(
        "{} images: {} extracted, {} from cache, {} excluded; {} sift and {} kaze keypoints",
        summary.images,
        summary.computed,
        summary.reused,
        summary.excluded.len(),
        summary.keypoints["sift"],
        summary.keypoints["kaze"]
    );
    for (id, reason) in &summary.excluded {
        println!("  excluded {id}: {reason}");
    }
    if let Some(path) = &cli.out {
        serde_json::to_writer_pretty(create(path)?, &summary)?;
    }
    Ok(())
}

fn kos_curve(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let result = run_kos_experiment(&cfg)?;
    let dir = out_path(cli, "curves");
    let paths = write_curve_files(&result, &dir)?;
    print!("{}", table::curves(&result));
    if result.skipped_sift + result.skipped_kaze > 0 {
        println!("images without keypoints: sift {}, kaze {}", result.skipped_sift, result.skipped_kaze);
    }
    for p in paths {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn first_n_train(cfg: &RunConfig, n_train: Option<usize>) -> usize {
    n_train.unwrap_or(cfg.split.n_train[0])
}

fn codebook(cli: &Cli, kind: FeatureKind, n_train: Option<usize>) -> Result<()> {
    let cfg = config(cli)?;
    let (_, usable, store) = load_features(&cfg)?;
    let split = make_split(&usable, first_n_train(&cfg, n_train), cfg.split.test_cap, cfg.seed)?;
    let ids: Vec<&str> = split.train_ids().map(|(_, id)| id).collect();
    let (cb, sources) = train_codebook(&store, &ids, kind, &cfg)?;
    let path = out_path(cli, &format!("codebook_{}.bvw", kind.name()));
    let mut w = create(&path)?;
    cb.write_to(&mut w)?;
    w.flush()?;
    println!(
        "{} codebook: {} words of dimension {}, built from {} training images, inertia {:.4}; wrote {}",
        kind.name(),
        cb.len(),
        cb.dim(),
        sources.len(),
        cb.inertia.unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn read_codebook(path: &Path) -> Result<Codebook> {
    let mut f = std::io::BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
    Ok(Codebook::read_from(&mut f).with_context(|| format!("reading {}", path.display()))?)
}

fn encode_all(cli: &Cli, codebook: &Path) -> Result<()> {
    let cfg = config(cli)?;
    let cb = read_codebook(codebook)?;
    let (_, usable, store) = load_features(&cfg)?;
    let sink: Box<dyn Write> = match &cli.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::Writer::from_writer(sink);
    let mut header = vec!["image_id".to_string(), "class".to_string()];
    header.extend((0..cb.len()).map(|i| format!("w{i}")));
    w.write_record(&header)?;
    for class in &usable.classes {
        for e in &class.images {
            let f = store.get(&e.id).context("feature store is missing an image")?;
            let h = encode(&top_descriptors(f, cb.kind, cfg.top_percent), &cb)?;
            let mut row = vec![e.id.clone(), class.name.clone()];
            row.extend(h.values.iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn train(
    cli: &Cli,
    set: FeatureSet,
    kind: ClassifierKind,
    n_train: Option<usize>,
    saved: [Option<&Path>; 2],
) -> Result<()> {
    let cfg = config(cli)?;
    let (_, usable, store) = load_features(&cfg)?;
    let split = make_split(&usable, first_n_train(&cfg, n_train), cfg.split.test_cap, cfg.seed)?;
    let train_ids: Vec<(usize, &str)> = split.train_ids().collect();
    let ids: Vec<&str> = train_ids.iter().map(|(_, id)| *id).collect();

    let needs = |k: FeatureKind| match set {
        FeatureSet::Fused => true,
        FeatureSet::Sift => k == FeatureKind::Sift,
        FeatureSet::Kaze => k == FeatureKind::Kaze,
    };
    let mut books: [Option<Codebook>; 2] = [None, None];
    for (slot, (kind, path)) in [FeatureKind::Sift, FeatureKind::Kaze].into_iter().zip(saved).enumerate() {
        if !needs(kind) {
            continue;
        }
        let cb = match path {
            Some(p) => read_codebook(p)?,
            None => train_codebook(&store, &ids, kind, &cfg)?.0,
        };
        if cb.kind != kind {
            bail!("expected a {} codebook, got {}", kind.name(), cb.kind.name());
        }
        books[slot] = Some(cb);
    }
    let vectors = |ids: &[(usize, &str)]| -> Result<(Vec<Vec<f64>>, Vec<i32>)> {
        let mut xs = Vec::new();
        for (_, id) in ids {
            let f = store.get(id).context("feature store is missing an image")?;
            xs.push(image_vector(f, set, books[0].as_ref(), books[1].as_ref(), &cfg)?);
        }
        Ok((xs, ids.iter().map(|(c, _)| *c as i32).collect()))
    };
    let (xs, ys) = vectors(&train_ids)?;
    let ensemble = train_ovo(&LabeledSet::new(xs.clone(), ys.clone())?, kind, cfg.classifier.c)?;
    let predict = |xs: &[Vec<f64>]| xs.iter().map(|x| predict_ovo(&ensemble, x)).collect::<siftkaze::Result<Vec<_>>>();
    let train_accuracy = accuracy(&predict(&xs)?, &ys)?;
    let test_ids: Vec<(usize, &str)> = split.test_ids().collect();
    let test_accuracy = if test_ids.is_empty() {
        None
    } else {
        let (tx, ty) = vectors(&test_ids)?;
        Some(accuracy(&predict(&tx)?, &ty)?)
    };

    let bundle = ModelBundle {
        feature_set: set.name(),
        classifier: kind.name(),
        n_train: split.n_train_per_class,
        fusion_weight: cfg.bovw.fusion_weight,
        top_percent: cfg.top_percent,
        class_names: split.classes.iter().map(|c| c.class.clone()).collect(),
        train_accuracy,
        test_accuracy,
        models: ensemble.records(),
    };
    let path = out_path(cli, "model.json");
    let mut w = create(&path)?;
    serde_json::to_writer_pretty(&mut w, &bundle)?;
    w.flush()?;
    println!(
        "{}/{}: {} pairwise models, {} support vectors, train accuracy {:.3}{}; wrote {}",
        set.name(),
        kind.name(),
        bundle.models.len(),
        ensemble.support_vectors_total(),
        train_accuracy,
        test_accuracy.map(|a| format!(", test accuracy {a:.3}")).unwrap_or_default(),
        path.display()
    );
    Ok(())
}

fn bench(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    let report = run_benchmark(&cfg)?;
    let dir = out_path(cli, "results");
    std::fs::create_dir_all(&dir)?;
    let csv_path = dir.join("report.csv");
    let mut w = create(&csv_path)?;
    report.write_csv(&mut w)?;
    w.flush()?;
    std::fs::write(dir.join("report.json"), report.to_json())?;
    let rows: Vec<table::Row> = report
        .cells
        .iter()
        .map(|c| table::Row {
            feature_set: c.feature_set.name().to_string(),
            classifier: c.classifier.name().to_string(),
            n_train: c.n_train,
            accuracy: c.accuracy,
            support_vectors_total: c.support_vectors_total,
        })
        .collect();
    print!("{}", table::accuracy(&rows));
    for (id, reason) in &report.excluded {
        println!("excluded {id}: {reason}");
    }
    for c in report.cells.iter().filter(|c| c.error.is_some()) {
        println!("failed {}/{}/{}: {}", c.feature_set.name(), c.classifier.name(), c.n_train, c.error.as_deref().unwrap_or(""));
    }
    println!("wrote {} and {}", csv_path.display(), dir.join("report.json").display());
    Ok(())
}

fn report(cli: &Cli, input: &Path) -> Result<()> {
    let mut r = csv::Reader::from_path(input).with_context(|| format!("reading {}", input.display()))?;
    let rows = r.deserialize().collect::<Result<Vec<table::Row>, _>>()?;
    if rows.is_empty() {
        bail!("{} has no rows", input.display());
    }
    let text = table::accuracy(&rows);
    print!("{text}");
    if let Some(path) = &cli.out {
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn synth(cli: &Cli, corpus: Corpus, count: usize, per_class: usize, size: usize) -> Result<()> {
    let dir = cli.out.as_ref().context("synth needs --out <dir>")?;
    let seed = cli.seed.unwrap_or(0);
    match corpus {
        Corpus::Boundary => write_boundary_corpus(dir, count, size, seed)?,
        Corpus::Classes => write_class_corpus(dir, count, per_class, size, seed)?,
    }
    println!("wrote {} corpus to {}", if matches!(corpus, Corpus::Boundary) { "boundary" } else { "class" }, dir.display());
    Ok(())
}
