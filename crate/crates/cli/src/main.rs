//! `morphbench`: dataset validation, detector training, scoring, evaluation
//! and scenario batches.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{error, info, warn};

use morphbench::detector::Detector;
use morphbench::feature_store::{
    load_manifest, read_features, split_with_test_only, synth_benchmark, write_features, write_manifest, AttackFamily,
    BenchmarkSpec, DatasetHandle, Domain, FeatureMatrix, Filter, Label, SourceDataset, Split,
};
use morphbench::gmm::{train_oneclass_detector, CovarianceType};
use morphbench::io::atomic_write;
use morphbench::metrics::{deer, format_percent, ScoreSet};
use morphbench::scenario::{
    assemble, render_text, BatchConfig, DatasetFiles, Hyperparameters, ReportTable, SweepConfig, BATCH_VERSION,
};
use morphbench::svm::{train_supervised_detector, SvmParams};
use morphbench::{Error, ErrorKind};

#[derive(Parser)]
#[command(
    name = "morphbench",
    version,
    about = "Morphing attack detection on pre-extracted features"
)]
struct Cli {
    /// Diagnostics on standard error: error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: log::LevelFilter,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a manifest and feature file against each other.
    Validate { manifest: PathBuf, features: PathBuf },
    /// Assign identity-disjoint train/test splits.
    Split(SplitArgs),
    /// Train a detector on the training split.
    Train(TrainArgs),
    /// Score feature rows with a trained detector.
    Score(ScoreArgs),
    /// Compute the D-EER of a scores file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
    },
    /// Run a scenario batch file and write one report per scenario.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print saved JSON reports as text tables.
    Report { reports: Vec<PathBuf> },
    /// Write a synthetic benchmark and a batch file covering every scenario.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SplitArgs {
    manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    ratio: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output manifest; defaults to rewriting the input.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Sources placed entirely in the test split.
    #[arg(long, value_delimiter = ',')]
    test_only: Vec<SourceDataset>,
    /// Discard existing split assignments first.
    #[arg(long)]
    reassign: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Svm,
    Gmm,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 0.99)]
    pca_threshold: f64,
    /// SVM regularization.
    #[arg(long, default_value_t = 1.0)]
    c: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Restrict training to these sources.
    #[arg(long, value_delimiter = ',')]
    source: Vec<SourceDataset>,
    /// Attack families seen at training time; all when omitted.
    #[arg(long, value_delimiter = ',')]
    families: Vec<AttackFamily>,
    #[arg(long, default_value = "digital")]
    domain: Domain,
    /// Mixture component counts tried by model selection.
    #[arg(long, value_delimiter = ',')]
    k_grid: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    cov_types: Vec<CovarianceType>,
    #[arg(long, default_value_t = 4)]
    folds: usize,
    #[arg(long)]
    out: PathBuf,
    /// Where to write the model selection report (gmm only).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    /// Supplies labels and restricts scoring to the listed samples.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Only score samples of this split (needs --manifest).
    #[arg(long)]
    split: Option<Split>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "synthetic")]
    extractors: Vec<String>,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    n_bonafide: usize,
    #[arg(long, default_value_t = 60)]
    n_attack: usize,
    #[arg(long, default_value_t = 8.0)]
    separation: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Component grid written into the batch file.
    #[arg(long, value_delimiter = ',')]
    k_grid: Vec<usize>,
}

#[derive(Debug)]
enum Failure {
    Lib(Error),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Lib(e) if e.kind() == ErrorKind::Numerical => 3,
            _ => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Lib(e) => e.fmt(f),
            Failure::Data(m) => f.write_str(m),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().filter_level(cli.log_level).init();
    if let Ok(v) = std::env::var("MORPHBENCH_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    warn!("could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: MORPHBENCH_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(1);
            }
        }
    }
    let result = match cli.command {
        Command::Validate { manifest, features } => validate(&manifest, &features),
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Eval { scores } => eval(&scores),
        Command::Run { config, out } => run(&config, &out),
        Command::Report { reports } => report(&reports),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn load_handle(manifest: &Path, features: &Path) -> Result<DatasetHandle, Error> {
    DatasetHandle::new(load_manifest(manifest)?, read_features(features)?)
}

fn validate(manifest: &Path, features: &Path) -> Outcome {
    let h = load_handle(manifest, features)?;
    let entries = h.entries();
    let attacks = entries.iter().filter(|e| e.label == Label::Attack).count();
    let extractors: BTreeSet<&str> = entries.iter().map(|e| e.extractor.as_str()).collect();
    let unlisted = h.features().len() - entries.len();
    if unlisted > 0 {
        warn!("{unlisted} feature rows have no manifest entry");
    }
    println!(
        "ok: {} samples ({} bonafide, {} attack), dim {}, extractor {}",
        entries.len(),
        entries.len() - attacks,
        attacks,
        h.dim(),
        extractors.into_iter().collect::<Vec<_>>().join(",")
    );
    Ok(())
}

fn split(a: SplitArgs) -> Outcome {
    let mut entries = load_manifest(&a.manifest)?;
    if a.reassign {
        for e in &mut entries {
            e.split = Split::Unassigned;
        }
    }
    let test_only: BTreeSet<SourceDataset> = a.test_only.into_iter().collect();
    let entries = split_with_test_only(&entries, a.ratio, a.seed, &test_only)?;
    let train = entries.iter().filter(|e| e.split == Split::Train).count();
    write_manifest(&entries, a.out.as_deref().unwrap_or(&a.manifest))?;
    println!("train {train}, test {}", entries.len() - train);
    Ok(())
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Outcome {
    let mut s = serde_json::to_string_pretty(value).map_err(Error::from)?;
    s.push('\n');
    atomic_write(path, s.as_bytes())?;
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn train(a: TrainArgs) -> Outcome {
    let h = load_handle(&a.manifest, &a.features)?;
    let mut base = Filter::new().split(Split::Train).domain(a.domain);
    for s in &a.source {
        base = base.source(s.clone());
    }
    let bonafide = h.select_all(&[base.clone(), Filter::new().label(Label::Bonafide)]);
    let families = if a.families.is_empty() {
        AttackFamily::ALL.to_vec()
    } else {
        a.families.clone()
    };
    let attack = h.select_all(&[base, Filter::new().label(Label::Attack).families(families)]);
    if bonafide.is_empty() {
        return Err(Failure::Data("no bonafide samples in the training split".into()));
    }
    info!(
        "training on {} bonafide and {} attack samples",
        bonafide.len(),
        attack.len()
    );

    let hp = Hyperparameters::default();
    let (detector, training, selection) = match a.kind {
        Kind::Svm => {
            let train = DatasetHandle::merge(&[bonafide, attack])?;
            let params = SvmParams {
                c: a.c,
                ..hp.svm_params()
            };
            let d = train_supervised_detector(&train, &params, a.pca_threshold)?;
            (Detector::Supervised(d), train.entries().to_vec(), None)
        }
        Kind::Gmm => {
            let hp = Hyperparameters {
                k_grid: if a.k_grid.is_empty() {
                    hp.k_grid
                } else {
                    a.k_grid.clone()
                },
                cov_types: if a.cov_types.is_empty() {
                    hp.cov_types
                } else {
                    a.cov_types.clone()
                },
                folds: a.folds,
                ..hp
            };
            let (d, report) = train_oneclass_detector(&bonafide, &attack, a.pca_threshold, &hp.selection(a.seed))?;
            (Detector::OneClass(d), bonafide.entries().to_vec(), Some(report))
        }
    };
    let metadata = detector.metadata(&training);
    detector.save(&metadata, &a.out)?;
    write_json(&sidecar(&a.out), &metadata)?;
    match (&a.report, &selection) {
        (Some(path), Some(report)) => write_json(path, report)?,
        (Some(_), None) => warn!("--report ignored for svm detectors"),
        _ => {}
    }
    if let Some(r) = &selection {
        println!(
            "selected K={} {} ({} PCA components)",
            r.chosen_components, r.chosen_cov_type, metadata.n_components
        );
    } else {
        println!("trained svm ({} PCA components)", metadata.n_components);
    }
    Ok(())
}

fn score(a: ScoreArgs) -> Outcome {
    let (detector, _) = Detector::load(&a.model)?;
    let features = read_features(&a.features)?;
    let rows: Vec<(String, String, Vec<f32>)> = match &a.manifest {
        Some(m) => {
            let mut h = DatasetHandle::new(load_manifest(m)?, features)?;
            if let Some(s) = a.split {
                h = h.select(&Filter::new().split(s));
            }
            if let Some(e) = h.entries().iter().find(|e| e.extractor != detector.extractor_name()) {
                warn!(
                    "sample {} comes from extractor {:?}, the model was trained on {:?}",
                    e.sample_id,
                    e.extractor,
                    detector.extractor_name()
                );
            }
            h.entries()
                .iter()
                .map(|e| (e.sample_id.clone(), e.label.to_string(), h.features_of(e).to_vec()))
                .collect()
        }
        None => {
            if a.split.is_some() {
                return Err(Failure::Data("--split needs --manifest".into()));
            }
            score_rows(&features)
        }
    };
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let csv_err = |e: csv::Error| Failure::Data(format!("{}: {e}", a.out.display()));
    w.write_record(["sample_id", "label", "score"]).map_err(csv_err)?;
    for (id, label, x) in &rows {
        let x: Vec<f64> = x.iter().map(|&v| f64::from(v)).collect();
        let s = detector.score(&x)?;
        w.write_record([id.as_str(), label.as_str(), &s.to_string()])
            .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Data(e.to_string()))?;
    atomic_write(&a.out, &bytes)?;
    info!("scored {} samples", rows.len());
    Ok(())
}

fn score_rows(features: &FeatureMatrix) -> Vec<(String, String, Vec<f32>)> {
    (0..features.len())
        .map(|i| {
            (
                features.sample_ids()[i].clone(),
                String::new(),
                features.row(i).to_vec(),
            )
        })
        .collect()
}

fn eval(path: &Path) -> Outcome {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
    let headers = reader.headers().map_err(|e| Failure::Data(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["sample_id", "label", "score"] {
        return Err(Failure::Data(format!(
            "{}: expected header sample_id,label,score",
            path.display()
        )));
    }
    let mut set = ScoreSet::default();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let r = record.map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
        let bad = |m: String| Failure::Data(format!("{} line {line}: {m}", path.display()));
        let score: f64 = r[2].parse().map_err(|_| bad(format!("invalid score {:?}", &r[2])))?;
        match r[1].parse::<Label>().map_err(bad)? {
            Label::Bonafide => set.bonafide.push(score),
            Label::Attack => set.attack.push(score),
        }
    }
    let d = deer(&set)?;
    println!("D-EER: {}%", format_percent(d));
    info!("{} bonafide, {} attack scores", set.bonafide.len(), set.attack.len());
    Ok(())
}

fn run(config: &Path, out: &Path) -> Outcome {
    let batch = BatchConfig::load(config)?;
    let handles = batch.load_handles()?;
    let configs = batch.configs();
    info!("running {} configurations", configs.len());
    let results = morphbench::scenario::run_matrix(&configs, &handles);
    let mut tables = Vec::new();
    let mut worst: Option<Failure> = None;
    for (c, r) in configs.iter().zip(results) {
        match r {
            Ok(t) => tables.push(t),
            Err(e) => {
                error!("{} {} {}: {e}", c.scenario, c.train_source, c.extractor);
                let f = Failure::Lib(e);
                if worst.as_ref().is_none_or(|w| f.exit_code() > w.exit_code()) {
                    worst = Some(f);
                }
            }
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Failure::Data(format!("{}: {e}", out.display())))?;
    for table in assemble(&tables)? {
        atomic_write(
            &out.join(format!("{}.json", table.scenario.name())),
            table.to_json()?.as_bytes(),
        )?;
        println!("{}", render_text(&table));
    }
    match worst {
        Some(f) => Err(f),
        None => Ok(()),
    }
}

fn report(paths: &[PathBuf]) -> Outcome {
    if paths.is_empty() {
        return Err(Failure::Data("no report files given".into()));
    }
    for p in paths {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
        let table: ReportTable =
            serde_json::from_str(&text).map_err(|e| Failure::Data(format!("{}: {e}", p.display())))?;
        println!("{}", render_text(&table));
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Outcome {
    let spec = BenchmarkSpec {
        extractors: a.extractors.clone(),
        dim: a.dim,
        n_bonafide: a.n_bonafide,
        n_attack_per_family: a.n_attack,
        class_separation: a.separation,
        seed: a.seed,
    };
    let handles = synth_benchmark(&spec)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Failure::Data(format!("{}: {e}", a.out.display())))?;
    let mut datasets = Vec::new();
    for (name, h) in &handles {
        let manifest = PathBuf::from(format!("{name}.csv"));
        let features = PathBuf::from(format!("{name}.madf"));
        write_manifest(h.entries(), &a.out.join(&manifest))?;
        write_features(h.features(), &a.out.join(&features))?;
        datasets.push(DatasetFiles {
            extractor: name.clone(),
            manifest,
            features,
        });
    }
    let mut hyperparameters = Hyperparameters::default();
    if !a.k_grid.is_empty() {
        hyperparameters.k_grid = a.k_grid;
    }
    let batch = BatchConfig {
        version: BATCH_VERSION,
        datasets,
        runs: Vec::new(),
        sweep: Some(SweepConfig {
            extractors: a.extractors,
            seed: a.seed,
            hyperparameters,
        }),
    };
    write_json(&a.out.join("scenarios.json"), &batch)?;
    println!(
        "wrote {} extractor datasets and scenarios.json to {}",
        handles.len(),
        a.out.display()
    );
    Ok(())
}
