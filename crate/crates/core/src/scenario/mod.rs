//! The five evaluation scenarios and the batch driver.
//!
//! A [`ScenarioConfig`] names one training/testing setup for one extractor.
//! [`run_scenario`] trains the configured detector on the matching training
//! slice, scores the test slice and returns a single-row [`ReportTable`].
//! [`assemble`] merges single-row tables into one table per scenario.

mod config;
mod report;

pub use config::{BatchConfig, DatasetFiles, SweepConfig, BATCH_VERSION};
pub use report::{assemble, render_text, Cell, ColumnGroup, ReportRow, ReportTable, RunRecord};

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detector::{Detector, DetectorKind};
use crate::error::{Error, Result};
use crate::feature_store::{
    identity_key, AttackAlgorithm, AttackFamily, DatasetHandle, Domain, Filter, IdentityKey, Label, ManifestEntry,
    SourceDataset, Split,
};
use crate::gmm::{default_k_grid, train_oneclass_detector, CovarianceType, SelectionConfig};
use crate::metrics::{deer_of, format_percent};
use crate::pca::DEFAULT_THRESHOLD;
use crate::seed;
use crate::svm::{train_supervised_detector, SvmParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Baseline,
    UnseenAttack,
    CrossSource,
    PrintScan,
    OneClass,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Baseline,
        ScenarioKind::UnseenAttack,
        ScenarioKind::CrossSource,
        ScenarioKind::PrintScan,
        ScenarioKind::OneClass,
    ];

    /// File stem and JSON name, e.g. `unseen_attack`.
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Baseline => "baseline",
            ScenarioKind::UnseenAttack => "unseen_attack",
            ScenarioKind::CrossSource => "cross_source",
            ScenarioKind::PrintScan => "print_scan",
            ScenarioKind::OneClass => "one_class",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            ScenarioKind::Baseline => "Baseline",
            ScenarioKind::UnseenAttack => "Unseen attacks generalization",
            ScenarioKind::CrossSource => "Source dataset generalization",
            ScenarioKind::PrintScan => "Print-scan generalization",
            ScenarioKind::OneClass => "One-class model",
        }
    }
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparameters {
    pub pca_threshold: f64,
    pub c: f64,
    pub svm_tol: f64,
    pub svm_max_iter: usize,
    pub k_grid: Vec<usize>,
    pub cov_types: Vec<CovarianceType>,
    pub folds: usize,
    pub em_tol: f64,
    pub em_max_iter: usize,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        let svm = SvmParams::default();
        let sel = SelectionConfig::default();
        Hyperparameters {
            pca_threshold: DEFAULT_THRESHOLD,
            c: svm.c,
            svm_tol: svm.tol,
            svm_max_iter: svm.max_iter,
            k_grid: default_k_grid(),
            cov_types: sel.cov_types,
            folds: sel.folds,
            em_tol: sel.em.tol,
            em_max_iter: sel.em.max_iter,
        }
    }
}

impl Hyperparameters {
    pub fn svm_params(&self) -> SvmParams {
        SvmParams {
            c: self.c,
            tol: self.svm_tol,
            max_iter: self.svm_max_iter,
        }
    }

    pub fn selection(&self, seed: u64) -> SelectionConfig {
        SelectionConfig {
            k_grid: self.k_grid.clone(),
            cov_types: self.cov_types.clone(),
            folds: self.folds,
            seed,
            em: crate::gmm::EmConfig {
                tol: self.em_tol,
                max_iter: self.em_max_iter,
            },
        }
    }
}

fn default_domain() -> Domain {
    Domain::Digital
}

/// One run: a scenario, a train/test source pair, an extractor and a
/// detector kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub train_source: SourceDataset,
    pub test_source: SourceDataset,
    /// Attack families seen at training time; empty means all.
    #[serde(default)]
    pub train_families: BTreeSet<AttackFamily>,
    #[serde(default = "default_domain")]
    pub test_domain: Domain,
    pub extractor: String,
    pub detector: DetectorKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
}

impl ScenarioConfig {
    /// A config with the defaults for `scenario`: same source for training
    /// and testing (FRLL for cross-source), all families, the digital
    /// domain except for print-scan, the one-class detector for one-class.
    pub fn new(scenario: ScenarioKind, train_source: SourceDataset, extractor: impl Into<String>) -> Self {
        ScenarioConfig {
            scenario,
            test_source: match scenario {
                ScenarioKind::CrossSource => SourceDataset::Frll,
                _ => train_source.clone(),
            },
            train_source,
            train_families: BTreeSet::new(),
            test_domain: match scenario {
                ScenarioKind::PrintScan => Domain::PrintScan,
                _ => Domain::Digital,
            },
            extractor: extractor.into(),
            detector: match scenario {
                ScenarioKind::OneClass => DetectorKind::OneClass,
                _ => DetectorKind::Supervised,
            },
            seed: 0,
            hyperparameters: Hyperparameters::default(),
        }
    }

    pub fn with_families(mut self, families: impl IntoIterator<Item = AttackFamily>) -> Self {
        self.train_families = families.into_iter().collect();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("{} run: {m}", self.scenario)));
        match self.scenario {
            ScenarioKind::OneClass if self.detector != DetectorKind::OneClass => {
                return bad("requires the one_class detector")
            }
            ScenarioKind::UnseenAttack if self.train_families.len() != 1 => {
                return bad("requires exactly one training attack family")
            }
            ScenarioKind::CrossSource if self.train_source == self.test_source => {
                return bad("train_source and test_source must differ")
            }
            ScenarioKind::PrintScan if self.test_domain != Domain::PrintScan => {
                return bad("requires test_domain print_scan")
            }
            _ => {}
        }
        if self.extractor.is_empty() {
            return bad("extractor name is empty");
        }
        let h = &self.hyperparameters;
        if !(h.pca_threshold > 0.0 && h.pca_threshold <= 1.0) {
            return bad("pca_threshold must lie in (0, 1]");
        }
        if !(h.c > 0.0 && h.c.is_finite()) {
            return bad("c must be positive");
        }
        if h.folds < 2 || h.k_grid.is_empty() || h.k_grid.contains(&0) || h.cov_types.is_empty() {
            return bad("invalid mixture selection grid");
        }
        Ok(())
    }

    /// Families the detector is trained on.
    pub fn families(&self) -> Vec<AttackFamily> {
        if self.train_families.is_empty() {
            AttackFamily::ALL.to_vec()
        } else {
            self.train_families.iter().copied().collect()
        }
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(json))
    }

    fn column_group(&self) -> String {
        match self.scenario {
            ScenarioKind::UnseenAttack => self.families()[0].to_string(),
            _ => self.train_source.to_string(),
        }
    }

    fn row_group(&self) -> Option<String> {
        match self.scenario {
            ScenarioKind::UnseenAttack => Some(self.train_source.to_string()),
            _ => None,
        }
    }
}

/// Column name of a print-scan attack.
pub fn print_scan_column(algorithm: &AttackAlgorithm) -> String {
    match algorithm {
        AttackAlgorithm::LbComplete | AttackAlgorithm::LbCombined => "LB-PS".into(),
        AttackAlgorithm::Mipgan => "MIPGAN-PS".into(),
        AttackAlgorithm::MorDiff => "DIFF-PS".into(),
        other => format!("{}-PS", other.to_string().to_uppercase()),
    }
}

fn print_scan_rank(column: &str) -> usize {
    ["LB-PS", "MIPGAN-PS", "DIFF-PS"]
        .iter()
        .position(|c| *c == column)
        .unwrap_or(3)
}

fn slice_name(source: &SourceDataset, split: Split, domain: Domain, what: &str) -> String {
    format!("{what} of {source} {split} split ({domain})")
}

fn leakage_check(train: &[&ManifestEntry], test: &[&ManifestEntry]) -> Result<()> {
    let ids: HashSet<&str> = train.iter().map(|e| e.sample_id.as_str()).collect();
    if let Some(e) = test.iter().find(|e| ids.contains(e.sample_id.as_str())) {
        return Err(Error::Leakage(format!(
            "sample {} is in both train and test",
            e.sample_id
        )));
    }
    let key = |e: &ManifestEntry| -> (SourceDataset, Label, IdentityKey) {
        (e.source_dataset.clone(), e.label, identity_key(e))
    };
    let groups: HashSet<_> = train.iter().map(|e| key(e)).collect();
    if let Some(e) = test.iter().find(|e| groups.contains(&key(e))) {
        return Err(Error::Leakage(format!(
            "identity group of test sample {} also occurs in training",
            e.sample_id
        )));
    }
    Ok(())
}

/// Runs one configuration against per-extractor handles.
pub fn run_scenario(config: &ScenarioConfig, handles: &BTreeMap<String, DatasetHandle>) -> Result<ReportTable> {
    config.validate()?;
    let handle = handles
        .get(&config.extractor)
        .ok_or_else(|| Error::MissingSlice(format!("features of extractor {:?}", config.extractor)))?;
    let families = config.families();
    let hp = &config.hyperparameters;

    let train_base = Filter::new()
        .source(config.train_source.clone())
        .split(Split::Train)
        .domain(Domain::Digital);
    let train_bonafide = handle.select_all(&[train_base.clone(), Filter::new().label(Label::Bonafide)]);
    let train_attack = handle.select_all(&[
        train_base,
        Filter::new().label(Label::Attack).families(families.iter().copied()),
    ]);
    let train_name = |what| slice_name(&config.train_source, Split::Train, Domain::Digital, what);
    if train_bonafide.is_empty() {
        return Err(Error::MissingSlice(train_name("bonafide")));
    }
    if config.detector == DetectorKind::Supervised && train_attack.is_empty() {
        return Err(Error::MissingSlice(train_name("attacks")));
    }

    let test_base = Filter::new()
        .source(config.test_source.clone())
        .split(Split::Test)
        .domain(config.test_domain);
    let test_bonafide = handle.select_all(&[test_base.clone(), Filter::new().label(Label::Bonafide)]);
    let test_attack = handle.select_all(&[test_base, Filter::new().label(Label::Attack)]);
    let test_name = |what| slice_name(&config.test_source, Split::Test, config.test_domain, what);
    if test_bonafide.is_empty() {
        return Err(Error::MissingSlice(test_name("bonafide")));
    }
    if test_attack.is_empty() {
        return Err(Error::MissingSlice(test_name("attacks")));
    }

    let train_entries: Vec<&ManifestEntry> = train_bonafide.entries().iter().chain(train_attack.entries()).collect();
    let test_entries: Vec<&ManifestEntry> = test_bonafide.entries().iter().chain(test_attack.entries()).collect();
    leakage_check(&train_entries, &test_entries)?;

    let gmm_seed = seed::derive(config.seed, &[seed::tag("gmm")]);
    let (detector, selection, training_manifest) = match config.detector {
        DetectorKind::Supervised => {
            let train = DatasetHandle::merge(&[train_bonafide.clone(), train_attack.clone()])?;
            let d = train_supervised_detector(&train, &hp.svm_params(), hp.pca_threshold)?;
            (Detector::Supervised(d), None, train.entries().to_vec())
        }
        DetectorKind::OneClass => {
            let (d, report) = train_oneclass_detector(
                &train_bonafide,
                &train_attack,
                hp.pca_threshold,
                &hp.selection(gmm_seed),
            )?;
            (Detector::OneClass(d), Some(report), train_bonafide.entries().to_vec())
        }
    };

    // Test columns: attack families, or attack algorithms for print-scan.
    let mut columns: Vec<(String, Vec<&ManifestEntry>)> = Vec::new();
    for e in test_attack.entries() {
        let name = match config.test_domain {
            Domain::PrintScan => print_scan_column(e.attack_algorithm.as_ref().expect("validated attack")),
            Domain::Digital => e.attack_family.expect("normalized attack").to_string(),
        };
        match columns.iter_mut().find(|(n, _)| *n == name) {
            Some((_, members)) => members.push(e),
            None => columns.push((name, vec![e])),
        }
    }
    match config.test_domain {
        Domain::PrintScan => columns.sort_by(|a, b| (print_scan_rank(&a.0), &a.0).cmp(&(print_scan_rank(&b.0), &b.0))),
        Domain::Digital => columns.sort_by_key(|(n, _)| AttackFamily::ALL.iter().position(|f| f.to_string() == *n)),
    }

    let bonafide_scores = detector.score_matrix(&test_bonafide.design_matrix())?;
    let mut cells = Vec::with_capacity(columns.len());
    for (name, members) in &columns {
        let slice = test_attack.with_manifest(members.iter().map(|e| (*e).clone()).collect())?;
        let attack_scores = detector.score_matrix(&slice.design_matrix())?;
        let deer = deer_of(&bonafide_scores, &attack_scores)?;
        cells.push((
            name.clone(),
            Cell {
                deer,
                percent: format_percent(deer),
                n_bonafide: bonafide_scores.len(),
                n_attack: attack_scores.len(),
            },
        ));
    }

    let record = RunRecord {
        config: config.clone(),
        config_digest: config.digest(),
        root_seed: config.seed,
        derived_seeds: match config.detector {
            DetectorKind::OneClass => BTreeMap::from([("gmm".to_string(), gmm_seed)]),
            DetectorKind::Supervised => BTreeMap::new(),
        },
        n_train_bonafide: train_bonafide.len(),
        n_train_attack: match config.detector {
            DetectorKind::Supervised => train_attack.len(),
            DetectorKind::OneClass => 0,
        },
        n_validation_attack: match config.detector {
            DetectorKind::Supervised => 0,
            DetectorKind::OneClass => train_attack.len(),
        },
        pca_components: detector.pca().n_components(),
        training_manifest_sha256: crate::detector::manifest_digest(&training_manifest),
        selection,
    };
    Ok(ReportTable::single(config, cells, record))
}

/// Runs every config independently, in parallel; results are in input order
/// and equal to a sequential run.
pub fn run_matrix(configs: &[ScenarioConfig], handles: &BTreeMap<String, DatasetHandle>) -> Vec<Result<ReportTable>> {
    configs.par_iter().map(|c| run_scenario(c, handles)).collect()
}

/// The full scenario matrix for the given extractors: baseline on FRGC and
/// FFHQ, single-family training on both sources for each family,
/// FRGC/FFHQ to FRLL, FRGC print-scan, and one-class on FRGC and FFHQ.
pub fn full_sweep(extractors: &[String], seed: u64, hyperparameters: &Hyperparameters) -> Vec<ScenarioConfig> {
    let mut out = Vec::new();
    let mut push = |c: ScenarioConfig| {
        for e in extractors {
            let mut c = c.clone();
            c.extractor = e.clone();
            c.seed = seed;
            c.hyperparameters = hyperparameters.clone();
            out.push(c);
        }
    };
    let sources = [SourceDataset::Frgc, SourceDataset::Ffhq];
    for s in &sources {
        push(ScenarioConfig::new(ScenarioKind::Baseline, s.clone(), ""));
    }
    for s in &sources {
        for f in AttackFamily::ALL {
            push(ScenarioConfig::new(ScenarioKind::UnseenAttack, s.clone(), "").with_families([f]));
        }
    }
    for s in &sources {
        push(ScenarioConfig::new(ScenarioKind::CrossSource, s.clone(), ""));
    }
    push(ScenarioConfig::new(ScenarioKind::PrintScan, SourceDataset::Frgc, ""));
    for s in &sources {
        push(ScenarioConfig::new(ScenarioKind::OneClass, s.clone(), ""));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::{synth_benchmark, BenchmarkSpec};

    fn fast() -> Hyperparameters {
        Hyperparameters {
            k_grid: vec![1, 2, 4],
            ..Hyperparameters::default()
        }
    }

    fn bench() -> BTreeMap<String, DatasetHandle> {
        synth_benchmark(&BenchmarkSpec::default()).unwrap()
    }

    #[test]
    fn invariants_are_enforced() {
        let base = ScenarioConfig::new(ScenarioKind::Baseline, SourceDataset::Frgc, "x");
        assert!(base.validate().is_ok());
        let mut c = ScenarioConfig::new(ScenarioKind::OneClass, SourceDataset::Frgc, "x");
        c.detector = DetectorKind::Supervised;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = ScenarioConfig::new(ScenarioKind::UnseenAttack, SourceDataset::Frgc, "x");
        assert!(c.validate().is_err());
        assert!(c.with_families([AttackFamily::Lb]).validate().is_ok());
        let mut c = ScenarioConfig::new(ScenarioKind::CrossSource, SourceDataset::Frgc, "x");
        assert!(c.validate().is_ok());
        c.test_source = SourceDataset::Frgc;
        assert!(c.validate().is_err());
        let mut c = ScenarioConfig::new(ScenarioKind::PrintScan, SourceDataset::Frgc, "x");
        c.test_domain = Domain::Digital;
        assert!(c.validate().is_err());
    }

    #[test]
    fn baseline_on_separable_data() {
        let mut c = ScenarioConfig::new(ScenarioKind::Baseline, SourceDataset::Frgc, "synthetic");
        c.hyperparameters = fast();
        let t = run_scenario(&c, &bench()).unwrap();
        assert_eq!(t.column_groups[0].columns, ["LB", "GAN", "Diff"]);
        for cell in t.rows[0].cells.iter().flatten() {
            assert!(cell.deer <= 0.01, "{cell:?}");
        }
    }

    #[test]
    fn unseen_attack_trains_on_one_family() {
        let c = ScenarioConfig::new(ScenarioKind::UnseenAttack, SourceDataset::Frgc, "synthetic")
            .with_families([AttackFamily::Lb]);
        let h = &bench()["synthetic"];
        let t = run_scenario(&c, &bench()).unwrap();
        let run = &t.runs[0];
        let lb_train = h
            .select_all(&[
                Filter::new()
                    .source(SourceDataset::Frgc)
                    .split(Split::Train)
                    .label(Label::Attack),
                Filter::new().family(AttackFamily::Lb),
            ])
            .len();
        assert_eq!(run.n_train_attack, lb_train);
        assert_eq!(t.column_groups[0].label, "LB");
        assert_eq!(t.column_groups[0].columns, ["LB", "GAN", "Diff"]);
        assert_eq!(t.rows[0].group.as_deref(), Some("FRGC"));
    }

    #[test]
    fn one_class_sees_no_training_attacks() {
        let mut c = ScenarioConfig::new(ScenarioKind::OneClass, SourceDataset::Frgc, "synthetic");
        c.hyperparameters = fast();
        let t = run_scenario(&c, &bench()).unwrap();
        let run = &t.runs[0];
        assert_eq!(run.n_train_attack, 0);
        assert!(run.n_validation_attack > 0);
        assert!(run.selection.is_some());
    }

    #[test]
    fn print_scan_columns() {
        let t = run_scenario(
            &ScenarioConfig::new(ScenarioKind::PrintScan, SourceDataset::Frgc, "synthetic"),
            &bench(),
        )
        .unwrap();
        assert_eq!(t.column_groups[0].columns, ["LB-PS", "MIPGAN-PS", "DIFF-PS"]);
    }

    #[test]
    fn missing_slices_are_named() {
        let c = ScenarioConfig::new(ScenarioKind::PrintScan, SourceDataset::Ffhq, "synthetic");
        match run_scenario(&c, &bench()) {
            Err(Error::MissingSlice(m)) => assert!(m.contains("FFHQ") && m.contains("print_scan"), "{m}"),
            other => panic!("{other:?}"),
        }
        let c = ScenarioConfig::new(ScenarioKind::Baseline, SourceDataset::Frgc, "nope");
        assert!(matches!(run_scenario(&c, &bench()), Err(Error::MissingSlice(_))));
    }

    #[test]
    fn leakage_is_detected() {
        let mut handles = bench();
        let h = handles.remove("synthetic").unwrap();
        // Move one FRGC test bonafide into training while keeping a copy in test.
        let mut entries = h.entries().to_vec();
        let victim = entries
            .iter()
            .position(|e| {
                e.source_dataset == SourceDataset::Frgc
                    && e.split == Split::Test
                    && e.label == Label::Bonafide
                    && e.domain == Domain::Digital
            })
            .unwrap();
        let mut twin = entries[victim].clone();
        twin.split = Split::Train;
        let donor = entries
            .iter()
            .position(|e| {
                e.source_dataset == SourceDataset::Frgc && e.split == Split::Train && e.label == Label::Bonafide
            })
            .unwrap();
        twin.sample_id = entries[donor].sample_id.clone();
        entries[donor] = twin;
        handles.insert("synthetic".into(), h.with_manifest(entries).unwrap());
        let c = ScenarioConfig::new(ScenarioKind::Baseline, SourceDataset::Frgc, "synthetic");
        assert!(matches!(run_scenario(&c, &handles), Err(Error::Leakage(_))));
    }

    #[test]
    fn matrix_matches_sequential_runs() {
        let handles = bench();
        let sweep = full_sweep(&["synthetic".to_string()], 5, &fast());
        assert_eq!(sweep.len(), 2 + 6 + 2 + 1 + 2);
        let parallel = run_matrix(&sweep, &handles);
        for (c, p) in sweep.iter().zip(&parallel) {
            let s = run_scenario(c, &handles).unwrap();
            assert_eq!(&s, p.as_ref().unwrap());
        }
        assert!(run_matrix(&[], &handles).is_empty());
    }

    #[test]
    fn matrix_collects_errors_without_aborting() {
        let handles = bench();
        let configs = vec![
            ScenarioConfig::new(ScenarioKind::Baseline, SourceDataset::Frgc, "missing"),
            ScenarioConfig::new(ScenarioKind::Baseline, SourceDataset::Frgc, "synthetic"),
        ];
        let out = run_matrix(&configs, &handles);
        assert!(out[0].is_err());
        assert!(out[1].is_ok());
    }
}
