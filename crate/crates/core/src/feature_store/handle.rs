use std::collections::{BTreeSet, HashMap};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::features::FeatureMatrix;
use super::manifest::{AttackAlgorithm, AttackFamily, Domain, Label, ManifestEntry, SourceDataset, Split};
use crate::error::{Error, Result};

/// Manifest entries paired with their feature rows.
///
/// The feature matrix is shared, so views produced by [`DatasetHandle::select`]
/// are cheap.
#[derive(Debug, Clone)]
pub struct DatasetHandle {
    manifest: Vec<ManifestEntry>,
    features: Arc<FeatureMatrix>,
    index: Arc<HashMap<String, usize>>,
}

impl DatasetHandle {
    /// Pairs a manifest with a feature matrix. Every manifest entry must
    /// resolve to exactly one feature row; extra rows are allowed.
    pub fn new(manifest: Vec<ManifestEntry>, features: FeatureMatrix) -> Result<Self> {
        let index: HashMap<String, usize> = features
            .sample_ids()
            .iter()
            .enumerate()
            .map(|(i, id)| (id.clone(), i))
            .collect();
        let mut seen = std::collections::HashSet::with_capacity(manifest.len());
        for entry in &manifest {
            entry.validate()?;
            if !index.contains_key(&entry.sample_id) {
                return Err(Error::Invariant {
                    sample_id: entry.sample_id.clone(),
                    message: "no feature row for manifest entry".into(),
                });
            }
            if !seen.insert(entry.sample_id.as_str()) {
                return Err(Error::Invariant {
                    sample_id: entry.sample_id.clone(),
                    message: "duplicate sample_id in manifest".into(),
                });
            }
        }
        Ok(DatasetHandle {
            manifest,
            features: Arc::new(features),
            index: Arc::new(index),
        })
    }

    /// Concatenates handles sharing one feature dimension into a single
    /// handle with a fresh feature matrix.
    pub fn merge(handles: &[DatasetHandle]) -> Result<Self> {
        let dim = handles
            .first()
            .map(DatasetHandle::dim)
            .ok_or_else(|| Error::InvalidArgument("merge of zero handles".into()))?;
        let mut manifest = Vec::new();
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for h in handles {
            if h.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: h.dim(),
                });
            }
            for e in &h.manifest {
                ids.push(e.sample_id.clone());
                data.extend_from_slice(h.features_of(e));
                manifest.push(e.clone());
            }
        }
        DatasetHandle::new(manifest, FeatureMatrix::new(dim, ids, data)?)
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.manifest.len()
    }

    pub fn is_empty(&self) -> bool {
        self.manifest.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn features_of(&self, entry: &ManifestEntry) -> &[f32] {
        self.features.row(self.index[&entry.sample_id])
    }

    /// Feature rows of the listed entries as an `n × dim` matrix, in manifest
    /// order.
    pub fn design_matrix(&self) -> DMatrix<f64> {
        let rows: Vec<&[f32]> = self.manifest.iter().map(|e| self.features_of(e)).collect();
        DMatrix::from_fn(rows.len(), self.dim(), |i, j| f64::from(rows[i][j]))
    }

    pub fn sample_ids(&self) -> impl Iterator<Item = &str> {
        self.manifest.iter().map(|e| e.sample_id.as_str())
    }

    /// Name of the feature source; the extractor of the first entry.
    pub fn extractor(&self) -> Option<&str> {
        self.manifest.first().map(|e| e.extractor.as_str())
    }

    /// Entries matching `filter`, ordered by sample id.
    pub fn select(&self, filter: &Filter) -> DatasetHandle {
        self.select_all(std::slice::from_ref(filter))
    }

    /// Entries matching every filter in `filters`, ordered by sample id.
    pub fn select_all(&self, filters: &[Filter]) -> DatasetHandle {
        let mut manifest: Vec<ManifestEntry> = self
            .manifest
            .iter()
            .filter(|e| filters.iter().all(|f| f.matches(e)))
            .cloned()
            .collect();
        manifest.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
        DatasetHandle {
            manifest,
            features: Arc::clone(&self.features),
            index: Arc::clone(&self.index),
        }
    }

    /// Replaces manifest entries (same ids, e.g. after split assignment).
    pub fn with_manifest(&self, manifest: Vec<ManifestEntry>) -> Result<Self> {
        for e in &manifest {
            e.validate()?;
            if !self.index.contains_key(&e.sample_id) {
                return Err(Error::Invariant {
                    sample_id: e.sample_id.clone(),
                    message: "no feature row for manifest entry".into(),
                });
            }
        }
        Ok(DatasetHandle {
            manifest,
            features: Arc::clone(&self.features),
            index: Arc::clone(&self.index),
        })
    }
}

/// Conjunction of per-field membership constraints. An empty set places no
/// constraint on its field.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Filter {
    pub labels: BTreeSet<Label>,
    pub families: BTreeSet<AttackFamily>,
    pub algorithms: BTreeSet<AttackAlgorithm>,
    pub source_datasets: BTreeSet<SourceDataset>,
    pub domains: BTreeSet<Domain>,
    pub splits: BTreeSet<Split>,
}

impl Filter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn label(mut self, label: Label) -> Self {
        self.labels.insert(label);
        self
    }

    pub fn family(mut self, family: AttackFamily) -> Self {
        self.families.insert(family);
        self
    }

    pub fn families(mut self, families: impl IntoIterator<Item = AttackFamily>) -> Self {
        self.families.extend(families);
        self
    }

    pub fn algorithm(mut self, algorithm: AttackAlgorithm) -> Self {
        self.algorithms.insert(algorithm);
        self
    }

    pub fn source(mut self, source: SourceDataset) -> Self {
        self.source_datasets.insert(source);
        self
    }

    pub fn domain(mut self, domain: Domain) -> Self {
        self.domains.insert(domain);
        self
    }

    pub fn split(mut self, split: Split) -> Self {
        self.splits.insert(split);
        self
    }

    pub fn matches(&self, e: &ManifestEntry) -> bool {
        fn admits<T: Ord>(set: &BTreeSet<T>, v: Option<&T>) -> bool {
            set.is_empty() || v.is_some_and(|v| set.contains(v))
        }
        admits(&self.labels, Some(&e.label))
            && admits(&self.families, e.attack_family.as_ref())
            && admits(&self.algorithms, e.attack_algorithm.as_ref())
            && admits(&self.source_datasets, Some(&e.source_dataset))
            && admits(&self.domains, Some(&e.domain))
            && admits(&self.splits, Some(&e.split))
    }
}
