use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{full_sweep, Hyperparameters, ScenarioConfig};
use crate::error::{Error, Result};
use crate::feature_store::{load_manifest, read_features, DatasetHandle};

pub const BATCH_VERSION: u32 = 1;

/// One manifest/feature-file pair. Relative paths resolve against the
/// directory of the batch file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetFiles {
    pub extractor: String,
    pub manifest: PathBuf,
    pub features: PathBuf,
}

/// Expands to [`full_sweep`] over `extractors`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub extractors: Vec<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub hyperparameters: Hyperparameters,
}

/// A batch file:
///
/// ```json
/// {
///   "version": 1,
///   "datasets": [{"extractor": "clip", "manifest": "clip.csv", "features": "clip.madf"}],
///   "runs": [{"scenario": "baseline", "train_source": "FRGC", "test_source": "FRGC",
///             "extractor": "clip", "detector": "supervised", "seed": 1}],
///   "sweep": {"extractors": ["clip"], "seed": 1}
/// }
/// ```
///
/// Explicit `runs` come first, then the sweep expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BatchConfig {
    pub version: u32,
    #[serde(default)]
    pub datasets: Vec<DatasetFiles>,
    #[serde(default)]
    pub runs: Vec<ScenarioConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

impl BatchConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: BatchConfig = serde_json::from_str(text).map_err(|e| Error::Config(format!("batch file: {e}")))?;
        if config.version != BATCH_VERSION {
            return Err(Error::Config(format!(
                "unsupported batch file version {} (expected {BATCH_VERSION})",
                config.version
            )));
        }
        for run in config.configs() {
            run.validate()?;
        }
        Ok(config)
    }

    /// Reads a batch file and makes its dataset paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = BatchConfig::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut config.datasets {
            d.manifest = base.join(&d.manifest);
            d.features = base.join(&d.features);
        }
        Ok(config)
    }

    pub fn configs(&self) -> Vec<ScenarioConfig> {
        let mut out = self.runs.clone();
        if let Some(s) = &self.sweep {
            out.extend(full_sweep(&s.extractors, s.seed, &s.hyperparameters));
        }
        out
    }

    /// Loads every dataset, merging files that share an extractor name.
    pub fn load_handles(&self) -> Result<BTreeMap<String, DatasetHandle>> {
        let mut parts: BTreeMap<String, Vec<DatasetHandle>> = BTreeMap::new();
        for d in &self.datasets {
            let handle = DatasetHandle::new(load_manifest(&d.manifest)?, read_features(&d.features)?)?;
            if let Some(e) = handle.entries().iter().find(|e| e.extractor != d.extractor) {
                return Err(Error::Invariant {
                    sample_id: e.sample_id.clone(),
                    message: format!("extractor {:?} in a file declared as {:?}", e.extractor, d.extractor),
                });
            }
            parts.entry(d.extractor.clone()).or_default().push(handle);
        }
        parts
            .into_iter()
            .map(|(name, mut hs)| {
                let h = if hs.len() == 1 {
                    hs.pop().unwrap()
                } else {
                    DatasetHandle::merge(&hs)?
                };
                Ok((name, h))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_example() {
        let text = r#"{
          "version": 1,
          "datasets": [{"extractor": "clip", "manifest": "clip.csv", "features": "clip.madf"}],
          "runs": [{"scenario": "unseen_attack", "train_source": "FRGC", "test_source": "FRGC",
                    "train_families": ["GAN"], "extractor": "clip", "detector": "supervised", "seed": 1}],
          "sweep": {"extractors": ["clip"], "seed": 1}
        }"#;
        let c = BatchConfig::parse(text).unwrap();
        let runs = c.configs();
        assert_eq!(runs.len(), 1 + 13);
        assert_eq!(runs[0].hyperparameters, Hyperparameters::default());
        let back = BatchConfig::parse(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(matches!(BatchConfig::parse(r#"{"version": 2}"#), Err(Error::Config(_))));
        assert!(matches!(
            BatchConfig::parse(r#"{"version": 1, "bogus": 1}"#),
            Err(Error::Config(_))
        ));
        let invalid = r#"{"version": 1, "runs": [{"scenario": "one_class", "train_source": "FRGC",
            "test_source": "FRGC", "extractor": "x", "detector": "supervised"}]}"#;
        assert!(matches!(BatchConfig::parse(invalid), Err(Error::Config(_))));
    }
}
