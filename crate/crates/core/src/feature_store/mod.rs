//! Sample metadata, feature files, identity-disjoint splitting and
//! scenario-driven selection.

mod features;
mod handle;
mod manifest;
mod split;
mod synth;

pub use features::{read_features, write_features, FeatureMatrix, FEATURE_MAGIC, FEATURE_VERSION};
pub use handle::{DatasetHandle, Filter};
pub use manifest::{
    load_manifest, parse_manifest, write_manifest, write_manifest_string, AttackAlgorithm, AttackFamily, Domain, Label,
    ManifestEntry, SourceDataset, Split, MANIFEST_HEADER,
};
pub use split::{identity_key, split_identity_disjoint, split_with_test_only, IdentityKey};
pub use synth::{synth_benchmark, synth_dataset, BenchmarkSpec, SynthSpec};
