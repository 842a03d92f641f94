use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_distr::StandardNormal;

use super::features::FeatureMatrix;
use super::handle::DatasetHandle;
use super::manifest::{AttackAlgorithm, AttackFamily, Domain, ManifestEntry, SourceDataset, Split};
use super::split::split_with_test_only;
use crate::error::{Error, Result};
use crate::seed;

/// Parameters of a synthetic dataset.
///
/// Bonafide features are drawn from `N(0, I)`; the attacks of each family
/// from `N(class_separation · u_f, I)` where `u_f` is a unit direction drawn
/// from `direction_seed`. Directions are normalized `|z|` with `z ~ N(0, I)`,
/// so all families lie in the positive orthant and share a separating
/// half-space with the bonafide class. Generating several sources with one
/// `direction_seed` gives them the same attack geometry.
#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub dim: usize,
    pub n_bonafide: usize,
    pub n_attack_per_family: usize,
    /// Offset of each attack family's mean, in standard deviations.
    pub class_separation: f64,
    pub seed: u64,
    /// Seed of the family directions; `None` uses `seed`.
    pub direction_seed: Option<u64>,
    pub source: SourceDataset,
    pub domain: Domain,
    pub extractor: String,
    /// Algorithms to emit; each family present here receives
    /// `n_attack_per_family` samples, cycling through its algorithms.
    pub algorithms: Vec<AttackAlgorithm>,
    /// Prefix of sample ids and identities; defaults to the source name.
    pub id_prefix: Option<String>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            dim: 16,
            n_bonafide: 100,
            n_attack_per_family: 50,
            class_separation: 8.0,
            seed: 0,
            direction_seed: None,
            source: SourceDataset::Frgc,
            domain: Domain::Digital,
            extractor: "synthetic".into(),
            algorithms: vec![
                AttackAlgorithm::LbComplete,
                AttackAlgorithm::LbCombined,
                AttackAlgorithm::Sg2W,
                AttackAlgorithm::Sg2WPlus,
                AttackAlgorithm::MorDiff,
            ],
            id_prefix: None,
        }
    }
}

/// Unit direction along which `family`'s attack mean is offset.
pub(crate) fn family_direction(direction_seed: u64, family: AttackFamily, dim: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed::derive(direction_seed, &[seed::tag(&family.to_string())]));
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub fn synth_dataset(spec: &SynthSpec) -> Result<DatasetHandle> {
    if spec.dim == 0 {
        return Err(Error::InvalidArgument("dim must be at least 1".into()));
    }
    if !(spec.class_separation >= 0.0 && spec.class_separation.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "class_separation must be a finite nonnegative number, got {}",
            spec.class_separation
        )));
    }
    let mut by_family: Vec<(AttackFamily, Vec<AttackAlgorithm>)> = Vec::new();
    for family in AttackFamily::ALL {
        let algs: Vec<AttackAlgorithm> = spec
            .algorithms
            .iter()
            .filter(|a| a.family() == Some(family))
            .cloned()
            .collect();
        if !algs.is_empty() {
            by_family.push((family, algs));
        }
    }
    if let Some(a) = spec.algorithms.iter().find(|a| a.family().is_none()) {
        return Err(Error::InvalidArgument(format!(
            "synthetic algorithm {a} has no known family"
        )));
    }

    let prefix = spec.id_prefix.clone().unwrap_or_else(|| {
        let base = spec.source.to_string().to_lowercase();
        match spec.domain {
            Domain::Digital => base,
            Domain::PrintScan => format!("{base}-ps"),
        }
    });
    let direction_seed = spec.direction_seed.unwrap_or(spec.seed);
    let mut rng = seed::rng(seed::derive(spec.seed, &[seed::tag("synth-samples")]));
    let gaussian = |rng: &mut rand_chacha::ChaCha8Rng, mean: Option<&[f64]>| -> Vec<f32> {
        (0..spec.dim)
            .map(|j| {
                let z: f64 = rng.sample(StandardNormal);
                (z + mean.map_or(0.0, |m| m[j])) as f32
            })
            .collect()
    };

    let mut manifest = Vec::new();
    let mut rows = Vec::new();
    for i in 0..spec.n_bonafide {
        let id = format!("{prefix}-b{i:06}");
        let entry = ManifestEntry::bonafide(
            id.clone(),
            spec.source.clone(),
            format!("{prefix}-id-b{i}"),
            spec.extractor.clone(),
        )
        .with_domain(spec.domain);
        rows.push((id, gaussian(&mut rng, None)));
        manifest.push(entry);
    }
    for (family, algs) in &by_family {
        let mean: Vec<f64> = family_direction(direction_seed, *family, spec.dim)
            .into_iter()
            .map(|u| u * spec.class_separation)
            .collect();
        let tag = family.to_string().to_lowercase();
        for i in 0..spec.n_attack_per_family {
            let id = format!("{prefix}-{tag}{i:06}");
            let pair = [format!("{prefix}-id-a{i}x"), format!("{prefix}-id-a{i}y")];
            let entry = ManifestEntry::attack(
                id.clone(),
                spec.source.clone(),
                algs[i % algs.len()].clone(),
                pair,
                spec.extractor.clone(),
            )
            .with_domain(spec.domain);
            rows.push((id, gaussian(&mut rng, Some(&mean))));
            manifest.push(entry);
        }
    }
    DatasetHandle::new(manifest, FeatureMatrix::from_rows(spec.dim, rows)?)
}

/// A synthetic stand-in for the full benchmark: for every extractor name,
/// FRGC and FFHQ digital sets split 80/20 by identity, a test-only FRLL set,
/// and a test-only FRGC print-scan set with LB-Combined, MIPGAN and MorDIFF
/// attacks.
#[derive(Debug, Clone)]
pub struct BenchmarkSpec {
    pub extractors: Vec<String>,
    pub dim: usize,
    /// Bonafide count of FRGC and FFHQ; FRLL and print-scan get a fifth.
    pub n_bonafide: usize,
    pub n_attack_per_family: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            extractors: vec!["synthetic".into()],
            dim: 16,
            n_bonafide: 200,
            n_attack_per_family: 60,
            class_separation: 8.0,
            seed: 0,
        }
    }
}

pub fn synth_benchmark(spec: &BenchmarkSpec) -> Result<BTreeMap<String, DatasetHandle>> {
    let mut out = BTreeMap::new();
    for extractor in &spec.extractors {
        let root = seed::derive(spec.seed, &[seed::tag(extractor)]);
        let part = |source: SourceDataset, domain: Domain, scale: usize, algorithms: Vec<AttackAlgorithm>| {
            synth_dataset(&SynthSpec {
                dim: spec.dim,
                n_bonafide: spec.n_bonafide / scale,
                n_attack_per_family: spec.n_attack_per_family / scale,
                class_separation: spec.class_separation,
                seed: seed::derive(root, &[seed::tag(&source.to_string()), seed::tag(&domain.to_string())]),
                direction_seed: Some(root),
                source,
                domain,
                extractor: extractor.clone(),
                algorithms,
                id_prefix: None,
            })
        };
        let digital = SynthSpec::default().algorithms;
        let handle = DatasetHandle::merge(&[
            part(SourceDataset::Frgc, Domain::Digital, 1, digital.clone())?,
            part(SourceDataset::Ffhq, Domain::Digital, 1, digital.clone())?,
            part(SourceDataset::Frll, Domain::Digital, 5, digital)?,
            part(
                SourceDataset::Frgc,
                Domain::PrintScan,
                5,
                vec![
                    AttackAlgorithm::LbCombined,
                    AttackAlgorithm::Mipgan,
                    AttackAlgorithm::MorDiff,
                ],
            )?,
        ])?;
        let (print_scan, digital): (Vec<ManifestEntry>, Vec<ManifestEntry>) = handle
            .entries()
            .iter()
            .cloned()
            .partition(|e| e.domain == Domain::PrintScan);
        let test_only = BTreeSet::from([SourceDataset::Frll]);
        let mut entries = split_with_test_only(&digital, 0.8, seed::derive(root, &[seed::tag("split")]), &test_only)?;
        entries.extend(print_scan.into_iter().map(|e| e.with_split(Split::Test)));
        out.insert(extractor.clone(), handle.with_manifest(entries)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::manifest::Label;

    #[test]
    fn deterministic_given_seed() {
        let spec = SynthSpec::default();
        let a = synth_dataset(&spec).unwrap();
        let b = synth_dataset(&spec).unwrap();
        assert_eq!(a.entries(), b.entries());
        assert_eq!(a.features(), b.features());
    }

    #[test]
    fn bonafide_only_when_no_attacks() {
        let h = synth_dataset(&SynthSpec {
            n_attack_per_family: 0,
            ..SynthSpec::default()
        })
        .unwrap();
        assert_eq!(h.len(), 100);
        assert!(h.entries().iter().all(|e| e.label == Label::Bonafide));
    }

    #[test]
    fn attack_means_sit_at_separation() {
        let h = synth_dataset(&SynthSpec {
            dim: 4,
            n_bonafide: 0,
            n_attack_per_family: 4000,
            class_separation: 8.0,
            algorithms: vec![AttackAlgorithm::MorDiff],
            ..SynthSpec::default()
        })
        .unwrap();
        let x = h.design_matrix();
        let mean = x.row_mean();
        assert!((mean.norm() - 8.0).abs() < 0.1, "{}", mean.norm());
        let dir = family_direction(0, AttackFamily::Diff, 4);
        let along: f64 = mean.iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!((along - 8.0).abs() < 0.1);
    }

    #[test]
    fn families_cycle_algorithms() {
        let h = synth_dataset(&SynthSpec::default()).unwrap();
        let lb: Vec<_> = h
            .entries()
            .iter()
            .filter(|e| e.attack_family == Some(AttackFamily::Lb))
            .collect();
        assert_eq!(lb.len(), 50);
        assert_eq!(lb[0].attack_algorithm, Some(AttackAlgorithm::LbComplete));
        assert_eq!(lb[1].attack_algorithm, Some(AttackAlgorithm::LbCombined));
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(synth_dataset(&SynthSpec {
            dim: 0,
            ..SynthSpec::default()
        })
        .is_err());
        assert!(synth_dataset(&SynthSpec {
            class_separation: -1.0,
            ..SynthSpec::default()
        })
        .is_err());
    }

    #[test]
    fn benchmark_has_every_slice() {
        let b = synth_benchmark(&BenchmarkSpec::default()).unwrap();
        let h = &b["synthetic"];
        let count = |f: &crate::feature_store::Filter| h.select(f).len();
        use crate::feature_store::Filter;
        assert_eq!(count(&Filter::new().source(SourceDataset::Frll).split(Split::Train)), 0);
        assert!(count(&Filter::new().source(SourceDataset::Frll).split(Split::Test)) > 0);
        assert_eq!(count(&Filter::new().domain(Domain::PrintScan).split(Split::Train)), 0);
        assert_eq!(
            count(&Filter::new().algorithm(AttackAlgorithm::Mipgan).domain(Domain::Digital)),
            0
        );
        assert_eq!(
            count(
                &Filter::new()
                    .algorithm(AttackAlgorithm::Mipgan)
                    .domain(Domain::PrintScan)
            ),
            12
        );
        assert!(h.entries().iter().all(|e| e.split != Split::Unassigned));
        let train = count(
            &Filter::new()
                .source(SourceDataset::Ffhq)
                .label(Label::Bonafide)
                .split(Split::Train),
        );
        assert_eq!(train, 160);
    }
}
