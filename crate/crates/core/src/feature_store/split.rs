use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;

use super::manifest::{Label, ManifestEntry, SourceDataset, Split};
use crate::error::{Error, Result};
use crate::seed;

/// Unit that must stay on one side of a split: a bonafide identity, or the
/// unordered identity pair of a morph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum IdentityKey {
    Single(String),
    Pair(String, String),
}

pub fn identity_key(entry: &ManifestEntry) -> IdentityKey {
    match entry.identities.as_slice() {
        [a, b] if a <= b => IdentityKey::Pair(a.clone(), b.clone()),
        [a, b] => IdentityKey::Pair(b.clone(), a.clone()),
        [a] => IdentityKey::Single(a.clone()),
        other => IdentityKey::Single(other.join("|")),
    }
}

/// Assigns every entry to train or test so that no bonafide identity and no
/// morph identity pair appears on both sides.
///
/// Entries are grouped by [`IdentityKey`]; groups are stratified by label and
/// source dataset, shuffled under `seed`, and assigned greedily: a group joins
/// the training side while doing so brings the stratum's training count
/// closer to `train_fraction` of its size. Each stratum therefore ends within
/// half a group of its target.
pub fn split_identity_disjoint(
    entries: &[ManifestEntry],
    train_fraction: f64,
    seed: u64,
) -> Result<Vec<ManifestEntry>> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("empty manifest".into()));
    }
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train_fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    if let Some(e) = entries.iter().find(|e| e.split != Split::Unassigned) {
        return Err(Error::Invariant {
            sample_id: e.sample_id.clone(),
            message: format!("already assigned to {}", e.split),
        });
    }

    // BTreeMaps keep grouping independent of input order.
    let mut groups: BTreeMap<(Label, IdentityKey), Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        groups.entry((e.label, identity_key(e))).or_default().push(i);
    }
    let mut strata: BTreeMap<(Label, SourceDataset), Vec<Vec<usize>>> = BTreeMap::new();
    for ((label, _), members) in groups {
        let source = members
            .iter()
            .map(|&i| &entries[i].source_dataset)
            .min()
            .cloned()
            .unwrap();
        strata.entry((label, source)).or_default().push(members);
    }

    let mut out = entries.to_vec();
    for ((label, source), mut stratum) in strata {
        let stratum_seed = seed::derive(seed, &[seed::tag(&label.to_string()), seed::tag(&source.to_string())]);
        stratum.shuffle(&mut seed::rng(stratum_seed));
        let total: usize = stratum.iter().map(Vec::len).sum();
        let target = train_fraction * total as f64;
        let mut train = 0usize;
        for members in stratum {
            let with = (train + members.len()) as f64;
            let side = if (with - target).abs() < (train as f64 - target).abs() {
                train += members.len();
                Split::Train
            } else {
                Split::Test
            };
            for i in members {
                out[i].split = side;
            }
        }
    }

    for side in [Split::Train, Split::Test] {
        if !out.iter().any(|e| e.split == side) {
            return Err(Error::InvalidArgument(format!(
                "train_fraction {train_fraction} leaves the {side} split empty"
            )));
        }
    }
    Ok(out)
}

/// Entries from `test_only` sources go entirely to the test split; the rest
/// are split with [`split_identity_disjoint`].
pub fn split_with_test_only(
    entries: &[ManifestEntry],
    train_fraction: f64,
    seed: u64,
    test_only: &BTreeSet<SourceDataset>,
) -> Result<Vec<ManifestEntry>> {
    let (held, rest): (Vec<usize>, Vec<usize>) =
        (0..entries.len()).partition(|&i| test_only.contains(&entries[i].source_dataset));
    let subset: Vec<ManifestEntry> = rest.iter().map(|&i| entries[i].clone()).collect();
    let assigned = split_identity_disjoint(&subset, train_fraction, seed)?;
    let mut out = entries.to_vec();
    for (slot, e) in rest.into_iter().zip(assigned) {
        out[slot] = e;
    }
    for i in held {
        out[i].split = Split::Test;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature_store::manifest::AttackAlgorithm;
    use std::collections::HashSet;

    fn bonafide(n: usize) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| ManifestEntry::bonafide(format!("b{i}"), SourceDataset::Frgc, format!("id{i}"), "x"))
            .collect()
    }

    fn attack_pairs(n: usize) -> Vec<ManifestEntry> {
        (0..n)
            .map(|i| {
                ManifestEntry::attack(
                    format!("m{i}"),
                    SourceDataset::Frgc,
                    AttackAlgorithm::LbCombined,
                    [format!("p{i}a"), format!("p{i}b")],
                    "x",
                )
            })
            .collect()
    }

    #[test]
    fn ten_identities_split_eight_two() {
        let out = split_identity_disjoint(&bonafide(10), 0.8, 0).unwrap();
        let train = out.iter().filter(|e| e.split == Split::Train).count();
        assert_eq!(train, 8);
        assert_eq!(out.len() - train, 2);
    }

    #[test]
    fn attack_pairs_hit_fraction_and_stay_disjoint() {
        let entries = attack_pairs(2521);
        let out = split_identity_disjoint(&entries, 0.8, 42).unwrap();
        let train = out.iter().filter(|e| e.split == Split::Train).count() as f64;
        assert!((train - 2016.8).abs() <= 1.0, "train = {train}");
        // Exhaustive pair audit, independent of `identity_key`.
        let pair = |e: &ManifestEntry| {
            let mut p = e.identities.clone();
            p.sort();
            p
        };
        for a in out.iter().filter(|e| e.split == Split::Train) {
            for b in out.iter().filter(|e| e.split == Split::Test) {
                assert_ne!(pair(a), pair(b));
            }
        }
    }

    #[test]
    fn reversed_pairs_are_the_same_group() {
        let mut entries = Vec::new();
        for i in 0..20 {
            let (a, b) = (format!("p{i}a"), format!("p{i}b"));
            entries.push(ManifestEntry::attack(
                format!("m{i}x"),
                SourceDataset::Ffhq,
                AttackAlgorithm::Sg2W,
                [a.clone(), b.clone()],
                "x",
            ));
            entries.push(ManifestEntry::attack(
                format!("m{i}y"),
                SourceDataset::Ffhq,
                AttackAlgorithm::MorDiff,
                [b, a],
                "x",
            ));
        }
        let out = split_identity_disjoint(&entries, 0.8, 5).unwrap();
        for pair in out.chunks(2) {
            assert_eq!(pair[0].split, pair[1].split);
        }
    }

    #[test]
    fn repeated_identities_move_together() {
        let mut entries = Vec::new();
        for i in 0..40 {
            entries.push(ManifestEntry::bonafide(
                format!("b{i}"),
                SourceDataset::Frgc,
                format!("id{}", i / 4),
                "x",
            ));
        }
        let out = split_identity_disjoint(&entries, 0.8, 9).unwrap();
        let train: HashSet<&str> = out
            .iter()
            .filter(|e| e.split == Split::Train)
            .map(|e| e.identities[0].as_str())
            .collect();
        let test: HashSet<&str> = out
            .iter()
            .filter(|e| e.split == Split::Test)
            .map(|e| e.identities[0].as_str())
            .collect();
        assert!(train.is_disjoint(&test));
        assert_eq!(train.len(), 8);
    }

    #[test]
    fn deterministic_given_seed_and_order_independent() {
        let entries = bonafide(50);
        let a = split_identity_disjoint(&entries, 0.8, 3).unwrap();
        let b = split_identity_disjoint(&entries, 0.8, 3).unwrap();
        assert_eq!(a, b);
        let mut reversed = entries.clone();
        reversed.reverse();
        let c = split_identity_disjoint(&reversed, 0.8, 3).unwrap();
        for e in &a {
            let f = c.iter().find(|f| f.sample_id == e.sample_id).unwrap();
            assert_eq!(e.split, f.split);
        }
    }

    #[test]
    fn error_cases() {
        assert!(split_identity_disjoint(&[], 0.8, 0).is_err());
        assert!(split_identity_disjoint(&bonafide(10), 1.0, 0).is_err());
        assert!(split_identity_disjoint(&bonafide(10), 0.0, 0).is_err());
        // A single identity cannot be split.
        assert!(split_identity_disjoint(&bonafide(1), 0.8, 0).is_err());
        let assigned = vec![bonafide(1).remove(0).with_split(Split::Train)];
        assert!(split_identity_disjoint(&assigned, 0.8, 0).is_err());
    }

    #[test]
    fn test_only_sources_go_to_test() {
        let mut entries = bonafide(10);
        entries.push(ManifestEntry::bonafide("frll0", SourceDataset::Frll, "f0", "x"));
        let only: BTreeSet<_> = [SourceDataset::Frll].into();
        let out = split_with_test_only(&entries, 0.8, 1, &only).unwrap();
        assert_eq!(out.last().unwrap().split, Split::Test);
        assert_eq!(out.iter().filter(|e| e.split == Split::Train).count(), 8);
    }
}
