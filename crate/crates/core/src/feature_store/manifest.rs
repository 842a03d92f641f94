use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 9] = [
    "sample_id",
    "source_dataset",
    "label",
    "attack_algorithm",
    "attack_family",
    "domain",
    "split",
    "identities",
    "extractor",
];

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }

        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SourceDataset {
    Frgc,
    Frll,
    Ffhq,
    Other(String),
}

impl fmt::Display for SourceDataset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceDataset::Frgc => f.write_str("FRGC"),
            SourceDataset::Frll => f.write_str("FRLL"),
            SourceDataset::Ffhq => f.write_str("FFHQ"),
            SourceDataset::Other(name) => f.write_str(name),
        }
    }
}

impl FromStr for SourceDataset {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "FRGC" => SourceDataset::Frgc,
            "FRLL" => SourceDataset::Frll,
            "FFHQ" => SourceDataset::Ffhq,
            "" => return Err("empty source_dataset".into()),
            other => SourceDataset::Other(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Label {
    Bonafide,
    Attack,
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Bonafide => "bonafide",
            Label::Attack => "attack",
        })
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "attack" => Ok(Label::Attack),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Coarse grouping of morphing algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackFamily {
    /// Landmark-based.
    Lb,
    Gan,
    /// Diffusion-based.
    Diff,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 3] = [AttackFamily::Lb, AttackFamily::Gan, AttackFamily::Diff];
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackFamily::Lb => "LB",
            AttackFamily::Gan => "GAN",
            AttackFamily::Diff => "Diff",
        })
    }
}

impl FromStr for AttackFamily {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "LB" => Ok(AttackFamily::Lb),
            "GAN" => Ok(AttackFamily::Gan),
            "Diff" | "DIFF" => Ok(AttackFamily::Diff),
            other => Err(format!("unknown attack family {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AttackAlgorithm {
    LbComplete,
    LbCombined,
    Sg2W,
    Sg2WPlus,
    MorDiff,
    Mipgan,
    Other(String),
}

impl AttackAlgorithm {
    /// Family of a named algorithm; `None` for [`AttackAlgorithm::Other`],
    /// whose family must be stated explicitly.
    pub fn family(&self) -> Option<AttackFamily> {
        match self {
            AttackAlgorithm::LbComplete | AttackAlgorithm::LbCombined => Some(AttackFamily::Lb),
            AttackAlgorithm::Sg2W | AttackAlgorithm::Sg2WPlus | AttackAlgorithm::Mipgan => Some(AttackFamily::Gan),
            AttackAlgorithm::MorDiff => Some(AttackFamily::Diff),
            AttackAlgorithm::Other(_) => None,
        }
    }
}

impl fmt::Display for AttackAlgorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackAlgorithm::LbComplete => "LB-Complete",
            AttackAlgorithm::LbCombined => "LB-Combined",
            AttackAlgorithm::Sg2W => "SG2-W",
            AttackAlgorithm::Sg2WPlus => "SG2-W+",
            AttackAlgorithm::MorDiff => "MorDIFF",
            AttackAlgorithm::Mipgan => "MIPGAN",
            AttackAlgorithm::Other(name) => name,
        })
    }
}

impl FromStr for AttackAlgorithm {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Ok(match s {
            "LB-Complete" => AttackAlgorithm::LbComplete,
            "LB-Combined" => AttackAlgorithm::LbCombined,
            "SG2-W" => AttackAlgorithm::Sg2W,
            "SG2-W+" => AttackAlgorithm::Sg2WPlus,
            "MorDIFF" => AttackAlgorithm::MorDiff,
            "MIPGAN" => AttackAlgorithm::Mipgan,
            "" => return Err("empty attack_algorithm".into()),
            other => AttackAlgorithm::Other(other.to_string()),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Domain {
    Digital,
    PrintScan,
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Digital => "digital",
            Domain::PrintScan => "print_scan",
        })
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "digital" => Ok(Domain::Digital),
            "print_scan" => Ok(Domain::PrintScan),
            other => Err(format!("unknown domain {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "unassigned" | "" => Ok(Split::Unassigned),
            other => Err(format!("unknown split {other:?}")),
        }
    }
}

string_serde!(SourceDataset);
string_serde!(Label);
string_serde!(AttackFamily);
string_serde!(AttackAlgorithm);
string_serde!(Domain);
string_serde!(Split);

/// Metadata of one sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub source_dataset: SourceDataset,
    pub label: Label,
    pub attack_algorithm: Option<AttackAlgorithm>,
    pub attack_family: Option<AttackFamily>,
    pub domain: Domain,
    pub split: Split,
    /// One identity for bonafide samples, the two source identities for
    /// morphs.
    pub identities: Vec<String>,
    /// Name of the feature extractor the sample's vector comes from.
    pub extractor: String,
}

impl ManifestEntry {
    pub fn bonafide(
        sample_id: impl Into<String>,
        source: SourceDataset,
        identity: impl Into<String>,
        extractor: impl Into<String>,
    ) -> Self {
        ManifestEntry {
            sample_id: sample_id.into(),
            source_dataset: source,
            label: Label::Bonafide,
            attack_algorithm: None,
            attack_family: None,
            domain: Domain::Digital,
            split: Split::Unassigned,
            identities: vec![identity.into()],
            extractor: extractor.into(),
        }
    }

    pub fn attack(
        sample_id: impl Into<String>,
        source: SourceDataset,
        algorithm: AttackAlgorithm,
        identities: [String; 2],
        extractor: impl Into<String>,
    ) -> Self {
        let family = algorithm.family();
        ManifestEntry {
            sample_id: sample_id.into(),
            source_dataset: source,
            label: Label::Attack,
            attack_algorithm: Some(algorithm),
            attack_family: family,
            domain: Domain::Digital,
            split: Split::Unassigned,
            identities: identities.into(),
            extractor: extractor.into(),
        }
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Fills a missing family from the algorithm, then checks the label and
    /// identity invariants.
    pub fn normalize(&mut self) -> Result<()> {
        if self.attack_family.is_none() {
            self.attack_family = self.attack_algorithm.as_ref().and_then(AttackAlgorithm::family);
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Invariant {
                sample_id: self.sample_id.clone(),
                message,
            })
        };
        if self.sample_id.is_empty() {
            return fail("empty sample_id".into());
        }
        if self.identities.iter().any(String::is_empty) {
            return fail("empty identity".into());
        }
        match self.label {
            Label::Bonafide => {
                if self.attack_algorithm.is_some() {
                    return fail("bonafide carries attack_algorithm".into());
                }
                if self.attack_family.is_some() {
                    return fail("bonafide carries attack_family".into());
                }
                if self.identities.len() != 1 {
                    return fail(format!(
                        "bonafide must have exactly 1 identity, found {}",
                        self.identities.len()
                    ));
                }
            }
            Label::Attack => {
                let Some(algorithm) = &self.attack_algorithm else {
                    return fail("attack without attack_algorithm".into());
                };
                let Some(family) = self.attack_family else {
                    return fail(format!("attack algorithm {algorithm} has no attack_family"));
                };
                if let Some(expected) = algorithm.family() {
                    if expected != family {
                        return fail(format!(
                            "attack_family {family} inconsistent with {algorithm} (expected {expected})"
                        ));
                    }
                }
                if self.identities.len() != 2 {
                    return fail(format!(
                        "attack must have exactly 2 identities, found {}",
                        self.identities.len()
                    ));
                }
                if self.identities[0] == self.identities[1] {
                    return fail("attack identities must be distinct".into());
                }
            }
        }
        Ok(())
    }
}

fn opt_field<T: FromStr<Err = String>>(s: &str) -> std::result::Result<Option<T>, String> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse().map(Some)
    }
}

fn parse_record(record: &csv::StringRecord) -> std::result::Result<ManifestEntry, String> {
    if record.len() != MANIFEST_HEADER.len() {
        return Err(format!(
            "expected {} fields, found {}",
            MANIFEST_HEADER.len(),
            record.len()
        ));
    }
    let identities = if record[7].is_empty() {
        Vec::new()
    } else {
        record[7].split('|').map(str::to_string).collect()
    };
    Ok(ManifestEntry {
        sample_id: record[0].to_string(),
        source_dataset: record[1].parse()?,
        label: record[2].parse()?,
        attack_algorithm: opt_field(&record[3])?,
        attack_family: opt_field(&record[4])?,
        domain: record[5].parse()?,
        split: record[6].parse()?,
        identities,
        extractor: record[8].to_string(),
    })
}

/// Parses manifest CSV text. Families missing from attack rows are derived
/// from the algorithm; every entry is validated and sample ids must be unique.
pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    if header.iter().ne(MANIFEST_HEADER.iter().copied()) {
        return Err(Error::Parse {
            line: 1,
            message: format!("bad header, expected `{}`", MANIFEST_HEADER.join(",")),
        });
    }
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let mut entry = parse_record(&record).map_err(|message| Error::Parse { line, message })?;
        entry.normalize()?;
        if !seen.insert(entry.sample_id.clone()) {
            return Err(Error::Invariant {
                sample_id: entry.sample_id,
                message: format!("duplicate sample_id (line {line})"),
            });
        }
        entries.push(entry);
    }
    Ok(entries)
}

pub fn load_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text)
}

pub fn write_manifest_string(entries: &[ManifestEntry]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(MANIFEST_HEADER).unwrap();
    for e in entries {
        let algorithm = e.attack_algorithm.as_ref().map(ToString::to_string).unwrap_or_default();
        let family = e.attack_family.map(|f| f.to_string()).unwrap_or_default();
        writer
            .write_record([
                e.sample_id.as_str(),
                &e.source_dataset.to_string(),
                &e.label.to_string(),
                &algorithm,
                &family,
                &e.domain.to_string(),
                &e.split.to_string(),
                &e.identities.join("|"),
                &e.extractor,
            ])
            .unwrap();
    }
    String::from_utf8(writer.into_inner().unwrap()).unwrap()
}

pub fn write_manifest(entries: &[ManifestEntry], path: &Path) -> Result<()> {
    crate::io::atomic_write(path, write_manifest_string(entries).as_bytes())
}
