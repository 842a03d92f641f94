//! Serialized detectors.
//!
//! A `MADD` file holds one trained detector: magic, version, a kind tag
//! (u8: 1 supervised, 2 one-class), then three length-prefixed sections:
//! JSON metadata, the PCA blob and the classifier blob.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::feature_store::{write_manifest_string, ManifestEntry};
use crate::gmm::{GmmModel, OneClassDetector};
use crate::io::{atomic_write, read_file, ByteReader, ByteWriter};
use crate::pca::PcaModel;
use crate::svm::{SupervisedDetector, SvmModel};

pub const DETECTOR_MAGIC: &[u8; 4] = b"MADD";
pub const DETECTOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Supervised,
    OneClass,
}

impl DetectorKind {
    fn tag(self) -> u8 {
        match self {
            DetectorKind::Supervised => 1,
            DetectorKind::OneClass => 2,
        }
    }
}

/// Provenance stored next to the model parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorMetadata {
    pub kind: DetectorKind,
    pub extractor_name: String,
    pub pca_threshold: f64,
    pub n_components: usize,
    pub input_dim: usize,
    /// SVM C, supervised only.
    pub c_param: Option<f64>,
    pub feature_normalization: String,
    /// SHA-256 of the training manifest in canonical CSV form.
    pub training_manifest_sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Detector {
    Supervised(SupervisedDetector),
    OneClass(OneClassDetector),
}

/// Hex SHA-256 of `entries` written as manifest CSV.
pub fn manifest_digest(entries: &[ManifestEntry]) -> String {
    hex::encode(Sha256::digest(write_manifest_string(entries).as_bytes()))
}

impl Detector {
    pub fn kind(&self) -> DetectorKind {
        match self {
            Detector::Supervised(_) => DetectorKind::Supervised,
            Detector::OneClass(_) => DetectorKind::OneClass,
        }
    }

    pub fn pca(&self) -> &PcaModel {
        match self {
            Detector::Supervised(d) => &d.pca,
            Detector::OneClass(d) => &d.pca,
        }
    }

    pub fn extractor_name(&self) -> &str {
        match self {
            Detector::Supervised(d) => &d.extractor_name,
            Detector::OneClass(d) => &d.extractor_name,
        }
    }

    /// Higher means more likely an attack.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        match self {
            Detector::Supervised(d) => d.score(x),
            Detector::OneClass(d) => d.score(x),
        }
    }

    pub fn score_matrix(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        match self {
            Detector::Supervised(d) => d.score_matrix(x),
            Detector::OneClass(d) => d.score_matrix(x),
        }
    }

    pub fn metadata(&self, training: &[ManifestEntry]) -> DetectorMetadata {
        let pca = self.pca();
        DetectorMetadata {
            kind: self.kind(),
            extractor_name: self.extractor_name().to_string(),
            pca_threshold: pca.threshold(),
            n_components: pca.n_components(),
            input_dim: pca.input_dim(),
            c_param: match self {
                Detector::Supervised(d) => Some(d.svm.c_param()),
                Detector::OneClass(_) => None,
            },
            feature_normalization: "none".into(),
            training_manifest_sha256: manifest_digest(training),
        }
    }

    pub fn to_bytes(&self, metadata: &DetectorMetadata) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(DETECTOR_MAGIC);
        w.u32(DETECTOR_VERSION);
        w.u8(self.kind().tag());
        w.section(&serde_json::to_vec(metadata)?);
        w.section(&self.pca().to_bytes());
        w.section(&match self {
            Detector::Supervised(d) => d.svm.to_bytes(),
            Detector::OneClass(d) => d.gmm.to_bytes(),
        });
        Ok(w.into_inner())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, DetectorMetadata)> {
        let mut r = ByteReader::new(bytes, "detector");
        r.expect_magic(DETECTOR_MAGIC)?;
        r.expect_version(DETECTOR_VERSION)?;
        let tag = r.u8()?;
        let metadata: DetectorMetadata = serde_json::from_slice(r.section()?)?;
        let pca = PcaModel::from_bytes(r.section()?)?;
        let body = r.section()?;
        r.finish()?;
        let name = metadata.extractor_name.clone();
        let detector = match tag {
            1 => Detector::Supervised(SupervisedDetector::new(pca, SvmModel::from_bytes(body)?, name)?),
            2 => Detector::OneClass(OneClassDetector::new(pca, GmmModel::from_bytes(body)?, name)?),
            t => return Err(Error::Format(format!("detector: unknown kind tag {t}"))),
        };
        if detector.kind() != metadata.kind {
            return Err(Error::Format("detector: kind tag disagrees with metadata".into()));
        }
        Ok((detector, metadata))
    }

    pub fn save(&self, metadata: &DetectorMetadata, path: &Path) -> Result<()> {
        atomic_write(path, &self.to_bytes(metadata)?)
    }

    pub fn load(path: &Path) -> Result<(Self, DetectorMetadata)> {
        Detector::from_bytes(&read_file(path)?)
    }
}
