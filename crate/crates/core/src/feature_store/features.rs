use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_file, ByteReader, ByteWriter};

pub const FEATURE_MAGIC: &[u8; 4] = b"MADF";
pub const FEATURE_VERSION: u32 = 1;

/// Dense row-major `f32` feature vectors keyed by sample id.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    dim: usize,
    sample_ids: Vec<String>,
    data: Vec<f32>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major `data`, checking that ids are unique,
    /// that `data` holds exactly one row per id and that every value is finite.
    pub fn new(dim: usize, sample_ids: Vec<String>, data: Vec<f32>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("feature file: dim must be positive".into()));
        }
        if u32::try_from(dim).is_err() || u32::try_from(sample_ids.len()).is_err() {
            return Err(Error::Format("feature file: dim or count exceeds u32".into()));
        }
        if data.len() != dim * sample_ids.len() {
            return Err(Error::Format(format!(
                "payload length mismatch: {} values for {} rows of dim {dim}",
                data.len(),
                sample_ids.len()
            )));
        }
        let mut seen = HashSet::with_capacity(sample_ids.len());
        for id in &sample_ids {
            if id.contains('\0') {
                return Err(Error::Format(format!("feature file: sample id {id:?} contains NUL")));
            }
            if !seen.insert(id.as_str()) {
                return Err(Error::Format(format!("feature file: duplicate sample_id {id:?}")));
            }
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / dim,
                column: pos % dim,
            });
        }
        Ok(FeatureMatrix { dim, sample_ids, data })
    }

    pub fn from_rows(dim: usize, rows: Vec<(String, Vec<f32>)>) -> Result<Self> {
        let mut ids = Vec::with_capacity(rows.len());
        let mut data = Vec::with_capacity(rows.len() * dim);
        for (id, row) in rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: row.len(),
                });
            }
            ids.push(id);
            data.extend(row);
        }
        Self::new(dim, ids, data)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sample_ids.is_empty()
    }

    pub fn sample_ids(&self) -> &[String] {
        &self.sample_ids
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(FEATURE_MAGIC);
        w.u32(FEATURE_VERSION);
        w.u32(self.dim as u32);
        w.u32(self.sample_ids.len() as u32);
        for id in &self.sample_ids {
            w.bytes(id.as_bytes());
            w.u8(0);
        }
        for &v in &self.data {
            w.f32(v);
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "feature file");
        r.expect_magic(FEATURE_MAGIC)?;
        r.expect_version(FEATURE_VERSION)?;
        let dim = r.u32()? as usize;
        let count = r.u32()? as usize;
        let mut ids = Vec::with_capacity(count.min(1 << 20));
        for _ in 0..count {
            let rest = &bytes[r.position()..];
            let end = rest
                .iter()
                .position(|&b| b == 0)
                .ok_or_else(|| Error::Format("feature file: unterminated sample id".into()))?;
            let raw = r.take(end + 1)?;
            let id = std::str::from_utf8(&raw[..end])
                .map_err(|_| Error::Format("feature file: sample id is not valid UTF-8".into()))?;
            ids.push(id.to_string());
        }
        let expected = count
            .checked_mul(dim)
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("feature file: payload length mismatch".into()))?;
        if r.remaining() != expected {
            return Err(Error::Format(format!(
                "payload length mismatch: expected {expected} bytes, found {}",
                r.remaining()
            )));
        }
        let data = r
            .take(expected)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dim, ids, data)
    }
}

pub fn read_features(path: &Path) -> Result<FeatureMatrix> {
    FeatureMatrix::from_bytes(&read_file(path)?)
}

pub fn write_features(matrix: &FeatureMatrix, path: &Path) -> Result<()> {
    atomic_write(path, &matrix.to_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn single_row_round_trip() {
        let m = FeatureMatrix::new(3, vec!["a".into()], vec![1.0, 2.0, 3.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("f.madf");
        write_features(&m, &path).unwrap();
        assert_eq!(read_features(&path).unwrap(), m);
    }

    #[test]
    fn empty_matrix_is_valid() {
        let m = FeatureMatrix::new(512, vec![], vec![]).unwrap();
        let bytes = m.to_bytes();
        assert_eq!(bytes.len(), 16);
        assert_eq!(&bytes[12..16], &0u32.to_le_bytes());
        let back = FeatureMatrix::from_bytes(&bytes).unwrap();
        assert_eq!(back.dim(), 512);
        assert!(back.is_empty());
    }

    #[test]
    fn layout_is_bit_exact() {
        let m = FeatureMatrix::new(2, vec!["ab".into(), "c".into()], vec![1.0, -0.5, 0.25, 2.0]).unwrap();
        let mut expected = Vec::new();
        expected.extend_from_slice(b"MADF");
        expected.extend_from_slice(&1u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(&2u32.to_le_bytes());
        expected.extend_from_slice(b"ab\0c\0");
        for v in [1.0f32, -0.5, 0.25, 2.0] {
            expected.extend_from_slice(&v.to_le_bytes());
        }
        assert_eq!(m.to_bytes(), expected);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let m = FeatureMatrix::new(2, vec!["a".into(), "b".into()], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = m.to_bytes();
        let err = FeatureMatrix::from_bytes(&bytes[..bytes.len() - 8]).unwrap_err();
        assert!(err.to_string().contains("payload length mismatch"), "{err}");
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let mut bytes = FeatureMatrix::new(1, vec![], vec![]).unwrap().to_bytes();
        bytes[0] = b'X';
        assert!(FeatureMatrix::from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("magic"));
        let mut bytes = FeatureMatrix::new(1, vec![], vec![]).unwrap().to_bytes();
        bytes[4] = 2;
        assert!(FeatureMatrix::from_bytes(&bytes)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        assert!(FeatureMatrix::new(1, vec!["a".into(), "a".into()], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn non_finite_is_rejected() {
        let err = FeatureMatrix::new(2, vec!["a".into()], vec![0.0, f32::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { row: 0, column: 1 }));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn bytes_round_trip_bit_exact(
            dim in 1usize..64,
            count in 0usize..40,
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = crate::seed::rng(seed);
            let ids: Vec<String> = (0..count).map(|i| format!("s{i}-{}", rng.random::<u16>())).collect();
            let data: Vec<f32> = (0..dim * count)
                .map(|_| f32::from_bits(rng.random::<u32>()))
                .map(|v| if v.is_finite() { v } else { 0.0 })
                .collect();
            let m = FeatureMatrix::new(dim, ids, data).unwrap();
            let back = FeatureMatrix::from_bytes(&m.to_bytes()).unwrap();
            prop_assert_eq!(back.dim(), m.dim());
            prop_assert_eq!(back.sample_ids(), m.sample_ids());
            let same = back.as_slice().iter().zip(m.as_slice()).all(|(a, b)| a.to_bits() == b.to_bits());
            prop_assert!(same);
        }
    }
}
