//! Principal component analysis truncated at a cumulative explained-variance
//! threshold.
//!
//! The fit eigendecomposes the unbiased sample covariance (`1/(n-1)`), keeps
//! the leading components until their cumulative share of the total variance
//! reaches the threshold, and orients each component so that its
//! largest-magnitude entry is positive. Inputs are only mean-centered, never
//! standardized.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};

pub const DEFAULT_THRESHOLD: f64 = 0.99;
pub const PCA_MAGIC: &[u8; 4] = b"MADP";
pub const PCA_VERSION: u32 = 1;

// Slack when comparing a cumulative ratio against the threshold, so that a
// threshold of exactly 1.0 is reachable despite rounding.
const THRESHOLD_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: DVector<f64>,
    /// `k × d`, orthonormal rows.
    components: DMatrix<f64>,
    explained_variance: Vec<f64>,
    explained_ratio_cumulative: Vec<f64>,
    threshold: f64,
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn n_components(&self) -> usize {
        self.components.nrows()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn components(&self) -> &DMatrix<f64> {
        &self.components
    }

    pub fn explained_variance(&self) -> &[f64] {
        &self.explained_variance
    }

    pub fn explained_ratio_cumulative(&self) -> &[f64] {
        &self.explained_ratio_cumulative
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Projects one sample: `components · (x − mean)`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let centered = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        Ok((&self.components * centered).iter().copied().collect())
    }

    /// Projects every row of an `n × d` matrix.
    pub fn transform_matrix(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        let mut centered = x.clone();
        for mut row in centered.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(centered * self.components.transpose())
    }

    /// Maps a projected vector back to input space: `componentsᵀ · z + mean`.
    pub fn inverse_transform(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.n_components() {
            return Err(Error::DimensionMismatch {
                expected: self.n_components(),
                actual: z.len(),
            });
        }
        let z = DVector::from_column_slice(z);
        Ok((self.components.transpose() * z + &self.mean).iter().copied().collect())
    }

    /// `MADP` blob: magic, version, d, k (u32), threshold (f64), then mean,
    /// row-major components, explained variance and cumulative ratios as
    /// little-endian f64 arrays.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(PCA_MAGIC);
        w.u32(PCA_VERSION);
        w.u32(self.input_dim() as u32);
        w.u32(self.n_components() as u32);
        w.f64(self.threshold);
        w.f64s(self.mean.iter().copied());
        for row in self.components.row_iter() {
            w.f64s(row.iter().copied());
        }
        w.f64s(self.explained_variance.iter().copied());
        w.f64s(self.explained_ratio_cumulative.iter().copied());
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "pca model");
        r.expect_magic(PCA_MAGIC)?;
        r.expect_version(PCA_VERSION)?;
        let d = r.u32()? as usize;
        let k = r.u32()? as usize;
        let threshold = r.f64()?;
        let mean = DVector::from_vec(r.f64s(d)?);
        let components = DMatrix::from_row_slice(k, d, &r.f64s(k * d)?);
        let explained_variance = r.f64s(k)?;
        let explained_ratio_cumulative = r.f64s(k)?;
        r.finish()?;
        if d == 0 || k == 0 || k > d {
            return Err(Error::Format(format!("pca model: invalid shape k={k}, d={d}")));
        }
        Ok(PcaModel {
            mean,
            components,
            explained_variance,
            explained_ratio_cumulative,
            threshold,
        })
    }
}

/// Fits PCA on the rows of `x` (`n × d`), keeping the smallest number of
/// components whose cumulative explained-variance ratio reaches `threshold`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn fit_pca(x: &DMatrix<f64>, threshold: f64) -> Result<PcaModel> {
    let (n, d) = x.shape();
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "explained-variance threshold must lie in (0, 1], got {threshold}"
        )));
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 2, got: n });
    }
    if d == 0 {
        return Err(Error::InvalidArgument("zero-dimensional data".into()));
    }
    for j in 0..d {
        for i in 0..n {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, column: j });
            }
        }
    }

    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let mut cov = centered.tr_mul(&centered) / (n - 1) as f64;
    cov = (&cov + cov.transpose()) * 0.5;

    let total: f64 = cov.diagonal().sum();
    let scale = 1.0 + mean.norm_squared() / d as f64;
    if !(total > 1e-24 * scale) {
        return Err(Error::DegenerateVariance);
    }

    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let max_k = (n - 1).min(d);
    let mut explained_variance = Vec::new();
    let mut explained_ratio_cumulative = Vec::new();
    let mut running = 0.0;
    for &idx in order.iter().take(max_k) {
        let var = eig.eigenvalues[idx].max(0.0);
        running += var;
        explained_variance.push(var);
        explained_ratio_cumulative.push((running / total).min(1.0));
        if running / total >= threshold - THRESHOLD_SLACK {
            break;
        }
    }
    let k = explained_variance.len();

    let mut components = DMatrix::zeros(k, d);
    for (row, &idx) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(idx);
        let mut pivot = 0;
        for j in 1..d {
            if v[j].abs() > v[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..d {
            components[(row, j)] = sign * v[j];
        }
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        explained_ratio_cumulative,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_matrix(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = crate::seed::rng(seed);
        // Anisotropic columns so truncation actually happens.
        DMatrix::from_fn(n, d, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64)
    }

    #[test]
    fn rank_one_line() {
        let x = DMatrix::from_row_slice(4, 2, &[-2.0, -2.0, -1.0, -1.0, 1.0, 1.0, 2.0, 2.0]);
        let m = fit_pca(&x, 0.99).unwrap();
        assert_eq!(m.n_components(), 1);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!((m.components()[(0, 0)] - s).abs() < 1e-12);
        assert!((m.components()[(0, 1)] - s).abs() < 1e-12);
        let z = m.transform(&[3.0, 3.0]).unwrap();
        assert!((z[0] - 3.0 * 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn mean_maps_to_origin() {
        let x = random_matrix(20, 5, 1);
        let m = fit_pca(&x, 0.9).unwrap();
        let mean: Vec<f64> = m.mean().iter().copied().collect();
        assert!(m.transform(&mean).unwrap().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn transformed_variance_matches_explained_variance() {
        let x = random_matrix(60, 6, 2);
        let m = fit_pca(&x, 0.99).unwrap();
        let z = m.transform_matrix(&x).unwrap();
        for c in 0..m.n_components() {
            let col = z.column(c);
            let mu = col.mean();
            let var = col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / (z.nrows() - 1) as f64;
            assert!(
                (var - m.explained_variance()[c]).abs() < 1e-5,
                "{var} vs {}",
                m.explained_variance()[c]
            );
        }
    }

    #[test]
    fn full_threshold_captures_total_variance() {
        let x = random_matrix(30, 5, 3);
        let m = fit_pca(&x, 1.0).unwrap();
        assert_eq!(m.n_components(), 5);
        let mut total = 0.0;
        for j in 0..5 {
            let col = x.column(j);
            let mu = col.mean();
            total += col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 29.0;
        }
        let sum: f64 = m.explained_variance().iter().sum();
        assert!((sum - total).abs() <= 1e-6 * total);
    }

    #[test]
    fn k_bounded_by_sample_count() {
        let x = random_matrix(3, 10, 4);
        let m = fit_pca(&x, 1.0).unwrap();
        assert!(m.n_components() <= 2);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            fit_pca(&DMatrix::from_element(1, 3, 1.0), 0.99),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(matches!(
            fit_pca(&DMatrix::from_element(10, 3, 0.1), 0.99),
            Err(Error::DegenerateVariance)
        ));
        assert!(fit_pca(&random_matrix(10, 3, 0), 0.0).is_err());
        assert!(fit_pca(&random_matrix(10, 3, 0), 1.5).is_err());
        let m = fit_pca(&random_matrix(10, 3, 0), 0.99).unwrap();
        assert!(matches!(m.transform(&[1.0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn blob_round_trip() {
        let m = fit_pca(&random_matrix(25, 4, 5), 0.95).unwrap();
        let back = PcaModel::from_bytes(&m.to_bytes()).unwrap();
        assert_eq!(back, m);
        let mut bad = m.to_bytes();
        bad.pop();
        assert!(PcaModel::from_bytes(&bad).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn model_invariants(n in 5usize..40, d in 1usize..10, seed in any::<u64>(), threshold in 0.3f64..=1.0) {
            let x = random_matrix(n, d, seed);
            let m = fit_pca(&x, threshold).unwrap();
            let k = m.n_components();
            let gram = m.components() * m.components().transpose();
            prop_assert!((gram - DMatrix::<f64>::identity(k, k)).abs().max() < 1e-6);
            prop_assert!(m.explained_variance().windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(m.explained_ratio_cumulative().windows(2).all(|w| w[0] <= w[1]));
            let cum = m.explained_ratio_cumulative();
            if k < (n - 1).min(d) {
                prop_assert!(cum[k - 1] >= threshold - 1e-12);
            }
            if k > 1 {
                prop_assert!(cum[k - 2] < threshold - 1e-12);
            }
            // Sign convention.
            for row in m.components().row_iter() {
                let pivot = row.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
                prop_assert!(pivot > 0.0);
            }
        }

        #[test]
        fn reconstruct_then_project_is_stable(seed in any::<u64>()) {
            let x = random_matrix(30, 6, seed);
            let m = fit_pca(&x, 0.9).unwrap();
            let probe: Vec<f64> = x.row(0).iter().map(|v| v * 1.5).collect();
            let z = m.transform(&probe).unwrap();
            let z2 = m.transform(&m.inverse_transform(&z).unwrap()).unwrap();
            for (a, b) in z.iter().zip(&z2) {
                prop_assert!((a - b).abs() < 1e-6);
            }
        }

        #[test]
        fn fit_is_deterministic(seed in any::<u64>()) {
            let x = random_matrix(15, 4, seed);
            prop_assert_eq!(fit_pca(&x, 0.99).unwrap().to_bytes(), fit_pca(&x, 0.99).unwrap().to_bytes());
        }
    }
}
