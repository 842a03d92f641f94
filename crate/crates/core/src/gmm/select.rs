use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_gmm, CovarianceType, EmParams, GmmModel};
use crate::error::{Error, Result};
use crate::feature_store::{DatasetHandle, Label};
use crate::metrics::deer_of;
use crate::pca::{fit_pca, PcaModel};
use crate::seed;

// Mean D-EERs closer than this are ties.
const TIE_EPS: f64 = 1e-12;

/// Powers of two from 1 to 256.
pub fn default_k_grid() -> Vec<usize> {
    (0..=8).map(|p| 1usize << p).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectionConfig {
    pub k_grid: Vec<usize>,
    pub cov_types: Vec<CovarianceType>,
    pub folds: usize,
    pub seed: u64,
    pub em: EmConfig,
}

/// Serializable mirror of [`EmParams`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmConfig {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        let p = EmParams::default();
        EmConfig {
            tol: p.tol,
            max_iter: p.max_iter,
        }
    }
}

impl From<EmConfig> for EmParams {
    fn from(c: EmConfig) -> Self {
        EmParams {
            tol: c.tol,
            max_iter: c.max_iter,
        }
    }
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            k_grid: default_k_grid(),
            cov_types: vec![CovarianceType::Spherical, CovarianceType::Diagonal],
            folds: 4,
            seed: 0,
            em: EmConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub n_components: usize,
    pub cov_type: CovarianceType,
    /// Mean validation D-EER over folds; `None` when the cell was skipped.
    pub mean_deer: Option<f64>,
    pub fold_deers: Vec<f64>,
    pub skipped: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmSelectionReport {
    pub grid: Vec<GridCell>,
    pub chosen_components: usize,
    pub chosen_cov_type: CovarianceType,
    pub folds: usize,
    /// Set when no validation attacks were available and the fixed
    /// single-component spherical model was used.
    pub fallback: Option<String>,
}

impl GmmSelectionReport {
    fn fallback(folds: usize) -> Self {
        GmmSelectionReport {
            grid: Vec::new(),
            chosen_components: 1,
            chosen_cov_type: CovarianceType::Spherical,
            folds,
            fallback: Some("no attack samples available for validation; using K=1 spherical".into()),
        }
    }

    pub fn cell(&self, n_components: usize, cov_type: CovarianceType) -> Option<&GridCell> {
        self.grid
            .iter()
            .find(|c| c.n_components == n_components && c.cov_type == cov_type)
    }
}

fn fold_of(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seed::rng(seed));
    let mut out = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        out[i] = pos * folds / n;
    }
    out
}

fn rows(x: &DMatrix<f64>, keep: impl Fn(usize) -> bool) -> DMatrix<f64> {
    let idx: Vec<usize> = (0..x.nrows()).filter(|&i| keep(i)).collect();
    x.select_rows(idx.iter())
}

struct Fold {
    train: DMatrix<f64>,
    val_bonafide: DMatrix<f64>,
    val_attack: DMatrix<f64>,
}

fn cov_rank(c: CovarianceType) -> u8 {
    match c {
        CovarianceType::Spherical => 0,
        CovarianceType::Diagonal => 1,
    }
}

/// Cross-validates every `(K, covariance)` cell of the grid.
///
/// Bonafide and attack samples are each split into `folds` seeded folds. For
/// fold `f` the mixture is fitted on the other bonafide folds and scored on
/// bonafide fold `f` and attack fold `f`. With `fold_pca = Some(t)`, a PCA at
/// threshold `t` is refitted on each fold's bonafide training part and
/// applied to all three sets. The chosen cell minimizes mean D-EER; ties go
/// to fewer components, then to spherical.
pub fn cross_validate(
    bonafide: &DMatrix<f64>,
    attack: &DMatrix<f64>,
    config: &SelectionConfig,
    fold_pca: Option<f64>,
) -> Result<GmmSelectionReport> {
    let folds = config.folds;
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if bonafide.ncols() != attack.ncols() && attack.nrows() > 0 {
        return Err(Error::DimensionMismatch {
            expected: bonafide.ncols(),
            actual: attack.ncols(),
        });
    }
    if bonafide.nrows() < folds {
        return Err(Error::InsufficientSamples {
            needed: folds,
            got: bonafide.nrows(),
        });
    }
    if attack.nrows() == 0 {
        return Ok(GmmSelectionReport::fallback(folds));
    }
    if attack.nrows() < folds {
        return Err(Error::InsufficientSamples {
            needed: folds,
            got: attack.nrows(),
        });
    }

    let b_fold = fold_of(
        bonafide.nrows(),
        folds,
        seed::derive(config.seed, &[seed::tag("bonafide-folds")]),
    );
    let a_fold = fold_of(
        attack.nrows(),
        folds,
        seed::derive(config.seed, &[seed::tag("attack-folds")]),
    );
    let fold_data: Vec<Fold> = (0..folds)
        .map(|f| {
            let train = rows(bonafide, |i| b_fold[i] != f);
            let val_bonafide = rows(bonafide, |i| b_fold[i] == f);
            let val_attack = rows(attack, |i| a_fold[i] == f);
            match fold_pca {
                None => Ok(Fold {
                    train,
                    val_bonafide,
                    val_attack,
                }),
                Some(threshold) => {
                    let pca = fit_pca(&train, threshold)?;
                    Ok(Fold {
                        train: pca.transform_matrix(&train)?,
                        val_bonafide: pca.transform_matrix(&val_bonafide)?,
                        val_attack: pca.transform_matrix(&val_attack)?,
                    })
                }
            }
        })
        .collect::<Result<_>>()?;
    let min_train = fold_data.iter().map(|f| f.train.nrows()).min().unwrap();

    let mut cells: Vec<(usize, CovarianceType)> = Vec::new();
    let mut k_grid = config.k_grid.clone();
    k_grid.sort_unstable();
    k_grid.dedup();
    let mut cov_types = config.cov_types.clone();
    cov_types.sort_by_key(|&c| cov_rank(c));
    cov_types.dedup();
    if k_grid.is_empty() || cov_types.is_empty() || k_grid[0] == 0 {
        return Err(Error::InvalidArgument("empty or invalid selection grid".into()));
    }
    for &k in &k_grid {
        for &c in &cov_types {
            cells.push((k, c));
        }
    }

    let em: EmParams = config.em.into();
    let grid: Vec<GridCell> = cells
        .par_iter()
        .map(|&(k, cov_type)| {
            let mut cell = GridCell {
                n_components: k,
                cov_type,
                mean_deer: None,
                fold_deers: Vec::new(),
                skipped: None,
            };
            if k > min_train {
                cell.skipped = Some(format!("K={k} exceeds training fold size {min_train}"));
                return cell;
            }
            for (f, fold) in fold_data.iter().enumerate() {
                let fit_seed = seed::derive(config.seed, &[k as u64, u64::from(cov_rank(cov_type)), f as u64]);
                let outcome = fit_gmm(&fold.train, k, cov_type, fit_seed, &em).and_then(|m| {
                    let neg = |x: &DMatrix<f64>| -> Result<Vec<f64>> {
                        Ok(m.score_samples(x)?.into_iter().map(|v| -v).collect())
                    };
                    deer_of(&neg(&fold.val_bonafide)?, &neg(&fold.val_attack)?)
                });
                match outcome {
                    Ok(d) => cell.fold_deers.push(d),
                    Err(e) => {
                        cell.skipped = Some(format!("fold {f}: {e}"));
                        cell.fold_deers.clear();
                        return cell;
                    }
                }
            }
            cell.mean_deer = Some(cell.fold_deers.iter().sum::<f64>() / folds as f64);
            cell
        })
        .collect();

    // Cells are in tie-break order, so only a strict improvement replaces.
    let mut best: Option<&GridCell> = None;
    for cell in &grid {
        if let Some(m) = cell.mean_deer {
            if best.is_none_or(|b| m < b.mean_deer.unwrap() - TIE_EPS) {
                best = Some(cell);
            }
        }
    }
    let best = best.ok_or_else(|| {
        Error::InvalidArgument(format!(
            "every selection cell was skipped ({})",
            grid.first().and_then(|c| c.skipped.clone()).unwrap_or_default()
        ))
    })?;
    Ok(GmmSelectionReport {
        chosen_components: best.n_components,
        chosen_cov_type: best.cov_type,
        folds,
        fallback: None,
        grid,
    })
}

/// Selects a mixture in the space of the given matrices and refits the chosen
/// cell on all bonafide samples.
pub fn select_gmm(
    bonafide: &DMatrix<f64>,
    attack: &DMatrix<f64>,
    config: &SelectionConfig,
) -> Result<(GmmModel, GmmSelectionReport)> {
    let report = cross_validate(bonafide, attack, config, None)?;
    let model = refit(bonafide, &report, config)?;
    Ok((model, report))
}

fn refit(bonafide: &DMatrix<f64>, report: &GmmSelectionReport, config: &SelectionConfig) -> Result<GmmModel> {
    fit_gmm(
        bonafide,
        report.chosen_components,
        report.chosen_cov_type,
        seed::derive(config.seed, &[seed::tag("final")]),
        &config.em.into(),
    )
}

/// PCA followed by a bonafide mixture; the detector score is the negative
/// log-likelihood, so attacks score high.
#[derive(Debug, Clone, PartialEq)]
pub struct OneClassDetector {
    pub pca: PcaModel,
    pub gmm: GmmModel,
    pub extractor_name: String,
}

impl OneClassDetector {
    pub fn new(pca: PcaModel, gmm: GmmModel, extractor_name: impl Into<String>) -> Result<Self> {
        if pca.n_components() != gmm.dim() {
            return Err(Error::DimensionMismatch {
                expected: pca.n_components(),
                actual: gmm.dim(),
            });
        }
        Ok(OneClassDetector {
            pca,
            gmm,
            extractor_name: extractor_name.into(),
        })
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        Ok(-self.gmm.log_likelihood(&self.pca.transform(x)?)?)
    }

    pub fn score_matrix(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let z = self.pca.transform_matrix(x)?;
        Ok(self.gmm.score_samples(&z)?.into_iter().map(|v| -v).collect())
    }
}

/// Trains a one-class detector.
///
/// PCA is fitted on the bonafide training features only. `attack_train`
/// enters solely as validation data for the cross-validated grid search
/// (with the PCA refitted inside every fold); when it is empty the fixed
/// `K=1` spherical model is used.
pub fn train_oneclass_detector(
    bonafide_train: &DatasetHandle,
    attack_train: &DatasetHandle,
    threshold: f64,
    config: &SelectionConfig,
) -> Result<(OneClassDetector, GmmSelectionReport)> {
    if bonafide_train.is_empty() {
        return Err(Error::MissingSlice("bonafide training samples".into()));
    }
    for (handle, label) in [(bonafide_train, Label::Bonafide), (attack_train, Label::Attack)] {
        if let Some(e) = handle.entries().iter().find(|e| e.label != label) {
            return Err(Error::Invariant {
                sample_id: e.sample_id.clone(),
                message: format!("expected only {label} samples in this slice"),
            });
        }
    }
    let xb = bonafide_train.design_matrix();
    let xa = attack_train.design_matrix();
    let pca = fit_pca(&xb, threshold)?;
    let report = cross_validate(&xb, &xa, config, Some(threshold))?;
    let gmm = refit(&pca.transform_matrix(&xb)?, &report, config)?;
    let detector = OneClassDetector::new(pca, gmm, bonafide_train.extractor().unwrap_or_default())?;
    Ok((detector, report))
}
