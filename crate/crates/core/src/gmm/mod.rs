//! Gaussian mixtures with diagonal or spherical covariances, fitted by EM.
//!
//! The one-class detector models bonafide PCA features with a mixture and
//! scores a sample by its negative log-likelihood; [`select`] chooses the
//! component count and covariance type by cross-validated D-EER.

mod select;

pub use select::{
    cross_validate, default_k_grid, select_gmm, train_oneclass_detector, EmConfig, GmmSelectionReport, GridCell,
    OneClassDetector, SelectionConfig,
};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{ByteReader, ByteWriter};
use crate::seed;

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const GMM_MAGIC: &[u8; 4] = b"MADG";
pub const GMM_VERSION: u32 = 1;

// A component whose responsibility mass falls below this is empty.
const EMPTY_MASS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceType {
    Spherical,
    Diagonal,
}

impl std::fmt::Display for CovarianceType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CovarianceType::Spherical => "spherical",
            CovarianceType::Diagonal => "diagonal",
        })
    }
}

impl std::str::FromStr for CovarianceType {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "spherical" => Ok(CovarianceType::Spherical),
            "diagonal" => Ok(CovarianceType::Diagonal),
            other => Err(format!("unknown covariance type {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    cov_type: CovarianceType,
    weights: Vec<f64>,
    /// `K × dim`.
    means: DMatrix<f64>,
    /// `K × dim` for diagonal, `K × 1` for spherical.
    variances: DMatrix<f64>,
}

impl GmmModel {
    pub fn new(
        cov_type: CovarianceType,
        weights: Vec<f64>,
        means: DMatrix<f64>,
        variances: DMatrix<f64>,
    ) -> Result<Self> {
        let k = weights.len();
        let cols = match cov_type {
            CovarianceType::Diagonal => means.ncols(),
            CovarianceType::Spherical => 1,
        };
        if k == 0 || means.nrows() != k || variances.shape() != (k, cols) || means.ncols() == 0 {
            return Err(Error::InvalidArgument("inconsistent mixture shapes".into()));
        }
        let all = weights.iter().chain(means.iter()).chain(variances.iter());
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("mixture parameters must be finite".into()));
        }
        if weights.iter().any(|&w| w < 0.0) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(
                "mixture weights must be nonnegative and sum to 1".into(),
            ));
        }
        if variances.iter().any(|&v| v < VARIANCE_FLOOR) {
            return Err(Error::InvalidArgument(format!(
                "variances must be at least {VARIANCE_FLOOR}"
            )));
        }
        Ok(GmmModel {
            cov_type,
            weights,
            means,
            variances,
        })
    }

    pub fn cov_type(&self) -> CovarianceType {
        self.cov_type
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means.ncols()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &DMatrix<f64> {
        &self.means
    }

    /// Per-component variances: `K × dim` (diagonal) or `K × 1` (spherical).
    pub fn variances(&self) -> &DMatrix<f64> {
        &self.variances
    }

    fn variance(&self, j: usize, d: usize) -> f64 {
        match self.cov_type {
            CovarianceType::Diagonal => self.variances[(j, d)],
            CovarianceType::Spherical => self.variances[(j, 0)],
        }
    }

    /// Same mixture with spherical variances expanded to diagonal form.
    pub fn to_diagonal(&self) -> GmmModel {
        let variances = DMatrix::from_fn(self.n_components(), self.dim(), |j, d| self.variance(j, d));
        GmmModel {
            cov_type: CovarianceType::Diagonal,
            weights: self.weights.clone(),
            means: self.means.clone(),
            variances,
        }
    }

    /// Log density of component `j` at `x`, plus its log weight.
    pub fn component_log_joint(&self, j: usize, x: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut log_det = 0.0;
        for (d, &xd) in x.iter().enumerate() {
            let var = self.variance(j, d);
            let diff = xd - self.means[(j, d)];
            quad += diff * diff / var;
            log_det += var.ln();
        }
        self.weights[j].ln() - 0.5 * (self.dim() as f64 * (2.0 * PI).ln() + log_det + quad)
    }

    /// `log Σ_j w_j N(x; μ_j, Σ_j)`, evaluated with log-sum-exp.
    pub fn log_likelihood(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        let terms: Vec<f64> = (0..self.n_components())
            .map(|j| self.component_log_joint(j, x))
            .collect();
        Ok(log_sum_exp(&terms))
    }

    /// Log-likelihood of every row of `x`.
    pub fn score_samples(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.ncols(),
            });
        }
        let data = Data::new(x);
        Ok(self
            .log_joint(&data)
            .column_iter()
            .map(|c| log_sum_exp(c.as_slice()))
            .collect())
    }

    /// `K × n` matrix of `log w_j + log N_j(x_i)`.
    fn log_joint(&self, data: &Data) -> DMatrix<f64> {
        let (k, dim) = (self.n_components(), self.dim());
        let full_var = match self.cov_type {
            CovarianceType::Diagonal => self.variances.clone(),
            CovarianceType::Spherical => self.to_diagonal().variances,
        };
        let prec = full_var.map(|v| 1.0 / v);
        let prec_mean = prec.component_mul(&self.means);
        // Σ_d μ²/σ² per component.
        let mean_sq: Vec<f64> = (0..k)
            .map(|j| (0..dim).map(|d| self.means[(j, d)] * prec_mean[(j, d)]).sum())
            .collect();
        let log_norm: Vec<f64> = (0..k)
            .map(|j| {
                let log_det: f64 = (0..dim).map(|d| full_var[(j, d)].ln()).sum();
                self.weights[j].ln() - 0.5 * (dim as f64 * (2.0 * PI).ln() + log_det)
            })
            .collect();

        let sq_term = match self.cov_type {
            CovarianceType::Diagonal => &prec * &data.xt_sq,
            CovarianceType::Spherical => {
                let p = DVector::from_fn(k, |j, _| 1.0 / self.variances[(j, 0)]);
                &p * data.sq_norms.transpose()
            }
        };
        let mut out = &prec_mean * &data.xt;
        for i in 0..data.n {
            for j in 0..k {
                let quad = (sq_term[(j, i)] - 2.0 * out[(j, i)] + mean_sq[j]).max(0.0);
                out[(j, i)] = log_norm[j] - 0.5 * quad;
            }
        }
        out
    }

    /// `MADG` blob: magic, version, covariance tag (u8: 0 spherical,
    /// 1 diagonal), K, dim (u32), then weights, row-major means and
    /// variances as little-endian f64 arrays.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(GMM_MAGIC);
        w.u32(GMM_VERSION);
        w.u8(match self.cov_type {
            CovarianceType::Spherical => 0,
            CovarianceType::Diagonal => 1,
        });
        w.u32(self.n_components() as u32);
        w.u32(self.dim() as u32);
        w.f64s(self.weights.iter().copied());
        for row in self.means.row_iter() {
            w.f64s(row.iter().copied());
        }
        for row in self.variances.row_iter() {
            w.f64s(row.iter().copied());
        }
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "gmm model");
        r.expect_magic(GMM_MAGIC)?;
        r.expect_version(GMM_VERSION)?;
        let cov_type = match r.u8()? {
            0 => CovarianceType::Spherical,
            1 => CovarianceType::Diagonal,
            t => return Err(Error::Format(format!("gmm model: unknown covariance tag {t}"))),
        };
        let k = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let weights = r.f64s(k)?;
        let means = DMatrix::from_row_slice(k, dim, &r.f64s(k * dim)?);
        let cols = if cov_type == CovarianceType::Diagonal { dim } else { 1 };
        let variances = DMatrix::from_row_slice(k, cols, &r.f64s(k * cols)?);
        r.finish()?;
        GmmModel::new(cov_type, weights, means, variances)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Training data laid out for the batched E and M steps.
struct Data {
    n: usize,
    x: DMatrix<f64>,
    x_sq: DMatrix<f64>,
    /// `dim × n`.
    xt: DMatrix<f64>,
    xt_sq: DMatrix<f64>,
    sq_norms: DVector<f64>,
}

impl Data {
    fn new(x: &DMatrix<f64>) -> Self {
        let x_sq = x.map(|v| v * v);
        let sq_norms = DVector::from_iterator(x.nrows(), x_sq.row_iter().map(|r| r.sum()));
        Data {
            n: x.nrows(),
            xt: x.transpose(),
            xt_sq: x_sq.transpose(),
            x: x.clone(),
            x_sq,
            sq_norms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmParams {
    /// Stop when the relative improvement of the average log-likelihood
    /// falls below this value.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for EmParams {
    fn default() -> Self {
        EmParams {
            tol: 1e-5,
            max_iter: 200,
        }
    }
}

/// Result of an EM run with its diagnostics.
#[derive(Debug, Clone)]
pub struct GmmFit {
    pub model: GmmModel,
    /// Average training log-likelihood of the initial parameters, then after
    /// every EM iteration.
    pub log_likelihood_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Trace index at which an empty component was re-seeded. The trace is
    /// monotone on either side of it.
    pub reseeded_at: Option<usize>,
}

pub fn fit_gmm(
    x: &DMatrix<f64>,
    n_components: usize,
    cov_type: CovarianceType,
    seed: u64,
    params: &EmParams,
) -> Result<GmmModel> {
    fit_gmm_traced(x, n_components, cov_type, seed, params).map(|f| f.model)
}

/// Fits a `n_components` mixture to the rows of `x`.
///
/// Initialization draws k-means++ seeds and hard-assigns every sample to its
/// nearest seed before the first M step. Variances are floored at
/// [`VARIANCE_FLOOR`]. A component left without responsibility mass is
/// re-seeded once at the worst-explained sample; a second collapse is an
/// error.
pub fn fit_gmm_traced(
    x: &DMatrix<f64>,
    n_components: usize,
    cov_type: CovarianceType,
    seed: u64,
    params: &EmParams,
) -> Result<GmmFit> {
    let (n, dim) = x.shape();
    if n_components == 0 {
        return Err(Error::InvalidArgument("mixture needs at least one component".into()));
    }
    if dim == 0 {
        return Err(Error::InvalidArgument("zero-dimensional data".into()));
    }
    if n < n_components {
        return Err(Error::TooManyComponents {
            components: n_components,
            samples: n,
        });
    }
    for j in 0..dim {
        for i in 0..n {
            if !x[(i, j)].is_finite() {
                return Err(Error::NonFinite { row: i, column: j });
            }
        }
    }

    let data = Data::new(x);
    let global_var = {
        let mean = x.row_mean();
        DVector::from_fn(dim, |d, _| {
            let v = x.column(d).iter().map(|v| (v - mean[d]).powi(2)).sum::<f64>() / n as f64;
            v.max(VARIANCE_FLOOR)
        })
    };

    // k-means++ seeding then hard assignment.
    let centers = kmeans_pp(x, n_components, &mut seed::rng(seed));
    let mut resp = DMatrix::zeros(n_components, n);
    for i in 0..n {
        let row = x.row(i);
        let mut best = (f64::INFINITY, 0);
        for (j, &c) in centers.iter().enumerate() {
            let d2 = (row - x.row(c)).norm_squared();
            if d2 < best.0 {
                best = (d2, j);
            }
        }
        resp[(best.1, i)] = 1.0;
    }
    let mut model = m_step(&data, &resp, cov_type);
    for (j, &c) in centers.iter().enumerate() {
        if resp.row(j).sum() < EMPTY_MASS {
            reseed_component(&mut model, j, x.row(c).transpose().as_slice(), &global_var);
        }
    }
    renormalize(&mut model);

    let (mut resp, mut ll) = e_step(&model, &data);
    let mut trace = vec![ll];
    let mut reseeded_at = None;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < params.max_iter {
        iterations += 1;
        let mut next = m_step(&data, &resp, cov_type);
        let empty: Vec<usize> = (0..n_components).filter(|&j| resp.row(j).sum() < EMPTY_MASS).collect();
        if !empty.is_empty() {
            if reseeded_at.is_some() {
                return Err(Error::ComponentCollapse { component: empty[0] });
            }
            // Worst-explained samples under the current model, one per component.
            let per_sample = per_sample_ll(&model, &data);
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| per_sample[a].total_cmp(&per_sample[b]).then(a.cmp(&b)));
            for (slot, &j) in empty.iter().enumerate() {
                let at = x.row(order[slot % n]).transpose();
                reseed_component(&mut next, j, at.as_slice(), &global_var);
            }
            renormalize(&mut next);
            reseeded_at = Some(trace.len());
        }
        model = next;
        let (r, next_ll) = e_step(&model, &data);
        resp = r;
        let improvement = next_ll - ll;
        trace.push(next_ll);
        let just_reseeded = reseeded_at == Some(trace.len() - 1);
        ll = next_ll;
        if !just_reseeded && improvement.abs() < params.tol * trace[trace.len() - 2].abs() {
            converged = true;
            break;
        }
    }

    Ok(GmmFit {
        model,
        log_likelihood_trace: trace,
        iterations,
        converged,
        reseeded_at,
    })
}

fn kmeans_pp(x: &DMatrix<f64>, k: usize, rng: &mut impl Rng) -> Vec<usize> {
    let n = x.nrows();
    let mut centers = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| (x.row(i) - x.row(centers[0])).norm_squared()).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &v) in d2.iter().enumerate() {
                acc += v;
                if acc > target && v > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(next);
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min((x.row(i) - x.row(next)).norm_squared());
        }
    }
    centers
}

fn per_sample_ll(model: &GmmModel, data: &Data) -> Vec<f64> {
    model
        .log_joint(data)
        .column_iter()
        .map(|c| log_sum_exp(c.as_slice()))
        .collect()
}

/// Responsibilities (`K × n`) and the average log-likelihood.
fn e_step(model: &GmmModel, data: &Data) -> (DMatrix<f64>, f64) {
    let mut joint = model.log_joint(data);
    let mut total = 0.0;
    for mut col in joint.column_iter_mut() {
        let lse = log_sum_exp(col.as_slice());
        total += lse;
        for v in col.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    (joint, total / data.n as f64)
}

fn m_step(data: &Data, resp: &DMatrix<f64>, cov_type: CovarianceType) -> GmmModel {
    let (k, dim) = (resp.nrows(), data.x.ncols());
    let mass: Vec<f64> = resp.row_iter().map(|r| r.sum()).collect();
    let total: f64 = mass.iter().sum();
    let weights = mass.iter().map(|m| m / total).collect();
    let mut means = resp * &data.x;
    let mut second = resp * &data.x_sq;
    for j in 0..k {
        let inv = if mass[j] > 0.0 { 1.0 / mass[j] } else { 0.0 };
        for d in 0..dim {
            means[(j, d)] *= inv;
            second[(j, d)] *= inv;
        }
    }
    let diag = DMatrix::from_fn(k, dim, |j, d| second[(j, d)] - means[(j, d)].powi(2));
    let variances = match cov_type {
        CovarianceType::Diagonal => diag.map(|v| v.max(VARIANCE_FLOOR)),
        CovarianceType::Spherical => {
            DMatrix::from_fn(k, 1, |j, _| (diag.row(j).sum() / dim as f64).max(VARIANCE_FLOOR))
        }
    };
    GmmModel {
        cov_type,
        weights,
        means,
        variances,
    }
}

fn reseed_component(model: &mut GmmModel, j: usize, at: &[f64], global_var: &DVector<f64>) {
    let dim = model.dim();
    for d in 0..dim {
        model.means[(j, d)] = at[d];
    }
    match model.cov_type {
        CovarianceType::Diagonal => {
            for d in 0..dim {
                model.variances[(j, d)] = global_var[d];
            }
        }
        CovarianceType::Spherical => model.variances[(j, 0)] = global_var.mean(),
    }
    model.weights[j] = 1.0 / model.weights.len() as f64;
}

fn renormalize(model: &mut GmmModel) {
    let total: f64 = model.weights.iter().sum();
    for w in &mut model.weights {
        *w /= total;
    }
}

#[cfg(test)]
mod tests;
