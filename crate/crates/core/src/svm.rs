//! Binary linear SVM probe over PCA-reduced features.
//!
//! Training solves the dual of the L2-regularized hinge-loss problem
//!
//! ```text
//! min_w,b  ½‖w‖² + C Σ max(0, 1 − yᵢ(w·xᵢ + b))
//! ```
//!
//! with an unregularized intercept, using sequential minimal optimization:
//! each step picks the maximal violating pair of the KKT conditions (ties
//! broken by lowest index) and solves the two-variable subproblem exactly.
//! Labels are `+1` for attacks and `−1` for bonafide samples, so the decision
//! value `w·x + b` grows with attack likelihood.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::feature_store::{DatasetHandle, Label};
use crate::io::{ByteReader, ByteWriter};
use crate::pca::{fit_pca, PcaModel};

pub const SVM_MAGIC: &[u8; 4] = b"MADS";
pub const SVM_VERSION: u32 = 1;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvmParams {
    pub c: f64,
    /// Stop once the maximal KKT violation drops below this value.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        SvmParams {
            c: 1.0,
            tol: 1e-4,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    weights: Vec<f64>,
    bias: f64,
    c_param: f64,
}

/// Solver diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmTrace {
    /// Dual objective `½‖w‖² − Σα`, recorded after every `n` pair updates
    /// and once at termination. Nonincreasing.
    pub objective: Vec<f64>,
    pub iterations: usize,
    /// Final maximal KKT violation.
    pub violation: f64,
}

impl SvmModel {
    pub fn new(weights: Vec<f64>, bias: f64, c_param: f64) -> Result<Self> {
        if weights.iter().chain([&bias, &c_param]).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("svm parameters must be finite".into()));
        }
        Ok(SvmModel { weights, bias, c_param })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> f64 {
        self.bias
    }

    pub fn c_param(&self) -> f64 {
        self.c_param
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `w·x + b`; positive values lean towards attack.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: x.len(),
            });
        }
        Ok(dot(&self.weights, x) + self.bias)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        w.bytes(SVM_MAGIC);
        w.u32(SVM_VERSION);
        w.u32(self.dim() as u32);
        w.f64(self.c_param);
        w.f64(self.bias);
        w.f64s(self.weights.iter().copied());
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "svm model");
        r.expect_magic(SVM_MAGIC)?;
        r.expect_version(SVM_VERSION)?;
        let k = r.u32()? as usize;
        let c = r.f64()?;
        let bias = r.f64()?;
        let weights = r.f64s(k)?;
        r.finish()?;
        SvmModel::new(weights, bias, c)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn train_svm(x: &DMatrix<f64>, y: &[f64], params: &SvmParams) -> Result<SvmModel> {
    train_svm_traced(x, y, params).map(|(m, _)| m)
}

/// Trains on the rows of `x` with labels `y ∈ {−1, +1}`.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn train_svm_traced(x: &DMatrix<f64>, y: &[f64], params: &SvmParams) -> Result<(SvmModel, SvmTrace)> {
    let (n, k) = x.shape();
    if y.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            actual: y.len(),
        });
    }
    if !(params.c > 0.0 && params.c.is_finite()) {
        return Err(Error::InvalidArgument(format!("C must be positive, got {}", params.c)));
    }
    if !(params.tol > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "tol must be positive, got {}",
            params.tol
        )));
    }
    if let Some(bad) = y.iter().find(|&&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidArgument(format!("labels must be ±1, found {bad}")));
    }
    if n < 2 || !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::DegenerateLabels);
    }

    // Row-major copy for contiguous dot products.
    let mut rows = vec![0.0; n * k];
    for i in 0..n {
        for j in 0..k {
            let v = x[(i, j)];
            if !v.is_finite() {
                return Err(Error::NonFinite { row: i, column: j });
            }
            rows[i * k + j] = v;
        }
    }
    let row = |i: usize| &rows[i * k..(i + 1) * k];
    let diag: Vec<f64> = (0..n).map(|i| dot(row(i), row(i))).collect();

    let c = params.c;
    let mut alpha = vec![0.0; n];
    let mut w = vec![0.0; k];
    let mut grad = vec![-1.0; n];
    let objective_of = |w: &[f64], alpha: &[f64]| 0.5 * dot(w, w) - alpha.iter().sum::<f64>();
    let mut trace = SvmTrace {
        objective: vec![0.0],
        iterations: 0,
        violation: f64::INFINITY,
    };

    loop {
        // Gradient of the dual: G_t = y_t (w·x_t) − 1.
        let mut g_max = f64::NEG_INFINITY;
        let mut g_min = f64::INFINITY;
        let (mut i, mut j) = (usize::MAX, usize::MAX);
        for t in 0..n {
            grad[t] = y[t] * dot(&w, row(t)) - 1.0;
            let v = -y[t] * grad[t];
            let up = if y[t] > 0.0 { alpha[t] < c } else { alpha[t] > 0.0 };
            let low = if y[t] > 0.0 { alpha[t] > 0.0 } else { alpha[t] < c };
            if up && v > g_max {
                g_max = v;
                i = t;
            }
            if low && v < g_min {
                g_min = v;
                j = t;
            }
        }
        trace.violation = g_max - g_min;
        if trace.violation < params.tol {
            break;
        }
        if trace.iterations >= params.max_iter {
            return Err(Error::NonConvergence {
                iterations: trace.iterations,
                violation: trace.violation,
            });
        }

        let kij = dot(row(i), row(j));
        let quad = (diag[i] + diag[j] - 2.0 * kij).max(TAU);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let (mut ai, mut aj) = (old_i, old_j);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = ai - aj;
            ai += delta;
            aj += delta;
            if diff > 0.0 {
                if aj < 0.0 {
                    aj = 0.0;
                    ai = diff;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = -diff;
            }
            if diff > 0.0 {
                if ai > c {
                    ai = c;
                    aj = c - diff;
                }
            } else if aj > c {
                aj = c;
                ai = c + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / quad;
            let sum = ai + aj;
            ai -= delta;
            aj += delta;
            if sum > c {
                if ai > c {
                    ai = c;
                    aj = sum - c;
                }
            } else if aj < 0.0 {
                aj = 0.0;
                ai = sum;
            }
            if sum > c {
                if aj > c {
                    aj = c;
                    ai = sum - c;
                }
            } else if ai < 0.0 {
                ai = 0.0;
                aj = sum;
            }
        }
        alpha[i] = ai;
        alpha[j] = aj;
        let (di, dj) = (y[i] * (ai - old_i), y[j] * (aj - old_j));
        for (m, wm) in w.iter_mut().enumerate() {
            *wm += di * rows[i * k + m] + dj * rows[j * k + m];
        }

        trace.iterations += 1;
        if trace.iterations.is_multiple_of(n) {
            trace.objective.push(objective_of(&w, &alpha));
        }
    }
    trace.objective.push(objective_of(&w, &alpha));

    // Intercept from the free support vectors, or the midpoint of the
    // feasible interval when every multiplier sits at a bound.
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= c {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            sum_free += yg;
            n_free += 1;
        }
    }
    let rho = if n_free > 0 {
        sum_free / n_free as f64
    } else {
        (ub + lb) / 2.0
    };
    Ok((SvmModel::new(w, -rho, c)?, trace))
}

/// PCA followed by a linear SVM, trained on bonafide and attack samples.
#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedDetector {
    pub pca: PcaModel,
    pub svm: SvmModel,
    pub extractor_name: String,
}

impl SupervisedDetector {
    pub fn new(pca: PcaModel, svm: SvmModel, extractor_name: impl Into<String>) -> Result<Self> {
        if pca.n_components() != svm.dim() {
            return Err(Error::DimensionMismatch {
                expected: pca.n_components(),
                actual: svm.dim(),
            });
        }
        Ok(SupervisedDetector {
            pca,
            svm,
            extractor_name: extractor_name.into(),
        })
    }

    pub fn score(&self, x: &[f64]) -> Result<f64> {
        self.svm.score(&self.pca.transform(x)?)
    }

    /// Scores every row of `x`.
    pub fn score_matrix(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let z = self.pca.transform_matrix(x)?;
        let w = nalgebra::DVector::from_column_slice(self.svm.weights());
        Ok((z * w).iter().map(|v| v + self.svm.bias()).collect())
    }
}

/// Fits PCA on all samples of `train` (bonafide and attack) at `threshold`,
/// then the SVM on the projected features.
pub fn train_supervised_detector(
    train: &DatasetHandle,
    params: &SvmParams,
    threshold: f64,
) -> Result<SupervisedDetector> {
    let y: Vec<f64> = train
        .entries()
        .iter()
        .map(|e| match e.label {
            Label::Attack => 1.0,
            Label::Bonafide => -1.0,
        })
        .collect();
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::DegenerateLabels);
    }
    let x = train.design_matrix();
    let pca = fit_pca(&x, threshold)?;
    let z = pca.transform_matrix(&x)?;
    let svm = train_svm(&z, &y, params)?;
    SupervisedDetector::new(pca, svm, train.extractor().unwrap_or_default())
}
