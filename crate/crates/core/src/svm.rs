//! Linear SVM trained by dual coordinate descent.
//!
//! Each binary problem is the L2-regularized hinge-loss SVM
//!
//! ```text
//! min_w  0.5 |w|^2 + C * sum_i max(0, 1 - y_i w.x_i)
//! ```
//!
//! solved through its box-constrained dual, one coordinate at a time, while
//! `w = sum_i alpha_i y_i x_i` is kept up to date. The bias is an ordinary
//! (regularized) weight on an appended constant-1 feature. Multiclass
//! problems use one-vs-rest.

use std::path::Path;

use log::{debug, warn};
use ndarray::{Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{read_sidecar, TensorBundle};
use crate::error::{Error, Result};
use crate::linalg::dot;
use crate::preprocess::Expression;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmParams {
    #[serde(rename = "C")]
    pub c: f64,
    pub tol: f64,
    pub max_epochs: usize,
}

impl Default for SvmParams {
    fn default() -> Self {
        Self {
            c: 1.0,
            tol: 1e-4,
            max_epochs: 1000,
        }
    }
}

impl SvmParams {
    fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite()) || !(self.tol > 0.0) || self.max_epochs == 0 {
            return Err(Error::InvalidArgument(format!("invalid SVM parameters {self:?}")));
        }
        Ok(())
    }
}

/// Result of one binary dual coordinate descent run.
#[derive(Clone, Debug)]
pub struct BinaryFit {
    pub weights: Vec<f64>,
    pub alpha: Vec<f64>,
    pub epochs: usize,
    pub converged: bool,
    /// Largest projected-gradient magnitude seen in the final epoch.
    pub max_violation: f64,
    /// Dual objective after each epoch.
    pub dual_trace: Vec<f64>,
    /// True when `y` held a single class and the zero model was returned.
    pub degenerate: bool,
}

pub fn primal_objective(x: ArrayView2<f64>, y: &[f64], w: &[f64], c: f64) -> f64 {
    let reg = 0.5 * w.iter().map(|v| v * v).sum::<f64>();
    let loss: f64 = x
        .rows()
        .into_iter()
        .zip(y)
        .map(|(row, yi)| (1.0 - yi * row.iter().zip(w).map(|(a, b)| a * b).sum::<f64>()).max(0.0))
        .sum();
    reg + c * loss
}

pub fn dual_objective(alpha: &[f64], w: &[f64]) -> f64 {
    alpha.iter().sum::<f64>() - 0.5 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Trains one binary problem. `x` already carries the bias column and `y`
/// holds +1/-1.
pub fn svm_train_binary(x: ArrayView2<f64>, y: &[f64], params: &SvmParams, seed: u64) -> Result<BinaryFit> {
    params.validate()?;
    let (n, d) = x.dim();
    if n == 0 {
        return Err(Error::TooFewSamples {
            op: "svm_train_binary",
            needed: 1,
            got: 0,
        });
    }
    if y.len() != n {
        return Err(Error::DimMismatch {
            op: "svm_train_binary labels",
            expected: n,
            got: y.len(),
        });
    }
    if y.iter().any(|v| *v != 1.0 && *v != -1.0) {
        return Err(Error::InvalidArgument("binary labels must be +1 or -1".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("svm_train_binary input"));
    }
    if y.iter().all(|v| *v == y[0]) {
        warn!("svm: all {n} training labels are {}; returning the zero model", y[0]);
        return Ok(BinaryFit {
            weights: vec![0.0; d],
            alpha: vec![0.0; n],
            epochs: 0,
            converged: true,
            max_violation: 0.0,
            dual_trace: vec![],
            degenerate: true,
        });
    }

    let rows: Vec<&[f64]> = (0..n)
        .map(|i| x.row(i).to_slice().expect("row-major standard layout"))
        .collect();
    let diag: Vec<f64> = rows.iter().map(|r| r.iter().map(|v| v * v).sum()).collect();
    let c = params.c;
    let mut alpha = vec![0f64; n];
    let mut w = vec![0f64; d];
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::new();
    let mut converged = false;
    let mut max_violation = f64::INFINITY;
    let mut epochs = 0;

    let projected = |g: f64, a: f64| -> f64 {
        if a <= 0.0 {
            g.min(0.0)
        } else if a >= c {
            g.max(0.0)
        } else {
            g
        }
    };

    while epochs < params.max_epochs {
        epochs += 1;
        order.shuffle(&mut rng);
        max_violation = 0.0;
        for &i in &order {
            if diag[i] == 0.0 {
                continue;
            }
            let xi = rows[i];
            let g = y[i] * dot(&w, xi) - 1.0;
            let pg = projected(g, alpha[i]);
            max_violation = max_violation.max(pg.abs());
            if pg != 0.0 {
                let old = alpha[i];
                alpha[i] = (old - g / diag[i]).clamp(0.0, c);
                let step = (alpha[i] - old) * y[i];
                if step != 0.0 {
                    for (wj, xj) in w.iter_mut().zip(xi) {
                        *wj += step * xj;
                    }
                }
            }
        }
        trace.push(dual_objective(&alpha, &w));
        if max_violation < params.tol {
            // confirm against the final iterate before declaring optimality
            let worst = (0..n)
                .filter(|&i| diag[i] != 0.0)
                .map(|i| projected(y[i] * dot(&w, rows[i]) - 1.0, alpha[i]).abs())
                .fold(0.0, f64::max);
            if worst < params.tol {
                max_violation = worst;
                converged = true;
                break;
            }
        }
    }
    if !converged {
        debug!("svm: stopped after {epochs} epochs with violation {max_violation:.3e} (tol {})", params.tol);
    }
    Ok(BinaryFit {
        weights: w,
        alpha,
        epochs,
        converged,
        max_violation,
        dual_trace: trace,
        degenerate: false,
    })
}

/// Appends the constant-1 bias column.
pub fn with_bias(x: ArrayView2<f64>) -> Array2<f64> {
    let (n, k) = x.dim();
    let mut out = Array2::ones((n, k + 1));
    out.slice_mut(ndarray::s![.., ..k]).assign(&x);
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassTrainingMeta {
    pub class: Expression,
    pub seed: u64,
    pub epochs: usize,
    pub converged: bool,
}

/// One-vs-rest linear model; row `c` of `weights` is `[w_c ; bias_c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SvmModel {
    classes: Vec<Expression>,
    k: usize,
    weights: Vec<f32>,
    pub params: SvmParams,
    pub seed: u64,
    pub training: Vec<ClassTrainingMeta>,
}

#[derive(Serialize, Deserialize)]
struct SvmMeta {
    classes: Vec<Expression>,
    params: SvmParams,
    seed: u64,
    training: Vec<ClassTrainingMeta>,
}

pub fn svm_train_ovr(x: ArrayView2<f64>, labels: &[Expression], params: &SvmParams, seed: u64) -> Result<SvmModel> {
    params.validate()?;
    let (n, k) = x.dim();
    if labels.len() != n {
        return Err(Error::DimMismatch {
            op: "svm_train_ovr labels",
            expected: n,
            got: labels.len(),
        });
    }
    let mut classes = labels.to_vec();
    classes.sort();
    classes.dedup();
    if classes.len() < 2 {
        return Err(Error::TooFewClasses {
            op: "svm_train_ovr",
            got: classes.len(),
        });
    }
    let xb = with_bias(x);
    let fits: Vec<(BinaryFit, u64)> = classes
        .par_iter()
        .enumerate()
        .map(|(ci, class)| {
            let y: Vec<f64> = labels.iter().map(|l| if l == class { 1.0 } else { -1.0 }).collect();
            let class_seed = seed.wrapping_add(ci as u64);
            svm_train_binary(xb.view(), &y, params, class_seed).map(|f| (f, class_seed))
        })
        .collect::<Result<_>>()?;

    let mut weights = Vec::with_capacity(classes.len() * (k + 1));
    let mut training = Vec::with_capacity(classes.len());
    for ((fit, class_seed), class) in fits.iter().zip(&classes) {
        weights.extend(fit.weights.iter().map(|v| *v as f32));
        training.push(ClassTrainingMeta {
            class: *class,
            seed: *class_seed,
            epochs: fit.epochs,
            converged: fit.converged,
        });
    }
    Ok(SvmModel {
        classes,
        k,
        weights,
        params: *params,
        seed,
        training,
    })
}

impl SvmModel {
    pub fn from_parts(classes: Vec<Expression>, k: usize, weights: Vec<f32>, params: SvmParams, seed: u64) -> Result<Self> {
        if weights.len() != classes.len() * (k + 1) {
            return Err(Error::DimMismatch {
                op: "svm model weights",
                expected: classes.len() * (k + 1),
                got: weights.len(),
            });
        }
        Ok(Self {
            classes,
            k,
            weights,
            params,
            seed,
            training: Vec::new(),
        })
    }

    pub fn classes(&self) -> &[Expression] {
        &self.classes
    }

    /// Number of input features, excluding the bias.
    pub fn k(&self) -> usize {
        self.k
    }

    /// `[w ; bias]` for class position `c`.
    pub fn training(&self) -> &[ClassTrainingMeta] {
        &self.training
    }

    pub fn class_weights(&self, c: usize) -> &[f32] {
        &self.weights[c * (self.k + 1)..(c + 1) * (self.k + 1)]
    }

    pub fn decision_values(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.k {
            return Err(Error::DimMismatch {
                op: "svm_predict",
                expected: self.k,
                got: x.len(),
            });
        }
        Ok((0..self.classes.len())
            .map(|c| {
                let w = self.class_weights(c);
                let mut acc = 0.0;
                for (wj, xj) in w[..self.k].iter().zip(x) {
                    acc += f64::from(*wj) * xj;
                }
                acc + f64::from(w[self.k])
            })
            .collect())
    }

    pub fn predict_row(&self, x: &[f64]) -> Result<Expression> {
        let scores = self.decision_values(x)?;
        let mut best = 0;
        for (c, s) in scores.iter().enumerate() {
            if *s > scores[best] {
                best = c;
            }
        }
        Ok(self.classes[best])
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Expression>> {
        if x.ncols() != self.k {
            return Err(Error::DimMismatch {
                op: "svm_predict",
                expected: self.k,
                got: x.ncols(),
            });
        }
        x.rows()
            .into_iter()
            .map(|r| self.predict_row(&r.to_vec()))
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let mut b = TensorBundle::new(Some("one-vs-rest linear svm".into()));
        b.insert(
            "weights",
            Tensor::new(vec![self.classes.len(), self.k + 1], self.weights.clone())?,
        );
        let meta = serde_json::to_value(SvmMeta {
            classes: self.classes.clone(),
            params: self.params,
            seed: self.seed,
            training: self.training.clone(),
        })
        .map_err(|e| Error::json("svm meta", e))?;
        b.write_with_sidecar(dir, Some(&meta))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let b = TensorBundle::read(dir)?;
        let meta: SvmMeta =
            serde_json::from_value(read_sidecar(dir)?).map_err(|e| Error::json(dir.display().to_string(), e))?;
        let w = b.require("weights")?;
        let (rows, cols) = match w.shape() {
            [r, c] => (*r, *c),
            other => {
                return Err(Error::LayerShape {
                    layer: "weights".into(),
                    expected: vec![meta.classes.len(), 0],
                    found: other.to_vec(),
                })
            }
        };
        if rows != meta.classes.len() || cols < 1 {
            return Err(Error::LayerShape {
                layer: "weights".into(),
                expected: vec![meta.classes.len(), cols],
                found: w.shape().to_vec(),
            });
        }
        let mut model = Self::from_parts(meta.classes, cols - 1, w.data().to_vec(), meta.params, meta.seed)?;
        model.training = meta.training;
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn separable_pair() {
        let x = array![[1.0, 0.0, 1.0], [-1.0, 0.0, 1.0]];
        let fit = svm_train_binary(x.view(), &[1.0, -1.0], &SvmParams::default(), 0).unwrap();
        assert!(fit.converged);
        let s1: f64 = dot(&fit.weights, &[1.0, 0.0, 1.0]);
        let s2: f64 = dot(&fit.weights, &[-1.0, 0.0, 1.0]);
        assert!(s1 > 0.0 && s2 < 0.0);
    }

    #[test]
    fn single_class_gives_zero_model() {
        let x = array![[1.0, 1.0], [2.0, 1.0]];
        let fit = svm_train_binary(x.view(), &[1.0, 1.0], &SvmParams::default(), 0).unwrap();
        assert!(fit.degenerate);
        assert!(fit.weights.iter().all(|w| *w == 0.0));
    }

    #[test]
    fn rejects_non_finite_and_bad_labels() {
        let x = array![[f64::NAN, 1.0], [2.0, 1.0]];
        assert!(matches!(
            svm_train_binary(x.view(), &[1.0, -1.0], &SvmParams::default(), 0),
            Err(Error::NonFinite(_))
        ));
        let x = array![[0.0, 1.0], [2.0, 1.0]];
        assert!(svm_train_binary(x.view(), &[1.0, 0.0], &SvmParams::default(), 0).is_err());
    }

    #[test]
    fn ovr_needs_two_classes() {
        let x = array![[0.0], [1.0]];
        let err = svm_train_ovr(x.view(), &[Expression::Sad, Expression::Sad], &SvmParams::default(), 0);
        assert!(matches!(err, Err(Error::TooFewClasses { got: 1, .. })));
    }

    #[test]
    fn zero_model_predicts_first_class() {
        let m = SvmModel::from_parts(
            vec![Expression::Fear, Expression::Happy, Expression::Sad],
            2,
            vec![0.0; 9],
            SvmParams::default(),
            0,
        )
        .unwrap();
        let preds = m.predict(array![[1.0, -3.0], [0.0, 0.0]].view()).unwrap();
        assert_eq!(preds, vec![Expression::Fear, Expression::Fear]);
        assert!(m.predict(array![[1.0]].view()).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let x = array![[0.0, 0.0], [0.1, 0.2], [3.0, 3.0], [3.1, 2.9], [-3.0, 3.0], [-2.9, 3.2]];
        let labels = [
            Expression::Anger,
            Expression::Anger,
            Expression::Happy,
            Expression::Happy,
            Expression::Sad,
            Expression::Sad,
        ];
        let m = svm_train_ovr(x.view(), &labels, &SvmParams::default(), 11).unwrap();
        assert_eq!(m.predict(x.view()).unwrap(), labels.to_vec());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("svm.bundle");
        m.save(&p).unwrap();
        assert_eq!(SvmModel::load(&p).unwrap(), m);
    }
}
