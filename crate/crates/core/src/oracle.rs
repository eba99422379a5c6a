//! Slow reference implementations for cross-checking the main kernels,
//! PCA and SVM solver. Nothing here calls into the code it checks; the
//! eigendecompositions use nalgebra rather than [`crate::linalg`].

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};
use crate::pca::RowSource;
use crate::svm::SvmModel;
use crate::tensor::Tensor;

pub const PCA_MAX_DIM: usize = 256;
pub const SVM_MAX_SAMPLES: usize = 200;

/// Textbook same-padded 3x3 convolution.
pub fn oracle_conv2d(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let s = input.shape();
    let ws = weights.shape();
    if s.len() != 3 || ws.len() != 4 || ws[1] != s[0] || ws[2] != 3 || ws[3] != 3 || bias.len() != ws[0] {
        return Err(Error::ShapeMismatch {
            op: "oracle_conv2d",
            left: s.to_vec(),
            right: ws.to_vec(),
        });
    }
    let (cin, h, w, cout) = (s[0], s[1], s[2], ws[0]);
    let x = input.data();
    let k = weights.data();
    let mut out = vec![0f32; cout * h * w];
    for c in 0..cout {
        for y in 0..h {
            for xx in 0..w {
                let mut acc = f64::from(bias[c]);
                for i in 0..cin {
                    for dy in 0..3 {
                        for dx in 0..3 {
                            let sy = y as isize + dy as isize - 1;
                            let sx = xx as isize + dx as isize - 1;
                            if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                continue;
                            }
                            let pixel = x[(i * h + sy as usize) * w + sx as usize];
                            let weight = k[((c * cin + i) * 3 + dy) * 3 + dx];
                            acc += f64::from(weight) * f64::from(pixel);
                        }
                    }
                }
                out[(c * h + y) * w + xx] = acc as f32;
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

/// Exhaustive 2x2/stride-2 window maximum.
pub fn oracle_maxpool(input: &Tensor) -> Result<Tensor> {
    let s = input.shape();
    if s.len() != 3 || s[1] % 2 == 1 || s[2] % 2 == 1 {
        return Err(Error::ShapeMismatch {
            op: "oracle_maxpool",
            left: s.to_vec(),
            right: vec![],
        });
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let x = input.data();
    let mut out = Vec::with_capacity(c * h * w / 4);
    for ch in 0..c {
        for y in (0..h).step_by(2) {
            for xx in (0..w).step_by(2) {
                let window = [
                    x[(ch * h + y) * w + xx],
                    x[(ch * h + y) * w + xx + 1],
                    x[(ch * h + y + 1) * w + xx],
                    x[(ch * h + y + 1) * w + xx + 1],
                ];
                out.push(window.into_iter().fold(f32::NEG_INFINITY, f32::max));
            }
        }
    }
    Tensor::new(vec![c, h / 2, w / 2], out)
}

/// Naive matrix-vector product plus bias.
pub fn oracle_dense(input: &[f32], weights: &Tensor, bias: &[f32]) -> Result<Vec<f32>> {
    let ws = weights.shape();
    if ws.len() != 2 || ws[1] != input.len() || ws[0] != bias.len() {
        return Err(Error::ShapeMismatch {
            op: "oracle_dense",
            left: vec![input.len()],
            right: ws.to_vec(),
        });
    }
    let mut out = Vec::with_capacity(ws[0]);
    for j in 0..ws[0] {
        let mut acc = f64::from(bias[j]);
        for i in 0..ws[1] {
            acc += f64::from(weights.data()[j * ws[1] + i]) * f64::from(input[i]);
        }
        out.push(acc as f32);
    }
    Ok(out)
}

/// Reference PCA from the full covariance matrix.
#[derive(Clone, Debug)]
pub struct OraclePca {
    pub mean: Vec<f64>,
    /// Unit rows, largest-magnitude entry positive.
    pub components: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub total_variance: f64,
}

impl OraclePca {
    pub fn project(&self, row: &[f32]) -> Vec<f64> {
        self.components
            .iter()
            .map(|u| {
                u.iter()
                    .zip(row.iter().zip(&self.mean))
                    .map(|(a, (x, m))| a * (f64::from(*x) - m))
                    .sum()
            })
            .collect()
    }
}

pub fn oracle_pca<S: RowSource + ?Sized>(x: &S, k: usize) -> Result<OraclePca> {
    let (n, d) = (x.n_rows(), x.dim());
    if d > PCA_MAX_DIM {
        return Err(Error::OracleScope(format!("oracle_pca handles dim <= {PCA_MAX_DIM}, got {d}")));
    }
    if n < 2 {
        return Err(Error::TooFewSamples {
            op: "oracle_pca",
            needed: 2,
            got: n,
        });
    }
    let data = DMatrix::from_fn(n, d, |i, j| f64::from(x.row(i)[j]));
    let mean: Vec<f64> = (0..d).map(|j| data.column(j).sum() / n as f64).collect();
    let mut centered = data;
    for j in 0..d {
        for i in 0..n {
            centered[(i, j)] -= mean[j];
        }
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let k = k.min(d);
    let mut components = Vec::with_capacity(k);
    let mut eigenvalues = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut u: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = u
            .iter()
            .copied()
            .enumerate()
            .fold((0, 0.0f64), |best, (i, v)| if v.abs() > best.1.abs() { (i, v) } else { best })
            .0;
        if u[pivot] < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(u);
        eigenvalues.push(eig.eigenvalues[idx].max(0.0));
    }
    Ok(OraclePca {
        mean,
        components,
        eigenvalues,
        total_variance,
    })
}

#[derive(Clone, Debug)]
pub struct OracleSvm {
    pub weights: Vec<f64>,
    pub alpha: Vec<f64>,
    pub iterations: usize,
    /// `(P(w) - D(alpha)) / |P(w)|` at exit.
    pub relative_gap: f64,
}

const SVM_GAP_TOL: f64 = 1e-7;
const SVM_MAX_ITERS: usize = 200_000;
const SVM_GAP_EVERY: usize = 50;

/// Accelerated projected gradient ascent on the hinge-loss SVM dual,
/// stopped on the relative duality gap. `x` rows already include any bias
/// feature.
pub fn oracle_svm_dual(x: &[Vec<f64>], y: &[f64], c: f64) -> Result<OracleSvm> {
    let n = x.len();
    if n > SVM_MAX_SAMPLES {
        return Err(Error::OracleScope(format!(
            "oracle_svm_dual handles n <= {SVM_MAX_SAMPLES}, got {n}"
        )));
    }
    if n == 0 || y.len() != n {
        return Err(Error::DimMismatch {
            op: "oracle_svm_dual",
            expected: n,
            got: y.len(),
        });
    }
    let d = x[0].len();
    // Z has rows y_i x_i, so the dual Hessian is Z Z^T
    let z = DMatrix::from_fn(n, d, |i, j| y[i] * x[i][j]);
    let lipschitz = SymmetricEigen::new(z.transpose() * &z)
        .eigenvalues
        .iter()
        .fold(0.0f64, |m, v| m.max(*v))
        .max(1e-12);
    let project = |v: f64| v.clamp(0.0, c);
    let ones = nalgebra::DVector::from_element(n, 1.0);
    let dual = |a: &nalgebra::DVector<f64>| {
        let w = z.transpose() * a;
        a.sum() - 0.5 * w.norm_squared()
    };
    let primal = |a: &nalgebra::DVector<f64>| {
        let w = z.transpose() * a;
        let margins = &z * &w;
        0.5 * w.norm_squared() + c * margins.iter().map(|m| (1.0 - m).max(0.0)).sum::<f64>()
    };

    let mut alpha = nalgebra::DVector::<f64>::zeros(n);
    let mut momentum = alpha.clone();
    let mut t = 1.0f64;
    let mut gap = f64::INFINITY;
    let mut iters = 0;
    let mut last = dual(&alpha);
    while iters < SVM_MAX_ITERS {
        iters += 1;
        let grad = &ones - &z * (z.transpose() * &momentum);
        let next = (&momentum + grad / lipschitz).map(project);
        let value = dual(&next);
        // restart momentum whenever the objective would drop
        if value < last {
            momentum = alpha.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        momentum = &next + (&next - &alpha) * ((t - 1.0) / t_next);
        t = t_next;
        alpha = next;
        last = value;

        if iters % SVM_GAP_EVERY == 0 {
            let p = primal(&alpha);
            gap = (p - last) / p.abs().max(1e-300);
            if gap < SVM_GAP_TOL {
                break;
            }
        }
    }
    let p = primal(&alpha);
    gap = gap.min((p - last) / p.abs().max(1e-300));
    let weights = (z.transpose() * &alpha).iter().copied().collect();
    Ok(OracleSvm {
        weights,
        alpha: alpha.iter().copied().collect(),
        iterations: iters,
        relative_gap: gap,
    })
}

pub fn oracle_primal(x: &[Vec<f64>], y: &[f64], w: &[f64], c: f64) -> f64 {
    let mut loss = 0.0;
    for (row, yi) in x.iter().zip(y) {
        let margin: f64 = row.iter().zip(w).map(|(a, b)| a * b).sum();
        loss += (1.0 - yi * margin).max(0.0);
    }
    0.5 * w.iter().map(|v| v * v).sum::<f64>() + c * loss
}

pub fn oracle_dual(x: &[Vec<f64>], y: &[f64], alpha: &[f64]) -> f64 {
    let d = x[0].len();
    let mut w = vec![0.0; d];
    for i in 0..x.len() {
        for (wv, xv) in w.iter_mut().zip(&x[i]) {
            *wv += alpha[i] * y[i] * xv;
        }
    }
    alpha.iter().sum::<f64>() - 0.5 * w.iter().map(|v| v * v).sum::<f64>()
}

/// Class positions chosen by explicitly enumerating every decision value.
pub fn oracle_predict(model: &SvmModel, rows: &[Vec<f64>]) -> Vec<usize> {
    let k = model.k();
    rows.iter()
        .map(|x| {
            let scores: Vec<f64> = (0..model.classes().len())
                .map(|c| {
                    let w = model.class_weights(c);
                    let mut s = f64::from(w[k]);
                    for j in 0..k {
                        s += f64::from(w[j]) * x[j];
                    }
                    s
                })
                .collect();
            let top = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            scores.iter().position(|s| *s == top).unwrap_or(0)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn center_tap_identity_and_zero_kernel() {
        let input = Tensor::new(vec![1, 3, 4], (0..12).map(|v| v as f32).collect()).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = Tensor::new(vec![1, 1, 3, 3], k).unwrap();
        assert_eq!(oracle_conv2d(&input, &w, &[0.0]).unwrap().data(), input.data());
        let z = Tensor::zeros(vec![2, 1, 3, 3]).unwrap();
        assert!(oracle_conv2d(&input, &z, &[0.0, 0.0]).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn scope_guards() {
        let rows: Vec<Vec<f64>> = vec![vec![1.0]; 201];
        let y = vec![1.0; 201];
        assert!(matches!(oracle_svm_dual(&rows, &y, 1.0), Err(Error::OracleScope(_))));
        let fm = crate::pca::FeatureMatrix::new(
            crate::vgg::TapPoint::Fc1,
            vec!["a".into(), "b".into()],
            None,
            300,
            vec![0.0; 600],
        )
        .unwrap();
        assert!(matches!(oracle_pca(&fm, 1), Err(Error::OracleScope(_))));
    }

    #[test]
    fn weak_duality_on_separable_pair() {
        let x = vec![vec![1.0, 0.0, 1.0], vec![-1.0, 0.0, 1.0]];
        let y = vec![1.0, -1.0];
        let fit = oracle_svm_dual(&x, &y, 1.0).unwrap();
        let p = oracle_primal(&x, &y, &fit.weights, 1.0);
        let d = oracle_dual(&x, &y, &fit.alpha);
        assert!(p >= d - 1e-12);
        assert!(p - d < 1e-6);
        assert!(fit.weights[0] > 0.0);
    }
}
