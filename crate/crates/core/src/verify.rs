//! Seeded cross-checks of the fast code paths against [`crate::oracle`].

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::oracle::{oracle_conv2d, oracle_dense, oracle_maxpool, oracle_pca, oracle_primal, oracle_svm_dual};
use crate::pca::{pca_fit_with, FeatureMatrix, PcaOptions, PcaRoute};
use crate::preprocess::Expression;
use crate::svm::{primal_objective, svm_train_binary, svm_train_ovr, with_bias, SvmParams};
use crate::tensor::{conv2d, dense, maxpool2d, Tensor};
use crate::vgg::TapPoint;

pub const KERNEL_RTOL: f64 = 1e-5;
pub const PCA_TOL: f64 = 1e-6;
pub const SVM_PRIMAL_RTOL: f64 = 1e-3;
/// The oracle must be this close to optimal for the primal comparison to mean anything.
pub const SVM_ORACLE_GAP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub instances: usize,
    /// Largest observed error in the check's own metric.
    pub worst: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst <= self.tolerance
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {} instances, worst {:.3e} (tolerance {:.0e})",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.instances,
            self.worst,
            self.tolerance
        )
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f32> {
    (0..len).map(|_| StandardNormal.sample(rng)).collect()
}

/// `|a - b| / max(|b|, 1)`, maximized over elements.
fn rel_err(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - f64::from(*y)).abs() / f64::from(y.abs()).max(1.0))
        .fold(0.0, f64::max)
}

/// conv2d, maxpool2d and dense against their naive-loop oracles.
pub fn verify_kernels(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut conv, mut pool, mut fc) = (0f64, 0f64, 0f64);
    for _ in 0..instances {
        let cin = rng.random_range(1..=4);
        let cout = rng.random_range(1..=4);
        let h = 2 * rng.random_range(1..=8);
        let w = 2 * rng.random_range(1..=8);
        let x = Tensor::new(vec![cin, h, w], normal_vec(&mut rng, cin * h * w))?;
        let k = Tensor::new(vec![cout, cin, 3, 3], normal_vec(&mut rng, cout * cin * 9))?;
        let b = normal_vec(&mut rng, cout);
        conv = conv.max(rel_err(conv2d(&x, &k, &b)?.data(), oracle_conv2d(&x, &k, &b)?.data()));

        let fast = maxpool2d(&x)?;
        let slow = oracle_maxpool(&x)?;
        let exact = fast.shape() == slow.shape() && fast.data() == slow.data();
        pool = pool.max(if exact { 0.0 } else { f64::INFINITY });

        let n_in = rng.random_range(1..=64);
        let n_out = rng.random_range(1..=32);
        let v = normal_vec(&mut rng, n_in);
        let m = Tensor::new(vec![n_out, n_in], normal_vec(&mut rng, n_out * n_in))?;
        let bb = normal_vec(&mut rng, n_out);
        fc = fc.max(rel_err(&dense(&v, &m, &bb)?, &oracle_dense(&v, &m, &bb)?));
    }
    Ok(vec![
        Check {
            name: "conv2d",
            instances,
            worst: conv,
            tolerance: KERNEL_RTOL,
        },
        Check {
            name: "maxpool2d",
            instances,
            worst: pool,
            tolerance: 0.0,
        },
        Check {
            name: "dense",
            instances,
            worst: fc,
            tolerance: KERNEL_RTOL,
        },
    ])
}

/// Random data with a geometric spectrum so the leading eigenvalues are
/// well separated.
pub fn spread_features(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> FeatureMatrix {
    let mixing: Vec<f64> = (0..dim * dim).map(|_| StandardNormal.sample(rng)).collect();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let latent: Vec<f64> = (0..dim)
            .map(|j| {
                let z: f64 = StandardNormal.sample(rng);
                z * 0.7f64.powi(j as i32) * 10.0
            })
            .collect();
        for a in 0..dim {
            let v: f64 = (0..dim).map(|j| mixing[a * dim + j] * latent[j]).sum();
            data.push((v + 3.0) as f32);
        }
    }
    let ids = (0..n).map(|i| format!("r{i}")).collect();
    FeatureMatrix::new(TapPoint::Fc1, ids, None, dim, data).expect("consistent shape")
}

/// Gram and covariance PCA routes against a dense eigendecomposition, plus
/// orthonormality of every fitted basis.
pub fn verify_pca(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut comp, mut eig, mut ortho) = (0f64, 0f64, 0f64);
    for t in 0..instances {
        let dim = rng.random_range(2..=64);
        let n = rng.random_range(8..=80);
        let x = spread_features(&mut rng, n, dim);
        let k = rng.random_range(1..=dim.min(n - 1).min(6));
        let oracle = oracle_pca(&x, k)?;
        let route = if t % 2 == 0 { PcaRoute::Gram } else { PcaRoute::Covariance };
        let model = pca_fit_with(
            &x,
            k,
            PcaOptions {
                route: Some(route),
                ..PcaOptions::default()
            },
        )?;
        for j in 0..model.k() {
            let u = model.component(j);
            let v = &oracle.components[j];
            let same: f64 = u.iter().zip(v).map(|(a, b)| (f64::from(*a) - b).abs()).fold(0.0, f64::max);
            let flip: f64 = u.iter().zip(v).map(|(a, b)| (f64::from(*a) + b).abs()).fold(0.0, f64::max);
            comp = comp.max(same.min(flip));
            let scale = oracle.eigenvalues[0].max(1.0);
            eig = eig.max((f64::from(model.eigenvalues()[j]) - oracle.eigenvalues[j]).abs() / scale);
        }
        ortho = ortho.max(orthonormality_error(&model));
    }
    Ok(vec![
        Check {
            name: "pca components",
            instances,
            worst: comp,
            tolerance: PCA_TOL,
        },
        Check {
            name: "pca eigenvalues",
            instances,
            worst: eig,
            tolerance: PCA_TOL,
        },
        Check {
            name: "pca orthonormality",
            instances,
            worst: ortho,
            tolerance: PCA_TOL,
        },
    ])
}

/// `max |U U^T - I|` over the model's component rows.
pub fn orthonormality_error(model: &crate::pca::PcaModel) -> f64 {
    let mut worst = 0f64;
    for a in 0..model.k() {
        for b in a..model.k() {
            let d: f64 = model
                .component(a)
                .iter()
                .zip(model.component(b))
                .map(|(x, y)| f64::from(*x) * f64::from(*y))
                .sum();
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((d - target).abs());
        }
    }
    worst
}

/// Overlapping two-class Gaussian data with a bias column.
pub fn svm_problem(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (Array2<f64>, Vec<f64>) {
    let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let x = Array2::from_shape_fn((n, d), |(i, _)| {
        let z: f64 = StandardNormal.sample(rng);
        z + 0.8 * y[i]
    });
    (with_bias(x.view()), y)
}

/// Dual coordinate descent against projected-gradient ascent on the same
/// dual; also checks that the traced dual objective never decreases.
pub fn verify_svm(seed: u64, instances: usize) -> Result<Vec<Check>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = SvmParams::default();
    // the default stopping tolerance leaves primal gaps near 5e-3 at C = 10
    let tight = SvmParams {
        tol: 1e-6,
        max_epochs: 100_000,
        ..params
    };
    let (mut primal, mut monotone, mut blobs, mut oracle_gap) = (0f64, 0f64, 0f64, 0f64);
    for t in 0..instances {
        let n = rng.random_range(20..=200);
        let d = rng.random_range(2..=12);
        let (xb, y) = svm_problem(&mut rng, n, d);
        let c = [0.1, 1.0, 10.0][t % 3];
        let p = SvmParams { c, ..tight };
        let fit = svm_train_binary(xb.view(), &y, &p, seed.wrapping_add(t as u64))?;
        let rows: Vec<Vec<f64>> = xb.rows().into_iter().map(|r| r.to_vec()).collect();
        let oracle = oracle_svm_dual(&rows, &y, c)?;
        oracle_gap = oracle_gap.max(oracle.relative_gap);
        let ours = primal_objective(xb.view(), &y, &fit.weights, c);
        let reference = oracle_primal(&rows, &y, &oracle.weights, c);
        primal = primal.max((ours - reference).abs() / reference.abs().max(1e-12));
        for pair in fit.dual_trace.windows(2) {
            let drop = pair[0] - pair[1];
            if drop > 1e-9 * pair[0].abs().max(1.0) {
                monotone = monotone.max(drop);
            }
        }
    }

    for b in 0..instances.max(1) {
        let per_class = 20;
        let dim = 6;
        let centres: Vec<Vec<f64>> = (0..Expression::ALL.len())
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        10.0 * z
                    })
                    .collect()
            })
            .collect();
        let mut labels = Vec::new();
        let mut data = Vec::new();
        for (ci, class) in Expression::ALL.into_iter().enumerate() {
            for _ in 0..per_class {
                labels.push(class);
                for c in &centres[ci] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(c + 0.1 * z);
                }
            }
        }
        let x = Array2::from_shape_vec((labels.len(), dim), data).expect("shape");
        let model = svm_train_ovr(x.view(), &labels, &params, b as u64)?;
        let pred = model.predict(x.view())?;
        let wrong = pred.iter().zip(&labels).filter(|(p, l)| p != l).count();
        blobs = blobs.max(wrong as f64 / labels.len() as f64);
    }

    Ok(vec![
        Check {
            name: "svm primal vs oracle",
            instances,
            worst: primal,
            tolerance: SVM_PRIMAL_RTOL,
        },
        Check {
            name: "svm oracle duality gap",
            instances,
            worst: oracle_gap,
            tolerance: SVM_ORACLE_GAP,
        },
        Check {
            name: "svm dual monotone",
            instances,
            worst: monotone,
            tolerance: 0.0,
        },
        Check {
            name: "svm separable training error",
            instances: instances.max(1),
            worst: blobs,
            tolerance: 0.0,
        },
    ])
}

/// Every check at its default instance count.
pub fn verify_all(seed: u64) -> Result<Vec<Check>> {
    let mut out = verify_kernels(seed, 100)?;
    out.extend(verify_pca(seed, 50)?);
    out.extend(verify_svm(seed, 10)?);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass_at_reduced_counts() {
        let mut checks = verify_kernels(11, 10).unwrap();
        checks.extend(verify_pca(11, 8).unwrap());
        checks.extend(verify_svm(11, 3).unwrap());
        for c in &checks {
            assert!(c.passed(), "{c}");
        }
    }
}
