//! Principal component analysis for wide feature matrices.
//!
//! When `dim > n_samples` the components come from the `n x n` Gram matrix
//! of centred rows (the snapshot method); otherwise from the `dim x dim`
//! covariance. Both use the unbiased `1/(n-1)` normalization, so eigenvalues
//! are covariance eigenvalues either way. Each component's entry of largest
//! magnitude is made positive.

use std::path::Path;

use log::debug;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{read_sidecar, TensorBundle};
use crate::error::{Error, Result};
use crate::linalg::{dot, dot_f32, symmetric_eigen, EigenSolver};
use crate::preprocess::Expression;
use crate::tensor::Tensor;
use crate::vgg::TapPoint;

/// Gram/back-projection work is done over column blocks of this width.
const COLUMN_BLOCK: usize = 2048;
/// Gram eigenvalues at or below this fraction of the largest are treated as
/// zero when choosing how many components exist.
const RANK_REL_TOL: f64 = 1e-12;

/// Read access to the rows of a feature matrix.
///
/// Fitting routines only ever see data through this trait, which lets
/// callers restrict (and tests observe) exactly which rows are touched.
pub trait RowSource: Sync {
    fn n_rows(&self) -> usize;
    fn dim(&self) -> usize;
    fn row(&self, i: usize) -> &[f32];
}

/// The rows of `source` selected by `indices`, in that order.
pub struct RowSubset<'a, S: RowSource + ?Sized> {
    source: &'a S,
    indices: &'a [usize],
}

impl<'a, S: RowSource + ?Sized> RowSubset<'a, S> {
    pub fn new(source: &'a S, indices: &'a [usize]) -> Self {
        Self { source, indices }
    }
}

impl<S: RowSource + ?Sized> RowSource for RowSubset<'_, S> {
    fn n_rows(&self) -> usize {
        self.indices.len()
    }

    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn row(&self, i: usize) -> &[f32] {
        self.source.row(self.indices[i])
    }
}

/// Tapped-layer activations for a set of samples.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub layer: TapPoint,
    pub sample_ids: Vec<String>,
    pub labels: Option<Vec<Expression>>,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(
        layer: TapPoint,
        sample_ids: Vec<String>,
        labels: Option<Vec<Expression>>,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        let n = sample_ids.len();
        if n == 0 || dim == 0 {
            return Err(Error::InvalidArgument("feature matrix must be non-empty".into()));
        }
        if data.len() != n * dim {
            return Err(Error::DimMismatch {
                op: "feature matrix",
                expected: n * dim,
                got: data.len(),
            });
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::DimMismatch {
                    op: "feature labels",
                    expected: n,
                    got: l.len(),
                });
            }
        }
        Ok(Self {
            layer,
            sample_ids,
            labels,
            dim,
            data,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.sample_ids.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

impl RowSource for FeatureMatrix {
    fn n_rows(&self) -> usize {
        self.sample_ids.len()
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcaRoute {
    Gram,
    Covariance,
}

/// A fitted projection: training mean, `k` orthonormal components and
/// their covariance eigenvalues (non-increasing).
#[derive(Clone, Debug, PartialEq)]
pub struct PcaModel {
    dim: usize,
    k: usize,
    mean: Vec<f32>,
    components: Vec<f32>,
    eigenvalues: Vec<f32>,
    pub requested: usize,
    pub n_samples: usize,
    pub route: PcaRoute,
}

#[derive(Serialize, Deserialize)]
struct PcaMeta {
    requested: usize,
    n_samples: usize,
    route: PcaRoute,
}

#[derive(Clone, Copy, Debug)]
pub struct PcaOptions {
    pub solver: EigenSolver,
    /// Force a route instead of choosing by shape.
    pub route: Option<PcaRoute>,
}

impl Default for PcaOptions {
    fn default() -> Self {
        Self {
            solver: EigenSolver::default(),
            route: None,
        }
    }
}

pub fn pca_fit<S: RowSource + ?Sized>(train: &S, n_components: usize) -> Result<PcaModel> {
    pca_fit_with(train, n_components, PcaOptions::default())
}

pub fn pca_fit_with<S: RowSource + ?Sized>(train: &S, n_components: usize, opts: PcaOptions) -> Result<PcaModel> {
    let n = train.n_rows();
    let dim = train.dim();
    if n < 2 {
        return Err(Error::TooFewSamples {
            op: "pca_fit",
            needed: 2,
            got: n,
        });
    }
    if n_components == 0 {
        return Err(Error::InvalidArgument("n_components must be positive".into()));
    }

    let mut mean = vec![0f64; dim];
    for i in 0..n {
        let row = train.row(i);
        if row.len() != dim {
            return Err(Error::DimMismatch {
                op: "pca_fit",
                expected: dim,
                got: row.len(),
            });
        }
        for (m, v) in mean.iter_mut().zip(row) {
            if !v.is_finite() {
                return Err(Error::NonFinite("pca_fit input"));
            }
            *m += f64::from(*v);
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }

    let bound = (n - 1).min(dim);
    let mut k = n_components.min(bound);
    if k < n_components {
        debug!("pca: {n_components} components requested but rank bound is {bound} (n={n}, dim={dim}); using {k}");
    }

    let route = opts
        .route
        .unwrap_or(if dim > n { PcaRoute::Gram } else { PcaRoute::Covariance });
    let (components, eigenvalues) = match route {
        PcaRoute::Gram => {
            let gram = centered_gram(train, &mean);
            let eig = symmetric_eigen(&gram, n, opts.solver);
            let top = eig.values[0].max(0.0);
            let rank = eig.values.iter().take_while(|&&v| v > top * RANK_REL_TOL && v > 0.0).count();
            if rank == 0 {
                return Err(Error::DegenerateFeatures);
            }
            if rank < k {
                debug!("pca: training features have numerical rank {rank}; using {rank} of {k} components");
                k = rank;
            }
            let coeffs: Vec<&[f64]> = (0..k).map(|j| eig.vector(j)).collect();
            let comps = back_project(train, &mean, &coeffs);
            let vals = eig.values[..k].iter().map(|v| v.max(0.0) / (n - 1) as f64).collect();
            (comps, vals)
        }
        PcaRoute::Covariance => {
            let cov = covariance(train, &mean);
            let eig = symmetric_eigen(&cov, dim, opts.solver);
            let mut comps = Vec::with_capacity(k * dim);
            for j in 0..k {
                let mut v = eig.vector(j).to_vec();
                canonicalize_sign(&mut v);
                comps.extend(v.iter().map(|x| *x as f32));
            }
            let vals = eig.values[..k].iter().map(|v| v.max(0.0)).collect::<Vec<_>>();
            (comps, vals)
        }
    };

    Ok(PcaModel {
        dim,
        k,
        mean: mean.iter().map(|m| *m as f32).collect(),
        components,
        eigenvalues: eigenvalues.into_iter().map(|v: f64| v as f32).collect(),
        requested: n_components,
        n_samples: n,
        route,
    })
}

fn centered_block<S: RowSource + ?Sized>(train: &S, mean: &[f64], lo: usize, hi: usize) -> Vec<Vec<f64>> {
    (0..train.n_rows())
        .map(|i| {
            train.row(i)[lo..hi]
                .iter()
                .zip(&mean[lo..hi])
                .map(|(x, m)| f64::from(*x) - m)
                .collect()
        })
        .collect()
}

fn centered_gram<S: RowSource + ?Sized>(train: &S, mean: &[f64]) -> Vec<f64> {
    let n = train.n_rows();
    let dim = train.dim();
    let mut gram = vec![0f64; n * n];
    for lo in (0..dim).step_by(COLUMN_BLOCK) {
        let hi = (lo + COLUMN_BLOCK).min(dim);
        let block = centered_block(train, mean, lo, hi);
        let partial: Vec<Vec<f64>> = (0..n)
            .into_par_iter()
            .map(|i| (i..n).map(|j| dot(&block[i], &block[j])).collect())
            .collect();
        for (i, row) in partial.iter().enumerate() {
            for (off, v) in row.iter().enumerate() {
                gram[i * n + i + off] += v;
            }
        }
    }
    for i in 0..n {
        for j in 0..i {
            gram[i * n + j] = gram[j * n + i];
        }
    }
    gram
}

fn covariance<S: RowSource + ?Sized>(train: &S, mean: &[f64]) -> Vec<f64> {
    let n = train.n_rows();
    let dim = train.dim();
    let centered = centered_block(train, mean, 0, dim);
    let scale = 1.0 / (n - 1) as f64;
    let upper: Vec<Vec<f64>> = (0..dim)
        .into_par_iter()
        .map(|a| {
            (a..dim)
                .map(|b| centered.iter().map(|r| r[a] * r[b]).sum::<f64>() * scale)
                .collect()
        })
        .collect();
    let mut cov = vec![0f64; dim * dim];
    for (a, row) in upper.iter().enumerate() {
        for (off, v) in row.iter().enumerate() {
            cov[a * dim + a + off] = *v;
            cov[(a + off) * dim + a] = *v;
        }
    }
    cov
}

/// `u_j = sum_i coeffs[j][i] * (x_i - mean)`, then unit-normalized and
/// sign-canonicalized.
fn back_project<S: RowSource + ?Sized>(train: &S, mean: &[f64], coeffs: &[&[f64]]) -> Vec<f32> {
    let dim = train.dim();
    let k = coeffs.len();
    let mut raw = vec![0f64; k * dim];
    for lo in (0..dim).step_by(COLUMN_BLOCK) {
        let hi = (lo + COLUMN_BLOCK).min(dim);
        let block = centered_block(train, mean, lo, hi);
        let width = hi - lo;
        let chunks: Vec<Vec<f64>> = coeffs
            .par_iter()
            .map(|c| {
                let mut acc = vec![0f64; width];
                for (ci, row) in c.iter().zip(&block) {
                    for (a, x) in acc.iter_mut().zip(row) {
                        *a += ci * x;
                    }
                }
                acc
            })
            .collect();
        for (j, chunk) in chunks.into_iter().enumerate() {
            raw[j * dim + lo..j * dim + hi].copy_from_slice(&chunk);
        }
    }
    let mut out = Vec::with_capacity(k * dim);
    for j in 0..k {
        let u = &mut raw[j * dim..(j + 1) * dim];
        let norm = dot(u, u).sqrt();
        for x in u.iter_mut() {
            *x /= norm;
        }
        canonicalize_sign(u);
        out.extend(u.iter().map(|x| *x as f32));
    }
    out
}

fn canonicalize_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

impl PcaModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Whether fewer components were produced than requested.
    pub fn clamped(&self) -> bool {
        self.k < self.requested
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn eigenvalues(&self) -> &[f32] {
        &self.eigenvalues
    }

    pub fn component(&self, j: usize) -> &[f32] {
        &self.components[j * self.dim..(j + 1) * self.dim]
    }

    /// The leading `k` components of this model.
    pub fn truncated(&self, k: usize) -> PcaModel {
        let k = k.min(self.k);
        PcaModel {
            dim: self.dim,
            k,
            mean: self.mean.clone(),
            components: self.components[..k * self.dim].to_vec(),
            eigenvalues: self.eigenvalues[..k].to_vec(),
            requested: k,
            n_samples: self.n_samples,
            route: self.route,
        }
    }

    pub fn transform_row(&self, row: &[f32]) -> Result<Vec<f64>> {
        if row.len() != self.dim {
            return Err(Error::DimMismatch {
                op: "pca_transform",
                expected: self.dim,
                got: row.len(),
            });
        }
        let centered: Vec<f64> = row
            .iter()
            .zip(&self.mean)
            .map(|(x, m)| f64::from(*x) - f64::from(*m))
            .collect();
        Ok((0..self.k)
            .map(|j| dot_f32(self.component(j), &centered))
            .collect())
    }

    /// Projects every row of `features` onto the components (`n x k`).
    pub fn transform<S: RowSource + ?Sized>(&self, features: &S) -> Result<Array2<f64>> {
        if features.dim() != self.dim {
            return Err(Error::DimMismatch {
                op: "pca_transform",
                expected: self.dim,
                got: features.dim(),
            });
        }
        // Rows are handled in tiles of four so each component is streamed
        // once per tile; per-row arithmetic matches `transform_row` exactly.
        let n = features.n_rows();
        let tiles: Vec<Vec<f64>> = (0..n)
            .step_by(4)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|lo| {
                let hi = (lo + 4).min(n);
                let centered: Vec<Vec<f64>> = (lo..hi)
                    .map(|i| {
                        features
                            .row(i)
                            .iter()
                            .zip(&self.mean)
                            .map(|(x, m)| f64::from(*x) - f64::from(*m))
                            .collect()
                    })
                    .collect();
                let mut out = vec![0f64; (hi - lo) * self.k];
                for j in 0..self.k {
                    let u = self.component(j);
                    for (r, c) in centered.iter().enumerate() {
                        out[r * self.k + j] = dot_f32(u, c);
                    }
                }
                out
            })
            .collect();
        Ok(Array2::from_shape_vec((n, self.k), tiles.into_iter().flatten().collect()).expect("n x k"))
    }

    /// `mean + components^T z`.
    pub fn reconstruct(&self, z: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = self.mean.iter().map(|m| f64::from(*m)).collect();
        for (j, zj) in z.iter().enumerate().take(self.k) {
            for (o, u) in out.iter_mut().zip(self.component(j)) {
                *o += zj * f64::from(*u);
            }
        }
        out
    }

    pub fn to_bundle(&self) -> Result<TensorBundle> {
        let mut b = TensorBundle::new(Some("pca model".into()));
        b.insert("mean", Tensor::new(vec![self.dim], self.mean.clone())?);
        b.insert("components", Tensor::new(vec![self.k, self.dim], self.components.clone())?);
        b.insert("eigenvalues", Tensor::new(vec![self.k], self.eigenvalues.clone())?);
        Ok(b)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let meta = serde_json::to_value(PcaMeta {
            requested: self.requested,
            n_samples: self.n_samples,
            route: self.route,
        })
        .map_err(|e| Error::json("pca meta", e))?;
        self.to_bundle()?.write_with_sidecar(dir, Some(&meta))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let b = TensorBundle::read(dir)?;
        let meta: PcaMeta =
            serde_json::from_value(read_sidecar(dir)?).map_err(|e| Error::json(dir.display().to_string(), e))?;
        let mean = b.require("mean")?;
        let comps = b.require("components")?;
        let vals = b.require("eigenvalues")?;
        let (k, dim) = match comps.shape() {
            [k, d] => (*k, *d),
            other => {
                return Err(Error::LayerShape {
                    layer: "components".into(),
                    expected: vec![0, mean.len()],
                    found: other.to_vec(),
                })
            }
        };
        if mean.shape() != [dim] || vals.shape() != [k] {
            return Err(Error::LayerShape {
                layer: "mean/eigenvalues".into(),
                expected: vec![dim, k],
                found: vec![mean.len(), vals.len()],
            });
        }
        Ok(Self {
            dim,
            k,
            mean: mean.data().to_vec(),
            components: comps.data().to_vec(),
            eigenvalues: vals.data().to_vec(),
            requested: meta.requested,
            n_samples: meta.n_samples,
            route: meta.route,
        })
    }
}
