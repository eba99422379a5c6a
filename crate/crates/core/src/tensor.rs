//! Dense tensors and the four kernels the VGG19 graph is built from.
//!
//! Activations are channel-first `(C, H, W)`, conv weights
//! `(C_out, C_in, 3, 3)` and dense weights `(out, in)`, all row-major.
//! Every dot product accumulates in `f64` in a fixed order per output
//! element; parallelism is only ever across output elements, so results are
//! bit-identical regardless of thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > MAX_RANK {
            return Err(Error::InvalidTensor(format!(
                "rank must be 1..={MAX_RANK}, got {}",
                shape.len()
            )));
        }
        if shape.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} holds {expected} elements but buffer has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![0.0; n])
    }

    pub fn filled(shape: Vec<usize>, value: f32) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(shape, vec![value; n])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Same buffer under a new shape with equal element count.
    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    fn dims3(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::ShapeMismatch {
                op,
                left: self.shape.clone(),
                right: vec![0, 0, 0],
            }),
        }
    }
}

/// Same-padded 3x3 convolution, stride 1.
///
/// `out[c,y,x] = bias[c] + sum over (i, dy, dx) of w[c,i,dy,dx] * in_padded[i,y+dy,x+dx]`,
/// accumulated in exactly that loop order.
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Result<Tensor> {
    let (c_in, h, w) = input.dims3("conv2d")?;
    let (c_out, w_in, kh, kw) = match weights.shape[..] {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.shape.clone(),
                right: weights.shape.clone(),
            })
        }
    };
    if w_in != c_in || kh != 3 || kw != 3 {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            left: input.shape.clone(),
            right: weights.shape.clone(),
        });
    }
    if bias.len() != c_out {
        return Err(Error::ShapeMismatch {
            op: "conv2d bias",
            left: weights.shape.clone(),
            right: vec![bias.len()],
        });
    }

    let (ph, pw) = (h + 2, w + 2);
    let mut padded = vec![0f64; c_in * ph * pw];
    for i in 0..c_in {
        for y in 0..h {
            let src = &input.data[(i * h + y) * w..(i * h + y + 1) * w];
            let dst = &mut padded[(i * ph + y + 1) * pw + 1..(i * ph + y + 1) * pw + 1 + w];
            for (d, s) in dst.iter_mut().zip(src) {
                *d = f64::from(*s);
            }
        }
    }

    let mut out = vec![0f32; c_out * h * w];
    out.par_chunks_mut(w).enumerate().for_each(|(row, out_row)| {
        let c = row / h;
        let y = row % h;
        let mut acc = vec![f64::from(bias[c]); w];
        let kernel = &weights.data[c * c_in * 9..(c + 1) * c_in * 9];
        for i in 0..c_in {
            for dy in 0..3 {
                let prow = &padded[(i * ph + y + dy) * pw..(i * ph + y + dy + 1) * pw];
                for dx in 0..3 {
                    let wv = f64::from(kernel[i * 9 + dy * 3 + dx]);
                    for (a, p) in acc.iter_mut().zip(&prow[dx..dx + w]) {
                        *a += wv * p;
                    }
                }
            }
        }
        for (o, a) in out_row.iter_mut().zip(&acc) {
            *o = *a as f32;
        }
    });
    Tensor::new(vec![c_out, h, w], out)
}

/// 2x2 max pooling with stride 2.
pub fn maxpool2d(input: &Tensor) -> Result<Tensor> {
    let (c, h, w) = input.dims3("maxpool2d")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::OddExtent {
            op: "maxpool2d",
            height: h,
            width: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0f32; c * oh * ow];
    out.par_chunks_mut(ow).enumerate().for_each(|(row, out_row)| {
        let ch = row / oh;
        let y = row % oh;
        let top = &input.data[(ch * h + 2 * y) * w..(ch * h + 2 * y + 1) * w];
        let bottom = &input.data[(ch * h + 2 * y + 1) * w..(ch * h + 2 * y + 2) * w];
        for (x, o) in out_row.iter_mut().enumerate() {
            *o = top[2 * x]
                .max(top[2 * x + 1])
                .max(bottom[2 * x])
                .max(bottom[2 * x + 1]);
        }
    });
    Tensor::new(vec![c, oh, ow], out)
}

/// Affine layer `out[j] = bias[j] + sum_i w[j,i] * in[i]`.
pub fn dense(input: &[f32], weights: &Tensor, bias: &[f32]) -> Result<Vec<f32>> {
    let (m, n) = match weights.shape[..] {
        [m, n] => (m, n),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "dense",
                left: vec![input.len()],
                right: weights.shape.clone(),
            })
        }
    };
    if input.len() != n {
        return Err(Error::ShapeMismatch {
            op: "dense",
            left: vec![input.len()],
            right: weights.shape.clone(),
        });
    }
    if bias.len() != m {
        return Err(Error::ShapeMismatch {
            op: "dense bias",
            left: weights.shape.clone(),
            right: vec![bias.len()],
        });
    }
    let x: Vec<f64> = input.iter().map(|v| f64::from(*v)).collect();
    Ok((0..m)
        .into_par_iter()
        .map(|j| {
            let row = &weights.data[j * n..(j + 1) * n];
            let mut acc = f64::from(bias[j]);
            for (wv, xv) in row.iter().zip(&x) {
                acc += f64::from(*wv) * xv;
            }
            acc as f32
        })
        .collect())
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    relu_in_place(&mut out.data);
    out
}

pub(crate) fn relu_in_place(values: &mut [f32]) {
    for v in values {
        // keeps -0.0 and NaN out of the result
        if !(*v > 0.0) {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(shape: Vec<usize>) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::new(shape, (0..n).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn tensor_rejects_bad_shapes() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![0.0]).is_err());
    }

    #[test]
    fn conv_preserves_extent_and_zero_kernel_gives_zero() {
        let input = ramp(vec![3, 9, 7]);
        let weights = Tensor::zeros(vec![4, 3, 3, 3]).unwrap();
        let out = conv2d(&input, &weights, &[0.0; 4]).unwrap();
        assert_eq!(out.shape(), &[4, 9, 7]);
        assert!(out.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch_names_both_shapes() {
        let input = ramp(vec![2, 4, 4]);
        let weights = Tensor::zeros(vec![4, 3, 3, 3]).unwrap();
        let err = conv2d(&input, &weights, &[0.0; 4]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 4, 4]") && msg.contains("[4, 3, 3, 3]"), "{msg}");
    }

    #[test]
    fn conv_center_tap_is_identity() {
        let input = ramp(vec![1, 5, 6]);
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let weights = Tensor::new(vec![1, 1, 3, 3], w).unwrap();
        let out = conv2d(&input, &weights, &[0.0]).unwrap();
        assert_eq!(out.data(), input.data());
    }

    #[test]
    fn conv_single_pixel_1x1_input() {
        let input = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let weights = Tensor::filled(vec![1, 1, 3, 3], 1.0).unwrap();
        let out = conv2d(&input, &weights, &[0.5]).unwrap();
        // only the centre tap sees a real pixel
        assert_eq!(out.data(), &[2.5]);
    }

    #[test]
    fn maxpool_halves_and_rejects_odd() {
        let input = ramp(vec![2, 4, 6]);
        assert_eq!(maxpool2d(&input).unwrap().shape(), &[2, 2, 3]);
        let odd = ramp(vec![1, 3, 4]);
        assert!(matches!(maxpool2d(&odd), Err(Error::OddExtent { .. })));
    }

    #[test]
    fn maxpool_constant() {
        let input = Tensor::filled(vec![3, 8, 8], -1.25).unwrap();
        let out = maxpool2d(&input).unwrap();
        assert!(out.data().iter().all(|v| *v == -1.25));
    }

    #[test]
    fn dense_identity_and_mismatch() {
        let n = 6;
        let mut eye = vec![0.0; n * n];
        for i in 0..n {
            eye[i * n + i] = 1.0;
        }
        let w = Tensor::new(vec![n, n], eye).unwrap();
        let x: Vec<f32> = (0..n).map(|i| i as f32 - 2.5).collect();
        assert_eq!(dense(&x, &w, &[0.0; 6]).unwrap(), x);
        assert!(dense(&x[..5], &w, &[0.0; 6]).is_err());
    }

    #[test]
    fn relu_definition() {
        let t = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&t).data(), &[0.0, 0.0, 2.0]);
        let neg_zero = Tensor::new(vec![1], vec![-0.0]).unwrap();
        assert!(relu(&neg_zero).data()[0].is_sign_positive());
    }
}
