//! Dense symmetric eigendecomposition.
//!
//! Two solvers share one result type: cyclic Jacobi rotations, and
//! Householder tridiagonalization followed by implicit-shift QL. Both return
//! eigenvalues in non-increasing order with eigenvectors as rows.

use log::warn;

/// Jacobi stops once the off-diagonal Frobenius norm falls below this
/// fraction of the matrix Frobenius norm.
pub const JACOBI_REL_TOL: f64 = 1e-10;
pub const JACOBI_MAX_SWEEPS: usize = 100;
const QL_MAX_ITERS: usize = 60;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EigenSolver {
    Jacobi,
    #[default]
    TridiagonalQl,
}

#[derive(Clone, Debug)]
pub struct SymmetricEigen {
    pub n: usize,
    /// Non-increasing.
    pub values: Vec<f64>,
    /// Row `k` (`vectors[k*n..(k+1)*n]`) is the unit eigenvector for `values[k]`.
    pub vectors: Vec<f64>,
    /// Sweeps for Jacobi, total QL iterations otherwise.
    pub iterations: usize,
    pub converged: bool,
}

impl SymmetricEigen {
    pub fn vector(&self, k: usize) -> &[f64] {
        &self.vectors[k * self.n..(k + 1) * self.n]
    }
}

/// Decomposes the symmetric row-major `n`x`n` matrix `a`. Only symmetry of
/// the input is assumed; the strict lower triangle is read as well.
/// Dot product with four interleaved accumulators, combined in a fixed
/// order so results do not depend on the target's vector width.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// As [`dot`] with an `f32` left operand widened to `f64`.
pub fn dot_f32(a: &[f32], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| f64::from(*x) * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += f64::from(x[l]) * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

pub fn symmetric_eigen(a: &[f64], n: usize, solver: EigenSolver) -> SymmetricEigen {
    assert_eq!(a.len(), n * n, "matrix buffer does not match n");
    let mut result = match solver {
        EigenSolver::Jacobi => jacobi(a, n),
        EigenSolver::TridiagonalQl => tridiagonal_ql(a, n),
    };
    if !result.converged {
        warn!("{solver:?} eigensolver hit its iteration bound on a {n}x{n} matrix");
    }
    sort_descending(&mut result);
    result
}

fn sort_descending(r: &mut SymmetricEigen) {
    let n = r.n;
    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep solver order
    order.sort_by(|&i, &j| r.values[j].total_cmp(&r.values[i]));
    let values = order.iter().map(|&i| r.values[i]).collect();
    let mut vectors = Vec::with_capacity(n * n);
    for &i in &order {
        vectors.extend_from_slice(&r.vectors[i * n..(i + 1) * n]);
    }
    r.values = values;
    r.vectors = vectors;
}

fn jacobi(input: &[f64], n: usize) -> SymmetricEigen {
    let mut a = input.to_vec();
    // rows of `v` are the accumulated eigenvectors
    let mut v = vec![0f64; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let off_norm = |a: &[f64]| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    s += a[i * n + j] * a[i * n + j];
                }
            }
        }
        s.sqrt()
    };

    let mut sweeps = 0;
    let mut converged = n <= 1 || norm == 0.0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        if off_norm(&a) < JACOBI_REL_TOL * norm {
            converged = true;
            break;
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                // columns p and q
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                // rows p and q
                let (row_p, row_q) = two_rows(&mut a, n, p, q);
                for (ap, aq) in row_p.iter_mut().zip(row_q.iter_mut()) {
                    let (x, y) = (*ap, *aq);
                    *ap = c * x - s * y;
                    *aq = s * x + c * y;
                }
                a[p * n + q] = 0.0;
                a[q * n + p] = 0.0;

                let (vp, vq) = two_rows(&mut v, n, p, q);
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let (xp, xq) = (*x, *y);
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
        if sweeps == JACOBI_MAX_SWEEPS {
            converged = off_norm(&a) < JACOBI_REL_TOL * norm;
        }
    }
    let values = (0..n).map(|i| a[i * n + i]).collect();
    SymmetricEigen {
        n,
        values,
        vectors: v,
        iterations: sweeps,
        converged,
    }
}

fn two_rows(m: &mut [f64], n: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = m.split_at_mut(q * n);
    (&mut head[p * n..(p + 1) * n], &mut tail[..n])
}

fn tridiagonal_ql(input: &[f64], n: usize) -> SymmetricEigen {
    if n == 0 {
        return SymmetricEigen {
            n,
            values: vec![],
            vectors: vec![],
            iterations: 0,
            converged: true,
        };
    }
    // Householder reduction, V[i][j] at v[i*n + j]; columns end up as the
    // orthogonal transform.
    let mut v = input.to_vec();
    let mut d = vec![0f64; n];
    let mut e = vec![0f64; n];
    let at = |i: usize, j: usize| i * n + j;

    for j in 0..n {
        d[j] = v[at(n - 1, j)];
    }
    for i in (1..n).rev() {
        let mut scale = 0.0;
        let mut h = 0.0;
        for dk in &d[..i] {
            scale += dk.abs();
        }
        if scale == 0.0 {
            e[i] = d[i - 1];
            for j in 0..i {
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
                v[at(j, i)] = 0.0;
            }
        } else {
            for dk in &mut d[..i] {
                *dk /= scale;
                h += *dk * *dk;
            }
            let mut f = d[i - 1];
            let mut g = h.sqrt();
            if f > 0.0 {
                g = -g;
            }
            e[i] = scale * g;
            h -= f * g;
            d[i - 1] = f - g;
            for ej in &mut e[..i] {
                *ej = 0.0;
            }
            for j in 0..i {
                f = d[j];
                v[at(j, i)] = f;
                g = e[j] + v[at(j, j)] * f;
                for k in j + 1..i {
                    g += v[at(k, j)] * d[k];
                    e[k] += v[at(k, j)] * f;
                }
                e[j] = g;
            }
            f = 0.0;
            for j in 0..i {
                e[j] /= h;
                f += e[j] * d[j];
            }
            let hh = f / (h + h);
            for j in 0..i {
                e[j] -= hh * d[j];
            }
            for j in 0..i {
                f = d[j];
                g = e[j];
                for k in j..i {
                    v[at(k, j)] -= f * e[k] + g * d[k];
                }
                d[j] = v[at(i - 1, j)];
                v[at(i, j)] = 0.0;
            }
        }
        d[i] = h;
    }
    for i in 0..n - 1 {
        v[at(n - 1, i)] = v[at(i, i)];
        v[at(i, i)] = 1.0;
        let h = d[i + 1];
        if h != 0.0 {
            for k in 0..=i {
                d[k] = v[at(k, i + 1)] / h;
            }
            for j in 0..=i {
                let mut g = 0.0;
                for k in 0..=i {
                    g += v[at(k, i + 1)] * v[at(k, j)];
                }
                for k in 0..=i {
                    v[at(k, j)] -= g * d[k];
                }
            }
        }
        for k in 0..=i {
            v[at(k, i + 1)] = 0.0;
        }
    }
    for j in 0..n {
        d[j] = v[at(n - 1, j)];
        v[at(n - 1, j)] = 0.0;
    }
    v[at(n - 1, n - 1)] = 1.0;
    e[0] = 0.0;

    // QL on the tridiagonal form; work on the transpose so each plane
    // rotation touches two contiguous rows.
    let mut vt = vec![0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[j * n + i] = v[i * n + j];
        }
    }
    drop(v);

    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    let mut f = 0.0f64;
    let mut tst1 = 0.0f64;
    let eps = f64::EPSILON;
    let mut total_iters = 0;
    let mut converged = true;
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n - 1 && e[m].abs() > eps * tst1 {
            m += 1;
        }
        if m > l {
            let mut iters = 0;
            loop {
                iters += 1;
                total_iters += 1;
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (2.0 * e[l]);
                let mut r = p.hypot(1.0);
                if p < 0.0 {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in &mut d[l + 2..] {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = 1.0;
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = 0.0;
                let mut s2 = 0.0;
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                    let (ri, ri1) = two_rows(&mut vt, n, i, i + 1);
                    for (x, y) in ri.iter_mut().zip(ri1.iter_mut()) {
                        let hv = *y;
                        *y = s * *x + c * hv;
                        *x = c * *x - s * hv;
                    }
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
                if iters >= QL_MAX_ITERS {
                    converged = false;
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = 0.0;
    }
    SymmetricEigen {
        n,
        values: d,
        vectors: vt,
        iterations: total_iters,
        converged,
    }
}
