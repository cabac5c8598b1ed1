//! Row-major GEMM kernels and a dense symmetric matrix.
//!
//! Parallelism is always over disjoint output rows, and every output element
//! is a fixed-order sequential sum, so results are bit-identical for any
//! thread count.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Rows-per-task floor so rayon tasks stay coarse on small matrices.
fn row_chunk(rows: usize, cols: usize) -> usize {
    // Aim for ~64k flops per task.
    (32_768 / cols.max(1)).clamp(1, rows.max(1))
}

/// out[m x n] = a[m x k] * b[k x n]. Overwrites `out`.
pub fn matmul(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let chunk = row_chunk(m, n);
    out.par_chunks_mut(chunk * n)
        .enumerate()
        .for_each(|(ci, block)| {
            let i0 = ci * chunk;
            for (ri, row) in block.chunks_mut(n).enumerate() {
                let i = i0 + ri;
                row.fill(0.0);
                for (kk, &aik) in a[i * k..(i + 1) * k].iter().enumerate() {
                    let brow = &b[kk * n..kk * n + n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
            }
        });
}

/// out[m x n] = transpose(a) * b where a is stored [k x m]. Overwrites `out`.
pub fn matmul_tn(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(out.len(), m * n);
    let chunk = row_chunk(m, n);
    out.par_chunks_mut(chunk * n)
        .enumerate()
        .for_each(|(ci, block)| {
            let i0 = ci * chunk;
            for (ri, row) in block.chunks_mut(n).enumerate() {
                let i = i0 + ri;
                row.fill(0.0);
                for kk in 0..k {
                    let aik = a[kk * m + i];
                    let brow = &b[kk * n..kk * n + n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += aik * bv;
                    }
                }
            }
        });
}

/// out[m x n] = a * transpose(b) where b is stored [n x k]. Overwrites `out`.
pub fn matmul_nt(m: usize, k: usize, n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(out.len(), m * n);
    let chunk = row_chunk(m, n);
    out.par_chunks_mut(chunk * n)
        .enumerate()
        .for_each(|(ci, block)| {
            let i0 = ci * chunk;
            for (ri, row) in block.chunks_mut(n).enumerate() {
                let i = i0 + ri;
                let arow = &a[i * k..(i + 1) * k];
                for (j, o) in row.iter_mut().enumerate() {
                    let brow = &b[j * k..(j + 1) * k];
                    *o = dot(arow, brow);
                }
            }
        });
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// A dense symmetric n x n matrix of f64, stored fully (both triangles).
#[derive(Clone, Debug)]
pub struct SymMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    /// Build from an element function. `f` must be symmetric in its
    /// arguments; both triangles are evaluated (rows in parallel), which
    /// yields a bitwise-symmetric matrix whenever `f(p,q) == f(q,p)` exactly.
    pub fn from_fn<F>(n: usize, f: F) -> Self
    where
        F: Fn(usize, usize) -> f64 + Sync,
    {
        let mut data = vec![0.0; n * n];
        data.par_chunks_mut(n).enumerate().for_each(|(p, row)| {
            for (q, v) in row.iter_mut().enumerate() {
                *v = f(p, q);
            }
        });
        SymMatrix { n, data }
    }

    pub fn from_raw(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::shape(
                "sym_matrix",
                format!("expected {} elements for n={n}, got {}", n * n, data.len()),
            ));
        }
        Ok(SymMatrix { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn at(&self, p: usize, q: usize) -> f64 {
        self.data[p * self.n + q]
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.n..(p + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Largest |m(p,q) - m(q,p)|; zero for a truly symmetric matrix.
    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for p in 0..self.n {
            for q in (p + 1)..self.n {
                worst = worst.max((self.at(p, q) - self.at(q, p)).abs());
            }
        }
        worst
    }

    /// out[p] = sum_q m(p,q) v[q] - m(p,p) v[p], the diagonal-excluded
    /// matrix-vector product used by dense message passing.
    pub fn offdiag_matvec(&self, v: &[f64], out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.n);
        debug_assert_eq!(out.len(), self.n);
        let n = self.n;
        let chunk = row_chunk(n, n);
        out.par_chunks_mut(chunk).enumerate().for_each(|(ci, block)| {
            let p0 = ci * chunk;
            for (ri, o) in block.iter_mut().enumerate() {
                let p = p0 + ri;
                let row = &self.data[p * n..(p + 1) * n];
                *o = dot(row, v) - row[p] * v[p];
            }
        });
    }
}
