//! Dense f64 kernels on row-major buffers, backed by `matrixmultiply`.

use rayon::prelude::*;

/// Rows per chunk when streaming f32 matrices through f64 kernels. Fixed so that
/// every reduction has the same shape regardless of thread count.
pub(crate) const ROW_CHUNK: usize = 1024;

/// Column band width for the blocked scatter-matrix update.
const BAND: usize = 128;

/// Borrowed strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    pub(crate) fn row_major(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self { data, rows, cols, rs: cols, cs: 1 }
    }

    /// Sub-block of columns `[c0, c0 + width)`.
    pub(crate) fn columns(self, c0: usize, width: usize) -> Self {
        assert!(c0 + width <= self.cols);
        Self {
            data: &self.data[(c0 * self.cs).min(self.data.len())..],
            cols: width,
            ..self
        }
    }

    pub(crate) fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view exceeds its buffer");
        }
    }
}

/// `c = alpha * a * b + beta * c` where `c` is row-major with row stride `ldc`.
pub(crate) fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: &mut [f64], ldc: usize) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    a.check();
    b.check();
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(ldc >= n && (m - 1) * ldc + n <= c.len(), "output buffer too small");
    // SAFETY: every index touched by dgemm is bounded by the view checks above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr(),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.as_mut_ptr(),
            ldc as isize,
            1,
        );
    }
}

/// Column means of an f32 row-major matrix, accumulated in f64 chunk by chunk.
pub(crate) fn column_means(x: &[f32], dim: usize) -> Vec<f64> {
    let n = x.len() / dim;
    let partials: Vec<Vec<f64>> = x
        .par_chunks(ROW_CHUNK * dim)
        .map(|chunk| {
            let mut acc = vec![0.0f64; dim];
            for row in chunk.chunks_exact(dim) {
                for (a, &v) in acc.iter_mut().zip(row) {
                    *a += f64::from(v);
                }
            }
            acc
        })
        .collect();
    let mut mean = vec![0.0f64; dim];
    for p in &partials {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v;
        }
    }
    let inv = 1.0 / n as f64;
    mean.iter_mut().for_each(|m| *m *= inv);
    mean
}

/// Convert a block of f32 rows to f64 with `mean` subtracted.
pub(crate) fn centered_block(rows: &[f32], mean: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(
        rows.chunks_exact(mean.len())
            .flat_map(|r| r.iter().zip(mean).map(|(&v, &m)| f64::from(v) - m)),
    );
}

/// Scatter matrix `Σ (x - mean)(x - mean)ᵀ` as a full symmetric row-major `dim × dim` buffer.
///
/// Row chunks are visited in order; within a chunk, disjoint row bands of the
/// upper triangle are updated in parallel, so the result is independent of the
/// number of worker threads.
pub(crate) fn scatter_matrix(x: &[f32], dim: usize, mean: &[f64]) -> Vec<f64> {
    let mut s = vec![0.0f64; dim * dim];
    let mut block = Vec::with_capacity(ROW_CHUNK * dim);
    for chunk in x.chunks(ROW_CHUNK * dim) {
        centered_block(chunk, mean, &mut block);
        let rows = block.len() / dim;
        let xc = View::row_major(&block, rows, dim);
        s.par_chunks_mut(BAND * dim).enumerate().for_each(|(band, out)| {
            let r0 = band * BAND;
            let h = out.len() / dim;
            let a = xc.columns(r0, h).t();
            let b = xc.columns(r0, dim - r0);
            gemm(1.0, a, b, 1.0, &mut out[r0..], dim);
        });
    }
    for i in 0..dim {
        for j in 0..i {
            s[i * dim + j] = s[j * dim + i];
        }
    }
    s
}
