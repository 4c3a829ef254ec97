//! Dense row-major matrix storage and the hot-loop kernels built on it.

use std::fmt;

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length mismatch");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Matrix({}x{})", self.rows, self.cols)
    }
}

/// Dot product with four independent accumulators so the loop vectorizes.
/// Summation order is fixed, which keeps results bit-reproducible.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0f64; 4];
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `out += a * x`, elementwise over equal-length slices.
pub fn axpy(a: f64, x: &[f64], out: &mut [f64]) {
    debug_assert_eq!(x.len(), out.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += a * v;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// `out = x * w^T + bias` (`x`: BxK, `w`: OxK).
///
/// The product runs on `matrixmultiply`'s packed single-threaded GEMM; the
/// transposed view of `w` is expressed through strides, so no copy is made.
pub fn matmul_xwt(x: &Matrix, w: &Matrix, bias: &[f64], out: &mut Matrix) {
    let (b, k, o) = (x.rows(), x.cols(), w.rows());
    assert_eq!(w.cols(), k, "weight fan-in mismatch");
    assert_eq!(bias.len(), o, "bias length mismatch");
    assert_eq!((out.rows(), out.cols()), (b, o), "output shape mismatch");
    if b == 0 || k == 0 || o == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            b,
            k,
            o,
            1.0,
            x.data().as_ptr(),
            k as isize,
            1,
            w.data().as_ptr(),
            1,
            k as isize,
            0.0,
            out.data_mut().as_mut_ptr(),
            o as isize,
            1,
        );
    }
    for row in out.data_mut().chunks_exact_mut(o) {
        for (v, bv) in row.iter_mut().zip(bias) {
            *v += bv;
        }
    }
}

/// `dx += g * w` (`g`: BxO, `w`: OxK).
pub fn add_grad_input(g: &Matrix, w: &Matrix, dx: &mut Matrix) {
    let (b, o, k) = (g.rows(), g.cols(), w.cols());
    assert_eq!(w.rows(), o, "weight fan-out mismatch");
    assert_eq!((dx.rows(), dx.cols()), (b, k), "grad-input shape mismatch");
    if b == 0 || k == 0 || o == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            b,
            o,
            k,
            1.0,
            g.data().as_ptr(),
            o as isize,
            1,
            w.data().as_ptr(),
            k as isize,
            1,
            1.0,
            dx.data_mut().as_mut_ptr(),
            k as isize,
            1,
        );
    }
}

/// `dw += g^T * x` and `db += column sums of g` (`g`: BxO, `x`: BxK).
pub fn add_grad_weight(g: &Matrix, x: &Matrix, dw: &mut Matrix, db: &mut [f64]) {
    let (b, o, k) = (g.rows(), g.cols(), x.cols());
    assert_eq!(x.rows(), b, "batch size mismatch");
    assert_eq!((dw.rows(), dw.cols()), (o, k), "grad-weight shape mismatch");
    assert_eq!(db.len(), o, "grad-bias length mismatch");
    if b == 0 || k == 0 || o == 0 {
        return;
    }
    unsafe {
        matrixmultiply::dgemm(
            o,
            b,
            k,
            1.0,
            g.data().as_ptr(),
            1,
            o as isize,
            x.data().as_ptr(),
            k as isize,
            1,
            1.0,
            dw.data_mut().as_mut_ptr(),
            k as isize,
            1,
        );
    }
    for grow in g.data().chunks_exact(o) {
        for (dbv, gv) in db.iter_mut().zip(grow) {
            *dbv += gv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive() {
        let a: Vec<f64> = (0..13).map(|i| i as f64 * 0.5).collect();
        let b: Vec<f64> = (0..13).map(|i| (13 - i) as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn axpy_accumulates() {
        let x = [1.0, 2.0, 3.0];
        let mut out = [10.0, 10.0, 10.0];
        axpy(2.0, &x, &mut out);
        assert_eq!(out, [12.0, 14.0, 16.0]);
    }

    #[test]
    fn row_access() {
        let m = Matrix::from_fn(3, 2, |r, c| (r * 2 + c) as f64);
        assert_eq!(m.row(1), &[2.0, 3.0]);
        assert_eq!(m.row_iter().count(), 3);
    }

    fn naive_xwt(x: &Matrix, w: &Matrix, bias: &[f64]) -> Matrix {
        Matrix::from_fn(x.rows(), w.rows(), |b, o| {
            x.row(b).iter().zip(w.row(o)).map(|(a, c)| a * c).sum::<f64>() + bias[o]
        })
    }

    #[test]
    fn tiled_matmul_matches_naive_on_odd_shapes() {
        for (b, o, k) in [(1, 1, 1), (3, 5, 7), (9, 6, 13), (8, 8, 16), (5, 4, 11)] {
            let x = Matrix::from_fn(b, k, |r, c| ((r * k + c) as f64 * 0.13).sin());
            let w = Matrix::from_fn(o, k, |r, c| ((r * k + c) as f64 * 0.29).cos());
            let bias: Vec<f64> = (0..o).map(|i| i as f64 * 0.5).collect();
            let mut out = Matrix::zeros(b, o);
            matmul_xwt(&x, &w, &bias, &mut out);
            let want = naive_xwt(&x, &w, &bias);
            for (a, e) in out.data().iter().zip(want.data()) {
                assert!((a - e).abs() < 1e-10, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn tiled_gradients_match_naive() {
        for (b, o, k) in [(1, 2, 3), (6, 5, 9), (7, 4, 12), (8, 8, 8)] {
            let g = Matrix::from_fn(b, o, |r, c| ((r * o + c) as f64 * 0.37).sin());
            let x = Matrix::from_fn(b, k, |r, c| ((r * k + c) as f64 * 0.17).cos());
            let w = Matrix::from_fn(o, k, |r, c| ((r * k + c) as f64 * 0.11).sin());

            let mut dx = Matrix::zeros(b, k);
            add_grad_input(&g, &w, &mut dx);
            for bi in 0..b {
                for t in 0..k {
                    let want: f64 = (0..o).map(|oi| g.row(bi)[oi] * w.row(oi)[t]).sum();
                    assert!((dx.row(bi)[t] - want).abs() < 1e-10);
                }
            }

            let mut dw = Matrix::zeros(o, k);
            let mut db = vec![0.0; o];
            add_grad_weight(&g, &x, &mut dw, &mut db);
            for oi in 0..o {
                let want_b: f64 = (0..b).map(|bi| g.row(bi)[oi]).sum();
                assert!((db[oi] - want_b).abs() < 1e-10);
                for t in 0..k {
                    let want: f64 = (0..b).map(|bi| g.row(bi)[oi] * x.row(bi)[t]).sum();
                    assert!((dw.row(oi)[t] - want).abs() < 1e-10);
                }
            }
        }
    }
}
