//! Safe strided GEMM front-end over `matrixmultiply`, split across rayon
//! workers by fixed row blocks so results never depend on the thread count.

use rayon::prelude::*;

use crate::scalar::Scalar;

/// Row blocks handed to one worker.
const ROW_BLOCK: usize = 16;
/// Below this many multiply-adds the call stays on the current thread.
const PAR_MIN_WORK: usize = 1 << 18;

/// Read-only strided matrix view.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a, T> Mat<'a, T> {
    pub fn row_major(data: &'a [T], rows: usize, cols: usize) -> Self {
        let m = Self {
            data,
            rows,
            cols,
            rs: cols,
            cs: 1,
        };
        m.check();
        m
    }

    /// Transposed view of the same storage.
    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "matrix view out of bounds");
        }
    }
}

/// `c = alpha * a * b + beta * c`, with `c` dense row-major `a.rows x b.cols`.
pub(crate) fn gemm<T: Scalar>(alpha: T, a: Mat<'_, T>, b: Mat<'_, T>, beta: T, c: &mut [T]) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    assert_eq!(c.len(), m * n, "output buffer size");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let run = |row0: usize, block: &mut [T]| {
        let rows = block.len() / n;
        // SAFETY: views were bounds-checked on construction and `block` is a
        // disjoint dense slab of `rows` rows starting at `row0`.
        unsafe {
            T::gemm_raw(
                rows,
                k,
                n,
                alpha,
                a.data.as_ptr().add(row0 * a.rs),
                a.rs as isize,
                a.cs as isize,
                b.data.as_ptr(),
                b.rs as isize,
                b.cs as isize,
                beta,
                block.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    };
    if m * k * n < PAR_MIN_WORK || m <= ROW_BLOCK {
        run(0, c);
    } else {
        c.par_chunks_mut(ROW_BLOCK * n)
            .enumerate()
            .for_each(|(i, block)| run(i * ROW_BLOCK, block));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matches_naive_product_including_parallel_split() {
        for &(m, k, n) in &[(3, 4, 5), (70, 90, 80)] {
            let a: Vec<f64> = (0..m * k).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
            let b: Vec<f64> = (0..k * n).map(|i| ((i * 5) % 11) as f64 - 5.0).collect();
            let mut c = vec![0.0; m * n];
            gemm(1.0, Mat::row_major(&a, m, k), Mat::row_major(&b, k, n), 0.0, &mut c);
            assert_eq!(c, naive(&a, &b, m, k, n));
        }
    }

    #[test]
    fn transposed_views() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let mut c = vec![0.0; 4];
        // a * a^T
        gemm(1.0, Mat::row_major(&a, 2, 3), Mat::row_major(&a, 2, 3).t(), 0.0, &mut c);
        assert_eq!(c, vec![14.0, 32.0, 32.0, 77.0]);
    }
}
