//! Banded LU factorization without pivoting, for the M-matrices produced by monotone stencils.

use crate::error::{Error, Result};

/// Square matrix with entries only in `|i - j| <= bw`, stored row by row.
#[derive(Debug, Clone)]
pub struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandMatrix { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i.abs_diff(j) > self.bw {
            0.0
        } else {
            self.data[self.idx(i, j)]
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i.abs_diff(j) <= self.bw);
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn clear(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.bw);
                let hi = (i + self.bw).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    /// In-place `LU` factorization (unit lower factor), no pivoting.
    pub fn factor(mut self) -> Result<BandLu> {
        let n = self.n;
        let bw = self.bw;
        let w = 2 * bw + 1;
        for k in 0..n {
            let pivot = self.data[k * w + bw];
            if !(pivot.abs() > 0.0) || !pivot.is_finite() {
                return Err(Error::InvalidInput(format!("zero pivot at row {k} of banded system")));
            }
            let last = (k + bw).min(n - 1);
            let (head, tail) = self.data.split_at_mut((k + 1) * w);
            let row_k = &head[k * w..];
            // entries (k, k+1..=last) sit at row_k[bw+1 ..= bw+last-k]
            let urow = &row_k[bw + 1..=bw + last - k];
            for i in (k + 1)..=last {
                let base = (i - k - 1) * w;
                let row_i = &mut tail[base..base + w];
                // (i, k) lives at offset k + bw - i
                let col = k + bw - i;
                let l = row_i[col] / pivot;
                row_i[col] = l;
                if l != 0.0 {
                    let dst = &mut row_i[col + 1..col + 1 + urow.len()];
                    for (d, u) in dst.iter_mut().zip(urow) {
                        *d -= l * u;
                    }
                }
            }
        }
        Ok(BandLu { m: self })
    }
}

/// Factors produced by [`BandMatrix::factor`].
#[derive(Debug, Clone)]
pub struct BandLu {
    m: BandMatrix,
}

impl BandLu {
    pub fn n(&self) -> usize {
        self.m.n
    }

    /// Solves `A x = b` in place.
    pub fn solve_in_place(&self, b: &mut [f64]) {
        let n = self.m.n;
        let bw = self.m.bw;
        let w = 2 * bw + 1;
        let d = &self.m.data;
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let row = &d[i * w..];
            let mut s = b[i];
            for j in lo..i {
                s -= row[j + bw - i] * b[j];
            }
            b[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let row = &d[i * w..];
            let mut s = b[i];
            for j in (i + 1)..=hi {
                s -= row[j + bw - i] * b[j];
            }
            b[i] = s / row[bw];
        }
    }
}
