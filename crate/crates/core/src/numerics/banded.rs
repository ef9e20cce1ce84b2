//! Banded LU factorization with partial pivoting, used for one-dimensional
//! box problems whose operators are only available matrix-free.

use crate::error::{Error, Result};
use crate::numerics::krylov::LinOp;

#[derive(Debug, Clone)]
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    ab: Vec<f64>,
    piv: Vec<usize>,
}

impl BandedLu {
    fn at(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    /// Factor the `n x n` matrix with entries `entry(i, j)` for
    /// `-kl <= j - i <= ku`.
    pub fn factor(n: usize, kl: usize, ku: usize, entry: impl Fn(usize, usize) -> f64) -> Result<Self> {
        let width = 2 * kl + ku + 1;
        let mut lu = BandedLu {
            n,
            kl,
            ku,
            width,
            ab: vec![0.0; n * width],
            piv: vec![0; n],
        };
        for i in 0..n {
            let lo = i.saturating_sub(kl);
            let hi = (i + ku + 1).min(n);
            for j in lo..hi {
                let k = lu.at(i, j);
                lu.ab[k] = entry(i, j);
            }
        }
        let band = kl + ku;
        for i in 0..n {
            let last = (i + kl + 1).min(n);
            let mut p = i;
            let mut best = lu.ab[lu.at(i, i)].abs();
            for r in i + 1..last {
                let v = lu.ab[lu.at(r, i)].abs();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::Singular(format!("banded matrix has no pivot in column {i}")));
            }
            lu.piv[i] = p;
            let cend = (i + band + 1).min(n);
            if p != i {
                for c in i..cend {
                    let (a, b) = (lu.at(i, c), lu.at(p, c));
                    lu.ab.swap(a, b);
                }
            }
            let pivot = lu.ab[lu.at(i, i)];
            for r in i + 1..last {
                let k = lu.at(r, i);
                let l = lu.ab[k] / pivot;
                lu.ab[k] = l;
                if l != 0.0 {
                    for c in i + 1..cend {
                        let (dst, src) = (lu.at(r, c), lu.at(i, c));
                        lu.ab[dst] -= l * lu.ab[src];
                    }
                }
            }
        }
        Ok(lu)
    }

    /// Recover the band of a matrix-free operator by probing with
    /// `2 w + 1` combined unit vectors, then factor it.
    pub fn from_operator(n: usize, half_width: usize, op: &LinOp) -> Result<Self> {
        let stride = 2 * half_width + 1;
        let mut band = vec![0.0; n * stride];
        for color in 0..stride.min(n) {
            let mut x = vec![0.0; n];
            for j in (color..n).step_by(stride) {
                x[j] = 1.0;
            }
            let y = op(&x);
            for i in 0..n {
                let lo = i.saturating_sub(half_width);
                let hi = (i + half_width).min(n - 1);
                for j in lo..=hi {
                    if j % stride == color {
                        band[i * stride + (j + half_width - i)] = y[i];
                    }
                }
            }
        }
        Self::factor(n, half_width, half_width, |i, j| band[i * stride + (j + half_width - i)])
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        assert_eq!(b.len(), self.n);
        let n = self.n;
        let mut x = b.to_vec();
        for i in 0..n {
            x.swap(i, self.piv[i]);
            let xi = x[i];
            for r in i + 1..(i + self.kl + 1).min(n) {
                x[r] -= self.ab[self.at(r, i)] * xi;
            }
        }
        let band = self.kl + self.ku;
        for i in (0..n).rev() {
            let mut s = x[i];
            for c in i + 1..(i + band + 1).min(n) {
                s -= self.ab[self.at(i, c)] * x[c];
            }
            x[i] = s / self.ab[self.at(i, i)];
        }
        x
    }
}
