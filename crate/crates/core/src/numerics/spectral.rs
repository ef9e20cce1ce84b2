//! Fourier differentiation and symbol solves on the periodic unit cell.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::numerics::fft::{for_each_index, wavenumber, FftNd};

/// Spectral differentiation on `[0, 1)^d` with `n` points per axis.
///
/// First derivatives zero the Nyquist mode (so they are real skew operators);
/// second derivatives keep it.
pub struct SpectralOps {
    d: usize,
    n: usize,
    fft: FftNd,
}

impl SpectralOps {
    pub fn new(d: usize, n: usize) -> Self {
        SpectralOps {
            d,
            n,
            fft: FftNd::new(&vec![n; d]),
        }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.fft.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fft.is_empty()
    }

    pub fn forward(&self, u: &[f64]) -> Vec<Complex64> {
        self.fft.forward_real(u)
    }

    pub fn inverse(&self, c: Vec<Complex64>) -> Vec<f64> {
        self.fft.inverse_real(c)
    }

    /// Symbol of `d/dx_axis` at integer wavenumber `k`.
    pub fn d1_symbol(&self, k: i64) -> Complex64 {
        if 2 * k.unsigned_abs() as usize == self.n {
            Complex64::new(0.0, 0.0)
        } else {
            Complex64::new(0.0, 2.0 * PI * k as f64)
        }
    }

    /// Symbol of `d²/dx_axis²` at integer wavenumber `k`.
    pub fn d2_symbol(&self, k: i64) -> f64 {
        -(2.0 * PI * k as f64).powi(2)
    }

    /// Multiply the transform by `symbol(wavenumbers)` and transform back.
    pub fn apply_symbol(&self, u: &[f64], symbol: impl Fn(&[i64; 3]) -> Complex64) -> Vec<f64> {
        let mut c = self.forward(u);
        self.scale_modes(&mut c, symbol);
        self.inverse(c)
    }

    pub fn scale_modes(&self, c: &mut [Complex64], symbol: impl Fn(&[i64; 3]) -> Complex64) {
        let shape = vec![self.n; self.d];
        let n = self.n;
        for_each_index(&shape, |flat, idx| {
            let mut k = [0i64; 3];
            for (a, &i) in idx.iter().enumerate() {
                k[a] = wavenumber(i, n);
            }
            c[flat] *= symbol(&k);
        });
    }

    pub fn d1(&self, u: &[f64], axis: usize) -> Vec<f64> {
        self.apply_symbol(u, |k| self.d1_symbol(k[axis]))
    }

    pub fn d2(&self, u: &[f64], axis: usize) -> Vec<f64> {
        self.apply_symbol(u, |k| Complex64::new(self.d2_symbol(k[axis]), 0.0))
    }

    /// Mixed derivative `d_i d_j` (equals `d2` when `i == j` only away from
    /// the Nyquist mode).
    pub fn d1d1(&self, u: &[f64], i: usize, j: usize) -> Vec<f64> {
        self.apply_symbol(u, |k| self.d1_symbol(k[i]) * self.d1_symbol(k[j]))
    }

    /// All first derivatives from one forward transform.
    pub fn gradient(&self, u: &[f64]) -> Vec<Vec<f64>> {
        let c = self.forward(u);
        (0..self.d)
            .map(|axis| {
                let mut ca = c.clone();
                self.scale_modes(&mut ca, |k| self.d1_symbol(k[axis]));
                self.inverse(ca)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivative_of_resolved_mode() {
        let n = 32;
        let s = SpectralOps::new(2, n);
        let mut u = vec![0.0; n * n];
        for_each_index(&[n, n], |flat, idx| {
            let (x, y) = (idx[0] as f64 / n as f64, idx[1] as f64 / n as f64);
            u[flat] = (2.0 * PI * x).sin() * (4.0 * PI * y).cos();
        });
        let dy = s.d1(&u, 1);
        let dxy = s.d1d1(&u, 0, 1);
        for_each_index(&[n, n], |flat, idx| {
            let (x, y) = (idx[0] as f64 / n as f64, idx[1] as f64 / n as f64);
            let e = -4.0 * PI * (2.0 * PI * x).sin() * (4.0 * PI * y).sin();
            assert!((dy[flat] - e).abs() < 1e-11);
            let e2 = -8.0 * PI * PI * (2.0 * PI * x).cos() * (4.0 * PI * y).sin();
            assert!((dxy[flat] - e2).abs() < 1e-10);
        });
    }
}
