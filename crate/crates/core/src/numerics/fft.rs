//! Multi-dimensional FFTs on row-major arrays, built on `rustfft`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Forward and inverse complex FFT plans for a fixed array shape.
pub struct FftNd {
    shape: Vec<usize>,
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
}

impl FftNd {
    pub fn new(shape: &[usize]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = shape.iter().map(|&n| planner.plan_fft_forward(n)).collect();
        let inverse = shape.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
        FftNd {
            shape: shape.to_vec(),
            forward,
            inverse,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Unnormalized forward transform in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        for axis in 0..self.shape.len() {
            transform_axis(data, &self.shape, axis, self.forward[axis].as_ref());
        }
    }

    /// Inverse transform in place, normalized so that `inverse(forward(x)) = x`.
    pub fn inverse(&self, data: &mut [Complex64]) {
        for axis in 0..self.shape.len() {
            transform_axis(data, &self.shape, axis, self.inverse[axis].as_ref());
        }
        let scale = 1.0 / self.len() as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut c: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.forward(&mut c);
        c
    }

    /// Inverse transform keeping the real part.
    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.inverse(&mut data);
        data.into_iter().map(|c| c.re).collect()
    }
}

fn transform_axis(data: &mut [Complex64], shape: &[usize], axis: usize, fft: &dyn Fft<f64>) {
    let n = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut line = vec![Complex64::new(0.0, 0.0); n];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for o in 0..outer {
        let base = o * n * inner;
        for i in 0..inner {
            for k in 0..n {
                line[k] = data[base + k * inner + i];
            }
            fft.process_with_scratch(&mut line, &mut scratch);
            for k in 0..n {
                data[base + k * inner + i] = line[k];
            }
        }
    }
}

/// Signed integer wavenumber of FFT bin `i` for length `n`; the Nyquist bin is
/// reported as `+n/2`.
pub fn wavenumber(i: usize, n: usize) -> i64 {
    if i <= n / 2 {
        i as i64
    } else {
        i as i64 - n as i64
    }
}

/// Visit every multi-index of `shape` in row-major order together with its
/// flat position.
pub fn for_each_index(shape: &[usize], mut f: impl FnMut(usize, &[usize])) {
    let total: usize = shape.iter().product();
    let mut idx = vec![0usize; shape.len()];
    for flat in 0..total {
        f(flat, &idx);
        for axis in (0..shape.len()).rev() {
            idx[axis] += 1;
            if idx[axis] < shape[axis] {
                break;
            }
            idx[axis] = 0;
        }
    }
}
