//! Dirichlet Poisson solves on a box via the type-I sine transform.
//!
//! The unknowns are the interior nodes of a uniform grid with `n` intervals
//! per axis (`n - 1` unknowns per axis). The solved operator is the standard
//! second-order (2d+1)-point negative Laplacian with homogeneous Dirichlet data.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct DirichletPoisson {
    d: usize,
    n: usize,
    h: f64,
    fft: Arc<dyn Fft<f64>>,
    eig: Vec<f64>,
}

impl DirichletPoisson {
    pub fn new(d: usize, n: usize, h: f64) -> Self {
        assert!(n >= 2);
        let fft = FftPlanner::new().plan_fft_forward(2 * n);
        let eig = (1..n)
            .map(|k| {
                let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
                4.0 * s * s / (h * h)
            })
            .collect();
        DirichletPoisson { d, n, h, fft, eig }
    }

    pub fn unknowns(&self) -> usize {
        (self.n - 1).pow(self.d as u32)
    }

    pub fn spacing(&self) -> f64 {
        self.h
    }

    /// Unnormalized DST-I along every axis, in place.
    fn dst_all(&self, data: &mut [f64]) {
        let m = self.n - 1;
        let shape = vec![m; self.d];
        let mut line = vec![Complex64::new(0.0, 0.0); 2 * self.n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for axis in 0..self.d {
            let inner: usize = shape[axis + 1..].iter().product();
            let outer: usize = shape[..axis].iter().product();
            for o in 0..outer {
                let base = o * m * inner;
                for i in 0..inner {
                    line.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                    for k in 0..m {
                        let v = data[base + k * inner + i];
                        line[k + 1] = Complex64::new(v, 0.0);
                        line[2 * self.n - 1 - k] = Complex64::new(-v, 0.0);
                    }
                    self.fft.process_with_scratch(&mut line, &mut scratch);
                    for k in 0..m {
                        data[base + k * inner + i] = -line[k + 1].im / 2.0;
                    }
                }
            }
        }
    }

    /// Solve `sum_i c_i (-D2_i) u = f` on the interior, where `c` holds the
    /// per-axis coefficients (all ones for the plain Laplacian).
    pub fn solve_scaled(&self, f: &[f64], c: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.unknowns());
        assert_eq!(c.len(), self.d);
        let m = self.n - 1;
        let mut u = f.to_vec();
        self.dst_all(&mut u);
        let norm = (2.0 / self.n as f64).powi(self.d as i32);
        let mut idx = vec![0usize; self.d];
        for v in u.iter_mut() {
            let lam: f64 = idx.iter().zip(c).map(|(&k, &ci)| ci * self.eig[k]).sum();
            *v *= norm / lam;
            for axis in (0..self.d).rev() {
                idx[axis] += 1;
                if idx[axis] < m {
                    break;
                }
                idx[axis] = 0;
            }
        }
        self.dst_all(&mut u);
        u
    }

    /// Solve `-Δ_h u = f` on the interior.
    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        self.solve_scaled(f, &vec![1.0; self.d])
    }
}

/// Boundary condition of one axis of a [`MixedPoisson`] problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AxisBc {
    /// Zero values on both end nodes (sine transform).
    Dirichlet,
    /// Zero normal derivative by even reflection about the end nodes
    /// (type-I cosine transform); the end nodes are unknowns.
    Neumann,
}

/// Second-order `-Δ_h u = f` on full `(n + 1)^d` node arrays with a
/// Dirichlet or Neumann condition per axis. At least one axis must be
/// Dirichlet so that the operator is invertible. Dirichlet boundary nodes of
/// the result are zero and those of `f` are ignored.
pub struct MixedPoisson {
    d: usize,
    n: usize,
    h: f64,
    bc: Vec<AxisBc>,
    fft: Arc<dyn Fft<f64>>,
}

impl MixedPoisson {
    pub fn new(n: usize, h: f64, bc: &[AxisBc]) -> Self {
        assert!(n >= 2 && !bc.is_empty());
        assert!(bc.contains(&AxisBc::Dirichlet), "an all-Neumann problem is singular");
        let fft = FftPlanner::new().plan_fft_forward(2 * n);
        MixedPoisson {
            d: bc.len(),
            n,
            h,
            bc: bc.to_vec(),
            fft,
        }
    }

    /// Unnormalized transform along every axis: DST-I on the interior of
    /// Dirichlet axes, DCT-I on the full line of Neumann axes.
    fn transform_all(&self, data: &mut [f64]) {
        let n = self.n;
        let len = n + 1;
        let mut line = vec![Complex64::new(0.0, 0.0); 2 * n];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for axis in 0..self.d {
            let inner = len.pow((self.d - 1 - axis) as u32);
            let outer = len.pow(axis as u32);
            for o in 0..outer {
                let base = o * len * inner;
                for i in 0..inner {
                    let at = |k: usize| base + k * inner + i;
                    line.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                    match self.bc[axis] {
                        AxisBc::Dirichlet => {
                            for k in 1..n {
                                let v = data[at(k)];
                                line[k] = Complex64::new(v, 0.0);
                                line[2 * n - k] = Complex64::new(-v, 0.0);
                            }
                            self.fft.process_with_scratch(&mut line, &mut scratch);
                            data[at(0)] = 0.0;
                            data[at(n)] = 0.0;
                            for k in 1..n {
                                data[at(k)] = -line[k].im / 2.0;
                            }
                        }
                        AxisBc::Neumann => {
                            for k in 0..=n {
                                let v = data[at(k)];
                                line[k] = Complex64::new(v, 0.0);
                                if k > 0 && k < n {
                                    line[2 * n - k] = Complex64::new(v, 0.0);
                                }
                            }
                            self.fft.process_with_scratch(&mut line, &mut scratch);
                            for k in 0..=n {
                                data[at(k)] = line[k].re;
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn solve(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n;
        let len = n + 1;
        assert_eq!(f.len(), len.pow(self.d as u32));
        let mut u = f.to_vec();
        self.transform_all(&mut u);
        let eig = |k: usize| {
            let s = (std::f64::consts::PI * k as f64 / (2.0 * n as f64)).sin();
            4.0 * s * s / (self.h * self.h)
        };
        let mut norm = 1.0;
        for bc in &self.bc {
            norm *= match bc {
                AxisBc::Dirichlet => 2.0 / n as f64,
                AxisBc::Neumann => 1.0 / (2.0 * n as f64),
            };
        }
        let mut idx = vec![0usize; self.d];
        for v in u.iter_mut() {
            let dirichlet_edge = idx
                .iter()
                .zip(&self.bc)
                .any(|(&k, bc)| *bc == AxisBc::Dirichlet && (k == 0 || k == n));
            if dirichlet_edge {
                *v = 0.0;
            } else {
                let lam: f64 = idx.iter().map(|&k| eig(k)).sum();
                *v *= norm / lam;
            }
            for axis in (0..self.d).rev() {
                idx[axis] += 1;
                if idx[axis] < len {
                    break;
                }
                idx[axis] = 0;
            }
        }
        self.transform_all(&mut u);
        u
    }
}
