//! Finite-difference stencils on uniform node sets: Fornberg weights,
//! one-axis operators applied to row-major arrays, and the node/face operator
//! family used by the box and periodic discretizations.

use num_complex::Complex64;

/// Weights of the `m`-th derivative at `z` from values at the points `x`
/// (Fornberg's recursion).
pub fn fornberg(z: f64, x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    assert!(n > m, "need more than {m} points for derivative order {m}");
    let mut c = vec![vec![0.0; m + 1]; n];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[i][k] = c1 * (k as f64 * c[i - 1][k - 1] - c5 * c[i - 1][k]) / c2;
                }
                c[i][0] = -c1 * c5 * c[i - 1][0] / c2;
            }
            for k in (1..=mn).rev() {
                c[j][k] = (c4 * c[j][k] - k as f64 * c[j][k - 1]) / c3;
            }
            c[j][0] = c4 * c[j][0] / c3;
        }
        c1 = c2;
    }
    c.into_iter().map(|row| row[m]).collect()
}

#[derive(Debug, Clone)]
struct Row {
    start: isize,
    weights: Vec<f64>,
}

/// A linear operator acting along one axis: output position `k` is
/// `Σ_t weights[t] · input[start + t]`, with indices wrapped when periodic.
#[derive(Debug, Clone)]
pub struct AxisOp {
    len_in: usize,
    periodic: bool,
    rows: Vec<Row>,
}

impl AxisOp {
    pub fn len_in(&self) -> usize {
        self.len_in
    }

    pub fn len_out(&self) -> usize {
        self.rows.len()
    }

    /// Apply along `axis` of a row-major array of the given shape. The output
    /// has the same shape except along `axis`, where it has `len_out` entries.
    pub fn apply(&self, input: &[f64], shape: &[usize], axis: usize) -> Vec<f64> {
        assert_eq!(shape[axis], self.len_in, "axis length mismatch");
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let n_in = self.len_in;
        let n_out = self.rows.len();
        let mut out = vec![0.0; outer * n_out * inner];
        for o in 0..outer {
            let base_in = o * n_in * inner;
            let base_out = o * n_out * inner;
            for (k, row) in self.rows.iter().enumerate() {
                let dst = &mut out[base_out + k * inner..base_out + (k + 1) * inner];
                for (t, &w) in row.weights.iter().enumerate() {
                    let mut j = row.start + t as isize;
                    if self.periodic {
                        j = j.rem_euclid(n_in as isize);
                    }
                    let src = &input[base_in + j as usize * inner..base_in + (j as usize + 1) * inner];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            }
        }
        out
    }

    /// Fourier symbol of a periodic node-to-node operator at wavenumber
    /// `kappa`: the factor by which it multiplies `exp(2πi kappa j / n)`.
    pub fn symbol(&self, kappa: i64) -> Complex64 {
        assert!(self.periodic && self.len_in == self.rows.len());
        let n = self.len_in as f64;
        let row = &self.rows[0];
        row.weights
            .iter()
            .enumerate()
            .map(|(t, &w)| {
                let j = (row.start + t as isize) as f64;
                Complex64::from_polar(w, 2.0 * std::f64::consts::PI * kappa as f64 * j / n)
            })
            .sum()
    }

    /// Dense matrix of the operator, row-major `len_out x len_in`.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.rows.len() * self.len_in];
        for (k, row) in self.rows.iter().enumerate() {
            for (t, &w) in row.weights.iter().enumerate() {
                let mut j = row.start + t as isize;
                if self.periodic {
                    j = j.rem_euclid(self.len_in as isize);
                }
                m[k * self.len_in + j as usize] += w;
            }
        }
        m
    }
}

/// Node and face operators along one axis.
///
/// Nodes sit at `x_k = k h`. Faces sit at `x_{k+1/2}`. On a Dirichlet axis
/// there are `n + 1` nodes and `n` faces, and centered stencils shrink near
/// the ends so they never reach outside the box. On a periodic axis there are
/// `n` nodes and `n` faces and indices wrap.
#[derive(Debug, Clone)]
pub struct AxisStencils {
    pub order: usize,
    pub periodic: bool,
    /// Node first derivative.
    pub d1: AxisOp,
    /// Node second derivative.
    pub d2: AxisOp,
    /// Node values to face first derivative.
    pub face_grad: AxisOp,
    /// Node values to face values.
    pub face_interp: AxisOp,
    /// Face values to node first derivative.
    pub face_div: AxisOp,
}

impl AxisStencils {
    /// Dirichlet axis with `n` intervals of width `h`; `order` is even.
    pub fn dirichlet(n: usize, h: f64, order: usize) -> Self {
        assert!(order >= 2 && order.is_multiple_of(2), "stencil order must be even");
        let half = order / 2;
        let nodes = n + 1;
        let node_op = |m: usize| {
            let rows = (0..nodes)
                .map(|k| {
                    if k == 0 || k == n {
                        // one-sided, formal order `order`
                        let width = order + m;
                        let offsets: Vec<isize> = if k == 0 {
                            (0..width as isize).collect()
                        } else {
                            (0..width as isize).map(|t| t - width as isize + 1).collect()
                        };
                        row_from(k as isize, &offsets, 0.0, m, h)
                    } else {
                        let q = half.min(k).min(n - k) as isize;
                        let offsets: Vec<isize> = (-q..=q).collect();
                        row_from(k as isize, &offsets, 0.0, m, h)
                    }
                })
                .collect();
            AxisOp {
                len_in: nodes,
                periodic: false,
                rows,
            }
        };
        let face_op = |m: usize| {
            let rows = (0..n)
                .map(|f| {
                    let q = half.min(f + 1).min(n - f) as isize;
                    let offsets: Vec<isize> = (1 - q..=q).collect();
                    row_from(f as isize, &offsets, 0.5, m, h)
                })
                .collect();
            AxisOp {
                len_in: nodes,
                periodic: false,
                rows,
            }
        };
        let face_div = AxisOp {
            len_in: n,
            periodic: false,
            rows: (0..nodes)
                .map(|k| {
                    if k == 0 || k == n {
                        Row {
                            start: 0,
                            weights: Vec::new(),
                        }
                    } else {
                        let q = half.min(k).min(n - k) as isize;
                        staggered_row(k as isize, q, h)
                    }
                })
                .collect(),
        };
        AxisStencils {
            order,
            periodic: false,
            d1: node_op(1),
            d2: node_op(2),
            face_grad: face_op(1),
            face_interp: face_op(0),
            face_div,
        }
    }

    /// Periodic axis with `n` nodes of spacing `h`.
    pub fn periodic(n: usize, h: f64, order: usize) -> Self {
        assert!(order >= 2 && order.is_multiple_of(2), "stencil order must be even");
        let q = (order / 2) as isize;
        assert!(n as isize > 2 * q, "periodic axis too short for the stencil");
        let node_op = |m: usize| AxisOp {
            len_in: n,
            periodic: true,
            rows: (0..n)
                .map(|k| {
                    let offsets: Vec<isize> = (-q..=q).collect();
                    row_from(k as isize, &offsets, 0.0, m, h)
                })
                .collect(),
        };
        let face_op = |m: usize| AxisOp {
            len_in: n,
            periodic: true,
            rows: (0..n)
                .map(|f| {
                    let offsets: Vec<isize> = (1 - q..=q).collect();
                    row_from(f as isize, &offsets, 0.5, m, h)
                })
                .collect(),
        };
        let face_div = AxisOp {
            len_in: n,
            periodic: true,
            rows: (0..n).map(|k| staggered_row(k as isize, q, h)).collect(),
        };
        AxisStencils {
            order,
            periodic: true,
            d1: node_op(1),
            d2: node_op(2),
            face_grad: face_op(1),
            face_interp: face_op(0),
            face_div,
        }
    }
}

/// Row evaluating derivative `m` at position `center + shift` from nodes
/// `center + offsets`.
fn row_from(center: isize, offsets: &[isize], shift: f64, m: usize, h: f64) -> Row {
    let x: Vec<f64> = offsets.iter().map(|&o| o as f64 - shift).collect();
    let scale = h.powi(m as i32);
    let weights = fornberg(0.0, &x, m).into_iter().map(|w| w / scale).collect();
    Row {
        start: center + offsets[0],
        weights,
    }
}

/// First derivative at node `k` from faces `k-q .. k+q-1`.
fn staggered_row(k: isize, q: isize, h: f64) -> Row {
    let x: Vec<f64> = (-q..q).map(|t| t as f64 + 0.5).collect();
    let weights = fornberg(0.0, &x, 1).into_iter().map(|w| w / h).collect();
    Row {
        start: k - q,
        weights,
    }
}
