//! Discrete operators shared by every solve: the non-divergence operator `L`,
//! its adjoint `L*` in flux form, the divergence-form operator, the bordered
//! torus solves, the Dirichlet box solves, and periodic tiling.
//!
//! On a torus the scheme is either Fourier collocation or periodic finite
//! differences of even order. On a box it is always finite differences, with
//! Dirichlet data imposed by solving for interior nodes only.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coefficients::Sampled;
use crate::error::{Error, Result};
use crate::fields::{BoxGrid, Field, Grid, Symmetry, TorusGrid};
use crate::numerics::banded::BandedLu;
use crate::numerics::dst::DirichletPoisson;
use crate::numerics::fft::{for_each_index, wavenumber, FftNd};
use crate::numerics::krylov::{gmres, solve_nonsymmetric, KrylovOptions, LinOp};
use crate::numerics::spectral::SpectralOps;
use crate::numerics::stencil::AxisStencils;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Scheme {
    Spectral,
    FiniteDifference { order: usize },
}

impl Scheme {
    pub fn fd2() -> Self {
        Scheme::FiniteDifference { order: 2 }
    }

    pub fn order(&self) -> Option<usize> {
        match self {
            Scheme::Spectral => None,
            Scheme::FiniteDifference { order } => Some(*order),
        }
    }
}

enum Ops {
    Spectral(SpectralOps),
    Stencil(AxisStencils),
}

/// A grid together with the derivative operators of a scheme.
pub struct Discretization {
    grid: Grid,
    scheme: Scheme,
    shape: Vec<usize>,
    ops: Ops,
}

impl Discretization {
    pub fn new(grid: impl Into<Grid>, scheme: Scheme) -> Result<Self> {
        let grid = grid.into();
        let ops = match (&grid, scheme) {
            (Grid::Torus(t), Scheme::Spectral) => Ops::Spectral(SpectralOps::new(t.d(), t.n())),
            (Grid::Box(_), Scheme::Spectral) => {
                return Err(Error::InvalidParameter(
                    "Fourier collocation needs a periodic grid; boxes use finite differences".into(),
                ))
            }
            (_, Scheme::FiniteDifference { order }) => {
                if order < 2 || order % 2 != 0 {
                    return Err(Error::InvalidParameter(format!(
                        "stencil order must be even and at least 2, got {order}"
                    )));
                }
                match &grid {
                    Grid::Torus(t) => {
                        if t.n() <= order {
                            return Err(Error::InvalidGrid(format!(
                                "{} points per axis are too few for order-{order} stencils",
                                t.n()
                            )));
                        }
                        Ops::Stencil(AxisStencils::periodic(t.n(), t.h(), order))
                    }
                    Grid::Box(b) => Ops::Stencil(AxisStencils::dirichlet(b.n(), b.h(), order)),
                }
            }
        };
        Ok(Discretization {
            shape: grid.shape(),
            grid,
            scheme,
            ops,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn d(&self) -> usize {
        self.grid.d()
    }

    pub fn num_nodes(&self) -> usize {
        self.grid.num_nodes()
    }

    pub fn d1(&self, u: &[f64], axis: usize) -> Vec<f64> {
        match &self.ops {
            Ops::Spectral(s) => s.d1(u, axis),
            Ops::Stencil(st) => st.d1.apply(u, &self.shape, axis),
        }
    }

    pub fn d2(&self, u: &[f64], axis: usize) -> Vec<f64> {
        match &self.ops {
            Ops::Spectral(s) => s.d2(u, axis),
            Ops::Stencil(st) => st.d2.apply(u, &self.shape, axis),
        }
    }

    /// Mixed derivative `D1_i D1_j`.
    pub fn d11(&self, u: &[f64], i: usize, j: usize) -> Vec<f64> {
        match &self.ops {
            Ops::Spectral(s) => s.d1d1(u, i, j),
            Ops::Stencil(_) => self.d1(&self.d1(u, j), i),
        }
    }

    // Face operators. Under Fourier collocation faces coincide with nodes:
    // interpolation is the identity and both face derivatives are `d1`.
    fn face_shape(&self, axis: usize) -> Vec<usize> {
        let mut s = self.shape.clone();
        if let Ops::Stencil(st) = &self.ops {
            s[axis] = st.face_div.len_in();
        }
        s
    }

    fn face_grad(&self, u: &[f64], axis: usize) -> Vec<f64> {
        match &self.ops {
            Ops::Spectral(s) => s.d1(u, axis),
            Ops::Stencil(st) => st.face_grad.apply(u, &self.shape, axis),
        }
    }

    fn face_interp(&self, u: &[f64], axis: usize) -> Vec<f64> {
        match &self.ops {
            Ops::Spectral(_) => u.to_vec(),
            Ops::Stencil(st) => st.face_interp.apply(u, &self.shape, axis),
        }
    }

    fn face_div(&self, f: &[f64], axis: usize) -> Vec<f64> {
        match &self.ops {
            Ops::Spectral(s) => s.d1(f, axis),
            Ops::Stencil(st) => st.face_div.apply(f, &self.face_shape(axis), axis),
        }
    }

    /// `L u = -Σ a_ij D_ij u + Σ b_j D_j u`, with the symmetric mixed terms
    /// taken once with factor 2.
    pub fn nondiv(&self, c: &Sampled, u: &[f64]) -> Vec<f64> {
        let d = self.d();
        let du: Vec<Vec<f64>> = (0..d).map(|j| self.d1(u, j)).collect();
        let mut out = vec![0.0; u.len()];
        for i in 0..d {
            let dii = self.d2(u, i);
            let (a, b) = (c.a(i, i), &c.b[i]);
            for k in 0..out.len() {
                out[k] += -a[k] * dii[k] + b[k] * du[i][k];
            }
            for j in i + 1..d {
                let dij = match &self.ops {
                    Ops::Spectral(s) => s.d1d1(u, i, j),
                    Ops::Stencil(_) => self.d1(&du[j], i),
                };
                let a = c.a(i, j);
                for k in 0..out.len() {
                    out[k] -= 2.0 * a[k] * dij[k];
                }
            }
        }
        out
    }

    /// `L* m = -Σ_i ∂_i (∂_i(a_ii m) + Σ_{j≠i} ∂_j(a_ij m) + b_i m)` in flux form:
    /// each bracket is evaluated on the faces normal to axis `i` and
    /// differenced back to the nodes. At order 2 this is the exact transpose
    /// of [`Discretization::nondiv`].
    pub fn adjoint(&self, c: &Sampled, m: &[f64]) -> Vec<f64> {
        let d = self.d();
        let mul = |x: &[f64], y: &[f64]| -> Vec<f64> { x.iter().zip(y).map(|(a, b)| a * b).collect() };
        let mut out = vec![0.0; m.len()];
        for i in 0..d {
            let am = mul(c.a(i, i), m);
            let mut node_part = mul(&c.b[i], m);
            for j in 0..d {
                if j != i {
                    let t = self.d1(&mul(c.a(i, j), m), j);
                    node_part.iter_mut().zip(&t).for_each(|(p, v)| *p += v);
                }
            }
            let div = match &self.ops {
                // keep the Nyquist mode of the diagonal term so that the
                // spectral adjoint is the transpose of the spectral `L`
                Ops::Spectral(s) => {
                    let mut v = s.d2(&am, i);
                    v.iter_mut().zip(&s.d1(&node_part, i)).for_each(|(a, b)| *a += b);
                    v
                }
                Ops::Stencil(_) => {
                    let mut flux = self.face_grad(&am, i);
                    let np = self.face_interp(&node_part, i);
                    flux.iter_mut().zip(&np).for_each(|(f, v)| *f += v);
                    self.face_div(&flux, i)
                }
            };
            out.iter_mut().zip(&div).for_each(|(o, v)| *o -= v);
        }
        out
    }

    /// `-div(A ∇u) = -Σ_i ∂_i (Σ_j A_ij ∂_j u)` with face-interpolated
    /// coefficients; `a` holds the `d × d` node arrays `A_ij` (any symmetry).
    pub fn divform(&self, a: &[Vec<f64>], u: &[f64]) -> Vec<f64> {
        let d = self.d();
        let du: Vec<Vec<f64>> = (0..d).map(|j| self.d1(u, j)).collect();
        let mut out = vec![0.0; u.len()];
        for i in 0..d {
            let g = self.face_grad(u, i);
            let aii = self.face_interp(&a[i * d + i], i);
            let mut flux: Vec<f64> = aii.iter().zip(&g).map(|(x, y)| x * y).collect();
            for j in 0..d {
                if j != i {
                    let aij = self.face_interp(&a[i * d + j], i);
                    let dj = self.face_interp(&du[j], i);
                    flux.iter_mut().zip(aij.iter().zip(&dj)).for_each(|(f, (x, y))| *f += x * y);
                }
            }
            let div = self.face_div(&flux, i);
            out.iter_mut().zip(&div).for_each(|(o, v)| *o -= v);
        }
        out
    }

    /// Divergence of a node vector field, `Σ_i D_i F_i`.
    pub fn div(&self, f: &[Vec<f64>]) -> Vec<f64> {
        let mut out = vec![0.0; self.num_nodes()];
        for (i, fi) in f.iter().enumerate() {
            let di = self.d1(fi, i);
            out.iter_mut().zip(&di).for_each(|(o, v)| *o += v);
        }
        out
    }

    /// Fourier symbols of `D1` and `-D2` along one torus axis, indexed by the
    /// FFT index.
    pub fn torus_symbols(&self) -> Result<(Vec<Complex64>, Vec<f64>)> {
        let n = match &self.grid {
            Grid::Torus(t) => t.n(),
            Grid::Box(_) => return Err(Error::InvalidGrid("symbols exist only on periodic grids".into())),
        };
        Ok((0..n)
            .map(|i| {
                let k = wavenumber(i, n);
                match &self.ops {
                    Ops::Spectral(s) => (s.d1_symbol(k), -s.d2_symbol(k)),
                    Ops::Stencil(st) => (st.d1.symbol(k), -st.d2.symbol(k).re),
                }
            })
            .unzip())
    }

    /// Half-width of the 1D operators built from these stencils.
    fn band(&self) -> usize {
        match &self.ops {
            Ops::Spectral(_) => usize::MAX,
            Ops::Stencil(st) => st.order,
        }
    }
}

/// Outcome of a linear solve.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SolveReport {
    pub method: String,
    pub iterations: usize,
    /// `|b - A x| / |b|` of the returned solution.
    pub residual: f64,
    /// Lagrange multiplier of a bordered solve: zero when the right-hand side
    /// lies in the range of the operator.
    pub multiplier: Option<f64>,
    pub history: Vec<f64>,
    /// `|b - A x|_∞ / (|A|_∞ |x|_∞ + |b|_∞)` when it was evaluated.
    #[serde(default)]
    pub backward_error: Option<f64>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn rel_residual(a: &LinOp, x: &[f64], b: &[f64]) -> f64 {
    let bn = norm(b);
    if bn == 0.0 {
        return norm(x);
    }
    let ax = a(x);
    norm(&ax.iter().zip(b).map(|(p, q)| p - q).collect::<Vec<_>>()) / bn
}

/// Interior-node indexing of a box grid.
pub struct Interior {
    pub nodes: Vec<usize>,
    num_nodes: usize,
}

impl Interior {
    pub fn of(grid: &BoxGrid) -> Self {
        let g = Grid::from(*grid);
        Interior {
            nodes: g.interior(),
            num_nodes: g.num_nodes(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.num_nodes];
        for (v, &k) in x.iter().zip(&self.nodes) {
            full[k] = *v;
        }
        full
    }

    pub fn extract(&self, full: &[f64]) -> Vec<f64> {
        self.nodes.iter().map(|&k| full[k]).collect()
    }
}

/// Solve `op(u) = rhs` at the interior nodes of a box with `u = 0` on the
/// boundary. `op` acts on full node arrays; `diag` is a per-axis scale of the
/// second-order part used by the Poisson preconditioner.
pub fn solve_dirichlet(
    disc: &Discretization,
    op: &dyn Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    diag: &[f64],
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let bx = *disc
        .grid()
        .as_box()
        .ok_or_else(|| Error::InvalidGrid("Dirichlet solves need a box grid".into()))?;
    let int = Interior::of(&bx);
    let b = int.extract(rhs);
    let a = |x: &[f64]| int.extract(&op(&int.embed(x)));
    if disc.d() == 1 {
        let lu = BandedLu::from_operator(int.len(), disc.band(), &a)?;
        let mut x = lu.solve(&b);
        // one step of iterative refinement
        let r: Vec<f64> = a(&x).iter().zip(&b).map(|(p, q)| q - p).collect();
        let dx = lu.solve(&r);
        x.iter_mut().zip(&dx).for_each(|(v, e)| *v += e);
        let residual = rel_residual(&a, &x, &b);
        check_residual(residual, opts.tol, "banded LU")?;
        return Ok((
            int.embed(&x),
            SolveReport {
                method: "banded LU".into(),
                residual,
                ..Default::default()
            },
        ));
    }
    let poisson = DirichletPoisson::new(disc.d(), bx.n(), bx.h());
    let pre = |r: &[f64]| poisson.solve_scaled(r, diag);
    let (x, stats) = solve_nonsymmetric(&a, &pre, &b, opts)?;
    Ok((
        int.embed(&x),
        SolveReport {
            method: "preconditioned Krylov".into(),
            iterations: stats.iterations,
            residual: stats.residual,
            multiplier: None,
            history: stats.history,
            backward_error: None,
        },
    ))
}

/// Normwise backward error of `u` for the Dirichlet problem `op(u) = rhs` on
/// the interior nodes of a box. `|A|_∞` is assembled exactly by probing `op`
/// with node sets spaced wider than the stencil, so no two probed columns
/// touch the same row.
pub fn backward_error(disc: &Discretization, op: &dyn Fn(&[f64]) -> Vec<f64>, u: &[f64], rhs: &[f64]) -> Result<f64> {
    let bx = *disc
        .grid()
        .as_box()
        .ok_or_else(|| Error::InvalidGrid("backward errors are defined for box grids".into()))?;
    let g = Grid::from(bx);
    let int = Interior::of(&bx);
    let d = disc.d();
    let stride = 2 * disc.band().min(bx.n()) + 1;
    let mut row_sums = vec![0.0; g.num_nodes()];
    let colours = stride.pow(d as u32);
    for colour in 0..colours {
        let mut shift = [0usize; 3];
        let mut c = colour;
        for s in shift.iter_mut().take(d) {
            *s = c % stride;
            c /= stride;
        }
        let mut probe = vec![0.0; g.num_nodes()];
        let mut any = false;
        for &k in &int.nodes {
            let idx = g.index(k);
            if (0..d).all(|a| idx[a] % stride == shift[a]) {
                probe[k] = 1.0;
                any = true;
            }
        }
        if !any {
            continue;
        }
        let col = op(&probe);
        for &k in &int.nodes {
            row_sums[k] += col[k].abs();
        }
    }
    let a_norm = int.nodes.iter().fold(0.0f64, |m, &k| m.max(row_sums[k]));
    let r = op(u);
    let r_norm = int.nodes.iter().fold(0.0f64, |m, &k| m.max((r[k] - rhs[k]).abs()));
    let u_norm = int.nodes.iter().fold(0.0f64, |m, &k| m.max(u[k].abs()));
    let b_norm = int.nodes.iter().fold(0.0f64, |m, &k| m.max(rhs[k].abs()));
    let denom = a_norm * u_norm + b_norm;
    Ok(if denom == 0.0 { 0.0 } else { r_norm / denom })
}

fn check_residual(residual: f64, tol: f64, solver: &'static str) -> Result<()> {
    if residual.is_finite() && residual <= tol {
        Ok(())
    } else {
        Err(Error::NotConverged {
            solver,
            iterations: 1,
            residual,
            history: vec![residual],
        })
    }
}

/// Dense bordered solves are used on 1D tori up to this many points.
const DENSE_LIMIT: usize = 1024;

/// Solve the bordered system `op(u) + λ = rhs`, `mean(u) = mean_value` on a
/// torus. Returns `u` and the report with `λ` as its multiplier.
///
/// The operator rows are scaled by `h² / max(diag)` so that they are O(1)
/// next to the constraint row; the reported residual is that of the scaled
/// system.
pub fn solve_bordered(
    disc: &Discretization,
    op: &dyn Fn(&[f64]) -> Vec<f64>,
    rhs: &[f64],
    mean_value: f64,
    diag: &[f64],
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveReport)> {
    let t = *disc
        .grid()
        .as_torus()
        .ok_or_else(|| Error::InvalidGrid("bordered solves need a periodic grid".into()))?;
    let nn = disc.num_nodes();
    let inv = 1.0 / nn as f64;
    let scale = t.h() * t.h() / diag.iter().cloned().fold(f64::MIN_POSITIVE, f64::max);
    let bordered = |z: &[f64]| {
        let mut out = op(&z[..nn]);
        let lam = z[nn];
        out.iter_mut().for_each(|v| *v = scale * *v + lam);
        out.push(z[..nn].iter().sum::<f64>() * inv);
        out
    };
    let mut b: Vec<f64> = rhs.iter().map(|v| scale * v).collect();
    b.push(mean_value);

    let (z, method, iterations, history) = if disc.d() == 1 && nn <= DENSE_LIMIT {
        let dim = nn + 1;
        let mut m = DMatrix::<f64>::zeros(dim, dim);
        let mut e = vec![0.0; dim];
        for j in 0..dim {
            e[j] = 1.0;
            let col = bordered(&e);
            for (i, v) in col.into_iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = 0.0;
        }
        let lu = m.lu();
        let bv = DVector::from_vec(b.clone());
        let mut z = lu
            .solve(&bv)
            .ok_or_else(|| Error::Singular("bordered periodic system is singular".into()))?;
        let r = &bv - lu_apply(&bordered, &z);
        if let Some(dz) = lu.solve(&r) {
            z += dz;
        }
        (z.as_slice().to_vec(), "dense bordered LU", 0, Vec::new())
    } else {
        let pre = fourier_preconditioner(disc, &t, diag, scale)?;
        let (z, stats) = gmres(&bordered, &pre, &b, None, opts)?;
        (z, "bordered GMRES", stats.iterations, stats.history)
    };
    let residual = rel_residual(&bordered, &z, &b);
    if !(residual <= opts.tol) {
        return Err(Error::NotConverged {
            solver: if method.starts_with("dense") { "dense bordered LU" } else { "bordered GMRES" },
            iterations,
            residual,
            history,
        });
    }
    let lam = z[nn] / scale;
    let mut u = z;
    u.truncate(nn);
    Ok((
        u,
        SolveReport {
            method: method.into(),
            iterations,
            residual,
            multiplier: Some(lam),
            history,
            backward_error: None,
        },
    ))
}

fn lu_apply(op: &dyn Fn(&[f64]) -> Vec<f64>, z: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(op(z.as_slice()))
}

/// Exact inverse of the bordered constant-coefficient operator
/// `-scale Σ c_i D2_i`, applied to `(r, ρ)`.
fn fourier_preconditioner<'a>(
    disc: &Discretization,
    t: &TorusGrid,
    diag: &[f64],
    scale: f64,
) -> Result<Box<LinOp<'a>>> {
    let (_, s2) = disc.torus_symbols()?;
    let d = t.d();
    let n = t.n();
    let shape = vec![n; d];
    let fft = FftNd::new(&shape);
    let nn = fft.len();
    let mut inv_symbol = vec![0.0; nn];
    let diag = diag.to_vec();
    for_each_index(&shape, |flat, idx| {
        let s: f64 = scale * idx.iter().enumerate().map(|(a, &i)| diag[a] * s2[i]).sum::<f64>();
        inv_symbol[flat] = if flat == 0 || s.abs() < 1e-14 { 0.0 } else { 1.0 / s };
    });
    Ok(Box::new(move |z: &[f64]| {
        let r = &z[..nn];
        let lam = r.iter().sum::<f64>() / nn as f64;
        let mut c = fft.forward_real(r);
        c.iter_mut().zip(&inv_symbol).for_each(|(v, s)| *v *= *s);
        let mut u = fft.inverse_real(c);
        let rho = z[nn];
        u.iter_mut().for_each(|v| *v += rho);
        u.push(lam);
        u
    }))
}

/// Fourier resampling of a periodic scalar array from `n` to `m` points per
/// axis, one axis at a time. Exact for trigonometric polynomials resolved on
/// both grids.
pub fn resample(values: &[f64], d: usize, n: usize, m: usize) -> Vec<f64> {
    if n == m {
        return values.to_vec();
    }
    let mut planner = rustfft::FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(m);
    let mut data = values.to_vec();
    let mut shape = vec![n; d];
    for axis in 0..d {
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let mut out = vec![0.0; outer * m * inner];
        let mut line = vec![Complex64::new(0.0, 0.0); n];
        let mut spec = vec![Complex64::new(0.0, 0.0); m];
        for o in 0..outer {
            for i in 0..inner {
                for (k, c) in line.iter_mut().enumerate() {
                    *c = Complex64::new(data[(o * n + k) * inner + i], 0.0);
                }
                fwd.process(&mut line);
                spec.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
                for (idx, c) in line.iter().enumerate() {
                    let k = wavenumber(idx, n);
                    let ka = 2 * k.unsigned_abs() as usize;
                    if ka < n.min(m) {
                        spec[k.rem_euclid(m as i64) as usize] += *c;
                    } else if ka == n && n < m {
                        // the source Nyquist mode is cos(π n x): split over ±n/2
                        spec[(n / 2) % m] += 0.5 * c;
                        spec[(m - n / 2) % m] += 0.5 * c;
                    } else if ka == m && m < n {
                        // ±m/2 alias to the same target mode
                        spec[m / 2] += *c;
                    }
                }
                inv.process(&mut spec);
                for (k, c) in spec.iter().enumerate() {
                    out[(o * m + k) * inner + i] = c.re / n as f64;
                }
            }
        }
        shape[axis] = m;
        data = out;
    }
    data
}

/// Sample the periodic field `f` (period 1) at `y = x / scale` for every node
/// `x` of `target`. Requires the rescaled box nodes to sit on a uniform
/// periodic lattice, i.e. an integer number of nodes per period and a lower
/// corner on that lattice; the torus data is Fourier-resampled to it.
pub fn tile(f: &Field, target: &Grid, scale: f64) -> Result<Field> {
    let t = *f
        .grid()
        .as_torus()
        .ok_or_else(|| Error::InvalidGrid("only periodic fields can be tiled".into()))?;
    if t.d() != target.d() {
        return Err(Error::GridMismatch("tiling between different dimensions".into()));
    }
    let d = t.d();
    let h = target.h() / scale;
    let per = 1.0 / h;
    let m = per.round() as usize;
    let lo = target.coord(0) / scale;
    let off = lo * per;
    if (per - m as f64).abs() > 1e-9 * per || (off - off.round()).abs() > 1e-6 || m < 2 {
        return Err(Error::GridMismatch(format!(
            "box nodes do not align with a periodic lattice (nodes per period {per}, offset {off})"
        )));
    }
    let off = off.round() as i64;
    let shape = target.shape();
    let comps: Vec<Vec<f64>> = (0..f.num_components())
        .map(|c| {
            let res = resample(f.component(c), d, t.n(), m);
            let mut out = vec![0.0; target.num_nodes()];
            for_each_index(&shape, |flat, idx| {
                let mut src = 0usize;
                for &i in idx {
                    src = src * m + (i as i64 + off).rem_euclid(m as i64) as usize;
                }
                out[flat] = res[src];
            });
            out
        })
        .collect();
    let mut out = Field::from_components(*target, f.rank(), comps)?;
    if f.symmetry() != Symmetry::General {
        out.set_symmetry(f.symmetry())?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{build_family, Part};
    use serde_json::json;
    use std::f64::consts::PI;

    fn sampled(name: &str, p: serde_json::Value, g: &Grid, part: Part) -> Sampled {
        build_family(name, &p).unwrap().sample(g, part)
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn second_order_adjoint_is_exact_transpose() {
        for (name, d) in [("gaussian-bump-defect", 2usize), ("shear-2d", 2), ("sin-drift-1d", 1)] {
            let g: Grid = TorusGrid::new(d, 16).unwrap().into();
            let p = if name == "gaussian-bump-defect" { json!({ "d": d }) } else { json!({}) };
            let c = sampled(name, p, &g, Part::Periodic);
            let disc = Discretization::new(g, Scheme::fd2()).unwrap();
            let nn = g.num_nodes();
            let u: Vec<f64> = (0..nn).map(|k| ((k * 37 % 11) as f64).sin()).collect();
            let v: Vec<f64> = (0..nn).map(|k| ((k * 13 % 7) as f64).cos()).collect();
            let lhs = dot(&disc.nondiv(&c, &u), &v);
            let rhs = dot(&u, &disc.adjoint(&c, &v));
            assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0), "{name}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn spectral_adjoint_is_transpose() {
        let g: Grid = TorusGrid::new(2, 16).unwrap().into();
        let c = sampled("gaussian-bump-defect", json!({ "d": 2 }), &g, Part::Periodic);
        let disc = Discretization::new(g, Scheme::Spectral).unwrap();
        let nn = g.num_nodes();
        let u: Vec<f64> = (0..nn).map(|k| ((k * 37 % 11) as f64).sin()).collect();
        let v: Vec<f64> = (0..nn).map(|k| ((k * 13 % 7) as f64).cos()).collect();
        let lhs = dot(&disc.nondiv(&c, &u), &v);
        let rhs = dot(&u, &disc.adjoint(&c, &v));
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn divform_with_identity_is_laplacian_at_order_two() {
        let g: Grid = BoxGrid::centered(2, 1.0, 16).unwrap().into();
        let disc = Discretization::new(g, Scheme::fd2()).unwrap();
        let nn = g.num_nodes();
        let mut a = vec![vec![0.0; nn]; 4];
        a[0] = vec![1.0; nn];
        a[3] = vec![1.0; nn];
        let u: Vec<f64> = g.points().iter().map(|x| (x[0] * 1.3).sin() * x[1].cos()).collect();
        let lhs = disc.divform(&a, &u);
        let lap: Vec<f64> = {
            let (a0, a1) = (disc.d2(&u, 0), disc.d2(&u, 1));
            a0.iter().zip(&a1).map(|(p, q)| -(p + q)).collect()
        };
        for k in g.interior() {
            assert!((lhs[k] - lap[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn dirichlet_poisson_solve_in_1d_and_2d() {
        // -u'' = 1 on (0, 1): u = x(1 - x)/2, exact for second-order differences
        let g: Grid = BoxGrid::domain(1, 0.0, 1.0, 64).unwrap().into();
        let disc = Discretization::new(g, Scheme::fd2()).unwrap();
        let op = |u: &[f64]| disc.d2(u, 0).iter().map(|v| -v).collect::<Vec<_>>();
        let (u, rep) = solve_dirichlet(&disc, &op, &vec![1.0; 65], &[1.0], &KrylovOptions::default()).unwrap();
        for (k, x) in g.points().iter().enumerate() {
            assert!((u[k] - x[0] * (1.0 - x[0]) / 2.0).abs() < 1e-12);
        }
        assert!(rep.residual < 1e-12);

        let g: Grid = BoxGrid::domain(2, 0.0, 1.0, 32).unwrap().into();
        let disc = Discretization::new(g, Scheme::fd2()).unwrap();
        let c = sampled("shear-2d", json!({}), &g, Part::Periodic);
        let op = |u: &[f64]| disc.nondiv(&c, u);
        let (u, rep) = solve_dirichlet(&disc, &op, &vec![1.0; g.num_nodes()], &[1.0, 1.0], &KrylovOptions::default()).unwrap();
        assert!(rep.residual <= 1e-10);
        // discrete maximum principle for f >= 0
        assert!(u.iter().all(|v| *v > -1e-12));
    }

    #[test]
    fn bordered_solve_recovers_known_periodic_solution() {
        for (d, n, scheme) in [(1, 64, Scheme::Spectral), (2, 32, Scheme::Spectral), (2, 32, Scheme::fd2())] {
            let t = TorusGrid::new(d, n).unwrap();
            let g: Grid = t.into();
            let disc = Discretization::new(g, scheme).unwrap();
            let c = sampled("identity", json!({ "d": d }), &g, Part::Periodic);
            let exact: Vec<f64> = g.points().iter().map(|x| (2.0 * PI * x[0]).sin()).collect();
            let rhs = disc.nondiv(&c, &exact);
            let op = |u: &[f64]| disc.nondiv(&c, u);
            let (u, rep) = solve_bordered(&disc, &op, &rhs, 0.0, &vec![1.0; d], &KrylovOptions::default()).unwrap();
            let err = u.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "d={d} err={err}");
            assert!(rep.multiplier.unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn multiplier_detects_rhs_outside_the_range() {
        let g: Grid = TorusGrid::new(1, 32).unwrap().into();
        let disc = Discretization::new(g, Scheme::Spectral).unwrap();
        let c = sampled("identity", json!({ "d": 1 }), &g, Part::Periodic);
        let op = |u: &[f64]| disc.nondiv(&c, u);
        let (_, rep) = solve_bordered(&disc, &op, &vec![1.0; 32], 0.0, &[1.0], &KrylovOptions::default()).unwrap();
        assert!((rep.multiplier.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn resampling_is_exact_for_resolved_modes() {
        let f = |x: f64, y: f64| (2.0 * PI * x).sin() + (4.0 * PI * (x + y)).cos() + 0.5;
        let src: Vec<f64> = (0..16 * 16).map(|k| f((k / 16) as f64 / 16.0, (k % 16) as f64 / 16.0)).collect();
        for m in [12usize, 24, 48] {
            let out = resample(&src, 2, 16, m);
            for k in 0..m * m {
                let v = f((k / m) as f64 / m as f64, (k % m) as f64 / m as f64);
                assert!((out[k] - v).abs() < 1e-12, "m={m}");
            }
        }
    }

    #[test]
    fn tiling_matches_direct_sampling() {
        let t = TorusGrid::new(2, 16).unwrap();
        let cs = build_family("gaussian-bump-defect", &json!({ "d": 2 })).unwrap();
        let f = Field::scalar_fn(t, |x| cs.a_per_at(x)[0][0]);
        for (half, n) in [(2.0, 64usize), (2.0, 128)] {
            let b: Grid = BoxGrid::centered(2, half, n).unwrap().into();
            let tiled = tile(&f, &b, 1.0).unwrap();
            for k in 0..b.num_nodes() {
                let direct = cs.a_per_at(&b.point(k))[0][0];
                assert!((tiled.at(k) - direct).abs() < 1e-13);
            }
        }
        // rescaled lattice: period eps = 1/4 on (0, 1)
        let t1 = TorusGrid::new(1, 32).unwrap();
        let f1 = Field::scalar_fn(t1, |x| (2.0 * PI * x[0]).cos());
        let b: Grid = BoxGrid::domain(1, 0.0, 1.0, 128).unwrap().into();
        let tiled = tile(&f1, &b, 0.25).unwrap();
        for k in 0..b.num_nodes() {
            let x = b.point(k)[0];
            assert!((tiled.at(k) - (8.0 * PI * x).cos()).abs() < 1e-13);
        }
        let bad: Grid = BoxGrid::domain(1, 0.1, 1.0, 128).unwrap().into();
        assert!(tile(&f1, &bad, 0.25).is_err());
    }
}
