//! Periodic cell problems: the invariant measure `m_per`, the correctors
//! `w_per`, the skew potential `ℬ_per`, the divergence-form coefficient
//! `𝒜_per = m_per a_per - ℬ_per`, and the homogenized tensor `A*`.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coefficients::{CoefficientSet, Part, Sampled};
use crate::error::{Error, Result};
use crate::fields::io::{read_field, write_field};
use crate::fields::{Field, Grid, Symmetry, TorusGrid};
use crate::numerics::fft::{for_each_index, FftNd};
use crate::numerics::krylov::KrylovOptions;
use crate::operators::{solve_bordered, Discretization, Scheme, SolveReport};

/// Fredholm tolerance on the drift `⟨m_per b_per⟩`.
pub const DRIFT_TOL: f64 = 1e-8;
/// Largest allowed difference between the two `A*` routes.
pub const ROUTE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CellOptions {
    pub scheme: Scheme,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CellOptions {
    fn default() -> Self {
        CellOptions {
            scheme: Scheme::Spectral,
            tol: 1e-10,
            max_iter: 2000,
        }
    }
}

impl CellOptions {
    pub fn krylov(&self) -> KrylovOptions {
        KrylovOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }
}

/// Residuals and diagnostics of a cell solve.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct CellDiagnostics {
    pub measure_residual: f64,
    pub corrector_residuals: Vec<f64>,
    /// Lagrange multipliers of the corrector solves, `≈ ⟨m_per · rhs⟩`.
    pub corrector_multipliers: Vec<f64>,
    /// `max |Σ_i D_i ℬ_ij - F_j|`.
    pub b_divergence_residual: f64,
    /// `max |Σ_i D_i F_i|` of the flux whose curl defines `ℬ`.
    pub flux_divergence: f64,
    /// `max |F|` in d = 1, where `F` is the (vanishing) flux constant.
    pub flux_max: f64,
    pub min_m: f64,
    pub route_discrepancy: f64,
}

#[derive(Debug, Clone)]
pub struct CellSolution {
    pub grid: TorusGrid,
    pub scheme: Scheme,
    pub m_per: Field,
    pub w_per: Vec<Field>,
    pub b_per: Field,
    pub a_div: Field,
    /// `A*` from `⟨𝒜 (e_j + ∇w_j)⟩`.
    pub a_star: Vec<Vec<f64>>,
    /// `A*` from the non-divergence correctors alone.
    pub a_star_nondiv: Vec<Vec<f64>>,
    pub drift: Vec<f64>,
    pub diagnostics: CellDiagnostics,
}

fn avg(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn cell_inputs(cs: &CoefficientSet, g: &TorusGrid, scheme: Scheme) -> Result<(Discretization, Sampled)> {
    if g.d() != cs.d {
        return Err(Error::GridMismatch(format!(
            "cell grid is {}-dimensional, coefficients are {}-dimensional",
            g.d(),
            cs.d
        )));
    }
    let disc = Discretization::new(*g, scheme)?;
    let c = cs.sample(&Grid::from(*g), Part::Periodic);
    Ok((disc, c))
}

/// `m_per` from the bordered system `[L*, 1; mean, 0]`, normalized to `⟨m⟩ = 1`.
pub fn solve_invariant_measure(
    cs: &CoefficientSet,
    g: &TorusGrid,
    opts: &CellOptions,
) -> Result<(Field, SolveReport)> {
    let (disc, c) = cell_inputs(cs, g, opts.scheme)?;
    measure_on(&disc, &c, opts)
}

fn measure_on(disc: &Discretization, c: &Sampled, opts: &CellOptions) -> Result<(Field, SolveReport)> {
    let op = |m: &[f64]| disc.adjoint(c, m);
    let zero = vec![0.0; disc.num_nodes()];
    let (m, rep) = solve_bordered(disc, &op, &zero, 1.0, &c.mean_diagonal(), &opts.krylov())?;
    let min = m.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::DiscretizationFault(format!(
            "the computed invariant measure is not positive (minimum {min:.3e}); refine the cell grid"
        )));
    }
    Ok((Field::scalar(*disc.grid(), m)?, rep))
}

/// `⟨m_per b_per⟩` componentwise.
pub fn drift(m_per: &Field, cs: &CoefficientSet) -> Result<Vec<f64>> {
    let g = m_per.grid();
    let c = cs.sample(g, Part::Periodic);
    Ok((0..cs.d)
        .map(|j| avg(&m_per.data().iter().zip(&c.b[j]).map(|(m, b)| m * b).collect::<Vec<_>>()))
        .collect())
}

/// Periodic corrector for direction `e_p`: `L w = -b_per · e_p`, `⟨w⟩ = 0`.
pub fn solve_corrector_periodic(
    cs: &CoefficientSet,
    g: &TorusGrid,
    m_per: &Field,
    p: usize,
    opts: &CellOptions,
) -> Result<(Field, SolveReport)> {
    let (disc, c) = cell_inputs(cs, g, opts.scheme)?;
    corrector_on(&disc, &c, m_per, p, opts)
}

fn corrector_on(
    disc: &Discretization,
    c: &Sampled,
    m_per: &Field,
    p: usize,
    opts: &CellOptions,
) -> Result<(Field, SolveReport)> {
    let d = disc.d();
    if p >= d {
        return Err(Error::InvalidParameter(format!("direction {p} out of range for d = {d}")));
    }
    let dr: Vec<f64> = (0..d)
        .map(|j| avg(&m_per.data().iter().zip(&c.b[j]).map(|(m, b)| m * b).collect::<Vec<_>>()))
        .collect();
    if dr.iter().any(|v| v.abs() > DRIFT_TOL) {
        return Err(Error::DriftViolation { drift: dr });
    }
    let rhs: Vec<f64> = c.b[p].iter().map(|b| -b).collect();
    let pairing = avg(&m_per.data().iter().zip(&rhs).map(|(m, r)| m * r).collect::<Vec<_>>());
    if pairing.abs() > DRIFT_TOL {
        return Err(Error::DriftViolation { drift: vec![pairing] });
    }
    let op = |u: &[f64]| disc.nondiv(c, u);
    let (w, rep) = solve_bordered(disc, &op, &rhs, 0.0, &c.mean_diagonal(), &opts.krylov())?;
    Ok((Field::scalar(*disc.grid(), w)?, rep))
}

/// The flux `F_j = m b_j + Σ_i D_i(m a_ij)` whose divergence vanishes when
/// `m` is the invariant measure.
pub(crate) fn measure_flux(disc: &Discretization, c: &Sampled, m: &[f64]) -> Vec<Vec<f64>> {
    let d = disc.d();
    (0..d)
        .map(|j| {
            let mut f: Vec<f64> = m.iter().zip(&c.b[j]).map(|(m, b)| m * b).collect();
            for i in 0..d {
                let ma: Vec<f64> = m.iter().zip(c.a(i, j)).map(|(m, a)| m * a).collect();
                f.iter_mut().zip(disc.d1(&ma, i)).for_each(|(x, v)| *x += v);
            }
            f
        })
        .collect()
}

/// Skew `ℬ` with `Σ_i D_i ℬ_ij = F_j` on a torus, in the zero-mean gauge:
/// `B̂_ij = (σ_i F̂_j - σ_j F̂_i) / Σ_k σ_k²` with `σ` the symbol of `D_1`.
/// Returns the field and `max |Σ_i D_i F_i|`.
pub(crate) fn skew_potential(disc: &Discretization, flux: &[Vec<f64>]) -> Result<(Field, f64)> {
    let d = disc.d();
    let g = *disc.grid();
    let t = *g
        .as_torus()
        .ok_or_else(|| Error::InvalidGrid("the periodic skew potential needs a torus".into()))?;
    let nn = g.num_nodes();
    let div_f = max_abs(disc.div(flux));
    if d == 1 {
        return Ok((Field::from_components(g, 2, vec![vec![0.0; nn]])?, div_f));
    }
    let (s1, _) = disc.torus_symbols()?;
    let shape = vec![t.n(); d];
    let fft = FftNd::new(&shape);
    let fh: Vec<Vec<Complex64>> = flux.iter().map(|f| fft.forward_real(f)).collect();
    let mut comps = vec![vec![0.0; nn]; d * d];
    for i in 0..d {
        for j in i + 1..d {
            let mut bh = vec![Complex64::new(0.0, 0.0); nn];
            for_each_index(&shape, |flat, idx| {
                let s: Complex64 = idx.iter().map(|&q| s1[q] * s1[q]).sum();
                if s.norm() > 1e-12 {
                    bh[flat] = (s1[idx[i]] * fh[j][flat] - s1[idx[j]] * fh[i][flat]) / s;
                }
            });
            let bij = fft.inverse_real(bh);
            comps[j * d + i] = bij.iter().map(|v| -v).collect();
            comps[i * d + j] = bij;
        }
    }
    let mut b = Field::from_components(g, 2, comps)?;
    b.set_symmetry(Symmetry::Skew)?;
    Ok((b, div_f))
}

/// `ℬ_per` for the measure `m_per`.
pub fn solve_b_periodic(cs: &CoefficientSet, g: &TorusGrid, m_per: &Field, scheme: Scheme) -> Result<Field> {
    let (disc, c) = cell_inputs(cs, g, scheme)?;
    let (b, _) = b_on(&disc, &c, m_per, scheme)?;
    Ok(b)
}

fn b_on(disc: &Discretization, c: &Sampled, m_per: &Field, scheme: Scheme) -> Result<(Field, [f64; 3])> {
    let d = disc.d();
    let flux = measure_flux(disc, c, m_per.data());
    let means: Vec<f64> = flux.iter().map(|f| avg(f)).collect();
    if means.iter().any(|v| v.abs() > DRIFT_TOL) {
        return Err(Error::DriftViolation { drift: means });
    }
    let (b, div_f) = skew_potential(disc, &flux)?;
    // Fourier collocation keeps div F at round-off; stencils only to truncation order.
    if scheme == Scheme::Spectral && div_f > 1e-8 {
        return Err(Error::DiscretizationFault(format!(
            "the measure flux is not divergence free (max |div F| = {div_f:.3e}); the invariant measure solve is inaccurate"
        )));
    }
    let mut res = 0.0f64;
    if d > 1 {
        for j in 0..d {
            let col: Vec<Vec<f64>> = (0..d).map(|i| b.entry(i, j).to_vec()).collect();
            let div = disc.div(&col);
            res = res.max(max_abs(div.iter().zip(&flux[j]).map(|(a, f)| a - f)));
        }
    }
    let fmax = max_abs(flux.iter().flatten().cloned());
    Ok((b, [res, div_f, fmax]))
}

/// `𝒜 = m a - ℬ` nodewise.
pub fn divergence_form_coefficient(m: &Field, c: &Sampled, b: &Field) -> Result<Field> {
    let d = c.d;
    let comps = (0..d * d)
        .map(|ij| {
            let (i, j) = (ij / d, ij % d);
            m.data()
                .iter()
                .zip(c.a(i, j))
                .zip(b.entry(i, j))
                .map(|((m, a), b)| m * a - b)
                .collect()
        })
        .collect();
    Field::from_components(*m.grid(), 2, comps)
}

/// Both routes to `A*`:
/// `⟨𝒜_ij + 𝒜_ik D_k w_j⟩` and `⟨m (a_ij + 2 a_ik D_k w_j - b_i w_j)⟩`.
fn a_star_routes(
    disc: &Discretization,
    c: &Sampled,
    m: &Field,
    a_div: &Field,
    w: &[Field],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let d = disc.d();
    let grads: Vec<Vec<Vec<f64>>> = w.iter().map(|wj| (0..d).map(|k| disc.d1(wj.data(), k)).collect()).collect();
    let mut r1 = vec![vec![0.0; d]; d];
    let mut r2 = vec![vec![0.0; d]; d];
    let nn = disc.num_nodes();
    for i in 0..d {
        for j in 0..d {
            let (mut s1, mut s2) = (0.0, 0.0);
            for node in 0..nn {
                let mm = m.data()[node];
                let mut t1 = a_div.entry(i, j)[node];
                let mut t2 = c.a(i, j)[node] - c.b[i][node] * w[j].data()[node];
                for k in 0..d {
                    t1 += a_div.entry(i, k)[node] * grads[j][k][node];
                    t2 += 2.0 * c.a(i, k)[node] * grads[j][k][node];
                }
                s1 += t1;
                s2 += mm * t2;
            }
            r1[i][j] = s1 / nn as f64;
            r2[i][j] = s2 / nn as f64;
        }
    }
    (r1, r2)
}

/// Solve every cell problem on `g`.
pub fn solve_cell(cs: &CoefficientSet, g: &TorusGrid, opts: &CellOptions) -> Result<CellSolution> {
    let (disc, c) = cell_inputs(cs, g, opts.scheme)?;
    let d = cs.d;
    let (m_per, mrep) = measure_on(&disc, &c, opts)?;
    let dr = drift(&m_per, cs)?;
    if dr.iter().any(|v| v.abs() > DRIFT_TOL) {
        return Err(Error::DriftViolation { drift: dr });
    }
    let mut w_per = Vec::with_capacity(d);
    let mut diag = CellDiagnostics {
        measure_residual: mrep.residual,
        min_m: m_per.data().iter().cloned().fold(f64::INFINITY, f64::min),
        ..Default::default()
    };
    for p in 0..d {
        let (w, rep) = corrector_on(&disc, &c, &m_per, p, opts)?;
        diag.corrector_residuals.push(rep.residual);
        diag.corrector_multipliers.push(rep.multiplier.unwrap_or(0.0));
        w_per.push(w);
    }
    let (b_per, [bres, divf, fmax]) = b_on(&disc, &c, &m_per, opts.scheme)?;
    diag.b_divergence_residual = bres;
    diag.flux_divergence = divf;
    diag.flux_max = fmax;
    let a_div = divergence_form_coefficient(&m_per, &c, &b_per)?;
    let (a_star, a_star_nondiv) = a_star_routes(&disc, &c, &m_per, &a_div, &w_per);
    let disc_max = max_abs(
        a_star
            .iter()
            .flatten()
            .zip(a_star_nondiv.iter().flatten())
            .map(|(x, y)| x - y),
    );
    diag.route_discrepancy = disc_max;
    // with stencils `Σ_i D_i ℬ_ij = F_j` holds only to truncation order, and so
    // does the route identity
    if opts.scheme == Scheme::Spectral && disc_max > ROUTE_TOL {
        return Err(Error::RouteDisagreement {
            what: "homogenized tensor".into(),
            discrepancy: disc_max,
            tolerance: ROUTE_TOL,
        });
    }
    Ok(CellSolution {
        grid: *g,
        scheme: opts.scheme,
        m_per,
        w_per,
        b_per,
        a_div,
        a_star,
        a_star_nondiv,
        drift: dr,
        diagnostics: diag,
    })
}

/// The homogenized tensor of a solved cell, `⟨𝒜 (e_j + ∇w_j)⟩`, with its
/// non-divergence cross-check already applied by [`solve_cell`].
pub fn homogenized_tensor(cell: &CellSolution) -> &[Vec<f64>] {
    &cell.a_star
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    d: usize,
    n: usize,
    scheme: Scheme,
    a_star: Vec<Vec<f64>>,
    a_star_nondiv: Vec<Vec<f64>>,
    drift: Vec<f64>,
    diagnostics: CellDiagnostics,
}

const SIDECAR: &str = "cell.json";

impl CellSolution {
    /// Symmetric part of `A*` has eigenvalues at least this large.
    pub fn a_star_min_eigenvalue(&self) -> f64 {
        let d = self.a_star.len();
        let sym = nalgebra::DMatrix::from_fn(d, d, |i, j| 0.5 * (self.a_star[i][j] + self.a_star[j][i]));
        sym.symmetric_eigen().eigenvalues.min()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let put = |name: &str, f: &Field| -> Result<()> {
            write_field(BufWriter::new(File::create(dir.join(name))?), f)
        };
        put("m_per.dhf", &self.m_per)?;
        for (p, w) in self.w_per.iter().enumerate() {
            put(&format!("w_per_{p}.dhf"), w)?;
        }
        put("b_per.dhf", &self.b_per)?;
        put("a_div.dhf", &self.a_div)?;
        let side = Sidecar {
            format_version: crate::fields::io::FORMAT_VERSION,
            d: self.grid.d(),
            n: self.grid.n(),
            scheme: self.scheme,
            a_star: self.a_star.clone(),
            a_star_nondiv: self.a_star_nondiv.clone(),
            drift: self.drift.clone(),
            diagnostics: self.diagnostics.clone(),
        };
        let json = serde_json::to_string_pretty(&side).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(dir.join(SIDECAR), json)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join(SIDECAR))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if side.format_version != crate::fields::io::FORMAT_VERSION {
            return Err(Error::Format(format!("cell format version {} is not supported", side.format_version)));
        }
        let get = |name: &str| -> Result<Field> { read_field(BufReader::new(File::open(dir.join(name))?)) };
        let m_per = get("m_per.dhf")?;
        let grid = *m_per
            .grid()
            .as_torus()
            .ok_or_else(|| Error::Format("stored measure is not on a torus".into()))?;
        if grid.d() != side.d || grid.n() != side.n {
            return Err(Error::Format("stored fields do not match the sidecar grid".into()));
        }
        let w_per = (0..side.d).map(|p| get(&format!("w_per_{p}.dhf"))).collect::<Result<Vec<_>>>()?;
        Ok(CellSolution {
            grid,
            scheme: side.scheme,
            m_per,
            w_per,
            b_per: get("b_per.dhf")?,
            a_div: get("a_div.dhf")?,
            a_star: side.a_star,
            a_star_nondiv: side.a_star_nondiv,
            drift: side.drift,
            diagnostics: side.diagnostics,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::build_family;
    use crate::numerics::quadrature::{Antiderivative, Composite};
    use serde_json::json;
    use std::f64::consts::PI;

    fn torus(d: usize, n: usize) -> TorusGrid {
        TorusGrid::new(d, n).unwrap()
    }

    #[test]
    fn identity_cell_is_trivial() {
        let cs = build_family("identity", &json!({ "d": 2 })).unwrap();
        let cell = solve_cell(&cs, &torus(2, 16), &CellOptions::default()).unwrap();
        assert!(cell.m_per.data().iter().all(|m| (m - 1.0).abs() < 1e-12));
        for w in &cell.w_per {
            assert!(w.max_abs() < 1e-12);
        }
        assert!(cell.b_per.max_abs() < 1e-12);
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((cell.a_star[i][j] - e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sin_drift_measure_corrector_and_tensor() {
        let cs = build_family("sin-drift-1d", &json!({ "amp": 1.0 })).unwrap();
        let n = 256;
        let cell = solve_cell(&cs, &torus(1, n), &CellOptions::default()).unwrap();
        let big_b = |x: f64| (1.0 - (2.0 * PI * x).cos()) / (2.0 * PI);
        let q = Composite::default();
        let me = q.integrate(&|x| big_b(x).exp(), 0.0, 1.0, 32);
        let men = q.integrate(&|x| (-big_b(x)).exp(), 0.0, 1.0, 32);
        let mut em: f64 = 0.0;
        let mut ew: f64 = 0.0;
        let g = Grid::from(torus(1, n));
        let disc = Discretization::new(g, Scheme::Spectral).unwrap();
        let wprime = disc.d1(cell.w_per[0].data(), 0);
        for k in 0..n {
            let x = g.point(k)[0];
            let m_exact = (-big_b(x)).exp() / men;
            em = em.max((cell.m_per.at(k) - m_exact).abs() / m_exact);
            ew = ew.max((wprime[k] - (-1.0 + big_b(x).exp() / me)).abs());
        }
        assert!(em < 1e-8, "measure error {em}");
        assert!(ew < 1e-8, "corrector error {ew}");
        assert!((cell.a_star[0][0] - 1.0 / (me * men)).abs() < 1e-6);
        assert!(cell.drift[0].abs() < 1e-10);
        assert!(cell.diagnostics.flux_max < 1e-8);
        assert!(cell.diagnostics.route_discrepancy < 1e-10);
    }

    #[test]
    fn constant_drift_is_rejected_with_its_value() {
        let cs = build_family("constant-drift-1d", &json!({})).unwrap();
        match solve_cell(&cs, &torus(1, 32), &CellOptions::default()) {
            Err(Error::DriftViolation { drift }) => assert!((drift[0] - 1.0).abs() < 1e-12),
            other => panic!("expected drift violation, got {other:?}"),
        }
    }

    #[test]
    fn shear_flow_cell() {
        let cs = build_family("shear-2d", &json!({})).unwrap();
        let n = 32;
        let cell = solve_cell(&cs, &torus(2, n), &CellOptions::default()).unwrap();
        assert!(cell.m_per.data().iter().all(|m| (m - 1.0).abs() < 1e-10));
        // w_1 = W(x_2) with W'' = β, ⟨W⟩ = 0; quadrature oracle for W
        let beta = |y: f64| (2.0 * PI * y).sin() + 0.5 * (4.0 * PI * y).cos();
        let wp = Antiderivative::new(beta, 0.0, 1.0, 64);
        let c0 = -Composite::default().integrate(&|y| wp.eval(y), 0.0, 1.0, 64);
        let big_w = Antiderivative::new(move |y| wp.eval(y) + c0, 0.0, 1.0, 64);
        let mean_w = Composite::default().integrate(&|y| big_w.eval(y), 0.0, 1.0, 64);
        let g = Grid::from(torus(2, n));
        let mut err: f64 = 0.0;
        for k in 0..g.num_nodes() {
            let y = g.point(k)[1];
            err = err.max((cell.w_per[0].at(k) - (big_w.eval(y) - mean_w)).abs());
            assert!(cell.w_per[1].at(k).abs() < 1e-10);
        }
        assert!(err < 1e-8, "{err}");
        assert!(cell.diagnostics.b_divergence_residual < 1e-8);
        // A*_11 = 1 + ⟨W'^2⟩, A*_22 = 1
        let wprime2 = Composite::default().integrate(&|y| (wp_at(y, c0)).powi(2), 0.0, 1.0, 64);
        assert!((cell.a_star[0][0] - (1.0 + wprime2)).abs() < 1e-8);
        assert!((cell.a_star[1][1] - 1.0).abs() < 1e-10);
    }

    fn wp_at(y: f64, c0: f64) -> f64 {
        let beta = |y: f64| (2.0 * PI * y).sin() + 0.5 * (4.0 * PI * y).cos();
        Antiderivative::new(beta, 0.0, 1.0, 64).eval(y) + c0
    }

    #[test]
    fn adjoint_consistency_of_the_measure() {
        let cs = build_family("gaussian-bump-defect", &json!({ "d": 2 })).unwrap();
        let g = torus(2, 32);
        let (m, _) = solve_invariant_measure(&cs, &g, &CellOptions::default()).unwrap();
        let disc = Discretization::new(g, Scheme::Spectral).unwrap();
        let c = cs.sample(&Grid::from(g), Part::Periodic);
        for seed in 0..3 {
            let v: Vec<f64> = Grid::from(g)
                .points()
                .iter()
                .map(|x| ((seed + 1) as f64 * 2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos() + x[1].sin().powi(0))
                .collect();
            let lv = disc.nondiv(&c, &v);
            let pairing = avg(&m.data().iter().zip(&lv).map(|(a, b)| a * b).collect::<Vec<_>>());
            assert!(pairing.abs() < 1e-8);
        }
    }

    #[test]
    fn bump_family_cell_invariants() {
        let cs = build_family("gaussian-bump-defect", &json!({ "d": 2 })).unwrap();
        let cell = solve_cell(&cs, &torus(2, 32), &CellOptions::default()).unwrap();
        assert!((avg(cell.m_per.data()) - 1.0).abs() < 1e-12);
        assert!(cell.diagnostics.min_m > 0.0);
        for w in &cell.w_per {
            assert!(avg(w.data()).abs() < 1e-12);
        }
        assert_eq!(cell.b_per.symmetry(), Symmetry::Skew);
        for c in 0..4 {
            assert!(avg(cell.b_per.component(c)).abs() < 1e-12);
        }
        assert!(cell.diagnostics.route_discrepancy < 1e-6);
        assert!(cell.a_star_min_eigenvalue() > cs.lambda * cell.diagnostics.min_m - 1e-8);
    }

    #[test]
    fn grid_convergence_of_fd_cells() {
        let cs = build_family("gaussian-bump-defect", &json!({ "d": 2 })).unwrap();
        let fd = CellOptions { scheme: Scheme::fd2(), ..Default::default() };
        let exact = solve_cell(&cs, &torus(2, 32), &CellOptions::default()).unwrap();
        let mut errs = Vec::new();
        for n in [16usize, 32] {
            let cell = solve_cell(&cs, &torus(2, n), &fd).unwrap();
            let reference = crate::operators::resample(exact.m_per.data(), 2, 32, n);
            errs.push(max_abs(cell.m_per.data().iter().zip(&reference).map(|(a, b)| a - b)));
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.5 && ratio < 4.5, "{errs:?}");
    }

    #[test]
    fn save_and_load_roundtrip() {
        let cs = build_family("shear-2d", &json!({})).unwrap();
        let cell = solve_cell(&cs, &torus(2, 16), &CellOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        cell.save(dir.path()).unwrap();
        let back = CellSolution::load(dir.path()).unwrap();
        assert_eq!(back.m_per.data(), cell.m_per.data());
        assert_eq!(back.w_per[0].data(), cell.w_per[0].data());
        assert_eq!(back.a_star, cell.a_star);
        assert_eq!(back.b_per.symmetry(), Symmetry::Skew);
    }
}
