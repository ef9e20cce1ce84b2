//! The oscillatory problem `-a(x/ε):D²u + ε⁻¹ b(x/ε)·∇u = f` on a box with
//! zero Dirichlet data, its homogenized limit, the two-scale expansion
//! `u* + ε ∂_j u* w_j(x/ε)` and ε-sweeps with log-log rate fits.
//!
//! Two-scale errors are measured on the interior `Ω` minus a collar of width
//! `2ε`, because the expansion ignores the boundary layer.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::CellSolution;
use crate::coefficients::validate::eig_bounds;
use crate::coefficients::{CoefficientSet, Part, Sampled};
use crate::defect::DefectSolution;
use crate::error::{Error, Result};
use crate::fields::{BoxGrid, Field, Grid};
use crate::numerics::fit::{fit_loglog, LineFit};
use crate::numerics::krylov::KrylovOptions;
use crate::operators::{backward_error, solve_dirichlet, tile, Discretization, Scheme, SolveReport};

/// Fewest grid points per fast period.
pub const MIN_POINTS_PER_PERIOD: f64 = 16.0;
/// Normwise backward error required of the oscillatory solves.
pub const EPS_SOLVE_TOL: f64 = 1e-10;
/// Normwise backward error required of the homogenized solve.
pub const HOMOGENIZED_TOL: f64 = 1e-12;
/// Collar width in units of ε excluded from the two-scale error.
pub const COLLAR: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct EpsProblem {
    pub grid: BoxGrid,
    pub eps_list: Vec<f64>,
    pub f: Field,
    /// Even finite-difference order of the box stencils.
    pub order: usize,
    pub max_iter: usize,
}

fn reciprocal_integer(eps: f64) -> Option<usize> {
    let k = 1.0 / eps;
    (eps > 0.0 && (k - k.round()).abs() <= 1e-9 * k && k.round() >= 1.0).then(|| k.round() as usize)
}

impl EpsProblem {
    pub fn new(grid: BoxGrid, eps_list: Vec<f64>, f: Field) -> Result<Self> {
        if eps_list.len() < 3 {
            return Err(Error::InvalidParameter(format!(
                "an ε-sweep needs at least 3 values, got {}",
                eps_list.len()
            )));
        }
        if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::InvalidParameter("ε values must be strictly decreasing".into()));
        }
        if let Some(e) = eps_list.iter().find(|&&e| reciprocal_integer(e).is_none()) {
            return Err(Error::InvalidParameter(format!(
                "ε = {e} is not the reciprocal of an integer, so the box does not hold whole periods"
            )));
        }
        if f.rank() != 0 || *f.grid() != Grid::Box(grid) {
            return Err(Error::GridMismatch("the right-hand side must be a scalar field on the domain grid".into()));
        }
        let ep = EpsProblem {
            grid,
            eps_list,
            f,
            order: 2,
            max_iter: 4000,
        };
        for &e in &ep.eps_list {
            ep.check_resolved(e)?;
        }
        Ok(ep)
    }

    /// Constant right-hand side on `grid`.
    pub fn with_constant_rhs(grid: BoxGrid, eps_list: Vec<f64>, value: f64) -> Result<Self> {
        let f = Field::scalar_fn(grid, |_| value);
        Self::new(grid, eps_list, f)
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order;
        self
    }

    fn check_resolved(&self, eps: f64) -> Result<()> {
        let h = self.grid.h();
        if h > eps / MIN_POINTS_PER_PERIOD * (1.0 + 1e-9) {
            return Err(Error::Precondition(format!(
                "grid spacing {h:.3e} resolves ε = {eps} with only {:.1} points per period (need {MIN_POINTS_PER_PERIOD})",
                eps / h
            )));
        }
        Ok(())
    }

    fn disc(&self) -> Result<Discretization> {
        Discretization::new(self.grid, Scheme::FiniteDifference { order: self.order })
    }

    fn krylov(&self, tol: f64) -> KrylovOptions {
        KrylovOptions {
            tol,
            max_iter: self.max_iter,
            ..Default::default()
        }
    }

    /// Dirichlet solve whose contract is the normwise backward error: the
    /// relative residual `|b - Au| / |b|` of a direct solve at these grid
    /// sizes sits on a round-off floor near `cond(A) · 1e-16`.
    fn solve(&self, disc: &Discretization, c: &Sampled, rhs: &[f64], tol: f64) -> Result<(Vec<f64>, SolveReport)> {
        let op = |u: &[f64]| disc.nondiv(c, u);
        let krylov_tol = if self.grid.d() == 1 { 1e-6 } else { tol.max(1e-11) };
        let (u, mut rep) = solve_dirichlet(disc, &op, rhs, &c.mean_diagonal(), &self.krylov(krylov_tol))?;
        let be = backward_error(disc, &op, &u, rhs)?;
        if !(be <= tol) {
            return Err(Error::NotConverged {
                solver: "Dirichlet solve",
                iterations: rep.iterations,
                residual: be,
                history: rep.history,
            });
        }
        rep.backward_error = Some(be);
        Ok((u, rep))
    }
}

/// Solve the oscillatory problem at scale `eps`.
pub fn solve_eps(ep: &EpsProblem, cs: &CoefficientSet, eps: f64) -> Result<(Field, SolveReport)> {
    ep.check_resolved(eps)?;
    if cs.d != ep.grid.d() {
        return Err(Error::GridMismatch(format!(
            "domain is {}-dimensional, coefficients are {}-dimensional",
            ep.grid.d(),
            cs.d
        )));
    }
    let grid = Grid::Box(ep.grid);
    let disc = ep.disc()?;
    let c = cs.sample_map(&grid, Part::Full, |x| x.map(|xi| xi / eps), 1.0 / eps);
    let peclet = cell_peclet(&c, ep.grid.h());
    if ep.order == 2 && peclet > 1.0 {
        log::warn!("cell Péclet number {peclet:.2} exceeds 1 at ε = {eps}; the scheme is not monotone");
    }
    let (u, rep) = ep.solve(&disc, &c, ep.f.data(), EPS_SOLVE_TOL)?;
    Ok((Field::scalar(grid, u)?, rep))
}

/// `max h |b| / (2 a_ii)` over nodes and axes.
fn cell_peclet(c: &Sampled, h: f64) -> f64 {
    let d = c.b.len();
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for (b, a) in c.b[i].iter().zip(c.a(i, i)) {
            worst = worst.max(h * b.abs() / (2.0 * a));
        }
    }
    worst
}

/// Solve `-A*:D²u = f` with zero Dirichlet data.
pub fn solve_homogenized(ep: &EpsProblem, a_star: &[Vec<f64>], f: &Field) -> Result<(Field, SolveReport)> {
    let d = ep.grid.d();
    if a_star.len() != d || a_star.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidParameter(format!("homogenized tensor must be {d} × {d}")));
    }
    let mut m = [[0.0; 3]; 3];
    for i in 0..d {
        for j in 0..d {
            m[i][j] = a_star[i][j];
        }
    }
    let (lo, _) = eig_bounds(&m, d);
    if !(lo > 0.0) {
        return Err(Error::Precondition(format!(
            "homogenized tensor is not elliptic (smallest eigenvalue of its symmetric part {lo:.3e})"
        )));
    }
    let grid = Grid::Box(ep.grid);
    let disc = ep.disc()?;
    let nn = grid.num_nodes();
    let mut c = Sampled::zeros(d, nn);
    for i in 0..d {
        for j in 0..d {
            c.a[i * d + j] = vec![0.5 * (a_star[i][j] + a_star[j][i]); nn];
        }
    }
    let (u, rep) = ep.solve(&disc, &c, f.data(), HOMOGENIZED_TOL)?;
    Ok((Field::scalar(grid, u)?, rep))
}

/// Correctors `w_j` and their gradients, periodic part on the cell torus and
/// the optional defect part on its box (extended by zero outside).
#[derive(Debug, Clone)]
pub struct Correctors {
    w_per: Vec<Field>,
    grad_per: Vec<Field>,
    defect: Option<(Vec<Field>, Vec<Field>)>,
}

fn gradient_of(disc: &Discretization, f: &Field) -> Result<Field> {
    let d = disc.d();
    Field::from_components(*f.grid(), 1, (0..d).map(|k| disc.d1(f.data(), k)).collect())
}

impl Correctors {
    pub fn periodic(cell: &CellSolution) -> Result<Self> {
        let disc = Discretization::new(cell.grid, cell.scheme)?;
        let grad_per = cell.w_per.iter().map(|w| gradient_of(&disc, w)).collect::<Result<Vec<_>>>()?;
        Ok(Correctors {
            w_per: cell.w_per.clone(),
            grad_per,
            defect: None,
        })
    }

    pub fn with_defect(cell: &CellSolution, ds: &DefectSolution) -> Result<Self> {
        let mut c = Self::periodic(cell)?;
        let disc = Discretization::new(ds.grid, Scheme::FiniteDifference { order: ds.order })?;
        let grads = ds.w_tilde.iter().map(|w| gradient_of(&disc, w)).collect::<Result<Vec<_>>>()?;
        c.defect = Some((ds.w_tilde.clone(), grads));
        Ok(c)
    }

    /// The same periodic part without the defect corrector.
    pub fn periodic_only(&self) -> Self {
        Correctors {
            defect: None,
            ..self.clone()
        }
    }

    pub fn has_defect(&self) -> bool {
        self.defect.is_some()
    }

    /// `w_j(x/ε)` and `∇_y w_j(x/ε)` at every node of `target`.
    fn sample(&self, target: &BoxGrid, eps: f64) -> Result<(Vec<Vec<f64>>, Vec<Field>)> {
        let g = Grid::Box(*target);
        let mut w = Vec::with_capacity(self.w_per.len());
        let mut grad = Vec::with_capacity(self.w_per.len());
        for j in 0..self.w_per.len() {
            let mut wj = tile(&self.w_per[j], &g, eps)?.data().to_vec();
            let mut gj = tile(&self.grad_per[j], &g, eps)?;
            if let Some((wt, gt)) = &self.defect {
                let pts = g.points();
                for (k, x) in pts.iter().enumerate() {
                    let y = x.map(|xi| xi / eps);
                    wj[k] += interpolate(&wt[j], 0, &y);
                }
                for comp in 0..g.d() {
                    let col = gj.component_mut(comp);
                    for (k, x) in pts.iter().enumerate() {
                        let y = x.map(|xi| xi / eps);
                        col[k] += interpolate(&gt[j], comp, &y);
                    }
                }
            }
            w.push(wj);
            grad.push(gj);
        }
        Ok((w, grad))
    }
}

/// Multilinear interpolation of one component of a box field; zero outside
/// the box.
fn interpolate(f: &Field, comp: usize, y: &[f64; 3]) -> f64 {
    let b = *f.grid().as_box().expect("defect correctors live on a box");
    let d = b.d();
    let h = b.h();
    let mut base = [0usize; 3];
    let mut t = [0.0; 3];
    for a in 0..d {
        let s = (y[a] - b.lo()) / h;
        if s < -1e-9 || s > b.n() as f64 + 1e-9 {
            return 0.0;
        }
        let i = (s.floor().max(0.0) as usize).min(b.n() - 1);
        base[a] = i;
        t[a] = (s - i as f64).clamp(0.0, 1.0);
    }
    let data = f.component(comp);
    let g = f.grid();
    let mut acc = 0.0;
    for corner in 0..(1usize << d) {
        let mut idx = [0usize; 3];
        let mut wgt = 1.0;
        for a in 0..d {
            let up = (corner >> a) & 1;
            idx[a] = base[a] + up;
            wgt *= if up == 1 { t[a] } else { 1.0 - t[a] };
        }
        if wgt != 0.0 {
            acc += wgt * data[g.flat(&idx)];
        }
    }
    acc
}

/// Errors of one ε against the homogenized solution and the two-scale
/// expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoScaleError {
    pub eps: f64,
    /// `‖u_ε - u*‖_{L²(Ω)}`.
    pub l2: f64,
    /// `‖u_ε - u* - ε ∂_j u* w_j(·/ε)‖_{H¹}` on the interior.
    pub h1_interior: f64,
    /// Same difference in `W^{1,∞}` on the interior.
    pub w1inf_interior: f64,
}

pub fn two_scale_error(
    ep: &EpsProblem,
    u_eps: &Field,
    u_star: &Field,
    correctors: &Correctors,
    eps: f64,
) -> Result<TwoScaleError> {
    let grid = Grid::Box(ep.grid);
    if *u_eps.grid() != grid || *u_star.grid() != grid {
        return Err(Error::GridMismatch("solutions must live on the domain grid".into()));
    }
    let d = ep.grid.d();
    let disc = ep.disc()?;
    let vol = grid.cell_volume();
    let diff: Vec<f64> = u_eps.data().iter().zip(u_star.data()).map(|(a, b)| a - b).collect();
    let l2 = l2_distance(u_eps, u_star);

    let (w, gw) = correctors.sample(&ep.grid, eps)?;
    let us = u_star.data();
    let du: Vec<Vec<f64>> = (0..d).map(|j| disc.d1(us, j)).collect();
    let due: Vec<Vec<f64>> = (0..d).map(|j| disc.d1(u_eps.data(), j)).collect();
    let hess: Vec<Vec<f64>> = (0..d * d).map(|ij| disc.d11(us, ij / d, ij % d)).collect();

    let (lo, hi) = (ep.grid.lo(), ep.grid.hi());
    if 2.0 * COLLAR * eps >= hi - lo {
        return Err(Error::Precondition(format!(
            "a collar of width {COLLAR}ε = {} leaves no interior in a domain of width {}",
            COLLAR * eps,
            hi - lo
        )));
    }
    let collar = COLLAR * eps - 1e-12;
    let mut s_h1 = 0.0;
    let mut sup: f64 = 0.0;
    let mut count = 0usize;
    for k in 0..grid.num_nodes() {
        let x = grid.point(k);
        if (0..d).any(|a| x[a] - lo < collar || hi - x[a] < collar) {
            continue;
        }
        count += 1;
        let mut e = diff[k];
        for j in 0..d {
            e -= eps * du[j][k] * w[j][k];
        }
        let mut g2 = 0.0;
        for i in 0..d {
            let mut gi = due[i][k] - du[i][k];
            for j in 0..d {
                gi -= du[j][k] * gw[j].component(i)[k] + eps * hess[i * d + j][k] * w[j][k];
            }
            g2 += gi * gi;
        }
        s_h1 += e * e + g2;
        sup = sup.max(e.abs()).max(g2.sqrt());
    }
    if count == 0 {
        return Err(Error::EmptyRegion);
    }
    Ok(TwoScaleError {
        eps,
        l2,
        h1_interior: (vol * s_h1).sqrt(),
        w1inf_interior: sup,
    })
}

fn l2_distance(u: &Field, v: &Field) -> f64 {
    let s: f64 = u.data().iter().zip(v.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    (u.grid().cell_volume() * s).sqrt()
}

/// Log-log slope of `values` against `eps`.
pub fn rate_fit(eps: &[f64], values: &[f64]) -> Result<LineFit> {
    if eps.len() < 3 || eps.len() != values.len() {
        return Err(Error::InvalidParameter(format!(
            "a rate fit needs at least 3 matching points, got {} and {}",
            eps.len(),
            values.len()
        )));
    }
    if let Some(v) = values.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidParameter(format!("a rate fit needs positive values, got {v}")));
    }
    fit_loglog(eps, values)
}

/// `‖D²u‖_{L^β}` over the interior nodes, Frobenius at each node.
fn hessian_norm(disc: &Discretization, u: &Field, beta: f64) -> f64 {
    let d = disc.d();
    let g = u.grid();
    let hess: Vec<Vec<f64>> = (0..d * d).map(|ij| disc.d11(u.data(), ij / d, ij % d)).collect();
    let s: f64 = g
        .interior()
        .into_iter()
        .map(|k| hess.iter().map(|h| h[k] * h[k]).sum::<f64>().sqrt().powf(beta))
        .sum();
    (g.cell_volume() * s).powf(1.0 / beta)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HessianScaling {
    pub beta: f64,
    pub eps: Vec<f64>,
    pub norms: Vec<f64>,
    pub fit: LineFit,
}

/// Fitted exponent of `‖D²u_ε‖_{L^β(Ω)}` against ε.
pub fn hessian_scaling(ep: &EpsProblem, cs: &CoefficientSet, beta: f64) -> Result<HessianScaling> {
    if !(beta >= 1.0) {
        return Err(Error::InvalidParameter(format!("β must be at least 1, got {beta}")));
    }
    let disc = ep.disc()?;
    let norms = ep
        .eps_list
        .par_iter()
        .map(|&e| solve_eps(ep, cs, e).map(|(u, _)| hessian_norm(&disc, &u, beta)))
        .collect::<Result<Vec<_>>>()?;
    let fit = rate_fit(&ep.eps_list, &norms)?;
    Ok(HessianScaling {
        beta,
        eps: ep.eps_list.clone(),
        norms,
        fit,
    })
}

/// One row of a convergence study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    pub l2: f64,
    /// Two-scale errors, absent when the collar covers the whole domain.
    pub h1_interior: Option<f64>,
    pub w1inf_interior: Option<f64>,
    /// Two-scale errors with the periodic corrector alone, when a defect
    /// corrector was used.
    pub h1_periodic_only: Option<f64>,
    pub w1inf_periodic_only: Option<f64>,
    pub hessian: f64,
    pub backward_error: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub family: String,
    pub beta: f64,
    pub rows: Vec<ConvergenceRow>,
    pub l2_fit: LineFit,
    pub h1_fit: Option<LineFit>,
    pub h1_periodic_only_fit: Option<LineFit>,
    pub hessian_fit: LineFit,
    /// Steps along the sweep where the L² error did not decrease.
    pub l2_non_monotone_steps: usize,
    pub homogenized_backward_error: f64,
}

/// Fit over the rows where the value is defined; `None` with fewer than 3.
fn partial_fit(rows: &[ConvergenceRow], f: impl Fn(&ConvergenceRow) -> Option<f64>) -> Option<LineFit> {
    let (e, v): (Vec<f64>, Vec<f64>) = rows.iter().filter_map(|r| f(r).map(|v| (r.eps, v))).unzip();
    rate_fit(&e, &v).ok()
}

/// Full ε-sweep: oscillatory solves (concurrent), homogenized solve,
/// two-scale errors with and without the defect corrector, Hessian norms.
pub fn converge(
    ep: &EpsProblem,
    cs: &CoefficientSet,
    a_star: &[Vec<f64>],
    correctors: &Correctors,
    beta: f64,
) -> Result<ConvergenceReport> {
    if !(beta >= 1.0) {
        return Err(Error::InvalidParameter(format!("β must be at least 1, got {beta}")));
    }
    let (u_star, hrep) = solve_homogenized(ep, a_star, &ep.f)?;
    let disc = ep.disc()?;
    let ablation = correctors.has_defect().then(|| correctors.periodic_only());
    let rows = ep
        .eps_list
        .par_iter()
        .map(|&e| -> Result<ConvergenceRow> {
            let (u, rep) = solve_eps(ep, cs, e)?;
            let l2 = l2_distance(&u, &u_star);
            let interior = 2.0 * COLLAR * e < ep.grid.hi() - ep.grid.lo();
            let err = interior
                .then(|| two_scale_error(ep, &u, &u_star, correctors, e))
                .transpose()?;
            let abl = match (&ablation, interior) {
                (Some(c), true) => Some(two_scale_error(ep, &u, &u_star, c, e)?),
                _ => None,
            };
            Ok(ConvergenceRow {
                eps: e,
                l2,
                h1_interior: err.map(|a| a.h1_interior),
                w1inf_interior: err.map(|a| a.w1inf_interior),
                h1_periodic_only: abl.map(|a| a.h1_interior),
                w1inf_periodic_only: abl.map(|a| a.w1inf_interior),
                hessian: hessian_norm(&disc, &u, beta),
                backward_error: rep.backward_error.unwrap_or(0.0),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let eps = &ep.eps_list;
    let col = |f: fn(&ConvergenceRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    let l2 = col(|r| r.l2);
    let non_monotone = l2.windows(2).filter(|w| !(w[1] < w[0])).count();
    if non_monotone > 0 {
        log::warn!("L² error fails to decrease on {non_monotone} step(s) of the ε-sweep");
    }
    Ok(ConvergenceReport {
        family: cs.family.clone(),
        beta,
        l2_fit: rate_fit(eps, &l2)?,
        h1_fit: partial_fit(&rows, |r| r.h1_interior),
        h1_periodic_only_fit: partial_fit(&rows, |r| r.h1_periodic_only),
        hessian_fit: rate_fit(eps, &col(|r| r.hessian))?,
        rows,
        l2_non_monotone_steps: non_monotone,
        homogenized_backward_error: hrep.backward_error.unwrap_or(0.0),
    })
}

/// Error columns of the CSV output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Column {
    L2,
    H1,
    W1Inf,
    H1PeriodicOnly,
    W1InfPeriodicOnly,
    Hessian,
    Residual,
}

impl Column {
    pub const ALL: [Column; 7] = [
        Column::L2,
        Column::H1,
        Column::W1Inf,
        Column::H1PeriodicOnly,
        Column::W1InfPeriodicOnly,
        Column::Hessian,
        Column::Residual,
    ];

    fn name(self) -> &'static str {
        match self {
            Column::L2 => "l2",
            Column::H1 => "h1_interior",
            Column::W1Inf => "w1inf_interior",
            Column::H1PeriodicOnly => "h1_periodic_only",
            Column::W1InfPeriodicOnly => "w1inf_periodic_only",
            Column::Hessian => "hessian",
            Column::Residual => "backward_error",
        }
    }

    fn value(self, r: &ConvergenceRow) -> Option<f64> {
        match self {
            Column::L2 => Some(r.l2),
            Column::H1 => r.h1_interior,
            Column::W1Inf => r.w1inf_interior,
            Column::H1PeriodicOnly => r.h1_periodic_only,
            Column::W1InfPeriodicOnly => r.w1inf_periodic_only,
            Column::Hessian => Some(r.hessian),
            Column::Residual => Some(r.backward_error),
        }
    }
}

impl ConvergenceReport {
    /// One line per ε; missing values are left empty.
    pub fn write_csv(&self, mut w: impl Write, columns: &[Column]) -> Result<()> {
        let header: Vec<&str> = std::iter::once("eps").chain(columns.iter().map(|c| c.name())).collect();
        writeln!(w, "{}", header.join(","))?;
        for r in &self.rows {
            let mut line = format!("{:.17e}", r.eps);
            for c in columns {
                line.push(',');
                if let Some(v) = c.value(r) {
                    line.push_str(&format!("{v:.17e}"));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn write_json(&self, w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Format(e.to_string()))
    }
}
