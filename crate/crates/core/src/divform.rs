//! The divergence-form rewrite `-div(𝒜∇u) = m L u` with `𝒜 = m a - ℬ`:
//! assembly on a box (periodic part tiled plus the defect part) or on the
//! torus (periodic part alone), the discrete identity residual, and the
//! divergence-form route to the defect corrector.

use serde::{Deserialize, Serialize};

use crate::cell::CellSolution;
use crate::coefficients::validate::eig_bounds;
use crate::coefficients::{CoefficientSet, Part, Sampled};
use crate::defect::{BoxProblem, DefectSolution, DecayReport};
use crate::error::{Error, Result};
use crate::fields::{lq_norm, BoxGrid, Field, Grid, Region};
use crate::operators::{solve_dirichlet, tile, Discretization, Scheme, SolveReport};

/// Assembled divergence-form coefficient and weight.
#[derive(Debug, Clone)]
pub struct DivFormProblem {
    pub grid: Grid,
    pub scheme: Scheme,
    /// Which coefficients `m` and `𝒜` belong to.
    pub part: Part,
    /// `𝒜 = m a - ℬ` (rank 2, no symmetry).
    pub a: Field,
    pub m: Field,
    /// `Ã = m̃ a_per + (m_per + m̃) ã - ℬ̃` on a box.
    pub a_tilde: Option<Field>,
    /// Smallest eigenvalue of the symmetric part of `𝒜` over the nodes.
    pub ellipticity_margin: f64,
    /// `max |Σ_i D_i 𝒜_ij + (m b)_j|` over the inner half-box (whole torus),
    /// relative to `max |m b|` when that is nonzero.
    pub column_divergence: f64,
}

fn margin(a: &Field) -> f64 {
    let d = a.d();
    (0..a.num_nodes())
        .map(|k| {
            let mut s = [[0.0; 3]; 3];
            for i in 0..d {
                for j in 0..d {
                    s[i][j] = 0.5 * (a.entry(i, j)[k] + a.entry(j, i)[k]);
                }
            }
            eig_bounds(&s, d).0
        })
        .fold(f64::INFINITY, f64::min)
}

fn column_divergence(disc: &Discretization, c: &Sampled, a: &Field, m: &Field, nodes: &[usize]) -> f64 {
    let d = disc.d();
    let (mut res, mut scale) = (0.0f64, 0.0f64);
    for j in 0..d {
        let col: Vec<Vec<f64>> = (0..d).map(|i| a.entry(i, j).to_vec()).collect();
        let div = disc.div(&col);
        for &k in nodes {
            let mb = m.data()[k] * c.b[j][k];
            res = res.max((div[k] + mb).abs());
            scale = scale.max(mb.abs());
        }
    }
    if scale > 0.0 {
        res / scale
    } else {
        res
    }
}

fn finish(
    grid: Grid,
    scheme: Scheme,
    part: Part,
    a: Field,
    m: Field,
    a_tilde: Option<Field>,
    c: &Sampled,
) -> Result<DivFormProblem> {
    let ellipticity_margin = margin(&a);
    if !(ellipticity_margin > 0.0) {
        return Err(Error::DiscretizationFault(format!(
            "the divergence-form coefficient is not elliptic (smallest eigenvalue {ellipticity_margin:.3e}); check resolution and box size"
        )));
    }
    let disc = Discretization::new(grid, scheme)?;
    let nodes: Vec<usize> = match grid.as_box() {
        Some(b) => {
            let r = b.half_width() / 2.0;
            (0..grid.num_nodes()).filter(|&k| Region::Ball { radius: r }.contains(&grid.point(k))).collect()
        }
        None => (0..grid.num_nodes()).collect(),
    };
    let column_divergence = column_divergence(&disc, c, &a, &m, &nodes);
    Ok(DivFormProblem {
        grid,
        scheme,
        part,
        a,
        m,
        a_tilde,
        ellipticity_margin,
        column_divergence,
    })
}

/// `𝒜 = 𝒜_per (tiled) + Ã` and `m = m_per + m̃` on the box of `bp`.
pub fn assemble_a(bp: &BoxProblem, cell: &CellSolution, ds: &DefectSolution) -> Result<DivFormProblem> {
    assemble_with_skew(bp, cell, &ds.m_tilde, &ds.b_tilde)
}

/// As [`assemble_a`] with an explicit `ℬ̃` (e.g. from the free-space route).
pub fn assemble_with_skew(
    bp: &BoxProblem,
    cell: &CellSolution,
    m_tilde: &Field,
    b_tilde: &Field,
) -> Result<DivFormProblem> {
    let grid = Grid::from(bp.grid);
    if m_tilde.grid() != &grid || b_tilde.grid() != &grid {
        return Err(Error::GridMismatch("defect fields are not on the problem box".into()));
    }
    let d = bp.disc.d();
    let a_per = tile(&cell.a_div, &grid, 1.0)?;
    let mt = m_tilde.data();
    let m: Vec<f64> = bp.m_per.data().iter().zip(mt).map(|(a, b)| a + b).collect();
    let comps: Vec<Vec<f64>> = (0..d * d)
        .map(|ij| {
            let (i, j) = (ij / d, ij % d);
            (0..m.len())
                .map(|k| mt[k] * bp.periodic.a(i, j)[k] + m[k] * bp.defect.a(i, j)[k] - b_tilde.entry(i, j)[k])
                .collect()
        })
        .collect();
    let a_tilde = Field::from_components(grid, 2, comps)?;
    let a = a_per.add(&a_tilde)?;
    let scheme = Scheme::FiniteDifference { order: bp.options().order };
    finish(grid, scheme, Part::Full, a, Field::scalar(grid, m)?, Some(a_tilde), &bp.full)
}

/// `𝒜_per` and `m_per` on the cell's own torus.
pub fn assemble_periodic(cs: &CoefficientSet, cell: &CellSolution) -> Result<DivFormProblem> {
    let grid = Grid::from(cell.grid);
    let c = cs.sample(&grid, Part::Periodic);
    finish(grid, cell.scheme, Part::Periodic, cell.a_div.clone(), cell.m_per.clone(), None, &c)
}

fn nodes_for_norms(grid: &Grid) -> Vec<usize> {
    if grid.is_torus() {
        (0..grid.num_nodes()).collect()
    } else {
        grid.interior()
    }
}

fn weighted_l2(v: &[f64], nodes: &[usize], w: f64) -> f64 {
    (w * nodes.iter().map(|&k| v[k] * v[k]).sum::<f64>()).sqrt()
}

/// `‖-div(𝒜∇u) - m L u‖_{L²} / ‖u‖_{H²}` over the interior nodes (all torus
/// nodes).
pub fn identity_residual(dp: &DivFormProblem, cs: &CoefficientSet, u: &Field) -> Result<f64> {
    if u.rank() != 0 || u.grid() != &dp.grid {
        return Err(Error::GridMismatch("the test function must be a scalar on the problem grid".into()));
    }
    let disc = Discretization::new(dp.grid, dp.scheme)?;
    let c = cs.sample(&dp.grid, dp.part);
    let lhs = disc.divform(&dp.a.components(), u.data());
    let lu = disc.nondiv(&c, u.data());
    let r: Vec<f64> = lhs.iter().zip(&lu).zip(dp.m.data()).map(|((a, l), m)| a - m * l).collect();
    let nodes = nodes_for_norms(&dp.grid);
    let w = dp.grid.cell_volume();
    let d = disc.d();
    let mut h2 = weighted_l2(u.data(), &nodes, w).powi(2);
    for i in 0..d {
        h2 += weighted_l2(&disc.d1(u.data(), i), &nodes, w).powi(2);
        for j in 0..d {
            h2 += weighted_l2(&disc.d11(u.data(), i, j), &nodes, w).powi(2);
        }
    }
    let h2 = h2.sqrt();
    let res = weighted_l2(&r, &nodes, w);
    Ok(if h2 > 0.0 { res / h2 } else { res })
}

fn problem_box(dp: &DivFormProblem) -> Result<BoxGrid> {
    dp.grid
        .as_box()
        .copied()
        .ok_or_else(|| Error::InvalidGrid("the divergence-form corrector is solved on a box".into()))
}

/// `w̃_p` from `-div(𝒜∇w̃_p) = m (-b̃_p + ã : D² w_per - b̃ · ∇w_per)` with
/// `w̃_p = 0` on the boundary.
pub fn solve_corrector_divform(dp: &DivFormProblem, bp: &BoxProblem, p: usize) -> Result<(Field, SolveReport)> {
    let g = problem_box(dp)?;
    if g != bp.grid {
        return Err(Error::GridMismatch("the assembled coefficient and the defect problem use different boxes".into()));
    }
    let disc = &bp.disc;
    let rhs: Vec<f64> = bp.corrector_rhs(p).iter().zip(dp.m.data()).map(|(r, m)| r * m).collect();
    let a = dp.a.components();
    let op = |u: &[f64]| disc.divform(&a, u);
    let d = disc.d();
    let diag: Vec<f64> = (0..d)
        .map(|i| {
            let e = dp.a.entry(i, i);
            e.iter().sum::<f64>() / e.len() as f64
        })
        .collect();
    let kry = crate::numerics::krylov::KrylovOptions {
        tol: bp.options().tol,
        max_iter: bp.options().max_iter,
        ..Default::default()
    };
    let (w, rep) = solve_dirichlet(disc, &op, &rhs, &diag, &kry)?;
    Ok((Field::scalar(g, w)?, rep))
}

/// Gradient discrepancy between two corrector routes on `|x| <= L/2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RouteDiscrepancy {
    /// `‖∇w₁ - ∇w₂‖_{L²} / ‖∇w₁‖_{L²}`.
    pub l2: f64,
    /// The same ratio at exponent `q*`.
    #[serde(with = "crate::fields::io::exponent")]
    pub q: f64,
    pub lq: f64,
}

pub fn cross_validate(bp: &BoxProblem, w_nondiv: &Field, w_div: &Field, q_star: f64) -> Result<RouteDiscrepancy> {
    let g1 = crate::defect::gradient(bp, w_nondiv)?;
    let g2 = crate::defect::gradient(bp, w_div)?;
    let diff = g1.sub(&g2)?;
    let region = Region::Ball { radius: bp.grid.half_width() / 2.0 };
    let ratio = |q: f64| -> Result<f64> {
        let den = lq_norm(&g1, &[q], region)?;
        let num = lq_norm(&diff, &[q], region)?;
        Ok(if den > 0.0 { num / den } else { num })
    };
    let q = if q_star.is_finite() { q_star } else { f64::INFINITY };
    Ok(RouteDiscrepancy {
        l2: ratio(2.0)?,
        q,
        lq: ratio(q)?,
    })
}

/// Annular decay of `Ã` at exponent `α`.
pub fn a_tilde_decay(dp: &DivFormProblem, alpha: f64, first_k: i32, fit_from: f64) -> Result<DecayReport> {
    let at = dp
        .a_tilde
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter("the periodic problem has no defect part".into()))?;
    crate::defect::decay_profile(at, "a_tilde", alpha, None, first_k, fit_from)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{solve_cell, CellOptions};
    use crate::coefficients::build_family;
    use crate::defect::{matched_cell, solve_corrector_defect, solve_defect, DefectOptions};
    use crate::fields::TorusGrid;
    use serde_json::json;
    use std::f64::consts::PI;

    fn boxed(name: &str, p: serde_json::Value, d: usize, half: f64, n: usize, order: usize) -> (CoefficientSet, CellSolution, BoxProblem) {
        let cs = build_family(name, &p).unwrap();
        let g = BoxGrid::centered(d, half, n).unwrap();
        let opts = DefectOptions { order, ..Default::default() };
        let cell = matched_cell(&cs, &g, &opts).unwrap();
        let bp = BoxProblem::new(&cs, &cell, &g, &opts).unwrap();
        (cs, cell, bp)
    }

    #[test]
    fn identity_family_assembles_to_identity() {
        let (cs, cell, bp) = boxed("identity", json!({"d": 2}), 2, 2.0, 32, 2);
        let ds = solve_defect(&bp, &cs).unwrap();
        let dp = assemble_a(&bp, &cell, &ds).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!(dp.a.entry(i, j).iter().all(|v| (v - e).abs() < 1e-12));
            }
        }
        let u = Field::scalar_fn(bp.grid, |x| (PI * x[0] / 2.0).sin() * (PI * x[1] / 2.0).cos());
        assert!(identity_residual(&dp, &cs, &u).unwrap() < 1e-10);
    }

    #[test]
    fn periodic_drift_free_coefficient_is_divergence_free() {
        let cs = build_family("gaussian-bump-defect", &json!({"d": 2, "kappa": 0.0})).unwrap();
        let cell = solve_cell(&cs, &TorusGrid::new(2, 32).unwrap(), &CellOptions::default()).unwrap();
        let dp = assemble_periodic(&cs, &cell).unwrap();
        assert!(dp.column_divergence < 1e-8, "{}", dp.column_divergence);
    }

    #[test]
    fn skew_part_annihilates_symmetric_hessians() {
        let cs = build_family("shear-2d", &json!({})).unwrap();
        let cell = solve_cell(&cs, &TorusGrid::new(2, 32).unwrap(), &CellOptions::default()).unwrap();
        let b = &cell.b_per;
        let h = [[1.3, -0.7], [-0.7, 2.1]];
        for k in 0..b.num_nodes() {
            let s: f64 = (0..2).flat_map(|i| (0..2).map(move |j| (i, j))).map(|(i, j)| b.entry(i, j)[k] * h[i][j]).sum();
            assert!(s.abs() < 1e-15);
        }
    }

    #[test]
    fn identity_residual_converges_at_second_order_1d() {
        let mut res = Vec::new();
        for &n in &[128usize, 256] {
            let (cs, cell, bp) = boxed("sin-drift-1d", json!({"defect": 0.8}), 1, 4.0, n, 2);
            let ds = solve_defect(&bp, &cs).unwrap();
            let dp = assemble_a(&bp, &cell, &ds).unwrap();
            let u = Field::scalar_fn(bp.grid, |x| (2.0 * PI * x[0]).sin());
            res.push(identity_residual(&dp, &cs, &u).unwrap());
        }
        let ratio = res[0] / res[1];
        assert!((3.5..=4.5).contains(&ratio), "{res:?}");
    }

    #[test]
    fn identity_residual_converges_on_the_shear_torus() {
        let cs = build_family("shear-2d", &json!({})).unwrap();
        let res: Vec<f64> = [16usize, 32]
            .iter()
            .map(|&n| {
                let opts = CellOptions { scheme: Scheme::fd2(), ..Default::default() };
                let cell = solve_cell(&cs, &TorusGrid::new(2, n).unwrap(), &opts).unwrap();
                let dp = assemble_periodic(&cs, &cell).unwrap();
                let u = Field::scalar_fn(cell.grid, |x| (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos());
                identity_residual(&dp, &cs, &u).unwrap()
            })
            .collect();
        let ratio = res[0] / res[1];
        assert!((3.5..=4.5).contains(&ratio), "{res:?}");
    }

    #[test]
    fn routes_agree_for_the_1d_defect() {
        let (cs, cell, bp) = boxed("sin-drift-1d", json!({"defect": 0.8}), 1, 8.0, 1024, 6);
        let ds = solve_defect(&bp, &cs).unwrap();
        let dp = assemble_a(&bp, &cell, &ds).unwrap();
        let (wn, _) = solve_corrector_defect(&bp, 0).unwrap();
        let (wd, _) = solve_corrector_divform(&dp, &bp, 0).unwrap();
        let disc = cross_validate(&bp, &wn, &wd, cs.q_star()).unwrap();
        assert!(disc.l2 < 1e-6, "{disc:?}");
    }

    #[test]
    fn routes_agree_for_the_2d_gradient_defect() {
        let (cs, cell, bp) = boxed("gradient-defect", json!({"d": 2, "sigma": 0.6}), 2, 4.0, 64, 2);
        let ds = solve_defect(&bp, &cs).unwrap();
        let dp = assemble_a(&bp, &cell, &ds).unwrap();
        let (wn, _) = solve_corrector_defect(&bp, 0).unwrap();
        let (wd, _) = solve_corrector_divform(&dp, &bp, 0).unwrap();
        let disc = cross_validate(&bp, &wn, &wd, cs.q_star()).unwrap();
        assert!(disc.l2 < 1e-2, "{disc:?}");
    }

    #[test]
    fn no_defect_gives_zero_divform_corrector() {
        let (cs, cell, bp) = boxed("shear-2d", json!({}), 2, 2.0, 32, 2);
        let ds = solve_defect(&bp, &cs).unwrap();
        let dp = assemble_a(&bp, &cell, &ds).unwrap();
        let (w, _) = solve_corrector_divform(&dp, &bp, 1).unwrap();
        assert!(w.max_abs() < 1e-14);
        let d = cross_validate(&bp, &w, &w, 2.0).unwrap();
        assert_eq!(d.l2, 0.0);
    }
}
