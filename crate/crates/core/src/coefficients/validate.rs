//! Checks of the standing assumptions on a sampled probe grid.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen};
use serde::Serialize;

use super::CoefficientSet;
use crate::error::{Error, Result};
use crate::fields::{annular_profile, BoxGrid, Field, Grid};
use crate::numerics::fit::{fit_loglog, LineFit};

/// Least-squares fit of `log ‖f‖_{L^q(shell)}` against `log R` over the
/// complete dyadic shells of the probe box.
#[derive(Debug, Clone, Serialize)]
pub struct DecayFit {
    pub q: f64,
    pub radii: Vec<f64>,
    pub norms: Vec<f64>,
    pub fit: Option<LineFit>,
    /// `-slope`: positive when the shell contributions to `‖f‖_{L^q}^q` shrink
    /// geometrically, i.e. the dyadic sum converges in the observed range.
    /// Infinite when the field vanishes on the outer shells.
    pub margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Flag {
    NotElliptic { lambda_est: f64 },
    DecayInconsistent { which: String, declared: f64, margin: f64 },
    ExponentNotBelowDimension { which: String, value: f64, d: usize },
}

impl Flag {
    pub fn describe(&self) -> String {
        match self {
            Flag::NotElliptic { lambda_est } => format!(
                "the diffusion matrix is not uniformly elliptic: smallest sampled eigenvalue {lambda_est:.4e} is not positive"
            ),
            Flag::DecayInconsistent { which, declared, margin } => format!(
                "{which} does not decay fast enough to lie in L^{declared}: the shell norms do not shrink (margin {margin:.3})"
            ),
            Flag::ExponentNotBelowDimension { which, value, d } => format!(
                "the integrability exponent of {which} must lie in [1, d): got {value} with d = {d}"
            ),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub family: String,
    pub lambda_est: f64,
    pub big_lambda_est: f64,
    /// Smallest eigenvalue of the periodic part alone.
    pub lambda_per_est: f64,
    pub decay_fit_a: Option<DecayFit>,
    pub decay_fit_b: Option<DecayFit>,
    pub counterexample: bool,
    pub flags: Vec<Flag>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Smallest and largest eigenvalue of the leading `d × d` block.
pub(crate) fn eig_bounds(a: &[[f64; 3]; 3], d: usize) -> (f64, f64) {
    let sym = |i: usize, j: usize| 0.5 * (a[i][j] + a[j][i]);
    match d {
        1 => (a[0][0], a[0][0]),
        2 => {
            let e = SymmetricEigen::new(Matrix2::from_fn(sym)).eigenvalues;
            (e.min(), e.max())
        }
        _ => {
            let e = SymmetricEigen::new(Matrix3::from_fn(sym)).eigenvalues;
            (e.min(), e.max())
        }
    }
}

fn decay_fit(f: &Field, q: f64) -> Result<DecayFit> {
    let prof = annular_profile(f, q, 0)?;
    let shells: Vec<_> = prof.shells.iter().filter(|s| s.complete).collect();
    let radii: Vec<f64> = shells.iter().map(|s| s.inner).collect();
    let norms: Vec<f64> = shells.iter().map(|s| s.norm).collect();
    let positive: Vec<(f64, f64)> = radii
        .iter()
        .zip(&norms)
        .filter(|(_, n)| **n > 0.0)
        .map(|(r, n)| (*r, *n))
        .collect();
    let vanishes_outside = norms.last().is_none_or(|n| *n == 0.0);
    if vanishes_outside || positive.len() < 2 {
        return Ok(DecayFit { q, radii, norms, fit: None, margin: f64::INFINITY });
    }
    let (x, y): (Vec<f64>, Vec<f64>) = positive.into_iter().unzip();
    let fit = fit_loglog(&x, &y)?;
    Ok(DecayFit { q, radii, norms, margin: -fit.slope, fit: Some(fit) })
}

/// Measure ellipticity and decay of `cs` on `probe`. Assumption violations are
/// reported as flags; only unusable probe grids are errors.
pub fn validate(cs: &CoefficientSet, probe: &BoxGrid) -> Result<ValidationReport> {
    if probe.d() != cs.d {
        return Err(Error::GridMismatch(format!(
            "probe grid is {}-dimensional, coefficients are {}-dimensional",
            probe.d(),
            cs.d
        )));
    }
    if probe.nodes_per_unit() < 16.0 {
        return Err(Error::Precondition(format!(
            "the probe grid must resolve the period with at least 16 nodes per unit, got {}",
            probe.nodes_per_unit()
        )));
    }
    let grid = Grid::from(*probe);
    let d = cs.d;
    let (mut lo, mut hi, mut lo_per) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..grid.num_nodes() {
        let x = grid.point(k);
        let (l, h) = eig_bounds(&cs.a_at(&x), d);
        lo = lo.min(l);
        hi = hi.max(h);
        lo_per = lo_per.min(eig_bounds(&cs.a_per_at(&x), d).0);
    }
    let mut flags = Vec::new();
    let lambda_est = lo.min(lo_per);
    if !(lambda_est > 0.0) {
        flags.push(Flag::NotElliptic { lambda_est });
    }

    let mut fit_for = |which: &str, zero: bool, field: Field, q: f64| -> Result<Option<DecayFit>> {
        if zero {
            return Ok(None);
        }
        let fit = decay_fit(&field, q)?;
        if !(fit.margin >= 0.0) {
            flags.push(Flag::DecayInconsistent { which: which.into(), declared: q, margin: fit.margin });
        }
        Ok(Some(fit))
    };
    let a_field = Field::matrix_fn(grid, |x| cs.a_tilde_at(x));
    let b_field = Field::vector_fn(grid, |x| cs.b_tilde_at(x));
    let decay_fit_a = fit_for("the diffusion defect", cs.a_tilde.is_zero(), a_field, cs.r)?;
    let decay_fit_b = fit_for("the drift defect", cs.b_tilde.is_zero(), b_field, cs.s)?;

    if cs.has_defect() {
        let df = d as f64;
        for (which, v) in [("the diffusion defect", cs.r), ("the drift defect", cs.s)] {
            if !(1.0..df).contains(&v) {
                flags.push(Flag::ExponentNotBelowDimension { which: which.into(), value: v, d });
            }
        }
    }
    Ok(ValidationReport {
        family: cs.family.clone(),
        lambda_est,
        big_lambda_est: hi,
        lambda_per_est: lo_per,
        decay_fit_a,
        decay_fit_b,
        counterexample: cs.counterexample,
        flags,
    })
}
