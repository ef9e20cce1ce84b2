//! Coefficient model `a = a_per + ã`, `b = b_per + b̃`: closed-form periodic
//! parts, decaying defects, a catalog of families and assumption checks.

mod catalog;
mod functions;
pub(crate) mod validate;

pub use catalog::{balance_sin_drift_defect, build_family, family_names, CATALOG};
pub use functions::{
    Bump, BumpProfile, BumpSum, FourierSeries, FourierTerm, MatrixCoef, ScalarFn, VectorCoef,
};
pub use validate::{validate, DecayFit, Flag, ValidationReport};

use serde::Serialize;

use crate::fields::Grid;

/// Which part of the coefficients to sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Periodic,
    Defect,
    Full,
}

/// Coefficients sampled at the nodes of a grid: `a[i d + j]` and `b[j]` are
/// node arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub d: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
}

impl Sampled {
    pub fn a(&self, i: usize, j: usize) -> &[f64] {
        &self.a[i * self.d + j]
    }

    pub fn zeros(d: usize, nn: usize) -> Self {
        Sampled {
            d,
            a: vec![vec![0.0; nn]; d * d],
            b: vec![vec![0.0; nn]; d],
        }
    }

    /// Mean of each diagonal entry (used to scale preconditioners).
    pub fn mean_diagonal(&self) -> Vec<f64> {
        (0..self.d)
            .map(|i| {
                let c = self.a(i, i);
                c.iter().sum::<f64>() / c.len() as f64
            })
            .collect()
    }

    pub fn scaled(&self, t: f64) -> Self {
        let s = |v: &Vec<Vec<f64>>| v.iter().map(|c| c.iter().map(|x| t * x).collect()).collect();
        Sampled {
            d: self.d,
            a: s(&self.a),
            b: s(&self.b),
        }
    }
}

/// The four coefficient fields with their declared decay exponents and
/// ellipticity bounds. Immutable once built; evaluation is pure.
#[derive(Debug, Clone, Serialize)]
pub struct CoefficientSet {
    pub family: String,
    pub params: serde_json::Value,
    pub d: usize,
    pub a_per: MatrixCoef<FourierSeries>,
    pub b_per: VectorCoef<FourierSeries>,
    pub a_tilde: MatrixCoef<BumpSum>,
    pub b_tilde: VectorCoef<BumpSum>,
    /// Declared decay exponent of `ã` (`ã ∈ L^r`).
    pub r: f64,
    /// Declared decay exponent of `b̃` (`b̃ ∈ L^s`).
    pub s: f64,
    /// Declared ellipticity bounds of `a`.
    pub lambda: f64,
    pub big_lambda: f64,
    /// Families built to violate a hypothesis on purpose.
    pub counterexample: bool,
}

impl CoefficientSet {
    pub fn has_defect(&self) -> bool {
        !self.a_tilde.is_zero() || !self.b_tilde.is_zero()
    }

    pub fn a_per_at(&self, x: &[f64; 3]) -> [[f64; 3]; 3] {
        self.a_per.value(x)
    }

    pub fn b_per_at(&self, x: &[f64; 3]) -> [f64; 3] {
        self.b_per.value(x)
    }

    pub fn a_tilde_at(&self, x: &[f64; 3]) -> [[f64; 3]; 3] {
        self.a_tilde.value(x)
    }

    pub fn b_tilde_at(&self, x: &[f64; 3]) -> [f64; 3] {
        self.b_tilde.value(x)
    }

    pub fn a_at(&self, x: &[f64; 3]) -> [[f64; 3]; 3] {
        let (p, t) = (self.a_per.value(x), self.a_tilde.value(x));
        let mut m = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = p[i][j] + t[i][j];
            }
        }
        m
    }

    pub fn b_at(&self, x: &[f64; 3]) -> [f64; 3] {
        let (p, t) = (self.b_per.value(x), self.b_tilde.value(x));
        [p[0] + t[0], p[1] + t[1], p[2] + t[2]]
    }

    fn eval(&self, x: &[f64; 3], part: Part) -> ([[f64; 3]; 3], [f64; 3]) {
        match part {
            Part::Periodic => (self.a_per_at(x), self.b_per_at(x)),
            Part::Defect => (self.a_tilde_at(x), self.b_tilde_at(x)),
            Part::Full => (self.a_at(x), self.b_at(x)),
        }
    }

    /// Sample at the nodes of a grid.
    pub fn sample(&self, grid: &Grid, part: Part) -> Sampled {
        self.sample_map(grid, part, |x| *x, 1.0)
    }

    /// Sample `a(φ(x))` and `scale · b(φ(x))`, e.g. `φ(x) = x/ε`, `scale = 1/ε`
    /// for the oscillatory problem.
    pub fn sample_map(&self, grid: &Grid, part: Part, phi: impl Fn(&[f64; 3]) -> [f64; 3], scale: f64) -> Sampled {
        let d = self.d;
        let nn = grid.num_nodes();
        let mut out = Sampled::zeros(d, nn);
        for k in 0..nn {
            let y = phi(&grid.point(k));
            let (a, b) = self.eval(&y, part);
            for i in 0..d {
                for j in 0..d {
                    out.a[i * d + j][k] = a[i][j];
                }
                out.b[i][k] = scale * b[i];
            }
        }
        out
    }

    /// Copy without the defect.
    pub fn periodic_only(&self) -> CoefficientSet {
        self.with_defect_scaled(0.0)
    }

    /// Copy with `(ã, b̃)` multiplied by `t`.
    pub fn with_defect_scaled(&self, t: f64) -> CoefficientSet {
        let mut c = self.clone();
        c.a_tilde = self.a_tilde.map(|s| s.scaled(t));
        c.b_tilde = self.b_tilde.map(|s| s.scaled(t));
        c
    }

    /// `q*` with `1/q* = 1/max(r, s) - 1/d`; infinite when the right-hand side
    /// is not positive.
    pub fn q_star(&self) -> f64 {
        shifted_exponent(self.r.max(self.s), self.d, 1.0)
    }

    /// `q'` with `1/q' = min(1/r - 1/d, 1/s - 1/d)`, the integrability of `m̃`.
    pub fn q_prime(&self) -> f64 {
        shifted_exponent(self.r.max(self.s), self.d, 1.0)
    }

    /// `α` with `1/α = min(1/r - 2/d, 1/s - 2/d)`, the integrability of `B̃`.
    pub fn alpha(&self) -> f64 {
        shifted_exponent(self.r.max(self.s), self.d, 2.0)
    }
}

fn shifted_exponent(p: f64, d: usize, shift: f64) -> f64 {
    let inv = 1.0 / p - shift / d as f64;
    if inv > 0.0 {
        1.0 / inv
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn exponents_for_the_bump_family() {
        let cs = build_family("gaussian-bump-defect", &json!({})).unwrap();
        assert!((cs.q_star() - 2.0).abs() < 1e-12);
        assert!((cs.q_prime() - 2.0).abs() < 1e-12);
        assert!((cs.alpha() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn defect_scaling_is_linear() {
        let cs = build_family("gaussian-bump-defect", &json!({})).unwrap();
        let x = [0.3, -0.2, 0.5];
        let two = cs.with_defect_scaled(2.0);
        assert_eq!(two.b_tilde_at(&x)[0], 2.0 * cs.b_tilde_at(&x)[0]);
        assert!(!cs.periodic_only().has_defect());
    }
}
