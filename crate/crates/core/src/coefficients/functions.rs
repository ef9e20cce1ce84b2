//! Closed-form scalar building blocks: trigonometric polynomials for the
//! periodic parts and sums of radial bumps for the defects.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// A scalar function with an analytic gradient.
pub trait ScalarFn {
    fn value(&self, x: &[f64; 3]) -> f64;
    fn gradient(&self, x: &[f64; 3]) -> [f64; 3];
    fn is_zero(&self) -> bool;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierTerm {
    /// Integer wavevector.
    pub k: [i32; 3],
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

/// `constant + Σ cos_t cos(2π k_t·x) + sin_t sin(2π k_t·x)`; 1-periodic in
/// every variable.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FourierSeries {
    #[serde(default)]
    pub constant: f64,
    #[serde(default)]
    pub terms: Vec<FourierTerm>,
}

impl FourierSeries {
    pub fn constant(c: f64) -> Self {
        FourierSeries {
            constant: c,
            terms: Vec::new(),
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn sin(k: [i32; 3], amp: f64) -> Self {
        FourierSeries {
            constant: 0.0,
            terms: vec![FourierTerm { k, cos: 0.0, sin: amp }],
        }
    }

    pub fn cos(k: [i32; 3], amp: f64) -> Self {
        FourierSeries {
            constant: 0.0,
            terms: vec![FourierTerm { k, cos: amp, sin: 0.0 }],
        }
    }

    pub fn plus(mut self, other: FourierSeries) -> Self {
        self.constant += other.constant;
        self.terms.extend(other.terms);
        self
    }

    /// `amp · Π_{j<d} cos(2π x_j)` expanded into plane waves.
    pub fn cos_product(d: usize, amp: f64) -> Self {
        let mut terms = Vec::new();
        let w = amp / 2f64.powi(d as i32 - 1);
        for signs in 0..(1u32 << (d - 1)) {
            let mut k = [0i32; 3];
            k[0] = 1;
            for j in 1..d {
                k[j] = if signs & (1 << (j - 1)) != 0 { -1 } else { 1 };
            }
            terms.push(FourierTerm { k, cos: w, sin: 0.0 });
        }
        FourierSeries { constant: 0.0, terms }
    }

    /// Mean over the unit cell.
    pub fn mean(&self) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .filter(|t| t.k == [0, 0, 0])
                .map(|t| t.cos)
                .sum::<f64>()
    }
}

impl ScalarFn for FourierSeries {
    fn value(&self, x: &[f64; 3]) -> f64 {
        self.constant
            + self
                .terms
                .iter()
                .map(|t| {
                    let th = 2.0 * PI * (t.k[0] as f64 * x[0] + t.k[1] as f64 * x[1] + t.k[2] as f64 * x[2]);
                    t.cos * th.cos() + t.sin * th.sin()
                })
                .sum::<f64>()
    }

    fn gradient(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for t in &self.terms {
            let th = 2.0 * PI * (t.k[0] as f64 * x[0] + t.k[1] as f64 * x[1] + t.k[2] as f64 * x[2]);
            let dth = -t.cos * th.sin() + t.sin * th.cos();
            for (gi, &ki) in g.iter_mut().zip(&t.k) {
                *gi += 2.0 * PI * ki as f64 * dth;
            }
        }
        g
    }

    fn is_zero(&self) -> bool {
        self.constant == 0.0 && self.terms.iter().all(|t| t.cos == 0.0 && t.sin == 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BumpProfile {
    /// `exp(-ρ²/2)`
    Gaussian,
    /// `(1 + ρ²)^{-γ/2}`, decaying like `|x|^{-γ}`
    Algebraic { gamma: f64 },
}

/// `amplitude · profile(|x - center| / width)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    #[serde(default)]
    pub center: [f64; 3],
    pub amplitude: f64,
    pub width: f64,
    pub profile: BumpProfile,
}

impl Bump {
    pub fn gaussian(center: [f64; 3], amplitude: f64, width: f64) -> Self {
        Bump {
            center,
            amplitude,
            width,
            profile: BumpProfile::Gaussian,
        }
    }

    fn rho2(&self, x: &[f64; 3]) -> f64 {
        (0..3).map(|i| (x[i] - self.center[i]).powi(2)).sum::<f64>() / (self.width * self.width)
    }

    fn value(&self, x: &[f64; 3]) -> f64 {
        let r2 = self.rho2(x);
        self.amplitude
            * match self.profile {
                BumpProfile::Gaussian => (-0.5 * r2).exp(),
                BumpProfile::Algebraic { gamma } => (1.0 + r2).powf(-0.5 * gamma),
            }
    }

    fn gradient(&self, x: &[f64; 3]) -> [f64; 3] {
        let r2 = self.rho2(x);
        // d/dx_i profile = factor · (x_i - c_i) / w²
        let factor = -self.amplitude
            * match self.profile {
                BumpProfile::Gaussian => (-0.5 * r2).exp(),
                BumpProfile::Algebraic { gamma } => gamma * (1.0 + r2).powf(-0.5 * gamma - 1.0),
            };
        let w2 = self.width * self.width;
        [
            factor * (x[0] - self.center[0]) / w2,
            factor * (x[1] - self.center[1]) / w2,
            factor * (x[2] - self.center[2]) / w2,
        ]
    }
}

/// Sum of bumps; the empty sum is the zero function.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BumpSum {
    #[serde(default)]
    pub bumps: Vec<Bump>,
}

impl BumpSum {
    pub fn zero() -> Self {
        BumpSum { bumps: Vec::new() }
    }

    pub fn single(b: Bump) -> Self {
        BumpSum { bumps: vec![b] }
    }

    pub fn scaled(&self, t: f64) -> Self {
        BumpSum {
            bumps: self
                .bumps
                .iter()
                .map(|b| Bump {
                    amplitude: t * b.amplitude,
                    ..b.clone()
                })
                .collect(),
        }
    }

    /// Slowest algebraic decay exponent among the bumps (`∞` when all are
    /// Gaussian or the sum is empty).
    pub fn decay_exponent(&self) -> f64 {
        self.bumps
            .iter()
            .filter(|b| b.amplitude != 0.0)
            .map(|b| match b.profile {
                BumpProfile::Gaussian => f64::INFINITY,
                BumpProfile::Algebraic { gamma } => gamma,
            })
            .fold(f64::INFINITY, f64::min)
    }
}

impl ScalarFn for BumpSum {
    fn value(&self, x: &[f64; 3]) -> f64 {
        self.bumps.iter().map(|b| b.value(x)).sum()
    }

    fn gradient(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut g = [0.0; 3];
        for b in &self.bumps {
            let gb = b.gradient(x);
            for i in 0..3 {
                g[i] += gb[i];
            }
        }
        g
    }

    fn is_zero(&self) -> bool {
        self.bumps.iter().all(|b| b.amplitude == 0.0)
    }
}

/// Symmetric `d x d` matrix function stored by its upper triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCoef<S> {
    d: usize,
    upper: Vec<S>,
}

impl<S: ScalarFn + Clone> MatrixCoef<S> {
    /// `upper` lists entries `(0,0), (0,1), .., (0,d-1), (1,1), ..`.
    pub fn from_upper(d: usize, upper: Vec<S>) -> Self {
        assert_eq!(upper.len(), d * (d + 1) / 2, "wrong number of upper-triangular entries");
        MatrixCoef { d, upper }
    }

    /// `s · Id`.
    pub fn isotropic(d: usize, s: S, zero: S) -> Self {
        let mut upper = Vec::new();
        for i in 0..d {
            for j in i..d {
                upper.push(if i == j { s.clone() } else { zero.clone() });
            }
        }
        MatrixCoef { d, upper }
    }

    fn slot(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        i * self.d - i * (i + 1) / 2 + j
    }

    pub fn entry(&self, i: usize, j: usize) -> &S {
        &self.upper[self.slot(i, j)]
    }

    pub fn value(&self, x: &[f64; 3]) -> [[f64; 3]; 3] {
        let mut m = [[0.0; 3]; 3];
        for i in 0..self.d {
            for j in i..self.d {
                let v = self.upper[self.slot(i, j)].value(x);
                m[i][j] = v;
                m[j][i] = v;
            }
        }
        m
    }

    /// Column divergence `(Σ_i ∂_i M_ij)_j`.
    pub fn divergence(&self, x: &[f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (j, o) in out.iter_mut().enumerate().take(self.d) {
            for i in 0..self.d {
                *o += self.entry(i, j).gradient(x)[i];
            }
        }
        out
    }

    pub fn is_zero(&self) -> bool {
        self.upper.iter().all(|s| s.is_zero())
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> Self {
        MatrixCoef {
            d: self.d,
            upper: self.upper.iter().map(f).collect(),
        }
    }
}

/// Vector function given by components or as the gradient of a potential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorCoef<S> {
    Components(Vec<S>),
    Gradient(S),
}

impl<S: ScalarFn + Clone> VectorCoef<S> {
    pub fn value(&self, x: &[f64; 3]) -> [f64; 3] {
        match self {
            VectorCoef::Components(c) => {
                let mut v = [0.0; 3];
                for (vi, ci) in v.iter_mut().zip(c) {
                    *vi = ci.value(x);
                }
                v
            }
            VectorCoef::Gradient(p) => p.gradient(x),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            VectorCoef::Components(c) => c.iter().all(|s| s.is_zero()),
            VectorCoef::Gradient(p) => p.is_zero(),
        }
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> Self {
        match self {
            VectorCoef::Components(c) => VectorCoef::Components(c.iter().map(f).collect()),
            VectorCoef::Gradient(p) => VectorCoef::Gradient(f(p)),
        }
    }
}
