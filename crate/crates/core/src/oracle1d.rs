//! Closed-form references: one-dimensional integrating-factor formulas for
//! the measure and correctors of `-w'' + b (p + w') = 0`, and the measure
//! `exp(-ψ̃)` of a gradient-field drift defect.
//!
//! The standing theory is stated for `d >= 3`; the one-dimensional formulas
//! are used here only as ground truth for the solvers. Every antiderivative
//! is a composite Gauss-Legendre quadrature, accurate far beyond the grid
//! solvers it checks.

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::quadrature::{Antiderivative, Composite};

pub type Fn1 = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type Boxed = Box<dyn Fn(f64) -> f64 + Send + Sync>;

fn boxed(f: &Fn1) -> Boxed {
    let f = f.clone();
    Box::new(move |x| f(x))
}

const CELL_PANELS: usize = 64;

/// The periodic integrating factor `B_per(x) = ∫_0^x b_per` and its averages.
pub struct OneDProfile {
    b_per: Fn1,
    anti: Antiderivative<Boxed>,
    /// `⟨e^{B_per}⟩`.
    pub mean_exp: f64,
    /// `⟨e^{-B_per}⟩`.
    pub mean_exp_neg: f64,
}

impl OneDProfile {
    pub fn new(b_per: Fn1) -> Self {
        let anti = Antiderivative::new(boxed(&b_per), 0.0, 1.0, CELL_PANELS);
        let mut p = OneDProfile {
            b_per,
            anti,
            mean_exp: 0.0,
            mean_exp_neg: 0.0,
        };
        let q = Composite::default();
        p.mean_exp = q.integrate(&|x| p.big_b(x).exp(), 0.0, 1.0, CELL_PANELS);
        p.mean_exp_neg = q.integrate(&|x| (-p.big_b(x)).exp(), 0.0, 1.0, CELL_PANELS);
        p
    }

    pub fn b(&self, x: f64) -> f64 {
        (self.b_per)(x)
    }

    /// `⟨b_per⟩ = B_per(1)`.
    pub fn mean_drift(&self) -> f64 {
        self.anti.total()
    }

    /// `B_per(x)` for any real `x`, extended by `B_per(x + 1) = B_per(x) + ⟨b_per⟩`.
    pub fn big_b(&self, x: f64) -> f64 {
        let k = x.floor();
        self.anti.eval(x - k) + k * self.anti.total()
    }
}

/// Periodic corrector of the one-dimensional cell problem with `a = 1`.
pub struct PeriodicCorrector1d {
    pub profile: OneDProfile,
    w_anti: Option<(Antiderivative<Boxed>, f64)>,
}

/// `w_per` for `-w'' + b_per (1 + w') = 0`: `w' = -1 + e^{B_per}/⟨e^{B_per}⟩`.
/// Fails when `⟨b_per⟩ ≠ 0`, in which case no periodic corrector exists.
pub fn periodic_corrector_1d(b_per: Fn1) -> Result<PeriodicCorrector1d> {
    let profile = OneDProfile::new(b_per);
    let drift = profile.mean_drift();
    if drift.abs() > 1e-12 {
        return Err(Error::DriftViolation { drift: vec![drift] });
    }
    Ok(PeriodicCorrector1d { profile, w_anti: None })
}

impl PeriodicCorrector1d {
    pub fn w_prime(&self, x: f64) -> f64 {
        -1.0 + self.profile.big_b(x).exp() / self.profile.mean_exp
    }

    pub fn w_second(&self, x: f64) -> f64 {
        self.profile.b(x) * self.profile.big_b(x).exp() / self.profile.mean_exp
    }

    /// `m_per = e^{-B_per}/⟨e^{-B_per}⟩`.
    pub fn m_per(&self, x: f64) -> f64 {
        (-self.profile.big_b(x)).exp() / self.profile.mean_exp_neg
    }

    /// `A* = 1/(⟨e^{B}⟩⟨e^{-B}⟩)`.
    pub fn a_star(&self) -> f64 {
        1.0 / (self.profile.mean_exp * self.profile.mean_exp_neg)
    }

    /// Tabulate `w_per` itself (zero mean); needed before [`Self::w`].
    pub fn with_values(mut self) -> Self {
        let wp: Boxed = {
            let prof = OneDProfile::new(self.profile.b_per.clone());
            Box::new(move |x| -1.0 + prof.big_b(x).exp() / prof.mean_exp)
        };
        let anti = Antiderivative::new(wp, 0.0, 1.0, CELL_PANELS);
        let mean = Composite::default().integrate(&|x| anti.eval(x), 0.0, 1.0, CELL_PANELS);
        self.w_anti = Some((anti, mean));
        self
    }

    /// Zero-mean `w_per(x)`; panics unless built with [`Self::with_values`].
    pub fn w(&self, x: f64) -> f64 {
        let (anti, mean) = self.w_anti.as_ref().expect("corrector values not tabulated");
        anti.eval(x - x.floor()) - mean
    }
}

/// Whether the defect corrector grows sublinearly: both half-line integrals
/// of `b̃` settle and the whole-line integral vanishes.
#[derive(Debug, Clone, Serialize)]
pub struct SublinearityVerdict {
    pub left: f64,
    pub right: f64,
    pub total: f64,
    /// `∫ b̃` over the outer halves `[-R, -R/2]` and `[R/2, R]` of the window.
    pub left_tail: f64,
    pub right_tail: f64,
    pub sublinear: bool,
}

/// Defect corrector of `-w'' + (b_per + b̃)(1 + w') = 0` with
/// `w = w_per + w̃` on the window `[-R, R]`, where `B̃(x) = ∫_{-R}^x b̃` stands
/// in for the integral from `-∞`.
pub struct DefectCorrector1d {
    pub periodic: PeriodicCorrector1d,
    b_tilde: Fn1,
    big_b_tilde: Antiderivative<Boxed>,
    window: f64,
    pub verdict: SublinearityVerdict,
}

/// `w̃' = e^{B_per}/⟨e^{B_per}⟩ (e^{B̃} - 1)` with `B̃' = b̃`, and the verdict.
pub fn defect_corrector_1d(b_per: Fn1, b_tilde: Fn1, window: f64) -> Result<DefectCorrector1d> {
    if !(window > 0.0) {
        return Err(Error::InvalidParameter(format!("window half-width must be positive, got {window}")));
    }
    let periodic = periodic_corrector_1d(b_per)?;
    let panels = (32.0 * window).ceil() as usize;
    let big_b_tilde = Antiderivative::new(boxed(&b_tilde), -window, window, 2 * panels);
    let q = Composite::default();
    let f = |x: f64| b_tilde(x);
    let left = q.integrate(&f, -window, 0.0, panels);
    let right = q.integrate(&f, 0.0, window, panels);
    let left_tail = q.integrate(&f, -window, -0.5 * window, panels);
    let right_tail = q.integrate(&f, 0.5 * window, window, panels);
    let scale = q.integrate(&|x| b_tilde(x).abs(), -window, window, 2 * panels).max(1.0);
    let tol = 1e-8 * scale;
    let total = left + right;
    let verdict = SublinearityVerdict {
        left,
        right,
        total,
        left_tail,
        right_tail,
        sublinear: left_tail.abs() <= tol && right_tail.abs() <= tol && total.abs() <= tol,
    };
    Ok(DefectCorrector1d {
        periodic,
        b_tilde,
        big_b_tilde,
        window,
        verdict,
    })
}

impl DefectCorrector1d {
    pub fn b_tilde(&self, x: f64) -> f64 {
        (self.b_tilde)(x)
    }

    pub fn big_b_tilde(&self, x: f64) -> f64 {
        self.big_b_tilde.eval(x)
    }

    pub fn w_tilde_prime(&self, x: f64) -> f64 {
        let p = &self.periodic.profile;
        p.big_b(x).exp() / p.mean_exp * (self.big_b_tilde(x).exp() - 1.0)
    }

    /// `m̃ = m_per (e^{-B̃} - 1)`.
    pub fn m_tilde(&self, x: f64) -> f64 {
        self.periodic.m_per(x) * ((-self.big_b_tilde(x)).exp() - 1.0)
    }

    /// `w̃(x) = ∫_{-R}^x w̃'`.
    pub fn w_tilde(&self, x: f64) -> f64 {
        let panels = ((x + self.window) * 32.0).ceil().max(1.0) as usize;
        Composite::default().integrate(&|t| self.w_tilde_prime(t), -self.window, x, panels)
    }

    pub fn window(&self) -> f64 {
        self.window
    }
}

/// Full measure `exp(-ψ̃)` for `a = Id`, `b_per = 0`, `b̃ = ∇ψ̃`.
pub struct GradientDefectMeasure<F: Fn(&[f64; 3]) -> f64> {
    pub psi: F,
}

pub fn gradient_defect_measure<F: Fn(&[f64; 3]) -> f64>(psi: F) -> GradientDefectMeasure<F> {
    GradientDefectMeasure { psi }
}

impl<F: Fn(&[f64; 3]) -> f64> GradientDefectMeasure<F> {
    pub fn m(&self, x: &[f64; 3]) -> f64 {
        (-(self.psi)(x)).exp()
    }

    pub fn m_tilde(&self, x: &[f64; 3]) -> f64 {
        self.m(x) - 1.0
    }
}

/// One-dimensional corrector of `-(e^{-ψ}(1 + w̃'))' = 0`.
///
/// On the whole line sublinearity forces `w̃' = e^{ψ} - 1`. On `[-L, L]` with
/// `w̃(±L) = 0` the flux constant changes to `C_L = 2L / ∫ e^{ψ}`, giving
/// `w̃' = C_L e^{ψ} - 1`.
pub struct GradientDefect1d {
    psi: Fn1,
    pub flux: f64,
}

impl GradientDefect1d {
    pub fn whole_line(psi: Fn1) -> Self {
        GradientDefect1d { psi, flux: 1.0 }
    }

    pub fn on_box(psi: Fn1, half_width: f64) -> Self {
        let panels = (32.0 * half_width).ceil() as usize;
        let int = Composite::default().integrate(&|x| psi(x).exp(), -half_width, half_width, panels);
        GradientDefect1d {
            psi,
            flux: 2.0 * half_width / int,
        }
    }

    pub fn w_tilde_prime(&self, x: f64) -> f64 {
        self.flux * (self.psi)(x).exp() - 1.0
    }

    pub fn m(&self, x: f64) -> f64 {
        (-(self.psi)(x)).exp()
    }
}

/// Write sampled oracle functions as CSV with an `x` column.
pub fn write_samples(mut w: impl Write, xs: &[f64], columns: &[(&str, &dyn Fn(f64) -> f64)]) -> Result<()> {
    let header: Vec<&str> = std::iter::once("x").chain(columns.iter().map(|(n, _)| *n)).collect();
    writeln!(w, "{}", header.join(","))?;
    for &x in xs {
        let row: Vec<String> = std::iter::once(x)
            .chain(columns.iter().map(|(_, f)| f(x)))
            .map(|v| format!("{v:.17e}"))
            .collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}
