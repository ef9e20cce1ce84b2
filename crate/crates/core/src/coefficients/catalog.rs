//! Built-in coefficient families.

use std::f64::consts::PI;

use serde::Deserialize;
use serde_json::{json, Map, Value};

use super::{Bump, BumpProfile, BumpSum, CoefficientSet, FourierSeries, MatrixCoef, ScalarFn, VectorCoef};
use crate::error::{Error, Result};
use crate::numerics::quadrature::Composite;
use crate::numerics::roots::bisect;

/// Catalog ids with a one-line description.
pub const CATALOG: &[(&str, &str)] = &[
    ("identity", "a = Id, b = 0, no defect"),
    ("sin-drift-1d", "d = 1, a = 1, b_per = amp sin(2πx), optional zero-integral drift defect"),
    ("constant-drift-1d", "d = 1, a = 1, b_per = value; violates the compatibility condition"),
    ("shear-2d", "d = 2, a = Id, b = (β(x2), 0) with β = amp (sin 2πy + cos(4πy)/2)"),
    ("gradient-defect", "a = Id, b_per = 0, b̃ = ∇ψ̃ with a Gaussian ψ̃"),
    ("gaussian-bump-defect", "modulated periodic a and drift plus Gaussian defects in a and b"),
    ("algebraic-decay-defect", "b̃ ~ |x|^(-γ); with γ = 1/2 in d = 1 it is not integrable"),
    ("custom", "Fourier-series periodic part and bump-sum defect read from parameters"),
];

pub fn family_names() -> Vec<&'static str> {
    CATALOG.iter().map(|(n, _)| *n).collect()
}

struct Params<'a> {
    family: &'a str,
    map: Map<String, Value>,
}

impl<'a> Params<'a> {
    fn new(family: &'a str, params: &Value, allowed: &[&str]) -> Result<Self> {
        let map = match params {
            Value::Null => Map::new(),
            Value::Object(m) => m.clone(),
            _ => {
                return Err(Error::InvalidParameter(format!(
                    "parameters of `{family}` must be a table"
                )))
            }
        };
        if let Some(k) = map.keys().find(|k| !allowed.contains(&k.as_str())) {
            return Err(Error::InvalidParameter(format!(
                "`{family}` has no parameter `{k}` (known: {})",
                allowed.join(", ")
            )));
        }
        Ok(Params { family, map })
    }

    fn f(&self, key: &str, default: f64) -> Result<f64> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_f64().filter(|x| x.is_finite()).ok_or_else(|| {
                Error::InvalidParameter(format!("`{}.{key}` must be a finite number", self.family))
            }),
        }
    }

    fn dim(&self, default: usize, allowed: &[usize]) -> Result<usize> {
        let d = match self.map.get("d") {
            None => default,
            Some(v) => v.as_u64().ok_or_else(|| {
                Error::InvalidParameter(format!("`{}.d` must be a positive integer", self.family))
            })? as usize,
        };
        if !allowed.contains(&d) {
            return Err(Error::InvalidParameter(format!(
                "`{}` is defined for d in {allowed:?}, got {d}",
                self.family
            )));
        }
        Ok(d)
    }

    fn flag(&self, key: &str, default: bool) -> Result<bool> {
        match self.map.get(key) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| {
                Error::InvalidParameter(format!("`{}.{key}` must be true or false", self.family))
            }),
        }
    }

    fn resolved(&self) -> Value {
        Value::Object(self.map.clone())
    }
}

fn positive(family: &str, key: &str, v: f64) -> Result<f64> {
    if v > 0.0 {
        Ok(v)
    } else {
        Err(Error::InvalidParameter(format!("`{family}.{key}` must be positive, got {v}")))
    }
}

fn zero_vec_per(d: usize) -> VectorCoef<FourierSeries> {
    VectorCoef::Components(vec![FourierSeries::zero(); d])
}

fn zero_vec_def(d: usize) -> VectorCoef<BumpSum> {
    VectorCoef::Components(vec![BumpSum::zero(); d])
}

fn identity_a(d: usize) -> MatrixCoef<FourierSeries> {
    MatrixCoef::isotropic(d, FourierSeries::constant(1.0), FourierSeries::zero())
}

fn zero_a_tilde(d: usize) -> MatrixCoef<BumpSum> {
    MatrixCoef::isotropic(d, BumpSum::zero(), BumpSum::zero())
}

#[allow(clippy::too_many_arguments)]
fn set(
    family: &str,
    params: Value,
    d: usize,
    a_per: MatrixCoef<FourierSeries>,
    b_per: VectorCoef<FourierSeries>,
    a_tilde: MatrixCoef<BumpSum>,
    b_tilde: VectorCoef<BumpSum>,
    (r, s): (f64, f64),
    (lambda, big_lambda): (f64, f64),
    counterexample: bool,
) -> CoefficientSet {
    CoefficientSet {
        family: family.to_string(),
        params,
        d,
        a_per,
        b_per,
        a_tilde,
        b_tilde,
        r,
        s,
        lambda,
        big_lambda,
        counterexample,
    }
}

/// Amplitude `c2` of the second bump of the one-dimensional drift defect
/// `B̃ = c1 g(x - x0) - c2 g(x + x0)` (with `b̃ = B̃'`) that makes
/// `∫ e^{B_per} (e^{B̃} - 1) = 0` over the line, for `B_per = amp (1 - cos 2πx)/(2π)`.
/// Under this balance the whole-line defect corrector of the periodic drift has
/// zero net increment, so it vanishes at both ends of a truncation box.
pub fn balance_sin_drift_defect(amp: f64, c1: f64, width: f64, offset: f64) -> Result<f64> {
    if c1 == 0.0 {
        return Ok(0.0);
    }
    let g = move |t: f64| (-0.5 * (t / width).powi(2)).exp();
    let reach = offset + 14.0 * width;
    let panels = (16.0 * reach).ceil() as usize + 16;
    let q = Composite::default();
    let balance = |c2: f64| {
        let f = |x: f64| {
            let bp = amp * (1.0 - (2.0 * PI * x).cos()) / (2.0 * PI);
            bp.exp() * ((c1 * g(x - offset) - c2 * g(x + offset)).exp() - 1.0)
        };
        q.integrate(&f, -reach, reach, panels)
    };
    let (a, b) = if c1 > 0.0 { (0.0, 20.0) } else { (-20.0, 0.0) };
    bisect(balance, a, b, 1e-15).map_err(|_| {
        Error::InvalidParameter(format!(
            "no balancing amplitude exists for defect amplitude {c1} at width {width}"
        ))
    })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CustomSpec {
    d: usize,
    /// Upper-triangular entries of `a_per` (default identity).
    a_per: Option<Vec<FourierSeries>>,
    b_per: Option<Vec<FourierSeries>>,
    a_tilde: Option<Vec<BumpSum>>,
    b_tilde: Option<Vec<BumpSum>>,
    /// Potential of a gradient drift defect; excludes `b_tilde`.
    psi_tilde: Option<BumpSum>,
    #[serde(default = "one")]
    r: f64,
    #[serde(default = "one")]
    s: f64,
}

fn one() -> f64 {
    1.0
}

/// Build a catalog family. Unknown parameters are rejected; omitted ones take
/// documented defaults.
pub fn build_family(name: &str, params: &Value) -> Result<CoefficientSet> {
    match name {
        "identity" => {
            let p = Params::new(name, params, &["d"])?;
            let d = p.dim(3, &[1, 2, 3])?;
            Ok(set(
                name,
                json!({ "d": d }),
                d,
                identity_a(d),
                zero_vec_per(d),
                zero_a_tilde(d),
                zero_vec_def(d),
                (1.0, 1.0),
                (1.0, 1.0),
                false,
            ))
        }
        "sin-drift-1d" => {
            let p = Params::new(name, params, &["amp", "defect", "defect_width", "defect_offset", "balance"])?;
            let amp = p.f("amp", 1.0)?;
            let c1 = p.f("defect", 0.0)?;
            let width = positive(name, "defect_width", p.f("defect_width", 0.5)?)?;
            let offset = p.f("defect_offset", 1.25)?;
            let balance = p.flag("balance", true)?;
            let c2 = if c1 == 0.0 {
                0.0
            } else if balance {
                balance_sin_drift_defect(amp, c1, width, offset)?
            } else {
                c1
            };
            let b_tilde = if c1 == 0.0 {
                zero_vec_def(1)
            } else {
                VectorCoef::Gradient(BumpSum {
                    bumps: vec![
                        Bump::gaussian([offset, 0.0, 0.0], c1, width),
                        Bump::gaussian([-offset, 0.0, 0.0], -c2, width),
                    ],
                })
            };
            let mut resolved = p.resolved();
            resolved["defect_balance_amplitude"] = json!(c2);
            Ok(set(
                name,
                resolved,
                1,
                identity_a(1),
                VectorCoef::Components(vec![FourierSeries::sin([1, 0, 0], amp)]),
                zero_a_tilde(1),
                b_tilde,
                (1.0, 1.0),
                (1.0, 1.0),
                false,
            ))
        }
        "constant-drift-1d" => {
            let p = Params::new(name, params, &["value"])?;
            let v = p.f("value", 1.0)?;
            Ok(set(
                name,
                p.resolved(),
                1,
                identity_a(1),
                VectorCoef::Components(vec![FourierSeries::constant(v)]),
                zero_a_tilde(1),
                zero_vec_def(1),
                (1.0, 1.0),
                (1.0, 1.0),
                true,
            ))
        }
        "shear-2d" => {
            let p = Params::new(name, params, &["amp"])?;
            let amp = p.f("amp", 1.0)?;
            let beta = FourierSeries::sin([0, 1, 0], amp).plus(FourierSeries::cos([0, 2, 0], 0.5 * amp));
            Ok(set(
                name,
                p.resolved(),
                2,
                identity_a(2),
                VectorCoef::Components(vec![beta, FourierSeries::zero()]),
                zero_a_tilde(2),
                zero_vec_def(2),
                (1.0, 1.0),
                (1.0, 1.0),
                false,
            ))
        }
        "gradient-defect" => {
            let p = Params::new(name, params, &["d", "height", "sigma", "r", "s"])?;
            let d = p.dim(3, &[1, 2, 3])?;
            let height = p.f("height", 1.0)?;
            let sigma = positive(name, "sigma", p.f("sigma", 1.0)?)?;
            let psi = BumpSum::single(Bump::gaussian([0.0; 3], height, sigma));
            Ok(set(
                name,
                p.resolved(),
                d,
                identity_a(d),
                zero_vec_per(d),
                zero_a_tilde(d),
                VectorCoef::Gradient(psi),
                (p.f("r", 1.0)?, p.f("s", 1.0)?),
                (1.0, 1.0),
                false,
            ))
        }
        "gaussian-bump-defect" => {
            let p = Params::new(
                name,
                params,
                &["d", "kappa", "modulation", "a_amp", "b_amp", "sigma", "r", "s"],
            )?;
            let d = p.dim(3, &[1, 2, 3])?;
            let kappa = p.f("kappa", 0.5)?;
            let modulation = p.f("modulation", 0.25)?;
            let a_amp = p.f("a_amp", 0.3)?;
            let b_amp = p.f("b_amp", 0.5)?;
            let sigma = positive(name, "sigma", p.f("sigma", 0.5)?)?;
            let lambda = 1.0 - modulation.abs() + a_amp.min(0.0);
            if lambda <= 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "`{name}`: modulation {modulation} with defect amplitude {a_amp} makes a lose ellipticity"
                )));
            }
            let a_diag = FourierSeries::constant(1.0).plus(FourierSeries::cos_product(d, modulation));
            let b_per = (0..d)
                .map(|j| {
                    let mut k = [0; 3];
                    k[j] = 1;
                    FourierSeries::sin(k, kappa)
                })
                .collect();
            let g = BumpSum::single(Bump::gaussian([0.0; 3], a_amp, sigma));
            let mut b_tilde = vec![BumpSum::zero(); d];
            b_tilde[0] = BumpSum::single(Bump::gaussian([0.0; 3], b_amp, sigma));
            Ok(set(
                name,
                p.resolved(),
                d,
                MatrixCoef::isotropic(d, a_diag, FourierSeries::zero()),
                VectorCoef::Components(b_per),
                MatrixCoef::isotropic(d, g, BumpSum::zero()),
                VectorCoef::Components(b_tilde),
                (p.f("r", 1.2)?, p.f("s", 1.2)?),
                (lambda, 1.0 + modulation.abs() + a_amp.max(0.0)),
                false,
            ))
        }
        "algebraic-decay-defect" => {
            let p = Params::new(name, params, &["d", "gamma", "amp", "width", "r", "s", "counterexample"])?;
            let d = p.dim(1, &[1, 2, 3])?;
            let gamma = positive(name, "gamma", p.f("gamma", 0.5)?)?;
            let s = p.f("s", 1.0)?;
            // the default parameters are the non-integrable drift defect on purpose
            let counterexample = p.flag("counterexample", true)?;
            if !counterexample && gamma * s <= d as f64 {
                return Err(Error::InvalidParameter(format!(
                    "`{name}`: a drift defect decaying like |x|^-{gamma} is not in L^{s} in dimension {d}; it needs gamma > d/s"
                )));
            }
            let amp = p.f("amp", 1.0)?;
            let width = positive(name, "width", p.f("width", 1.0)?)?;
            let mut b_tilde = vec![BumpSum::zero(); d];
            b_tilde[0] = BumpSum::single(Bump {
                center: [0.0; 3],
                amplitude: amp,
                width,
                profile: BumpProfile::Algebraic { gamma },
            });
            Ok(set(
                name,
                p.resolved(),
                d,
                identity_a(d),
                zero_vec_per(d),
                zero_a_tilde(d),
                VectorCoef::Components(b_tilde),
                (p.f("r", 1.0)?, s),
                (1.0, 1.0),
                counterexample,
            ))
        }
        "custom" => build_custom(params),
        other => Err(Error::UnknownFamily(other.to_string())),
    }
}

fn build_custom(params: &Value) -> Result<CoefficientSet> {
    let spec: CustomSpec = serde_json::from_value(params.clone())
        .map_err(|e| Error::InvalidParameter(format!("custom coefficients: {e}")))?;
    let d = spec.d;
    if !(1..=3).contains(&d) {
        return Err(Error::InvalidParameter(format!("custom coefficients: d must be 1, 2 or 3, got {d}")));
    }
    let ntri = d * (d + 1) / 2;
    let len_err = |what: &str, want: usize, got: usize| {
        Error::InvalidParameter(format!("custom coefficients: `{what}` needs {want} entries, got {got}"))
    };
    let a_per = match spec.a_per {
        None => identity_a(d),
        Some(v) if v.len() == ntri => MatrixCoef::from_upper(d, v),
        Some(v) => return Err(len_err("a_per", ntri, v.len())),
    };
    let b_per = match spec.b_per {
        None => zero_vec_per(d),
        Some(v) if v.len() == d => VectorCoef::Components(v),
        Some(v) => return Err(len_err("b_per", d, v.len())),
    };
    let a_tilde = match spec.a_tilde {
        None => zero_a_tilde(d),
        Some(v) if v.len() == ntri => MatrixCoef::from_upper(d, v),
        Some(v) => return Err(len_err("a_tilde", ntri, v.len())),
    };
    let b_tilde = match (spec.b_tilde, spec.psi_tilde) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidParameter(
                "custom coefficients: give either `b_tilde` or `psi_tilde`, not both".into(),
            ))
        }
        (None, None) => zero_vec_def(d),
        (None, Some(psi)) => VectorCoef::Gradient(psi),
        (Some(v), None) if v.len() == d => VectorCoef::Components(v),
        (Some(v), None) => return Err(len_err("b_tilde", d, v.len())),
    };
    // ellipticity of a_per from a coarse cell sample; validate() refines it
    let n = 16usize;
    let mut lambda = f64::INFINITY;
    let mut big = 0.0f64;
    for k in 0..n.pow(d as u32) {
        let mut x = [0.0; 3];
        let mut rem = k;
        for xi in x.iter_mut().take(d) {
            *xi = (rem % n) as f64 / n as f64;
            rem /= n;
        }
        let (lo, hi) = super::validate::eig_bounds(&a_per.value(&x), d);
        lambda = lambda.min(lo);
        big = big.max(hi);
    }
    if lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "custom coefficients: the periodic diffusion matrix is not elliptic (smallest eigenvalue {lambda:.3e})"
        )));
    }
    if a_per.entry(0, 0).value(&[0.0; 3]).is_nan() {
        return Err(Error::InvalidParameter("custom coefficients: non-finite values".into()));
    }
    Ok(set(
        "custom",
        params.clone(),
        d,
        a_per,
        b_per,
        a_tilde,
        b_tilde,
        (spec.r, spec.s),
        (lambda, big),
        false,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_family() {
        let cs = build_family("identity", &Value::Null).unwrap();
        assert_eq!(cs.d, 3);
        let x = [0.3, 0.1, 0.7];
        assert_eq!(cs.a_at(&x)[1][1], 1.0);
        assert_eq!(cs.a_at(&x)[0][1], 0.0);
        assert_eq!(cs.b_at(&x), [0.0; 3]);
        assert!(!cs.has_defect());
    }

    #[test]
    fn sin_drift_family() {
        let cs = build_family("sin-drift-1d", &json!({ "amp": 1.0 })).unwrap();
        assert_eq!(cs.d, 1);
        let x = [0.1, 0.0, 0.0];
        assert!((cs.b_at(&x)[0] - (2.0 * PI * 0.1).sin()).abs() < 1e-15);
        assert_eq!(cs.a_at(&x)[0][0], 1.0);
        assert!(!cs.has_defect());
    }

    #[test]
    fn balanced_defect_has_zero_weighted_increment() {
        let c2 = balance_sin_drift_defect(1.0, 0.5, 0.5, 1.25).unwrap();
        assert!(c2 > 0.0);
        // independent check with a plain trapezoid sum on a fine grid
        let n = 400_000;
        let (a, b) = (-12.0, 12.0);
        let h = (b - a) / n as f64;
        let g = |t: f64| (-0.5 * (t / 0.5f64).powi(2)).exp();
        let mut s = 0.0;
        for k in 0..=n {
            let x = a + k as f64 * h;
            let bp = (1.0 - (2.0 * PI * x).cos()) / (2.0 * PI);
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            s += w * bp.exp() * ((0.5 * g(x - 1.25) - c2 * g(x + 1.25)).exp() - 1.0);
        }
        assert!((s * h).abs() < 1e-9);
        let cs = build_family("sin-drift-1d", &json!({ "defect": 0.5 })).unwrap();
        assert!(cs.has_defect());
        assert_eq!(cs.params["defect_balance_amplitude"], json!(c2));
    }

    #[test]
    fn gradient_defect_drift_is_gradient_of_potential() {
        let cs = build_family("gradient-defect", &json!({})).unwrap();
        let x = [0.5, -0.25, 1.0];
        let r2: f64 = x.iter().map(|v| v * v).sum();
        let psi = (-0.5 * r2).exp();
        let b = cs.b_tilde_at(&x);
        for i in 0..3 {
            assert!((b[i] + x[i] * psi).abs() < 1e-15);
        }
        assert_eq!(cs.b_per_at(&x), [0.0; 3]);
    }

    #[test]
    fn unknown_family_and_parameters() {
        assert!(matches!(build_family("nope", &Value::Null), Err(Error::UnknownFamily(_))));
        assert!(matches!(
            build_family("shear-2d", &json!({ "ampp": 1.0 })),
            Err(Error::InvalidParameter(_))
        ));
        assert!(build_family("gaussian-bump-defect", &json!({ "modulation": 1.2 })).is_err());
        assert!(build_family("algebraic-decay-defect", &json!({ "gamma": -1.0 })).is_err());
        let strict = json!({ "gamma": 0.5, "counterexample": false });
        assert!(build_family("algebraic-decay-defect", &strict).is_err());
        let fine = json!({ "d": 3, "gamma": 3.0, "s": 1.5, "counterexample": false });
        assert!(!build_family("algebraic-decay-defect", &fine).unwrap().counterexample);
    }

    #[test]
    fn custom_family_from_parameters() {
        let p = json!({
            "d": 2,
            "b_per": [ { "terms": [ { "k": [0, 1, 0], "sin": 0.5 } ] }, {} ],
            "psi_tilde": { "bumps": [ { "amplitude": 0.5, "width": 1.0, "profile": { "kind": "gaussian" } } ] },
            "s": 1.5
        });
        let cs = build_family("custom", &p).unwrap();
        assert_eq!(cs.d, 2);
        assert!(cs.has_defect());
        assert!((cs.b_per_at(&[0.0, 0.25, 0.0])[0] - 0.5).abs() < 1e-15);
        let bad = json!({ "d": 1, "a_per": [ { "constant": -1.0 } ] });
        assert!(build_family("custom", &bad).is_err());
    }

    #[test]
    fn every_family_builds_with_defaults() {
        for name in family_names() {
            if name == "custom" {
                continue;
            }
            build_family(name, &Value::Null).unwrap();
        }
    }
}
