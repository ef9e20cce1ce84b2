use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::Field;

/// Node selection for norms; balls and annuli are centered at the origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Region {
    Whole,
    Ball { radius: f64 },
    /// `inner <= |x| < outer`.
    Annulus { inner: f64, outer: f64 },
}

impl Region {
    pub fn contains(&self, x: &[f64; 3]) -> bool {
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        match *self {
            Region::Whole => true,
            Region::Ball { radius } => r <= radius,
            Region::Annulus { inner, outer } => r >= inner && r < outer,
        }
    }
}

fn single_norm(f: &Field, q: f64, nodes: &[usize]) -> f64 {
    if q.is_infinite() {
        nodes.iter().fold(0.0, |m, &k| m.max(f.magnitude(k)))
    } else {
        let w = f.grid().cell_volume();
        let s: f64 = nodes.iter().map(|&k| f.magnitude(k).powf(q)).sum();
        (w * s).powf(1.0 / q)
    }
}

fn select(f: &Field, region: Region) -> Vec<usize> {
    let g = f.grid();
    (0..g.num_nodes()).filter(|&k| region.contains(&g.point(k))).collect()
}

/// Discrete `L^q` norm over a region using the Frobenius magnitude at each
/// node; with several exponents, the sum of the single-exponent norms.
pub fn lq_norm(f: &Field, exponents: &[f64], region: Region) -> Result<f64> {
    if exponents.is_empty() {
        return Err(Error::InvalidParameter("at least one exponent is required".into()));
    }
    if let Some(q) = exponents.iter().find(|&&q| !(q >= 1.0)) {
        return Err(Error::InvalidParameter(format!("exponent {q} is below 1")));
    }
    let nodes = select(f, region);
    if nodes.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(exponents.iter().map(|&q| single_norm(f, q, &nodes)).sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Shell {
    pub k: i32,
    pub inner: f64,
    pub outer: f64,
    pub norm: f64,
    pub nodes: usize,
    /// The shell lies entirely inside the box (`outer <= L`).
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShellProfile {
    pub q: f64,
    pub shells: Vec<Shell>,
    /// Shell indices that held no nodes.
    pub skipped: Vec<i32>,
}

impl ShellProfile {
    pub fn radii(&self) -> Vec<f64> {
        self.shells.iter().map(|s| s.inner).collect()
    }

    pub fn norms(&self) -> Vec<f64> {
        self.shells.iter().map(|s| s.norm).collect()
    }
}

fn shells_for(f: &Field, first_k: i32) -> Result<(f64, Vec<(i32, Vec<usize>)>, Vec<i32>)> {
    let b = f
        .grid()
        .as_box()
        .ok_or_else(|| Error::InvalidGrid("annular profiles need a box grid".into()))?;
    let half = b.half_width();
    if half < 2.0 {
        return Err(Error::Precondition(format!(
            "annular profiles need a box half-width of at least 2, got {half}"
        )));
    }
    let g = f.grid();
    let rmax = half * (b.d() as f64).sqrt();
    let mut buckets: Vec<(i32, Vec<usize>)> = Vec::new();
    let mut k = first_k;
    while 2f64.powi(k) < rmax {
        buckets.push((k, Vec::new()));
        k += 1;
    }
    let r0 = 2f64.powi(first_k);
    for node in 0..g.num_nodes() {
        let x = g.point(node);
        let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        if r < r0 {
            continue;
        }
        let mut idx = (r / r0).log2().floor() as usize;
        // guard against rounding at exact powers of two
        while idx > 0 && r < 2f64.powi(first_k + idx as i32) {
            idx -= 1;
        }
        while idx + 1 < buckets.len() && r >= 2f64.powi(first_k + idx as i32 + 1) {
            idx += 1;
        }
        if idx < buckets.len() {
            buckets[idx].1.push(node);
        }
    }
    let skipped = buckets.iter().filter(|(_, n)| n.is_empty()).map(|(k, _)| *k).collect();
    buckets.retain(|(_, n)| !n.is_empty());
    Ok((half, buckets, skipped))
}

/// Per-shell `L^q` norms over dyadic shells `2^k <= |x| < 2^{k+1}`, starting at
/// `k = first_k` (shells are anchored at `R = 1` when `first_k = 0`) and clipped
/// to the box.
pub fn annular_profile(f: &Field, q: f64, first_k: i32) -> Result<ShellProfile> {
    if !(q >= 1.0) {
        return Err(Error::InvalidParameter(format!("exponent {q} is below 1")));
    }
    let (half, buckets, skipped) = shells_for(f, first_k)?;
    let shells = buckets
        .into_iter()
        .map(|(k, nodes)| Shell {
            k,
            inner: 2f64.powi(k),
            outer: 2f64.powi(k + 1),
            norm: single_norm(f, q, &nodes),
            nodes: nodes.len(),
            complete: 2f64.powi(k + 1) <= half,
        })
        .collect();
    Ok(ShellProfile { q, shells, skipped })
}

/// Per-shell maximum of `|w(x)| / (1 + |x|)`, as `(inner radius, ratio)`.
pub fn sublinearity_ratio(w: &Field, first_k: i32) -> Result<Vec<(f64, f64)>> {
    if w.rank() != 0 {
        return Err(Error::RankMismatch("sublinearity is measured on scalar fields".into()));
    }
    let (_, buckets, _) = shells_for(w, first_k)?;
    let g = w.grid();
    Ok(buckets
        .into_iter()
        .map(|(k, nodes)| {
            let m = nodes.iter().fold(0.0f64, |m, &node| {
                let x = g.point(node);
                let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
                m.max(w.at(node).abs() / (1.0 + r))
            });
            (2f64.powi(k), m)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{BoxGrid, TorusGrid};
    use crate::numerics::fit::fit_loglog;
    use crate::numerics::quadrature::Composite;
    use proptest::prelude::*;

    #[test]
    fn unit_field_norms() {
        let g = TorusGrid::new(2, 16).unwrap();
        let one = Field::scalar_fn(g, |_| 1.0);
        assert!((lq_norm(&one, &[3.0], Region::Whole).unwrap() - 1.0).abs() < 1e-14);
        assert!((lq_norm(&one, &[2.0, 6.0], Region::Whole).unwrap() - 2.0).abs() < 1e-14);
        assert!((lq_norm(&one, &[f64::INFINITY], Region::Whole).unwrap() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn indicator_bump() {
        // value 2 on [0, 1/2)^3 of the unit torus: measure 1/8
        let g = TorusGrid::new(3, 16).unwrap();
        let f = Field::scalar_fn(g, |x| if x.iter().all(|&c| c < 0.5) { 2.0 } else { 0.0 });
        let v = lq_norm(&f, &[2.0], Region::Whole).unwrap();
        // direct summation oracle: 8^3 nodes of weight h^3 with value 2
        let direct = (512.0 * (1.0 / 16f64).powi(3) * 4.0f64).sqrt();
        assert!((v - direct).abs() < 1e-14);
        assert!((v - 2.0 * (0.125f64).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn empty_region_is_an_error() {
        let g = BoxGrid::centered(1, 1.0, 4).unwrap();
        let f = Field::zeros(g, 0);
        let r = lq_norm(&f, &[2.0], Region::Annulus { inner: 5.0, outer: 6.0 });
        assert!(matches!(r, Err(Error::EmptyRegion)));
    }

    #[test]
    fn zero_field_profile_is_zero() {
        let g = BoxGrid::centered(2, 4.0, 32).unwrap();
        let p = annular_profile(&Field::zeros(g, 0), 2.0, 0).unwrap();
        assert!(p.shells.len() >= 2);
        assert!(p.norms().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gaussian_shells_strictly_decrease() {
        let g = BoxGrid::centered(2, 8.0, 128).unwrap();
        let f = Field::scalar_fn(g, |x| (-(x[0] * x[0] + x[1] * x[1])).exp());
        let p = annular_profile(&f, 2.0, 0).unwrap();
        let n = p.norms();
        assert!(n.windows(2).all(|w| w[1] < w[0]));
        // quadrature oracle for the first shell: 2π ∫_1^2 e^{-2r²} r dr
        let q = Composite::default();
        let exact = (2.0 * std::f64::consts::PI * q.integrate(&|r: f64| (-2.0 * r * r).exp() * r, 1.0, 2.0, 8)).sqrt();
        assert!((n[0] - exact).abs() / exact < 0.05);
    }

    #[test]
    fn algebraic_shell_ratio() {
        // f = (1+|x|)^{-2}, q = 2, d = 3: shell norm ratio tends to 2^{-1/2}
        let g = BoxGrid::centered(3, 16.0, 64).unwrap();
        let f = Field::scalar_fn(g, |x| {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            (1.0 + r).powi(-2)
        });
        let p = annular_profile(&f, 2.0, 0).unwrap();
        let complete: Vec<&Shell> = p.shells.iter().filter(|s| s.complete).collect();
        let last = complete.len() - 1;
        let ratio = complete[last].norm / complete[last - 1].norm;
        // oracle: radial quadrature of ∫ r^2 (1+r)^{-4} over consecutive shells
        let q = Composite::default();
        let shell = |a: f64| q.integrate(&|r: f64| r * r * (1.0 + r).powi(-4), a, 2.0 * a, 16).sqrt();
        let a = complete[last].inner;
        let oracle = shell(a) / shell(a / 2.0);
        assert!((ratio - oracle).abs() < 0.02, "ratio {ratio} vs {oracle}");
        // the same oracle far out approaches the asymptotic ratio
        assert!((shell(1024.0) / shell(512.0) - 0.5f64.sqrt()).abs() < 0.01);
    }

    #[test]
    fn sublinearity_controls() {
        let g = BoxGrid::centered(1, 64.0, 1024).unwrap();
        let zero = sublinearity_ratio(&Field::zeros(g, 0), 0).unwrap();
        assert!(zero.iter().all(|&(_, v)| v == 0.0));
        let lin = sublinearity_ratio(&Field::scalar_fn(g, |x| x[0].abs()), 0).unwrap();
        assert!(lin.last().unwrap().1 > 0.95);
        let sq = sublinearity_ratio(&Field::scalar_fn(g, |x| x[0].abs().sqrt()), 0).unwrap();
        let (r, v): (Vec<f64>, Vec<f64>) = sq[2..].iter().cloned().unzip();
        let fit = fit_loglog(&r, &v).unwrap();
        assert!((fit.slope + 0.5).abs() < 0.1, "slope {}", fit.slope);
    }

    #[test]
    fn profiles_need_room() {
        let g = BoxGrid::centered(1, 1.0, 16).unwrap();
        assert!(matches!(annular_profile(&Field::zeros(g, 0), 2.0, 0), Err(Error::Precondition(_))));
    }

    proptest! {
        #[test]
        fn norms_are_absolutely_homogeneous(vals in prop::collection::vec(-3.0f64..3.0, 64), c in -5.0f64..5.0, q in 1.0f64..6.0) {
            let g = TorusGrid::new(2, 8).unwrap();
            let f = Field::scalar(g, vals).unwrap();
            let a = lq_norm(&f.scale(c), &[q], Region::Whole).unwrap();
            let b = c.abs() * lq_norm(&f, &[q], Region::Whole).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b));
        }
    }
}
