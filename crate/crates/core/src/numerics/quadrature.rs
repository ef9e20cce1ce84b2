//! Composite Gauss-Legendre quadrature and antiderivative tables.

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 1 { z } else { p1 };
            let pnm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pnm1) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Composite Gauss-Legendre rule with a fixed number of points per panel.
#[derive(Debug, Clone)]
pub struct Composite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for Composite {
    fn default() -> Self {
        Composite::new(16)
    }
}

impl Composite {
    pub fn new(points: usize) -> Self {
        let (nodes, weights) = gauss_legendre(points);
        Composite { nodes, weights }
    }

    /// Integral over one panel `[a, b]`.
    pub fn panel(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(c + r * x))
            .sum::<f64>()
            * r
    }

    /// Integral over `[a, b]` split into `panels` equal panels.
    pub fn integrate(&self, f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
        let h = (b - a) / panels as f64;
        (0..panels)
            .map(|k| self.panel(f, a + k as f64 * h, a + (k + 1) as f64 * h))
            .sum()
    }
}

/// Antiderivative `F(x) = ∫_a^x f` tabulated at panel boundaries of `[a, b]`;
/// evaluation inside a panel adds one more Gauss-Legendre integral.
pub struct Antiderivative<F: Fn(f64) -> f64> {
    f: F,
    rule: Composite,
    a: f64,
    h: f64,
    table: Vec<f64>,
}

impl<F: Fn(f64) -> f64> Antiderivative<F> {
    pub fn new(f: F, a: f64, b: f64, panels: usize) -> Self {
        assert!(b > a && panels > 0);
        let rule = Composite::default();
        let h = (b - a) / panels as f64;
        let mut table = Vec::with_capacity(panels + 1);
        table.push(0.0);
        let mut acc = 0.0;
        for k in 0..panels {
            acc += rule.panel(&f, a + k as f64 * h, a + (k + 1) as f64 * h);
            table.push(acc);
        }
        Antiderivative { f, rule, a, h, table }
    }

    /// `∫_a^x f`, valid for `x` in `[a, b]` (clamped to the table outside).
    pub fn eval(&self, x: f64) -> f64 {
        let t = ((x - self.a) / self.h).floor();
        let k = (t.max(0.0) as usize).min(self.table.len() - 2);
        let x0 = self.a + k as f64 * self.h;
        self.table[k] + self.rule.panel(&self.f, x0, x)
    }

    pub fn total(&self) -> f64 {
        *self.table.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_two_and_integrate_polynomials() {
        for n in [1, 2, 5, 16, 21] {
            let (x, w) = gauss_legendre(n);
            assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
            let deg = 2 * n - 1;
            let exact = if deg % 2 == 0 { 2.0 / (deg as f64 + 1.0) } else { 0.0 };
            let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
            assert!((q - exact).abs() < 1e-13);
            let q2: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(2 * (n as i32 - 1))).sum();
            assert!((q2 - 2.0 / (2.0 * n as f64 - 1.0)).abs() < 1e-13);
        }
    }

    #[test]
    fn composite_rule_integrates_periodic_functions() {
        let q = Composite::default();
        let v = q.integrate(&|x: f64| (2.0 * std::f64::consts::PI * x).sin().powi(2), 0.0, 1.0, 4);
        assert!((v - 0.5).abs() < 1e-14);
    }

    #[test]
    fn antiderivative_matches_closed_form() {
        let f = |x: f64| x.cos();
        let a = Antiderivative::new(f, -3.0, 5.0, 16);
        for &x in &[-3.0, -1.234, 0.0, 2.5, 5.0] {
            assert!((a.eval(x) - (x.sin() - (-3.0f64).sin())).abs() < 1e-14);
        }
    }
}
