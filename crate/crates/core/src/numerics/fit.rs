//! Least-squares line fits on log-log data with a 95% band on the slope.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    /// Half-width of the 95% confidence interval of the slope; infinite with
    /// only two points.
    pub slope_band95: f64,
    pub points: usize,
}

/// Ordinary least squares `y ≈ slope x + intercept`.
pub fn fit_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(Error::InvalidParameter(format!(
            "line fit needs at least two matching points, got {n} and {}",
            y.len()
        )));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|xi| (xi - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter("line fit abscissae are all equal".into()));
    }
    let sxy: f64 = x.iter().zip(y).map(|(xi, yi)| (xi - mx) * (yi - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, yi)| (yi - slope * xi - intercept).powi(2))
        .sum();
    let residual = (sse / n as f64).sqrt();
    let slope_band95 = if n > 2 {
        let dof = (n - 2) as f64;
        let se = (sse / dof / sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .map_err(|e| Error::NumericFault(e.to_string()))?
            .inverse_cdf(0.975);
        t * se
    } else {
        f64::INFINITY
    };
    Ok(LineFit {
        slope,
        intercept,
        residual,
        slope_band95,
        points: n,
    })
}

/// Fit `log y` against `log x`; all values must be positive.
pub fn fit_loglog(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|&v| !(v > 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "log-log fit needs positive finite values".into(),
        ));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    fit_line(&lx, &ly)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let e = [0.25, 0.125, 0.0625, 0.03125];
        let f = fit_loglog(&e, &e).unwrap();
        assert!((f.slope - 1.0).abs() < 1e-12);
        assert!(f.residual < 1e-12);
        let sq: Vec<f64> = e.iter().map(|v| v * v).collect();
        assert!((fit_loglog(&e, &sq).unwrap().slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn band_matches_student_t_by_hand() {
        // y = x + noise at three points; t_{0.975,1} = 12.7062
        let x = [0.0, 1.0, 2.0];
        let y = [0.0, 1.1, 2.0];
        let f = fit_line(&x, &y).unwrap();
        let sse: f64 = x.iter().zip(&y).map(|(a, b)| (b - f.slope * a - f.intercept).powi(2)).sum();
        let se = (sse / 1.0 / 2.0f64).sqrt();
        assert!((f.slope_band95 - 12.706_204_736 * se).abs() < 1e-6);
    }

    #[test]
    fn rejects_non_positive_values() {
        assert!(fit_loglog(&[1.0, 2.0, 3.0], &[1.0, 0.0, 2.0]).is_err());
        assert!(fit_line(&[1.0], &[1.0]).is_err());
    }
}
