//! Right-preconditioned GMRES(m) and BiCGSTAB for matrix-free operators.

use crate::error::{Error, Result};

/// Matrix-free linear map.
pub type LinOp<'a> = dyn Fn(&[f64]) -> Vec<f64> + 'a;

#[derive(Debug, Clone, Copy)]
pub struct KrylovOptions {
    /// Target relative residual `|b - A x| / |b|`.
    pub tol: f64,
    pub max_iter: usize,
    /// GMRES restart length.
    pub restart: usize,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        KrylovOptions {
            tol: 1e-10,
            max_iter: 2000,
            restart: 60,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// True relative residual of the returned iterate.
    pub residual: f64,
    pub history: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn residual(a: &LinOp, x: &[f64], b: &[f64]) -> Vec<f64> {
    let ax = a(x);
    b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect()
}

pub fn gmres(
    a: &LinOp,
    precond: &LinOp,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = norm(b);
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut stats = SolveStats::default();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], stats));
    }
    let m = opts.restart.max(1);
    loop {
        let r = residual(a, &x, b);
        let beta = norm(&r);
        let rel = beta / bnorm;
        stats.history.push(rel);
        if rel <= opts.tol {
            stats.residual = rel;
            return Ok((x, stats));
        }
        if stats.iterations >= opts.max_iter {
            return Err(Error::NotConverged {
                solver: "GMRES",
                iterations: stats.iterations,
                residual: rel,
                history: stats.history,
            });
        }
        let mut v: Vec<Vec<f64>> = vec![r.iter().map(|ri| ri / beta).collect()];
        let mut z: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut hmat = vec![vec![0.0; m]; m + 1];
        let mut cs = vec![0.0; m];
        let mut sn = vec![0.0; m];
        let mut g = vec![0.0; m + 1];
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            let zk = precond(&v[k]);
            let mut w = a(&zk);
            z.push(zk);
            for (j, vj) in v.iter().enumerate() {
                let hjk = dot(&w, vj);
                hmat[j][k] = hjk;
                for (wi, vi) in w.iter_mut().zip(vj) {
                    *wi -= hjk * vi;
                }
            }
            let hn = norm(&w);
            hmat[k + 1][k] = hn;
            for j in 0..k {
                let t = cs[j] * hmat[j][k] + sn[j] * hmat[j + 1][k];
                hmat[j + 1][k] = -sn[j] * hmat[j][k] + cs[j] * hmat[j + 1][k];
                hmat[j][k] = t;
            }
            let den = hmat[k][k].hypot(hmat[k + 1][k]);
            if den == 0.0 {
                k_used = k;
                break;
            }
            cs[k] = hmat[k][k] / den;
            sn[k] = hmat[k + 1][k] / den;
            hmat[k][k] = den;
            hmat[k + 1][k] = 0.0;
            g[k + 1] = -sn[k] * g[k];
            g[k] *= cs[k];
            stats.iterations += 1;
            k_used = k + 1;
            let est = g[k + 1].abs() / bnorm;
            stats.history.push(est);
            if est <= opts.tol * 0.5 || hn == 0.0 || stats.iterations >= opts.max_iter {
                break;
            }
            v.push(w.iter().map(|wi| wi / hn).collect());
        }
        // back substitution
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in i + 1..k_used {
                s -= hmat[i][j] * y[j];
            }
            y[i] = s / hmat[i][i];
        }
        for (j, yj) in y.iter().enumerate() {
            for (xi, zi) in x.iter_mut().zip(&z[j]) {
                *xi += yj * zi;
            }
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NumericFault("GMRES iterate became non-finite".into()));
        }
    }
}

pub fn bicgstab(
    a: &LinOp,
    precond: &LinOp,
    b: &[f64],
    x0: Option<&[f64]>,
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = b.len();
    let bnorm = norm(b);
    let mut stats = SolveStats::default();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], stats));
    }
    let mut x = x0.map(|v| v.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut r = residual(a, &x, b);
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    stats.history.push(norm(&r) / bnorm);
    while stats.iterations < opts.max_iter {
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        let p_hat = precond(&p);
        v = a(&p_hat);
        alpha = rho_new / dot(&r_hat, &v);
        let s: Vec<f64> = r.iter().zip(&v).map(|(ri, vi)| ri - alpha * vi).collect();
        stats.iterations += 1;
        let snorm = norm(&s) / bnorm;
        if snorm <= opts.tol * 0.5 {
            for (xi, pi) in x.iter_mut().zip(&p_hat) {
                *xi += alpha * pi;
            }
            stats.history.push(snorm);
            break;
        }
        let s_hat = precond(&s);
        let t = a(&s_hat);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..n {
            x[i] += alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        rho = rho_new;
        let rel = norm(&r) / bnorm;
        stats.history.push(rel);
        if !rel.is_finite() {
            return Err(Error::NumericFault("BiCGSTAB residual became non-finite".into()));
        }
        if rel <= opts.tol * 0.5 || omega == 0.0 {
            break;
        }
    }
    let rel = norm(&residual(a, &x, b)) / bnorm;
    stats.residual = rel;
    if rel <= opts.tol {
        Ok((x, stats))
    } else {
        Err(Error::NotConverged {
            solver: "BiCGSTAB",
            iterations: stats.iterations,
            residual: rel,
            history: stats.history,
        })
    }
}

/// BiCGSTAB, falling back to GMRES from BiCGSTAB's last iterate when it stalls.
pub fn solve_nonsymmetric(
    a: &LinOp,
    precond: &LinOp,
    b: &[f64],
    opts: &KrylovOptions,
) -> Result<(Vec<f64>, SolveStats)> {
    match bicgstab(a, precond, b, None, opts) {
        Ok(r) => Ok(r),
        Err(Error::NotConverged { .. }) | Err(Error::NumericFault(_)) => {
            log::warn!("BiCGSTAB stalled, retrying with GMRES");
            gmres(a, precond, b, None, opts)
        }
        Err(e) => Err(e),
    }
}
