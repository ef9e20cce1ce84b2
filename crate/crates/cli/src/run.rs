//! Experiment dispatch. Every kind writes its tables and fields into the
//! output directory and records the contracts it checked; the manifest is
//! assembled last.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::Context;
use defecthom::cell::{CellOptions, CellSolution, DRIFT_TOL, ROUTE_TOL};
use defecthom::coefficients::CoefficientSet;
use defecthom::defect::{
    cross_validate_b, decay_report, estimate_constant_probe, gradient, solve_defect, BoxProblem, DefectSolution,
    Observable, ProbeRhs, FLUX_CONSISTENCY_TOL, PROBE_GROWTH_LIMIT,
};
use defecthom::divform::{a_tilde_decay, assemble_a, cross_validate, identity_residual, solve_corrector_divform};
use defecthom::fields::{BoxGrid, Field, Grid, TorusGrid};
use defecthom::multiscale::{converge, hessian_scaling, Column, Correctors, EpsProblem};
use defecthom::operators::{Discretization, Scheme};
use defecthom::oracle1d::{defect_corrector_1d, periodic_corrector_1d, Fn1};
use serde::Serialize;
use serde_json::{json, Value};

use crate::cache::{cache_root, cached_cell, CacheStatus, CellCache};
use crate::config::{CachePolicy, ConfigError, ExperimentConfig, Kind};
use crate::manifest::{Contract, Manifest};

/// Relative L∞ tolerance of solver-versus-closed-form comparisons in 1D.
pub const ORACLE_TOL: f64 = 1e-6;
/// Gradient discrepancy allowed between the two corrector routes.
pub const ROUTE_TOL_1D: f64 = 1e-6;
pub const ROUTE_TOL_SMOKE: f64 = 5e-3;
/// Window around the predicted Hessian exponent (−1 or 0).
pub const SCALING_SLOPE_TOL: f64 = 0.15;

/// Command-line overrides of a configuration.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub kind: Option<Kind>,
    pub out: Option<PathBuf>,
    pub no_cache: bool,
    pub columns: Option<Vec<Column>>,
}

pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
}

impl Outcome {
    pub fn ok(&self) -> bool {
        self.manifest.contracts.iter().all(|c| c.ok)
    }
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    cs: CoefficientSet,
    out: PathBuf,
    cache: Option<CellCache>,
    refresh: bool,
    cache_status: Vec<CacheStatus>,
    files: Vec<PathBuf>,
    contracts: Vec<Contract>,
    residuals: BTreeMap<String, f64>,
}

pub fn apply_overrides(cfg: &ExperimentConfig, ro: &RunOptions) -> ExperimentConfig {
    let mut cfg = cfg.clone();
    if let Some(k) = ro.kind {
        cfg.kind = k;
    }
    if let Some(o) = &ro.out {
        cfg.output.dir = o.clone();
    }
    if ro.no_cache {
        cfg.output.cache = CachePolicy::Off;
    }
    if let Some(cols) = &ro.columns {
        let mut sw = cfg.sweep();
        sw.columns = cols.clone();
        cfg.sweep = Some(sw);
    }
    cfg
}

pub fn run(cfg: &ExperimentConfig, ro: &RunOptions) -> anyhow::Result<Outcome> {
    let cfg = apply_overrides(cfg, ro);
    let cs = cfg.check()?;
    let out = cfg.output.dir.clone();
    std::fs::create_dir_all(&out).with_context(|| format!("cannot create output directory {}", out.display()))?;
    let cache = (cfg.output.cache != CachePolicy::Off).then(|| CellCache::new(cache_root()));
    let mut ctx = Ctx {
        cfg: &cfg,
        cs,
        out: out.clone(),
        cache,
        refresh: cfg.output.cache == CachePolicy::Refresh,
        cache_status: Vec::new(),
        files: Vec::new(),
        contracts: Vec::new(),
        residuals: BTreeMap::new(),
    };
    log::info!("running `{}` on family `{}`", cfg.kind.name(), cfg.family);
    match cfg.kind {
        Kind::Cell => run_cell(&mut ctx),
        Kind::Defect => run_defect(&mut ctx),
        Kind::Divform => run_divform(&mut ctx),
        Kind::Converge => run_converge(&mut ctx),
        Kind::Scaling => run_scaling(&mut ctx),
        Kind::Validate1d => run_validate_1d(&mut ctx),
        Kind::Probe => run_probe(&mut ctx),
    }
    .with_context(|| format!("`{}` experiment failed", cfg.kind.name()))?;
    let manifest = Manifest::build(&cfg, &out, &ctx.files, ctx.cache_status, ctx.residuals, ctx.contracts)?;
    manifest.write(&out)?;
    Ok(Outcome { out_dir: out, manifest })
}

impl Ctx<'_> {
    fn path(&mut self, name: &str) -> anyhow::Result<PathBuf> {
        let p = self.out.join(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        self.files.push(PathBuf::from(name));
        Ok(p)
    }

    fn json(&mut self, name: &str, v: &impl Serialize) -> anyhow::Result<()> {
        let p = self.path(name)?;
        let mut w = BufWriter::new(File::create(p)?);
        serde_json::to_writer_pretty(&mut w, v)?;
        writeln!(w)?;
        Ok(())
    }

    fn csv(&mut self, name: &str, f: impl FnOnce(&mut dyn Write) -> anyhow::Result<()>) -> anyhow::Result<()> {
        let p = self.path(name)?;
        let mut w = BufWriter::new(File::create(p)?);
        f(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Register every file a saver wrote under `sub`.
    fn saved_dir(&mut self, sub: &str) -> anyhow::Result<()> {
        let mut names: Vec<String> = std::fs::read_dir(self.out.join(sub))?
            .map(|e| e.map(|e| e.file_name().to_string_lossy().into_owned()))
            .collect::<std::io::Result<_>>()?;
        names.sort();
        for n in names {
            self.files.push(Path::new(sub).join(n));
        }
        Ok(())
    }

    fn contract(&mut self, name: &str, ok: bool, value: Option<f64>, tolerance: Option<f64>, detail: String) {
        self.contracts.push(Contract {
            name: name.into(),
            ok,
            value,
            tolerance,
            detail,
        });
    }

    fn residual(&mut self, name: &str, v: f64) {
        self.residuals.insert(name.into(), v);
    }

    fn cell(&mut self, g: &TorusGrid, opts: &CellOptions) -> anyhow::Result<CellSolution> {
        let (cell, status) = cached_cell(self.cache.as_ref(), self.refresh, &self.cs, g, opts)?;
        self.cache_status.push(status);
        Ok(cell)
    }

    fn config_cell(&mut self) -> anyhow::Result<CellSolution> {
        let g = TorusGrid::new(self.cs.d, self.cfg.grid.cell_n).map_err(|e| ConfigError(e.to_string()))?;
        let opts = self.cfg.cell_options();
        self.cell(&g, &opts)
    }

    /// The box problem together with its matched cell (cached like any cell).
    fn box_problem(&mut self) -> anyhow::Result<(BoxGrid, CellSolution, BoxProblem)> {
        let bg = self.cfg.box_grid(self.cs.d)?;
        let opts = self.cfg.defect_options();
        let per = bg.nodes_per_unit();
        let n = per.round() as usize;
        if (per - n as f64).abs() > 1e-9 || n < 8 {
            return Err(ConfigError(format!(
                "the defect box has {per} nodes per period; it needs an integer number of at least 8"
            ))
            .into());
        }
        let t = TorusGrid::new(bg.d(), n)?;
        let copts = CellOptions {
            scheme: Scheme::FiniteDifference { order: opts.order },
            tol: opts.tol,
            max_iter: opts.max_iter,
        };
        let matched = self.cell(&t, &copts)?;
        let bp = BoxProblem::new(&self.cs, &matched, &bg, &opts)?;
        Ok((bg, matched, bp))
    }

    fn defect(&mut self, save: bool) -> anyhow::Result<(CellSolution, BoxProblem, DefectSolution)> {
        let (_, matched, bp) = self.box_problem()?;
        let ds = solve_defect(&bp, &self.cs)?;
        let dg = &ds.diagnostics;
        self.residual("defect.measure", dg.measure.residual);
        for (p, r) in dg.correctors.iter().enumerate() {
            self.residual(&format!("defect.corrector_{p}"), r.residual);
        }
        let min_m = dg.min_full_measure;
        self.contract(
            "full invariant measure is positive",
            min_m > 0.0,
            Some(min_m),
            Some(0.0),
            format!("min(m_per + m̃) = {min_m:.6e}"),
        );
        if self.cs.d > 1 {
            let fc = dg.skew.flux_consistency;
            self.contract(
                "defect flux is consistent with the measure",
                fc <= FLUX_CONSISTENCY_TOL,
                Some(fc),
                Some(FLUX_CONSISTENCY_TOL),
                "relative divergence of the defect flux".into(),
            );
        }
        if save {
            ds.save(&self.out.join("defect"))?;
            self.saved_dir("defect")?;
        }
        Ok((matched, bp, ds))
    }
}

fn a_star_value(a: &[Vec<f64>]) -> Value {
    json!(a)
}

fn run_cell(ctx: &mut Ctx) -> anyhow::Result<()> {
    let cell = ctx.config_cell()?;
    let dg = &cell.diagnostics;
    ctx.residual("cell.measure", dg.measure_residual);
    for (p, r) in dg.corrector_residuals.iter().enumerate() {
        ctx.residual(&format!("cell.corrector_{p}"), *r);
    }
    let lam = cell.a_star_min_eigenvalue();
    ctx.contract(
        "homogenized tensor is elliptic",
        lam > 0.0,
        Some(lam),
        Some(0.0),
        "smallest eigenvalue of the symmetric part of A*".into(),
    );
    let drift = cell.drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ctx.contract(
        "periodic drift vanishes",
        drift <= DRIFT_TOL,
        Some(drift),
        Some(DRIFT_TOL),
        "max |<m_per b_per>|".into(),
    );
    if cell.scheme == Scheme::Spectral {
        let rd = dg.route_discrepancy;
        ctx.contract(
            "both averaging routes give the same A*",
            rd <= ROUTE_TOL,
            Some(rd),
            Some(ROUTE_TOL),
            "max entry difference".into(),
        );
    }
    cell.save(&ctx.out.join("cell"))?;
    ctx.saved_dir("cell")?;
    let d = cell.a_star.len();
    ctx.csv("a_star.csv", |w| {
        writeln!(w, "i,j,a_star,a_star_nondiv")?;
        for i in 0..d {
            for j in 0..d {
                writeln!(w, "{i},{j},{:.17e},{:.17e}", cell.a_star[i][j], cell.a_star_nondiv[i][j])?;
            }
        }
        Ok(())
    })?;
    let summary = json!({
        "family": ctx.cs.family,
        "n": cell.grid.n(),
        "scheme": cell.scheme,
        "a_star": a_star_value(&cell.a_star),
        "a_star_nondiv": a_star_value(&cell.a_star_nondiv),
        "a_star_min_eigenvalue": lam,
        "drift": cell.drift,
        "diagnostics": cell.diagnostics,
    });
    ctx.json("summary.json", &summary)
}

fn observable_name(o: Observable) -> &'static str {
    match o {
        Observable::MeasurePerturbation => "measure",
        Observable::CorrectorGradient => "corrector_gradient",
        Observable::SkewPotential => "skew_potential",
    }
}

fn run_defect(ctx: &mut Ctx) -> anyhow::Result<()> {
    let (_, bp, ds) = ctx.defect(true)?;
    let mut decay = BTreeMap::new();
    for obs in [Observable::MeasurePerturbation, Observable::CorrectorGradient, Observable::SkewPotential] {
        if obs == Observable::SkewPotential && ctx.cs.d == 1 {
            continue;
        }
        let reps = match decay_report(&bp, &ds, obs) {
            Ok(r) => r,
            Err(defecthom::Error::Precondition(msg)) => {
                log::warn!("no decay report for the {}: {msg}", observable_name(obs).replace('_', " "));
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        for (k, r) in reps.iter().enumerate() {
            ctx.csv(&format!("decay_{}_{k}.csv", observable_name(obs)), |w| Ok(r.write_csv(w)?))?;
        }
        decay.insert(observable_name(obs), reps);
    }
    let skew_routes = if ctx.cs.d == 3 {
        let rc = cross_validate_b(&bp, &ds.m_tilde, &ds.b_tilde);
        match rc {
            Ok(rc) => {
                ctx.contract(
                    "skew potential routes agree",
                    true,
                    Some(rc.discrepancy),
                    Some(rc.tolerance),
                    "box gauge against free-space convolution on |x| <= L/2".into(),
                );
                Some(json!(rc))
            }
            Err(defecthom::Error::RouteDisagreement {
                discrepancy, tolerance, ..
            }) => {
                ctx.contract(
                    "skew potential routes agree",
                    false,
                    Some(discrepancy),
                    Some(tolerance),
                    "box gauge against free-space convolution on |x| <= L/2".into(),
                );
                None
            }
            Err(e) => return Err(e.into()),
        }
    } else {
        None
    };
    let summary = json!({
        "family": ctx.cs.family,
        "grid": ds.grid,
        "q_star": exponent(ds.q_star),
        "q_prime": exponent(ds.q_prime),
        "alpha": exponent(ds.alpha),
        "diagnostics": ds.diagnostics,
        "decay": decay,
        "skew_routes": skew_routes,
    });
    ctx.json("summary.json", &summary)
}

/// JSON has no infinity; write it as a string.
fn exponent(q: f64) -> Value {
    if q.is_infinite() {
        json!("inf")
    } else {
        json!(q)
    }
}

fn test_function(bg: &BoxGrid) -> Field {
    let l = bg.half_width();
    Field::scalar_fn(*bg, |x| {
        let r2 = x[0] * x[0] + x[1] * x[1] + x[2] * x[2];
        (-r2 / (0.25 * l * l)).exp() * (1.0 + 0.3 * (2.0 * std::f64::consts::PI * x[0]).sin())
    })
}

fn run_divform(ctx: &mut Ctx) -> anyhow::Result<()> {
    let (matched, bp, ds) = ctx.defect(false)?;
    let dp = assemble_a(&bp, &matched, &ds)?;
    let bg = ds.grid;
    let u = test_function(&bg);
    let ir = identity_residual(&dp, &ctx.cs, &u)?;
    let mut routes = Vec::new();
    let tol = if ctx.cs.d == 1 { ROUTE_TOL_1D } else { ROUTE_TOL_SMOKE };
    for p in 0..ctx.cs.d {
        let (w_div, rep) = solve_corrector_divform(&dp, &bp, p)?;
        ctx.residual(&format!("divform.corrector_{p}"), rep.residual);
        let rd = cross_validate(&bp, &ds.w_tilde[p], &w_div, ds.q_star)?;
        ctx.contract(
            &format!("corrector routes agree (p = {p})"),
            rd.l2 <= tol,
            Some(rd.l2),
            Some(tol),
            "relative L² gradient discrepancy on |x| <= L/2".into(),
        );
        routes.push(rd);
    }
    let decay = match a_tilde_decay(&dp, ds.alpha, ctx.cfg.solver.first_k, ctx.cfg.solver.fit_from) {
        Ok(r) => Some(r),
        Err(defecthom::Error::Precondition(msg)) => {
            log::warn!("no decay report for the coefficient perturbation: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    if let Some(r) = &decay {
        ctx.csv("decay_a_tilde.csv", |w| Ok(r.write_csv(w)?))?;
    }
    ctx.contract(
        "divergence-form coefficient is elliptic",
        dp.ellipticity_margin > 0.0,
        Some(dp.ellipticity_margin),
        Some(0.0),
        "smallest eigenvalue of the symmetric part".into(),
    );
    let summary = json!({
        "family": ctx.cs.family,
        "grid": bg,
        "ellipticity_margin": dp.ellipticity_margin,
        "column_divergence": dp.column_divergence,
        "identity_residual": ir,
        "routes": routes,
        "a_tilde_decay": decay,
    });
    ctx.json("summary.json", &summary)
}

fn eps_problem(ctx: &Ctx) -> anyhow::Result<EpsProblem> {
    let sw = ctx.cfg.sweep();
    let g = BoxGrid::domain(ctx.cs.d, sw.lo, sw.hi, sw.n).map_err(|e| ConfigError(e.to_string()))?;
    let ep = EpsProblem::with_constant_rhs(g, sw.eps.clone(), sw.rhs).map_err(|e| ConfigError(e.to_string()))?;
    Ok(ep.with_order(sw.order))
}

fn run_converge(ctx: &mut Ctx) -> anyhow::Result<()> {
    let sw = ctx.cfg.sweep();
    let ep = eps_problem(ctx)?;
    let cell = ctx.config_cell()?;
    let corr = if ctx.cs.has_defect() && sw.defect_corrector {
        let (_, _, ds) = ctx.defect(false)?;
        Correctors::with_defect(&cell, &ds)?
    } else {
        Correctors::periodic(&cell)?
    };
    let rep = converge(&ep, &ctx.cs, &cell.a_star, &corr, sw.beta)?;
    for r in &rep.rows {
        ctx.residual(&format!("eps.{}", r.eps), r.backward_error);
    }
    ctx.residual("homogenized", rep.homogenized_backward_error);
    ctx.contract(
        "L² error decreases along the sweep",
        rep.l2_non_monotone_steps <= 1,
        Some(rep.l2_non_monotone_steps as f64),
        Some(1.0),
        "non-decreasing steps (one is tolerated and flagged)".into(),
    );
    ctx.csv("convergence.csv", |w| Ok(rep.write_csv(w, &sw.columns)?))?;
    ctx.json("convergence.json", &rep)
}

fn run_scaling(ctx: &mut Ctx) -> anyhow::Result<()> {
    let sw = ctx.cfg.sweep();
    let ep = eps_problem(ctx)?;
    let cell = ctx.config_cell()?;
    let hs = hessian_scaling(&ep, &ctx.cs, sw.beta)?;
    let amplitude = cell.w_per.iter().map(|w| w.max_abs()).fold(0.0, f64::max);
    let nonconstant = amplitude > 1e-8;
    let expected = if nonconstant { -1.0 } else { 0.0 };
    let slope = hs.fit.slope;
    ctx.contract(
        "Hessian norm scales as predicted by the corrector",
        (slope - expected).abs() <= SCALING_SLOPE_TOL,
        Some(slope),
        Some(SCALING_SLOPE_TOL),
        format!("expected slope {expected} (corrector amplitude {amplitude:.3e})"),
    );
    ctx.csv("hessian.csv", |w| {
        writeln!(w, "eps,hessian_norm")?;
        for (e, v) in hs.eps.iter().zip(&hs.norms) {
            writeln!(w, "{e:.17e},{v:.17e}")?;
        }
        Ok(())
    })?;
    let summary = json!({
        "family": ctx.cs.family,
        "scaling": hs,
        "corrector_amplitude": amplitude,
        "expected_slope": expected,
    });
    ctx.json("summary.json", &summary)
}

fn rel_linf(pairs: impl Iterator<Item = (f64, f64)>) -> f64 {
    let (mut num, mut den) = (0.0f64, 0.0f64);
    for (v, r) in pairs {
        num = num.max((v - r).abs());
        den = den.max(r.abs());
    }
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

#[derive(Serialize)]
struct OracleRow {
    quantity: &'static str,
    error: f64,
    tolerance: f64,
    ok: bool,
}

fn run_validate_1d(ctx: &mut Ctx) -> anyhow::Result<()> {
    let cs = ctx.cs.clone();
    let b_per: Fn1 = {
        let c = cs.clone();
        Arc::new(move |x| c.b_per_at(&[x, 0.0, 0.0])[0])
    };
    let oracle = periodic_corrector_1d(b_per.clone())?;
    let cell = ctx.config_cell()?;
    let tg = Grid::from(cell.grid);
    let disc = Discretization::new(cell.grid, cell.scheme)?;
    let xs: Vec<f64> = (0..tg.num_nodes()).map(|k| tg.point(k)[0]).collect();
    let mut rows = Vec::new();
    let mut push = |quantity, error: f64| {
        rows.push(OracleRow {
            quantity,
            error,
            tolerance: ORACLE_TOL,
            ok: error <= ORACLE_TOL,
        })
    };
    push(
        "m_per",
        rel_linf(xs.iter().zip(cell.m_per.data()).map(|(&x, &v)| (v, oracle.m_per(x)))),
    );
    let wp = disc.d1(cell.w_per[0].data(), 0);
    push("w_per'", rel_linf(xs.iter().zip(&wp).map(|(&x, &v)| (v, oracle.w_prime(x)))));
    push("a_star", ((cell.a_star[0][0] - oracle.a_star()) / oracle.a_star()).abs());
    if cs.has_defect() {
        let (bg, _, bp) = ctx.box_problem()?;
        let ds = solve_defect(&bp, &cs)?;
        ctx.residual("defect.measure", ds.diagnostics.measure.residual);
        ctx.residual("defect.corrector_0", ds.diagnostics.correctors[0].residual);
        let b_tilde: Fn1 = {
            let c = cs.clone();
            Arc::new(move |x| c.b_tilde_at(&[x, 0.0, 0.0])[0])
        };
        let dc = defect_corrector_1d(b_per, b_tilde, bg.half_width())?;
        if !dc.verdict.sublinear {
            log::warn!("the drift defect has a nonzero net integral; the whole-line corrector is not sublinear");
        }
        let g = Grid::from(bg);
        let bx: Vec<f64> = (0..g.num_nodes()).map(|k| g.point(k)[0]).collect();
        let gw = gradient(&bp, &ds.w_tilde[0])?;
        push(
            "w_tilde'",
            rel_linf(bx.iter().zip(gw.data()).map(|(&x, &v)| (v, dc.w_tilde_prime(x)))),
        );
        push(
            "m_tilde",
            rel_linf(bx.iter().zip(ds.m_tilde.data()).map(|(&x, &v)| (v, dc.m_tilde(x)))),
        );
    }
    for r in &rows {
        ctx.contract(
            &format!("{} matches its closed form", r.quantity),
            r.ok,
            Some(r.error),
            Some(r.tolerance),
            "relative L∞ error".into(),
        );
    }
    ctx.csv("oracle.csv", |w| {
        writeln!(w, "quantity,error,tolerance,ok")?;
        for r in &rows {
            writeln!(w, "{},{:.6e},{:.1e},{}", r.quantity, r.error, r.tolerance, r.ok)?;
        }
        Ok(())
    })?;
    ctx.json("oracle.json", &rows)
}

fn run_probe(ctx: &mut Ctx) -> anyhow::Result<()> {
    let p = ctx.cfg.probe();
    let q = ctx.cfg.probe_exponent(&ctx.cs);
    let grids = p
        .boxes
        .iter()
        .map(|b| BoxGrid::centered(ctx.cs.d, b.half_width, b.n))
        .collect::<defecthom::Result<Vec<_>>>()?;
    let family: Vec<ProbeRhs> = p
        .centers
        .iter()
        .flat_map(|&center| p.widths.iter().map(move |&width| ProbeRhs { center, width }))
        .collect();
    let rep = estimate_constant_probe(&ctx.cs, &grids, q, &family, &ctx.cfg.defect_options())?;
    ctx.contract(
        "estimate ratio stabilizes with the box size",
        rep.stabilized,
        Some(rep.growth),
        Some(PROBE_GROWTH_LIMIT),
        "largest ratio on the last box over the first".into(),
    );
    ctx.csv("probe.csv", |w| {
        writeln!(w, "half_width,center_x,center_y,center_z,width,ratio")?;
        for e in &rep.entries {
            let c = e.rhs.center;
            let ratio = e.ratio.map(|r| format!("{r:.17e}")).unwrap_or_default();
            writeln!(w, "{},{},{},{},{},{ratio}", e.half_width, c[0], c[1], c[2], e.rhs.width)?;
        }
        Ok(())
    })?;
    ctx.json("probe.json", &rep)
}
