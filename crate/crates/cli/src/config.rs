//! Experiment configuration files (TOML) and their load-time checks.

use std::fmt;
use std::path::{Path, PathBuf};

use defecthom::cell::CellOptions;
use defecthom::coefficients::{build_family, CoefficientSet};
use defecthom::defect::{DefectOptions, SkewGauge};
use defecthom::fields::BoxGrid;
use defecthom::multiscale::Column;
use defecthom::operators::Scheme;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// A configuration problem the user has to fix; maps to exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn bad(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Cell,
    Defect,
    Divform,
    Converge,
    Scaling,
    #[serde(rename = "validate-1d")]
    #[value(name = "validate-1d")]
    Validate1d,
    Probe,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Cell => "cell",
            Kind::Defect => "defect",
            Kind::Divform => "divform",
            Kind::Converge => "converge",
            Kind::Scaling => "scaling",
            Kind::Validate1d => "validate-1d",
            Kind::Probe => "probe",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CachePolicy {
    /// Reuse cached cell solutions and store new ones.
    #[default]
    Use,
    /// Neither read nor write the cache.
    Off,
    /// Recompute and overwrite.
    Refresh,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Must match the family's dimension when given.
    pub d: Option<usize>,
    /// Points per axis of the cell torus.
    pub cell_n: usize,
    /// Half-width `L` of the defect box `[-L, L]^d`.
    pub half_width: f64,
    /// Intervals per axis of the defect box.
    pub box_n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            d: None,
            cell_n: 64,
            half_width: 4.0,
            box_n: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    /// Cell discretization, e.g. `{ kind = "spectral" }` or
    /// `{ kind = "finite-difference", order = 4 }`.
    pub cell_scheme: Scheme,
    /// Even stencil order of box solves.
    pub order: usize,
    pub skew_gauge: SkewGauge,
    /// First dyadic shell index and smallest fitted radius of decay reports.
    pub first_k: i32,
    pub fit_from: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let d = DefectOptions::default();
        SolverConfig {
            tol: 1e-10,
            max_iter: 2000,
            cell_scheme: Scheme::Spectral,
            order: d.order,
            skew_gauge: d.skew_gauge,
            first_k: d.first_k,
            fit_from: d.fit_from,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Domain `[lo, hi]^d`.
    pub lo: f64,
    pub hi: f64,
    /// Intervals per axis of the domain grid.
    pub n: usize,
    pub eps: Vec<f64>,
    /// Constant right-hand side.
    pub rhs: f64,
    pub order: usize,
    /// Exponent of the Hessian norm.
    pub beta: f64,
    pub columns: Vec<Column>,
    /// Use the defect corrector in two-scale errors (needs a defect).
    pub defect_corrector: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            lo: 0.0,
            hi: 1.0,
            n: 1024,
            eps: vec![0.25, 0.125, 0.0625, 0.03125],
            rhs: 1.0,
            order: 2,
            beta: 2.0,
            columns: Column::ALL.to_vec(),
            defect_corrector: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxSpec {
    pub half_width: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    /// Defaults to `max(r, s)` of the family.
    pub q: Option<f64>,
    pub boxes: Vec<BoxSpec>,
    /// Widths of the Gaussian right-hand sides, all centered at `centers`.
    pub widths: Vec<f64>,
    pub centers: Vec<[f64; 3]>,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            q: None,
            boxes: vec![
                BoxSpec { half_width: 4.0, n: 64 },
                BoxSpec { half_width: 8.0, n: 128 },
            ],
            widths: vec![0.5, 1.0],
            centers: vec![[0.0; 3]],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub cache: CachePolicy,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            cache: CachePolicy::Use,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub family: String,
    #[serde(default = "empty_table")]
    pub params: Value,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe: Option<ProbeConfig>,
    #[serde(default)]
    pub output: OutputConfig,
}

fn empty_table() -> Value {
    Value::Object(Default::default())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| bad(format!("cannot parse configuration: {e}")))
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| bad(format!("cannot read configuration {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Build the coefficient family and check every setting that can be
    /// checked without solving.
    pub fn check(&self) -> anyhow::Result<CoefficientSet> {
        if !self.params.is_object() {
            return Err(bad("`params` must be a table"));
        }
        let cs = build_family(&self.family, &self.params).map_err(|e| bad(e.to_string()))?;
        let d = cs.d;
        if let Some(gd) = self.grid.d {
            if gd != d {
                return Err(bad(format!(
                    "grid.d = {gd} but family `{}` is {d}-dimensional",
                    self.family
                )));
            }
        }
        let s = &self.solver;
        if !(s.tol > 0.0 && s.tol < 1.0) {
            return Err(bad(format!("solver.tol must lie in (0, 1), got {}", s.tol)));
        }
        if s.order < 2 || !s.order.is_multiple_of(2) {
            return Err(bad(format!("solver.order must be even and at least 2, got {}", s.order)));
        }
        // In one dimension no exponent lies in [1, d); the 1D defect problems
        // are checked against closed forms instead of the estimates.
        if d > 1 && !cs.counterexample {
            let checks = [
                (!cs.a_tilde.is_zero(), "r (decay exponent of the diffusion defect)", cs.r),
                (!cs.b_tilde.is_zero(), "s (decay exponent of the drift defect)", cs.s),
            ];
            for (present, name, v) in checks {
                if present && !(v >= 1.0 && v < d as f64) {
                    return Err(bad(format!(
                        "{name} = {v} must lie in [1, d) with d = {d}: the defect estimates need integrability below the dimension"
                    )));
                }
            }
        }
        match self.kind {
            Kind::Cell => {}
            Kind::Defect | Kind::Divform => {
                if !cs.has_defect() && self.kind == Kind::Defect {
                    log::warn!("family `{}` has no defect; all perturbations will vanish", self.family);
                }
                self.box_grid(d)?;
            }
            Kind::Validate1d => {
                if d != 1 {
                    return Err(bad(format!(
                        "validate-1d compares against one-dimensional closed forms, but `{}` is {d}-dimensional",
                        self.family
                    )));
                }
                if cs.has_defect() {
                    self.box_grid(d)?;
                }
            }
            Kind::Converge | Kind::Scaling => {
                let sw = self.sweep();
                if sw.eps.len() < 3 {
                    return Err(bad("sweep.eps needs at least 3 values"));
                }
                if !(sw.beta >= 1.0) {
                    return Err(bad(format!("sweep.beta must be at least 1, got {}", sw.beta)));
                }
                BoxGrid::domain(d, sw.lo, sw.hi, sw.n).map_err(|e| bad(e.to_string()))?;
                if self.kind == Kind::Converge && sw.defect_corrector && cs.has_defect() {
                    self.box_grid(d)?;
                }
            }
            Kind::Probe => {
                let p = self.probe();
                let q = self.probe_exponent(&cs);
                if !(q >= 1.0 && q < d as f64) {
                    return Err(bad(format!(
                        "probe exponent q = {q} must lie in [1, d) with d = {d}: the estimate is stated for q below the dimension"
                    )));
                }
                if p.boxes.len() < 2 {
                    return Err(bad("probe.boxes needs at least two box sizes"));
                }
                if p.widths.is_empty() || p.centers.is_empty() || p.widths.iter().any(|w| !(*w > 0.0)) {
                    return Err(bad("probe needs positive widths and at least one center"));
                }
                for b in &p.boxes {
                    BoxGrid::centered(d, b.half_width, b.n).map_err(|e| bad(e.to_string()))?;
                }
            }
        }
        Ok(cs)
    }

    pub fn sweep(&self) -> SweepConfig {
        self.sweep.clone().unwrap_or_default()
    }

    pub fn probe(&self) -> ProbeConfig {
        self.probe.clone().unwrap_or_default()
    }

    pub fn probe_exponent(&self, cs: &CoefficientSet) -> f64 {
        self.probe().q.unwrap_or(cs.r.max(cs.s))
    }

    pub fn box_grid(&self, d: usize) -> anyhow::Result<BoxGrid> {
        BoxGrid::centered(d, self.grid.half_width, self.grid.box_n).map_err(|e| bad(e.to_string()))
    }

    pub fn cell_options(&self) -> CellOptions {
        CellOptions {
            scheme: self.solver.cell_scheme,
            tol: self.solver.tol,
            max_iter: self.solver.max_iter,
        }
    }

    pub fn defect_options(&self) -> DefectOptions {
        let s = &self.solver;
        DefectOptions {
            order: s.order,
            tol: s.tol,
            max_iter: s.max_iter,
            first_k: s.first_k,
            fit_from: s.fit_from,
            skew_gauge: s.skew_gauge,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FULL: &str = r#"
kind = "probe"
family = "gaussian-bump-defect"

[params]
d = 3

[grid]
cell_n = 16
half_width = 4.0
box_n = 64

[solver]
tol = 1e-9
cell_scheme = { kind = "finite-difference", order = 2 }

[probe]
q = 1.5
boxes = [{ half_width = 4.0, n = 64 }, { half_width = 8.0, n = 128 }]

[output]
dir = "out/probe"
cache = "off"
"#;

    #[test]
    fn round_trip_is_the_identity() {
        let c = ExperimentConfig::parse(FULL).unwrap();
        let again = ExperimentConfig::parse(&c.to_toml().unwrap()).unwrap();
        assert_eq!(c, again);
        let minimal = ExperimentConfig::parse("kind = \"cell\"\nfamily = \"identity\"\n").unwrap();
        assert_eq!(minimal, ExperimentConfig::parse(&minimal.to_toml().unwrap()).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::parse("kind = \"cell\"\nfamily = \"identity\"\n[grid]\nnn = 3\n").unwrap_err();
        assert!(err.downcast_ref::<ConfigError>().is_some());
    }

    #[test]
    fn probe_exponent_must_stay_below_the_dimension() {
        let mut c = ExperimentConfig::parse(FULL).unwrap();
        c.probe.as_mut().unwrap().q = Some(3.0);
        let msg = c.check().unwrap_err().to_string();
        assert!(msg.contains("below the dimension"), "{msg}");
    }

    #[test]
    fn validate_1d_needs_a_line() {
        let c = ExperimentConfig::parse("kind = \"validate-1d\"\nfamily = \"shear-2d\"\n").unwrap();
        assert!(c.check().is_err());
    }
}
