//! Run configuration: a flat `section.key = value` file or the equivalent JSON object.
//!
//! Values in the key-value form are JSON literals (`0.9`, `true`, `"direct"`,
//! `[[1, 1.0]]`); anything that does not parse as JSON is taken as a bare string.

#![allow(non_snake_case)]

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use transonic_core::background1d::GasParameters;
use transonic_core::driver::Tolerances;
use transonic_core::fields::BoundaryData;
use transonic_core::mixed_solver::{ExitClosure, ViscositySchedule};
use transonic_core::regimes::RegimeSearch;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GasSection {
    pub gamma: f64,
    pub zeta0: f64,
    pub J: f64,
    pub S0: f64,
}

/// Inlet and exit of the nozzle. `d` stands for `kappa0 = 1 - d`, `kappaL = 1 + d`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub L: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappaL: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub n_x1: usize,
    pub m: usize,
    pub background_nodes: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { n_x1: 401, m: 16, background_nodes: 2000 }
    }
}

/// `S_en = S0 + sigma sum a_n cos(n pi x2)`, `E_en = E0 + sigma sum b_n cos(n pi x2)`,
/// `w_en = sigma sum c_n sin(n pi x2)`, each family given as `[[n, coef], ...]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundarySection {
    pub sigma: f64,
    pub S: Vec<(usize, f64)>,
    pub E: Vec<(usize, f64)>,
    pub w: Vec<(usize, f64)>,
}

impl BoundarySection {
    pub fn data(&self) -> BoundaryData {
        BoundaryData { sigma: self.sigma, s_cos: self.S.clone(), e_cos: self.E.clone(), w_sin: self.w.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TolSection {
    /// Stopping tolerance of the vanishing-viscosity continuation.
    pub eps: f64,
    pub eps0: f64,
    pub eps_ratio: f64,
    pub eps_cap: usize,
    pub eps_stall: usize,
    /// Fixed viscosity for every solve instead of the continuation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub outer: f64,
    pub max_outer: usize,
    pub root: f64,
}

impl Default for TolSection {
    fn default() -> Self {
        let t = Tolerances::default();
        TolSection {
            eps: t.schedule.tol,
            eps0: t.schedule.eps0,
            eps_ratio: t.schedule.ratio,
            eps_cap: t.schedule.cap,
            eps_stall: t.schedule.stall,
            epsilon: None,
            outer: t.tol_outer,
            max_outer: t.max_outer,
            root: t.root_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub theta: f64,
    pub theta_min: f64,
    pub closure: ExitClosure,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d0: Option<f64>,
}

impl Default for SolverSection {
    fn default() -> Self {
        let t = Tolerances::default();
        SolverSection { theta: t.theta, theta_min: t.theta_min, closure: t.closure, d0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    pub override_certificate: bool,
    pub emit_fields: bool,
    pub emit_traces: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), override_certificate: false, emit_fields: true, emit_traces: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub gas: GasSection,
    #[serde(default)]
    pub window: WindowSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub boundary: BoundarySection,
    #[serde(default)]
    pub tol: TolSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub regime: RegimeSearch,
    #[serde(default)]
    pub output: OutputSection,
}

/// Where the inlet and the exit of the nozzle are pinned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Inlet {
    Speed(f64),
    Kappa(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exit {
    Length(f64),
    Kappa(f64),
}

impl RunConfig {
    /// The standard transonic case with the given inlet speed and exit ratio.
    pub fn standard() -> Self {
        RunConfig {
            gas: GasSection { gamma: 3.0, zeta0: 2.0, J: 1.0, S0: 1.0 / 3.0 },
            window: WindowSection { u0: Some(0.9), kappaL: Some(1.1), ..Default::default() },
            grid: GridSection::default(),
            boundary: BoundarySection::default(),
            tol: TolSection::default(),
            solver: SolverSection::default(),
            regime: RegimeSearch::default(),
            output: OutputSection::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let value = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| CliError::Config(format!("JSON config: {e}")))?
        } else {
            kv_to_value(text)?
        };
        let cfg: RunConfig =
            serde_json::from_value(value).map_err(|e| CliError::Config(format!("config schema: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        flatten("", &serde_json::to_value(self).expect("config serialises"), &mut out);
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.inlet()?;
        self.exit()?;
        let g = &self.grid;
        if g.n_x1 < 9 || g.m < 1 || g.background_nodes < 10 {
            return Err(CliError::Config(format!("grid too small: {g:?}")));
        }
        let s = &self.solver;
        if !(s.theta > 0.0 && s.theta <= 1.0 && s.theta_min > 0.0 && s.theta_min <= s.theta) {
            return Err(CliError::Config(format!("damping must satisfy 0 < theta_min <= theta <= 1, got {s:?}")));
        }
        let t = &self.tol;
        if !(t.eps > 0.0 && t.outer > 0.0 && t.root > 0.0 && t.eps0 > 0.0 && t.eps_ratio > 0.0 && t.eps_ratio < 1.0) {
            return Err(CliError::Config(format!("tolerances must be positive with eps_ratio in (0, 1): {t:?}")));
        }
        if t.epsilon.is_some_and(|e| e.is_nan() || e <= 0.0) {
            return Err(CliError::Config("tol.epsilon must be positive".into()));
        }
        if !self.boundary.sigma.is_finite() {
            return Err(CliError::Config("boundary.sigma must be finite".into()));
        }
        Ok(())
    }

    pub fn inlet(&self) -> Result<Inlet, CliError> {
        let w = &self.window;
        match (w.d, w.u0, w.kappa0) {
            (Some(d), None, None) if w.L.is_none() && w.kappaL.is_none() => {
                if !(d > 0.0 && d < 1.0) {
                    return Err(CliError::Config(format!("window.d = {d} must lie in (0, 1)")));
                }
                Ok(Inlet::Kappa(1.0 - d))
            }
            (Some(_), _, _) => Err(CliError::Config("window.d excludes u0, kappa0, L and kappaL".into())),
            (None, Some(u), None) => Ok(Inlet::Speed(u)),
            (None, None, Some(k)) => Ok(Inlet::Kappa(k)),
            _ => Err(CliError::Config("exactly one of window.u0 and window.kappa0 is required".into())),
        }
    }

    pub fn exit(&self) -> Result<Exit, CliError> {
        let w = &self.window;
        match (w.d, w.L, w.kappaL) {
            (Some(d), None, None) => Ok(Exit::Kappa(1.0 + d)),
            (None, Some(l), None) => Ok(Exit::Length(l)),
            (None, None, Some(k)) => Ok(Exit::Kappa(k)),
            _ => Err(CliError::Config("exactly one of window.L and window.kappaL is required".into())),
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        let t = &self.tol;
        Tolerances {
            tol_outer: t.outer,
            max_outer: t.max_outer,
            theta: self.solver.theta,
            theta_min: self.solver.theta_min,
            schedule: ViscositySchedule { eps0: t.eps0, ratio: t.eps_ratio, tol: t.eps, cap: t.eps_cap, stall: t.eps_stall },
            closure: self.solver.closure,
            root_tol: t.root,
            epsilon: t.epsilon,
        }
    }

    /// Gas parameters with `E0` fixed by the inlet speed.
    pub fn gas_parameters(&self) -> Result<(GasParameters, f64), CliError> {
        let g = &self.gas;
        let probe = GasParameters { gamma: g.gamma, zeta0: g.zeta0, j: g.J, s0: g.S0, e0: -1.0 };
        probe.validate()?;
        let u0 = match self.inlet()? {
            Inlet::Speed(u) => u,
            Inlet::Kappa(k) => k * probe.u_s(),
        };
        Ok((GasParameters::from_inlet_speed(g.gamma, g.zeta0, g.J, g.S0, u0)?, u0))
    }
}

fn kv_to_value(text: &str) -> Result<Value, CliError> {
    let mut root = Map::new();
    let mut seen = BTreeSet::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, val) = line
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("line {}: expected `key = value`", n + 1)))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(CliError::Config(format!("line {}: duplicate key `{key}`", n + 1)));
        }
        let val = val.trim();
        let parsed = serde_json::from_str(val).unwrap_or_else(|_| Value::String(val.to_string()));
        let parts: Vec<&str> = key.split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(CliError::Config(format!("line {}: malformed key `{key}`", n + 1)));
        }
        let mut node = &mut root;
        for p in &parts[..parts.len() - 1] {
            node = match node.entry(p.to_string()).or_insert_with(|| Value::Object(Map::new())) {
                Value::Object(m) => m,
                _ => return Err(CliError::Config(format!("line {}: `{p}` is both a value and a section", n + 1))),
            };
        }
        let last = parts[parts.len() - 1];
        if node.contains_key(last) {
            return Err(CliError::Config(format!("line {}: `{key}` is both a value and a section", n + 1)));
        }
        node.insert(last.to_string(), parsed);
    }
    Ok(Value::Object(root))
}

fn flatten(prefix: &str, v: &Value, out: &mut String) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        other => {
            out.push_str(&format!("{prefix} = {other}\n"));
        }
    }
}
