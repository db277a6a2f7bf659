//! Pipelines behind the subcommands and the files they write.

#![allow(non_snake_case)]

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use transonic_core::background1d::{solve_background, BackgroundSolution, GasParameters};
use transonic_core::driver::{fixed_point_solve, sigma_cap, MachReport, Residuals, SolveConfig, SolveOutcome};
use transonic_core::fields::{Field2D, Grid, NodeField, Smallness, StateNorms};
use transonic_core::regimes::{alpha_profile, alpha_window_min, certify_regime, eta_for, kappa_grid, JRegime, RegimeReport};

use crate::config::{Exit, RunConfig};
use crate::error::CliError;

/// Command-line overrides applied on top of a loaded config.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub scale_sigma: Option<f64>,
    pub override_certificate: bool,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<(), CliError> {
        if let Some(dir) = &self.out {
            cfg.output.dir = dir.clone();
        }
        if let Some(s) = self.scale_sigma {
            if !s.is_finite() {
                return Err(CliError::Config(format!("--scale-sigma must be finite, got {s}")));
            }
            cfg.boundary.sigma *= s;
        }
        cfg.output.override_certificate |= self.override_certificate;
        Ok(())
    }
}

/// Scientific notation with 17 significant digits.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<f64>>) -> Result<(), CliError> {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = r.into_iter().map(fmt).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    write_file(path, &s)
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<(), CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::io(path, e))?;
    s.push('\n');
    write_file(path, &s)
}

/// The nozzle fixed by a config: gas parameters, inlet speed, background and length.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: GasParameters,
    pub u0: f64,
    pub background: BackgroundSolution,
    pub length: f64,
    pub kappa0: f64,
    pub kappa_l: f64,
}

pub fn resolve(cfg: &RunConfig) -> Result<Resolved, CliError> {
    let (params, u0) = cfg.gas_parameters()?;
    let background = solve_background(&params, u0, cfg.grid.background_nodes)?;
    let us = params.u_s();
    let length = match cfg.exit()? {
        Exit::Length(l) => l,
        Exit::Kappa(k) => background.x1_of_speed(k * us)?,
    };
    if !(length > 0.0 && length < background.l_max) {
        return Err(CliError::Solver(transonic_core::SolverError::Input(format!(
            "L = {length} must lie in (0, l_max = {})",
            background.l_max
        ))));
    }
    let kappa_l = background.profile_at(length)?.u1 / us;
    Ok(Resolved { params, u0, background, length, kappa0: u0 / us, kappa_l })
}

pub fn solve_config(cfg: &RunConfig, r: &Resolved) -> SolveConfig {
    SolveConfig {
        params: r.params,
        u0: r.u0,
        length: r.length,
        n_x1: cfg.grid.n_x1,
        m: cfg.grid.m,
        boundary: cfg.boundary.data(),
        tol: cfg.tolerances(),
        d0: cfg.solver.d0,
        override_certificate: cfg.output.override_certificate,
        background_resolution: cfg.grid.background_nodes,
        regime_search: cfg.regime,
    }
}

#[derive(Debug, Serialize)]
struct Parameters {
    gamma: f64,
    zeta0: f64,
    J: f64,
    S0: f64,
    E0: f64,
    u0: f64,
    u_s: f64,
    L: f64,
    kappa0: f64,
    kappaL: f64,
}

impl Parameters {
    fn new(r: &Resolved) -> Self {
        let p = &r.params;
        Parameters {
            gamma: p.gamma,
            zeta0: p.zeta0,
            J: p.j,
            S0: p.s0,
            E0: p.e0,
            u0: r.u0,
            u_s: p.u_s(),
            L: r.length,
            kappa0: r.kappa0,
            kappaL: r.kappa_l,
        }
    }
}

#[derive(Debug, Serialize)]
struct BackgroundSummary {
    parameters: Parameters,
    l_s: f64,
    l_max: f64,
    u_max: f64,
    nodes: usize,
    hamiltonian_defect: f64,
}

/// `background`: the 1D profile on its own nodes.
pub fn run_background(cfg: &RunConfig) -> Result<Resolved, CliError> {
    let r = resolve(cfg)?;
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let bg = &r.background;
    write_csv(
        &dir.join("background.csv"),
        &["x1", "u1", "E", "rho", "Phi", "phi_pot"],
        (0..bg.x1_nodes.len()).map(|i| vec![bg.x1_nodes[i], bg.u1[i], bg.E[i], bg.rho[i], bg.Phi[i], bg.phi_pot[i]]),
    )?;
    let summary = BackgroundSummary {
        parameters: Parameters::new(&r),
        l_s: bg.l_s,
        l_max: bg.l_max,
        u_max: bg.u_max,
        nodes: bg.x1_nodes.len(),
        hamiltonian_defect: bg.conservation_defect()?,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(r)
}

/// Lower bound of `alpha` on the window `[kappa0, kappaL]` for the better of the two weights.
pub fn window_alpha(params: &GasParameters, kappa0: f64, kappa_l: f64, resolution: f64) -> Result<f64, CliError> {
    let mut best = f64::NEG_INFINITY;
    for branch in [JRegime::Small, JRegime::Large] {
        let (a, _) = alpha_window_min(kappa0, kappa_l, eta_for(branch, params.gamma), resolution, params)?;
        best = best.max(a);
    }
    Ok(best)
}

#[derive(Debug, Serialize)]
struct RegimeSummary<'a> {
    certificate: &'a RegimeReport,
    run_window: RunWindow,
}

#[derive(Debug, Serialize)]
struct RunWindow {
    kappa0: f64,
    kappaL: f64,
    alpha_min: f64,
    covered: bool,
}

/// `regimes`: certificate search plus the alpha profile on the certified window.
pub fn run_regimes(cfg: &RunConfig) -> Result<RegimeReport, CliError> {
    let r = resolve(cfg)?;
    let rep = certify_regime(&r.params, &cfg.regime)?;
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let grid = kappa_grid(rep.kappa0, rep.kappa_l, cfg.regime.resolution.min((rep.kappa_l - rep.kappa0) / 20.0));
    let prof = alpha_profile(&grid, rep.kappa0, rep.kappa_l, rep.eta, &r.params)?;
    write_csv(&dir.join("alpha.csv"), &["kappa", "alpha"], prof.kappa.iter().zip(&prof.alpha).map(|(k, a)| vec![*k, *a]))?;
    let alpha_min = window_alpha(&r.params, r.kappa0, r.kappa_l, cfg.regime.resolution)?;
    let covered = rep.certified && r.kappa0 >= rep.kappa0 && r.kappa_l <= rep.kappa_l;
    let summary = RegimeSummary {
        certificate: &rep,
        run_window: RunWindow { kappa0: r.kappa0, kappaL: r.kappa_l, alpha_min, covered },
    };
    write_json(&dir.join("regimes.json"), &summary)?;
    Ok(rep)
}

#[derive(Debug, Serialize)]
struct Margins {
    #[serde(flatten)]
    smallness: Smallness,
    /// `sigma_cap - amplitude` of the boundary data.
    sigma_margin: f64,
    admissible: bool,
}

#[derive(Debug, Serialize)]
struct SolveSummary<'a> {
    parameters: Parameters,
    n_x1: usize,
    m: usize,
    sigma: f64,
    l_s: f64,
    l_max: f64,
    converged: bool,
    iterations: usize,
    increments: &'a [f64],
    epsilon: f64,
    theta: f64,
    d0: f64,
    residuals: &'a Residuals,
    norms: &'a StateNorms,
    norm_margins: Margins,
    sonic_deviation: f64,
    mach: &'a MachReport,
    certificate: &'a RegimeReport,
    warnings: &'a [String],
}

fn field_rows<'a>(grid: &'a Grid, f: &'a NodeField) -> impl Iterator<Item = Vec<f64>> + 'a {
    let np = grid.n_pts();
    (0..grid.n_x1).flat_map(move |i| (0..np).map(move |j| vec![grid.x1[i], grid.x2[j], f.at(i, j)]))
}

fn values(f: &Field2D, grid: &Grid) -> NodeField {
    f.evaluate(grid).v
}

fn write_fields(dir: &Path, o: &SolveOutcome) -> Result<(), CliError> {
    let fdir = dir.join("fields");
    create_dir(&fdir)?;
    let g = &o.grid;
    let s = &o.state;
    let p = &o.primitives;
    let list: [(&str, NodeField); 8] = [
        ("psi", values(&s.psi, g)),
        ("phi", values(&s.phi, g)),
        ("big_psi", values(&s.Psi, g)),
        ("T", values(&s.T, g)),
        ("rho", p.rho.clone()),
        ("u1", p.u1.clone()),
        ("u2", p.u2.clone()),
        ("M", o.mach.clone()),
    ];
    for (name, f) in &list {
        write_csv(&fdir.join(format!("{name}.csv")), &["x1", "x2", name], field_rows(g, f))?;
    }
    Ok(())
}

/// `solve`: the full pipeline. Artifacts are written even when the outer
/// iteration stops at its cap; that case then returns `NotConverged`.
pub fn run_solve(cfg: &RunConfig) -> Result<SolveOutcome, CliError> {
    let r = resolve(cfg)?;
    let sc = solve_config(cfg, &r);
    let o = fixed_point_solve(&sc)?;
    write_solve_outputs(cfg, &r, &sc, &o)?;
    if !o.converged {
        return Err(CliError::NotConverged(format!(
            "{} iterations, last increment {:e}",
            o.iterations,
            o.increments.last().copied().unwrap_or(f64::NAN)
        )));
    }
    Ok(o)
}

fn write_solve_outputs(cfg: &RunConfig, r: &Resolved, sc: &SolveConfig, o: &SolveOutcome) -> Result<(), CliError> {
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let bg = &o.background;
    write_csv(
        &dir.join("background.csv"),
        &["x1", "u1", "E", "rho", "Phi", "phi_pot"],
        (0..bg.x1_nodes.len()).map(|i| vec![bg.x1_nodes[i], bg.u1[i], bg.E[i], bg.rho[i], bg.Phi[i], bg.phi_pot[i]]),
    )?;
    if cfg.output.emit_fields {
        write_fields(dir, o)?;
    }
    let si = &o.sonic_interface;
    write_csv(&dir.join("sonic_interface.csv"), &["x2", "g_s"], si.x2.iter().zip(&si.g).map(|(a, b)| vec![*a, *b]))?;
    if cfg.output.emit_traces {
        let path = dir.join("convergence.jsonl");
        let mut f = fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        for t in &o.trace {
            writeln!(f, "{}", serde_json::to_string(t).expect("trace serialises")).map_err(|e| CliError::io(&path, e))?;
        }
    }
    let summary = SolveSummary {
        parameters: Parameters::new(r),
        n_x1: sc.n_x1,
        m: sc.m,
        sigma: sc.boundary.sigma,
        l_s: bg.l_s,
        l_max: bg.l_max,
        converged: o.converged,
        iterations: o.iterations,
        increments: &o.increments,
        epsilon: o.epsilon,
        theta: o.theta,
        d0: o.d0,
        residuals: &o.residuals,
        norms: &o.norms,
        norm_margins: Margins {
            smallness: o.smallness,
            sigma_margin: sigma_cap(&sc.params, sc.u0) - sc.boundary.amplitude(),
            admissible: o.smallness.admissible(),
        },
        sonic_deviation: si.deviation,
        mach: &o.mach_report,
        certificate: &o.certificate,
        warnings: &o.warnings,
    };
    write_json(&dir.join("summary.json"), &summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    J,
    Sigma,
    D,
}

impl std::str::FromStr for SweepAxis {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self, CliError> {
        match s {
            "J" => Ok(SweepAxis::J),
            "sigma" => Ok(SweepAxis::Sigma),
            "d" => Ok(SweepAxis::D),
            _ => Err(CliError::Config(format!("unknown sweep axis `{s}`; expected J, sigma or d"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub L: f64,
    pub alpha_min: f64,
    pub certified: bool,
    pub converged: bool,
    pub sup_gs_minus_ls: f64,
    pub iterations: usize,
    pub error: String,
}

fn sweep_row(base: &RunConfig, axis: SweepAxis, value: f64, dir: PathBuf) -> SweepRow {
    let mut row = SweepRow {
        value,
        L: f64::NAN,
        alpha_min: f64::NAN,
        certified: false,
        converged: false,
        sup_gs_minus_ls: f64::NAN,
        iterations: 0,
        error: String::new(),
    };
    let mut cfg = base.clone();
    cfg.output.dir = dir;
    match axis {
        SweepAxis::J => cfg.gas.J = value,
        SweepAxis::Sigma => cfg.boundary.sigma = value,
        SweepAxis::D => cfg.window = crate::config::WindowSection { d: Some(value), ..Default::default() },
    }
    let result = (|| -> Result<(), CliError> {
        cfg.validate()?;
        let r = resolve(&cfg)?;
        row.L = r.length;
        row.alpha_min = window_alpha(&r.params, r.kappa0, r.kappa_l, cfg.regime.resolution)?;
        row.certified = row.alpha_min > 0.0;
        let o = run_solve(&cfg);
        let o = match o {
            Ok(o) => o,
            Err(e) => {
                if let Ok(text) = fs::read_to_string(cfg.output.dir.join("summary.json")) {
                    if let Ok(v) = serde_json::from_str::<serde_json::Value>(&text) {
                        row.iterations = v["iterations"].as_u64().unwrap_or(0) as usize;
                        row.sup_gs_minus_ls = v["sonic_deviation"].as_f64().unwrap_or(f64::NAN);
                    }
                }
                return Err(e);
            }
        };
        row.converged = o.converged;
        row.iterations = o.iterations;
        row.sup_gs_minus_ls = o.sonic_interface.deviation;
        Ok(())
    })();
    if let Err(e) = result {
        row.error = e.to_json();
    }
    row
}

/// `sweep`: one pipeline run per value, each in `rows/<index>`; failures are
/// recorded in the row and the sweep moves on.
pub fn run_sweep(cfg: &RunConfig, axis: SweepAxis, vals: &[f64]) -> Result<Vec<SweepRow>, CliError> {
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let rows: Vec<SweepRow> =
        vals.iter().enumerate().map(|(k, &v)| sweep_row(cfg, axis, v, dir.join("rows").join(k.to_string()))).collect();
    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::io(&path, e))?;
    w.write_record(["value", "L", "alpha_min", "certified", "converged", "sup_gs_minus_ls", "iterations", "error"])
        .map_err(|e| CliError::io(&path, e))?;
    for r in &rows {
        w.write_record([
            fmt(r.value),
            fmt(r.L),
            fmt(r.alpha_min),
            r.certified.to_string(),
            r.converged.to_string(),
            fmt(r.sup_gs_minus_ls),
            r.iterations.to_string(),
            r.error.clone(),
        ])
        .map_err(|e| CliError::io(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(rows)
}

pub fn parse_values(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Config(format!("sweep value `{t}` is not a number"))))
        .collect()
}
