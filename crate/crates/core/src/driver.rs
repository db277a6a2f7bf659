//! Outer Picard iteration over `(T, phi, psi, Psi)` and post-processing: sonic
//! interface, Mach number, primitive variables and residuals.

#![allow(non_snake_case)]

use serde::{Deserialize, Serialize};

use crate::background1d::{solve_background, BackgroundSolution, GasParameters};
use crate::error::{Result, SolverError};
use crate::fields::{
    assemble_coefficients, check_smallness, default_d0, momentum_field, BackgroundOnGrid, BoundaryData,
    CoefficientSet, FlowState, Grid, NodeField, Smallness, StateNorms, StateValues,
};
use crate::mixed_solver::{solve_linear_problem, ExitClosure, LinearSolveOptions, TraceEntry, ViscositySchedule};
use crate::regimes::{certify_regime, RegimeReport, RegimeSearch};
use crate::transport::{lagrangian_map, stream_function, transport_entropy};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_outer: f64,
    pub max_outer: usize,
    /// Initial damping `theta`; halved whenever the increment grows.
    pub theta: f64,
    pub theta_min: f64,
    pub schedule: ViscositySchedule,
    pub closure: ExitClosure,
    pub root_tol: f64,
    /// Fixed viscosity for every linear solve; `None` runs the continuation once and freezes its result.
    pub epsilon: Option<f64>,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            tol_outer: 1e-9,
            max_outer: 100,
            theta: 1.0,
            theta_min: 1.0 / 64.0,
            schedule: ViscositySchedule::default(),
            closure: ExitClosure::Direct,
            root_tol: 1e-10,
            epsilon: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveConfig {
    pub params: GasParameters,
    pub u0: f64,
    pub length: f64,
    pub n_x1: usize,
    pub m: usize,
    pub boundary: BoundaryData,
    pub tol: Tolerances,
    pub d0: Option<f64>,
    pub override_certificate: bool,
    pub background_resolution: usize,
    pub regime_search: RegimeSearch,
}

/// Largest admissible boundary amplitude.
pub fn sigma_cap(params: &GasParameters, u0: f64) -> f64 {
    1e-3 * params.s0.min(params.e0.abs()).min(u0)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SonicInterface {
    pub x2: Vec<f64>,
    pub g: Vec<f64>,
    pub l_s: f64,
    /// `sup |g_s - l_s|`.
    pub deviation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Residual {
    pub sup: f64,
    pub l2: f64,
}

/// Grid residuals of the nonlinear system, over interior x1 nodes `3..=n-4`; the two nodes next to each end carry the
/// inlet layer and the one-sided exit stencils.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Residuals {
    pub psi: Residual,
    pub Psi: Residual,
    pub phi: Residual,
    pub transport: Residual,
    pub divergence: Residual,
    pub mass_flux: Residual,
    pub poisson: Residual,
    /// `sup |u . n|` on the walls.
    pub wall_normal: f64,
}

#[derive(Debug, Clone)]
pub struct Primitives {
    pub rho: NodeField,
    pub u1: NodeField,
    pub u2: NodeField,
    pub S: NodeField,
    pub Phi: NodeField,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MachReport {
    pub mismatches: usize,
    pub checked: usize,
    /// Number of x2 lines on which `M - 1` changes sign exactly once.
    pub single_crossing_lines: usize,
    pub lines: usize,
}

#[derive(Debug, Clone)]
pub struct SolveOutcome {
    pub state: FlowState,
    pub background: BackgroundSolution,
    pub grid: Grid,
    pub coefficients: CoefficientSet,
    pub certificate: RegimeReport,
    pub sonic_interface: SonicInterface,
    pub mach: NodeField,
    pub mach_report: MachReport,
    pub primitives: Primitives,
    pub residuals: Residuals,
    pub iterations: usize,
    pub converged: bool,
    pub epsilon: f64,
    pub trace: Vec<TraceEntry>,
    pub increments: Vec<f64>,
    pub theta: f64,
    pub norms: StateNorms,
    pub smallness: Smallness,
    pub d0: f64,
    pub warnings: Vec<String>,
}

fn certificate_covers(rep: &RegimeReport, k0: f64, kl: f64) -> bool {
    rep.certified && k0 >= rep.kappa0 * (1.0 - 1e-12) && kl <= rep.kappa_l * (1.0 + 1e-12)
}

/// Runs the full pipeline: background, regime check, Picard iteration, extraction.
pub fn fixed_point_solve(cfg: &SolveConfig) -> Result<SolveOutcome> {
    let p = &cfg.params;
    p.validate()?;
    let bg = solve_background(p, cfg.u0, cfg.background_resolution)?;
    if !(cfg.length > bg.l_s && cfg.length < bg.l_max) {
        return Err(SolverError::Input(format!(
            "L = {} must lie in (l_s, l_max) = ({}, {})",
            cfg.length, bg.l_s, bg.l_max
        )));
    }
    let mut warnings = Vec::new();
    let certificate = certify_regime(p, &cfg.regime_search)?;
    let k0 = cfg.u0 / p.u_s();
    let kl = bg.profile_at(cfg.length)?.u1 / p.u_s();
    if !certificate_covers(&certificate, k0, kl) {
        if !cfg.override_certificate {
            return Err(SolverError::Precondition(format!(
                "window kappa in [{k0}, {kl}] is not covered by a regime certificate (certified = {}, d = {}); pass the certificate override to proceed",
                certificate.certified, certificate.d
            )));
        }
        warnings.push("regime certificate overridden".to_string());
    }
    let cap = sigma_cap(p, cfg.u0);
    if cfg.boundary.amplitude() > cap {
        return Err(SolverError::Precondition(format!(
            "boundary perturbation amplitude {:e} exceeds the cap {cap:e}",
            cfg.boundary.amplitude()
        )));
    }
    let grid = Grid::new(cfg.n_x1, cfg.length, cfg.m)?;
    let bgg = BackgroundOnGrid::new(&bg, &grid)?;
    let d0 = cfg.d0.unwrap_or_else(|| default_d0(&bgg, p));
    let tol = &cfg.tol;
    let mut opts = LinearSolveOptions { schedule: tol.schedule, closure: tol.closure, epsilon: tol.epsilon };
    let mut state = FlowState::zero(&grid);
    let mut theta = tol.theta;
    let mut increments = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut eps_used = tol.epsilon.unwrap_or(tol.schedule.eps0);
    for it in 1..=tol.max_outer {
        iterations = it;
        let update = picard_map(&state, &cfg.boundary, &bgg, p, &grid, d0, bg.u_max, &opts).map_err(|e| match e {
            SolverError::Admissibility(msg) => SolverError::Admissibility(format!("iterate {it}: {msg}")),
            other => other,
        })?;
        if opts.epsilon.is_none() {
            if !update.converged {
                warnings.push(format!("vanishing-viscosity cap reached at eps = {:e}", update.epsilon));
            }
            trace = update.trace.clone();
            opts.epsilon = Some(update.epsilon);
        }
        eps_used = update.epsilon;
        for w in &update.audit_warnings {
            if !warnings.contains(w) {
                warnings.push(w.clone());
            }
        }
        let next = update.state.combine(theta, &state, 1.0 - theta);
        let inc = next.h1_distance(&state, &grid);
        if !inc.is_finite() {
            return Err(SolverError::NonConvergence(format!("non-finite increment at iterate {it}")));
        }
        if let Some(&prev) = increments.last() {
            if inc > prev {
                theta *= 0.5;
                if theta < tol.theta_min {
                    return Err(SolverError::NonConvergence(format!(
                        "Picard increments grow ({prev:e} -> {inc:e}) below the damping floor {}",
                        tol.theta_min
                    )));
                }
                warnings.push(format!("damping halved to {theta} at iterate {it}"));
            }
        }
        increments.push(inc);
        state = next;
        if inc <= tol.tol_outer {
            converged = true;
            break;
        }
    }
    let smallness = check_smallness(&state, &bgg, p, &grid, d0);
    let coefficients = assemble_coefficients(&state, &bgg, p, &grid, d0, bg.u_max)?;
    let sonic = sonic_interface(&coefficients, &bg, &grid, tol.root_tol)?;
    let (mach, mach_report) = mach_field(&state, &bgg, p, &grid, &coefficients, &sonic)?;
    let primitives = reconstruct_primitives(&state, &bgg, p, &grid)?;
    let residuals = residuals(&state, &coefficients, &bgg, p, &grid, &primitives)?;
    let norms = state.norms(&grid);
    Ok(SolveOutcome {
        state,
        background: bg,
        grid,
        coefficients,
        certificate,
        sonic_interface: sonic,
        mach,
        mach_report,
        primitives,
        residuals,
        iterations,
        converged,
        epsilon: eps_used,
        trace,
        increments,
        theta,
        norms,
        smallness,
        d0,
        warnings,
    })
}

struct PicardUpdate {
    state: FlowState,
    epsilon: f64,
    trace: Vec<TraceEntry>,
    converged: bool,
    audit_warnings: Vec<String>,
}

/// One application of the iteration map: transport, then the linear solves.
#[allow(clippy::too_many_arguments)]
fn picard_map(
    state: &FlowState,
    bd: &BoundaryData,
    bgg: &BackgroundOnGrid,
    p: &GasParameters,
    grid: &Grid,
    d0: f64,
    u_max: f64,
    opts: &LinearSolveOptions,
) -> Result<PicardUpdate> {
    let m = momentum_field(state, bgg, p, grid)?;
    let map = lagrangian_map(&stream_function(&m.m1, grid)?, grid)?;
    let T = transport_entropy(bd, &map, grid);
    let with_t = FlowState { T: T.clone(), ..state.clone() };
    let coeffs = assemble_coefficients(&with_t, bgg, p, grid, d0, u_max)?;
    let lin = solve_linear_problem(&coeffs, bd, grid, opts)?;
    Ok(PicardUpdate {
        state: FlowState { psi: lin.psi, phi: lin.phi, Psi: lin.Psi, T },
        epsilon: lin.epsilon,
        trace: lin.trace,
        converged: lin.converged,
        audit_warnings: lin.audit.warnings,
    })
}

/// Four-point Lagrange interpolation of nodal values at `x` on a uniform grid.
fn cubic_at(vals: &[f64], h: f64, x: f64) -> f64 {
    let n = vals.len();
    let i = ((x / h).floor() as isize).clamp(1, n as isize - 3) as usize;
    let s = x / h - i as f64;
    let (a, b, c, d) = (vals[i - 1], vals[i], vals[i + 1], vals[i + 2]);
    let t = s;
    a * (-t * (t - 1.0) * (t - 2.0) / 6.0) + b * ((t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0)
        + c * (-(t + 1.0) * t * (t - 2.0) / 2.0)
        + d * ((t + 1.0) * t * (t - 1.0) / 6.0)
}

/// Brent's method on a bracketing interval.
pub fn brent(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let (mut fa, mut fb) = (f(a), f(b));
    if fa == 0.0 {
        return a;
    }
    if fb == 0.0 {
        return b;
    }
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..200 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return b;
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut pp, mut q);
            if a == c {
                pp = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                pp = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if pp > 0.0 {
                q = -q;
            }
            pp = pp.abs();
            if 2.0 * pp < (3.0 * xm * q - (tol1 * q).abs()).min((e * q).abs()) {
                e = d;
                d = pp / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 { d } else { tol1.copysign(xm) };
        fb = f(b);
    }
    b
}

/// Root of `D = a11 - a12^2` along each x2 line. `D` is the exact background
/// value plus the cubic interpolant of the nodal perturbation.
pub fn sonic_interface(coeffs: &CoefficientSet, bg: &BackgroundSolution, grid: &Grid, root_tol: f64) -> Result<SonicInterface> {
    let d = coeffs.discriminant();
    let p = &bg.params;
    let us = p.u_s();
    let dbg = |x: f64| -> f64 {
        let u = bg.profile_at(x).map(|pt| pt.u1).unwrap_or(us);
        1.0 - (u / us).powf(p.gamma + 1.0)
    };
    let bg_nodes: Vec<f64> = grid.x1.iter().map(|&x| dbg(x)).collect();
    let h = grid.h();
    let mut g = Vec::with_capacity(grid.n_pts());
    for j in 0..grid.n_pts() {
        let line: Vec<f64> = (0..grid.n_x1).map(|i| d.at(i, j)).collect();
        let changes: Vec<usize> = (1..grid.n_x1).filter(|&i| (line[i - 1] > 0.0) != (line[i] > 0.0)).collect();
        if changes.len() != 1 || line[0] <= 0.0 {
            return Err(SolverError::Degenerate(format!(
                "interface extraction: {} sign changes of D on line x2 = {}; D = {:?}",
                changes.len(),
                grid.x2[j],
                line
            )));
        }
        let pert: Vec<f64> = line.iter().zip(&bg_nodes).map(|(a, b)| a - b).collect();
        let f = |x: f64| dbg(x) + cubic_at(&pert, h, x);
        let i = changes[0];
        let (mut a, mut b) = (grid.x1[i - 1], grid.x1[i]);
        // The continuous D may cross slightly outside the node bracket; widen if needed.
        for _ in 0..3 {
            if f(a) > 0.0 && f(b) <= 0.0 {
                break;
            }
            a = (a - h).max(0.0);
            b = (b + h).min(grid.length);
        }
        let (fa, fb) = (f(a), f(b));
        if !(fa > 0.0 && fb <= 0.0) {
            return Err(SolverError::Degenerate(format!(
                "interface extraction: no bracket for D on line x2 = {} near x1 = {}",
                grid.x2[j], grid.x1[i]
            )));
        }
        // A few bisection steps, then Brent (inverse quadratic interpolation).
        for _ in 0..8 {
            let c = 0.5 * (a + b);
            if f(c) > 0.0 {
                a = c;
            } else {
                b = c;
            }
        }
        g.push(brent(f, a, b, root_tol));
    }
    let deviation = g.iter().map(|v| (v - bg.l_s).abs()).fold(0.0, f64::max);
    Ok(SonicInterface { x2: grid.x2.clone(), g, l_s: bg.l_s, deviation })
}

fn local_rho(p: &GasParameters, t: f64, bern: f64) -> f64 {
    ((p.gamma - 1.0) / (p.gamma * (p.s0 + t)) * bern).powf(1.0 / (p.gamma - 1.0))
}

/// Mach number `|v| / sqrt(g (S0 + T) rho^(g-1))` and its consistency with the sign of `D`.
pub fn mach_field(
    state: &FlowState,
    bgg: &BackgroundOnGrid,
    p: &GasParameters,
    grid: &Grid,
    coeffs: &CoefficientSet,
    sonic: &SonicInterface,
) -> Result<(NodeField, MachReport)> {
    let sv = StateValues::new(state, grid);
    let d = coeffs.discriminant();
    let mut mach = NodeField::zeros(grid);
    let np = grid.n_pts();
    let (mut mismatches, mut checked, mut single) = (0, 0, 0);
    for i in 0..grid.n_x1 {
        for j in 0..np {
            let ns = sv.node(bgg, i, j);
            let t = sv.T.v.at(i, j);
            let rho = local_rho(p, t, ns.bern);
            if !(rho > 0.0) {
                return Err(SolverError::Degenerate(format!("density {rho:e} at node ({i}, {j})")));
            }
            let c2 = p.gamma * (p.s0 + t) * rho.powf(p.gamma - 1.0);
            mach.data[i * np + j] = ns.v1.hypot(ns.v2) / c2.sqrt();
        }
    }
    let h = grid.h();
    for j in 0..np {
        let mut crossings = 0;
        for i in 0..grid.n_x1 {
            let m = mach.at(i, j);
            if i > 0 && (mach.at(i - 1, j) < 1.0) != (m < 1.0) {
                crossings += 1;
            }
            if (grid.x1[i] - sonic.g[j]).abs() > h {
                checked += 1;
                if (1.0 - m * m > 0.0) != (d.at(i, j) > 0.0) {
                    mismatches += 1;
                }
            }
        }
        if crossings == 1 {
            single += 1;
        }
    }
    Ok((mach, MachReport { mismatches, checked, single_crossing_lines: single, lines: np }))
}

pub fn reconstruct_primitives(state: &FlowState, bgg: &BackgroundOnGrid, p: &GasParameters, grid: &Grid) -> Result<Primitives> {
    let sv = StateValues::new(state, grid);
    let np = grid.n_pts();
    let mut out = Primitives {
        rho: NodeField::zeros(grid),
        u1: NodeField::zeros(grid),
        u2: NodeField::zeros(grid),
        S: NodeField::zeros(grid),
        Phi: NodeField::zeros(grid),
    };
    for i in 0..grid.n_x1 {
        for j in 0..np {
            let ns = sv.node(bgg, i, j);
            let t = sv.T.v.at(i, j);
            if !(ns.bern > 0.0) {
                return Err(SolverError::Degenerate(format!("negative enthalpy base {:e} at node ({i}, {j})", ns.bern)));
            }
            let k = i * np + j;
            out.rho.data[k] = local_rho(p, t, ns.bern);
            out.u1.data[k] = ns.v1;
            out.u2.data[k] = ns.v2;
            out.S.data[k] = p.s0 + t;
            out.Phi.data[k] = bgg.phi_big[i] + sv.Psi.v.at(i, j);
        }
    }
    Ok(out)
}

fn interior_residual(grid: &Grid, f: impl Fn(usize, usize) -> f64) -> Residual {
    let (mut sup, mut l2) = (0.0f64, 0.0);
    let h = grid.h();
    for i in 3..grid.n_x1 - 3 {
        for j in 0..grid.n_pts() {
            let r = f(i, j);
            sup = sup.max(r.abs());
            l2 += h * grid.w2[j] * r * r;
        }
    }
    Residual { sup, l2: l2.sqrt() }
}

/// Residuals at a state, with `coeffs` assembled at the same state.
pub fn residuals(
    state: &FlowState,
    coeffs: &CoefficientSet,
    bgg: &BackgroundOnGrid,
    p: &GasParameters,
    grid: &Grid,
    prim: &Primitives,
) -> Result<Residuals> {
    let sv = StateValues::new(state, grid);
    let (ps, ph, pz) = (&sv.psi, &sv.phi, &sv.Psi);
    let at = |f: &NodeField, i, j| f.at(i, j);
    let psi = interior_residual(grid, |i, j| {
        at(&coeffs.a11, i, j) * ps.d11.at(i, j) + 2.0 * at(&coeffs.a12, i, j) * ps.d12.at(i, j) + ps.d22.at(i, j)
            + at(&coeffs.a, i, j) * ps.d1.at(i, j)
            + at(&coeffs.b1, i, j) * pz.d1.at(i, j)
            + at(&coeffs.b0, i, j) * pz.v.at(i, j)
            - at(&coeffs.f1, i, j)
    });
    let Psi = interior_residual(grid, |i, j| {
        pz.d11.at(i, j) + pz.d22.at(i, j) - coeffs.c0[i] * pz.v.at(i, j) - coeffs.c1[i] * ps.d1.at(i, j) - coeffs.f2.at(i, j)
    });
    let phi = interior_residual(grid, |i, j| -(ph.d11.at(i, j) + ph.d22.at(i, j)) - coeffs.f3.at(i, j));
    let m = momentum_field(state, bgg, p, grid)?;
    let ev_t = state.T.evaluate(grid);
    let transport = interior_residual(grid, |i, j| m.m1.at(i, j) * ev_t.d1.at(i, j) + m.m2.at(i, j) * ev_t.d2.at(i, j));
    let divergence = interior_residual(grid, |i, j| m.divergence.at(i, j));
    let np = grid.n_pts();
    let f1 = NodeField { n_x1: grid.n_x1, n_pts: np, data: prim.rho.data.iter().zip(&prim.u1.data).map(|(r, u)| r * u).collect() };
    let f2 = NodeField { n_x1: grid.n_x1, n_pts: np, data: prim.rho.data.iter().zip(&prim.u2.data).map(|(r, u)| r * u).collect() };
    let mf = crate::fields::divergence(&f1, &f2, grid);
    let mass_flux = interior_residual(grid, |i, j| mf.at(i, j));
    let rho_inf = p.rho_bar_inf();
    let poisson = interior_residual(grid, |i, j| {
        let de = p.j / bgg.u[i] - rho_inf;
        de + pz.d11.at(i, j) + pz.d22.at(i, j) - (prim.rho.at(i, j) - rho_inf)
    });
    let last = np - 1;
    let wall_normal = (0..grid.n_x1).map(|i| prim.u2.at(i, 0).abs().max(prim.u2.at(i, last).abs())).fold(0.0, f64::max);
    Ok(Residuals { psi, Psi, phi, transport, divergence, mass_flux, poisson, wall_normal })
}
