//! Linear mixed-type solver for `(psi, Psi)` by vanishing viscosity, and the
//! Poisson problem for `phi`.
//!
//! After lifting the boundary data, `(psi, Psi) = (v, w) + lift` and each cosine
//! mode `k` of `v`, `w` satisfies the first-order system in x1
//!
//! ```text
//! X1' = X2, X2' = X3, eps X3' = F1 - R(X), X4' = X5, X5' = F2 + ((k pi)^2 + c0) X4 + c1 X2
//! R = A11 X3 + (2 A12' + Aa) X2 + Ab1 X5 + Ab0 X4 - (k pi)^2 X1
//! ```
//!
//! with `X1 = X2 = X5 = 0` at the inlet and `X3 = X4 = 0` at the exit, the mode
//! couplings being Galerkin products of the coefficients. Slow rows are
//! trapezoidal; the fast row is backward Euler pinned at the upwind node of its
//! interval, chosen by the sign of the mean `a11`. Where the pinning switches
//! at the sonic node the duplicated row is replaced by its exact difference, a
//! second difference of `X3`.

#![allow(non_snake_case)]

use serde::{Deserialize, Serialize};

use crate::banded::BandedMatrix;
use crate::error::{Result, SolverError};
use crate::fields::{diff1, BoundaryData, CoefficientSet, Field2D, Grid, NodeField, Parity};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExitClosure {
    /// `d11 v = 0` imposed on the `X3` unknown.
    #[default]
    Direct,
    /// `d11 v = 0` by the one-sided stencil `(2, -5, 4, -1) / h^2` on `X1`.
    OneSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViscositySchedule {
    pub eps0: f64,
    pub ratio: f64,
    pub tol: f64,
    pub cap: usize,
    /// Consecutive non-decreasing steps tolerated before giving up.
    pub stall: usize,
}

impl Default for ViscositySchedule {
    fn default() -> Self {
        ViscositySchedule { eps0: 0.1, ratio: 0.5, tol: 1e-6, cap: 20, stall: 5 }
    }
}

/// Galerkin couplings of one linear problem, node by node.
#[derive(Debug, Clone)]
pub struct ModeSystem {
    /// Number of cosine modes per field.
    pub modes: usize,
    pub n_x1: usize,
    pub h: f64,
    /// `n_x1` blocks of `modes x modes`, row index = test mode.
    pub a11: Vec<f64>,
    /// `<2 a12 eta_j', eta_k>`.
    pub a12d: Vec<f64>,
    pub aa: Vec<f64>,
    pub ab1: Vec<f64>,
    pub ab0: Vec<f64>,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    /// `(k pi)^2`.
    pub mu: Vec<f64>,
    /// `n_x1 x modes` projected right-hand sides.
    pub f1: Vec<f64>,
    pub f2: Vec<f64>,
}

impl ModeSystem {
    #[inline]
    pub fn block(&self, a: &[f64], i: usize, k: usize, j: usize) -> f64 {
        a[(i * self.modes + k) * self.modes + j]
    }

    /// Mean of `a11` over the cross-section at node `i`.
    pub fn mean_a11(&self, i: usize) -> f64 {
        self.block(&self.a11, i, 0, 0)
    }

    pub fn unknowns(&self) -> usize {
        5 * self.modes * self.n_x1
    }

    pub fn is_homogeneous(&self) -> bool {
        self.f1.iter().chain(&self.f2).all(|&v| v == 0.0)
    }
}

/// Projects the coefficients and right-hand sides onto the cosine modes.
pub fn build_mode_system(coeffs: &CoefficientSet, grid: &Grid, f1: &NodeField, f2: &NodeField) -> ModeSystem {
    let nm = grid.n_modes(Parity::Cosine);
    let np = grid.n_pts();
    let n = grid.n_x1;
    let blocks = par::map_range(n, |i| {
        let mut out = [vec![0.0; nm * nm], vec![0.0; nm * nm], vec![0.0; nm * nm], vec![0.0; nm * nm], vec![0.0; nm * nm]];
        let fields: [(&NodeField, bool, f64); 5] = [
            (&coeffs.a11, false, 1.0),
            (&coeffs.a12, true, 2.0),
            (&coeffs.a, false, 1.0),
            (&coeffs.b1, false, 1.0),
            (&coeffs.b0, false, 1.0),
        ];
        let mut t = vec![0.0; np];
        for (slot, (field, deriv, scale)) in fields.iter().enumerate() {
            for jm in 0..nm {
                for p in 0..np {
                    let b = if *deriv { grid.dbasis(Parity::Cosine, jm, p) } else { grid.basis(Parity::Cosine, jm, p) };
                    t[p] = scale * grid.w2[p] * field.at(i, p) * b;
                }
                for k in 0..nm {
                    out[slot][k * nm + jm] = (0..np).map(|p| t[p] * grid.basis(Parity::Cosine, k, p)).sum();
                }
            }
        }
        let r1 = grid.project(Parity::Cosine, f1.row(i));
        let r2 = grid.project(Parity::Cosine, f2.row(i));
        (out, r1, r2)
    });
    let mut sys = ModeSystem {
        modes: nm,
        n_x1: n,
        h: grid.h(),
        a11: Vec::with_capacity(n * nm * nm),
        a12d: Vec::with_capacity(n * nm * nm),
        aa: Vec::with_capacity(n * nm * nm),
        ab1: Vec::with_capacity(n * nm * nm),
        ab0: Vec::with_capacity(n * nm * nm),
        c0: coeffs.c0.clone(),
        c1: coeffs.c1.clone(),
        mu: (0..nm).map(|k| grid.mu(Parity::Cosine, k)).collect(),
        f1: Vec::with_capacity(n * nm),
        f2: Vec::with_capacity(n * nm),
    };
    for (b, r1, r2) in blocks {
        let [a11, a12d, aa, ab1, ab0] = b;
        sys.a11.extend(a11);
        sys.a12d.extend(a12d);
        sys.aa.extend(aa);
        sys.ab1.extend(ab1);
        sys.ab0.extend(ab0);
        sys.f1.extend(r1);
        sys.f2.extend(r2);
    }
    sys
}

/// Upwind node of each interval's fast row and the sonic turning node, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Pinning {
    /// `pins[q - 1]` is the node used by interval `q`.
    pub pins: Vec<usize>,
    pub turn: Option<usize>,
}

pub fn pinning(sys: &ModeSystem) -> Result<Pinning> {
    let n = sys.n_x1 - 1;
    let elliptic: Vec<bool> = (1..=n).map(|q| sys.mean_a11(q - 1) + sys.mean_a11(q) > 0.0).collect();
    let mut turn = None;
    for q in 1..n {
        match (elliptic[q - 1], elliptic[q]) {
            (true, false) => {
                if turn.is_some() {
                    return Err(SolverError::Degenerate("more than one sonic transition along x1".into()));
                }
                turn = Some(q);
            }
            (false, true) => {
                return Err(SolverError::Degenerate(format!(
                    "supersonic-to-subsonic transition at interval {}",
                    q + 1
                )))
            }
            _ => {}
        }
    }
    let pins = (1..=n).map(|q| if elliptic[q - 1] { q } else { q - 1 }).collect();
    Ok(Pinning { pins, turn })
}

/// Unknown index of component `c` (0..5), mode `k` at node `i`.
#[inline]
pub fn unknown(modes: usize, i: usize, c: usize, k: usize) -> usize {
    (i * 5 + c) * modes + k
}

/// Assembles the banded system matrix and right-hand side.
pub fn assemble_eps_system(sys: &ModeSystem, eps: f64, closure: ExitClosure) -> Result<(BandedMatrix, Vec<f64>)> {
    let m = sys.modes;
    let n = sys.n_x1 - 1;
    let h = sys.h;
    let pin = pinning(sys)?;
    let size = sys.unknowns();
    let kl = match closure {
        ExitClosure::Direct => 10 * m,
        ExitClosure::OneSided => 19 * m,
    };
    let mut a = BandedMatrix::zeros(size, kl, 4 * m);
    let mut rhs = vec![0.0; size];
    let u = |i, c, k| unknown(m, i, c, k);
    // Inlet: X1 = X2 = X5 = 0.
    for k in 0..m {
        a.set(k, u(0, 0, k), 1.0);
        a.set(m + k, u(0, 1, k), 1.0);
        a.set(2 * m + k, u(0, 4, k), 1.0);
    }
    for q in 1..=n {
        let base = 3 * m + 5 * m * (q - 1);
        let (l, r) = (q - 1, q);
        for k in 0..m {
            // X1' = X2, rectangle rule on the first interval.
            let row = base + k;
            a.add(row, u(r, 0, k), 1.0);
            a.add(row, u(l, 0, k), -1.0);
            if q == 1 {
                a.add(row, u(r, 1, k), -h);
            } else {
                a.add(row, u(r, 1, k), -0.5 * h);
                a.add(row, u(l, 1, k), -0.5 * h);
            }
            // X2' = X3, rectangle rule on the last interval.
            let row = base + m + k;
            a.add(row, u(r, 1, k), 1.0);
            a.add(row, u(l, 1, k), -1.0);
            if q == n {
                a.add(row, u(l, 2, k), -h);
            } else {
                a.add(row, u(r, 2, k), -0.5 * h);
                a.add(row, u(l, 2, k), -0.5 * h);
            }
            // X4' = X5.
            let row = base + 2 * m + k;
            a.add(row, u(r, 3, k), 1.0);
            a.add(row, u(l, 3, k), -1.0);
            a.add(row, u(r, 4, k), -0.5 * h);
            a.add(row, u(l, 4, k), -0.5 * h);
            // X5' = F2 + (mu + c0) X4 + c1 X2.
            let row = base + 3 * m + k;
            a.add(row, u(r, 4, k), 1.0);
            a.add(row, u(l, 4, k), -1.0);
            for node in [l, r] {
                a.add(row, u(node, 3, k), -0.5 * h * (sys.mu[k] + sys.c0[node]));
                a.add(row, u(node, 1, k), -0.5 * h * sys.c1[node]);
            }
            rhs[row] = 0.5 * h * (sys.f2[l * m + k] + sys.f2[r * m + k]);
            // Fast row.
            let row = base + 4 * m + k;
            if pin.turn == Some(l) {
                a.add(row, u(r, 2, k), 1.0);
                a.add(row, u(l, 2, k), -2.0);
                a.add(row, u(l - 1, 2, k), 1.0);
                continue;
            }
            let s = pin.pins[q - 1];
            a.add(row, u(r, 2, k), eps);
            a.add(row, u(l, 2, k), -eps);
            for j in 0..m {
                a.add(row, u(s, 2, j), h * sys.block(&sys.a11, s, k, j));
                a.add(row, u(s, 1, j), h * (sys.block(&sys.a12d, s, k, j) + sys.block(&sys.aa, s, k, j)));
                a.add(row, u(s, 4, j), h * sys.block(&sys.ab1, s, k, j));
                a.add(row, u(s, 3, j), h * sys.block(&sys.ab0, s, k, j));
            }
            a.add(row, u(s, 0, k), -h * sys.mu[k]);
            rhs[row] = h * sys.f1[s * m + k];
        }
    }
    let base = 3 * m + 5 * m * n;
    for k in 0..m {
        match closure {
            ExitClosure::Direct => a.set(base + k, u(n, 2, k), 1.0),
            ExitClosure::OneSided => {
                for (d, w) in [(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)] {
                    a.set(base + k, u(n - d, 0, k), w);
                }
            }
        }
        a.set(base + m + k, u(n, 3, k), 1.0);
    }
    Ok((a, rhs))
}

/// Nodal solution of the mode system.
#[derive(Debug, Clone)]
pub struct ModeSolution {
    pub modes: usize,
    pub n_x1: usize,
    pub x: Vec<f64>,
}

impl ModeSolution {
    pub fn zeros(sys: &ModeSystem) -> Self {
        ModeSolution { modes: sys.modes, n_x1: sys.n_x1, x: vec![0.0; sys.unknowns()] }
    }

    fn component(&self, c: usize) -> Vec<f64> {
        let m = self.modes;
        (0..self.n_x1).flat_map(|i| (0..m).map(move |k| (i, k))).map(|(i, k)| self.x[unknown(m, i, c, k)]).collect()
    }

    /// `v` with `d1 = X2` and `d11 = X3` from the solver.
    pub fn v(&self, grid: &Grid) -> Field2D {
        let mut f = Field2D::zeros(Parity::Cosine, grid);
        f.modes = self.component(0);
        f.d1 = self.component(1);
        f.d11 = self.component(2);
        f
    }

    pub fn w(&self, grid: &Grid) -> Field2D {
        Field2D::from_modes_d1(Parity::Cosine, grid, self.component(3), self.component(4))
    }
}

/// Solves the epsilon problem once.
pub fn solve_eps_system(sys: &ModeSystem, eps: f64, closure: ExitClosure) -> Result<ModeSolution> {
    if !(eps > 0.0) {
        return Err(SolverError::Input(format!("viscosity must be positive, got {eps}")));
    }
    let (a, rhs) = assemble_eps_system(sys, eps, closure)?;
    let lu = a.factor().map_err(|e| match e {
        SolverError::Singular { pivot, .. } => SolverError::Singular { epsilon: eps, modes: sys.modes, pivot },
        other => other,
    })?;
    Ok(ModeSolution { modes: sys.modes, n_x1: sys.n_x1, x: lu.solve(&rhs) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub epsilon: f64,
    pub h1_diff: f64,
    pub sup_diff: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone)]
pub struct ViscosityResult {
    pub solution: ModeSolution,
    pub epsilon: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
}

fn solution_distance(a: &ModeSolution, b: &ModeSolution, grid: &Grid) -> (f64, f64) {
    let dv = a.v(grid).combine(1.0, &b.v(grid), -1.0);
    let dw = a.w(grid).combine(1.0, &b.w(grid), -1.0);
    (dv.h1_norm(grid) + dw.h1_norm(grid), dv.sup(grid).max(dw.sup(grid)))
}

/// Continuation `eps_k = eps0 ratio^k` until successive solutions agree to `tol` in H1.
pub fn vanishing_viscosity(
    sys: &ModeSystem,
    grid: &Grid,
    schedule: &ViscositySchedule,
    closure: ExitClosure,
) -> Result<ViscosityResult> {
    if sys.is_homogeneous() {
        pinning(sys)?;
        let entry = TraceEntry { epsilon: schedule.eps0, h1_diff: 0.0, sup_diff: 0.0, iterations: 0 };
        return Ok(ViscosityResult { solution: ModeSolution::zeros(sys), epsilon: schedule.eps0, trace: vec![entry], converged: true });
    }
    let mut eps = schedule.eps0;
    let mut prev = solve_eps_system(sys, eps, closure)?;
    let mut trace = Vec::new();
    let mut stalled = 0;
    let mut last_diff = f64::INFINITY;
    for k in 1..=schedule.cap {
        eps *= schedule.ratio;
        let next = solve_eps_system(sys, eps, closure)?;
        let (h1, sup) = solution_distance(&next, &prev, grid);
        trace.push(TraceEntry { epsilon: eps, h1_diff: h1, sup_diff: sup, iterations: k });
        prev = next;
        if h1 < schedule.tol {
            return Ok(ViscosityResult { solution: prev, epsilon: eps, trace, converged: true });
        }
        stalled = if h1 >= last_diff { stalled + 1 } else { 0 };
        last_diff = h1;
        if stalled >= schedule.stall {
            return Err(SolverError::NonConvergence(format!(
                "vanishing-viscosity differences stopped decreasing for {stalled} steps at eps = {eps:e} (last H1 difference {h1:e})"
            )));
        }
    }
    Ok(ViscosityResult { solution: prev, epsilon: eps, trace, converged: false })
}

/// Sign audit of `-2 a - (2m - 1) d1 a11` for the cross-section means, `m = 0, 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyAudit {
    pub min_m0: f64,
    pub min_m1: f64,
    pub warnings: Vec<String>,
}

pub fn energy_audit(coeffs: &CoefficientSet, grid: &Grid) -> EnergyAudit {
    let mean = |f: &NodeField| -> Vec<f64> {
        (0..grid.n_x1).map(|i| (0..grid.n_pts()).map(|j| grid.w2[j] * f.at(i, j)).sum::<f64>() / 2.0).collect()
    };
    let abar = mean(&coeffs.a);
    let a11 = mean(&coeffs.a11);
    let d = diff1(&a11, grid.h());
    let e0: Vec<f64> = abar.iter().zip(&d).map(|(a, d)| -2.0 * a + d).collect();
    let e1: Vec<f64> = abar.iter().zip(&d).map(|(a, d)| -2.0 * a - d).collect();
    let mut warnings = Vec::new();
    for (m, e) in [(0, &e0), (1, &e1)] {
        let bad = e.iter().filter(|v| **v < 0.0).count();
        if bad > 0 {
            warnings.push(format!("energy weight m={m}: -2a - (2m-1) d1 a11 negative at {bad} of {} x1 nodes", e.len()));
        }
    }
    EnergyAudit {
        min_m0: e0.iter().copied().fold(f64::INFINITY, f64::min),
        min_m1: e1.iter().copied().fold(f64::INFINITY, f64::min),
        warnings,
    }
}

/// `-d11 phi - d22 phi = f3` with `d1 phi = 0` at the inlet, `phi = 0` on walls and exit.
pub fn poisson_solve_phi(f3: &NodeField, grid: &Grid) -> Field2D {
    let nm = grid.n_modes(Parity::Dirichlet);
    let n = grid.n_x1;
    let h2 = grid.h() * grid.h();
    let fm = grid.project_field(Parity::Dirichlet, f3);
    let cols = par::map_range(nm, |k| {
        let mu = grid.mu(Parity::Dirichlet, k);
        // Unknowns 0..n-1 (node n-1 is zero). Ghost phi_{-1} = phi_1 at the inlet.
        let size = n - 1;
        let mut lower = vec![-1.0 / h2; size];
        let diag = vec![2.0 / h2 + mu; size];
        let mut upper = vec![-1.0 / h2; size];
        upper[0] = -2.0 / h2;
        lower[0] = 0.0;
        let rhs: Vec<f64> = (0..size).map(|i| fm[i * nm + k]).collect();
        let mut sol = thomas(&lower, &diag, &upper, &rhs);
        sol.push(0.0);
        sol
    });
    let mut modes = vec![0.0; n * nm];
    for (k, col) in cols.iter().enumerate() {
        for i in 0..n {
            modes[i * nm + k] = col[i];
        }
    }
    Field2D::from_modes(Parity::Dirichlet, grid, modes)
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let den = diag[i] - lower[i] * c[i - 1];
        c[i] = if i + 1 < n { upper[i] / den } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Extension of the inlet data: `psi_lift = int_{-1}^{x2} w_en`,
/// `Psi_lift = (x1 - L)(E_en - E0)`.
#[derive(Debug, Clone)]
pub struct Lift {
    pub psi: Field2D,
    pub Psi: Field2D,
    /// `L1` and `L2` applied to the lift, on the grid.
    pub l1: NodeField,
    pub l2: NodeField,
}

pub fn lift_boundary_data(bd: &BoundaryData, coeffs: &CoefficientSet, grid: &Grid) -> Result<Lift> {
    let defect = bd.compatibility_defect();
    if defect > 1e-10 {
        return Err(SolverError::Input(format!("boundary data violates wall compatibility by {defect:e}")));
    }
    if bd.max_mode() > grid.m {
        return Err(SolverError::Input(format!(
            "boundary data uses mode {} beyond the truncation m = {}",
            bd.max_mode(),
            grid.m
        )));
    }
    let len = grid.length;
    let psi_vals = NodeField::from_fn(grid, |_, j| bd.w_en_integral(grid.x2[j]));
    let Psi_vals = NodeField::from_fn(grid, |i, j| (grid.x1[i] - len) * bd.field(grid.x2[j], 0));
    let l1 = NodeField::from_fn(grid, |i, j| {
        let y = grid.x2[j];
        let e = bd.field(y, 0);
        bd.w_en(y, 1) + coeffs.b1.at(i, j) * e + coeffs.b0.at(i, j) * (grid.x1[i] - len) * e
    });
    let l2 = NodeField::from_fn(grid, |i, j| {
        let y = grid.x2[j];
        (grid.x1[i] - len) * (bd.field(y, 2) - coeffs.c0[i] * bd.field(y, 0))
    });
    Ok(Lift {
        psi: Field2D::from_values(Parity::Cosine, grid, &psi_vals),
        Psi: Field2D::from_values(Parity::Cosine, grid, &Psi_vals),
        l1,
        l2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LinearSolveOptions {
    pub schedule: ViscositySchedule,
    pub closure: ExitClosure,
    /// Solve once at this viscosity instead of running the continuation.
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub psi: Field2D,
    pub Psi: Field2D,
    pub phi: Field2D,
    pub epsilon: f64,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub audit: EnergyAudit,
}

/// Solves the linear problem with coefficients frozen at the current iterate.
pub fn solve_linear_problem(
    coeffs: &CoefficientSet,
    bd: &BoundaryData,
    grid: &Grid,
    opts: &LinearSolveOptions,
) -> Result<LinearSolution> {
    let lift = lift_boundary_data(bd, coeffs, grid)?;
    let sub = |a: &NodeField, b: &NodeField| NodeField {
        n_x1: a.n_x1,
        n_pts: a.n_pts,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x - y).collect(),
    };
    let sys = build_mode_system(coeffs, grid, &sub(&coeffs.f1, &lift.l1), &sub(&coeffs.f2, &lift.l2));
    let audit = energy_audit(coeffs, grid);
    let (sol, epsilon, trace, converged) = match opts.epsilon {
        Some(eps) => {
            let s = if sys.is_homogeneous() { ModeSolution::zeros(&sys) } else { solve_eps_system(&sys, eps, opts.closure)? };
            (s, eps, Vec::new(), true)
        }
        None => {
            let r = vanishing_viscosity(&sys, grid, &opts.schedule, opts.closure)?;
            (r.solution, r.epsilon, r.trace, r.converged)
        }
    };
    let psi = sol.v(grid).combine(1.0, &lift.psi, 1.0);
    let Psi = sol.w(grid).combine(1.0, &lift.Psi, 1.0);
    let phi = poisson_solve_phi(&coeffs.f3, grid);
    Ok(LinearSolution { psi, Psi, phi, epsilon, trace, converged, audit })
}
