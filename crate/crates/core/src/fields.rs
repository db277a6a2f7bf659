//! Two-dimensional fields on the channel `(0, L) x (-1, 1)` and the coefficients
//! of the linearised system at a given iterate.
//!
//! Fields are stored as x1-nodal profiles of wall-compatible x2 modes. Cosine
//! parity uses `eta_0 = 1/sqrt(2)`, `eta_k = cos(k pi x2)` (Neumann walls);
//! Dirichlet parity uses `sin(k pi (x2 + 1) / 2)`, `k = 1..=2(m+1)` (zero walls).
//! Nonlinear products are formed on a uniform x2 collocation grid with
//! `4(m+1)` intervals and projected back by the trapezoid rule, which is exact
//! for the discrete cosine and sine transforms involved.

#![allow(non_snake_case)]

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::background1d::{BackgroundSolution, GasParameters};
use crate::error::{Result, SolverError};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Parity {
    Cosine,
    Dirichlet,
}

/// Tensor grid: `n_x1` uniform x1 nodes on `[0, L]` and `n_x2 + 1` uniform x2 nodes.
#[derive(Debug, Clone)]
pub struct Grid {
    pub n_x1: usize,
    pub length: f64,
    pub m: usize,
    /// Number of x2 intervals.
    pub n_x2: usize,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
    /// Trapezoid weights on the x2 nodes.
    pub w2: Vec<f64>,
    basis: [Vec<f64>; 2],
    dbasis: [Vec<f64>; 2],
    ddbasis: [Vec<f64>; 2],
}

fn slot(parity: Parity) -> usize {
    match parity {
        Parity::Cosine => 0,
        Parity::Dirichlet => 1,
    }
}

impl Grid {
    pub fn new(n_x1: usize, length: f64, m: usize) -> Result<Self> {
        if n_x1 < 5 || !(length > 0.0) || !length.is_finite() {
            return Err(SolverError::Input(format!("grid needs n_x1 >= 5 and L > 0, got n_x1 = {n_x1}, L = {length}")));
        }
        let n_x2 = 4 * (m + 1);
        let h = length / (n_x1 - 1) as f64;
        let x1 = (0..n_x1).map(|i| if i == n_x1 - 1 { length } else { i as f64 * h }).collect();
        let x2: Vec<f64> = (0..=n_x2).map(|j| -1.0 + 2.0 * j as f64 / n_x2 as f64).collect();
        let dx2 = 2.0 / n_x2 as f64;
        let w2 = (0..=n_x2).map(|j| if j == 0 || j == n_x2 { 0.5 * dx2 } else { dx2 }).collect();
        let np = n_x2 + 1;
        let nc = m + 1;
        let ns = 2 * (m + 1);
        let mut basis = [vec![0.0; nc * np], vec![0.0; ns * np]];
        let mut dbasis = basis.clone();
        let mut ddbasis = basis.clone();
        for k in 0..nc {
            let w = k as f64 * PI;
            for j in 0..np {
                // Evaluate through the integer phase to keep wall values exact.
                let (s, c) = phase_sin_cos(k as i64 * (j as i64 - (n_x2 / 2) as i64), n_x2 / 2);
                let norm = if k == 0 { 1.0 / 2f64.sqrt() } else { 1.0 };
                basis[0][k * np + j] = norm * c;
                dbasis[0][k * np + j] = -norm * w * s;
                ddbasis[0][k * np + j] = -norm * w * w * c;
            }
        }
        for k in 0..ns {
            let w = (k + 1) as f64 * PI / 2.0;
            for j in 0..np {
                let (s, c) = phase_sin_cos((k as i64 + 1) * j as i64, n_x2);
                basis[1][k * np + j] = s;
                dbasis[1][k * np + j] = w * c;
                ddbasis[1][k * np + j] = -w * w * s;
            }
        }
        Ok(Grid { n_x1, length, m, n_x2, x1, x2, w2, basis, dbasis, ddbasis })
    }

    pub fn h(&self) -> f64 {
        self.length / (self.n_x1 - 1) as f64
    }

    pub fn n_pts(&self) -> usize {
        self.n_x2 + 1
    }

    pub fn n_modes(&self, parity: Parity) -> usize {
        match parity {
            Parity::Cosine => self.m + 1,
            Parity::Dirichlet => 2 * (self.m + 1),
        }
    }

    /// Eigenvalue of `-d^2/dx2^2` for mode `k`.
    pub fn mu(&self, parity: Parity, k: usize) -> f64 {
        match parity {
            Parity::Cosine => (k as f64 * PI).powi(2),
            Parity::Dirichlet => ((k + 1) as f64 * PI / 2.0).powi(2),
        }
    }

    /// Basis function `k` (and its first two x2 derivatives) at x2 node `j`.
    pub fn basis(&self, parity: Parity, k: usize, j: usize) -> f64 {
        self.basis[slot(parity)][k * self.n_pts() + j]
    }

    pub fn dbasis(&self, parity: Parity, k: usize, j: usize) -> f64 {
        self.dbasis[slot(parity)][k * self.n_pts() + j]
    }

    pub fn ddbasis(&self, parity: Parity, k: usize, j: usize) -> f64 {
        self.ddbasis[slot(parity)][k * self.n_pts() + j]
    }

    /// Trapezoid projection of one x2 column onto the modes of `parity`.
    pub fn project(&self, parity: Parity, column: &[f64]) -> Vec<f64> {
        let np = self.n_pts();
        let b = &self.basis[slot(parity)];
        (0..self.n_modes(parity))
            .map(|k| (0..np).map(|j| self.w2[j] * column[j] * b[k * np + j]).sum())
            .collect()
    }

    /// Projects a nodal field (row per x1 node) onto modes.
    pub fn project_field(&self, parity: Parity, values: &NodeField) -> Vec<f64> {
        let np = self.n_pts();
        let rows: Vec<Vec<f64>> = par::map_range(self.n_x1, |i| self.project(parity, &values.data[i * np..(i + 1) * np]));
        rows.concat()
    }

    /// Synthesises an x2 column from mode coefficients.
    pub fn synthesize(&self, parity: Parity, coeffs: &[f64], deriv: usize) -> Vec<f64> {
        let np = self.n_pts();
        let b = match deriv {
            0 => &self.basis[slot(parity)],
            1 => &self.dbasis[slot(parity)],
            _ => &self.ddbasis[slot(parity)],
        };
        let mut out = vec![0.0; np];
        for (k, &c) in coeffs.iter().enumerate() {
            if c != 0.0 {
                for j in 0..np {
                    out[j] += c * b[k * np + j];
                }
            }
        }
        out
    }
}

/// `(sin, cos)` of `pi * num / den`, reduced exactly over the integers first.
fn phase_sin_cos(num: i64, den: usize) -> (f64, f64) {
    let d = den as i64;
    let r = num.rem_euclid(2 * d);
    if r == 0 {
        return (0.0, 1.0);
    }
    if r == d {
        return (0.0, -1.0);
    }
    if 2 * r == d {
        return (1.0, 0.0);
    }
    if 2 * r == 3 * d {
        return (-1.0, 0.0);
    }
    let t = PI * r as f64 / d as f64;
    (t.sin(), t.cos())
}

/// Values on the tensor grid, row-major with one row per x1 node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeField {
    pub n_x1: usize,
    pub n_pts: usize,
    pub data: Vec<f64>,
}

impl NodeField {
    pub fn zeros(grid: &Grid) -> Self {
        NodeField { n_x1: grid.n_x1, n_pts: grid.n_pts(), data: vec![0.0; grid.n_x1 * grid.n_pts()] }
    }

    pub fn from_fn(grid: &Grid, f: impl Fn(usize, usize) -> f64) -> Self {
        let np = grid.n_pts();
        let data = (0..grid.n_x1 * np).map(|idx| f(idx / np, idx % np)).collect();
        NodeField { n_x1: grid.n_x1, n_pts: np, data }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n_pts + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_pts..(i + 1) * self.n_pts]
    }

    pub fn sup(&self) -> f64 {
        self.data.iter().fold(0.0f64, |a, &b| a.max(b.abs()))
    }
}

/// Second-order first derivative of a uniformly sampled profile.
pub fn diff1(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    if n < 3 {
        return d;
    }
    d[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h);
    d[n - 1] = (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h);
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - f[i - 1]) / (2.0 * h);
    }
    d
}

/// Second-order second derivative; one-sided four-point stencils at the ends.
pub fn diff2(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut d = vec![0.0; n];
    if n < 4 {
        return d;
    }
    let h2 = h * h;
    d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / h2;
    d[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / h2;
    for i in 1..n - 1 {
        d[i] = (f[i + 1] - 2.0 * f[i] + f[i - 1]) / h2;
    }
    d
}

/// Applies a profile operator to every mode column of a row-major `n_x1 x nm` array.
fn per_mode(data: &[f64], n_x1: usize, nm: usize, op: impl Fn(&[f64]) -> Vec<f64>) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    let mut col = vec![0.0; n_x1];
    for k in 0..nm {
        for i in 0..n_x1 {
            col[i] = data[i * nm + k];
        }
        let d = op(&col);
        for i in 0..n_x1 {
            out[i * nm + k] = d[i];
        }
    }
    out
}

/// A field as x1 profiles of modal coefficients plus their first two x1 derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Field2D {
    pub parity: Parity,
    pub n_x1: usize,
    pub n_modes: usize,
    pub length: f64,
    /// Row-major `n_x1 x n_modes`.
    pub modes: Vec<f64>,
    pub d1: Vec<f64>,
    pub d11: Vec<f64>,
}

/// Grid values of a field and its derivatives up to second order.
#[derive(Debug, Clone)]
pub struct FieldValues {
    pub v: NodeField,
    pub d1: NodeField,
    pub d2: NodeField,
    pub d11: NodeField,
    pub d12: NodeField,
    pub d22: NodeField,
}

impl Field2D {
    pub fn zeros(parity: Parity, grid: &Grid) -> Self {
        let nm = grid.n_modes(parity);
        let z = vec![0.0; grid.n_x1 * nm];
        Field2D { parity, n_x1: grid.n_x1, n_modes: nm, length: grid.length, modes: z.clone(), d1: z.clone(), d11: z }
    }

    /// Builds a field from modes, with x1 derivatives by finite differences.
    pub fn from_modes(parity: Parity, grid: &Grid, modes: Vec<f64>) -> Self {
        let nm = grid.n_modes(parity);
        assert_eq!(modes.len(), grid.n_x1 * nm);
        let h = grid.h();
        let d1 = per_mode(&modes, grid.n_x1, nm, |c| diff1(c, h));
        let d11 = per_mode(&modes, grid.n_x1, nm, |c| diff2(c, h));
        Field2D { parity, n_x1: grid.n_x1, n_modes: nm, length: grid.length, modes, d1, d11 }
    }

    /// Builds a field whose first x1 derivative is known; the second derivative
    /// is differenced from it.
    pub fn from_modes_d1(parity: Parity, grid: &Grid, modes: Vec<f64>, d1: Vec<f64>) -> Self {
        let nm = grid.n_modes(parity);
        let h = grid.h();
        let d11 = per_mode(&d1, grid.n_x1, nm, |c| diff1(c, h));
        Field2D { parity, n_x1: grid.n_x1, n_modes: nm, length: grid.length, modes, d1, d11 }
    }

    pub fn from_values(parity: Parity, grid: &Grid, values: &NodeField) -> Self {
        Field2D::from_modes(parity, grid, grid.project_field(parity, values))
    }

    #[inline]
    pub fn mode(&self, i: usize, k: usize) -> f64 {
        self.modes[i * self.n_modes + k]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.modes[i * self.n_modes..(i + 1) * self.n_modes]
    }

    pub fn scaled(&self, s: f64) -> Self {
        let f = |v: &Vec<f64>| v.iter().map(|x| x * s).collect();
        Field2D { modes: f(&self.modes), d1: f(&self.d1), d11: f(&self.d11), ..self.clone() }
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Field2D, b: f64) -> Self {
        assert_eq!(self.parity, other.parity);
        let f = |x: &Vec<f64>, y: &Vec<f64>| x.iter().zip(y).map(|(p, q)| a * p + b * q).collect();
        Field2D {
            modes: f(&self.modes, &other.modes),
            d1: f(&self.d1, &other.d1),
            d11: f(&self.d11, &other.d11),
            ..self.clone()
        }
    }

    pub fn evaluate(&self, grid: &Grid) -> FieldValues {
        let np = grid.n_pts();
        let n = self.n_x1;
        let nm = self.n_modes;
        let rows = par::map_range(n, |i| {
            let r = |a: &Vec<f64>| a[i * nm..(i + 1) * nm].to_vec();
            let (c, c1, c11) = (r(&self.modes), r(&self.d1), r(&self.d11));
            [
                grid.synthesize(self.parity, &c, 0),
                grid.synthesize(self.parity, &c1, 0),
                grid.synthesize(self.parity, &c, 1),
                grid.synthesize(self.parity, &c11, 0),
                grid.synthesize(self.parity, &c1, 1),
                grid.synthesize(self.parity, &c, 2),
            ]
        });
        let mk = |s: usize| NodeField { n_x1: n, n_pts: np, data: rows.iter().flat_map(|r| r[s].iter().copied()).collect() };
        FieldValues { v: mk(0), d1: mk(1), d2: mk(2), d11: mk(3), d12: mk(4), d22: mk(5) }
    }

    /// Discrete H1 norm: trapezoid in x1 of `sum_k c_k^2 + c_k'^2 + mu_k c_k^2`,
    /// which equals the L2 integral of `u^2 + |grad u|^2` for band-limited fields.
    pub fn h1_norm(&self, grid: &Grid) -> f64 {
        let h = grid.h();
        let nm = self.n_modes;
        let mut s = 0.0;
        for i in 0..self.n_x1 {
            let w = if i == 0 || i == self.n_x1 - 1 { 0.5 * h } else { h };
            for k in 0..nm {
                let c = self.modes[i * nm + k];
                let d = self.d1[i * nm + k];
                s += w * (c * c * (1.0 + grid.mu(self.parity, k)) + d * d);
            }
        }
        s.sqrt()
    }

    pub fn sup(&self, grid: &Grid) -> f64 {
        let np = grid.n_pts();
        let mut s = 0.0f64;
        for i in 0..self.n_x1 {
            for v in grid.synthesize(self.parity, self.row(i), 0).iter().take(np) {
                s = s.max(v.abs());
            }
        }
        s
    }
}

/// The perturbation unknowns `(psi, phi, Psi, T)`.
#[derive(Debug, Clone)]
pub struct FlowState {
    pub psi: Field2D,
    pub phi: Field2D,
    pub Psi: Field2D,
    pub T: Field2D,
}

impl FlowState {
    pub fn zero(grid: &Grid) -> Self {
        FlowState {
            psi: Field2D::zeros(Parity::Cosine, grid),
            phi: Field2D::zeros(Parity::Dirichlet, grid),
            Psi: Field2D::zeros(Parity::Cosine, grid),
            T: Field2D::zeros(Parity::Cosine, grid),
        }
    }

    pub fn h1_norm(&self, grid: &Grid) -> f64 {
        self.psi.h1_norm(grid) + self.phi.h1_norm(grid) + self.Psi.h1_norm(grid) + self.T.h1_norm(grid)
    }

    /// `a * self + b * other`, field by field.
    pub fn combine(&self, a: f64, other: &FlowState, b: f64) -> Self {
        FlowState {
            psi: self.psi.combine(a, &other.psi, b),
            phi: self.phi.combine(a, &other.phi, b),
            Psi: self.Psi.combine(a, &other.Psi, b),
            T: self.T.combine(a, &other.T, b),
        }
    }

    pub fn h1_distance(&self, other: &FlowState, grid: &Grid) -> f64 {
        self.combine(1.0, other, -1.0).h1_norm(grid)
    }

    pub fn norms(&self, grid: &Grid) -> StateNorms {
        let psi = self.psi.evaluate(grid);
        let phi = self.phi.evaluate(grid);
        let grad = |a: &NodeField, b: &NodeField| {
            a.data.iter().zip(&b.data).fold(0.0f64, |s, (x, y)| s.max(x.hypot(*y)))
        };
        StateNorms {
            h1: self.h1_norm(grid),
            sup_Psi: self.Psi.sup(grid),
            sup_Dpsi: grad(&psi.d1, &psi.d2),
            sup_Dphi: grad(&phi.d1, &phi.d2),
            sup_T: self.T.sup(grid),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateNorms {
    pub h1: f64,
    pub sup_Psi: f64,
    pub sup_Dpsi: f64,
    pub sup_Dphi: f64,
    pub sup_T: f64,
}

/// The background sampled at the x1 nodes of a grid.
#[derive(Debug, Clone)]
pub struct BackgroundOnGrid {
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub e: Vec<f64>,
    pub rho: Vec<f64>,
    pub phi_big: Vec<f64>,
    pub phi_pot: Vec<f64>,
    pub u0: f64,
}

impl BackgroundOnGrid {
    pub fn new(bg: &BackgroundSolution, grid: &Grid) -> Result<Self> {
        if grid.length > bg.l_max {
            return Err(SolverError::Input(format!("L = {} exceeds l_max = {}", grid.length, bg.l_max)));
        }
        let pts = bg.sample(&grid.x1)?;
        Ok(BackgroundOnGrid {
            u: pts.iter().map(|p| p.u1).collect(),
            du: pts.iter().map(|p| p.du1).collect(),
            e: pts.iter().map(|p| p.e).collect(),
            rho: pts.iter().map(|p| p.rho).collect(),
            phi_big: pts.iter().map(|p| p.phi_big).collect(),
            phi_pot: pts.iter().map(|p| p.phi_pot).collect(),
            u0: bg.u0,
        })
    }
}

/// Sonic-speed floor on `A22` below which a state is treated as degenerate.
pub fn a22_floor(params: &GasParameters, u_max: f64) -> f64 {
    1e-6 * params.gamma * params.s0 * params.j.powf(params.gamma - 1.0) / u_max.powf(params.gamma - 1.0)
}

/// Coefficients of the linearised `(psi, Psi)` system and the right-hand sides.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub a11: NodeField,
    pub a12: NodeField,
    pub a: NodeField,
    pub b1: NodeField,
    pub b0: NodeField,
    pub c0: Vec<f64>,
    pub c1: Vec<f64>,
    pub f1: NodeField,
    pub f2: NodeField,
    pub f3: NodeField,
    pub A22: NodeField,
    pub d0: f64,
}

/// Local flow quantities at one node of an iterate.
#[derive(Debug, Clone, Copy)]
pub struct NodeState {
    pub v1: f64,
    pub v2: f64,
    /// `Phi_bar + Psi - |v|^2 / 2`.
    pub bern: f64,
}

/// All first and second derivatives of an iterate needed on the grid.
pub struct StateValues {
    pub psi: FieldValues,
    pub phi: FieldValues,
    pub Psi: FieldValues,
    pub T: FieldValues,
}

impl StateValues {
    pub fn new(state: &FlowState, grid: &Grid) -> Self {
        StateValues {
            psi: state.psi.evaluate(grid),
            phi: state.phi.evaluate(grid),
            Psi: state.Psi.evaluate(grid),
            T: state.T.evaluate(grid),
        }
    }

    pub fn node(&self, bgg: &BackgroundOnGrid, i: usize, j: usize) -> NodeState {
        let v1 = bgg.u[i] + self.psi.d1.at(i, j) + self.phi.d2.at(i, j);
        let v2 = self.psi.d2.at(i, j) - self.phi.d1.at(i, j);
        let bern = bgg.phi_big[i] + self.Psi.v.at(i, j) - 0.5 * (v1 * v1 + v2 * v2);
        NodeState { v1, v2, bern }
    }
}

/// Per-condition sup-norm margins of the smallness assumptions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Smallness {
    /// `d0 - max(|Psi|, |D psi|, |D phi|)`.
    pub potential_margin: f64,
    /// `S0/2 - max |T|`.
    pub entropy_margin: f64,
    /// `min v1 - u0/2`.
    pub speed_margin: f64,
}

impl Smallness {
    pub fn admissible(&self) -> bool {
        self.potential_margin >= 0.0 && self.entropy_margin >= 0.0 && self.speed_margin >= 0.0
    }

    /// Error naming the first violated bound, if any.
    pub fn check(&self) -> Result<()> {
        if self.potential_margin < 0.0 {
            return Err(SolverError::Admissibility(format!(
                "max(|Psi|, |D psi|, |D phi|) exceeds d0 by {:e}",
                -self.potential_margin
            )));
        }
        if self.entropy_margin < 0.0 {
            return Err(SolverError::Admissibility(format!("max |T| exceeds S0/2 by {:e}", -self.entropy_margin)));
        }
        if self.speed_margin < 0.0 {
            return Err(SolverError::Admissibility(format!("min v1 is below u0/2 by {:e}", -self.speed_margin)));
        }
        Ok(())
    }
}

pub fn check_smallness(
    state: &FlowState,
    bgg: &BackgroundOnGrid,
    params: &GasParameters,
    grid: &Grid,
    d0: f64,
) -> Smallness {
    let sv = StateValues::new(state, grid);
    smallness_from_values(&sv, bgg, params, grid, d0)
}

fn smallness_from_values(
    sv: &StateValues,
    bgg: &BackgroundOnGrid,
    params: &GasParameters,
    grid: &Grid,
    d0: f64,
) -> Smallness {
    let mut pot = 0.0f64;
    let mut temp = 0.0f64;
    let mut vmin = f64::INFINITY;
    for i in 0..grid.n_x1 {
        for j in 0..grid.n_pts() {
            pot = pot
                .max(sv.Psi.v.at(i, j).abs())
                .max(sv.psi.d1.at(i, j).hypot(sv.psi.d2.at(i, j)))
                .max(sv.phi.d1.at(i, j).hypot(sv.phi.d2.at(i, j)));
            temp = temp.max(sv.T.v.at(i, j).abs());
            vmin = vmin.min(sv.node(bgg, i, j).v1);
        }
    }
    Smallness { potential_margin: d0 - pot, entropy_margin: 0.5 * params.s0 - temp, speed_margin: vmin - 0.5 * bgg.u0 }
}

fn a22_of(params: &GasParameters, phi_big: f64, u: f64, z: f64, p1: f64, p2: f64) -> f64 {
    let v1 = u + p1;
    (params.gamma - 1.0) * (phi_big + z - 0.5 * (v1 * v1 + p2 * p2)) - p2 * p2
}

/// Largest `d0` in `{0.2, 0.1, 0.05, ...}` for which `A22` stays above half its
/// background minimum over a probe set of extreme `(z, p, q)`.
pub fn default_d0(bgg: &BackgroundOnGrid, params: &GasParameters) -> f64 {
    let bg_min = (0..bgg.u.len())
        .map(|i| a22_of(params, bgg.phi_big[i], bgg.u[i], 0.0, 0.0, 0.0))
        .fold(f64::INFINITY, f64::min);
    let mut d = 0.2;
    while d > 1e-12 {
        let mut ok = true;
        'probe: for i in 0..bgg.u.len() {
            for z in [-d, d] {
                for a in 0..16 {
                    let t = a as f64 * PI / 8.0;
                    // |p|, |q| <= d, so p + q ranges over the disk of radius 2d.
                    let (p1, p2) = (2.0 * d * t.cos(), 2.0 * d * t.sin());
                    if a22_of(params, bgg.phi_big[i], bgg.u[i], z, p1, p2) < 0.5 * bg_min {
                        ok = false;
                        break 'probe;
                    }
                }
            }
        }
        if ok {
            return d;
        }
        d *= 0.5;
    }
    d
}

/// Assembles the coefficients and right-hand sides at the iterate `state`.
pub fn assemble_coefficients(
    state: &FlowState,
    bgg: &BackgroundOnGrid,
    params: &GasParameters,
    grid: &Grid,
    d0: f64,
    u_max: f64,
) -> Result<CoefficientSet> {
    let sv = StateValues::new(state, grid);
    smallness_from_values(&sv, bgg, params, grid, d0).check()?;
    let g = params.gamma;
    let s0 = params.s0;
    let floor = a22_floor(params, u_max);
    let np = grid.n_pts();
    let n = grid.n_x1;
    let c0: Vec<f64> = bgg.rho.iter().map(|r| 1.0 / (g * s0 * r.powf(g - 2.0))).collect();
    let c1: Vec<f64> = bgg.u.iter().zip(&c0).map(|(u, c)| -u * c).collect();
    let rows = par::try_map_range(n, |i| {
        let (u, du, e) = (bgg.u[i], bgg.du[i], bgg.e[i]);
        let lin = e - (g + 1.0) * u * du;
        let rho0 = ((g - 1.0) / (g * s0) * (bgg.phi_big[i] - 0.5 * u * u)).powf(1.0 / (g - 1.0));
        let mut out = vec![[0.0f64; 9]; np];
        for (j, o) in out.iter_mut().enumerate() {
            let ns = sv.node(bgg, i, j);
            if !(ns.bern > 0.0) {
                return Err(SolverError::Degenerate(format!(
                    "near-vacuum/degenerate state: Phi + Psi - |v|^2/2 = {:e} at node ({i}, {j})",
                    ns.bern
                )));
            }
            let (v1, v2) = (ns.v1, ns.v2);
            let A11 = (g - 1.0) * ns.bern - v1 * v1;
            let A12 = -v1 * v2;
            let A22 = (g - 1.0) * ns.bern - v2 * v2;
            if A22 < floor {
                return Err(SolverError::Degenerate(format!(
                    "near-vacuum/degenerate state: A22 = {A22:e} below floor {floor:e} at node ({i}, {j})"
                )));
            }
            let p = (sv.psi.d1.at(i, j), sv.psi.d2.at(i, j));
            let q = (sv.phi.d2.at(i, j), -sv.phi.d1.at(i, j));
            let r = (sv.Psi.d1.at(i, j), sv.Psi.d2.at(i, j));
            let (P1, P2) = (p.0 + q.0, p.1 + q.1);
            // D(grad-perp phi) = [[phi_12, -phi_11], [phi_22, -phi_12]].
            let (f12, f11, f22) = (sv.phi.d12.at(i, j), sv.phi.d11.at(i, j), sv.phi.d22.at(i, j));
            let vmv = v1 * v1 * f12 + v1 * v2 * (f22 - f11) - v2 * v2 * f12;
            let Q1 = 0.5 * (g + 1.0) * du * P1 * P1 + 0.5 * (g - 1.0) * du * P2 * P2 - (r.0 * P1 + r.1 * P2);
            let R1 = vmv - lin * q.0;
            let t = sv.T.v.at(i, j);
            let rho = ((g - 1.0) / (g * (s0 + t)) * ns.bern).powf(1.0 / (g - 1.0));
            let f2 = rho - rho0 - c0[i] * sv.Psi.v.at(i, j) - c1[i] * p.0;
            let f3 = ns.bern * sv.T.d2.at(i, j) / (g * (s0 + t) * v1);
            *o = [A11 / A22, A12 / A22, lin / A22, u / A22, (g - 1.0) * du / A22, (Q1 + R1) / A22, f2, f3, A22];
        }
        Ok(out)
    })?;
    let pick = |s: usize| NodeField { n_x1: n, n_pts: np, data: rows.iter().flat_map(|r| r.iter().map(move |o| o[s])).collect() };
    let set = CoefficientSet {
        a11: pick(0),
        a12: pick(1),
        a: pick(2),
        b1: pick(3),
        b0: pick(4),
        c0,
        c1,
        f1: pick(5),
        f2: pick(6),
        f3: pick(7),
        A22: pick(8),
        d0,
    };
    set.check_walls()?;
    Ok(set)
}

impl CoefficientSet {
    /// `a12 = 0` on the walls; guaranteed by the basis parities, asserted here.
    pub fn check_walls(&self) -> Result<()> {
        let last = self.a12.n_pts - 1;
        for i in 0..self.a12.n_x1 {
            for j in [0, last] {
                let v = self.a12.at(i, j);
                if v.abs() > 1e-12 {
                    return Err(SolverError::Internal(format!("a12 = {v:e} on the wall at x1 node {i}")));
                }
            }
        }
        Ok(())
    }

    /// `a11 - a12^2`, the discriminant whose sign separates elliptic from hyperbolic nodes.
    pub fn discriminant(&self) -> NodeField {
        NodeField {
            n_x1: self.a11.n_x1,
            n_pts: self.a11.n_pts,
            data: self.a11.data.iter().zip(&self.a12.data).map(|(a, b)| a - b * b).collect(),
        }
    }
}

/// Pseudo momentum density `m = (Phi_bar + Psi - |v|^2/2)^(1/(g-1)) v` and its divergence.
#[derive(Debug, Clone)]
pub struct MomentumField {
    pub m1: NodeField,
    pub m2: NodeField,
    pub divergence: NodeField,
}

pub fn momentum_field(
    state: &FlowState,
    bgg: &BackgroundOnGrid,
    params: &GasParameters,
    grid: &Grid,
) -> Result<MomentumField> {
    let sv = StateValues::new(state, grid);
    let np = grid.n_pts();
    let n = grid.n_x1;
    let ex = 1.0 / (params.gamma - 1.0);
    let mut m1 = NodeField::zeros(grid);
    let mut m2 = NodeField::zeros(grid);
    for i in 0..n {
        for j in 0..np {
            let ns = sv.node(bgg, i, j);
            if !(ns.bern > 0.0) {
                return Err(SolverError::Degenerate(format!(
                    "negative base {:e} for the momentum density at node ({i}, {j})",
                    ns.bern
                )));
            }
            let w = ns.bern.powf(ex);
            m1.data[i * np + j] = w * ns.v1;
            m2.data[i * np + j] = w * ns.v2;
        }
    }
    let divergence = divergence(&m1, &m2, grid);
    Ok(MomentumField { m1, m2, divergence })
}

/// `d1 m1 + d2 m2`: central differences in x1, spectral in x2 (m2 vanishes on walls).
pub fn divergence(m1: &NodeField, m2: &NodeField, grid: &Grid) -> NodeField {
    let np = grid.n_pts();
    let n = grid.n_x1;
    let h = grid.h();
    let mut out = NodeField::zeros(grid);
    for j in 0..np {
        let col: Vec<f64> = (0..n).map(|i| m1.at(i, j)).collect();
        let d = diff1(&col, h);
        for i in 0..n {
            out.data[i * np + j] = d[i];
        }
    }
    for i in 0..n {
        let c = grid.project(Parity::Dirichlet, m2.row(i));
        let d = grid.synthesize(Parity::Dirichlet, &c, 1);
        for j in 0..np {
            out.data[i * np + j] += d[j];
        }
    }
    out
}

/// Modal amplitudes of the boundary perturbation, all scaled by `sigma`:
/// `S_en - S0 = sigma sum a_n cos(n pi x2)`, `E_en - E0 = sigma sum b_n cos(n pi x2)`,
/// `w_en = sigma sum c_n sin(n pi x2)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BoundaryData {
    pub sigma: f64,
    pub s_cos: Vec<(usize, f64)>,
    pub e_cos: Vec<(usize, f64)>,
    pub w_sin: Vec<(usize, f64)>,
}

fn cos_sum(terms: &[(usize, f64)], x: f64, deriv: u32) -> f64 {
    terms
        .iter()
        .map(|&(n, a)| {
            let w = n as f64 * PI;
            let (s, c) = (w * x).sin_cos();
            a * match deriv % 4 {
                0 => c,
                1 => -w * s,
                2 => -w * w * c,
                _ => w * w * w * s,
            }
        })
        .sum()
}

fn sin_sum(terms: &[(usize, f64)], x: f64, deriv: u32) -> f64 {
    terms
        .iter()
        .map(|&(n, a)| {
            let w = n as f64 * PI;
            let (s, c) = (w * x).sin_cos();
            a * match deriv % 4 {
                0 => s,
                1 => w * c,
                2 => -w * w * s,
                _ => -w * w * w * c,
            }
        })
        .sum()
}

impl BoundaryData {
    pub fn zero() -> Self {
        BoundaryData::default()
    }

    /// The standard single-mode family `cos(pi x2)`, `cos(pi x2)`, `sin(pi x2)`.
    pub fn single_mode(sigma: f64) -> Self {
        BoundaryData { sigma, s_cos: vec![(1, 1.0)], e_cos: vec![(1, 1.0)], w_sin: vec![(1, 1.0)] }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        BoundaryData { sigma: self.sigma * factor, ..self.clone() }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma == 0.0
            || (self.s_cos.iter().chain(&self.e_cos).chain(&self.w_sin)).all(|&(_, a)| a == 0.0)
    }

    /// Sup of the modal amplitudes times sigma, a bound for `|S_en - S0|` etc.
    pub fn amplitude(&self) -> f64 {
        let s = |t: &[(usize, f64)]| t.iter().map(|x| x.1.abs()).sum::<f64>();
        self.sigma.abs() * s(&self.s_cos).max(s(&self.e_cos)).max(s(&self.w_sin))
    }

    /// `S_en(x2) - S0`.
    pub fn entropy(&self, x2: f64) -> f64 {
        self.sigma * cos_sum(&self.s_cos, x2, 0)
    }

    pub fn entropy_d(&self, x2: f64, deriv: u32) -> f64 {
        self.sigma * cos_sum(&self.s_cos, x2, deriv)
    }

    /// `E_en(x2) - E0`.
    pub fn field(&self, x2: f64, deriv: u32) -> f64 {
        self.sigma * cos_sum(&self.e_cos, x2, deriv)
    }

    pub fn w_en(&self, x2: f64, deriv: u32) -> f64 {
        self.sigma * sin_sum(&self.w_sin, x2, deriv)
    }

    /// `int_{-1}^{x2} w_en`.
    pub fn w_en_integral(&self, x2: f64) -> f64 {
        self.sigma
            * self
                .w_sin
                .iter()
                .filter(|t| t.0 > 0)
                .map(|&(n, c)| {
                    let w = n as f64 * PI;
                    c * (w.cos() - (w * x2).cos()) / w
                })
                .sum::<f64>()
    }

    /// Wall compatibility: odd derivatives of `S_en`, `E_en` and even derivatives
    /// (orders 0, 2, 4) of `w_en` vanish at `x2 = +-1`.
    pub fn compatibility_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for x in [-1.0, 1.0] {
            for k in [1, 3] {
                d = d.max(self.entropy_d(x, k).abs()).max(self.field(x, k).abs());
            }
            for k in [0, 2, 4] {
                d = d.max(self.w_en(x, k).abs());
            }
        }
        d
    }

    /// Largest mode number appearing in any family.
    pub fn max_mode(&self) -> usize {
        self.s_cos.iter().chain(&self.e_cos).chain(&self.w_sin).map(|t| t.0).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_are_exact_at_quarter_turns() {
        assert_eq!(phase_sin_cos(0, 4), (0.0, 1.0));
        assert_eq!(phase_sin_cos(4, 4), (0.0, -1.0));
        assert_eq!(phase_sin_cos(2, 4), (1.0, 0.0));
        assert_eq!(phase_sin_cos(-2, 4), (-1.0, 0.0));
    }

    #[test]
    fn wall_values_of_basis_derivatives_vanish() {
        let g = Grid::new(5, 1.0, 3).unwrap();
        let last = g.n_x2;
        for k in 0..g.n_modes(Parity::Cosine) {
            assert_eq!(g.dbasis(Parity::Cosine, k, 0), 0.0);
            assert_eq!(g.dbasis(Parity::Cosine, k, last), 0.0);
        }
        for k in 0..g.n_modes(Parity::Dirichlet) {
            assert_eq!(g.basis(Parity::Dirichlet, k, 0), 0.0);
            assert_eq!(g.basis(Parity::Dirichlet, k, last), 0.0);
            assert_eq!(g.ddbasis(Parity::Dirichlet, k, last), 0.0);
        }
    }

    #[test]
    fn finite_differences_are_exact_on_quadratics() {
        let h = 0.1;
        let f: Vec<f64> = (0..8).map(|i| (i as f64 * h).powi(2) + 1.0).collect();
        let d = diff1(&f, h);
        let dd = diff2(&f, h);
        for i in 0..8 {
            assert!((d[i] - 2.0 * i as f64 * h).abs() < 1e-12);
            assert!((dd[i] - 2.0).abs() < 1e-9);
        }
    }
}
