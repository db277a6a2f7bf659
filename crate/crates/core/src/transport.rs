//! Entropy transport `m . grad T = 0` through the stream-function Lagrangian map.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::fields::{BoundaryData, Field2D, Grid, NodeField, Parity};
use crate::par;

#[derive(Debug, Clone)]
pub struct StreamFunction {
    /// `theta(x1, x2) = int_{-1}^{x2} m1 dt`.
    pub theta: NodeField,
    pub inlet: Vec<f64>,
    /// `min m1` over the grid.
    pub margin: f64,
    /// Inlet mean of `m1`.
    pub j_eff: f64,
    /// `max_x1 |theta(x1, 1) - theta(0, 1)|`.
    pub top_defect: f64,
}

/// Cumulative composite Simpson on a uniform grid with an even number of intervals.
pub fn cumulative_simpson(f: &[f64], dx: f64) -> Vec<f64> {
    let n = f.len() - 1;
    let mut out = vec![0.0; n + 1];
    let mut j = 2;
    while j <= n {
        out[j] = out[j - 2] + dx / 3.0 * (f[j - 2] + 4.0 * f[j - 1] + f[j]);
        out[j - 1] = out[j - 2] + dx / 12.0 * (5.0 * f[j - 2] + 8.0 * f[j - 1] - f[j]);
        j += 2;
    }
    if n % 2 == 1 {
        out[n] = out[n - 1] + dx / 12.0 * (-f[n - 2] + 8.0 * f[n - 1] + 5.0 * f[n]);
    }
    out
}

pub fn stream_function(m1: &NodeField, grid: &Grid) -> Result<StreamFunction> {
    let margin = m1.data.iter().copied().fold(f64::INFINITY, f64::min);
    if !(margin > 0.0) {
        return Err(SolverError::Degenerate(format!("m . e1 = {margin:e} is not positive; streamlines reverse")));
    }
    let dx = 2.0 / grid.n_x2 as f64;
    let rows = par::map_range(grid.n_x1, |i| cumulative_simpson(m1.row(i), dx));
    let np = grid.n_pts();
    let theta = NodeField { n_x1: grid.n_x1, n_pts: np, data: rows.concat() };
    let inlet = theta.row(0).to_vec();
    let top = inlet[np - 1];
    let top_defect = (0..grid.n_x1).map(|i| (theta.at(i, np - 1) - top).abs()).fold(0.0, f64::max);
    Ok(StreamFunction { theta, inlet, margin, j_eff: top / 2.0, top_defect })
}

/// Monotone piecewise cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let del: Vec<f64> = (0..n - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut d = vec![0.0; n];
        for k in 1..n - 1 {
            if del[k - 1] * del[k] > 0.0 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                d[k] = (w1 + w2) / (w1 / del[k - 1] + w2 / del[k]);
            }
        }
        let end = |h0: f64, h1: f64, d0: f64, d1: f64| {
            let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
            if s * d0 <= 0.0 {
                0.0
            } else if d0 * d1 <= 0.0 && s.abs() > 3.0 * d0.abs() {
                3.0 * d0
            } else {
                s
            }
        };
        if n > 2 {
            d[0] = end(h[0], h[1], del[0], del[1]);
            d[n - 1] = end(h[n - 2], h[n - 3], del[n - 2], del[n - 3]);
        } else {
            d[0] = del[0];
            d[1] = del[0];
        }
        Pchip { x: x.to_vec(), y: y.to_vec(), d }
    }

    fn seg(&self, t: f64) -> usize {
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(k) => k.min(self.x.len() - 2),
            Err(k) => k.clamp(1, self.x.len() - 1) - 1,
        }
    }

    pub fn eval(&self, t: f64) -> (f64, f64) {
        let k = self.seg(t);
        let h = self.x[k + 1] - self.x[k];
        let s = (t - self.x[k]) / h;
        let (y0, y1, d0, d1) = (self.y[k], self.y[k + 1], self.d[k], self.d[k + 1]);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let v = h00 * y0 + h10 * h * d0 + h01 * y1 + h11 * h * d1;
        let dv = (6.0 * s * s - 6.0 * s) / h * y0
            + (3.0 * s * s - 4.0 * s + 1.0) * d0
            + (6.0 * s - 6.0 * s * s) / h * y1
            + (3.0 * s * s - 2.0 * s) * d1;
        (v, dv)
    }
}

#[derive(Debug, Clone)]
pub struct LagrangianMap {
    /// Inlet label of the streamline through each node, in `[-1, 1]`.
    pub label: NodeField,
    pub warnings: Vec<String>,
}

const ROOT_TOL: f64 = 1e-12;

/// Inverts `theta(0, L) = theta(x1, x2)` node by node. Each column is first
/// rescaled to the inlet flux so that the walls map to themselves.
pub fn lagrangian_map(sf: &StreamFunction, grid: &Grid) -> Result<LagrangianMap> {
    let np = grid.n_pts();
    let inlet = sf.inlet.clone();
    let top = inlet[np - 1];
    let interp = Pchip::new(&grid.x2, &inlet);
    let cols = par::try_map_range(grid.n_x1, |i| {
        let row = sf.theta.row(i);
        let scale = top / row[np - 1];
        let mut out = vec![0.0; np];
        let mut warn = None;
        for j in 0..np {
            let t = row[j] * scale;
            let slack = 1e-8 * top;
            if t < -slack || t > top + slack {
                return Err(SolverError::Domain(format!(
                    "stream-function value {t:e} outside the inlet range [0, {top:e}] at node ({i}, {j})"
                )));
            }
            if t < 0.0 || t > top {
                warn = Some(format!("stream-function value clamped into the inlet range at x1 node {i}"));
            }
            out[j] = invert(&interp, &grid.x2, &inlet, t.clamp(0.0, top));
        }
        Ok((out, warn))
    })?;
    let warnings = cols.iter().filter_map(|c| c.1.clone()).collect();
    Ok(LagrangianMap {
        label: NodeField { n_x1: grid.n_x1, n_pts: np, data: cols.into_iter().flat_map(|c| c.0).collect() },
        warnings,
    })
}

fn invert(p: &Pchip, x: &[f64], y: &[f64], t: f64) -> f64 {
    let k = match y.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
        Ok(k) => return x[k],
        Err(k) => k.clamp(1, y.len() - 1) - 1,
    };
    let (mut a, mut b) = (x[k], x[k + 1]);
    while b - a > 1e-6 * (x[k + 1] - x[k]) {
        let c = 0.5 * (a + b);
        if p.eval(c).0 < t {
            a = c;
        } else {
            b = c;
        }
    }
    let mut s = 0.5 * (a + b);
    for _ in 0..8 {
        let (v, dv) = p.eval(s);
        let step = (v - t) / dv;
        let next = (s - step).clamp(a, b);
        if (next - s).abs() <= ROOT_TOL {
            s = next;
            break;
        }
        s = next;
    }
    s
}

/// `T = (S_en - S0) o L`, projected onto cosine modes.
pub fn transport_entropy(bd: &BoundaryData, map: &LagrangianMap, grid: &Grid) -> Field2D {
    let vals = NodeField { n_x1: map.label.n_x1, n_pts: map.label.n_pts, data: map.label.data.iter().map(|&l| bd.entropy(l)).collect() };
    Field2D::from_values(Parity::Cosine, grid, &vals)
}

/// `sup |m . grad T|` on the grid: central differences in x1, spectral in x2.
pub fn transport_residual(m1: &NodeField, m2: &NodeField, t: &Field2D, grid: &Grid) -> f64 {
    let ev = t.evaluate(grid);
    m1.data
        .iter()
        .zip(&m2.data)
        .zip(ev.d1.data.iter().zip(&ev.d2.data))
        .map(|((a, b), (c, d))| (a * c + b * d).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransportReport {
    pub margin: f64,
    pub j_eff: f64,
    pub top_defect: f64,
}
