//! Independent reference computations and fixtures shared by the test targets.

#![allow(dead_code, clippy::needless_range_loop)]

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use transonic_core::background1d::{solve_background, BackgroundSolution, GasParameters};
use transonic_core::fields::{assemble_coefficients, BackgroundOnGrid, BoundaryData, CoefficientSet, Field2D, FlowState, Grid, NodeField};
use transonic_core::mixed_solver::{build_mode_system, solve_eps_system, ExitClosure, ModeSystem};

/// Closed-form antiderivative of H' used as an independent check of the quadrature.
pub fn h_closed(p: &GasParameters, u: f64) -> f64 {
    let g = p.gamma;
    let ui = p.u_bar_inf();
    let us = p.u_s();
    let us1 = us.powf(g + 1.0);
    let k = |t: f64| {
        p.j / ui * (ui * t - 0.5 * t * t + ui * us1 * t.powf(-g) / g + us1 * t.powf(1.0 - g) / (1.0 - g))
    };
    k(u) - k(us)
}

pub fn u_max_bisect(p: &GasParameters) -> f64 {
    let (mut a, mut b) = (p.u_bar_inf(), 10.0 * p.u_bar_inf());
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if h_closed(p, m) > 0.0 {
            a = m
        } else {
            b = m
        }
    }
    0.5 * (a + b)
}

/// Adaptive Dormand-Prince 5(4) for a 2-component system from `t0` to `t1`.
pub fn dopri(f: impl Fn(f64, [f64; 2]) -> [f64; 2], t0: f64, t1: f64, y0: [f64; 2], tol: f64) -> [f64; 2] {
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B4: [f64; 7] =
        [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];
    let span = t1 - t0;
    let (mut t, mut y) = (t0, y0);
    let mut h = span * 1e-3;
    while (t1 - t) * span.signum() > 0.0 {
        if (t + h - t1) * span.signum() > 0.0 {
            h = t1 - t;
        }
        let mut k = [[0.0; 2]; 7];
        for s in 0..7 {
            let mut ys = y;
            for (r, a) in A[s].iter().enumerate().take(s) {
                ys[0] += h * a * k[r][0];
                ys[1] += h * a * k[r][1];
            }
            k[s] = f(t + C[s] * h, ys);
        }
        let y5 = [0, 1].map(|c| y[c] + h * (0..6).map(|r| A[6][r] * k[r][c]).sum::<f64>());
        let y4 = [0, 1].map(|c| y[c] + h * (0..7).map(|r| B4[r] * k[r][c]).sum::<f64>());
        let err = (0..2).map(|c| (y5[c] - y4[c]).abs() / (tol * (1.0 + y5[c].abs()))).fold(0.0, f64::max);
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        h *= (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 5.0);
    }
    y
}

/// Independent RK oracle for `(l_s, l_max)`; the sonic gap of width `2 delta`
/// is bridged by a Hermite cubic of `dx/du`.
pub fn rk_oracle(p: &GasParameters, u0: f64) -> (f64, f64) {
    let us = p.u_s();
    let g = p.gamma;
    let (j, ri) = (p.j, p.rho_bar_inf());
    let delta = 1e-2 * us;
    let tol = 1e-13;
    // (x, E) as functions of the speed u.
    let speed_form = |u: f64, y: [f64; 2]| {
        let dxdu = (u.powf(g + 1.0) - us.powf(g + 1.0)) / (y[1] * u.powf(g));
        [dxdu, (j / u - ri) * dxdu]
    };
    // (u, E) against y = l_max - x1.
    let reversed = |_y: f64, s: [f64; 2]| {
        let (u, e) = (s[0], s[1]);
        [-e * u.powf(g) / (u.powf(g + 1.0) - us.powf(g + 1.0)), -(j / u - ri)]
    };
    let e0 = -(2.0 * h_closed(p, u0)).sqrt();
    let a = dopri(speed_form, u0, us - delta, [0.0, e0], tol);
    let umax = u_max_bisect(p);
    let y1 = 0.25;
    let b0 = dopri(reversed, 0.0, y1, [umax, 0.0], tol);
    let b = dopri(speed_form, b0[0], us + delta, [0.0, b0[1]], tol);
    // dx/du and its u-derivative at the gap ends, from the state (u, E).
    let ends = |u: f64, e: f64| {
        let d = u.powf(g + 1.0) - us.powf(g + 1.0);
        let f = e * u.powf(g) / d;
        let fe = u.powf(g) / d;
        let fu = e * (g * u.powf(g - 1.0) * d - u.powf(g) * (g + 1.0) * u.powf(g)) / (d * d);
        let upp = fu * f + fe * (p.j / u - p.rho_bar_inf());
        (1.0 / f, -upp / f.powi(3))
    };
    let (pa, ma) = ends(us - delta, a[1]);
    let (pb, mb) = ends(us + delta, b[1]);
    let w = 2.0 * delta;
    let full = w * (pa + pb) / 2.0 + w * w * (ma - mb) / 12.0;
    let half = w * (pa * 0.40625 + w * ma * (11.0 / 192.0) + pb * 0.09375 - w * mb * (5.0 / 192.0));
    let l_s = a[0] + half;
    // right integrated from u_b down to u_s + delta, so b[0] = x(u_s+delta) - x(u_b).
    let l_max = a[0] + full - b[0] + y1;
    (l_s, l_max)
}

/// Dense solve of the integral form `X_i = Pi sum_{q<=i} Q_q - (I - Pi) sum_{q>i} Q_q`
/// with the same per-interval increments as the banded scheme.
pub fn dense_oracle(sys: &ModeSystem, eps: f64) -> Vec<f64> {
    let m = sys.modes;
    let n = sys.n_x1 - 1;
    let h = sys.h;
    let size = 5 * m * (n + 1);
    let col = |i: usize, c: usize, k: usize| (i * 5 + c) * m + k;
    // Q[q-1] rows: 5m increments, each a linear form over X plus a constant.
    let mut qm = vec![DMatrix::<f64>::zeros(5 * m, size); n];
    let mut qc = vec![DVector::<f64>::zeros(5 * m); n];
    let mean = |i: usize| sys.block(&sys.a11, i, 0, 0);
    for q in 1..=n {
        let (l, r) = (q - 1, q);
        let s = if mean(l) + mean(r) > 0.0 { r } else { l };
        let a = &mut qm[q - 1];
        for k in 0..m {
            if q == 1 {
                a[(k, col(r, 1, k))] += h;
            } else {
                a[(k, col(r, 1, k))] += 0.5 * h;
                a[(k, col(l, 1, k))] += 0.5 * h;
            }
            if q == n {
                a[(m + k, col(l, 2, k))] += h;
            } else {
                a[(m + k, col(r, 2, k))] += 0.5 * h;
                a[(m + k, col(l, 2, k))] += 0.5 * h;
            }
            let rr = 2 * m + k;
            for j in 0..m {
                a[(rr, col(s, 2, j))] -= h / eps * sys.block(&sys.a11, s, k, j);
                a[(rr, col(s, 1, j))] -= h / eps * (sys.block(&sys.a12d, s, k, j) + sys.block(&sys.aa, s, k, j));
                a[(rr, col(s, 4, j))] -= h / eps * sys.block(&sys.ab1, s, k, j);
                a[(rr, col(s, 3, j))] -= h / eps * sys.block(&sys.ab0, s, k, j);
            }
            a[(rr, col(s, 0, k))] += h / eps * sys.mu[k];
            qc[q - 1][rr] = h / eps * sys.f1[s * m + k];
            a[(3 * m + k, col(r, 4, k))] += 0.5 * h;
            a[(3 * m + k, col(l, 4, k))] += 0.5 * h;
            for node in [l, r] {
                a[(4 * m + k, col(node, 3, k))] += 0.5 * h * (sys.mu[k] + sys.c0[node]);
                a[(4 * m + k, col(node, 1, k))] += 0.5 * h * sys.c1[node];
            }
            qc[q - 1][4 * m + k] = 0.5 * h * (sys.f2[l * m + k] + sys.f2[r * m + k]);
        }
    }
    // Component order in the increments: X1, X2, X3, X4, X5.
    let inlet = [true, true, false, false, true];
    let mut big = DMatrix::<f64>::zeros(size, size);
    let mut rhs = DVector::<f64>::zeros(size);
    for i in 0..=n {
        for c in 0..5 {
            for k in 0..m {
                let row = col(i, c, k);
                big[(row, row)] += 1.0;
                let qs: Vec<usize> = if inlet[c] { (1..=i).collect() } else { (i + 1..=n).collect() };
                let sign = if inlet[c] { -1.0 } else { 1.0 };
                for q in qs {
                    let src = c * m + k;
                    for cc in 0..size {
                        big[(row, cc)] += sign * qm[q - 1][(src, cc)];
                    }
                    rhs[row] -= sign * qc[q - 1][src];
                }
            }
        }
    }
    big.lu().solve(&rhs).expect("dense oracle singular").iter().copied().collect()
}

/// Standard gas with inlet speed `u0`, exit ratio `kl` and background coefficients on an `(n, m)` grid.
pub fn setup(u0: f64, kl: f64, m: usize, n: usize) -> (GasParameters, BackgroundSolution, Grid, CoefficientSet) {
    let p = GasParameters::from_inlet_speed(3.0, 2.0, 1.0, 1.0 / 3.0, u0).unwrap();
    let bg = solve_background(&p, u0, 400).unwrap();
    let len = bg.x1_of_speed(kl * p.u_s()).unwrap();
    let g = Grid::new(n, len, m).unwrap();
    let bgg = BackgroundOnGrid::new(&bg, &g).unwrap();
    let c = assemble_coefficients(&FlowState::zero(&g), &bgg, &p, &g, 0.05, bg.u_max).unwrap();
    (p, bg, g, c)
}

/// Sup error of a manufactured (v, w) pair on `x1 < 0.9 l_s`.
pub fn manufactured_error(n: usize, eps: f64, closure: ExitClosure) -> f64 {
    let (_p, bg, g, c) = setup(0.9, 1.1, 2, n);
    let len = g.length;
    // v: v = d1 v = 0 at inlet, d11 v = 0 at exit; w: d1 w = 0 at inlet, w = 0 at exit.
    let th = |x: f64| [x * x - x.powi(3) / (3.0 * len), 2.0 * x - x * x / len, 2.0 - 2.0 * x / len, -2.0 / len];
    let om = |x: f64| {
        let k = PI / (2.0 * len);
        [(k * x).cos(), -k * (k * x).sin(), -k * k * (k * x).cos()]
    };
    let ey = |y: f64| [0.5 + (PI * y).cos(), -PI * (PI * y).sin(), -PI * PI * (PI * y).cos()];
    let np = g.n_pts();
    let f1 = NodeField::from_fn(&g, |i, j| {
        let (t, e) = (th(g.x1[i]), ey(g.x2[j]));
        let (o, ew) = (om(g.x1[i]), (PI * g.x2[j]).cos());
        let at = |f: &NodeField| f.at(i, j);
        eps * t[3] * e[0] + at(&c.a11) * t[2] * e[0] + 2.0 * at(&c.a12) * t[1] * e[1] + t[0] * e[2]
            + at(&c.a) * t[1] * e[0]
            + at(&c.b1) * o[1] * ew
            + at(&c.b0) * o[0] * ew
    });
    let f2 = NodeField::from_fn(&g, |i, j| {
        let (t, e) = (th(g.x1[i]), ey(g.x2[j]));
        let (o, ew) = (om(g.x1[i]), (PI * g.x2[j]).cos());
        o[2] * ew - PI * PI * o[0] * ew - c.c0[i] * o[0] * ew - c.c1[i] * t[1] * e[0]
    });
    let sys = build_mode_system(&c, &g, &f1, &f2);
    let s = solve_eps_system(&sys, eps, closure).unwrap();
    let vv = s.v(&g).evaluate(&g).v;
    let ww = s.w(&g).evaluate(&g).v;
    let mut err = 0.0f64;
    for i in 0..g.n_x1 {
        if g.x1[i] >= 0.9 * bg.l_s {
            break;
        }
        for j in 0..np {
            let ve = th(g.x1[i])[0] * ey(g.x2[j])[0];
            let we = om(g.x1[i])[0] * (PI * g.x2[j]).cos();
            err = err.max((vv.at(i, j) - ve).abs()).max((ww.at(i, j) - we).abs());
        }
    }
    err
}

const A: f64 = 0.05;

// Stream function theta = x2 + 1 + A x1^2 sin(pi (x2 + 1)); m = (d2 theta, -d1 theta).
pub fn m1(x: f64, y: f64) -> f64 {
    1.0 + A * PI * x * x * (PI * (y + 1.0)).cos()
}

pub fn m2(x: f64, y: f64) -> f64 {
    -2.0 * A * x * (PI * (y + 1.0)).sin()
}

/// Inlet label of the node `(x, y)` for the field `(m1, m2)`.
pub fn exact_label(x: f64, y: f64) -> f64 {
    y + A * x * x * (PI * (y + 1.0)).sin()
}

fn eval_cos(t: &Field2D, i: usize, y: f64) -> f64 {
    (0..t.n_modes)
        .map(|k| t.mode(i, k) * if k == 0 { 1.0 / 2f64.sqrt() } else { (k as f64 * PI * y).cos() })
        .sum()
}

/// Traces streamlines of `(m1, m2)` from five inlet points with RK4 and compares
/// `T` at each x1 node with the inlet entropy. Returns (max deviation, min T, max T).
pub fn streamline_variation(t: &Field2D, bd: &BoundaryData, g: &Grid) -> (f64, f64, f64) {
    let rhs = |x: f64, y: f64| m2(x, y) / m1(x, y);
    let mut worst = 0.0f64;
    let mut smin = f64::INFINITY;
    let mut smax = f64::NEG_INFINITY;
    for y0 in [-0.9, -0.5, -0.1, 0.3, 0.77] {
        let s0 = bd.entropy(y0);
        let mut y = y0;
        let sub = 50;
        let h = g.h() / sub as f64;
        for i in 1..g.n_x1 {
            for s in 0..sub {
                let x = g.x1[i - 1] + s as f64 * h;
                let k1 = rhs(x, y);
                let k2 = rhs(x + h / 2.0, y + h / 2.0 * k1);
                let k3 = rhs(x + h / 2.0, y + h / 2.0 * k2);
                let k4 = rhs(x + h, y + h * k3);
                y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            }
            let v = eval_cos(t, i, y);
            worst = worst.max((v - s0).abs());
            smin = smin.min(v);
            smax = smax.max(v);
        }
    }
    (worst, smin, smax)
}
