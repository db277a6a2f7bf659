//! One pass/fail line per acceptance criterion; exits nonzero if any fails.

use std::f64::consts::PI;
use std::fs;
use std::time::Instant;

use transonic_cli::config::{BoundarySection, WindowSection};
use transonic_cli::run::{self, SweepAxis};
use transonic_cli::RunConfig;
use transonic_core::background1d::*;
use transonic_core::driver::{fixed_point_solve, SolveConfig, SolveOutcome, Tolerances};
use transonic_core::fields::{BoundaryData, Grid, NodeField};
use transonic_core::mixed_solver::{build_mode_system, pinning, solve_eps_system, ExitClosure};
use transonic_core::regimes::*;
use transonic_core::transport::{lagrangian_map, stream_function, transport_entropy, transport_residual};

#[path = "../../core/tests/oracles/mod.rs"]
mod oracles;

type Check = Result<String, String>;

fn ok(pass: bool, detail: String) -> Check {
    if pass {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn standard() -> GasParameters {
    GasParameters::from_inlet_speed(3.0, 2.0, 1.0, 1.0 / 3.0, 0.9).unwrap()
}

fn sci(v: &[f64]) -> String {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", cells.join(", "))
}

fn order(a: f64, b: f64) -> f64 {
    (a / b).log2()
}

const L_STD: f64 = 0.5674267653686206;

fn solve_standard(n: usize, m: usize, bd: BoundaryData, tweak: impl FnOnce(&mut Tolerances)) -> Result<SolveOutcome, String> {
    let mut tol = Tolerances::default();
    tweak(&mut tol);
    let cfg = SolveConfig {
        params: standard(),
        u0: 0.9,
        length: L_STD,
        n_x1: n,
        m,
        boundary: bd,
        tol,
        d0: None,
        override_certificate: true,
        background_resolution: 2000,
        regime_search: RegimeSearch::default(),
    };
    fixed_point_solve(&cfg).map_err(err)
}

fn c1() -> Check {
    let t = Instant::now();
    let bg = solve_background(&standard(), 0.9, 2000).map_err(err)?;
    let dt = t.elapsed().as_secs_f64();
    let d = bg.conservation_defect().map_err(err)?;
    ok(d <= 1e-9 && dt < 1.0, format!("max |E^2/2 - H(u)| = {d:.3e}, runtime {dt:.3} s"))
}

fn c2() -> Check {
    let p = standard();
    let bg = solve_background(&p, 0.9, 2000).map_err(err)?;
    let at = bg.profile_at(bg.l_s).map_err(err)?;
    let du = (at.u1 - p.u_s()).abs();
    let increasing = bg.u1.windows(2).all(|w| w[1] > w[0]);
    // E vanishes again at l_max, where H(u_max) = 0.
    let signs = bg.x1_nodes.iter().zip(&bg.E).filter(|(&x, _)| x < bg.l_max).all(|(&x, &e)| {
        if x < bg.l_s - 1e-12 {
            e < 0.0
        } else if x > bg.l_s + 1e-12 {
            e > 0.0
        } else {
            true
        }
    }) && at.e.abs() < 1e-8;
    let (ls, lm) = oracles::rk_oracle(&p, 0.9);
    let (a, b) = ((bg.l_s - ls).abs(), (bg.l_max - lm).abs());
    ok(
        du <= 1e-8 && increasing && signs && a <= 1e-8 && b <= 1e-8,
        format!("|u(l_s) - u_s| = {du:.1e}, increasing = {increasing}, E signs = {signs}, RK |dl_s| = {a:.1e}, |dl_max| = {b:.1e}"),
    )
}

fn c3() -> Check {
    let p = standard();
    let fs = flux_at_sonic(&p);
    let d = [1e-4, -1e-4]
        .iter()
        .map(|s| flux_F(p.u_s() + s, &p).map(|f| (f - fs).abs()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    let worst = d[0].max(d[1]);
    ok(worst <= 1e-3, format!("max |F(u_s +- 1e-4) - F(u_s)| = {worst:.3e}"))
}

fn c4() -> Check {
    let mut worst_h = 0.0f64;
    for (g, z) in [(1.4, 2.0), (3.0, 2.0), (2.0, 5.0)] {
        let p = GasParameters::new(g, z, 1.0, 1.0, -1.0).map_err(err)?;
        let want = (1.0 - 1.0 / z).sqrt() / (2.0 * (g + 1.0)).sqrt();
        let plus = kappa_H_direct(1.0 + 1e-4, &p).map_err(err)?;
        let minus = kappa_H_direct(1.0 - 1e-4, &p).map_err(err)?;
        worst_h = worst_h.max((0.5 * (plus + minus) - want).abs());
    }
    let mut worst_l = 0.0f64;
    for (g, z, j, s0, k0, kl) in [(3.0, 2.0, 1.0, 1.0 / 3.0, 0.9, 1.1), (1.4, 2.0, 0.5, 1.0, 0.95, 1.05), (2.0, 3.0, 2.0, 0.5, 0.8, 1.4)] {
        let p0 = GasParameters::new(g, z, j, s0, -1.0).map_err(err)?;
        let u0 = k0 * p0.u_s();
        let p = GasParameters::from_inlet_speed(g, z, j, s0, u0).map_err(err)?;
        let bg = solve_background(&p, u0, 200).map_err(err)?;
        let arc = bg.x1_of_speed(kl * p.u_s()).map_err(err)?;
        let l = nozzle_length(k0, kl, &p).map_err(err)?;
        worst_l = worst_l.max((l / arc - 1.0).abs());
    }
    ok(
        worst_h <= 1e-6 && worst_l <= 1e-6,
        format!("|H(1) - closed form| = {worst_h:.2e} (3 gases), max relative L mismatch = {worst_l:.2e} (3 sets)"),
    )
}

fn c5() -> Check {
    let gas = |j: f64| GasParameters::new(1.4, 2.0, j, 1.0, -1.0);
    let mut found = None;
    for j in [1.0, 1e-1, 1e-2, 1e-3] {
        let r = certify_regime(&gas(j).map_err(err)?, &RegimeSearch::default()).map_err(err)?;
        if r.certified {
            found = Some((j, r));
            break;
        }
    }
    let (j, r) = found.ok_or("no certified (J, d) pair")?;
    let fine_step = RegimeSearch::default().resolution / 10.0;
    let fine = alpha_profile(&kappa_grid(r.kappa0, r.kappa_l, fine_step), r.kappa0, r.kappa_l, r.eta, &gas(j).map_err(err)?)
        .map_err(err)?;
    let dir = tempfile::tempdir().map_err(err)?;
    let mut cfg = RunConfig::standard();
    cfg.gas.gamma = 1.4;
    cfg.gas.S0 = 1.0;
    cfg.window = WindowSection { d: Some(r.d), ..Default::default() };
    cfg.grid.n_x1 = 41;
    cfg.grid.m = 2;
    cfg.grid.background_nodes = 200;
    cfg.output.dir = dir.path().to_path_buf();
    cfg.output.override_certificate = true;
    cfg.output.emit_fields = false;
    let js = [1.0, 1e-1, 1e-2, 1e-3];
    let rows = run::run_sweep(&cfg, SweepAxis::J, &js).map_err(err)?;
    let ls: Vec<f64> = rows.iter().map(|r| r.L).collect();
    let increasing = ls.windows(2).all(|w| w[1] > w[0]);
    ok(
        j <= 1e-2 && r.alpha_min > 0.0 && fine.min > 0.0 && increasing,
        format!(
            "certified J = {j:e}, d = {}, alpha_min = {:.3e}, 10x finer min = {:.3e}; L over J = {js:?}: {ls:.4?}",
            r.d, r.alpha_min, fine.min
        ),
    )
}

fn c6() -> Check {
    let t = Instant::now();
    let o = solve_standard(401, 16, BoundaryData::zero(), |_| {})?;
    let dt = t.elapsed().as_secs_f64();
    let dev = o.sonic_interface.deviation;
    ok(
        o.converged && o.iterations <= 2 && o.norms.h1 <= 1e-10 && dev <= 1e-8 && dt < 30.0,
        format!("{} iterations, H1 norm = {:.1e}, sup|g_s - l_s| = {dev:.1e}, runtime {dt:.2} s", o.iterations, o.norms.h1),
    )
}

fn c7() -> Check {
    let (_p, _bg, g, c) = oracles::setup(0.95, 1.05, 2, 17);
    let nodal = |f: &dyn Fn(f64, f64) -> f64| NodeField::from_fn(&g, |i, j| f(g.x1[i], g.x2[j]));
    let f1 = nodal(&|x, y| (1.0 + x) * (PI * y).cos() + 0.3);
    let f2 = nodal(&|x, y| x * x - 0.2 * (2.0 * PI * y).cos());
    let sys = build_mode_system(&c, &g, &f1, &f2);
    let turn = pinning(&sys).map_err(err)?.turn.is_some();
    let eps = 1e-2;
    let band = solve_eps_system(&sys, eps, ExitClosure::Direct).map_err(err)?;
    let dense = oracles::dense_oracle(&sys, eps);
    let e = band.x.iter().zip(&dense).fold(0.0f64, |a, (x, y)| a.max((x - y).abs()));
    let scale = dense.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    ok(e <= 1e-8 && scale > 1e-6 && turn, format!("sup |banded - dense| = {e:.2e} (solution scale {scale:.2e}, sonic turn in range)"))
}

fn c8() -> Check {
    let ns = [41, 81, 161, 321];
    let e: Vec<f64> = ns.iter().map(|&n| oracles::manufactured_error(n, 1e-6, ExitClosure::Direct)).collect();
    let orders: Vec<f64> = e.windows(2).map(|w| order(w[0], w[1])).collect();
    let last = *orders.last().unwrap();
    let e_s = sci(&e);
    ok(last >= 1.9, format!("errors {e_s} on n = {ns:?}, orders {orders:.3?}"))
}

fn c9(o: &SolveOutcome) -> Check {
    let t = &o.trace;
    let tail = &t[t.len().saturating_sub(4)..];
    let decreasing = tail.windows(2).all(|w| w[1].h1_diff <= w[0].h1_diff);
    let last = t.last().map(|e| e.h1_diff).unwrap_or(f64::NAN);
    let diffs: Vec<f64> = t.iter().map(|e| e.h1_diff).collect();
    let diffs_s = sci(&diffs);
    ok(decreasing && last <= 1e-6, format!("{} levels, final eps = {:.3e}, trace {diffs_s}", t.len(), o.epsilon))
}

fn c10(a: &SolveOutcome, b: &SolveOutcome) -> Check {
    let r = a.norms.h1 / b.norms.h1;
    let g = a.sonic_interface.deviation / b.sonic_interface.deviation;
    let inside = |x: f64| (1.8..=2.2).contains(&x);
    ok(inside(r) && inside(g), format!("H1 norm ratio {r:.4}, sup|g_s - l_s| ratio {g:.4}"))
}

fn c11(o: &SolveOutcome) -> Check {
    let m = &o.mach_report;
    ok(
        m.mismatches == 0 && m.single_crossing_lines == m.lines,
        format!("{} mismatches over {} nodes, single M = 1 crossing on {}/{} lines", m.mismatches, m.checked, m.single_crossing_lines, m.lines),
    )
}

fn c12(o: &SolveOutcome, bd: &BoundaryData) -> Check {
    let ev = o.state.T.evaluate(&o.grid);
    let inlet = (0..o.grid.n_pts()).map(|j| (ev.v.at(0, j) - bd.entropy(o.grid.x2[j])).abs()).fold(0.0, f64::max);

    let sigma = 1e-4;
    let single = BoundaryData::single_mode(sigma);
    let osc = 2.0 * sigma;
    let g = Grid::new(41, 1.0, 16).map_err(err)?;
    let m1 = NodeField::from_fn(&g, |i, j| oracles::m1(g.x1[i], g.x2[j]));
    let map = lagrangian_map(&stream_function(&m1, &g).map_err(err)?, &g).map_err(err)?;
    let t = transport_entropy(&single, &map, &g);
    let (var, _, _) = oracles::streamline_variation(&t, &single, &g);

    let mut res = vec![];
    for n in [21, 41, 81, 161] {
        let g = Grid::new(n, 1.0, 16).map_err(err)?;
        let a = NodeField::from_fn(&g, |i, j| oracles::m1(g.x1[i], g.x2[j]));
        let b = NodeField::from_fn(&g, |i, j| oracles::m2(g.x1[i], g.x2[j]));
        let map = lagrangian_map(&stream_function(&a, &g).map_err(err)?, &g).map_err(err)?;
        res.push(transport_residual(&a, &b, &transport_entropy(&single, &map, &g), &g));
    }
    let orders: Vec<f64> = res.windows(2).map(|w| order(w[0], w[1])).collect();
    let min_order = orders.iter().copied().fold(f64::INFINITY, f64::min);
    let res_s = sci(&res);
    ok(
        inlet <= 1e-10 && var <= 1e-6 * osc && min_order >= 1.8,
        format!(
            "inlet trace error {inlet:.1e}, streamline variation {var:.1e} (limit {:.1e}), sup|m.grad T| {res_s}, orders {orders:.2?}",
            1e-6 * osc
        ),
    )
}

fn c13() -> Check {
    let bd = BoundaryData::single_mode(1e-4);
    let mut div = vec![];
    let mut poi = vec![];
    for n in [101, 201, 401] {
        let o = solve_standard(n, 4, bd.clone(), |t| t.epsilon = Some(1e-8))?;
        if !o.converged {
            return Err(format!("n = {n} did not converge"));
        }
        div.push(o.residuals.divergence.sup);
        poi.push(o.residuals.poisson.sup);
    }
    let od: Vec<f64> = div.windows(2).map(|w| order(w[0], w[1])).collect();
    let op: Vec<f64> = poi.windows(2).map(|w| order(w[0], w[1])).collect();
    let min = od.iter().chain(&op).copied().fold(f64::INFINITY, f64::min);
    let (div_s, poi_s) = (sci(&div), sci(&poi));
    ok(min >= 1.8, format!("div m {div_s} orders {od:.2?}; Poisson {poi_s} orders {op:.2?}"))
}

fn c14(a: &SolveOutcome) -> Check {
    let dirs = [tempfile::tempdir().map_err(err)?, tempfile::tempdir().map_err(err)?];
    for d in &dirs {
        let mut cfg = RunConfig::standard();
        cfg.grid.n_x1 = 101;
        cfg.grid.m = 4;
        cfg.boundary = BoundarySection { sigma: 1e-4, S: vec![(1, 1.0)], E: vec![(1, 1.0)], w: vec![(1, 1.0)] };
        cfg.output.dir = d.path().to_path_buf();
        cfg.output.override_certificate = true;
        run::run_solve(&cfg).map_err(err)?;
    }
    let mut files = vec![];
    for e in walk(dirs[0].path()) {
        let rel = e.strip_prefix(dirs[0].path()).unwrap().to_path_buf();
        let same = fs::read(&e).map_err(err)? == fs::read(dirs[1].path().join(&rel)).map_err(err)?;
        files.push((rel, same));
    }
    let identical = files.iter().all(|f| f.1);
    let b = solve_standard(a.grid.n_x1, a.grid.m, BoundaryData::single_mode(1e-4), |t| t.theta = 0.5)?;
    let d = a.state.h1_distance(&b.state, &a.grid);
    let tol = Tolerances::default().tol_outer;
    ok(
        identical && files.len() >= 12 && b.converged && d <= 10.0 * tol,
        format!("{} files byte-identical = {identical}; theta 1 vs 0.5 H1 distance {d:.2e} (limit {:.0e})", files.len(), 10.0 * tol),
    )
}

fn get(o: &Result<SolveOutcome, String>) -> Result<&SolveOutcome, String> {
    o.as_ref().map_err(|e| e.clone())
}

fn walk(dir: &std::path::Path) -> Vec<std::path::PathBuf> {
    let mut out = vec![];
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

fn main() {
    let start = Instant::now();
    let bd = BoundaryData::single_mode(1e-4);
    let base = solve_standard(201, 4, bd.clone(), |_| {});
    let half = solve_standard(201, 4, bd.scaled(0.5), |_| {});
    type Job<'a> = Box<dyn Fn() -> Check + 'a>;
    let checks: Vec<(&str, Job)> = vec![
        ("1 Hamiltonian conservation", Box::new(c1)),
        ("2 sonic data and RK oracle", Box::new(c2)),
        ("3 removable singularity of F", Box::new(c3)),
        ("4 kappa calculus", Box::new(c4)),
        ("5 regime certificate and J-sweep", Box::new(c5)),
        ("6 exact fixed point", Box::new(c6)),
        ("7 banded vs dense mixed solve", Box::new(c7)),
        ("8 manufactured elliptic convergence", Box::new(c8)),
        ("9 vanishing-viscosity continuation", Box::new(|| c9(get(&base)?))),
        ("10 linear response in sigma", Box::new(|| c10(get(&base)?, get(&half)?))),
        ("11 Mach classification", Box::new(|| c11(get(&base)?))),
        ("12 entropy transport", Box::new(|| c12(get(&base)?, &bd))),
        ("13 conservation under refinement", Box::new(c13)),
        ("14 determinism and damping", Box::new(|| c14(get(&base)?))),
    ];
    let mut failed = 0;
    for (name, job) in checks {
        let t = Instant::now();
        let r = job();
        let dt = t.elapsed().as_secs_f64();
        match r {
            Ok(d) => println!("PASS  criterion {name}: {d} [{dt:.1} s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL  criterion {name}: {d} [{dt:.1} s]");
            }
        }
    }
    println!("acceptance: {} of 14 passed in {:.1} s", 14 - failed, start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
