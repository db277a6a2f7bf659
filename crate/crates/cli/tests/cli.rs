use std::fs;
use std::path::Path;
use std::process::Command;

use proptest::prelude::*;
use transonic_cli::config::*;
use transonic_cli::run::{self, SweepAxis};
use transonic_cli::RunConfig;

fn small(n: usize, m: usize, sigma: f64, dir: &Path) -> RunConfig {
    let mut cfg = RunConfig::standard();
    cfg.grid.n_x1 = n;
    cfg.grid.m = m;
    cfg.boundary = BoundarySection { sigma, S: vec![(1, 1.0)], E: vec![(1, 1.0)], w: vec![(1, 1.0)] };
    cfg.output.dir = dir.to_path_buf();
    cfg.output.override_certificate = true;
    cfg
}

fn summary(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("summary.json")).unwrap()).unwrap()
}

fn coeffs() -> impl Strategy<Value = Vec<(usize, f64)>> {
    prop::collection::vec((1usize..6, -2.0f64..2.0), 0..3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn config_round_trip_is_identity(
        gamma in 1.05f64..4.0,
        s0 in 0.01f64..3.0,
        j in 1e-4f64..10.0,
        u0 in 0.1f64..0.99,
        use_kappa in any::<bool>(),
        kl in 1.001f64..1.5,
        sigma in 0.0f64..1e-3,
        s in coeffs(),
        w in coeffs(),
        eps in prop::option::of(1e-9f64..1e-2),
        theta in 0.1f64..1.0,
        n in 9usize..800,
        flag in any::<bool>(),
    ) {
        let mut cfg = RunConfig::standard();
        cfg.gas = GasSection { gamma, zeta0: 2.0, J: j, S0: s0 };
        cfg.window = if use_kappa {
            WindowSection { kappa0: Some(u0), L: Some(kl - 1.0), ..Default::default() }
        } else {
            WindowSection { u0: Some(u0), kappaL: Some(kl), ..Default::default() }
        };
        cfg.boundary = BoundarySection { sigma, S: s, E: vec![], w };
        cfg.tol.epsilon = eps;
        cfg.solver.theta = theta;
        cfg.solver.theta_min = theta / 64.0;
        cfg.grid.n_x1 = n;
        cfg.output.emit_fields = flag;
        let kv = RunConfig::parse(&cfg.to_kv()).unwrap();
        prop_assert_eq!(&kv, &cfg);
        prop_assert_eq!(RunConfig::parse(&kv.to_kv()).unwrap(), kv.clone());
        let js = RunConfig::parse(&cfg.to_json()).unwrap();
        prop_assert_eq!(&js, &cfg);
        prop_assert_eq!(js.to_kv(), cfg.to_kv());
    }
}

#[test]
fn zero_perturbation_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(41, 2, 0.0, dir.path());
    run::run_solve(&cfg).unwrap();
    let s = summary(dir.path());
    assert_eq!(s["converged"], true);
    assert!(s["sonic_deviation"].as_f64().unwrap() <= 1e-8);
    assert!(s["iterations"].as_u64().unwrap() <= 2);
    for name in ["psi", "phi", "big_psi", "T", "rho", "u1", "u2", "M"] {
        let text = fs::read_to_string(dir.path().join("fields").join(format!("{name}.csv"))).unwrap();
        assert_eq!(text.lines().next().unwrap(), format!("x1,x2,{name}"));
        assert_eq!(text.lines().count(), 1 + 41 * 13);
    }
    let sonic = fs::read_to_string(dir.path().join("sonic_interface.csv")).unwrap();
    assert!(sonic.starts_with("x2,g_s\n"));
    let cell = sonic.lines().nth(1).unwrap().split(',').nth(1).unwrap();
    assert_eq!(cell.split('e').next().unwrap().replace(['.', '-'], "").len(), 17);
    assert_eq!(fs::read_to_string(dir.path().join("convergence.jsonl")).unwrap().lines().count(), 1);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    run::run_solve(&small(41, 2, 1e-4, a.path())).unwrap();
    run::run_solve(&small(41, 2, 1e-4, b.path())).unwrap();
    for f in ["background.csv", "sonic_interface.csv", "summary.json", "convergence.jsonl", "fields/psi.csv", "fields/M.csv"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweep_records_failures_and_continues() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small(41, 2, 1e-4, dir.path());
    let rows = run::run_sweep(&cfg, SweepAxis::Sigma, &[1.0, 5e-5]).unwrap();
    assert!(rows[0].error.contains("precondition") && !rows[0].converged);
    assert!(rows[1].error.is_empty() && rows[1].converged);
    let text = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.starts_with("value,L,alpha_min,certified,converged,sup_gs_minus_ls,iterations,error\n"));

    let empty = tempfile::tempdir().unwrap();
    assert!(run::run_sweep(&small(41, 2, 1e-4, empty.path()), SweepAxis::J, &[]).unwrap().is_empty());
    assert_eq!(fs::read_to_string(empty.path().join("sweep.csv")).unwrap().lines().count(), 1);
}

#[test]
fn values_list_parsing() {
    assert_eq!(run::parse_values("").unwrap(), Vec::<f64>::new());
    assert_eq!(run::parse_values("1, 0.5,1e-2").unwrap(), vec![1.0, 0.5, 1e-2]);
    assert!(run::parse_values("1,x").is_err());
    assert!("sigma".parse::<SweepAxis>().is_ok() && "q".parse::<SweepAxis>().is_err());
}

fn bin(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_transonic")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

#[test]
fn binary_exit_codes_and_scale_sigma() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("run.cfg");
    let out = dir.path().join("base");
    let mut cfg = small(61, 3, 1e-4, &out);
    cfg.output.override_certificate = false;
    fs::write(&cfg_path, cfg.to_kv()).unwrap();
    let c = cfg_path.to_str().unwrap();

    let (code, err) = bin(&["solve", "--config", c]);
    assert_eq!(code, 2);
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"]["class"], "precondition");

    assert_eq!(bin(&["solve", "--config", c, "--override-certificate"]).0, 0);
    let half = dir.path().join("half");
    let h = half.to_str().unwrap();
    assert_eq!(bin(&["solve", "--config", c, "--override-certificate", "--scale-sigma", "0.5", "--out", h]).0, 0);
    let r = summary(&out)["norms"]["h1"].as_f64().unwrap() / summary(&half)["norms"]["h1"].as_f64().unwrap();
    assert!((1.8..=2.2).contains(&r), "{r}");

    assert_eq!(bin(&["solve"]).0, 2);
    assert_eq!(bin(&["sweep", "--config", c, "--axis", "q"]).0, 2);
    assert_eq!(bin(&["bogus"]).0, 2);

    let mut tight = small(41, 2, 1e-4, &dir.path().join("tight"));
    tight.tol.max_outer = 1;
    let tp = dir.path().join("tight.cfg");
    fs::write(&tp, tight.to_json()).unwrap();
    let (code, err) = bin(&["solve", "--config", tp.to_str().unwrap()]);
    assert_eq!(code, 3, "{err}");
    assert!(dir.path().join("tight/summary.json").exists());

    let mut bad = small(41, 2, 0.0, &dir.path().join("bad"));
    bad.window.L = Some(0.1);
    bad.window.kappaL = None;
    let bp = dir.path().join("bad.cfg");
    fs::write(&bp, bad.to_kv()).unwrap();
    assert_eq!(bin(&["solve", "--config", bp.to_str().unwrap()]).0, 2);
}
