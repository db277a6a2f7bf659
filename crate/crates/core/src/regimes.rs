//! Speed-ratio calculus for the almost-sonic window `kappa = u / u_s`.
//!
//! `F(k) = int_1^k (1 - t/zeta0)(1 - t^-(g+1)) dt` and
//! `H(k) = k^(g-1) sqrt(F(k)) / |k^(g+1) - 1|` give the background slope in
//! speed-ratio form. The weighted coefficient `alpha` decides whether a window
//! `[1 - d, 1 + d]` admits the energy estimate used by the mixed solver.

#![allow(non_snake_case)]

use serde::{Deserialize, Serialize};

use crate::background1d::{u_max_root, GasParameters, SWITCH_RADIUS};
use crate::error::{Result, SolverError};
use crate::quad;

/// `(t^(g+1) - 1) / (t - 1)` without cancellation.
fn divided_power(g1: f64, t: f64) -> f64 {
    let d = t - 1.0;
    if d == 0.0 {
        g1
    } else {
        (g1 * d.ln_1p()).exp_m1() / d
    }
}

fn kappa_integrand(p: &GasParameters, t: f64) -> f64 {
    (1.0 - t / p.zeta0) * (1.0 - t.powf(-(p.gamma + 1.0)))
}

/// `F(k) / (k - 1)^2` written as a regular integral over `[0, 1]`.
fn scaled_kappa_F(p: &GasParameters, kappa: f64) -> f64 {
    let g1 = p.gamma + 1.0;
    let d = kappa - 1.0;
    quad::integrate(
        |tau| {
            let t = 1.0 + tau * d;
            tau * (1.0 - t / p.zeta0) * divided_power(g1, t) * t.powf(-g1)
        },
        0.0,
        1.0,
    )
}

fn check_kappa(kappa: f64) -> Result<()> {
    if kappa > 0.0 && kappa.is_finite() {
        Ok(())
    } else {
        Err(SolverError::Domain(format!("speed ratio must be positive, got {kappa}")))
    }
}

/// `F(kappa)` by quadrature, with the regular remainder form near `kappa = 1`.
pub fn kappa_F(kappa: f64, params: &GasParameters) -> Result<f64> {
    check_kappa(kappa)?;
    let d = kappa - 1.0;
    if d.abs() < SWITCH_RADIUS {
        return Ok(d * d * scaled_kappa_F(params, kappa));
    }
    let mut breaks = vec![1.0];
    if (kappa - params.zeta0) * (1.0 - params.zeta0) < 0.0 {
        breaks.push(params.zeta0);
    }
    breaks.push(kappa);
    Ok(quad::integrate_pieces(|t| kappa_integrand(params, t), &breaks))
}

/// Closed form `H(1) = sqrt(1 - 1/zeta0) / sqrt(2(g+1))`.
pub fn kappa_H_sonic(params: &GasParameters) -> f64 {
    (1.0 - 1.0 / params.zeta0).sqrt() / (2.0 * (params.gamma + 1.0)).sqrt()
}

/// `H(kappa)` straight from its definition, with no special treatment near 1.
/// Undefined at `kappa = 1` itself.
pub fn kappa_H_direct(kappa: f64, params: &GasParameters) -> Result<f64> {
    check_kappa(kappa)?;
    let g = params.gamma;
    let F = if kappa == 1.0 {
        0.0
    } else {
        let mut breaks = vec![1.0];
        if (kappa - params.zeta0) * (1.0 - params.zeta0) < 0.0 {
            breaks.push(params.zeta0);
        }
        breaks.push(kappa);
        quad::integrate_pieces(|t| kappa_integrand(params, t), &breaks)
    };
    if F < 0.0 {
        return Err(SolverError::Domain(format!("F({kappa}) = {F:e} < 0")));
    }
    Ok((kappa.powf(g - 1.0) * F.sqrt() / (kappa.powf(g + 1.0) - 1.0)).abs())
}

/// `H(kappa) = |k^(g-1) sqrt(F(k)) / (k^(g+1) - 1)|`, regular through `kappa = 1`.
pub fn kappa_H(kappa: f64, params: &GasParameters) -> Result<f64> {
    check_kappa(kappa)?;
    let g = params.gamma;
    if kappa == 1.0 {
        return Ok(kappa_H_sonic(params));
    }
    if (kappa - 1.0).abs() < SWITCH_RADIUS {
        let s = scaled_kappa_F(params, kappa);
        return Ok(kappa.powf(g - 1.0) * s.sqrt() / divided_power(g + 1.0, kappa));
    }
    kappa_H_direct(kappa, params)
}

/// Largest admissible speed ratio `u_max / u_s`, where `F` returns to zero.
pub fn kappa_max(params: &GasParameters) -> Result<f64> {
    Ok(u_max_root(params)? / params.u_s())
}

fn check_window(kappa0: f64, kappaL: f64, params: &GasParameters) -> Result<f64> {
    let kmax = kappa_max(params)?;
    if !(kappa0 > 0.0 && kappa0 <= kappaL && kappaL <= kmax * (1.0 + 1e-14)) {
        return Err(SolverError::Domain(format!(
            "window [{kappa0}, {kappaL}] must lie in (0, {kmax}] with kappa0 <= kappaL"
        )));
    }
    Ok(kmax)
}

/// `lambda(k0, kL) = (int_{k0}^{kL} dk / (k H(k)))^2`.
pub fn lambda(kappa0: f64, kappaL: f64, params: &GasParameters) -> Result<f64> {
    let kmax = check_window(kappa0, kappaL, params)?;
    if kappa0 == kappaL {
        return Ok(0.0);
    }
    let mut breaks = vec![kappa0];
    for b in [1.0 - SWITCH_RADIUS, 1.0 + SWITCH_RADIUS] {
        if b > kappa0 && b < kappaL {
            breaks.push(b);
        }
    }
    breaks.push(kappaL.min(kmax));
    // kappa_H only fails outside the F >= 0 region, which check_window excludes;
    // rounding at kmax may still push F a hair below zero, where the limit is 0.
    let f = |k: f64| 1.0 / (k * kappa_H(k, params).unwrap_or(0.0));
    let s = quad::integrate_pieces(f, &breaks);
    if !s.is_finite() {
        return Err(SolverError::Overflow(format!("nozzle integral diverged on [{kappa0}, {kappaL}]")));
    }
    Ok(s * s)
}

/// Nozzle length `L = sqrt(h0^3/2) J^((g-2)/(g+1)) sqrt(lambda)` of the window.
pub fn nozzle_length(kappa0: f64, kappaL: f64, params: &GasParameters) -> Result<f64> {
    let g = params.gamma;
    let lam = lambda(kappa0, kappaL, params)?;
    Ok((params.h0().powi(3) / 2.0).sqrt() * params.j.powf((g - 2.0) / (g + 1.0)) * lam.sqrt())
}

/// Weight exponent of the energy multiplier `rho^eta` for each `J` branch.
pub fn eta_for(branch: JRegime, gamma: f64) -> f64 {
    match branch {
        JRegime::Large => gamma / 4.0,
        _ => 0.75 * gamma,
    }
}

/// `G* = k^-eta h0^-eta J^((2 - g + 2 eta)/(g+1))`.
pub fn g_star(kappa: f64, eta: f64, params: &GasParameters) -> f64 {
    let g = params.gamma;
    let h0 = params.h0();
    kappa.powf(-eta) * h0.powf(-eta) * params.j.powf((2.0 - g + 2.0 * eta) / (g + 1.0))
}

/// `omega_1(kappa; J, eta)`.
pub fn omega1(kappa: f64, eta: f64, params: &GasParameters) -> Result<f64> {
    let g = params.gamma;
    let h0 = params.h0();
    let kg1 = kappa.powf(g + 1.0);
    let hk = kappa_H(kappa, params)?;
    Ok(0.5 * 2f64.sqrt() * h0.powf(-1.5) * hk * ((g - 1.0) * kg1 + eta * (kg1 - 1.0) + 2.0)
        - 2.0 * h0.powf(-(2.0 + eta)) * kappa.powf(2.0 * g - eta) * params.j.powf((2.0 * eta - g) / (g + 1.0)))
}

/// `omega_2(kappa; lambda, J, eta)`; non-negative.
pub fn omega2(kappa: f64, lambda: f64, eta: f64, params: &GasParameters) -> Result<f64> {
    let g = params.gamma;
    let h0 = params.h0();
    let hk = kappa_H(kappa, params)?;
    let inner = 2f64.sqrt()
        * (g - 1.0)
        * h0.powf(-0.5 - eta)
        * kappa.powf(1.0 - eta)
        * hk
        * params.j.powf((2.0 * eta - g) / (g + 1.0))
        + 1.0;
    Ok(kappa.powf(2.0 * (g - 1.0)) * lambda * params.j.powf(2.0 / (g + 1.0)) * inner * inner / h0)
}

/// `alpha = omega_1 G* - omega_2` at one speed ratio for a given `lambda`.
pub fn alpha_at(kappa: f64, lambda: f64, eta: f64, params: &GasParameters) -> Result<f64> {
    Ok(omega1(kappa, eta, params)? * g_star(kappa, eta, params) - omega2(kappa, lambda, eta, params)?)
}

/// Value of `alpha(1)` in the limit of a vanishing window.
pub fn alpha_sonic_limit(eta: f64, params: &GasParameters) -> f64 {
    let g = params.gamma;
    let h0 = params.h0();
    let j = params.j;
    h0.powf(-eta)
        * j.powf((2.0 - g + 2.0 * eta) / (g + 1.0))
        * (0.5 * h0.powf(-1.5) * ((g + 1.0) * (1.0 - 1.0 / params.zeta0)).sqrt()
            - 2.0 * h0.powf(-(2.0 + eta)) * j.powf((2.0 * eta - g) / (g + 1.0)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaProfile {
    pub kappa: Vec<f64>,
    pub alpha: Vec<f64>,
    pub min: f64,
    pub argmin: f64,
}

/// Evaluates `alpha` on `grid` for the window `[kappa0, kappaL]`.
pub fn alpha_profile(
    grid: &[f64],
    kappa0: f64,
    kappaL: f64,
    eta: f64,
    params: &GasParameters,
) -> Result<AlphaProfile> {
    if !(eta > 0.0) {
        return Err(SolverError::Precondition(format!("eta must be positive, got {eta}")));
    }
    let lam = lambda(kappa0, kappaL, params)?;
    let alpha = crate::par::try_map(grid, |&k| alpha_at(k, lam, eta, params))?;
    let (mut min, mut argmin) = (f64::INFINITY, f64::NAN);
    for (&k, &a) in grid.iter().zip(&alpha) {
        if a < min {
            min = a;
            argmin = k;
        }
    }
    Ok(AlphaProfile { kappa: grid.to_vec(), alpha, min, argmin })
}

/// Uniform grid over `[a, b]` with spacing at most `step`, endpoints included.
pub fn kappa_grid(a: f64, b: f64, step: f64) -> Vec<f64> {
    let ratio = (b - a) / step;
    let n = ((ratio * (1.0 - 1e-12)).ceil() as usize).max(1);
    (0..=n).map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 }).collect()
}

/// Minimum of `alpha` over the window: grid scan plus golden-section refinement
/// around the smallest grid value.
pub fn alpha_window_min(
    kappa0: f64,
    kappaL: f64,
    eta: f64,
    resolution: f64,
    params: &GasParameters,
) -> Result<(f64, f64)> {
    let step = resolution.min((kappaL - kappa0) / 20.0);
    let grid = kappa_grid(kappa0, kappaL, step);
    let prof = alpha_profile(&grid, kappa0, kappaL, eta, params)?;
    let lam = lambda(kappa0, kappaL, params)?;
    let i = grid.iter().position(|&k| k == prof.argmin).unwrap_or(0);
    let (mut a, mut b) = (grid[i.saturating_sub(1)], grid[(i + 1).min(grid.len() - 1)]);
    let f = |k: f64| alpha_at(k, lam, eta, params);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    let (mut c, mut d) = (b - r * (b - a), a + r * (b - a));
    let (mut fc, mut fd) = (f(c)?, f(d)?);
    for _ in 0..40 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = f(c)?;
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = f(d)?;
        }
    }
    let (k, v) = if fc < fd { (c, fc) } else { (d, fd) };
    Ok(if v < prof.min { (v, k) } else { (prof.min, prof.argmin) })
}

/// Branch of the current-density parameter `J` for which the certificate holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JRegime {
    Small,
    Large,
    Uncertified,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeSearch {
    pub d_start: f64,
    pub shrink: f64,
    pub d_min: f64,
    /// Spacing of the kappa scan.
    pub resolution: f64,
}

impl Default for RegimeSearch {
    fn default() -> Self {
        RegimeSearch { d_start: 0.25, shrink: 0.5, d_min: 1e-4, resolution: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegimeReport {
    pub eta: f64,
    #[serde(rename = "J_regime")]
    pub j_regime: JRegime,
    pub d: f64,
    pub kappa0: f64,
    #[serde(rename = "kappaL")]
    pub kappa_l: f64,
    pub alpha_min: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub certified: bool,
}

fn search_branch(
    params: &GasParameters,
    search: &RegimeSearch,
    branch: JRegime,
    kmax: f64,
) -> Result<(Option<RegimeReport>, RegimeReport)> {
    let eta = eta_for(branch, params.gamma);
    let mut best: Option<RegimeReport> = None;
    let mut d = search.d_start;
    while d >= search.d_min {
        let (k0, kl) = (1.0 - d, 1.0 + d);
        if kl <= kmax && k0 > 0.0 {
            let (amin, _) = alpha_window_min(k0, kl, eta, search.resolution, params)?;
            let report = RegimeReport {
                eta,
                j_regime: if amin > 0.0 { branch } else { JRegime::Uncertified },
                d,
                kappa0: k0,
                kappa_l: kl,
                alpha_min: amin,
                l: nozzle_length(k0, kl, params)?,
                certified: amin > 0.0,
            };
            if report.certified {
                return Ok((Some(report.clone()), report));
            }
            if best.as_ref().is_none_or(|b| report.alpha_min > b.alpha_min) {
                best = Some(report);
            }
        }
        d *= search.shrink;
    }
    let best = best.ok_or_else(|| SolverError::Domain("no window fits below kappa_max".into()))?;
    Ok((None, best))
}

/// Finds the widest window `[1-d, 1+d]` on which `alpha > 0`, trying the
/// small-`J` weight first and the large-`J` weight second.
pub fn certify_regime(params: &GasParameters, search: &RegimeSearch) -> Result<RegimeReport> {
    params.validate()?;
    if !(search.d_start > search.d_min && search.d_min > 0.0 && search.shrink > 0.0 && search.shrink < 1.0) {
        return Err(SolverError::Input(format!("invalid regime search {search:?}")));
    }
    let kmax = kappa_max(params)?;
    let (hit, best_small) = search_branch(params, search, JRegime::Small, kmax)?;
    if let Some(r) = hit {
        return Ok(r);
    }
    let (hit, best_large) = search_branch(params, search, JRegime::Large, kmax)?;
    if let Some(r) = hit {
        return Ok(r);
    }
    Ok(if best_large.alpha_min > best_small.alpha_min { best_large } else { best_small })
}
