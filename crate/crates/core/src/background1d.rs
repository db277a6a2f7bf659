//! One-dimensional accelerating transonic background of the Euler-Poisson system.
//!
//! The profile is the critical trajectory `E^2 = 2H(u)` of the phase plane
//! `u' = E u^g / (u^(g+1) - u_s^(g+1))`, `E' = J/u - rho_inf`, which passes
//! through the sonic saddle `(u_s, 0)` and ends at `(u_max, 0)`. Everything is
//! parametrised by the speed: `x(u)` is a quadrature of `1/F(u)`.

#![allow(non_snake_case)]

use serde::{Deserialize, Serialize};

use crate::error::{Result, SolverError};
use crate::quad;

/// Relative radius around `u_s` inside which `F` uses the regularised branch.
pub const SWITCH_RADIUS: f64 = 1e-3;
/// Cap on the background length; longer profiles are an overflow error.
pub const LENGTH_CAP: f64 = 1e6;

/// Physical constants of the polytropic Euler-Poisson model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GasParameters {
    pub gamma: f64,
    pub zeta0: f64,
    #[serde(rename = "J")]
    pub j: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    #[serde(rename = "E0")]
    pub e0: f64,
}

impl GasParameters {
    /// Validates and builds a parameter record. `e0` may be zero only for a
    /// sonic inlet.
    pub fn new(gamma: f64, zeta0: f64, j: f64, s0: f64, e0: f64) -> Result<Self> {
        let p = GasParameters { gamma, zeta0, j, s0, e0 };
        p.validate()?;
        Ok(p)
    }

    /// Builds parameters whose `E0` lies on the accelerating trajectory through `u0`.
    pub fn from_inlet_speed(gamma: f64, zeta0: f64, j: f64, s0: f64, u0: f64) -> Result<Self> {
        let mut p = GasParameters { gamma, zeta0, j, s0, e0: -1.0 };
        p.validate()?;
        if !(u0 > 0.0) || u0 > p.u_s() {
            return Err(SolverError::Precondition(format!(
                "inlet speed u0 = {u0} must lie in (0, u_s = {}]",
                p.u_s()
            )));
        }
        p.e0 = inlet_field(&p, u0)?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gamma > 1.0
            && self.zeta0 > 1.0
            && self.j > 0.0
            && self.s0 > 0.0
            && self.e0 <= 0.0
            && [self.gamma, self.zeta0, self.j, self.s0, self.e0].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SolverError::Input(format!(
                "gas parameters need gamma > 1, zeta0 > 1, J > 0, S0 > 0, E0 <= 0; got {self:?}"
            )))
        }
    }

    /// Sonic speed `(g S0 J^(g-1))^(1/(g+1))`.
    pub fn u_s(&self) -> f64 {
        (self.gamma * self.s0 * self.j.powf(self.gamma - 1.0)).powf(1.0 / (self.gamma + 1.0))
    }

    pub fn u_bar_inf(&self) -> f64 {
        self.zeta0 * self.u_s()
    }

    pub fn rho_bar_inf(&self) -> f64 {
        self.j / self.u_bar_inf()
    }

    pub fn h0(&self) -> f64 {
        (self.gamma * self.s0).powf(1.0 / (self.gamma + 1.0))
    }

    /// Bernoulli constant at speed `u` on the background: `u^2/2 + g S0/(g-1) (J/u)^(g-1)`.
    pub fn bernoulli(&self, u: f64) -> f64 {
        let g = self.gamma;
        0.5 * u * u + g * self.s0 / (g - 1.0) * (self.j / u).powf(g - 1.0)
    }
}

/// `h(t) = H'(t)`, the integrand of the Hamiltonian.
fn h_integrand(p: &GasParameters, us1: f64, t: f64) -> f64 {
    let g1 = p.gamma + 1.0;
    let ui = p.u_bar_inf();
    p.j / (ui * t.powf(g1)) * (t.powf(g1) - us1) * (ui - t)
}

/// `(t^(g+1) - u_s^(g+1)) / (t - u_s)` without cancellation.
fn divided_power(p: &GasParameters, t: f64) -> f64 {
    let us = p.u_s();
    let g1 = p.gamma + 1.0;
    let d = t - us;
    if d == 0.0 {
        g1 * us.powf(p.gamma)
    } else {
        us.powf(g1) * ((g1 * (d / us).ln_1p()).exp_m1()) / d
    }
}

/// `H(u) / (u - u_s)^2` as an integral over `[0, 1]`; regular at `u = u_s`.
fn scaled_hamiltonian(p: &GasParameters, u: f64) -> f64 {
    let us = p.u_s();
    let ui = p.u_bar_inf();
    let d = u - us;
    let g1 = p.gamma + 1.0;
    quad::integrate(
        |tau| {
            let t = us + tau * d;
            tau * p.j / (ui * t.powf(g1)) * divided_power(p, t) * (ui - t)
        },
        0.0,
        1.0,
    )
}

/// Antiderivative of `h`; used where `H` is well conditioned.
fn h_antiderivative(p: &GasParameters, t: f64) -> f64 {
    let g = p.gamma;
    let ui = p.u_bar_inf();
    let us1 = p.u_s().powf(g + 1.0);
    p.j / ui * (ui * t - 0.5 * t * t + ui * us1 * t.powf(-g) / g + us1 * t.powf(1.0 - g) / (1.0 - g))
}

/// The Hamiltonian `H(u) = int_{u_s}^u J/(u_inf t^(g+1)) (t^(g+1) - u_s^(g+1)) (u_inf - t) dt`,
/// evaluated by adaptive quadrature.
pub fn hamiltonian_H(u: f64, params: &GasParameters) -> Result<f64> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(SolverError::Domain(format!("H(u) needs u > 0, got {u}")));
    }
    let us = params.u_s();
    let d = u - us;
    if d.abs() < SWITCH_RADIUS * us {
        return Ok(d * d * scaled_hamiltonian(params, u));
    }
    let us1 = us.powf(params.gamma + 1.0);
    let ui = params.u_bar_inf();
    let mut breaks = vec![us];
    if (us - ui) * (u - ui) < 0.0 {
        breaks.push(ui);
    }
    breaks.push(u);
    Ok(quad::integrate_pieces(|t| h_integrand(params, us1, t), &breaks))
}

/// The two-variable Hamiltonian `½E² − H(u)`, zero on the critical trajectory.
pub fn hamiltonian_h2(u: f64, e: f64, params: &GasParameters) -> Result<f64> {
    Ok(0.5 * e * e - hamiltonian_H(u, params)?)
}

/// Second derivative of `H` at the sonic speed, `(g+1) J (1/u_s - 1/u_inf)`.
pub fn hamiltonian_curvature(params: &GasParameters) -> f64 {
    (params.gamma + 1.0) * params.j * (1.0 / params.u_s() - 1.0 / params.u_bar_inf())
}

/// Closed-form `F(u_s) = sqrt(J/(g+1) (1/u_s - 1/u_inf))`.
pub fn flux_at_sonic(params: &GasParameters) -> f64 {
    (params.j / (params.gamma + 1.0) * (1.0 / params.u_s() - 1.0 / params.u_bar_inf())).sqrt()
}

fn inlet_field(p: &GasParameters, u0: f64) -> Result<f64> {
    let h = hamiltonian_H(u0, p)?;
    if h < 0.0 {
        return Err(SolverError::Domain(format!("H(u0) = {h:e} < 0")));
    }
    Ok(-(2.0 * h).sqrt())
}

/// Speed gradient `F(u) = u^g sqrt(2H(u)) / |u^(g+1) - u_s^(g+1)|` along the trajectory.
pub fn flux_F(u: f64, params: &GasParameters) -> Result<f64> {
    if !(u > 0.0) {
        return Err(SolverError::Domain(format!("F(u) needs u > 0, got {u}")));
    }
    let us = params.u_s();
    let g = params.gamma;
    if (u - us).abs() < SWITCH_RADIUS * us {
        let s = scaled_hamiltonian(params, u);
        return Ok(u.powf(g) * (2.0 * s).sqrt() / divided_power(params, u));
    }
    let h = hamiltonian_H(u, params)?;
    if h < 0.0 {
        return Err(SolverError::Domain(format!("beyond u_max: H({u}) = {h:e} < 0")));
    }
    Ok(u.powf(g) * (2.0 * h).sqrt() / (u.powf(g + 1.0) - us.powf(g + 1.0)).abs())
}

/// Root `u_max` of `H` on `(u_inf, inf)`.
pub fn u_max_root(params: &GasParameters) -> Result<f64> {
    let ui = params.u_bar_inf();
    let us = params.u_s();
    let hv = |u: f64| h_antiderivative(params, u) - h_antiderivative(params, us);
    let lo = ui;
    let mut hi = 10.0 * ui;
    let mut tries = 0;
    while hv(hi) >= 0.0 {
        hi *= 2.0;
        tries += 1;
        if tries > 60 {
            return Err(SolverError::Internal("no sign change of H above u_inf".into()));
        }
    }
    // Bisection brackets the root, then the quadrature form of H refines it.
    let (mut a, mut b) = (lo, hi);
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if hv(mid) > 0.0 {
            a = mid;
        } else {
            b = mid;
        }
        if b - a <= 1e-15 * b {
            break;
        }
    }
    let mut u = 0.5 * (a + b);
    for _ in 0..4 {
        let hq = hamiltonian_H(u, params)?;
        let du = hq / h_integrand(params, us.powf(params.gamma + 1.0), u);
        if !du.is_finite() {
            break;
        }
        u -= du;
        if du.abs() < 1e-15 * u {
            break;
        }
    }
    Ok(u)
}

/// Cached phase-plane data of one parameter set.
#[derive(Debug, Clone, Copy)]
struct Phase {
    p: GasParameters,
    us: f64,
    us1: f64,
    ui: f64,
    umax: f64,
    k_us: f64,
}

impl Phase {
    fn new(p: GasParameters) -> Result<Self> {
        let us = p.u_s();
        Ok(Phase {
            p,
            us,
            us1: us.powf(p.gamma + 1.0),
            ui: p.u_bar_inf(),
            umax: u_max_root(&p)?,
            k_us: h_antiderivative(&p, us),
        })
    }

    /// Fast `H` for the interior: closed form where well conditioned.
    fn ham(&self, u: f64) -> f64 {
        let d = u - self.us;
        if d.abs() < SWITCH_RADIUS * self.us {
            d * d * scaled_hamiltonian(&self.p, u)
        } else if self.umax - u < 1e-3 * self.umax {
            let s2 = self.umax - u;
            -s2 * quad::integrate(|t| h_integrand(&self.p, self.us1, self.umax - t * s2), 0.0, 1.0)
        } else {
            h_antiderivative(&self.p, u) - self.k_us
        }
    }

    fn flux(&self, u: f64) -> f64 {
        let g = self.p.gamma;
        if (u - self.us).abs() < SWITCH_RADIUS * self.us {
            let s = scaled_hamiltonian(&self.p, u);
            return u.powf(g) * (2.0 * s).sqrt() / divided_power(&self.p, u);
        }
        let h = self.ham(u).max(0.0);
        u.powf(g) * (2.0 * h).sqrt() / (u.powf(g + 1.0) - self.us1).abs()
    }

    /// `-dx/ds` with `u = u_max - s^2`; smooth up to `s = 0`.
    fn g_of_s(&self, s: f64) -> f64 {
        let u = self.umax - s * s;
        let g = self.p.gamma;
        let m = if s * s < 1e-3 * self.umax {
            -quad::integrate(|t| h_integrand(&self.p, self.us1, self.umax - t * s * s), 0.0, 1.0)
        } else {
            self.ham(u) / (s * s)
        };
        2.0 * (u.powf(g + 1.0) - self.us1).abs() / (u.powf(g) * (2.0 * m.max(0.0)).sqrt())
    }

    fn efield(&self, u: f64) -> f64 {
        let e = (2.0 * self.ham(u).max(0.0)).sqrt();
        if u < self.us {
            -e
        } else {
            e
        }
    }
}

/// A point of the background profile with the derivatives the 2D solver needs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BackgroundPoint {
    pub x1: f64,
    pub u1: f64,
    /// `du1/dx1 = F(u1)`.
    pub du1: f64,
    pub e: f64,
    /// `dE/dx1 = J/u1 - rho_inf`.
    pub de: f64,
    pub rho: f64,
    pub phi_big: f64,
    pub phi_pot: f64,
}

/// The accelerating smooth transonic background on `[0, l_max]`.
#[derive(Debug, Clone)]
pub struct BackgroundSolution {
    pub params: GasParameters,
    pub x1_nodes: Vec<f64>,
    pub u1: Vec<f64>,
    pub E: Vec<f64>,
    pub rho: Vec<f64>,
    pub Phi: Vec<f64>,
    pub phi_pot: Vec<f64>,
    pub l_s: f64,
    pub l_max: f64,
    pub u_max: f64,
    pub u0: f64,
    phase: Phase,
    /// Switch between `u` and `s` parametrisations.
    u_split: f64,
    x_split: f64,
    phi_split: f64,
}

/// Parameter of a point on the profile: speed on the left part, `s` near `u_max`.
#[derive(Debug, Clone, Copy)]
enum Param {
    U(f64),
    S(f64),
}

impl BackgroundSolution {
    fn speed(&self, q: Param) -> f64 {
        match q {
            Param::U(u) => u,
            Param::S(s) => self.phase.umax - s * s,
        }
    }

    fn param_of_speed(&self, u: f64) -> Param {
        if u <= self.u_split {
            Param::U(u)
        } else {
            Param::S((self.phase.umax - u).max(0.0).sqrt())
        }
    }

    /// Arclength between two parameters of the same kind.
    fn dx(&self, a: Param, b: Param) -> f64 {
        let ph = &self.phase;
        match (a, b) {
            (Param::U(a), Param::U(b)) => {
                let mut br = vec![a];
                for c in [ph.us * (1.0 - SWITCH_RADIUS), ph.us, ph.us * (1.0 + SWITCH_RADIUS)] {
                    if (c - a) * (c - b) < 0.0 {
                        br.push(c);
                    }
                }
                br.push(b);
                if b < a {
                    br.sort_by(|x, y| y.partial_cmp(x).unwrap());
                }
                quad::integrate_pieces(|t| 1.0 / ph.flux(t), &br)
            }
            (Param::S(a), Param::S(b)) => -quad::integrate(|s| ph.g_of_s(s), a, b),
            _ => unreachable!("mixed parametrisations"),
        }
    }

    fn dphi_pot(&self, a: Param, b: Param) -> f64 {
        let ph = &self.phase;
        match (a, b) {
            (Param::U(a), Param::U(b)) => {
                let mut br = vec![a];
                for c in [ph.us * (1.0 - SWITCH_RADIUS), ph.us, ph.us * (1.0 + SWITCH_RADIUS)] {
                    if (c - a) * (c - b) < 0.0 {
                        br.push(c);
                    }
                }
                br.push(b);
                if b < a {
                    br.sort_by(|x, y| y.partial_cmp(x).unwrap());
                }
                quad::integrate_pieces(|t| t / ph.flux(t), &br)
            }
            (Param::S(a), Param::S(b)) => {
                -quad::integrate(|s| (ph.umax - s * s) * ph.g_of_s(s), a, b)
            }
            _ => unreachable!("mixed parametrisations"),
        }
    }

    /// `int_{u0}^{u} E/F du`, where `E/F = (u^(g+1) - u_s^(g+1)) / u^g` is smooth.
    fn phi_big_at(&self, u: f64) -> f64 {
        let p = &self.params;
        let us1 = self.phase.us1;
        let g = p.gamma;
        p.bernoulli(self.u0) + quad::integrate(|t| t - us1 * t.powf(-g), self.u0, u)
    }

    /// Solves `x(q) = x` for `x >= x_a`, starting from the point `(x_a, q_a)`.
    fn invert_from(&self, xa: f64, qa: Param, x: f64) -> Param {
        let ph = &self.phase;
        match qa {
            Param::U(ua) => {
                let (mut lo, mut hi) = (ua, self.u_split);
                let mut u = (ua + (x - xa) * ph.flux(ua)).clamp(lo, hi);
                for _ in 0..60 {
                    let r = xa + self.dx(Param::U(ua), Param::U(u)) - x;
                    if r > 0.0 {
                        hi = u;
                    } else {
                        lo = u;
                    }
                    let mut un = u - r * ph.flux(u);
                    if !(un > lo && un < hi) {
                        un = 0.5 * (lo + hi);
                    }
                    let done = (un - u).abs() <= 4e-16 * u.abs() || hi - lo <= 4e-16 * hi;
                    u = un;
                    if done {
                        break;
                    }
                }
                Param::U(u)
            }
            Param::S(sa) => {
                let (mut lo, mut hi) = (0.0, sa);
                let mut s = (sa - (x - xa) / ph.g_of_s(sa)).clamp(lo, hi);
                for _ in 0..60 {
                    let r = xa + self.dx(Param::S(sa), Param::S(s)) - x;
                    // x decreases in s.
                    if r > 0.0 {
                        lo = s;
                    } else {
                        hi = s;
                    }
                    let mut sn = s + r / ph.g_of_s(s);
                    if !(sn >= lo && sn <= hi) {
                        sn = 0.5 * (lo + hi);
                    }
                    let done = (sn - s).abs() <= 1e-16 * (1.0 + s) || hi - lo <= 1e-16;
                    s = sn;
                    if done {
                        break;
                    }
                }
                Param::S(s)
            }
        }
    }

    fn tabulated_param(&self, i: usize) -> Param {
        self.param_of_speed(self.u1[i])
    }

    /// Full profile data at an arbitrary `x1 in [0, l_max]`.
    pub fn profile_at(&self, x1: f64) -> Result<BackgroundPoint> {
        if !(x1 >= -1e-14 * self.l_max.max(1.0) && x1 <= self.l_max * (1.0 + 1e-14)) {
            return Err(SolverError::Domain(format!(
                "x1 = {x1} outside [0, l_max = {}]",
                self.l_max
            )));
        }
        let x1 = x1.clamp(0.0, self.l_max);
        let n = self.x1_nodes.len();
        let hstep = self.l_max / (n - 1) as f64;
        let i = ((x1 / hstep).floor() as usize).min(n - 1);
        if self.x1_nodes[i] == x1 {
            return Ok(self.point(x1, self.u1[i], self.phi_pot[i]));
        }
        let node_q = self.tabulated_param(i);
        let (xa, qa, pa) = match (x1 <= self.x_split, node_q) {
            (true, _) | (false, Param::S(_)) => (self.x1_nodes[i], node_q, self.phi_pot[i]),
            (false, Param::U(_)) => (self.x_split, Param::S(self.s_split()), self.phi_split),
        };
        let q = self.invert_from(xa, qa, x1);
        Ok(self.point(x1, self.speed(q), pa + self.dphi_pot(qa, q)))
    }

    fn s_split(&self) -> f64 {
        (self.phase.umax - self.u_split).sqrt()
    }

    fn point(&self, x1: f64, u: f64, phi_pot: f64) -> BackgroundPoint {
        let p = &self.params;
        BackgroundPoint {
            x1,
            u1: u,
            du1: self.phase.flux(u),
            e: self.phase.efield(u),
            de: p.j / u - p.rho_bar_inf(),
            rho: p.j / u,
            phi_big: self.phi_big_at(u),
            phi_pot,
        }
    }

    /// Speed at which `x1(u) = x` from the inlet; convenience for arclengths.
    pub fn x1_of_speed(&self, u: f64) -> Result<f64> {
        if !(u >= self.u0 && u <= self.u_max) {
            return Err(SolverError::Domain(format!(
                "speed {u} outside [u0, u_max] = [{}, {}]",
                self.u0, self.u_max
            )));
        }
        Ok(match self.param_of_speed(u) {
            Param::U(u) => self.dx(Param::U(self.u0), Param::U(u)),
            Param::S(s) => self.l_max + self.dx(Param::S(0.0), Param::S(s)),
        })
    }

    /// Samples the profile at the given `x1` values.
    pub fn sample(&self, xs: &[f64]) -> Result<Vec<BackgroundPoint>> {
        crate::par::try_map(xs, |&x| self.profile_at(x))
    }

    /// Largest `|½E² − H(u)|` over the nodes, with `H` from adaptive quadrature.
    pub fn conservation_defect(&self) -> Result<f64> {
        let mut worst = 0.0f64;
        for (u, e) in self.u1.iter().zip(&self.E) {
            worst = worst.max(hamiltonian_h2(*u, *e, &self.params)?.abs());
        }
        Ok(worst)
    }
}

/// Integrates the accelerating trajectory from `u0` and resamples it on
/// `resolution` uniform nodes of `[0, l_max]`.
pub fn solve_background(params: &GasParameters, u0: f64, resolution: usize) -> Result<BackgroundSolution> {
    params.validate()?;
    let us = params.u_s();
    if !(u0 > 0.0) || u0 > us * (1.0 + 1e-15) {
        return Err(SolverError::Precondition(format!(
            "inlet speed u0 = {u0} must lie in (0, u_s = {us}]"
        )));
    }
    if resolution < 2 {
        return Err(SolverError::Input("background resolution must be at least 2".into()));
    }
    let u0 = u0.min(us);
    let e0 = inlet_field(params, u0)?;
    if (e0 - params.e0).abs() > 1e-8 * (1.0 + e0.abs()) {
        return Err(SolverError::Input(format!(
            "E0 = {} is not on the accelerating trajectory through u0 = {u0} (expected {e0})",
            params.e0
        )));
    }
    let phase = Phase::new(*params)?;
    let u_split = phase.ui.max(u0);
    let mut bg = BackgroundSolution {
        params: *params,
        x1_nodes: Vec::new(),
        u1: Vec::new(),
        E: Vec::new(),
        rho: Vec::new(),
        Phi: Vec::new(),
        phi_pot: Vec::new(),
        l_s: 0.0,
        l_max: 0.0,
        u_max: phase.umax,
        u0,
        phase,
        u_split,
        x_split: 0.0,
        phi_split: 0.0,
    };
    bg.l_s = if u0 < us { bg.dx(Param::U(u0), Param::U(us)) } else { 0.0 };
    bg.x_split = bg.dx(Param::U(u0), Param::U(u_split));
    let s_split = (phase.umax - u_split).sqrt();
    bg.l_max = bg.x_split + bg.dx(Param::S(s_split), Param::S(0.0));
    if !(bg.l_max.is_finite() && bg.l_max < LENGTH_CAP) {
        return Err(SolverError::Overflow(format!(
            "l_max = {} exceeds the cap {LENGTH_CAP}",
            bg.l_max
        )));
    }
    let n = resolution;
    let hstep = bg.l_max / (n - 1) as f64;
    let phi_split = bg.dphi_pot(Param::U(u0), Param::U(u_split));
    bg.phi_split = phi_split;
    let mut prev_x = 0.0;
    let mut prev_q = Param::U(u0);
    let mut prev_phi = 0.0;
    for i in 0..n {
        let x = if i == n - 1 { bg.l_max } else { i as f64 * hstep };
        let (q, phi) = if i == 0 {
            (Param::U(u0), 0.0)
        } else if x <= bg.x_split {
            let q = bg.invert_from(prev_x, prev_q, x);
            (q, prev_phi + bg.dphi_pot(prev_q, q))
        } else {
            let (xa, qa, pa) = match prev_q {
                Param::U(_) => (bg.x_split, Param::S(s_split), phi_split),
                Param::S(_) => (prev_x, prev_q, prev_phi),
            };
            let q = if i == n - 1 { Param::S(0.0) } else { bg.invert_from(xa, qa, x) };
            (q, pa + bg.dphi_pot(qa, q))
        };
        let u = bg.speed(q);
        bg.x1_nodes.push(x);
        bg.u1.push(u);
        bg.E.push(phase.efield(u));
        bg.rho.push(params.j / u);
        bg.Phi.push(bg.phi_big_at(u));
        bg.phi_pot.push(phi);
        prev_x = x;
        prev_q = q;
        prev_phi = phi;
    }
    Ok(bg)
}
