//! Thin wrapper over double-exponential quadrature with a scale-aware target.

/// Relative accuracy requested from every quadrature call.
pub const REL_TOL: f64 = 1e-13;

/// Integrates `f` over `[a, b]` (either orientation).
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    let w = b - a;
    let probe = [0.1, 0.3, 0.5, 0.7, 0.9]
        .iter()
        .map(|t| f(a + t * w).abs())
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let target = (REL_TOL * probe * w.abs()).max(1e-300);
    quadrature::double_exponential::integrate(&f, a, b, target).integral
}

/// Integrates over consecutive pieces `breaks[0]..breaks[1]..`, so that kinks
/// or switch points of the integrand sit on piece boundaries.
pub fn integrate_pieces<F: Fn(f64) -> f64>(f: F, breaks: &[f64]) -> f64 {
    breaks.windows(2).map(|p| integrate(&f, p[0], p[1])).sum()
}
