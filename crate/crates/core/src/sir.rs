//! Deterministic susceptible/infected sub-dynamics.
//!
//! Given a transmission rate, the pair `(S, I)` follows
//! `dS = -beta S I dt`, `dI = (beta S I - alpha I) dt`. A path of rates is
//! integrated with one explicit RK4 step per path interval, the rate frozen at
//! its left-endpoint value. The step preserves positivity and the monotone
//! decrease of `S + I` for any step size used here (rates are well below 1
//! per day).

use crate::error::{Error, Result};
use crate::model::{BetaPath, ModelParams};

#[inline]
fn sir_rhs(x: f64, y: f64, beta: f64, alpha: f64) -> (f64, f64) {
    let flow = beta * x * y;
    (-flow, flow - alpha * y)
}

/// One RK4 step of `(x, y)` under a frozen transmission rate.
#[inline]
pub fn rk4_step(x: f64, y: f64, beta: f64, alpha: f64, dt: f64) -> (f64, f64) {
    let (k1x, k1y) = sir_rhs(x, y, beta, alpha);
    let (k2x, k2y) = sir_rhs(x + 0.5 * dt * k1x, y + 0.5 * dt * k1y, beta, alpha);
    let (k3x, k3y) = sir_rhs(x + 0.5 * dt * k2x, y + 0.5 * dt * k2y, beta, alpha);
    let (k4x, k4y) = sir_rhs(x + dt * k3x, y + dt * k3y, beta, alpha);
    (
        x + dt / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x),
        y + dt / 6.0 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y),
    )
}

/// One integration step of the susceptible/infected pair.
///
/// Preconditions: `dt > 0`, `beta` in `[0, gamma]`, `(x, y)` an admissible
/// state.
pub fn sir_step(p: &ModelParams, x: f64, y: f64, beta: f64, dt: f64) -> Result<(f64, f64)> {
    if !(dt > 0.0) {
        return Err(Error::InvalidScheme("dt must be positive"));
    }
    if !(0.0..=p.gamma).contains(&beta) {
        return Err(Error::InvalidPath("values must lie in [0,gamma]"));
    }
    if !(x > 0.0 && y > 0.0 && x + y <= 1.0) {
        return Err(Error::InvalidState("x must be positive"));
    }
    Ok(rk4_step(x, y, beta, p.alpha, dt))
}

/// Integrates `(x, y)` along a transmission-rate path, the rate held at its
/// left-endpoint value on each interval. Output has the same length as the
/// path; entry `k` is the state at time `k * dt`.
pub fn sir_along_path(
    p: &ModelParams,
    x0: f64,
    y0: f64,
    path: &BetaPath,
) -> Result<Vec<(f64, f64)>> {
    path.validate(p)?;
    if !(x0 > 0.0 && y0 > 0.0 && x0 + y0 <= 1.0) {
        return Err(Error::InvalidState("x must be positive"));
    }
    let mut out = Vec::with_capacity(path.values.len());
    let (mut x, mut y) = (x0, y0);
    out.push((x, y));
    for &beta in &path.values[..path.values.len() - 1] {
        let (nx, ny) = rk4_step(x, y, beta, p.alpha, path.dt);
        x = nx;
        y = ny;
        out.push((x, y));
    }
    Ok(out)
}

/// Limiting susceptible fraction of the deterministic epidemic: the root of
/// `s = x0 * exp(-r0 * (1 - s))` with `r0 = beta / alpha`, found by bisection.
pub fn final_size_susceptible(x0: f64, r0: f64) -> f64 {
    let f = |s: f64| s - x0 * (-r0 * (1.0 - s)).exp();
    let (mut lo, mut hi) = (1e-12, x0);
    // f(lo) < 0 < f(hi) for r0 * x0 > 1
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}
