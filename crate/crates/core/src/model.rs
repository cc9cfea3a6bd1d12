//! Model parameters, domain state, and validation.
//!
//! Time is measured in days throughout. A state `(x, y, z)` collects the
//! susceptible fraction, the infected fraction, and the current transmission
//! rate; admissible states have positive compartments with `x + y` at most 1
//! and the transmission rate inside `(0, gamma)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpretation of the lockdown cap inside the transmission-rate drift.
///
/// In `Paper` mode the no-effort reversion target is `beta_hat * cap_l`, the
/// literal printed drift. In `Normalized` mode the target is `beta_hat`
/// whenever no effort is exerted, regardless of the cap; the cap only limits
/// the admissible effort. The two coincide at `cap_l = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum DriftMode {
    #[default]
    Paper,
    Normalized,
}

/// Scalar model constants. Rates are per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Recovery/removal rate of infected individuals.
    pub alpha: f64,
    /// Mean-reversion speed of the transmission rate.
    pub theta: f64,
    /// Natural transmission level the rate reverts towards.
    pub beta_hat: f64,
    /// Maximal possible transmission rate; the diffusion lives in `(0, gamma)`.
    pub gamma: f64,
    /// Volatility multiplier of the transmission-rate diffusion.
    pub sigma_vol: f64,
    /// Effective discount rate (vaccination arrival plus time preference).
    pub lambda: f64,
    /// Maximal lockdown intensity, in `[0, 1]`.
    pub cap_l: f64,
    /// Health-system capacity as an infected fraction, in `(0, 1)`.
    pub y_bar: f64,
    #[serde(default)]
    pub drift_mode: DriftMode,
}

impl ModelParams {
    /// Baseline parameter set used by all experiments: 18-day infections,
    /// reversion to 0.1 at rate 0.1, cap 0.16, sigma 1, discount 1/365.
    pub fn baseline() -> Self {
        Self {
            alpha: 1.0 / 18.0,
            theta: 0.1,
            beta_hat: 0.1,
            gamma: 0.16,
            sigma_vol: 1.0,
            lambda: 1.0 / 365.0,
            cap_l: 1.0,
            y_bar: 0.1,
            drift_mode: DriftMode::Paper,
        }
    }

    /// Upper bound on the running cost, `(1/y_bar)^2 + cap_l^2 / 2`.
    pub fn cost_max(&self) -> f64 {
        1.0 / (self.y_bar * self.y_bar) + 0.5 * self.cap_l * self.cap_l
    }

    /// Upper bound on the value function, `cost_max / lambda`.
    pub fn value_bound(&self) -> f64 {
        self.cost_max() / self.lambda
    }
}

/// Checks every parameter invariant, returning the input unchanged on
/// success. The error names the first violated bound.
pub fn validate_params(p: ModelParams) -> Result<ModelParams> {
    if !(p.alpha > 0.0) {
        return Err(Error::InvalidParams("alpha must be positive"));
    }
    if !(p.theta > 0.0) {
        return Err(Error::InvalidParams("theta must be positive"));
    }
    if !(p.gamma > 0.0) {
        return Err(Error::InvalidParams("gamma must be positive"));
    }
    if !(p.sigma_vol >= 0.0) {
        return Err(Error::InvalidParams("sigma_vol must be nonnegative"));
    }
    if !(p.lambda > 0.0) {
        return Err(Error::InvalidParams("lambda must be positive"));
    }
    if !(p.beta_hat > 0.0 && p.beta_hat < p.gamma) {
        return Err(Error::InvalidParams("beta_hat not in (0,gamma)"));
    }
    if !(p.cap_l >= 0.0 && p.cap_l <= 1.0) {
        return Err(Error::InvalidParams("cap_L not in [0,1]"));
    }
    if !(p.y_bar > 0.0 && p.y_bar < 1.0) {
        return Err(Error::InvalidParams("y_bar not in (0,1)"));
    }
    Ok(p)
}

/// A point `(x, y, z)` of the state domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpidemicState {
    /// Susceptible fraction.
    pub x: f64,
    /// Infected fraction.
    pub y: f64,
    /// Transmission rate.
    pub z: f64,
}

impl EpidemicState {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    /// Validates positivity, the simplex constraint, and the rate bounds.
    ///
    /// `x + y = 1` (no initial recovered) is admitted: the dynamics move
    /// strictly inside the simplex after any positive time.
    pub fn validate(&self, p: &ModelParams) -> Result<Self> {
        if !(self.x > 0.0) {
            return Err(Error::InvalidState("x must be positive"));
        }
        if !(self.y > 0.0) {
            return Err(Error::InvalidState("y must be positive"));
        }
        if !(self.x + self.y <= 1.0) {
            return Err(Error::InvalidState("x+y must not exceed 1"));
        }
        if !(self.z > 0.0 && self.z < p.gamma) {
            return Err(Error::InvalidState("z not in (0,gamma)"));
        }
        Ok(*self)
    }
}

/// One realized transmission-rate path sampled on a uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPath {
    /// Step size in days.
    pub dt: f64,
    /// Samples `beta(k * dt)`, `k = 0..len`.
    pub values: Vec<f64>,
}

impl BetaPath {
    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidPath("dt must be positive"));
        }
        if self.values.is_empty() {
            return Err(Error::InvalidPath("values must be non-empty"));
        }
        if !self.values.iter().all(|&v| (0.0..=p.gamma).contains(&v)) {
            return Err(Error::InvalidPath("values must lie in [0,gamma]"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn baseline_params_validate() {
        let p = validate_params(ModelParams::baseline()).unwrap();
        assert_eq!(p, ModelParams::baseline());
    }

    #[test]
    fn beta_hat_above_gamma_rejected() {
        let p = ModelParams {
            beta_hat: 0.2,
            gamma: 0.16,
            ..ModelParams::baseline()
        };
        let err = validate_params(p).unwrap_err();
        assert!(err.to_string().contains("beta_hat not in (0,gamma)"), "{err}");
    }

    #[test]
    fn zero_lambda_rejected() {
        let p = ModelParams {
            lambda: 0.0,
            ..ModelParams::baseline()
        };
        let err = validate_params(p).unwrap_err();
        assert!(err.to_string().contains("lambda must be positive"), "{err}");
    }

    #[test]
    fn first_violation_reported() {
        // alpha precedes lambda in the invariant listing
        let p = ModelParams {
            alpha: -1.0,
            lambda: 0.0,
            ..ModelParams::baseline()
        };
        let err = validate_params(p).unwrap_err();
        assert!(err.to_string().contains("alpha must be positive"), "{err}");
    }

    #[test]
    fn nan_parameter_rejected() {
        let p = ModelParams {
            theta: f64::NAN,
            ..ModelParams::baseline()
        };
        assert!(validate_params(p).is_err());
    }

    #[test]
    fn experiment_initial_state_is_valid() {
        let p = ModelParams::baseline();
        // 1% initially infected, nobody recovered: x + y is exactly 1.
        EpidemicState::new(0.99, 0.01, 0.1).validate(&p).unwrap();
    }

    #[test]
    fn state_outside_simplex_rejected() {
        let p = ModelParams::baseline();
        assert!(EpidemicState::new(0.7, 0.4, 0.1).validate(&p).is_err());
        assert!(EpidemicState::new(0.0, 0.1, 0.1).validate(&p).is_err());
        assert!(EpidemicState::new(0.5, 0.1, 0.16).validate(&p).is_err());
    }

    #[test]
    fn beta_path_validation() {
        let p = ModelParams::baseline();
        let ok = BetaPath {
            dt: 0.5,
            values: vec![0.1, 0.12, 0.16],
        };
        ok.validate(&p).unwrap();
        let empty = BetaPath {
            dt: 0.5,
            values: vec![],
        };
        assert!(empty.validate(&p).is_err());
        let out = BetaPath {
            dt: 0.5,
            values: vec![0.1, 0.17],
        };
        assert!(out.validate(&p).is_err());
    }
}
