//! Controlled transmission-rate diffusion.
//!
//! The rate follows `d beta = theta (beta_hat (L - xi) - beta) dt
//! + sigma beta (gamma - beta) dW` (or the normalized drift variant, see
//! [`DriftMode`](crate::model::DriftMode)). The diffusion coefficient is set
//! to zero outside `(0, gamma)`; together with a final clamp to `[0, gamma]`
//! this keeps every Euler-Maruyama sample inside the proved range. Clamp
//! activations are counted so the approximation stays auditable.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{BetaPath, DriftMode, ModelParams};
use crate::rng::RngStream;

/// Time grid and seed of one simulation.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SdeScheme {
    /// Step size, days.
    pub dt: f64,
    /// Horizon, days.
    pub horizon: f64,
    /// Reproducibility seed.
    pub seed: u64,
}

impl SdeScheme {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) {
            return Err(Error::InvalidScheme("dt must be positive"));
        }
        if !(self.horizon >= self.dt) {
            return Err(Error::InvalidScheme("horizon must be at least dt"));
        }
        let steps = self.horizon / self.dt;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::InvalidScheme("horizon/dt must be an integer"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Drift of the transmission rate under effort `xi`.
#[inline]
pub fn drift(p: &ModelParams, z: f64, xi: f64) -> f64 {
    let target = match p.drift_mode {
        DriftMode::Paper => p.beta_hat * (p.cap_l - xi),
        DriftMode::Normalized => p.beta_hat * (1.0 - xi),
    };
    p.theta * (target - z)
}

/// Diffusion coefficient, zero outside `(0, gamma)`.
#[inline]
pub fn diffusion_clamped(p: &ModelParams, z: f64) -> f64 {
    if z <= 0.0 || z >= p.gamma {
        0.0
    } else {
        p.sigma_vol * z * (p.gamma - z)
    }
}

/// One Euler-Maruyama step; `dw` is a Gaussian increment already scaled by
/// `sqrt(dt)`. The result is clamped into `[0, gamma]`.
#[inline]
pub fn em_step(p: &ModelParams, z: f64, xi: f64, dw: f64, dt: f64) -> f64 {
    let raw = z + drift(p, z, xi) * dt + diffusion_clamped(p, z) * dw;
    raw.clamp(0.0, p.gamma)
}

/// Effort schedule used when sampling rate paths.
pub enum XiPolicy<'a> {
    Constant(f64),
    /// Callback receiving `(t, z)`.
    Callback(&'a (dyn Fn(f64, f64) -> f64 + Sync)),
}

impl XiPolicy<'_> {
    #[inline]
    fn eval(&self, t: f64, z: f64) -> f64 {
        match self {
            XiPolicy::Constant(c) => *c,
            XiPolicy::Callback(f) => f(t, z),
        }
    }
}

/// Clamp-activation counters for a batch of simulated paths.
#[derive(Debug, Clone, Copy, Default)]
pub struct ClampStats {
    pub clamped_steps: u64,
    pub total_steps: u64,
}

impl ClampStats {
    pub fn fraction(&self) -> f64 {
        if self.total_steps == 0 {
            0.0
        } else {
            self.clamped_steps as f64 / self.total_steps as f64
        }
    }
}

fn simulate_one(
    p: &ModelParams,
    scheme: &SdeScheme,
    z0: f64,
    xi: &XiPolicy,
    stream_id: u64,
) -> (BetaPath, u64) {
    let n = scheme.n_steps();
    let sqrt_dt = scheme.dt.sqrt();
    let mut stream = RngStream::new(scheme.seed, stream_id);
    let mut values = Vec::with_capacity(n + 1);
    let mut clamped = 0u64;
    let mut z = z0;
    values.push(z);
    for k in 0..n {
        let t = k as f64 * scheme.dt;
        let xi_k = xi.eval(t, z);
        let dw = stream.next_normal() * sqrt_dt;
        let raw = z + drift(p, z, xi_k) * scheme.dt + diffusion_clamped(p, z) * dw;
        if raw < 0.0 || raw > p.gamma {
            clamped += 1;
        }
        z = raw.clamp(0.0, p.gamma);
        values.push(z);
    }
    (
        BetaPath {
            dt: scheme.dt,
            values,
        },
        clamped,
    )
}

/// Simulates independent rate paths; path `k` is driven by stream
/// `(scheme.seed, k)`, so the output is a pure function of the inputs
/// regardless of thread scheduling.
pub fn simulate_beta_paths(
    p: &ModelParams,
    scheme: &SdeScheme,
    z0: f64,
    xi: &XiPolicy,
    n_paths: usize,
) -> Result<Vec<BetaPath>> {
    simulate_beta_paths_with_stats(p, scheme, z0, xi, n_paths).map(|(paths, _)| paths)
}

/// As [`simulate_beta_paths`], additionally reporting clamp activations.
pub fn simulate_beta_paths_with_stats(
    p: &ModelParams,
    scheme: &SdeScheme,
    z0: f64,
    xi: &XiPolicy,
    n_paths: usize,
) -> Result<(Vec<BetaPath>, ClampStats)> {
    scheme.validate()?;
    if n_paths == 0 {
        return Err(Error::InvalidScheme("n_paths must be at least 1"));
    }
    if !(0.0..=p.gamma).contains(&z0) {
        return Err(Error::InvalidState("z not in (0,gamma)"));
    }
    let results: Vec<(BetaPath, u64)> = (0..n_paths as u64)
        .into_par_iter()
        .map(|k| simulate_one(p, scheme, z0, xi, k))
        .collect();
    let mut stats = ClampStats::default();
    let mut paths = Vec::with_capacity(n_paths);
    for (path, clamped) in results {
        stats.clamped_steps += clamped;
        stats.total_steps += scheme.n_steps() as u64;
        paths.push(path);
    }
    Ok((paths, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriftMode;

    fn params() -> ModelParams {
        ModelParams::baseline()
    }

    #[test]
    fn drift_vanishes_at_natural_level() {
        let p = params();
        assert_eq!(drift(&p, p.beta_hat, 0.0), 0.0);
    }

    #[test]
    fn drift_under_full_effort() {
        let p = params();
        // theta (beta_hat (1 - 1) - z) = 0.1 * (0 - 0.1)
        assert!((drift(&p, 0.1, 1.0) - (-0.01)).abs() < 1e-15);
    }

    #[test]
    fn drift_paper_mode_couples_cap() {
        let p = ModelParams {
            cap_l: 0.2,
            ..params()
        };
        // 0.1 * (0.1 * 0.2 - 0.1) = -0.008
        assert!((drift(&p, 0.1, 0.0) - (-0.008)).abs() < 1e-15);
    }

    #[test]
    fn drift_normalized_mode_ignores_cap_at_zero_effort() {
        let p = ModelParams {
            cap_l: 0.2,
            drift_mode: DriftMode::Normalized,
            ..params()
        };
        assert_eq!(drift(&p, p.beta_hat, 0.0), 0.0);
    }

    #[test]
    fn diffusion_maximum_and_boundaries() {
        let p = params();
        assert!((diffusion_clamped(&p, 0.08) - 0.0064).abs() < 1e-15);
        assert_eq!(diffusion_clamped(&p, 0.0), 0.0);
        assert_eq!(diffusion_clamped(&p, p.gamma), 0.0);
        assert_eq!(diffusion_clamped(&p, -0.01), 0.0);
        assert_eq!(diffusion_clamped(&p, 0.2), 0.0);
    }

    #[test]
    fn em_step_reduces_to_linear_ode_without_noise() {
        let p = ModelParams {
            sigma_vol: 0.0,
            ..params()
        };
        let dt = 0.01;
        let t_end: f64 = 30.0;
        let z0 = 0.15;
        let mut z = z0;
        let n = (t_end / dt).round() as usize;
        for _ in 0..n {
            z = em_step(&p, z, 0.0, 0.0, dt);
        }
        let exact = p.beta_hat + (z0 - p.beta_hat) * (-p.theta * t_end).exp();
        assert!((z - exact).abs() < 1e-4, "z {z} vs exact {exact}");
    }

    #[test]
    fn em_step_clamps_large_shocks() {
        let p = params();
        assert_eq!(em_step(&p, 0.08, 0.0, 1e6, 0.5), p.gamma);
        assert_eq!(em_step(&p, 0.08, 0.0, -1e6, 0.5), 0.0);
    }

    #[test]
    fn em_step_stationary_point() {
        let p = params();
        assert_eq!(em_step(&p, p.beta_hat, 0.0, 0.0, 0.5), p.beta_hat);
    }

    #[test]
    fn zero_noise_single_path_is_the_ode() {
        let p = ModelParams {
            sigma_vol: 0.0,
            ..params()
        };
        let scheme = SdeScheme {
            dt: 0.01,
            horizon: 20.0,
            seed: 3,
        };
        let paths =
            simulate_beta_paths(&p, &scheme, 0.15, &XiPolicy::Constant(0.0), 1).unwrap();
        let z_end = *paths[0].values.last().unwrap();
        let exact = p.beta_hat + (0.15 - p.beta_hat) * (-p.theta * 20.0).exp();
        assert!((z_end - exact).abs() < 1e-4);
    }

    #[test]
    fn full_effort_eradicates_transmission() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 300.0,
            seed: 11,
        };
        let paths =
            simulate_beta_paths(&p, &scheme, 0.1, &XiPolicy::Constant(1.0), 10_000).unwrap();
        let mean_end: f64 =
            paths.iter().map(|p| *p.values.last().unwrap()).sum::<f64>() / paths.len() as f64;
        assert!(mean_end < 0.005, "mean beta(300) = {mean_end}");
    }

    #[test]
    fn range_and_clamp_budget() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 300.0,
            seed: 5,
        };
        let (paths, stats) =
            simulate_beta_paths_with_stats(&p, &scheme, 0.1, &XiPolicy::Constant(0.0), 500)
                .unwrap();
        for path in &paths {
            assert!(path.values.iter().all(|&z| (0.0..=p.gamma).contains(&z)));
        }
        assert!(
            stats.fraction() < 0.001,
            "clamp fraction {} over budget",
            stats.fraction()
        );
    }

    #[test]
    fn pathwise_comparison_under_common_noise() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 200.0,
            seed: 17,
        };
        let mid = |t: f64, _z: f64| 0.3 + 0.2 * (t / 200.0);
        let low = simulate_beta_paths(&p, &scheme, 0.1, &XiPolicy::Constant(1.0), 50).unwrap();
        let any = simulate_beta_paths(&p, &scheme, 0.1, &XiPolicy::Callback(&mid), 50).unwrap();
        let high = simulate_beta_paths(&p, &scheme, 0.1, &XiPolicy::Constant(0.0), 50).unwrap();
        for ((a, b), c) in low.iter().zip(&any).zip(&high) {
            for k in 0..a.values.len() {
                assert!(a.values[k] <= b.values[k] + 1e-12);
                assert!(b.values[k] <= c.values[k] + 1e-12);
            }
        }
    }

    #[test]
    fn weak_convergence_of_uncontrolled_mean() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 200.0,
            seed: 23,
        };
        let z0 = 0.14;
        let paths =
            simulate_beta_paths(&p, &scheme, z0, &XiPolicy::Constant(0.0), 10_000).unwrap();
        let ends: Vec<f64> = paths.iter().map(|p| *p.values.last().unwrap()).collect();
        let n = ends.len() as f64;
        let mean = ends.iter().sum::<f64>() / n;
        let var = ends.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        let ode = p.beta_hat + (z0 - p.beta_hat) * (-p.theta * 200.0f64).exp();
        assert!(
            (mean - ode).abs() < 3.0 * se + 1e-4,
            "mean {mean} vs ode {ode}, se {se}"
        );
    }

    #[test]
    fn reruns_are_bit_identical_across_thread_counts() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 50.0,
            seed: 31,
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                simulate_beta_paths(&p, &scheme, 0.1, &XiPolicy::Constant(0.0), 64).unwrap()
            })
        };
        let a = run(1);
        let b = run(2);
        assert_eq!(a, b);
    }
}
