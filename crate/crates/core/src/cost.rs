//! Running cost, Hamiltonian, and the closed-form feedback minimizer.
//!
//! The running cost is `(y / y_bar)^2 + xi^2 / 2`. The Hamiltonian minimizes
//! `C(y, xi) + b(z, xi) p` over admissible effort; since the drift is linear
//! in `xi` with slope `-theta * beta_hat` and the effort cost is quadratic,
//! the minimizer is the clamp of `theta * beta_hat * p` to `[0, cap_l]`. The
//! value may be negative.

use crate::model::ModelParams;
use crate::sde::drift;

/// Running-cost decomposition at one state/effort pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEval {
    pub infection_cost: f64,
    pub effort_cost: f64,
    pub total: f64,
}

/// Quadratic running cost `(y / y_bar)^2 + xi^2 / 2`.
pub fn running_cost(p: &ModelParams, y: f64, xi: f64) -> CostEval {
    let infection = (y / p.y_bar) * (y / p.y_bar);
    let effort = 0.5 * xi * xi;
    CostEval {
        infection_cost: infection,
        effort_cost: effort,
        total: infection + effort,
    }
}

/// Minimizing effort and minimal value of the Hamiltonian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HamiltonianEval {
    pub minimizer_xi: f64,
    pub value: f64,
}

/// Feedback effort induced by a value gradient: `theta * beta_hat * vz`
/// clamped to `[0, cap_l]`. Matches the three-branch rule: the cap when the
/// gradient exceeds `cap_l / (theta beta_hat)`, the interior product in
/// between, zero for negative gradients.
#[inline]
pub fn feedback_xi(p: &ModelParams, vz: f64) -> f64 {
    (p.theta * p.beta_hat * vz).clamp(0.0, p.cap_l)
}

/// Pointwise minimum over effort of running cost plus drift-weighted
/// gradient.
#[inline]
pub fn hamiltonian(p: &ModelParams, y: f64, z: f64, vz: f64) -> HamiltonianEval {
    let xi = feedback_xi(p, vz);
    let c = running_cost(p, y, xi);
    HamiltonianEval {
        minimizer_xi: xi,
        value: c.total + drift(p, z, xi) * vz,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn params() -> ModelParams {
        ModelParams::baseline()
    }

    #[test]
    fn cost_vanishes_at_origin() {
        let c = running_cost(&params(), 0.0, 0.0);
        assert_eq!(c.total, 0.0);
    }

    #[test]
    fn cost_at_capacity_is_one() {
        let c = running_cost(&params(), 0.1, 0.0);
        assert!((c.total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cost_decomposition() {
        let c = running_cost(&params(), 0.2, 1.0);
        assert!((c.infection_cost - 4.0).abs() < 1e-12);
        assert!((c.effort_cost - 0.5).abs() < 1e-15);
        assert!((c.total - 4.5).abs() < 1e-12);
    }

    #[test]
    fn zero_gradient_kills_control() {
        let p = params();
        let h = hamiltonian(&p, 0.05, 0.1, 0.0);
        assert_eq!(h.minimizer_xi, 0.0);
        assert!((h.value - 0.25).abs() < 1e-12);
    }

    #[test]
    fn negative_gradient_gives_zero_effort() {
        let h = hamiltonian(&params(), 0.05, 0.1, -1.0);
        assert_eq!(h.minimizer_xi, 0.0);
    }

    #[test]
    fn saturated_branch_value() {
        // gradient 200 exceeds the threshold cap_l/(theta beta_hat) = 100
        let p = params();
        let h = hamiltonian(&p, 0.1, 0.1, 200.0);
        assert_eq!(h.minimizer_xi, 1.0);
        assert!((h.value - (-0.5)).abs() < 1e-10, "value {}", h.value);
    }

    #[test]
    fn feedback_branches() {
        let p = params();
        assert!((feedback_xi(&p, 50.0) - 0.5).abs() < 1e-15);
        assert_eq!(feedback_xi(&p, 100.0), 1.0); // exactly at the threshold
        assert_eq!(feedback_xi(&p, 150.0), 1.0);
        assert_eq!(feedback_xi(&p, -5.0), 0.0);
        assert_eq!(feedback_xi(&p, 0.0), 0.0);
    }

    #[test]
    fn feedback_monotone_and_continuous_in_gradient() {
        let p = params();
        let mut prev = feedback_xi(&p, -10.0);
        let mut vz = -10.0;
        while vz < 120.0 {
            let next = feedback_xi(&p, vz + 0.01);
            assert!(next + 1e-12 >= prev);
            assert!((next - prev).abs() < 0.01 * p.theta * p.beta_hat + 1e-12);
            prev = next;
            vz += 0.01;
        }
    }

    #[test]
    fn matches_grid_search_oracle() {
        // brute-force minimum over a 1e5-point effort grid, 1e4 random triples
        let p = params();
        let mut rng = RngStream::new(2024, 0);
        let n_grid = 100_000;
        let mut worst = 0.0f64;
        for _ in 0..10_000 {
            let y = rng.next_f64();
            let z = p.gamma * rng.next_f64();
            let vz = 400.0 * (rng.next_f64() - 0.25);
            let h = hamiltonian(&p, y, z, vz);
            let mut best = f64::INFINITY;
            for i in 0..=n_grid {
                let xi = p.cap_l * i as f64 / n_grid as f64;
                let v = running_cost(&p, y, xi).total + crate::sde::drift(&p, z, xi) * vz;
                if v < best {
                    best = v;
                }
            }
            worst = worst.max((best - h.value).abs());
            assert!(h.value <= best + 1e-12);
        }
        assert!(worst < 1e-9, "worst gap {worst}");
    }

    #[test]
    fn cost_convex_nondecreasing_in_effort() {
        let p = params();
        for y in [0.0, 0.05, 0.3] {
            let mut prev = running_cost(&p, y, 0.0).total;
            let mut prev_slope = f64::NEG_INFINITY;
            for i in 1..=100 {
                let xi = i as f64 / 100.0;
                let c = running_cost(&p, y, xi).total;
                let slope = c - prev;
                assert!(c + 1e-15 >= prev, "not nondecreasing at xi={xi}");
                assert!(slope + 1e-12 >= prev_slope, "not convex at xi={xi}");
                prev_slope = slope;
                prev = c;
            }
        }
    }

    #[test]
    fn cost_lipschitz_in_infections() {
        let p = params();
        let k = 2.0 / (p.y_bar * p.y_bar);
        let mut rng = RngStream::new(8, 0);
        for _ in 0..1000 {
            let (a, b) = (rng.next_f64(), rng.next_f64());
            let d = (running_cost(&p, a, 0.3).total - running_cost(&p, b, 0.3).total).abs();
            assert!(d <= k * (a - b).abs() + 1e-12);
        }
    }
}
