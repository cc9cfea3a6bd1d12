//! Desk-scale calibration run: solve, then closed-loop metrics.
//!
//! Usage: calibrate [cap_l] [sigma] [mode] [dt] [n_paths] [tol]

use std::time::Instant;

use epictrl_core::grid::GridSpec;
use epictrl_core::model::{DriftMode, EpidemicState, ModelParams};
use epictrl_core::sde::SdeScheme;
use epictrl_core::sim::{simulate_closed_loop, PolicySource};
use epictrl_core::solver::{solve, SolverConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let cap_l: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let sigma: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let mode = match args.get(3).map(|s| s.as_str()) {
        Some("normalized") => DriftMode::Normalized,
        _ => DriftMode::Paper,
    };
    let dt: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let n_paths: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(200);
    let tol: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1.0);

    let p = ModelParams {
        cap_l,
        sigma_vol: sigma,
        drift_mode: mode,
        ..ModelParams::baseline()
    };
    let cfg = SolverConfig {
        n_paths,
        dt,
        horizon: 1500.0,
        max_iterations: 30,
        tolerance: tol,
        seed: 42,
        shared_beta_paths: true,
    };
    let spec = GridSpec::default_box(21, 21, 11);

    let t0 = Instant::now();
    let out = solve(&p, &cfg, &spec).unwrap();
    let solve_s = t0.elapsed().as_secs_f64();
    println!(
        "solve: {:.1}s, iterations {}, converged {}, residuals {:?}",
        solve_s,
        out.grid.iteration,
        out.grid.converged,
        out.diagnostics
            .residual_history
            .iter()
            .map(|r| (r * 1000.0).round() / 1000.0)
            .collect::<Vec<_>>()
    );
    println!(
        "sup_v {:.2}, tail_est {:.4}, tail_ok {}, clamp {:.5}, pre-clamp [{:.3}, {:.2}]",
        out.diagnostics.sup_v,
        out.diagnostics.tail_estimate,
        out.diagnostics.tail_ok,
        out.diagnostics.clamp_fraction,
        out.diagnostics.pre_clamp_min,
        out.diagnostics.pre_clamp_max
    );

    // value/gradient profile along the uncontrolled trajectory start
    let g = &out.grid;
    for (x, y) in [(0.99, 0.01), (0.95, 0.03), (0.90, 0.06), (0.80, 0.10), (0.60, 0.12)] {
        let vz = g.interpolate_clamped(epictrl_core::grid::GridField::ZDerivative, x, y, 0.1);
        let v = g.interpolate_clamped(epictrl_core::grid::GridField::Value, x, y, 0.1);
        println!("  ({x:.2},{y:.2},0.1): v {v:8.3}  vz {vz:9.3}  xi {:.4}", epictrl_core::cost::feedback_xi(&p, vz));
    }

    let scheme = SdeScheme {
        dt: 0.5,
        horizon: 300.0,
        seed: 42,
    };
    let s0 = EpidemicState::new(0.99, 0.01, 0.1);
    let t1 = Instant::now();
    let e = simulate_closed_loop(&p, &PolicySource::Feedback(g), &scheme, s0, 2000, 0.01).unwrap();
    println!(
        "ensemble: {:.1}s, metrics {:?}",
        t1.elapsed().as_secs_f64(),
        e.metrics
    );
    println!(
        "  realized cost {:.3} +- {:.3}, offgrid {}",
        e.realized_cost_mean, e.realized_cost_se, e.offgrid_queries
    );
    let eu = simulate_closed_loop(&p, &PolicySource::Uncontrolled, &scheme, s0, 2000, 0.01).unwrap();
    println!("uncontrolled: metrics {:?}", eu.metrics);
    println!("  realized cost {:.3} +- {:.3}", eu.realized_cost_mean, eu.realized_cost_se);
}
