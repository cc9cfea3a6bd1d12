//! Closed-loop simulation under a lockdown policy, with ensemble statistics.
//!
//! Per step the effort is evaluated at the current state (from the value
//! grid's z-derivative, a constant, or zero), the transmission rate is
//! advanced first, then the susceptible/infected pair moves under the updated
//! rate. Paths are independent and chunk-reduced in a fixed order, so the
//! ensemble is a pure function of `(seed, inputs)` for any thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::{feedback_xi, running_cost};
use crate::error::{Error, Result};
use crate::grid::{GridField, ValueGrid};
use crate::model::{EpidemicState, ModelParams};
use crate::rng::RngStream;
use crate::sde::{em_step, SdeScheme};
use crate::sir::rk4_step;

/// Lockdown effort threshold that counts as "severe".
pub const SEVERE_XI: f64 = 0.4;

const PATH_CHUNK: usize = 128;

/// Where the simulated effort comes from.
pub enum PolicySource<'a> {
    /// Feedback from a solved value grid.
    Feedback(&'a ValueGrid),
    /// A constant effort in `[0, cap_l]`.
    Constant(f64),
    /// No restrictions.
    Uncontrolled,
}

/// Mean and 95% confidence band of one series, per recorded day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub mean: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

/// Scalar summaries of one ensemble. Undefined quantities stay absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    /// First day the mean effort exceeds the containment threshold.
    pub first_containment_day: Option<f64>,
    /// First day the mean effort exceeds [`SEVERE_XI`].
    pub severe_onset_day: Option<f64>,
    /// Length of the first severe stretch, days.
    pub severe_duration_days: Option<f64>,
    /// Mean recovered fraction at the horizon.
    pub final_recovered: f64,
    /// Minimum of the mean reproduction number.
    pub min_mean_rt: f64,
    /// First day the mean of `R_t S_t` drops below one and stays there.
    pub first_day_rtst_below_1: Option<f64>,
}

/// Per-day ensemble statistics of the closed-loop system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    /// Day stamps of the recorded rows.
    pub times: Vec<f64>,
    pub s: SeriesStats,
    pub i: SeriesStats,
    pub r: SeriesStats,
    pub beta: SeriesStats,
    pub xi: SeriesStats,
    pub rt: SeriesStats,
    pub rtst: SeriesStats,
    pub metrics: ScalarMetrics,
    pub n_paths: usize,
    pub seed: u64,
    /// Mean and standard error of the realized discounted running cost.
    pub realized_cost_mean: f64,
    pub realized_cost_se: f64,
    /// Interpolation queries that left the tabulation box (clamped, logged).
    pub offgrid_queries: u64,
}

impl EnsembleResult {
    /// Index of the row at the given day stamp, if recorded.
    pub fn index_of_day(&self, day: f64) -> Option<usize> {
        self.times.iter().position(|&t| (t - day).abs() < 1e-9)
    }
}

const N_SERIES: usize = 7; // s, i, r, beta, xi, rt, rtst

struct ChunkAccum {
    sums: Vec<f64>,
    sumsqs: Vec<f64>,
    cost_sum: f64,
    cost_sumsq: f64,
    offgrid: u64,
}

/// One step record handed to per-path observers.
#[derive(Debug, Clone, Copy)]
pub struct TraceStep {
    pub t: f64,
    pub s: f64,
    pub i: f64,
    pub beta: f64,
    pub xi: f64,
    /// Interpolated z-derivative behind the effort (NaN for non-feedback
    /// policies).
    pub vz: f64,
}

#[inline]
fn policy_eval(
    policy: &PolicySource,
    p: &ModelParams,
    s: f64,
    i: f64,
    z: f64,
    offgrid: &mut u64,
) -> (f64, f64) {
    match policy {
        PolicySource::Uncontrolled => (0.0, f64::NAN),
        PolicySource::Constant(c) => (*c, f64::NAN),
        PolicySource::Feedback(grid) => {
            let spec = &grid.spec;
            let inside = s >= spec.x_range.0
                && s <= spec.x_range.1
                && i >= spec.y_range.0
                && i <= spec.y_range.1
                && z >= spec.z_range.0
                && z <= spec.z_range.1;
            if !inside {
                *offgrid += 1;
            }
            let vz = grid.interpolate_clamped(GridField::ZDerivative, s, i, z);
            (feedback_xi(p, vz), vz)
        }
    }
}

/// Runs one path, invoking `record` at every recorded day. Returns the
/// realized discounted cost and the number of off-grid queries.
fn run_path(
    p: &ModelParams,
    policy: &PolicySource,
    scheme: &SdeScheme,
    s0: EpidemicState,
    path_index: u64,
    record_steps: &[usize],
    mut record: impl FnMut(usize, TraceStep),
) -> (f64, u64) {
    let mut stream = RngStream::new(scheme.seed, path_index);
    let sqrt_dt = scheme.dt.sqrt();
    let n_steps = scheme.n_steps();
    let (mut s, mut i, mut z) = (s0.x, s0.y, s0.z);
    let mut cost = 0.0;
    let mut offgrid = 0u64;
    let mut next_rec = 0usize;
    for k in 0..=n_steps {
        let t = k as f64 * scheme.dt;
        let (xi, vz) = policy_eval(policy, p, s, i, z, &mut offgrid);
        if next_rec < record_steps.len() && record_steps[next_rec] == k {
            record(
                next_rec,
                TraceStep {
                    t,
                    s,
                    i,
                    beta: z,
                    xi,
                    vz,
                },
            );
            next_rec += 1;
        }
        if k == n_steps {
            break;
        }
        cost += (-p.lambda * t).exp() * running_cost(p, i, xi).total * scheme.dt;
        // rate first, then the compartments under the updated rate
        z = em_step(p, z, xi, stream.next_normal() * sqrt_dt, scheme.dt);
        let (ns, ni) = rk4_step(s, i, z, p.alpha, scheme.dt);
        s = ns;
        i = ni;
    }
    (cost, offgrid)
}

fn record_steps(scheme: &SdeScheme) -> (Vec<f64>, Vec<usize>) {
    let n_steps = scheme.n_steps();
    let last_day = scheme.horizon.floor() as usize;
    let mut times = Vec::with_capacity(last_day + 1);
    let mut steps = Vec::with_capacity(last_day + 1);
    for d in 0..=last_day {
        let k = ((d as f64) / scheme.dt).round() as usize;
        if k <= n_steps {
            times.push(d as f64);
            steps.push(k);
        }
    }
    (times, steps)
}

/// Simulates the closed-loop system and aggregates ensemble statistics.
pub fn simulate_closed_loop(
    p: &ModelParams,
    policy: &PolicySource,
    scheme: &SdeScheme,
    s0: EpidemicState,
    n_paths: usize,
    xi_eps: f64,
) -> Result<EnsembleResult> {
    scheme.validate()?;
    s0.validate(p)?;
    if n_paths == 0 {
        return Err(Error::InvalidScheme("n_paths must be at least 1"));
    }
    match policy {
        PolicySource::Constant(c) if !(0.0..=p.cap_l).contains(c) => {
            return Err(Error::InvalidConfig("constant policy outside [0,cap_L]"));
        }
        PolicySource::Feedback(grid) => {
            let spec = &grid.spec;
            let inside = s0.x >= spec.x_range.0
                && s0.x <= spec.x_range.1
                && s0.y >= spec.y_range.0
                && s0.y <= spec.y_range.1
                && s0.z >= spec.z_range.0
                && s0.z <= spec.z_range.1;
            if !inside {
                return Err(Error::InvalidState("s0 outside the value grid box"));
            }
        }
        _ => {}
    }

    let (times, rec_steps) = record_steps(scheme);
    let nt = times.len();

    let chunk_bounds: Vec<(usize, usize)> = (0..n_paths)
        .step_by(PATH_CHUNK)
        .map(|lo| (lo, (lo + PATH_CHUNK).min(n_paths)))
        .collect();
    let chunks: Vec<ChunkAccum> = chunk_bounds
        .par_iter()
        .map(|&(lo, hi)| {
            let mut acc = ChunkAccum {
                sums: vec![0.0; nt * N_SERIES],
                sumsqs: vec![0.0; nt * N_SERIES],
                cost_sum: 0.0,
                cost_sumsq: 0.0,
                offgrid: 0,
            };
            for j in lo..hi {
                let (cost, offgrid) =
                    run_path(p, policy, scheme, s0, j as u64, &rec_steps, |idx, step| {
                        let row = [
                            step.s,
                            step.i,
                            1.0 - step.s - step.i,
                            step.beta,
                            step.xi,
                            step.beta / p.alpha,
                            step.beta * step.s / p.alpha,
                        ];
                        for (series, &val) in row.iter().enumerate() {
                            let slot = idx * N_SERIES + series;
                            acc.sums[slot] += val;
                            acc.sumsqs[slot] += val * val;
                        }
                    });
                acc.cost_sum += cost;
                acc.cost_sumsq += cost * cost;
                acc.offgrid += offgrid;
            }
            acc
        })
        .collect();

    // fixed-order merge keeps the reduction independent of scheduling
    let mut sums = vec![0.0; nt * N_SERIES];
    let mut sumsqs = vec![0.0; nt * N_SERIES];
    let mut cost_sum = 0.0;
    let mut cost_sumsq = 0.0;
    let mut offgrid = 0u64;
    for c in &chunks {
        for (dst, src) in sums.iter_mut().zip(&c.sums) {
            *dst += src;
        }
        for (dst, src) in sumsqs.iter_mut().zip(&c.sumsqs) {
            *dst += src;
        }
        cost_sum += c.cost_sum;
        cost_sumsq += c.cost_sumsq;
        offgrid += c.offgrid;
    }

    let n = n_paths as f64;
    let mut series: Vec<SeriesStats> = (0..N_SERIES)
        .map(|_| SeriesStats {
            mean: vec![0.0; nt],
            lo: vec![0.0; nt],
            hi: vec![0.0; nt],
        })
        .collect();
    for idx in 0..nt {
        for (sidx, stats) in series.iter_mut().enumerate() {
            let slot = idx * N_SERIES + sidx;
            let mean = sums[slot] / n;
            let var = if n_paths > 1 {
                ((sumsqs[slot] - n * mean * mean) / (n - 1.0)).max(0.0)
            } else {
                0.0
            };
            let half = 1.96 * (var / n).sqrt();
            stats.mean[idx] = mean;
            stats.lo[idx] = mean - half;
            stats.hi[idx] = mean + half;
        }
    }
    let mut it = series.into_iter();
    let (s, i, r, beta, xi, rt, rtst) = (
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
        it.next().unwrap(),
    );

    let cost_mean = cost_sum / n;
    let cost_var = if n_paths > 1 {
        ((cost_sumsq - n * cost_mean * cost_mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };

    let mut out = EnsembleResult {
        times,
        s,
        i,
        r,
        beta,
        xi,
        rt,
        rtst,
        metrics: ScalarMetrics {
            first_containment_day: None,
            severe_onset_day: None,
            severe_duration_days: None,
            final_recovered: 0.0,
            min_mean_rt: 0.0,
            first_day_rtst_below_1: None,
        },
        n_paths,
        seed: scheme.seed,
        realized_cost_mean: cost_mean,
        realized_cost_se: (cost_var / n).sqrt(),
        offgrid_queries: offgrid,
    };
    out.metrics = compute_metrics(&out, xi_eps);
    Ok(out)
}

/// Scalar summaries of an ensemble; `xi_eps` is the containment threshold.
pub fn compute_metrics(e: &EnsembleResult, xi_eps: f64) -> ScalarMetrics {
    let nt = e.times.len();
    let first_containment_day = e
        .xi
        .mean
        .iter()
        .position(|&x| x > xi_eps)
        .map(|idx| e.times[idx]);
    let severe_onset_idx = e.xi.mean.iter().position(|&x| x > SEVERE_XI);
    let severe_onset_day = severe_onset_idx.map(|idx| e.times[idx]);
    let severe_duration_days = severe_onset_idx.map(|onset| {
        let end = (onset..nt)
            .find(|&idx| e.xi.mean[idx] <= SEVERE_XI)
            .unwrap_or(nt);
        if end < nt {
            e.times[end] - e.times[onset]
        } else {
            e.times[nt - 1] - e.times[onset]
        }
    });
    let final_recovered = *e.r.mean.last().unwrap_or(&0.0);
    let min_mean_rt = e.rt.mean.iter().cloned().fold(f64::INFINITY, f64::min);
    // last day at or above one; persistence means everything after is below
    let last_ge_one = (0..nt).rev().find(|&idx| e.rtst.mean[idx] >= 1.0);
    let first_day_rtst_below_1 = match last_ge_one {
        None => e.times.first().copied(),
        Some(idx) if idx + 1 < nt => Some(e.times[idx + 1]),
        Some(_) => None,
    };
    ScalarMetrics {
        first_containment_day,
        severe_onset_day,
        severe_duration_days,
        final_recovered,
        min_mean_rt,
        first_day_rtst_below_1,
    }
}

/// Full recorded trajectory of one path; test and audit helper.
pub fn simulate_single_path(
    p: &ModelParams,
    policy: &PolicySource,
    scheme: &SdeScheme,
    s0: EpidemicState,
    path_index: u64,
) -> Result<Vec<TraceStep>> {
    scheme.validate()?;
    s0.validate(p)?;
    let (_, rec_steps) = record_steps(scheme);
    let mut trace = Vec::with_capacity(rec_steps.len());
    run_path(p, policy, scheme, s0, path_index, &rec_steps, |_, step| {
        trace.push(step)
    });
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sir::final_size_susceptible;

    fn params() -> ModelParams {
        ModelParams::baseline()
    }

    fn s0() -> EpidemicState {
        EpidemicState::new(0.99, 0.01, 0.1)
    }

    #[test]
    fn deterministic_uncontrolled_run_matches_final_size() {
        let p = ModelParams {
            sigma_vol: 0.0,
            ..params()
        };
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 1500.0,
            seed: 1,
        };
        let e =
            simulate_closed_loop(&p, &PolicySource::Uncontrolled, &scheme, s0(), 4, 0.01).unwrap();
        let expected = 1.0 - final_size_susceptible(0.99, 0.1 / p.alpha);
        let got = e.metrics.final_recovered;
        assert!((got - expected).abs() < 0.005, "{got} vs {expected}");
        // no noise: bands collapse onto the mean
        for idx in 0..e.times.len() {
            assert!((e.s.hi[idx] - e.s.lo[idx]).abs() < 1e-12);
            assert!((e.xi.hi[idx] - e.xi.lo[idx]).abs() < 1e-12);
        }
        assert!(e.metrics.first_containment_day.is_none());
        assert!(e.metrics.severe_onset_day.is_none());
    }

    #[test]
    fn full_effort_extinguishes_transmission() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 300.0,
            seed: 2,
        };
        let e =
            simulate_closed_loop(&p, &PolicySource::Constant(1.0), &scheme, s0(), 400, 0.01)
                .unwrap();
        let beta_end = *e.beta.mean.last().unwrap();
        assert!(beta_end < 0.005, "mean beta(300) = {beta_end}");
        assert!(
            e.metrics.final_recovered < 0.2,
            "recovered {}",
            e.metrics.final_recovered
        );
    }

    #[test]
    fn conservation_of_compartments() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 200.0,
            seed: 3,
        };
        let e =
            simulate_closed_loop(&p, &PolicySource::Uncontrolled, &scheme, s0(), 200, 0.01)
                .unwrap();
        for idx in 0..e.times.len() {
            let total = e.s.mean[idx] + e.i.mean[idx] + e.r.mean[idx];
            assert!((total - 1.0).abs() < 1e-12, "day {idx}: {total}");
        }
        let trace = simulate_single_path(&p, &PolicySource::Uncontrolled, &scheme, s0(), 7)
            .unwrap();
        for step in trace {
            assert!(step.s > 0.0 && step.i > 0.0 && step.s + step.i <= 1.0);
        }
    }

    #[test]
    fn ensemble_deterministic_across_thread_counts() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 100.0,
            seed: 5,
        };
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                simulate_closed_loop(&p, &PolicySource::Constant(0.3), &scheme, s0(), 300, 0.01)
                    .unwrap()
            })
        };
        let a = run(1);
        let b = run(2);
        assert_eq!(a, b);
    }

    #[test]
    fn metrics_on_synthetic_series() {
        // mean effort 0.5 on [79, 142), else 0
        let nt = 300;
        let times: Vec<f64> = (0..nt).map(|d| d as f64).collect();
        let zeros = SeriesStats {
            mean: vec![0.0; nt],
            lo: vec![0.0; nt],
            hi: vec![0.0; nt],
        };
        let mut xi = zeros.clone();
        for d in 79..142 {
            xi.mean[d] = 0.5;
        }
        // rtst crosses one downward at day 85
        let mut rtst = zeros.clone();
        for d in 0..nt {
            rtst.mean[d] = if d < 85 { 1.5 } else { 0.9 };
        }
        let e = EnsembleResult {
            times,
            s: zeros.clone(),
            i: zeros.clone(),
            r: zeros.clone(),
            beta: zeros.clone(),
            xi,
            rt: SeriesStats {
                mean: vec![1.8; nt],
                lo: vec![1.8; nt],
                hi: vec![1.8; nt],
            },
            rtst,
            metrics: ScalarMetrics {
                first_containment_day: None,
                severe_onset_day: None,
                severe_duration_days: None,
                final_recovered: 0.0,
                min_mean_rt: 0.0,
                first_day_rtst_below_1: None,
            },
            n_paths: 1,
            seed: 0,
            realized_cost_mean: 0.0,
            realized_cost_se: 0.0,
            offgrid_queries: 0,
        };
        let m = compute_metrics(&e, 0.01);
        assert_eq!(m.severe_onset_day, Some(79.0));
        assert_eq!(m.severe_duration_days, Some(63.0));
        assert_eq!(m.first_containment_day, Some(79.0));
        assert_eq!(m.first_day_rtst_below_1, Some(85.0));
        assert!((m.min_mean_rt - 1.8).abs() < 1e-12);
    }

    #[test]
    fn rtst_never_persisting_is_absent() {
        let nt = 10;
        let times: Vec<f64> = (0..nt).map(|d| d as f64).collect();
        let flat = |v: f64| SeriesStats {
            mean: vec![v; nt],
            lo: vec![v; nt],
            hi: vec![v; nt],
        };
        let mut e = EnsembleResult {
            times,
            s: flat(0.5),
            i: flat(0.0),
            r: flat(0.5),
            beta: flat(0.1),
            xi: flat(0.0),
            rt: flat(1.8),
            rtst: flat(1.2),
            metrics: ScalarMetrics {
                first_containment_day: None,
                severe_onset_day: None,
                severe_duration_days: None,
                final_recovered: 0.0,
                min_mean_rt: 0.0,
                first_day_rtst_below_1: None,
            },
            n_paths: 1,
            seed: 0,
            realized_cost_mean: 0.0,
            realized_cost_se: 0.0,
            offgrid_queries: 0,
        };
        assert_eq!(compute_metrics(&e, 0.01).first_day_rtst_below_1, None);
        e.rtst = flat(0.8);
        assert_eq!(compute_metrics(&e, 0.01).first_day_rtst_below_1, Some(0.0));
    }

    #[test]
    fn constant_policy_outside_cap_rejected() {
        let p = params();
        let scheme = SdeScheme {
            dt: 0.5,
            horizon: 10.0,
            seed: 1,
        };
        assert!(
            simulate_closed_loop(&p, &PolicySource::Constant(1.5), &scheme, s0(), 4, 0.01)
                .is_err()
        );
    }
}
