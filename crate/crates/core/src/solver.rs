//! Monte Carlo value recursion for the stationary dynamic-programming
//! equation.
//!
//! Starting from the zero grid, each sweep re-evaluates every active node as
//! the expected discounted integral of the Hamiltonian along uncontrolled
//! `(S, I, beta)` paths, reading the previous sweep's z-derivative by
//! trilinear interpolation. There are no usable boundary conditions on the
//! state domain, so path integrals replace any PDE stencil; the grid exists
//! only to tabulate the value and its z-derivative.
//!
//! Random numbers are common across sweeps (and, with path sharing, across
//! grid nodes): the sweep map is then deterministic, so the stopping rule
//! measures genuine contraction rather than Monte Carlo noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ValueGrid};
use crate::model::{DriftMode, EpidemicState, ModelParams};
use crate::rng::{stream_id_for_node, RngStream};
use crate::sir::rk4_step;

/// Monte Carlo and stopping controls of one solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Simulated paths per node (per z-node when paths are shared).
    pub n_paths: usize,
    /// Time step of the path simulation and quadrature, days.
    pub dt: f64,
    /// Truncation horizon of the discounted integral, days.
    pub horizon: f64,
    pub max_iterations: usize,
    /// Sup-norm change of the value below which the recursion stops.
    pub tolerance: f64,
    pub seed: u64,
    /// Reuse one path set per z-node across all `(x, y)` nodes.
    pub shared_beta_paths: bool,
    /// Under-relaxation weight of each sweep after the first,
    /// `v <- (1 - w) v + w sweep(v)`. The plain sweep map has an oscillatory
    /// mode with gain close to -theta/(lambda + theta); mixing damps it
    /// without moving the fixed point. 1 recovers the undamped sweep.
    #[serde(default = "default_relaxation")]
    pub relaxation: f64,
}

fn default_relaxation() -> f64 {
    0.75
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_paths: 200,
            dt: 0.5,
            horizon: 1500.0,
            max_iterations: 30,
            tolerance: 1.0,
            seed: 42,
            shared_beta_paths: true,
            relaxation: default_relaxation(),
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        if self.n_paths == 0 {
            return Err(Error::InvalidConfig("n_paths must be at least 1"));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidConfig("dt must be positive"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig("tolerance must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidConfig("max_iterations must be at least 1"));
        }
        if self.horizon * p.lambda < 3.0 {
            return Err(Error::InvalidConfig(
                "horizon too short for the discount tail (horizon * lambda < 3)",
            ));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidConfig("relaxation must be in (0,1]"));
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Per-solve audit record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Sup-norm change of `v` per sweep.
    pub residual_history: Vec<f64>,
    /// Sup-norm of the final value.
    pub sup_v: f64,
    /// Empirical discarded-tail estimate: worst node's mean terminal
    /// integrand, carried beyond the horizon at the discount rate.
    pub tail_estimate: f64,
    /// Worst-case discarded tail, `cost_max * exp(-lambda T) / lambda`.
    pub tail_bound: f64,
    /// Whether the empirical tail stays below 5% of `sup_v`.
    pub tail_ok: bool,
    /// Fraction of path steps that hit the `[0, gamma]` clamp.
    pub clamp_fraction: f64,
    /// Extremes of the sweep values before projection onto the value bound.
    pub pre_clamp_min: f64,
    pub pre_clamp_max: f64,
}

/// Solver output: the grid plus its audit record.
#[derive(Debug, Clone)]
pub struct SolveOutput {
    pub grid: ValueGrid,
    pub diagnostics: SolveDiagnostics,
}

/// Rate paths for one z-node, stored row-contiguous (`n_paths` rows of
/// `n_steps + 1` samples).
struct PathSet {
    flat: Vec<f64>,
    row: usize,
}

impl PathSet {
    #[inline]
    fn path(&self, j: usize) -> &[f64] {
        &self.flat[j * self.row..(j + 1) * self.row]
    }
}

/// Generates the uncontrolled rate paths for one starting rate. Path `j`
/// always draws from stream `(seed, j)`, so every z-node sees the same
/// Gaussian increments - the variance of z-differences collapses accordingly.
fn generate_paths(p: &ModelParams, cfg: &SolverConfig, z0: f64) -> (PathSet, u64) {
    let n = cfg.n_steps();
    let row = n + 1;
    let mut flat = vec![0.0; cfg.n_paths * row];
    let clamped: u64 = flat
        .par_chunks_mut(row)
        .enumerate()
        .map(|(j, out)| fill_uncontrolled_path(p, cfg.seed, j as u64, z0, cfg.dt, out))
        .sum();
    (PathSet { flat, row }, clamped)
}

/// Fills `out` (length `n_steps + 1`) with one uncontrolled path from `z0`.
fn fill_uncontrolled_path(
    p: &ModelParams,
    seed: u64,
    stream_id: u64,
    z0: f64,
    dt: f64,
    out: &mut [f64],
) -> u64 {
    let mut stream = RngStream::new(seed, stream_id);
    let sqrt_dt = dt.sqrt();
    let mut clamped = 0;
    let mut z = z0;
    out[0] = z;
    for slot in out.iter_mut().skip(1) {
        let dw = stream.next_normal() * sqrt_dt;
        let raw = z + crate::sde::drift(p, z, 0.0) * dt + crate::sde::diffusion_clamped(p, z) * dw;
        if raw < 0.0 || raw > p.gamma {
            clamped += 1;
        }
        z = raw.clamp(0.0, p.gamma);
        *slot = z;
    }
    clamped
}

/// Constants hoisted out of the hot quadrature loop.
struct HotParams {
    alpha: f64,
    theta: f64,
    beta_hat: f64,
    cap_l: f64,
    /// Reversion multiplier at zero effort: `cap_l` in paper mode, 1 in
    /// normalized mode.
    lm: f64,
    inv_ybar2: f64,
    /// `theta * beta_hat`, the feedback slope.
    tb: f64,
    dt: f64,
}

impl HotParams {
    fn new(p: &ModelParams, dt: f64) -> Self {
        Self {
            alpha: p.alpha,
            theta: p.theta,
            beta_hat: p.beta_hat,
            cap_l: p.cap_l,
            lm: match p.drift_mode {
                DriftMode::Paper => p.cap_l,
                DriftMode::Normalized => 1.0,
            },
            inv_ybar2: 1.0 / (p.y_bar * p.y_bar),
            tb: p.theta * p.beta_hat,
            dt,
        }
    }
}

struct NodeEval {
    mean: f64,
    se: f64,
    /// Mean undiscounted integrand at the final quadrature step.
    tail_integrand: f64,
}

/// Discounted-quadrature weights `exp(-lambda k dt) * dt` for the
/// left-endpoint rule.
fn discount_weights(lambda: f64, dt: f64, n_steps: usize) -> Vec<f64> {
    (0..n_steps)
        .map(|k| (-lambda * k as f64 * dt).exp() * dt)
        .collect()
}

/// Box-clamped trilinear sampler with per-axis reciprocals hoisted out of the
/// path loop. Queries clamp in index space, which is equivalent to clamping
/// the coordinate to the tabulation box.
struct Sampler<'a> {
    data: &'a [f64],
    x0: f64,
    y0: f64,
    z0: f64,
    inv_dx: f64,
    inv_dy: f64,
    inv_dz: f64,
    tx_max: f64,
    ty_max: f64,
    tz_max: f64,
    nx: usize,
    ny: usize,
    nz: usize,
    sx: usize,
    sy: usize,
}

impl<'a> Sampler<'a> {
    fn new(data: &'a [f64], spec: &GridSpec) -> Self {
        Self {
            data,
            x0: spec.x_range.0,
            y0: spec.y_range.0,
            z0: spec.z_range.0,
            inv_dx: (spec.nx - 1) as f64 / (spec.x_range.1 - spec.x_range.0),
            inv_dy: (spec.ny - 1) as f64 / (spec.y_range.1 - spec.y_range.0),
            inv_dz: (spec.nz - 1) as f64 / (spec.z_range.1 - spec.z_range.0),
            tx_max: (spec.nx - 1) as f64,
            ty_max: (spec.ny - 1) as f64,
            tz_max: (spec.nz - 1) as f64,
            nx: spec.nx,
            ny: spec.ny,
            nz: spec.nz,
            sx: spec.ny * spec.nz,
            sy: spec.nz,
        }
    }

    #[inline(always)]
    fn query(&self, x: f64, y: f64, z: f64) -> f64 {
        let tx = ((x - self.x0) * self.inv_dx).clamp(0.0, self.tx_max);
        let ty = ((y - self.y0) * self.inv_dy).clamp(0.0, self.ty_max);
        let tz = ((z - self.z0) * self.inv_dz).clamp(0.0, self.tz_max);
        let ix = (tx as usize).min(self.nx - 2);
        let iy = (ty as usize).min(self.ny - 2);
        let iz = (tz as usize).min(self.nz - 2);
        let fx = tx - ix as f64;
        let fy = ty - iy as f64;
        let fz = tz - iz as f64;
        let (sx, sy) = (self.sx, self.sy);
        let base = ix * sx + iy * sy + iz;
        let d = &self.data[base..base + sx + sy + 2];
        let c00 = d[0] + fx * (d[sx] - d[0]);
        let c01 = d[1] + fx * (d[sx + 1] - d[1]);
        let c10 = d[sy] + fx * (d[sx + sy] - d[sy]);
        let c11 = d[sy + 1] + fx * (d[sx + sy + 1] - d[sy + 1]);
        let c0 = c00 + fy * (c10 - c00);
        let c1 = c01 + fy * (c11 - c01);
        c0 + fz * (c1 - c0)
    }
}

/// One path's discounted integral of the Hamiltonian along `(S, I, beta)`,
/// reading the z-derivative field with box-clamped trilinear queries.
#[inline]
fn path_integral(
    hot: &HotParams,
    vz: &Sampler,
    disc: &[f64],
    x0: f64,
    y0: f64,
    beta: &[f64],
) -> (f64, f64) {
    let (mut s, mut i) = (x0, y0);
    let mut acc = 0.0;
    let mut comp = 0.0;
    let mut last_c = 0.0;
    for (k, &w) in disc.iter().enumerate() {
        let b = beta[k];
        let pz = vz.query(s, i, b);
        let xi = (hot.tb * pz).clamp(0.0, hot.cap_l);
        let c = i * i * hot.inv_ybar2
            + 0.5 * xi * xi
            + hot.theta * (hot.beta_hat * (hot.lm - xi) - b) * pz;
        let term = w * c - comp;
        let t = acc + term;
        comp = (t - acc) - term;
        acc = t;
        last_c = c;
        let (ns, ni) = rk4_step(s, i, b, hot.alpha, hot.dt);
        s = ns;
        i = ni;
    }
    (acc, last_c)
}

fn eval_node_with_paths(
    hot: &HotParams,
    vz: &Sampler,
    disc: &[f64],
    x0: f64,
    y0: f64,
    paths: &PathSet,
    n_paths: usize,
) -> NodeEval {
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut sumsq = 0.0;
    let mut tail_sum = 0.0;
    for j in 0..n_paths {
        let (integral, last_c) = path_integral(hot, vz, disc, x0, y0, paths.path(j));
        let term = integral - comp;
        let t = sum + term;
        comp = (t - sum) - term;
        sum = t;
        sumsq += integral * integral;
        tail_sum += last_c;
    }
    let n = n_paths as f64;
    let mean = sum / n;
    let var = ((sumsq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
    NodeEval {
        mean,
        se: (var / n).sqrt(),
        tail_integrand: tail_sum / n,
    }
}

/// Expected discounted Hamiltonian integral from state `q`, evaluated against
/// the previous grid's z-derivative. Path `j` draws from stream
/// `(cfg.seed, j)`; with the default path sharing this matches the paths the
/// full solve uses at `q`'s z-node.
pub fn feynman_kac_value(
    p: &ModelParams,
    cfg: &SolverConfig,
    g_prev: &ValueGrid,
    q: EpidemicState,
) -> Result<f64> {
    cfg.validate(p)?;
    q.validate(p)?;
    // any state of the tabulation box qualifies; cells straddling the simplex
    // diagonal carry filled corner values
    if !(q.x >= g_prev.spec.x_range.0 && q.x <= g_prev.spec.x_range.1)
        || !(q.y >= g_prev.spec.y_range.0 && q.y <= g_prev.spec.y_range.1)
        || !(q.z >= g_prev.spec.z_range.0 && q.z <= g_prev.spec.z_range.1)
    {
        return Err(Error::OutsideGrid);
    }
    let hot = HotParams::new(p, cfg.dt);
    let disc = discount_weights(p.lambda, cfg.dt, cfg.n_steps());
    let (paths, _) = generate_paths(p, cfg, q.z);
    let sampler = Sampler::new(&g_prev.vz, &g_prev.spec);
    let eval = eval_node_with_paths(&hot, &sampler, &disc, q.x, q.y, &paths, cfg.n_paths);
    Ok(eval.mean)
}

/// Runs the value recursion to tolerance or `max_iterations`.
///
/// Non-convergence is not an error: the returned grid is flagged through
/// `converged` and callers decide. Identical inputs give identical output
/// regardless of thread count.
pub fn solve(p: &ModelParams, cfg: &SolverConfig, spec: &GridSpec) -> Result<SolveOutput> {
    crate::model::validate_params(*p)?;
    cfg.validate(p)?;
    spec.validate(p)?;

    let hot = HotParams::new(p, cfg.dt);
    let n_steps = cfg.n_steps();
    let disc = discount_weights(p.lambda, cfg.dt, n_steps);
    let active = spec.active_nodes();
    let v_bound = p.value_bound();

    // Shared mode: one path set per z-node, common increments across nodes.
    let mut total_clamped = 0u64;
    let shared_paths: Vec<PathSet> = if cfg.shared_beta_paths {
        (0..spec.nz)
            .map(|iz| {
                let (ps, clamped) = generate_paths(p, cfg, spec.z_at(iz));
                total_clamped += clamped;
                ps
            })
            .collect()
    } else {
        Vec::new()
    };
    let clamp_fraction = if cfg.shared_beta_paths {
        total_clamped as f64 / (spec.nz * cfg.n_paths * n_steps) as f64
    } else {
        f64::NAN // tracked only in shared mode; per-node paths are an audit device
    };

    let mut grid = ValueGrid::zeros(*spec);
    let mut diag = SolveDiagnostics {
        residual_history: Vec::new(),
        sup_v: 0.0,
        tail_estimate: 0.0,
        tail_bound: p.cost_max() * (-p.lambda * cfg.horizon).exp() / p.lambda,
        tail_ok: false,
        clamp_fraction,
        pre_clamp_min: f64::INFINITY,
        pre_clamp_max: f64::NEG_INFINITY,
    };

    for iter in 0..cfg.max_iterations {
        let evals: Vec<NodeEval> = active
            .par_iter()
            .map(|&(ix, iy, iz)| {
                let x0 = spec.x_at(ix);
                let y0 = spec.y_at(iy);
                let sampler = Sampler::new(&grid.vz, spec);
                if cfg.shared_beta_paths {
                    eval_node_with_paths(
                        &hot,
                        &sampler,
                        &disc,
                        x0,
                        y0,
                        &shared_paths[iz],
                        cfg.n_paths,
                    )
                } else {
                    let node_linear = spec.idx(ix, iy, iz) as u64;
                    let row = n_steps + 1;
                    let mut flat = vec![0.0; cfg.n_paths * row];
                    for (j, chunk) in flat.chunks_mut(row).enumerate() {
                        fill_uncontrolled_path(
                            p,
                            cfg.seed,
                            stream_id_for_node(node_linear, j as u64),
                            spec.z_at(iz),
                            cfg.dt,
                            chunk,
                        );
                    }
                    let ps = PathSet { flat, row };
                    eval_node_with_paths(&hot, &sampler, &disc, x0, y0, &ps, cfg.n_paths)
                }
            })
            .collect();

        // full first sweep (so one iteration from zero is exactly the
        // uncontrolled cost-to-go), under-relaxed afterwards
        let w = if iter == 0 { 1.0 } else { cfg.relaxation };
        let mut residual = 0.0f64;
        let mut tail = 0.0f64;
        for (&(ix, iy, iz), eval) in active.iter().zip(&evals) {
            let i = spec.idx(ix, iy, iz);
            diag.pre_clamp_min = diag.pre_clamp_min.min(eval.mean);
            diag.pre_clamp_max = diag.pre_clamp_max.max(eval.mean);
            // Projection onto the proved value bound; the true solution lies
            // inside, only Monte Carlo noise can step out.
            let new_v = ((1.0 - w) * grid.v[i] + w * eval.mean).clamp(0.0, v_bound);
            residual = residual.max((new_v - grid.v[i]).abs());
            tail = tail.max(eval.tail_integrand.abs());
            grid.v[i] = new_v;
            grid.v_se[i] = eval.se;
        }
        grid.fill_masked();
        grid.recompute_vz();
        grid.iteration = (iter + 1) as u32;
        grid.residual = residual;
        diag.residual_history.push(residual);
        diag.tail_estimate = tail * (-p.lambda * cfg.horizon).exp() / p.lambda;
        if residual < cfg.tolerance {
            grid.converged = true;
            break;
        }
    }

    diag.sup_v = grid.v.iter().cloned().fold(0.0, f64::max);
    diag.tail_ok = diag.tail_estimate <= 0.05 * diag.sup_v;
    Ok(SolveOutput {
        grid,
        diagnostics: diag,
    })
}
