//! Grid persistence: binary container plus a JSON sidecar.
//!
//! Layout (little-endian):
//! magic `EPIVGRID`, version `u16`, params fingerprint `u64`, the grid spec
//! (`nx ny nz` as `u32`, then the six range bounds and the simplex cap as
//! `f64`), iteration `u32`, residual `f64`, converged flag `u8`, then the
//! `v` and `vz` arrays as `f64` in x-major order. The sidecar `<path>.json`
//! records the generating model parameters and solver configuration for
//! human audit.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridSpec, ValueGrid};
use crate::model::{DriftMode, ModelParams};
use crate::solver::SolverConfig;

const MAGIC: &[u8; 8] = b"EPIVGRID";
const VERSION: u16 = 1;

/// FNV-1a over a canonical byte serialization of everything that shapes a
/// solve; stable across platforms and runs.
pub fn fingerprint(p: &ModelParams, cfg: &SolverConfig, spec: &GridSpec) -> u64 {
    let mut h = Fnv::new();
    for v in [
        p.alpha, p.theta, p.beta_hat, p.gamma, p.sigma_vol, p.lambda, p.cap_l, p.y_bar,
    ] {
        h.push_f64(v);
    }
    h.push_u8(match p.drift_mode {
        DriftMode::Paper => 0,
        DriftMode::Normalized => 1,
    });
    h.push_u64(cfg.n_paths as u64);
    h.push_f64(cfg.dt);
    h.push_f64(cfg.horizon);
    h.push_u64(cfg.max_iterations as u64);
    h.push_f64(cfg.tolerance);
    h.push_u64(cfg.seed);
    h.push_u8(cfg.shared_beta_paths as u8);
    h.push_f64(cfg.relaxation);
    for v in [spec.nx, spec.ny, spec.nz] {
        h.push_u64(v as u64);
    }
    for v in [
        spec.x_range.0,
        spec.x_range.1,
        spec.y_range.0,
        spec.y_range.1,
        spec.z_range.0,
        spec.z_range.1,
        spec.y_simplex_cap,
    ] {
        h.push_f64(v);
    }
    h.finish()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }
    fn push_u8(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x100000001b3);
    }
    fn push_u64(&mut self, v: u64) {
        for b in v.to_le_bytes() {
            self.push_u8(b);
        }
    }
    fn push_f64(&mut self, v: f64) {
        self.push_u64(v.to_bits());
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Sidecar contents: the full generating configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSidecar {
    pub fingerprint: String,
    pub params: ModelParams,
    pub solver: SolverConfig,
    pub grid: GridSpec,
    pub iteration: u32,
    pub residual: f64,
    pub converged: bool,
}

/// A grid loaded from disk together with its stored fingerprint.
#[derive(Debug, Clone)]
pub struct StoredGrid {
    pub grid: ValueGrid,
    pub fingerprint: u64,
}

impl StoredGrid {
    /// Errors unless the stored fingerprint matches the given configuration.
    pub fn verify(&self, p: &ModelParams, cfg: &SolverConfig) -> Result<()> {
        let expected = fingerprint(p, cfg, &self.grid.spec);
        if expected != self.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected,
                found: self.fingerprint,
            });
        }
        Ok(())
    }
}

pub fn save_grid(
    grid: &ValueGrid,
    p: &ModelParams,
    cfg: &SolverConfig,
    path: &Path,
) -> Result<u64> {
    let fp = fingerprint(p, cfg, &grid.spec);
    let spec = grid.spec;
    let mut buf: Vec<u8> = Vec::with_capacity(64 + 16 * grid.v.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&fp.to_le_bytes());
    for v in [spec.nx, spec.ny, spec.nz] {
        buf.extend_from_slice(&(v as u32).to_le_bytes());
    }
    for v in [
        spec.x_range.0,
        spec.x_range.1,
        spec.y_range.0,
        spec.y_range.1,
        spec.z_range.0,
        spec.z_range.1,
        spec.y_simplex_cap,
    ] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    buf.extend_from_slice(&grid.iteration.to_le_bytes());
    buf.extend_from_slice(&grid.residual.to_le_bytes());
    buf.push(grid.converged as u8);
    for v in grid.v.iter().chain(grid.vz.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;

    let sidecar = GridSidecar {
        fingerprint: format!("{fp:016x}"),
        params: *p,
        solver: *cfg,
        grid: spec,
        iteration: grid.iteration,
        residual: grid.residual,
        converged: grid.converged,
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    fs::write(sidecar_path(path), json)?;
    Ok(fp)
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

pub fn load_grid(path: &Path) -> Result<StoredGrid> {
    let mut file = fs::File::open(path)?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf)?;
    let mut r = Reader { buf: &buf, pos: 0 };

    let magic = r.take(8)?;
    if magic != MAGIC {
        return Err(Error::GridFormat("bad magic header".into()));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::GridFormat(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let fp = r.u64()?;
    let nx = r.u32()? as usize;
    let ny = r.u32()? as usize;
    let nz = r.u32()? as usize;
    let mut bounds = [0.0; 7];
    for b in &mut bounds {
        *b = r.f64()?;
    }
    let spec = GridSpec {
        nx,
        ny,
        nz,
        x_range: (bounds[0], bounds[1]),
        y_range: (bounds[2], bounds[3]),
        z_range: (bounds[4], bounds[5]),
        y_simplex_cap: bounds[6],
    };
    let iteration = r.u32()?;
    let residual = r.f64()?;
    let converged = r.take(1)?[0] != 0;
    let n = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nz))
        .ok_or_else(|| Error::GridFormat("node count overflow".into()))?;
    let mut v = vec![0.0; n];
    for slot in &mut v {
        *slot = r.f64()?;
    }
    let mut vz = vec![0.0; n];
    for slot in &mut vz {
        *slot = r.f64()?;
    }
    if r.pos != buf.len() {
        return Err(Error::GridFormat("trailing bytes".into()));
    }
    Ok(StoredGrid {
        grid: ValueGrid {
            spec,
            v,
            vz,
            v_se: vec![0.0; n],
            iteration,
            residual,
            converged,
        },
        fingerprint: fp,
    })
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::GridFormat("truncated file".into()));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
