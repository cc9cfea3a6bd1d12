//! Masked 3D value grid and trilinear interpolation.
//!
//! Values are tabulated on a uniform grid over a box strictly inside the
//! state domain. A node is active when its `(x, y)` coordinates satisfy
//! `x + y <= y_simplex_cap`; only active nodes are solved. Nodes above the
//! cap are filled by constant extrapolation along `y` (then along `x` for
//! fully masked rows) so that cells straddling the diagonal still carry
//! usable corner values for interpolation.
//!
//! Storage is x-major: index `(ix * ny + iy) * nz + iz`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{EpidemicState, ModelParams};

/// Node counts, axis ranges, and the simplex mask cap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    /// Node `(ix, iy)` is active iff `x + y <= y_simplex_cap`.
    pub y_simplex_cap: f64,
}

impl GridSpec {
    /// Default tabulation box: the experiments' initial state lies inside.
    pub fn default_box(nx: usize, ny: usize, nz: usize) -> Self {
        Self {
            nx,
            ny,
            nz,
            x_range: (0.005, 0.995),
            y_range: (0.005, 0.995),
            z_range: (0.004, 0.156),
            y_simplex_cap: 0.995,
        }
    }

    pub fn validate(&self, p: &ModelParams) -> Result<()> {
        if self.nx < 3 || self.ny < 3 || self.nz < 3 {
            return Err(Error::InvalidGrid("node counts must be at least 3"));
        }
        let open_unit = |r: (f64, f64)| r.0 > 0.0 && r.1 < 1.0 && r.0 < r.1;
        if !open_unit(self.x_range) {
            return Err(Error::InvalidGrid("x_range must lie strictly inside (0,1)"));
        }
        if !open_unit(self.y_range) {
            return Err(Error::InvalidGrid("y_range must lie strictly inside (0,1)"));
        }
        if !(self.z_range.0 > 0.0 && self.z_range.1 < p.gamma && self.z_range.0 < self.z_range.1)
        {
            return Err(Error::InvalidGrid(
                "z_range must lie strictly inside (0,gamma)",
            ));
        }
        if !(self.y_simplex_cap < 1.0) {
            return Err(Error::InvalidGrid("y_simplex_cap must be below 1"));
        }
        if !(self.x_range.0 + self.y_range.0 <= self.y_simplex_cap) {
            return Err(Error::InvalidGrid("mask excludes the whole grid"));
        }
        Ok(())
    }

    #[inline]
    pub fn x_at(&self, i: usize) -> f64 {
        lerp_node(self.x_range, self.nx, i)
    }

    #[inline]
    pub fn y_at(&self, i: usize) -> f64 {
        lerp_node(self.y_range, self.ny, i)
    }

    #[inline]
    pub fn z_at(&self, i: usize) -> f64 {
        lerp_node(self.z_range, self.nz, i)
    }

    #[inline]
    pub fn dz(&self) -> f64 {
        (self.z_range.1 - self.z_range.0) / (self.nz - 1) as f64
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.ny + iy) * self.nz + iz
    }

    /// Whether the `(ix, iy)` column satisfies the simplex mask.
    #[inline]
    pub fn column_active(&self, ix: usize, iy: usize) -> bool {
        self.x_at(ix) + self.y_at(iy) <= self.y_simplex_cap + 1e-12
    }

    /// Number of active `y` nodes in row `ix` (they are contiguous from 0).
    pub fn active_y_count(&self, ix: usize) -> usize {
        (0..self.ny)
            .take_while(|&iy| self.column_active(ix, iy))
            .count()
    }

    /// All active `(ix, iy, iz)` triples, in index order.
    pub fn active_nodes(&self) -> Vec<(usize, usize, usize)> {
        let mut nodes = Vec::new();
        for ix in 0..self.nx {
            for iy in 0..self.active_y_count(ix) {
                for iz in 0..self.nz {
                    nodes.push((ix, iy, iz));
                }
            }
        }
        nodes
    }

    #[inline]
    fn inside_box(&self, x: f64, y: f64, z: f64) -> bool {
        x >= self.x_range.0
            && x <= self.x_range.1
            && y >= self.y_range.0
            && y <= self.y_range.1
            && z >= self.z_range.0
            && z <= self.z_range.1
    }
}

#[inline]
fn lerp_node(range: (f64, f64), n: usize, i: usize) -> f64 {
    // exact endpoints; a naive lerp can overshoot range.1 by one ulp
    if i == n - 1 {
        range.1
    } else {
        range.0 + (range.1 - range.0) * i as f64 / (n - 1) as f64
    }
}

/// Cell index and fractional offset of a coordinate (assumed inside range).
/// Offsets within 1e-9 of a node snap onto it, keeping node queries exact.
#[inline]
fn locate(v: f64, range: (f64, f64), n: usize) -> (usize, f64) {
    let t = (v - range.0) / (range.1 - range.0) * (n - 1) as f64;
    let i = (t as usize).min(n - 2);
    let mut f = t - i as f64;
    if f < 1e-9 {
        f = 0.0;
    } else if f > 1.0 - 1e-9 {
        f = 1.0;
    }
    (i, f)
}

/// Which tabulated field to interpolate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridField {
    Value,
    ZDerivative,
}

/// Tabulated value function and its z-derivative.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrid {
    pub spec: GridSpec,
    /// Value per node, x-major.
    pub v: Vec<f64>,
    /// z-derivative per node, x-major.
    pub vz: Vec<f64>,
    /// Monte Carlo standard error of `v` per node (last sweep); not persisted.
    pub v_se: Vec<f64>,
    /// Completed solver iterations.
    pub iteration: u32,
    /// Sup-norm change of `v` at the last sweep.
    pub residual: f64,
    /// Whether the solver met its tolerance.
    pub converged: bool,
}

impl ValueGrid {
    pub fn zeros(spec: GridSpec) -> Self {
        let n = spec.n_nodes();
        Self {
            spec,
            v: vec![0.0; n],
            vz: vec![0.0; n],
            v_se: vec![0.0; n],
            iteration: 0,
            residual: f64::INFINITY,
            converged: false,
        }
    }

    #[inline]
    fn field(&self, field: GridField) -> &[f64] {
        match field {
            GridField::Value => &self.v,
            GridField::ZDerivative => &self.vz,
        }
    }

    /// Trilinear interpolation over the 8 enclosing nodes; exact at nodes and
    /// for fields affine in `(x, y, z)`. Queries outside the box or above the
    /// simplex cap are rejected; the caller decides whether to clamp.
    pub fn interpolate(&self, q: EpidemicState, field: GridField) -> Result<f64> {
        if !self.spec.inside_box(q.x, q.y, q.z) || q.x + q.y > self.spec.y_simplex_cap + 1e-12 {
            return Err(Error::OutsideGrid);
        }
        Ok(trilinear(self.field(field), &self.spec, q.x, q.y, q.z))
    }

    /// Interpolation with the query clamped to the tabulation box. Used along
    /// simulated paths, where the dynamics may leave the finite box; the
    /// dynamics themselves are never modified.
    #[inline]
    pub fn interpolate_clamped(&self, field: GridField, x: f64, y: f64, z: f64) -> f64 {
        let data = self.field(field);
        let (x, y, z) = clamp_to_box(&self.spec, x, y, z);
        trilinear(data, &self.spec, x, y, z)
    }

    /// Recomputes the stored z-derivative from `v` by central differences,
    /// one-sided at the z boundaries.
    pub fn recompute_vz(&mut self) {
        let spec = self.spec;
        let dz = spec.dz();
        for ix in 0..spec.nx {
            for iy in 0..spec.ny {
                for iz in 0..spec.nz {
                    let i = spec.idx(ix, iy, iz);
                    self.vz[i] = if iz == 0 {
                        (self.v[spec.idx(ix, iy, 1)] - self.v[i]) / dz
                    } else if iz == spec.nz - 1 {
                        (self.v[i] - self.v[spec.idx(ix, iy, iz - 1)]) / dz
                    } else {
                        (self.v[spec.idx(ix, iy, iz + 1)] - self.v[spec.idx(ix, iy, iz - 1)])
                            / (2.0 * dz)
                    };
                }
            }
        }
    }

    /// Extends `v` over masked nodes: constant along `y` past the last active
    /// node of each row, whole-row copy for fully masked rows. Keeps the
    /// interpolant defined on every cell of the box.
    pub fn fill_masked(&mut self) {
        let spec = self.spec;
        for ix in 0..spec.nx {
            let m = spec.active_y_count(ix);
            if m == 0 {
                debug_assert!(ix > 0, "mask excludes the whole grid");
                for iy in 0..spec.ny {
                    for iz in 0..spec.nz {
                        self.v[spec.idx(ix, iy, iz)] = self.v[spec.idx(ix - 1, iy, iz)];
                        self.v_se[spec.idx(ix, iy, iz)] = self.v_se[spec.idx(ix - 1, iy, iz)];
                    }
                }
            } else {
                for iy in m..spec.ny {
                    for iz in 0..spec.nz {
                        self.v[spec.idx(ix, iy, iz)] = self.v[spec.idx(ix, m - 1, iz)];
                        self.v_se[spec.idx(ix, iy, iz)] = self.v_se[spec.idx(ix, m - 1, iz)];
                    }
                }
            }
        }
    }
}

#[inline]
fn clamp_to_box(spec: &GridSpec, x: f64, y: f64, z: f64) -> (f64, f64, f64) {
    (
        x.clamp(spec.x_range.0, spec.x_range.1),
        y.clamp(spec.y_range.0, spec.y_range.1),
        z.clamp(spec.z_range.0, spec.z_range.1),
    )
}

#[inline]
pub(crate) fn trilinear(data: &[f64], spec: &GridSpec, x: f64, y: f64, z: f64) -> f64 {
    let (ix, fx) = locate(x, spec.x_range, spec.nx);
    let (iy, fy) = locate(y, spec.y_range, spec.ny);
    let (iz, fz) = locate(z, spec.z_range, spec.nz);
    let sz = 1;
    let sy = spec.nz;
    let sx = spec.ny * spec.nz;
    let base = ix * sx + iy * sy + iz * sz;
    let c000 = data[base];
    let c001 = data[base + sz];
    let c010 = data[base + sy];
    let c011 = data[base + sy + sz];
    let c100 = data[base + sx];
    let c101 = data[base + sx + sz];
    let c110 = data[base + sx + sy];
    let c111 = data[base + sx + sy + sz];
    let c00 = c000 + fx * (c100 - c000);
    let c01 = c001 + fx * (c101 - c001);
    let c10 = c010 + fx * (c110 - c010);
    let c11 = c011 + fx * (c111 - c011);
    let c0 = c00 + fy * (c10 - c00);
    let c1 = c01 + fy * (c11 - c01);
    c0 + fz * (c1 - c0)
}
