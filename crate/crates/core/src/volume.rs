//! Physical-space scalar volumes and binary masks.
//!
//! Voxel data is stored x-fastest, then y, then z. Voxel `(ix, iy, iz)` has its
//! center at `(ix * sx, iy * sy, iz * sz)` millimetres.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_positive, Error, Result};

/// Intensity units carried by a volume.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Units {
    #[serde(rename = "HU")]
    Hu,
    #[serde(rename = "unitless")]
    Unitless,
}

/// Voxel counts and spacing shared by volumes and masks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::param("dims", format!("all extents must be > 0, got {dims:?}")));
        }
        for s in spacing_mm {
            ensure_positive("spacing_mm", s)?;
        }
        Ok(Grid { dims, spacing_mm })
    }

    /// Cubic grid with unit spacing.
    pub fn cube(n: usize) -> Self {
        Grid {
            dims: [n, n, n],
            spacing_mm: [1.0; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ix + self.dims[0] * (iy + self.dims[1] * iz)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let nx = self.dims[0];
        let ny = self.dims[1];
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    /// Voxel center in millimetres.
    pub fn position_mm(&self, voxel: [usize; 3]) -> [f64; 3] {
        [
            voxel[0] as f64 * self.spacing_mm[0],
            voxel[1] as f64 * self.spacing_mm[1],
            voxel[2] as f64 * self.spacing_mm[2],
        ]
    }

    pub fn ensure_matches(&self, other: &Grid) -> Result<()> {
        if self.dims == other.dims && self.spacing_mm == other.spacing_mm {
            Ok(())
        } else {
            Err(Error::GridMismatch {
                left: self.to_string(),
                right: other.to_string(),
            })
        }
    }
}

impl fmt::Display for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [nx, ny, nz] = self.dims;
        let [sx, sy, sz] = self.spacing_mm;
        write!(f, "{nx}x{ny}x{nz} @ ({sx}, {sy}, {sz}) mm")
    }
}

/// A 3D scalar image with physical voxel spacing.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume3D {
    grid: Grid,
    data: Vec<f32>,
    units: Units,
}

impl Volume3D {
    pub fn new(grid: Grid, data: Vec<f32>, units: Units) -> Result<Self> {
        let grid = Grid::new(grid.dims, grid.spacing_mm)?;
        if data.len() != grid.len() {
            return Err(Error::param(
                "data",
                format!("length {} does not match {grid} ({} voxels)", data.len(), grid.len()),
            ));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::param(
                "data",
                format!("non-finite value at voxel {:?}", grid.coords(pos)),
            ));
        }
        Ok(Volume3D { grid, data, units })
    }

    pub fn filled(grid: Grid, value: f32, units: Units) -> Result<Self> {
        Volume3D::new(grid, vec![value; grid.len()], units)
    }

    /// Builds a volume by evaluating `f(ix, iy, iz)` at every voxel.
    pub fn from_fn(grid: Grid, units: Units, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for iz in 0..grid.dims[2] {
            for iy in 0..grid.dims[1] {
                for ix in 0..grid.dims[0] {
                    data.push(f(ix, iy, iz));
                }
            }
        }
        Volume3D::new(grid, data, units)
    }

    /// Wraps already-validated data, skipping the finiteness scan.
    pub(crate) fn from_parts_unchecked(grid: Grid, data: Vec<f32>, units: Units) -> Self {
        debug_assert_eq!(data.len(), grid.len());
        Volume3D { grid, data, units }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.grid.spacing_mm
    }

    pub fn units(&self) -> Units {
        self.units
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize, iz: usize) -> f32 {
        self.data[self.grid.index(ix, iy, iz)]
    }

    /// Largest absolute value in the volume (0 for an all-zero volume).
    pub fn max_abs(&self) -> f32 {
        self.data.iter().fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Voxelwise `a * self + b * other`.
    pub fn linear_combination(&self, a: f32, other: &Volume3D, b: f32) -> Result<Volume3D> {
        self.grid.ensure_matches(&other.grid)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&x, &y)| a * x + b * y)
            .collect();
        Volume3D::new(self.grid, data, self.units)
    }
}

/// Binary membership mask on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask3D {
    grid: Grid,
    data: Vec<bool>,
}

impl Mask3D {
    pub fn new(grid: Grid, data: Vec<bool>) -> Result<Self> {
        let grid = Grid::new(grid.dims, grid.spacing_mm)?;
        if data.len() != grid.len() {
            return Err(Error::param(
                "membership",
                format!("length {} does not match {grid}", data.len()),
            ));
        }
        Ok(Mask3D { grid, data })
    }

    pub fn full(grid: Grid) -> Self {
        Mask3D {
            grid,
            data: vec![true; grid.len()],
        }
    }

    pub fn empty(grid: Grid) -> Self {
        Mask3D {
            grid,
            data: vec![false; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(grid.len());
        for iz in 0..grid.dims[2] {
            for iy in 0..grid.dims[1] {
                for ix in 0..grid.dims[0] {
                    data.push(f(ix, iy, iz));
                }
            }
        }
        Mask3D { grid, data }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn contains(&self, ix: usize, iy: usize, iz: usize) -> bool {
        self.data[self.grid.index(ix, iy, iz)]
    }

    pub fn set(&mut self, ix: usize, iy: usize, iz: usize, value: bool) {
        let i = self.grid.index(ix, iy, iz);
        self.data[i] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// True if every voxel set in `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &Mask3D) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }
}

/// Suppresses intensities above `t`: output voxel is `min(input, t)`.
pub fn window_clamp(v: &Volume3D, t: f64) -> Result<Volume3D> {
    if !t.is_finite() {
        return Err(Error::param("T", format!("window level must be finite, got {t}")));
    }
    let t = t as f32;
    let data = v.data.iter().map(|&x| x.min(t)).collect();
    Ok(Volume3D::from_parts_unchecked(v.grid, data, v.units))
}

/// Dilates `m` with a solid ball of `radius_mm`, measured between voxel
/// centers in physical space.
///
/// Uses an exact separable squared Euclidean distance transform with per-axis
/// spacing, so the result equals brute-force ball stamping.
pub fn dilate_mask(m: &Mask3D, radius_mm: f64) -> Result<Mask3D> {
    if !(radius_mm.is_finite() && radius_mm >= 0.0) {
        return Err(Error::param("radius_mm", format!("must be finite and >= 0, got {radius_mm}")));
    }
    if radius_mm == 0.0 || m.count() == 0 {
        return Ok(m.clone());
    }
    let d2 = squared_distance_to_set(m);
    // Relative slack absorbs rounding when a center lies exactly on the sphere.
    let limit = radius_mm * radius_mm * (1.0 + 1e-12);
    let data = d2.iter().map(|&d| d <= limit).collect();
    Ok(Mask3D { grid: m.grid, data })
}

/// Squared physical distance from every voxel center to the nearest set voxel.
pub fn squared_distance_to_set(m: &Mask3D) -> Vec<f64> {
    let [nx, ny, nz] = m.grid.dims;
    let [sx, sy, sz] = m.grid.spacing_mm;
    let mut f: Vec<f64> = m
        .data
        .iter()
        .map(|&b| if b { 0.0 } else { f64::INFINITY })
        .collect();

    let longest = nx.max(ny).max(nz);
    let mut line = vec![0.0; longest];
    let mut out = vec![0.0; longest];
    let mut env = Envelope::with_capacity(longest);

    // x lines are contiguous
    for row in f.chunks_mut(nx) {
        line[..nx].copy_from_slice(row);
        env.transform(&line[..nx], sx * sx, &mut out[..nx]);
        row.copy_from_slice(&out[..nx]);
    }
    for iz in 0..nz {
        for ix in 0..nx {
            for iy in 0..ny {
                line[iy] = f[ix + nx * (iy + ny * iz)];
            }
            env.transform(&line[..ny], sy * sy, &mut out[..ny]);
            for iy in 0..ny {
                f[ix + nx * (iy + ny * iz)] = out[iy];
            }
        }
    }
    for iy in 0..ny {
        for ix in 0..nx {
            for iz in 0..nz {
                line[iz] = f[ix + nx * (iy + ny * iz)];
            }
            env.transform(&line[..nz], sz * sz, &mut out[..nz]);
            for iz in 0..nz {
                f[ix + nx * (iy + ny * iz)] = out[iz];
            }
        }
    }
    f
}

/// Lower envelope of parabolas for the 1D squared distance transform
/// (Felzenszwalb & Huttenlocher), with `weight` = squared spacing.
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Envelope {
            sites: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n + 1),
        }
    }

    fn transform(&mut self, f: &[f64], weight: f64, out: &mut [f64]) {
        self.sites.clear();
        self.bounds.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            loop {
                match self.sites.last() {
                    None => {
                        self.sites.push(q);
                        self.bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                    Some(&p) => {
                        let s = intersection(f, weight, p, q);
                        if s <= *self.bounds.last().unwrap() {
                            self.sites.pop();
                            self.bounds.pop();
                        } else {
                            self.sites.push(q);
                            self.bounds.push(s);
                            break;
                        }
                    }
                }
            }
        }
        if self.sites.is_empty() {
            out.iter_mut().for_each(|o| *o = f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, o) in out.iter_mut().enumerate() {
            let x = q as f64;
            while k + 1 < self.sites.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let p = self.sites[k];
            let d = x - p as f64;
            *o = f[p] + weight * d * d;
        }
    }
}

fn intersection(f: &[f64], weight: f64, p: usize, q: usize) -> f64 {
    let (pf, qf) = (p as f64, q as f64);
    ((f[q] + weight * qf * qf) - (f[p] + weight * pf * pf)) / (2.0 * weight * (qf - pf))
}
