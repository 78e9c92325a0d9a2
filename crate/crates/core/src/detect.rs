//! Candidates as local maxima of the response over space and scale.
//!
//! A point at an interior scale is kept when its response is at least that
//! of its 26 neighbours at the same scale and of the 7-point stencil (centre
//! plus face neighbours) at the scales directly below and above.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::Path;

use log::debug;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analytic::matched_diameter;
use crate::error::{Error, Result};
use crate::logfilter::{FilterBank, FilterOptions, ResponseStack};
use crate::scaleplan::{ScaleEntry, ScalePlan};
use crate::volume::{dilate_mask, window_clamp, Grid, Mask3D, Volume3D};

pub const SOLID_THRESHOLD: f64 = 226.0;
pub const NONSOLID_WINDOW_HU: f64 = -700.0;
pub const DEFAULT_DILATION_MM: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub voxel: [usize; 3],
    pub position_mm: [f64; 3],
    pub scale_index: usize,
    pub sigma_mm: f64,
    pub diameter_mm: f64,
    pub response: f64,
}

impl Candidate {
    fn new(grid: &Grid, voxel: [usize; 3], entry: &ScaleEntry, response: f32) -> Self {
        Candidate {
            voxel,
            position_mm: grid.position_mm(voxel),
            scale_index: entry.index,
            sigma_mm: entry.sigma_mm,
            diameter_mm: matched_diameter(entry.sigma_mm),
            response: response as f64,
        }
    }

    /// Euclidean distance in mm to a physical position.
    pub fn distance_mm(&self, p: [f64; 3]) -> f64 {
        (0..3).map(|a| (self.position_mm[a] - p[a]).powi(2)).sum::<f64>().sqrt()
    }

    fn order_key(&self) -> (usize, usize, usize, usize) {
        (self.scale_index, self.voxel[2], self.voxel[1], self.voxel[0])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionConfig {
    pub response_threshold: Option<f64>,
    pub window_t: Option<f64>,
    pub dilation_radius_mm: f64,
    #[serde(skip)]
    pub filter: FilterOptions,
}

impl DetectionConfig {
    pub fn solid() -> Self {
        DetectionConfig {
            response_threshold: Some(SOLID_THRESHOLD),
            window_t: None,
            dilation_radius_mm: DEFAULT_DILATION_MM,
            filter: FilterOptions::default(),
        }
    }

    pub fn nonsolid() -> Self {
        DetectionConfig {
            response_threshold: None,
            window_t: Some(NONSOLID_WINDOW_HU),
            dilation_radius_mm: DEFAULT_DILATION_MM,
            filter: FilterOptions::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(t) = self.response_threshold {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Error::param("response_threshold", format!("must be finite and >= 0, got {t}")));
            }
        }
        if !(self.dilation_radius_mm.is_finite() && self.dilation_radius_mm >= 0.0) {
            return Err(Error::param(
                "dilation_radius_mm",
                format!("must be finite and >= 0, got {}", self.dilation_radius_mm),
            ));
        }
        Ok(())
    }
}

/// Candidates of one interior scale given the responses at that scale and
/// its two neighbours. Output is sorted by (z, y, x) and plateau-deduplicated.
pub fn maxima_at_scale(below: &[f32], cur: &[f32], above: &[f32], mask: &Mask3D, entry: &ScaleEntry) -> Vec<Candidate> {
    let grid = *mask.grid();
    let [nx, ny, nz] = grid.dims;
    if nx < 3 || ny < 3 || nz < 3 {
        return Vec::new();
    }
    let sx = 1isize;
    let sy = nx as isize;
    let sz = (nx * ny) as isize;
    let same: Vec<isize> = (-1..=1)
        .flat_map(|dz| (-1..=1).flat_map(move |dy| (-1..=1).map(move |dx| dz * sz + dy * sy + dx * sx)))
        .filter(|&o| o != 0)
        .collect();
    let faces = [0, sx, -sx, sy, -sy, sz, -sz];

    let raw: Vec<Candidate> = (1..nz - 1)
        .into_par_iter()
        .flat_map_iter(|z| {
            let mut out = Vec::new();
            for y in 1..ny - 1 {
                for x in 1..nx - 1 {
                    if !mask.contains(x, y, z) {
                        continue;
                    }
                    let i = grid.index(x, y, z) as isize;
                    let c = cur[i as usize];
                    // flat or negative responses are not blobs
                    if !(c > 0.0) {
                        continue;
                    }
                    let ok = same.iter().all(|&o| cur[(i + o) as usize] <= c)
                        && faces
                            .iter()
                            .all(|&o| below[(i + o) as usize] <= c && above[(i + o) as usize] <= c);
                    if ok {
                        out.push(Candidate::new(&grid, [x, y, z], entry, c));
                    }
                }
            }
            out
        })
        .collect();
    dedup_plateaus(raw, &grid)
}

/// Collapses 26-connected clusters of equal-response candidates to the
/// cluster member that is smallest in (z, y, x) order. Input must be sorted.
fn dedup_plateaus(cands: Vec<Candidate>, grid: &Grid) -> Vec<Candidate> {
    if cands.len() < 2 {
        return cands;
    }
    let pos: HashMap<usize, usize> = cands
        .iter()
        .enumerate()
        .map(|(k, c)| (grid.index(c.voxel[0], c.voxel[1], c.voxel[2]), k))
        .collect();
    let mut parent: Vec<usize> = (0..cands.len()).collect();
    fn root(parent: &mut [usize], mut k: usize) -> usize {
        while parent[k] != k {
            parent[k] = parent[parent[k]];
            k = parent[k];
        }
        k
    }
    for (k, c) in cands.iter().enumerate() {
        let [x, y, z] = c.voxel;
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (xx, yy, zz) = (x as isize + dx, y as isize + dy, z as isize + dz);
                    if xx < 0 || yy < 0 || zz < 0 {
                        continue;
                    }
                    let (xx, yy, zz) = (xx as usize, yy as usize, zz as usize);
                    if xx >= grid.dims[0] || yy >= grid.dims[1] || zz >= grid.dims[2] {
                        continue;
                    }
                    if let Some(&j) = pos.get(&grid.index(xx, yy, zz)) {
                        if (cands[j].response - c.response).abs() <= 1e-9 {
                            let (a, b) = (root(&mut parent, k), root(&mut parent, j));
                            // the smaller index is earlier in (z, y, x) order
                            parent[a.max(b)] = a.min(b);
                        }
                    }
                }
            }
        }
    }
    cands
        .iter()
        .enumerate()
        .filter(|&(k, _)| root(&mut parent, k) == k)
        .map(|(_, c)| *c)
        .collect()
}

fn check_inputs(grid: &Grid, mask: &Mask3D, plan: &ScalePlan) -> Result<()> {
    if plan.len() < 3 {
        return Err(Error::TooFewScales {
            required: 3,
            got: plan.len(),
        });
    }
    grid.ensure_matches(mask.grid())
}

/// Unthresholded candidates from a full response stack.
pub fn find_local_maxima(stack: &ResponseStack, mask: &Mask3D) -> Result<Vec<Candidate>> {
    if stack.len() < 3 {
        return Err(Error::TooFewScales {
            required: 3,
            got: stack.len(),
        });
    }
    check_inputs(stack.grid(), mask, &stack.plan)?;
    let mut out = Vec::new();
    for i in stack.plan.interior() {
        out.extend(maxima_at_scale(
            stack.responses[i - 1].data(),
            stack.responses[i].data(),
            stack.responses[i + 1].data(),
            mask,
            &stack.plan.entries[i],
        ));
    }
    Ok(out)
}

/// Unthresholded candidates, computing scales in ascending order and holding
/// at most three response volumes at a time.
pub fn detect_streaming(v: &Volume3D, mask: &Mask3D, plan: &ScalePlan, opts: FilterOptions) -> Result<Vec<Candidate>> {
    check_inputs(v.grid(), mask, plan)?;
    for w in crate::logfilter::subvoxel_warnings(v.grid(), plan) {
        log::warn!("{w}");
    }
    let mut out = Vec::new();
    if mask.count() == 0 {
        return Ok(out);
    }
    let bank = FilterBank::new(v, plan.max_sigma(), opts)?;
    let respond = |i: usize| bank.response(plan.entries[i].sigma_mm);
    let mut window = [respond(0)?, respond(1)?, respond(2)?];
    for i in plan.interior() {
        if i > 1 {
            let next = respond(i + 1)?;
            window.rotate_left(1);
            window[2] = next;
        }
        let found = maxima_at_scale(window[0].data(), window[1].data(), window[2].data(), mask, &plan.entries[i]);
        debug!("scale {}: {} candidates", i, found.len());
        out.extend(found);
    }
    sort_candidates(&mut out);
    Ok(out)
}

pub fn sort_candidates(cands: &mut [Candidate]) {
    cands.sort_by_key(|c| c.order_key());
}

/// Keeps candidates with `response >= threshold`, preserving order.
pub fn apply_threshold(cands: Vec<Candidate>, threshold: f64) -> Vec<Candidate> {
    cands.into_iter().filter(|c| c.response >= threshold).collect()
}

/// Responses at or below this fraction of the input intensity range are
/// treated as FFT roundoff on flat regions.
pub const ROUNDOFF_FLOOR_REL: f64 = 1e-6;

fn roundoff_floor(v: &Volume3D) -> f64 {
    let (lo, hi) = v
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    if hi > lo {
        ROUNDOFF_FLOOR_REL * (hi as f64 - lo as f64)
    } else {
        0.0
    }
}

fn run_pipeline(v: &Volume3D, mask: &Mask3D, plan: &ScalePlan, cfg: &DetectionConfig) -> Result<Vec<Candidate>> {
    cfg.validate()?;
    let region = dilate_mask(mask, cfg.dilation_radius_mm)?;
    let floor = roundoff_floor(v);
    let mut cands = detect_streaming(v, &region, plan, cfg.filter)?;
    cands.retain(|c| c.response > floor);
    Ok(match cfg.response_threshold {
        Some(t) => apply_threshold(cands, t),
        None => cands,
    })
}

/// Solid-nodule pipeline: dilate mask, filter, find maxima, threshold.
pub fn detect_solid(v: &Volume3D, mask: &Mask3D, plan: &ScalePlan, cfg: &DetectionConfig) -> Result<Vec<Candidate>> {
    if cfg.window_t.is_some() {
        return Err(Error::param("window_t", "solid detection takes no intensity window"));
    }
    run_pipeline(v, mask, plan, cfg)
}

/// Nonsolid pipeline: clamp intensities at the window level, then the solid
/// pipeline.
pub fn detect_nonsolid(v: &Volume3D, mask: &Mask3D, plan: &ScalePlan, cfg: &DetectionConfig) -> Result<Vec<Candidate>> {
    let t = cfg
        .window_t
        .ok_or_else(|| Error::param("window_t", "nonsolid detection needs an intensity window"))?;
    let clamped = window_clamp(v, t)?;
    run_pipeline(&clamped, mask, plan, cfg)
}

pub const CANDIDATE_CSV_HEADER: &str = "x_mm,y_mm,z_mm,ix,iy,iz,scale_index,sigma_mm,diameter_mm,response";

pub fn write_candidates<W: Write>(mut w: W, cands: &[Candidate]) -> std::io::Result<()> {
    writeln!(w, "{CANDIDATE_CSV_HEADER}")?;
    for c in cands {
        let [x, y, z] = c.position_mm;
        let [ix, iy, iz] = c.voxel;
        writeln!(
            w,
            "{x:.4},{y:.4},{z:.4},{ix},{iy},{iz},{},{:.4},{:.4},{:.4}",
            c.scale_index, c.sigma_mm, c.diameter_mm, c.response
        )?;
    }
    Ok(())
}

pub fn write_candidates_file(path: &Path, cands: &[Candidate]) -> Result<()> {
    let mut buf = Vec::new();
    write_candidates(&mut buf, cands).expect("writing to memory");
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

#[derive(Deserialize)]
struct CandidateRow {
    x_mm: f64,
    y_mm: f64,
    z_mm: f64,
    ix: usize,
    iy: usize,
    iz: usize,
    scale_index: usize,
    sigma_mm: f64,
    diameter_mm: f64,
    response: f64,
}

pub fn read_candidates<R: BufRead>(r: R, source: &Path) -> Result<Vec<Candidate>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr
        .headers()
        .map_err(|e| Error::format(source, e.to_string()))?
        .iter()
        .collect::<Vec<_>>()
        .join(",");
    if headers != CANDIDATE_CSV_HEADER {
        return Err(Error::format(source, format!("unexpected header `{headers}`")));
    }
    rdr.deserialize()
        .map(|row| {
            let row: CandidateRow = row.map_err(|e| Error::format(source, e.to_string()))?;
            Ok(Candidate {
                voxel: [row.ix, row.iy, row.iz],
                position_mm: [row.x_mm, row.y_mm, row.z_mm],
                scale_index: row.scale_index,
                sigma_mm: row.sigma_mm,
                diameter_mm: row.diameter_mm,
                response: row.response,
            })
        })
        .collect()
}

pub fn read_candidates_file(path: &Path) -> Result<Vec<Candidate>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_candidates(std::io::BufReader::new(f), path)
}
