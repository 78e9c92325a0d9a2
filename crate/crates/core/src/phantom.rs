//! Synthetic volumes built from spheres, cylinders and walls, and the
//! sphere-near-vessel and sphere-near-wall interference sweeps.
//!
//! Positions are in mm with voxel `(i, j, k)` centred at
//! `(i * sx, j * sy, k * sz)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::detect::{detect_streaming, Candidate};
use crate::error::{ensure_positive, Error, Result};
use crate::logfilter::FilterOptions;
use crate::scaleplan::ScalePlan;
use crate::volume::{Grid, Mask3D, Units, Volume3D};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Sphere {
        center_mm: [f64; 3],
        diameter_mm: f64,
    },
    /// Infinite when `length_mm` is `None`; otherwise centred on `point_mm`.
    Cylinder {
        point_mm: [f64; 3],
        axis: [f64; 3],
        diameter_mm: f64,
        #[serde(default)]
        length_mm: Option<f64>,
    },
    /// Solid on the side opposite `normal`, starting at the plane through
    /// `point_mm`; a half-space unless `thickness_mm` is set.
    Wall {
        point_mm: [f64; 3],
        normal: [f64; 3],
        #[serde(default)]
        thickness_mm: Option<f64>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    #[serde(flatten)]
    pub shape: Shape,
    pub intensity: f32,
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn unit(v: [f64; 3], name: &'static str) -> Result<[f64; 3]> {
    let n = dot(v, v).sqrt();
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::param(name, format!("must be a nonzero finite vector, got {v:?}")));
    }
    Ok([v[0] / n, v[1] / n, v[2] / n])
}

impl Primitive {
    pub fn sphere(center_mm: [f64; 3], diameter_mm: f64, intensity: f32) -> Self {
        Primitive {
            shape: Shape::Sphere { center_mm, diameter_mm },
            intensity,
        }
    }

    pub fn cylinder(point_mm: [f64; 3], axis: [f64; 3], diameter_mm: f64, intensity: f32) -> Self {
        Primitive {
            shape: Shape::Cylinder {
                point_mm,
                axis,
                diameter_mm,
                length_mm: None,
            },
            intensity,
        }
    }

    pub fn cylinder_segment(center_mm: [f64; 3], axis: [f64; 3], diameter_mm: f64, length_mm: f64, intensity: f32) -> Self {
        Primitive {
            shape: Shape::Cylinder {
                point_mm: center_mm,
                axis,
                diameter_mm,
                length_mm: Some(length_mm),
            },
            intensity,
        }
    }

    pub fn wall(point_mm: [f64; 3], normal: [f64; 3], intensity: f32) -> Self {
        Primitive {
            shape: Shape::Wall {
                point_mm,
                normal,
                thickness_mm: None,
            },
            intensity,
        }
    }

    fn validate(&self) -> Result<()> {
        if !self.intensity.is_finite() {
            return Err(Error::param("intensity", "must be finite"));
        }
        match self.shape {
            Shape::Sphere { diameter_mm, .. } => ensure_positive("diameter_mm", diameter_mm),
            Shape::Cylinder {
                axis,
                diameter_mm,
                length_mm,
                ..
            } => {
                ensure_positive("diameter_mm", diameter_mm)?;
                unit(axis, "axis")?;
                length_mm.map_or(Ok(()), |l| ensure_positive("length_mm", l))
            }
            Shape::Wall {
                normal, thickness_mm, ..
            } => {
                unit(normal, "normal")?;
                thickness_mm.map_or(Ok(()), |t| ensure_positive("thickness_mm", t))
            }
        }
    }

    /// Signed distance bound: negative inside. Exact inside; outside it never
    /// exceeds the true distance.
    fn signed_distance(&self, p: [f64; 3]) -> f64 {
        match self.shape {
            Shape::Sphere { center_mm, diameter_mm } => dot(sub(p, center_mm), sub(p, center_mm)).sqrt() - diameter_mm / 2.0,
            Shape::Cylinder {
                point_mm,
                axis,
                diameter_mm,
                length_mm,
            } => {
                let a = unit(axis, "axis").expect("validated");
                let d = sub(p, point_mm);
                let t = dot(d, a);
                let radial = (dot(d, d) - t * t).max(0.0).sqrt() - diameter_mm / 2.0;
                match length_mm {
                    None => radial,
                    Some(l) => radial.max(t.abs() - l / 2.0),
                }
            }
            Shape::Wall {
                point_mm,
                normal,
                thickness_mm,
            } => {
                let n = unit(normal, "normal").expect("validated");
                let s = dot(sub(p, point_mm), n);
                match thickness_mm {
                    None => s,
                    Some(t) => s.max(-s - t),
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Composite {
    /// Where primitives overlap the brightest one wins.
    #[default]
    Max,
    /// Contrasts against the background add up.
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub background: f32,
    pub units: Units,
    #[serde(default)]
    pub composite: Composite,
    #[serde(default)]
    pub primitives: Vec<Primitive>,
}

impl Scene {
    pub fn new(grid: Grid, background: f32, units: Units) -> Self {
        Scene {
            dims: grid.dims,
            spacing_mm: grid.spacing_mm,
            background,
            units,
            composite: Composite::Max,
            primitives: Vec::new(),
        }
    }

    pub fn with(mut self, p: Primitive) -> Self {
        self.primitives.push(p);
        self
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.dims, self.spacing_mm)
    }

    /// Voxelizes the scene. Voxels cut by a primitive boundary are averaged
    /// over `supersample^3` evenly spaced sample points.
    pub fn rasterize(&self, supersample: usize) -> Result<Volume3D> {
        if supersample == 0 {
            return Err(Error::param("supersample", "must be >= 1"));
        }
        let grid = self.grid()?;
        if !self.background.is_finite() {
            return Err(Error::param("background", "must be finite"));
        }
        for p in &self.primitives {
            p.validate()?;
        }
        let [nx, ny, _] = grid.dims;
        let h = grid.spacing_mm;
        let half_diag = 0.5 * dot(h, h).sqrt();
        let offsets: Vec<f64> = (0..supersample)
            .map(|i| (i as f64 + 0.5) / supersample as f64 - 0.5)
            .collect();
        let n_samples = (supersample * supersample * supersample) as f64;
        let bg = self.background as f64;

        let mut data = vec![0.0f32; grid.len()];
        data.par_chunks_mut(nx * ny).enumerate().for_each(|(z, plane)| {
            let mut inside = Vec::with_capacity(self.primitives.len());
            let mut partial = Vec::with_capacity(self.primitives.len());
            for y in 0..ny {
                for x in 0..nx {
                    let c = grid.position_mm([x, y, z]);
                    inside.clear();
                    partial.clear();
                    for p in &self.primitives {
                        let sd = p.signed_distance(c);
                        if sd <= -half_diag {
                            inside.push(p);
                        } else if sd < half_diag {
                            partial.push(p);
                        }
                    }
                    let value = if partial.is_empty() {
                        self.combine(bg, inside.iter().map(|p| p.intensity as f64))
                    } else {
                        let mut acc = 0.0;
                        for &oz in &offsets {
                            for &oy in &offsets {
                                for &ox in &offsets {
                                    let s = [c[0] + ox * h[0], c[1] + oy * h[1], c[2] + oz * h[2]];
                                    let covering = inside
                                        .iter()
                                        .chain(partial.iter().filter(|p| p.signed_distance(s) <= 0.0))
                                        .map(|p| p.intensity as f64);
                                    acc += self.combine(bg, covering);
                                }
                            }
                        }
                        acc / n_samples
                    };
                    plane[y * nx + x] = value as f32;
                }
            }
        });
        Volume3D::new(grid, data, self.units)
    }

    fn combine(&self, bg: f64, covering: impl Iterator<Item = f64>) -> f64 {
        match self.composite {
            Composite::Max => covering.fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v)))).unwrap_or(bg),
            Composite::Sum => bg + covering.map(|v| v - bg).sum::<f64>(),
        }
    }
}

/// Settings shared by the interference sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepConfig {
    pub dims: usize,
    pub spacing_mm: f64,
    pub supersample: usize,
    pub plan: ScalePlan,
    /// Candidates below this response (unit contrast) are ignored; this
    /// removes the near-zero maxima of flat background.
    pub min_response: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dims: 128,
            spacing_mm: 1.0,
            supersample: 3,
            plan: ScalePlan::build(5.0, 20.0, 31).expect("valid plan"),
            min_response: 0.25,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub distance_diameters: f64,
    pub response: f64,
    pub size_estimate_mm: f64,
    pub merged: bool,
    pub scale_index: usize,
    pub candidates_near: usize,
}

pub fn sweep_rows_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from("distance_diameters,response,size_estimate_mm,merged,scale_index\n");
    for r in rows {
        s.push_str(&format!(
            "{:.4},{:.4},{:.4},{},{}\n",
            r.distance_diameters, r.response, r.size_estimate_mm, r.merged, r.scale_index
        ));
    }
    s
}

enum Interferer {
    /// Cylinder along z through this (x, y).
    Cylinder([f64; 2]),
    /// Half-space `x <= plane_x`.
    Wall(f64),
}

impl Interferer {
    fn distance(&self, p: [f64; 3]) -> f64 {
        match *self {
            Interferer::Cylinder([x, y]) => ((p[0] - x).powi(2) + (p[1] - y).powi(2)).sqrt(),
            Interferer::Wall(px) => p[0] - px,
        }
    }
}

fn check_distances(distances: &[f64]) -> Result<()> {
    if distances.is_empty() {
        return Err(Error::param("distances", "need at least one distance"));
    }
    for w in distances.windows(2) {
        if !(w[0] > w[1]) {
            return Err(Error::param("distances", "must be sorted in descending order"));
        }
    }
    for &d in distances {
        ensure_positive("distances", d)?;
    }
    Ok(())
}

fn sweep(d: f64, distances: &[f64], cfg: &SweepConfig, place: impl Fn(f64, f64) -> (Primitive, Interferer) + Sync) -> Result<Vec<SweepRow>> {
    ensure_positive("d", d)?;
    check_distances(distances)?;
    let grid = Grid::new([cfg.dims; 3], [cfg.spacing_mm; 3])?;
    let mid = (cfg.dims / 2) as f64 * cfg.spacing_mm;
    let center = [mid; 3];
    let mask = Mask3D::full(grid);
    // each point is a full pipeline run
    distances
        .par_iter()
        .map(|&dist| {
            let (other, interferer) = place(dist, mid);
            let scene = Scene::new(grid, 0.0, Units::Unitless)
                .with(Primitive::sphere(center, d, 1.0))
                .with(other);
            let v = scene.rasterize(cfg.supersample)?;
            let cands = detect_streaming(&v, &mask, &cfg.plan, FilterOptions::default())?;
            Ok(sphere_row(dist, d, center, &interferer, &cands, cfg.min_response))
        })
        .collect()
}

fn sphere_row(dist: f64, d: f64, center: [f64; 3], other: &Interferer, cands: &[Candidate], floor: f64) -> SweepRow {
    let near: Vec<&Candidate> = cands
        .iter()
        .filter(|c| c.response >= floor && c.distance_mm(center) <= d / 2.0)
        .collect();
    let resolved = near.iter().any(|c| c.distance_mm(center) < other.distance(c.position_mm));
    let best = near
        .iter()
        .copied()
        .max_by(|a, b| a.response.total_cmp(&b.response).then(b.distance_mm(center).total_cmp(&a.distance_mm(center))));
    match best {
        Some(c) => SweepRow {
            distance_diameters: dist,
            response: c.response,
            size_estimate_mm: c.diameter_mm,
            merged: !resolved,
            scale_index: c.scale_index,
            candidates_near: near.len(),
        },
        None => SweepRow {
            distance_diameters: dist,
            response: 0.0,
            size_estimate_mm: 0.0,
            merged: true,
            scale_index: 0,
            candidates_near: 0,
        },
    }
}

/// Unit-intensity sphere of diameter `d` next to an equally wide cylinder
/// running along z; `distances` are axis-to-centre distances in sphere
/// diameters.
pub fn sweep_sphere_cylinder(d: f64, distances: &[f64], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    sweep(d, distances, cfg, |dist, mid| {
        let x = mid - dist * d;
        (
            Primitive::cylinder([x, mid, mid], [0.0, 0.0, 1.0], d, 1.0),
            Interferer::Cylinder([x, mid]),
        )
    })
}

/// Unit-intensity sphere of diameter `d` whose centre is `distance * d` from
/// the face of a half-space wall.
pub fn sweep_sphere_wall(d: f64, distances: &[f64], cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    sweep(d, distances, cfg, |dist, mid| {
        let x = mid - dist * d;
        (Primitive::wall([x, mid, mid], [1.0, 0.0, 0.0], 1.0), Interferer::Wall(x))
    })
}

/// Response and size of an isolated sphere under the sweep settings.
pub fn isolated_sphere(d: f64, cfg: &SweepConfig) -> Result<SweepRow> {
    let grid = Grid::new([cfg.dims; 3], [cfg.spacing_mm; 3])?;
    let mid = (cfg.dims / 2) as f64 * cfg.spacing_mm;
    let v = Scene::new(grid, 0.0, Units::Unitless)
        .with(Primitive::sphere([mid; 3], d, 1.0))
        .rasterize(cfg.supersample)?;
    let cands = detect_streaming(&v, &Mask3D::full(grid), &cfg.plan, FilterOptions::default())?;
    // nothing to interfere with: treat the interferer as infinitely far away
    Ok(sphere_row(f64::INFINITY, d, [mid; 3], &Interferer::Wall(f64::NEG_INFINITY), &cands, cfg.min_response))
}
