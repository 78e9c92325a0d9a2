//! Matching candidates to reference nodules: sensitivity, diameter bias and
//! positional accuracy.

use std::fmt::Write as _;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::detect::Candidate;
use crate::error::{ensure_positive, Error, Result};
use crate::volume::Grid;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoduleClass {
    Solid,
    Nonsolid,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GroundTruthNodule {
    pub voxel: [usize; 3],
    pub position_mm: [f64; 3],
    pub length_mm: f64,
    pub width_mm: f64,
    pub class: NoduleClass,
    pub effective_diameter_mm: f64,
}

/// Mean of the two measured axes.
pub fn effective_diameter(length_mm: f64, width_mm: f64) -> Result<f64> {
    ensure_positive("width_mm", width_mm)?;
    ensure_positive("length_mm", length_mm)?;
    if length_mm < width_mm {
        return Err(Error::param(
            "length_mm",
            format!("length {length_mm} is shorter than width {width_mm}"),
        ));
    }
    Ok((length_mm + width_mm) / 2.0)
}

impl GroundTruthNodule {
    pub fn new(grid: &Grid, voxel: [usize; 3], length_mm: f64, width_mm: f64, class: NoduleClass) -> Result<Self> {
        Ok(GroundTruthNodule {
            voxel,
            position_mm: grid.position_mm(voxel),
            length_mm,
            width_mm,
            class,
            effective_diameter_mm: effective_diameter(length_mm, width_mm)?,
        })
    }

    /// Nodule given directly in mm, for callers without a voxel grid.
    pub fn at_mm(position_mm: [f64; 3], length_mm: f64, width_mm: f64, class: NoduleClass) -> Result<Self> {
        Ok(GroundTruthNodule {
            voxel: [0; 3],
            position_mm,
            length_mm,
            width_mm,
            class,
            effective_diameter_mm: effective_diameter(length_mm, width_mm)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NoduleMatch {
    pub nodule: GroundTruthNodule,
    pub matched: bool,
    /// Index into the candidate list of the nearest matching candidate.
    pub candidate_index: Option<usize>,
    pub candidate: Option<Candidate>,
    pub distance_mm: Option<f64>,
    /// Nodule effective diameter minus candidate diameter.
    pub diameter_error_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchReport {
    pub nodules: Vec<NoduleMatch>,
    pub matched: usize,
    pub total: usize,
    pub sensitivity: f64,
    pub diameter_bias_mean_mm: Option<f64>,
    /// Sample standard deviation; absent with fewer than two matches.
    pub diameter_bias_sd_mm: Option<f64>,
    pub mean_distance_mm: Option<f64>,
    pub candidate_count: usize,
}

/// A nodule is detected when some candidate lies within half its length.
/// Statistics use the nearest such candidate; ties go to the earlier one.
pub fn match_candidates(truth: &[GroundTruthNodule], cands: &[Candidate]) -> Result<MatchReport> {
    if truth.is_empty() {
        return Err(Error::EmptyTruth);
    }
    let nodules: Vec<NoduleMatch> = truth
        .iter()
        .map(|n| {
            let best = cands
                .iter()
                .enumerate()
                .map(|(i, c)| (i, c.distance_mm(n.position_mm)))
                .filter(|&(_, d)| d <= 0.5 * n.length_mm)
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            match best {
                Some((i, d)) => NoduleMatch {
                    nodule: *n,
                    matched: true,
                    candidate_index: Some(i),
                    candidate: Some(cands[i]),
                    distance_mm: Some(d),
                    diameter_error_mm: Some(n.effective_diameter_mm - cands[i].diameter_mm),
                },
                None => NoduleMatch {
                    nodule: *n,
                    matched: false,
                    candidate_index: None,
                    candidate: None,
                    distance_mm: None,
                    diameter_error_mm: None,
                },
            }
        })
        .collect();
    let errors: Vec<f64> = nodules.iter().filter_map(|m| m.diameter_error_mm).collect();
    let distances: Vec<f64> = nodules.iter().filter_map(|m| m.distance_mm).collect();
    let matched = errors.len();
    let mean = |v: &[f64]| (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64);
    let bias = mean(&errors);
    let sd = match (bias, errors.len()) {
        (Some(m), n) if n >= 2 => Some((errors.iter().map(|e| (e - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()),
        _ => None,
    };
    Ok(MatchReport {
        matched,
        total: truth.len(),
        sensitivity: matched as f64 / truth.len() as f64,
        diameter_bias_mean_mm: bias,
        diameter_bias_sd_mm: sd,
        mean_distance_mm: mean(&distances),
        candidate_count: cands.len(),
        nodules,
    })
}

#[derive(Deserialize)]
struct TruthRow {
    ix: usize,
    iy: usize,
    iz: usize,
    length_mm: f64,
    width_mm: f64,
    class: NoduleClass,
}

pub const TRUTH_CSV_HEADER: &str = "ix,iy,iz,length_mm,width_mm,class";

/// Reads `ix,iy,iz,length_mm,width_mm,class` rows.
pub fn read_truth<R: Read>(r: R, grid: &Grid, source: &Path) -> Result<Vec<GroundTruthNodule>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    rdr.deserialize()
        .enumerate()
        .map(|(line, row)| {
            let row: TruthRow = row.map_err(|e| Error::format(source, e.to_string()))?;
            if row.ix >= grid.dims[0] || row.iy >= grid.dims[1] || row.iz >= grid.dims[2] {
                return Err(Error::format(
                    source,
                    format!("row {}: voxel ({}, {}, {}) outside {grid}", line + 1, row.ix, row.iy, row.iz),
                ));
            }
            GroundTruthNodule::new(grid, [row.ix, row.iy, row.iz], row.length_mm, row.width_mm, row.class)
                .map_err(|e| Error::format(source, format!("row {}: {e}", line + 1)))
        })
        .collect()
}

pub fn read_truth_file(path: &Path, grid: &Grid) -> Result<Vec<GroundTruthNodule>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_truth(f, grid, path)
}

impl MatchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ReportJson::from(self)).expect("report serializes") + "\n"
    }

    pub fn per_nodule_csv(&self) -> String {
        let mut s = String::from(
            "ix,iy,iz,class,effective_diameter_mm,matched,candidate_index,candidate_diameter_mm,distance_mm,diameter_error_mm\n",
        );
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
        for m in &self.nodules {
            let n = &m.nodule;
            let class = match n.class {
                NoduleClass::Solid => "solid",
                NoduleClass::Nonsolid => "nonsolid",
            };
            let _ = writeln!(
                s,
                "{},{},{},{class},{:.4},{},{},{},{},{}",
                n.voxel[0],
                n.voxel[1],
                n.voxel[2],
                n.effective_diameter_mm,
                m.matched,
                m.candidate_index.map_or_else(String::new, |i| i.to_string()),
                opt(m.candidate.map(|c| c.diameter_mm)),
                opt(m.distance_mm),
                opt(m.diameter_error_mm),
            );
        }
        s
    }
}

/// Summary with numbers rounded to 4 decimals for stable diffs.
#[derive(Serialize)]
struct ReportJson {
    matched: usize,
    total: usize,
    sensitivity: f64,
    diameter_bias_mean_mm: Option<f64>,
    diameter_bias_sd_mm: Option<f64>,
    mean_distance_mm: Option<f64>,
    candidate_count: usize,
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

impl From<&MatchReport> for ReportJson {
    fn from(r: &MatchReport) -> Self {
        ReportJson {
            matched: r.matched,
            total: r.total,
            sensitivity: round4(r.sensitivity),
            diameter_bias_mean_mm: r.diameter_bias_mean_mm.map(round4),
            diameter_bias_sd_mm: r.diameter_bias_sd_mm.map(round4),
            mean_distance_mm: r.mean_distance_mm.map(round4),
            candidate_count: r.candidate_count,
        }
    }
}
