//! Quantized scale ladders: sphere diameters in geometric progression, the
//! matching LoG scales, and the diameter range each scale is responsible for.

use std::fmt::{self, Write as _};

use serde::Serialize;

use crate::analytic::{dip_diameter, matched_sigma, SHAPE_CONFUSION_K};
use crate::error::{ensure_positive, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScaleEntry {
    pub index: usize,
    pub diameter_mm: f64,
    pub sigma_mm: f64,
    /// Assigned diameter range; `None` on boundary entries.
    pub range_lo_mm: Option<f64>,
    pub range_hi_mm: Option<f64>,
    pub boundary: bool,
}

/// Ordered scale set with one leading and one trailing boundary scale.
///
/// Entry `0` and entry `n + 1` are boundary scales; they are only used as
/// scale-space neighbours and never produce candidates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalePlan {
    pub k: f64,
    pub entries: Vec<ScaleEntry>,
}

impl ScalePlan {
    /// `n_scales` interior diameters from `d_min` to `d_max` in geometric
    /// progression, plus the boundary scales `d_min / k` and `d_max * k`.
    pub fn build(d_min: f64, d_max: f64, n_scales: usize) -> Result<Self> {
        ensure_positive("d_min", d_min)?;
        ensure_positive("d_max", d_max)?;
        if d_min >= d_max {
            return Err(Error::param("d_min", format!("must be < d_max ({d_min} >= {d_max})")));
        }
        if n_scales < 2 {
            return Err(Error::param("n_scales", format!("need at least 2, got {n_scales}")));
        }
        let k = (d_max / d_min).powf(1.0 / (n_scales - 1) as f64);
        let diameters: Vec<f64> = (0..n_scales + 2)
            .map(|i| match i {
                // pin the end points exactly
                1 => d_min,
                i if i == n_scales => d_max,
                i => d_min * k.powi(i as i32 - 1),
            })
            .collect();
        let sigmas: Vec<f64> = diameters.iter().map(|&d| matched_sigma(d)).collect();

        let last = n_scales + 1;
        let mut entries = Vec::with_capacity(n_scales + 2);
        for i in 0..=last {
            let boundary = i == 0 || i == last;
            let (lo, hi) = if boundary {
                (None, None)
            } else {
                (
                    Some(dip_diameter(sigmas[i - 1], sigmas[i])?),
                    Some(dip_diameter(sigmas[i], sigmas[i + 1])?),
                )
            };
            entries.push(ScaleEntry {
                index: i,
                diameter_mm: diameters[i],
                sigma_mm: sigmas[i],
                range_lo_mm: lo,
                range_hi_mm: hi,
                boundary,
            });
        }
        Ok(ScalePlan { k, entries })
    }

    /// The operating point used for solid and nonsolid detection: 3-25 mm in 10 scales.
    pub fn default_operating() -> Self {
        ScalePlan::build(3.0, 25.0, 10).expect("default plan is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn sigmas(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.sigma_mm).collect()
    }

    pub fn max_sigma(&self) -> f64 {
        self.entries.iter().map(|e| e.sigma_mm).fold(0.0, f64::max)
    }

    /// Indices of the candidate-producing entries.
    pub fn interior(&self) -> std::ops::Range<usize> {
        1..self.entries.len().saturating_sub(1)
    }

    /// Checks the structural invariants and the shape-confusion bound `max_k`.
    pub fn validate(&self, max_k: f64) -> Vec<PlanViolation> {
        let mut out = Vec::new();
        let n = self.entries.len();
        if n < 3 {
            out.push(PlanViolation::Layout(format!("{n} entries; need 2 boundary + >= 1 interior")));
            return out;
        }
        if !(self.k <= max_k) {
            out.push(PlanViolation::ShapeConfusion { k: self.k, max_k });
        }
        for (i, e) in self.entries.iter().enumerate() {
            let expect_boundary = i == 0 || i == n - 1;
            if e.index != i || e.boundary != expect_boundary {
                out.push(PlanViolation::Layout(format!(
                    "entry {i}: index {} boundary {} (expected boundary {expect_boundary})",
                    e.index, e.boundary
                )));
            }
            if (e.sigma_mm - matched_sigma(e.diameter_mm)).abs() > 1e-9 * e.diameter_mm {
                out.push(PlanViolation::Sigma { index: i });
            }
            if i > 0 {
                let prev = &self.entries[i - 1];
                let ratio = e.diameter_mm / prev.diameter_mm;
                if !(e.diameter_mm > prev.diameter_mm) || (ratio - self.k).abs() > 1e-9 {
                    out.push(PlanViolation::Ratio { index: i, ratio, k: self.k });
                }
            }
            match (expect_boundary, e.range_lo_mm, e.range_hi_mm) {
                (true, None, None) => {}
                (true, ..) => out.push(PlanViolation::Layout(format!("boundary entry {i} carries a range"))),
                (false, Some(lo), Some(hi)) => {
                    let ok = lo < e.diameter_mm && e.diameter_mm < hi;
                    if !ok {
                        out.push(PlanViolation::Range { index: i, lo, hi });
                    }
                    if i > 1 {
                        if let Some(prev_hi) = self.entries[i - 1].range_hi_mm {
                            if (prev_hi - lo).abs() > 1e-9 * lo {
                                out.push(PlanViolation::Gap { index: i, prev_hi, lo });
                            }
                        }
                    }
                }
                (false, ..) => out.push(PlanViolation::Layout(format!("interior entry {i} lacks a range"))),
            }
        }
        out
    }

    /// Index of the interior entry whose range holds `d`. A diameter on a
    /// shared range boundary goes to the smaller scale.
    pub fn assign_size(&self, d: f64) -> Result<usize> {
        let interior = &self.entries[self.interior()];
        let (lo, hi) = match (interior.first(), interior.last()) {
            (Some(first), Some(last)) => (first.range_lo_mm.unwrap_or(0.0), last.range_hi_mm.unwrap_or(0.0)),
            _ => return Err(Error::TooFewScales { required: 3, got: self.len() }),
        };
        if !(d >= lo && d <= hi) {
            return Err(Error::OutOfRange { diameter_mm: d, lo, hi });
        }
        interior
            .iter()
            .find(|e| d <= e.range_hi_mm.unwrap_or(f64::INFINITY))
            .map(|e| e.index)
            .ok_or(Error::OutOfRange { diameter_mm: d, lo, hi })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,diameter_mm,sigma_mm,range_lo_mm,range_hi_mm,boundary\n");
        let opt = |v: Option<f64>| v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.4}"));
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{:.4},{:.4},{},{},{}",
                e.index,
                e.diameter_mm,
                e.sigma_mm,
                opt(e.range_lo_mm),
                opt(e.range_hi_mm),
                e.boundary
            );
        }
        s
    }

    /// Plain-text table in the layout of the published quantization table.
    pub fn to_table(&self) -> String {
        let mut s = format!("k = {:.4}\n{:<20} {:>8} {:>8}  {}\n", self.k, "i", "d_i, mm", "sigma_i", "range_i, mm");
        for e in &self.entries {
            let label = if e.boundary {
                format!("{} (boundary scale)", e.index)
            } else {
                e.index.to_string()
            };
            let range = match (e.range_lo_mm, e.range_hi_mm) {
                (Some(lo), Some(hi)) => format!("{lo:.2} - {hi:.2}"),
                _ => "N/A".to_owned(),
            };
            let _ = writeln!(s, "{label:<20} {:>8.2} {:>8.2}  {range}", e.diameter_mm, e.sigma_mm);
        }
        s
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum PlanViolation {
    ShapeConfusion { k: f64, max_k: f64 },
    Ratio { index: usize, ratio: f64, k: f64 },
    Sigma { index: usize },
    Range { index: usize, lo: f64, hi: f64 },
    Gap { index: usize, prev_hi: f64, lo: f64 },
    Layout(String),
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::ShapeConfusion { k, max_k } => {
                write!(f, "shape-confusion bound exceeded: k = {k:.4} > {max_k:.4}")
            }
            PlanViolation::Ratio { index, ratio, k } => {
                write!(f, "entry {index}: diameter ratio {ratio:.6} differs from k = {k:.6}")
            }
            PlanViolation::Sigma { index } => write!(f, "entry {index}: sigma is not d / (2 sqrt 3)"),
            PlanViolation::Range { index, lo, hi } => {
                write!(f, "entry {index}: range {lo:.4}-{hi:.4} does not bracket its diameter")
            }
            PlanViolation::Gap { index, prev_hi, lo } => {
                write!(f, "entry {index}: range starts at {lo:.4} but previous ends at {prev_hi:.4}")
            }
            PlanViolation::Layout(msg) => write!(f, "layout: {msg}"),
        }
    }
}

/// Default bound for [`ScalePlan::validate`].
pub const DEFAULT_MAX_K: f64 = SHAPE_CONFUSION_K;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::sphere_response;
    use proptest::prelude::*;

    // Published quantization table (2-decimal print precision).
    const TABLE: [(f64, f64, Option<(f64, f64)>); 12] = [
        (2.37, 0.68, None),
        (3.00, 0.86, Some((2.65, 3.35))),
        (3.79, 1.09, Some((3.35, 4.25))),
        (4.80, 1.38, Some((4.25, 5.38))),
        (6.08, 1.75, Some((5.38, 6.81))),
        (7.69, 2.22, Some((6.81, 8.62))),
        (9.74, 2.81, Some((8.62, 10.91))),
        (12.33, 3.55, Some((10.91, 13.80))),
        (15.60, 4.50, Some((13.80, 17.47))),
        (19.75, 5.70, Some((17.47, 22.11))),
        (25.00, 7.21, Some((22.11, 27.99))),
        (31.64, 9.13, None),
    ];

    #[test]
    fn reproduces_published_table() {
        let p = ScalePlan::build(3.0, 25.0, 10).unwrap();
        assert_eq!(p.len(), 12);
        assert!((p.k - 1.27).abs() < 0.005);
        for (e, &(d, s, range)) in p.entries.iter().zip(TABLE.iter()) {
            assert!((e.diameter_mm - d).abs() <= 0.01, "d[{}] = {}", e.index, e.diameter_mm);
            assert!((e.sigma_mm - s).abs() <= 0.01, "sigma[{}] = {}", e.index, e.sigma_mm);
            match range {
                None => assert!(e.boundary && e.range_lo_mm.is_none()),
                Some((lo, hi)) => {
                    assert!((e.range_lo_mm.unwrap() - lo).abs() <= 0.01);
                    assert!((e.range_hi_mm.unwrap() - hi).abs() <= 0.01);
                }
            }
        }
        assert!(p.validate(DEFAULT_MAX_K).is_empty());
    }

    #[test]
    fn two_scale_plan() {
        let p = ScalePlan::build(4.0, 4.0 * 1.3, 2).unwrap();
        assert_eq!(p.interior(), 1..3);
        assert_eq!(p.entries[1].diameter_mm, 4.0);
        assert_eq!(p.entries[2].diameter_mm, 4.0 * 1.3);
        assert!(ScalePlan::build(5.0, 3.0, 4).is_err());
        assert!(ScalePlan::build(3.0, 25.0, 1).is_err());
        assert!(ScalePlan::build(0.0, 25.0, 4).is_err());
    }

    #[test]
    fn validation_flags_rough_quantization() {
        let rough = ScalePlan::build(3.0, 3.0 * 1.8, 2).unwrap();
        let v = rough.validate(DEFAULT_MAX_K);
        assert_eq!(v.len(), 1);
        assert!(v[0].to_string().starts_with("shape-confusion bound exceeded"));

        let p = ScalePlan::default_operating();
        let v = p.validate(1.2);
        assert_eq!(v, vec![PlanViolation::ShapeConfusion { k: p.k, max_k: 1.2 }]);
        assert!(v[0].to_string().contains("1.2656"));
    }

    #[test]
    fn validation_flags_tampered_entries() {
        let mut p = ScalePlan::default_operating();
        p.entries[4].sigma_mm *= 1.01;
        p.entries[6].range_lo_mm = Some(8.0);
        let v = p.validate(DEFAULT_MAX_K);
        assert!(v.contains(&PlanViolation::Sigma { index: 4 }));
        assert!(v.iter().any(|x| matches!(x, PlanViolation::Gap { index: 6, .. })));
    }

    #[test]
    fn assign_size_examples() {
        let p = ScalePlan::default_operating();
        assert_eq!(p.assign_size(4.0).unwrap(), 2);
        assert_eq!(p.assign_size(3.0).unwrap(), 1);
        assert_eq!(p.assign_size(10.91).unwrap(), 6);
        let shared = p.entries[6].range_hi_mm.unwrap();
        assert_eq!(p.assign_size(shared).unwrap(), 6);
        assert_eq!(p.assign_size(shared + 1e-9).unwrap(), 7);
        assert_eq!(p.assign_size(p.entries[1].range_lo_mm.unwrap()).unwrap(), 1);
        assert!(p.assign_size(2.0).is_err());
        assert!(p.assign_size(28.5).is_err());
    }

    #[test]
    fn table_text_lists_boundaries() {
        let t = ScalePlan::default_operating().to_table();
        assert!(t.contains("0 (boundary scale)") && t.contains("31.64"));
        assert!(t.contains("8.62 - 10.91"));
    }

    proptest! {
        #[test]
        fn range_assignment_agrees_with_best_scale(t in 0.0f64..1.0) {
            let p = ScalePlan::default_operating();
            let lo = p.entries[1].range_lo_mm.unwrap();
            let hi = p.entries[10].range_hi_mm.unwrap();
            let d = lo + t * (hi - lo);
            let i = p.assign_size(d).unwrap();
            let mine = sphere_response(p.entries[i].sigma_mm, d).unwrap();
            for e in &p.entries {
                prop_assert!(mine >= sphere_response(e.sigma_mm, d).unwrap() - 1e-12);
            }
        }

        #[test]
        fn built_plans_are_valid(d_min in 1.0f64..5.0, span in 1.5f64..10.0, n in 2usize..20) {
            let p = ScalePlan::build(d_min, d_min * span, n).unwrap();
            let bad: Vec<_> = p.validate(f64::INFINITY);
            prop_assert!(bad.is_empty(), "{:?}", bad);
        }
    }
}
