//! Closed-form responses of the negated, scale-normalized LoG filter to ideal
//! shapes, and the scale-quantization bounds derived from them.
//!
//! All shapes have unit intensity on a zero background and the response is
//! taken at the shape's center (axis for the cylinder).

use std::f64::consts::{E, PI};

use serde::Serialize;

use crate::error::{ensure_positive, Error, Result};

/// `sqrt(54/pi) * exp(-1.5)`: the largest response any scale gives a solid sphere.
pub fn sphere_peak() -> f64 {
    (54.0 / PI).sqrt() * (-1.5f64).exp()
}

/// `2/e`: the largest response any scale gives an infinite solid cylinder.
pub fn cylinder_peak() -> f64 {
    2.0 / E
}

/// Scale ratio beyond which the quantized filter's worst-case sphere response
/// drops below [`cylinder_peak`].
pub const SHAPE_CONFUSION_K: f64 = 1.746;

/// Sphere-to-scale relation: the scale that responds best to diameter `d`.
pub fn matched_sigma(diameter_mm: f64) -> f64 {
    diameter_mm / (2.0 * 3f64.sqrt())
}

/// Inverse of [`matched_sigma`].
pub fn matched_diameter(sigma_mm: f64) -> f64 {
    2.0 * 3f64.sqrt() * sigma_mm
}

/// Response at the center of a solid sphere of diameter `d`.
pub fn sphere_response(sigma: f64, d: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    ensure_positive("d", d)?;
    let s = d / sigma;
    Ok(s.powi(3) / (2f64.powf(2.5) * PI.sqrt()) * (-(s * s) / 8.0).exp())
}

/// Response on the axis of an infinitely long solid cylinder of diameter `d`.
pub fn cylinder_response(sigma: f64, d: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    ensure_positive("d", d)?;
    let s2 = (d / sigma).powi(2);
    Ok(s2 / 4.0 * (-s2 / 8.0).exp())
}

/// Response at the center of a 1D rectangle of width `d` and unit height.
pub fn rect_response_1d(sigma: f64, d: f64) -> Result<f64> {
    ensure_positive("sigma", sigma)?;
    ensure_positive("d", d)?;
    Ok(d / ((2.0 * PI).sqrt() * sigma) * (-(d * d) / (8.0 * sigma * sigma)).exp())
}

/// Sphere diameter at which two adjacent scales `sigma1 < sigma2` give equal
/// (and, between the two peaks, minimal) response.
pub fn dip_diameter(sigma1: f64, sigma2: f64) -> Result<f64> {
    ensure_positive("sigma1", sigma1)?;
    ensure_positive("sigma2", sigma2)?;
    if sigma1 >= sigma2 {
        return Err(Error::param(
            "sigma1",
            format!("must be smaller than sigma2 ({sigma1} >= {sigma2})"),
        ));
    }
    let log_ratio = 3.0 * (sigma2.ln() - sigma1.ln());
    Ok(8f64.sqrt() * sigma1 * sigma2 * (log_ratio / (sigma2 * sigma2 - sigma1 * sigma1)).sqrt())
}

fn ensure_ratio(k: f64) -> Result<()> {
    if k.is_finite() && k > 1.0 {
        Ok(())
    } else {
        Err(Error::param("k", format!("scale ratio must be > 1, got {k}")))
    }
}

/// Minimal sphere response between two scales in ratio `k`.
///
/// Evaluated as `4/sqrt(pi) * exp(-q) * q^1.5` with
/// `q = 3 ln k / (1 - k^-2)`, which is the printed closed form rewritten so
/// that it stays accurate as `k -> 1` (where `q -> 1.5`).
pub fn dip_response(k: f64) -> Result<f64> {
    ensure_ratio(k)?;
    let x = k.ln();
    let q = 3.0 * x / -(-2.0 * x).exp_m1();
    Ok(4.0 / PI.sqrt() * (-q).exp() * q.powf(1.5))
}

/// Worst-case relative size errors `(underestimation, overestimation)` for
/// scale ratio `k`.
pub fn size_error_bounds(k: f64) -> Result<(f64, f64)> {
    ensure_ratio(k)?;
    let x = k.ln();
    let under = 1.0 - (-(-2.0 * x).exp_m1() / (2.0 * x)).sqrt();
    let over = ((2.0 * x).exp_m1() / (2.0 * x)).sqrt() - 1.0;
    Ok((under, over))
}

/// Worst-case response of a solid nodule in CT units.
///
/// `r_int` is the interference-degraded unit response, `r_dip / r_peak` the
/// quantization loss, and the intensity difference rescales the unit-contrast
/// model to HU.
pub fn derive_solid_threshold(r_int: f64, r_dip: f64, r_peak: f64, i_solid_min: f64, i_paren: f64) -> Result<f64> {
    for (name, v) in [
        ("r_int", r_int),
        ("r_dip", r_dip),
        ("i_solid_min", i_solid_min),
        ("i_paren", i_paren),
    ] {
        if !v.is_finite() {
            return Err(Error::param(name, format!("must be finite, got {v}")));
        }
    }
    ensure_positive("r_peak", r_peak)?;
    Ok(r_int * (r_dip / r_peak) * (i_solid_min - i_paren))
}

/// Interference-degraded unit response used by the default threshold.
pub const DEFAULT_R_INT: f64 = 0.7;
/// Median lung parenchyma intensity, HU.
pub const PARENCHYMA_HU: f64 = -810.0;
/// Lower bound of solid tissue intensity, HU.
pub const SOLID_MIN_HU: f64 = -474.0;

/// Quantization bounds for one scale ratio.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct QuantizationBounds {
    pub k: f64,
    pub r_dip: f64,
    pub d_ue: f64,
    pub d_oe: f64,
}

impl QuantizationBounds {
    pub fn for_ratio(k: f64) -> Result<Self> {
        let r_dip = dip_response(k)?;
        let (d_ue, d_oe) = size_error_bounds(k)?;
        Ok(QuantizationBounds { k, r_dip, d_ue, d_oe })
    }
}
