//! Independent reference implementations shared by the integration tests.

#![allow(dead_code)]

use std::f64::consts::PI;

use blobcg::{Grid, Units, Volume3D};

/// Deterministic pseudo-random values in [0, 1).
pub fn lcg_values(n: usize, seed: u64) -> Vec<f32> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (0..n)
        .map(|_| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 40) as f64 / (1u64 << 24) as f64) as f32
        })
        .collect()
}

pub fn random_volume(dims: [usize; 3], spacing: [f64; 3], seed: u64) -> Volume3D {
    let g = Grid::new(dims, spacing).unwrap();
    Volume3D::new(g, lcg_values(g.len(), seed), Units::Unitless).unwrap()
}

fn gauss_taps(sigma: f64, h: f64, r: usize) -> (Vec<f64>, Vec<f64>) {
    let mut g = Vec::with_capacity(2 * r + 1);
    let mut g2 = Vec::with_capacity(2 * r + 1);
    for i in 0..=2 * r {
        let x = (i as f64 - r as f64) * h;
        let v = (-x * x / (2.0 * sigma * sigma)).exp() / ((2.0 * PI).sqrt() * sigma);
        g.push(v * h);
        g2.push(v * h * (x * x / (sigma * sigma) - 1.0) / (sigma * sigma));
    }
    (g, g2)
}

fn conv_axis(data: &[f64], dims: [usize; 3], axis: usize, taps: &[f64]) -> Vec<f64> {
    let r = (taps.len() / 2) as isize;
    let stride = [1, dims[0], dims[0] * dims[1]][axis];
    let n = dims[axis] as isize;
    let mut out = vec![0.0; data.len()];
    for (idx, o) in out.iter_mut().enumerate() {
        let c = [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])][axis] as isize;
        let mut acc = 0.0;
        for (t, &w) in taps.iter().enumerate() {
            let p = c + t as isize - r;
            if p >= 0 && p < n {
                acc += w * data[(idx as isize + (p - c) * stride as isize) as usize];
            }
        }
        *o = acc;
    }
    out
}

/// Direct convolution with the sampled normalized LoG truncated to a cube of
/// half-width `radius_sigmas * sigma`, zero outside the volume.
pub fn spatial_response(v: &Volume3D, sigma: f64, radius_sigmas: f64) -> Vec<f64> {
    let dims = v.dims();
    let h = v.spacing_mm();
    let data: Vec<f64> = v.data().iter().map(|&x| x as f64).collect();
    let mut total = vec![0.0; data.len()];
    for second in 0..3 {
        let mut cur = data.clone();
        for axis in 0..3 {
            let r = (radius_sigmas * sigma / h[axis]).ceil() as usize;
            let (g, g2) = gauss_taps(sigma, h[axis], r);
            cur = conv_axis(&cur, dims, axis, if axis == second { &g2 } else { &g });
        }
        for (t, c) in total.iter_mut().zip(&cur) {
            *t += c;
        }
    }
    total.iter().map(|x| -sigma * sigma * x).collect()
}

/// Brute-force convolution with the LoG truncated to a ball of radius
/// `radius_sigmas * sigma`; only evaluated at `points`.
pub fn spatial_response_ball(v: &Volume3D, sigma: f64, radius_sigmas: f64, points: &[[usize; 3]]) -> Vec<f64> {
    let dims = v.dims();
    let h = v.spacing_mm();
    let rad = radius_sigmas * sigma;
    let vol = h[0] * h[1] * h[2];
    let reach: Vec<isize> = (0..3).map(|a| (rad / h[a]).ceil() as isize).collect();
    points
        .iter()
        .map(|p| {
            let mut acc = 0.0;
            for dz in -reach[2]..=reach[2] {
                for dy in -reach[1]..=reach[1] {
                    for dx in -reach[0]..=reach[0] {
                        let q = [p[0] as isize + dx, p[1] as isize + dy, p[2] as isize + dz];
                        if (0..3).any(|a| q[a] < 0 || q[a] >= dims[a] as isize) {
                            continue;
                        }
                        let r2 = (dx as f64 * h[0]).powi(2) + (dy as f64 * h[1]).powi(2) + (dz as f64 * h[2]).powi(2);
                        if r2 > rad * rad {
                            continue;
                        }
                        let s2 = sigma * sigma;
                        let g = (-r2 / (2.0 * s2)).exp() / (2.0 * PI * s2).powf(1.5);
                        let lap = g * (r2 / s2 - 3.0) / s2;
                        acc += lap * v.get(q[0] as usize, q[1] as usize, q[2] as usize) as f64;
                    }
                }
            }
            -sigma * sigma * vol * acc
        })
        .collect()
}

/// Every voxel `(ix, iy, iz, scale)` passing the 4D maximum predicate, found
/// by checking each neighbour explicitly.
pub fn exhaustive_maxima(stack: &[Vec<f32>], dims: [usize; 3], interior: std::ops::Range<usize>) -> Vec<(usize, [usize; 3], f32)> {
    let [nx, ny, nz] = dims;
    let at = |s: usize, x: usize, y: usize, z: usize| stack[s][(z * ny + y) * nx + x];
    let mut out = Vec::new();
    for s in interior {
        for z in 1..nz.saturating_sub(1) {
            for y in 1..ny.saturating_sub(1) {
                for x in 1..nx.saturating_sub(1) {
                    let c = at(s, x, y, z);
                    let mut ok = true;
                    for dz in 0..3 {
                        for dy in 0..3 {
                            for dx in 0..3 {
                                let (xx, yy, zz) = (x + dx - 1, y + dy - 1, z + dz - 1);
                                if at(s, xx, yy, zz) > c {
                                    ok = false;
                                }
                                let manhattan = (dx as i32 - 1).abs() + (dy as i32 - 1).abs() + (dz as i32 - 1).abs();
                                if manhattan <= 1 && (at(s - 1, xx, yy, zz) > c || at(s + 1, xx, yy, zz) > c) {
                                    ok = false;
                                }
                            }
                        }
                    }
                    if ok {
                        out.push((s, [x, y, z], c));
                    }
                }
            }
        }
    }
    out
}
