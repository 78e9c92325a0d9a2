//! Padded 3D real-to-complex transform with cropped inverse.
//!
//! Layout follows the volume convention (x fastest). The half spectrum has
//! `px / 2 + 1` bins along x. Rows and planes that lie outside the original
//! extent are zero on the way in and discarded on the way out, so those
//! 1D transforms are skipped.

use std::sync::Arc;

use rayon::prelude::*;
use realfft::{ComplexToReal, FftError, RealFftPlanner, RealToComplex};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Columns gathered per task in the strided z pass.
const Z_BLOCK: usize = 16;

pub(crate) struct Fft3 {
    orig: [usize; 3],
    padded: [usize; 3],
    half: usize,
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fy: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
    fz: Arc<dyn Fft<f64>>,
    iz: Arc<dyn Fft<f64>>,
}

impl Fft3 {
    pub(crate) fn new(orig: [usize; 3], padded: [usize; 3]) -> Self {
        debug_assert!((0..3).all(|a| padded[a] >= orig[a]));
        let mut real = RealFftPlanner::<f64>::new();
        let mut cplx = FftPlanner::<f64>::new();
        Fft3 {
            orig,
            padded,
            half: padded[0] / 2 + 1,
            r2c: real.plan_fft_forward(padded[0]),
            c2r: real.plan_fft_inverse(padded[0]),
            fy: cplx.plan_fft_forward(padded[1]),
            iy: cplx.plan_fft_inverse(padded[1]),
            fz: cplx.plan_fft_forward(padded[2]),
            iz: cplx.plan_fft_inverse(padded[2]),
        }
    }

    /// Dimensions of the half spectrum: `[px / 2 + 1, py, pz]`.
    pub(crate) fn spectrum_dims(&self) -> [usize; 3] {
        [self.half, self.padded[1], self.padded[2]]
    }

    /// Forward transform of `input` (original extent, x fastest) zero-padded
    /// to the padded dims.
    pub(crate) fn forward(&self, input: &[f64]) -> Vec<Complex64> {
        let [nx, ny, nz] = self.orig;
        let [px, py, _] = self.padded;
        let h = self.half;
        assert_eq!(input.len(), nx * ny * nz);
        let mut spec = vec![Complex64::new(0.0, 0.0); h * py * self.padded[2]];
        let plane = h * py;

        spec.par_chunks_mut(plane).take(nz).enumerate().for_each(|(z, out)| {
            let mut row = vec![0.0; px];
            let mut scratch = self.r2c.make_scratch_vec();
            for y in 0..ny {
                let src = &input[(z * ny + y) * nx..][..nx];
                row[..nx].copy_from_slice(src);
                row[nx..].fill(0.0);
                self.r2c
                    .process_with_scratch(&mut row, &mut out[y * h..][..h], &mut scratch)
                    .expect("buffer sizes match the plan");
            }
            transform_y(&*self.fy, out, h, py);
        });
        self.transform_z(&*self.fz, &mut spec);
        spec
    }

    /// Inverse transform of `spec` (consumed as workspace), cropped to the
    /// original extent and scaled by `1 / (px * py * pz)`.
    pub(crate) fn inverse_cropped(&self, mut spec: Vec<Complex64>) -> Vec<f64> {
        let [nx, ny, nz] = self.orig;
        let [px, py, pz] = self.padded;
        let h = self.half;
        let plane = h * py;
        assert_eq!(spec.len(), plane * pz);
        self.transform_z(&*self.iz, &mut spec);

        let norm = 1.0 / (px * py * pz) as f64;
        let mut out = vec![0.0; nx * ny * nz];
        out.par_chunks_mut(nx * ny)
            .zip(spec.par_chunks_mut(plane))
            .for_each(|(dst, src)| {
                transform_y(&*self.iy, src, h, py);
                let mut row = vec![0.0; px];
                let mut scratch = self.c2r.make_scratch_vec();
                for y in 0..ny {
                    let bins = &mut src[y * h..][..h];
                    // the spectrum is Hermitian up to roundoff; c2r needs exact zeros here
                    bins[0].im = 0.0;
                    if px % 2 == 0 {
                        bins[h - 1].im = 0.0;
                    }
                    match self.c2r.process_with_scratch(bins, &mut row, &mut scratch) {
                        Ok(()) | Err(FftError::InputValues(..)) => {}
                        Err(e) => panic!("inverse transform failed: {e}"),
                    }
                    for (d, s) in dst[y * nx..][..nx].iter_mut().zip(&row[..nx]) {
                        *d = s * norm;
                    }
                }
            });
        out
    }

    fn transform_z(&self, fft: &dyn Fft<f64>, spec: &mut [Complex64]) {
        let pz = self.padded[2];
        let plane = self.half * self.padded[1];
        let nblocks = plane.div_ceil(Z_BLOCK);
        // Regroup the array as per-block lists of per-plane slices so every
        // task owns a disjoint set of columns.
        let mut blocks: Vec<Vec<&mut [Complex64]>> = (0..nblocks).map(|_| Vec::with_capacity(pz)).collect();
        for p in spec.chunks_mut(plane) {
            for (b, piece) in p.chunks_mut(Z_BLOCK).enumerate() {
                blocks[b].push(piece);
            }
        }
        blocks.into_par_iter().for_each(|mut pieces| {
            let width = pieces[0].len();
            let mut buf = vec![Complex64::new(0.0, 0.0); width * pz];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            for (z, piece) in pieces.iter().enumerate() {
                for (c, v) in piece.iter().enumerate() {
                    buf[c * pz + z] = *v;
                }
            }
            fft.process_with_scratch(&mut buf, &mut scratch);
            for (z, piece) in pieces.iter_mut().enumerate() {
                for (c, v) in piece.iter_mut().enumerate() {
                    *v = buf[c * pz + z];
                }
            }
        });
    }
}

/// Transforms every column of one `h x py` plane along y.
fn transform_y(fft: &dyn Fft<f64>, plane: &mut [Complex64], h: usize, py: usize) {
    let mut buf = vec![Complex64::new(0.0, 0.0); h * py];
    let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for y in 0..py {
        for x in 0..h {
            buf[x * py + y] = plane[y * h + x];
        }
    }
    fft.process_with_scratch(&mut buf, &mut scratch);
    for y in 0..py {
        for x in 0..h {
            plane[y * h + x] = buf[x * py + y];
        }
    }
}

/// Smallest `n' >= n` whose only prime factors are 2, 3 and 5.
pub(crate) fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}
