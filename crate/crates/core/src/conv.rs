// Circulant (direct or FFT-based) and open-line correlation engines.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
struct FftPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    spectrum: Vec<Complex64>,
}

impl FftPlan {
    /// Plan for circular convolution with `g` (already laid out modulo `len`).
    fn new(g: &[f64]) -> Self {
        let len = g.len();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scale = 1.0 / len as f64;
        let mut spectrum: Vec<Complex64> = g.iter().map(|&v| Complex64::new(v * scale, 0.0)).collect();
        forward.process(&mut spectrum);
        Self {
            len,
            forward,
            inverse,
            spectrum,
        }
    }

    /// Circular convolution of the zero-extended input with the planned filter;
    /// writes `out[i] = (g ⊛ x)[i + offset]`.
    fn convolve(&self, x: &[f64], offset: usize, out: &mut [f64]) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.len];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.forward.process(&mut buf);
        for (b, s) in buf.iter_mut().zip(&self.spectrum) {
            *b *= s;
        }
        self.inverse.process(&mut buf);
        for (o, b) in out.iter_mut().zip(&buf[offset..]) {
            *o = b.re;
        }
    }
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("len", &self.len).finish()
    }
}

#[derive(Debug, Clone)]
enum Engine {
    Direct(Vec<(usize, f64)>),
    Fft(FftPlan),
}

/// Whether a sparse direct product beats an FFT of length `n`.
fn prefer_direct(nnz: usize, n: usize) -> bool {
    let log = (usize::BITS - n.leading_zeros()) as usize;
    n <= 64 || nnz <= 6 * log
}

/// Periodic operator `(Cu)_i = Σ_j w_j u_{(i+j) mod n}`.
#[derive(Debug, Clone)]
pub(crate) struct Circulant {
    n: usize,
    weights: Vec<f64>,
    engine: Engine,
}

impl Circulant {
    pub(crate) fn new(weights: Vec<f64>) -> Self {
        let n = weights.len();
        let nz: Vec<(usize, f64)> = weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(j, &w)| (j, w))
            .collect();
        let engine = if prefer_direct(nz.len(), n) {
            Engine::Direct(nz)
        } else {
            // out = g ⊛ u with g_m = w_{-m}
            let g: Vec<f64> = (0..n).map(|m| weights[(n - m) % n]).collect();
            Engine::Fft(FftPlan::new(&g))
        };
        Self { n, weights, engine }
    }

    pub(crate) fn len(&self) -> usize {
        self.n
    }

    pub(crate) fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sum of the weights, i.e. the image of the constant 1.
    pub(crate) fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub(crate) fn apply(&self, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.n);
        match &self.engine {
            Engine::Direct(nz) => {
                let n = self.n;
                for (i, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for &(j, w) in nz {
                        let k = i + j;
                        acc += w * u[if k >= n { k - n } else { k }];
                    }
                    *o = acc;
                }
            }
            Engine::Fft(plan) => plan.convolve(u, 0, out),
        }
    }
}

/// Open-line correlation `out_i = Σ_{j=-h}^{h} t_j x_{i+h+j}` for an extended
/// input of length `len + 2h`, producing `len` outputs.
///
/// Always evaluated directly: every output is a nonnegative combination of
/// nearby inputs, so exact zeros stay exact and no global roundoff floor is
/// introduced (an FFT would add absolute errors of order 1e-16 everywhere,
/// which the linear instability of the zero state amplifies ahead of fronts).
#[derive(Debug, Clone)]
pub(crate) struct LineCorrelator {
    len: usize,
    half: usize,
    taps: Vec<f64>,
}

impl LineCorrelator {
    /// `taps` ordered from offset `-h` to `+h`.
    pub(crate) fn new(taps: Vec<f64>, len: usize) -> Self {
        let half = (taps.len() - 1) / 2;
        Self { len, half, taps }
    }

    pub(crate) fn half_width(&self) -> usize {
        self.half
    }

    #[cfg(test)]
    pub(crate) fn apply(&self, ext: &[f64], out: &mut [f64]) {
        self.apply_range(ext, out, 0, self.len);
    }

    /// Computes outputs `lo..hi` only and zeroes the rest.
    pub(crate) fn apply_range(&self, ext: &[f64], out: &mut [f64], lo: usize, hi: usize) {
        debug_assert_eq!(ext.len(), self.len + 2 * self.half);
        debug_assert_eq!(out.len(), self.len);
        out.fill(0.0);
        if lo >= hi {
            return;
        }
        let target = &mut out[lo..hi];
        for (j, &t) in self.taps.iter().enumerate() {
            if t == 0.0 {
                continue;
            }
            let src = &ext[lo + j..hi + j];
            for (o, x) in target.iter_mut().zip(src) {
                *o += t * x;
            }
        }
    }
}
