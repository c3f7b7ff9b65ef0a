//! Short-time Fourier magnitudes with an analytic backward pass.

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Frame layout of an STFT: frame `f` covers samples `[f*hop, f*hop + n_fft)`,
/// zero-padded past the end of the signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftLayout {
    pub n_fft: usize,
    pub hop: usize,
    pub frames: usize,
}

impl StftLayout {
    pub fn new(signal_len: usize, n_fft: usize, hop: usize) -> Self {
        Self {
            n_fft,
            hop,
            frames: signal_len.div_ceil(hop).max(1),
        }
    }

    pub fn bins(&self) -> usize {
        self.n_fft / 2 + 1
    }
}

pub struct Stft {
    layout: StftLayout,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(signal_len: usize, n_fft: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            layout: StftLayout::new(signal_len, n_fft, hop),
            window: hann(n_fft),
            fft: planner.plan_fft_forward(n_fft),
        }
    }

    pub fn layout(&self) -> StftLayout {
        self.layout
    }

    /// Complex one-sided spectra, `[frames][bins]`.
    pub fn spectra(&self, x: &[f64]) -> Vec<Vec<Complex64>> {
        let n = self.layout.n_fft;
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        (0..self.layout.frames)
            .map(|f| {
                let start = f * self.layout.hop;
                for (i, slot) in buf.iter_mut().enumerate() {
                    let v = x.get(start + i).copied().unwrap_or(0.0);
                    *slot = Complex64::new(v * self.window[i], 0.0);
                }
                self.fft.process(&mut buf);
                buf[..self.layout.bins()].to_vec()
            })
            .collect()
    }

    /// Magnitudes flattened row-major as `[frames × bins]`.
    pub fn magnitudes(&self, x: &[f64]) -> Vec<f64> {
        self.spectra(x)
            .into_iter()
            .flat_map(|row| row.into_iter().map(|c| c.norm()))
            .collect()
    }

    /// Gradient of `sum(grad_mag ⊙ |STFT(x)|)` with respect to `x`.
    pub fn magnitude_backward(&self, x: &[f64], grad_mag: &[f64]) -> Vec<f64> {
        let n = self.layout.n_fft;
        let bins = self.layout.bins();
        let spectra = self.spectra(x);
        let mut gx = vec![0.0; x.len()];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for (f, row) in spectra.iter().enumerate() {
            buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
            let mut any = false;
            for (k, xk) in row.iter().enumerate() {
                let g = grad_mag[f * bins + k];
                let mag = xk.norm();
                if g == 0.0 || mag < 1e-300 {
                    continue;
                }
                buf[k] = xk.conj() * (g / mag);
                any = true;
            }
            if !any {
                continue;
            }
            // d|X_k|/dx_j = Re(conj(X_k)/|X_k| * w_j * e^{-2πi kj/N}); the sum
            // over k is a forward transform of the scaled conjugate spectrum.
            self.fft.process(&mut buf);
            let start = f * self.layout.hop;
            for j in 0..n {
                if let Some(slot) = gx.get_mut(start + j) {
                    *slot += self.window[j] * buf[j].re;
                }
            }
        }
        gx
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_magnitudes(x: &[f64], n_fft: usize, hop: usize) -> Vec<f64> {
        let layout = StftLayout::new(x.len(), n_fft, hop);
        let w = hann(n_fft);
        let mut out = Vec::new();
        for f in 0..layout.frames {
            for k in 0..layout.bins() {
                let (mut re, mut im) = (0.0, 0.0);
                for j in 0..n_fft {
                    let v = x.get(f * hop + j).copied().unwrap_or(0.0) * w[j];
                    let ang = -2.0 * PI * (k * j) as f64 / n_fft as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                out.push((re * re + im * im).sqrt());
            }
        }
        out
    }

    #[test]
    fn fft_matches_direct_dft() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64 * 0.37).sin() + 0.1 * (i as f64 * 1.3).cos()).collect();
        let stft = Stft::new(x.len(), 32, 16);
        let a = stft.magnitudes(&x);
        let b = direct_magnitudes(&x, 32, 16);
        assert_eq!(a.len(), b.len());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-10);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.61).sin()).collect();
        let stft = Stft::new(x.len(), 16, 8);
        let gm: Vec<f64> = (0..stft.layout().frames * stft.layout().bins())
            .map(|i| ((i * 7) % 5) as f64 - 2.0)
            .collect();
        let gx = stft.magnitude_backward(&x, &gm);
        let obj = |x: &[f64]| -> f64 { stft.magnitudes(x).iter().zip(&gm).map(|(a, b)| a * b).sum() };
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += 1e-6;
            let mut xm = x.clone();
            xm[j] -= 1e-6;
            let fd = (obj(&xp) - obj(&xm)) / 2e-6;
            assert!((fd - gx[j]).abs() < 1e-5 * (1.0 + fd.abs()), "j={j} fd={fd} an={}", gx[j]);
        }
    }
}
