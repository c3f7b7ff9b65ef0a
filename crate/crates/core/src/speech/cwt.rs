//! Continuous wavelet transform of pitch contours with a Mexican-hat wavelet.
//!
//! Coefficients follow the Torrence–Compo normalization
//! `W(n, s) = Σ x[n'] ψ((n' - n)/s) / sqrt(s)` with unit frame spacing, and the
//! inverse uses their delta-function reconstruction. Each sampled kernel is
//! shifted to sum to exactly zero, so constant tracks have no detail energy.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reconstruction factor of the Mexican-hat (DOG, m=2) wavelet.
const DELTA_C: f64 = 3.541;
/// ψ₀(0) of the Mexican-hat wavelet.
const PSI0_AT_ZERO: f64 = 0.867_325;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwtConfig {
    pub scales: usize,
    /// Smallest scale, in frames.
    pub smallest_scale: f64,
    /// Octaves between neighbouring scales.
    pub octave_step: f64,
}

impl Default for CwtConfig {
    fn default() -> Self {
        Self {
            scales: 10,
            smallest_scale: 1.0,
            octave_step: 1.0,
        }
    }
}

impl CwtConfig {
    pub fn scale_values(&self) -> Vec<f64> {
        (0..self.scales)
            .map(|j| self.smallest_scale * 2f64.powf(j as f64 * self.octave_step))
            .collect()
    }
}

pub fn mexican_hat(t: f64) -> f64 {
    2.0 / (3f64.sqrt() * PI.powf(0.25)) * (1.0 - t * t) * (-t * t / 2.0).exp()
}

/// Mirror index into `[0, n)` without repeating the edge sample.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= n as isize {
        k = period - k;
    }
    k as usize
}

fn kernel(scale: f64) -> (isize, Vec<f64>) {
    let half = (5.0 * scale).ceil() as isize;
    let mut k: Vec<f64> = (-half..=half)
        .map(|i| mexican_hat(i as f64 / scale) / scale.sqrt())
        .collect();
    let mean = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= mean);
    (half, k)
}

/// Wavelet coefficients `[scales][frames]`.
pub fn cwt(x: &[f64], cfg: &CwtConfig) -> Result<Vec<Vec<f64>>> {
    if x.is_empty() {
        return Err(Error::InvalidArgument("cwt of an empty track".into()));
    }
    let n = x.len();
    Ok(cfg
        .scale_values()
        .into_iter()
        .map(|s| {
            let (half, k) = kernel(s);
            (0..n)
                .map(|t| {
                    k.iter()
                        .enumerate()
                        .map(|(i, w)| w * x[reflect(t as isize + i as isize - half, n)])
                        .sum()
                })
                .collect()
        })
        .collect())
}

/// Approximate inverse; recovers the zero-mean part of the track.
pub fn icwt(coeffs: &[Vec<f64>], cfg: &CwtConfig) -> Vec<f64> {
    let n = coeffs.first().map_or(0, Vec::len);
    let factor = cfg.octave_step / (DELTA_C * PSI0_AT_ZERO);
    let mut out = vec![0.0; n];
    for (row, s) in coeffs.iter().zip(cfg.scale_values()) {
        for (o, w) in out.iter_mut().zip(row) {
            *o += factor * w / s.sqrt();
        }
    }
    out
}
