use std::f64::consts::{LN_10, PI};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Cepstral coefficients compared, excluding the zeroth (overall level).
pub const CEPSTRAL_ORDER: usize = 24;

/// Orthonormal DCT-II coefficients `1..=order` of one mel frame.
fn cepstrum(frame: &[f64], order: usize) -> Vec<f64> {
    let n = frame.len() as f64;
    (1..=order)
        .map(|k| {
            let s: f64 = frame
                .iter()
                .enumerate()
                .map(|(i, &v)| v * (PI * k as f64 * (i as f64 + 0.5) / n).cos())
                .sum();
            s * (2.0 / n).sqrt()
        })
        .collect()
}

/// Mean per-frame cepstral distortion in dB between two time-major mel
/// spectrograms `[m × bins]`: `(10 / ln 10)·√(2 Σ_k (c_k − c'_k)²)`.
pub fn cepstral_distortion(generated: &Tensor, reference: &Tensor) -> Result<f64> {
    if generated.shape() != reference.shape() || generated.rank() != 2 || generated.rows() == 0 {
        return Err(Error::shape_in(
            "cepstral_distortion",
            format!("{:?} vs {:?}", generated.shape(), reference.shape()),
        ));
    }
    let order = CEPSTRAL_ORDER.min(generated.cols().saturating_sub(1));
    let total: f64 = (0..generated.rows())
        .map(|t| {
            let a = cepstrum(generated.row(t), order);
            let b = cepstrum(reference.row(t), order);
            let d2: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
            10.0 / LN_10 * (2.0 * d2).sqrt()
        })
        .sum();
    Ok(total / generated.rows() as f64)
}

/// Speech-quality stand-in on a 1–5 scale: `5 − clamp(distortion, 0, 4)`.
pub fn utmos_proxy(generated: &Tensor, reference: &Tensor) -> Result<f64> {
    Ok(5.0 - cepstral_distortion(generated, reference)?.clamp(0.0, 4.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_mels_score_five() {
        let m = Tensor::new(vec![3, 80], (0..240).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        assert_eq!(utmos_proxy(&m, &m).unwrap(), 5.0);
    }

    #[test]
    fn level_shift_is_ignored_and_large_error_saturates() {
        let m = Tensor::new(vec![2, 80], (0..160).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        assert!(cepstral_distortion(&m.map(|v| v + 3.0), &m).unwrap() < 1e-9);
        let noisy = Tensor::new(vec![2, 80], (0..160).map(|i| (i % 80) as f64 * 0.5).collect()).unwrap();
        assert_eq!(utmos_proxy(&noisy, &m).unwrap(), 1.0);
    }
}
