//! Ground-truth targets for the rhythm predictors.

use crate::error::{Error, Result};
use crate::frontend::HOP_LENGTH;
use crate::numerics::spectral::Stft;
use crate::numerics::Tensor;

use super::cwt::{cwt, CwtConfig};

/// Analysis window for frame energy.
pub const ENERGY_WINDOW: usize = 512;
/// Fixed normalization of log-F0 before the wavelet transform.
pub const LOG_F0_CENTER: f64 = 5.010_635_294_096_256; // ln 150
pub const LOG_F0_SCALE: f64 = 0.25;

/// Per-frame L2 norm of the STFT amplitude spectrum (Hann window of
/// `window` samples, hop 160). Returns one value per hop.
pub fn frame_energy(waveform: &[f64], window: usize) -> Result<Vec<f64>> {
    if waveform.is_empty() {
        return Err(Error::InvalidArgument("frame energy of an empty waveform".into()));
    }
    let stft = Stft::new(waveform.len(), window, HOP_LENGTH);
    let bins = stft.layout().bins();
    let mags = stft.magnitudes(waveform);
    Ok(mags
        .chunks(bins)
        .map(|row| row.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect())
}

/// Log-duration targets.
pub fn log_durations(durations: &[usize]) -> Result<Tensor> {
    if durations.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument("durations must be positive".into()));
    }
    Tensor::new(vec![durations.len(), 1], durations.iter().map(|&d| (d as f64).ln()).collect())
}

/// Wavelet pitch spectrogram `[m × scales]` of the normalized log-F0 track.
pub fn pitch_spectrogram(f0_hz: &[f64], cfg: &CwtConfig) -> Result<Tensor> {
    if let Some(bad) = f0_hz.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
        return Err(Error::InvalidArgument(format!("F0 values must be positive, found {bad}")));
    }
    let z: Vec<f64> = f0_hz.iter().map(|f| (f.ln() - LOG_F0_CENTER) / LOG_F0_SCALE).collect();
    let w = cwt(&z, cfg)?;
    let m = z.len();
    let k = w.len();
    let mut data = vec![0.0; m * k];
    for (s, row) in w.iter().enumerate() {
        for (t, v) in row.iter().enumerate() {
            data[t * k + s] = *v;
        }
    }
    Tensor::new(vec![m, k], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silence_has_zero_energy() {
        let e = frame_energy(&vec![0.0; 1600], ENERGY_WINDOW).unwrap();
        assert_eq!(e.len(), 10);
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn center_constant_is_ln_150() {
        assert!((LOG_F0_CENTER - 150f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_duration_of_ones_is_zero() {
        assert_eq!(log_durations(&[1, 1, 1]).unwrap().data(), &[0.0, 0.0, 0.0]);
        assert!(log_durations(&[1, 0]).is_err());
    }

    #[test]
    fn constant_pitch_gives_flat_spectrogram() {
        let p = pitch_spectrogram(&vec![180.0; 80], &CwtConfig::default()).unwrap();
        assert_eq!(p.shape(), &[80, 10]);
        for t in 5..75 {
            assert!(p.row(t).iter().all(|v| v.abs() < 1e-6));
        }
    }
}
