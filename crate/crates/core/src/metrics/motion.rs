use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn same_shape(a: &Tensor, b: &Tensor, op: &'static str) -> Result<()> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(Error::shape_in(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn mean_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Mean over unordered clip pairs of the mean absolute difference.
pub fn diversity(clips: &[Tensor]) -> Result<f64> {
    if clips.len() < 2 {
        return Err(Error::InvalidArgument("diversity needs at least two clips".into()));
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..clips.len() {
        for j in i + 1..clips.len() {
            same_shape(&clips[i], &clips[j], "diversity")?;
            total += mean_abs_diff(&clips[i], &clips[j]);
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

pub fn vertex_mse(generated: &Tensor, reference: &Tensor) -> Result<f64> {
    same_shape(generated, reference, "vertex_mse")?;
    let n = generated.len() as f64;
    Ok(generated.data().iter().zip(reference.data()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

/// Mean absolute difference of frame-to-frame velocities of `[T × D]`
/// clips, with frames `dt` seconds apart.
pub fn lvd(generated: &Tensor, reference: &Tensor, dt: f64) -> Result<f64> {
    same_shape(generated, reference, "lvd")?;
    if generated.rank() != 2 || generated.rows() < 2 {
        return Err(Error::InvalidArgument("LVD needs at least two frames".into()));
    }
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("frame interval must be positive, got {dt}")));
    }
    let (t, d) = (generated.rows(), generated.cols());
    let (a, b) = (generated.data(), reference.data());
    let mut total = 0.0;
    for i in 1..t {
        for j in 0..d {
            let va = (a[i * d + j] - a[(i - 1) * d + j]) / dt;
            let vb = (b[i * d + j] - b[(i - 1) * d + j]) / dt;
            total += (va - vb).abs();
        }
    }
    Ok(total / ((t - 1) * d) as f64)
}

/// Times of local energy maxima that rise above the track mean.
pub fn audio_beats(energy: &[f64], frame_rate: f64) -> Vec<f64> {
    if energy.len() < 3 {
        return Vec::new();
    }
    let mean = energy.iter().sum::<f64>() / energy.len() as f64;
    (1..energy.len() - 1)
        .filter(|&i| energy[i] > energy[i - 1] && energy[i] >= energy[i + 1] && energy[i] > mean)
        .map(|i| i as f64 / frame_rate)
        .collect()
}

/// Times of local minima of joint speed, `‖x_t − x_{t−1}‖`, for a
/// `[T × D]` clip.
pub fn motion_beats(poses: &Tensor, frame_rate: f64) -> Vec<f64> {
    if poses.rank() != 2 || poses.rows() < 4 {
        return Vec::new();
    }
    let (t, d) = (poses.rows(), poses.cols());
    let x = poses.data();
    let speed: Vec<f64> = (1..t)
        .map(|i| (0..d).map(|j| (x[i * d + j] - x[(i - 1) * d + j]).powi(2)).sum::<f64>().sqrt())
        .collect();
    (1..speed.len() - 1)
        .filter(|&i| speed[i] < speed[i - 1] && speed[i] <= speed[i + 1])
        .map(|i| (i + 1) as f64 / frame_rate)
        .collect()
}

/// Mean over motion beats of `exp(−min_j (t − a_j)² / 2σ²)`.
pub fn beat_consistency(audio: &[f64], motion: &[f64], sigma: f64) -> Result<f64> {
    if audio.is_empty() || motion.is_empty() {
        return Err(Error::InvalidArgument("beat consistency of an empty beat list".into()));
    }
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument(format!("sigma must be positive, got {sigma}")));
    }
    let total: f64 = motion
        .iter()
        .map(|&t| {
            let d2 = audio.iter().map(|&a| (t - a).powi(2)).fold(f64::INFINITY, f64::min);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .sum();
    Ok(total / motion.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(v: Vec<f64>, cols: usize) -> Tensor {
        let rows = v.len() / cols;
        Tensor::new(vec![rows, cols], v).unwrap()
    }

    #[test]
    fn diversity_examples() {
        let a = clip(vec![0.0; 6], 2);
        let b = clip(vec![1.0; 6], 2);
        assert_eq!(diversity(&[a.clone(), a.clone()]).unwrap(), 0.0);
        assert_eq!(diversity(&[a, b]).unwrap(), 1.0);
    }

    #[test]
    fn offset_and_ramps() {
        let gt = clip((0..10).map(|i| i as f64 * 0.3).collect(), 2);
        let off = gt.map(|v| v + 0.5);
        assert!((vertex_mse(&off, &gt).unwrap() - 0.25).abs() < 1e-15);
        assert!(lvd(&off, &gt, 1.0).unwrap() < 1e-15);
        let ramp_a = clip((0..8).map(|i| 2.0 * i as f64).collect(), 1);
        let ramp_b = clip((0..8).map(|i| -0.5 * i as f64).collect(), 1);
        assert!((lvd(&ramp_a, &ramp_b, 1.0).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn beat_examples() {
        assert_eq!(beat_consistency(&[0.5, 1.0], &[0.5, 1.0], 0.1).unwrap(), 1.0);
        let v = beat_consistency(&[1.0], &[1.1], 0.1).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
        assert!(beat_consistency(&[], &[1.0], 0.1).is_err());
    }

    #[test]
    fn beat_pickers_find_extrema() {
        let e = [0.0, 1.0, 0.0, 0.2, 3.0, 0.1, 0.0];
        assert_eq!(audio_beats(&e, 10.0), vec![0.1, 0.4]);
        // speeds 1,2,3,1,2: one interior minimum, on the step into frame 4
        let p = clip(vec![0.0, 1.0, 3.0, 6.0, 7.0, 9.0], 1);
        assert_eq!(motion_beats(&p, 1.0), vec![4.0]);
    }
}
