//! Gesture, speech and speed metrics.

pub mod audio;
pub mod fgd;
pub mod motion;
pub mod speed;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use audio::{cepstral_distortion, utmos_proxy};
pub use fgd::{feature_distance, fgd, frechet_distance, mean_covariance, FeatureExtractor, FEATURE_DIM};
pub use motion::{audio_beats, beat_consistency, diversity, lvd, motion_beats, vertex_mse};
pub use speed::{bench_speed, sec_per_sec, time_generation};

use crate::error::{Error, Result};
use crate::frontend::{SyntheticSample, AUDIO_FRAME_RATE, GESTURE_FRAME_RATE};
use crate::gesture::FROZEN_SEED;
use crate::model::FastTalker;
use crate::numerics::{Graph, Tensor};
use crate::speech::{frame_energy, ENERGY_WINDOW};

/// Default beat-alignment tolerance in seconds.
pub const BEAT_SIGMA: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub fgd: f64,
    pub bc: f64,
    pub diversity: f64,
    pub mse: f64,
    pub lvd: f64,
    pub utmos_proxy: f64,
    pub params: f64,
    pub sec_per_sec: f64,
}

impl MetricReport {
    /// One table row: `FGD BC Diversity MSE LVD UTMOS Params Speed`.
    pub fn table_row(&self) -> String {
        format!(
            "{:>9.4} {:>7.4} {:>9.4} {:>9.5} {:>9.5} {:>6.3} {:>10} {:>8.4}",
            self.fgd, self.bc, self.diversity, self.mse, self.lvd, self.utmos_proxy, self.params, self.sec_per_sec
        )
    }

    pub fn table_header() -> &'static str {
        "      FGD      BC Diversity       MSE       LVD  UTMOS     Params    Speed"
    }
}

/// Per-utterance outputs needed by the quality metrics.
struct Evaluated {
    generated: Option<Tensor>,
    reference: Option<Tensor>,
    bc: Option<f64>,
    utmos: f64,
}

fn evaluate_one(model: &FastTalker, s: &SyntheticSample) -> Result<Evaluated> {
    let durations = &s.alignment.durations;
    let gen = model.synthesize(&s.phonemes, Some(durations))?;
    let reference = if s.gesture_codes.is_empty() {
        None
    } else {
        Some(model.motion.reconstruct(&s.gesture_codes, &model.codebook)?)
    };
    let bc = match &gen.motion {
        Some(m) => {
            let a = audio_beats(&frame_energy(&gen.waveform, ENERGY_WINDOW)?, AUDIO_FRAME_RATE);
            let b = motion_beats(m, GESTURE_FRAME_RATE as f64);
            if a.is_empty() || b.is_empty() {
                None
            } else {
                Some(beat_consistency(&a, &b, BEAT_SIGMA)?)
            }
        }
        None => None,
    };
    let mut g = Graph::new();
    let speech = model.forward_speech(&mut g, &s.phonemes.tokens, Some(durations), true)?;
    let mel = g.value(speech.mel.expect("mel requested")).clone();
    let utmos = utmos_proxy(&mel, &s.mel.transpose2())?;
    Ok(Evaluated {
        generated: gen.motion,
        reference,
        bc,
        utmos,
    })
}

fn crop(clip: &Tensor, rows: usize) -> Result<Tensor> {
    Tensor::new(vec![rows, clip.cols()], clip.data()[..rows * clip.cols()].to_vec())
}

/// Quality metrics of `model` on `samples`, generating with ground-truth
/// durations so clips align frame by frame with the references. The speed
/// field is left at zero; see [`bench_speed`].
pub fn evaluate_quality(model: &FastTalker, samples: &[SyntheticSample]) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("cannot evaluate an empty split".into()));
    }
    let per = samples
        .par_iter()
        .map(|s| evaluate_one(model, s))
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<(&Tensor, &Tensor)> = per
        .iter()
        .filter_map(|e| Some((e.generated.as_ref()?, e.reference.as_ref()?)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("no utterance in the split is long enough for a gesture frame".into()));
    }
    let n = pairs.len() as f64;
    let mse = pairs.iter().map(|(a, b)| vertex_mse(a, b)).sum::<Result<f64>>()? / n;
    let dt = 1.0 / GESTURE_FRAME_RATE as f64;
    let multi: Vec<_> = pairs.iter().filter(|(a, _)| a.rows() >= 2).collect();
    let lvd = if multi.is_empty() {
        0.0
    } else {
        multi.iter().map(|(a, b)| lvd(a, b, dt)).sum::<Result<f64>>()? / multi.len() as f64
    };
    let (fgd, diversity) = if pairs.len() >= 2 {
        let extractor = FeatureExtractor::new(FROZEN_SEED);
        let gen: Vec<Tensor> = pairs.iter().map(|p| p.0.clone()).collect();
        let gt: Vec<Tensor> = pairs.iter().map(|p| p.1.clone()).collect();
        let shortest = gen.iter().map(Tensor::rows).min().unwrap_or(0);
        let cropped = gen.iter().map(|c| crop(c, shortest)).collect::<Result<Vec<_>>>()?;
        (fgd(&gen, &gt, &extractor)?, diversity(&cropped)?)
    } else {
        (0.0, 0.0)
    };
    let bcs: Vec<f64> = per.iter().filter_map(|e| e.bc).collect();
    let bc = if bcs.is_empty() { 0.0 } else { bcs.iter().sum::<f64>() / bcs.len() as f64 };
    let utmos = per.iter().map(|e| e.utmos).sum::<f64>() / per.len() as f64;
    Ok(MetricReport {
        fgd,
        bc,
        diversity,
        mse,
        lvd,
        utmos_proxy: utmos,
        params: model.param_count() as f64,
        sec_per_sec: 0.0,
    })
}
