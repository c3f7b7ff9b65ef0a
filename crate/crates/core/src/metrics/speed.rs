use std::time::Instant;

use crate::error::{Error, Result};
use crate::frontend::{PhonemeSequence, SAMPLE_RATE};
use crate::model::FastTalker;

pub const MIN_REPEATS: usize = 3;

/// Wall-clock seconds spent per second of generated audio.
pub fn sec_per_sec(median_seconds: f64, audio_seconds: f64) -> Result<f64> {
    if !(audio_seconds > 0.0) || !(median_seconds >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "timing {median_seconds} s for {audio_seconds} s of audio"
        )));
    }
    Ok(median_seconds / audio_seconds)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Times `run` (which returns the seconds of audio it produced) once as a
/// warm-up and then `repeats` times, and returns the median time per
/// generated second.
pub fn time_generation(repeats: usize, mut run: impl FnMut() -> Result<f64>) -> Result<f64> {
    if repeats < MIN_REPEATS {
        return Err(Error::InvalidArgument(format!("repeats must be at least {MIN_REPEATS}, got {repeats}")));
    }
    let audio = run()?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        let a = run()?;
        times.push(start.elapsed().as_secs_f64());
        if a != audio {
            return Err(Error::InvalidArgument("generation length changed between repeats".into()));
        }
    }
    sec_per_sec(median(times), audio)
}

/// Inference speed of `model` on a script of utterances, synthesized with
/// predicted durations.
pub fn bench_speed(model: &FastTalker, script: &[PhonemeSequence], repeats: usize) -> Result<f64> {
    if script.is_empty() {
        return Err(Error::InvalidArgument("empty benchmark script".into()));
    }
    time_generation(repeats, || {
        let mut samples = 0usize;
        for seq in script {
            samples += model.synthesize(seq, None)?.waveform.len();
        }
        Ok(samples as f64 / SAMPLE_RATE as f64)
    })
}
