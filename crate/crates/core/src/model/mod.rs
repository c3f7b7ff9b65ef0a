//! The assembled model: speech branch, gesture branch and their losses.

pub mod count;

use std::sync::Arc;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frontend::{gesture_frame_count, PhonemeSequence, SyntheticSample, HOP_LENGTH};
use crate::gesture::{
    audio_to_gesture_frames, embed_words, expand_to_frames, gesture_frame_words, gesture_loss, Codebook,
    GestureLatentDecoder, MotionDecoder, RhythmTranslator, SemanticTranslator, SpeechRhythm,
};
use crate::nas::{ArchitectureConfig, ModuleKind};
use crate::numerics::{Graph, ParamStore, Tensor, Var};
use crate::rng;
use crate::speech::{
    durations_from_log, length_regulate, log_durations, multi_resolution_stft_loss, pitch_spectrogram, CwtConfig,
    MelDecoder, PhonemeEncoder, RhythmPredictor, StftLossConfig, WaveformDecoder,
};
use crate::speech::{lsgan_generator_loss, Discriminator};

pub use count::{analytic_param_count, module_params, PITCH_SCALES};

/// Phoneme vocabulary size of the shipped table.
pub const DEFAULT_VOCAB: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub audio: f64,
    pub gesture: f64,
    /// Inside the audio term: STFT, mel and adversarial parts.
    pub stft: f64,
    pub mel: f64,
    pub adversarial: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            duration: 1.0,
            pitch: 1.0,
            energy: 1.0,
            audio: 1.0,
            gesture: 1.0,
            stft: 1.0,
            mel: 1.0,
            adversarial: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelOptions {
    pub vocab: usize,
    pub dropout: f64,
    pub cwt: CwtConfig,
    pub stft: StftLossConfig,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self {
            vocab: DEFAULT_VOCAB,
            dropout: 0.1,
            cwt: CwtConfig::default(),
            stft: StftLossConfig::default(),
        }
    }
}

/// Frame-aligned targets derived from one corpus sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Targets {
    pub log_durations: Tensor,
    /// `[m × scales]`.
    pub pitch: Tensor,
    /// `[m × 1]`.
    pub energy: Tensor,
    /// `[m × 80]`, time-major.
    pub mel: Tensor,
    pub waveform: Tensor,
    pub codes: Vec<usize>,
    /// Codebook rows of `codes`, `[T_g × 256]`; `None` when `T_g = 0`.
    pub latents: Option<Tensor>,
}

impl Targets {
    pub fn from_sample(sample: &SyntheticSample, codebook: &Codebook, cwt: &CwtConfig) -> Result<Self> {
        sample.check()?;
        let m = sample.frames();
        Ok(Self {
            log_durations: log_durations(&sample.alignment.durations)?,
            pitch: pitch_spectrogram(&sample.pitch, cwt)?,
            energy: Tensor::new(vec![m, 1], sample.energy.clone())?,
            mel: sample.mel.transpose2(),
            waveform: Tensor::vector(sample.waveform.clone()),
            codes: sample.gesture_codes.clone(),
            latents: if sample.gesture_codes.is_empty() {
                None
            } else {
                Some(codebook.dequantize(&sample.gesture_codes)?)
            },
        })
    }
}

/// Speech-branch activations for one utterance.
#[derive(Debug, Clone)]
pub struct SpeechOutputs {
    pub f_pho: Var,
    pub f_d: Var,
    pub log_durations: Var,
    pub durations: Vec<usize>,
    pub f_pitch: Var,
    pub pitch: Var,
    pub f_e: Var,
    pub energy: Var,
    /// `[m × 3l]` concatenated rhythm features.
    pub rhythm: Var,
    pub mel: Option<Var>,
    pub waveform: Var,
}

impl SpeechOutputs {
    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

#[derive(Debug, Clone)]
pub struct GestureOutputs {
    pub logits: Var,
    pub latent: Var,
    pub gates: [Var; 3],
    pub frames: usize,
}

/// Every loss term as a graph node.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub duration: Var,
    pub pitch: Var,
    pub energy: Var,
    pub stft: Var,
    pub mel: Var,
    pub adversarial: Option<Var>,
    pub audio: Var,
    pub gesture_ce: Option<Var>,
    pub gesture_l1: Option<Var>,
    pub gesture: Option<Var>,
    pub total: Var,
    /// Generated waveform, for the critic update.
    pub waveform: Var,
}

/// Scalar values of [`LossTerms`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
    pub stft: f64,
    pub mel: f64,
    pub adversarial: f64,
    pub audio: f64,
    pub gesture_ce: f64,
    pub gesture_l1: f64,
    pub gesture: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, g: &Graph) -> LossValues {
        let v = |x: Var| g.value(x).data()[0];
        let o = |x: Option<Var>| x.map_or(0.0, v);
        LossValues {
            duration: v(self.duration),
            pitch: v(self.pitch),
            energy: v(self.energy),
            stft: v(self.stft),
            mel: v(self.mel),
            adversarial: o(self.adversarial),
            audio: v(self.audio),
            gesture_ce: o(self.gesture_ce),
            gesture_l1: o(self.gesture_l1),
            gesture: o(self.gesture),
            total: v(self.total),
        }
    }
}

impl LossValues {
    pub fn add_scaled(&mut self, o: &LossValues, s: f64) {
        self.duration += s * o.duration;
        self.pitch += s * o.pitch;
        self.energy += s * o.energy;
        self.stft += s * o.stft;
        self.mel += s * o.mel;
        self.adversarial += s * o.adversarial;
        self.audio += s * o.audio;
        self.gesture_ce += s * o.gesture_ce;
        self.gesture_l1 += s * o.gesture_l1;
        self.gesture += s * o.gesture;
        self.total += s * o.total;
    }
}

/// Output of inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub durations: Vec<usize>,
    pub waveform: Vec<f64>,
    pub codes: Vec<usize>,
    /// `[T_g × 48]` poses, `None` when the utterance is too short for a gesture frame.
    pub motion: Option<Tensor>,
}

impl Generation {
    pub fn frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

pub struct FastTalker {
    pub arch: ArchitectureConfig,
    pub options: ModelOptions,
    pub store: ParamStore,
    pub encoder: PhonemeEncoder,
    pub duration: Arc<RhythmPredictor>,
    pub energy: Arc<RhythmPredictor>,
    pub pitch: Arc<RhythmPredictor>,
    pub semantic: SemanticTranslator,
    pub waveform: WaveformDecoder,
    pub gesture: GestureLatentDecoder,
    pub mel: MelDecoder,
    pub rhythm: RhythmTranslator,
    pub codebook: Arc<Codebook>,
    pub motion: Arc<MotionDecoder>,
}

impl FastTalker {
    /// Builds a model with weights drawn from the `init` stream of `seed`.
    pub fn new(arch: ArchitectureConfig, options: ModelOptions, seed: u64) -> Result<Self> {
        arch.validate()?;
        if options.vocab == 0 {
            return Err(Error::InvalidArgument("vocabulary must be nonempty".into()));
        }
        let mut r: ChaCha8Rng = rng::stream(seed, rng::streams::INIT);
        let mut store = ParamStore::new();
        let l = arch.model_dim();
        let p = options.dropout;
        let encoder = PhonemeEncoder::new(&mut store, options.vocab, &arch.phoneme_encoder, p, &mut r)?;
        let duration = Arc::new(RhythmPredictor::new(&mut store, "duration", l, 1, &arch.duration_pred, p, &mut r)?);
        let energy = Arc::new(RhythmPredictor::new(&mut store, "energy", l, 1, &arch.energy_pred, p, &mut r)?);
        let pitch = Arc::new(RhythmPredictor::new(&mut store, "pitch", l, PITCH_SCALES, &arch.pitch_pred, p, &mut r)?);
        let semantic = SemanticTranslator::new(&mut store, &arch.semantic_translator, &mut r)?;
        let waveform = WaveformDecoder::new(&mut store, 3 * l, &arch.waveform_decoder, &mut r)?;
        let gesture_in = 3 * l + arch.semantic_translator.channels;
        let gesture = GestureLatentDecoder::new(&mut store, gesture_in, &arch.gesture_latent_decoder, p, &mut r)?;
        let mel = MelDecoder::new(&mut store, 3 * l, &mut r)?;
        let rhythm = RhythmTranslator::new(&mut store, l, [duration.clone(), pitch.clone(), energy.clone()], &mut r)?;
        Ok(Self {
            arch,
            options,
            store,
            encoder,
            duration,
            energy,
            pitch,
            semantic,
            waveform,
            gesture,
            mel,
            rhythm,
            codebook: Arc::new(Codebook::frozen()),
            motion: Arc::new(MotionDecoder::frozen()),
        })
    }

    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Scalars stored under a module's name prefix.
    pub fn module_param_count(&self, kind: ModuleKind) -> usize {
        let prefix = match kind {
            ModuleKind::PhonemeEncoder => "encoder.",
            ModuleKind::DurationPred => "duration.",
            ModuleKind::EnergyPred => "energy.",
            ModuleKind::PitchPred => "pitch.",
            ModuleKind::SemanticTranslator => "semantic.",
            ModuleKind::WaveformDecoder => "wave.",
            ModuleKind::GestureLatentDecoder => "gesture.",
        };
        self.store
            .iter()
            .filter(|(_, name, _)| name.starts_with(prefix))
            .map(|(_, _, t)| t.len())
            .sum()
    }

    /// Speech branch. With `durations = None` the predicted durations are
    /// used; `with_mel = false` skips the mel decoder as at inference time.
    pub fn forward_speech(
        &self,
        g: &mut Graph,
        tokens: &[usize],
        durations: Option<&[usize]>,
        with_mel: bool,
    ) -> Result<SpeechOutputs> {
        let s = &self.store;
        let f_pho = self.encoder.forward(g, s, tokens)?;
        let f_d = self.duration.latent(g, s, f_pho)?;
        let log_d = self.duration.predict(g, s, f_d)?;
        let durations = match durations {
            Some(d) => d.to_vec(),
            None => durations_from_log(g.value(log_d).data()),
        };
        let frames_d = length_regulate(g, f_d, &durations)?;
        let frames_pho = length_regulate(g, f_pho, &durations)?;
        let x = g.add(frames_d, frames_pho)?;
        let f_pitch = self.pitch.latent(g, s, x)?;
        let pitch = self.pitch.predict(g, s, f_pitch)?;
        let x = g.add_n(&[frames_d, f_pitch, frames_pho])?;
        let f_e = self.energy.latent(g, s, x)?;
        let energy = self.energy.predict(g, s, f_e)?;
        let rhythm = g.concat_cols(&[frames_d, f_pitch, f_e])?;
        let mel = if with_mel { Some(self.mel.forward(g, s, rhythm)?) } else { None };
        let waveform = self.waveform.forward(g, s, rhythm)?;
        Ok(SpeechOutputs {
            f_pho,
            f_d,
            log_durations: log_d,
            durations,
            f_pitch,
            pitch,
            f_e,
            energy,
            rhythm,
            mel,
            waveform,
        })
    }

    /// Gesture branch on top of speech outputs; `None` when the utterance
    /// has no gesture frame.
    pub fn forward_gesture(&self, g: &mut Graph, seq: &PhonemeSequence, speech: &SpeechOutputs) -> Result<Option<GestureOutputs>> {
        let frames = gesture_frame_count(speech.frames());
        if frames == 0 {
            return Ok(None);
        }
        let s = &self.store;
        let fused = self.rhythm.forward(
            g,
            s,
            SpeechRhythm {
                f_pho: speech.f_pho,
                f_d: speech.f_d,
                f_pitch: speech.f_pitch,
                f_e: speech.f_e,
                durations: &speech.durations,
            },
        )?;
        let r_g = audio_to_gesture_frames(g, fused.fused, frames)?;
        let words: Vec<String> = seq.words.iter().map(|w| w.word.clone()).collect();
        let emb = g.constant(embed_words(&words)?);
        let per_word = self.semantic.forward(g, s, emb)?;
        let frame_words = gesture_frame_words(seq, &speech.durations, frames);
        let s_g = expand_to_frames(g, per_word, &frame_words)?;
        let x = g.concat_cols(&[r_g, s_g])?;
        let (logits, latent) = self.gesture.forward(g, s, x)?;
        Ok(Some(GestureOutputs {
            logits,
            latent,
            gates: fused.gates,
            frames,
        }))
    }

    /// Full teacher-forced forward pass with every loss term. `critic` adds
    /// the least-squares generator term using a fixed discriminator.
    pub fn losses(
        &self,
        g: &mut Graph,
        sample: &SyntheticSample,
        targets: &Targets,
        weights: &LossWeights,
        critic: Option<(&Discriminator, &ParamStore)>,
    ) -> Result<LossTerms> {
        let speech = self.forward_speech(g, &sample.phonemes.tokens, Some(&sample.alignment.durations), true)?;
        let t_d = g.constant(targets.log_durations.clone());
        let duration = g.mse(speech.log_durations, t_d)?;
        let t_p = g.constant(targets.pitch.clone());
        let pitch = g.mse(speech.pitch, t_p)?;
        let t_e = g.constant(targets.energy.clone());
        let energy = g.mse(speech.energy, t_e)?;

        let t_a = g.constant(targets.waveform.clone());
        let stft = multi_resolution_stft_loss(g, speech.waveform, t_a, &self.options.stft)?;
        let t_s = g.constant(targets.mel.clone());
        let mel = g.mse(speech.mel.expect("mel requested"), t_s)?;
        let adversarial = match critic {
            Some((d, store)) if weights.adversarial != 0.0 => {
                let score = d.forward_detached(g, store, speech.waveform)?;
                Some(lsgan_generator_loss(g, score)?)
            }
            _ => None,
        };
        let mut audio_parts = vec![g.scale(stft, weights.stft)?, g.scale(mel, weights.mel)?];
        if let Some(a) = adversarial {
            audio_parts.push(g.scale(a, weights.adversarial)?);
        }
        let audio = g.add_n(&audio_parts)?;

        let gesture_out = self.forward_gesture(g, &sample.phonemes, &speech)?;
        let (gesture_ce, gesture_l1, gesture) = match (gesture_out, &targets.latents) {
            (Some(out), Some(lat)) => {
                let lat = g.constant(lat.clone());
                let t = gesture_loss(g, out.logits, out.latent, &targets.codes, lat)?;
                (Some(t.cross_entropy), Some(t.latent_l1), Some(t.total))
            }
            _ => (None, None, None),
        };

        let mut parts = vec![
            g.scale(duration, weights.duration)?,
            g.scale(pitch, weights.pitch)?,
            g.scale(energy, weights.energy)?,
            g.scale(audio, weights.audio)?,
        ];
        if let Some(ge) = gesture {
            parts.push(g.scale(ge, weights.gesture)?);
        }
        let total = g.add_n(&parts)?;
        Ok(LossTerms {
            duration,
            pitch,
            energy,
            stft,
            mel,
            adversarial,
            audio,
            gesture_ce,
            gesture_l1,
            gesture,
            total,
            waveform: speech.waveform,
        })
    }

    pub fn targets(&self, sample: &SyntheticSample) -> Result<Targets> {
        Targets::from_sample(sample, &self.codebook, &self.options.cwt)
    }

    /// Inference: predicted (or forced) durations, waveform and motion. The
    /// mel decoder is not run.
    pub fn synthesize(&self, seq: &PhonemeSequence, durations: Option<&[usize]>) -> Result<Generation> {
        seq.validate(self.options.vocab)?;
        let mut g = Graph::new();
        let speech = self.forward_speech(&mut g, &seq.tokens, durations, false)?;
        let waveform = g.value(speech.waveform).data().to_vec();
        debug_assert_eq!(waveform.len(), speech.frames() * HOP_LENGTH);
        let gesture = self.forward_gesture(&mut g, seq, &speech)?;
        let (codes, motion) = match gesture {
            Some(out) => {
                let logits = g.value(out.logits);
                let codes: Vec<usize> = (0..logits.rows()).map(|t| argmax(logits.row(t))).collect();
                let motion = self.motion.reconstruct(&codes, &self.codebook)?;
                (codes, Some(motion))
            }
            None => (Vec::new(), None),
        };
        Ok(Generation {
            durations: speech.durations,
            waveform,
            codes,
            motion,
        })
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::synth_corpus;
    use crate::nas::ModuleConfig;

    fn tiny() -> FastTalker {
        let opts = ModelOptions {
            dropout: 0.0,
            ..Default::default()
        };
        FastTalker::new(ArchitectureConfig::tiny(), opts, 5).unwrap()
    }

    #[test]
    fn param_count_matches_closed_form() {
        let m = tiny();
        assert_eq!(m.param_count(), analytic_param_count(&m.arch, m.options.vocab));
        for k in ModuleKind::ALL {
            assert_eq!(m.module_param_count(k), module_params(&m.arch, k, m.options.vocab), "{k}");
        }
        let zero = ArchitectureConfig::uniform(ModuleConfig::new(8, 0, 2, 1));
        let m0 = FastTalker::new(zero, ModelOptions::default(), 1).unwrap();
        assert_eq!(m0.param_count(), analytic_param_count(&zero, 64));
    }

    #[test]
    fn loss_total_is_sum_of_terms() {
        let m = tiny();
        let s = &synth_corpus(3, 1, 64).unwrap()[0];
        let t = m.targets(s).unwrap();
        let mut g = Graph::new();
        let terms = m.losses(&mut g, s, &t, &LossWeights::default(), None).unwrap();
        let v = terms.values(&g);
        let sum = v.duration + v.pitch + v.energy + v.audio + v.gesture;
        assert!((v.total - sum).abs() < 1e-12);
        assert!((v.audio - v.stft - v.mel).abs() < 1e-12);
        assert!((v.gesture - v.gesture_ce - v.gesture_l1).abs() < 1e-12);
    }

    #[test]
    fn synthesize_with_forced_durations() {
        let m = tiny();
        let seq = crate::frontend::phonemize("bad cat").unwrap();
        let d: Vec<usize> = (1..=seq.len()).collect();
        let out = m.synthesize(&seq, Some(&d)).unwrap();
        let total: usize = d.iter().sum();
        assert_eq!(out.waveform.len(), total * HOP_LENGTH);
        assert_eq!(out.motion.unwrap().rows(), gesture_frame_count(total));
        assert_eq!(m.synthesize(&seq, Some(&d)).unwrap().waveform, out.waveform);
    }
}
