use std::sync::Arc;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::frontend::gesture_to_audio_frame;
use crate::numerics::layers::{Conv1d, Linear};
use crate::numerics::{ConvSpec, Graph, ParamStore, Var};
use crate::speech::{length_regulate, RhythmPredictor};

/// Hidden width of each fusion gate.
pub const GATE_HIDDEN: usize = 16;

/// How the fusion weight is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum GateMode {
    #[default]
    Learned,
    /// Every gate outputs this constant (clamped to [0, 1]).
    Fixed(f64),
}

/// Two causal convolutions (kernel 3) over `[reference, gesture]` with a
/// sigmoid output: one weight in [0, 1] per time step.
#[derive(Debug, Clone)]
pub struct FusionGate {
    pub hidden: Conv1d,
    pub output: Conv1d,
}

impl FusionGate {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        Ok(Self {
            hidden: Conv1d::new(store, &format!("{name}.hidden"), ConvSpec::new(2 * dim, GATE_HIDDEN, 3), rng)?,
            output: Conv1d::new(store, &format!("{name}.output"), ConvSpec::new(GATE_HIDDEN, 1, 3), rng)?,
        })
    }

    pub fn param_count(dim: usize) -> usize {
        ConvSpec::new(2 * dim, GATE_HIDDEN, 3).param_count() + ConvSpec::new(GATE_HIDDEN, 1, 3).param_count()
    }

    /// `[T × 1]` weights.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, reference: Var, gesture: Var) -> Result<Var> {
        let x = g.concat_cols(&[reference, gesture])?;
        let h = self.hidden.forward_tc(g, store, x)?;
        let h = g.relu(h)?;
        let w = self.output.forward_tc(g, store, h)?;
        g.sigmoid(w)
    }
}

/// Speech-side rhythm features the translator fuses with.
#[derive(Debug, Clone, Copy)]
pub struct SpeechRhythm<'a> {
    /// `[n × l]` encoder output.
    pub f_pho: Var,
    /// `[n × l]` duration latent.
    pub f_d: Var,
    /// `[m × l]` pitch latent.
    pub f_pitch: Var,
    /// `[m × l]` energy latent.
    pub f_e: Var,
    pub durations: &'a [usize],
}

#[derive(Debug, Clone)]
pub struct RhythmTranslation {
    /// `[m × 3l]` fused duration, pitch and energy features.
    pub fused: Var,
    /// Gate weights per stage (`[n × 1]`, `[m × 1]`, `[m × 1]`).
    pub gates: [Var; 3],
}

/// Gesture rhythm translator. The three predictors are the speech branch's
/// own objects, so their parameters receive gradients from both branches.
#[derive(Debug, Clone)]
pub struct RhythmTranslator {
    pub duration: Arc<RhythmPredictor>,
    pub pitch: Arc<RhythmPredictor>,
    pub energy: Arc<RhythmPredictor>,
    pub adapters: [Linear; 3],
    pub gates: [FusionGate; 3],
    pub mode: GateMode,
}

impl RhythmTranslator {
    pub fn new(
        store: &mut ParamStore,
        dim: usize,
        shared: [Arc<RhythmPredictor>; 3],
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let [duration, pitch, energy] = shared;
        let names = ["duration", "pitch", "energy"];
        let adapters = names.map(|n| Linear::new(store, &format!("rhythm.{n}.adapter"), dim, dim, rng));
        let mut gates = Vec::new();
        for n in names {
            gates.push(FusionGate::new(store, &format!("rhythm.{n}.gate"), dim, rng)?);
        }
        let gates: [FusionGate; 3] = gates.try_into().expect("three gates");
        Ok(Self {
            duration,
            pitch,
            energy,
            adapters,
            gates,
            mode: GateMode::Learned,
        })
    }

    /// Parameters owned by the translator itself (shared predictors excluded).
    pub fn param_count(dim: usize) -> usize {
        3 * (Linear::param_count(dim, dim) + FusionGate::param_count(dim))
    }

    fn blend(&self, g: &mut Graph, store: &ParamStore, stage: usize, reference: Var, gesture: Var) -> Result<(Var, Var)> {
        if g.shape(reference) != g.shape(gesture) {
            return Err(Error::shape_in(
                "rhythm fusion",
                format!("reference {:?} vs gesture {:?}", g.shape(reference), g.shape(gesture)),
            ));
        }
        let w = match self.mode {
            GateMode::Learned => self.gates[stage].forward(g, store, reference, gesture)?,
            GateMode::Fixed(v) => {
                let rows = g.shape(reference)[0];
                g.constant(crate::numerics::Tensor::full(&[rows, 1], v.clamp(0.0, 1.0)))
            }
        };
        let a = g.mul_row_scalar(reference, w)?;
        let one_minus = g.one_minus(w)?;
        let b = g.mul_row_scalar(gesture, one_minus)?;
        Ok((g.add(a, b)?, w))
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, s: SpeechRhythm<'_>) -> Result<RhythmTranslation> {
        let m: usize = s.durations.iter().sum();
        if g.shape(s.f_pitch)[0] != m || g.shape(s.f_e)[0] != m {
            return Err(Error::shape_in("translate_rhythm", format!("frame features do not have {m} rows")));
        }
        // Duration stage, phoneme level.
        let x = self.adapters[0].forward(g, store, s.f_pho)?;
        let gd = self.duration.latent(g, store, x)?;
        let (r_d, w_d) = self.blend(g, store, 0, s.f_d, gd)?;
        let r_d = length_regulate(g, r_d, s.durations)?;
        let f_pho = length_regulate(g, s.f_pho, s.durations)?;
        // Pitch stage on the regulated sum.
        let x = g.add(r_d, f_pho)?;
        let x = self.adapters[1].forward(g, store, x)?;
        let gp = self.pitch.latent(g, store, x)?;
        let (r_p, w_p) = self.blend(g, store, 1, s.f_pitch, gp)?;
        // Energy stage.
        let x = g.add_n(&[r_d, r_p, f_pho])?;
        let x = self.adapters[2].forward(g, store, x)?;
        let ge = self.energy.latent(g, store, x)?;
        let (r_e, w_e) = self.blend(g, store, 2, s.f_e, ge)?;
        Ok(RhythmTranslation {
            fused: g.concat_cols(&[r_d, r_p, r_e])?,
            gates: [w_d, w_p, w_e],
        })
    }
}

/// Samples `[m × C]` audio-rate features at each gesture frame.
pub fn audio_to_gesture_frames(g: &mut Graph, features: Var, gesture_frames: usize) -> Result<Var> {
    let m = g.shape(features)[0];
    let idx: Vec<Option<usize>> = (0..gesture_frames).map(|j| Some(gesture_to_audio_frame(j, m))).collect();
    g.gather_rows(features, &idx)
}
