//! Closed-form parameter counts, computed from layer formulas without
//! building any weights.

use crate::frontend::MEL_BINS;
use crate::gesture::WORD_EMBEDDING_DIM;
use crate::nas::{ArchitectureConfig, ModuleConfig, ModuleKind};
use crate::numerics::layers::{LayerNorm, Linear, TransformerBlock};
use crate::numerics::{ConvSpec, TransposedConvSpec};
use crate::speech::modules::MEL_HIDDEN;
use crate::frontend::HOP_LENGTH;
use crate::gesture::rhythm::GATE_HIDDEN;
use crate::gesture::LATENT_DIM;
use crate::frontend::CODEBOOK_SIZE;

pub const PITCH_SCALES: usize = 10;

fn conv(i: usize, o: usize, k: usize, g: usize) -> usize {
    ConvSpec::new(i, o, k).groups(g).param_count()
}

fn transformer_stack(dim: usize, m: &ModuleConfig) -> usize {
    if m.layers == 0 {
        Linear::param_count(dim, dim)
    } else {
        m.layers * TransformerBlock::param_count(dim, m.kernel, m.groups) + LayerNorm::param_count(dim)
    }
}

fn predictor(dim: usize, m: &ModuleConfig, head: usize) -> usize {
    let c = m.channels;
    let body = if m.layers == 0 {
        Linear::param_count(dim, dim)
    } else {
        Linear::param_count(dim, c)
            + m.layers * (conv(c, c, m.kernel, m.groups) + LayerNorm::param_count(c))
            + Linear::param_count(c, dim)
    };
    body + Linear::param_count(dim, head)
}

/// Parameters of one searchable module.
pub fn module_params(arch: &ArchitectureConfig, kind: ModuleKind, vocab: usize) -> usize {
    let l = arch.model_dim();
    let m = arch.get(kind);
    let c = m.channels;
    match kind {
        ModuleKind::PhonemeEncoder => vocab * l + transformer_stack(l, m),
        ModuleKind::DurationPred => predictor(l, m, 1),
        ModuleKind::EnergyPred => predictor(l, m, 1),
        ModuleKind::PitchPred => predictor(l, m, PITCH_SCALES),
        ModuleKind::SemanticTranslator => {
            Linear::param_count(WORD_EMBEDDING_DIM, c) + m.layers * conv(c, c, m.kernel, m.groups)
        }
        ModuleKind::WaveformDecoder => {
            if m.layers == 0 {
                TransposedConvSpec::new(3 * l, 1, HOP_LENGTH, HOP_LENGTH).param_count()
            } else {
                conv(3 * l, c, 1, 1)
                    + m.layers * (conv(c, 2 * c, m.kernel, m.groups) + conv(c, c, 1, m.groups))
                    + TransposedConvSpec::new(c, 1, HOP_LENGTH, HOP_LENGTH).param_count()
            }
        }
        ModuleKind::GestureLatentDecoder => {
            let in_dim = 3 * l + arch.semantic_translator.channels;
            let out = CODEBOOK_SIZE + LATENT_DIM;
            if m.layers == 0 {
                Linear::param_count(in_dim, out)
            } else {
                Linear::param_count(in_dim, c) + transformer_stack(c, m) + Linear::param_count(c, out)
            }
        }
    }
}

/// Parameters outside the searched modules: mel decoder, rhythm adapters and gates.
pub fn fixed_params(arch: &ArchitectureConfig) -> usize {
    let l = arch.model_dim();
    let mel = conv(3 * l, MEL_HIDDEN, 3, 1) + conv(MEL_HIDDEN, MEL_BINS, 1, 1);
    let gate = conv(2 * l, GATE_HIDDEN, 3, 1) + conv(GATE_HIDDEN, 1, 3, 1);
    mel + 3 * (Linear::param_count(l, l) + gate)
}

pub fn analytic_param_count(arch: &ArchitectureConfig, vocab: usize) -> usize {
    ModuleKind::ALL.iter().map(|&k| module_params(arch, k, vocab)).sum::<usize>() + fixed_params(arch)
}
