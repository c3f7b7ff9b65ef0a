//! Shared fixtures for the benchmarks.

use fasttalker::frontend::{phonemize, PhonemeSequence};
use fasttalker::model::{FastTalker, ModelOptions};
use fasttalker::nas::ArchitectureConfig;

pub const SCRIPT: &str = "open the door and make it so";

pub fn script() -> PhonemeSequence {
    phonemize(SCRIPT).expect("benchmark script phonemizes")
}

/// A freshly initialized model with dropout disabled.
pub fn model(arch: ArchitectureConfig) -> FastTalker {
    let options = ModelOptions {
        dropout: 0.0,
        ..Default::default()
    };
    FastTalker::new(arch, options, 1).expect("valid benchmark architecture")
}

/// The searched preset with every layer count doubled.
pub fn doubled(arch: &ArchitectureConfig) -> ArchitectureConfig {
    let mut a = arch.clone();
    for kind in fasttalker::nas::ModuleKind::ALL {
        a.get_mut(kind).layers *= 2;
    }
    a
}

/// Fixed durations so timings do not depend on the untrained duration head.
pub fn durations(seq: &PhonemeSequence) -> Vec<usize> {
    (0..seq.len()).map(|i| 4 + i % 5).collect()
}
