use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Searchable modules in decision order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModuleKind {
    PhonemeEncoder,
    DurationPred,
    EnergyPred,
    PitchPred,
    SemanticTranslator,
    WaveformDecoder,
    GestureLatentDecoder,
}

impl ModuleKind {
    pub const ALL: [ModuleKind; 7] = [
        ModuleKind::PhonemeEncoder,
        ModuleKind::DurationPred,
        ModuleKind::EnergyPred,
        ModuleKind::PitchPred,
        ModuleKind::SemanticTranslator,
        ModuleKind::WaveformDecoder,
        ModuleKind::GestureLatentDecoder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModuleKind::PhonemeEncoder => "phoneme_encoder",
            ModuleKind::DurationPred => "duration_pred",
            ModuleKind::EnergyPred => "energy_pred",
            ModuleKind::PitchPred => "pitch_pred",
            ModuleKind::SemanticTranslator => "semantic_translator",
            ModuleKind::WaveformDecoder => "waveform_decoder",
            ModuleKind::GestureLatentDecoder => "gesture_latent_decoder",
        }
    }
}

impl fmt::Display for ModuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparameter {
    Channels,
    Layers,
    Groups,
    Kernel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleConfig {
    pub channels: usize,
    pub layers: usize,
    pub groups: usize,
    pub kernel: usize,
}

impl ModuleConfig {
    pub const fn new(channels: usize, layers: usize, groups: usize, kernel: usize) -> Self {
        Self {
            channels,
            layers,
            groups,
            kernel,
        }
    }

    pub fn get(&self, h: Hyperparameter) -> usize {
        match h {
            Hyperparameter::Channels => self.channels,
            Hyperparameter::Layers => self.layers,
            Hyperparameter::Groups => self.groups,
            Hyperparameter::Kernel => self.kernel,
        }
    }

    pub fn set(&mut self, h: Hyperparameter, v: usize) {
        match h {
            Hyperparameter::Channels => self.channels = v,
            Hyperparameter::Layers => self.layers = v,
            Hyperparameter::Groups => self.groups = v,
            Hyperparameter::Kernel => self.kernel = v,
        }
    }
}

/// Per-module hyperparameters of one model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    pub phoneme_encoder: ModuleConfig,
    pub duration_pred: ModuleConfig,
    pub energy_pred: ModuleConfig,
    pub pitch_pred: ModuleConfig,
    pub semantic_translator: ModuleConfig,
    pub waveform_decoder: ModuleConfig,
    pub gesture_latent_decoder: ModuleConfig,
}

impl ArchitectureConfig {
    /// Every module set to `m`.
    pub fn uniform(m: ModuleConfig) -> Self {
        Self::from_modules([m; 7])
    }

    pub fn from_modules(m: [ModuleConfig; 7]) -> Self {
        Self {
            phoneme_encoder: m[0],
            duration_pred: m[1],
            energy_pred: m[2],
            pitch_pred: m[3],
            semantic_translator: m[4],
            waveform_decoder: m[5],
            gesture_latent_decoder: m[6],
        }
    }

    pub fn modules(&self) -> [ModuleConfig; 7] {
        ModuleKind::ALL.map(|k| *self.get(k))
    }

    pub fn get(&self, kind: ModuleKind) -> &ModuleConfig {
        match kind {
            ModuleKind::PhonemeEncoder => &self.phoneme_encoder,
            ModuleKind::DurationPred => &self.duration_pred,
            ModuleKind::EnergyPred => &self.energy_pred,
            ModuleKind::PitchPred => &self.pitch_pred,
            ModuleKind::SemanticTranslator => &self.semantic_translator,
            ModuleKind::WaveformDecoder => &self.waveform_decoder,
            ModuleKind::GestureLatentDecoder => &self.gesture_latent_decoder,
        }
    }

    pub fn get_mut(&mut self, kind: ModuleKind) -> &mut ModuleConfig {
        match kind {
            ModuleKind::PhonemeEncoder => &mut self.phoneme_encoder,
            ModuleKind::DurationPred => &mut self.duration_pred,
            ModuleKind::EnergyPred => &mut self.energy_pred,
            ModuleKind::PitchPred => &mut self.pitch_pred,
            ModuleKind::SemanticTranslator => &mut self.semantic_translator,
            ModuleKind::WaveformDecoder => &mut self.waveform_decoder,
            ModuleKind::GestureLatentDecoder => &mut self.gesture_latent_decoder,
        }
    }

    /// Width shared by phoneme-level and frame-level features.
    pub fn model_dim(&self) -> usize {
        self.phoneme_encoder.channels
    }

    /// Structural validity, independent of any search space.
    pub fn validate(&self) -> Result<()> {
        for kind in ModuleKind::ALL {
            let m = self.get(kind);
            if m.channels == 0 || m.groups == 0 || m.kernel == 0 {
                return Err(Error::Architecture(format!("{kind}: channels, groups and kernel must be positive")));
            }
            if m.channels % m.groups != 0 {
                return Err(Error::Architecture(format!(
                    "{kind}: channels {} not divisible by groups {}",
                    m.channels, m.groups
                )));
            }
            if m.kernel % 2 == 0 {
                return Err(Error::Architecture(format!("{kind}: kernel {} must be odd", m.kernel)));
            }
        }
        let attention = [
            (ModuleKind::PhonemeEncoder, true),
            (ModuleKind::GestureLatentDecoder, self.gesture_latent_decoder.layers > 0),
        ];
        for (kind, uses_attention) in attention {
            let c = self.get(kind).channels;
            if uses_attention && c % crate::numerics::layers::ATTENTION_HEADS != 0 {
                return Err(Error::Architecture(format!("{kind}: channels {c} not divisible by the head count")));
            }
        }
        Ok(())
    }

    /// The searched architecture reported for the full-scale model. The
    /// kernel size is not reported; `kernel` fills it for every module.
    pub fn searched_preset(kernel: usize) -> Self {
        let layers = [8, 4, 2, 4, 0, 8, 0];
        let channels = [256, 32, 64, 32, 64, 128, 128];
        let groups = [4, 1, 1, 1, 8, 1, 4];
        Self::from_modules(std::array::from_fn(|i| ModuleConfig::new(channels[i], layers[i], groups[i], kernel)))
    }

    /// A small configuration for tests and quick runs.
    pub fn tiny() -> Self {
        Self::uniform(ModuleConfig::new(8, 1, 1, 3))
    }

    /// Resolves a preset name.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper-searched" | "searched" => Ok(Self::searched_preset(3)),
            "tiny" => Ok(Self::tiny()),
            "small" => Ok(Self::from_modules([
                ModuleConfig::new(32, 2, 1, 3),
                ModuleConfig::new(32, 2, 1, 3),
                ModuleConfig::new(32, 2, 1, 3),
                ModuleConfig::new(32, 2, 1, 3),
                ModuleConfig::new(32, 0, 1, 3),
                ModuleConfig::new(32, 2, 1, 3),
                ModuleConfig::new(32, 0, 1, 3),
            ])),
            other => Err(Error::Config(format!(
                "unknown architecture preset {other:?} (expected searched, small or tiny)"
            ))),
        }
    }
}

/// Choice lists for each hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSpace {
    pub modules: Vec<ModuleKind>,
    pub channels: Vec<usize>,
    pub layers: Vec<usize>,
    pub groups: Vec<usize>,
    pub kernel: Vec<usize>,
    /// When false the kernel is not searched and `fixed_kernel` is used.
    pub search_kernel: bool,
    pub fixed_kernel: usize,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            modules: ModuleKind::ALL.to_vec(),
            channels: vec![32, 64, 128, 256],
            layers: vec![0, 2, 4, 8],
            groups: vec![1, 2, 4, 8],
            kernel: vec![1, 3, 5, 7],
            search_kernel: true,
            fixed_kernel: 3,
        }
    }
}

/// Number of choices per decision.
pub const CHOICES: usize = 4;

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        if self.modules != ModuleKind::ALL {
            return Err(Error::Config("search space must list the seven modules in order".into()));
        }
        for (name, list) in [
            ("channels", &self.channels),
            ("layers", &self.layers),
            ("groups", &self.groups),
            ("kernel", &self.kernel),
        ] {
            if list.len() != CHOICES {
                return Err(Error::Config(format!("{name} must have exactly {CHOICES} choices, got {}", list.len())));
            }
        }
        if self.channels.contains(&0) || self.groups.contains(&0) {
            return Err(Error::Config("channel and group choices must be positive".into()));
        }
        if self.channels.iter().any(|c| c % crate::numerics::layers::ATTENTION_HEADS != 0) {
            return Err(Error::Config("channel choices must be divisible by the head count".into()));
        }
        let kernels: &[usize] = if self.search_kernel { &self.kernel } else { std::slice::from_ref(&self.fixed_kernel) };
        if kernels.iter().any(|k| k % 2 == 0) {
            return Err(Error::Config("kernel choices must be odd".into()));
        }
        if !self.channels.iter().any(|c| self.groups.iter().any(|g| c % g == 0)) {
            return Err(Error::Config("no channel choice is divisible by any group choice".into()));
        }
        Ok(())
    }

    /// Hyperparameters decided per module, in decision order.
    pub fn active(&self) -> Vec<Hyperparameter> {
        let mut h = vec![Hyperparameter::Channels, Hyperparameter::Layers, Hyperparameter::Groups];
        if self.search_kernel {
            h.push(Hyperparameter::Kernel);
        }
        h
    }

    /// Controller decode length.
    pub fn decisions(&self) -> usize {
        self.modules.len() * self.active().len()
    }

    pub fn choices(&self, h: Hyperparameter) -> &[usize] {
        match h {
            Hyperparameter::Channels => &self.channels,
            Hyperparameter::Layers => &self.layers,
            Hyperparameter::Groups => &self.groups,
            Hyperparameter::Kernel => &self.kernel,
        }
    }

    /// Index of `value` among the choices for `h`.
    pub fn index_of(&self, h: Hyperparameter, value: usize) -> Option<usize> {
        self.choices(h).iter().position(|&v| v == value)
    }

    /// Builds a config from one choice index per decision.
    pub fn decode(&self, indices: &[usize]) -> Result<ArchitectureConfig> {
        let active = self.active();
        if indices.len() != self.decisions() {
            return Err(Error::Architecture(format!(
                "expected {} decisions, got {}",
                self.decisions(),
                indices.len()
            )));
        }
        let mut modules = [ModuleConfig::new(0, 0, 0, self.fixed_kernel); 7];
        for (t, &idx) in indices.iter().enumerate() {
            let h = active[t % active.len()];
            let v = *self
                .choices(h)
                .get(idx)
                .ok_or_else(|| Error::Architecture(format!("choice index {idx} out of range")))?;
            modules[t / active.len()].set(h, v);
        }
        let cfg = ArchitectureConfig::from_modules(modules);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Inverse of [`SearchSpace::decode`].
    pub fn encode(&self, cfg: &ArchitectureConfig) -> Result<Vec<usize>> {
        let mut out = Vec::with_capacity(self.decisions());
        for kind in ModuleKind::ALL {
            let m = cfg.get(kind);
            for h in self.active() {
                out.push(self.index_of(h, m.get(h)).ok_or_else(|| {
                    Error::Architecture(format!("{kind}: {h:?} = {} is not in the search space", m.get(h)))
                })?);
            }
            if !self.search_kernel && m.kernel != self.fixed_kernel {
                return Err(Error::Architecture(format!("{kind}: kernel must be {}", self.fixed_kernel)));
            }
        }
        Ok(out)
    }
}
