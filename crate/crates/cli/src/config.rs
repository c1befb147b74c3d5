use std::path::Path;

use serde::{Deserialize, Serialize};
use wflow::cycleopt::CycleConfig;
use wflow::labels::seg;
use wflow::pipeline::{FlowMode, TransferConfig};
use wflow::pixelflow::FlowParams;
use wflow::synthdata::{Background, Garment, Texture};

/// Everything a run depends on besides its input files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads for independent items; 0 lets the pool decide.
    pub jobs: usize,
    pub flow: FlowParams,
    pub mode: FlowMode,
    pub cycle: CycleConfig,
    pub protected_labels: Vec<u32>,
    pub garment_labels: Vec<u32>,
    pub dilation: usize,
    pub inpaint_iterations: usize,
    pub synth: SynthConfig,
    pub metrics: MetricsConfig,
    pub provenance: Provenance,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TransferConfig::default();
        Self {
            seed: 0,
            jobs: 0,
            flow: t.flow,
            mode: t.mode,
            cycle: CycleConfig::default(),
            protected_labels: t.protected_labels,
            garment_labels: t.garment_labels,
            dilation: t.dilation,
            inpaint_iterations: t.inpaint_iterations,
            synth: SynthConfig::default(),
            metrics: MetricsConfig::default(),
            provenance: Provenance::default(),
        }
    }
}

impl RunConfig {
    pub fn transfer(&self, refine: bool) -> TransferConfig {
        TransferConfig {
            flow: self.flow,
            mode: self.mode,
            refine: refine.then(|| self.cycle.clone()),
            protected_labels: self.protected_labels.clone(),
            garment_labels: self.garment_labels.clone(),
            dilation: self.dilation,
            inpaint_iterations: self.inpaint_iterations,
        }
    }

    pub fn load(path: Option<&Path>) -> wflow::Result<Self> {
        match path {
            Some(p) => wflow::io::read_config(p),
            None => Ok(Self::default()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub canvas: (usize, usize),
    pub garment: Garment,
    pub texture: Texture,
    pub background: Background,
    /// Half-width of the uniform joint-angle jitter, in radians.
    pub pose_jitter: f64,
    /// Half-width of the uniform figure offset, in pixels.
    pub max_translation: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            canvas: (128, 128),
            garment: Garment::Tight,
            texture: Texture::Noise { period: 6.0 },
            background: Background::Gradient,
            pose_jitter: 0.3,
            max_translation: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsConfig {
    pub iou_threshold: f64,
    /// Labels counted as garment when a bundle segmentation is evaluated.
    pub garment_labels: Vec<u32>,
    /// Frames kept per video by `pairs`.
    pub frames_per_video: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            iou_threshold: 0.5,
            garment_labels: seg::GARMENT.to_vec(),
            frames_per_video: 10,
        }
    }
}

/// Optimizer settings of the learned reference model. Recorded with every
/// run; nothing here reads them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Provenance {
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub learning_rate: f64,
}

impl Default for Provenance {
    fn default() -> Self {
        Self {
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            learning_rate: 0.0002,
        }
    }
}
