//! The merged configuration tree read by the command-line tool.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::ingest::IngestConfig;
use crate::model::ModelConfig;
use crate::stft::StftConfig;
use crate::synth::SynthConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub ingest: IngestConfig,
    pub dsp: DspConfig,
    pub stft: StftConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
}

impl PipelineConfig {
    /// Reads a (possibly partial) tree; missing keys take their defaults and
    /// unknown keys are rejected.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Uses one seed for splitting, initialization, shuffling and synthesis.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.train.seed = seed;
        self.eval.seed = seed;
        self.synth.seed = seed;
        self
    }

    /// Validates every stage. The filters are checked at the synthetic
    /// sampling rate, which matches the EEGMMIDB recordings.
    pub fn validate(&self) -> Result<()> {
        self.ingest.validate()?;
        self.dsp.validate(self.synth.fs)?;
        self.stft.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        self.synth.validate()
    }
}
