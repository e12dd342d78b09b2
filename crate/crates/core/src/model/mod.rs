//! The SSTAF classifier.
//!
//! Input spectrograms `(b, C, f, t)` pass through spectral attention (one
//! softmax weight per frequency bin), spatial attention (one weight per
//! channel), a per-frame linear projection to `(b, t, d_h)`, a pre-norm
//! transformer encoder without positional encoding, and a mean-pooled MLP
//! head that returns raw logits.

mod blocks;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{checkpoint, ParamStore, Precision, Tape, Tensor, Var};
use blocks::{AttentionMlp, EncoderLayer, Linear};

pub const MODEL_CONFIG_FILE: &str = "model.json";
pub const CHECKPOINT_FILE: &str = "model.ckpt";

/// How the two attention stages combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    /// Spatial attention reweights the spectral stage's output.
    #[default]
    Chain,
    /// Both stages reweight the raw input and their outputs are multiplied
    /// elementwise.
    Product,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub f_bins: usize,
    pub t_frames: usize,
    pub d_h: usize,
    pub heads: usize,
    pub layers: usize,
    pub d_ff: usize,
    pub n_classes: usize,
    /// Hidden width of the spectral MLP; `None` means `f_bins / 2`.
    pub spectral_hidden: Option<usize>,
    /// Hidden width of the spatial MLP; `None` means `channels / 2`.
    pub spatial_hidden: Option<usize>,
    pub attention_dropout: f64,
    pub encoder_dropout: f64,
    pub head_dropout: f64,
    pub use_spectral: bool,
    pub use_spatial: bool,
    pub use_transformer: bool,
    pub fusion: Fusion,
    /// Start the output layer of both attention MLPs at zero, so untrained
    /// attention is exactly uniform.
    pub zero_init_attention: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 64,
            f_bins: 65,
            t_frames: 9,
            d_h: 64,
            heads: 8,
            layers: 2,
            d_ff: 256,
            n_classes: 3,
            spectral_hidden: None,
            spatial_hidden: None,
            attention_dropout: 0.1,
            encoder_dropout: 0.2,
            head_dropout: 0.2,
            use_spectral: true,
            use_spatial: true,
            use_transformer: true,
            fusion: Fusion::Chain,
            zero_init_attention: true,
        }
    }
}

/// Named ablation variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoSpectral,
    NoSpatial,
    NoTransformer,
    NoAttention,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::NoSpectral,
        Variant::NoSpatial,
        Variant::NoTransformer,
        Variant::NoAttention,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoSpectral => "no_spectral",
            Variant::NoSpatial => "no_spatial",
            Variant::NoTransformer => "no_transformer",
            Variant::NoAttention => "no_attention",
        }
    }

    /// Accepts `no-transformer` as well as `no_transformer`.
    pub fn parse(s: &str) -> Result<Variant> {
        let s = s.replace('-', "_");
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation variant `{s}`")))
    }

    pub fn apply(self, cfg: &ModelConfig) -> ModelConfig {
        let mut cfg = cfg.clone();
        cfg.use_spectral = !matches!(self, Variant::NoSpectral | Variant::NoAttention);
        cfg.use_spatial = !matches!(self, Variant::NoSpatial | Variant::NoAttention);
        cfg.use_transformer = self != Variant::NoTransformer;
        cfg
    }
}

impl ModelConfig {
    pub fn spectral_width(&self) -> usize {
        self.spectral_hidden.unwrap_or(self.f_bins / 2).max(1)
    }

    pub fn spatial_width(&self) -> usize {
        self.spatial_hidden.unwrap_or(self.channels / 2).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("channels", self.channels),
            ("f_bins", self.f_bins),
            ("d_h", self.d_h),
            ("heads", self.heads),
            ("d_ff", self.d_ff),
            ("n_classes", self.n_classes),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("model {name} must be positive")));
        }
        if !self.d_h.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_h = {} is not divisible by {} heads",
                self.d_h, self.heads
            )));
        }
        for (name, p) in [
            ("attention_dropout", self.attention_dropout),
            ("encoder_dropout", self.encoder_dropout),
            ("head_dropout", self.head_dropout),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Values recorded by one forward pass.
#[derive(Debug)]
pub struct Trace<'t> {
    pub logits: Var<'t>,
    /// `[b, f_bins]` spectral weights, when the stage is enabled.
    pub spectral: Option<Var<'t>>,
    /// `[b, channels]` spatial weights, when the stage is enabled.
    pub spatial: Option<Var<'t>>,
    /// Per encoder layer, attention maps `[b·heads, t, t]`.
    pub attention: Vec<Var<'t>>,
}

#[derive(Debug, Clone)]
pub struct SstafModel {
    cfg: ModelConfig,
    store: ParamStore,
    spectral: Option<AttentionMlp>,
    spatial: Option<AttentionMlp>,
    proj: Linear,
    encoder: Vec<EncoderLayer>,
    head1: Linear,
    head2: Linear,
}

impl SstafModel {
    /// Builds a model with weights drawn from a generator seeded by `seed`.
    /// Disabled stages register no parameters.
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let zero = cfg.zero_init_attention;
        let spectral = cfg
            .use_spectral
            .then(|| {
                AttentionMlp::new(
                    &mut store,
                    "spectral",
                    cfg.f_bins,
                    cfg.spectral_width(),
                    cfg.attention_dropout,
                    zero,
                    &mut rng,
                )
            })
            .transpose()?;
        let spatial = cfg
            .use_spatial
            .then(|| {
                AttentionMlp::new(
                    &mut store,
                    "spatial",
                    cfg.channels,
                    cfg.spatial_width(),
                    cfg.attention_dropout,
                    zero,
                    &mut rng,
                )
            })
            .transpose()?;
        let proj = Linear::new(
            &mut store,
            "proj",
            cfg.channels * cfg.f_bins,
            cfg.d_h,
            true,
            false,
            &mut rng,
        )?;
        let encoder = if cfg.use_transformer {
            (0..cfg.layers)
                .map(|l| {
                    EncoderLayer::new(
                        &mut store,
                        &format!("encoder.{l}"),
                        cfg.d_h,
                        cfg.heads,
                        cfg.d_ff,
                        cfg.encoder_dropout,
                        &mut rng,
                    )
                })
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let half = (cfg.d_h / 2).max(1);
        let head1 = Linear::new(&mut store, "head.l1", cfg.d_h, half, true, false, &mut rng)?;
        let head2 = Linear::new(&mut store, "head.l2", half, cfg.n_classes, true, false, &mut rng)?;
        Ok(SstafModel {
            cfg: cfg.clone(),
            store,
            spectral,
            spatial,
            proj,
            encoder,
            head1,
            head2,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    fn check_input(&self, x: &Var<'_>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.cfg.channels || s[2] != self.cfg.f_bins || s[3] == 0 || s[0] == 0 {
            return Err(Error::Dimension(format!(
                "model expects (b, {}, {}, t ≥ 1) input, got {s:?}",
                self.cfg.channels, self.cfg.f_bins
            )));
        }
        Ok(())
    }

    /// Spectral attention: pool over channels and time, weight each bin.
    /// Returns the reweighted input and the `[b, f]` weights.
    pub fn spectral_forward<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        self.check_input(&x)?;
        let Some(mlp) = &self.spectral else {
            return Ok((x, None));
        };
        let w = mlp.weights(tape, &self.store, x.mean(&[1, 3])?, training, rng)?;
        let b = x.shape()[0];
        let out = x.mul(w.reshape(&[b, 1, self.cfg.f_bins, 1])?)?;
        Ok((out, Some(w)))
    }

    /// Spatial attention: pool over bins and time, weight each channel.
    pub fn spatial_forward<'t>(
        &self,
        tape: &'t Tape,
        x: Var<'t>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(Var<'t>, Option<Var<'t>>)> {
        self.check_input(&x)?;
        let Some(mlp) = &self.spatial else {
            return Ok((x, None));
        };
        let w = mlp.weights(tape, &self.store, x.mean(&[2, 3])?, training, rng)?;
        let b = x.shape()[0];
        let out = x.mul(w.reshape(&[b, self.cfg.channels, 1, 1])?)?;
        Ok((out, Some(w)))
    }

    /// Flattens each time frame's `(C, f)` slice and maps it to `d_h`.
    pub fn project<'t>(&self, tape: &'t Tape, x: Var<'t>) -> Result<Var<'t>> {
        self.check_input(&x)?;
        let s = x.shape();
        let (b, c, f, t) = (s[0], s[1], s[2], s[3]);
        let frames = x.permute(&[0, 3, 1, 2])?.reshape(&[b, t, c * f])?;
        self.proj.forward(tape, &self.store, frames)
    }

    /// One encoder layer's self-attention on an already normalized `[b, t, d_h]`
    /// sequence; returns the output and the `[b·heads, t, t]` maps.
    pub fn mha<'t>(&self, tape: &'t Tape, layer: usize, x: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
        let l = self
            .encoder
            .get(layer)
            .ok_or_else(|| Error::Config(format!("model has no encoder layer {layer}")))?;
        l.mha.forward(tape, &self.store, x)
    }

    pub fn encode<'t>(
        &self,
        tape: &'t Tape,
        mut x: Var<'t>,
        training: bool,
        rng: &mut impl Rng,
    ) -> Result<(Var<'t>, Vec<Var<'t>>)> {
        let mut maps = Vec::with_capacity(self.encoder.len());
        for layer in &self.encoder {
            let (y, m) = layer.forward(tape, &self.store, x, training, rng)?;
            x = y;
            maps.push(m);
        }
        Ok((x, maps))
    }

    /// Mean over time, then the two-layer head; returns raw logits.
    pub fn classify<'t>(&self, tape: &'t Tape, x: Var<'t>, training: bool, rng: &mut impl Rng) -> Result<Var<'t>> {
        let pooled = x.mean(&[1])?;
        let h = self.head1.forward(tape, &self.store, pooled)?.relu()?;
        let h = h.dropout(self.cfg.head_dropout, training, rng)?;
        self.head2.forward(tape, &self.store, h)
    }

    pub fn forward<'t>(&self, tape: &'t Tape, x: Var<'t>, training: bool, rng: &mut impl Rng) -> Result<Trace<'t>> {
        self.check_input(&x)?;
        let (fused, spectral, spatial) = match self.cfg.fusion {
            Fusion::Chain => {
                let (s, ws) = self.spectral_forward(tape, x, training, rng)?;
                let (p, wp) = self.spatial_forward(tape, s, training, rng)?;
                (p, ws, wp)
            }
            Fusion::Product => {
                let (s, ws) = self.spectral_forward(tape, x, training, rng)?;
                let (p, wp) = self.spatial_forward(tape, x, training, rng)?;
                (s.mul(p)?, ws, wp)
            }
        };
        let seq = self.project(tape, fused)?;
        let (enc, attention) = self.encode(tape, seq, training, rng)?;
        Ok(Trace {
            logits: self.classify(tape, enc, training, rng)?,
            spectral,
            spatial,
            attention,
        })
    }

    /// Evaluation-mode logits `[b, n_classes]` for a `(b, C, f, t)` batch.
    pub fn predict(&self, x: Tensor, precision: Precision) -> Result<Tensor> {
        let tape = Tape::with_precision(precision);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Ok(self.forward(&tape, tape.constant(x), false, &mut rng)?.logits.value())
    }

    /// Evaluation-mode spectral `[b, f]` and spatial `[b, C]` weights, where
    /// the corresponding stage exists.
    pub fn attention_weights(&self, x: Tensor, precision: Precision) -> Result<(Option<Tensor>, Option<Tensor>)> {
        let tape = Tape::with_precision(precision);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let trace = self.forward(&tape, tape.constant(x), false, &mut rng)?;
        Ok((trace.spectral.map(|v| v.value()), trace.spatial.map(|v| v.value())))
    }

    /// Writes `model.json` and `model.ckpt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg_path = dir.join(MODEL_CONFIG_FILE);
        std::fs::write(&cfg_path, serde_json::to_vec_pretty(&self.cfg)?).map_err(|e| Error::io(&cfg_path, e))?;
        checkpoint::save(&self.store, &dir.join(CHECKPOINT_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let cfg_path = dir.join(MODEL_CONFIG_FILE);
        let bytes = std::fs::read(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
        let cfg: ModelConfig = serde_json::from_slice(&bytes)?;
        let mut model = SstafModel::new(&cfg, 0)?;
        let stored = checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        model.store.load_from(&stored)?;
        Ok(model)
    }
}
