//! Hann-windowed short-time Fourier power features.
//!
//! Frames start at sample 0 with no padding, so an epoch of `len` samples
//! yields `⌊(len − n_fft)/hop⌋ + 1` frames of `n_fft/2 + 1` one-sided bins.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::dsp::ChannelStats;
use crate::error::{Error, Result};
use crate::ingest::{read_json, write_file, EpochStore, IndexEntry};

pub const FEATURES_FILE: &str = "features.bin";
pub const FEATURES_META_FILE: &str = "features.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Window {
    /// Symmetric taper, denominator `L − 1`.
    Hann,
    /// Periodic taper, denominator `L`.
    HannPeriodic,
}

impl Window {
    pub fn coefficients(self, len: usize) -> Result<Vec<f64>> {
        match self {
            Window::Hann => hann_window(len),
            Window::HannPeriodic => periodic_hann_window(len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StftConfig {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    /// Emit `ln(power + 1e-12)` instead of power.
    pub log_power: bool,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            n_fft: 128,
            hop: 64,
            window: Window::Hann,
            log_power: false,
        }
    }
}

impl StftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fft < 2 || !self.n_fft.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "n_fft must be even and at least 2, got {}",
                self.n_fft
            )));
        }
        if self.hop == 0 || self.hop > self.n_fft {
            return Err(Error::Config(format!(
                "hop must lie in 1..={}, got {}",
                self.n_fft, self.hop
            )));
        }
        Ok(())
    }

    pub fn f_bins(&self) -> usize {
        self.n_fft / 2 + 1
    }

    pub fn frames(&self, len: usize) -> Result<usize> {
        frame_count(len, self.n_fft, self.hop)
    }
}

/// Symmetric Hann taper `0.5·(1 − cos(2πn/(L−1)))`.
pub fn hann_window(len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::Config(format!("Hann window needs at least 2 points, got {len}")));
    }
    let denom = (len - 1) as f64;
    Ok((0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / denom).cos()))
        .collect())
}

/// Periodic Hann taper `0.5·(1 − cos(2πn/L))`.
pub fn periodic_hann_window(len: usize) -> Result<Vec<f64>> {
    if len < 2 {
        return Err(Error::Config(format!("Hann window needs at least 2 points, got {len}")));
    }
    Ok((0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * PI * n as f64 / len as f64).cos()))
        .collect())
}

pub fn frame_count(len: usize, n_fft: usize, hop: usize) -> Result<usize> {
    if len < n_fft {
        return Err(Error::Dimension(format!(
            "signal of {len} samples is shorter than the {n_fft}-sample window"
        )));
    }
    Ok((len - n_fft) / hop + 1)
}

/// Power spectrogram of one epoch, laid out `(channels, f_bins, t_frames)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub power: Vec<f64>,
    pub channels: usize,
    pub f_bins: usize,
    pub t_frames: usize,
    /// Centre of each frame in seconds.
    pub frame_times: Vec<f64>,
}

impl Spectrogram {
    pub fn at(&self, c: usize, k: usize, m: usize) -> f64 {
        self.power[(c * self.f_bins + k) * self.t_frames + m]
    }
}

/// Reusable FFT plan and window for one configuration.
#[derive(Clone)]
pub struct Stft {
    cfg: StftConfig,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Stft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Stft").field("cfg", &self.cfg).finish()
    }
}

impl Stft {
    pub fn new(cfg: &StftConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Stft {
            window: cfg.window.coefficients(cfg.n_fft)?,
            fft: FftPlanner::new().plan_fft_forward(cfg.n_fft),
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &StftConfig {
        &self.cfg
    }

    /// Transforms a time-major epoch (`data[t * channels + c]`).
    pub fn power(&self, epoch: &[f64], channels: usize, fs: f64) -> Result<Spectrogram> {
        if channels == 0 || !epoch.len().is_multiple_of(channels) {
            return Err(Error::Dimension(format!(
                "epoch of {} values does not split into {channels} channels",
                epoch.len()
            )));
        }
        let len = epoch.len() / channels;
        let (n_fft, hop) = (self.cfg.n_fft, self.cfg.hop);
        let t_frames = frame_count(len, n_fft, hop)?;
        let f_bins = self.cfg.f_bins();
        let mut power = vec![0.0; channels * f_bins * t_frames];
        let mut buf = vec![Complex64::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex64::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        for c in 0..channels {
            for m in 0..t_frames {
                for (n, (b, w)) in buf.iter_mut().zip(&self.window).enumerate() {
                    *b = Complex64::new(epoch[(m * hop + n) * channels + c] * w, 0.0);
                }
                self.fft.process_with_scratch(&mut buf, &mut scratch);
                for (k, z) in buf[..f_bins].iter().enumerate() {
                    let p = z.norm_sqr();
                    power[(c * f_bins + k) * t_frames + m] = if self.cfg.log_power { (p + 1e-12).ln() } else { p };
                }
            }
        }
        let frame_times = (0..t_frames)
            .map(|m| (m * hop) as f64 / fs + n_fft as f64 / (2.0 * fs))
            .collect();
        Ok(Spectrogram {
            power,
            channels,
            f_bins,
            t_frames,
            frame_times,
        })
    }
}

/// One-shot [`Stft::power`].
pub fn stft_power(epoch: &[f64], channels: usize, fs: f64, cfg: &StftConfig) -> Result<Spectrogram> {
    Stft::new(cfg)?.power(epoch, channels, fs)
}

/// Spectrograms of a whole epoch store, held in memory as f32.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub shape: [usize; 3],
    pub data: Vec<f32>,
    pub labels: Vec<usize>,
    pub subjects: Vec<u32>,
    pub runs: Vec<u32>,
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn item_len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn item(&self, i: usize) -> &[f32] {
        let n = self.item_len();
        &self.data[i * n..(i + 1) * n]
    }
}

/// Transforms every epoch, optionally z-scoring it with `stats` first.
pub fn featurize_store(store: &EpochStore, cfg: &StftConfig, stats: Option<&ChannelStats>) -> Result<FeatureSet> {
    let stft = Stft::new(cfg)?;
    let channels = store.meta.channels();
    if let Some(s) = stats {
        if s.channels() != channels {
            return Err(Error::Dimension(format!(
                "standardization fitted on {} channels, store has {channels}",
                s.channels()
            )));
        }
    }
    let t_frames = cfg.frames(store.meta.epoch_len)?;
    let shape = [channels, cfg.f_bins(), t_frames];
    let fs = store.meta.fs;
    let parts: Vec<Vec<f32>> = store
        .epochs()
        .par_iter()
        .enumerate()
        .map(|(i, e)| {
            let x = match stats {
                Some(s) => s.apply(&e.data)?,
                None => e.data.iter().map(|&v| v as f64).collect(),
            };
            let spectrum = stft
                .power(&x, channels, fs)
                .map_err(|err| Error::Data(format!("epoch {i}: {err}")))?;
            Ok(spectrum.power.iter().map(|&p| p as f32).collect())
        })
        .collect::<Result<_>>()?;
    Ok(FeatureSet {
        shape,
        data: parts.concat(),
        labels: store.labels(),
        subjects: store.epochs().iter().map(|e| e.subject).collect(),
        runs: store.epochs().iter().map(|e| e.run).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMeta {
    pub n_fft: usize,
    pub hop: usize,
    pub window: Window,
    pub log_power: bool,
    pub standardized: bool,
    pub channels: usize,
    pub f_bins: usize,
    pub t_frames: usize,
    pub n_epochs: usize,
    /// Directory of the epoch store the features were computed from.
    pub epoch_store: PathBuf,
    pub index: Vec<IndexEntry>,
}

impl FeatureMeta {
    pub fn stft_config(&self) -> StftConfig {
        StftConfig {
            n_fft: self.n_fft,
            hop: self.hop,
            window: self.window,
            log_power: self.log_power,
        }
    }
}

/// Writes `features.bin` and `features.json` into `dir`.
pub fn write_feature_store(
    dir: &Path,
    set: &FeatureSet,
    cfg: &StftConfig,
    standardized: bool,
    epoch_store: &Path,
    index: Vec<IndexEntry>,
) -> Result<FeatureMeta> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bytes: Vec<u8> = set.data.iter().flat_map(|v| v.to_le_bytes()).collect();
    write_file(&dir.join(FEATURES_FILE), &bytes)?;
    let meta = FeatureMeta {
        n_fft: cfg.n_fft,
        hop: cfg.hop,
        window: cfg.window,
        log_power: cfg.log_power,
        standardized,
        channels: set.shape[0],
        f_bins: set.shape[1],
        t_frames: set.shape[2],
        n_epochs: set.len(),
        epoch_store: epoch_store.to_path_buf(),
        index,
    };
    write_file(&dir.join(FEATURES_META_FILE), &serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

pub fn read_feature_meta(dir: &Path) -> Result<FeatureMeta> {
    read_json(&dir.join(FEATURES_META_FILE))
}

/// Loads a feature store written by [`write_feature_store`]; labels are
/// resolved against `class_names`.
pub fn read_feature_store(dir: &Path, class_names: &[String]) -> Result<(FeatureMeta, FeatureSet)> {
    let meta = read_feature_meta(dir)?;
    let path = dir.join(FEATURES_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let shape = [meta.channels, meta.f_bins, meta.t_frames];
    let want = 4 * meta.n_epochs * shape.iter().product::<usize>();
    if bytes.len() != want || meta.index.len() != meta.n_epochs {
        return Err(Error::parse(
            bytes.len().min(want),
            format!("{FEATURES_FILE} holds {} bytes, metadata implies {want}", bytes.len()),
        ));
    }
    let labels = meta
        .index
        .iter()
        .map(|e| {
            class_names
                .iter()
                .position(|c| *c == e.label)
                .ok_or_else(|| Error::Data(format!("unknown label `{}` in feature index", e.label)))
        })
        .collect::<Result<_>>()?;
    let set = FeatureSet {
        shape,
        data: bytes
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect(),
        labels,
        subjects: meta.index.iter().map(|e| e.subject).collect(),
        runs: meta.index.iter().map(|e| e.run).collect(),
    };
    Ok((meta, set))
}
