//! Synthetic motor-imagery EEG.
//!
//! Each trial is 1/f background noise on every channel plus band-limited
//! sinusoids on motor channel groups whose amplitudes depend on the class.
//! The default table mimics event-related desynchronization: at rest a
//! 10 Hz rhythm sits on both sensorimotor strips, and imagining one hand
//! attenuates it on the opposite hemisphere.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::fold_seed;
use crate::ingest::{Epoch, EpochStore, StoreMeta, EPOCH_LEN};

/// The 64 electrode labels of the EEGMMIDB montage, in file order.
pub const EEGMMIDB_CHANNELS: [&str; 64] = [
    "Fc5", "Fc3", "Fc1", "Fcz", "Fc2", "Fc4", "Fc6", "C5", "C3", "C1", "Cz", "C2", "C4", "C6", "Cp5", "Cp3", "Cp1",
    "Cpz", "Cp2", "Cp4", "Cp6", "Fp1", "Fpz", "Fp2", "Af7", "Af3", "Afz", "Af4", "Af8", "F7", "F5", "F3", "F1", "Fz",
    "F2", "F4", "F6", "F8", "Ft7", "Ft8", "T7", "T8", "T9", "T10", "Tp7", "Tp8", "P7", "P5", "P3", "P1", "Pz", "P2",
    "P4", "P6", "P8", "Po7", "Po3", "Poz", "Po4", "Po8", "O1", "Oz", "O2", "Iz",
];

/// Left-hemisphere sensorimotor electrodes (contralateral to the right hand).
pub const LEFT_MOTOR: [&str; 9] = ["Fc5", "Fc3", "Fc1", "C5", "C3", "C1", "Cp5", "Cp3", "Cp1"];
/// Right-hemisphere sensorimotor electrodes (contralateral to the left hand).
pub const RIGHT_MOTOR: [&str; 9] = ["Fc2", "Fc4", "Fc6", "C2", "C4", "C6", "Cp2", "Cp4", "Cp6"];

/// Band content on a group of channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub channels: Vec<String>,
    pub band_hz: (f64, f64),
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignature {
    pub name: String,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub trials_per_class: usize,
    pub fs: f64,
    /// Channel count; 64 uses the EEGMMIDB labels, anything else `E1..En`.
    pub channels: usize,
    pub epoch_len: usize,
    pub classes: Vec<ClassSignature>,
    /// Peak amplitude of a unit-scale component.
    pub signal_amplitude: f64,
    /// Power-law exponent α of the 1/f^α background.
    pub noise_exponent: f64,
    /// Standard deviation of the background on each channel.
    pub noise_amplitude: f64,
    /// Relative per-subject amplitude jitter, uniform in `1 ± jitter`.
    pub subject_jitter: f64,
    pub seed: u64,
}

fn strip(group: &[&str], amplitude: f64) -> Component {
    Component {
        channels: group.iter().map(|s| s.to_string()).collect(),
        band_hz: (9.0, 11.0),
        amplitude,
    }
}

/// Rest, left hand and right hand with a 10 Hz rhythm attenuated to 20 %
/// over the contralateral strip.
pub fn default_signatures() -> Vec<ClassSignature> {
    let class = |name: &str, left: f64, right: f64| ClassSignature {
        name: name.to_string(),
        components: vec![strip(&LEFT_MOTOR, left), strip(&RIGHT_MOTOR, right)],
    };
    vec![
        class("relax", 1.0, 1.0),
        class("left", 1.0, 0.2),
        class("right", 0.2, 1.0),
    ]
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_subjects: 6,
            trials_per_class: 40,
            fs: 160.0,
            channels: 64,
            epoch_len: EPOCH_LEN,
            classes: default_signatures(),
            signal_amplitude: 10.0,
            noise_exponent: 1.0,
            noise_amplitude: 5.0,
            subject_jitter: 0.1,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn channel_labels(&self) -> Vec<String> {
        if self.channels == EEGMMIDB_CHANNELS.len() {
            EEGMMIDB_CHANNELS.iter().map(|s| s.to_string()).collect()
        } else {
            (1..=self.channels).map(|i| format!("E{i}")).collect()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_subjects == 0 || self.trials_per_class == 0 || self.channels == 0 || self.epoch_len == 0 {
            return bad("synth needs subjects, trials, channels and a non-zero epoch length".into());
        }
        if !(self.fs > 0.0) {
            return bad(format!("sampling rate {} is not positive", self.fs));
        }
        if self.classes.is_empty() {
            return bad("synth needs at least one class signature".into());
        }
        if !(self.noise_amplitude >= 0.0 && self.signal_amplitude >= 0.0) {
            return bad("signal and noise amplitudes must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.subject_jitter) {
            return bad(format!("subject jitter {} outside [0, 1)", self.subject_jitter));
        }
        if !self.noise_exponent.is_finite() {
            return bad("noise exponent must be finite".into());
        }
        let labels = self.channel_labels();
        for class in &self.classes {
            for comp in &class.components {
                let (lo, hi) = comp.band_hz;
                if !(comp.amplitude >= 0.0) {
                    return bad(format!(
                        "class {}: amplitude {} is negative",
                        class.name, comp.amplitude
                    ));
                }
                if !(lo > 0.0 && lo <= hi && hi < self.fs / 2.0) {
                    return bad(format!(
                        "class {}: band ({lo}, {hi}) Hz outside (0, {})",
                        class.name,
                        self.fs / 2.0
                    ));
                }
                if let Some(ch) = comp.channels.iter().find(|c| !labels.contains(c)) {
                    return bad(format!("class {}: unknown channel {ch}", class.name));
                }
            }
        }
        Ok(())
    }
}

/// Unit-variance 1/f^α noise of length `n`, shaped in the frequency domain.
fn colored_noise(n: usize, alpha: f64, rng: &mut impl Rng, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut spectrum = vec![Complex64::new(0.0, 0.0); n];
    for k in 1..=n / 2 {
        let scale = (k as f64).powf(-alpha / 2.0);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = if 2 * k == n { 0.0 } else { rng.sample(StandardNormal) };
        spectrum[k] = Complex64::new(re, im) * scale;
        spectrum[n - k] = spectrum[k].conj();
    }
    planner.plan_fft_inverse(n).process(&mut spectrum);
    let x: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    x.iter().map(|v| (v - mean) / std.max(f64::MIN_POSITIVE)).collect()
}

struct SubjectTraits {
    /// Per channel phase offset of every component.
    phase: Vec<f64>,
    /// Per component amplitude factor.
    gain: Vec<Vec<f64>>,
}

fn subject_traits(cfg: &SynthConfig, subject: usize) -> SubjectTraits {
    let mut rng = ChaCha8Rng::seed_from_u64(fold_seed(cfg.seed, subject));
    let phase = (0..cfg.channels).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let j = cfg.subject_jitter;
    let gain = cfg
        .classes
        .iter()
        .map(|c| {
            c.components
                .iter()
                .map(|_| {
                    if j > 0.0 {
                        rng.random_range(1.0 - j..=1.0 + j)
                    } else {
                        1.0
                    }
                })
                .collect()
        })
        .collect();
    SubjectTraits { phase, gain }
}

/// `groups[class][component]` lists channel indices.
fn trial(cfg: &SynthConfig, traits: &SubjectTraits, groups: &[Vec<Vec<usize>>], class: usize, seed: u64) -> Vec<f32> {
    let (c, n) = (cfg.channels, cfg.epoch_len);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut planner = FftPlanner::new();
    let mut x = vec![0.0f64; n * c];
    for ch in 0..c {
        let noise = colored_noise(n, cfg.noise_exponent, &mut rng, &mut planner);
        for (t, v) in noise.into_iter().enumerate() {
            x[t * c + ch] = cfg.noise_amplitude * v;
        }
    }
    for (k, comp) in cfg.classes[class].components.iter().enumerate() {
        let (lo, hi) = comp.band_hz;
        let f = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let trial_phase = rng.random_range(-0.25..0.25);
        let amp = cfg.signal_amplitude * comp.amplitude * traits.gain[class][k];
        for &ch in &groups[class][k] {
            let phi = traits.phase[ch] + trial_phase;
            for t in 0..n {
                x[t * c + ch] += amp * (2.0 * PI * f * t as f64 / cfg.fs + phi).sin();
            }
        }
    }
    x.into_iter().map(|v| v as f32).collect()
}

/// Generates `n_subjects × classes × trials_per_class` epochs, ordered by
/// subject, then class, then trial. Subjects are numbered from 1.
pub fn generate(cfg: &SynthConfig) -> Result<EpochStore> {
    cfg.validate()?;
    let meta = StoreMeta {
        fs: cfg.fs,
        channel_labels: cfg.channel_labels(),
        class_names: cfg.classes.iter().map(|c| c.name.clone()).collect(),
        epoch_len: cfg.epoch_len,
        n_fft: 128,
        hop: 64,
    };
    let groups: Vec<Vec<Vec<usize>>> = cfg
        .classes
        .iter()
        .map(|c| {
            c.components
                .iter()
                .map(|comp| {
                    comp.channels
                        .iter()
                        .filter_map(|l| meta.channel_labels.iter().position(|x| x == l))
                        .collect()
                })
                .collect()
        })
        .collect();
    let k = cfg.classes.len();
    let per_subject = k * cfg.trials_per_class;
    let traits: Vec<SubjectTraits> = (0..cfg.n_subjects).map(|s| subject_traits(cfg, s)).collect();
    let epochs: Vec<Epoch> = (0..cfg.n_subjects * per_subject)
        .into_par_iter()
        .map(|i| {
            let (s, rem) = (i / per_subject, i % per_subject);
            let class = rem / cfg.trials_per_class;
            let seed = fold_seed(cfg.seed ^ 0x7472_6961_6c73, i);
            Epoch {
                data: trial(cfg, &traits[s], &groups, class, seed),
                label: class,
                subject: s as u32 + 1,
                run: 1,
            }
        })
        .collect();
    let mut store = EpochStore::new(meta)?;
    for e in epochs {
        store.push(e)?;
    }
    Ok(store)
}
