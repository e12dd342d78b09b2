//! Signal conditioning: Butterworth band-pass, powerline notch, common
//! average reference and per-channel z-scoring.
//!
//! Filters are realized as cascades of second-order sections and run causally
//! (forward only, zero initial state). The conditioning chain always runs in
//! the order band-pass → notch → CAR.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous multi-channel EEG, stored time-major (`data[t * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    data: Vec<f64>,
    n_samples: usize,
    fs: f64,
    channel_labels: Vec<String>,
}

impl Recording {
    pub fn new(data: Vec<f64>, fs: f64, channel_labels: Vec<String>) -> Result<Self> {
        if !(fs > 0.0 && fs.is_finite()) {
            return Err(Error::Config(format!("sampling rate must be positive, got {fs}")));
        }
        let c = channel_labels.len();
        if c == 0 {
            return Err(Error::Data("recording needs at least one channel".into()));
        }
        if !data.len().is_multiple_of(c) {
            return Err(Error::Dimension(format!(
                "{} values do not split into {c} channels",
                data.len()
            )));
        }
        if data.iter().any(|v| v.is_nan()) {
            return Err(Error::Data("recording contains NaN samples".into()));
        }
        Ok(Recording {
            n_samples: data.len() / c,
            data,
            fs,
            channel_labels,
        })
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_channels(&self) -> usize {
        self.channel_labels.len()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channel_labels(&self) -> &[String] {
        &self.channel_labels
    }

    pub fn channel(&self, c: usize) -> Vec<f64> {
        let n = self.n_channels();
        self.data.iter().skip(c).step_by(n).copied().collect()
    }

    fn with_data(&self, data: Vec<f64>) -> Recording {
        Recording {
            data,
            n_samples: self.n_samples,
            fs: self.fs,
            channel_labels: self.channel_labels.clone(),
        }
    }
}

/// One biquad `(b0 + b1 z⁻¹ + b2 z⁻²) / (1 + a1 z⁻¹ + a2 z⁻²)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Section {
    pub const IDENTITY: Section = Section {
        b0: 1.0,
        b1: 0.0,
        b2: 0.0,
        a1: 0.0,
        a2: 0.0,
    };

    /// Complex response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// Roots of `z² + a1·z + a2`.
    pub fn poles(&self) -> [Complex64; 2] {
        let disc = Complex64::new(self.a1 * self.a1 - 4.0 * self.a2, 0.0).sqrt();
        [(-self.a1 + disc) / 2.0, (-self.a1 - disc) / 2.0]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterDesign {
    ButterworthBandpass {
        order: usize,
        low_hz: f64,
        high_hz: f64,
        fs: f64,
    },
    Notch {
        f0_hz: f64,
        q: f64,
        fs: f64,
    },
    Custom,
}

/// Cascade of second-order sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SosFilter {
    pub sections: Vec<Section>,
    pub description: FilterDesign,
}

impl SosFilter {
    pub fn from_sections(sections: Vec<Section>) -> Self {
        SosFilter {
            sections,
            description: FilterDesign::Custom,
        }
    }

    fn fs(&self) -> Option<f64> {
        match self.description {
            FilterDesign::ButterworthBandpass { fs, .. } | FilterDesign::Notch { fs, .. } => Some(fs),
            FilterDesign::Custom => None,
        }
    }

    /// Response at normalized angular frequency `omega` (rad/sample).
    pub fn response_at(&self, omega: f64) -> Complex64 {
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, s| acc * s.response(omega))
    }

    /// Magnitude response at `freq_hz`, for filters designed at a known rate.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let fs = self.fs().unwrap_or(2.0 * PI);
        self.response_at(2.0 * PI * freq_hz / fs).norm()
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.sections.iter().flat_map(|s| s.poles()).collect()
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.norm() < 1.0)
    }

    /// Causal filtering of one signal from zero initial state
    /// (transposed direct form II per section).
    pub fn filter_signal(&self, input: &[f64]) -> Vec<f64> {
        let mut y = input.to_vec();
        for s in &self.sections {
            let (mut z1, mut z2) = (0.0, 0.0);
            for v in y.iter_mut() {
                let x = *v;
                let out = s.b0 * x + z1;
                z1 = s.b1 * x - s.a1 * out + z2;
                z2 = s.b2 * x - s.a2 * out;
                *v = out;
            }
        }
        y
    }
}

/// Digital Butterworth band-pass: analog prototype poles, low-pass to
/// band-pass transform and a bilinear transform with `tan` pre-warping, one
/// section per prototype pole. Each section carries zeros at z = ±1 and is
/// scaled to unit gain at the geometric band center.
pub fn design_butterworth_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<SosFilter> {
    if order == 0 {
        return Err(Error::Config("Butterworth order must be at least 1".into()));
    }
    if !(fs > 0.0 && 0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
        return Err(Error::Config(format!(
            "band-pass edges must satisfy 0 < low < high < fs/2, got {low_hz}..{high_hz} Hz at fs={fs}"
        )));
    }
    let k = 2.0 * fs;
    let warp = |f: f64| k * (PI * f / fs).tan();
    let (w1, w2) = (warp(low_hz), warp(high_hz));
    let bandwidth = w2 - w1;
    let center_sq = w1 * w2;
    let to_z = |s: Complex64| (k + s) / (k - s);
    let center_omega = 2.0 * (center_sq.sqrt() / k).atan();

    let mut sections = Vec::with_capacity(order);
    for i in 0..order {
        let theta = PI * (2 * i + order + 1) as f64 / (2 * order) as f64;
        let proto = Complex64::from_polar(1.0, theta);
        let shift = proto * (bandwidth / 2.0);
        let disc = (shift * shift - center_sq).sqrt();
        let (s1, s2) = (shift + disc, shift - disc);
        let is_real = proto.im.abs() < 1e-9;
        if !is_real && proto.im < 0.0 {
            // conjugate of an upper-half pole already handled
            continue;
        }
        let denominators: Vec<(f64, f64)> = if is_real {
            let (z1, z2) = (to_z(s1), to_z(s2));
            vec![(-(z1 + z2).re, (z1 * z2).re)]
        } else {
            [s1, s2]
                .iter()
                .map(|&s| {
                    let z = to_z(s);
                    (-2.0 * z.re, z.norm_sqr())
                })
                .collect()
        };
        for (a1, a2) in denominators {
            let raw = Section {
                b0: 1.0,
                b1: 0.0,
                b2: -1.0,
                a1,
                a2,
            };
            let g = 1.0 / raw.response(center_omega).norm();
            sections.push(Section { b0: g, b2: -g, ..raw });
        }
    }
    Ok(SosFilter {
        sections,
        description: FilterDesign::ButterworthBandpass {
            order,
            low_hz,
            high_hz,
            fs,
        },
    })
}

/// Second-order IIR notch at `f0_hz` with quality factor `q` (−3 dB width
/// `f0/q`).
pub fn design_notch(f0_hz: f64, q: f64, fs: f64) -> Result<SosFilter> {
    if !(fs > 0.0 && 0.0 < f0_hz && f0_hz < fs / 2.0) {
        return Err(Error::Config(format!(
            "notch frequency must satisfy 0 < f0 < fs/2, got {f0_hz} Hz at fs={fs}"
        )));
    }
    if q <= 0.0 {
        return Err(Error::Config(format!("notch quality factor must be positive, got {q}")));
    }
    let w0 = 2.0 * PI * f0_hz / fs;
    let bw = w0 / q;
    let gain = 1.0 / (1.0 + (bw / 2.0).tan());
    let section = Section {
        b0: gain,
        b1: -2.0 * gain * w0.cos(),
        b2: gain,
        a1: -2.0 * gain * w0.cos(),
        a2: 2.0 * gain - 1.0,
    };
    Ok(SosFilter {
        sections: vec![section],
        description: FilterDesign::Notch { f0_hz, q, fs },
    })
}

/// Filters every channel independently. Output length equals input length.
pub fn apply_filter(rec: &Recording, filter: &SosFilter) -> Result<Recording> {
    if !filter.is_stable() {
        return Err(Error::Unstable(format!(
            "pole magnitudes {:?}",
            filter.poles().iter().map(|p| p.norm()).collect::<Vec<_>>()
        )));
    }
    let c = rec.n_channels();
    let mut out = vec![0.0; rec.data.len()];
    for ch in 0..c {
        let y = filter.filter_signal(&rec.channel(ch));
        for (t, v) in y.into_iter().enumerate() {
            out[t * c + ch] = v;
        }
    }
    Ok(rec.with_data(out))
}

/// Subtracts the instantaneous all-channel mean from every channel.
pub fn common_average_reference(rec: &Recording) -> Result<Recording> {
    let c = rec.n_channels();
    if c < 2 {
        return Err(Error::Config(
            "common average reference needs at least 2 channels".into(),
        ));
    }
    let mut out = rec.data.clone();
    car_in_place(&mut out, c);
    Ok(rec.with_data(out))
}

pub(crate) fn car_in_place(data: &mut [f64], channels: usize) {
    for row in data.chunks_exact_mut(channels) {
        let mean = row.iter().sum::<f64>() / channels as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
}

pub const STANDARDIZE_EPS: f64 = 1e-8;

/// Per-channel mean and standard deviation pooled over training epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub eps: f64,
}

impl ChannelStats {
    /// Pools every time point of every epoch (each time-major with
    /// `channels` columns).
    pub fn fit<'a>(epochs: impl IntoIterator<Item = &'a [f32]> + Clone, channels: usize) -> Result<Self> {
        let mut sum = vec![0.0; channels];
        let mut count = 0usize;
        for epoch in epochs.clone() {
            if epoch.len() % channels != 0 {
                return Err(Error::Dimension(format!(
                    "epoch of {} values is not a multiple of {channels} channels",
                    epoch.len()
                )));
            }
            for row in epoch.chunks_exact(channels) {
                for (s, &v) in sum.iter_mut().zip(row) {
                    *s += v as f64;
                }
            }
            count += epoch.len() / channels;
        }
        if count == 0 {
            return Err(Error::Data(
                "cannot fit channel statistics on an empty training set".into(),
            ));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        let mut sq = vec![0.0; channels];
        for epoch in epochs {
            for row in epoch.chunks_exact(channels) {
                for ((s, &v), m) in sq.iter_mut().zip(row).zip(&mean) {
                    *s += (v as f64 - m).powi(2);
                }
            }
        }
        let std = sq.iter().map(|s| (s / count as f64).sqrt()).collect();
        Ok(ChannelStats {
            mean,
            std,
            eps: STANDARDIZE_EPS,
        })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// `(x − μ) / (σ + ε)` per channel on a time-major epoch.
    pub fn apply(&self, epoch: &[f32]) -> Result<Vec<f64>> {
        let c = self.channels();
        if !epoch.len().is_multiple_of(c) {
            return Err(Error::Dimension(format!(
                "epoch of {} values does not match {c} fitted channels",
                epoch.len()
            )));
        }
        Ok(epoch
            .chunks_exact(c)
            .flat_map(|row| {
                row.iter()
                    .enumerate()
                    .map(|(ch, &v)| (v as f64 - self.mean[ch]) / (self.std[ch] + self.eps))
            })
            .collect())
    }
}

/// Conditioning stages in their only permitted order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Bandpass,
    Notch,
    Car,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandpassConfig {
    pub low_hz: f64,
    pub high_hz: f64,
    pub order: usize,
    pub enabled: bool,
}

impl Default for BandpassConfig {
    fn default() -> Self {
        BandpassConfig {
            low_hz: 8.0,
            high_hz: 30.0,
            order: 5,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NotchConfig {
    pub freq_hz: f64,
    pub q: f64,
    pub enabled: bool,
}

impl Default for NotchConfig {
    fn default() -> Self {
        NotchConfig {
            freq_hz: 50.0,
            q: 30.0,
            enabled: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CarConfig {
    pub enabled: bool,
}

impl Default for CarConfig {
    fn default() -> Self {
        CarConfig { enabled: true }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DspConfig {
    pub bandpass: BandpassConfig,
    pub notch: NotchConfig,
    pub car: CarConfig,
}

impl DspConfig {
    /// Checks that every enabled stage can be designed at sampling rate `fs`.
    pub fn validate(&self, fs: f64) -> Result<()> {
        Preprocessor::new(self, fs).map(|_| ())
    }

    pub fn stages(&self) -> Vec<Stage> {
        let mut stages = Vec::new();
        if self.bandpass.enabled {
            stages.push(Stage::Bandpass);
        }
        if self.notch.enabled {
            stages.push(Stage::Notch);
        }
        if self.car.enabled {
            stages.push(Stage::Car);
        }
        stages
    }
}

/// The designed conditioning chain for one sampling rate.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    bandpass: Option<SosFilter>,
    notch: Option<SosFilter>,
    car: bool,
}

impl Preprocessor {
    pub fn new(cfg: &DspConfig, fs: f64) -> Result<Self> {
        Self::with_stages(cfg, fs, &cfg.stages())
    }

    /// Builds the chain from an explicit stage list, which must respect the
    /// band-pass → notch → CAR order.
    pub fn with_stages(cfg: &DspConfig, fs: f64, stages: &[Stage]) -> Result<Self> {
        if stages.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!(
                "conditioning stages {stages:?} must run in band-pass → notch → CAR order"
            )));
        }
        let bandpass = stages
            .contains(&Stage::Bandpass)
            .then(|| {
                let b = &cfg.bandpass;
                design_butterworth_bandpass(b.order, b.low_hz, b.high_hz, fs)
            })
            .transpose()?;
        let notch = stages
            .contains(&Stage::Notch)
            .then(|| design_notch(cfg.notch.freq_hz, cfg.notch.q, fs))
            .transpose()?;
        Ok(Preprocessor {
            bandpass,
            notch,
            car: stages.contains(&Stage::Car),
        })
    }

    pub fn run(&self, rec: &Recording) -> Result<Recording> {
        let mut out = rec.clone();
        if let Some(f) = &self.bandpass {
            out = apply_filter(&out, f)?;
        }
        if let Some(f) = &self.notch {
            out = apply_filter(&out, f)?;
        }
        if self.car {
            out = common_average_reference(&out)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Direct evaluation of H(e^{jω}) = Π (b0 + b1 z⁻¹ + b2 z⁻²)/(1 + a1 z⁻¹ + a2 z⁻²)
    /// from raw coefficients, written out with real arithmetic.
    fn oracle_magnitude(f: &SosFilter, freq: f64, fs: f64) -> f64 {
        let w = 2.0 * PI * freq / fs;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        f.sections
            .iter()
            .map(|s| {
                let (nr, ni) = (s.b0 + s.b1 * c1 + s.b2 * c2, -(s.b1 * s1 + s.b2 * s2));
                let (dr, di) = (1.0 + s.a1 * c1 + s.a2 * c2, -(s.a1 * s1 + s.a2 * s2));
                ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
            })
            .product()
    }

    /// Analog Butterworth band-pass magnitude at the pre-warped frequency.
    fn analog_bandpass_magnitude(order: usize, low: f64, high: f64, fs: f64, f: f64) -> f64 {
        let warp = |x: f64| 2.0 * fs * (PI * x / fs).tan();
        let (w1, w2, w) = (warp(low), warp(high), warp(f));
        let x = (w * w - w1 * w2) / (w * (w2 - w1));
        1.0 / (1.0 + x.powi(2 * order as i32)).sqrt()
    }

    fn rec(data: Vec<f64>, channels: usize, fs: f64) -> Recording {
        Recording::new(data, fs, (0..channels).map(|c| format!("ch{c}")).collect()).unwrap()
    }

    #[test]
    fn bandpass_response_points() {
        let f = design_butterworth_bandpass(5, 8.0, 30.0, 160.0).unwrap();
        assert_eq!(f.sections.len(), 5);
        assert!(oracle_magnitude(&f, 19.0, 160.0) > 0.95);
        assert!(oracle_magnitude(&f, 4.0, 160.0) < 0.1);
        assert!(oracle_magnitude(&f, 50.0, 160.0) < 0.12);
        let edge = oracle_magnitude(&f, 8.0, 160.0);
        assert!((0.69..=0.72).contains(&edge), "{edge}");
        let edge = oracle_magnitude(&f, 30.0, 160.0);
        assert!((edge - std::f64::consts::FRAC_1_SQRT_2).abs() < 0.02 * std::f64::consts::FRAC_1_SQRT_2);
    }

    #[test]
    fn bandpass_matches_analog_prototype() {
        for (order, low, high, fs) in [
            (5, 8.0, 30.0, 160.0),
            (4, 8.0, 30.0, 250.0),
            (3, 1.0, 40.0, 250.0),
            (1, 5.0, 20.0, 100.0),
        ] {
            let f = design_butterworth_bandpass(order, low, high, fs).unwrap();
            for i in 1..200 {
                let freq = i as f64 * (fs / 2.0) / 200.0;
                let expect = analog_bandpass_magnitude(order, low, high, fs, freq);
                let got = oracle_magnitude(&f, freq, fs);
                assert!(
                    (got - expect).abs() < 1e-9,
                    "order {order} at {freq}: {got} vs {expect}"
                );
                assert!((f.magnitude(freq) - got).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn design_rejects_bad_edges() {
        assert!(matches!(
            design_butterworth_bandpass(5, 8.0, 90.0, 160.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            design_butterworth_bandpass(5, 30.0, 8.0, 160.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            design_butterworth_bandpass(5, 0.0, 8.0, 160.0),
            Err(Error::Config(_))
        ));
        assert!(matches!(design_notch(80.0, 30.0, 160.0), Err(Error::Config(_))));
        assert!(matches!(design_notch(0.0, 30.0, 160.0), Err(Error::Config(_))));
    }

    #[test]
    fn designed_filters_are_stable() {
        for fs in [160.0, 250.0] {
            let bp = design_butterworth_bandpass(5, 8.0, 30.0, fs).unwrap();
            let notch = design_notch(50.0, 30.0, fs).unwrap();
            for p in bp.poles().into_iter().chain(notch.poles()) {
                assert!(p.norm() < 1.0, "pole {p} at fs {fs}");
            }
        }
    }

    #[test]
    fn notch_response() {
        let f = design_notch(50.0, 30.0, 160.0).unwrap();
        assert!(oracle_magnitude(&f, 50.0, 160.0) < 1e-3);
        assert!(oracle_magnitude(&f, 10.0, 160.0) > 0.99);
        for freq in [10.0, 30.0, 45.0, 55.0, 70.0] {
            assert!(oracle_magnitude(&f, freq, 160.0) > 0.95, "{freq}");
        }
    }

    #[test]
    fn notch_suppresses_powerline_sinusoid() {
        let fs = 160.0;
        let f = design_notch(50.0, 30.0, fs).unwrap();
        let x: Vec<f64> = (0..640).map(|n| (2.0 * PI * 50.0 * n as f64 / fs).sin()).collect();
        let y = f.filter_signal(&x);
        let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
        assert!(rms(&y[480..]) < 0.01 * rms(&x[480..]));
    }

    #[test]
    fn filtering_basics() {
        let f = design_butterworth_bandpass(5, 8.0, 30.0, 160.0).unwrap();
        let zero = rec(vec![0.0; 100 * 3], 3, 160.0);
        let out = apply_filter(&zero, &f).unwrap();
        assert_eq!(out.n_samples(), 100);
        assert!(out.data().iter().all(|&v| v == 0.0));

        let identity = SosFilter::from_sections(vec![Section::IDENTITY]);
        let mut impulse = vec![0.0; 10];
        impulse[0] = 1.0;
        assert_eq!(identity.filter_signal(&impulse), impulse);

        let unstable = SosFilter::from_sections(vec![Section {
            a2: 1.5,
            ..Section::IDENTITY
        }]);
        assert!(matches!(apply_filter(&zero, &unstable), Err(Error::Unstable(_))));
    }

    #[test]
    fn white_noise_bandpass_rejects_out_of_band_power() {
        let fs = 160.0;
        let n = 4096;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..n + 800).map(|_| rng.random_range(-1.0..1.0)).collect();
        let f = design_butterworth_bandpass(5, 8.0, 30.0, fs).unwrap();
        let y = &f.filter_signal(&x)[800..];
        // naive periodogram
        let mut total = 0.0;
        let mut out_of_band = 0.0;
        for k in 0..=n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in y.iter().enumerate() {
                let ang = -2.0 * PI * (k * t % n) as f64 / n as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            let p = re * re + im * im;
            let freq = k as f64 * fs / n as f64;
            total += p;
            if freq <= 4.0 || (60.0..=80.0).contains(&freq) {
                out_of_band += p;
            }
        }
        assert!(out_of_band / total < 0.02, "{}", out_of_band / total);
    }

    #[test]
    fn car_examples() {
        let r = rec(vec![1.0, 3.0], 2, 160.0);
        assert_eq!(common_average_reference(&r).unwrap().data(), &[-1.0, 1.0]);
        let same = rec(vec![2.5; 12], 3, 160.0);
        assert!(common_average_reference(&same)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
        let single = rec(vec![1.0; 5], 1, 160.0);
        assert!(common_average_reference(&single).is_err());
    }

    #[test]
    fn recording_validation() {
        assert!(Recording::new(vec![0.0; 4], 0.0, vec!["a".into()]).is_err());
        assert!(Recording::new(vec![0.0; 5], 160.0, vec!["a".into(), "b".into()]).is_err());
        assert!(Recording::new(vec![f64::NAN], 160.0, vec!["a".into()]).is_err());
    }

    #[test]
    fn standardize_examples() {
        let constant = vec![7.0f32; 20 * 2];
        let stats = ChannelStats::fit([constant.as_slice()], 2).unwrap();
        assert!(stats.apply(&constant).unwrap().iter().all(|&v| v == 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let train: Vec<Vec<f32>> = (0..5)
            .map(|_| {
                (0..64 * 3)
                    .map(|i| rng.random_range(-5.0..5.0) + (i % 3) as f32 * 10.0)
                    .collect()
            })
            .collect();
        let stats = ChannelStats::fit(train.iter().map(|e| e.as_slice()), 3).unwrap();
        let pooled: Vec<f64> = train.iter().flat_map(|e| stats.apply(e).unwrap()).collect();
        for c in 0..3 {
            let col: Vec<f64> = pooled.iter().skip(c).step_by(3).copied().collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!(mean.abs() < 1e-9, "{mean}");
            assert!((var - 1.0).abs() < 1e-6, "{var}");
        }

        let test: Vec<f32> = (0..64 * 3).map(|_| rng.random_range(0.0..8.0) + 20.0).collect();
        let z = stats.apply(&test).unwrap();
        let mean = z.iter().sum::<f64>() / z.len() as f64;
        assert!(mean.abs() > 0.1, "test split must keep its own offset");

        let empty: [&[f32]; 0] = [];
        assert!(ChannelStats::fit(empty, 3).is_err());
    }

    #[test]
    fn chain_order_is_fixed() {
        let cfg = DspConfig::default();
        assert!(Preprocessor::with_stages(&cfg, 160.0, &[Stage::Car, Stage::Bandpass]).is_err());
        assert!(Preprocessor::with_stages(&cfg, 160.0, &[Stage::Notch, Stage::Bandpass]).is_err());
        assert!(Preprocessor::with_stages(&cfg, 160.0, &[Stage::Bandpass, Stage::Car]).is_ok());
        assert_eq!(cfg.stages(), vec![Stage::Bandpass, Stage::Notch, Stage::Car]);
    }

    #[test]
    fn chain_output_is_referenced() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let r = rec((0..400 * 4).map(|_| rng.random_range(-1.0..1.0)).collect(), 4, 160.0);
        let out = Preprocessor::new(&DspConfig::default(), 160.0)
            .unwrap()
            .run(&r)
            .unwrap();
        for row in out.data().chunks(4) {
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn filter_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
                let f = design_butterworth_bandpass(5, 8.0, 30.0, 160.0).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
                let y: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mixed: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
                let lhs = f.filter_signal(&mixed);
                let (fx, fy) = (f.filter_signal(&x), f.filter_signal(&y));
                for i in 0..300 {
                    prop_assert!((lhs[i] - (a * fx[i] + b * fy[i])).abs() < 1e-9);
                }
            }

            #[test]
            fn filter_is_time_invariant(seed in any::<u64>(), shift in 1usize..50) {
                let f = design_notch(50.0, 30.0, 160.0).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let x: Vec<f64> = (0..300).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut shifted = vec![0.0; shift];
                shifted.extend_from_slice(&x);
                let (y, ys) = (f.filter_signal(&x), f.filter_signal(&shifted));
                for i in 0..300 {
                    prop_assert!((ys[i + shift] - y[i]).abs() < 1e-12);
                }
            }

            #[test]
            fn car_is_idempotent_and_zero_sum(seed in any::<u64>(), c in 2usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let r = rec((0..20 * c).map(|_| rng.random_range(-50.0..50.0)).collect(), c, 160.0);
                let once = common_average_reference(&r).unwrap();
                let twice = common_average_reference(&once).unwrap();
                for (p, q) in once.data().iter().zip(twice.data()) {
                    prop_assert!((p - q).abs() < 1e-12);
                }
                for row in once.data().chunks(c) {
                    prop_assert!(row.iter().sum::<f64>().abs() < 1e-12);
                }
            }
        }
    }
}
