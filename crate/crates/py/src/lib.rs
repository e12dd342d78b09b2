//! Python bindings over the pipeline stages, the model and the metrics.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sstaf::dsp::{design_butterworth_bandpass, design_notch, DspConfig};
use sstaf::eval::{binary_auc, run_cv, EvalConfig, SchemeName};
use sstaf::ingest::{preprocess_store, EpochStore};
use sstaf::model::{ModelConfig, SstafModel, Variant};
use sstaf::stft::{featurize_store, stft_power, write_feature_store, StftConfig};
use sstaf::synth::{generate, SynthConfig};
use sstaf::tensor::{Precision, Tensor};
use sstaf::train::TrainConfig;
use sstaf::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        e if e.is_validation() => PyValueError::new_err(e.to_string()),
        e => PyRuntimeError::new_err(e.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for sstaf::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Writes a synthetic epoch store and returns the number of epochs.
#[pyfunction]
#[pyo3(signature = (out, n_subjects = 6, trials_per_class = 40, seed = 42))]
fn synthesize(py: Python<'_>, out: PathBuf, n_subjects: usize, trials_per_class: usize, seed: u64) -> PyResult<usize> {
    let cfg = SynthConfig {
        n_subjects,
        trials_per_class,
        seed,
        ..SynthConfig::default()
    };
    py.detach(|| {
        let store = generate(&cfg)?;
        store.write(&out)?;
        Ok(store.len())
    })
    .py()
}

/// Band-pass, notch and common average reference over every epoch.
#[pyfunction]
fn preprocess(py: Python<'_>, input: PathBuf, out: PathBuf) -> PyResult<()> {
    py.detach(|| {
        let store = EpochStore::read(&input)?;
        preprocess_store(&store, &DspConfig::default())?.write(&out)
    })
    .py()
}

/// Writes unstandardized power features of an epoch store.
#[pyfunction]
#[pyo3(signature = (input, out, n_fft = 128, hop = 64))]
fn featurize(
    py: Python<'_>,
    input: PathBuf,
    out: PathBuf,
    n_fft: usize,
    hop: usize,
) -> PyResult<(usize, usize, usize)> {
    let cfg = StftConfig {
        n_fft,
        hop,
        ..StftConfig::default()
    };
    py.detach(|| {
        let store = EpochStore::read(&input)?;
        let set = featurize_store(&store, &cfg, None)?;
        write_feature_store(&out, &set, &cfg, false, &input, store.index())?;
        let [c, f, t] = set.shape;
        Ok((c, f, t))
    })
    .py()
}

/// Cross-validates a model variant on an epoch store and returns the
/// metrics report as JSON.
#[pyfunction]
#[pyo3(signature = (epochs_dir, scheme = "loso", k = 5, epochs = 20, variant = "full", seed = 42))]
fn cross_validate(
    py: Python<'_>,
    epochs_dir: PathBuf,
    scheme: &str,
    k: usize,
    epochs: usize,
    variant: &str,
    seed: u64,
) -> PyResult<String> {
    let scheme = match scheme {
        "loso" => SchemeName::Loso,
        "kfold" => SchemeName::Kfold,
        other => return Err(PyValueError::new_err(format!("unknown scheme {other:?}"))),
    };
    let variant = Variant::parse(variant).py()?;
    py.detach(|| {
        let store = EpochStore::read(&epochs_dir)?;
        let stft = StftConfig::default();
        let eval = EvalConfig {
            scheme,
            k,
            seed,
            ..EvalConfig::default()
        };
        eval.validate()?;
        let subjects: Vec<u32> = store.epochs().iter().map(|e| e.subject).collect();
        let plan = eval.plan(&subjects)?;
        let model = variant.apply(&ModelConfig {
            channels: store.meta.channels(),
            f_bins: stft.f_bins(),
            t_frames: stft.frames(store.meta.epoch_len)?,
            n_classes: store.meta.class_names.len(),
            ..ModelConfig::default()
        });
        let train = TrainConfig {
            epochs,
            seed,
            ..TrainConfig::default()
        };
        let outcome = run_cv(&store, &plan, &stft, &model, &train, variant.name())?;
        Ok(serde_json::to_string(&outcome.report)?)
    })
    .py()
}

/// Power spectrogram of a time-major epoch as nested lists `[c][f][t]`.
#[pyfunction]
#[pyo3(signature = (epoch, channels, fs = 160.0, n_fft = 128, hop = 64))]
fn spectrogram(epoch: Vec<f64>, channels: usize, fs: f64, n_fft: usize, hop: usize) -> PyResult<Vec<Vec<Vec<f64>>>> {
    let cfg = StftConfig {
        n_fft,
        hop,
        ..StftConfig::default()
    };
    let s = stft_power(&epoch, channels, fs, &cfg).py()?;
    Ok(s.power
        .chunks(s.f_bins * s.t_frames)
        .map(|c| c.chunks(s.t_frames).map(<[f64]>::to_vec).collect())
        .collect())
}

/// Magnitude response of the default band-pass and notch at `freqs`.
#[pyfunction]
#[pyo3(signature = (freqs, fs = 160.0))]
fn filter_response(freqs: Vec<f64>, fs: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let dsp = DspConfig::default();
    let bp = design_butterworth_bandpass(dsp.bandpass.order, dsp.bandpass.low_hz, dsp.bandpass.high_hz, fs).py()?;
    let notch = design_notch(dsp.notch.freq_hz, dsp.notch.q, fs).py()?;
    Ok((
        freqs.iter().map(|&f| bp.magnitude(f)).collect(),
        freqs.iter().map(|&f| notch.magnitude(f)).collect(),
    ))
}

/// Binary ROC AUC with ties counted as one half.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Option<f64>> {
    if scores.len() != labels.len() {
        return Err(PyValueError::new_err("scores and labels differ in length"));
    }
    Ok(binary_auc(&scores, &labels))
}

#[pyclass(name = "Model", module = "sstaf_py")]
struct PyModel {
    inner: SstafModel,
}

impl PyModel {
    fn batch(&self, features: Vec<f64>) -> PyResult<Tensor> {
        let c = self.inner.config();
        let item = c.channels * c.f_bins * c.t_frames;
        if features.is_empty() || !features.len().is_multiple_of(item) {
            return Err(PyValueError::new_err(format!(
                "expected a multiple of {item} values, got {}",
                features.len()
            )));
        }
        Tensor::new(&[features.len() / item, c.channels, c.f_bins, c.t_frames], features).py()
    }
}

#[pymethods]
impl PyModel {
    /// A freshly initialized model. `config` is a JSON model configuration.
    #[new]
    #[pyo3(signature = (config = None, seed = 0))]
    fn new(config: Option<&str>, seed: u64) -> PyResult<Self> {
        let cfg: ModelConfig = match config {
            Some(json) => serde_json::from_str(json).map_err(Error::from).py()?,
            None => ModelConfig::default(),
        };
        Ok(PyModel {
            inner: SstafModel::new(&cfg, seed).py()?,
        })
    }

    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: SstafModel::load(&dir).py()?,
        })
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.save(&dir).py()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    #[getter]
    fn config(&self) -> PyResult<String> {
        serde_json::to_string(self.inner.config()).map_err(Error::from).py()
    }

    /// Logits for flattened `(b, C, f, t)` features, one row per item.
    fn predict(&self, py: Python<'_>, features: Vec<f64>) -> PyResult<Vec<Vec<f64>>> {
        let x = self.batch(features)?;
        let logits = py.detach(|| self.inner.predict(x, Precision::F64)).py()?;
        let k = logits.shape()[1];
        Ok(logits.data().chunks(k).map(<[f64]>::to_vec).collect())
    }

    /// Spectral and spatial attention weights, one row per item.
    fn attention(&self, features: Vec<f64>) -> PyResult<(Option<Vec<Vec<f64>>>, Option<Vec<Vec<f64>>>)> {
        let x = self.batch(features)?;
        let (spectral, spatial) = self.inner.attention_weights(x, Precision::F64).py()?;
        let rows = |t: Option<Tensor>| t.map(|t| t.data().chunks(t.shape()[1]).map(<[f64]>::to_vec).collect());
        Ok((rows(spectral), rows(spatial)))
    }
}

#[pymodule]
pub fn sstaf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(preprocess, m)?)?;
    m.add_function(wrap_pyfunction!(featurize, m)?)?;
    m.add_function(wrap_pyfunction!(cross_validate, m)?)?;
    m.add_function(wrap_pyfunction!(spectrogram, m)?)?;
    m.add_function(wrap_pyfunction!(filter_response, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_class::<PyModel>()?;
    Ok(())
}
