//! Numeric exports behind the attention and scalp-map figures.

use std::collections::HashSet;
use std::path::Path;

use sstaf::dsp::{ChannelStats, DspConfig};
use sstaf::ingest::{preprocess_store, EpochStore};
use sstaf::model::SstafModel;
use sstaf::stft::{featurize_store, read_feature_store};
use sstaf::tensor::{Precision, Tensor};
use sstaf::Error;

use crate::commands::{load_json, source_store, CliResult, STATS_FILE};

fn chosen(requested: &[usize], n: usize) -> CliResult<Vec<usize>> {
    if requested.is_empty() {
        return Ok((0..n).collect());
    }
    if let Some(&bad) = requested.iter().find(|&&i| i >= n) {
        return Err(Error::Data(format!("epoch {bad} requested from a store of {n}")).into());
    }
    Ok(requested.to_vec())
}

fn writer(path: &Path) -> CliResult<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

/// Writes `spectral.csv` (one row per epoch, one column per bin),
/// `spatial.csv` and `channel_means.csv` (one row per channel, one column per
/// epoch) for the selected epochs. When the model directory holds training
/// statistics, the epochs are re-featurized with them.
pub fn attention(model_dir: &Path, features: &Path, out: &Path, epochs: &[usize]) -> CliResult<()> {
    let model = SstafModel::load(model_dir)?;
    let (meta, store) = source_store(features)?;
    let items = chosen(epochs, store.len())?;
    let cfg = model.config();
    if cfg.channels != meta.channels || cfg.f_bins != meta.f_bins {
        return Err(Error::Dimension(format!(
            "model expects {} channels × {} bins, features have {} × {}",
            cfg.channels, cfg.f_bins, meta.channels, meta.f_bins
        ))
        .into());
    }
    let stats_path = model_dir.join(STATS_FILE);
    let (shape, rows): ([usize; 3], Vec<Vec<f32>>) = if stats_path.exists() {
        let stats: ChannelStats = load_json(&stats_path)?;
        let keep: HashSet<usize> = items.iter().copied().collect();
        let subset = store.select(|i, _| keep.contains(&i));
        let set = featurize_store(&subset, &meta.stft_config(), Some(&stats))?;
        // `select` keeps store order; map back to the requested order.
        let mut sorted = items.clone();
        sorted.sort_unstable();
        let rows = items
            .iter()
            .map(|i| set.item(sorted.binary_search(i).unwrap_or(0)).to_vec())
            .collect();
        (set.shape, rows)
    } else {
        let (_, set) = read_feature_store(features, &store.meta.class_names)?;
        (set.shape, items.iter().map(|&i| set.item(i).to_vec()).collect())
    };
    let [c, f, t] = shape;
    let data: Vec<f64> = rows.iter().flatten().map(|&v| v as f64).collect();
    let x = Tensor::new(&[items.len(), c, f, t], data.clone())?;
    let (spectral, spatial) = model.attention_weights(x, Precision::F64)?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let epoch_cols: Vec<String> = items.iter().map(|i| format!("epoch_{i}")).collect();
    let labels = &store.meta.channel_labels;
    let per_channel = |name: &str, value: &dyn Fn(usize, usize) -> f64| -> CliResult<()> {
        let mut w = writer(&out.join(name))?;
        w.write_record(std::iter::once("channel".to_string()).chain(epoch_cols.iter().cloned()))?;
        for (ch, label) in labels.iter().enumerate() {
            let row = (0..items.len()).map(|b| format!("{:e}", value(b, ch)));
            w.write_record(std::iter::once(label.clone()).chain(row))?;
        }
        w.flush().map_err(|e| Error::io(out.join(name), e))?;
        Ok(())
    };

    match spectral {
        Some(s) => {
            let path = out.join("spectral.csv");
            let mut w = writer(&path)?;
            let fs = store.meta.fs;
            let n_fft = meta.n_fft as f64;
            let header = (0..f).map(|k| format!("{:.2}Hz", k as f64 * fs / n_fft));
            w.write_record(std::iter::once("epoch".to_string()).chain(header))?;
            for (b, i) in items.iter().enumerate() {
                let row = s.data()[b * f..(b + 1) * f].iter().map(|v| format!("{v:e}"));
                w.write_record(std::iter::once(i.to_string()).chain(row))?;
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        None => log::warn!("model has no spectral attention; spectral.csv not written"),
    }
    match spatial {
        Some(s) => per_channel("spatial.csv", &|b, ch| s.data()[b * c + ch])?,
        None => log::warn!("model has no spatial attention; spatial.csv not written"),
    }
    per_channel("channel_means.csv", &|b, ch| {
        let base = b * c * f * t + ch * f * t;
        data[base..base + f * t].iter().sum::<f64>() / (f * t) as f64
    })?;
    Ok(())
}

/// Per selected epoch, one row per channel with its time-averaged amplitude.
pub fn topo(input: &Path, out: &Path, segments: &[usize], dsp: Option<&DspConfig>) -> CliResult<()> {
    let store = EpochStore::read(input)?;
    let store = match dsp {
        Some(cfg) => {
            cfg.validate(store.meta.fs)?;
            preprocess_store(&store, cfg)?
        }
        None => store,
    };
    let items = chosen(segments, store.len())?;
    let c = store.meta.channels();
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = writer(out)?;
    w.write_record(["segment", "subject", "class", "channel", "mean_amplitude"])?;
    for &i in &items {
        let e = &store.epochs()[i];
        let n = e.data.len() / c;
        for (ch, label) in store.meta.channel_labels.iter().enumerate() {
            let mean = (0..n).map(|s| e.data[s * c + ch] as f64).sum::<f64>() / n as f64;
            w.write_record([
                i.to_string(),
                e.subject.to_string(),
                store.meta.class_names[e.label].clone(),
                label.clone(),
                format!("{mean:e}"),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    Ok(())
}
