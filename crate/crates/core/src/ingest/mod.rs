//! EDF ingestion, motor-imagery run selection and trial epoching.

pub mod edf;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::{DspConfig, Preprocessor, Recording};
use crate::error::{Error, Result};
pub use edf::{parse_edf, write_edf, AnnotationEvent, EdfFile, EdfHeader, SignalHeader, SignalScale};
pub(crate) use store::{read_json, write_file};
pub use store::{EpochStore, IndexEntry, StoreMeta, EPOCHS_FILE, INDEX_FILE, META_FILE};

/// Samples kept per trial.
pub const EPOCH_LEN: usize = 640;

/// A fixed-length labeled trial, time-major (`data[t * channels + c]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Epoch {
    pub data: Vec<f32>,
    pub label: usize,
    pub subject: u32,
    pub run: u32,
}

impl Epoch {
    pub fn n_samples(&self, channels: usize) -> usize {
        self.data.len() / channels
    }
}

/// A trial cut from a recording before length standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawEpoch {
    pub data: Vec<f64>,
    pub n_samples: usize,
    pub channels: usize,
    pub label: usize,
    pub onset: f64,
}

/// Cuts a raw trial to exactly `len` samples by keeping its head; trials
/// shorter than `len` are discarded (`None`).
pub fn standardize_length(raw: &RawEpoch, len: usize) -> Option<Vec<f32>> {
    (raw.n_samples >= len).then(|| raw.data[..len * raw.channels].iter().map(|&v| v as f32).collect())
}

/// Which annotation codes become which class, for one group of runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLabels {
    pub runs: Vec<u32>,
    /// Annotation code → class name. Codes not listed are excluded.
    pub codes: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelMap {
    pub class_names: Vec<String>,
    pub groups: Vec<RunLabels>,
}

impl Default for LabelMap {
    /// EEGMMIDB: runs 4, 8 and 12 are left/right-fist imagery (T1 left, T2
    /// right); runs 2, 6 and 10 contribute their rest segments only.
    fn default() -> Self {
        let codes = |pairs: &[(&str, &str)]| pairs.iter().map(|(c, n)| (c.to_string(), n.to_string())).collect();
        LabelMap {
            class_names: vec!["relax".into(), "left".into(), "right".into()],
            groups: vec![
                RunLabels {
                    runs: vec![4, 8, 12],
                    codes: codes(&[("T0", "relax"), ("T1", "left"), ("T2", "right")]),
                },
                RunLabels {
                    runs: vec![2, 6, 10],
                    codes: codes(&[("T0", "relax")]),
                },
            ],
        }
    }
}

impl LabelMap {
    pub fn validate(&self) -> Result<()> {
        if self.class_names.is_empty() {
            return Err(Error::Config("label map has no classes".into()));
        }
        let mut seen = BTreeSet::new();
        for g in &self.groups {
            for r in &g.runs {
                if !seen.insert(*r) {
                    return Err(Error::Config(format!("run {r} appears in two label groups")));
                }
            }
            if let Some(bad) = g.codes.values().find(|n| !self.class_names.contains(n)) {
                return Err(Error::Config(format!("label map targets unknown class `{bad}`")));
            }
        }
        Ok(())
    }

    /// Code → class id table for `run`; empty when the run has no group.
    pub fn for_run(&self, run: u32) -> BTreeMap<String, usize> {
        self.groups
            .iter()
            .find(|g| g.runs.contains(&run))
            .map(|g| {
                g.codes
                    .iter()
                    .filter_map(|(code, name)| {
                        let id = self.class_names.iter().position(|c| c == name)?;
                        Some((code.clone(), id))
                    })
                    .collect()
            })
            .unwrap_or_default()
    }
}

/// Counters describing one ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub files: usize,
    pub events: usize,
    pub epochs: usize,
    pub excluded_code: usize,
    pub past_end: usize,
    pub too_short: usize,
    pub per_class: BTreeMap<String, usize>,
    pub missing_runs: Vec<(u32, u32)>,
}

impl IngestSummary {
    fn absorb(&mut self, other: &IngestSummary) {
        self.files += other.files;
        self.events += other.events;
        self.epochs += other.epochs;
        self.excluded_code += other.excluded_code;
        self.past_end += other.past_end;
        self.too_short += other.too_short;
        for (k, v) in &other.per_class {
            *self.per_class.entry(k.clone()).or_default() += v;
        }
    }
}

/// Cuts one raw trial per annotated event whose code the table maps to a
/// class. Events running past the recording end are dropped.
pub fn extract_epochs(
    rec: &Recording,
    events: &[AnnotationEvent],
    codes: &BTreeMap<String, usize>,
    summary: &mut IngestSummary,
) -> Vec<RawEpoch> {
    let c = rec.n_channels();
    let mut out = Vec::new();
    for ev in events {
        summary.events += 1;
        let Some(&label) = codes.get(&ev.code) else {
            summary.excluded_code += 1;
            continue;
        };
        let start = (ev.onset * rec.fs()).round() as usize;
        let end = ((ev.onset + ev.duration) * rec.fs()).round() as usize;
        if end > rec.n_samples() || end <= start {
            warn!(
                "dropping `{}` trial at {:.3} s: samples {start}..{end} outside recording of {}",
                ev.code,
                ev.onset,
                rec.n_samples()
            );
            summary.past_end += 1;
            continue;
        }
        out.push(RawEpoch {
            data: rec.data()[start * c..end * c].to_vec(),
            n_samples: end - start,
            channels: c,
            label,
            onset: ev.onset,
        });
    }
    out
}

/// A recording file named after the `SxxxRyy` convention.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct RunFile {
    pub subject: u32,
    pub run: u32,
    pub path: PathBuf,
}

impl RunFile {
    /// Parses `S001R04.edf`-style names; anything else yields `None`.
    pub fn from_path(path: &Path) -> Option<RunFile> {
        let stem = path.file_stem()?.to_str()?.to_ascii_uppercase();
        let rest = stem.strip_prefix('S')?;
        let (subject, run) = rest.split_once('R')?;
        Some(RunFile {
            subject: subject.parse().ok()?,
            run: run.parse().ok()?,
            path: path.to_path_buf(),
        })
    }
}

pub const MI_RUNS: [u32; 6] = [2, 4, 6, 8, 10, 12];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSelection {
    pub selected: Vec<RunFile>,
    /// `(subject, run)` pairs that were wanted but absent.
    pub missing: Vec<(u32, u32)>,
}

/// Keeps only the imagery runs of each subject, sorted by subject then run.
pub fn select_mi_runs(files: &[RunFile], runs: &[u32]) -> RunSelection {
    let mut selected: Vec<RunFile> = files.iter().filter(|f| runs.contains(&f.run)).cloned().collect();
    selected.sort();
    selected.dedup_by(|a, b| a.subject == b.subject && a.run == b.run);
    let subjects: BTreeSet<u32> = files.iter().map(|f| f.subject).collect();
    let mut missing = Vec::new();
    for s in subjects {
        for &r in runs {
            if !selected.iter().any(|f| f.subject == s && f.run == r) {
                warn!("subject {s} lacks run {r}; keeping the runs present");
                missing.push((s, r));
            }
        }
    }
    RunSelection { selected, missing }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    pub dataset: String,
    pub runs: Vec<u32>,
    pub label_map: LabelMap,
    pub epoch_len: usize,
    /// Run the conditioning chain on each continuous recording before
    /// epoching.
    pub preprocess: bool,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            dataset: "eegmmidb".into(),
            runs: MI_RUNS.to_vec(),
            label_map: LabelMap::default(),
            epoch_len: EPOCH_LEN,
            preprocess: true,
        }
    }
}

impl IngestConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dataset != "eegmmidb" {
            return Err(Error::Config(format!(
                "unsupported dataset `{}`; other datasets enter through import-epochs",
                self.dataset
            )));
        }
        if self.epoch_len == 0 {
            return Err(Error::Config("epoch length must be positive".into()));
        }
        self.label_map.validate()
    }
}

fn clean_label(label: &str) -> String {
    label.trim().trim_end_matches('.').to_string()
}

struct FileEpochs {
    fs: f64,
    labels: Vec<String>,
    epochs: Vec<Epoch>,
    summary: IngestSummary,
}

fn ingest_file(file: &RunFile, cfg: &IngestConfig, dsp: &DspConfig) -> Result<FileEpochs> {
    let bytes = std::fs::read(&file.path).map_err(|e| Error::io(&file.path, e))?;
    let parsed = parse_edf(&bytes).map_err(|e| match e {
        Error::Parse { offset, message } => Error::Parse {
            offset,
            message: format!("{}: {message}", file.path.display()),
        },
        other => other,
    })?;
    let mut rec = parsed.recording;
    if cfg.preprocess {
        rec = Preprocessor::new(dsp, rec.fs())?.run(&rec)?;
    }
    let mut summary = IngestSummary {
        files: 1,
        ..Default::default()
    };
    let codes = cfg.label_map.for_run(file.run);
    let raw = extract_epochs(&rec, &parsed.annotations, &codes, &mut summary);
    let mut epochs = Vec::new();
    for r in &raw {
        match standardize_length(r, cfg.epoch_len) {
            Some(data) => {
                *summary
                    .per_class
                    .entry(cfg.label_map.class_names[r.label].clone())
                    .or_default() += 1;
                epochs.push(Epoch {
                    data,
                    label: r.label,
                    subject: file.subject,
                    run: file.run,
                });
            }
            None => summary.too_short += 1,
        }
    }
    summary.epochs = epochs.len();
    Ok(FileEpochs {
        fs: rec.fs(),
        labels: rec.channel_labels().iter().map(|l| clean_label(l)).collect(),
        epochs,
        summary,
    })
}

/// Parses every `SxxxRyy.edf` below `dir`, keeps the configured runs and
/// returns the resulting epoch store with its bookkeeping.
pub fn ingest_directory(dir: &Path, cfg: &IngestConfig, dsp: &DspConfig) -> Result<(EpochStore, IngestSummary)> {
    cfg.validate()?;
    let mut files = Vec::new();
    for entry in walkdir::WalkDir::new(dir).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        let is_edf = entry.path().extension().is_some_and(|x| x.eq_ignore_ascii_case("edf"));
        if entry.file_type().is_file() && is_edf {
            if let Some(f) = RunFile::from_path(entry.path()) {
                files.push(f);
            }
        }
    }
    let selection = select_mi_runs(&files, &cfg.runs);
    if selection.selected.is_empty() {
        return Err(Error::Data(format!("no imagery runs found under {}", dir.display())));
    }
    let parsed: Vec<FileEpochs> = selection
        .selected
        .par_iter()
        .map(|f| ingest_file(f, cfg, dsp))
        .collect::<Result<_>>()?;

    let first = &parsed[0];
    let meta = StoreMeta {
        fs: first.fs,
        channel_labels: first.labels.clone(),
        class_names: cfg.label_map.class_names.clone(),
        epoch_len: cfg.epoch_len,
        n_fft: 128,
        hop: 64,
    };
    let mut store = EpochStore::new(meta)?;
    let mut summary = IngestSummary {
        missing_runs: selection.missing,
        ..Default::default()
    };
    for (file, part) in selection.selected.iter().zip(parsed) {
        if part.fs != store.meta.fs || part.labels != store.meta.channel_labels {
            return Err(Error::Data(format!(
                "{} differs from the first file in sampling rate or channel layout",
                file.path.display()
            )));
        }
        summary.absorb(&part.summary);
        for e in part.epochs {
            store.push(e)?;
        }
    }
    Ok((store, summary))
}

/// Runs the conditioning chain on every epoch of an already extracted
/// store. Each epoch is filtered as its own short recording.
pub fn preprocess_store(store: &EpochStore, dsp: &DspConfig) -> Result<EpochStore> {
    let pre = Preprocessor::new(dsp, store.meta.fs)?;
    let labels = store.meta.channel_labels.clone();
    let data: Vec<Vec<f32>> = store
        .epochs()
        .par_iter()
        .map(|e| {
            let rec = Recording::new(
                e.data.iter().map(|&v| v as f64).collect(),
                store.meta.fs,
                labels.clone(),
            )?;
            Ok(pre.run(&rec)?.into_data().into_iter().map(|v| v as f32).collect())
        })
        .collect::<Result<_>>()?;
    let mut out = EpochStore::new(store.meta.clone())?;
    for (e, d) in store.epochs().iter().zip(data) {
        out.push(Epoch { data: d, ..e.clone() })?;
    }
    Ok(out)
}
