//! On-disk epoch store: `epochs.bin` (little-endian f32, one time-major
//! `epoch_len × C` block per epoch), `index.json` and `meta.json`.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Epoch;
use crate::error::{Error, Result};

pub const EPOCHS_FILE: &str = "epochs.bin";
pub const INDEX_FILE: &str = "index.json";
pub const META_FILE: &str = "meta.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoreMeta {
    pub fs: f64,
    pub channel_labels: Vec<String>,
    pub class_names: Vec<String>,
    pub epoch_len: usize,
    /// Suggested STFT window and hop for this store.
    pub n_fft: usize,
    pub hop: usize,
}

impl StoreMeta {
    pub fn channels(&self) -> usize {
        self.channel_labels.len()
    }

    fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0) {
            return Err(Error::Data(format!("store sampling rate {} is not positive", self.fs)));
        }
        if self.channel_labels.is_empty() || self.class_names.is_empty() || self.epoch_len == 0 {
            return Err(Error::Data(
                "store needs channels, classes and a non-zero epoch length".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    /// Byte offset of the epoch inside `epochs.bin`.
    pub offset: u64,
    pub subject: u32,
    pub run: u32,
    pub label: String,
}

/// An in-memory epoch store.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStore {
    pub meta: StoreMeta,
    epochs: Vec<Epoch>,
}

impl EpochStore {
    pub fn new(meta: StoreMeta) -> Result<Self> {
        meta.validate()?;
        Ok(EpochStore {
            meta,
            epochs: Vec::new(),
        })
    }

    pub fn push(&mut self, epoch: Epoch) -> Result<()> {
        let want = self.meta.epoch_len * self.meta.channels();
        if epoch.data.len() != want {
            return Err(Error::Dimension(format!(
                "epoch has {} values, store expects {} × {} = {want}",
                epoch.data.len(),
                self.meta.epoch_len,
                self.meta.channels()
            )));
        }
        if epoch.label >= self.meta.class_names.len() {
            return Err(Error::Data(format!(
                "label id {} outside the store's {} classes",
                epoch.label,
                self.meta.class_names.len()
            )));
        }
        if epoch.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "epoch of subject {} run {} has non-finite samples",
                epoch.subject, epoch.run
            )));
        }
        self.epochs.push(epoch);
        Ok(())
    }

    pub fn epochs(&self) -> &[Epoch] {
        &self.epochs
    }

    pub fn epochs_mut(&mut self) -> &mut [Epoch] {
        &mut self.epochs
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn subjects(&self) -> Vec<u32> {
        self.epochs
            .iter()
            .map(|e| e.subject)
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.label).collect()
    }

    fn epoch_bytes(&self) -> usize {
        4 * self.meta.epoch_len * self.meta.channels()
    }

    pub fn index(&self) -> Vec<IndexEntry> {
        let size = self.epoch_bytes() as u64;
        self.epochs
            .iter()
            .enumerate()
            .map(|(i, e)| IndexEntry {
                offset: i as u64 * size,
                subject: e.subject,
                run: e.run,
                label: self.meta.class_names[e.label].clone(),
            })
            .collect()
    }

    /// Writes the three store files into `dir`, creating it if needed.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut bin = Vec::with_capacity(self.epochs.len() * self.epoch_bytes());
        for e in &self.epochs {
            for v in &e.data {
                bin.extend_from_slice(&v.to_le_bytes());
            }
        }
        write_file(&dir.join(EPOCHS_FILE), &bin)?;
        write_file(&dir.join(INDEX_FILE), &serde_json::to_vec_pretty(&self.index())?)?;
        write_file(&dir.join(META_FILE), &serde_json::to_vec_pretty(&self.meta)?)?;
        Ok(())
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let meta: StoreMeta = read_json(&dir.join(META_FILE))?;
        let index: Vec<IndexEntry> = read_json(&dir.join(INDEX_FILE))?;
        let path = dir.join(EPOCHS_FILE);
        let bin = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let mut store = EpochStore::new(meta)?;
        let size = store.epoch_bytes();
        for (i, entry) in index.into_iter().enumerate() {
            let label = store
                .meta
                .class_names
                .iter()
                .position(|c| *c == entry.label)
                .ok_or_else(|| Error::Data(format!("epoch {i}: label `{}` is not a store class", entry.label)))?;
            let start = usize::try_from(entry.offset)
                .map_err(|_| Error::Data(format!("epoch {i}: offset {} too large", entry.offset)))?;
            if start % 4 != 0 {
                return Err(Error::Data(format!("epoch {i}: offset {start} is not f32-aligned")));
            }
            let chunk = bin.get(start..start + size).ok_or_else(|| {
                Error::parse(
                    bin.len(),
                    format!("epoch {i}: {} needs bytes {start}..{}", EPOCHS_FILE, start + size),
                )
            })?;
            let data = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            store.push(Epoch {
                data,
                label,
                subject: entry.subject,
                run: entry.run,
            })?;
        }
        Ok(store)
    }

    /// Keeps the epochs whose position satisfies `keep`, in order.
    pub fn select(&self, mut keep: impl FnMut(usize, &Epoch) -> bool) -> EpochStore {
        EpochStore {
            meta: self.meta.clone(),
            epochs: self
                .epochs
                .iter()
                .enumerate()
                .filter(|(i, e)| keep(*i, e))
                .map(|(_, e)| e.clone())
                .collect(),
        }
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}
