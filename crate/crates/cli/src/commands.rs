use std::collections::HashSet;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sstaf::config::PipelineConfig;
use sstaf::dsp::ChannelStats;
use sstaf::eval::{assert_no_leakage, run_cv, Fold, SchemeName, SplitPlan};
use sstaf::ingest::{ingest_directory, preprocess_store, EpochStore};
use sstaf::model::{SstafModel, Variant};
use sstaf::stft::{featurize_store, read_feature_meta, write_feature_store, FeatureMeta, StftConfig};
use sstaf::synth::generate;
use sstaf::train::train_run;
use sstaf::Error;

use crate::args::{Cli, Command, CvArgs, ModelOptions, SchemeArg};
use crate::export;
use crate::CliError;

pub type CliResult<T> = std::result::Result<T, CliError>;

pub const HISTORY_FILE: &str = "history.json";
pub const STATS_FILE: &str = "stats.json";
pub const SPLIT_FILE: &str = "split.json";

pub fn load_json<T: DeserializeOwned>(path: &Path) -> sstaf::Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> sstaf::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// The configuration tree after applying the pipeline file, stage files,
/// flags and the seed, in that order.
struct Settings {
    cfg: PipelineConfig,
}

impl Settings {
    fn new(cli: &Cli) -> CliResult<Self> {
        let cfg = match &cli.pipeline {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        Ok(Settings { cfg })
    }

    fn apply_model_options(&mut self, opts: &ModelOptions) -> CliResult<()> {
        if let Some(p) = &opts.train_config {
            self.cfg.train = load_json(p)?;
        }
        if let Some(p) = &opts.model_config {
            self.cfg.model = load_json(p)?;
        }
        if let Some(e) = opts.epochs {
            self.cfg.train.epochs = e;
        }
        Ok(())
    }

    fn finish(mut self, seed: Option<u64>) -> CliResult<PipelineConfig> {
        if let Some(s) = seed {
            self.cfg = self.cfg.with_seed(s);
        }
        self.cfg.validate()?;
        Ok(self.cfg)
    }
}

pub fn dispatch(cli: Cli) -> CliResult<()> {
    let mut settings = Settings::new(&cli)?;
    match &cli.command {
        Command::Ingest(a) => {
            if let Some(p) = &a.config {
                settings.cfg.ingest = load_json(p)?;
            }
            if a.raw {
                settings.cfg.ingest.preprocess = false;
            }
            let cfg = settings.finish(cli.seed)?;
            let (store, summary) = ingest_directory(&a.input, &cfg.ingest, &cfg.dsp)?;
            store.write(&a.out)?;
            write_json(&a.out.join("summary.json"), &summary)?;
            log::info!("{} epochs from {} files", summary.epochs, summary.files);
        }
        Command::ImportEpochs(a) => {
            let cfg = settings.finish(cli.seed)?;
            let store = EpochStore::read(&a.input)?;
            let store = if a.preprocess {
                cfg.dsp.validate(store.meta.fs)?;
                preprocess_store(&store, &cfg.dsp)?
            } else {
                store
            };
            store.write(&a.out)?;
            log::info!("imported {} epochs", store.len());
        }
        Command::Preprocess(a) => {
            if let Some(p) = &a.config {
                settings.cfg.dsp = load_json(p)?;
            }
            let cfg = settings.finish(cli.seed)?;
            let store = EpochStore::read(&a.input)?;
            cfg.dsp.validate(store.meta.fs)?;
            preprocess_store(&store, &cfg.dsp)?.write(&a.out)?;
        }
        Command::Features(a) => {
            if let Some(n) = a.n_fft {
                settings.cfg.stft.n_fft = n;
            }
            if let Some(h) = a.hop {
                settings.cfg.stft.hop = h;
            }
            settings.cfg.stft.log_power |= a.log_power;
            let cfg = settings.finish(cli.seed)?;
            let store = EpochStore::read(&a.input)?;
            cfg.stft.frames(store.meta.epoch_len)?;
            let stats: Option<ChannelStats> = a.stats.as_deref().map(load_json).transpose()?;
            let set = featurize_store(&store, &cfg.stft, stats.as_ref())?;
            write_feature_store(&a.out, &set, &cfg.stft, stats.is_some(), &a.input, store.index())?;
        }
        Command::Synth(a) => {
            if let Some(p) = &a.config {
                settings.cfg.synth = load_json(p)?;
            }
            if let Some(n) = a.subjects {
                settings.cfg.synth.n_subjects = n;
            }
            if let Some(n) = a.trials_per_class {
                settings.cfg.synth.trials_per_class = n;
            }
            let cfg = settings.finish(cli.seed)?;
            generate(&cfg.synth)?.write(&a.out)?;
        }
        Command::Train(a) => {
            if let Some(p) = &a.config {
                settings.cfg.train = load_json(p)?;
            }
            settings.apply_model_options(&a.model)?;
            let cfg = settings.finish(cli.seed)?;
            let fold = match &a.split {
                Some(p) => Some(read_split(p, a.fold)?),
                None => None,
            };
            train(&cfg, &a.features, fold.as_ref(), &a.out)?;
        }
        Command::Eval(a) => {
            cross_validate(settings, cli.seed, &a.cv, Variant::Full)?;
        }
        Command::Ablate(a) => {
            let variant = Variant::parse(&a.variant)?;
            cross_validate(settings, cli.seed, &a.cv, variant)?;
        }
        Command::ExportAttention(a) => {
            settings.finish(cli.seed)?;
            export::attention(&a.model, &a.features, &a.out, &a.epochs)?;
        }
        Command::ExportTopo(a) => {
            let cfg = settings.finish(cli.seed)?;
            export::topo(&a.input, &a.out, &a.segments, a.preprocessed.then_some(&cfg.dsp))?;
        }
    }
    Ok(())
}

/// Reads either a single fold or a whole plan, from which `fold` is taken.
fn read_split(path: &Path, fold: usize) -> CliResult<Fold> {
    let value: serde_json::Value = load_json(path)?;
    if value.get("folds").is_some() {
        let plan: SplitPlan = serde_json::from_value(value).map_err(Error::from)?;
        let n = plan.folds.len();
        plan.folds
            .into_iter()
            .nth(fold)
            .ok_or_else(|| CliError::Usage(format!("split plan has {n} folds, asked for fold {fold}")))
    } else {
        Ok(serde_json::from_value(value).map_err(Error::from)?)
    }
}

/// The epoch store a feature store was computed from. Relative paths are
/// tried as given, then next to the feature store.
pub fn source_store(features: &Path) -> sstaf::Result<(FeatureMeta, EpochStore)> {
    let meta = read_feature_meta(features)?;
    let direct = meta.epoch_store.clone();
    let path = if direct.is_absolute() || direct.join(sstaf::ingest::META_FILE).exists() {
        direct
    } else {
        features.parent().map(|p| p.join(&direct)).unwrap_or(direct)
    };
    let store = EpochStore::read(&path)?;
    if store.len() != meta.n_epochs {
        return Err(Error::Data(format!(
            "feature store lists {} epochs but {} holds {}",
            meta.n_epochs,
            path.display(),
            store.len()
        )));
    }
    Ok((meta, store))
}

fn sized_model_config(
    cfg: &PipelineConfig,
    store: &EpochStore,
    stft: &StftConfig,
) -> sstaf::Result<sstaf::model::ModelConfig> {
    let mut m = cfg.model.clone();
    m.channels = store.meta.channels();
    m.f_bins = stft.f_bins();
    m.t_frames = stft.frames(store.meta.epoch_len)?;
    m.n_classes = store.meta.class_names.len();
    Ok(m)
}

fn train(cfg: &PipelineConfig, features: &Path, fold: Option<&Fold>, out: &Path) -> CliResult<()> {
    let (meta, store) = source_store(features)?;
    let stft = meta.stft_config();
    let subjects: Vec<u32> = store.epochs().iter().map(|e| e.subject).collect();
    let runs: Vec<u32> = store.epochs().iter().map(|e| e.run).collect();
    let (train_idx, val_idx) = match fold {
        Some(f) => f.items(&subjects)?,
        None => ((0..store.len()).collect(), Vec::new()),
    };
    if train_idx.is_empty() {
        return Err(CliError::Usage("the split leaves no training epochs".into()));
    }
    let by_subject = fold.is_some_and(|f| f.test_items.is_none());
    assert_no_leakage(&train_idx, &val_idx, &subjects, &runs, by_subject)?;
    let keep_train: HashSet<usize> = train_idx.into_iter().collect();
    let keep_val: HashSet<usize> = val_idx.into_iter().collect();
    let train_store = store.select(|i, _| keep_train.contains(&i));
    let stats = ChannelStats::fit(
        train_store.epochs().iter().map(|e| e.data.as_slice()),
        store.meta.channels(),
    )?;
    let train_set = featurize_store(&train_store, &stft, Some(&stats))?;
    let val_set = if keep_val.is_empty() {
        None
    } else {
        Some(featurize_store(
            &store.select(|i, _| keep_val.contains(&i)),
            &stft,
            Some(&stats),
        )?)
    };
    let mut model = SstafModel::new(&sized_model_config(cfg, &store, &stft)?, cfg.train.seed)?;
    let history = train_run(&mut model, &train_set, val_set.as_ref(), &cfg.train)?;
    model.save(out)?;
    write_json(&out.join(HISTORY_FILE), &history)?;
    write_json(&out.join(STATS_FILE), &stats)?;
    if let Some(f) = fold {
        write_json(&out.join(SPLIT_FILE), f)?;
    }
    Ok(())
}

fn cross_validate(mut settings: Settings, seed: Option<u64>, a: &CvArgs, variant: Variant) -> CliResult<()> {
    settings.apply_model_options(&a.model)?;
    if let Some(s) = a.scheme {
        settings.cfg.eval.scheme = match s {
            SchemeArg::Kfold => SchemeName::Kfold,
            SchemeArg::Loso => SchemeName::Loso,
        };
    }
    if let Some(k) = a.k {
        settings.cfg.eval.k = k;
    }
    settings.cfg.eval.leaky_split |= a.leaky_split;
    let cfg = settings.finish(seed)?;
    let (meta, store) = source_store(&a.features)?;
    let stft = meta.stft_config();
    let subjects: Vec<u32> = store.epochs().iter().map(|e| e.subject).collect();
    let plan = cfg.eval.plan(&subjects)?;
    let model_cfg = variant.apply(&sized_model_config(&cfg, &store, &stft)?);
    let outcome = run_cv(&store, &plan, &stft, &model_cfg, &cfg.train, variant.name())?;
    write_json(&a.out, &outcome.report)?;
    if let Some(dir) = &a.save_models {
        for (i, m) in outcome.models.iter().enumerate() {
            m.save(&dir.join(format!("fold_{i}")))?;
        }
    }
    log::info!(
        "{}: accuracy {:.4} over {} folds",
        variant.name(),
        outcome.report.accuracy,
        outcome.report.folds.len()
    );
    Ok(())
}
