//! Subject-aware cross-validation and classification metrics.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dsp::ChannelStats;
use crate::error::{Error, Result};
use crate::ingest::EpochStore;
use crate::model::{ModelConfig, SstafModel};
use crate::stft::{featurize_store, StftConfig};
use crate::train::{argmax_rows, predict_scores, train_run, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Scheme {
    Kfold {
        k: usize,
    },
    Loso,
    /// Epoch-level k-fold: a subject's trials may land on both sides.
    /// Only for comparison with subject-independent results.
    LeakyKfold {
        k: usize,
    },
}

impl Scheme {
    pub fn is_subject_independent(self) -> bool {
        !matches!(self, Scheme::LeakyKfold { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeName {
    Kfold,
    Loso,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub scheme: SchemeName,
    pub k: usize,
    pub seed: u64,
    /// Split epochs instead of subjects. Results are not subject-independent.
    pub leaky_split: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            scheme: SchemeName::Kfold,
            k: 5,
            seed: 42,
            leaky_split: false,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scheme == SchemeName::Kfold && self.k < 2 {
            return Err(Error::Config(format!("k-fold needs k >= 2, got {}", self.k)));
        }
        if self.leaky_split && self.scheme == SchemeName::Loso {
            return Err(Error::Config(
                "an epoch-level split cannot be leave-one-subject-out".into(),
            ));
        }
        Ok(())
    }

    /// Builds the split plan for a store whose items have these subjects.
    pub fn plan(&self, subjects_per_item: &[u32]) -> Result<SplitPlan> {
        self.validate()?;
        match (self.scheme, self.leaky_split) {
            (SchemeName::Loso, _) => make_loso(subjects_per_item),
            (SchemeName::Kfold, false) => make_kfold(subjects_per_item, self.k, self.seed),
            (SchemeName::Kfold, true) => make_leaky_kfold(subjects_per_item, self.k, self.seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fold {
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
    /// Explicit test epochs for epoch-level plans.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub test_items: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub scheme: Scheme,
    pub folds: Vec<Fold>,
    pub seed: u64,
}

fn unique(subjects: &[u32]) -> Vec<u32> {
    subjects.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

fn folds_from_groups(all: &[u32], mut groups: Vec<Vec<u32>>) -> Vec<Fold> {
    for g in &mut groups {
        g.sort_unstable();
    }
    groups.sort();
    groups
        .into_iter()
        .map(|test| Fold {
            train_subjects: all.iter().copied().filter(|s| !test.contains(s)).collect(),
            test_subjects: test,
            test_items: None,
        })
        .collect()
}

/// Shuffles the distinct subjects with `seed` and deals them into `k`
/// groups whose sizes differ by at most one. Folds are ordered by their
/// smallest test subject.
pub fn make_kfold(subjects: &[u32], k: usize, seed: u64) -> Result<SplitPlan> {
    let all = unique(subjects);
    if k < 2 || k > all.len() {
        return Err(Error::Config(format!(
            "k-fold needs 2 <= k <= {} subjects, got k = {k}",
            all.len()
        )));
    }
    let mut shuffled = all.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (all.len() / k, all.len() % k);
    let mut groups = Vec::with_capacity(k);
    let mut rest = &shuffled[..];
    for i in 0..k {
        let (g, r) = rest.split_at(base + usize::from(i < extra));
        groups.push(g.to_vec());
        rest = r;
    }
    Ok(SplitPlan {
        scheme: Scheme::Kfold { k },
        folds: folds_from_groups(&all, groups),
        seed,
    })
}

/// One fold per subject, testing that subject alone.
pub fn make_loso(subjects: &[u32]) -> Result<SplitPlan> {
    let all = unique(subjects);
    if all.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            all.len()
        )));
    }
    let groups = all.iter().map(|&s| vec![s]).collect();
    Ok(SplitPlan {
        scheme: Scheme::Loso,
        folds: folds_from_groups(&all, groups),
        seed: 0,
    })
}

/// Epoch-level k-fold over `n_items` trials, ignoring subject identity.
pub fn make_leaky_kfold(subjects_per_item: &[u32], k: usize, seed: u64) -> Result<SplitPlan> {
    let n = subjects_per_item.len();
    if k < 2 || k > n {
        return Err(Error::Config(format!(
            "epoch-level k-fold needs 2 <= k <= {n}, got {k}"
        )));
    }
    let mut items: Vec<usize> = (0..n).collect();
    items.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (base, extra) = (n / k, n % k);
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let len = base + usize::from(i < extra);
        let mut test: Vec<usize> = items[start..start + len].to_vec();
        test.sort_unstable();
        start += len;
        let test_set: HashSet<usize> = test.iter().copied().collect();
        let subj = |keep: bool| {
            unique(
                &(0..n)
                    .filter(|i| test_set.contains(i) == keep)
                    .map(|i| subjects_per_item[i])
                    .collect::<Vec<_>>(),
            )
        };
        folds.push(Fold {
            train_subjects: subj(false),
            test_subjects: subj(true),
            test_items: Some(test),
        });
    }
    Ok(SplitPlan {
        scheme: Scheme::LeakyKfold { k },
        folds,
        seed,
    })
}

impl Fold {
    /// Maps the fold onto `(train, test)` item indices of a store whose
    /// items belong to `subjects_per_item`. Either side may be empty.
    pub fn items(&self, subjects_per_item: &[u32]) -> Result<(Vec<usize>, Vec<usize>)> {
        let n = subjects_per_item.len();
        if let Some(test) = &self.test_items {
            if let Some(&bad) = test.iter().find(|&&i| i >= n) {
                return Err(Error::Data(format!(
                    "fold names epoch {bad} beyond the {n}-epoch store"
                )));
            }
            let t: HashSet<usize> = test.iter().copied().collect();
            return Ok(((0..n).filter(|i| !t.contains(i)).collect(), test.clone()));
        }
        let present: HashSet<u32> = subjects_per_item.iter().copied().collect();
        if let Some(s) = self
            .train_subjects
            .iter()
            .chain(&self.test_subjects)
            .find(|s| !present.contains(s))
        {
            return Err(Error::Data(format!("split subject {s} is absent from the store")));
        }
        let pick = |subjects: &[u32]| {
            let set: HashSet<u32> = subjects.iter().copied().collect();
            (0..n).filter(|&i| set.contains(&subjects_per_item[i])).collect()
        };
        Ok((pick(&self.train_subjects), pick(&self.test_subjects)))
    }
}

impl SplitPlan {
    /// Like [`Fold::items`] for fold `fold`, but both sides must be non-empty.
    pub fn resolve(&self, fold: usize, subjects_per_item: &[u32]) -> Result<(Vec<usize>, Vec<usize>)> {
        let f = self
            .folds
            .get(fold)
            .ok_or_else(|| Error::Config(format!("plan has no fold {fold}")))?;
        let (train, test) = f.items(subjects_per_item)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Data(format!(
                "fold {fold} has {} training and {} test epochs",
                train.len(),
                test.len()
            )));
        }
        Ok((train, test))
    }
}

/// Fails if a `(subject, run, epoch)` identifier appears on both sides, or,
/// when `by_subject`, if any subject does.
pub fn assert_no_leakage(
    train: &[usize],
    test: &[usize],
    subjects: &[u32],
    runs: &[u32],
    by_subject: bool,
) -> Result<()> {
    let id = |i: usize| (subjects[i], runs[i], i);
    let train_ids: HashSet<_> = train.iter().map(|&i| id(i)).collect();
    if let Some(&i) = test.iter().find(|&&i| train_ids.contains(&id(i))) {
        return Err(Error::Data(format!("epoch {i} appears in both training and test sets")));
    }
    if by_subject {
        let train_subj: HashSet<u32> = train.iter().map(|&i| subjects[i]).collect();
        if let Some(&i) = test.iter().find(|&&i| train_subj.contains(&subjects[i])) {
            return Err(Error::Data(format!(
                "subject {} appears in both training and test sets",
                subjects[i]
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Equals accuracy for single-label predictions.
    pub micro_f1: f64,
    pub per_class: Vec<ClassMetrics>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

fn classification_from_confusion(confusion: Vec<Vec<usize>>) -> Classification {
    let k = confusion.len();
    let total: usize = confusion.iter().flatten().sum();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..k)
        .map(|c| {
            let tp = confusion[c][c];
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            let (p, r) = (ratio(tp, predicted), ratio(tp, support));
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            ClassMetrics {
                precision: p,
                recall: r,
                f1,
                support,
            }
        })
        .collect();
    let accuracy = ratio(correct, total);
    Classification {
        accuracy,
        macro_f1: per_class.iter().map(|m| m.f1).sum::<f64>() / k as f64,
        micro_f1: accuracy,
        per_class,
        confusion,
    }
}

/// Accuracy, macro F1 (0 for classes with P + R = 0) and the confusion
/// matrix.
pub fn accuracy_f1(preds: &[usize], targets: &[usize], k: usize) -> Result<Classification> {
    if preds.len() != targets.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if k == 0 {
        return Err(Error::Config("need at least one class".into()));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in preds.iter().zip(targets) {
        if p >= k || t >= k {
            return Err(Error::Data(format!("label {} outside 0..{k}", p.max(t))));
        }
        confusion[t][p] += 1;
    }
    Ok(classification_from_confusion(confusion))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucReport {
    /// Mean over classes with both positives and negatives.
    pub macro_auc: Option<f64>,
    /// AUC of all one-vs-rest decisions pooled together.
    pub micro_auc: Option<f64>,
    pub per_class: Vec<Option<f64>>,
    /// Classes lacking positives or negatives.
    pub skipped: Vec<usize>,
}

/// Binary ROC AUC by the Mann-Whitney rank statistic, ties counting ½.
/// `None` when either side is empty.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives, so tied average ranks stay integral.
    let mut rank2_pos: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their mean (i + j + 2) / 2.
        let twice_mean = (i + j + 2) as u128;
        let pos_in_group = order[i..=j].iter().filter(|&&o| positive[o]).count() as u128;
        rank2_pos += twice_mean * pos_in_group;
        i = j + 1;
    }
    let p = positive.iter().filter(|&&b| b).count() as u128;
    let n = scores.len() as u128 - p;
    if p == 0 || n == 0 {
        return None;
    }
    let u2 = rank2_pos - p * (p + 1);
    Some(u2 as f64 / (2 * p * n) as f64)
}

/// Macro one-vs-rest AUC of `(n, K)` row-major scores.
pub fn auc_ovr(scores: &[f64], targets: &[usize], k: usize) -> Result<AucReport> {
    if scores.len() != targets.len() * k {
        return Err(Error::Dimension(format!(
            "{} scores for {} targets × {k} classes",
            scores.len(),
            targets.len()
        )));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Data("scores must be finite".into()));
    }
    let mut per_class = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    for c in 0..k {
        let col: Vec<f64> = scores.chunks(k).map(|r| r[c]).collect();
        let pos: Vec<bool> = targets.iter().map(|&t| t == c).collect();
        let auc = binary_auc(&col, &pos);
        if auc.is_none() {
            skipped.push(c);
        }
        per_class.push(auc);
    }
    let valid: Vec<f64> = per_class.iter().flatten().copied().collect();
    let macro_auc = (!valid.is_empty()).then(|| valid.iter().sum::<f64>() / valid.len() as f64);
    let flat_pos: Vec<bool> = targets.iter().flat_map(|&t| (0..k).map(move |c| c == t)).collect();
    Ok(AucReport {
        macro_auc,
        micro_auc: binary_auc(scores, &flat_pos),
        per_class,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub train_subjects: Vec<u32>,
    pub test_subjects: Vec<u32>,
    pub n_train: usize,
    pub n_test: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub macro_auc: Option<f64>,
    pub micro_auc: Option<f64>,
    pub auc_skipped_classes: Vec<usize>,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: Vec<Vec<usize>>,
    pub train_loss: Vec<f64>,
    pub stats: ChannelStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> MeanStd {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub scheme: Scheme,
    pub subject_independent: bool,
    pub class_names: Vec<String>,
    /// Mean of the per-fold accuracies.
    pub accuracy: f64,
    pub accuracy_folds: MeanStd,
    pub macro_f1: MeanStd,
    pub micro_f1: MeanStd,
    pub macro_auc: Option<MeanStd>,
    pub micro_auc: Option<MeanStd>,
    /// Summed over folds, `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub per_class: Vec<ClassMetrics>,
    pub folds: Vec<FoldReport>,
}

impl MetricsReport {
    fn assemble(label: &str, scheme: Scheme, class_names: Vec<String>, folds: Vec<FoldReport>) -> Self {
        let k = class_names.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for f in &folds {
            for (row, frow) in confusion.iter_mut().zip(&f.confusion) {
                for (a, b) in row.iter_mut().zip(frow) {
                    *a += b;
                }
            }
        }
        let pooled = classification_from_confusion(confusion);
        let collect = |g: fn(&FoldReport) -> f64| folds.iter().map(g).collect::<Vec<_>>();
        let optional = |g: fn(&FoldReport) -> Option<f64>| {
            let v: Vec<f64> = folds.iter().filter_map(g).collect();
            (!v.is_empty()).then(|| MeanStd::of(&v))
        };
        let acc = MeanStd::of(&collect(|f| f.accuracy));
        MetricsReport {
            label: label.to_string(),
            scheme,
            subject_independent: scheme.is_subject_independent(),
            class_names,
            accuracy: acc.mean,
            accuracy_folds: acc,
            macro_f1: MeanStd::of(&collect(|f| f.macro_f1)),
            micro_f1: MeanStd::of(&collect(|f| f.micro_f1)),
            macro_auc: optional(|f| f.macro_auc),
            micro_auc: optional(|f| f.micro_auc),
            confusion: pooled.confusion,
            per_class: pooled.per_class,
            folds,
        }
    }
}

/// Seed for fold `fold` derived from a base seed.
pub fn fold_seed(base: u64, fold: usize) -> u64 {
    let mut z = base ^ (fold as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Everything a cross-validation run produces.
#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub report: MetricsReport,
    pub models: Vec<SstafModel>,
}

/// Per fold: fits standardization on the training epochs, featurizes both
/// sides, trains a freshly seeded model and scores the held-out epochs.
pub fn run_cv(
    store: &EpochStore,
    plan: &SplitPlan,
    stft: &StftConfig,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    label: &str,
) -> Result<CvOutcome> {
    train_cfg.validate()?;
    model_cfg.validate()?;
    stft.validate()?;
    let subjects: Vec<u32> = store.epochs().iter().map(|e| e.subject).collect();
    let runs: Vec<u32> = store.epochs().iter().map(|e| e.run).collect();
    let by_subject = plan.scheme.is_subject_independent();
    let resolved: Vec<(Vec<usize>, Vec<usize>)> = (0..plan.folds.len())
        .map(|i| {
            let (train, test) = plan.resolve(i, &subjects)?;
            assert_no_leakage(&train, &test, &subjects, &runs, by_subject)?;
            Ok((train, test))
        })
        .collect::<Result<_>>()?;

    let k = store.meta.class_names.len();
    let mut cfg = model_cfg.clone();
    cfg.channels = store.meta.channels();
    cfg.f_bins = stft.f_bins();
    cfg.t_frames = stft.frames(store.meta.epoch_len)?;
    cfg.n_classes = k;

    let results: Vec<(FoldReport, SstafModel)> = resolved
        .par_iter()
        .enumerate()
        .map(|(i, (train_idx, test_idx))| {
            let train_set: HashSet<usize> = train_idx.iter().copied().collect();
            let test_set: HashSet<usize> = test_idx.iter().copied().collect();
            let train_store = store.select(|j, _| train_set.contains(&j));
            let test_store = store.select(|j, _| test_set.contains(&j));
            let stats = ChannelStats::fit(
                train_store.epochs().iter().map(|e| e.data.as_slice()),
                store.meta.channels(),
            )?;
            let train_feats = featurize_store(&train_store, stft, Some(&stats))?;
            let test_feats = featurize_store(&test_store, stft, Some(&stats))?;
            let seed = fold_seed(train_cfg.seed, i);
            let mut model = SstafModel::new(&cfg, seed)?;
            let fold_train = TrainConfig {
                seed,
                ..train_cfg.clone()
            };
            let history = train_run(&mut model, &train_feats, None, &fold_train)?;
            let scores = predict_scores(&model, &test_feats, train_cfg.batch_size, train_cfg.precision)?;
            let preds = argmax_rows(&scores, k);
            let cls = accuracy_f1(&preds, &test_feats.labels, k)?;
            let auc = auc_ovr(&scores, &test_feats.labels, k)?;
            let fold = &plan.folds[i];
            log::info!(
                "{label} fold {}/{}: accuracy {:.4} on {} test epochs",
                i + 1,
                plan.folds.len(),
                cls.accuracy,
                test_idx.len()
            );
            let report = FoldReport {
                fold: i,
                train_subjects: fold.train_subjects.clone(),
                test_subjects: fold.test_subjects.clone(),
                n_train: train_idx.len(),
                n_test: test_idx.len(),
                accuracy: cls.accuracy,
                macro_f1: cls.macro_f1,
                micro_f1: cls.micro_f1,
                macro_auc: auc.macro_auc,
                micro_auc: auc.micro_auc,
                auc_skipped_classes: auc.skipped,
                per_class: cls.per_class,
                confusion: cls.confusion,
                train_loss: history.epochs.iter().map(|e| e.train_loss).collect(),
                stats,
            };
            Ok((report, model))
        })
        .collect::<Result<_>>()?;
    let (folds, models): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(CvOutcome {
        report: MetricsReport::assemble(label, plan.scheme, store.meta.class_names.clone(), folds),
        models,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn exhaustive_auc(scores: &[f64], pos: &[bool]) -> Option<f64> {
        let (mut num, mut pairs) = (0u64, 0u64);
        for i in 0..scores.len() {
            for j in 0..scores.len() {
                if pos[i] && !pos[j] {
                    pairs += 1;
                    num += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        (pairs > 0).then(|| num as f64 / (2 * pairs) as f64)
    }

    #[test]
    fn kfold_sizes_and_coverage() {
        let subjects: Vec<u32> = (1..=103).collect();
        let plan = make_kfold(&subjects, 5, 7).unwrap();
        let mut sizes: Vec<usize> = plan.folds.iter().map(|f| f.test_subjects.len()).collect();
        sizes.sort();
        assert_eq!(sizes, [20, 20, 21, 21, 21]);
        let mut covered: Vec<u32> = plan.folds.iter().flat_map(|f| f.test_subjects.clone()).collect();
        covered.sort();
        assert_eq!(covered, subjects);
        for f in &plan.folds {
            assert!(f.train_subjects.iter().all(|s| !f.test_subjects.contains(s)));
            assert_eq!(f.train_subjects.len() + f.test_subjects.len(), 103);
        }
        let nine = make_kfold(&(1..=9).collect::<Vec<_>>(), 3, 1).unwrap();
        assert!(nine.folds.iter().all(|f| f.test_subjects.len() == 3));
        assert!(make_kfold(&[1, 2], 3, 0).is_err());
    }

    #[test]
    fn kfold_with_k_equal_subjects_is_loso() {
        let subjects = [4, 1, 9, 2, 2, 7];
        let k = make_kfold(&subjects, 5, 123).unwrap();
        let l = make_loso(&subjects).unwrap();
        assert_eq!(k.folds, l.folds);
    }

    #[test]
    fn loso_plans() {
        let nine = make_loso(&(1..=9).collect::<Vec<_>>()).unwrap();
        assert_eq!(nine.folds.len(), 9);
        let two = make_loso(&[5, 8]).unwrap();
        assert_eq!(two.folds[0].train_subjects, [8]);
        assert_eq!(two.folds[1].train_subjects, [5]);
        assert!(make_loso(&[3, 3]).is_err());
    }

    #[test]
    fn resolve_and_leakage() {
        let subjects = [1, 1, 2, 2, 3, 3];
        let runs = [4; 6];
        let plan = make_loso(&subjects).unwrap();
        for i in 0..3 {
            let (train, test) = plan.resolve(i, &subjects).unwrap();
            assert_eq!(test.len(), 2);
            assert_no_leakage(&train, &test, &subjects, &runs, true).unwrap();
        }
        assert!(assert_no_leakage(&[0, 2], &[1], &subjects, &runs, true).is_err());
        assert!(assert_no_leakage(&[0, 2], &[2], &subjects, &runs, false).is_err());
        let leaky = make_leaky_kfold(&subjects, 3, 0).unwrap();
        let (train, test) = leaky.resolve(0, &subjects).unwrap();
        assert_no_leakage(&train, &test, &subjects, &runs, false).unwrap();
        assert!(plan.resolve(0, &[2, 3]).is_err());
    }

    #[test]
    fn classification_examples() {
        let all = accuracy_f1(&[0, 1, 2], &[0, 1, 2], 3).unwrap();
        assert_eq!((all.accuracy, all.macro_f1), (1.0, 1.0));
        let m = accuracy_f1(&[1, 1, 1, 1], &[1, 1, 0, 0], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.per_class[0].f1, 0.0);
        assert!((m.per_class[1].f1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.confusion, vec![vec![0, 2], vec![0, 2]]);
        assert!(accuracy_f1(&[0], &[0, 1], 2).is_err());
    }

    #[test]
    fn random_predictions_are_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 30_000;
        let targets: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let acc = accuracy_f1(&preds, &targets, 3).unwrap().accuracy;
        let sigma = (1.0 / 3.0 * 2.0 / 3.0 / n as f64).sqrt();
        assert!((acc - 1.0 / 3.0).abs() < 3.0 * sigma);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(
            binary_auc(&[0.9, 0.8, 0.4, 0.3], &[true, false, true, false]),
            Some(0.75)
        );
        assert_eq!(binary_auc(&[0.1, 0.2, 0.9], &[false, false, true]), Some(1.0));
        assert_eq!(
            binary_auc(&[0.5; 6], &[true, false, true, false, false, true]),
            Some(0.5)
        );
        let r = auc_ovr(&[0.2, 0.8, 0.6, 0.4], &[1, 1], 2).unwrap();
        assert_eq!(r.skipped, [0, 1]);
        assert_eq!(r.macro_auc, None);
        assert!(auc_ovr(&[f64::NAN, 0.0], &[0], 2).is_err());
    }

    proptest! {
        #[test]
        fn rank_auc_equals_pair_counting(
            raw in prop::collection::vec((0u8..12, any::<bool>()), 2..200)
        ) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 7.0).collect();
            let pos: Vec<bool> = raw.iter().map(|(_, p)| *p).collect();
            prop_assert_eq!(binary_auc(&scores, &pos), exhaustive_auc(&scores, &pos));
        }

        #[test]
        fn metrics_are_pure_and_consistent(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..100)
        ) {
            let (p, t): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = accuracy_f1(&p, &t, 4).unwrap();
            prop_assert_eq!(&a, &accuracy_f1(&p, &t, 4).unwrap());
            prop_assert!((0.0..=1.0).contains(&a.accuracy));
            for c in 0..4 {
                prop_assert_eq!(a.confusion[c].iter().sum::<usize>(), t.iter().filter(|&&x| x == c).count());
            }
        }
    }

    #[test]
    fn report_accuracy_is_fold_mean() {
        let fold = |acc: f64| FoldReport {
            fold: 0,
            train_subjects: vec![],
            test_subjects: vec![],
            n_train: 1,
            n_test: 1,
            accuracy: acc,
            macro_f1: acc,
            micro_f1: acc,
            macro_auc: None,
            micro_auc: None,
            auc_skipped_classes: vec![],
            per_class: vec![],
            confusion: vec![vec![1, 0], vec![0, 1]],
            train_loss: vec![],
            stats: ChannelStats {
                mean: vec![],
                std: vec![],
                eps: 1e-8,
            },
        };
        let r = MetricsReport::assemble(
            "x",
            Scheme::Loso,
            vec!["a".into(), "b".into()],
            vec![fold(0.5), fold(1.0)],
        );
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.confusion, vec![vec![2, 0], vec![0, 2]]);
        assert!((r.accuracy_folds.std - (0.125f64).sqrt()).abs() < 1e-15);
    }
}
