//! The dynamic pruning loop.
//!
//! Each epoch: snapshot scores, select the kept set, clip, drop and mask the
//! kept instances, pack them into duration-budgeted batches, train, write the
//! observed losses back into the score table and evaluate.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    generate_synthetic, load_manifest, resample_instance, z_normalize, AudioInstance, SyntheticSpec,
    DEFAULT_FRAME_LEN,
};
use crate::error::{Error, Result};
use crate::learner::{Learner, ToyFrameClassifier};
use crate::rng::{derive_seed, hash_id, stream_rng, Stream};
use crate::scoring::ScoreTable;
use crate::selection::{EpsilonSchedule, PolicyKind, Selection, SelectionConfig, Selector};
use crate::timewise::{mask_instance_in_place, DropSpec, MaskSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub train: DatasetSource,
    /// Held-out data. For a synthetic training set this may be omitted, in
    /// which case a quarter-sized test set is generated from a derived seed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<DatasetSource>,
    pub selection: SelectionConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drop: Option<DropSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskSpec>,
    pub epochs: usize,
    #[serde(default = "default_clip_cap")]
    pub clip_cap_s: f64,
    #[serde(default = "default_batch_budget")]
    pub batch_budget_s: f64,
    pub step_size: f64,
    /// Extra sample rates at which the test set is evaluated; the native
    /// rate is always evaluated.
    #[serde(default)]
    pub eval_sample_rates: Vec<u32>,
    #[serde(default = "default_buckets")]
    pub bucket_boundaries_s: Vec<f64>,
    #[serde(default = "default_frame_len")]
    pub frame_len: usize,
    /// Epochs before this one train on the full dataset.
    #[serde(default)]
    pub prune_start_epoch: usize,
    pub seed: u64,
}

fn default_clip_cap() -> f64 {
    16.0
}

fn default_batch_budget() -> f64 {
    64.0
}

fn default_buckets() -> Vec<f64> {
    vec![8.0, 16.0]
}

fn default_frame_len() -> usize {
    DEFAULT_FRAME_LEN
}

impl ExperimentConfig {
    /// Fills derived defaults (the Easy2hard schedule spans the run) and
    /// validates.
    pub fn resolved(mut self) -> Result<Self> {
        if self.selection.policy == PolicyKind::Easy2hard && self.selection.epsilon.is_none() {
            self.selection.epsilon = Some(EpsilonSchedule::new(self.epochs.max(1)));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Validation("epochs must be at least 1".into()));
        }
        if !(self.clip_cap_s > 0.0 && self.batch_budget_s > 0.0) {
            return Err(Error::Validation("clip cap and batch budget must be positive".into()));
        }
        if self.clip_cap_s > self.batch_budget_s {
            return Err(Error::Validation(format!(
                "clip_cap_s {} exceeds batch_budget_s {}",
                self.clip_cap_s, self.batch_budget_s
            )));
        }
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(Error::Validation(format!("bad step size {}", self.step_size)));
        }
        if self.frame_len == 0 {
            return Err(Error::Validation("frame_len must be positive".into()));
        }
        if self.eval_sample_rates.contains(&0) {
            return Err(Error::Validation("eval sample rates must be positive".into()));
        }
        check_boundaries(&self.bucket_boundaries_s)?;
        self.selection.validate()?;
        if let Some(d) = &self.drop {
            d.validate()?;
        }
        if let Some(m) = &self.mask {
            m.validate()?;
        }
        for src in std::iter::once(&self.train).chain(&self.test) {
            if let DatasetSource::Synthetic(spec) = src {
                spec.validate()?;
                if spec.frame_len != self.frame_len {
                    return Err(Error::Validation(format!(
                        "synthetic frame_len {} differs from experiment frame_len {}",
                        spec.frame_len, self.frame_len
                    )));
                }
            }
        }
        if self.test.is_none() && matches!(self.train, DatasetSource::Manifest(_)) {
            return Err(Error::Validation(
                "a test source is required when training from a manifest".into(),
            ));
        }
        Ok(())
    }

    /// Resolves relative manifest paths against `base`.
    pub fn rebase_paths(&mut self, base: &Path) {
        for src in std::iter::once(&mut self.train).chain(self.test.as_mut()) {
            if let DatasetSource::Manifest(p) = src {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// The full-data counterpart used as the speedup reference.
    pub fn baseline(&self) -> Self {
        let mut b = self.clone();
        b.selection = SelectionConfig::new(PolicyKind::Random, 1.0, self.selection.seed);
        b.drop = None;
        b.prune_start_epoch = 0;
        b
    }

    pub fn is_full_data(&self) -> bool {
        self.selection.kept_ratio >= 1.0
            && self.drop.is_none_or(|d| d.time_kept_ratio >= 1.0)
    }

    pub fn time_kept_ratio(&self) -> f64 {
        self.drop.map_or(1.0, |d| d.time_kept_ratio)
    }
}

fn check_boundaries(b: &[f64]) -> Result<()> {
    let ok = b.iter().all(|x| x.is_finite() && *x > 0.0) && b.windows(2).all(|w| w[0] < w[1]);
    if ok {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "bucket boundaries must be positive and strictly increasing, got {b:?}"
        )))
    }
}

/// Materialised, z-normalised data for one experiment.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub train: Vec<AudioInstance>,
    pub test: Vec<AudioInstance>,
    /// Test set at each extra evaluation rate.
    pub test_resampled: Vec<(u32, Vec<AudioInstance>)>,
    pub n_classes: usize,
}

fn load_source(src: &DatasetSource, frame_len: usize) -> Result<Vec<AudioInstance>> {
    let raw = match src {
        DatasetSource::Synthetic(spec) => generate_synthetic(spec)?,
        DatasetSource::Manifest(path) => {
            let base = path.parent().unwrap_or_else(|| Path::new("."));
            load_manifest(path)?.materialize(base, frame_len)?
        }
    };
    raw.into_iter()
        .map(|inst| {
            let normalized = z_normalize(inst.samples());
            inst.with_values(normalized)
        })
        .collect()
}

impl Dataset {
    pub fn load(config: &ExperimentConfig) -> Result<Self> {
        let train = load_source(&config.train, config.frame_len)?;
        let test_src = match (&config.test, &config.train) {
            (Some(t), _) => t.clone(),
            (None, DatasetSource::Synthetic(spec)) => {
                let mut t = spec.clone();
                t.seed = derive_seed(spec.seed, Stream::TestSet, &[]);
                t.n_instances = (spec.n_instances / 4).max(1);
                DatasetSource::Synthetic(t)
            }
            (None, DatasetSource::Manifest(_)) => {
                return Err(Error::Validation("missing test source".into()))
            }
        };
        let test = load_source(&test_src, config.frame_len)?;
        Self::from_parts(train, test, &config.eval_sample_rates)
    }

    pub fn from_parts(train: Vec<AudioInstance>, test: Vec<AudioInstance>, eval_rates: &[u32]) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Validation("training set is empty".into()));
        }
        if test.is_empty() {
            return Err(Error::Validation("test set is empty".into()));
        }
        let max_label = train
            .iter()
            .chain(&test)
            .flat_map(|i| i.labels().iter().copied())
            .max()
            .unwrap_or(0);
        let mut test_resampled = Vec::new();
        for &rate in eval_rates {
            let set = test
                .iter()
                .map(|inst| resample_instance(inst, rate))
                .collect::<Result<Vec<_>>>()?;
            test_resampled.push((rate, set));
        }
        Ok(Self {
            train,
            test,
            test_resampled,
            n_classes: max_label as usize + 1,
        })
    }

    /// Per-epoch sample count with every instance kept whole (after clipping).
    pub fn full_data_samples(&self, clip_cap_s: f64) -> u64 {
        self.train
            .iter()
            .map(|i| i.len().min(clip_len(i, clip_cap_s)) as u64)
            .sum()
    }
}

fn clip_len(instance: &AudioInstance, clip_cap_s: f64) -> usize {
    ((clip_cap_s * f64::from(instance.sample_rate())).round() as usize).max(1)
}

/// Truncates an instance to its leading `clip_cap_s` seconds.
pub fn clip_instance(instance: &AudioInstance, clip_cap_s: f64) -> Cow<'_, AudioInstance> {
    let cap = clip_len(instance, clip_cap_s);
    if instance.len() <= cap {
        Cow::Borrowed(instance)
    } else {
        Cow::Owned(instance.truncated(cap))
    }
}

/// Greedy packing in ascending-duration order: a batch is closed when the
/// next instance would push it past `budget_s`. Returns indices into
/// `durations`.
pub fn plan_batches(durations: &[f64], budget_s: f64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.sort_by(|&a, &b| durations[a].total_cmp(&durations[b]));
    let mut batches = Vec::new();
    let mut current = Vec::new();
    let mut total = 0.0;
    for i in order {
        let d = durations[i];
        if !current.is_empty() && total + d > budget_s {
            batches.push(std::mem::take(&mut current));
            total = 0.0;
        }
        current.push(i);
        total += d;
    }
    if !current.is_empty() {
        batches.push(current);
    }
    batches
}

/// Clips every instance to `clip_cap_s` and packs them under `batch_budget_s`.
pub fn build_batches(
    instances: &[AudioInstance],
    clip_cap_s: f64,
    batch_budget_s: f64,
) -> Vec<Vec<AudioInstance>> {
    let clipped: Vec<AudioInstance> = instances
        .iter()
        .map(|i| clip_instance(i, clip_cap_s).into_owned())
        .collect();
    let durations: Vec<f64> = clipped.iter().map(AudioInstance::duration_s).collect();
    plan_batches(&durations, batch_budget_s)
        .into_iter()
        .map(|b| b.into_iter().map(|i| clipped[i].clone()).collect())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketError {
    pub bucket: String,
    pub lo_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi_s: Option<f64>,
    pub instances: usize,
    pub error: f64,
}

fn bucket_name(index: usize, n_buckets: usize) -> String {
    match (n_buckets, index) {
        (3, 0) => "short".into(),
        (3, 1) => "middle".into(),
        (3, 2) => "long".into(),
        _ => format!("bucket{index}"),
    }
}

/// Frame error per duration bucket `[0, b1), [b1, b2), ..., [bk, inf)`.
/// Buckets with no instances are omitted.
pub fn bucketed_error<L: Learner + ?Sized>(
    model: &L,
    test: &[AudioInstance],
    boundaries_s: &[f64],
) -> Result<Vec<BucketError>> {
    check_boundaries(boundaries_s)?;
    let n_buckets = boundaries_s.len() + 1;
    let mut members: Vec<Vec<&AudioInstance>> = vec![Vec::new(); n_buckets];
    for inst in test {
        let d = inst.duration_s();
        let b = boundaries_s.iter().take_while(|&&edge| d >= edge).count();
        members[b].push(inst);
    }
    Ok(members
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(b, m)| BucketError {
            bucket: bucket_name(b, n_buckets),
            lo_s: if b == 0 { 0.0 } else { boundaries_s[b - 1] },
            hi_s: boundaries_s.get(b).copied(),
            instances: m.len(),
            error: model.frame_errors(&m).rate(),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateError {
    pub sample_rate: u32,
    pub error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    pub kept_count: usize,
    pub score_selected: usize,
    pub processed_sample_count: u64,
    pub batches: usize,
    pub mean_train_loss: f64,
    pub eval_error: Vec<RateError>,
    pub bucket_error: Vec<BucketError>,
    pub wall_clock_s: f64,
}

impl EpochReport {
    /// Error at the test set's native rate.
    pub fn native_error(&self) -> f64 {
        self.eval_error[0].error
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub policy: PolicyKind,
    pub kept_ratio: f64,
    pub time_kept_ratio: f64,
    pub epochs: usize,
    pub seed: u64,
    pub final_eval_error: Vec<RateError>,
    pub final_bucket_error: Vec<BucketError>,
    pub full_data_samples_per_epoch: u64,
    pub total_processed_samples: u64,
    pub baseline_processed_samples: u64,
    pub processed_ratio: f64,
    pub wall_clock_s: f64,
    pub wall_clock_per_epoch_s: f64,
    pub baseline_wall_clock_per_epoch_s: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub epochs: Vec<EpochReport>,
    pub summary: RunSummary,
    pub model: ToyFrameClassifier,
}

/// Receives per-epoch state, e.g. for trace dumps.
pub trait EpochObserver {
    fn on_epoch(&mut self, epoch: usize, selection: &Selection, scores: &ScoreTable) -> Result<()>;
}

impl EpochObserver for () {
    fn on_epoch(&mut self, _: usize, _: &Selection, _: &ScoreTable) -> Result<()> {
        Ok(())
    }
}

/// Clip, drop, then mask one kept instance, using per-instance rng streams.
/// Fresh sample buffers come from `pool`.
fn prepare<'a>(
    instance: &'a AudioInstance,
    config: &ExperimentConfig,
    epoch: usize,
    pool: &mut Vec<Vec<f32>>,
) -> Result<Cow<'a, AudioInstance>> {
    let mut item = clip_instance(instance, config.clip_cap_s);
    let key = [epoch as u64, hash_id(instance.id())];
    if let Some(drop) = &config.drop {
        if drop.time_kept_ratio < 1.0 {
            let mut rng = stream_rng(config.seed, Stream::Drop, &key);
            let buf = pool.pop().unwrap_or_default();
            item = Cow::Owned(drop.apply_into(&item, &mut rng, buf)?);
        }
    }
    if let Some(mask) = &config.mask {
        let mut rng = stream_rng(config.seed, Stream::Mask, &key);
        let mut owned = match item {
            Cow::Owned(inst) => inst,
            Cow::Borrowed(inst) => inst.clone_into(pool.pop().unwrap_or_default()),
        };
        mask_instance_in_place(&mut owned, mask, &mut rng);
        item = Cow::Owned(owned);
    }
    Ok(item)
}

fn evaluate_all(model: &ToyFrameClassifier, dataset: &Dataset, config: &ExperimentConfig) -> Result<(Vec<RateError>, Vec<BucketError>)> {
    let refs: Vec<&AudioInstance> = dataset.test.iter().collect();
    let mut eval = vec![RateError {
        sample_rate: dataset.test[0].sample_rate(),
        error: model.evaluate(&refs),
    }];
    for (rate, set) in &dataset.test_resampled {
        let refs: Vec<&AudioInstance> = set.iter().collect();
        eval.push(RateError {
            sample_rate: *rate,
            error: model.evaluate(&refs),
        });
    }
    let buckets = bucketed_error(model, &dataset.test, &config.bucket_boundaries_s)?;
    Ok((eval, buckets))
}

/// Runs the epoch loop only (no baseline, no summary).
pub fn train_epochs(
    config: &ExperimentConfig,
    dataset: &Dataset,
    observer: &mut dyn EpochObserver,
) -> Result<(Vec<EpochReport>, ToyFrameClassifier)> {
    config.validate()?;
    let by_id: HashMap<&str, &AudioInstance> =
        dataset.train.iter().map(|i| (i.id(), i)).collect();
    if by_id.len() != dataset.train.len() {
        return Err(Error::Validation("duplicate ids in training set".into()));
    }
    let mut scores = ScoreTable::init(dataset.train.iter().map(|i| i.id().to_string()), 0.0)?;
    let mut selector = Selector::new(config.selection.clone())?;
    let mut model = ToyFrameClassifier::new(dataset.n_classes, config.seed);
    let mut reports = Vec::with_capacity(config.epochs);
    let mut pool: Vec<Vec<f32>> = Vec::new();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let snapshot = scores.snapshot();
        let mut sel_rng = stream_rng(config.selection.seed, Stream::Selection, &[epoch as u64]);
        let mut selection = selector.select(&snapshot, epoch, config.epochs, &mut sel_rng)?;
        if epoch < config.prune_start_epoch {
            selection.ids = snapshot.iter().map(|(id, _)| id.clone()).collect();
        }

        let prepared = selection
            .ids
            .iter()
            .map(|id| prepare(by_id[id.as_str()], config, epoch, &mut pool))
            .collect::<Result<Vec<_>>>()?;
        let processed: u64 = prepared.iter().map(|p| p.len() as u64).sum();
        let durations: Vec<f64> = prepared.iter().map(|p| p.duration_s()).collect();
        let mut batches = plan_batches(&durations, config.batch_budget_s);
        batches.shuffle(&mut stream_rng(config.seed, Stream::Selection, &[epoch as u64, u64::MAX]));

        let mut losses = BTreeMap::new();
        for batch in &batches {
            let refs: Vec<&AudioInstance> = batch.iter().map(|&i| prepared[i].as_ref()).collect();
            losses.append(&mut model.train_batch(&refs, config.step_size)?);
        }
        scores.update(&losses, epoch)?;
        pool.extend(prepared.into_iter().filter_map(|p| match p {
            Cow::Owned(inst) => Some(inst.into_samples()),
            Cow::Borrowed(_) => None,
        }));
        let wall_clock_s = started.elapsed().as_secs_f64().max(1e-9);
        observer.on_epoch(epoch, &selection, &scores)?;

        let (eval_error, bucket_error) = evaluate_all(&model, dataset, config)?;
        let mean_train_loss = losses.values().sum::<f64>() / losses.len() as f64;
        reports.push(EpochReport {
            epoch,
            epsilon: selection.epsilon,
            kept_count: selection.ids.len(),
            score_selected: selection.score_selected,
            processed_sample_count: processed,
            batches: batches.len(),
            mean_train_loss,
            eval_error,
            bucket_error,
            wall_clock_s,
        });
    }
    Ok((reports, model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub processed_samples: u64,
    pub wall_clock_per_epoch_s: f64,
}

impl BaselineStats {
    fn from_reports(reports: &[EpochReport]) -> Self {
        Self {
            processed_samples: reports.iter().map(|r| r.processed_sample_count).sum(),
            wall_clock_per_epoch_s: reports.iter().map(|r| r.wall_clock_s).sum::<f64>()
                / reports.len() as f64,
        }
    }
}

/// Full-data baseline runs, keyed by their serialised config.
#[derive(Debug, Default)]
pub struct BaselineCache {
    entries: Mutex<HashMap<String, BaselineStats>>,
}

impl BaselineCache {
    pub fn new() -> Self {
        Self::default()
    }

    fn key(config: &ExperimentConfig) -> Result<String> {
        Ok(serde_json::to_string(&config.baseline())?)
    }

    pub fn get(&self, config: &ExperimentConfig) -> Result<Option<BaselineStats>> {
        let key = Self::key(config)?;
        Ok(self.entries.lock().expect("cache lock").get(&key).copied())
    }

    pub fn insert(&self, config: &ExperimentConfig, stats: BaselineStats) -> Result<()> {
        let key = Self::key(config)?;
        self.entries.lock().expect("cache lock").insert(key, stats);
        Ok(())
    }

    /// Cached stats, running the baseline on a miss.
    pub fn get_or_run(&self, config: &ExperimentConfig, dataset: &Dataset) -> Result<BaselineStats> {
        if let Some(stats) = self.get(config)? {
            return Ok(stats);
        }
        let (reports, _) = train_epochs(&config.baseline().resolved()?, dataset, &mut ())?;
        let stats = BaselineStats::from_reports(&reports);
        self.insert(config, stats)?;
        Ok(stats)
    }
}

pub fn summarize(
    config: &ExperimentConfig,
    dataset: &Dataset,
    reports: &[EpochReport],
    baseline: BaselineStats,
) -> RunSummary {
    let own = BaselineStats::from_reports(reports);
    let last = reports.last().expect("at least one epoch");
    RunSummary {
        policy: config.selection.policy,
        kept_ratio: config.selection.kept_ratio,
        time_kept_ratio: config.time_kept_ratio(),
        epochs: reports.len(),
        seed: config.seed,
        final_eval_error: last.eval_error.clone(),
        final_bucket_error: last.bucket_error.clone(),
        full_data_samples_per_epoch: dataset.full_data_samples(config.clip_cap_s),
        total_processed_samples: own.processed_samples,
        baseline_processed_samples: baseline.processed_samples,
        processed_ratio: own.processed_samples as f64 / baseline.processed_samples as f64,
        wall_clock_s: reports.iter().map(|r| r.wall_clock_s).sum(),
        wall_clock_per_epoch_s: own.wall_clock_per_epoch_s,
        baseline_wall_clock_per_epoch_s: baseline.wall_clock_per_epoch_s,
        speedup: baseline.wall_clock_per_epoch_s / own.wall_clock_per_epoch_s,
    }
}

/// Runs an experiment on a loaded dataset, taking the speedup reference from
/// `cache` (or from the run itself when it already uses all data).
pub fn run_on(
    config: &ExperimentConfig,
    dataset: &Dataset,
    cache: &BaselineCache,
    observer: &mut dyn EpochObserver,
) -> Result<ExperimentResult> {
    let config = config.clone().resolved()?;
    let (epochs, model) = train_epochs(&config, dataset, observer)?;
    let baseline = if config.is_full_data() {
        let stats = BaselineStats::from_reports(&epochs);
        if cache.get(&config)?.is_none() {
            cache.insert(&config, stats)?;
        }
        stats
    } else {
        cache.get_or_run(&config, dataset)?
    };
    let summary = summarize(&config, dataset, &epochs, baseline);
    Ok(ExperimentResult {
        epochs,
        summary,
        model,
    })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let config = config.clone().resolved()?;
    let dataset = Dataset::load(&config)?;
    run_on(&config, &dataset, &BaselineCache::new(), &mut ())
}

/// The epoch-0 kept set, without training.
pub fn select_epoch_zero(config: &ExperimentConfig, dataset: &Dataset) -> Result<Selection> {
    let scores = ScoreTable::init(dataset.train.iter().map(|i| i.id().to_string()), 0.0)?;
    let mut selector = Selector::new(config.selection.clone())?;
    let mut rng = stream_rng(config.selection.seed, Stream::Selection, &[0]);
    selector.select(&scores.snapshot(), 0, config.epochs, &mut rng)
}
