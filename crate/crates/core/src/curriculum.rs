//! Hard-task curriculum: harvest each task's weakest class during random
//! meta-batches, then train on tasks drawn from those classes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{sample_episode, sample_hard_episode, ClassSource, Dataset, Episode, EpisodeShape, FailureRecord, HardMethod};
use crate::error::{Error, Result};
use crate::eval::evaluate_episodes;
use crate::meta::{MetaConfig, MetaTrainer, ModelState, TaskOutcome};
use crate::metrics::MetricsLog;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HtConfig {
    pub enabled: bool,
    /// Random meta-batches between hard phases.
    pub window: usize,
    pub hard_tasks: usize,
    pub method: HardMethod,
}

impl Default for HtConfig {
    fn default() -> Self {
        Self { enabled: true, window: 10, hard_tasks: 10, method: HardMethod::Resample }
    }
}

impl HtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 {
            return Err(Error::Config("ht.window must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    /// Tasks drawn for random meta-batches; hard tasks come on top.
    pub total_tasks: usize,
    /// Evaluate the monitoring episodes every this many random tasks; 0 turns it off.
    pub val_every: usize,
    /// Monitoring episodes the CLI draws from the validation partition.
    pub val_tasks: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { total_tasks: 500, val_every: 50, val_tasks: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PoolEntry {
    #[serde(flatten)]
    pub record: FailureRecord,
    pub task: usize,
}

/// Multiset of failure classes, bounded by one harvest window.
#[derive(Clone, Debug, PartialEq)]
pub struct FailurePool {
    entries: Vec<PoolEntry>,
    capacity: usize,
}

impl FailurePool {
    pub fn new(capacity: usize) -> Self {
        Self { entries: Vec::with_capacity(capacity), capacity }
    }

    pub fn harvest(&mut self, outcome: &TaskOutcome, task: usize) -> Result<()> {
        if self.entries.len() >= self.capacity {
            return Err(Error::invalid(format!("failure pool is full ({} entries)", self.capacity)));
        }
        self.entries.push(PoolEntry { record: outcome.hardest.clone(), task });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> &[PoolEntry] {
        &self.entries
    }

    pub fn records(&self) -> Vec<FailureRecord> {
        self.entries.iter().map(|e| e.record.clone()).collect()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HardTaskReport {
    pub classes: Vec<usize>,
    pub provenance: Vec<ClassSource>,
    pub fallbacks: Vec<usize>,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseReport {
    /// Random tasks consumed when the phase ran.
    pub iteration: usize,
    pub pool_size: usize,
    pub pool_classes: Vec<usize>,
    pub tasks: Vec<HardTaskReport>,
    pub skipped: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum TraceKind {
    Batch,
    Hard,
    Validation,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TracePoint {
    /// Random tasks consumed so far.
    pub iteration: usize,
    pub meta_steps: usize,
    pub kind: TraceKind,
    pub loss: f64,
    pub accuracy: f64,
}

impl TracePoint {
    /// Exact equality, including float bit patterns.
    pub fn bit_eq(&self, other: &TracePoint) -> bool {
        self.iteration == other.iteration
            && self.meta_steps == other.meta_steps
            && self.kind == other.kind
            && self.loss.to_bits() == other.loss.to_bits()
            && self.accuracy.to_bits() == other.accuracy.to_bits()
    }
}

#[derive(Clone, Debug, Default)]
pub struct ScheduleReport {
    pub trace: Vec<TracePoint>,
    pub phases: Vec<PhaseReport>,
    pub trainer: MetaTrainer,
}

impl ScheduleReport {
    pub fn validation(&self) -> impl Iterator<Item = &TracePoint> {
        self.trace.iter().filter(|p| p.kind == TraceKind::Validation)
    }
}

const HARD_STREAM: u64 = 1;

/// `n` episodes from `classes`.
pub fn sample_episodes<R: Rng + ?Sized>(ds: &Dataset, classes: &[usize], shape: EpisodeShape, n: usize, rng: &mut R) -> Result<Vec<Episode>> {
    (0..n).map(|_| sample_episode(ds, classes, shape, rng)).collect()
}

fn mean_of(outs: &[TaskOutcome], f: impl Fn(&TaskOutcome) -> f64) -> f64 {
    outs.iter().map(f).sum::<f64>() / outs.len().max(1) as f64
}

/// Trains on `ht.hard_tasks` episodes drawn from the pool, then empties it.
/// Failures of these tasks are not harvested.
#[allow(clippy::too_many_arguments)]
pub fn hard_phase(
    ds: &Dataset,
    fill_classes: &[usize],
    pool: &mut FailurePool,
    state: &mut ModelState,
    trainer: &mut MetaTrainer,
    meta: &MetaConfig,
    ht: &HtConfig,
    rng: &mut ChaCha8Rng,
    iteration: usize,
) -> Result<PhaseReport> {
    let mut report = PhaseReport {
        iteration,
        pool_size: pool.len(),
        pool_classes: pool.entries().iter().map(|e| e.record.class).collect(),
        tasks: Vec::new(),
        skipped: false,
    };
    if pool.is_empty() {
        log::info!("failure pool empty at iteration {}, skipping hard phase", iteration);
        report.skipped = true;
        return Ok(report);
    }
    let records = pool.records();
    let mut remaining = ht.hard_tasks;
    while remaining > 0 {
        let b = remaining.min(meta.meta_batch);
        let hard = (0..b)
            .map(|_| sample_hard_episode(ds, &records, fill_classes, meta.shape(), ht.method, rng))
            .collect::<Result<Vec<_>>>()?;
        let episodes: Vec<Episode> = hard.iter().map(|h| h.episode.clone()).collect();
        let outs = trainer.train_batch(ds, &episodes, state, meta)?;
        for (h, o) in hard.into_iter().zip(&outs) {
            report.tasks.push(HardTaskReport {
                classes: h.episode.classes,
                provenance: h.provenance,
                fallbacks: h.fallbacks,
                loss: o.loss,
                accuracy: o.accuracy,
            });
        }
        remaining -= b;
    }
    pool.clear();
    Ok(report)
}

/// Interleaves random meta-batches from `train_classes` with hard phases
/// until `total_tasks` random tasks are spent. With `ht.enabled = false` this
/// is the plain meta-batch loop. `monitor` episodes are evaluated at the
/// start and every `val_every` random tasks.
#[allow(clippy::too_many_arguments)]
pub fn schedule(
    ds: &Dataset,
    train_classes: &[usize],
    monitor: &[Episode],
    state: &mut ModelState,
    meta: &MetaConfig,
    ht: &HtConfig,
    sched: &ScheduleConfig,
    seed: u64,
    metrics: &mut MetricsLog,
) -> Result<ScheduleReport> {
    meta.validate()?;
    ht.validate()?;
    let mut report = ScheduleReport::default();
    if !state.mode.meta_trains() {
        log::info!("mode {} has no meta-training phase", state.mode);
        return Ok(report);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hard_rng = ChaCha8Rng::seed_from_u64(seed);
    hard_rng.set_stream(HARD_STREAM);
    let validate = |state: &ModelState, it: usize, steps: usize, report: &mut ScheduleReport, metrics: &mut MetricsLog| -> Result<()> {
        if monitor.is_empty() || sched.val_every == 0 {
            return Ok(());
        }
        let accs = evaluate_episodes(ds, monitor, state, meta)?;
        let p = TracePoint { iteration: it, meta_steps: steps, kind: TraceKind::Validation, loss: f64::NAN, accuracy: accs.iter().sum::<f64>() / accs.len() as f64 };
        metrics.record("validation", it, &p)?;
        report.trace.push(p);
        Ok(())
    };

    validate(state, 0, 0, &mut report, metrics)?;
    let mut pool = FailurePool::new(ht.window * meta.meta_batch);
    let mut done = 0;
    let mut batches = 0;
    while done < sched.total_tasks {
        let b = meta.meta_batch.min(sched.total_tasks - done);
        let episodes = (0..b).map(|_| sample_episode(ds, train_classes, meta.shape(), &mut rng)).collect::<Result<Vec<_>>>()?;
        let outs = report.trainer.train_batch(ds, &episodes, state, meta)?;
        if ht.enabled {
            for (k, o) in outs.iter().enumerate() {
                pool.harvest(o, done + k)?;
            }
        }
        let before = done;
        done += b;
        batches += 1;
        let p = TracePoint {
            iteration: done,
            meta_steps: report.trainer.steps,
            kind: TraceKind::Batch,
            loss: mean_of(&outs, |o| o.loss),
            accuracy: mean_of(&outs, |o| o.accuracy),
        };
        metrics.record("meta-train", done, &p)?;
        report.trace.push(p);

        if ht.enabled && batches % ht.window == 0 {
            let phase = hard_phase(ds, train_classes, &mut pool, state, &mut report.trainer, meta, ht, &mut hard_rng, done)?;
            if !phase.tasks.is_empty() {
                let p = TracePoint {
                    iteration: done,
                    meta_steps: report.trainer.steps,
                    kind: TraceKind::Hard,
                    loss: phase.tasks.iter().map(|t| t.loss).sum::<f64>() / phase.tasks.len() as f64,
                    accuracy: phase.tasks.iter().map(|t| t.accuracy).sum::<f64>() / phase.tasks.len() as f64,
                };
                metrics.record("hard-phase", done, &phase)?;
                report.trace.push(p);
            }
            report.phases.push(phase);
        }
        if sched.val_every > 0 && done / sched.val_every > before / sched.val_every {
            validate(state, done, report.trainer.steps, &mut report, metrics)?;
        }
    }
    Ok(report)
}
