//! Phase orchestration shared by the command line and the C interface.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{ExperimentConfig, Prepared};
use crate::curriculum::{sample_episodes, schedule, ScheduleReport};
use crate::error::{Error, Result};
use crate::eval::{meta_test, EvalReport};
use crate::meta::{MetaConfig, Mode, ModelState};
use crate::metrics::MetricsLog;
use crate::model::{Classifier, Extractor};
use crate::pretrain::{pretrain, PretrainOutcome};

const INIT_STREAM: u64 = 10;
const CLASSIFIER_STREAM: u64 = 11;
const MONITOR_STREAM: u64 = 12;
const TEST_STREAM: u64 = 13;

/// A generator for one purpose, derived from the experiment seed.
pub fn derived_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// Pretrains a fresh extractor on the train classes.
pub fn run_pretrain(cfg: &ExperimentConfig, p: &Prepared, metrics: &mut MetricsLog) -> Result<(ModelState, PretrainOutcome)> {
    let mut rng = derived_rng(cfg.seed, INIT_STREAM);
    let ex = Extractor::random(&cfg.arch, p.dataset.sample_shape(), &mut rng)?;
    let mut big = Classifier::init(ex.feature_dim(), p.train.len(), &cfg.arch.classifier_hidden, &mut rng)?;
    big.activation = cfg.arch.activation;
    let outcome = pretrain(&p.dataset, &p.train, ex, big, &cfg.pretrain, &mut rng, metrics)?;
    let state = fresh_state(cfg, outcome.extractor.clone(), cfg.meta.mode)?;
    Ok((state, outcome))
}

/// Identity modulation and a newly drawn classifier on a pretrained extractor.
pub fn fresh_state(cfg: &ExperimentConfig, extractor: Extractor, mode: Mode) -> Result<ModelState> {
    let mut state =
        ModelState::new(extractor, mode, cfg.meta.way, &cfg.arch.classifier_hidden, &mut derived_rng(cfg.seed, CLASSIFIER_STREAM))?;
    state.classifier.activation = cfg.arch.activation;
    Ok(state)
}

pub fn meta_config(cfg: &ExperimentConfig, mode: Mode) -> MetaConfig {
    MetaConfig { mode, ..cfg.meta.clone() }
}

/// Meta-trains `mode` on top of a pretrained extractor, monitoring episodes
/// drawn from the validation classes.
pub fn run_meta_train(
    cfg: &ExperimentConfig,
    p: &Prepared,
    extractor: Extractor,
    mode: Mode,
    metrics: &mut MetricsLog,
) -> Result<(ModelState, ScheduleReport)> {
    let meta = meta_config(cfg, mode);
    let mut state = fresh_state(cfg, extractor, mode)?;
    let monitor = if p.val.len() >= meta.way && cfg.schedule.val_every > 0 {
        sample_episodes(&p.dataset, &p.val, meta.shape(), cfg.schedule.val_tasks, &mut derived_rng(cfg.seed, MONITOR_STREAM))?
    } else {
        log::info!("no validation monitoring ({} validation classes, way {})", p.val.len(), meta.way);
        Vec::new()
    };
    let report = schedule(&p.dataset, &p.train, &monitor, &mut state, &meta, &cfg.ht, &cfg.schedule, cfg.seed, metrics)?;
    Ok((state, report))
}

/// Evaluates `state` on `eval.tasks` episodes from the test classes.
pub fn run_meta_test(cfg: &ExperimentConfig, p: &Prepared, state: &ModelState, metrics: &mut MetricsLog) -> Result<EvalReport> {
    let meta = meta_config(cfg, state.mode);
    let shape = cfg.eval.shape(&meta);
    let report = meta_test(&p.dataset, &p.test, state, cfg.eval.tasks, shape, &meta, &mut derived_rng(cfg.seed, TEST_STREAM))?;
    #[derive(Serialize)]
    struct Summary<'a> {
        mode: Mode,
        mean: f64,
        half_width: f64,
        tasks: usize,
        accuracies: &'a [f64],
    }
    metrics.record(
        "meta-test",
        0,
        Summary { mode: state.mode, mean: report.mean, half_width: report.half_width, tasks: report.tasks, accuracies: &report.accuracies },
    )?;
    Ok(report)
}

#[derive(Clone, Debug, Serialize)]
pub struct AblationRow {
    pub mode: Mode,
    pub meta_params: usize,
    pub mean: f64,
    pub half_width: f64,
    pub seconds: f64,
}

/// Meta-trains and meta-tests each mode on the same pretrained extractor.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    p: &Prepared,
    extractor: &Extractor,
    modes: &[Mode],
    metrics: &mut MetricsLog,
) -> Result<Vec<AblationRow>> {
    if modes.is_empty() {
        return Err(Error::Config("ablate.modes is empty".into()));
    }
    let mut rows = Vec::new();
    for &mode in modes {
        let t = Instant::now();
        log::info!("ablation: {}", mode);
        let (state, _) = run_meta_train(cfg, p, extractor.clone(), mode, metrics)?;
        let report = run_meta_test(cfg, p, &state, metrics)?;
        let row = AblationRow {
            mode,
            meta_params: state.meta_param_count(),
            mean: report.mean,
            half_width: report.half_width,
            seconds: t.elapsed().as_secs_f64(),
        };
        metrics.record("ablation", rows.len(), &row)?;
        rows.push(row);
    }
    Ok(rows)
}

/// Fixed-width comparison table.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = format!("{:<16} {:>12} {:>10} {:>10}\n", "mode", "meta_params", "accuracy", "ci95");
    for r in rows {
        s += &format!("{:<16} {:>12} {:>10.4} {:>10.4}\n", r.mode.name(), r.meta_params, r.mean, r.half_width);
    }
    s
}
