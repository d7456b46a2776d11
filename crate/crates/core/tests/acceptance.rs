//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use metashift::autodiff::{finite_difference, max_relative_error};
use metashift::checkpoint::state_hash;
use metashift::curriculum::{sample_episodes, schedule, HtConfig, ScheduleConfig, TracePoint};
use metashift::data::*;
use metashift::eval::{confidence_interval, evaluate_episodes};
use metashift::meta::{base_learn, evaluate_task, test_loss_at, MetaConfig, MetaTrainer, Mode, ModelState};
use metashift::metrics::MetricsLog;
use metashift::model::{count_params, ss_forward, ss_statistics, Activation, ArchConfig, Classifier, Extractor, Layer, LayerKind, SsParams};
use metashift::pretrain::{pretrain, PretrainConfig};
use metashift::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(limit: Duration, start: Instant, detail: String) -> Outcome {
    let t = start.elapsed();
    check(t < limit, format!("{detail}; {:.1}s of {}s", t.as_secs_f64(), limit.as_secs()))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let mut worst = (0.0f64, 0.0f64);
    for steps in 1..=3 {
        let ds = vectors(8, 10, 4, 0.5, steps as u64);
        let classes: Vec<usize> = (0..8).collect();
        let ep = episode(&ds, &classes, EpisodeShape { way: 5, k_train: 1, k_test: 3 }, 10 + steps as u64);
        let st = state(&perceptron(4, 6, 20 + steps as u64), Mode::Ss, 5, 30);

        let cfg = tiny_meta(Mode::Ss, steps);
        let analytic = evaluate_task(&ds, &ep, &st, &cfg, true).map_err(|e| e.to_string())?.grads.unwrap();
        let numeric = finite_difference(
            |p| {
                let mut s = st.clone();
                s.set_outer_tensors(p)?;
                Ok(evaluate_task(&ds, &ep, &s, &cfg, false)?.outcome.loss)
            },
            &st.outer_tensors(),
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        worst.0 = worst.0.max(max_relative_error(&analytic, &numeric, 1e-6));

        let cfg = MetaConfig { first_order: true, ..cfg };
        let analytic = evaluate_task(&ds, &ep, &st, &cfg, true).map_err(|e| e.to_string())?.grads.unwrap();
        let adapted = base_learn(&ds, &ep, &st, &cfg).map_err(|e| e.to_string())?.theta;
        let mut numeric = finite_difference(
            |p| {
                let mut s = st.clone();
                s.ss.set_tensors(p)?;
                test_loss_at(&ds, &ep, &s, &adapted)
            },
            &st.ss.tensors(),
            1e-5,
        )
        .map_err(|e| e.to_string())?;
        numeric.extend(
            finite_difference(|p| test_loss_at(&ds, &ep, &st, &adapted.from_tensors(p.to_vec())?), &adapted.tensors(), 1e-5)
                .map_err(|e| e.to_string())?,
        );
        worst.1 = worst.1.max(max_relative_error(&analytic, &numeric, 1e-6));
    }
    let detail = format!("max relative error second-order {:.2e}, first-order {:.2e} (limit 1e-3)", worst.0, worst.1);
    if worst.0 >= 1e-3 || worst.1 >= 1e-3 {
        return Err(detail);
    }
    within(Duration::from_secs(30), start, detail)
}

fn identity_and_frozenness() -> Outcome {
    let start = Instant::now();
    let ex = perceptron(6, 16, 1);
    let x = Tensor::new(vec![4, 6], (0..24).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
    let identical = ss_forward(&x, &ex, &SsParams::identity(&ex)).unwrap().bit_eq(&ex.forward(&x).unwrap());

    let ds = vectors(12, 20, 6, 0.3, 2);
    let hash = ex.weight_hash();
    let mut st = state(&ex, Mode::Ss, 5, 3);
    let cfg = MetaConfig { k_test: 5, inner_epochs: 5, ..Default::default() };
    let train: Vec<usize> = (0..12).collect();
    let r = schedule(&ds, &train, &[], &mut st, &cfg, &HtConfig::default(), &ScheduleConfig::default(), 4, &mut MetricsLog::disabled())
        .map_err(|e| e.to_string())?;
    let unchanged = st.extractor.weight_hash() == hash;
    let detail = format!("identity forward bit-identical: {identical}; extractor hash unchanged after {} tasks: {unchanged}", r.trainer.tasks);
    if !(identical && unchanged) {
        return Err(detail);
    }
    within(Duration::from_secs(10), start, detail)
}

fn parameter_counts() -> Outcome {
    let conv = |f: usize, c: usize, k: usize| {
        let layer = Layer { kind: LayerKind::Conv { padding: 0, pool: false }, weight: Tensor::zeros(&[f, c, k, k]), bias: Tensor::zeros(&[f]) };
        count_params(&Extractor::new(vec![layer], Activation::Relu).unwrap()).layers[0]
    };
    let mut general = true;
    for k in 1..=7 {
        for c in 1..=8 {
            let n = conv(4, c, k);
            general &= n.ss * (k * k * c + 1) == 2 * n.ft;
        }
    }
    let multi: Vec<_> = (2..=8).map(|c| conv(16, c, 3)).collect();
    let below = multi.iter().all(|n| n.ss * 9 < 2 * n.ft);
    let single = conv(64, 1, 7);
    let exact = single.ss * 50 == 2 * single.ft;
    check(
        general && below && exact,
        format!("2/(k·k·c+1) for k≤7, c≤8: {general}; 3×3 multi-channel below 2/9: {below}; 7×7 single-channel = 2/50: {exact} ({:?})", single.ratio()),
    )
}

struct SeedRun {
    ss: f64,
    ft: f64,
    theta: f64,
    ht: f64,
    random_trace: Vec<TracePoint>,
    ht_trace: Vec<TracePoint>,
    plain_identical: bool,
}

fn benchmark_seed(seed: u64) -> metashift::Result<SeedRun> {
    let synth = SynthConfig { classes: 20, per_class: 40, dims: 16, noise: 0.6, ..Default::default() };
    let ds = synth_generate(&synth, seed)?;
    let split = SplitSpec::by_class_counts(10, 5, 5);
    let train = split.classes(&ds, Partition::Train);
    let test = split.classes(&ds, Partition::Test);
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let ex = Extractor::random(&ArchConfig::default(), &[16], &mut r)?;
    let cls = Classifier::init(ex.feature_dim(), train.len(), &[], &mut r)?;
    let frozen = pretrain(&ds, &train, ex, cls, &PretrainConfig::default(), &mut r, &mut MetricsLog::disabled())?.extractor;

    let meta = MetaConfig::default();
    let episodes = sample_episodes(&ds, &test, meta.shape(), 200, &mut ChaCha8Rng::seed_from_u64(seed + 999))?;
    let sched = ScheduleConfig { total_tasks: 500, val_every: 50, val_tasks: 200 };
    let run = |mode: Mode, ht: bool, monitor: &[Episode]| -> metashift::Result<(f64, Vec<TracePoint>, ModelState)> {
        let mut st = ModelState::new(frozen.clone(), mode, meta.way, &[], &mut ChaCha8Rng::seed_from_u64(seed + 100))?;
        let htc = HtConfig { enabled: ht, ..Default::default() };
        let cfg = MetaConfig { mode, ..meta.clone() };
        let rep = schedule(&ds, &train, monitor, &mut st, &cfg, &htc, &sched, seed, &mut MetricsLog::disabled())?;
        let acc = evaluate_episodes(&ds, &episodes, &st, &cfg)?;
        let trace = rep.validation().cloned().collect();
        Ok((acc.iter().sum::<f64>() / acc.len() as f64, trace, st))
    };
    let (ss, random_trace, random_state) = run(Mode::Ss, false, &episodes)?;
    let (ht, ht_trace, _) = run(Mode::Ss, true, &episodes)?;
    let (ft, _, _) = run(Mode::FtFull, false, &[])?;
    let (theta, _, _) = run(Mode::UpdateTheta, false, &[])?;

    let mut plain = ModelState::new(frozen.clone(), Mode::Ss, meta.way, &[], &mut ChaCha8Rng::seed_from_u64(seed + 100))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trainer = MetaTrainer::default();
    let mut plain_trace = vec![mean_acc(&ds, &episodes, &plain, &meta)?];
    for b in 0..sched.total_tasks / meta.meta_batch {
        let batch = (0..meta.meta_batch).map(|_| sample_episode(&ds, &train, meta.shape(), &mut rng)).collect::<metashift::Result<Vec<_>>>()?;
        trainer.train_batch(&ds, &batch, &mut plain, &meta)?;
        if ((b + 1) * meta.meta_batch) % sched.val_every == 0 {
            plain_trace.push(mean_acc(&ds, &episodes, &plain, &meta)?);
        }
    }
    let plain_identical = state_hash(&plain)? == state_hash(&random_state)?
        && plain_trace.len() == random_trace.len()
        && plain_trace.iter().zip(&random_trace).all(|(a, p)| a.to_bits() == p.accuracy.to_bits());
    Ok(SeedRun { ss, ft, theta, ht, random_trace, ht_trace, plain_identical })
}

fn mean_acc(ds: &Dataset, episodes: &[Episode], st: &ModelState, meta: &MetaConfig) -> metashift::Result<f64> {
    let a = evaluate_episodes(ds, episodes, st, meta)?;
    Ok(a.iter().sum::<f64>() / a.len() as f64)
}

fn ablation(runs: &[SeedRun], elapsed: Duration) -> Outcome {
    let ordered = runs.iter().filter(|r| r.ss >= r.ft && r.ft >= r.theta).count();
    let n = runs.len() as f64;
    let mean = |f: fn(&SeedRun) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let (ss, ft, theta) = (mean(|r| r.ss), mean(|r| r.ft), mean(|r| r.theta));
    let gap = ss - theta;
    let detail = format!(
        "ordered in {ordered}/5 seeds; means ss {ss:.4}, ft-full {ft:.4}, update-theta {theta:.4}; ss − update-theta {:.2} points; {:.1}s",
        gap * 100.0,
        elapsed.as_secs_f64()
    );
    check(ordered >= 4 && gap >= 0.03 && elapsed < Duration::from_secs(600), detail)
}

fn curriculum(runs: &[SeedRun], elapsed: Duration) -> Outcome {
    let mut wins = 0;
    let mut deltas = Vec::new();
    for r in runs {
        let last = r.random_trace.last().unwrap();
        let reach = r.ht_trace.iter().find(|p| p.accuracy >= last.accuracy).map(|p| p.iteration);
        if r.ht >= r.ss && reach.is_some_and(|it| it <= last.iteration) {
            wins += 1;
        }
        deltas.push(format!("{:+.4}", r.ht - r.ss));
    }
    let identical = runs.iter().all(|r| r.plain_identical);
    let detail = format!(
        "ht ≥ random and reaches its final accuracy no later in {wins}/5 seeds (deltas {}); disabled ht bit-identical to plain loop: {identical}; {:.1}s",
        deltas.join(" "),
        elapsed.as_secs_f64()
    );
    check(wins >= 4 && identical && elapsed < Duration::from_secs(600), detail)
}

fn pretraining() -> Outcome {
    let start = Instant::now();
    let ds = vectors(8, 40, 8, 0.1, 3);
    let mut r = rng(4);
    let ex = Extractor::random(&ArchConfig::default(), &[8], &mut r).unwrap();
    let cls = Classifier::init(ex.feature_dim(), 8, &[], &mut r).unwrap();
    let cfg = PretrainConfig { iterations: 400, ..Default::default() };
    let out = pretrain(&ds, &(0..8).collect::<Vec<_>>(), ex, cls, &cfg, &mut r, &mut MetricsLog::disabled()).map_err(|e| e.to_string())?;
    let detail = format!("train accuracy {:.4} after {} iterations (need ≥ 0.95)", out.train_accuracy, out.curve.len());
    if out.train_accuracy < 0.95 {
        return Err(detail);
    }
    within(Duration::from_secs(60), start, detail)
}

fn episodes() -> Outcome {
    let start = Instant::now();
    let ds = synth_generate(&SynthConfig { classes: 24, per_class: 20, dims: 2, classes_per_superclass: 3, ..Default::default() }, 5).unwrap();
    let split = SplitSpec { mode: SplitMode::BySuperclass, train: vec![0, 1, 2, 3], val: vec![4, 5], test: vec![6, 7] };
    split.validate(&ds).map_err(|e| e.to_string())?;
    let train = split.classes(&ds, Partition::Train);
    let test = split.classes(&ds, Partition::Test);
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 15 };
    let mut r = rng(6);
    let mut bad = 0;
    for i in 0..10_000 {
        let ep = sample_episode(&ds, if i % 2 == 0 { &train } else { &test }, shape, &mut r).map_err(|e| e.to_string())?;
        let tr: BTreeSet<usize> = ep.train.iter().map(|s| s.index).collect();
        let te: BTreeSet<usize> = ep.test.iter().map(|s| s.index).collect();
        let distinct: BTreeSet<usize> = ep.classes.iter().copied().collect();
        let ok = ep.validate().is_ok()
            && tr.is_disjoint(&te)
            && tr.len() == 5
            && te.len() == 75
            && distinct.len() == 5
            && ep.train.iter().chain(&ep.test).all(|s| ds.sample(s.index).class == ep.classes[s.label]);
        bad += !ok as usize;
    }
    let a: BTreeSet<_> = train.iter().map(|&c| ds.superclass(c)).collect();
    let b: BTreeSet<_> = test.iter().map(|&c| ds.superclass(c)).collect();
    let overlap = a.intersection(&b).count();
    let detail = format!("{bad} of 10000 episodes violate disjointness or counts; super-class overlap between train and test: {overlap}");
    if bad > 0 || overlap > 0 {
        return Err(detail);
    }
    within(Duration::from_secs(60), start, detail)
}

fn statistics() -> Outcome {
    let examples: [(&[f64], f64, f64); 3] =
        [(&[0.5, 0.5, 0.5], 0.5, 0.0), (&[0.0, 1.0], 0.5, 0.98), (&[0.2, 0.4, 0.6, 0.8], 0.5, 0.2530349119522179)];
    let mut ci_ok = true;
    for (v, m, h) in examples {
        let (gm, gh) = confidence_interval(v).map_err(|e| e.to_string())?;
        ci_ok &= (gm - m).abs() <= 1e-9 && (gh - h).abs() <= 1e-9;
    }
    let ex = perceptron(4, 8, 7);
    let s = ss_statistics(&SsParams::identity(&ex));
    let init_ok = (s.scale.mean, s.shift.mean) == (1.0, 0.0) && (s.scale.variance, s.shift.variance) == (0.0, 0.0);
    check(
        ci_ok && init_ok,
        format!(
            "interval examples within 1e-9: {ci_ok}; initial mean ({}, {}), variance ({}, {})",
            s.scale.mean, s.shift.mean, s.scale.variance, s.shift.variance
        ),
    )
}

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned());
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    let mut results: Vec<(usize, &str, Outcome)> = vec![
        (1, "gradient correctness", guarded(gradients)),
        (2, "identity and frozenness", guarded(identity_and_frozenness)),
        (3, "parameter counts", guarded(parameter_counts)),
    ];

    let start = Instant::now();
    let runs = guarded(|| {
        let handles: Vec<_> = (0..5u64).map(|s| std::thread::spawn(move || benchmark_seed(s))).collect();
        handles
            .into_iter()
            .map(|h| h.join().map_err(|_| "benchmark thread panicked".to_string())?.map_err(|e| e.to_string()))
            .collect::<Result<Vec<SeedRun>, String>>()
    });
    let elapsed = start.elapsed();
    match runs {
        Ok(runs) => {
            results.push((4, "ablation ordering", guarded(|| ablation(&runs, elapsed))));
            results.push((5, "hard-task curriculum", guarded(|| curriculum(&runs, elapsed))));
        }
        Err(e) => {
            results.push((4, "ablation ordering", Err(e.clone())));
            results.push((5, "hard-task curriculum", Err(e)));
        }
    }

    results.push((6, "pretraining convergence", guarded(pretraining)));
    results.push((7, "episode invariants", guarded(episodes)));
    results.push((8, "statistics", guarded(statistics)));

    let mut failed = 0;
    for (n, name, r) in &results {
        match r {
            Ok(d) => println!("PASS criterion {n} ({name}): {d}"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {n} ({name}): {d}")
            }
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
