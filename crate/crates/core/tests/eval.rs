//! Meta-test accuracy against a direct recount, and interval arithmetic.

mod common;

use common::*;
use metashift::data::EpisodeShape;
use metashift::eval::{confidence_interval, evaluate_episodes, meta_test, EvalConfig};
use metashift::meta::{base_learn, MetaConfig, Mode};
use metashift::model::ss_forward;

#[test]
fn accuracy_matches_a_brute_force_recount() {
    let ds = vectors(10, 20, 4, 0.6, 1);
    let ex = perceptron(4, 8, 2);
    let st = state(&ex, Mode::Ss, 5, 3);
    let cfg = MetaConfig { k_test: 6, inner_epochs: 5, parallel: false, ..Default::default() };
    let classes: Vec<usize> = (0..10).collect();
    let episodes: Vec<_> = (0..10).map(|i| episode(&ds, &classes, cfg.shape(), i)).collect();
    let got = evaluate_episodes(&ds, &episodes, &st, &cfg).unwrap();
    for (ep, acc) in episodes.iter().zip(got) {
        let theta = base_learn(&ds, ep, &st, &cfg).unwrap().theta;
        let idx: Vec<usize> = ep.test.iter().map(|s| s.index).collect();
        let features = ss_forward(&ds.batch(&idx).unwrap(), &st.extractor, &st.ss).unwrap();
        let predicted = theta.predict(&features).unwrap();
        let correct = predicted.iter().zip(&ep.test).filter(|(p, s)| **p == s.label).count();
        assert_eq!(acc, correct as f64 / ep.test.len() as f64);
    }
}

#[test]
fn interval_examples() {
    assert_eq!(confidence_interval(&[0.5, 0.5, 0.5]).unwrap(), (0.5, 0.0));
    let (m, h) = confidence_interval(&[0.2, 0.4, 0.6, 0.8]).unwrap();
    assert!((m - 0.5).abs() < 1e-12);
    assert!((h - 0.2530349119522179).abs() < 1e-12);
    let (m, h) = confidence_interval(&[1.0, 1.0, 0.8, 0.6, 1.0]).unwrap();
    assert!((m - 0.88).abs() < 1e-12);
    assert!((h - 0.1568).abs() < 1e-12);
    assert!(confidence_interval(&[]).is_err());
}

#[test]
fn fewer_test_shots_widen_the_interval() {
    let ds = vectors(10, 120, 4, 0.8, 4);
    let ex = perceptron(4, 8, 5);
    let st = state(&ex, Mode::Ss, 5, 6);
    let cfg = MetaConfig { inner_epochs: 5, ..Default::default() };
    let classes: Vec<usize> = (0..10).collect();
    let run = |k_test| {
        let shape = EvalConfig { tasks: 100, k_test: Some(k_test), k_train: None }.shape(&cfg);
        meta_test(&ds, &classes, &st, 100, shape, &cfg, &mut rng(7)).unwrap()
    };
    let (one, hundred) = (run(1), run(100));
    assert_eq!(hundred.k_test, 100);
    assert!(one.half_width > hundred.half_width, "{} vs {}", one.half_width, hundred.half_width);
}

#[test]
fn meta_test_is_reproducible_and_needs_two_tasks() {
    let ds = vectors(8, 20, 4, 0.6, 8);
    let st = state(&perceptron(4, 8, 9), Mode::FtClassifier, 5, 1);
    let cfg = MetaConfig { k_test: 4, inner_epochs: 3, ..Default::default() };
    let classes: Vec<usize> = (0..8).collect();
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 4 };
    let a = meta_test(&ds, &classes, &st, 12, shape, &cfg, &mut rng(2)).unwrap();
    let b = meta_test(&ds, &classes, &st, 12, shape, &cfg, &mut rng(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.accuracies.len(), 12);
    assert!(meta_test(&ds, &classes, &st, 1, shape, &cfg, &mut rng(2)).is_err());
}
