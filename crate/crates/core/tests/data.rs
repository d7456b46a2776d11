//! Dataset formats, class splits and episode sampling.

mod common;

use std::collections::BTreeSet;

use common::*;
use metashift::data::*;
use metashift::{Error, Tensor};
use proptest::prelude::*;

fn f32_round(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f32 as f64).collect()
}

fn same_content(a: &Dataset, b: &Dataset) {
    assert_eq!(a.num_classes(), b.num_classes());
    assert_eq!(a.len(), b.len());
    for c in 0..a.num_classes() {
        let (x, y) = (a.class_samples(c), b.class_samples(c));
        assert_eq!(x.len(), y.len());
        for (&i, &j) in x.iter().zip(y) {
            assert_eq!(f32_round(&a.sample(i).features), b.sample(j).features.data());
        }
    }
}

#[test]
fn tensor_dir_round_trip() {
    let ds = vectors(8, 40, 6, 0.2, 1);
    let dir = tempfile::tempdir().unwrap();
    write_tensor_dir(&ds, dir.path()).unwrap();
    let back = load_dataset(dir.path(), DataFormat::TensorDir, 16).unwrap();
    assert_eq!(back.num_classes(), 8);
    assert_eq!(back.len(), 320);
    same_content(&ds, &back);
}

#[test]
fn packed_round_trip_and_superclasses() {
    let ds = synth_generate(&SynthConfig { classes: 6, per_class: 5, dims: 3, classes_per_superclass: 2, ..Default::default() }, 2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mtpk");
    write_packed(&ds, &path).unwrap();
    same_content(&ds, &load_dataset(&path, DataFormat::PackedBinary, 1).unwrap());

    write_tensor_dir(&ds, &dir.path().join("tree")).unwrap();
    let tree = load_dataset(&dir.path().join("tree"), DataFormat::TensorDir, 1).unwrap();
    assert_eq!(tree.superclasses(), ds.superclasses());
}

#[test]
fn image_samples_keep_their_shape() {
    let ds = synth_generate(&SynthConfig { classes: 20, per_class: 30, kind: SynthKind::Image, image_size: 16, ..Default::default() }, 3).unwrap();
    assert_eq!(ds.sample_shape(), [1, 16, 16]);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.mtpk");
    write_packed(&ds, &path).unwrap();
    assert_eq!(load_dataset(&path, DataFormat::PackedBinary, 16).unwrap().sample_shape(), [1, 16, 16]);
}

#[test]
fn truncated_packed_file_names_file_and_offset() {
    let ds = vectors(3, 4, 2, 0.1, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mtpk");
    write_packed(&ds, &path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    match load_dataset(&path, DataFormat::PackedBinary, 1) {
        Err(e @ Error::Format { .. }) => {
            let msg = e.to_string();
            assert!(msg.contains("d.mtpk") && msg.contains("offset"), "{msg}");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn small_class_is_named() {
    let ds = vectors(4, 3, 2, 0.1, 5);
    let dir = tempfile::tempdir().unwrap();
    write_tensor_dir(&ds, dir.path()).unwrap();
    let err = load_dataset(dir.path(), DataFormat::TensorDir, 16).unwrap_err().to_string();
    assert!(err.contains("class 0"), "{err}");
}

#[test]
fn empty_directory_has_no_classes() {
    let dir = tempfile::tempdir().unwrap();
    let err = load_dataset(dir.path(), DataFormat::TensorDir, 1).unwrap_err().to_string();
    assert!(err.contains("no classes found"), "{err}");
}

#[test]
fn ten_thousand_episodes_keep_their_invariants() {
    let ds = vectors(20, 20, 2, 0.1, 6);
    let split = SplitSpec::by_class_counts(10, 5, 5);
    let train = split.classes(&ds, Partition::Train);
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 15 };
    let mut r = rng(7);
    for _ in 0..10_000 {
        let ep = sample_episode(&ds, &train, shape, &mut r).unwrap();
        ep.validate().unwrap();
        assert_eq!((ep.train.len(), ep.test.len()), (5, 75));
        assert!(ep.classes.iter().all(|c| train.contains(c)));
        for s in ep.train.iter().chain(&ep.test) {
            assert_eq!(ds.sample(s.index).class, ep.classes[s.label]);
        }
    }
}

#[test]
fn superclass_split_separates_train_and_test() {
    let ds = synth_generate(&SynthConfig { classes: 24, per_class: 20, dims: 2, classes_per_superclass: 3, ..Default::default() }, 8).unwrap();
    let split = SplitSpec { mode: SplitMode::BySuperclass, train: vec![0, 2, 4, 6], val: vec![1, 7], test: vec![3, 5] };
    split.validate(&ds).unwrap();
    let train = split.classes(&ds, Partition::Train);
    let test = split.classes(&ds, Partition::Test);
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 5 };
    let mut r = rng(9);
    for _ in 0..10_000 {
        let a = sample_episode(&ds, &train, shape, &mut r).unwrap();
        let b = sample_episode(&ds, &test, shape, &mut r).unwrap();
        let sa: BTreeSet<_> = a.classes.iter().map(|&c| ds.superclass(c)).collect();
        assert!(b.classes.iter().all(|&c| !sa.contains(&ds.superclass(c))));
    }
}

#[test]
fn too_few_classes_or_samples_is_an_error() {
    let ds = vectors(6, 10, 2, 0.1, 10);
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 15 };
    assert!(sample_episode(&ds, &[0, 1, 2, 3, 4], shape, &mut rng(0)).is_err());
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 5 };
    assert!(sample_episode(&ds, &[0, 1, 2, 3], shape, &mut rng(0)).is_err());
}

fn record(ds: &Dataset, class: usize, n: usize) -> FailureRecord {
    FailureRecord { class, samples: ds.class_samples(class)[..n].to_vec() }
}

#[test]
fn full_pool_forces_the_classes() {
    let ds = vectors(12, 20, 2, 0.1, 11);
    let pool: Vec<_> = [1, 3, 5, 7, 9].iter().map(|&c| record(&ds, c, 5)).collect();
    let fill: Vec<usize> = (0..12).collect();
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 5 };
    for seed in 0..20 {
        let h = sample_hard_episode(&ds, &pool, &fill, shape, HardMethod::Resample, &mut rng(seed)).unwrap();
        let got: BTreeSet<_> = h.episode.classes.iter().copied().collect();
        assert_eq!(got, BTreeSet::from([1, 3, 5, 7, 9]));
        assert!(h.provenance.iter().all(|p| *p == ClassSource::Pool));
    }
}

#[test]
fn small_pool_is_padded_without_duplicates() {
    let ds = vectors(12, 20, 2, 0.1, 12);
    let pool = vec![record(&ds, 2, 5), record(&ds, 8, 5), record(&ds, 2, 5)];
    let fill: Vec<usize> = (0..10).collect();
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 5 };
    for seed in 0..100 {
        let h = sample_hard_episode(&ds, &pool, &fill, shape, HardMethod::Resample, &mut rng(seed)).unwrap();
        h.episode.validate().unwrap();
        let pooled: BTreeSet<_> = h.episode.classes.iter().zip(&h.provenance).filter(|(_, p)| **p == ClassSource::Pool).map(|(c, _)| *c).collect();
        assert_eq!(pooled, BTreeSet::from([2, 8]));
        let padded: Vec<_> = h.episode.classes.iter().zip(&h.provenance).filter(|(_, p)| **p == ClassSource::Padding).map(|(c, _)| *c).collect();
        assert_eq!(padded.len(), 3);
        assert!(padded.iter().all(|c| fill.contains(c) && !pooled.contains(c)));
    }
}

#[test]
fn duplicates_raise_selection_weight() {
    let ds = vectors(12, 20, 2, 0.1, 13);
    let mut pool: Vec<_> = (0..6).map(|c| record(&ds, c, 3)).collect();
    pool.extend((0..5).map(|_| record(&ds, 0, 3)));
    let shape = EpisodeShape { way: 2, k_train: 1, k_test: 5 };
    let hits = |class: usize| {
        (0..400)
            .filter(|&s| {
                sample_hard_episode(&ds, &pool, &[], shape, HardMethod::Resample, &mut rng(s)).unwrap().episode.classes.contains(&class)
            })
            .count()
    };
    assert!(hits(0) > 2 * hits(1), "{} vs {}", hits(0), hits(1));
}

#[test]
fn reuse_trains_on_recorded_samples_and_resample_does_not() {
    let ds = vectors(8, 40, 2, 0.1, 14);
    let pool: Vec<_> = (0..5).map(|c| record(&ds, c, 2)).collect();
    let recorded: BTreeSet<usize> = pool.iter().flat_map(|r| r.samples.iter().copied()).collect();
    let shape = EpisodeShape { way: 5, k_train: 1, k_test: 15 };
    let mut resample_left = false;
    for seed in 0..30 {
        let h = sample_hard_episode(&ds, &pool, &[], shape, HardMethod::Reuse, &mut rng(seed)).unwrap();
        h.episode.validate().unwrap();
        assert!(h.fallbacks.is_empty());
        assert!(h.episode.train.iter().all(|s| recorded.contains(&s.index)));
        let r = sample_hard_episode(&ds, &pool, &[], shape, HardMethod::Resample, &mut rng(seed)).unwrap();
        resample_left |= r.episode.train.iter().any(|s| !recorded.contains(&s.index));
    }
    assert!(resample_left);
}

#[test]
fn reuse_falls_back_when_records_are_short() {
    let ds = vectors(6, 20, 2, 0.1, 15);
    let pool = vec![FailureRecord { class: 1, samples: vec![] }];
    let shape = EpisodeShape { way: 2, k_train: 1, k_test: 5 };
    let h = sample_hard_episode(&ds, &pool, &[0, 2, 3], shape, HardMethod::Reuse, &mut rng(0)).unwrap();
    assert_eq!(h.fallbacks, vec![1]);
    h.episode.validate().unwrap();
    assert!(sample_hard_episode(&ds, &[], &[0, 1, 2], shape, HardMethod::Reuse, &mut rng(0)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn sampled_episodes_are_valid(way in 2usize..=6, k_train in 1usize..=5, k_test in 1usize..=10, seed in any::<u64>()) {
        let ds = vectors(8, 16, 2, 0.1, 16);
        let classes: Vec<usize> = (0..8).collect();
        let shape = EpisodeShape { way, k_train, k_test };
        let ep = sample_episode(&ds, &classes, shape, &mut rng(seed)).unwrap();
        prop_assert!(ep.validate().is_ok());
        prop_assert_eq!(ep.train.len(), way * k_train);
        prop_assert_eq!(ep.test.len(), way * k_test);
        let again = sample_episode(&ds, &classes, shape, &mut rng(seed)).unwrap();
        prop_assert_eq!(ep, again);
    }

    #[test]
    fn hard_episodes_are_valid(pool_classes in prop::collection::vec(0usize..10, 1..8), seed in any::<u64>(), reuse in any::<bool>()) {
        let ds = vectors(10, 20, 2, 0.1, 17);
        let pool: Vec<_> = pool_classes.iter().map(|&c| record(&ds, c, 4)).collect();
        let fill: Vec<usize> = (0..10).collect();
        let shape = EpisodeShape { way: 5, k_train: 2, k_test: 6 };
        let method = if reuse { HardMethod::Reuse } else { HardMethod::Resample };
        let h = sample_hard_episode(&ds, &pool, &fill, shape, method, &mut rng(seed)).unwrap();
        prop_assert!(h.episode.validate().is_ok());
        let distinct: BTreeSet<_> = pool_classes.iter().copied().collect();
        let n_pool = h.provenance.iter().filter(|p| **p == ClassSource::Pool).count();
        prop_assert_eq!(n_pool, distinct.len().min(5));
    }
}
