//! Training loop contracts: stopping rule, attenuation, divergence, batch
//! accounting, evaluation and reproducibility.

use dcrnn_core::data::{split_corpus, synth_corpus_in_memory, Corpus, Normalizer, Recording, SynthCorpusConfig};
use dcrnn_core::features::{FeatureConfig, FeatureMatrix};
use dcrnn_core::metrics::{EventRoll, MetricsReport};
use dcrnn_core::model::{Crnn, ModelConfig};
use dcrnn_core::synth::SceneRecipe;
use dcrnn_core::train::{
    evaluate, fit, train, CrnnLearner, Detector, Learner, StopReason, TrainConfig, Validation,
};
use dcrnn_core::SedError;
use proptest::prelude::*;

/// Replays a scripted validation-loss sequence.
struct Scripted {
    losses: Vec<f64>,
    epoch: usize,
}

impl Learner for Scripted {
    type Snapshot = usize;

    fn train_epoch(&mut self, epoch: usize, _lr: f64) -> dcrnn_core::Result<f64> {
        self.epoch = epoch;
        Ok(1.0)
    }

    fn validate(&mut self) -> dcrnn_core::Result<Validation> {
        Ok(Validation {
            loss: self.losses[self.epoch - 1],
            report: MetricsReport::default(),
        })
    }

    fn snapshot(&self) -> usize {
        self.epoch
    }
}

/// The stopping epoch computed directly from the rule.
fn expected_stop(losses: &[f64], patience: usize) -> usize {
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for (i, &l) in losses.iter().enumerate() {
        if l < best {
            best = l;
            stale = 0;
        } else {
            stale += 1;
        }
        if stale == patience {
            return i + 1;
        }
    }
    losses.len()
}

fn scripted_config(max_epochs: usize) -> TrainConfig {
    TrainConfig {
        max_epochs,
        ..Default::default()
    }
}

#[test]
fn flat_losses_stop_at_epoch_31() {
    let mut l = Scripted {
        losses: vec![1.0; 100],
        epoch: 0,
    };
    let out = fit(&mut l, &scripted_config(100), |_| {}).unwrap();
    assert_eq!(out.epochs_run(), 31);
    assert_eq!(out.stop, StopReason::EarlyStopping);
    assert_eq!(out.best, 1);
}

#[test]
fn improving_losses_run_to_max_epochs() {
    let mut l = Scripted {
        losses: (0..60).map(|i| 1.0 / (i + 1) as f64).collect(),
        epoch: 0,
    };
    let out = fit(&mut l, &scripted_config(60), |_| {}).unwrap();
    assert_eq!((out.epochs_run(), out.stop, out.best_epoch), (60, StopReason::MaxEpochs, 60));
}

#[test]
fn learning_rate_halves_on_each_plateau() {
    let mut l = Scripted {
        losses: vec![1.0; 40],
        epoch: 0,
    };
    let out = fit(&mut l, &scripted_config(40), |_| {}).unwrap();
    let lrs: Vec<f64> = out.records.iter().map(|r| r.lr).collect();
    assert_eq!(lrs[10], 0.01);
    assert_eq!(lrs[11], 0.005);
    assert_eq!(lrs[21], 0.0025);
}

#[test]
fn nan_loss_reports_the_epoch() {
    let mut l = Scripted {
        losses: vec![1.0, 0.5, f64::NAN],
        epoch: 0,
    };
    match fit(&mut l, &scripted_config(3), |_| {}) {
        Err(SedError::Divergence { epoch, .. }) => assert_eq!(epoch, 3),
        other => panic!("expected divergence, got {other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn stopping_epoch_follows_the_rule(
        losses in proptest::collection::vec(prop_oneof![Just(1.0), Just(0.5), 0.0f64..2.0], 1..120),
        patience in 1usize..40,
    ) {
        let mut l = Scripted { losses: losses.clone(), epoch: 0 };
        let config = TrainConfig { patience, max_epochs: losses.len(), ..Default::default() };
        let out = fit(&mut l, &config, |_| {}).unwrap();
        prop_assert_eq!(out.epochs_run(), expected_stop(&losses, patience));
        let best = out.records.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(out.best_val_loss, best);
        prop_assert_eq!(out.records[out.best_epoch - 1].val_loss, best);
    }
}

fn tiny_corpus() -> Corpus {
    let c = SynthCorpusConfig {
        n_classes: 2,
        n_scenes: 6,
        seed: 3,
        recipe: SceneRecipe {
            duration_seconds: 2.0,
            ..Default::default()
        },
    };
    synth_corpus_in_memory(&c, &FeatureConfig::default()).unwrap()
}

fn tiny_model(n_classes: usize) -> ModelConfig {
    let mut m = ModelConfig::from_schedule(&"1-2".parse().unwrap(), n_classes, 40, 2);
    m.blstm_hidden = 4;
    m
}

fn tiny_train(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 2,
        seed,
        batch_size: 4,
        chunk_frames: 64,
        ..Default::default()
    }
}

#[test]
fn one_step_per_batch_including_the_last_partial_one() {
    let corpus = tiny_corpus();
    let split = split_corpus(6, (0.6, 0.2, 0.2), 0).unwrap();
    let config = tiny_train(1);
    let model = Crnn::new(&tiny_model(2), 0).unwrap();
    let mut learner = CrnnLearner::new(model, &corpus.subset(&split.train), &corpus.subset(&split.val), &config).unwrap();
    // 4 scenes of 199 frames in 64-frame chunks: 4 chunks each
    assert_eq!(learner.train_chunks(), 16);
    learner.train_epoch(1, 0.01).unwrap();
    assert_eq!(learner.steps_taken(), 4);
    let config = TrainConfig { batch_size: 5, ..config };
    let model = Crnn::new(&tiny_model(2), 0).unwrap();
    let mut learner = CrnnLearner::new(model, &corpus.subset(&split.train), &corpus.subset(&split.val), &config).unwrap();
    learner.train_epoch(1, 0.01).unwrap();
    assert_eq!(learner.steps_taken(), 4);
}

#[test]
fn training_is_reproducible() {
    let corpus = tiny_corpus();
    let split = split_corpus(6, (0.6, 0.2, 0.2), 0).unwrap();
    let run = |seed| {
        train(&tiny_model(2), &corpus.subset(&split.train), &corpus.subset(&split.val), &tiny_train(seed), |_| {})
            .unwrap()
    };
    let (a, b) = (run(5), run(5));
    assert_eq!(a.best, b.best);
    assert_eq!(a.last, b.last);
    let strip = |o: &dcrnn_core::train::TrainOutcome| -> Vec<(f64, f64, f64)> {
        o.records.iter().map(|r| (r.train_loss, r.val_loss, r.lr)).collect()
    };
    assert_eq!(strip(&a), strip(&b));
    assert_ne!(run(6).last, a.last);
}

#[test]
fn evaluation_is_deterministic_and_rejects_empty_sets() {
    let corpus = tiny_corpus();
    let out = train(&tiny_model(2), &corpus.recordings[..3], &corpus.recordings[3..4], &tiny_train(1), |_| {}).unwrap();
    let a = evaluate(&out.best, &corpus.recordings[4..], 64).unwrap();
    let b = evaluate(&out.best, &corpus.recordings[4..], 64).unwrap();
    assert_eq!(a, b);
    assert!(evaluate(&out.best, &[], 64).is_err());
    assert!(train(&tiny_model(2), &[], &corpus.recordings[..1], &tiny_train(1), |_| {}).is_err());
}

#[test]
fn zero_output_layer_predicts_everything() {
    let mut model = Crnn::new(&tiny_model(3), 0).unwrap();
    for name in ["out.weight", "out.bias"] {
        model.param_mut(name).unwrap().data_mut().iter_mut().for_each(|w| *w = 0.0);
    }
    let detector = Detector {
        model,
        normalizer: Normalizer::identity(40),
    };
    // 5 frames x 3 classes with 4 active reference cells
    let mut roll = EventRoll::new(5, 3);
    for (f, c) in [(0, 0), (1, 0), (1, 2), (4, 1)] {
        roll.set(f, c, true);
    }
    let rec = Recording {
        name: "hand".into(),
        features: FeatureMatrix::new((0..200).map(|i| (i as f64).sin()).collect(), 5, 40, 0.01, 0.02).unwrap(),
        roll,
    };
    let v = evaluate(&detector, &[rec], 8).unwrap();
    let (n_ref, n_fp) = (4u64, 11u64);
    assert_eq!((v.report.tp, v.report.fp, v.report.fn_), (n_ref, n_fp, 0));
    assert_eq!(v.report.f1(), (2 * n_ref) as f64 / (2 * n_ref + n_fp) as f64);
    assert!((v.loss - std::f64::consts::LN_2).abs() < 1e-12);
}

#[test]
fn detector_checkpoint_round_trip() {
    let corpus = tiny_corpus();
    let out = train(&tiny_model(2), &corpus.recordings[..3], &corpus.recordings[3..4], &tiny_train(2), |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.dcrn");
    out.best.save(&path).unwrap();
    let back = Detector::load(&path, &tiny_model(2)).unwrap();
    assert_eq!(back, out.best);
    assert_eq!(
        back.predict(&corpus.recordings[5].features).unwrap(),
        out.best.predict(&corpus.recordings[5].features).unwrap()
    );
}
