//! Whole-model properties: gradient fidelity, receptive-field law, parameter
//! invariance under dilation and time-resolution preservation.

#[path = "../../nn/tests/common/mod.rs"]
mod common;

use common::{grad_check, FD_REL_TOL};
use dcrnn_core::experiment::default_entries;
use dcrnn_core::model::{
    empirical_receptive_field, probe_model, receptive_field, Crnn, DilationSchedule, ModelConfig,
};
use dcrnn_nn::{Mode, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(schedule: &str) -> ModelConfig {
    let mut c = ModelConfig::from_schedule(&schedule.parse().unwrap(), 2, 5, 2);
    c.blstm_hidden = 4;
    c
}

#[test]
fn tiny_crnn_gradient_matches_finite_differences() {
    for (seed, schedule) in [(0, "1-1"), (1, "2-4"), (2, "1-2")] {
        let model = Crnn::new(&tiny_config(schedule), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let input = Tensor::from_fn(&[2, 8, 5], |_| rng.gen_range(-1.0..1.0));
        let target = Tensor::from_fn(&[2, 8, 2], |_| if rng.gen_bool(0.4) { 1.0 } else { 0.0 });
        let mask = Tensor::from_fn(&[2, 8], |i| if i < 14 { 1.0 } else { 0.0 });
        let err = grad_check(model.params(), |tape, vars| {
            let mut m = model.clone();
            let mut drop_rng = ChaCha8Rng::seed_from_u64(7);
            let out = m
                .forward_with(tape, vars.to_vec(), &input, Mode::Train, &mut drop_rng)
                .unwrap()
                .output;
            tape.bce_loss(out, &target, Some(&mask)).unwrap()
        });
        assert!(err < FD_REL_TOL, "schedule {schedule}: max relative error {err:e}");
    }
}

#[test]
fn receptive_field_law_over_table_schedules() {
    for entry in default_entries() {
        let rates = entry.schedule.rates();
        let rf = receptive_field(3, rates).unwrap();
        let n = 2 * rf + 1;
        let m = probe_model(3, rates, 8).unwrap();
        assert_eq!(empirical_receptive_field(&m, n, n / 2).unwrap(), rf, "{}", entry.schedule);
        assert!(empirical_receptive_field(&m, n, 0).unwrap() <= rf);
    }
    assert_eq!(receptive_field(3, &[2, 4, 8]).unwrap(), 29);
}

#[test]
fn dilation_never_changes_parameter_count() {
    for n in 1..=5 {
        let base = ModelConfig::from_schedule(&DilationSchedule::baseline(n).unwrap(), 6, 40, 64);
        let dil = base.with_schedule(&DilationSchedule::doubling(n).unwrap()).unwrap();
        let a = Crnn::new(&base, 0).unwrap().count_params();
        let b = Crnn::new(&dil, 0).unwrap().count_params();
        assert_eq!(a, b, "{n} layers");
    }
}

#[test]
fn output_keeps_time_resolution() {
    for entry in default_entries() {
        let mut c = ModelConfig::from_schedule(&entry.schedule, 3, 40, 2);
        c.blstm_hidden = 3;
        let m = Crnn::new(&c, 1).unwrap();
        for frames in [1, 7, 100] {
            let input = Tensor::from_fn(&[2, frames, 40], |i| (i as f64).cos());
            assert_eq!(m.predict(&input).unwrap().shape(), [2, frames, 3], "{}", entry.schedule);
            assert_eq!(m.conv_features(&input).unwrap().shape()[2], frames);
        }
    }
}

#[test]
fn outputs_are_probabilities_and_deterministic() {
    let m = Crnn::new(&tiny_config("2-4"), 3).unwrap();
    let input = Tensor::from_fn(&[1, 30, 5], |i| (i as f64 * 0.1).sin() * 4.0);
    let a = m.predict(&input).unwrap();
    assert!(a.data().iter().all(|&p| p > 0.0 && p < 1.0));
    assert_eq!(a, m.predict(&input).unwrap());
}
