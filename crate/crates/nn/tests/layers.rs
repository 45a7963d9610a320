mod common;

use common::random_tensor;
use dcrnn_nn::checkpoint::{read_container, write_container, CHECKPOINT_MAGIC};
use dcrnn_nn::{Adam, LstmVars, Mode, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn dropout_identity_cases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut tape = Tape::new();
    let x = tape.constant(random_tensor(&mut rng, &[4, 5], 1.0));
    let y = tape.dropout(x, 0.0, Mode::Train, &mut rng).unwrap();
    assert_eq!(tape.value(y), tape.value(x));
    let z = tape.dropout(x, 0.5, Mode::Eval, &mut rng).unwrap();
    assert_eq!(tape.value(z), tape.value(x));
    assert!(tape.dropout(x, 1.0, Mode::Train, &mut rng).is_err());
    assert!(tape.dropout(x, -0.1, Mode::Train, &mut rng).is_err());
}

#[test]
fn dropout_zero_fraction_and_scaling() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1000, 1000], 1.0));
    let y = tape.dropout(x, 0.1, Mode::Train, &mut rng).unwrap();
    let out = tape.value(y).data();
    let zeros = out.iter().filter(|&&v| v == 0.0).count() as f64 / out.len() as f64;
    assert!((zeros - 0.1).abs() <= 0.01, "zero fraction {zeros}");
    let keep = 1.0 / 0.9;
    assert!(out.iter().all(|&v| v == 0.0 || v == keep));
}

fn lstm_params(rng: &mut ChaCha8Rng, ni: usize, h: usize) -> [Tensor; 3] {
    [
        random_tensor(rng, &[4 * h, ni], 0.7),
        random_tensor(rng, &[4 * h, h], 0.7),
        random_tensor(rng, &[4 * h], 0.3),
    ]
}

fn run_blstm(x: &Tensor, fw: &[Tensor; 3], bw: &[Tensor; 3]) -> Tensor {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let mut bind = |p: &[Tensor; 3]| LstmVars {
        w_ih: tape.constant(p[0].clone()),
        w_hh: tape.constant(p[1].clone()),
        bias: tape.constant(p[2].clone()),
    };
    let (f, b) = (bind(fw), bind(bw));
    let y = tape.blstm(xv, f, b).unwrap();
    tape.value(y).clone()
}

fn reverse_time(x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let v = tape.constant(x.clone());
    let r = tape.reverse_time(v).unwrap();
    tape.value(r).clone()
}

#[test]
fn blstm_zero_weights_give_zero_output() {
    let zeros = [Tensor::zeros(&[8, 3]), Tensor::zeros(&[8, 2]), Tensor::zeros(&[8])];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = run_blstm(&random_tensor(&mut rng, &[2, 6, 3], 1.0), &zeros, &zeros);
    assert_eq!(out.shape(), &[2, 6, 4]);
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn reversing_input_swaps_directions() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (ni, h) = (3, 4);
    let x = random_tensor(&mut rng, &[2, 7, ni], 1.0);
    let pa = lstm_params(&mut rng, ni, h);
    let pb = lstm_params(&mut rng, ni, h);

    let out = run_blstm(&x, &pa, &pb);
    let out_rev = reverse_time(&run_blstm(&reverse_time(&x), &pb, &pa));
    // out_rev's forward half (params pb run on reversed input) equals the
    // backward half of out, and vice versa
    for (row, row_rev) in out.data().chunks_exact(2 * h).zip(out_rev.data().chunks_exact(2 * h)) {
        for k in 0..h {
            assert!((row[k] - row_rev[h + k]).abs() < 1e-14);
            assert!((row[h + k] - row_rev[k]).abs() < 1e-14);
        }
    }

    // with shared parameters the halves swap without swapping params
    let same = run_blstm(&x, &pa, &pa);
    let same_rev = reverse_time(&run_blstm(&reverse_time(&x), &pa, &pa));
    for (row, row_rev) in same.data().chunks_exact(2 * h).zip(same_rev.data().chunks_exact(2 * h)) {
        assert!(row[..h].iter().zip(&row_rev[h..]).all(|(a, b)| (a - b).abs() < 1e-14));
    }
}

#[test]
fn blstm_output_width_is_twice_hidden() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let p = lstm_params(&mut rng, 5, 6);
    let out = run_blstm(&random_tensor(&mut rng, &[1, 3, 5], 1.0), &p, &p);
    assert_eq!(out.shape(), &[1, 3, 12]);
}

fn adam_trajectory(seed: u64) -> Vec<Tensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = vec![random_tensor(&mut rng, &[3, 2], 1.0), random_tensor(&mut rng, &[4], 1.0)];
    let mut adam = Adam::new(0.01);
    let mut history = Vec::new();
    for _ in 0..25 {
        // gradient of sum(p^2 * c) with c depending on position
        let grads: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::from_fn(p.shape(), |i| 2.0 * p.data()[i] * (1.0 + i as f64)))
            .collect();
        adam.step(&mut params, &grads).unwrap();
        history.extend(params.iter().cloned());
    }
    assert!(adam.second_moments().iter().flatten().all(|&v| v >= 0.0));
    history
}

#[test]
fn adam_is_deterministic() {
    assert_eq!(adam_trajectory(9), adam_trajectory(9));
    assert_ne!(adam_trajectory(9), adam_trajectory(10));
}

proptest! {
    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        records in prop::collection::vec(
            ("[a-z_.0-9]{1,12}", prop::collection::vec(1usize..4, 0..4), any::<u64>()),
            0..5,
        )
    ) {
        let tensors: Vec<(String, Tensor)> = records
            .into_iter()
            .map(|(name, shape, seed)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut t = random_tensor(&mut rng, &shape, 1e3);
                if t.len() > 1 {
                    t.data_mut()[0] = f64::MIN_POSITIVE;
                    t.data_mut()[1] = -0.0;
                }
                (name, t)
            })
            .collect();
        let refs: Vec<(&str, &Tensor)> = tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut buf = Vec::new();
        write_container(&mut buf, CHECKPOINT_MAGIC, &refs).unwrap();
        let back = read_container(&buf[..], CHECKPOINT_MAGIC).unwrap();
        prop_assert_eq!(back.len(), tensors.len());
        for ((n1, t1), (n2, t2)) in tensors.iter().zip(&back) {
            prop_assert_eq!(n1, n2);
            prop_assert_eq!(t1.shape(), t2.shape());
            let bits1: Vec<u64> = t1.data().iter().map(|v| v.to_bits()).collect();
            let bits2: Vec<u64> = t2.data().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(bits1, bits2);
        }
    }
}
