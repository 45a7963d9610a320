//! Independent oracles shared by test targets: a nested-loop evaluation of
//! the dilated convolution sum, kernel zero-upsampling, and central-difference
//! gradient checking.

#![allow(dead_code)]

use dcrnn_nn::{Tape, Tensor, Var};
use rand::Rng;

/// Literal `out(p) = sum over t in [-m,m]^2 with s + r*t = p of F(s) K(t)`,
/// zero outside the input, plus bias.
pub fn brute_force_dilated_conv(
    input: &Tensor,
    weight: &Tensor,
    bias: Option<&Tensor>,
    rate: (usize, usize),
) -> Tensor {
    let (b, cin, t, f) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
    let (cout, kt, kf) = (weight.shape()[0], weight.shape()[2], weight.shape()[3]);
    let (mt, mf) = ((kt / 2) as i64, (kf / 2) as i64);
    let at = |bi: usize, c: usize, s1: i64, s2: i64| -> f64 {
        if s1 < 0 || s2 < 0 || s1 >= t as i64 || s2 >= f as i64 {
            0.0
        } else {
            input.data()[((bi * cin + c) * t + s1 as usize) * f + s2 as usize]
        }
    };
    let k = |o: usize, c: usize, t1: i64, t2: i64| -> f64 {
        weight.data()[((o * cin + c) * kt + (t1 + mt) as usize) * kf + (t2 + mf) as usize]
    };
    let mut out = vec![0.0; b * cout * t * f];
    for bi in 0..b {
        for o in 0..cout {
            for p1 in 0..t as i64 {
                for p2 in 0..f as i64 {
                    let mut acc = bias.map_or(0.0, |bv| bv.data()[o]);
                    for c in 0..cin {
                        for t1 in -mt..=mt {
                            for t2 in -mf..=mf {
                                let s1 = p1 - rate.0 as i64 * t1;
                                let s2 = p2 - rate.1 as i64 * t2;
                                acc += at(bi, c, s1, s2) * k(o, c, t1, t2);
                            }
                        }
                    }
                    out[((bi * cout + o) * t + p1 as usize) * f + p2 as usize] = acc;
                }
            }
        }
    }
    Tensor::new(vec![b, cout, t, f], out).unwrap()
}

/// Inserts `r - 1` zeros between neighbouring kernel taps on each axis.
pub fn zero_upsample(weight: &Tensor, rate: (usize, usize)) -> Tensor {
    let &[o, c, kt, kf] = weight.shape() else { panic!("rank 4 kernel") };
    let (nt, nf) = ((kt - 1) * rate.0 + 1, (kf - 1) * rate.1 + 1);
    let mut out = vec![0.0; o * c * nt * nf];
    for oc in 0..o * c {
        for i in 0..kt {
            for j in 0..kf {
                out[(oc * nt + i * rate.0) * nf + j * rate.1] = weight.data()[(oc * kt + i) * kf + j];
            }
        }
    }
    Tensor::new(vec![o, c, nt, nf], out).unwrap()
}

pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize], scale: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-scale..scale))
}

/// Values whose magnitude is at least `gap`, so finite differences do not
/// straddle ReLU kinks.
pub fn random_away_from_zero<R: Rng>(rng: &mut R, shape: &[usize], gap: f64) -> Tensor {
    Tensor::from_fn(shape, |_| {
        let v = rng.gen_range(gap..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so gradients that are zero analytically compare in
/// absolute terms.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(FD_FLOOR)
}

/// Compares tape gradients of `build` with central differences over every
/// element of every input. Returns the largest relative error.
pub fn grad_check<F>(inputs: &[Tensor], build: F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let eval = |values: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let loss = build(&mut tape, &vars);
        tape.value(loss).data()[0]
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let analytic: Vec<Tensor> = vars.iter().map(|&v| tape.grad(v).unwrap().clone()).collect();

    let mut worst = 0.0f64;
    let mut values = inputs.to_vec();
    for i in 0..values.len() {
        for j in 0..values[i].len() {
            let orig = values[i].data()[j];
            values[i].data_mut()[j] = orig + FD_STEP;
            let up = eval(&values);
            values[i].data_mut()[j] = orig - FD_STEP;
            let down = eval(&values);
            values[i].data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[i].data()[j], numeric));
        }
    }
    worst
}

/// Reduces any tensor to a scalar through a fixed random projection, so
/// every output element carries a distinct weight in the loss.
pub fn project(tape: &mut Tape, x: Var, seed: u64) -> Var {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let shape = tape.value(x).shape().to_vec();
    let r = tape.constant(random_tensor(&mut rng, &shape, 1.0));
    let prod = tape.mul(x, r).unwrap();
    tape.sum(prod)
}
