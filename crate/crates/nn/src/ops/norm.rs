//! Per-channel batch normalization for `[batch, channels, time, freq]` maps.

use crate::error::{Error, Result};
use crate::tape::{BackwardOp, Mode, Tape, Var};
use crate::tensor::Tensor;

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Running mean/variance used in eval mode.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

struct BatchNorm {
    input: Var,
    gamma: Var,
    beta: Var,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    channels: usize,
    plane: usize,
    mode: Mode,
}

impl BackwardOp for BatchNorm {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input, self.gamma, self.beta]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let gamma = tape.value(self.gamma).data();
        let (c, plane) = (self.channels, self.plane);
        let batch = grad.len() / (c * plane);
        let n = (batch * plane) as f64;

        let mut sum_g = vec![0.0; c];
        let mut sum_gx = vec![0.0; c];
        for (k, (gs, xs)) in grad
            .chunks_exact(plane)
            .zip(self.xhat.chunks_exact(plane))
            .enumerate()
        {
            let ch = k % c;
            for (g, x) in gs.iter().zip(xs) {
                sum_g[ch] += g;
                sum_gx[ch] += g * x;
            }
        }

        let mut gi = vec![0.0; grad.len()];
        for (k, ((dst, gs), xs)) in gi
            .chunks_exact_mut(plane)
            .zip(grad.chunks_exact(plane))
            .zip(self.xhat.chunks_exact(plane))
            .enumerate()
        {
            let ch = k % c;
            let scale = gamma[ch] * self.inv_std[ch];
            match self.mode {
                Mode::Train => {
                    let (mg, mgx) = (sum_g[ch] / n, sum_gx[ch] / n);
                    for ((d, g), x) in dst.iter_mut().zip(gs).zip(xs) {
                        *d = scale * (g - mg - x * mgx);
                    }
                }
                Mode::Eval => {
                    for (d, g) in dst.iter_mut().zip(gs) {
                        *d = scale * g;
                    }
                }
            }
        }
        vec![Some(gi), Some(sum_gx), Some(sum_g)]
    }
}

impl Tape {
    /// Batch normalization with learned per-channel `gamma`/`beta`.
    ///
    /// In train mode statistics come from the batch (over batch, time and
    /// frequency) and `stats` is moved toward them with momentum
    /// [`BN_MOMENTUM`]; in eval mode `stats` is used as is.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        stats: &mut RunningStats,
        mode: Mode,
    ) -> Result<Var> {
        const OP: &str = "batch_norm";
        let input = self.value(x);
        input.expect_rank(OP, "input", 4)?;
        let &[b, c, t, f] = input.shape() else { unreachable!() };
        for (what, v) in [("gamma", gamma), ("beta", beta)] {
            if self.value(v).shape() != [c] {
                return Err(Error::shape(OP, what, [c], self.value(v).shape()));
            }
        }
        if stats.mean.len() != c || stats.var.len() != c {
            return Err(Error::shape(OP, "running stats", c, stats.mean.len()));
        }
        let plane = t * f;
        let n = b * plane;

        let (mean, var) = match mode {
            Mode::Train => {
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                for (k, chunk) in input.data().chunks_exact(plane).enumerate() {
                    mean[k % c] += chunk.iter().sum::<f64>();
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for (k, chunk) in input.data().chunks_exact(plane).enumerate() {
                    let m = mean[k % c];
                    var[k % c] += chunk.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
                }
                var.iter_mut().for_each(|v| *v /= n as f64);
                let unbias = if n > 1 { n as f64 / (n - 1) as f64 } else { 1.0 };
                for ch in 0..c {
                    stats.mean[ch] = BN_MOMENTUM * stats.mean[ch] + (1.0 - BN_MOMENTUM) * mean[ch];
                    stats.var[ch] =
                        BN_MOMENTUM * stats.var[ch] + (1.0 - BN_MOMENTUM) * var[ch] * unbias;
                }
                (mean, var)
            }
            Mode::Eval => (stats.mean.clone(), stats.var.clone()),
        };

        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let g = self.value(gamma).data();
        let be = self.value(beta).data();
        let mut xhat = Vec::with_capacity(input.len());
        let mut out = Vec::with_capacity(input.len());
        for (k, chunk) in input.data().chunks_exact(plane).enumerate() {
            let ch = k % c;
            for &v in chunk {
                let h = (v - mean[ch]) * inv_std[ch];
                xhat.push(h);
                out.push(g[ch] * h + be[ch]);
            }
        }
        let out = Tensor::new(vec![b, c, t, f], out)?;
        Ok(self.push(
            out,
            BatchNorm {
                input: x,
                gamma,
                beta,
                xhat,
                inv_std,
                channels: c,
                plane,
                mode,
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_mode_standardizes_each_channel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[3, 2, 4, 5], |i| {
            (i as f64 * 1.3).sin() * 4.0 + (i % 7) as f64
        }));
        let g = tape.constant(Tensor::full(&[2], 1.0));
        let b = tape.constant(Tensor::zeros(&[2]));
        let mut stats = RunningStats::new(2);
        let y = tape.batch_norm(x, g, b, &mut stats, Mode::Train).unwrap();
        let out = tape.value(y).data();
        for ch in 0..2 {
            let vals: Vec<f64> = out
                .chunks_exact(20)
                .enumerate()
                .filter(|(k, _)| k % 2 == ch)
                .flat_map(|(_, c)| c.iter().copied())
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-6);
            // epsilon inside the square root shrinks the variance slightly
            assert!((var - 1.0).abs() < 1e-5, "var {var}");
        }
        assert_ne!(stats, RunningStats::new(2));
    }

    #[test]
    fn eval_mode_is_fixed_affine_map() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 2, 2], |i| i as f64));
        let g = tape.constant(Tensor::full(&[1], 2.0));
        let b = tape.constant(Tensor::full(&[1], 0.5));
        let mut stats = RunningStats {
            mean: vec![1.0],
            var: vec![4.0],
        };
        let before = stats.clone();
        let y = tape.batch_norm(x, g, b, &mut stats, Mode::Eval).unwrap();
        assert_eq!(stats, before);
        let s = 1.0 / (4.0 + BN_EPSILON).sqrt();
        for (i, &v) in tape.value(y).data().iter().enumerate() {
            assert!((v - (2.0 * (i as f64 - 1.0) * s + 0.5)).abs() < 1e-12);
        }
    }
}
