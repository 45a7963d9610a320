use crate::error::{Error, Result};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

struct MaxPoolFreq {
    input: Var,
    argmax: Vec<usize>,
}

impl BackwardOp for MaxPoolFreq {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut g = vec![0.0; tape.value(self.input).len()];
        for (&src, &go) in self.argmax.iter().zip(grad) {
            g[src] += go;
        }
        vec![Some(g)]
    }
}

/// Output frequency width after pooling by `pool` with implicit `-inf` padding.
pub fn pooled_width(freq: usize, pool: usize) -> usize {
    freq.div_ceil(pool)
}

impl Tape {
    /// Max pooling over non-overlapping windows of the last (frequency) axis of
    /// a `[batch, channels, time, freq]` map. The time axis is untouched. A
    /// trailing partial window is pooled over the elements it has.
    pub fn max_pool_freq(&mut self, x: Var, pool: usize) -> Result<Var> {
        if pool < 1 {
            return Err(Error::InvalidArgument("max_pool_freq: pool must be >= 1".into()));
        }
        let input = self.value(x);
        input.expect_rank("max_pool_freq", "input", 4)?;
        let &[b, c, t, f] = input.shape() else { unreachable!() };
        let fo = pooled_width(f, pool);
        let mut data = Vec::with_capacity(b * c * t * fo);
        let mut argmax = Vec::with_capacity(b * c * t * fo);
        for (row_idx, row) in input.data().chunks_exact(f).enumerate() {
            for q in 0..fo {
                let lo = q * pool;
                let hi = (lo + pool).min(f);
                let mut best = lo;
                for k in lo + 1..hi {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                data.push(row[best]);
                argmax.push(row_idx * f + best);
            }
        }
        let out = Tensor::new(vec![b, c, t, fo], data)?;
        Ok(self.push(out, MaxPoolFreq { input: x, argmax }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pool_two_along_freq() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 2.0, 0.0]).unwrap());
        let y = tape.max_pool_freq(x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 1, 2, 1]);
        assert_eq!(tape.value(y).data(), &[3.0, 2.0]);
        let s = tape.sum(y);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn pool_one_is_identity_and_partial_window() {
        let mut tape = Tape::new();
        let data: Vec<f64> = (0..15).map(|v| ((v * 7) % 5) as f64).collect();
        let x = tape.constant(Tensor::new(vec![1, 1, 3, 5], data).unwrap());
        let y = tape.max_pool_freq(x, 1).unwrap();
        assert_eq!(tape.value(y), tape.value(x));
        let z = tape.max_pool_freq(x, 2).unwrap();
        assert_eq!(tape.value(z).shape(), &[1, 1, 3, 3]);
        // row 0 = [0, 2, 4, 1, 3] -> [2, 4, 3]
        assert_eq!(&tape.value(z).data()[..3], &[2.0, 4.0, 3.0]);
        assert!(tape.max_pool_freq(x, 0).is_err());
    }
}
