use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{BackwardOp, Mode, Tape, Var};
use crate::tensor::Tensor;

struct Dropout {
    input: Var,
    mask: Vec<f64>,
}

impl BackwardOp for Dropout {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, _tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(grad.iter().zip(&self.mask).map(|(g, m)| g * m).collect())]
    }
}

impl Tape {
    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1 / (1 - rate)`.
    /// Eval mode returns `x` itself.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must be in [0, 1), got {rate}"
            )));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - rate);
        let input = self.value(x);
        let mask: Vec<f64> = (0..input.len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        let data = input.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let out = Tensor::new(input.shape().to_vec(), data)?;
        Ok(self.push(out, Dropout { input: x, mask }))
    }
}
