use crate::error::{Error, Result};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

pub const PROB_CLAMP: f64 = 1e-7;

struct Bce {
    pred: Var,
    target: Vec<f64>,
    /// per-cell weight, 1/n for counted cells and 0 for masked ones
    weight: Vec<f64>,
}

impl BackwardOp for Bce {
    fn inputs(&self) -> Vec<Var> {
        vec![self.pred]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let p = tape.value(self.pred).data();
        // The clamp guards the logarithm only; the gradient is taken at the
        // clamped probability so saturated wrong predictions still get a signal.
        let g = p
            .iter()
            .zip(&self.target)
            .zip(&self.weight)
            .map(|((&p, &y), &w)| {
                if w == 0.0 {
                    return 0.0;
                }
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                grad[0] * w * (p - y) / (p * (1.0 - p))
            })
            .collect();
        vec![Some(g)]
    }
}

impl Tape {
    /// Mean binary cross-entropy over the unmasked cells of `pred`.
    ///
    /// `pred` and `target` are `[batch, time, classes]`; `frame_mask`, when
    /// given, is `[batch, time]` with 1 for valid frames and 0 for padding.
    pub fn bce_loss(&mut self, pred: Var, target: &Tensor, frame_mask: Option<&Tensor>) -> Result<Var> {
        const OP: &str = "bce_loss";
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::shape(OP, "target", p.shape(), target.shape()));
        }
        let rank = p.rank();
        if rank == 0 {
            return Err(Error::shape(OP, "rank of prediction", ">= 1", 0));
        }
        let classes = p.shape()[rank - 1];
        let frames = p.len() / classes;
        let frame_weights: Vec<f64> = match frame_mask {
            Some(m) => {
                if m.shape() != &p.shape()[..rank - 1] {
                    return Err(Error::shape(OP, "frame mask", &p.shape()[..rank - 1], m.shape()));
                }
                m.data().iter().map(|&v| if v != 0.0 { 1.0 } else { 0.0 }).collect()
            }
            None => vec![1.0; frames],
        };
        let valid: f64 = frame_weights.iter().sum::<f64>() * classes as f64;
        if valid == 0.0 {
            return Err(Error::InvalidArgument("bce_loss: every frame is masked".into()));
        }
        let weight: Vec<f64> = frame_weights
            .iter()
            .flat_map(|&w| std::iter::repeat_n(w / valid, classes))
            .collect();
        let mut total = 0.0;
        for ((&p, &y), &w) in p.data().iter().zip(target.data()).zip(&weight) {
            if w == 0.0 {
                continue;
            }
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            total -= w * (y * p.ln() + (1.0 - y) * (1.0 - p).ln());
        }
        Ok(self.push(
            Tensor::scalar(total),
            Bce {
                pred,
                target: target.data().to_vec(),
                weight,
            },
        ))
    }
}
