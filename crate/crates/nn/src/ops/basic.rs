//! Elementwise ops, reductions and layout changes.

use crate::error::{Error, Result};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

struct Relu {
    input: Var,
}

impl BackwardOp for Relu {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let x = tape.value(self.input).data();
        let g = x
            .iter()
            .zip(grad)
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        vec![Some(g)]
    }
}

struct Sum {
    input: Var,
}

impl BackwardOp for Sum {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        vec![Some(vec![grad[0]; tape.value(self.input).len()])]
    }
}

struct Mul {
    a: Var,
    b: Var,
}

impl BackwardOp for Mul {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let a = tape.value(self.a).data();
        let b = tape.value(self.b).data();
        let ga = b.iter().zip(grad).map(|(b, g)| b * g).collect();
        let gb = a.iter().zip(grad).map(|(a, g)| a * g).collect();
        vec![Some(ga), Some(gb)]
    }
}

struct Affine {
    inputs: Vec<(Var, f64)>,
}

impl BackwardOp for Affine {
    fn inputs(&self) -> Vec<Var> {
        self.inputs.iter().map(|&(v, _)| v).collect()
    }

    fn backward(&self, _tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        self.inputs
            .iter()
            .map(|&(_, k)| Some(grad.iter().map(|g| g * k).collect()))
            .collect()
    }
}

/// Gather with a fixed index map: `out[i] = in[index[i]]`.
struct Permute {
    input: Var,
    index: Vec<usize>,
}

impl BackwardOp for Permute {
    fn inputs(&self) -> Vec<Var> {
        vec![self.input]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let mut g = vec![0.0; tape.value(self.input).len()];
        for (&src, &go) in self.index.iter().zip(grad) {
            g[src] += go;
        }
        vec![Some(g)]
    }
}

struct ConcatLast {
    a: Var,
    b: Var,
    width_a: usize,
    width_b: usize,
}

impl BackwardOp for ConcatLast {
    fn inputs(&self) -> Vec<Var> {
        vec![self.a, self.b]
    }

    fn backward(&self, _tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let w = self.width_a + self.width_b;
        let rows = grad.len() / w;
        let mut ga = Vec::with_capacity(rows * self.width_a);
        let mut gb = Vec::with_capacity(rows * self.width_b);
        for row in grad.chunks_exact(w) {
            ga.extend_from_slice(&row[..self.width_a]);
            gb.extend_from_slice(&row[self.width_a..]);
        }
        vec![Some(ga), Some(gb)]
    }
}

impl Tape {
    /// Elementwise `max(0, x)`.
    pub fn relu(&mut self, x: Var) -> Var {
        let input = self.value(x);
        let data = input.data().iter().map(|&v| v.max(0.0)).collect();
        let out = Tensor::new(input.shape().to_vec(), data).expect("relu shape");
        self.push(out, Relu { input: x })
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, x: Var) -> Var {
        let total = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(total), Sum { input: x })
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Mul { a, b }))
    }

    /// `ka * a + kb * b` for equally shaped tensors.
    pub fn lincomb(&mut self, ka: f64, a: Var, kb: f64, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        same_shape("lincomb", ta, tb)?;
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| ka * x + kb * y)
            .collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(
            out,
            Affine {
                inputs: vec![(a, ka), (b, kb)],
            },
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.lincomb(1.0, a, 1.0, b)
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        let input = self.value(x);
        let data = input.data().iter().map(|v| v * k).collect();
        let out = Tensor::new(input.shape().to_vec(), data).expect("scale shape");
        self.push(out, Affine { inputs: vec![(x, k)] })
    }

    /// Rearranges a `[batch, channels, time, freq]` feature map into a
    /// `[batch, time, channels * freq]` sequence, feature index `c * freq + f`.
    pub fn to_sequence(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        input.expect_rank("to_sequence", "input", 4)?;
        let &[b, c, t, f] = input.shape() else { unreachable!() };
        let mut index = Vec::with_capacity(input.len());
        for bi in 0..b {
            for ti in 0..t {
                for ci in 0..c {
                    let base = ((bi * c + ci) * t + ti) * f;
                    index.extend(base..base + f);
                }
            }
        }
        let data = index.iter().map(|&i| input.data()[i]).collect();
        let out = Tensor::new(vec![b, t, c * f], data)?;
        Ok(self.push(out, Permute { input: x, index }))
    }

    /// Reverses axis 1 of a `[batch, time, ...]` tensor.
    pub fn reverse_time(&mut self, x: Var) -> Result<Var> {
        let input = self.value(x);
        if input.rank() < 2 {
            return Err(Error::shape("reverse_time", "rank of input", ">= 2", input.rank()));
        }
        let (b, t) = (input.shape()[0], input.shape()[1]);
        let inner = input.len() / (b * t);
        let mut index = Vec::with_capacity(input.len());
        for bi in 0..b {
            for ti in (0..t).rev() {
                let base = (bi * t + ti) * inner;
                index.extend(base..base + inner);
            }
        }
        let data = index.iter().map(|&i| input.data()[i]).collect();
        let out = Tensor::new(input.shape().to_vec(), data)?;
        Ok(self.push(out, Permute { input: x, index }))
    }

    /// Concatenates two tensors along their last axis; leading axes must agree.
    pub fn concat_last(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, rb) = (ta.rank(), tb.rank());
        if ra == 0 || ra != rb || ta.shape()[..ra - 1] != tb.shape()[..rb - 1] {
            return Err(Error::shape(
                "concat_last",
                "leading axes",
                ta.shape(),
                tb.shape(),
            ));
        }
        let (wa, wb) = (ta.shape()[ra - 1], tb.shape()[rb - 1]);
        let mut data = Vec::with_capacity(ta.len() + tb.len());
        for (ra, rb) in ta.data().chunks_exact(wa).zip(tb.data().chunks_exact(wb)) {
            data.extend_from_slice(ra);
            data.extend_from_slice(rb);
        }
        let mut shape = ta.shape().to_vec();
        shape[ra - 1] = wa + wb;
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            ConcatLast {
                a,
                b,
                width_a: wa,
                width_b: wb,
            },
        ))
    }
}

pub(crate) fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, "operand shape", a.shape(), b.shape()));
    }
    Ok(())
}
