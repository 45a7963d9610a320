//! Unidirectional LSTM layer and its bidirectional composition.
//!
//! Gate layout along the `4 * hidden` axis is input, forget, candidate, output.
//! Hidden and cell states start at zero for every sequence.

use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

/// Parameters of one LSTM direction on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LstmVars {
    /// `[4 * hidden, input]`
    pub w_ih: Var,
    /// `[4 * hidden, hidden]`
    pub w_hh: Var,
    /// `[4 * hidden]`
    pub bias: Var,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `[B, T, K]` -> `[T, B, K]` (or back, with the roles of the first two axes swapped).
fn swap_leading(data: &[f64], a: usize, b: usize, k: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for i in 0..a {
        for j in 0..b {
            let src = (i * b + j) * k;
            let dst = (j * a + i) * k;
            out[dst..dst + k].copy_from_slice(&data[src..src + k]);
        }
    }
    out
}

struct Dims {
    batch: usize,
    time: usize,
    input: usize,
    hidden: usize,
    reverse: bool,
}

impl Dims {
    fn step_time(&self, step: usize) -> usize {
        if self.reverse {
            self.time - 1 - step
        } else {
            step
        }
    }
}

struct Lstm {
    x: Var,
    w: LstmVars,
    dims: Dims,
    /// input in `[T, B, I]` layout
    xt: Vec<f64>,
    /// activated gates, `[T, B, 4H]`
    acts: Vec<f64>,
    /// cell states and their tanh, `[T, B, H]`
    cells: Vec<f64>,
    cells_tanh: Vec<f64>,
    hidden: Vec<f64>,
}

impl BackwardOp for Lstm {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.w.w_ih, self.w.w_hh, self.w.bias]
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let d = &self.dims;
        let (b, t, ni, h) = (d.batch, d.time, d.input, d.hidden);
        let g4 = 4 * h;
        let slab = b * h;
        let w_ih = tape.value(self.w.w_ih).data();
        let w_hh = tape.value(self.w.w_hh).data();

        let grad_t = swap_leading(grad, b, t, h);
        let mut dz = vec![0.0; t * b * g4];
        let mut h_prev = vec![0.0; t * slab];
        let mut dh_next = vec![0.0; slab];
        let mut dc_next = vec![0.0; slab];

        for step in (0..t).rev() {
            let ti = d.step_time(step);
            let prev = (step > 0).then(|| d.step_time(step - 1));
            if let Some(p) = prev {
                h_prev[ti * slab..(ti + 1) * slab]
                    .copy_from_slice(&self.hidden[p * slab..(p + 1) * slab]);
            }
            for bi in 0..b {
                let a = &self.acts[(ti * b + bi) * g4..(ti * b + bi + 1) * g4];
                let z = &mut dz[(ti * b + bi) * g4..(ti * b + bi + 1) * g4];
                let off = (ti * b + bi) * h;
                for k in 0..h {
                    let (ig, fg, gg, og) = (a[k], a[h + k], a[2 * h + k], a[3 * h + k]);
                    let tc = self.cells_tanh[off + k];
                    let c_prev = prev.map_or(0.0, |p| self.cells[(p * b + bi) * h + k]);
                    let dh = grad_t[off + k] + dh_next[bi * h + k];
                    let dc = dc_next[bi * h + k] + dh * og * (1.0 - tc * tc);
                    z[k] = dc * gg * ig * (1.0 - ig);
                    z[h + k] = dc * c_prev * fg * (1.0 - fg);
                    z[2 * h + k] = dc * ig * (1.0 - gg * gg);
                    z[3 * h + k] = dh * tc * og * (1.0 - og);
                    dc_next[bi * h + k] = dc * fg;
                }
            }
            let dz_t = Mat::row_major(&dz[ti * b * g4..(ti + 1) * b * g4], b, g4);
            gemm(1.0, dz_t, Mat::row_major(w_hh, g4, h), 0.0, &mut dh_next);
        }

        let rows = t * b;
        let dz_all = Mat::row_major(&dz, rows, g4);
        let mut g_ih = vec![0.0; g4 * ni];
        gemm(1.0, dz_all.t(), Mat::row_major(&self.xt, rows, ni), 0.0, &mut g_ih);
        let mut g_hh = vec![0.0; g4 * h];
        gemm(1.0, dz_all.t(), Mat::row_major(&h_prev, rows, h), 0.0, &mut g_hh);
        let mut g_b = vec![0.0; g4];
        for row in dz.chunks_exact(g4) {
            g_b.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        let g_x = tape.requires_grad(self.x).then(|| {
            let mut gx = vec![0.0; rows * ni];
            gemm(1.0, dz_all, Mat::row_major(w_ih, g4, ni), 0.0, &mut gx);
            swap_leading(&gx, t, b, ni)
        });
        vec![g_x, Some(g_ih), Some(g_hh), Some(g_b)]
    }
}

impl Tape {
    /// Runs one LSTM direction over `x: [batch, time, input]`, returning the
    /// hidden state at every step as `[batch, time, hidden]`. With `reverse`
    /// the sequence is consumed from the last step to the first, and output
    /// position `t` holds the state after reading `x[t..]`.
    pub fn lstm(&mut self, x: Var, w: LstmVars, reverse: bool) -> Result<Var> {
        const OP: &str = "lstm";
        let xv = self.value(x);
        xv.expect_rank(OP, "input", 3)?;
        let &[b, t, ni] = xv.shape() else { unreachable!() };
        let wih = self.value(w.w_ih);
        wih.expect_rank(OP, "w_ih", 2)?;
        if !wih.shape()[0].is_multiple_of(4) {
            return Err(Error::shape(OP, "w_ih rows", "multiple of 4", wih.shape()[0]));
        }
        let h = wih.shape()[0] / 4;
        let g4 = 4 * h;
        if wih.shape()[1] != ni {
            return Err(Error::shape(OP, "w_ih columns (input width)", ni, wih.shape()[1]));
        }
        if self.value(w.w_hh).shape() != [g4, h] {
            return Err(Error::shape(OP, "w_hh", [g4, h], self.value(w.w_hh).shape()));
        }
        if self.value(w.bias).shape() != [g4] {
            return Err(Error::shape(OP, "bias", [g4], self.value(w.bias).shape()));
        }
        let dims = Dims {
            batch: b,
            time: t,
            input: ni,
            hidden: h,
            reverse,
        };

        let xt = swap_leading(xv.data(), b, t, ni);
        let rows = t * b;
        let mut acts = vec![0.0; rows * g4];
        gemm(
            1.0,
            Mat::row_major(&xt, rows, ni),
            Mat::row_major(wih.data(), g4, ni).t(),
            0.0,
            &mut acts,
        );
        let bias = self.value(w.bias).data();
        for row in acts.chunks_exact_mut(g4) {
            row.iter_mut().zip(bias).for_each(|(a, b)| *a += b);
        }

        let w_hh = Mat::row_major(self.value(w.w_hh).data(), g4, h).t();
        let slab = b * h;
        let mut cells = vec![0.0; rows * h];
        let mut cells_tanh = vec![0.0; rows * h];
        let mut hidden = vec![0.0; rows * h];
        for step in 0..t {
            let ti = dims.step_time(step);
            if step > 0 {
                let p = dims.step_time(step - 1);
                let h_prev = Mat::row_major(&hidden[p * slab..(p + 1) * slab], b, h);
                gemm(1.0, h_prev, w_hh, 1.0, &mut acts[ti * b * g4..(ti + 1) * b * g4]);
            }
            for bi in 0..b {
                let a = &mut acts[(ti * b + bi) * g4..(ti * b + bi + 1) * g4];
                let off = (ti * b + bi) * h;
                for k in 0..h {
                    let ig = sigmoid(a[k]);
                    let fg = sigmoid(a[h + k]);
                    let gg = a[2 * h + k].tanh();
                    let og = sigmoid(a[3 * h + k]);
                    a[k] = ig;
                    a[h + k] = fg;
                    a[2 * h + k] = gg;
                    a[3 * h + k] = og;
                    let c_prev = if step > 0 {
                        cells[(dims.step_time(step - 1) * b + bi) * h + k]
                    } else {
                        0.0
                    };
                    let c = fg * c_prev + ig * gg;
                    let tc = c.tanh();
                    cells[off + k] = c;
                    cells_tanh[off + k] = tc;
                    hidden[off + k] = og * tc;
                }
            }
        }

        let out = Tensor::new(vec![b, t, h], swap_leading(&hidden, t, b, h))?;
        Ok(self.push(
            out,
            Lstm {
                x,
                w,
                dims,
                xt,
                acts,
                cells,
                cells_tanh,
                hidden,
            },
        ))
    }

    /// Bidirectional LSTM: forward and backward directions concatenated
    /// per step into `[batch, time, 2 * hidden]`.
    pub fn blstm(&mut self, x: Var, forward: LstmVars, backward: LstmVars) -> Result<Var> {
        let fw = self.lstm(x, forward, false)?;
        let bw = self.lstm(x, backward, true)?;
        self.concat_last(fw, bw)
    }
}
