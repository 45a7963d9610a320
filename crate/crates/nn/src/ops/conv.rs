//! Dilated two-dimensional convolution over `[batch, channels, time, freq]` maps.
//!
//! The output at position `p` is `sum_t F(p - r*t) * K(t)` for kernel offsets
//! `t` in `[-m, m]` on each axis, which is a true convolution (the kernel is
//! flipped relative to cross-correlation). Kernel element `K(t)` is stored at
//! index `t + m`. Inputs are zero padded by `r*m` on each side, so with stride
//! one the spatial size of the output equals that of the input. A dilation
//! rate of one gives the conventional convolution.

use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DilatedConvSpec {
    pub kernel_time: usize,
    pub kernel_freq: usize,
    pub dilation_time: usize,
    pub dilation_freq: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl DilatedConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        dilation: (usize, usize),
    ) -> Result<Self> {
        let spec = Self {
            kernel_time: kernel.0,
            kernel_freq: kernel.1,
            dilation_time: dilation.0,
            dilation_freq: dilation.1,
            in_channels,
            out_channels,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Same kernel with both dilation rates set to one.
    pub fn conventional(self) -> Self {
        Self {
            dilation_time: 1,
            dilation_freq: 1,
            ..self
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel_time,
            self.kernel_freq,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (axis, size) in [("time", self.kernel_time), ("freq", self.kernel_freq)] {
            if size == 0 || size % 2 == 0 {
                return Err(Error::Kernel {
                    op: "dilated_conv2d",
                    axis,
                    size,
                });
            }
        }
        if self.dilation_time == 0 || self.dilation_freq == 0 {
            return Err(Error::InvalidArgument(
                "dilated_conv2d: dilation rates must be at least 1".into(),
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(
                "dilated_conv2d: channel counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy)]
struct Geometry {
    batch: usize,
    cin: usize,
    cout: usize,
    time: usize,
    freq: usize,
    spec: DilatedConvSpec,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.cin * self.spec.kernel_time * self.spec.kernel_freq
    }

    fn plane(&self) -> usize {
        self.time * self.freq
    }

    /// Visits every `(column row, output index, input index)` triple for one
    /// batch item, grouped into contiguous runs along the frequency axis.
    fn for_each_tap(&self, mut visit: impl FnMut(usize, usize, usize, usize)) {
        let s = self.spec;
        let (mt, mf) = ((s.kernel_time / 2) as isize, (s.kernel_freq / 2) as isize);
        let (t, f) = (self.time as isize, self.freq as isize);
        for c in 0..self.cin {
            for i in 0..s.kernel_time {
                let shift_t = s.dilation_time as isize * (i as isize - mt);
                for j in 0..s.kernel_freq {
                    let shift_f = s.dilation_freq as isize * (j as isize - mf);
                    let row = (c * s.kernel_time + i) * s.kernel_freq + j;
                    // output p2 reads input p2 - shift_f, valid when 0 <= p2 - shift_f < f
                    let p2_lo = shift_f.max(0);
                    let p2_hi = (f + shift_f).min(f);
                    if p2_lo >= p2_hi {
                        continue;
                    }
                    let run = (p2_hi - p2_lo) as usize;
                    for p1 in 0..t {
                        let s1 = p1 - shift_t;
                        if s1 < 0 || s1 >= t {
                            continue;
                        }
                        let out_idx = (p1 * f + p2_lo) as usize;
                        let in_idx = ((c as isize * t + s1) * f + p2_lo - shift_f) as usize;
                        visit(row, out_idx, in_idx, run);
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f64], cols: &mut [f64]) {
        cols.fill(0.0);
        let plane = self.plane();
        self.for_each_tap(|row, out_idx, in_idx, run| {
            let dst = row * plane + out_idx;
            cols[dst..dst + run].copy_from_slice(&input[in_idx..in_idx + run]);
        });
    }

    fn col2im(&self, cols: &[f64], grad_input: &mut [f64]) {
        let plane = self.plane();
        self.for_each_tap(|row, out_idx, in_idx, run| {
            let src = row * plane + out_idx;
            for (g, c) in grad_input[in_idx..in_idx + run].iter_mut().zip(&cols[src..src + run]) {
                *g += c;
            }
        });
    }
}

struct Conv {
    input: Var,
    weight: Var,
    bias: Option<Var>,
    geom: Geometry,
}

impl BackwardOp for Conv {
    fn inputs(&self) -> Vec<Var> {
        let mut v = vec![self.input, self.weight];
        v.extend(self.bias);
        v
    }

    fn backward(&self, tape: &Tape, _out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let g = self.geom;
        let input = tape.value(self.input).data();
        let weight = tape.value(self.weight).data();
        let (rows, plane) = (g.col_rows(), g.plane());
        let need_input = tape.requires_grad(self.input);
        let need_weight = tape.requires_grad(self.weight);

        let mut grad_input = need_input.then(|| vec![0.0; input.len()]);
        let mut grad_weight = need_weight.then(|| vec![0.0; weight.len()]);
        let mut cols = vec![0.0; rows * plane];
        let in_stride = g.cin * plane;
        let out_stride = g.cout * plane;
        let w = Mat::row_major(weight, g.cout, rows);

        for b in 0..g.batch {
            let gout = Mat::row_major(&grad[b * out_stride..(b + 1) * out_stride], g.cout, plane);
            if let Some(gw) = grad_weight.as_mut() {
                g.im2col(&input[b * in_stride..(b + 1) * in_stride], &mut cols);
                gemm(1.0, gout, Mat::row_major(&cols, rows, plane).t(), 1.0, gw);
            }
            if let Some(gi) = grad_input.as_mut() {
                gemm(1.0, w.t(), gout, 0.0, &mut cols);
                g.col2im(&cols, &mut gi[b * in_stride..(b + 1) * in_stride]);
            }
        }

        let mut grads = vec![grad_input, grad_weight];
        if self.bias.is_some() {
            let mut gb = vec![0.0; g.cout];
            for (k, chunk) in grad.chunks_exact(plane).enumerate() {
                gb[k % g.cout] += chunk.iter().sum::<f64>();
            }
            grads.push(Some(gb));
        }
        grads
    }
}

impl Tape {
    /// r-dilated convolution with zero "same" padding and stride one.
    ///
    /// `input` is `[batch, in_channels, time, freq]`, `weight` is
    /// `[out_channels, in_channels, kernel_time, kernel_freq]` and `bias`,
    /// when given, is `[out_channels]`.
    pub fn dilated_conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: &DilatedConvSpec,
    ) -> Result<Var> {
        const OP: &str = "dilated_conv2d";
        spec.validate()?;
        let x = self.value(input);
        x.expect_rank(OP, "input", 4)?;
        let &[batch, cin, time, freq] = x.shape() else { unreachable!() };
        if cin != spec.in_channels {
            return Err(Error::shape(OP, "input channels (axis 1)", spec.in_channels, cin));
        }
        let wshape = spec.weight_shape();
        let w = self.value(weight);
        w.expect_rank(OP, "weight", 4)?;
        for (axis, (&want, &got)) in ["out_channels", "in_channels", "kernel_time", "kernel_freq"]
            .iter()
            .zip(wshape.iter().zip(w.shape()))
        {
            if want != got {
                return Err(Error::shape(OP, format!("weight {axis}"), want, got));
            }
        }
        if let Some(b) = bias {
            let bt = self.value(b);
            if bt.shape() != [spec.out_channels] {
                return Err(Error::shape(OP, "bias", [spec.out_channels], bt.shape()));
            }
        }

        let geom = Geometry {
            batch,
            cin,
            cout: spec.out_channels,
            time,
            freq,
            spec: *spec,
        };
        let (rows, plane) = (geom.col_rows(), geom.plane());
        let mut out = vec![0.0; batch * geom.cout * plane];
        let mut cols = vec![0.0; rows * plane];
        let w = Mat::row_major(w.data(), geom.cout, rows);
        let bias_values = bias.map(|b| self.value(b).data());
        for b in 0..batch {
            geom.im2col(&x.data()[b * cin * plane..(b + 1) * cin * plane], &mut cols);
            let dst = &mut out[b * geom.cout * plane..(b + 1) * geom.cout * plane];
            gemm(1.0, w, Mat::row_major(&cols, rows, plane), 0.0, dst);
            if let Some(bv) = bias_values {
                for (chunk, &bk) in dst.chunks_exact_mut(plane).zip(bv) {
                    chunk.iter_mut().for_each(|v| *v += bk);
                }
            }
        }
        let out = Tensor::new(vec![batch, geom.cout, time, freq], out)?;
        Ok(self.push(
            out,
            Conv {
                input,
                weight,
                bias,
                geom,
            },
        ))
    }

    /// Conventional convolution: [`Tape::dilated_conv2d`] with both rates at one.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        spec: &DilatedConvSpec,
    ) -> Result<Var> {
        self.dilated_conv2d(input, weight, bias, &spec.conventional())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(input: Tensor, weight: Tensor, bias: Option<Tensor>, spec: &DilatedConvSpec) -> Tensor {
        let mut tape = Tape::new();
        let x = tape.constant(input);
        let w = tape.constant(weight);
        let b = bias.map(|b| tape.constant(b));
        let y = tape.dilated_conv2d(x, w, b, spec).unwrap();
        tape.value(y).clone()
    }

    #[test]
    fn three_tap_time_kernel_sees_three_frames() {
        let spec = DilatedConvSpec::new(1, 1, (3, 1), (1, 1)).unwrap();
        let weight = Tensor::full(&[1, 1, 3, 1], 1.0);
        let mut x = vec![0.0; 9];
        x[4] = 1.0;
        let out = run(Tensor::new(vec![1, 1, 9, 1], x).unwrap(), weight, None, &spec);
        let touched: Vec<usize> = (0..9).filter(|&i| out.data()[i] != 0.0).collect();
        assert_eq!(touched, vec![3, 4, 5]);
    }

    #[test]
    fn delta_kernel_is_identity_for_any_rate() {
        for r in 1..=4 {
            let spec = DilatedConvSpec::new(1, 1, (3, 3), (r, r)).unwrap();
            let mut k = vec![0.0; 9];
            k[4] = 1.0;
            let x = Tensor::from_fn(&[2, 1, 5, 6], |i| (i as f64 * 0.37).sin());
            let out = run(x.clone(), Tensor::new(vec![1, 1, 3, 3], k).unwrap(), None, &spec);
            assert_eq!(out, x.reshape(vec![2, 1, 5, 6]).unwrap());
        }
    }

    #[test]
    fn averaging_kernel_on_constant_input() {
        let spec = DilatedConvSpec::new(1, 1, (3, 3), (1, 1)).unwrap();
        let k = Tensor::full(&[1, 1, 3, 3], 1.0 / 9.0);
        let out = run(Tensor::full(&[1, 1, 4, 5], 2.0), k, None, &spec);
        let at = |t: usize, f: usize| out.data()[t * 5 + f];
        // interior keeps all 9 taps
        assert!((at(1, 2) - 2.0).abs() < 1e-12);
        assert!((at(2, 3) - 2.0).abs() < 1e-12);
        // edge keeps 6 taps, corner keeps 4
        assert!((at(0, 2) - 2.0 * 6.0 / 9.0).abs() < 1e-12);
        assert!((at(0, 0) - 2.0 * 4.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn single_pixel_input() {
        let spec = DilatedConvSpec::new(1, 1, (3, 3), (1, 1)).unwrap();
        let k = Tensor::from_fn(&[1, 1, 3, 3], |i| i as f64 + 1.0);
        let out = run(
            Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap(),
            k,
            Some(Tensor::new(vec![1], vec![0.5]).unwrap()),
            &spec,
        );
        assert_eq!(out.data(), &[5.0 * 3.0 + 0.5]);
    }

    #[test]
    fn kernel_is_flipped_relative_to_correlation() {
        // K(t=-1) = 1 at index 0: output(p) = F(p + 1)
        let spec = DilatedConvSpec::new(1, 1, (3, 1), (1, 1)).unwrap();
        let k = Tensor::new(vec![1, 1, 3, 1], vec![1.0, 0.0, 0.0]).unwrap();
        let x = Tensor::new(vec![1, 1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(run(x, k, None, &spec).data(), &[2.0, 3.0, 4.0, 0.0]);
    }

    #[test]
    fn rejects_bad_shapes_and_kernels() {
        assert!(matches!(
            DilatedConvSpec::new(1, 1, (2, 3), (1, 1)),
            Err(Error::Kernel { axis: "time", .. })
        ));
        assert!(DilatedConvSpec::new(1, 1, (3, 3), (0, 1)).is_err());

        let spec = DilatedConvSpec::new(2, 1, (3, 3), (1, 1)).unwrap();
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[1, 3, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 2, 3, 3]));
        let err = tape.dilated_conv2d(x, w, None, &spec).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");

        let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
        let w = tape.constant(Tensor::zeros(&[1, 2, 3, 5]));
        let err = tape.dilated_conv2d(x, w, None, &spec).unwrap_err();
        assert!(err.to_string().contains("kernel_freq"), "{err}");
    }
}
