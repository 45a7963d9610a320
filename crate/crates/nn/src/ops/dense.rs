use crate::error::{Error, Result};
use crate::gemm::{gemm, Mat};
use crate::tape::{BackwardOp, Tape, Var};
use crate::tensor::Tensor;

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

struct DenseSigmoid {
    x: Var,
    w: Var,
    b: Var,
    rows: usize,
    feat: usize,
    classes: usize,
}

impl BackwardOp for DenseSigmoid {
    fn inputs(&self) -> Vec<Var> {
        vec![self.x, self.w, self.b]
    }

    fn backward(&self, tape: &Tape, out: &Tensor, grad: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (rows, f, c) = (self.rows, self.feat, self.classes);
        let dz: Vec<f64> = out
            .data()
            .iter()
            .zip(grad)
            .map(|(y, g)| g * y * (1.0 - y))
            .collect();
        let dz_m = Mat::row_major(&dz, rows, c);
        let x = tape.value(self.x).data();
        let w = tape.value(self.w).data();
        let mut gw = vec![0.0; c * f];
        gemm(1.0, dz_m.t(), Mat::row_major(x, rows, f), 0.0, &mut gw);
        let mut gb = vec![0.0; c];
        for row in dz.chunks_exact(c) {
            gb.iter_mut().zip(row).for_each(|(a, v)| *a += v);
        }
        let gx = tape.requires_grad(self.x).then(|| {
            let mut gx = vec![0.0; rows * f];
            gemm(1.0, dz_m, Mat::row_major(w, c, f), 0.0, &mut gx);
            gx
        });
        vec![gx, Some(gw), Some(gb)]
    }
}

impl Tape {
    /// Per-frame affine map followed by the logistic sigmoid:
    /// `x: [batch, time, feat]`, `w: [classes, feat]`, `b: [classes]`.
    pub fn dense_sigmoid(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        const OP: &str = "dense_sigmoid";
        let xv = self.value(x);
        xv.expect_rank(OP, "input", 3)?;
        let &[batch, time, feat] = xv.shape() else { unreachable!() };
        let wv = self.value(w);
        wv.expect_rank(OP, "weight", 2)?;
        if wv.shape()[1] != feat {
            return Err(Error::shape(OP, "weight columns (feature width)", feat, wv.shape()[1]));
        }
        let classes = wv.shape()[0];
        if self.value(b).shape() != [classes] {
            return Err(Error::shape(OP, "bias", [classes], self.value(b).shape()));
        }
        let rows = batch * time;
        let mut out = vec![0.0; rows * classes];
        gemm(
            1.0,
            Mat::row_major(xv.data(), rows, feat),
            Mat::row_major(wv.data(), classes, feat).t(),
            0.0,
            &mut out,
        );
        let bias = self.value(b).data();
        for row in out.chunks_exact_mut(classes) {
            for (v, bk) in row.iter_mut().zip(bias) {
                *v = sigmoid(*v + bk);
            }
        }
        let out = Tensor::new(vec![batch, time, classes], out)?;
        Ok(self.push(
            out,
            DenseSigmoid {
                x,
                w,
                b,
                rows,
                feat,
                classes,
            },
        ))
    }
}
