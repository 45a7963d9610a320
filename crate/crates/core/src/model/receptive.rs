//! Receptive field of a stack of stride-one dilated convolutions.

use dcrnn_nn::Tensor;

use super::config::ModelConfig;
use super::crnn::Crnn;
use crate::error::{Result, SedError};

/// `1 + sum_l (kernel - 1) * r_l` input frames; 1 for an empty stack.
pub fn receptive_field(kernel: usize, rates: &[usize]) -> Result<usize> {
    if kernel.is_multiple_of(2) {
        return Err(SedError::Config(format!("kernel size {kernel} must be odd")));
    }
    if rates.contains(&0) {
        return Err(SedError::Config("dilation rates must be at least 1".into()));
    }
    Ok(1 + rates.iter().map(|r| (kernel - 1) * r).sum::<usize>())
}

/// Span (first to last, inclusive) of the input frames whose perturbation
/// changes the conv-stack output at `frame_index`, measured on a copy of `model` with strictly positive conv
/// weights and BN scales, zero biases and shifts, and unit running
/// statistics, evaluated with a zero baseline input of `n_frames` frames.
///
/// With every weight positive no contribution can cancel. The span rather
/// than the count is reported because a stack whose rates are all above one
/// depends on a sparse set of frames: `2-4-8` reads 15 frames spread over 29.
/// Returns 0 if nothing depends on the input.
pub fn empirical_receptive_field(model: &Crnn, n_frames: usize, frame_index: usize) -> Result<usize> {
    if frame_index >= n_frames {
        return Err(SedError::Config(format!(
            "frame {frame_index} outside a {n_frames}-frame input"
        )));
    }
    let mut probe = model.clone();
    for (name, p) in probe.param_names().to_vec().into_iter().zip(probe.params_mut()) {
        if name.starts_with("conv") && name.ends_with(".weight") {
            p.data_mut().iter_mut().for_each(|w| *w = w.abs() + 0.05);
        } else if name.starts_with("bn") && name.ends_with(".gamma") {
            p.data_mut().iter_mut().for_each(|g| *g = g.abs() + 0.05);
        } else if name.starts_with("conv") || name.starts_with("bn") {
            p.data_mut().iter_mut().for_each(|b| *b = 0.0);
        }
    }
    for st in probe.bn_stats_mut() {
        st.mean.iter_mut().for_each(|m| *m = 0.0);
        st.var.iter_mut().for_each(|v| *v = 1.0);
    }

    let n_mels = model.config().n_mels;
    // item j perturbs input frame j; the last item is the zero baseline
    let batch = n_frames + 1;
    let input = Tensor::from_fn(&[batch, n_frames, n_mels], |i| {
        let (item, frame) = (i / (n_frames * n_mels), (i / n_mels) % n_frames);
        if item == frame {
            1.0
        } else {
            0.0
        }
    });
    let out = probe.conv_features(&input)?;
    let &[_, c, t, f] = out.shape() else { unreachable!() };
    let at = |item: usize| -> Vec<f64> {
        (0..c)
            .flat_map(|ch| {
                let base = ((item * c + ch) * t + frame_index) * f;
                out.data()[base..base + f].to_vec()
            })
            .collect()
    };
    let baseline = at(n_frames);
    let mut dependent = (0..n_frames).filter(|&j| at(j) != baseline);
    Ok(match dependent.next() {
        None => 0,
        Some(first) => dependent.next_back().unwrap_or(first) - first + 1,
    })
}

/// A one-filter model of `config`'s conv geometry, used to measure the
/// receptive field independently of trained weights.
pub fn probe_model(kernel: usize, rates: &[usize], n_mels: usize) -> Result<Crnn> {
    let schedule = super::DilationSchedule::new(rates.to_vec())?;
    let mut config = ModelConfig::from_schedule(&schedule, 1, n_mels, 1);
    for l in &mut config.conv_layers {
        l.kernel = (kernel, kernel);
    }
    config.blstm_hidden = 1;
    config.dropout = 0.0;
    Crnn::new(&config, 0)
}
