use std::path::Path;

use dcrnn_nn::checkpoint::{self, CHECKPOINT_MAGIC};
use dcrnn_nn::{DilatedConvSpec, LstmVars, Mode, RunningStats, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::{Result, SedError};

/// Where each layer's tensors sit in [`Crnn::params`].
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    conv: Vec<ConvSlots>,
    blstm: [usize; 6],
    out: [usize; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvSlots {
    weight: usize,
    bias: Option<usize>,
    gamma: usize,
    beta: usize,
}

/// Exact trainable-parameter counts, per layer and in total.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub layers: Vec<(String, usize)>,
    pub total: usize,
}

/// Conv blocks (conv, ReLU, frequency max pool, batch norm, dropout), a
/// BLSTM over the flattened per-frame maps, and a per-frame sigmoid layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Crnn {
    config: ModelConfig,
    names: Vec<String>,
    params: Vec<Tensor>,
    bn_stats: Vec<RunningStats>,
    layout: Layout,
}

/// Parameter handles and outputs of one forward pass.
pub struct Forward {
    pub params: Vec<Var>,
    /// `[batch, channels, time, freq]` output of the last conv block.
    pub conv_out: Var,
    /// `[batch, time, n_classes]` probabilities.
    pub output: Var,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound))
}

impl Crnn {
    /// Glorot-uniform conv and output weights, `U(+-1/sqrt(hidden))` LSTM
    /// matrices, zero biases except the LSTM forget gate (1), unit BN scale.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut push = |name: String, t: Tensor| {
            names.push(name);
            params.push(t);
            params.len() - 1
        };

        let mut conv = Vec::new();
        let mut cin = 1;
        for (i, l) in config.conv_layers.iter().enumerate() {
            let (kt, kf) = l.kernel;
            let fan_in = cin * kt * kf;
            let fan_out = l.filters * kt * kf;
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weight = push(format!("conv{i}.weight"), uniform(&mut rng, &[l.filters, cin, kt, kf], bound));
            let bias = config
                .conv_bias
                .then(|| push(format!("conv{i}.bias"), Tensor::zeros(&[l.filters])));
            let gamma = push(format!("bn{i}.gamma"), Tensor::full(&[l.filters], 1.0));
            let beta = push(format!("bn{i}.beta"), Tensor::zeros(&[l.filters]));
            conv.push(ConvSlots {
                weight,
                bias,
                gamma,
                beta,
            });
            cin = l.filters;
        }

        let (f, h) = (config.sequence_features(), config.blstm_hidden);
        let bound = 1.0 / (h as f64).sqrt();
        let mut blstm = [0; 6];
        for (d, dir) in ["fwd", "bwd"].iter().enumerate() {
            blstm[3 * d] = push(format!("blstm.{dir}.w_ih"), uniform(&mut rng, &[4 * h, f], bound));
            blstm[3 * d + 1] = push(format!("blstm.{dir}.w_hh"), uniform(&mut rng, &[4 * h, h], bound));
            let bias = Tensor::from_fn(&[4 * h], |k| if (h..2 * h).contains(&k) { 1.0 } else { 0.0 });
            blstm[3 * d + 2] = push(format!("blstm.{dir}.bias"), bias);
        }

        let c = config.n_classes;
        let bound = (6.0 / (2 * h + c) as f64).sqrt();
        let out = [
            push("out.weight".into(), uniform(&mut rng, &[c, 2 * h], bound)),
            push("out.bias".into(), Tensor::zeros(&[c])),
        ];

        Ok(Self {
            config: config.clone(),
            names,
            params,
            bn_stats: config
                .conv_layers
                .iter()
                .map(|l| RunningStats::new(l.filters))
                .collect(),
            layout: Layout { conv, blstm, out },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn bn_stats(&self) -> &[RunningStats] {
        &self.bn_stats
    }

    pub fn bn_stats_mut(&mut self) -> &mut [RunningStats] {
        &mut self.bn_stats
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.params[i])
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.names.iter().position(|n| n == name).map(move |i| &mut self.params[i])
    }

    pub fn count_params(&self) -> ParamCount {
        let size = |i: usize| self.params[i].len();
        let mut layers = Vec::new();
        for (i, s) in self.layout.conv.iter().enumerate() {
            layers.push((format!("conv{i}"), size(s.weight) + s.bias.map_or(0, size)));
            layers.push((format!("bn{i}"), size(s.gamma) + size(s.beta)));
        }
        layers.push(("blstm".into(), self.layout.blstm.iter().map(|&i| size(i)).sum()));
        layers.push(("output".into(), self.layout.out.iter().map(|&i| size(i)).sum()));
        let total = layers.iter().map(|(_, n)| n).sum();
        ParamCount { layers, total }
    }

    /// Runs the conv stack on `input` (`[batch, time, n_mels]`) and returns
    /// `[batch, channels, time, freq]`. Batch norm uses and, in train mode,
    /// updates `stats`.
    fn conv_stack<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        input: &Tensor,
        stats: &mut [RunningStats],
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let shape = input.shape();
        if shape.len() != 3 || shape[2] != self.config.n_mels {
            return Err(SedError::Data(format!(
                "model input must be [batch, time, {}], got {shape:?}",
                self.config.n_mels
            )));
        }
        let x = input.clone().reshape(vec![shape[0], 1, shape[1], shape[2]])?;
        let mut h = tape.constant(x);
        let mut cin = 1;
        for ((l, s), st) in self.config.conv_layers.iter().zip(&self.layout.conv).zip(stats.iter_mut()) {
            let spec = DilatedConvSpec::new(cin, l.filters, l.kernel, l.dilation)?;
            h = tape.dilated_conv2d(h, vars[s.weight], s.bias.map(|b| vars[b]), &spec)?;
            h = tape.relu(h);
            h = tape.max_pool_freq(h, l.pool_freq)?;
            h = tape.batch_norm(h, vars[s.gamma], vars[s.beta], st, mode)?;
            h = tape.dropout(h, self.config.dropout, mode, rng)?;
            cin = l.filters;
        }
        Ok(h)
    }

    fn head(&self, tape: &mut Tape, vars: &[Var], conv_out: Var) -> Result<Var> {
        let seq = tape.to_sequence(conv_out)?;
        let b = &self.layout.blstm;
        let fwd = LstmVars {
            w_ih: vars[b[0]],
            w_hh: vars[b[1]],
            bias: vars[b[2]],
        };
        let bwd = LstmVars {
            w_ih: vars[b[3]],
            w_hh: vars[b[4]],
            bias: vars[b[5]],
        };
        let h = tape.blstm(seq, fwd, bwd)?;
        Ok(tape.dense_sigmoid(h, vars[self.layout.out[0]], vars[self.layout.out[1]])?)
    }

    /// Full forward pass with parameters registered on `tape` for
    /// differentiation. In train mode the running BN statistics are updated.
    pub fn forward<R: Rng + ?Sized>(&mut self, tape: &mut Tape, input: &Tensor, mode: Mode, rng: &mut R) -> Result<Forward> {
        let params: Vec<Var> = self.params.iter().map(|p| tape.param(p.clone())).collect();
        self.forward_with(tape, params, input, mode, rng)
    }

    /// [`Crnn::forward`] with caller-supplied parameter nodes, one per entry
    /// of [`Crnn::params`] and of the same shapes; the stored parameter
    /// values are not read.
    pub fn forward_with<R: Rng + ?Sized>(
        &mut self,
        tape: &mut Tape,
        params: Vec<Var>,
        input: &Tensor,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Forward> {
        if params.len() != self.params.len() {
            return Err(SedError::Config(format!(
                "{} parameter nodes for {} parameters",
                params.len(),
                self.params.len()
            )));
        }
        for ((v, p), name) in params.iter().zip(&self.params).zip(&self.names) {
            if tape.value(*v).shape() != p.shape() {
                return Err(SedError::Data(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    tape.value(*v).shape(),
                    p.shape()
                )));
            }
        }
        let mut stats = std::mem::take(&mut self.bn_stats);
        let conv_out = self.conv_stack(tape, &params, input, &mut stats, mode, rng);
        self.bn_stats = stats;
        let conv_out = conv_out?;
        let output = self.head(tape, &params, conv_out)?;
        Ok(Forward {
            params,
            conv_out,
            output,
        })
    }

    /// Eval-mode probabilities `[batch, time, n_classes]` without gradient bookkeeping.
    pub fn predict(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let mut stats = self.bn_stats.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let conv_out = self.conv_stack(&mut tape, &vars, input, &mut stats, Mode::Eval, &mut rng)?;
        let out = self.head(&mut tape, &vars, conv_out)?;
        Ok(tape.value(out).clone())
    }

    /// Eval-mode output of the conv stack, `[batch, channels, time, freq]`.
    pub fn conv_features(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.clone())).collect();
        let mut stats = self.bn_stats.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let out = self.conv_stack(&mut tape, &vars, input, &mut stats, Mode::Eval, &mut rng)?;
        Ok(tape.value(out).clone())
    }

    /// Parameters and BN running statistics as named tensors.
    pub fn records(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.names.iter().cloned().zip(self.params.iter().cloned()).collect();
        for (i, st) in self.bn_stats.iter().enumerate() {
            let n = st.mean.len();
            out.push((format!("bn{i}.running_mean"), Tensor::new(vec![n], st.mean.clone()).expect("stats shape")));
            out.push((format!("bn{i}.running_var"), Tensor::new(vec![n], st.var.clone()).expect("stats shape")));
        }
        out
    }

    /// Rebuilds a model from [`Crnn::records`]; every expected record must be
    /// present with the shape `config` implies. Unknown records are ignored.
    pub fn from_records(config: &ModelConfig, records: &[(String, Tensor)]) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        let find = |name: &str, shape: &[usize]| -> Result<Tensor> {
            let t = records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| SedError::Data(format!("checkpoint lacks {name}")))?;
            if t.shape() != shape {
                return Err(SedError::Data(format!(
                    "checkpoint {name} has shape {:?}, config implies {shape:?}",
                    t.shape()
                )));
            }
            t.check_finite()?;
            Ok(t.clone())
        };
        for i in 0..model.params.len() {
            let shape = model.params[i].shape().to_vec();
            model.params[i] = find(&model.names[i], &shape)?;
        }
        for (i, st) in model.bn_stats.iter_mut().enumerate() {
            let n = st.mean.len();
            st.mean = find(&format!("bn{i}.running_mean"), &[n])?.into_data();
            st.var = find(&format!("bn{i}.running_var"), &[n])?.into_data();
        }
        Ok(model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let records = self.records();
        let refs: Vec<(&str, &Tensor)> = records.iter().map(|(n, t)| (n.as_str(), t)).collect();
        checkpoint::save(path, CHECKPOINT_MAGIC, &refs)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>, config: &ModelConfig) -> Result<Self> {
        Self::from_records(config, &checkpoint::load(path, CHECKPOINT_MAGIC)?)
    }
}
