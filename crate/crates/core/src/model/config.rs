use std::fmt;
use std::str::FromStr;

use dcrnn_nn::ops::pool::pooled_width;

use crate::error::{Result, SedError};

pub const DEFAULT_KERNEL: usize = 3;
pub const PAPER_FILTERS: usize = 64;
pub const DESK_FILTERS: usize = 16;

/// Per-layer dilation rates written with hyphens, e.g. `2-4-8`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DilationSchedule(Vec<usize>);

impl DilationSchedule {
    pub fn new(rates: Vec<usize>) -> Result<Self> {
        if rates.is_empty() {
            return Err(SedError::Config("a dilation schedule needs at least one layer".into()));
        }
        if rates.contains(&0) {
            return Err(SedError::Config(format!("dilation rates must be at least 1, got {rates:?}")));
        }
        Ok(Self(rates))
    }

    /// `1-1-...-1` with `layers` entries.
    pub fn baseline(layers: usize) -> Result<Self> {
        Self::new(vec![1; layers])
    }

    /// `2-4-...-2^layers`.
    pub fn doubling(layers: usize) -> Result<Self> {
        Self::new((1..=layers).map(|i| 1 << i).collect())
    }

    pub fn rates(&self) -> &[usize] {
        &self.0
    }

    pub fn layers(&self) -> usize {
        self.0.len()
    }

    pub fn is_baseline(&self) -> bool {
        self.0.iter().all(|&r| r == 1)
    }
}

impl FromStr for DilationSchedule {
    type Err = SedError;

    fn from_str(s: &str) -> Result<Self> {
        let rates = s
            .trim()
            .split('-')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| SedError::Config(format!("bad dilation schedule {s:?}: {p:?} is not a rate")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(rates)
    }
}

impl fmt::Display for DilationSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(usize::to_string).collect();
        f.write_str(&parts.join("-"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerConfig {
    pub filters: usize,
    /// `(time, freq)`, both odd.
    pub kernel: (usize, usize),
    /// `(time, freq)` rates.
    pub dilation: (usize, usize),
    pub pool_freq: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_classes: usize,
    pub n_mels: usize,
    pub conv_layers: Vec<ConvLayerConfig>,
    pub blstm_hidden: usize,
    pub dropout: f64,
    pub conv_bias: bool,
}

/// Pool factor 2 while the frequency axis still has at least two bins, else 1.
pub fn auto_pools(n_mels: usize, layers: usize) -> Vec<usize> {
    let mut freq = n_mels;
    (0..layers)
        .map(|_| {
            let pool = if freq >= 2 { 2 } else { 1 };
            freq = pooled_width(freq, pool);
            pool
        })
        .collect()
}

impl ModelConfig {
    /// Square `kernel`, `(r, r)` dilations from `schedule`, automatic pooling,
    /// 128 BLSTM units and 10% dropout.
    pub fn from_schedule(schedule: &DilationSchedule, n_classes: usize, n_mels: usize, filters: usize) -> Self {
        let pools = auto_pools(n_mels, schedule.layers());
        Self {
            n_classes,
            n_mels,
            conv_layers: schedule
                .rates()
                .iter()
                .zip(pools)
                .map(|(&r, pool_freq)| ConvLayerConfig {
                    filters,
                    kernel: (DEFAULT_KERNEL, DEFAULT_KERNEL),
                    dilation: (r, r),
                    pool_freq,
                })
                .collect(),
            blstm_hidden: 128,
            dropout: 0.1,
            conv_bias: true,
        }
    }

    /// The same architecture with the dilation rates replaced.
    pub fn with_schedule(&self, schedule: &DilationSchedule) -> Result<Self> {
        if schedule.layers() != self.conv_layers.len() {
            return Err(SedError::Config(format!(
                "schedule {schedule} has {} layers, config has {}",
                schedule.layers(),
                self.conv_layers.len()
            )));
        }
        let mut out = self.clone();
        for (layer, &r) in out.conv_layers.iter_mut().zip(schedule.rates()) {
            layer.dilation = (r, r);
        }
        Ok(out)
    }

    /// Time-axis rates of the convolution stack.
    pub fn schedule(&self) -> DilationSchedule {
        DilationSchedule(self.conv_layers.iter().map(|l| l.dilation.0).collect())
    }

    pub fn is_baseline(&self) -> bool {
        self.conv_layers.iter().all(|l| l.dilation == (1, 1))
    }

    /// Frequency width after each layer's pooling.
    pub fn freq_widths(&self) -> Vec<usize> {
        let mut freq = self.n_mels;
        self.conv_layers
            .iter()
            .map(|l| {
                freq = pooled_width(freq, l.pool_freq.max(1));
                freq
            })
            .collect()
    }

    /// Width of the per-frame vector fed to the BLSTM.
    pub fn sequence_features(&self) -> usize {
        match (self.conv_layers.last(), self.freq_widths().last()) {
            (Some(l), Some(&f)) => l.filters * f,
            _ => self.n_mels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SedError::Config(msg));
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        if self.n_mels == 0 {
            return bad("n_mels must be positive".into());
        }
        if self.conv_layers.is_empty() {
            return bad("at least one convolutional layer is required".into());
        }
        if self.blstm_hidden == 0 {
            return bad("blstm_hidden must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        let mut freq = self.n_mels;
        for (i, l) in self.conv_layers.iter().enumerate() {
            if l.filters == 0 {
                return bad(format!("conv layer {i}: filters must be positive"));
            }
            if l.kernel.0 % 2 == 0 || l.kernel.1 % 2 == 0 {
                return bad(format!("conv layer {i}: kernel {:?} must be odd on both axes", l.kernel));
            }
            if l.dilation.0 == 0 || l.dilation.1 == 0 {
                return bad(format!("conv layer {i}: dilation rates must be at least 1"));
            }
            if l.pool_freq == 0 {
                return bad(format!("conv layer {i}: pool_freq must be at least 1"));
            }
            if l.pool_freq > freq {
                return bad(format!(
                    "conv layer {i}: frequency axis exhausted ({freq} bins left, pool {})",
                    l.pool_freq
                ));
            }
            freq = pooled_width(freq, l.pool_freq);
        }
        Ok(())
    }

    /// `key = value` lines; `#` starts a comment.
    pub fn to_text(&self) -> String {
        let join = |v: Vec<String>, sep: &str| v.join(sep);
        let first = self.conv_layers.first().copied().unwrap_or(ConvLayerConfig {
            filters: DESK_FILTERS,
            kernel: (DEFAULT_KERNEL, DEFAULT_KERNEL),
            dilation: (1, 1),
            pool_freq: 1,
        });
        let uniform_kernel = self.conv_layers.iter().all(|l| l.kernel == first.kernel);
        let kernel = if uniform_kernel {
            kernel_text(first.kernel)
        } else {
            join(self.conv_layers.iter().map(|l| kernel_text(l.kernel)).collect(), ",")
        };
        let square = self.conv_layers.iter().all(|l| l.dilation.0 == l.dilation.1);
        let mut out = String::new();
        out.push_str(&format!("n_classes = {}\n", self.n_classes));
        out.push_str(&format!("n_mels = {}\n", self.n_mels));
        out.push_str(&format!(
            "filters = {}\n",
            join(self.conv_layers.iter().map(|l| l.filters.to_string()).collect(), ",")
        ));
        out.push_str(&format!("kernel = {kernel}\n"));
        out.push_str(&format!("dilation_rates = {}\n", self.schedule()));
        if !square {
            out.push_str(&format!(
                "dilation_rates_freq = {}\n",
                join(self.conv_layers.iter().map(|l| l.dilation.1.to_string()).collect(), "-")
            ));
        }
        out.push_str(&format!(
            "pool_freq = {}\n",
            join(self.conv_layers.iter().map(|l| l.pool_freq.to_string()).collect(), ",")
        ));
        out.push_str(&format!("blstm_hidden = {}\n", self.blstm_hidden));
        out.push_str(&format!("dropout = {}\n", self.dropout));
        out.push_str(&format!("conv_bias = {}\n", self.conv_bias));
        out
    }

    /// Parses [`ModelConfig::to_text`] output. Only `n_classes` and
    /// `dilation_rates` are required; `filters`, `kernel` and `pool_freq`
    /// take either one value for every layer or a comma list, and
    /// `pool_freq = auto` selects [`auto_pools`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| SedError::Config(format!("config line {}: expected key = value", i + 1)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let take = |key: &str| kv.get(key).map(String::as_str);
        let num = |key: &str, v: &str| {
            v.parse::<usize>()
                .map_err(|_| SedError::Config(format!("{key}: {v:?} is not a non-negative integer")))
        };
        for key in kv.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(SedError::Config(format!("unknown config key {key:?}")));
            }
        }

        let schedule: DilationSchedule = take("dilation_rates")
            .ok_or_else(|| SedError::Config("missing dilation_rates".into()))?
            .parse()?;
        let layers = schedule.layers();
        let n_classes = num(
            "n_classes",
            take("n_classes").ok_or_else(|| SedError::Config("missing n_classes".into()))?,
        )?;
        let n_mels = take("n_mels").map_or(Ok(40), |v| num("n_mels", v))?;

        let per_layer = |key: &str, default: &str| -> Result<Vec<String>> {
            let raw = take(key).unwrap_or(default);
            let items: Vec<String> = raw.split(',').map(|s| s.trim().to_string()).collect();
            match items.len() {
                1 => Ok(vec![items[0].clone(); layers]),
                n if n == layers => Ok(items),
                n => Err(SedError::Config(format!("{key}: {n} values for {layers} layers"))),
            }
        };
        let filters = per_layer("filters", &DESK_FILTERS.to_string())?
            .iter()
            .map(|v| num("filters", v))
            .collect::<Result<Vec<_>>>()?;
        let kernels = per_layer("kernel", &DEFAULT_KERNEL.to_string())?
            .iter()
            .map(|v| parse_kernel(v))
            .collect::<Result<Vec<_>>>()?;
        let pools = match take("pool_freq") {
            None | Some("auto") => auto_pools(n_mels, layers),
            Some(_) => per_layer("pool_freq", "1")?
                .iter()
                .map(|v| num("pool_freq", v))
                .collect::<Result<Vec<_>>>()?,
        };
        let freq_rates = match take("dilation_rates_freq") {
            None => schedule.rates().to_vec(),
            Some(v) => {
                let s: DilationSchedule = v.parse()?;
                if s.layers() != layers {
                    return Err(SedError::Config("dilation_rates_freq length differs from dilation_rates".into()));
                }
                s.rates().to_vec()
            }
        };
        let blstm_hidden = take("blstm_hidden").map_or(Ok(128), |v| num("blstm_hidden", v))?;
        let dropout = take("dropout").map_or(Ok(0.1), |v| {
            v.parse::<f64>()
                .map_err(|_| SedError::Config(format!("dropout: {v:?} is not a number")))
        })?;
        let conv_bias = take("conv_bias").map_or(Ok(true), |v| {
            v.parse::<bool>()
                .map_err(|_| SedError::Config(format!("conv_bias: {v:?} is not true/false")))
        })?;

        let config = Self {
            n_classes,
            n_mels,
            conv_layers: (0..layers)
                .map(|i| ConvLayerConfig {
                    filters: filters[i],
                    kernel: kernels[i],
                    dilation: (schedule.rates()[i], freq_rates[i]),
                    pool_freq: pools[i],
                })
                .collect(),
            blstm_hidden,
            dropout,
            conv_bias,
        };
        config.validate()?;
        Ok(config)
    }
}

const KNOWN_KEYS: [&str; 10] = [
    "n_classes",
    "n_mels",
    "filters",
    "kernel",
    "dilation_rates",
    "dilation_rates_freq",
    "pool_freq",
    "blstm_hidden",
    "dropout",
    "conv_bias",
];

fn kernel_text((t, f): (usize, usize)) -> String {
    if t == f {
        t.to_string()
    } else {
        format!("{t}x{f}")
    }
}

fn parse_kernel(v: &str) -> Result<(usize, usize)> {
    let bad = || SedError::Config(format!("kernel: {v:?} is not N or TxF"));
    match v.split_once('x') {
        Some((t, f)) => Ok((t.trim().parse().map_err(|_| bad())?, f.trim().parse().map_err(|_| bad())?)),
        None => {
            let k = v.parse().map_err(|_| bad())?;
            Ok((k, k))
        }
    }
}
