use std::path::Path;

use dcrnn_nn::checkpoint::{self, FEATURE_MAGIC};
use dcrnn_nn::Tensor;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::audio::AudioClip;
use crate::error::{Result, SedError};

pub const MIN_SAMPLE_RATE: u32 = 8000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureConfig {
    pub n_mels: usize,
    pub frame_seconds: f64,
    pub hop_seconds: f64,
    pub floor_epsilon: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            n_mels: 40,
            frame_seconds: 0.020,
            hop_seconds: 0.010,
            floor_epsilon: 1e-10,
        }
    }
}

/// Sample-domain framing derived from a [`FeatureConfig`] and a sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub sample_rate: u32,
    pub frame_len: usize,
    pub hop: usize,
    pub n_fft: usize,
}

impl FrameLayout {
    pub fn new(config: &FeatureConfig, sample_rate: u32) -> Self {
        let frame_len = ((config.frame_seconds * sample_rate as f64).round() as usize).max(1);
        let hop = ((config.hop_seconds * sample_rate as f64).round() as usize).max(1);
        Self {
            sample_rate,
            frame_len,
            hop,
            n_fft: frame_len.next_power_of_two(),
        }
    }

    /// `floor((n - frame_len) / hop) + 1`, or `None` when shorter than a frame.
    pub fn frame_count(&self, n_samples: usize) -> Option<usize> {
        (n_samples >= self.frame_len).then(|| (n_samples - self.frame_len) / self.hop + 1)
    }

    /// Time of the centre of frame `i`, in seconds.
    pub fn frame_center_seconds(&self, i: usize) -> f64 {
        (i as f64 * self.hop as f64 + self.frame_len as f64 / 2.0) / self.sample_rate as f64
    }

    /// Symmetric Hamming-windowed frames.
    pub fn frames(&self, samples: &[f64]) -> Result<Vec<Vec<f64>>> {
        let count = self.frame_count(samples.len()).ok_or_else(|| {
            SedError::Audio(format!(
                "clip of {} samples is shorter than one {}-sample frame",
                samples.len(),
                self.frame_len
            ))
        })?;
        let window = hamming(self.frame_len);
        Ok((0..count)
            .map(|i| {
                let start = i * self.hop;
                samples[start..start + self.frame_len]
                    .iter()
                    .zip(&window)
                    .map(|(s, w)| s * w)
                    .collect()
            })
            .collect())
    }
}

fn hamming(n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![1.0];
    }
    (0..n)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
        .collect()
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Unit-peak triangular filters on the HTK mel scale between 0 Hz and
/// Nyquist, as an `n_mels x (n_fft / 2 + 1)` row-major matrix. Rows are in
/// ascending order of centre frequency.
pub fn mel_filterbank(sample_rate: u32, n_fft: usize, n_mels: usize) -> Result<Vec<Vec<f64>>> {
    if n_mels < 1 {
        return Err(SedError::Config("n_mels must be at least 1".into()));
    }
    if n_fft < 2 {
        return Err(SedError::Config("n_fft must be at least 2".into()));
    }
    let nyquist = sample_rate as f64 / 2.0;
    let top = hz_to_mel(nyquist);
    let mut edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    edges[n_mels + 1] = nyquist;
    let bins = n_fft / 2 + 1;
    let bin_hz = sample_rate as f64 / n_fft as f64;
    Ok((0..n_mels)
        .map(|m| {
            let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..bins)
                .map(|k| {
                    let f = k as f64 * bin_hz;
                    if f > lo && f <= centre {
                        (f - lo) / (centre - lo)
                    } else if f > centre && f < hi {
                        (hi - f) / (hi - centre)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect())
}

/// Frames x bands matrix of log mel-band energies for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_frames: usize,
    n_mels: usize,
    pub frame_hop_seconds: f64,
    pub frame_len_seconds: f64,
}

impl FeatureMatrix {
    pub fn new(
        values: Vec<f64>,
        n_frames: usize,
        n_mels: usize,
        frame_hop_seconds: f64,
        frame_len_seconds: f64,
    ) -> Result<Self> {
        if values.len() != n_frames * n_mels || n_frames == 0 || n_mels == 0 {
            return Err(SedError::Data(format!(
                "feature matrix {n_frames}x{n_mels} with {} values",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SedError::Data("non-finite feature value".into()));
        }
        Ok(Self {
            values,
            n_frames,
            n_mels,
            frame_hop_seconds,
            frame_len_seconds,
        })
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.values[frame * self.n_mels..(frame + 1) * self.n_mels]
    }

    /// Writes the matrix in the tensor container format under the `FEAT` magic.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let values = Tensor::new(vec![self.n_frames, self.n_mels], self.values.clone())?;
        let hop = Tensor::scalar(self.frame_hop_seconds);
        let len = Tensor::scalar(self.frame_len_seconds);
        checkpoint::save(
            path,
            FEATURE_MAGIC,
            &[
                ("logmel", &values),
                ("frame_hop_seconds", &hop),
                ("frame_len_seconds", &len),
            ],
        )?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let records = checkpoint::load(path.as_ref(), FEATURE_MAGIC)?;
        let get = |name: &str| {
            records
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| SedError::Data(format!("feature file lacks record {name}")))
        };
        let values = get("logmel")?;
        if values.rank() != 2 {
            return Err(SedError::Data("logmel record must be rank 2".into()));
        }
        let scalar = |name| get(name).and_then(|t| t.item().ok_or_else(|| SedError::Data(format!("{name} must be scalar"))));
        Self::new(
            values.data().to_vec(),
            values.shape()[0],
            values.shape()[1],
            scalar("frame_hop_seconds")?,
            scalar("frame_len_seconds")?,
        )
    }
}

/// Log mel-band energies: `ln(sum_k filter[m][k] * |X_k|^2 + floor_epsilon)`.
pub fn logmel(clip: &AudioClip, config: &FeatureConfig) -> Result<FeatureMatrix> {
    if clip.sample_rate() < MIN_SAMPLE_RATE {
        return Err(SedError::Audio(format!(
            "sample rate {} below the {MIN_SAMPLE_RATE} Hz minimum",
            clip.sample_rate()
        )));
    }
    let layout = FrameLayout::new(config, clip.sample_rate());
    let bank = mel_filterbank(clip.sample_rate(), layout.n_fft, config.n_mels)?;
    let frames = layout.frames(clip.samples())?;

    let fft = FftPlanner::<f64>::new().plan_fft_forward(layout.n_fft);
    let mut buf = vec![Complex::new(0.0, 0.0); layout.n_fft];
    let mut power = vec![0.0; layout.n_fft / 2 + 1];
    let mut values = Vec::with_capacity(frames.len() * config.n_mels);
    for frame in &frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for (c, &s) in buf.iter_mut().zip(frame) {
            c.re = s;
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for filter in &bank {
            let energy: f64 = filter.iter().zip(&power).map(|(w, p)| w * p).sum();
            values.push((energy + config.floor_epsilon).ln());
        }
    }
    FeatureMatrix::new(
        values,
        frames.len(),
        config.n_mels,
        layout.hop as f64 / clip.sample_rate() as f64,
        layout.frame_len as f64 / clip.sample_rate() as f64,
    )
}
