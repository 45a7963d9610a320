//! Parametric synthetic scenes: isolated events drawn from a few signal
//! templates, placed at random under a polyphony cap over Gaussian
//! background noise, with exact annotations.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Result, SedError};
use crate::features::AudioClip;
use crate::metrics::Annotation;

/// Peak level of a mixed scene after normalization.
pub const PEAK_LEVEL: f64 = 0.9;
/// Length of the raised-cosine fade at each end of an event.
pub const FADE_SECONDS: f64 = 0.01;
const PLACEMENT_ATTEMPTS: usize = 50;
const AM_RATE_HZ: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EventKind {
    Tone,
    Chirp,
    NoiseBurst,
    AmTone,
}

impl EventKind {
    fn prefix(self) -> &'static str {
        match self {
            EventKind::Tone => "tone",
            EventKind::Chirp => "chirp",
            EventKind::NoiseBurst => "noise",
            EventKind::AmTone => "am",
        }
    }
}

/// A class of synthetic events. Ranges are inclusive `(low, high)` bounds
/// sampled uniformly per event.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTemplate {
    pub label: String,
    pub kind: EventKind,
    pub freq_hz: (f64, f64),
    pub duration_seconds: (f64, f64),
    pub amplitude: (f64, f64),
}

impl EventTemplate {
    pub fn validate(&self, sample_rate: u32) -> Result<()> {
        let nyquist = sample_rate as f64 / 2.0;
        let ordered = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && lo <= hi;
        if !ordered(self.freq_hz) || self.freq_hz.0 <= 0.0 || self.freq_hz.1 >= nyquist {
            return Err(SedError::Config(format!(
                "template {}: frequency range {:?} must lie in (0, {nyquist}) Hz",
                self.label, self.freq_hz
            )));
        }
        if !ordered(self.duration_seconds) || self.duration_seconds.0 <= 0.0 {
            return Err(SedError::Config(format!(
                "template {}: duration range {:?} must be positive",
                self.label, self.duration_seconds
            )));
        }
        if !ordered(self.amplitude) || self.amplitude.0 < 0.0 {
            return Err(SedError::Config(format!(
                "template {}: amplitude range {:?} must be non-negative",
                self.label, self.amplitude
            )));
        }
        Ok(())
    }
}

/// `n_classes` templates cycling through the four kinds, each owning a
/// disjoint frequency band. Bands are log-spaced between 150 Hz and 80% of
/// Nyquist.
pub fn default_templates(n_classes: usize, sample_rate: u32) -> Vec<EventTemplate> {
    let kinds = [
        EventKind::Tone,
        EventKind::Chirp,
        EventKind::NoiseBurst,
        EventKind::AmTone,
    ];
    let (lo, hi) = (150f64, 0.8 * sample_rate as f64 / 2.0);
    let edge = |i: usize| lo * (hi / lo).powf(i as f64 / n_classes as f64);
    (0..n_classes)
        .map(|c| {
            let kind = kinds[c % kinds.len()];
            let (a, b) = (edge(c), edge(c + 1));
            // keep a margin inside the band so neighbouring classes stay apart
            let margin = (b / a).powf(0.2);
            EventTemplate {
                label: format!("{}_{c}", kind.prefix()),
                kind,
                freq_hz: (a * margin, b / margin),
                duration_seconds: (0.5, 2.0),
                amplitude: (0.4, 1.0),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRecipe {
    pub duration_seconds: f64,
    pub sample_rate: u32,
    pub max_polyphony: usize,
    pub events_per_minute: f64,
    /// Background level relative to a unit-amplitude sinusoid (power 1/2).
    pub snr_db: f64,
    pub seed: u64,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            duration_seconds: 10.0,
            sample_rate: 16000,
            max_polyphony: 3,
            events_per_minute: 30.0,
            snr_db: 15.0,
            seed: 0,
        }
    }
}

impl SceneRecipe {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration_seconds >= 1.0) {
            return Err(SedError::Config("scene duration must be at least 1 s".into()));
        }
        if self.sample_rate == 0 {
            return Err(SedError::Config("sample rate must be positive".into()));
        }
        if self.max_polyphony < 1 {
            return Err(SedError::Config("max polyphony must be at least 1".into()));
        }
        if !(self.events_per_minute >= 0.0) || !self.events_per_minute.is_finite() {
            return Err(SedError::Config("event density must be a non-negative number".into()));
        }
        if self.snr_db.is_nan() {
            return Err(SedError::Config("snr must be a number".into()));
        }
        Ok(())
    }
}

/// One placed event with every parameter needed to re-render it.
#[derive(Debug, Clone, PartialEq)]
pub struct PlacedEvent {
    pub template: usize,
    pub onset_sample: usize,
    pub len_samples: usize,
    pub freq_hz: f64,
    /// End frequency of a chirp; equal to `freq_hz` for other kinds.
    pub end_freq_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
    pub noise_seed: u64,
}

impl PlacedEvent {
    pub fn end_sample(&self) -> usize {
        self.onset_sample + self.len_samples
    }

    fn overlaps(&self, start: usize, end: usize) -> bool {
        self.onset_sample < end && start < self.end_sample()
    }
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub clip: AudioClip,
    pub annotations: Vec<Annotation>,
    pub events: Vec<PlacedEvent>,
    /// Events that could not be placed under the polyphony constraints.
    pub dropped: usize,
}

/// Raised-cosine fade-in and fade-out, strictly positive on every sample
/// of the event.
pub fn envelope(len: usize, sample_rate: u32) -> Vec<f64> {
    let fade = ((FADE_SECONDS * sample_rate as f64).round() as usize)
        .min(len / 2)
        .max(1);
    (0..len)
        .map(|n| {
            let edge = n.min(len - 1 - n);
            if edge >= fade {
                1.0
            } else {
                0.5 * (1.0 - (PI * (edge as f64 + 0.5) / fade as f64).cos())
            }
        })
        .collect()
}

/// The event's waveform before mixing (envelope included), `len_samples` long.
pub fn render_event(event: &PlacedEvent, template: &EventTemplate, sample_rate: u32) -> Vec<f64> {
    let sr = sample_rate as f64;
    let env = envelope(event.len_samples, sample_rate);
    let carrier: Vec<f64> = match template.kind {
        EventKind::Tone => (0..event.len_samples)
            .map(|n| (2.0 * PI * event.freq_hz * n as f64 / sr + event.phase).sin())
            .collect(),
        EventKind::AmTone => (0..event.len_samples)
            .map(|n| {
                let t = n as f64 / sr;
                let am = 0.5 * (1.0 + (2.0 * PI * AM_RATE_HZ * t).sin());
                am * (2.0 * PI * event.freq_hz * t + event.phase).sin()
            })
            .collect(),
        EventKind::Chirp => {
            let dur = event.len_samples as f64 / sr;
            let slope = (event.end_freq_hz - event.freq_hz) / dur;
            (0..event.len_samples)
                .map(|n| {
                    let t = n as f64 / sr;
                    (2.0 * PI * (event.freq_hz * t + 0.5 * slope * t * t) + event.phase).sin()
                })
                .collect()
        }
        EventKind::NoiseBurst => band_noise(event, template, sr),
    };
    carrier
        .iter()
        .zip(&env)
        .map(|(c, e)| event.amplitude * c * e)
        .collect()
}

/// White noise through a constant-peak-gain band-pass biquad centred on the
/// event frequency, rescaled to unit RMS.
fn band_noise(event: &PlacedEvent, template: &EventTemplate, sr: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(event.noise_seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let centre = event.freq_hz;
    let bandwidth = (template.freq_hz.1 - template.freq_hz.0).max(centre * 0.1);
    let q = centre / bandwidth;
    let w0 = 2.0 * PI * centre / sr;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    let out: Vec<f64> = (0..event.len_samples)
        .map(|_| {
            let x: f64 = normal.sample(&mut rng);
            let y = b0 * x + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = x;
            y2 = y1;
            y1 = y;
            y
        })
        .collect();
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / out.len().max(1) as f64).sqrt();
    // scale to the power of a unit sinusoid so kinds are comparably loud
    let gain = if rms > 0.0 { std::f64::consts::FRAC_1_SQRT_2 / rms } else { 0.0 };
    out.into_iter().map(|v| v * gain).collect()
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

/// Largest number of `placed` events simultaneously active inside `[start, end)`.
fn peak_overlap(placed: &[PlacedEvent], start: usize, end: usize) -> usize {
    let inside: Vec<&PlacedEvent> = placed.iter().filter(|e| e.overlaps(start, end)).collect();
    std::iter::once(start)
        .chain(inside.iter().map(|e| e.onset_sample).filter(|&s| s > start))
        .map(|t| {
            inside
                .iter()
                .filter(|e| e.onset_sample <= t && t < e.end_sample())
                .count()
        })
        .max()
        .unwrap_or(0)
}

pub fn synthesize_scene(recipe: &SceneRecipe, templates: &[EventTemplate]) -> Result<Scene> {
    recipe.validate()?;
    if templates.is_empty() && recipe.events_per_minute > 0.0 {
        return Err(SedError::Config("no event templates".into()));
    }
    for t in templates {
        t.validate(recipe.sample_rate)?;
    }
    let sr = recipe.sample_rate;
    let total = (recipe.duration_seconds * sr as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(recipe.seed);
    let target = (recipe.events_per_minute * recipe.duration_seconds / 60.0).round() as usize;

    let mut placed: Vec<PlacedEvent> = Vec::with_capacity(target);
    let mut dropped = 0;
    for _ in 0..target {
        let template = rng.gen_range(0..templates.len());
        let t = &templates[template];
        let len = ((sample_range(&mut rng, t.duration_seconds) * sr as f64).round() as usize).clamp(1, total);
        let freq_hz = sample_range(&mut rng, t.freq_hz);
        let end_freq_hz = match t.kind {
            EventKind::Chirp => {
                if rng.gen_bool(0.5) {
                    t.freq_hz.1
                } else {
                    t.freq_hz.0
                }
            }
            _ => freq_hz,
        };
        let amplitude = sample_range(&mut rng, t.amplitude);
        let phase = rng.gen_range(0.0..2.0 * PI);
        let noise_seed = rng.gen();
        let mut spot = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let onset = rng.gen_range(0..=total - len);
            let end = onset + len;
            let same_label = placed
                .iter()
                .any(|e| e.template == template && e.overlaps(onset, end));
            if !same_label && peak_overlap(&placed, onset, end) < recipe.max_polyphony {
                spot = Some(onset);
                break;
            }
        }
        match spot {
            Some(onset_sample) => placed.push(PlacedEvent {
                template,
                onset_sample,
                len_samples: len,
                freq_hz,
                end_freq_hz,
                amplitude,
                phase,
                noise_seed,
            }),
            None => dropped += 1,
        }
    }
    placed.sort_by_key(|e| (e.onset_sample, e.template));

    let noise_std = (0.5 / 10f64.powf(recipe.snr_db / 10.0)).sqrt();
    let mut mix: Vec<f64> = if noise_std > 0.0 {
        let normal = Normal::new(0.0, noise_std).map_err(|e| SedError::Config(e.to_string()))?;
        (0..total).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; total]
    };
    for e in &placed {
        let wave = render_event(e, &templates[e.template], sr);
        for (m, w) in mix[e.onset_sample..e.end_sample()].iter_mut().zip(&wave) {
            *m += w;
        }
    }
    let peak = mix.iter().fold(0.0f64, |p, v| p.max(v.abs()));
    if peak > 0.0 {
        let gain = PEAK_LEVEL / peak;
        mix.iter_mut().for_each(|v| *v *= gain);
    }

    let annotations = placed
        .iter()
        .map(|e| Annotation {
            onset: e.onset_sample as f64 / sr as f64,
            offset: e.end_sample() as f64 / sr as f64,
            label: templates[e.template].label.clone(),
        })
        .collect();
    Ok(Scene {
        clip: AudioClip::new(mix, sr)?,
        annotations,
        events: placed,
        dropped,
    })
}
