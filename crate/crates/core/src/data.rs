//! Corpora on disk, train/validation/test splits, fixed-length chunks and
//! per-band feature standardization.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Result, SedError};
use crate::features::{logmel, read_wav, write_wav, FeatureConfig, FeatureMatrix, FrameLayout};
use crate::metrics::{annotations_to_roll, format_annotations, parse_annotations, EventRoll};
use crate::synth::{default_templates, synthesize_scene, Scene, SceneRecipe};

pub const DEFAULT_CHUNK_FRAMES: usize = 256;
pub const CLASSES_FILE: &str = "classes.txt";

/// SplitMix64 finalizer, used to derive independent stream seeds from one
/// run seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffles `0..n` with `seed`, then takes `round(f_train * n)` training and
/// `round(f_val * n)` validation items; the remainder is the test set.
pub fn split_corpus(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<Split> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(SedError::Config(format!(
            "split fractions {fractions:?} must be in [0, 1] and sum to 1"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((ft * n as f64).round() as usize).min(n);
    let n_val = ((fv * n as f64).round() as usize).min(n - n_train);
    let test = order.split_off(n_train + n_val);
    let val = order.split_off(n_train);
    Ok(Split {
        train: order,
        val,
        test,
    })
}

/// A fixed-length training sequence. Rows past `valid` are zero padding and
/// carry a zero mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    /// `frames x n_mels`, row-major.
    pub features: Vec<f64>,
    /// `frames x n_classes`, row-major 0/1.
    pub targets: Vec<f64>,
    pub mask: Vec<f64>,
    pub valid: usize,
}

impl Chunk {
    pub fn frames(&self) -> usize {
        self.mask.len()
    }
}

pub fn chunk_sequences(features: &FeatureMatrix, roll: &EventRoll, chunk_frames: usize) -> Result<Vec<Chunk>> {
    if chunk_frames == 0 {
        return Err(SedError::Config("chunk length must be positive".into()));
    }
    if features.n_frames() != roll.n_frames() {
        return Err(SedError::Data(format!(
            "{} feature frames but {} annotation frames",
            features.n_frames(),
            roll.n_frames()
        )));
    }
    let (n_mels, n_classes) = (features.n_mels(), roll.n_classes());
    let targets = roll.to_targets();
    let mut chunks = Vec::new();
    let mut start = 0;
    while start < features.n_frames() {
        let valid = chunk_frames.min(features.n_frames() - start);
        let mut f = vec![0.0; chunk_frames * n_mels];
        f[..valid * n_mels].copy_from_slice(&features.values()[start * n_mels..(start + valid) * n_mels]);
        let mut t = vec![0.0; chunk_frames * n_classes];
        t[..valid * n_classes].copy_from_slice(&targets[start * n_classes..(start + valid) * n_classes]);
        let mut mask = vec![0.0; chunk_frames];
        mask[..valid].iter_mut().for_each(|m| *m = 1.0);
        chunks.push(Chunk {
            features: f,
            targets: t,
            mask,
            valid,
        });
        start += valid;
    }
    Ok(chunks)
}

/// Per-band mean and standard deviation estimated on training features.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    pub fn identity(n_mels: usize) -> Self {
        Self {
            mean: vec![0.0; n_mels],
            std: vec![1.0; n_mels],
        }
    }

    pub fn fit<'a>(features: impl IntoIterator<Item = &'a FeatureMatrix>) -> Result<Self> {
        let mut sum: Vec<f64> = Vec::new();
        let mut sq: Vec<f64> = Vec::new();
        let mut count = 0usize;
        for fm in features {
            if sum.is_empty() {
                sum = vec![0.0; fm.n_mels()];
                sq = vec![0.0; fm.n_mels()];
            } else if sum.len() != fm.n_mels() {
                return Err(SedError::Data("feature matrices differ in band count".into()));
            }
            for f in 0..fm.n_frames() {
                for (m, &v) in fm.row(f).iter().enumerate() {
                    sum[m] += v;
                    sq[m] += v * v;
                }
            }
            count += fm.n_frames();
        }
        if count == 0 {
            return Err(SedError::Data("cannot fit a normalizer on no frames".into()));
        }
        let n = count as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: &mut FeatureMatrix) -> Result<()> {
        if features.n_mels() != self.mean.len() {
            return Err(SedError::Data(format!(
                "normalizer has {} bands, features have {}",
                self.mean.len(),
                features.n_mels()
            )));
        }
        let n = self.mean.len();
        for (i, v) in features.values_mut().iter_mut().enumerate() {
            let m = i % n;
            *v = (*v - self.mean[m]) / self.std[m];
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Recording {
    pub name: String,
    pub features: FeatureMatrix,
    pub roll: EventRoll,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub classes: Vec<String>,
    pub recordings: Vec<Recording>,
}

impl Corpus {
    pub fn subset(&self, indices: &[usize]) -> Vec<Recording> {
        indices.iter().map(|&i| self.recordings[i].clone()).collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| SedError::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| SedError::io(path, e))
}

fn files_with_extension(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| SedError::io(dir, e))? {
        let path = entry.map_err(|e| SedError::io(dir, e))?.path();
        if path.extension().is_some_and(|x| x == ext) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Class list from `classes.txt` (one label per line) when present,
/// otherwise the sorted set of labels in the given annotations.
pub fn read_classes<'a>(dir: &Path, labels: impl IntoIterator<Item = &'a str>) -> Result<Vec<String>> {
    let path = dir.join(CLASSES_FILE);
    if path.exists() {
        let classes: Vec<String> = read_text(&path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect();
        if classes.is_empty() {
            return Err(SedError::Data(format!("{} lists no classes", path.display())));
        }
        return Ok(classes);
    }
    let set: BTreeSet<&str> = labels.into_iter().collect();
    Ok(set.into_iter().map(String::from).collect())
}

/// Loads every `<name>.ann` in `dir` together with `<name>.feat` (cached
/// features) or, failing that, `<name>.wav`.
pub fn load_corpus(dir: impl AsRef<Path>, config: &FeatureConfig) -> Result<Corpus> {
    let dir = dir.as_ref();
    let ann_files = files_with_extension(dir, "ann")?;
    if ann_files.is_empty() {
        return Err(SedError::Data(format!("no .ann files in {}", dir.display())));
    }
    let mut parsed = Vec::with_capacity(ann_files.len());
    for path in &ann_files {
        let events = parse_annotations(&read_text(path)?)
            .map_err(|e| SedError::Data(format!("{}: {e}", path.display())))?;
        parsed.push((path, events));
    }
    let classes = read_classes(
        dir,
        parsed.iter().flat_map(|(_, ev)| ev.iter().map(|e| e.label.as_str())),
    )?;
    let mut recordings = Vec::with_capacity(parsed.len());
    for (path, events) in parsed {
        let feat = path.with_extension("feat");
        let wav = path.with_extension("wav");
        let features = if feat.exists() {
            FeatureMatrix::load(&feat)?
        } else if wav.exists() {
            logmel(&read_wav(&wav)?, config)?
        } else {
            return Err(SedError::Data(format!(
                "{} has neither a .feat nor a .wav companion",
                path.display()
            )));
        };
        if features.n_mels() != config.n_mels {
            return Err(SedError::Data(format!(
                "{}: {} mel bands, expected {}",
                path.display(),
                features.n_mels(),
                config.n_mels
            )));
        }
        let layout = layout_of(&features);
        let roll = annotations_to_roll(&events, &classes, features.n_frames(), &layout)?;
        recordings.push(Recording {
            name: path.file_stem().unwrap_or_default().to_string_lossy().into_owned(),
            features,
            roll,
        });
    }
    Ok(Corpus {
        classes,
        recordings,
    })
}

/// Frame timing of a feature matrix, expressed at a microsecond sample clock
/// when the original rate is unknown.
pub fn layout_of(features: &FeatureMatrix) -> FrameLayout {
    const CLOCK: u32 = 1_000_000;
    FrameLayout {
        sample_rate: CLOCK,
        frame_len: (features.frame_len_seconds * CLOCK as f64).round() as usize,
        hop: (features.frame_hop_seconds * CLOCK as f64).round() as usize,
        n_fft: 0,
    }
}

/// Settings of a synthetic corpus: `n_scenes` scenes over `n_classes`
/// default templates, scene `i` seeded from `derive_seed(seed, i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpusConfig {
    pub n_classes: usize,
    pub n_scenes: usize,
    pub seed: u64,
    pub recipe: SceneRecipe,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            n_scenes: 40,
            seed: 7,
            recipe: SceneRecipe::default(),
        }
    }
}

pub fn synthesize_corpus(config: &SynthCorpusConfig) -> Result<(Vec<String>, Vec<Scene>)> {
    if config.n_classes == 0 || config.n_scenes == 0 {
        return Err(SedError::Config("a corpus needs at least one class and one scene".into()));
    }
    let templates = default_templates(config.n_classes, config.recipe.sample_rate);
    let scenes = (0..config.n_scenes)
        .map(|i| {
            let recipe = SceneRecipe {
                seed: derive_seed(config.seed, i as u64),
                ..config.recipe.clone()
            };
            synthesize_scene(&recipe, &templates)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((templates.into_iter().map(|t| t.label).collect(), scenes))
}

/// Writes `scene_NNN.wav`, `scene_NNN.ann` and `classes.txt` into `dir`.
pub fn write_corpus(dir: impl AsRef<Path>, classes: &[String], scenes: &[Scene]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| SedError::io(dir, e))?;
    write_text(&dir.join(CLASSES_FILE), &(classes.join("\n") + "\n"))?;
    for (i, scene) in scenes.iter().enumerate() {
        let stem = format!("scene_{i:03}");
        write_wav(dir.join(format!("{stem}.wav")), &scene.clip)?;
        write_text(&dir.join(format!("{stem}.ann")), &format_annotations(&scene.annotations))?;
    }
    Ok(())
}

/// The synthetic corpus turned into features and rolls in memory, skipping
/// the 16-bit WAV round trip.
pub fn synth_corpus_in_memory(config: &SynthCorpusConfig, features: &FeatureConfig) -> Result<Corpus> {
    let (classes, scenes) = synthesize_corpus(config)?;
    let layout = FrameLayout::new(features, config.recipe.sample_rate);
    let recordings = scenes
        .iter()
        .enumerate()
        .map(|(i, scene)| {
            let fm = logmel(&scene.clip, features)?;
            let roll = annotations_to_roll(&scene.annotations, &classes, fm.n_frames(), &layout)?;
            Ok(Recording {
                name: format!("scene_{i:03}"),
                features: fm,
                roll,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus {
        classes,
        recordings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(n_frames: usize, n_mels: usize) -> FeatureMatrix {
        let values = (0..n_frames * n_mels).map(|i| i as f64).collect();
        FeatureMatrix::new(values, n_frames, n_mels, 0.01, 0.02).unwrap()
    }

    #[test]
    fn ten_scenes_split_six_two_two() {
        let s = split_corpus(10, (0.6, 0.2, 0.2), 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6, 2, 2));
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(s, split_corpus(10, (0.6, 0.2, 0.2), 1).unwrap());
        assert!(split_corpus(10, (0.6, 0.6, 0.2), 1).is_err());
    }

    #[test]
    fn chunk_counts_and_padding() {
        let roll = EventRoll::new(512, 2);
        assert_eq!(chunk_sequences(&matrix(512, 3), &roll, 256).unwrap().len(), 2);
        let mut roll = EventRoll::new(300, 2);
        roll.set(299, 1, true);
        let chunks = chunk_sequences(&matrix(300, 3), &roll, 256).unwrap();
        assert_eq!(chunks.len(), 2);
        assert_eq!(chunks[1].valid, 44);
        assert_eq!(chunks[1].mask.iter().filter(|&&m| m == 0.0).count(), 212);
        assert_eq!(chunks[1].targets[43 * 2 + 1], 1.0);
        assert!(chunks[1].features[44 * 3..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn chunk_round_trip() {
        let mut roll = EventRoll::new(300, 2);
        for f in (0..300).step_by(7) {
            roll.set(f, f % 2, true);
        }
        let chunks = chunk_sequences(&matrix(300, 3), &roll, 128).unwrap();
        let cells: Vec<bool> = chunks
            .iter()
            .flat_map(|c| c.targets[..c.valid * 2].iter().map(|&t| t == 1.0))
            .collect();
        assert_eq!(cells, roll.cells());
    }

    #[test]
    fn mismatched_lengths_rejected() {
        assert!(chunk_sequences(&matrix(10, 3), &EventRoll::new(9, 2), 4).is_err());
    }

    #[test]
    fn normalizer_standardizes_bands() {
        let fm = matrix(50, 4);
        let norm = Normalizer::fit([&fm]).unwrap();
        let mut z = fm.clone();
        norm.apply(&mut z).unwrap();
        for m in 0..4 {
            let col: Vec<f64> = (0..50).map(|f| z.row(f)[m]).collect();
            let mean = col.iter().sum::<f64>() / 50.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 50.0;
            assert!(mean.abs() < 1e-9 && (var - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn derived_seeds_differ() {
        let seeds: BTreeSet<u64> = (0..100).map(|i| derive_seed(7, i)).collect();
        assert_eq!(seeds.len(), 100);
        assert_eq!(derive_seed(7, 3), derive_seed(7, 3));
    }
}
