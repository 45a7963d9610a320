//! Synthetic scenes: annotation exactness against per-event envelopes,
//! polyphony, determinism and the on-disk corpus round trip.

use dcrnn_core::data::{load_corpus, synthesize_corpus, write_corpus, SynthCorpusConfig};
use dcrnn_core::features::{FeatureConfig, FrameLayout};
use dcrnn_core::metrics::{annotations_to_roll, EventRoll};
use dcrnn_core::synth::{default_templates, envelope, render_event, synthesize_scene, SceneRecipe};

fn labels(n: usize) -> Vec<String> {
    default_templates(n, 16000).into_iter().map(|t| t.label).collect()
}

#[test]
fn annotation_roll_matches_envelope_oracle() {
    let templates = default_templates(4, 16000);
    let classes = labels(4);
    let layout = FrameLayout::new(&FeatureConfig::default(), 16000);
    for seed in 0..10 {
        let scene = synthesize_scene(&SceneRecipe { seed, ..Default::default() }, &templates).unwrap();
        let n_frames = layout.frame_count(scene.clip.samples().len()).unwrap();
        let from_annotations = annotations_to_roll(&scene.annotations, &classes, n_frames, &layout).unwrap();
        let mut oracle = EventRoll::new(n_frames, classes.len());
        for e in &scene.events {
            let env = envelope(e.len_samples, 16000);
            for f in 0..n_frames {
                let centre = f * layout.hop + layout.frame_len / 2;
                if centre >= e.onset_sample && centre < e.end_sample() && env[centre - e.onset_sample] > 0.0 {
                    oracle.set(f, e.template, true);
                }
            }
        }
        assert_eq!(from_annotations, oracle, "seed {seed}");
    }
}

#[test]
fn event_energy_stays_inside_annotations() {
    let templates = default_templates(4, 16000);
    let layout = FrameLayout::new(&FeatureConfig::default(), 16000);
    for seed in 0..5 {
        let recipe = SceneRecipe {
            seed,
            snr_db: f64::INFINITY,
            ..Default::default()
        };
        let scene = synthesize_scene(&recipe, &templates).unwrap();
        let x = scene.clip.samples();
        for f in 0..layout.frame_count(x.len()).unwrap() {
            let (a, b) = (f * layout.hop, f * layout.hop + layout.frame_len);
            if x[a..b].iter().all(|&v| v == 0.0) {
                continue;
            }
            let (ta, tb) = (a as f64 / 16000.0, b as f64 / 16000.0);
            let slack = layout.hop as f64 / 16000.0;
            assert!(
                scene.annotations.iter().any(|e| ta < e.offset + slack && tb > e.onset - slack),
                "seed {seed}: energy in frame {f} outside every annotation"
            );
        }
        // per-event rendering is nonzero only inside its own span
        for e in &scene.events {
            let wave = render_event(e, &templates[e.template], 16000);
            assert_eq!(wave.len(), e.len_samples);
            assert!(wave.iter().any(|&v| v != 0.0));
        }
    }
}

#[test]
fn polyphony_never_exceeds_the_cap() {
    let templates = default_templates(6, 16000);
    let classes = labels(6);
    let layout = FrameLayout::new(&FeatureConfig::default(), 16000);
    for cap in 1..=3 {
        for seed in 0..5 {
            let recipe = SceneRecipe {
                seed,
                max_polyphony: cap,
                events_per_minute: 90.0,
                ..Default::default()
            };
            let scene = synthesize_scene(&recipe, &templates).unwrap();
            let n = layout.frame_count(scene.clip.samples().len()).unwrap();
            let roll = annotations_to_roll(&scene.annotations, &classes, n, &layout).unwrap();
            assert!(roll.max_polyphony() <= cap, "cap {cap} seed {seed}");
        }
    }
}

#[test]
fn corpus_is_seed_deterministic() {
    let c = SynthCorpusConfig {
        n_scenes: 3,
        ..Default::default()
    };
    let (la, a) = synthesize_corpus(&c).unwrap();
    let (lb, b) = synthesize_corpus(&c).unwrap();
    assert_eq!(la, lb);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.clip, y.clip);
        assert_eq!(x.annotations, y.annotations);
    }
}

#[test]
fn written_corpus_loads_back() {
    let c = SynthCorpusConfig {
        n_scenes: 3,
        n_classes: 3,
        recipe: SceneRecipe {
            duration_seconds: 2.0,
            ..Default::default()
        },
        ..Default::default()
    };
    let (classes, scenes) = synthesize_corpus(&c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_corpus(dir.path(), &classes, &scenes).unwrap();
    let corpus = load_corpus(dir.path(), &FeatureConfig::default()).unwrap();
    assert_eq!(corpus.classes, classes);
    assert_eq!(corpus.recordings.len(), 3);
    let layout = FrameLayout::new(&FeatureConfig::default(), 16000);
    for (rec, scene) in corpus.recordings.iter().zip(&scenes) {
        assert_eq!(rec.features.n_frames(), 199);
        let expect = annotations_to_roll(&scene.annotations, &classes, 199, &layout).unwrap();
        assert_eq!(rec.roll, expect, "{}", rec.name);
    }
}
