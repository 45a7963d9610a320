//! `dcrnn`: synthesize corpora, extract features, train and evaluate
//! baseline/dilated CRNNs, run the dilation ablation and inspect receptive
//! fields.
//!
//! Exit codes: 0 success, 2 bad arguments or configuration, 3 data errors,
//! 4 numeric divergence.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dcrnn_core::data::{
    layout_of, load_corpus, read_classes, split_corpus, synth_corpus_in_memory, synthesize_corpus, write_corpus,
    Corpus, SynthCorpusConfig, CLASSES_FILE,
};
use dcrnn_core::experiment::{curves_csv, default_entries, results_csv, run_ablation, AblationPlan};
use dcrnn_core::features::{logmel, read_wav, FeatureConfig, FrameLayout};
use dcrnn_core::metrics::{
    annotations_to_roll, format_annotations, frame_metrics, parse_annotations, report_csv, roll_to_annotations,
    segment_metrics, Annotation, EventRoll, MetricsReport,
};
use dcrnn_core::model::{
    empirical_receptive_field, probe_model, receptive_field, DilationSchedule, ModelConfig, DESK_FILTERS,
};
use dcrnn_core::synth::SceneRecipe;
use dcrnn_core::train::{evaluate, records_csv, train, Detector, TrainConfig, DECISION_THRESHOLD};
use dcrnn_core::SedError;

const SPLIT: (f64, f64, f64) = (0.6, 0.2, 0.2);

#[derive(Parser)]
#[command(name = "dcrnn", version, about = "Dilated CRNN sound event detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus of WAV files and annotations.
    Synth(SynthArgs),
    /// Compute and cache log mel features for every WAV in a directory.
    Features(FeaturesArgs),
    /// Train one model on a corpus directory.
    Train(TrainArgs),
    /// Score annotations or a trained checkpoint, printing a metrics CSV.
    Eval(EvalArgs),
    /// Train and test every schedule of an ablation plan.
    Ablate(AblateArgs),
    /// Print theoretical and measured receptive fields of a schedule.
    Rf(RfArgs),
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long, default_value_t = 4)]
    classes: usize,
    #[arg(long, default_value_t = 40)]
    scenes: usize,
    /// Scene length in seconds.
    #[arg(long, default_value_t = 10.0)]
    duration: f64,
    #[arg(long, default_value_t = 16000)]
    sample_rate: u32,
    #[arg(long, default_value_t = 3)]
    polyphony: usize,
    /// Events per minute.
    #[arg(long, default_value_t = 30.0)]
    density: f64,
    #[arg(long, default_value_t = 15.0)]
    snr: f64,
}

impl CorpusArgs {
    fn config(&self, seed: u64) -> SynthCorpusConfig {
        SynthCorpusConfig {
            n_classes: self.classes,
            n_scenes: self.scenes,
            seed,
            recipe: SceneRecipe {
                duration_seconds: self.duration,
                sample_rate: self.sample_rate,
                max_polyphony: self.polyphony,
                events_per_minute: self.density,
                snr_db: self.snr,
                seed: 0,
            },
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FeaturesArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Required sample rate of the input files (no resampling is done).
    #[arg(long)]
    sample_rate: Option<u32>,
}

#[derive(Args)]
struct TrainingArgs {
    #[arg(long, default_value_t = 200)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr: f64,
    #[arg(long, default_value_t = 30)]
    patience: usize,
    #[arg(long, default_value_t = 256)]
    chunk: usize,
}

impl TrainingArgs {
    fn config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch_size: self.batch_size,
            initial_lr: self.lr,
            patience: self.patience,
            max_epochs: self.epochs,
            seed,
            chunk_frames: self.chunk,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Model config file (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dilation schedule, e.g. `2-4-8`; overrides the config's rates.
    #[arg(long)]
    dilation: Option<DilationSchedule>,
    /// Filters per conv layer when no config file is given.
    #[arg(long, default_value_t = DESK_FILTERS)]
    filters: usize,
    /// BLSTM units per direction when no config file is given.
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    /// Corpus directory of `.ann` files with `.wav` or `.feat` companions.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// Reference annotation file, or a directory of `.ann` files.
    #[arg(long, conflicts_with_all = ["checkpoint", "data"])]
    reference: Option<PathBuf>,
    /// Estimated annotation file, or a directory with matching names.
    #[arg(long, requires = "reference")]
    estimate: Option<PathBuf>,
    /// Trained checkpoint to run on `--data`.
    #[arg(long, requires_all = ["config", "data"])]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Write the checkpoint's detected events as `.ann` files here.
    #[arg(long, requires = "checkpoint")]
    write_estimates: Option<PathBuf>,
    /// Score over segments of this many seconds instead of single frames.
    #[arg(long)]
    segment: Option<f64>,
    /// Write the CSV here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    /// Corpus directory; a synthetic corpus is generated in memory when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Comma-separated schedules; defaults to the ten baseline/dilated pairs.
    #[arg(long)]
    schedules: Option<String>,
    #[arg(long, default_value_t = DESK_FILTERS)]
    filters: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    training: TrainingArgs,
}

#[derive(Args)]
struct RfArgs {
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long)]
    dilation: DilationSchedule,
}

struct Failure {
    code: u8,
    message: String,
}

impl From<SedError> for Failure {
    fn from(e: SedError) -> Self {
        let code = match e {
            SedError::Config(_) => 2,
            SedError::Divergence { .. } => 4,
            _ => 3,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult = Result<(), Failure>;

fn write_file(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| SedError::Io {
            path: parent.display().to_string(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| {
        SedError::Io {
            path: path.display().to_string(),
            source: e,
        }
        .into()
    })
}

fn read_file(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| {
        SedError::Io {
            path: path.display().to_string(),
            source: e,
        }
        .into()
    })
}

fn synth(args: SynthArgs) -> CliResult {
    let (classes, scenes) = synthesize_corpus(&args.corpus.config(args.seed))?;
    write_corpus(&args.out, &classes, &scenes)?;
    let dropped: usize = scenes.iter().map(|s| s.dropped).sum();
    let events: usize = scenes.iter().map(|s| s.annotations.len()).sum();
    println!("wrote {} scenes ({events} events) to {}", scenes.len(), args.out.display());
    if dropped > 0 {
        eprintln!("warning: {dropped} events did not fit under the polyphony cap and were dropped");
    }
    Ok(())
}

fn features(args: FeaturesArgs) -> CliResult {
    let config = FeatureConfig::default();
    let mut wavs: Vec<PathBuf> = fs::read_dir(&args.input)
        .map_err(|e| SedError::Io {
            path: args.input.display().to_string(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "wav"))
        .collect();
    wavs.sort();
    if wavs.is_empty() {
        return Err(SedError::Data(format!("no .wav files in {}", args.input.display())).into());
    }
    fs::create_dir_all(&args.out).map_err(|e| SedError::Io {
        path: args.out.display().to_string(),
        source: e,
    })?;
    for wav in &wavs {
        let clip = read_wav(wav)?;
        if let Some(sr) = args.sample_rate.filter(|&sr| sr != clip.sample_rate()) {
            return Err(SedError::Data(format!(
                "{} is {} Hz, expected {sr} Hz",
                wav.display(),
                clip.sample_rate()
            ))
            .into());
        }
        let stem = wav.file_stem().unwrap_or_default();
        logmel(&clip, &config)?.save(args.out.join(stem).with_extension("feat"))?;
        let ann = wav.with_extension("ann");
        if ann.exists() {
            write_file(&args.out.join(stem).with_extension("ann"), &read_file(&ann)?)?;
        }
    }
    let classes = args.input.join(CLASSES_FILE);
    if classes.exists() {
        write_file(&args.out.join(CLASSES_FILE), &read_file(&classes)?)?;
    }
    println!("cached features for {} recordings in {}", wavs.len(), args.out.display());
    Ok(())
}

fn model_config(args: &TrainArgs, corpus: &Corpus) -> Result<ModelConfig, Failure> {
    let n_classes = corpus.classes.len();
    let config = match (&args.config, &args.dilation) {
        (Some(path), dilation) => {
            let mut c = ModelConfig::from_text(&read_file(path)?)?;
            if let Some(s) = dilation {
                c = if s.layers() == c.conv_layers.len() {
                    c.with_schedule(s)?
                } else {
                    return Err(usage(format!(
                        "--dilation {s} has {} layers but the config has {}",
                        s.layers(),
                        c.conv_layers.len()
                    )));
                };
            }
            if c.n_classes != n_classes {
                return Err(SedError::Data(format!(
                    "config has {} classes, corpus has {n_classes}",
                    c.n_classes
                ))
                .into());
            }
            c
        }
        (None, Some(s)) => {
            let mut c = ModelConfig::from_schedule(s, n_classes, FeatureConfig::default().n_mels, args.filters);
            c.blstm_hidden = args.hidden;
            c
        }
        (None, None) => return Err(usage("train needs --config or --dilation")),
    };
    config.validate()?;
    Ok(config)
}

fn train_cmd(args: TrainArgs) -> CliResult {
    if args.config.is_none() && args.dilation.is_none() {
        return Err(usage("train needs --config or --dilation"));
    }
    args.training.config(args.seed).validate()?;
    let corpus = load_corpus(&args.data, &FeatureConfig::default())?;
    let config = model_config(&args, &corpus)?;
    let split = split_corpus(corpus.recordings.len(), SPLIT, args.seed)?;
    if split.train.is_empty() || split.val.is_empty() {
        return Err(SedError::Data("corpus too small for a train/validation split".into()).into());
    }
    let tc = args.training.config(args.seed);
    let outcome = train(
        &config,
        &corpus.subset(&split.train),
        &corpus.subset(&split.val),
        &tc,
        |r| eprintln!("{}", r.csv_row()),
    )?;
    let out = &args.out;
    write_file(&out.join("model.cfg"), &config.to_text())?;
    outcome.best.save(out.join("best.dcrn"))?;
    outcome.last.save(out.join("last.dcrn"))?;
    write_file(&out.join("curves.csv"), &records_csv(&outcome.records))?;
    let names = |idx: &[usize]| -> String {
        idx.iter()
            .map(|&i| corpus.recordings[i].name.clone() + "\n")
            .collect()
    };
    write_file(&out.join("split_train.txt"), &names(&split.train))?;
    write_file(&out.join("split_val.txt"), &names(&split.val))?;
    write_file(&out.join("split_test.txt"), &names(&split.test))?;
    println!(
        "best epoch {} of {} ({:?}); checkpoints in {}",
        outcome.best_epoch,
        outcome.records.len(),
        outcome.stop,
        out.display()
    );
    if !split.test.is_empty() {
        let test = evaluate(&outcome.best, &corpus.subset(&split.test), tc.chunk_frames)?;
        write_file(&out.join("test_report.csv"), &report_csv(&test.report))?;
        println!(
            "test F1 {:.1} ER {}",
            test.report.f1() * 100.0,
            test.report
                .error_rate()
                .map_or_else(|| "nan".into(), |e| format!("{:.1}", e * 100.0))
        );
    }
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn score(reference: &EventRoll, estimate: &EventRoll, segment: Option<f64>, hop: f64) -> Result<MetricsReport, Failure> {
    Ok(match segment {
        Some(s) => segment_metrics(reference, estimate, s, hop)?,
        None => frame_metrics(reference, estimate)?,
    })
}

/// Pairs of (reference, estimate) annotation files: the two files given,
/// or same-named `.ann` files from two directories.
fn annotation_pairs(reference: &Path, estimate: &Path) -> Result<Vec<(PathBuf, PathBuf)>, Failure> {
    if !reference.is_dir() {
        return Ok(vec![(reference.to_path_buf(), estimate.to_path_buf())]);
    }
    let mut pairs = Vec::new();
    for entry in fs::read_dir(reference).map_err(|e| SedError::Io {
        path: reference.display().to_string(),
        source: e,
    })? {
        let path = entry
            .map_err(|e| SedError::Io {
                path: reference.display().to_string(),
                source: e,
            })?
            .path();
        if path.extension().is_some_and(|x| x == "ann") {
            let other = estimate.join(path.file_name().expect("file name"));
            if !other.exists() {
                return Err(SedError::Data(format!("no estimate {} for {}", other.display(), path.display())).into());
            }
            pairs.push((path, other));
        }
    }
    pairs.sort();
    if pairs.is_empty() {
        return Err(SedError::Data(format!("no .ann files in {}", reference.display())).into());
    }
    Ok(pairs)
}

fn eval_annotations(args: &EvalArgs, reference: &Path, estimate: &Path) -> CliResult {
    let config = FeatureConfig::default();
    let pairs = annotation_pairs(reference, estimate)?;
    let mut parsed: Vec<(Vec<Annotation>, Vec<Annotation>)> = Vec::new();
    for (r, e) in &pairs {
        parsed.push((parse_annotations(&read_file(r)?)?, parse_annotations(&read_file(e)?)?));
    }
    let class_dir = if reference.is_dir() { reference } else { reference.parent().unwrap_or(Path::new(".")) };
    let classes = read_classes(
        class_dir,
        parsed
            .iter()
            .flat_map(|(r, e)| r.iter().chain(e))
            .map(|a| a.label.as_str()),
    )?;
    // frame grid at the default hop on a microsecond clock, long enough for every event
    const CLOCK: u32 = 1_000_000;
    let layout = FrameLayout::new(&config, CLOCK);
    let mut total = MetricsReport::default();
    for (r, e) in &parsed {
        let end = r.iter().chain(e).map(|a| a.offset).fold(0.0, f64::max);
        let samples = ((end * CLOCK as f64).ceil() as usize + layout.frame_len).max(layout.frame_len);
        let n = layout.frame_count(samples).expect("at least one frame");
        let rr = annotations_to_roll(r, &classes, n, &layout)?;
        let er = annotations_to_roll(e, &classes, n, &layout)?;
        total = total.merge(&score(&rr, &er, args.segment, config.hop_seconds)?);
    }
    emit(args.out.as_deref(), &report_csv(&total))
}

fn eval_checkpoint(args: &EvalArgs, checkpoint: &Path, config: &Path, data: &Path) -> CliResult {
    let model_config = ModelConfig::from_text(&read_file(config)?)?;
    let detector = Detector::load(checkpoint, &model_config)?;
    let corpus = load_corpus(data, &FeatureConfig::default())?;
    if corpus.classes.len() != model_config.n_classes {
        return Err(SedError::Data(format!(
            "model has {} classes, corpus has {}",
            model_config.n_classes,
            corpus.classes.len()
        ))
        .into());
    }
    let mut total = MetricsReport::default();
    for rec in &corpus.recordings {
        let probs = detector.predict(&rec.features)?;
        let estimate = EventRoll::binarize(&probs, model_config.n_classes, DECISION_THRESHOLD)?;
        total = total.merge(&score(&rec.roll, &estimate, args.segment, rec.features.frame_hop_seconds)?);
        if let Some(dir) = &args.write_estimates {
            let events = roll_to_annotations(&estimate, &corpus.classes, &layout_of(&rec.features));
            write_file(&dir.join(format!("{}.ann", rec.name)), &format_annotations(&events))?;
        }
    }
    emit(args.out.as_deref(), &report_csv(&total))
}

fn eval(args: EvalArgs) -> CliResult {
    match (&args.reference, &args.estimate, &args.checkpoint, &args.config, &args.data) {
        (Some(r), Some(e), None, _, _) => eval_annotations(&args, r, e),
        (None, None, Some(ck), Some(cfg), Some(data)) => eval_checkpoint(&args, ck, cfg, data),
        _ => Err(usage(
            "eval needs --reference and --estimate, or --checkpoint, --config and --data",
        )),
    }
}

fn ablate(args: AblateArgs) -> CliResult {
    let features = FeatureConfig::default();
    let corpus = match &args.data {
        Some(dir) => load_corpus(dir, &features)?,
        None => synth_corpus_in_memory(&args.corpus.config(args.seed), &features)?,
    };
    let split = split_corpus(corpus.recordings.len(), SPLIT, args.seed)?;
    let plan = AblationPlan {
        entries: match &args.schedules {
            Some(list) => AblationPlan::parse_schedules(list)?,
            None => default_entries(),
        },
        filters: args.filters,
        blstm_hidden: args.hidden,
        train: args.training.config(args.seed),
        ..AblationPlan::default()
    };
    let results = run_ablation(&plan, &corpus, &split, args.jobs, |r| match &r.error {
        None => eprintln!("finished {} ({})", r.entry.name, r.entry.schedule),
        Some(e) => eprintln!("FAILED {} ({}): {e}", r.entry.name, r.entry.schedule),
    })?;
    write_file(&args.out.join("results.csv"), &results_csv(&results))?;
    write_file(&args.out.join("curves.csv"), &curves_csv(&results))?;
    print!("{}", results_csv(&results));
    let failed = results.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        let divergent = results
            .iter()
            .filter_map(|r| r.error.as_deref())
            .all(|e| e.contains("diverged"));
        return Err(Failure {
            code: if divergent { 4 } else { 3 },
            message: format!("{failed} of {} runs failed", results.len()),
        });
    }
    Ok(())
}

fn rf(args: RfArgs) -> CliResult {
    let rates = args.dilation.rates();
    let theoretical = receptive_field(args.kernel, rates)?;
    let model = probe_model(args.kernel, rates, 8)?;
    let n = 2 * theoretical + 1;
    let empirical = empirical_receptive_field(&model, n, n / 2)?;
    println!("schedule {} kernel {}", args.dilation, args.kernel);
    println!("theoretical {theoretical}");
    println!("empirical {empirical}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Features(a) => features(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Rf(a) => rf(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
