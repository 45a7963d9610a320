//! Baseline-versus-dilated ablation over dilation schedules.

use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::data::{Corpus, Split};
use crate::error::{Result, SedError};
use crate::metrics::MetricsReport;
use crate::model::{Crnn, DilationSchedule, ModelConfig, DEFAULT_KERNEL, DESK_FILTERS};
use crate::train::{evaluate, train, EpochRecord, TrainConfig};

pub const RESULTS_HEADER: &str = "network,dilation_rate,params,f1_percent,er_percent";
pub const CURVES_HEADER: &str = "network,dilation_rate,epoch,train_loss,val_loss,val_f1,val_er,lr,seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct AblationEntry {
    pub name: String,
    pub schedule: DilationSchedule,
}

impl AblationEntry {
    /// Named `Baseline CRNN<n>` when every rate is 1, else `Dilated CRNN<n>`.
    pub fn new(schedule: DilationSchedule) -> Self {
        let kind = if schedule.is_baseline() { "Baseline" } else { "Dilated" };
        Self {
            name: format!("{kind} CRNN{}", schedule.layers()),
            schedule,
        }
    }
}

/// `1; 2; 1-1; 2-4; ... ; 1-1-1-1-1; 2-4-8-16-32`.
pub fn default_entries() -> Vec<AblationEntry> {
    (1..=5)
        .flat_map(|n| {
            [
                DilationSchedule::baseline(n).expect("n >= 1"),
                DilationSchedule::doubling(n).expect("n >= 1"),
            ]
        })
        .map(AblationEntry::new)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationPlan {
    pub entries: Vec<AblationEntry>,
    pub filters: usize,
    pub kernel: usize,
    pub blstm_hidden: usize,
    pub dropout: f64,
    pub conv_bias: bool,
    pub train: TrainConfig,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self {
            entries: default_entries(),
            filters: DESK_FILTERS,
            kernel: DEFAULT_KERNEL,
            blstm_hidden: 128,
            dropout: 0.1,
            conv_bias: true,
            train: TrainConfig::default(),
        }
    }
}

impl AblationPlan {
    /// Entries from a comma-separated list such as `1,2,1-1,2-4`.
    pub fn parse_schedules(list: &str) -> Result<Vec<AblationEntry>> {
        let entries = list
            .split(',')
            .map(|s| s.parse().map(AblationEntry::new))
            .collect::<Result<Vec<_>>>()?;
        if entries.is_empty() {
            return Err(SedError::Config("empty schedule list".into()));
        }
        Ok(entries)
    }

    pub fn model_config(&self, schedule: &DilationSchedule, n_classes: usize, n_mels: usize) -> ModelConfig {
        let mut c = ModelConfig::from_schedule(schedule, n_classes, n_mels, self.filters);
        for l in &mut c.conv_layers {
            l.kernel = (self.kernel, self.kernel);
        }
        c.blstm_hidden = self.blstm_hidden;
        c.dropout = self.dropout;
        c.conv_bias = self.conv_bias;
        c
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub entry: AblationEntry,
    pub params: usize,
    /// Test-split metrics of the best-validation model; `None` if the run failed.
    pub report: Option<MetricsReport>,
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub error: Option<String>,
}

fn run_one(plan: &AblationPlan, entry: &AblationEntry, corpus: &Corpus, split: &Split) -> RunResult {
    let mut result = RunResult {
        entry: entry.clone(),
        params: 0,
        report: None,
        records: Vec::new(),
        best_epoch: 0,
        error: None,
    };
    let n_mels = corpus.recordings.first().map_or(0, |r| r.features.n_mels());
    let config = plan.model_config(&entry.schedule, corpus.classes.len(), n_mels);
    let mut attempt = || -> Result<()> {
        result.params = Crnn::new(&config, 0)?.count_params().total;
        let outcome = train(
            &config,
            &corpus.subset(&split.train),
            &corpus.subset(&split.val),
            &plan.train,
            |_| {},
        )?;
        let test = evaluate(&outcome.best, &corpus.subset(&split.test), plan.train.chunk_frames)?;
        result.report = Some(test.report);
        result.records = outcome.records;
        result.best_epoch = outcome.best_epoch;
        Ok(())
    };
    if let Err(e) = attempt() {
        result.error = Some(e.to_string());
    }
    result
}

/// Trains and tests every entry of `plan` on `corpus`. Up to `jobs` runs
/// proceed on parallel threads; results come back in plan order and a
/// failed run is recorded without stopping the others. `progress` is
/// called as each run finishes.
pub fn run_ablation(
    plan: &AblationPlan,
    corpus: &Corpus,
    split: &Split,
    jobs: usize,
    progress: impl Fn(&RunResult) + Sync,
) -> Result<Vec<RunResult>> {
    if plan.entries.is_empty() {
        return Err(SedError::Config("ablation plan has no entries".into()));
    }
    plan.train.validate()?;
    if split.train.is_empty() || split.val.is_empty() || split.test.is_empty() {
        return Err(SedError::Data("ablation needs nonempty train, validation and test splits".into()));
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<RunResult>>> = Mutex::new(vec![None; plan.entries.len()]);
    let workers = jobs.clamp(1, plan.entries.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(entry) = plan.entries.get(i) else { break };
                let result = run_one(plan, entry, corpus, split);
                progress(&result);
                slots.lock().expect("result lock")[i] = Some(result);
            });
        }
    });
    Ok(slots
        .into_inner()
        .expect("result lock")
        .into_iter()
        .map(|r| r.expect("every entry ran"))
        .collect())
}

/// One row per run; metrics of a failed run are written as `nan`.
pub fn results_csv(results: &[RunResult]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in results {
        let (f1, er) = match &r.report {
            Some(rep) => (
                format!("{:.2}", rep.f1() * 100.0),
                rep.error_rate().map_or_else(|| "nan".into(), |e| format!("{:.2}", e * 100.0)),
            ),
            None => ("nan".into(), "nan".into()),
        };
        writeln!(out, "{},{},{},{f1},{er}", r.entry.name, r.entry.schedule, r.params).expect("write to string");
    }
    out
}

pub fn curves_csv(results: &[RunResult]) -> String {
    let mut out = format!("{CURVES_HEADER}\n");
    for r in results {
        for rec in &r.records {
            writeln!(out, "{},{},{}", r.entry.name, r.entry.schedule, rec.csv_row()).expect("write to string");
        }
    }
    out
}
