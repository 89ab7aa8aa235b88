//! Data generation, training, sweeps and the gating ablation.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use ssm_lab_core::datagen::{gen_balanced_dataset, Dataset};
use ssm_lab_core::diagnostics::{export_traces, fmt_f64};
use ssm_lab_core::featurespace::FeatureBasis;
use ssm_lab_core::rng::{derive_seed, labels};
use ssm_lab_core::trainer::{export_trajectory, train, StopReason, TrainConfig, TrainResult};
use ssm_lab_core::Error as CoreError;

use crate::config::{ExperimentConfig, SweepParameter};
use crate::error::{CliError, CliResult};
use crate::manifest::Manifest;
use crate::stats::{mean, spearman};

/// Overrides given on the command line.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.master_seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
    }
}

pub fn basis_for(cfg: &ExperimentConfig) -> CliResult<FeatureBasis> {
    cfg.basis
        .build(cfg.data.dim())?
        .ok_or_else(|| CliError::Config("basis kind `custom` cannot be rebuilt from a config".into()))
}

/// Train and test sets for a run seed.
pub fn datasets(cfg: &ExperimentConfig, basis: &FeatureBasis, seed: u64) -> CliResult<(Dataset, Dataset)> {
    let tr = gen_balanced_dataset(&cfg.data, cfg.n_train, basis, derive_seed(seed, labels::TRAIN_DATA))?;
    let te = gen_balanced_dataset(&cfg.data, cfg.n_test, basis, derive_seed(seed, labels::TEST_DATA))?;
    Ok((tr, te))
}

pub fn trial_seed(cfg: &ExperimentConfig, trial: usize) -> u64 {
    cfg.master_seed.wrapping_add(trial as u64)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_csv_file(path: &Path, f: impl FnOnce(&mut Vec<u8>) -> CliResult<()>) -> CliResult<()> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

fn opt_usize(v: Option<usize>) -> String {
    v.map(|e| e.to_string()).unwrap_or_default()
}

fn opt_f64(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

// gen-data

/// Role and label counts of one dataset, for the printed summary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DatasetSummary {
    pub samples: usize,
    pub positive: usize,
    pub negative: usize,
    /// Range over samples of the count of the sample's own class feature.
    pub own_feature: (usize, usize),
    /// Range over samples of the count of the opposite class feature.
    pub other_feature: (usize, usize),
}

pub fn summarize(ds: &Dataset) -> DatasetSummary {
    let (positive, negative) = ds.label_counts();
    let mut own = (usize::MAX, 0);
    let mut other = (usize::MAX, 0);
    for s in &ds.samples {
        let a = s.count_role(s.label.relevant_feature());
        let b = s.count_role(s.label.confusion_feature());
        own = (own.0.min(a), own.1.max(a));
        other = (other.0.min(b), other.1.max(b));
    }
    DatasetSummary { samples: ds.len(), positive, negative, own_feature: own, other_feature: other }
}

impl std::fmt::Display for DatasetSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let range = |(lo, hi): (usize, usize)| if lo == hi { lo.to_string() } else { format!("{lo}..{hi}") };
        write!(
            f,
            "{} samples ({} positive, {} negative); own-class feature tokens per sample: {}; opposite-class: {}",
            self.samples,
            self.positive,
            self.negative,
            range(self.own_feature),
            range(self.other_feature)
        )
    }
}

/// Writes `train.json`, `test.json` and `manifest.json` for the master seed.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> CliResult<(DatasetSummary, DatasetSummary)> {
    let basis = basis_for(cfg)?;
    let (tr, te) = datasets(cfg, &basis, cfg.master_seed)?;
    create_dir(&cfg.output_dir)?;
    tr.save(&cfg.output_dir.join("train.json"))?;
    te.save(&cfg.output_dir.join("test.json"))?;
    let (s_tr, s_te) = (summarize(&tr), summarize(&te));
    Manifest::new(
        "gen-data",
        cfg,
        json!({
            "seed": cfg.master_seed,
            "train_data_seed": tr.seed,
            "test_data_seed": te.seed,
            "train": s_tr,
            "test": s_te,
        }),
    )
    .write(&cfg.output_dir.join("manifest.json"))?;
    Ok((s_tr, s_te))
}

// train

/// Outcome of one training run, as recorded in CSVs and manifests.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub trial: usize,
    pub seed: u64,
    pub converged: bool,
    pub epochs: Option<usize>,
    pub stop_reason: String,
    pub iterations: usize,
    pub final_train_loss: f64,
    pub final_test_loss: f64,
    pub final_test_acc: f64,
    pub lucky_stability: f64,
}

impl TrialRecord {
    fn from_result(trial: usize, seed: u64, r: &TrainResult) -> Self {
        let last = r.final_record();
        let stop_reason = match r.stop_reason {
            StopReason::Converged => "converged",
            StopReason::Stalled => "stalled",
            StopReason::MaxIters => "max_iters",
        };
        Self {
            trial,
            seed,
            converged: r.converged,
            epochs: r.epochs_to_converge,
            stop_reason: stop_reason.into(),
            iterations: r.iterations,
            final_train_loss: last.train_loss,
            final_test_loss: last.test_loss,
            final_test_acc: last.test_acc,
            lucky_stability: r.lucky_stability(),
        }
    }

    /// A run stopped by divergence: unsuccessful, with infinite losses.
    fn diverged(trial: usize, seed: u64, iter: usize) -> Self {
        Self {
            trial,
            seed,
            converged: false,
            epochs: None,
            stop_reason: "diverged".into(),
            iterations: iter,
            final_train_loss: f64::INFINITY,
            final_test_loss: f64::INFINITY,
            final_test_acc: 0.0,
            lucky_stability: 0.0,
        }
    }
}

const TRIAL_COLUMNS: [&str; 10] = [
    "trial",
    "seed",
    "converged",
    "epochs",
    "stop_reason",
    "iterations",
    "final_train_loss",
    "final_test_loss",
    "final_test_acc",
    "lucky_stability",
];

fn trial_row(r: &TrialRecord) -> Vec<String> {
    vec![
        r.trial.to_string(),
        r.seed.to_string(),
        r.converged.to_string(),
        opt_usize(r.epochs),
        r.stop_reason.clone(),
        r.iterations.to_string(),
        fmt_f64(r.final_train_loss),
        fmt_f64(r.final_test_loss),
        fmt_f64(r.final_test_acc),
        fmt_f64(r.lucky_stability),
    ]
}

/// One training run on freshly generated data for `seed`.
pub fn run_trial(
    cfg: &ExperimentConfig,
    basis: &FeatureBasis,
    seed: u64,
    gating: Option<bool>,
) -> CliResult<(TrainConfig, TrainResult)> {
    let (tr, te) = datasets(cfg, basis, seed)?;
    Ok(run_on(cfg, basis, &tr, &te, seed, gating)?)
}

fn run_on(
    cfg: &ExperimentConfig,
    basis: &FeatureBasis,
    tr: &Dataset,
    te: &Dataset,
    seed: u64,
    gating: Option<bool>,
) -> Result<(TrainConfig, TrainResult), CoreError> {
    let mut tc = cfg.train.resolve(&cfg.data, seed);
    if let Some(g) = gating {
        tc.gating_enabled = g;
    }
    let r = train(&tc, tr, te, basis)?;
    Ok((tc, r))
}

/// Runs every trial, writing `trajectory_NNN.csv`, `alignment_NNN.csv` and
/// `manifest_NNN.json` per trial. A diverging trial aborts the command.
pub fn cmd_train(cfg: &ExperimentConfig) -> CliResult<Vec<TrialRecord>> {
    let basis = basis_for(cfg)?;
    create_dir(&cfg.output_dir)?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let seed = trial_seed(cfg, k);
            let (tc, r) = run_trial(cfg, &basis, seed, None)?;
            let dir = &cfg.output_dir;
            write_csv_file(&dir.join(format!("trajectory_{k:03}.csv")), |b| Ok(export_trajectory(&r.trajectory, b)?))?;
            write_csv_file(&dir.join(format!("alignment_{k:03}.csv")), |b| Ok(export_traces(&r.alignment, b)?))?;
            let rec = TrialRecord::from_result(k, seed, &r);
            Manifest::new(
                "train",
                cfg,
                json!({
                    "trial": k,
                    "seed": seed,
                    "train_data_seed": derive_seed(seed, labels::TRAIN_DATA),
                    "test_data_seed": derive_seed(seed, labels::TEST_DATA),
                    "train_config": tc,
                    "result": rec,
                    "lucky_initial": r.lucky_initial,
                    "lucky_final": r.lucky_final,
                }),
            )
            .write(&dir.join(format!("manifest_{k:03}.json")))?;
            Ok(rec)
        })
        .collect()
}

// sweep

/// Aggregate over the trials at one sweep value.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    /// Mean epochs over successful trials; absent when none succeeded.
    pub mean_epochs: Option<f64>,
    pub successes: usize,
    pub trials: usize,
}

impl SweepPoint {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub parameter: SweepParameter,
    pub points: Vec<SweepPoint>,
    /// Per value, the records of every trial.
    pub records: Vec<(f64, Vec<TrialRecord>)>,
    /// Rank correlation of the value with mean epochs over points that have
    /// at least one success.
    pub spearman: Option<f64>,
}

fn record_or_divergence(
    trial: usize,
    seed: u64,
    out: Result<(TrainConfig, TrainResult), CoreError>,
) -> CliResult<TrialRecord> {
    match out {
        Ok((_, r)) => Ok(TrialRecord::from_result(trial, seed, &r)),
        Err(CoreError::Diverged { iter, .. }) => Ok(TrialRecord::diverged(trial, seed, iter)),
        Err(e) => Err(e.into()),
    }
}

/// Aggregates trial records at each value into a summary.
pub fn summarize_sweep(parameter: SweepParameter, records: Vec<(f64, Vec<TrialRecord>)>) -> SweepSummary {
    let points: Vec<SweepPoint> = records
        .iter()
        .map(|(value, recs)| {
            let epochs: Vec<f64> = recs.iter().filter_map(|r| r.epochs.map(|e| e as f64)).collect();
            SweepPoint { value: *value, mean_epochs: mean(&epochs), successes: epochs.len(), trials: recs.len() }
        })
        .collect();
    let (xs, ys): (Vec<f64>, Vec<f64>) = points.iter().filter_map(|p| p.mean_epochs.map(|m| (p.value, m))).unzip();
    SweepSummary { parameter, spearman: spearman(&xs, &ys), points, records }
}

/// Trains `trials` runs at every sweep value. Value `i` and trial `k` share
/// seed `master_seed + k` across values. Diverging runs count as failures.
pub fn run_sweep(cfg: &ExperimentConfig) -> CliResult<SweepSummary> {
    let sweep = cfg.sweep.as_ref().ok_or_else(|| CliError::Config("sweep command needs a `sweep` block".into()))?;
    let per_value: Vec<ExperimentConfig> =
        sweep.values.iter().map(|&v| cfg.at_sweep_value(sweep.parameter, v)).collect::<CliResult<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..per_value.len()).flat_map(|i| (0..cfg.trials).map(move |k| (i, k))).collect();
    let bases: Vec<FeatureBasis> = per_value.iter().map(basis_for).collect::<CliResult<_>>()?;
    let flat: Vec<TrialRecord> = jobs
        .par_iter()
        .map(|&(i, k)| {
            let seed = trial_seed(cfg, k);
            let (tr, te) = datasets(&per_value[i], &bases[i], seed)?;
            record_or_divergence(k, seed, run_on(&per_value[i], &bases[i], &tr, &te, seed, None))
        })
        .collect::<CliResult<_>>()?;
    let mut records: Vec<(f64, Vec<TrialRecord>)> = sweep.values.iter().map(|&v| (v, Vec::new())).collect();
    for (&(i, _), rec) in jobs.iter().zip(flat) {
        records[i].1.push(rec);
    }
    Ok(summarize_sweep(sweep.parameter, records))
}

pub const SWEEP_SUMMARY_COLUMNS: [&str; 6] = ["parameter", "value", "mean_epochs", "success_rate", "successes", "trials"];

/// Runs the sweep and writes `sweep_summary.csv`, `sweep_trials.csv` and
/// `manifest.json`.
pub fn cmd_sweep(cfg: &ExperimentConfig) -> CliResult<SweepSummary> {
    let summary = run_sweep(cfg)?;
    create_dir(&cfg.output_dir)?;
    let name = summary.parameter.to_string();
    write_csv_file(&cfg.output_dir.join("sweep_summary.csv"), |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(SWEEP_SUMMARY_COLUMNS)?;
        for p in &summary.points {
            w.write_record([
                name.clone(),
                fmt_f64(p.value),
                opt_f64(p.mean_epochs),
                fmt_f64(p.success_rate()),
                p.successes.to_string(),
                p.trials.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    write_csv_file(&cfg.output_dir.join("sweep_trials.csv"), |b| {
        let mut w = csv::Writer::from_writer(b);
        let mut header = vec!["value"];
        header.extend(TRIAL_COLUMNS);
        w.write_record(&header)?;
        for (value, recs) in &summary.records {
            for r in recs {
                let mut row = vec![fmt_f64(*value)];
                row.extend(trial_row(r));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    })?;
    Manifest::new(
        "sweep",
        cfg,
        json!({
            "trial_seeds": (0..cfg.trials).map(|k| trial_seed(cfg, k)).collect::<Vec<_>>(),
            "points": summary.points,
            "spearman": summary.spearman,
        }),
    )
    .write(&cfg.output_dir.join("manifest.json"))?;
    Ok(summary)
}

// ablate-gating

/// Gated and ungated runs on identical data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationPair {
    pub seed: u64,
    pub gated: TrialRecord,
    pub ungated: TrialRecord,
}

impl AblationPair {
    pub fn gated_loss_no_worse(&self) -> bool {
        self.gated.final_test_loss <= self.ungated.final_test_loss
    }

    /// Epoch comparison where a run that never converged counts as slower
    /// than any run that did.
    pub fn gated_epochs_no_worse(&self) -> bool {
        match (self.gated.epochs, self.ungated.epochs) {
            (Some(g), Some(u)) => g <= u,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (None, None) => false,
        }
    }
}

pub const ABLATION_COLUMNS: [&str; 5] =
    ["seed", "final_test_loss_gated", "final_test_loss_ungated", "epochs_gated", "epochs_ungated"];

pub fn run_ablation(cfg: &ExperimentConfig) -> CliResult<Vec<AblationPair>> {
    if cfg.train.gating_enabled.is_some() {
        return Err(CliError::Config(
            "train.gating_enabled must not be set: ablate-gating runs both settings".into(),
        ));
    }
    let basis = basis_for(cfg)?;
    (0..cfg.trials)
        .into_par_iter()
        .map(|k| {
            let seed = trial_seed(cfg, k);
            let (tr, te) = datasets(cfg, &basis, seed)?;
            let gated = record_or_divergence(k, seed, run_on(cfg, &basis, &tr, &te, seed, Some(true)))?;
            let ungated = record_or_divergence(k, seed, run_on(cfg, &basis, &tr, &te, seed, Some(false)))?;
            Ok(AblationPair { seed, gated, ungated })
        })
        .collect()
}

/// Runs the paired ablation and writes `ablation.csv` and `manifest.json`.
pub fn cmd_ablate_gating(cfg: &ExperimentConfig) -> CliResult<Vec<AblationPair>> {
    let pairs = run_ablation(cfg)?;
    create_dir(&cfg.output_dir)?;
    write_csv_file(&cfg.output_dir.join("ablation.csv"), |b| {
        let mut w = csv::Writer::from_writer(b);
        w.write_record(ABLATION_COLUMNS)?;
        for p in &pairs {
            w.write_record([
                p.seed.to_string(),
                fmt_f64(p.gated.final_test_loss),
                fmt_f64(p.ungated.final_test_loss),
                opt_usize(p.gated.epochs),
                opt_usize(p.ungated.epochs),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    let loss_wins = pairs.iter().filter(|p| p.gated_loss_no_worse()).count();
    let epoch_wins = pairs.iter().filter(|p| p.gated_epochs_no_worse()).count();
    Manifest::new(
        "ablate-gating",
        cfg,
        json!({
            "pairs": pairs,
            "gated_loss_no_worse": loss_wins,
            "gated_epochs_no_worse": epoch_wins,
        }),
    )
    .write(&cfg.output_dir.join("manifest.json"))?;
    Ok(pairs)
}

