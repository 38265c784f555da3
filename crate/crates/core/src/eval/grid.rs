use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{mean_std, ErrorAccumulator};
use crate::clustering::DriverClass;
use crate::error::{Error, Result};
use crate::predictor::{train, Model, ModelConfig, ModelKind, Part, Sample, Split, TrainConfig, TrainReport};
use crate::seed;

/// Which vehicles a cell's model was trained on and evaluated against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Group {
    /// Class-specific model on its own class.
    Class(DriverClass),
    /// Pooled model on every test vehicle.
    Pooled,
    /// Pooled model restricted to one class's test vehicles.
    PooledOn(DriverClass),
}

impl Group {
    pub fn code(self) -> String {
        match self {
            Group::Class(c) => c.code().to_string(),
            Group::Pooled => "U".to_string(),
            Group::PooledOn(c) => format!("U-{}", c.code()),
        }
    }

    pub fn class(self) -> Option<DriverClass> {
        match self {
            Group::Class(c) | Group::PooledOn(c) => Some(c),
            Group::Pooled => None,
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for Group {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "U" => Ok(Group::Pooled),
            _ => match s.strip_prefix("U-") {
                Some(c) => Ok(Group::PooledOn(c.parse()?)),
                None => Ok(Group::Class(s.parse()?)),
            },
        }
    }
}

/// Grid coordinates of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellKey {
    pub model: ModelKind,
    pub group: Group,
    pub horizon_m: usize,
    pub env: bool,
}

impl Ord for CellKey {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.model, self.group, self.horizon_m, !self.env).cmp(&(other.model, other.group, other.horizon_m, !other.env))
    }
}

impl PartialOrd for CellKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Test-split errors of one trained model on one group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub key: CellKey,
    pub seed: u64,
    pub mae: f64,
    pub rmse: f64,
    /// Number of predicted values.
    pub m: usize,
}

/// Seed-aggregated cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSummary {
    pub key: CellKey,
    pub seed_count: usize,
    pub mae_mean: f64,
    pub mae_std: f64,
    pub rmse_mean: f64,
    pub rmse_std: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentGrid {
    pub reports: Vec<MetricReport>,
}

impl ExperimentGrid {
    pub fn cells(&self) -> Vec<CellSummary> {
        let mut by_key: BTreeMap<CellKey, Vec<&MetricReport>> = BTreeMap::new();
        for r in &self.reports {
            by_key.entry(r.key).or_default().push(r);
        }
        by_key
            .into_iter()
            .map(|(key, rs)| {
                let (mae_mean, mae_std) = mean_std(&rs.iter().map(|r| r.mae).collect::<Vec<_>>());
                let (rmse_mean, rmse_std) = mean_std(&rs.iter().map(|r| r.rmse).collect::<Vec<_>>());
                CellSummary { key, seed_count: rs.len(), mae_mean, mae_std, rmse_mean, rmse_std }
            })
            .collect()
    }

    pub fn cell(&self, key: CellKey) -> Option<CellSummary> {
        self.cells().into_iter().find(|c| c.key == key)
    }
}

/// One row of a prediction trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub vehicle_id: String,
    pub anchor_m: i64,
    pub offset_m: usize,
    pub y_true: f64,
    pub y_pred: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub models: Vec<ModelKind>,
    pub horizons: Vec<usize>,
    /// Env settings for the Seq2Seq model.
    pub env: Vec<bool>,
    /// Env settings for the baselines; defaults to `env`.
    pub baseline_env: Option<Vec<bool>>,
    /// Train one model per driver class.
    pub classes: bool,
    /// Train the pooled model for Seq2Seq.
    pub pooled: bool,
    /// Train the pooled model for the baselines too.
    pub baseline_pooled: bool,
    pub seeds: usize,
    /// Test vehicles per condition written to prediction traces.
    pub trace_vehicles: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            models: ModelKind::ALL.to_vec(),
            horizons: vec![10, 30, 50],
            env: vec![true, false],
            baseline_env: None,
            classes: true,
            pooled: true,
            baseline_pooled: true,
            seeds: 5,
            trace_vehicles: 2,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.models.is_empty() || self.horizons.is_empty() || self.env.is_empty() || self.seeds == 0 {
            return Err(Error::validation("grid needs at least one model, horizon, env setting and seed"));
        }
        if self.horizons.contains(&0) {
            return Err(Error::validation("horizons must be positive"));
        }
        if !self.classes && !self.pooled {
            return Err(Error::validation("grid trains neither class models nor pooled models"));
        }
        Ok(())
    }

    /// Seed of replicate `i`, shared by every cell.
    pub fn replicate_seed(root: u64, i: usize) -> u64 {
        seed::derive(root, &format!("replicate/{i}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub model: ModelKind,
    pub class: Option<DriverClass>,
    pub horizon_m: usize,
    pub env: bool,
    pub replicate: usize,
    pub seed: u64,
}

/// Training runs implied by `spec`, in a fixed order.
pub fn plan_jobs(spec: &GridSpec, root_seed: u64) -> Vec<Job> {
    let mut jobs = Vec::new();
    for &model in &spec.models {
        let is_main = model == ModelKind::Seq2Seq;
        let envs = if is_main { spec.env.clone() } else { spec.baseline_env.clone().unwrap_or_else(|| spec.env.clone()) };
        let mut classes: Vec<Option<DriverClass>> = Vec::new();
        if spec.classes {
            classes.extend(DriverClass::ALL.map(Some));
        }
        if spec.pooled && (is_main || spec.baseline_pooled) {
            classes.push(None);
        }
        for &horizon_m in &spec.horizons {
            for &env in &envs {
                for &class in &classes {
                    for replicate in 0..spec.seeds {
                        let seed = GridSpec::replicate_seed(root_seed, replicate);
                        jobs.push(Job { model, class, horizon_m, env, replicate, seed });
                    }
                }
            }
        }
    }
    jobs
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridOutput {
    pub grid: ExperimentGrid,
    /// Traces of the first replicate per cell.
    pub traces: BTreeMap<CellKey, Vec<TraceRow>>,
    /// Jobs that could not be trained, with the reason.
    pub failures: Vec<String>,
}

pub type JobOutput = (Vec<MetricReport>, Vec<(CellKey, Vec<TraceRow>)>);

impl Job {
    /// Model configuration of this job's cell.
    pub fn config(&self, template: &ModelConfig) -> ModelConfig {
        ModelConfig { kind: self.model, horizon: self.horizon_m, use_env: self.env, seed: self.seed, ..template.clone() }
    }

    /// Groups this job's model is scored on.
    pub fn groups(&self) -> Vec<Group> {
        match self.class {
            Some(c) => vec![Group::Class(c)],
            None => {
                let mut g = vec![Group::Pooled];
                g.extend(DriverClass::ALL.map(Group::PooledOn));
                g
            }
        }
    }

    /// Trains this job's model on its training and validation vehicles.
    pub fn train(&self, samples: &[Sample], split: &Split, template: &ModelConfig, tc: &TrainConfig) -> Result<(Model, TrainReport)> {
        let tr = split.select(samples, Part::Train, self.class);
        let va = split.select(samples, Part::Val, self.class);
        train(&self.config(template), &tr, &va, tc, self.seed)
    }
}

/// Scores a trained model on the test vehicles of every group of `job`.
/// Traces cover the first `trace_vehicles` test vehicles by id, and are
/// produced only for replicate 0.
pub fn score_job(job: &Job, model: &Model, samples: &[Sample], split: &Split, trace_vehicles: usize) -> Result<JobOutput> {
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    for group in job.groups() {
        let key = CellKey { model: job.model, group, horizon_m: job.horizon_m, env: job.env };
        let test = split.select(samples, Part::Test, group.class());
        if test.is_empty() {
            log::warn!("no test samples for {} {} {} m", job.model, group, job.horizon_m);
            continue;
        }
        let preds = model.predict_samples(&test, job.horizon_m)?;
        let mut acc = ErrorAccumulator::default();
        for (p, s) in preds.iter().zip(&test) {
            acc.add(&s.target[..job.horizon_m], p)?;
        }
        reports.push(MetricReport { key, seed: job.seed, mae: acc.mae()?, rmse: acc.rmse()?, m: acc.count() });
        if job.replicate == 0 && trace_vehicles > 0 {
            traces.push((key, trace_rows(&test, &preds, trace_vehicles)));
        }
    }
    Ok((reports, traces))
}

fn trace_rows(test: &[&Sample], preds: &[Vec<f64>], trace_vehicles: usize) -> Vec<TraceRow> {
    let ids: BTreeSet<&str> = test.iter().map(|s| s.vehicle_id.as_str()).collect();
    let chosen: BTreeSet<&str> = ids.into_iter().take(trace_vehicles).collect();
    let mut rows = Vec::new();
    for (p, s) in preds.iter().zip(test) {
        if !chosen.contains(s.vehicle_id.as_str()) {
            continue;
        }
        for (k, (yt, yp)) in s.target.iter().zip(p).enumerate() {
            rows.push(TraceRow { vehicle_id: s.vehicle_id.clone(), anchor_m: s.anchor, offset_m: k + 1, y_true: *yt, y_pred: *yp });
        }
    }
    rows
}

/// Trains and scores every cell of `spec` over its replicate seeds. Jobs
/// that fail are recorded and their cells left absent.
pub fn run_comparison_grid(
    samples: &[Sample],
    split: &Split,
    spec: &GridSpec,
    template: &ModelConfig,
    tc: &TrainConfig,
    root_seed: u64,
) -> Result<GridOutput> {
    spec.validate()?;
    let jobs = plan_jobs(spec, root_seed);
    let results: Vec<(Job, Result<JobOutput>)> = jobs
        .par_iter()
        .map(|job| {
            let out = job
                .train(samples, split, template, tc)
                .and_then(|(model, _)| score_job(job, &model, samples, split, spec.trace_vehicles));
            log::info!(
                "grid job {} {} {} m env={} replicate {} done",
                job.model,
                job.class.map_or("pooled".to_string(), |c| c.to_string()),
                job.horizon_m,
                job.env,
                job.replicate
            );
            (*job, out)
        })
        .collect();
    let mut out = GridOutput::default();
    for (job, res) in results {
        match res {
            Ok((reports, traces)) => {
                out.grid.reports.extend(reports);
                out.traces.extend(traces);
            }
            Err(e) => {
                let msg = format!(
                    "{} {:?} {} m env={} replicate {}: {e}",
                    job.model, job.class, job.horizon_m, job.env, job.replicate
                );
                log::warn!("grid cell absent: {msg}");
                out.failures.push(msg);
            }
        }
    }
    Ok(out)
}
