//! Command-line pipeline: each subcommand reads the artifacts of the stage
//! before it from the output directory and writes its own next to them.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::clustering::{
    assignments, compute_features, label_clusters, read_assignments_csv, select_k, write_assignments_csv,
    write_diagnostics_csv, Assignment, Criterion, DriverClass, DriverFeatures,
};
use crate::config::RunConfig;
use crate::env::{build_env_sequence, write_env_sequences_csv};
use crate::error::{Error, Result};
use crate::eval::{
    markdown_report, plan_jobs, read_runs_csv, read_sweep_csv, run_window_sweep, score_job, sweep_markdown,
    trace_file_name, write_grid_csv, write_runs_csv, write_sweep_csv, write_trace_csv, ExperimentGrid, Job,
};
use crate::predictor::{build_samples, split_vehicles, Manifest, ManifestEntry, Model, Sample, Split};
use crate::synth::generate_population;
use crate::trajectory::{differentiate_speed, read_profiles_csv, read_tracks_csv, resample_to_grid, write_profiles_csv, write_tracks_csv, SpatialProfile};
use crate::seed;

pub const RESOLVED_CONFIG: &str = "resolved_config.toml";
pub const TRACKS: &str = "tracks.csv";
pub const LABELS: &str = "labels.csv";
pub const PROFILES: &str = "profiles.csv";
pub const ENV_SEQUENCES: &str = "env_sequences.csv";
pub const DRIVER_FEATURES: &str = "driver_features.csv";
pub const ASSIGNMENTS: &str = "assignments.csv";
pub const K_DIAGNOSTICS: &str = "k_diagnostics.csv";
pub const MODELS: &str = "models";
pub const MANIFEST: &str = "models/manifest.toml";
pub const PREDICTIONS: &str = "predictions";
pub const GRID: &str = "grid.csv";
pub const RUNS: &str = "runs.csv";
pub const SWEEP: &str = "sweep.csv";
pub const REPORT: &str = "report.md";

#[derive(Debug, Parser)]
#[command(name = "tunnel-accel", version, about = "Tunnel-exit acceleration prediction pipeline")]
pub struct Cli {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Root seed, overriding `run.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory, overriding `run.out`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads, overriding `run.jobs`.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate vehicle trajectories.
    Generate,
    /// Resample trajectories onto the 1 m grid.
    Preprocess,
    /// Environmental sequences and per-vehicle clustering features.
    Features,
    /// Cluster drivers and select the number of clusters.
    Cluster,
    /// Train every model of the experiment grid.
    Train,
    /// Write prediction traces for the trained models.
    Predict,
    /// Score the trained models on the test split.
    Evaluate,
    /// Render the Markdown report.
    Report,
    /// Run every stage in order.
    Pipeline,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Preprocess => "preprocess",
            Command::Features => "features",
            Command::Cluster => "cluster",
            Command::Train => "train",
            Command::Predict => "predict",
            Command::Evaluate => "evaluate",
            Command::Report => "report",
            Command::Pipeline => "pipeline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LabelRow {
    vehicle_id: String,
    archetype: DriverClass,
}

struct Stage<'a> {
    cfg: &'a RunConfig,
    out: &'a Path,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

impl Stage<'_> {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn open(&self, name: &str, producer: &'static str) -> Result<BufReader<File>> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Error::MissingArtifact { path, producer });
        }
        Ok(BufReader::new(File::open(&path).map_err(|e| Error::io(&path, e))?))
    }

    fn generate(&self) -> Result<()> {
        let pop = generate_population(&self.cfg.scenario, &self.cfg.archetypes)?;
        write_tracks_csv(create(&self.path(TRACKS))?, &pop.tracks)?;
        let mut w = csv::Writer::from_writer(create(&self.path(LABELS))?);
        for (t, l) in pop.tracks.iter().zip(&pop.labels) {
            w.serialize(LabelRow { vehicle_id: t.vehicle_id.clone(), archetype: *l })?;
        }
        w.flush().map_err(|e| Error::io(self.path(LABELS), e))?;
        log::info!("generated {} vehicles", pop.tracks.len());
        Ok(())
    }

    fn preprocess(&self) -> Result<()> {
        let tracks = read_tracks_csv(self.open(TRACKS, "generate")?)?;
        let spacing = self.cfg.trajectory.grid_spacing;
        let profiles: Vec<SpatialProfile> = tracks
            .iter()
            .map(|t| {
                if t.samples.iter().any(|s| s.a.is_none()) {
                    resample_to_grid(&differentiate_speed(t)?, spacing)
                } else {
                    resample_to_grid(t, spacing)
                }
            })
            .collect::<Result<_>>()?;
        write_profiles_csv(create(&self.path(PROFILES))?, &profiles)?;
        log::info!("resampled {} profiles", profiles.len());
        Ok(())
    }

    fn profiles(&self) -> Result<Vec<SpatialProfile>> {
        read_profiles_csv(self.open(PROFILES, "preprocess")?)
    }

    fn features(&self) -> Result<()> {
        let profiles = self.profiles()?;
        let window = self.cfg.env.window_min * 60.0;
        let first_end = window.max(self.cfg.env.warmup_min * 60.0);
        let mut seqs = Vec::new();
        let mut end = first_end;
        while end <= self.cfg.scenario.duration + 1e-9 {
            seqs.push(build_env_sequence(&profiles, end, window, &self.cfg.env.options())?);
            end += window;
        }
        write_env_sequences_csv(create(&self.path(ENV_SEQUENCES))?, &seqs)?;
        let feats: Vec<DriverFeatures> = profiles.iter().map(compute_features).collect::<Result<_>>()?;
        let mut w = csv::Writer::from_writer(create(&self.path(DRIVER_FEATURES))?);
        for f in &feats {
            w.serialize(f)?;
        }
        w.flush().map_err(|e| Error::io(self.path(DRIVER_FEATURES), e))?;
        log::info!("{} environmental windows, {} feature rows", seqs.len(), feats.len());
        Ok(())
    }

    fn cluster(&self) -> Result<usize> {
        let mut r = csv::Reader::from_reader(self.open(DRIVER_FEATURES, "features")?);
        let feats: Vec<DriverFeatures> = r.deserialize().collect::<std::result::Result<_, _>>()?;
        let c = &self.cfg.clustering;
        let k_max = c.k_max.min(feats.len());
        let sel = select_k(&feats, c.k_min..=k_max, seed::derive(self.cfg.run.seed, "clustering"), &c.kmeans(), c.criterion)?;
        println!("selected k = {}", sel.best_k);
        for other in [Criterion::Aic, Criterion::Bic] {
            if other != c.criterion {
                log::info!("{other:?} would select k = {}", sel.argmin(other));
            }
        }
        let best = label_clusters(sel.best().clone());
        let rows = assignments(&feats, &best);
        write_assignments_csv(create(&self.path(ASSIGNMENTS))?, &rows)?;
        write_diagnostics_csv(create(&self.path(K_DIAGNOSTICS))?, &sel.diagnostics)?;
        if let Ok(f) = self.open(LABELS, "generate") {
            let truth: HashMap<String, DriverClass> = csv::Reader::from_reader(f)
                .deserialize::<LabelRow>()
                .filter_map(|r| r.ok())
                .map(|r| (r.vehicle_id, r.archetype))
                .collect();
            let agree = rows.iter().filter(|a| a.label.is_some() && a.label == truth.get(&a.vehicle_id).copied()).count();
            log::info!("cluster labels agree with generator archetypes on {agree} of {} vehicles", rows.len());
        }
        Ok(sel.best_k)
    }

    /// Samples, driver classes and the vehicle split shared by the
    /// training and scoring stages.
    fn dataset(&self) -> Result<(Vec<Sample>, Split)> {
        let profiles = self.profiles()?;
        let rows: Vec<Assignment> = read_assignments_csv(self.open(ASSIGNMENTS, "cluster")?)?;
        let classes: HashMap<String, DriverClass> =
            rows.iter().filter_map(|a| a.label.map(|l| (a.vehicle_id.clone(), l))).collect();
        let samples = build_samples(&profiles, &classes, &self.cfg.sample_options())?;
        let ids: Vec<(String, Option<DriverClass>)> =
            profiles.iter().map(|p| (p.vehicle_id.clone(), classes.get(&p.vehicle_id).copied())).collect();
        let split = split_vehicles(&ids, &self.cfg.data.split, self.cfg.run.seed)?;
        log::info!("{} samples from {} vehicles", samples.len(), profiles.len());
        Ok((samples, split))
    }

    fn train(&self) -> Result<()> {
        use rayon::prelude::*;
        let (samples, split) = self.dataset()?;
        let jobs = plan_jobs(&self.cfg.experiment, self.cfg.run.seed);
        fs::create_dir_all(self.path(MODELS)).map_err(|e| Error::io(self.path(MODELS), e))?;
        let trained: Vec<Result<ManifestEntry>> = jobs
            .par_iter()
            .map(|job| {
                let (model, report) = job.train(&samples, &split, &self.cfg.model, &self.cfg.train)?;
                let file = model_file_name(job);
                model.save(&self.path(MODELS).join(&file))?;
                let mut entry = ManifestEntry::new(file, job.class, &model.config, &report);
                entry.replicate = job.replicate;
                Ok(entry)
            })
            .collect();
        let mut manifest = Manifest::default();
        for (job, res) in jobs.iter().zip(trained) {
            match res {
                Ok(e) => manifest.models.push(e),
                Err(e) => log::warn!("cell absent: {} {:?} {} m env={}: {e}", job.model, job.class, job.horizon_m, job.env),
            }
        }
        manifest.write(&self.path(MANIFEST))?;
        log::info!("trained {} of {} models", manifest.models.len(), jobs.len());
        Ok(())
    }

    fn trained(&self) -> Result<Vec<(Job, Model)>> {
        let path = self.path(MANIFEST);
        if !path.exists() {
            return Err(Error::MissingArtifact { path, producer: "train" });
        }
        let manifest = Manifest::read(&path)?;
        manifest
            .models
            .iter()
            .map(|e| {
                let job = Job { model: e.model, class: e.class, horizon_m: e.horizon_m, env: e.env, replicate: e.replicate, seed: e.seed };
                let model_path = self.path(MODELS).join(&e.file);
                if !model_path.exists() {
                    return Err(Error::MissingArtifact { path: model_path, producer: "train" });
                }
                Ok((job, Model::load(&model_path)?))
            })
            .collect()
    }

    fn predict(&self) -> Result<()> {
        let models = self.trained()?;
        let (samples, split) = self.dataset()?;
        let n = self.cfg.experiment.trace_vehicles.max(1);
        let mut written = 0;
        for (job, model) in models.iter().filter(|(j, _)| j.replicate == 0) {
            let (_, traces) = score_job(job, model, &samples, &split, n)?;
            for (key, rows) in traces {
                write_trace_csv(create(&self.path(PREDICTIONS).join(trace_file_name(&key)))?, &rows)?;
                written += 1;
            }
        }
        log::info!("wrote {written} prediction traces");
        Ok(())
    }

    fn evaluate(&self) -> Result<()> {
        use rayon::prelude::*;
        let models = self.trained()?;
        let (samples, split) = self.dataset()?;
        let scored: Vec<Result<_>> = models.par_iter().map(|(job, model)| score_job(job, model, &samples, &split, 0)).collect();
        let mut grid = ExperimentGrid::default();
        for r in scored {
            grid.reports.extend(r?.0);
        }
        write_runs_csv(create(&self.path(RUNS))?, &grid.reports)?;
        write_grid_csv(create(&self.path(GRID))?, &grid.cells())?;
        if let Some(spec) = &self.cfg.sweep {
            let profiles = self.profiles()?;
            let rows = read_assignments_csv(self.open(ASSIGNMENTS, "cluster")?)?;
            let classes: HashMap<String, DriverClass> =
                rows.iter().filter_map(|a| a.label.map(|l| (a.vehicle_id.clone(), l))).collect();
            let sweep = run_window_sweep(
                &profiles,
                &classes,
                &self.cfg.sample_options(),
                spec,
                &self.cfg.model,
                &self.cfg.train,
                &self.cfg.data.split,
                self.cfg.run.seed,
            )?;
            write_sweep_csv(create(&self.path(SWEEP))?, &sweep)?;
        }
        log::info!("scored {} cells", grid.cells().len());
        Ok(())
    }

    fn report(&self) -> Result<()> {
        let reports = read_runs_csv(self.open(RUNS, "evaluate")?)?;
        let grid = ExperimentGrid { reports };
        let mut md = markdown_report(&grid.cells());
        if self.path(SWEEP).exists() {
            let rows = read_sweep_csv(self.open(SWEEP, "evaluate")?)?;
            md.push_str("\n## Environmental window length\n\n");
            md.push_str(&sweep_markdown(&rows));
        }
        let mut w = create(&self.path(REPORT))?;
        w.write_all(md.as_bytes()).map_err(|e| Error::io(self.path(REPORT), e))?;
        w.flush().map_err(|e| Error::io(self.path(REPORT), e))?;
        Ok(())
    }
}

pub fn model_file_name(job: &Job) -> String {
    let group = job.class.map_or("U", |c| c.code());
    format!("{}_{}_{}m_{}_r{}.model", job.model.name(), group, job.horizon_m, if job.env { "Y" } else { "N" }, job.replicate)
}

/// Runs one subcommand against a resolved configuration.
pub fn execute(command: Command, cfg: &RunConfig) -> Result<()> {
    cfg.validate()?;
    let out = cfg.run.out.as_path();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let text = cfg.to_toml()?;
    let config_path = out.join(RESOLVED_CONFIG);
    fs::write(&config_path, &text).map_err(|e| Error::io(&config_path, e))?;
    eprintln!("{} with seed {} (resolved config in {})", command.name(), cfg.run.seed, config_path.display());
    eprintln!("{text}");
    let stage = Stage { cfg, out };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.run.jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {} worker threads: {e}", cfg.run.jobs)))?;
    pool.install(|| match command {
        Command::Generate => stage.generate(),
        Command::Preprocess => stage.preprocess(),
        Command::Features => stage.features(),
        Command::Cluster => stage.cluster().map(|_| ()),
        Command::Train => stage.train(),
        Command::Predict => stage.predict(),
        Command::Evaluate => stage.evaluate(),
        Command::Report => stage.report(),
        Command::Pipeline => {
            stage.generate()?;
            stage.preprocess()?;
            stage.features()?;
            stage.cluster()?;
            stage.train()?;
            stage.predict()?;
            stage.evaluate()?;
            stage.report()
        }
    })
}

/// Loads the configuration named by `cli` and runs its subcommand.
pub fn run(cli: &Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let cfg = cfg.with_overrides(cli.seed, cli.out.clone(), cli.jobs);
    execute(cli.command, &cfg)
}
