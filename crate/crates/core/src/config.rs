//! Run configuration: one TOML file with a section per pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::{Criterion, KMeansOptions, Seeding};
use crate::env::EnvOptions;
use crate::error::{Error, Result};
use crate::eval::{GridSpec, SweepSpec};
use crate::predictor::{EnvSpan, ModelConfig, SampleOptions, SplitRatios, TrainConfig};
use crate::synth::{ArchetypeSpec, ScenarioSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    /// Root seed; every random stream of the run derives from it.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        RunSection { seed: 7, out: PathBuf::from("out"), jobs: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectorySection {
    /// Resampling grid spacing, m.
    pub grid_spacing: i64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        TrajectorySection { grid_spacing: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub section_start: i64,
    pub section_end: i64,
    pub min_support: usize,
    /// Length of the window of preceding vehicles, minutes.
    pub window_min: f64,
    /// Vehicles entering earlier than this are not used as targets, minutes.
    pub warmup_min: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let o = EnvOptions::default();
        EnvSection {
            section_start: o.section_start,
            section_end: o.section_end,
            min_support: o.min_support,
            window_min: 15.0,
            warmup_min: 15.0,
        }
    }
}

impl EnvSection {
    pub fn options(&self) -> EnvOptions {
        EnvOptions { section_start: self.section_start, section_end: self.section_end, min_support: self.min_support }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusteringSection {
    pub k_min: usize,
    pub k_max: usize,
    pub criterion: Criterion,
    pub restarts: usize,
    pub max_iter: usize,
    pub seeding: Seeding,
    pub standardize: bool,
}

impl Default for ClusteringSection {
    fn default() -> Self {
        let o = KMeansOptions::default();
        ClusteringSection {
            k_min: 1,
            k_max: 10,
            criterion: Criterion::Aic,
            restarts: o.restarts,
            max_iter: o.max_iter,
            seeding: o.seeding,
            standardize: o.standardize,
        }
    }
}

impl ClusteringSection {
    pub fn kmeans(&self) -> KMeansOptions {
        KMeansOptions { restarts: self.restarts, max_iter: self.max_iter, seeding: self.seeding, standardize: self.standardize }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Individual history length, m.
    pub history_len: usize,
    /// Spacing between prediction anchors, m.
    pub anchor_stride: usize,
    pub env_span: EnvSpan,
    pub split: SplitRatios,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection { history_len: 100, anchor_stride: 10, env_span: EnvSpan::Prediction, split: SplitRatios::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub scenario: ScenarioSpec,
    #[serde(rename = "archetype")]
    pub archetypes: Vec<ArchetypeSpec>,
    pub trajectory: TrajectorySection,
    pub env: EnvSection,
    pub clustering: ClusteringSection,
    pub data: DataSection,
    /// Template for every trained model; `kind`, `horizon`, `use_env` and
    /// `seed` are set per grid cell.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub experiment: GridSpec,
    /// Window-length sweep, run by `evaluate` when present.
    pub sweep: Option<SweepSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            run: RunSection::default(),
            scenario: ScenarioSpec::default(),
            archetypes: ArchetypeSpec::calibrated_defaults(),
            trajectory: TrajectorySection::default(),
            env: EnvSection::default(),
            clustering: ClusteringSection::default(),
            data: DataSection::default(),
            model: ModelConfig { hidden: 32, attn_width: 8, ..ModelConfig::default() },
            train: TrainConfig::default(),
            experiment: GridSpec::default(),
            sweep: None,
        }
    }
}

/// 1-based line of `key` inside `[section]` of a TOML document, or of the
/// section header when `key` is empty.
fn locate(text: &str, section: &str, key: &str) -> Option<usize> {
    let mut current = String::new();
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if let Some(h) = t.strip_prefix('[') {
            current = h.trim_start_matches('[').trim_end_matches(']').trim().to_string();
            if key.is_empty() && current == section {
                return Some(i + 1);
            }
            continue;
        }
        if current == section && !key.is_empty() {
            if let Some((k, _)) = t.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Diagnose<'a> {
    source: &'a str,
    text: &'a str,
}

impl Diagnose<'_> {
    fn fail(&self, section: &str, key: &str, msg: impl std::fmt::Display) -> Error {
        let at = locate(self.text, section, key)
            .or_else(|| locate(self.text, section, ""))
            .map(|l| format!(", line {l}"))
            .unwrap_or_default();
        let name = if key.is_empty() { section.to_string() } else { format!("{section}.{key}") };
        Error::Config(format!("{}{at}: {name}: {msg}", self.source))
    }
}

impl RunConfig {
    /// Parses and validates a TOML document. `source` names it in errors.
    pub fn from_toml(text: &str, source: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(format!("{source}: {e}")))?;
        let cfg = cfg.resolved();
        cfg.check(&Diagnose { source, text })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// Copies the values shared between sections into their dependants.
    pub fn resolved(mut self) -> Self {
        self.scenario.seed = self.run.seed;
        self.model.history_len = self.data.history_len;
        self.model.env_span = self.data.env_span;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let text = self.to_toml()?;
        self.check(&Diagnose { source: "resolved config", text: &text })
    }

    fn check(&self, d: &Diagnose<'_>) -> Result<()> {
        self.scenario.validate().map_err(|e| d.fail("scenario", "", e))?;
        if self.archetypes.is_empty() {
            return Err(d.fail("archetype", "", "at least one archetype is required"));
        }
        if self.trajectory.grid_spacing != 1 {
            return Err(d.fail("trajectory", "grid_spacing", "prediction samples require a 1 m grid"));
        }
        if !(self.env.window_min > 0.0) {
            return Err(d.fail("env", "window_min", "must be positive"));
        }
        if !(self.env.warmup_min >= 0.0) {
            return Err(d.fail("env", "warmup_min", "must be non-negative"));
        }
        if self.env.section_end <= self.env.section_start {
            return Err(d.fail("env", "section_end", "must exceed section_start"));
        }
        if self.clustering.k_min == 0 || self.clustering.k_max < self.clustering.k_min {
            return Err(d.fail("clustering", "k_max", "need 1 <= k_min <= k_max"));
        }
        if self.clustering.k_max > self.scenario.n_vehicles {
            return Err(d.fail("clustering", "k_max", "exceeds the number of vehicles"));
        }
        if self.data.history_len == 0 {
            return Err(d.fail("data", "history_len", "must be positive"));
        }
        if self.data.anchor_stride == 0 {
            return Err(d.fail("data", "anchor_stride", "must be positive"));
        }
        self.data.split.validate().map_err(|e| d.fail("data.split", "", e))?;
        if self.experiment.horizons.is_empty() {
            return Err(d.fail("experiment", "horizons", "must not be empty"));
        }
        self.experiment.validate().map_err(|e| d.fail("experiment", "", e))?;
        for &h in &self.experiment.horizons {
            ModelConfig { horizon: h, ..self.model.clone() }.validate().map_err(|e| d.fail("model", "", e))?;
        }
        self.train.validate().map_err(|e| d.fail("train", "", e))?;
        if let Some(s) = &self.sweep {
            if s.windows_min.is_empty() || s.windows_min.iter().any(|w| !(*w > 0.0)) {
                return Err(d.fail("sweep", "windows_min", "need at least one positive window"));
            }
            if s.horizon_m == 0 || s.seeds == 0 {
                return Err(d.fail("sweep", "", "horizon_m and seeds must be positive"));
            }
        }
        self.sample_options().validate().map_err(|e| d.fail("data", "", e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize config: {e}")))
    }

    /// Longest horizon any stage needs.
    pub fn max_horizon(&self) -> usize {
        let grid = self.experiment.horizons.iter().copied().max().unwrap_or(1);
        self.sweep.as_ref().map_or(grid, |s| grid.max(s.horizon_m))
    }

    pub fn sample_options(&self) -> SampleOptions {
        SampleOptions {
            history_len: self.data.history_len,
            max_horizon: self.max_horizon(),
            anchor_stride: self.data.anchor_stride,
            env_window_s: self.env.window_min * 60.0,
            warmup_s: self.env.warmup_min * 60.0,
            env_span: self.data.env_span,
            env: self.env.options(),
        }
    }

    /// Applies command-line overrides.
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<PathBuf>, jobs: Option<usize>) -> Self {
        if let Some(s) = seed {
            self.run.seed = s;
        }
        if let Some(o) = out {
            self.run.out = o;
        }
        if let Some(j) = jobs {
            self.run.jobs = j;
        }
        self.resolved()
    }
}

/// Default configuration as a commented TOML document.
pub fn default_toml() -> Result<String> {
    RunConfig::default().resolved().to_toml()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips() {
        let cfg = RunConfig::default().resolved();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text, "test").unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.archetypes.len(), 3);
    }

    #[test]
    fn shipped_configs_load() {
        let default = RunConfig::from_toml(include_str!("../../../configs/default.toml"), "default.toml").unwrap();
        assert_eq!(default, RunConfig::default().resolved());
        let smoke = RunConfig::from_toml(include_str!("../../../configs/smoke.toml"), "smoke.toml").unwrap();
        smoke.validate().unwrap();
    }

    #[test]
    fn empty_document_is_the_default() {
        assert_eq!(RunConfig::from_toml("", "test").unwrap(), RunConfig::default().resolved());
    }

    #[test]
    fn syntax_errors_carry_line_numbers() {
        let err = RunConfig::from_toml("[run]\nseed = 1\n[data]\nhistory_len = \"x\"\n", "bad.toml").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Config(_)));
        assert!(msg.contains("line 4"), "{msg}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("[train]\nepochs = 3\n", "bad.toml").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn ratio_errors_point_at_the_split_section() {
        let text = "[run]\nseed = 1\n\n[data.split]\ntrain = 0.8\ntest = 0.2\nval = 0.1\n";
        let msg = RunConfig::from_toml(text, "bad.toml").unwrap_err().to_string();
        assert!(msg.contains("line 4") && msg.contains("data.split"), "{msg}");
    }

    #[test]
    fn semantic_errors_name_key_and_line() {
        let msg = RunConfig::from_toml("[data]\nanchor_stride = 1\nhistory_len = 0\n", "bad.toml").unwrap_err().to_string();
        assert!(msg.contains("line 3") && msg.contains("data.history_len"), "{msg}");
        let msg = RunConfig::from_toml("[experiment]\nhorizons = []\n", "bad.toml").unwrap_err().to_string();
        assert!(msg.contains("line 2") && msg.contains("experiment.horizons"), "{msg}");
    }

    #[test]
    fn overrides_propagate_into_dependent_sections() {
        let cfg = RunConfig::default().with_overrides(Some(99), Some("elsewhere".into()), Some(2));
        assert_eq!(cfg.scenario.seed, 99);
        assert_eq!(cfg.run.out, PathBuf::from("elsewhere"));
        assert_eq!(cfg.run.jobs, 2);
    }

    #[test]
    fn sample_options_follow_sections() {
        let mut cfg = RunConfig::default();
        cfg.sweep = Some(SweepSpec { horizon_m: 60, ..SweepSpec::default() });
        let o = cfg.sample_options();
        assert_eq!(o.max_horizon, 60);
        assert_eq!(o.env_window_s, 900.0);
        assert_eq!(o.history_len, 100);
    }
}
