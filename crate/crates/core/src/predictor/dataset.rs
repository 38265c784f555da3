use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::DriverClass;
use crate::env::{build_env_sequence, slice_env_range, EnvOptions, CHANNELS};
use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{extract_window, SpatialProfile};

/// Which positions the environmental rows of a sample cover.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum EnvSpan {
    /// `(anchor, anchor + horizon]`, one row per predicted meter.
    #[default]
    Prediction,
    /// `(anchor - history_len, anchor]`, aligned with the individual history.
    History,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleOptions {
    pub history_len: usize,
    /// Longest horizon any model will be trained on; shorter horizons
    /// are prefixes of the stored target.
    pub max_horizon: usize,
    pub anchor_stride: usize,
    /// Environmental window length, seconds.
    pub env_window_s: f64,
    /// Vehicles entering before this time are skipped.
    pub warmup_s: f64,
    pub env_span: EnvSpan,
    pub env: EnvOptions,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            history_len: 100,
            max_horizon: 50,
            anchor_stride: 1,
            env_window_s: 900.0,
            warmup_s: 900.0,
            env_span: EnvSpan::Prediction,
            env: EnvOptions::default(),
        }
    }
}

impl SampleOptions {
    pub fn validate(&self) -> Result<()> {
        if self.history_len == 0 || self.max_horizon == 0 || self.anchor_stride == 0 {
            return Err(Error::validation("history_len, max_horizon and anchor_stride must be positive"));
        }
        if !(self.env_window_s > 0.0) || !(self.warmup_s >= 0.0) {
            return Err(Error::validation("env window must be > 0 and warmup >= 0"));
        }
        Ok(())
    }

    /// Environmental rows stored per sample.
    pub fn env_rows(&self) -> usize {
        match self.env_span {
            EnvSpan::Prediction => self.max_horizon,
            EnvSpan::History => self.history_len,
        }
    }
}

/// One `(vehicle, anchor)` training or evaluation example at the longest
/// horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub vehicle_id: String,
    pub class: Option<DriverClass>,
    pub anchor: i64,
    /// Raw `(v, a)` rows, oldest first.
    pub history: Vec<[f64; 2]>,
    pub env: Vec<[f64; CHANNELS]>,
    /// Raw accelerations over `(anchor, anchor + max_horizon]`.
    pub target: Vec<f64>,
}

/// Cuts every usable window from `profiles`. A window is kept only when the
/// individual history, the target and the environmental rows are all
/// present, so env-on and env-off models see the same samples.
pub fn build_samples(
    profiles: &[SpatialProfile],
    classes: &HashMap<String, DriverClass>,
    opts: &SampleOptions,
) -> Result<Vec<Sample>> {
    opts.validate()?;
    if profiles.iter().any(|p| p.spacing != 1) {
        return Err(Error::validation("samples require a 1 m grid"));
    }
    let l = opts.history_len as i64;
    let h = opts.max_horizon as i64;
    let lo = opts.env.section_start + l - 1;
    let hi = opts.env.section_end - h;
    if lo > hi {
        return Err(Error::validation(format!(
            "section [{}, {}] too short for history {l} m plus horizon {h} m",
            opts.env.section_start, opts.env.section_end
        )));
    }
    let anchors: Vec<i64> = (lo..=hi).step_by(opts.anchor_stride).collect();
    let per_vehicle: Vec<Result<Vec<Sample>>> = profiles
        .par_iter()
        .filter(|p| p.entry_time >= opts.warmup_s)
        .map(|p| {
            let env = build_env_sequence(profiles, p.entry_time, opts.env_window_s, &opts.env)?;
            let mut out = Vec::new();
            for &anchor in &anchors {
                let Ok(w) = extract_window(p, anchor, l, h) else { continue };
                let env_rows = match opts.env_span {
                    EnvSpan::Prediction => slice_env_range(&env, anchor + 1, anchor + h),
                    EnvSpan::History => slice_env_range(&env, anchor - l + 1, anchor),
                };
                let Ok(env_rows) = env_rows else { continue };
                out.push(Sample {
                    vehicle_id: p.vehicle_id.clone(),
                    class: classes.get(&p.vehicle_id).copied(),
                    anchor,
                    history: w.history,
                    env: env_rows,
                    target: w.target,
                });
            }
            Ok(out)
        })
        .collect();
    let mut samples = Vec::new();
    for s in per_vehicle {
        samples.extend(s?);
    }
    Ok(samples)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub test: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios { train: 0.7, test: 0.2, val: 0.1 }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.test, self.val];
        if parts.iter().any(|r| !(*r >= 0.0)) || ((parts.iter().sum::<f64>()) - 1.0).abs() > 1e-9 {
            return Err(Error::validation(format!(
                "split ratios {}/{}/{} must be non-negative and sum to 1",
                self.train, self.test, self.val
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Test,
    Val,
}

/// Vehicle-level partition; each vehicle lands in exactly one part.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Split {
    pub parts: BTreeMap<String, Part>,
}

impl Split {
    pub fn part_of(&self, vehicle_id: &str) -> Option<Part> {
        self.parts.get(vehicle_id).copied()
    }

    pub fn vehicles(&self, part: Part) -> BTreeSet<&str> {
        self.parts.iter().filter(|(_, p)| **p == part).map(|(v, _)| v.as_str()).collect()
    }

    /// Samples of `part`, optionally restricted to one driver class.
    pub fn select<'a>(&self, samples: &'a [Sample], part: Part, class: Option<DriverClass>) -> Vec<&'a Sample> {
        samples
            .iter()
            .filter(|s| self.part_of(&s.vehicle_id) == Some(part))
            .filter(|s| class.is_none() || s.class == class)
            .collect()
    }
}

/// Splits vehicles by `ratios`, separately within each driver class so
/// every class keeps the same proportions.
pub fn split_vehicles(vehicles: &[(String, Option<DriverClass>)], ratios: &SplitRatios, seed: u64) -> Result<Split> {
    ratios.validate()?;
    let mut groups: BTreeMap<Option<DriverClass>, Vec<&str>> = BTreeMap::new();
    for (id, class) in vehicles {
        groups.entry(*class).or_default().push(id);
    }
    let mut split = Split::default();
    for (class, mut ids) in groups {
        ids.sort_unstable();
        ids.dedup();
        let label = match class {
            Some(c) => format!("split/{}", c.code()),
            None => "split/unclassified".to_string(),
        };
        ids.shuffle(&mut seed::stream(seed, &label));
        let n = ids.len();
        let n_train = (ratios.train * n as f64).round() as usize;
        let n_test = ((ratios.test * n as f64).round() as usize).min(n - n_train.min(n));
        for (i, id) in ids.into_iter().enumerate() {
            let part = if i < n_train {
                Part::Train
            } else if i < n_train + n_test {
                Part::Test
            } else {
                Part::Val
            };
            split.parts.insert(id.to_string(), part);
        }
    }
    Ok(split)
}
