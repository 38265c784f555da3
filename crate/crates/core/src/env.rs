//! Environmental sequences: per-position percentiles of speed and
//! acceleration over the vehicles that entered during a trailing time window.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trajectory::SpatialProfile;

/// Percentile levels, in channel order.
pub const LEVELS: [f64; 4] = [0.2, 0.4, 0.6, 0.8];
/// Speed percentiles followed by acceleration percentiles.
pub const CHANNELS: usize = 8;

/// Linear interpolation between closest order statistics, rank `q (n - 1)`.
/// `sorted` must be ascending and non-empty.
pub fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = rank - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvRow {
    pub v: [f64; 4],
    pub a: [f64; 4],
}

impl EnvRow {
    pub fn channels(&self) -> [f64; CHANNELS] {
        let mut out = [0.0; CHANNELS];
        out[..4].copy_from_slice(&self.v);
        out[4..].copy_from_slice(&self.a);
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvOptions {
    pub section_start: i64,
    pub section_end: i64,
    /// Positions supported by fewer vehicles are reported absent.
    pub min_support: usize,
}

impl Default for EnvOptions {
    fn default() -> Self {
        EnvOptions { section_start: -380, section_end: 320, min_support: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSequence {
    /// Consecutive 1 m grid over the section.
    pub positions: Vec<i64>,
    pub rows: Vec<Option<EnvRow>>,
    pub support: Vec<usize>,
    /// Half-open `[start, end)` entry-time window, seconds.
    pub window: (f64, f64),
}

impl EnvSequence {
    fn index_of(&self, position: i64) -> Option<usize> {
        let first = *self.positions.first()?;
        let idx = usize::try_from(position - first).ok()?;
        (idx < self.positions.len()).then_some(idx)
    }

    pub fn at(&self, position: i64) -> Option<&EnvRow> {
        self.index_of(position).and_then(|i| self.rows[i].as_ref())
    }
}

/// Percentile statistics over the vehicles with `entry_time` in
/// `[window_end - window_len, window_end)`.
pub fn build_env_sequence(
    profiles: &[SpatialProfile],
    window_end: f64,
    window_len: f64,
    opts: &EnvOptions,
) -> Result<EnvSequence> {
    if !(window_len > 0.0) {
        return Err(Error::validation(format!("window length must be > 0, got {window_len}")));
    }
    if opts.section_end < opts.section_start {
        return Err(Error::validation("env section end before start"));
    }
    let start = window_end - window_len;
    let members: Vec<&SpatialProfile> = profiles
        .iter()
        .filter(|p| p.entry_time >= start && p.entry_time < window_end)
        .collect();
    Ok(percentiles_over(&members, (start, window_end), opts))
}

pub(crate) fn percentiles_over(
    members: &[&SpatialProfile],
    window: (f64, f64),
    opts: &EnvOptions,
) -> EnvSequence {
    let positions: Vec<i64> = (opts.section_start..=opts.section_end).collect();
    let mut rows = Vec::with_capacity(positions.len());
    let mut support = Vec::with_capacity(positions.len());
    let mut vs = Vec::with_capacity(members.len());
    let mut as_ = Vec::with_capacity(members.len());
    for &pos in &positions {
        vs.clear();
        as_.clear();
        for p in members {
            if let Some(i) = p.index_of(pos) {
                vs.push(p.v_at[i]);
                as_.push(p.a_at[i]);
            }
        }
        support.push(vs.len());
        if vs.is_empty() || vs.len() < opts.min_support {
            rows.push(None);
            continue;
        }
        vs.sort_by(f64::total_cmp);
        as_.sort_by(f64::total_cmp);
        rows.push(Some(EnvRow {
            v: LEVELS.map(|q| percentile_sorted(&vs, q)),
            a: LEVELS.map(|q| percentile_sorted(&as_, q)),
        }));
    }
    EnvSequence { positions, rows, support, window }
}

/// Eight-channel rows over positions `lo..=hi`.
pub fn slice_env_range(env: &EnvSequence, lo: i64, hi: i64) -> Result<Vec<[f64; CHANNELS]>> {
    (lo..=hi)
        .map(|pos| {
            env.at(pos).map(EnvRow::channels).ok_or_else(|| {
                Error::InsufficientCoverage(format!("environmental statistics absent at {pos} m"))
            })
        })
        .collect()
}

/// Eight-channel rows over the prediction span `(anchor, anchor + horizon]`.
pub fn slice_env(env: &EnvSequence, anchor: i64, horizon: i64) -> Result<Vec<[f64; CHANNELS]>> {
    if horizon <= 0 {
        return Err(Error::validation("horizon must be positive"));
    }
    slice_env_range(env, anchor + 1, anchor + horizon)
}

pub fn write_env_csv<W: Write>(writer: W, env: &EnvSequence) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "position", "v_p20", "v_p40", "v_p60", "v_p80", "a_p20", "a_p40", "a_p60", "a_p80", "support",
    ])?;
    for ((pos, row), support) in env.positions.iter().zip(&env.rows).zip(&env.support) {
        let mut rec = vec![pos.to_string()];
        match row {
            Some(r) => rec.extend(r.channels().iter().map(f64::to_string)),
            None => rec.extend(std::iter::repeat(String::new()).take(CHANNELS)),
        }
        rec.push(support.to_string());
        wtr.write_record(&rec)?;
    }
    wtr.flush().map_err(|e| Error::io("<env csv>", e))?;
    Ok(())
}

/// Several sequences in one file, each row tagged with its entry-time window.
pub fn write_env_sequences_csv<W: Write>(writer: W, seqs: &[EnvSequence]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record([
        "window_start", "window_end", "position", "v_p20", "v_p40", "v_p60", "v_p80", "a_p20", "a_p40", "a_p60",
        "a_p80", "support",
    ])?;
    for env in seqs {
        for ((pos, row), support) in env.positions.iter().zip(&env.rows).zip(&env.support) {
            let mut rec = vec![env.window.0.to_string(), env.window.1.to_string(), pos.to_string()];
            match row {
                Some(r) => rec.extend(r.channels().iter().map(f64::to_string)),
                None => rec.extend(std::iter::repeat(String::new()).take(CHANNELS)),
            }
            rec.push(support.to_string());
            wtr.write_record(&rec)?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<env csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn profile(id: usize, entry: f64, v: &[f64], a: &[f64]) -> SpatialProfile {
        SpatialProfile {
            vehicle_id: format!("v{id}"),
            entry_time: entry,
            spacing: 1,
            positions: (0..v.len() as i64).collect(),
            v_at: v.to_vec(),
            a_at: a.to_vec(),
        }
    }

    fn opts(len: i64, min_support: usize) -> EnvOptions {
        EnvOptions { section_start: 0, section_end: len - 1, min_support }
    }

    /// Brute force: sort a copy, then interpolate at rank q(n-1).
    fn oracle(values: &[f64], q: f64) -> f64 {
        let mut s = values.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let r = q * (s.len() as f64 - 1.0);
        let (lo, hi) = (r.floor() as usize, r.ceil() as usize);
        s[lo] + (r - lo as f64) * (s[hi] - s[lo])
    }

    #[test]
    fn one_to_five() {
        let profiles: Vec<_> = (1..=5).map(|i| profile(i, 0.0, &[i as f64], &[i as f64])).collect();
        let env = build_env_sequence(&profiles, 1.0, 10.0, &opts(1, 5)).unwrap();
        let row = env.rows[0].unwrap();
        for (got, want) in row.v.iter().zip([1.8, 2.6, 3.4, 4.2]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(row.a, row.v);
    }

    #[test]
    fn identical_vehicles_give_flat_percentiles() {
        let profiles: Vec<_> = (0..6).map(|i| profile(i, i as f64, &[20.0, 21.0], &[0.3, -0.1])).collect();
        let env = build_env_sequence(&profiles, 10.0, 10.0, &opts(2, 5)).unwrap();
        assert_eq!(env.rows[0].unwrap().v, [20.0; 4]);
        assert_eq!(env.rows[1].unwrap().a, [-0.1; 4]);
    }

    #[test]
    fn empty_window_all_absent() {
        let profiles: Vec<_> = (0..6).map(|i| profile(i, 100.0, &[20.0; 3], &[0.0; 3])).collect();
        let env = build_env_sequence(&profiles, 50.0, 10.0, &opts(3, 5)).unwrap();
        assert!(env.rows.iter().all(Option::is_none));
        assert!(env.support.iter().all(|&s| s == 0));
    }

    #[test]
    fn window_is_half_open() {
        let mut profiles: Vec<_> = (0..5).map(|i| profile(i, i as f64, &[1.0], &[0.0])).collect();
        profiles.push(profile(9, 10.0, &[100.0], &[0.0]));
        let env = build_env_sequence(&profiles, 10.0, 10.0, &opts(1, 1)).unwrap();
        assert_eq!(env.support[0], 5);
        assert_eq!(env.rows[0].unwrap().v, [1.0; 4]);
        let env = build_env_sequence(&profiles, 10.5, 10.0, &opts(1, 1)).unwrap();
        // Vehicle at t = 0 drops out, the one at 10.0 enters.
        assert_eq!(env.support[0], 5);
    }

    #[test]
    fn low_support_is_absent() {
        let profiles: Vec<_> = (0..4).map(|i| profile(i, 0.0, &[1.0], &[0.0])).collect();
        let env = build_env_sequence(&profiles, 1.0, 5.0, &opts(1, 5)).unwrap();
        assert!(env.rows[0].is_none());
        assert_eq!(env.support[0], 4);
    }

    #[test]
    fn slicing() {
        let n = 60;
        let profiles: Vec<_> = (0..5).map(|i| profile(i, 0.0, &vec![3.0; n], &vec![3.0; n])).collect();
        let env = build_env_sequence(&profiles, 1.0, 5.0, &opts(n as i64, 5)).unwrap();
        let seg = slice_env(&env, 5, 50).unwrap();
        assert_eq!(seg.len(), 50);
        assert!(seg.iter().all(|r| r.iter().all(|&c| c == 3.0)));
        assert!(matches!(slice_env(&env, n as i64 - 1, 10), Err(Error::InsufficientCoverage(_))));
    }

    #[test]
    fn csv_has_blank_absent_rows() {
        let profiles: Vec<_> = (0..5).map(|i| profile(i, 0.0, &[1.0], &[0.0])).collect();
        let env = build_env_sequence(&profiles, 1.0, 5.0, &opts(2, 5)).unwrap();
        let mut buf = Vec::new();
        write_env_csv(&mut buf, &env).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "position,v_p20,v_p40,v_p60,v_p80,a_p20,a_p40,a_p60,a_p80,support");
        assert_eq!(lines[1], "0,1,1,1,1,0,0,0,0,5");
        assert_eq!(lines[2], "1,,,,,,,,,0");
    }

    fn population() -> impl Strategy<Value = Vec<(f64, Vec<f64>, Vec<f64>)>> {
        prop::collection::vec(
            (0.0f64..20.0, prop::collection::vec(0.0f64..40.0, 4), prop::collection::vec(-2.0f64..2.0, 4)),
            1..15,
        )
    }

    proptest! {
        #[test]
        fn matches_sort_oracle_and_is_monotone(pop in population(), end in 5.0f64..25.0) {
            let profiles: Vec<_> = pop.iter().enumerate().map(|(i, (t, v, a))| profile(i, *t, v, a)).collect();
            let env = build_env_sequence(&profiles, end, 10.0, &opts(4, 1)).unwrap();
            let members: Vec<_> = profiles.iter().filter(|p| p.entry_time >= end - 10.0 && p.entry_time < end).collect();
            for pos in 0..4usize {
                match env.rows[pos] {
                    None => prop_assert!(members.is_empty()),
                    Some(row) => {
                        let vs: Vec<f64> = members.iter().map(|p| p.v_at[pos]).collect();
                        let as_: Vec<f64> = members.iter().map(|p| p.a_at[pos]).collect();
                        for (j, q) in LEVELS.iter().enumerate() {
                            prop_assert!((row.v[j] - oracle(&vs, *q)).abs() < 1e-9);
                            prop_assert!((row.a[j] - oracle(&as_, *q)).abs() < 1e-9);
                        }
                        prop_assert!(row.v.windows(2).all(|w| w[0] <= w[1]));
                        prop_assert!(row.a.windows(2).all(|w| w[0] <= w[1]));
                    }
                }
            }
        }

        #[test]
        fn adding_a_dominant_vehicle_never_lowers_percentiles(pop in population()) {
            let mut profiles: Vec<_> = pop.iter().enumerate().map(|(i, (_, v, a))| profile(i, 0.0, v, a)).collect();
            let before = build_env_sequence(&profiles, 1.0, 2.0, &opts(4, 1)).unwrap();
            profiles.push(profile(99, 0.5, &[50.0; 4], &[3.0; 4]));
            let after = build_env_sequence(&profiles, 1.0, 2.0, &opts(4, 1)).unwrap();
            for (b, a) in before.rows.iter().zip(&after.rows) {
                let (b, a) = (b.unwrap(), a.unwrap());
                for j in 0..4 {
                    prop_assert!(a.v[j] >= b.v[j] && a.a[j] >= b.a[j]);
                }
            }
        }
    }
}
