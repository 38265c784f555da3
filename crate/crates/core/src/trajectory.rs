//! Vehicle trajectories in tunnel-exit coordinates.
//!
//! Positions are signed meters relative to the exit portal: negative inside
//! the tunnel, zero at the portal, positive outside. A track is a time series
//! sampled at roughly 20 Hz; a [`SpatialProfile`] is the same track resampled
//! onto an integer-meter grid, which is the representation every downstream
//! stage (percentile features, clustering, prediction windows) works in.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    /// Seconds since recording start.
    pub t: f64,
    /// Meters relative to the exit portal.
    pub x: f64,
    /// Speed, m/s.
    pub v: f64,
    /// Acceleration, m/s². Absent until [`differentiate_speed`] has run.
    pub a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub vehicle_id: String,
    /// Wall-clock seconds since recording start at which the vehicle entered
    /// the observed section. Used for windowing environmental statistics.
    pub entry_time: f64,
    pub samples: Vec<TrajectorySample>,
}

impl VehicleTrack {
    /// Builds a track whose entry time is the time of its first sample.
    pub fn new(vehicle_id: impl Into<String>, samples: Vec<TrajectorySample>) -> Result<Self> {
        let vehicle_id = vehicle_id.into();
        let entry_time = samples
            .first()
            .map(|s| s.t)
            .ok_or_else(|| Error::validation(format!("track {vehicle_id} has no samples")))?;
        let track = VehicleTrack { vehicle_id, entry_time, samples };
        track.validate()?;
        Ok(track)
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.len() < 2 {
            return Err(Error::validation(format!(
                "track {} has {} sample(s), need at least 2",
                self.vehicle_id,
                self.samples.len()
            )));
        }
        for (i, s) in self.samples.iter().enumerate() {
            if !(s.t.is_finite() && s.x.is_finite() && s.v.is_finite()) {
                return Err(Error::validation(format!(
                    "track {} sample {i} has a non-finite field",
                    self.vehicle_id
                )));
            }
            if s.v < 0.0 {
                return Err(Error::validation(format!(
                    "track {} sample {i} has negative speed {}",
                    self.vehicle_id, s.v
                )));
            }
        }
        for (i, w) in self.samples.windows(2).enumerate() {
            if w[1].t <= w[0].t {
                return Err(Error::validation(format!(
                    "track {} time not strictly increasing at sample {}",
                    self.vehicle_id,
                    i + 1
                )));
            }
            if w[1].x < w[0].x {
                return Err(Error::validation(format!(
                    "track {} moves backwards at sample {}",
                    self.vehicle_id,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// A track resampled onto a uniform integer-meter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialProfile {
    pub vehicle_id: String,
    pub entry_time: f64,
    /// Grid spacing in meters.
    pub spacing: i64,
    /// Consecutive grid points (multiples of `spacing`).
    pub positions: Vec<i64>,
    pub v_at: Vec<f64>,
    pub a_at: Vec<f64>,
}

impl SpatialProfile {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn first_position(&self) -> Option<i64> {
        self.positions.first().copied()
    }

    pub fn last_position(&self) -> Option<i64> {
        self.positions.last().copied()
    }

    /// Row index of a grid position, if the profile covers it.
    pub fn index_of(&self, position: i64) -> Option<usize> {
        let first = self.first_position()?;
        let offset = position - first;
        if offset < 0 || offset % self.spacing != 0 {
            return None;
        }
        let idx = (offset / self.spacing) as usize;
        (idx < self.len()).then_some(idx)
    }

    pub fn covers(&self, lo: i64, hi: i64) -> bool {
        match (self.first_position(), self.last_position()) {
            (Some(first), Some(last)) => first <= lo && hi <= last,
            _ => false,
        }
    }
}

/// Fills in acceleration by differentiating speed over time.
///
/// Interior samples use the central difference, the two endpoints a
/// one-sided difference with their single neighbour.
pub fn differentiate_speed(track: &VehicleTrack) -> Result<VehicleTrack> {
    track.validate()?;
    let s = &track.samples;
    let n = s.len();
    let mut out = track.clone();
    for i in 0..n {
        let (lo, hi) = match i {
            0 => (0, 1),
            _ if i == n - 1 => (n - 2, n - 1),
            _ => (i - 1, i + 1),
        };
        out.samples[i].a = Some((s[hi].v - s[lo].v) / (s[hi].t - s[lo].t));
    }
    Ok(out)
}

/// One bracketed linear interpolation anchored at the right endpoint:
/// `y_t + (y_t - y_{t-1}) / (x_t - x_{t-1}) * (x_q - x_t)`.
#[inline]
fn interpolate_right(x_prev: f64, y_prev: f64, x_next: f64, y_next: f64, x_q: f64) -> f64 {
    y_next + (y_next - y_prev) / (x_next - x_prev) * (x_q - x_next)
}

/// Resamples a differentiated track onto the grid `k * grid_spacing` covered
/// by its position range. Grid points outside `[x_first, x_last]` are
/// omitted.
pub fn resample_to_grid(track: &VehicleTrack, grid_spacing: i64) -> Result<SpatialProfile> {
    if grid_spacing <= 0 {
        return Err(Error::validation(format!("grid spacing must be positive, got {grid_spacing}")));
    }
    track.validate()?;
    let s = &track.samples;
    let accel: Vec<f64> = s
        .iter()
        .enumerate()
        .map(|(i, smp)| {
            smp.a.ok_or_else(|| {
                Error::validation(format!(
                    "track {} sample {i} has no acceleration; differentiate first",
                    track.vehicle_id
                ))
            })
        })
        .collect::<Result<_>>()?;

    let x_first = s[0].x;
    let x_last = s[s.len() - 1].x;
    let spacing = grid_spacing as f64;
    let k_first = (x_first / spacing).ceil() as i64;
    let k_last = (x_last / spacing).floor() as i64;

    let mut positions = Vec::new();
    let mut v_at = Vec::new();
    let mut a_at = Vec::new();
    // `right` is the first sample index with x >= query, never below 1.
    let mut right = 1usize;
    for k in k_first..=k_last {
        let pos = k * grid_spacing;
        let xq = pos as f64;
        while right < s.len() - 1 && s[right].x < xq {
            right += 1;
        }
        let left = right - 1;
        let dx = s[right].x - s[left].x;
        if dx == 0.0 {
            return Err(Error::DegenerateGeometry(format!(
                "track {}: samples {left} and {right} share position {} bracketing grid point {pos}",
                track.vehicle_id, s[left].x
            )));
        }
        positions.push(pos);
        a_at.push(interpolate_right(s[left].x, accel[left], s[right].x, accel[right], xq));
        v_at.push(interpolate_right(s[left].x, s[left].v, s[right].x, s[right].v, xq).max(0.0));
    }

    Ok(SpatialProfile {
        vehicle_id: track.vehicle_id.clone(),
        entry_time: track.entry_time,
        spacing: grid_spacing,
        positions,
        v_at,
        a_at,
    })
}

/// Individual history and prediction target cut from a profile at an anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    /// `(v, a)` per grid point over `(anchor - history_len, anchor]`.
    pub history: Vec<[f64; 2]>,
    /// Acceleration per grid point over `(anchor, anchor + horizon]`.
    pub target: Vec<f64>,
}

/// Cuts the history/target window around `anchor`. Lengths are in meters and
/// must be multiples of the profile spacing.
pub fn extract_window(
    profile: &SpatialProfile,
    anchor: i64,
    history_len: i64,
    horizon: i64,
) -> Result<Window> {
    let sp = profile.spacing;
    if history_len <= 0 || horizon <= 0 || history_len % sp != 0 || horizon % sp != 0 {
        return Err(Error::validation(format!(
            "history {history_len} m and horizon {horizon} m must be positive multiples of spacing {sp}"
        )));
    }
    let lo = anchor - history_len + sp;
    let hi = anchor + horizon;
    let (Some(start), Some(_)) = (profile.index_of(lo), profile.index_of(hi)) else {
        return Err(Error::InsufficientCoverage(format!(
            "profile {} covers [{:?}, {:?}], window needs [{lo}, {hi}]",
            profile.vehicle_id,
            profile.first_position(),
            profile.last_position()
        )));
    };
    let n_hist = (history_len / sp) as usize;
    let n_tgt = (horizon / sp) as usize;
    let history = (start..start + n_hist)
        .map(|i| [profile.v_at[i], profile.a_at[i]])
        .collect();
    let target = profile.a_at[start + n_hist..start + n_hist + n_tgt].to_vec();
    Ok(Window { history, target })
}

#[derive(Debug, Serialize, Deserialize)]
struct SampleRow {
    vehicle_id: String,
    t: f64,
    x: f64,
    v: f64,
    #[serde(default)]
    a: Option<f64>,
}

/// Reads trajectory CSV (`vehicle_id,t,x,v[,a]`). Rows of one vehicle must be
/// contiguous; vehicles are returned in order of first appearance.
pub fn read_tracks_csv<R: Read>(reader: R) -> Result<Vec<VehicleTrack>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let mut tracks: Vec<VehicleTrack> = Vec::new();
    let mut current: Option<(String, Vec<TrajectorySample>)> = None;
    for row in rdr.deserialize::<SampleRow>() {
        let row = row?;
        let sample = TrajectorySample { t: row.t, x: row.x, v: row.v, a: row.a };
        match &mut current {
            Some((id, samples)) if *id == row.vehicle_id => samples.push(sample),
            _ => {
                if let Some((id, samples)) = current.take() {
                    tracks.push(VehicleTrack::new(id, samples)?);
                }
                current = Some((row.vehicle_id, vec![sample]));
            }
        }
    }
    if let Some((id, samples)) = current {
        tracks.push(VehicleTrack::new(id, samples)?);
    }
    let mut seen = std::collections::HashSet::new();
    for t in &tracks {
        if !seen.insert(t.vehicle_id.as_str()) {
            return Err(Error::validation(format!(
                "rows of vehicle {} are not contiguous",
                t.vehicle_id
            )));
        }
    }
    Ok(tracks)
}

/// Writes trajectory CSV with the acceleration column always present.
pub fn write_tracks_csv<W: Write>(writer: W, tracks: &[VehicleTrack]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["vehicle_id", "t", "x", "v", "a"])?;
    for track in tracks {
        for (i, s) in track.samples.iter().enumerate() {
            let a = s.a.ok_or_else(|| {
                Error::validation(format!(
                    "track {} sample {i} has no acceleration",
                    track.vehicle_id
                ))
            })?;
            wtr.write_record([
                track.vehicle_id.clone(),
                s.t.to_string(),
                s.x.to_string(),
                s.v.to_string(),
                a.to_string(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<trajectory csv>", e))?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ProfileRow {
    vehicle_id: String,
    entry_time: f64,
    x: i64,
    v: f64,
    a: f64,
}

/// Writes resampled profiles as `vehicle_id,entry_time,x,v,a`.
pub fn write_profiles_csv<W: Write>(writer: W, profiles: &[SpatialProfile]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    for p in profiles {
        for i in 0..p.len() {
            wtr.serialize(ProfileRow {
                vehicle_id: p.vehicle_id.clone(),
                entry_time: p.entry_time,
                x: p.positions[i],
                v: p.v_at[i],
                a: p.a_at[i],
            })?;
        }
    }
    wtr.flush().map_err(|e| Error::io("<profile csv>", e))?;
    Ok(())
}

pub fn read_profiles_csv<R: Read>(reader: R) -> Result<Vec<SpatialProfile>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out: Vec<SpatialProfile> = Vec::new();
    for row in rdr.deserialize::<ProfileRow>() {
        let row = row?;
        match out.last_mut() {
            Some(p) if p.vehicle_id == row.vehicle_id => {
                let expected = p.positions.last().copied().unwrap_or(row.x) + p.spacing;
                if p.positions.len() == 1 && row.x > p.positions[0] {
                    p.spacing = row.x - p.positions[0];
                } else if row.x != expected {
                    return Err(Error::validation(format!(
                        "profile {} grid not consecutive at x = {}",
                        row.vehicle_id, row.x
                    )));
                }
                p.positions.push(row.x);
                p.v_at.push(row.v);
                p.a_at.push(row.a);
            }
            _ => out.push(SpatialProfile {
                vehicle_id: row.vehicle_id,
                entry_time: row.entry_time,
                spacing: 1,
                positions: vec![row.x],
                v_at: vec![row.v],
                a_at: vec![row.a],
            }),
        }
    }
    Ok(out)
}
