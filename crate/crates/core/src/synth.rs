//! Synthetic tunnel-exit traffic.
//!
//! Each vehicle follows a shared spatial acceleration pattern (braking ahead
//! of the portal, a partial recovery inside the tunnel, renewed acceleration
//! after exit) scaled by its driver archetype, plus per-driver deviations:
//! a cruise-speed offset, a response-magnitude factor, a jitter of the event
//! positions and a smooth spatially correlated acceleration noise. All
//! per-driver deviations scale with the archetype's `noise_scale`, so a
//! noiseless archetype produces identical acceleration profiles.
//!
//! Speed follows from `d(v²)/dx = 2a`; time follows from `dt = dx / v`; the
//! track is then sampled at a fixed rate in time.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::clustering::{compute_features, DriverClass};
use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::{SpatialProfile, TrajectorySample, VehicleTrack};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchetypeSpec {
    pub label: DriverClass,
    /// Target mean speed over the section, m/s.
    pub mean_speed: f64,
    /// Target mean acceleration over the section, m/s².
    pub mean_accel: f64,
    /// Target mean of per-vehicle (max a - min a), m/s².
    pub accel_range: f64,
    pub mixture_weight: f64,
    /// Standard deviation of the smooth per-driver acceleration noise, m/s².
    pub noise_scale: f64,
}

impl ArchetypeSpec {
    /// Archetype means reported for the three driver styles at the study site.
    pub fn calibrated_defaults() -> Vec<ArchetypeSpec> {
        vec![
            ArchetypeSpec {
                label: DriverClass::Conservative,
                mean_speed: 21.7648,
                mean_accel: 0.0843,
                accel_range: 0.8805,
                mixture_weight: 0.30,
                noise_scale: 0.04,
            },
            ArchetypeSpec {
                label: DriverClass::Moderate,
                mean_speed: 25.7631,
                mean_accel: 0.1198,
                accel_range: 1.1023,
                mixture_weight: 0.45,
                noise_scale: 0.04,
            },
            ArchetypeSpec {
                label: DriverClass::Aggressive,
                mean_speed: 28.0423,
                mean_accel: 0.1201,
                accel_range: 1.0383,
                mixture_weight: 0.25,
                noise_scale: 0.04,
            },
        ]
    }

    fn validate(&self) -> Result<()> {
        if !(self.mean_speed > 0.0) {
            return Err(Error::validation(format!("{}: mean_speed must be > 0", self.label)));
        }
        if !(self.accel_range > 0.0) {
            return Err(Error::validation(format!("{}: accel_range must be > 0", self.label)));
        }
        if !(self.noise_scale >= 0.0) || !(self.mixture_weight >= 0.0) {
            return Err(Error::validation(format!(
                "{}: noise_scale and mixture_weight must be >= 0",
                self.label
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSpec {
    pub section_start: f64,
    pub section_end: f64,
    /// Posted limit, m/s. Informational; speeds are not clipped to it.
    pub speed_limit: f64,
    /// Position where braking starts; the deepest braking is 30 m later.
    pub decel_onset: f64,
    /// Peak of the in-tunnel recovery.
    pub tunnel_accel_onset: f64,
    /// First post-exit acceleration peak.
    pub exit_accel_onset: f64,
    /// End of the post-exit acceleration zone; the second peak is 20 m before.
    pub exit_accel_end: f64,
    pub n_vehicles: usize,
    /// Recording duration, s. Entry times are uniform over it.
    pub duration: f64,
    pub seed: u64,
    pub sample_rate_hz: f64,
    /// Correlation length of the acceleration noise, m.
    pub noise_correlation_m: f64,
    /// Std of the cruise-speed offset per unit of `noise_scale` (m/s per m/s²).
    pub speed_spread_per_noise: f64,
    /// Relative std of the response factor per unit of `noise_scale`.
    pub response_spread_per_noise: f64,
    /// Std of the event-position jitter per unit of `noise_scale` (m per m/s²).
    pub onset_jitter_per_noise: f64,
    /// Relative amplitude of the slow lighting-driven response drift.
    pub lighting_amplitude: f64,
    pub lighting_period_s: f64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            section_start: -380.0,
            section_end: 320.0,
            speed_limit: 27.78,
            decel_onset: -180.0,
            tunnel_accel_onset: -80.0,
            exit_accel_onset: 50.0,
            exit_accel_end: 120.0,
            n_vehicles: 800,
            duration: 2400.0,
            seed: 1,
            sample_rate_hz: 20.0,
            noise_correlation_m: 25.0,
            speed_spread_per_noise: 12.5,
            response_spread_per_noise: 3.0,
            onset_jitter_per_noise: 200.0,
            lighting_amplitude: 0.1,
            lighting_period_s: 1800.0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.section_end > self.section_start) {
            return Err(Error::validation("section_end must exceed section_start"));
        }
        let inside = |x: f64| x > self.section_start && x < self.section_end;
        for (name, x) in [
            ("decel_onset", self.decel_onset),
            ("tunnel_accel_onset", self.tunnel_accel_onset),
            ("exit_accel_onset", self.exit_accel_onset),
            ("exit_accel_end", self.exit_accel_end),
        ] {
            if !inside(x) {
                return Err(Error::validation(format!(
                    "event marker {name} = {x} outside section [{}, {}]",
                    self.section_start, self.section_end
                )));
            }
        }
        if self.n_vehicles == 0 {
            return Err(Error::validation("n_vehicles must be >= 1"));
        }
        if !(self.duration > 0.0) || !(self.sample_rate_hz > 0.0) {
            return Err(Error::validation("duration and sample_rate_hz must be > 0"));
        }
        if !(self.noise_correlation_m > 0.0) || !(self.lighting_period_s > 0.0) {
            return Err(Error::validation(
                "noise_correlation_m and lighting_period_s must be > 0",
            ));
        }
        Ok(())
    }

    fn length(&self) -> f64 {
        self.section_end - self.section_start
    }
}

/// Raised-cosine bump: C¹, unit height at `center`, zero outside ±`half_width`.
fn bump(x: f64, center: f64, half_width: f64) -> f64 {
    let u = (x - center) / half_width;
    if u.abs() >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (std::f64::consts::PI * u).cos())
    }
}

/// Relative heights of the recovery and the two post-exit peaks; braking has
/// height -1.
const RECOVERY_HEIGHT: f64 = 1.0;
const EXIT_HEIGHT: f64 = 0.6;
const DECEL_HALF_WIDTH: f64 = 30.0;
const ACCEL_HALF_WIDTH: f64 = 25.0;
/// Expected inflation of a vehicle's acceleration range by the smooth noise,
/// in units of `noise_scale`.
const NOISE_RANGE_ALLOWANCE: f64 = 3.5;

/// Unit-scale spatial response pattern; spans `[-1, 1]`.
fn response_shape(s: &ScenarioSpec, x: f64) -> f64 {
    -bump(x, s.decel_onset + DECEL_HALF_WIDTH, DECEL_HALF_WIDTH)
        + RECOVERY_HEIGHT * bump(x, s.tunnel_accel_onset, ACCEL_HALF_WIDTH)
        + EXIT_HEIGHT * bump(x, s.exit_accel_onset, ACCEL_HALF_WIDTH)
        + EXIT_HEIGHT * bump(x, s.exit_accel_end - 20.0, ACCEL_HALF_WIDTH)
}

fn response_area() -> f64 {
    // A raised cosine of half-width w integrates to w.
    -DECEL_HALF_WIDTH + (RECOVERY_HEIGHT + 2.0 * EXIT_HEIGHT) * ACCEL_HALF_WIDTH
}

/// Archetype-level profile parameters solved from the target statistics.
#[derive(Debug, Clone, Copy)]
struct ArchetypeProfile {
    /// Constant acceleration drift, m/s².
    drift: f64,
    /// Response magnitude, m/s² per unit shape.
    scale: f64,
    /// Entry speed giving the target mean speed without noise.
    entry_speed: f64,
}

const FINE_STEP: f64 = 0.25;

fn fine_grid(s: &ScenarioSpec) -> Vec<f64> {
    let n = (s.length() / FINE_STEP).round() as usize;
    (0..=n).map(|i| s.section_start + i as f64 * FINE_STEP).collect()
}

/// Speed along `xs` from `d(v²)/dx = 2a`, floored at 1 m/s.
fn integrate_speed(xs: &[f64], accel: &[f64], entry_speed: f64) -> Vec<f64> {
    let mut v2 = entry_speed * entry_speed;
    let mut out = Vec::with_capacity(xs.len());
    out.push(entry_speed);
    for i in 1..xs.len() {
        v2 += (accel[i - 1] + accel[i]) * (xs[i] - xs[i - 1]);
        v2 = v2.max(1.0);
        out.push(v2.sqrt());
    }
    out
}

fn solve_profile(s: &ScenarioSpec, a: &ArchetypeSpec) -> Result<ArchetypeProfile> {
    let base_range = (a.accel_range - NOISE_RANGE_ALLOWANCE * a.noise_scale).max(0.1 * a.accel_range);
    let scale = base_range / 2.0;
    let drift = a.mean_accel - scale * response_area() / s.length();
    let xs = fine_grid(s);
    let accel: Vec<f64> = xs.iter().map(|&x| drift + scale * response_shape(s, x)).collect();
    let mean_speed = |v0: f64| {
        let v = integrate_speed(&xs, &accel, v0);
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (mut lo, mut hi) = (0.5, 3.0 * a.mean_speed + 10.0);
    if mean_speed(lo) > a.mean_speed {
        return Err(Error::validation(format!(
            "{}: mean_speed {} unreachable with the requested acceleration pattern",
            a.label, a.mean_speed
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_speed(mid) < a.mean_speed {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(ArchetypeProfile { drift, scale, entry_speed: 0.5 * (lo + hi) })
}

/// Twice-filtered AR(1) noise on a 1 m grid, scaled to unit variance.
fn smooth_noise(rng: &mut seed::Rng, n: usize, correlation_m: f64) -> Vec<f64> {
    let rho = (-1.0 / correlation_m).exp();
    let r = rho * rho;
    let std = ((1.0 + r) / (1.0 - r).powi(3)).sqrt();
    let burn_in = (10.0 * correlation_m) as usize;
    let (mut s1, mut s2) = (0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..burn_in + n {
        let e: f64 = StandardNormal.sample(rng);
        s1 = rho * s1 + e;
        s2 = rho * s2 + s1;
        if i >= burn_in {
            out.push(s2 / std);
        }
    }
    out
}

/// Tracks in entry-time order with their generating archetypes.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub tracks: Vec<VehicleTrack>,
    pub labels: Vec<DriverClass>,
}

fn check_archetypes(archetypes: &[ArchetypeSpec]) -> Result<()> {
    if archetypes.is_empty() {
        return Err(Error::validation("at least one archetype required"));
    }
    for a in archetypes {
        a.validate()?;
    }
    let total: f64 = archetypes.iter().map(|a| a.mixture_weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::validation(format!("mixture weights sum to {total}, expected 1")));
    }
    Ok(())
}

struct VehicleDraw {
    archetype: usize,
    entry_time: f64,
}

fn generate_vehicle(
    s: &ScenarioSpec,
    spec: &ArchetypeSpec,
    profile: &ArchetypeProfile,
    entry_time: f64,
    vehicle_seed: u64,
    vehicle_id: String,
) -> Result<VehicleTrack> {
    let mut rng = seed::rng(vehicle_seed);
    let ns = spec.noise_scale;
    let gauss = |rng: &mut seed::Rng| -> f64 { StandardNormal.sample(rng) };
    let speed_offset = s.speed_spread_per_noise * ns * gauss(&mut rng);
    let response = (1.0 + s.response_spread_per_noise * ns * gauss(&mut rng)).max(0.2);
    let jitter = s.onset_jitter_per_noise * ns * gauss(&mut rng);
    let lighting = 1.0
        + s.lighting_amplitude
            * (2.0 * std::f64::consts::PI * entry_time / s.lighting_period_s).sin();
    let n_noise = s.length().ceil() as usize + 2;
    let noise = smooth_noise(&mut rng, n_noise, s.noise_correlation_m);

    let xs = fine_grid(s);
    let accel: Vec<f64> = xs
        .iter()
        .map(|&x| {
            let u = x - s.section_start;
            let k = (u.floor() as usize).min(n_noise - 2);
            let frac = u - k as f64;
            let n = noise[k] * (1.0 - frac) + noise[k + 1] * frac;
            profile.drift
                + profile.scale * response * lighting * response_shape(s, x - jitter)
                + ns * n
        })
        .collect();
    let v = integrate_speed(&xs, &accel, (profile.entry_speed + speed_offset).max(1.0));

    let mut times = Vec::with_capacity(xs.len());
    times.push(0.0);
    for i in 1..xs.len() {
        let dt = (xs[i] - xs[i - 1]) * 0.5 * (1.0 / v[i - 1] + 1.0 / v[i]);
        times.push(times[i - 1] + dt);
    }

    let dt = 1.0 / s.sample_rate_hz;
    let t_end = *times.last().unwrap();
    let mut samples = Vec::with_capacity((t_end / dt) as usize + 1);
    let mut j = 0usize;
    let mut k = 0u64;
    loop {
        let tau = k as f64 * dt;
        if tau > t_end {
            break;
        }
        while j + 2 < times.len() && times[j + 1] < tau {
            j += 1;
        }
        let w = ((tau - times[j]) / (times[j + 1] - times[j])).clamp(0.0, 1.0);
        let lerp = |arr: &[f64]| arr[j] + w * (arr[j + 1] - arr[j]);
        samples.push(TrajectorySample {
            t: entry_time + tau,
            x: lerp(&xs),
            v: lerp(&v),
            a: Some(lerp(&accel)),
        });
        k += 1;
    }
    VehicleTrack::new(vehicle_id, samples)
}

/// Generates a reproducible population of tracks over the scenario section.
pub fn generate_population(scenario: &ScenarioSpec, archetypes: &[ArchetypeSpec]) -> Result<Population> {
    scenario.validate()?;
    check_archetypes(archetypes)?;
    let profiles: Vec<ArchetypeProfile> = archetypes
        .iter()
        .map(|a| solve_profile(scenario, a))
        .collect::<Result<_>>()?;

    let mut rng = seed::stream(scenario.seed, "generation/population");
    let mut draws: Vec<VehicleDraw> = (0..scenario.n_vehicles)
        .map(|_| {
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut archetype = archetypes.len() - 1;
            for (i, a) in archetypes.iter().enumerate() {
                acc += a.mixture_weight;
                if u < acc {
                    archetype = i;
                    break;
                }
            }
            let entry_time = rng.gen::<f64>() * scenario.duration;
            VehicleDraw { archetype, entry_time }
        })
        .collect();
    draws.sort_by(|a, b| a.entry_time.total_cmp(&b.entry_time));

    use rayon::prelude::*;
    let tracks: Vec<VehicleTrack> = draws
        .par_iter()
        .enumerate()
        .map(|(i, d)| {
            generate_vehicle(
                scenario,
                &archetypes[d.archetype],
                &profiles[d.archetype],
                d.entry_time,
                seed::derive(scenario.seed, &format!("generation/vehicle/{i}")),
                format!("veh{i:05}"),
            )
        })
        .collect::<Result<_>>()?;
    let labels = draws.iter().map(|d| archetypes[d.archetype].label).collect();
    Ok(Population { tracks, labels })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSummary {
    pub count: usize,
    pub accel_range: f64,
    pub avg_speed: f64,
    pub avg_accel: f64,
}

/// Empirical per-archetype feature means. Archetypes with no vehicles are
/// reported as `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationSummary {
    pub conservative: Option<ArchetypeSummary>,
    pub moderate: Option<ArchetypeSummary>,
    pub aggressive: Option<ArchetypeSummary>,
}

impl PopulationSummary {
    pub fn get(&self, class: DriverClass) -> Option<&ArchetypeSummary> {
        match class {
            DriverClass::Conservative => self.conservative.as_ref(),
            DriverClass::Moderate => self.moderate.as_ref(),
            DriverClass::Aggressive => self.aggressive.as_ref(),
        }
    }
}

pub fn summarize_population(
    profiles: &[SpatialProfile],
    labels: &[DriverClass],
) -> Result<PopulationSummary> {
    if profiles.len() != labels.len() {
        return Err(Error::validation(format!(
            "{} profiles but {} labels",
            profiles.len(),
            labels.len()
        )));
    }
    let summarize = |class: DriverClass| -> Result<Option<ArchetypeSummary>> {
        let mut sum = [0.0; 3];
        let mut count = 0;
        for (p, _) in profiles.iter().zip(labels).filter(|(_, l)| **l == class) {
            let f = compute_features(p)?;
            sum[0] += f.accel_range;
            sum[1] += f.avg_speed;
            sum[2] += f.avg_accel;
            count += 1;
        }
        Ok((count > 0).then(|| {
            let n = count as f64;
            ArchetypeSummary {
                count,
                accel_range: sum[0] / n,
                avg_speed: sum[1] / n,
                avg_accel: sum[2] / n,
            }
        }))
    };
    Ok(PopulationSummary {
        conservative: summarize(DriverClass::Conservative)?,
        moderate: summarize(DriverClass::Moderate)?,
        aggressive: summarize(DriverClass::Aggressive)?,
    })
}
