//! Driver-style clustering.
//!
//! Each vehicle is summarised by three features over its spatial profile
//! (acceleration range, mean speed, mean acceleration). Features are
//! z-scored and clustered with Lloyd's k-means; the number of clusters is
//! chosen by sweeping k and scoring each run with information criteria built
//! on the mean point-to-nearest-center distance, normalised across the sweep.

use std::cmp::Ordering;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;
use crate::trajectory::SpatialProfile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DriverClass {
    Conservative,
    Moderate,
    Aggressive,
}

impl DriverClass {
    pub const ALL: [DriverClass; 3] =
        [DriverClass::Conservative, DriverClass::Moderate, DriverClass::Aggressive];

    pub fn name(self) -> &'static str {
        match self {
            DriverClass::Conservative => "conservative",
            DriverClass::Moderate => "moderate",
            DriverClass::Aggressive => "aggressive",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            DriverClass::Conservative => "C",
            DriverClass::Moderate => "M",
            DriverClass::Aggressive => "A",
        }
    }
}

impl fmt::Display for DriverClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DriverClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conservative" | "c" => Ok(DriverClass::Conservative),
            "moderate" | "m" => Ok(DriverClass::Moderate),
            "aggressive" | "a" => Ok(DriverClass::Aggressive),
            _ => Err(Error::validation(format!("unknown driver class {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverFeatures {
    pub vehicle_id: String,
    pub accel_range: f64,
    pub avg_speed: f64,
    pub avg_accel: f64,
}

impl DriverFeatures {
    pub fn as_point(&self) -> Vec<f64> {
        vec![self.accel_range, self.avg_speed, self.avg_accel]
    }
}

/// Column of `avg_speed` / `avg_accel` in [`DriverFeatures::as_point`].
const SPEED_COL: usize = 1;
const ACCEL_COL: usize = 2;

pub fn compute_features(profile: &SpatialProfile) -> Result<DriverFeatures> {
    if profile.is_empty() {
        return Err(Error::validation(format!("profile {} is empty", profile.vehicle_id)));
    }
    let n = profile.len() as f64;
    let (lo, hi) = profile
        .a_at
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
    Ok(DriverFeatures {
        vehicle_id: profile.vehicle_id.clone(),
        accel_range: hi - lo,
        avg_speed: profile.v_at.iter().sum::<f64>() / n,
        avg_accel: profile.a_at.iter().sum::<f64>() / n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Seeding {
    /// First center drawn at random, each further center the point farthest
    /// from the centers chosen so far.
    FarthestPoint,
    /// k-means++: further centers drawn with probability proportional to the
    /// squared distance to the nearest chosen center.
    KMeansPlusPlus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansOptions {
    pub restarts: usize,
    pub max_iter: usize,
    pub seeding: Seeding,
    pub standardize: bool,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        KMeansOptions { restarts: 10, max_iter: 300, seeding: Seeding::KMeansPlusPlus, standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub k: usize,
    /// Centers in the clustering space (standardised when enabled).
    pub centers: Vec<Vec<f64>>,
    /// Cluster index per input point.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centers.
    pub objective: f64,
    /// Mean over points of the distance to the nearest center.
    pub mean_min_distance: f64,
    /// Objective after every center update of the winning restart.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Style label per cluster, present once [`label_clusters`] ran on a
    /// three-cluster result.
    pub labels: Option<Vec<DriverClass>>,
}

impl ClusteringResult {
    pub fn label_of_point(&self, i: usize) -> Option<DriverClass> {
        self.labels.as_ref().map(|l| l[self.assignments[i]])
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centers: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.iter().enumerate() {
        let d = sq_dist(point, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn seed_centers(points: &[Vec<f64>], k: usize, seeding: Seeding, rng: &mut seed::Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centers = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let next = match seeding {
            Seeding::FarthestPoint => {
                let mut best = 0;
                for i in 1..n {
                    if d2[i] > d2[best] {
                        best = i;
                    }
                }
                best
            }
            Seeding::KMeansPlusPlus => {
                let total: f64 = d2.iter().sum();
                if total <= 0.0 {
                    rng.gen_range(0..n)
                } else {
                    let mut u = rng.gen::<f64>() * total;
                    let mut pick = n - 1;
                    for (i, d) in d2.iter().enumerate() {
                        if u < *d {
                            pick = i;
                            break;
                        }
                        u -= d;
                    }
                    pick
                }
            }
        };
        centers.push(points[next].clone());
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn objective(points: &[Vec<f64>], centers: &[Vec<f64>], assignments: &[usize]) -> f64 {
    points.iter().zip(assignments).map(|(p, &a)| sq_dist(p, &centers[a])).sum()
}

fn update_centers(points: &[Vec<f64>], assignments: &[usize], k: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &a) in points.iter().zip(assignments) {
        counts[a] += 1;
        for (s, x) in sums[a].iter_mut().zip(p) {
            *s += x;
        }
    }
    for (s, c) in sums.iter_mut().zip(&counts) {
        for v in s.iter_mut() {
            *v /= *c as f64;
        }
    }
    sums
}

/// Gives every empty cluster the point farthest from its current center,
/// taken from clusters that keep at least one member.
fn fill_empty_clusters(points: &[Vec<f64>], centers: &mut [Vec<f64>], assignments: &mut [usize]) {
    let k = centers.len();
    loop {
        let mut counts = vec![0usize; k];
        for &a in assignments.iter() {
            counts[a] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else { return };
        let mut donor = None;
        let mut best = -1.0;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] > 1 {
                let d = sq_dist(p, &centers[a]);
                if d > best {
                    best = d;
                    donor = Some(i);
                }
            }
        }
        let i = donor.expect("n >= k guarantees a donor cluster");
        assignments[i] = empty;
        centers[empty] = points[i].clone();
    }
}

struct LloydRun {
    centers: Vec<Vec<f64>>,
    assignments: Vec<usize>,
    objective: f64,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn lloyd(points: &[Vec<f64>], mut centers: Vec<Vec<f64>>, max_iter: usize) -> LloydRun {
    let k = centers.len();
    let dim = points[0].len();
    let mut assignments: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centers).0).collect();
        fill_empty_clusters(points, &mut centers, &mut next);
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
        centers = update_centers(points, &assignments, k, dim);
        trace.push(objective(points, &centers, &assignments));
        iterations += 1;
    }
    hartigan_refine(points, &mut centers, &mut assignments, &mut trace);
    let objective = objective(points, &centers, &assignments);
    LloydRun { centers, assignments, objective, trace, iterations, converged }
}

/// Single-point moves after Lloyd convergence: a point leaves its cluster
/// whenever the exact change in W(C) from moving it is negative.
fn hartigan_refine(points: &[Vec<f64>], centers: &mut [Vec<f64>], assignments: &mut [usize], trace: &mut Vec<f64>) {
    let k = centers.len();
    if k < 2 {
        return;
    }
    let dim = points[0].len();
    let mut counts = vec![0usize; k];
    for &a in assignments.iter() {
        counts[a] += 1;
    }
    let mut moved = true;
    let mut sweeps = 0;
    while moved && sweeps < 100 {
        moved = false;
        sweeps += 1;
        for (i, p) in points.iter().enumerate() {
            let a = assignments[i];
            if counts[a] < 2 {
                continue;
            }
            let na = counts[a] as f64;
            let removal = na / (na - 1.0) * sq_dist(p, &centers[a]);
            let mut target = None;
            let mut best = 0.0;
            for b in (0..k).filter(|&b| b != a) {
                let nb = counts[b] as f64;
                let delta = nb / (nb + 1.0) * sq_dist(p, &centers[b]) - removal;
                if delta < best - 1e-12 * removal.max(1.0) {
                    best = delta;
                    target = Some(b);
                }
            }
            let Some(b) = target else { continue };
            let (na, nb) = (counts[a] as f64, counts[b] as f64);
            for d in 0..dim {
                centers[a][d] = (centers[a][d] * na - p[d]) / (na - 1.0);
                centers[b][d] = (centers[b][d] * nb + p[d]) / (nb + 1.0);
            }
            counts[a] -= 1;
            counts[b] += 1;
            assignments[i] = b;
            trace.push(objective(points, centers, assignments));
            moved = true;
        }
    }
    let fresh = update_centers(points, assignments, k, dim);
    centers.clone_from_slice(&fresh);
}

/// Lloyd's k-means over raw points, best objective over `opts.restarts`
/// seeded restarts.
pub fn kmeans_points(points: &[Vec<f64>], k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusteringResult> {
    if k == 0 {
        return Err(Error::validation("k must be >= 1"));
    }
    if points.len() < k {
        return Err(Error::validation(format!("{} points cannot form {k} clusters", points.len())));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|x| !x.is_finite())) {
        return Err(Error::validation("points must be finite and share one dimension"));
    }
    let mut rng = seed::stream(seed, &format!("kmeans/k{k}"));
    let mut best: Option<LloydRun> = None;
    for _ in 0..opts.restarts.max(1) {
        let init = seed_centers(points, k, opts.seeding, &mut rng);
        let run = lloyd(points, init, opts.max_iter);
        if best.as_ref().map_or(true, |b| run.objective < b.objective) {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    let mean_min_distance = points
        .iter()
        .map(|p| nearest(p, &run.centers).1.sqrt())
        .sum::<f64>()
        / points.len() as f64;
    Ok(ClusteringResult {
        k,
        centers: run.centers,
        assignments: run.assignments,
        objective: run.objective,
        mean_min_distance,
        objective_trace: run.trace,
        iterations: run.iterations,
        converged: run.converged,
        labels: None,
    })
}

/// Per-column z-scoring; zero-variance columns are only centered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(points: &[Vec<f64>]) -> Self {
        let dim = points.first().map_or(0, Vec::len);
        let n = points.len().max(1) as f64;
        let mut mean = vec![0.0; dim];
        for p in points {
            for (m, x) in mean.iter_mut().zip(p) {
                *m += x / n;
            }
        }
        let mut std = vec![0.0; dim];
        for p in points {
            for ((s, x), m) in std.iter_mut().zip(p).zip(&mean) {
                *s += (x - m) * (x - m) / n;
            }
        }
        let std = std.into_iter().map(|v| if v > 0.0 { v.sqrt() } else { 1.0 }).collect();
        Standardizer { mean, std }
    }

    pub fn apply(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| (x - m) / s).collect()
    }

    pub fn invert(&self, p: &[f64]) -> Vec<f64> {
        p.iter().zip(&self.mean).zip(&self.std).map(|((x, m), s)| x * s + m).collect()
    }
}

/// Features in a canonical, order-independent arrangement: returns the
/// clustering-space points sorted by value plus the permutation back to the
/// caller's order.
fn prepare(features: &[DriverFeatures], opts: &KMeansOptions) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut order: Vec<usize> = (0..features.len()).collect();
    let raw: Vec<Vec<f64>> = features.iter().map(DriverFeatures::as_point).collect();
    order.sort_by(|&a, &b| {
        raw[a]
            .iter()
            .zip(&raw[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| *o != Ordering::Equal)
            .unwrap_or(Ordering::Equal)
    });
    let sorted: Vec<Vec<f64>> = order.iter().map(|&i| raw[i].clone()).collect();
    let points = if opts.standardize {
        let s = Standardizer::fit(&sorted);
        sorted.iter().map(|p| s.apply(p)).collect()
    } else {
        sorted
    };
    (points, order)
}

fn restore_order(mut result: ClusteringResult, order: &[usize]) -> ClusteringResult {
    let mut assignments = vec![0; order.len()];
    for (sorted_pos, &orig) in order.iter().enumerate() {
        assignments[orig] = result.assignments[sorted_pos];
    }
    result.assignments = assignments;
    result
}

/// k-means over driver features (standardised when `opts.standardize`).
pub fn kmeans(features: &[DriverFeatures], k: usize, seed: u64, opts: &KMeansOptions) -> Result<ClusteringResult> {
    let (points, order) = prepare(features, opts);
    Ok(restore_order(kmeans_points(&points, k, seed, opts)?, &order))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// `2k + 20 ln L'`.
    Aic,
    /// `k ln n + 10 ln L'`.
    Bic,
    /// `k ln n * 10 * ln L'`, kept for auditing the multiplicative form.
    BicLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KDiagnostic {
    pub k: usize,
    pub mean_min_distance: f64,
    pub ln_l_prime: f64,
    pub aic: f64,
    pub bic: f64,
    pub bic_literal: f64,
}

impl KDiagnostic {
    pub fn score(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::Aic => self.aic,
            Criterion::Bic => self.bic,
            Criterion::BicLiteral => self.bic_literal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub best_k: usize,
    pub criterion: Criterion,
    pub diagnostics: Vec<KDiagnostic>,
    pub results: Vec<ClusteringResult>,
}

impl Selection {
    pub fn best(&self) -> &ClusteringResult {
        &self.results[self.diagnostics.iter().position(|d| d.k == self.best_k).unwrap()]
    }

    /// Smallest-k minimiser of another criterion over the same sweep.
    pub fn argmin(&self, criterion: Criterion) -> usize {
        argmin_k(&self.diagnostics, criterion)
    }
}

fn argmin_k(diags: &[KDiagnostic], criterion: Criterion) -> usize {
    let mut best = &diags[0];
    for d in &diags[1..] {
        if d.score(criterion) < best.score(criterion) {
            best = d;
        }
    }
    best.k
}

/// Normalises mean distances across a sweep so that `ln L'` spans `[0, 1]`:
/// `L' = (L - L_min) / (L_max - L_min) * (e - 1) + 1`. A flat sweep maps to 0.
pub fn normalized_log_likelihood(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values
        .iter()
        .map(|l| ((l - lo) / (hi - lo) * (std::f64::consts::E - 1.0) + 1.0).ln())
        .collect()
}

/// Clusters for every k in `k_range` and picks the minimiser of `criterion`
/// (ties to the smaller k).
pub fn select_k(
    features: &[DriverFeatures],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    opts: &KMeansOptions,
    criterion: Criterion,
) -> Result<Selection> {
    let (k_lo, k_hi) = (*k_range.start(), *k_range.end());
    if k_lo == 0 || k_hi < k_lo || k_hi > features.len() {
        return Err(Error::validation(format!(
            "k range {k_lo}..={k_hi} must lie within [1, {}]",
            features.len()
        )));
    }
    let (points, order) = prepare(features, opts);
    let results: Vec<ClusteringResult> = {
        use rayon::prelude::*;
        k_range
            .clone()
            .into_par_iter()
            .map(|k| kmeans_points(&points, k, seed, opts))
            .collect::<Result<_>>()?
    };
    let ls: Vec<f64> = results.iter().map(|r| r.mean_min_distance).collect();
    let ln_lp = normalized_log_likelihood(&ls);
    let ln_n = (features.len() as f64).ln();
    let diagnostics: Vec<KDiagnostic> = results
        .iter()
        .zip(&ln_lp)
        .map(|(r, &lp)| {
            let k = r.k as f64;
            KDiagnostic {
                k: r.k,
                mean_min_distance: r.mean_min_distance,
                ln_l_prime: lp,
                aic: 2.0 * k + 2.0 * 10.0 * lp,
                bic: k * ln_n + 10.0 * lp,
                bic_literal: k * ln_n * 10.0 * lp,
            }
        })
        .collect();
    let best_k = if ln_lp.iter().all(|&v| v == 0.0) { k_lo } else { argmin_k(&diagnostics, criterion) };
    let results = results.into_iter().map(|r| restore_order(r, &order)).collect();
    Ok(Selection { best_k, criterion, diagnostics, results })
}

/// Names the clusters of a three-cluster result by ascending center speed
/// (ties by ascending mean acceleration). Other k leave labels absent.
pub fn label_clusters(mut result: ClusteringResult) -> ClusteringResult {
    if result.k != 3 {
        result.labels = None;
        return result;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let (ca, cb) = (&result.centers[a], &result.centers[b]);
        ca[SPEED_COL].total_cmp(&cb[SPEED_COL]).then(ca[ACCEL_COL].total_cmp(&cb[ACCEL_COL]))
    });
    let mut labels = vec![DriverClass::Conservative; 3];
    for (rank, &cluster) in order.iter().enumerate() {
        labels[cluster] = DriverClass::ALL[rank];
    }
    result.labels = Some(labels);
    result
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub vehicle_id: String,
    pub cluster: usize,
    pub label: Option<DriverClass>,
}

pub fn assignments(features: &[DriverFeatures], result: &ClusteringResult) -> Vec<Assignment> {
    features
        .iter()
        .enumerate()
        .map(|(i, f)| Assignment {
            vehicle_id: f.vehicle_id.clone(),
            cluster: result.assignments[i],
            label: result.label_of_point(i),
        })
        .collect()
}

pub fn write_assignments_csv<W: Write>(writer: W, rows: &[Assignment]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["vehicle_id", "cluster", "label"])?;
    for r in rows {
        wtr.write_record([
            r.vehicle_id.clone(),
            r.cluster.to_string(),
            r.label.map(|l| l.name().to_string()).unwrap_or_default(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<assignments csv>", e))?;
    Ok(())
}

pub fn read_assignments_csv<R: Read>(reader: R) -> Result<Vec<Assignment>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let cluster = rec[1]
            .parse()
            .map_err(|_| Error::validation(format!("bad cluster id {:?}", &rec[1])))?;
        let label = match &rec[2] {
            "" => None,
            s => Some(s.parse()?),
        };
        out.push(Assignment { vehicle_id: rec[0].to_string(), cluster, label });
    }
    Ok(out)
}

pub fn write_diagnostics_csv<W: Write>(writer: W, diags: &[KDiagnostic]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["k", "L", "ln_Lprime", "aic", "bic"])?;
    for d in diags {
        wtr.write_record([
            d.k.to_string(),
            d.mean_min_distance.to_string(),
            d.ln_l_prime.to_string(),
            d.aic.to_string(),
            d.bic.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::io("<diagnostics csv>", e))?;
    Ok(())
}
