//! One-dimensional k-means and the two-stage clustering membership test.
//!
//! Three Gaussian clusters `c1 ~ N(-1, σ²)`, `c2 ~ N(μ, σ²)` and
//! `c3 ~ N(1, σ²)` are fit with `k = 2`. The initial dataset never contains
//! `c2` samples, except for one outlier `x` in the IN arm. That single point
//! decides which side `c2` merges with once more data arrives, and the
//! choice persists after refitting.

use std::fmt;
use std::fmt::Write as _;

use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::Membership;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Relative slack allowed when checking that the objective never increases.
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeansFit {
    pub centers: Vec<f64>,
    pub assignment: Vec<usize>,
    /// Objective after every assignment step, first to last.
    pub objective: Vec<f64>,
    pub iterations: usize,
}

impl KMeansFit {
    pub fn final_objective(&self) -> f64 {
        *self.objective.last().expect("at least one assignment step")
    }
}

fn nearest(centers: &[f64], x: f64) -> usize {
    let mut best = 0;
    for (j, c) in centers.iter().enumerate().skip(1) {
        if (x - c).abs() < (x - centers[best]).abs() {
            best = j;
        }
    }
    best
}

fn assign(points: &[f64], centers: &[f64], assignment: &mut [usize]) -> f64 {
    let mut objective = 0.0;
    for (a, &x) in assignment.iter_mut().zip(points) {
        *a = nearest(centers, x);
        objective += (x - centers[*a]).powi(2);
    }
    objective
}

/// Lloyd's algorithm from the given centers.
///
/// Stops once no center moves by `tol` or more, or after `max_iters` update
/// rounds. A center left without points is moved onto the point farthest
/// from its own center. Fails if the objective ever increases.
pub fn lloyd_kmeans(points: &[f64], initial: &[f64], max_iters: usize, tol: f64) -> Result<KMeansFit> {
    let k = initial.len();
    if k == 0 {
        return Err(Error::input("k must be at least 1"));
    }
    if points.iter().chain(initial).any(|v| !v.is_finite()) {
        return Err(Error::input("points and centers must be finite"));
    }
    let mut distinct = points.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if k > distinct.len() {
        return Err(Error::input(format!("k = {k} exceeds {} distinct points", distinct.len())));
    }
    let mut sorted_init = initial.to_vec();
    sorted_init.sort_by(f64::total_cmp);
    if sorted_init.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::input("initial centers must be distinct"));
    }

    let mut centers = initial.to_vec();
    let mut assignment = vec![0; points.len()];
    let mut objective = vec![assign(points, &centers, &mut assignment)];
    let mut iterations = 0;
    while iterations < max_iters {
        iterations += 1;
        let mut sums = vec![0.0; k];
        let mut counts = vec![0usize; k];
        for (&a, &x) in assignment.iter().zip(points) {
            sums[a] += x;
            counts[a] += 1;
        }
        let mut updated: Vec<f64> =
            (0..k).map(|j| if counts[j] > 0 { sums[j] / counts[j] as f64 } else { f64::NAN }).collect();
        for j in 0..k {
            if counts[j] == 0 {
                let far = farthest_point(points, &assignment, &updated, &centers);
                updated[j] = far;
            }
        }
        let movement = centers.iter().zip(&updated).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        centers = updated;
        let next = assign(points, &centers, &mut assignment);
        let previous = *objective.last().expect("nonempty");
        if next > previous + MONOTONE_SLACK * previous.max(1.0) {
            return Err(Error::Numeric {
                step: iterations,
                what: format!("k-means objective rose from {previous} to {next}"),
            });
        }
        objective.push(next);
        if movement < tol {
            break;
        }
    }
    Ok(KMeansFit { centers, assignment, objective, iterations })
}

fn farthest_point(points: &[f64], assignment: &[usize], updated: &[f64], old: &[f64]) -> f64 {
    let reference = |a: usize| if updated[a].is_nan() { old[a] } else { updated[a] };
    let mut best = points[0];
    let mut best_dist = -1.0;
    for (&a, &x) in assignment.iter().zip(points) {
        let d = (x - reference(a)).abs();
        if d > best_dist && !updated.contains(&x) {
            best = x;
            best_dist = d;
        }
    }
    best
}

pub const MAX_ITERS: usize = 1000;
pub const TOLERANCE: f64 = 1e-12;

/// How the first stage picks its starting centers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initialization {
    /// Centers at `min D0` and `max D0`.
    MinMax,
    /// Means of the best contiguous split of the sorted points, which is the
    /// global optimum of the 2-means objective in one dimension.
    #[default]
    BestSplit,
}

/// Means of the two sides of the split of sorted `points` with the smallest
/// within-cluster sum of squares. Ties go to the leftmost split.
pub fn best_split_centers(points: &[f64]) -> Result<[f64; 2]> {
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    if sorted.len() < 2 || sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::input("need two distinct values to split"));
    }
    let n = sorted.len();
    let (mut sum, mut sq) = (vec![0.0; n + 1], vec![0.0; n + 1]);
    for (i, x) in sorted.iter().enumerate() {
        sum[i + 1] = sum[i] + x;
        sq[i + 1] = sq[i] + x * x;
    }
    let sse = |a: usize, b: usize| {
        let (s, q, m) = (sum[b] - sum[a], sq[b] - sq[a], (b - a) as f64);
        q - s * s / m
    };
    let mut best = (f64::INFINITY, 0);
    for split in 1..n {
        if sorted[split - 1] == sorted[split] {
            continue;
        }
        let cost = sse(0, split) + sse(split, n);
        if cost < best.0 {
            best = (cost, split);
        }
    }
    let split = best.1;
    Ok([sum[split] / split as f64, (sum[n] - sum[split]) / (n - split) as f64])
}

/// Fits `D0` from the chosen starting centers, then refits `D0 ∪ D1`
/// starting from the first-stage centers. Returns both stages.
pub fn two_stage_fit(d0: &[f64], d1: &[f64], init: Initialization) -> Result<(KMeansFit, KMeansFit)> {
    let start = match init {
        Initialization::MinMax => {
            let lo = d0.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = d0.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if !(lo < hi) {
                return Err(Error::input("first-stage data needs two distinct values"));
            }
            [lo, hi]
        }
        Initialization::BestSplit => best_split_centers(d0)?,
    };
    let first = lloyd_kmeans(d0, &start, MAX_ITERS, TOLERANCE)?;
    if d1.is_empty() {
        let second = KMeansFit {
            centers: first.centers.clone(),
            assignment: first.assignment.clone(),
            objective: vec![first.final_objective()],
            iterations: 0,
        };
        return Ok((first, second));
    }
    let union: Vec<f64> = d0.iter().chain(d1).copied().collect();
    let second = lloyd_kmeans(&union, &first.centers, MAX_ITERS, TOLERANCE)?;
    Ok((first, second))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub sigma: f64,
    pub mu_sep: f64,
    pub outlier_x: f64,
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    pub init: Initialization,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            sigma: 0.03,
            mu_sep: 0.03,
            outlier_x: -0.01,
            m: 10,
            n: 100,
            trials: 200,
            init: Initialization::BestSplit,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::config(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.mu_sep > 0.0 && self.mu_sep < 1.0) {
            return Err(Error::config(format!("mu_sep must lie in (0, 1), got {}", self.mu_sep)));
        }
        if !self.outlier_x.is_finite() {
            return Err(Error::config("outlier_x must be finite"));
        }
        if self.m == 0 {
            return Err(Error::config("m must be at least 1"));
        }
        if self.trials == 0 {
            return Err(Error::config("trials must be at least 1"));
        }
        Ok(())
    }

    pub fn centers(&self) -> [f64; 3] {
        [-1.0, self.mu_sep, 1.0]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    C1,
    C2,
    C3,
    Outlier,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::C1 => "c1",
            Source::C2 => "c2",
            Source::C3 => "c3",
            Source::Outlier => "outlier",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub source: Source,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CounterexampleData {
    pub d0_in: Vec<Point>,
    pub d0_out: Vec<Point>,
    pub d1: Vec<Point>,
}

fn values(points: &[Point]) -> Vec<f64> {
    points.iter().map(|p| p.x).collect()
}

pub fn gen_counterexample_data(config: &ClusterConfig, rng: Rng) -> Result<CounterexampleData> {
    config.validate()?;
    let mut g = rng.generator();
    let [m1, m2, m3] = config.centers();
    let mut draw = |mean: f64, count: usize, source: Source| -> Vec<Point> {
        let normal = Normal::new(mean, config.sigma).expect("validated sigma");
        (0..count).map(|_| Point { x: normal.sample(&mut g), source }).collect()
    };
    let mut d0_out = draw(m1, config.m, Source::C1);
    d0_out.extend(draw(m3, config.m, Source::C3));
    let mut d1 = draw(m1, config.n, Source::C1);
    d1.extend(draw(m2, config.n, Source::C2));
    d1.extend(draw(m3, config.n, Source::C3));
    let mut d0_in = d0_out.clone();
    d0_in.push(Point { x: config.outlier_x, source: Source::Outlier });
    Ok(CounterexampleData { d0_in, d0_out, d1 })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MergedSide {
    WithC1,
    WithC3,
}

impl fmt::Display for MergedSide {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MergedSide::WithC1 => "c2_with_c1",
            MergedSide::WithC3 => "c2_with_c3",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub arm: Membership,
    pub merged_side: MergedSide,
    pub decision: Membership,
}

impl TrialOutcome {
    pub fn correct(&self) -> bool {
        self.arm == self.decision
    }
}

fn majority(assignment: &[usize], points: &[Point], source: Source) -> Option<usize> {
    let mut counts = [0usize; 2];
    for (a, p) in assignment.iter().zip(points) {
        if p.source == source {
            counts[(*a).min(1)] += 1;
        }
    }
    match counts {
        [0, 0] => None,
        [a, b] if a >= b => Some(0),
        _ => Some(1),
    }
}

/// Which side the `c2` points of `D1` joined, judged by the majority
/// assignment of each generator's points.
pub fn merged_side(fit: &KMeansFit, d1: &[Point]) -> MergedSide {
    let offset = fit.assignment.len() - d1.len();
    let tail = &fit.assignment[offset..];
    let c1 = majority(tail, d1, Source::C1);
    let c2 = majority(tail, d1, Source::C2);
    if c1.is_some() && c1 == c2 {
        MergedSide::WithC1
    } else {
        MergedSide::WithC3
    }
}

fn decide(side: MergedSide) -> Membership {
    match side {
        MergedSide::WithC1 => Membership::In,
        MergedSide::WithC3 => Membership::Out,
    }
}

/// Fits both arms of one trial and returns `(IN outcome, OUT outcome)`.
pub fn run_trial(config: &ClusterConfig, trial: usize, rng: Rng) -> Result<(TrialOutcome, TrialOutcome)> {
    let data = gen_counterexample_data(config, rng)?;
    let d1 = values(&data.d1);
    let outcome = |arm: Membership, d0: &[Point]| -> Result<TrialOutcome> {
        let (_, fit) = two_stage_fit(&values(d0), &d1, config.init)?;
        let merged_side = merged_side(&fit, &data.d1);
        Ok(TrialOutcome { trial, arm, merged_side, decision: decide(merged_side) })
    };
    Ok((outcome(Membership::In, &data.d0_in)?, outcome(Membership::Out, &data.d0_out)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterexampleReport {
    pub accuracy: f64,
    /// Fraction of IN predictions that were correct; 0 when nothing was
    /// predicted IN.
    pub precision: f64,
    pub false_in: usize,
    pub outcomes: Vec<TrialOutcome>,
}

/// Runs `config.trials` independent trials, trial `t` drawing from
/// `rng.fork(t)`.
pub fn run_counterexample(config: &ClusterConfig, rng: Rng) -> Result<CounterexampleReport> {
    config.validate()?;
    let pairs: Vec<(TrialOutcome, TrialOutcome)> =
        (0..config.trials).into_par_iter().map(|t| run_trial(config, t, rng.fork(t as u64))).collect::<Result<_>>()?;
    let outcomes: Vec<TrialOutcome> = pairs.into_iter().flat_map(|(a, b)| [a, b]).collect();
    let correct = outcomes.iter().filter(|o| o.correct()).count();
    let predicted_in = outcomes.iter().filter(|o| o.decision == Membership::In).count();
    let true_in = outcomes.iter().filter(|o| o.decision == Membership::In && o.arm == Membership::In).count();
    Ok(CounterexampleReport {
        accuracy: correct as f64 / outcomes.len() as f64,
        precision: if predicted_in == 0 { 0.0 } else { true_in as f64 / predicted_in as f64 },
        false_in: predicted_in - true_in,
        outcomes,
    })
}

pub fn outcomes_to_csv(outcomes: &[TrialOutcome]) -> String {
    let mut out = String::from("trial,arm,merged_side,decision\n");
    for o in outcomes {
        writeln!(out, "{},{},{},{}", o.trial, o.arm, o.merged_side, o.decision).expect("write to string");
    }
    out
}

/// Deterministic vertical offset for scatter plots, in `[-0.5, 0.5)`.
fn jitter(index: usize) -> f64 {
    let golden = 0.618_033_988_749_895;
    (index as f64 * golden).fract() - 0.5
}

/// Points and centers of one trial for scatter plots: `D0` for each arm and
/// the final two-stage fit for each arm.
pub fn plot_dump(config: &ClusterConfig, rng: Rng) -> Result<String> {
    let data = gen_counterexample_data(config, rng)?;
    let d1 = values(&data.d1);
    let mut out = String::from("panel,kind,x,jitter,source,cluster\n");
    for (arm, d0) in [("in", &data.d0_in), ("out", &data.d0_out)] {
        let (first, second) = two_stage_fit(&values(d0), &d1, config.init)?;
        let panel = format!("d0_{arm}");
        for (i, (p, a)) in d0.iter().zip(&first.assignment).enumerate() {
            writeln!(out, "{panel},point,{:?},{:?},{},{a}", p.x, jitter(i), p.source).expect("write to string");
        }
        for (j, c) in first.centers.iter().enumerate() {
            writeln!(out, "{panel},center,{c:?},0.0,,{j}").expect("write to string");
        }
        let panel = format!("final_{arm}");
        let all = d0.iter().chain(&data.d1);
        for (i, (p, a)) in all.zip(&second.assignment).enumerate() {
            writeln!(out, "{panel},point,{:?},{:?},{},{a}", p.x, jitter(i), p.source).expect("write to string");
        }
        for (j, c) in second.centers.iter().enumerate() {
            writeln!(out, "{panel},center,{c:?},0.0,,{j}").expect("write to string");
        }
    }
    Ok(out)
}
