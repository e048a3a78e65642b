use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::{ModelParams, Shape};

pub const DEFAULT_FPR_TARGET: f64 = 0.10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Membership {
    In,
    Out,
}

impl fmt::Display for Membership {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Membership::In => "IN",
            Membership::Out => "OUT",
        })
    }
}

/// Which per-example statistic a classifier is scored with. Mean and
/// centers models are always scored by their loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    /// Negative true-class logit margin.
    #[default]
    LogitMargin,
    Loss,
}

/// Source subtracted from the raw statistic.
#[derive(Clone, Copy, Debug)]
pub enum Calibration<'a> {
    None,
    /// Same statistic under a fixed earlier checkpoint.
    Checkpoint(&'a ModelParams),
    /// Precomputed reference statistic per example id (e.g. a mean over
    /// reference models).
    Table(&'a HashMap<u64, f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub id: u64,
    pub raw: f64,
    pub calibrated: f64,
    pub membership: Membership,
}

pub fn raw_statistic(model: &ModelParams, example: &Example, statistic: Statistic) -> Result<f64> {
    match (model.shape(), statistic) {
        (Shape::Logistic { .. }, Statistic::LogitMargin) => Ok(-model.logit_margin(example)?),
        _ => model.loss(example),
    }
}

pub fn score_membership(
    model: &ModelParams,
    calibration: Calibration<'_>,
    queries: &[Example],
    membership: Membership,
    statistic: Statistic,
) -> Result<Vec<ScoreRecord>> {
    if queries.is_empty() {
        return Err(Error::input("no queries to score"));
    }
    queries
        .iter()
        .map(|q| {
            let raw = raw_statistic(model, q, statistic)?;
            let reference = match calibration {
                Calibration::None => 0.0,
                Calibration::Checkpoint(ckpt) => raw_statistic(ckpt, q, statistic)?,
                Calibration::Table(t) => *t.get(&q.id).ok_or(Error::Calibration(q.id))?,
            };
            Ok(ScoreRecord { id: q.id, raw, calibrated: raw - reference, membership })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIMetrics {
    pub accuracy: f64,
    pub precision_at_fpr: f64,
    pub tpr_at_fpr: f64,
    pub fpr_target: f64,
    pub epsilon_lb: f64,
}

impl MIMetrics {
    /// The value every metric takes when there is nothing to distinguish.
    pub fn chance(fpr_target: f64) -> Self {
        Self { accuracy: 0.5, precision_at_fpr: 0.5, tpr_at_fpr: fpr_target, fpr_target, epsilon_lb: 0.0 }
    }
}

/// `max(0, ln(tpr / fpr))`; zero when either rate is zero.
pub fn epsilon_lower_bound(tpr: f64, fpr: f64) -> f64 {
    if tpr <= 0.0 || fpr <= 0.0 {
        return 0.0;
    }
    (tpr / fpr).ln().max(0.0)
}

/// Threshold sweep over "predict IN iff score ≤ t" for every distinct score
/// and `t = −∞`.
///
/// `accuracy` is the best balanced accuracy over the sweep. The largest
/// threshold whose empirical FPR is at most `fpr_target` fixes TPR and
/// precision (precision is 0 when that threshold predicts nothing IN), and
/// `epsilon_lb = max(0, ln(TPR / fpr_target))`.
pub fn mi_metrics(in_scores: &[f64], out_scores: &[f64], fpr_target: f64) -> Result<MIMetrics> {
    if in_scores.is_empty() || out_scores.is_empty() {
        return Err(Error::input("membership metrics need nonempty IN and OUT scores"));
    }
    if !(fpr_target > 0.0 && fpr_target < 1.0) {
        return Err(Error::input(format!("fpr target {fpr_target} outside (0, 1)")));
    }
    if in_scores.iter().chain(out_scores).any(|s| s.is_nan()) {
        return Err(Error::input("NaN score"));
    }
    let mut tagged: Vec<(f64, bool)> =
        in_scores.iter().map(|&s| (s, true)).chain(out_scores.iter().map(|&s| (s, false))).collect();
    tagged.sort_by(|a, b| a.0.total_cmp(&b.0));

    let (n_in, n_out) = (in_scores.len() as f64, out_scores.len() as f64);
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best_acc = 0.5;
    let (mut op_tp, mut op_fp) = (0usize, 0usize);
    let mut i = 0;
    while i < tagged.len() {
        let t = tagged[i].0;
        while i < tagged.len() && tagged[i].0 == t {
            if tagged[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (tpr, fpr) = (tp as f64 / n_in, fp as f64 / n_out);
        best_acc = f64::max(best_acc, 0.5 * (tpr + 1.0 - fpr));
        if fpr <= fpr_target {
            (op_tp, op_fp) = (tp, fp);
        }
    }
    let tpr = op_tp as f64 / n_in;
    let precision = if op_tp + op_fp == 0 { 0.0 } else { op_tp as f64 / (op_tp + op_fp) as f64 };
    Ok(MIMetrics {
        accuracy: best_acc,
        precision_at_fpr: precision,
        tpr_at_fpr: tpr,
        fpr_target,
        epsilon_lb: epsilon_lower_bound(tpr, fpr_target),
    })
}

/// Probability that an IN score is below an OUT score, ties counting half.
pub fn auc(in_scores: &[f64], out_scores: &[f64]) -> f64 {
    if in_scores.is_empty() || out_scores.is_empty() {
        return 0.5;
    }
    let mut out_sorted = out_scores.to_vec();
    out_sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for &s in in_scores {
        let below_or_eq = out_sorted.partition_point(|&o| o <= s);
        let below = out_sorted.partition_point(|&o| o < s);
        let greater = out_sorted.len() - below_or_eq;
        total += greater as f64 + 0.5 * (below_or_eq - below) as f64;
    }
    total / (in_scores.len() * out_scores.len()) as f64
}
