//! Paired-run forgetting measurement.
//!
//! Two models start from the same parameters and the same clean-data batch
//! stream. The treated model additionally sees the canaries, either mixed into
//! the training set until a removal step ([`Strategy::Poison`]) or as
//! dedicated steps at an injection step ([`Strategy::Inject`]). After that
//! point both models train on identical clean batches, and an [`Attack`] is
//! evaluated on the pair at regular intervals.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::train::{TrainPlan, TrainState};

pub type Metrics = BTreeMap<String, f64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Train on `D ∪ D_p` for `removal_step` steps, then on `D` only.
    Poison { removal_step: usize },
    /// Train on `D` for `injection_step` steps, take `repeats` steps on a
    /// batch made of the canaries, then continue on `D`.
    Inject { injection_step: usize, repeats: usize },
}

impl Strategy {
    pub fn marker(&self) -> usize {
        match *self {
            Strategy::Poison { removal_step } => removal_step,
            Strategy::Inject { injection_step, .. } => injection_step,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectionSpec {
    pub canaries: Vec<Example>,
    pub strategy: Strategy,
}

impl InjectionSpec {
    pub fn validate(&self, clean: &Dataset, plan: &TrainPlan) -> Result<()> {
        let marker = self.strategy.marker();
        if marker > plan.total_steps {
            return Err(Error::config(format!("injection marker {marker} exceeds total steps {}", plan.total_steps)));
        }
        if let Strategy::Inject { repeats: 0, .. } = self.strategy {
            return Err(Error::config("repeats must be at least 1"));
        }
        plan.validate(clean.len())?;
        if !self.canaries.is_empty() {
            let canaries = Dataset::new(self.canaries.clone())?;
            Error::check_dim(clean.dimension(), canaries.dimension())?;
            if !clean.is_disjoint_from(&canaries) {
                return Err(Error::config("canary ids overlap the clean set"));
            }
        }
        Ok(())
    }

    /// The canary batch used by each injection step: the canaries cycled up
    /// to `batch_size` entries, or all of them if there are more.
    pub fn canary_batch(&self, batch_size: usize) -> Vec<&Example> {
        if self.canaries.is_empty() {
            return Vec::new();
        }
        let len = batch_size.max(self.canaries.len());
        self.canaries.iter().cycle().take(len).collect()
    }
}

/// What an attack gets to see at one evaluation point.
#[derive(Clone, Copy, Debug)]
pub struct Observation<'a> {
    /// Clean-stream step index of both models.
    pub step: usize,
    /// Model trained without canaries.
    pub baseline: &'a ModelParams,
    /// Model trained with canaries.
    pub treated: &'a ModelParams,
    /// Last model shared by both arms before they diverged.
    pub checkpoint: &'a ModelParams,
    pub canaries: &'a [Example],
}

pub trait Attack {
    fn evaluate(&mut self, obs: &Observation<'_>) -> Result<Metrics>;
}

/// Steps both arms of a paired run in lockstep.
#[derive(Clone, Debug)]
pub struct PairedRunner {
    clean: Dataset,
    poisoned: Option<Dataset>,
    spec: InjectionSpec,
    plan: TrainPlan,
    baseline: TrainState,
    treated: TrainState,
    checkpoint: ModelParams,
    settled: bool,
}

impl PairedRunner {
    pub fn new(clean: &Dataset, spec: &InjectionSpec, theta0: &ModelParams, plan: &TrainPlan) -> Result<Self> {
        spec.validate(clean, plan)?;
        let poisoned = match spec.strategy {
            Strategy::Poison { .. } if !spec.canaries.is_empty() => {
                Some(clean.union(&Dataset::new(spec.canaries.clone())?)?)
            }
            _ => None,
        };
        let mut runner = Self {
            clean: clean.clone(),
            poisoned,
            spec: spec.clone(),
            plan: plan.clone(),
            baseline: TrainState::new(theta0.clone()),
            treated: TrainState::new(theta0.clone()),
            checkpoint: theta0.clone(),
            settled: false,
        };
        runner.settle()?;
        Ok(runner)
    }

    pub fn step(&self) -> usize {
        self.baseline.step
    }

    pub fn marker(&self) -> usize {
        self.spec.strategy.marker()
    }

    pub fn baseline(&self) -> &ModelParams {
        &self.baseline.params
    }

    pub fn treated(&self) -> &ModelParams {
        &self.treated.params
    }

    pub fn checkpoint(&self) -> &ModelParams {
        &self.checkpoint
    }

    pub fn observation(&self) -> Observation<'_> {
        Observation {
            step: self.step(),
            baseline: &self.baseline.params,
            treated: &self.treated.params,
            checkpoint: &self.checkpoint,
            canaries: &self.spec.canaries,
        }
    }

    /// Applies whatever happens at the marker, once.
    fn settle(&mut self) -> Result<()> {
        if self.settled || self.step() != self.marker() {
            return Ok(());
        }
        self.settled = true;
        match self.spec.strategy {
            Strategy::Poison { .. } => self.treated.reset_cursor(),
            Strategy::Inject { injection_step, repeats } => {
                self.checkpoint = self.baseline.params.clone();
                let batch = self.spec.canary_batch(self.plan.batch_size);
                if !batch.is_empty() {
                    for _ in 0..repeats {
                        self.treated.step_on(&batch, &self.plan, injection_step)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn advance(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            let before_marker = self.step() < self.marker();
            self.baseline.advance(&self.clean, &self.plan, 1)?;
            match (&self.poisoned, before_marker) {
                (Some(poisoned), true) => self.treated.advance(poisoned, &self.plan, 1)?,
                _ => self.treated.advance(&self.clean, &self.plan, 1)?,
            }
            self.settle()?;
        }
        Ok(())
    }

    pub fn advance_to(&mut self, step: usize) -> Result<()> {
        if step < self.step() {
            return Err(Error::input(format!("cannot rewind from step {} to {step}", self.step())));
        }
        self.advance(step - self.step())
    }
}

/// Full parameter trajectories of both arms.
#[derive(Clone, Debug, PartialEq)]
pub struct PairedRun {
    pub with_canaries: Vec<(usize, ModelParams)>,
    pub without_canaries: Vec<(usize, ModelParams)>,
}

/// Records both arms every `record_every` steps from 0 to `total_steps`, plus
/// the marker step.
pub fn run_paired(
    clean: &Dataset,
    spec: &InjectionSpec,
    theta0: &ModelParams,
    plan: &TrainPlan,
    record_every: usize,
) -> Result<PairedRun> {
    if record_every == 0 {
        return Err(Error::config("record interval must be positive"));
    }
    let mut runner = PairedRunner::new(clean, spec, theta0, plan)?;
    let mut run = PairedRun { with_canaries: Vec::new(), without_canaries: Vec::new() };
    let mut steps: Vec<usize> = (0..=plan.total_steps).step_by(record_every).collect();
    steps.push(runner.marker());
    steps.sort_unstable();
    steps.dedup();
    for s in steps {
        runner.advance_to(s)?;
        run.with_canaries.push((s, runner.treated().clone()));
        run.without_canaries.push((s, runner.baseline().clone()));
    }
    Ok(run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRecord {
    pub step: usize,
    pub metrics: Metrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForgettingCurve {
    pub marker: usize,
    /// Attack applied with both slots holding the model trained without
    /// canaries, at the marker.
    pub baseline: Option<Metrics>,
    pub records: Vec<CurveRecord>,
}

pub const ARM_ATTACK: &str = "attack";
pub const ARM_BASELINE: &str = "baseline";

impl ForgettingCurve {
    pub fn metric_series(&self, metric: &str) -> Vec<(usize, f64)> {
        self.records.iter().filter_map(|r| r.metrics.get(metric).map(|&v| (r.step, v))).collect()
    }

    pub fn value_at(&self, step: usize, metric: &str) -> Option<f64> {
        self.records.iter().find(|r| r.step == step).and_then(|r| r.metrics.get(metric).copied())
    }

    /// CSV with columns `step,metric,value,arm` under a one-line comment
    /// header carrying the marker and the config hash.
    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut out = format!("# injection_step={} config_hash={config_hash}\nstep,metric,value,arm\n", self.marker);
        if let Some(b) = &self.baseline {
            for (name, v) in b {
                let _ = writeln!(out, "{},{name},{v:?},{ARM_BASELINE}", self.marker);
            }
        }
        for r in &self.records {
            for (name, v) in &r.metrics {
                let _ = writeln!(out, "{},{name},{v:?},{ARM_ATTACK}", r.step);
            }
        }
        out
    }

    /// Inverse of [`ForgettingCurve::to_csv`]; returns the config hash too.
    pub fn from_csv(text: &str) -> Result<(Self, String)> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
        let mut marker = None;
        let mut hash = String::new();
        for field in header.trim_start_matches('#').split_whitespace() {
            match field.split_once('=') {
                Some(("injection_step", v)) => {
                    marker = Some(v.parse().map_err(|e| Error::Parse { line: 1, msg: format!("marker: {e}") })?)
                }
                Some(("config_hash", v)) => hash = v.to_string(),
                _ => {}
            }
        }
        let marker = marker.ok_or(Error::Parse { line: 1, msg: "missing injection_step".into() })?;
        let mut curve = ForgettingCurve { marker, baseline: None, records: Vec::new() };
        for (i, line) in lines {
            if line.trim().is_empty() || line.starts_with("step,") {
                continue;
            }
            let err = |msg: String| Error::Parse { line: i + 1, msg };
            let cols: Vec<&str> = line.split(',').collect();
            let [step, metric, value, arm] = cols[..] else {
                return Err(err(format!("expected 4 columns, got {}", cols.len())));
            };
            let step: usize = step.parse().map_err(|e| err(format!("step: {e}")))?;
            let value: f64 = value.parse().map_err(|e| err(format!("value: {e}")))?;
            match arm {
                ARM_BASELINE => {
                    curve.baseline.get_or_insert_with(Metrics::new).insert(metric.to_string(), value);
                }
                ARM_ATTACK => {
                    if curve.records.last().map(|r| r.step) != Some(step) {
                        curve.records.push(CurveRecord { step, metrics: Metrics::new() });
                    }
                    curve.records.last_mut().expect("pushed").metrics.insert(metric.to_string(), value);
                }
                other => return Err(err(format!("unknown arm {other}"))),
            }
        }
        Ok((curve, hash))
    }
}

fn measure(
    clean: &Dataset,
    spec: &InjectionSpec,
    theta0: &ModelParams,
    plan: &TrainPlan,
    attack: &mut dyn Attack,
    eval_every: usize,
) -> Result<ForgettingCurve> {
    if eval_every == 0 {
        return Err(Error::config("eval_every must be positive"));
    }
    let mut runner = PairedRunner::new(clean, spec, theta0, plan)?;
    let marker = runner.marker();
    runner.advance_to(marker)?;

    let obs = runner.observation();
    let baseline = attack.evaluate(&Observation { treated: obs.baseline, ..obs })?;
    let mut records = Vec::new();
    let mut step = marker;
    loop {
        let metrics = attack.evaluate(&runner.observation())?;
        if let Some((name, v)) = metrics.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::Numeric { step, what: format!("metric {name} = {v}") });
        }
        records.push(CurveRecord { step, metrics });
        if step + eval_every > plan.total_steps {
            break;
        }
        runner.advance(eval_every)?;
        step += eval_every;
    }
    Ok(ForgettingCurve { marker, baseline: Some(baseline), records })
}

/// Poison-then-remove measurement; records at `T_I, T_I + e, ...` up to the
/// plan's total steps.
pub fn measure_forget_poison(
    clean: &Dataset,
    spec: &InjectionSpec,
    theta0: &ModelParams,
    plan: &TrainPlan,
    attack: &mut dyn Attack,
    eval_every: usize,
) -> Result<ForgettingCurve> {
    if !matches!(spec.strategy, Strategy::Poison { .. }) {
        return Err(Error::config("measure_forget_poison needs a Poison strategy"));
    }
    measure(clean, spec, theta0, plan, attack, eval_every)
}

/// Inject-at-a-step measurement. The baseline arm idles during the canary
/// steps, so both arms see the same clean batches afterwards.
pub fn measure_forget_inject(
    clean: &Dataset,
    spec: &InjectionSpec,
    theta0: &ModelParams,
    plan: &TrainPlan,
    attack: &mut dyn Attack,
    eval_every: usize,
) -> Result<ForgettingCurve> {
    if !matches!(spec.strategy, Strategy::Inject { .. }) {
        return Err(Error::config("measure_forget_inject needs an Inject strategy"));
    }
    measure(clean, spec, theta0, plan, attack, eval_every)
}

/// True iff `metric` stays at or below `alpha` at every record at least
/// `offset` steps after the marker.
pub fn is_forgotten(curve: &ForgettingCurve, metric: &str, alpha: f64, offset: usize) -> Result<bool> {
    let relevant: Vec<&CurveRecord> =
        curve.records.iter().filter(|r| r.step >= curve.marker && r.step - curve.marker >= offset).collect();
    if relevant.is_empty() {
        return Err(Error::InsufficientData(format!("no record at offset >= {offset} after step {}", curve.marker)));
    }
    let mut forgotten = true;
    for r in relevant {
        let v = *r
            .metrics
            .get(metric)
            .ok_or_else(|| Error::InsufficientData(format!("metric {metric} missing at step {}", r.step)))?;
        forgotten &= v <= alpha;
    }
    Ok(forgotten)
}
