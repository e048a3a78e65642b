//! Per-step minibatch SGD with reproducible orderings and step-indexed
//! learning-rate schedules.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::rng::{streams, Rng};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub base: f64,
    /// `(step, factor)`: from `step` on, the rate is multiplied by `factor`.
    #[serde(default)]
    pub decay_points: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(base: f64) -> Self {
        Self { base, decay_points: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base > 0.0 && self.base.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.base)));
        }
        if let Some(&(s, f)) = self.decay_points.iter().find(|(_, f)| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::config(format!("decay factor {f} at step {s} must be positive")));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        self.decay_points.iter().filter(|(s, _)| *s <= step).fold(self.base, |lr, (_, f)| lr * f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "seed")]
pub enum Ordering {
    /// Stored dataset order every epoch. The seed is kept for bookkeeping
    /// only; it does not influence batches.
    Fixed(u64),
    /// Fresh Fisher-Yates permutation per epoch, keyed on `(seed, epoch)`.
    Shuffled(u64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainPlan {
    pub total_steps: usize,
    pub batch_size: usize,
    pub ordering: Ordering,
    pub lr: LrSchedule,
    #[serde(default)]
    pub momentum: f64,
}

impl TrainPlan {
    pub fn validate(&self, dataset_len: usize) -> Result<()> {
        self.lr.validate()?;
        if self.batch_size == 0 || self.batch_size > dataset_len {
            return Err(Error::config(format!("batch size {} must be in 1..={dataset_len}", self.batch_size)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} must be in [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> usize {
        dataset_len.div_ceil(self.batch_size)
    }
}

pub(crate) fn fisher_yates<T>(items: &mut [T], g: &mut impl rand::Rng) {
    for i in (1..items.len()).rev() {
        let j = g.random_range(0..=i);
        items.swap(i, j);
    }
}

/// Batches for one epoch as index lists into `dataset`. Every example appears
/// exactly once; the final batch is short when `batch_size` does not divide
/// the dataset size.
pub fn make_batches(dataset: &Dataset, ordering: Ordering, batch_size: usize, epoch: usize) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    let order = epoch_order(dataset.len(), ordering, epoch);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

fn epoch_order(n: usize, ordering: Ordering, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if let Ordering::Shuffled(seed) = ordering {
        let mut g = Rng::new(seed, streams::SHUFFLE).fork(epoch as u64).generator();
        fisher_yates(&mut order, &mut g);
    }
    order
}

/// One SGD step with heavy-ball momentum: `v ← m·v + ∇`, `θ ← θ − lr·v`,
/// where `∇` is the batch-mean gradient. With `momentum = 0` this is plain
/// SGD. `step` is only used to label numeric errors.
pub fn sgd_step(
    params: &ModelParams,
    batch: &[&Example],
    lr: f64,
    velocity: &[f64],
    momentum: f64,
    step: usize,
) -> Result<(ModelParams, Vec<f64>)> {
    if !(lr > 0.0) {
        return Err(Error::config(format!("learning rate {lr} must be positive")));
    }
    if batch.is_empty() {
        return Err(Error::config("empty batch"));
    }
    Error::check_dim(params.values().len(), velocity.len())?;
    let mut grad = vec![0.0; params.values().len()];
    let scale = 1.0 / batch.len() as f64;
    for ex in batch {
        params.add_gradient(ex, scale, &mut grad)?;
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric { step, what: "gradient".into() });
    }
    let velocity: Vec<f64> =
        if momentum == 0.0 { grad } else { velocity.iter().zip(&grad).map(|(v, g)| momentum * v + g).collect() };
    let mut next = params.clone();
    for (t, v) in next.values_mut().iter_mut().zip(&velocity) {
        *t -= lr * v;
    }
    if !next.is_finite() {
        return Err(Error::Numeric { step, what: "parameters".into() });
    }
    Ok((next, velocity))
}

/// Parameters plus optimizer state plus the number of steps taken on the
/// clean stream. Successive [`TrainState::advance`] calls continue the same
/// batch sequence, so `advance(a); advance(b)` equals `advance(a + b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub params: ModelParams,
    pub velocity: Vec<f64>,
    pub step: usize,
    cursor: Option<(usize, Vec<usize>)>,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        let velocity = vec![0.0; params.values().len()];
        Self { params, velocity, step: 0, cursor: None }
    }

    /// Takes `steps` steps on `dataset`, drawing batch `step mod epoch` of
    /// epoch `step / steps_per_epoch`.
    pub fn advance(&mut self, dataset: &Dataset, plan: &TrainPlan, steps: usize) -> Result<()> {
        let per_epoch = plan.steps_per_epoch(dataset.len());
        for _ in 0..steps {
            let epoch = self.step / per_epoch;
            let pos = self.step % per_epoch;
            let order = match &self.cursor {
                Some((e, order)) if *e == epoch && order.len() == dataset.len() => order,
                _ => {
                    self.cursor = Some((epoch, epoch_order(dataset.len(), plan.ordering, epoch)));
                    &self.cursor.as_ref().expect("just set").1
                }
            };
            let end = ((pos + 1) * plan.batch_size).min(order.len());
            let batch: Vec<&Example> = order[pos * plan.batch_size..end].iter().map(|&i| dataset.get(i)).collect();
            let lr = plan.lr.lr_at(self.step);
            let (p, v) = sgd_step(&self.params, &batch, lr, &self.velocity, plan.momentum, self.step)?;
            self.params = p;
            self.velocity = v;
            self.step += 1;
        }
        Ok(())
    }

    /// One step on an explicit batch at learning rate `lr_at(lr_step)`,
    /// without advancing the clean-stream counter.
    pub fn step_on(&mut self, batch: &[&Example], plan: &TrainPlan, lr_step: usize) -> Result<()> {
        let lr = plan.lr.lr_at(lr_step);
        let (p, v) = sgd_step(&self.params, batch, lr, &self.velocity, plan.momentum, lr_step)?;
        self.params = p;
        self.velocity = v;
        Ok(())
    }

    /// Drops the cached epoch order; call when switching datasets.
    pub(crate) fn reset_cursor(&mut self) {
        self.cursor = None;
    }
}

/// Trains a fresh optimizer state for `steps` steps from step 0.
pub fn train(params: &ModelParams, dataset: &Dataset, plan: &TrainPlan, steps: usize) -> Result<ModelParams> {
    plan.validate(dataset.len())?;
    let mut state = TrainState::new(params.clone());
    state.advance(dataset, plan, steps)?;
    Ok(state.params)
}
