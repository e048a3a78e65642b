//! Attacks that plug into the paired-run protocol.

use std::collections::BTreeMap;

use crate::data::{Dataset, Example};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::protocol::{Attack, InjectionSpec, Metrics, Observation, PairedRunner};
use crate::train::TrainPlan;

use super::exposure::{exposure_report, CanaryUniverse};
use super::membership::{auc, mi_metrics, score_membership, Calibration, MIMetrics, Membership, Statistic};

/// Where OUT scores come from.
#[derive(Clone, Debug, PartialEq)]
pub enum PairingMode {
    /// Canaries scored on the treated model vs the same canaries on the
    /// baseline model.
    Paired,
    /// Canaries vs a held-out set, both scored on the treated model.
    Single { holdout: Vec<Example> },
}

/// Threshold membership inference on (optionally checkpoint-calibrated)
/// per-example statistics.
#[derive(Clone, Debug)]
pub struct ThresholdAttack {
    pub mode: PairingMode,
    pub calibrate: bool,
    pub statistic: Statistic,
    pub fpr_target: f64,
}

impl ThresholdAttack {
    pub fn paired(calibrate: bool, fpr_target: f64) -> Self {
        Self { mode: PairingMode::Paired, calibrate, statistic: Statistic::default(), fpr_target }
    }

    /// IN and OUT calibrated scores for one observation.
    pub fn scores(&self, obs: &Observation<'_>) -> Result<(Vec<f64>, Vec<f64>)> {
        let calibration = if self.calibrate { Calibration::Checkpoint(obs.checkpoint) } else { Calibration::None };
        let score = |model: &ModelParams, queries: &[Example], m: Membership| -> Result<Vec<f64>> {
            Ok(score_membership(model, calibration, queries, m, self.statistic)?
                .into_iter()
                .map(|r| r.calibrated)
                .collect())
        };
        let ins = score(obs.treated, obs.canaries, Membership::In)?;
        let outs = match &self.mode {
            PairingMode::Paired => score(obs.baseline, obs.canaries, Membership::Out)?,
            PairingMode::Single { holdout } => score(obs.treated, holdout, Membership::Out)?,
        };
        Ok((ins, outs))
    }
}

pub(crate) fn metrics_map(m: &MIMetrics, auc_value: f64) -> Metrics {
    BTreeMap::from([
        ("accuracy".to_string(), m.accuracy),
        ("auc".to_string(), auc_value),
        ("epsilon_lb".to_string(), m.epsilon_lb),
        ("precision_at_fpr".to_string(), m.precision_at_fpr),
        ("tpr_at_fpr".to_string(), m.tpr_at_fpr),
    ])
}

impl Attack for ThresholdAttack {
    fn evaluate(&mut self, obs: &Observation<'_>) -> Result<Metrics> {
        if obs.canaries.is_empty() {
            return Ok(metrics_map(&MIMetrics::chance(self.fpr_target), 0.5));
        }
        let (ins, outs) = self.scores(obs)?;
        Ok(metrics_map(&mi_metrics(&ins, &outs, self.fpr_target)?, auc(&ins, &outs)))
    }
}

/// Mean exposure of the canaries among `canaries ∪ holdout`, ranked by loss
/// on the treated model calibrated against the checkpoint.
#[derive(Clone, Debug)]
pub struct ExposureAttack {
    pub holdout: Vec<Example>,
}

impl Attack for ExposureAttack {
    fn evaluate(&mut self, obs: &Observation<'_>) -> Result<Metrics> {
        if obs.canaries.is_empty() {
            return Ok(Metrics::from([("exposure".to_string(), 0.0)]));
        }
        let mut secrets = obs.canaries.to_vec();
        secrets.extend(self.holdout.iter().cloned());
        let universe = CanaryUniverse::new(secrets, obs.canaries.iter().map(|c| c.id).collect())?;
        let losses = universe
            .secrets()
            .iter()
            .map(|s| Ok((s.id, obs.treated.loss(s)? - obs.checkpoint.loss(s)?)))
            .collect::<Result<BTreeMap<u64, f64>>>()?;
        let report = exposure_report(&universe, &losses)?;
        Ok(Metrics::from([("exposure".to_string(), report.mean_exposure())]))
    }
}

/// An adversary who knows the clean data, the canaries, the initial
/// parameters and the training plan, including its batch order. It replays
/// training for both worlds and assigns each observed model to the world whose
/// replay is closer.
///
/// The replay uses the adversary's own plan; give it a different shuffle seed
/// to model an adversary who does not know the order.
#[derive(Clone, Debug)]
pub struct SimulationAttack {
    clean: Dataset,
    spec: InjectionSpec,
    theta0: ModelParams,
    plan: TrainPlan,
    replay: Option<PairedRunner>,
}

impl SimulationAttack {
    pub fn new(clean: &Dataset, spec: &InjectionSpec, theta0: &ModelParams, plan: &TrainPlan) -> Result<Self> {
        spec.validate(clean, plan)?;
        Ok(Self { clean: clean.clone(), spec: spec.clone(), theta0: theta0.clone(), plan: plan.clone(), replay: None })
    }

    fn replay_at(&mut self, step: usize) -> Result<&PairedRunner> {
        let stale = self.replay.as_ref().is_none_or(|r| r.step() > step);
        if stale {
            self.replay = Some(PairedRunner::new(&self.clean, &self.spec, &self.theta0, &self.plan)?);
        }
        let replay = self.replay.as_mut().expect("initialised above");
        replay.advance_to(step)?;
        Ok(replay)
    }
}

impl Attack for SimulationAttack {
    fn evaluate(&mut self, obs: &Observation<'_>) -> Result<Metrics> {
        let replay = self.replay_at(obs.step)?;
        let (sim_in, sim_out) = (replay.treated().clone(), replay.baseline().clone());
        // 1 for a correct call, 1/2 for a tie, 0 otherwise
        let judge = |target: &ModelParams, truth: Membership| -> Result<f64> {
            let d_in = target.distance(&sim_in)?;
            let d_out = target.distance(&sim_out)?;
            Ok(if d_in == d_out {
                0.5
            } else if (d_in < d_out) == (truth == Membership::In) {
                1.0
            } else {
                0.0
            })
        };
        let accuracy = 0.5 * (judge(obs.treated, Membership::In)? + judge(obs.baseline, Membership::Out)?);
        if !accuracy.is_finite() {
            return Err(Error::Numeric { step: obs.step, what: "simulation distance".into() });
        }
        Ok(Metrics::from([
            ("accuracy".to_string(), accuracy),
            ("simulated_gap".to_string(), sim_in.distance(&sim_out)?),
        ]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{random_label_outliers, TwoClassGaussian};
    use crate::protocol::{is_forgotten, measure_forget_inject, Strategy};
    use crate::rng::Rng;
    use crate::train::{LrSchedule, Ordering};

    fn setup(ordering: Ordering, canaries: usize) -> (Dataset, InjectionSpec, ModelParams, TrainPlan) {
        let clean = TwoClassGaussian { dim: 4, n: 60, separation: 2.0 }.generate(0, Rng::new(2, 1)).unwrap();
        let canaries = if canaries == 0 {
            Vec::new()
        } else {
            random_label_outliers(canaries, 4, 3.0, 2, 10_000, Rng::new(2, 3)).unwrap().examples().to_vec()
        };
        let plan =
            TrainPlan { total_steps: 60, batch_size: 10, ordering, lr: LrSchedule::constant(0.2), momentum: 0.0 };
        let theta0 = ModelParams::logistic_random(4, 2, 0.1, Rng::new(2, 5));
        (clean, InjectionSpec { canaries, strategy: Strategy::Inject { injection_step: 12, repeats: 2 } }, theta0, plan)
    }

    #[test]
    fn empty_canaries_are_chance() {
        let (clean, spec, theta0, plan) = setup(Ordering::Shuffled(1), 0);
        let mut attack = ThresholdAttack::paired(true, 0.1);
        let curve = measure_forget_inject(&clean, &spec, &theta0, &plan, &mut attack, 6).unwrap();
        for r in &curve.records {
            assert_eq!(r.metrics["accuracy"], 0.5);
            assert_eq!(r.metrics["epsilon_lb"], 0.0);
        }
        assert!(!is_forgotten(&curve, "accuracy", 0.49, 0).unwrap());
    }

    #[test]
    fn simulation_never_forgets_fixed_order() {
        let (clean, spec, theta0, plan) = setup(Ordering::Fixed(0), 5);
        let mut attack = SimulationAttack::new(&clean, &spec, &theta0, &plan).unwrap();
        let curve = measure_forget_inject(&clean, &spec, &theta0, &plan, &mut attack, 3).unwrap();
        assert!(curve.records.iter().all(|r| r.metrics["accuracy"] == 1.0));
        assert_eq!(curve.baseline.as_ref().unwrap()["accuracy"], 0.5);
        for k in 0..=48 {
            assert!(!is_forgotten(&curve, "accuracy", 0.9, k).unwrap());
        }
    }

    #[test]
    fn paired_attack_is_maximal_right_after_injection() {
        let (clean, spec, theta0, plan) = setup(Ordering::Shuffled(4), 5);
        let mut attack = ThresholdAttack::paired(true, 0.1);
        let curve = measure_forget_inject(&clean, &spec, &theta0, &plan, &mut attack, 6).unwrap();
        let first = &curve.records[0].metrics;
        assert!(first["accuracy"] > curve.baseline.as_ref().unwrap()["accuracy"]);
        assert_eq!(first["accuracy"], 1.0);
    }

    #[test]
    fn exposure_attack_reports_bits() {
        let (clean, spec, theta0, plan) = setup(Ordering::Shuffled(4), 5);
        let holdout = random_label_outliers(27, 4, 3.0, 2, 20_000, Rng::new(3, 3)).unwrap().examples().to_vec();
        let mut attack = ExposureAttack { holdout };
        let curve = measure_forget_inject(&clean, &spec, &theta0, &plan, &mut attack, 12).unwrap();
        let e = curve.records[0].metrics["exposure"];
        assert!(e > 0.0 && e <= 5.0);
    }
}
