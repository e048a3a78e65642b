//! Membership inference and canary exposure.
//!
//! Scores follow one sign convention throughout: lower means stronger
//! evidence that the example was trained on.

mod adversary;
mod exposure;
mod membership;

pub use adversary::{ExposureAttack, PairingMode, SimulationAttack, ThresholdAttack};
pub use exposure::{calibrated_losses, exposure, exposure_report, CanaryUniverse, ExposureEntry, ExposureReport};
pub use membership::{
    auc, epsilon_lower_bound, mi_metrics, raw_statistic, score_membership, Calibration, MIMetrics, Membership,
    ScoreRecord, Statistic, DEFAULT_FPR_TARGET,
};
