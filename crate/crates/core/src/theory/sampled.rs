use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gaussian::{gaussian_renyi, inverse_quadratic_form, Divergence, GaussianSampler, GaussianSpec};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::stats::wilson_interval;

/// One injection of `±v` followed by `steps` SGD steps on fresh samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanEstExperiment {
    pub theta0: DVector<f64>,
    pub injected: DVector<f64>,
    pub eta: f64,
    pub steps: usize,
    pub alpha: f64,
}

impl MeanEstExperiment {
    pub fn validate(&self) -> Result<()> {
        check_eta_k(self.eta, self.steps)?;
        Error::check_dim(self.theta0.len(), self.injected.len())?;
        if !(self.alpha > 1.0) {
            return Err(Error::input(format!("Rényi order {} must exceed 1", self.alpha)));
        }
        Ok(())
    }

    /// Starting points after the injected step: `θ0 − 2η(θ0 ∓ v)`.
    pub fn injected_starts(&self) -> (DVector<f64>, DVector<f64>) {
        let step = 2.0 * self.eta;
        let plus = &self.theta0 - (&self.theta0 - &self.injected) * step;
        let minus = &self.theta0 - (&self.theta0 + &self.injected) * step;
        (plus, minus)
    }
}

fn check_eta_k(eta: f64, k: usize) -> Result<()> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::input(format!("learning rate {eta} outside (0, 1/2)")));
    }
    if k == 0 {
        return Err(Error::input("step count must be at least 1"));
    }
    Ok(())
}

/// `ln (1 − 2η)^(2k)`, kept in log space so large `k` cannot underflow.
fn ln_contraction_sq(eta: f64, k: usize) -> f64 {
    2.0 * k as f64 * (-2.0 * eta).ln_1p()
}

/// `1 − (1 − 2η)^(2k)` without cancellation for small `η`.
fn one_minus_contraction_sq(eta: f64, k: usize) -> f64 {
    -ln_contraction_sq(eta, k).exp_m1()
}

/// Runs both arms once, drawing `x⁺` and `x⁻` independently each step.
pub fn train_mean_sampled_with(
    experiment: &MeanEstExperiment,
    sampler: &GaussianSampler,
    g: &mut impl rand::Rng,
) -> (DVector<f64>, DVector<f64>) {
    let step = 2.0 * experiment.eta;
    let (mut plus, mut minus) = experiment.injected_starts();
    for _ in 0..experiment.steps {
        let x_plus = sampler.sample(g);
        let x_minus = sampler.sample(g);
        plus = &plus - (&plus - x_plus) * step;
        minus = &minus - (&minus - x_minus) * step;
    }
    (plus, minus)
}

pub fn train_mean_sampled(
    experiment: &MeanEstExperiment,
    spec: &GaussianSpec,
    rng: Rng,
) -> Result<(DVector<f64>, DVector<f64>)> {
    check_eta_k(experiment.eta, experiment.steps.max(1))?;
    Error::check_dim(spec.dim(), experiment.theta0.len())?;
    Error::check_dim(spec.dim(), experiment.injected.len())?;
    let sampler = GaussianSampler::new(spec);
    Ok(train_mean_sampled_with(experiment, &sampler, &mut rng.generator()))
}

/// Distribution of `θ_k` started at `start` with samples from `spec`:
/// mean `μ + (start − μ)(1−2η)^k`, covariance
/// `η(1 − (1−2η)^(2k))/(1 − η) · Σ`.
pub fn theta_k_distribution(start: &DVector<f64>, spec: &GaussianSpec, eta: f64, k: usize) -> Result<GaussianSpec> {
    check_eta_k(eta, k)?;
    Error::check_dim(spec.dim(), start.len())?;
    let contraction = (0.5 * ln_contraction_sq(eta, k)).exp();
    let mean = &spec.mean + (start - &spec.mean) * contraction;
    let factor = eta * one_minus_contraction_sq(eta, k) / (1.0 - eta);
    Ok(GaussianSpec { mean, covariance: &spec.covariance * factor })
}

/// `ln f(η)` for `f(η) = η(1−η)(1−2η)^(2k) / (1 − (1−2η)^(2k))`.
pub fn ln_eta_factor(eta: f64, k: usize) -> f64 {
    eta.ln() + (-eta).ln_1p() + ln_contraction_sq(eta, k) - one_minus_contraction_sq(eta, k).ln()
}

/// `f(η)`; tends to `1/(4k)` as `η → 0` and to 0 as `η → 1/2`.
pub fn eta_factor(eta: f64, k: usize) -> Result<f64> {
    check_eta_k(eta, k)?;
    Ok(ln_eta_factor(eta, k).exp())
}

/// Rényi divergence of order `α` between the two arms after `k` steps:
/// `8α f(η) vᵀΣ⁻¹v`.
pub fn exact_divergence(v: &DVector<f64>, sigma: &DMatrix<f64>, eta: f64, k: usize, alpha: f64) -> Result<Divergence> {
    let f = eta_factor(eta, k)?;
    Ok(inverse_quadratic_form(sigma, v)?.scale(8.0 * alpha * f))
}

/// The step-count bound `(2α/k) vᵀΣ⁻¹v`.
pub fn divergence_bound(v: &DVector<f64>, sigma: &DMatrix<f64>, k: usize, alpha: f64) -> Result<Divergence> {
    if k == 0 {
        return Err(Error::input("step count must be at least 1"));
    }
    Ok(inverse_quadratic_form(sigma, v)?.scale(2.0 * alpha / k as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivergenceResult {
    pub exact: Divergence,
    pub bound: Divergence,
}

pub fn divergence(v: &DVector<f64>, sigma: &DMatrix<f64>, eta: f64, k: usize, alpha: f64) -> Result<DivergenceResult> {
    Ok(DivergenceResult {
        exact: exact_divergence(v, sigma, eta, k, alpha)?,
        bound: divergence_bound(v, sigma, k, alpha)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloAccuracy {
    pub steps: usize,
    pub correct: usize,
    pub decisions: usize,
    pub accuracy: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Likelihood-ratio test between the two closed-form arm distributions,
/// applied to simulated `θ_k⁺` (truth `+`) and `θ_k⁻` (truth `−`) in every
/// trial. Ties are broken by a fair coin. The interval is a 95% Wilson
/// interval over all `2·trials` decisions.
pub fn mi_advantage_monte_carlo(
    experiment: &MeanEstExperiment,
    spec: &GaussianSpec,
    trials: usize,
    rng: Rng,
) -> Result<MonteCarloAccuracy> {
    if trials < 100 {
        return Err(Error::input(format!("need at least 100 trials, got {trials}")));
    }
    check_eta_k(experiment.eta, experiment.steps)?;
    Error::check_dim(spec.dim(), experiment.theta0.len())?;
    let (start_plus, start_minus) = experiment.injected_starts();
    let dist_plus = theta_k_distribution(&start_plus, spec, experiment.eta, experiment.steps)?;
    let dist_minus = theta_k_distribution(&start_minus, spec, experiment.eta, experiment.steps)?;
    // equal covariances: log-likelihood ratio is linear, w·(θ − midpoint)
    let diff = &dist_plus.mean - &dist_minus.mean;
    let direction = pseudo_solve(&dist_plus.covariance, &diff);
    let midpoint = (&dist_plus.mean + &dist_minus.mean) * 0.5;
    let sampler = GaussianSampler::new(spec);

    let correct: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut g = rng.fork(t as u64).generator();
            let (plus, minus) = train_mean_sampled_with(experiment, &sampler, &mut g);
            let mut call = |theta: &DVector<f64>| -> bool {
                let llr = direction.dot(&(theta - &midpoint));
                if llr == 0.0 {
                    rand::Rng::random_bool(&mut g, 0.5)
                } else {
                    llr > 0.0
                }
            };
            usize::from(call(&plus)) + usize::from(!call(&minus))
        })
        .sum();
    let decisions = 2 * trials;
    let (ci_low, ci_high) = wilson_interval(correct, decisions, 0.95);
    Ok(MonteCarloAccuracy {
        steps: experiment.steps,
        correct,
        decisions,
        accuracy: correct as f64 / decisions as f64,
        ci_low,
        ci_high,
    })
}

fn pseudo_solve(sigma: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    if let Some(chol) = sigma.clone().cholesky() {
        return chol.solve(v);
    }
    sigma.clone().pseudo_inverse(1e-12).map(|p| p * v).unwrap_or_else(|_| DVector::zeros(v.len()))
}

/// Rényi divergence between the two closed-form arm distributions.
pub fn composed_divergence(experiment: &MeanEstExperiment, spec: &GaussianSpec) -> Result<Divergence> {
    let (a, b) = experiment.injected_starts();
    let pa = theta_k_distribution(&a, spec, experiment.eta, experiment.steps)?;
    let pb = theta_k_distribution(&b, spec, experiment.eta, experiment.steps)?;
    gaussian_renyi(&pa.mean, &pb.mean, &pa.covariance, experiment.alpha)
}
