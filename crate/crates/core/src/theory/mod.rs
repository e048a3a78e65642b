//! Mean estimation by per-example SGD: the deterministic-order simulation
//! argument, closed-form iterate distributions under random sampling, and the
//! Rényi divergence between injected and non-injected iterates.

mod deterministic;
mod gaussian;
mod sampled;

pub use deterministic::{simulate_distinguisher, train_mean_deterministic, Distinguisher, Scalar};
pub use gaussian::{gaussian_renyi, inverse_quadratic_form, Divergence, GaussianSampler, GaussianSpec};
pub use sampled::{
    composed_divergence, divergence, divergence_bound, eta_factor, exact_divergence, ln_eta_factor,
    mi_advantage_monte_carlo, theta_k_distribution, train_mean_sampled, train_mean_sampled_with, DivergenceResult,
    MeanEstExperiment, MonteCarloAccuracy,
};
