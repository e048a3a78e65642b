//! Small statistics helpers shared by the Monte-Carlo harnesses.

use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance; zero for fewer than two samples.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn normal_quantile(p: f64) -> f64 {
    Normal::new(0.0, 1.0).expect("standard normal").inverse_cdf(p)
}

/// Two-sided confidence interval for a binomial proportion (Wilson score).
pub fn wilson_interval(successes: usize, trials: usize, confidence: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let z = normal_quantile(0.5 + confidence / 2.0);
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// One-sided paired t-test: is the mean of `diffs` greater than zero at the
/// given confidence? Returns the t statistic and the decision.
pub fn paired_greater(diffs: &[f64], confidence: f64) -> (f64, bool) {
    let n = diffs.len();
    if n < 2 {
        return (f64::NAN, false);
    }
    let se = std_error(diffs);
    let m = mean(diffs);
    if se == 0.0 {
        return (if m > 0.0 { f64::INFINITY } else { f64::NAN }, m > 0.0);
    }
    let t = m / se;
    let crit = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("dof > 0").inverse_cdf(confidence);
    (t, t > crit)
}

/// One-sided two-sample z-test for `p_a > p_b` on binomial proportions.
pub fn proportion_greater(p_a: f64, n_a: usize, p_b: f64, n_b: usize, confidence: f64) -> (f64, bool) {
    let se = (p_a * (1.0 - p_a) / n_a as f64 + p_b * (1.0 - p_b) / n_b as f64).sqrt();
    let z = (p_a - p_b) / se;
    (z, z > normal_quantile(confidence))
}

/// One-sided Welch test for `mean(a) > mean(b)`.
pub fn welch_greater(a: &[f64], b: &[f64], confidence: f64) -> (f64, bool) {
    let (va, vb) = (variance(a) / a.len() as f64, variance(b) / b.len() as f64);
    let se = (va + vb).sqrt();
    let t = (mean(a) - mean(b)) / se;
    let dof = (va + vb).powi(2) / (va * va / (a.len() - 1) as f64 + vb * vb / (b.len() - 1) as f64);
    let crit = StudentsT::new(0.0, 1.0, dof).expect("dof > 0").inverse_cdf(confidence);
    (t, t > crit)
}
