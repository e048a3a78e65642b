use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;
const RANGE_TOL: f64 = 1e-10;

/// `N(mean, covariance)` with a symmetric positive-semidefinite covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianSpec {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        check_psd(&covariance)?;
        Error::check_dim(covariance.nrows(), mean.len())?;
        Ok(Self { mean, covariance })
    }

    pub fn isotropic(mean: DVector<f64>, variance: f64) -> Result<Self> {
        let d = mean.len();
        Self::new(mean, DMatrix::identity(d, d) * variance)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

fn check_psd(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::input("covariance must be square"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::input("covariance must be finite"));
    }
    let asym = (m - m.transpose()).abs().max();
    if asym > SYMMETRY_TOL {
        return Err(Error::input(format!("covariance not symmetric (max asymmetry {asym:e})")));
    }
    let min_eig = SymmetricEigen::new(m.clone()).eigenvalues.min();
    if min_eig < -PSD_TOL {
        return Err(Error::input(format!("covariance not PSD (min eigenvalue {min_eig:e})")));
    }
    Ok(())
}

/// A quadratic form that is `+∞` when the vector leaves the covariance's range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Divergence {
    Finite(f64),
    Infinite,
}

impl Divergence {
    pub fn value(self) -> f64 {
        match self {
            Divergence::Finite(v) => v,
            Divergence::Infinite => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Divergence::Finite(_))
    }

    pub fn scale(self, factor: f64) -> Self {
        match self {
            Divergence::Finite(v) => Divergence::Finite(v * factor),
            Divergence::Infinite => Divergence::Infinite,
        }
    }
}

/// `vᵀ Σ⁻¹ v`, solved through a Cholesky factorization when `Σ` is positive
/// definite and through a pseudo-inverse eigen-solve otherwise. In the
/// singular case a residual `‖Σx − v‖` above `1e−10·max(‖v‖, 1)` means `v`
/// has weight outside the range of `Σ`, reported as [`Divergence::Infinite`].
pub fn inverse_quadratic_form(sigma: &DMatrix<f64>, v: &DVector<f64>) -> Result<Divergence> {
    check_psd(sigma)?;
    Error::check_dim(sigma.nrows(), v.len())?;
    if v.iter().all(|&x| x == 0.0) {
        return Ok(Divergence::Finite(0.0));
    }
    if let Some(chol) = sigma.clone().cholesky() {
        let x = chol.solve(v);
        let q = v.dot(&x);
        if q.is_finite() && q >= 0.0 {
            return Ok(Divergence::Finite(q));
        }
    }
    let eig = SymmetricEigen::new(sigma.clone());
    let cutoff = RANGE_TOL * eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let coords = eig.eigenvectors.transpose() * v;
    let inv_coords = DVector::from_iterator(
        coords.len(),
        coords.iter().zip(eig.eigenvalues.iter()).map(|(&c, &l)| if l > cutoff { c / l } else { 0.0 }),
    );
    let x = &eig.eigenvectors * inv_coords;
    let residual = (sigma * &x - v).norm();
    if residual > RANGE_TOL * v.norm().max(1.0) {
        return Ok(Divergence::Infinite);
    }
    Ok(Divergence::Finite(v.dot(&x).max(0.0)))
}

/// Rényi divergence of order `alpha` between `N(mu0, Σ')` and `N(mu1, Σ')`:
/// `(α/2)(μ0−μ1)ᵀ Σ'⁻¹ (μ0−μ1)`.
pub fn gaussian_renyi(mu0: &DVector<f64>, mu1: &DVector<f64>, sigma: &DMatrix<f64>, alpha: f64) -> Result<Divergence> {
    if !(alpha > 0.0) {
        return Err(Error::input(format!("Rényi order {alpha} must be positive")));
    }
    Error::check_dim(mu0.len(), mu1.len())?;
    Ok(inverse_quadratic_form(sigma, &(mu0 - mu1))?.scale(alpha / 2.0))
}

/// Draws from a [`GaussianSpec`] through `mean + U·sqrt(Λ)·z`, which also
/// covers singular covariances.
#[derive(Clone, Debug)]
pub struct GaussianSampler {
    mean: DVector<f64>,
    factor: DMatrix<f64>,
}

impl GaussianSampler {
    pub fn new(spec: &GaussianSpec) -> Self {
        let factor = match spec.covariance.clone().cholesky() {
            Some(c) => c.l(),
            None => {
                let eig = SymmetricEigen::new(spec.covariance.clone());
                let scales = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
                eig.eigenvectors * DMatrix::from_diagonal(&scales)
            }
        };
        Self { mean: spec.mean.clone(), factor }
    }

    pub fn sample(&self, g: &mut impl rand::Rng) -> DVector<f64> {
        let z = DVector::from_fn(self.mean.len(), |_, _| StandardNormal.sample(g));
        &self.mean + &self.factor * z
    }
}
