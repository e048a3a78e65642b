use num_traits::{Num, Signed};

use crate::error::{Error, Result};

/// Arithmetic the deterministic recurrences run in. Implemented for `f64`
/// and for exact rationals (`num_rational::BigRational`).
pub trait Scalar: Num + Signed + Clone + PartialOrd + std::fmt::Debug {}

impl<T: Num + Signed + Clone + PartialOrd + std::fmt::Debug> Scalar for T {}

fn two<T: Scalar>() -> T {
    T::one() + T::one()
}

fn check_eta<T: Scalar>(eta: &T) -> Result<()> {
    if *eta > T::zero() && two::<T>() * eta.clone() < T::one() {
        Ok(())
    } else {
        Err(Error::input(format!("learning rate {eta:?} outside (0, 1/2)")))
    }
}

/// Per-example gradient descent on `‖θ − x‖²` in the stored order,
/// `θ_i = θ_{i−1} − 2η(θ_{i−1} − x_i)`. Returns `θ_0, θ_1, ..., θ_n`.
pub fn train_mean_deterministic<T: Scalar>(data: &[Vec<T>], theta0: &[T], eta: &T) -> Result<Vec<Vec<T>>> {
    check_eta(eta)?;
    let step = two::<T>() * eta.clone();
    let mut trajectory = Vec::with_capacity(data.len() + 1);
    trajectory.push(theta0.to_vec());
    for x in data {
        Error::check_dim(theta0.len(), x.len())?;
        let prev = trajectory.last().expect("nonempty");
        let next = prev.iter().zip(x).map(|(t, xi)| t.clone() - step.clone() * (t.clone() - xi.clone())).collect();
        trajectory.push(next);
    }
    Ok(trajectory)
}

/// Both deterministic trainings for datasets that differ in exactly one row.
#[derive(Clone, Debug, PartialEq)]
pub struct Distinguisher<T> {
    /// 1-based index of the differing row.
    pub differing_row: usize,
    pub trajectory0: Vec<Vec<T>>,
    pub trajectory1: Vec<Vec<T>>,
    pub eta: T,
    pub delta_x: Vec<T>,
}

impl<T: Scalar> Distinguisher<T> {
    /// `θ⁰_i − θ¹_i` for `i = 0..=n`.
    pub fn realized_gaps(&self) -> Vec<Vec<T>> {
        self.trajectory0
            .iter()
            .zip(&self.trajectory1)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.clone() - y.clone()).collect())
            .collect()
    }

    /// `2η(x⁰_j − x¹_j)(1 − 2η)^(i−j)` for `i ≥ j`, zero before.
    pub fn predicted_gap(&self, step: usize) -> Vec<T> {
        if step < self.differing_row {
            return vec![T::zero(); self.delta_x.len()];
        }
        let contraction = T::one() - two::<T>() * self.eta.clone();
        let factor = two::<T>() * self.eta.clone() * num_traits::pow(contraction, step - self.differing_row);
        self.delta_x.iter().map(|d| factor.clone() * d.clone()).collect()
    }

    pub fn final_models(&self) -> (&[T], &[T]) {
        (self.trajectory0.last().expect("nonempty"), self.trajectory1.last().expect("nonempty"))
    }

    /// Which dataset (0 or 1) a released final model was trained on: the one
    /// whose replay is closer, ties going to 0.
    pub fn decide(&self, target: &[T]) -> usize {
        let sq = |m: &[T]| {
            m.iter().zip(target).fold(T::zero(), |acc, (a, b)| {
                let d = a.clone() - b.clone();
                acc + d.clone() * d
            })
        };
        let (m0, m1) = self.final_models();
        if sq(m1) < sq(m0) {
            1
        } else {
            0
        }
    }
}

/// Replays the deterministic algorithm on both datasets.
pub fn simulate_distinguisher<T: Scalar>(
    d0: &[Vec<T>],
    d1: &[Vec<T>],
    theta0: &[T],
    eta: &T,
) -> Result<Distinguisher<T>> {
    if d0.len() != d1.len() {
        return Err(Error::input(format!("datasets have {} and {} rows", d0.len(), d1.len())));
    }
    let differing: Vec<usize> = (0..d0.len()).filter(|&i| d0[i] != d1[i]).collect();
    let j = match differing[..] {
        [j] => j,
        [] => return Err(Error::input("datasets are identical")),
        _ => return Err(Error::input(format!("datasets differ in {} rows", differing.len()))),
    };
    let delta_x = d0[j].iter().zip(&d1[j]).map(|(a, b)| a.clone() - b.clone()).collect();
    Ok(Distinguisher {
        differing_row: j + 1,
        trajectory0: train_mean_deterministic(d0, theta0, eta)?,
        trajectory1: train_mean_deterministic(d1, theta0, eta)?,
        eta: eta.clone(),
        delta_x,
    })
}
