//! Parameter vectors for the three model families and their per-example
//! losses and gradients.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Layout of a flat parameter vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    /// One scalar per input dimension; loss is `‖θ − x‖²`.
    Mean { dim: usize },
    /// Softmax regression: `classes × dim` row-major weights, then `classes`
    /// biases.
    Logistic { dim: usize, classes: usize },
    /// `k` centers of dimension `dim`, concatenated.
    Centers { k: usize, dim: usize },
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Mean { dim } => dim,
            Shape::Logistic { dim, classes } => classes * (dim + 1),
            Shape::Centers { k, dim } => k * dim,
        }
    }

    pub fn input_dim(&self) -> usize {
        match *self {
            Shape::Mean { dim } | Shape::Logistic { dim, .. } | Shape::Centers { dim, .. } => dim,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    values: Vec<f64>,
    shape: Shape,
}

impl ModelParams {
    pub fn new(values: Vec<f64>, shape: Shape) -> Result<Self> {
        Error::check_dim(shape.len(), values.len())?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("parameters must be finite"));
        }
        Ok(Self { values, shape })
    }

    pub fn mean(theta: Vec<f64>) -> Self {
        let dim = theta.len();
        Self { values: theta, shape: Shape::Mean { dim } }
    }

    pub fn logistic_zeros(dim: usize, classes: usize) -> Self {
        let shape = Shape::Logistic { dim, classes };
        Self { values: vec![0.0; shape.len()], shape }
    }

    /// Weights drawn from `N(0, scale²)`, biases zero.
    pub fn logistic_random(dim: usize, classes: usize, scale: f64, rng: Rng) -> Self {
        let mut p = Self::logistic_zeros(dim, classes);
        let normal = Normal::new(0.0, scale).expect("scale must be finite and non-negative");
        let mut g = rng.generator();
        for w in &mut p.values[..classes * dim] {
            *w = normal.sample(&mut g);
        }
        p
    }

    pub fn centers(centers: &[Vec<f64>]) -> Result<Self> {
        let dim = centers.first().map(Vec::len).ok_or_else(|| Error::input("no centers"))?;
        for c in centers {
            Error::check_dim(dim, c.len())?;
        }
        Self::new(centers.concat(), Shape::Centers { k: centers.len(), dim })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn input_dim(&self) -> usize {
        self.shape.input_dim()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &ModelParams) -> Result<f64> {
        Error::check_dim(self.values.len(), other.values.len())?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    fn check_example(&self, example: &Example) -> Result<()> {
        Error::check_dim(self.input_dim(), example.dim())
    }

    fn label_of(&self, example: &Example, classes: usize) -> Result<usize> {
        match example.label {
            Some(l) if l < classes => Ok(l),
            Some(l) => Err(Error::input(format!("label {l} out of range for {classes} classes"))),
            None => Err(Error::input(format!("example {} has no label", example.id))),
        }
    }

    /// Class logits; only defined for logistic models.
    pub fn logits(&self, features: &[f64]) -> Result<Vec<f64>> {
        let Shape::Logistic { dim, classes } = self.shape else {
            return Err(Error::input("logits require a logistic model"));
        };
        Error::check_dim(dim, features.len())?;
        let (weights, biases) = self.values.split_at(classes * dim);
        Ok(weights
            .chunks_exact(dim)
            .zip(biases)
            .map(|(row, b)| row.iter().zip(features).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect())
    }

    /// True-class logit minus the largest other logit.
    pub fn logit_margin(&self, example: &Example) -> Result<f64> {
        let Shape::Logistic { classes, .. } = self.shape else {
            return Err(Error::input("logit margin requires a logistic model"));
        };
        let y = self.label_of(example, classes)?;
        let z = self.logits(&example.features)?;
        let other = z.iter().enumerate().filter(|&(c, _)| c != y).map(|(_, &v)| v).fold(f64::NEG_INFINITY, f64::max);
        Ok(z[y] - other)
    }

    /// Index of the nearest center and its squared distance.
    pub fn nearest_center(&self, features: &[f64]) -> Result<(usize, f64)> {
        let Shape::Centers { dim, .. } = self.shape else {
            return Err(Error::input("nearest center requires a centers model"));
        };
        Error::check_dim(dim, features.len())?;
        Ok(self
            .values
            .chunks_exact(dim)
            .map(|c| sq_dist(c, features))
            .enumerate()
            .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best }))
    }

    /// Per-example loss: squared distance for mean estimation, cross-entropy
    /// for logistic regression, squared distance to the nearest center for
    /// k-means. Always `>= 0`.
    pub fn loss(&self, example: &Example) -> Result<f64> {
        self.check_example(example)?;
        match self.shape {
            Shape::Mean { .. } => Ok(sq_dist(&self.values, &example.features)),
            Shape::Logistic { classes, .. } => {
                let y = self.label_of(example, classes)?;
                let z = self.logits(&example.features)?;
                Ok((log_sum_exp(&z) - z[y]).max(0.0))
            }
            Shape::Centers { .. } => Ok(self.nearest_center(&example.features)?.1),
        }
    }

    /// Adds `scale · ∇loss(example)` into `grad`.
    pub(crate) fn add_gradient(&self, example: &Example, scale: f64, grad: &mut [f64]) -> Result<()> {
        self.check_example(example)?;
        let x = &example.features;
        match self.shape {
            Shape::Mean { .. } => {
                for ((g, t), xi) in grad.iter_mut().zip(&self.values).zip(x) {
                    *g += scale * 2.0 * (t - xi);
                }
            }
            Shape::Logistic { dim, classes } => {
                let y = self.label_of(example, classes)?;
                let probs = softmax(&self.logits(x)?);
                let (gw, gb) = grad.split_at_mut(classes * dim);
                for (c, p) in probs.iter().enumerate() {
                    let r = scale * (p - if c == y { 1.0 } else { 0.0 });
                    for (g, xi) in gw[c * dim..(c + 1) * dim].iter_mut().zip(x) {
                        *g += r * xi;
                    }
                    gb[c] += r;
                }
            }
            Shape::Centers { dim, .. } => {
                let (j, _) = self.nearest_center(x)?;
                let center = &self.values[j * dim..(j + 1) * dim];
                for ((g, c), xi) in grad[j * dim..(j + 1) * dim].iter_mut().zip(center).zip(x) {
                    *g += scale * 2.0 * (c - xi);
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(f: Vec<f64>, label: Option<usize>) -> Example {
        Example::new(0, f, label)
    }

    #[test]
    fn mean_loss_examples() {
        let x = ex(vec![3.0, 4.0], None);
        assert_eq!(ModelParams::mean(vec![0.0, 0.0]).loss(&x).unwrap(), 25.0);
        assert_eq!(ModelParams::mean(vec![3.0, 4.0]).loss(&x).unwrap(), 0.0);
        assert!(matches!(ModelParams::mean(vec![0.0]).loss(&x), Err(Error::Dimension { expected: 1, actual: 2 })));
    }

    #[test]
    fn kmeans_loss_at_center_is_zero() {
        let m = ModelParams::centers(&[vec![-1.0], vec![2.0]]).unwrap();
        assert_eq!(m.loss(&ex(vec![2.0], None)).unwrap(), 0.0);
        assert_eq!(m.loss(&ex(vec![0.0], None)).unwrap(), 1.0);
    }

    #[test]
    fn logistic_loss_and_margin() {
        let mut m = ModelParams::logistic_zeros(2, 2);
        let e = ex(vec![1.0, -1.0], Some(1));
        assert!((m.loss(&e).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(m.logit_margin(&e).unwrap(), 0.0);
        // class-1 weight row (1, 0): logit 1 for class 1, 0 for class 0
        m.values_mut()[2] = 1.0;
        assert!((m.logit_margin(&e).unwrap() - 1.0).abs() < 1e-15);
        assert!(m.loss(&ex(vec![1.0, 0.0], None)).is_err());
    }

    #[test]
    fn logistic_gradient_matches_finite_differences() {
        let m = ModelParams::logistic_random(3, 3, 0.5, Rng::new(9, 0));
        let e = ex(vec![0.3, -1.2, 2.0], Some(2));
        let mut grad = vec![0.0; m.values().len()];
        m.add_gradient(&e, 1.0, &mut grad).unwrap();
        let h = 1e-6;
        for i in 0..grad.len() {
            let mut up = m.clone();
            up.values_mut()[i] += h;
            let mut dn = m.clone();
            dn.values_mut()[i] -= h;
            let fd = (up.loss(&e).unwrap() - dn.loss(&e).unwrap()) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "coord {i}: {fd} vs {}", grad[i]);
        }
    }
}
