//! Examples, datasets, delimited-text ingestion and synthetic generators.

use std::collections::HashSet;
use std::path::Path;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: Option<usize>,
}

impl Example {
    pub fn new(id: u64, features: Vec<f64>, label: Option<usize>) -> Self {
        Self { id, features, label }
    }

    pub fn dim(&self) -> usize {
        self.features.len()
    }
}

/// An ordered, nonempty list of examples sharing one feature dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    examples: Vec<Example>,
    dimension: usize,
}

impl Dataset {
    pub fn new(examples: Vec<Example>) -> Result<Self> {
        let dimension = match examples.first() {
            Some(e) => e.dim(),
            None => return Err(Error::input("dataset must be nonempty")),
        };
        if dimension == 0 {
            return Err(Error::input("feature dimension must be positive"));
        }
        for e in &examples {
            Error::check_dim(dimension, e.dim())?;
            if e.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::input(format!("example {} has non-finite features", e.id)));
            }
        }
        Ok(Self { examples, dimension })
    }

    /// Convenience constructor for unlabeled data; ids are positions.
    pub fn from_points(points: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(points.into_iter().enumerate().map(|(i, f)| Example::new(i as u64, f, None)).collect())
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.examples.iter().map(|e| e.id)
    }

    pub fn get(&self, index: usize) -> &Example {
        &self.examples[index]
    }

    /// `self ∪ other`, keeping `self`'s order first.
    pub fn union(&self, other: &Dataset) -> Result<Dataset> {
        Error::check_dim(self.dimension, other.dimension)?;
        let mut examples = self.examples.clone();
        examples.extend(other.examples.iter().cloned());
        Ok(Dataset { examples, dimension: self.dimension })
    }

    pub fn is_disjoint_from(&self, other: &Dataset) -> bool {
        let ids: HashSet<u64> = self.ids().collect();
        other.ids().all(|id| !ids.contains(&id))
    }

    /// Splits off a random subset of `fraction·len` examples (rounded down,
    /// at least one) using `rng`. Order within the subset follows the dataset.
    pub fn subsample(&self, fraction: f64, rng: Rng) -> Result<Dataset> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::input(format!("fraction {fraction} outside (0, 1]")));
        }
        let keep = ((self.len() as f64 * fraction).floor() as usize).max(1);
        let mut order: Vec<usize> = (0..self.len()).collect();
        crate::train::fisher_yates(&mut order, &mut rng.generator());
        let mut chosen = order[..keep].to_vec();
        chosen.sort_unstable();
        Dataset::new(chosen.into_iter().map(|i| self.examples[i].clone()).collect())
    }

    /// Reads `id,label,f_1,...,f_d` rows. Blank lines and `#` comments are
    /// skipped; an empty label column means unlabeled.
    pub fn read_delimited(path: &Path) -> Result<Dataset> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_delimited(&text)
    }

    pub fn parse_delimited(text: &str) -> Result<Dataset> {
        let mut examples = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |msg: String| Error::Parse { line: lineno + 1, msg };
            let mut cols = line.split(',').map(str::trim);
            let id = cols
                .next()
                .ok_or_else(|| parse_err("missing id".into()))?
                .parse::<u64>()
                .map_err(|e| parse_err(format!("id: {e}")))?;
            let label = match cols.next() {
                None => return Err(parse_err("missing label column".into())),
                Some("") => None,
                Some(s) => Some(s.parse::<usize>().map_err(|e| parse_err(format!("label: {e}")))?),
            };
            let features = cols
                .map(|s| s.parse::<f64>().map_err(|e| parse_err(format!("feature: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            if features.is_empty() {
                return Err(parse_err("no feature columns".into()));
            }
            examples.push(Example::new(id, features, label));
        }
        Dataset::new(examples)
    }

    pub fn to_delimited(&self) -> String {
        let mut out = String::new();
        for e in &self.examples {
            out.push_str(&e.id.to_string());
            out.push(',');
            if let Some(l) = e.label {
                out.push_str(&l.to_string());
            }
            for f in &e.features {
                out.push(',');
                out.push_str(&format!("{f:?}"));
            }
            out.push('\n');
        }
        out
    }
}

fn standard_normal_vec(dim: usize, g: &mut impl rand::Rng) -> Vec<f64> {
    (0..dim).map(|_| StandardNormal.sample(g)).collect()
}

/// Balanced two-class Gaussian data: class `c` has mean `±separation/2` along
/// a random unit direction and identity covariance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoClassGaussian {
    pub dim: usize,
    pub n: usize,
    pub separation: f64,
}

impl TwoClassGaussian {
    /// Returns the dataset with ids `first_id..first_id+n`.
    pub fn generate(&self, first_id: u64, rng: Rng) -> Result<Dataset> {
        if self.dim == 0 || self.n == 0 {
            return Err(Error::config("two-class generator needs dim > 0 and n > 0"));
        }
        let mut g = rng.generator();
        let mut dir = standard_normal_vec(self.dim, &mut g);
        let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        dir.iter_mut().for_each(|v| *v /= norm);
        let examples = (0..self.n)
            .map(|i| {
                let label = i % 2;
                let sign = if label == 1 { 0.5 } else { -0.5 };
                let features = standard_normal_vec(self.dim, &mut g)
                    .into_iter()
                    .zip(&dir)
                    .map(|(z, u)| z + sign * self.separation * u)
                    .collect();
                Example::new(first_id + i as u64, features, Some(label))
            })
            .collect();
        Dataset::new(examples)
    }
}

/// Out-of-distribution points with uniformly random labels, used as canaries
/// and as the matching held-out set for classifier audits.
pub fn random_label_outliers(
    count: usize,
    dim: usize,
    scale: f64,
    classes: usize,
    first_id: u64,
    rng: Rng,
) -> Result<Dataset> {
    let mut g = rng.generator();
    let examples = (0..count)
        .map(|i| {
            let features = standard_normal_vec(dim, &mut g).into_iter().map(|v| v * scale).collect();
            let label = g.random_range(0..classes);
            Example::new(first_id + i as u64, features, Some(label))
        })
        .collect();
    Dataset::new(examples)
}

/// Unlabeled isotropic Gaussian points `N(mean·1, scale²·I)`.
pub fn gaussian_points(count: usize, dim: usize, mean: f64, scale: f64, first_id: u64, rng: Rng) -> Result<Dataset> {
    let mut g = rng.generator();
    let examples = (0..count)
        .map(|i| {
            let features = standard_normal_vec(dim, &mut g).into_iter().map(|v| mean + v * scale).collect();
            Example::new(first_id + i as u64, features, None)
        })
        .collect();
    Dataset::new(examples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(Dataset::new(vec![]).is_err());
        let ragged = vec![Example::new(0, vec![1.0], None), Example::new(1, vec![1.0, 2.0], None)];
        assert!(matches!(Dataset::new(ragged), Err(Error::Dimension { .. })));
        assert!(Dataset::from_points(vec![vec![f64::NAN]]).is_err());
    }

    #[test]
    fn delimited_roundtrip_with_empty_labels() {
        let text = "# comment\n0,,1.5,2\n1,1,-3,4e-2\n";
        let ds = Dataset::parse_delimited(text).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.get(0).label, None);
        assert_eq!(ds.get(1).label, Some(1));
        assert_eq!(ds.get(1).features, vec![-3.0, 0.04]);
        assert_eq!(Dataset::parse_delimited(&ds.to_delimited()).unwrap(), ds);
    }

    #[test]
    fn delimited_errors_carry_line() {
        match Dataset::parse_delimited("0,,1\n1,x,2\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn two_class_is_balanced_and_reproducible() {
        let spec = TwoClassGaussian { dim: 5, n: 100, separation: 2.0 };
        let a = spec.generate(0, Rng::new(3, 1)).unwrap();
        assert_eq!(a, spec.generate(0, Rng::new(3, 1)).unwrap());
        assert_eq!(a.examples().iter().filter(|e| e.label == Some(1)).count(), 50);
    }

    #[test]
    fn subsample_size_and_membership() {
        let ds = gaussian_points(50, 2, 0.0, 1.0, 0, Rng::new(1, 1)).unwrap();
        let sub = ds.subsample(0.8, Rng::new(2, 2)).unwrap();
        assert_eq!(sub.len(), 40);
        let ids: HashSet<u64> = ds.ids().collect();
        assert!(sub.ids().all(|id| ids.contains(&id)));
    }
}
