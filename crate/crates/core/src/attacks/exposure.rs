use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::error::{Error, Result};
use crate::model::ModelParams;

/// A finite universe of candidate secrets, some of which were injected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanaryUniverse {
    secrets: Vec<Example>,
    injected: Vec<u64>,
}

impl CanaryUniverse {
    pub fn new(secrets: Vec<Example>, injected: Vec<u64>) -> Result<Self> {
        if secrets.len() < 2 {
            return Err(Error::input("canary universe needs at least two secrets"));
        }
        let ids: HashSet<u64> = secrets.iter().map(|s| s.id).collect();
        if ids.len() != secrets.len() {
            return Err(Error::input("duplicate secret ids"));
        }
        if let Some(id) = injected.iter().find(|id| !ids.contains(id)) {
            return Err(Error::input(format!("injected id {id} is not in the universe")));
        }
        Ok(Self { secrets, injected })
    }

    pub fn secrets(&self) -> &[Example] {
        &self.secrets
    }

    pub fn injected(&self) -> &[u64] {
        &self.injected
    }

    pub fn size(&self) -> usize {
        self.secrets.len()
    }

    pub fn held_out(&self) -> impl Iterator<Item = u64> + '_ {
        let injected: HashSet<u64> = self.injected.iter().copied().collect();
        self.secrets.iter().map(|s| s.id).filter(move |id| !injected.contains(id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExposureEntry {
    pub id: u64,
    pub rank: usize,
    pub exposure: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub entries: Vec<ExposureEntry>,
}

impl ExposureReport {
    pub fn mean_exposure(&self) -> f64 {
        if self.entries.is_empty() {
            return 0.0;
        }
        self.entries.iter().map(|e| e.exposure).sum::<f64>() / self.entries.len() as f64
    }
}

/// Rank of the canary among all secrets by calibrated loss, counting every
/// other secret with a smaller or equal loss against it, and the resulting
/// `log2|S| − log2(rank)`.
pub fn exposure(canary_id: u64, universe: &CanaryUniverse, losses: &BTreeMap<u64, f64>) -> Result<ExposureEntry> {
    let own = *losses
        .get(&canary_id)
        .filter(|_| universe.secrets.iter().any(|s| s.id == canary_id))
        .ok_or_else(|| Error::input(format!("canary {canary_id} not in universe")))?;
    let mut rank = 1;
    for s in &universe.secrets {
        let l = *losses.get(&s.id).ok_or_else(|| Error::input(format!("no loss for secret {}", s.id)))?;
        if s.id != canary_id && l <= own {
            rank += 1;
        }
    }
    let size = universe.size() as f64;
    Ok(ExposureEntry { id: canary_id, rank, exposure: size.log2() - (rank as f64).log2() })
}

/// Exposure of every injected canary.
pub fn exposure_report(universe: &CanaryUniverse, losses: &BTreeMap<u64, f64>) -> Result<ExposureReport> {
    let entries = universe.injected.iter().map(|&id| exposure(id, universe, losses)).collect::<Result<_>>()?;
    Ok(ExposureReport { entries })
}

/// Target loss minus the mean loss over reference models, per secret.
pub fn calibrated_losses(
    universe: &CanaryUniverse,
    target: &ModelParams,
    references: &[ModelParams],
) -> Result<BTreeMap<u64, f64>> {
    if references.is_empty() {
        return Err(Error::input("need at least one reference model"));
    }
    universe
        .secrets
        .iter()
        .map(|s| {
            let mut reference = 0.0;
            for r in references {
                reference += r.loss(s)?;
            }
            Ok((s.id, target.loss(s)? - reference / references.len() as f64))
        })
        .collect()
}
