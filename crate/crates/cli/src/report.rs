//! Text reports and forgetting verdicts computed from a run directory.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use forgetting::protocol::{is_forgotten, CurveRecord, ForgettingCurve, ARM_ATTACK, ARM_BASELINE};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{ExperimentConfig, VerdictConfig};
use crate::runner::{CONFIG_FILE, CURVES_FILE, SUMMARY_FILE};

/// In-memory CSV table rendered through the `csv` writer.
pub struct CsvTable {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl CsvTable {
    pub fn new(headers: &[&str]) -> Self {
        Self { headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.headers.len());
        self.rows.push(row);
    }
}

impl std::fmt::Display for CsvTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut writer = csv::Writer::from_writer(Vec::new());
        writer.write_record(&self.headers).map_err(|_| std::fmt::Error)?;
        for row in &self.rows {
            writer.write_record(row).map_err(|_| std::fmt::Error)?;
        }
        let bytes = writer.into_inner().map_err(|_| std::fmt::Error)?;
        f.write_str(std::str::from_utf8(&bytes).map_err(|_| std::fmt::Error)?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    /// Sweep coordinate, e.g. `repeats=5` and `injection_step=100`.
    pub coordinate: BTreeMap<String, String>,
    pub metric: String,
    pub alpha: f64,
    pub offset: usize,
    pub marker: usize,
    pub final_value: f64,
    pub forgotten: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerdictOverride {
    pub metric: Option<String>,
    pub alpha: Option<f64>,
    pub offset: Option<usize>,
}

impl VerdictOverride {
    pub fn apply(&self, base: &VerdictConfig) -> VerdictConfig {
        VerdictConfig {
            metric: self.metric.clone().unwrap_or_else(|| base.metric.clone()),
            alpha: self.alpha.unwrap_or(base.alpha),
            offset: self.offset.or(base.offset),
        }
    }
}

const RESERVED: [&str; 5] = ["seed", "step", "metric", "value", "arm"];

#[derive(Default)]
struct Group {
    marker: Option<usize>,
    steps: BTreeMap<usize, BTreeMap<String, Vec<f64>>>,
}

/// Seed-averaged attack curves per sweep coordinate, keyed by the
/// non-reserved columns of a curves CSV.
pub fn averaged_curves(text: &str) -> Result<Vec<(BTreeMap<String, String>, ForgettingCurve)>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let column =
        |name: &str| headers.iter().position(|h| h == name).ok_or_else(|| anyhow!("curves CSV lacks `{name}`"));
    let (step_col, metric_col, value_col, arm_col) =
        (column("step")?, column("metric")?, column("value")?, column("arm")?);
    let key_cols: Vec<usize> = (0..headers.len()).filter(|&i| !RESERVED.contains(&&headers[i])).collect();

    let mut groups: BTreeMap<Vec<String>, Group> = BTreeMap::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let key: Vec<String> = key_cols.iter().map(|&i| record[i].to_string()).collect();
        let step: usize = record[step_col].parse().with_context(|| format!("row {}: bad step", line + 2))?;
        let value: f64 = record[value_col].parse().with_context(|| format!("row {}: bad value", line + 2))?;
        let group = groups.entry(key).or_default();
        match &record[arm_col] {
            ARM_BASELINE => group.marker = Some(step),
            ARM_ATTACK => {
                group.steps.entry(step).or_default().entry(record[metric_col].to_string()).or_default().push(value)
            }
            other => bail!("row {}: unknown arm `{other}`", line + 2),
        }
    }

    groups
        .into_iter()
        .map(|(key, group)| {
            let coordinate: BTreeMap<String, String> =
                key_cols.iter().zip(key).map(|(&i, v)| (headers[i].to_string(), v)).collect();
            let marker = group
                .marker
                .or_else(|| group.steps.keys().next().copied())
                .ok_or_else(|| anyhow!("coordinate {coordinate:?} has no rows"))?;
            let records = group
                .steps
                .into_iter()
                .map(|(step, metrics)| CurveRecord {
                    step,
                    metrics: metrics.into_iter().map(|(k, v)| (k, v.iter().sum::<f64>() / v.len() as f64)).collect(),
                })
                .collect();
            Ok((coordinate, ForgettingCurve { marker, baseline: None, records }))
        })
        .collect()
}

pub fn verdicts_from_curves(text: &str, config: &VerdictConfig) -> Result<Vec<Verdict>> {
    averaged_curves(text)?
        .into_iter()
        .map(|(coordinate, curve)| {
            let last = curve.records.last().map_or(curve.marker, |r| r.step);
            let offset = config.offset.unwrap_or(last - curve.marker);
            let final_value = curve
                .value_at(last, &config.metric)
                .ok_or_else(|| anyhow!("metric `{}` not recorded for {coordinate:?}", config.metric))?;
            let forgotten = is_forgotten(&curve, &config.metric, config.alpha, offset)
                .with_context(|| format!("verdict for {coordinate:?}"))?;
            Ok(Verdict {
                coordinate,
                metric: config.metric.clone(),
                alpha: config.alpha,
                offset,
                marker: curve.marker,
                final_value,
                forgotten,
            })
        })
        .collect()
}

fn flatten(prefix: &str, value: &Value, out: &mut Vec<(String, String)>) {
    let join = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match value {
        Value::Object(map) => {
            for (k, v) in map {
                flatten(&join(k), v, out);
            }
        }
        Value::Array(items) if items.iter().any(|v| v.is_object() || v.is_array()) => {
            for (i, v) in items.iter().enumerate() {
                flatten(&join(&i.to_string()), v, out);
            }
        }
        other => out.push((prefix.to_string(), other.to_string())),
    }
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))
}

/// Human-readable report for a finished run directory. Verdicts are
/// recomputed from the curves file with the run's verdict settings, adjusted
/// by `overrides`.
pub fn emit_summary(dir: &Path, overrides: &VerdictOverride) -> Result<String> {
    let summary: Value = serde_json::from_str(&read(dir, SUMMARY_FILE)?).context("parsing summary")?;
    let config: ExperimentConfig = serde_json::from_str(&read(dir, CONFIG_FILE)?).context("parsing stored config")?;
    let mut out = String::new();
    let field = |k: &str| summary.get(k).and_then(Value::as_str).unwrap_or("?").to_string();
    writeln!(out, "experiment: {}", field("kind"))?;
    writeln!(out, "config hash: {}", field("config_hash"))?;
    writeln!(out, "seeds: {}", summary.get("seeds").map_or("[]".to_string(), Value::to_string))?;

    writeln!(out, "metrics:")?;
    let mut metrics = Vec::new();
    if let Some(m) = summary.get("metrics") {
        flatten("", m, &mut metrics);
    }
    if metrics.is_empty() || metrics.iter().all(|(_, v)| v == "[]") {
        writeln!(out, "  no sweep coordinates")?;
    }
    for (k, v) in metrics.iter().filter(|(_, v)| v != "[]") {
        writeln!(out, "  {k} = {v}")?;
    }

    let curves_path = dir.join(CURVES_FILE);
    if curves_path.exists() {
        let cfg = overrides.apply(&config.verdict);
        let verdicts = verdicts_from_curves(&read(dir, CURVES_FILE)?, &cfg)?;
        writeln!(out, "verdicts:")?;
        if verdicts.is_empty() {
            writeln!(out, "  no sweep coordinates")?;
        }
        for v in &verdicts {
            let coordinate: Vec<String> = v.coordinate.iter().map(|(k, x)| format!("{k}={x}")).collect();
            writeln!(
                out,
                "  {}: is_forgotten({}, alpha={}, offset={}) = {} (final {} {:.4})",
                coordinate.join(" "),
                v.metric,
                v.alpha,
                v.offset,
                v.forgotten,
                v.metric,
                v.final_value
            )?;
        }
    }

    writeln!(out, "files:")?;
    for f in summary.get("files").and_then(Value::as_array).into_iter().flatten().filter_map(Value::as_str) {
        let status = if dir.join(f).exists() { "" } else { " (missing)" };
        writeln!(out, "  {f}{status}")?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CURVES: &str = "repeats,injection_step,seed,step,metric,value,arm
1,10,0,10,accuracy,0.5,baseline
1,10,0,10,accuracy,0.9,attack
1,10,0,20,accuracy,0.6,attack
1,10,0,30,accuracy,0.5,attack
1,10,1,10,accuracy,0.5,baseline
1,10,1,10,accuracy,0.8,attack
1,10,1,20,accuracy,0.5,attack
1,10,1,30,accuracy,0.4,attack
";

    #[test]
    fn seeds_are_averaged_per_coordinate() {
        let curves = averaged_curves(CURVES).unwrap();
        assert_eq!(curves.len(), 1);
        let (coordinate, curve) = &curves[0];
        assert_eq!(coordinate["repeats"], "1");
        assert_eq!(curve.marker, 10);
        assert!((curve.value_at(10, "accuracy").unwrap() - 0.85).abs() < 1e-12);
        assert!((curve.value_at(30, "accuracy").unwrap() - 0.45).abs() < 1e-12);
    }

    #[test]
    fn verdict_depends_on_offset() {
        let cfg = VerdictConfig { metric: "accuracy".into(), alpha: 0.55, offset: None };
        let v = verdicts_from_curves(CURVES, &cfg).unwrap();
        assert_eq!(v[0].offset, 20);
        assert!(v[0].forgotten);
        let early = VerdictConfig { offset: Some(0), ..cfg };
        assert!(!verdicts_from_curves(CURVES, &early).unwrap()[0].forgotten);
    }

    #[test]
    fn unknown_metric_is_an_error() {
        let cfg = VerdictConfig { metric: "auc".into(), alpha: 0.55, offset: None };
        assert!(verdicts_from_curves(CURVES, &cfg).is_err());
    }

    #[test]
    fn header_only_csv_has_no_verdicts() {
        let text = "repeats,injection_step,seed,step,metric,value,arm\n";
        assert!(verdicts_from_curves(text, &VerdictConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn table_quotes_when_needed() {
        let mut t = CsvTable::new(&["a", "b"]);
        t.push(vec!["x,y".into(), "1".into()]);
        assert_eq!(t.to_string(), "a,b\n\"x,y\",1\n");
    }
}
