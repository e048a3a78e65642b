//! Executes a validated config and writes its artifacts.
//!
//! Every sweep coordinate runs independently on the rayon pool. Results are
//! gathered in coordinate order and written once, so reruns of the same
//! config produce the same bytes. Wall-clock details go to `runtime.json`
//! only.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use forgetting::attacks::{
    calibrated_losses, exposure, score_membership, Calibration, CanaryUniverse, ExposureAttack, Membership,
    PairingMode, ScoreRecord, SimulationAttack, ThresholdAttack,
};
use forgetting::data::{gaussian_points, random_label_outliers, Dataset, Example, TwoClassGaussian};
use forgetting::kmeans::{outcomes_to_csv, plot_dump, run_counterexample};
use forgetting::model::ModelParams;
use forgetting::protocol::{
    measure_forget_inject, measure_forget_poison, Attack, ForgettingCurve, InjectionSpec, Metrics, Observation,
    PairedRunner, Strategy,
};
use forgetting::rng::{streams, Rng};
use forgetting::stats::{mean, welch_greater};
use forgetting::theory::{divergence, mi_advantage_monte_carlo, Divergence, GaussianSpec, MeanEstExperiment};
use forgetting::train::{train, LrSchedule, Ordering, TrainPlan};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{
    AttackKind, CalibrationMode, DataSource, ExperimentConfig, ExposureConfig, ForgetConfig, Kind, ModelKind,
    OrderingKind, TheoryConfig,
};
use crate::report::{verdicts_from_curves, CsvTable};

/// Environment variable that relative output directories resolve against.
pub const OUTPUT_ROOT_ENV: &str = "AUDIT_OUTPUT_ROOT";

pub const SUMMARY_FILE: &str = "summary.json";
pub const RUNTIME_FILE: &str = "runtime.json";
pub const CONFIG_FILE: &str = "config.json";
pub const CURVES_FILE: &str = "curves.csv";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunArtifact {
    pub config_hash: String,
    pub output_dir: PathBuf,
    /// Files written, relative to `output_dir`, in write order.
    pub files: Vec<String>,
    pub summary: Value,
}

pub fn resolve_output_dir(config: &ExperimentConfig) -> PathBuf {
    let dir = &config.experiment.output_dir;
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if dir.is_relative() => Path::new(&root).join(dir),
        _ => dir.clone(),
    }
}

struct Output {
    files: Vec<(String, String)>,
    metrics: Value,
    verdicts: Value,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifact> {
    let started = Instant::now();
    config.validate()?;
    let output = match config.experiment.kind {
        Kind::ForgetPoison | Kind::ForgetInject => run_forget(config)?,
        Kind::DeterministicMi => run_deterministic_mi(config)?,
        Kind::MeanEstTheory => run_theory(config)?,
        Kind::KmeansCx => run_kmeans(config)?,
        Kind::ExposureSweep => run_exposure(config)?,
    };

    let dir = resolve_output_dir(config);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let hash = config.hash();
    let mut written = Vec::new();
    write_file(&dir, CONFIG_FILE, &(serde_json::to_string_pretty(config)? + "\n"), &mut written)?;
    for (name, contents) in &output.files {
        write_file(&dir, name, contents, &mut written)?;
    }
    let mut files = written.clone();
    files.push(SUMMARY_FILE.into());
    let summary = json!({
        "kind": config.experiment.kind.name(),
        "config_hash": hash,
        "seeds": config.experiment.seeds,
        "metrics": output.metrics,
        "verdicts": output.verdicts,
        "files": files,
    });
    write_file(&dir, SUMMARY_FILE, &(serde_json::to_string_pretty(&summary)? + "\n"), &mut written)?;
    let runtime = json!({
        "elapsed_seconds": started.elapsed().as_secs_f64(),
        "threads": rayon::current_num_threads(),
        "version": env!("CARGO_PKG_VERSION"),
    });
    write_file(&dir, RUNTIME_FILE, &(serde_json::to_string_pretty(&runtime)? + "\n"), &mut written)?;
    Ok(RunArtifact { config_hash: hash, output_dir: dir, files: written, summary })
}

fn write_file(dir: &Path, name: &str, contents: &str, written: &mut Vec<String>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(&path, contents).with_context(|| format!("writing {}", path.display()))?;
    written.push(name.to_string());
    Ok(())
}

struct Setup {
    clean: Dataset,
    canaries: Vec<Example>,
    holdout: Vec<Example>,
    theta0: ModelParams,
}

fn setup(f: &ForgetConfig, seed: u64) -> Result<Setup> {
    let clean = match &f.data {
        DataSource::TwoClass { dim, n, separation } => {
            TwoClassGaussian { dim: *dim, n: *n, separation: *separation }.generate(0, Rng::new(seed, streams::DATA))?
        }
        DataSource::Gaussian { dim, n, mean, scale } => {
            gaussian_points(*n, *dim, *mean, *scale, 0, Rng::new(seed, streams::DATA))?
        }
        DataSource::File { path } => {
            Dataset::read_delimited(path).with_context(|| format!("reading {}", path.display()))?
        }
    };
    let dim = clean.dimension();
    let first_id = clean.ids().max().map_or(0, |m| m + 1);
    let draw = |count: usize, first: u64, rng: Rng| -> Result<Vec<Example>> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let set = match f.model.kind {
            ModelKind::Logistic => random_label_outliers(count, dim, f.canaries.scale, f.model.classes, first, rng)?,
            ModelKind::Mean => gaussian_points(count, dim, 0.0, f.canaries.scale, first, rng)?,
        };
        Ok(set.examples().to_vec())
    };
    let canary_rng = Rng::new(seed, streams::CANARY);
    let canaries = draw(f.canaries.count, first_id, canary_rng)?;
    let holdout = draw(f.attack.holdout, first_id + f.canaries.count as u64, canary_rng.fork(1))?;
    let theta0 = match f.model.kind {
        ModelKind::Logistic => {
            ModelParams::logistic_random(dim, f.model.classes, f.model.init_scale, Rng::new(seed, streams::INIT))
        }
        ModelKind::Mean => ModelParams::mean(vec![0.0; dim]),
    };
    Ok(Setup { clean, canaries, holdout, theta0 })
}

fn plan(f: &ForgetConfig, ordering: OrderingKind, seed: u64) -> TrainPlan {
    TrainPlan {
        total_steps: f.train.total_steps,
        batch_size: f.train.batch_size,
        ordering: match ordering {
            OrderingKind::Shuffled => Ordering::Shuffled(seed),
            OrderingKind::Fixed => Ordering::Fixed(seed),
        },
        lr: LrSchedule { base: f.train.lr, decay_points: f.train.decay.clone() },
        momentum: f.train.momentum,
    }
}

/// Wraps an attack and keeps the per-example scores of the last evaluation.
struct Recording<'a> {
    inner: Box<dyn Attack + 'a>,
    calibrate: bool,
    statistic: forgetting::attacks::Statistic,
    holdout: &'a [Example],
    last: Vec<ScoreRecord>,
}

impl Attack for Recording<'_> {
    fn evaluate(&mut self, obs: &Observation<'_>) -> forgetting::Result<Metrics> {
        let metrics = self.inner.evaluate(obs)?;
        let calibration = if self.calibrate { Calibration::Checkpoint(obs.checkpoint) } else { Calibration::None };
        let mut records = score_membership(obs.treated, calibration, obs.canaries, Membership::In, self.statistic)?;
        let (model, outs) =
            if self.holdout.is_empty() { (obs.baseline, obs.canaries) } else { (obs.treated, self.holdout) };
        records.extend(score_membership(model, calibration, outs, Membership::Out, self.statistic)?);
        self.last = records;
        Ok(metrics)
    }
}

fn scores_csv(records: &[ScoreRecord]) -> String {
    let mut table = CsvTable::new(&["id", "raw", "calibrated", "label"]);
    for r in records {
        table.push(vec![r.id.to_string(), fmt(r.raw), fmt(r.calibrated), r.membership.to_string()]);
    }
    table.to_string()
}

pub(crate) fn fmt(v: f64) -> String {
    format!("{v:?}")
}

struct CoordinateRun {
    curve: ForgettingCurve,
    scores: Vec<ScoreRecord>,
}

fn run_coordinate(
    f: &ForgetConfig,
    kind: Kind,
    seed: u64,
    repeats: usize,
    step: usize,
    ordering: OrderingKind,
    attack_kind: AttackKind,
) -> Result<CoordinateRun> {
    let s = setup(f, seed)?;
    let strategy = match kind {
        Kind::ForgetPoison => Strategy::Poison { removal_step: step },
        _ => Strategy::Inject { injection_step: step, repeats },
    };
    let spec = InjectionSpec { canaries: s.canaries.clone(), strategy };
    let plan = plan(f, ordering, seed);
    let calibrate = f.attack.calibration == CalibrationMode::Checkpoint;
    let inner: Box<dyn Attack> = match attack_kind {
        AttackKind::Threshold => Box::new(ThresholdAttack {
            mode: if s.holdout.is_empty() {
                PairingMode::Paired
            } else {
                PairingMode::Single { holdout: s.holdout.clone() }
            },
            calibrate,
            statistic: f.attack.statistic,
            fpr_target: f.attack.fpr_target,
        }),
        AttackKind::Exposure => Box::new(ExposureAttack { holdout: s.holdout.clone() }),
        AttackKind::Simulation => Box::new(SimulationAttack::new(&s.clean, &spec, &s.theta0, &plan)?),
    };
    let mut attack =
        Recording { inner, calibrate, statistic: f.attack.statistic, holdout: &s.holdout, last: Vec::new() };
    let curve = match kind {
        Kind::ForgetPoison => measure_forget_poison(&s.clean, &spec, &s.theta0, &plan, &mut attack, f.eval_every)?,
        _ => measure_forget_inject(&s.clean, &spec, &s.theta0, &plan, &mut attack, f.eval_every)?,
    };
    Ok(CoordinateRun { curve, scores: attack.last })
}

fn curve_rows(table: &mut CsvTable, prefix: &[String], curve: &ForgettingCurve) {
    let mut row = |step: usize, metrics: &Metrics, arm: &str| {
        for (metric, value) in metrics {
            let mut cells = prefix.to_vec();
            cells.extend([step.to_string(), metric.clone(), fmt(*value), arm.to_string()]);
            table.push(cells);
        }
    };
    if let Some(baseline) = &curve.baseline {
        row(curve.marker, baseline, "baseline");
    }
    for r in &curve.records {
        row(r.step, &r.metrics, "attack");
    }
}

fn forget_coordinates(config: &ExperimentConfig) -> Vec<(usize, usize, u64)> {
    let f = config.forget.as_ref().expect("materialized");
    let repeats: &[usize] = if config.experiment.kind == Kind::ForgetPoison { &[0] } else { &f.repeats };
    let mut coords = Vec::new();
    for &r in repeats {
        for &t in &f.injection_steps {
            for &s in &config.experiment.seeds {
                coords.push((r, t, s));
            }
        }
    }
    coords
}

fn run_forget(config: &ExperimentConfig) -> Result<Output> {
    let f = config.forget.as_ref().expect("materialized");
    let kind = config.experiment.kind;
    let coords = forget_coordinates(config);
    let runs: Vec<CoordinateRun> = coords
        .par_iter()
        .map(|&(r, t, s)| {
            run_coordinate(f, kind, s, r, t, f.train.ordering, f.attack.kind)
                .with_context(|| format!("coordinate repeats={r} injection_step={t} seed={s}"))
        })
        .collect::<Result<_>>()?;

    let poison = kind == Kind::ForgetPoison;
    let headers: Vec<&str> = if poison {
        vec!["removal_step", "seed", "step", "metric", "value", "arm"]
    } else {
        vec!["repeats", "injection_step", "seed", "step", "metric", "value", "arm"]
    };
    let mut table = CsvTable::new(&headers);
    let mut files = Vec::new();
    for (&(r, t, s), run) in coords.iter().zip(&runs) {
        let prefix: Vec<String> =
            if poison { vec![t.to_string(), s.to_string()] } else { vec![r.to_string(), t.to_string(), s.to_string()] };
        curve_rows(&mut table, &prefix, &run.curve);
        let name = if poison { format!("scores/t{t}_seed{s}.csv") } else { format!("scores/r{r}_t{t}_seed{s}.csv") };
        files.push((name, scores_csv(&run.scores)));
    }
    let curves = table.to_string();
    let verdicts = verdicts_from_curves(&curves, &config.verdict)?;
    files.insert(0, (CURVES_FILE.to_string(), curves));
    Ok(Output { files, metrics: forget_metrics(&coords, &runs, poison), verdicts: serde_json::to_value(verdicts)? })
}

fn mean_metrics(all: &[&Metrics]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for m in all {
        for (k, v) in *m {
            sums.entry(k.clone()).or_default().push(*v);
        }
    }
    sums.into_iter().map(|(k, v)| (k, mean(&v))).collect()
}

fn forget_metrics(coords: &[(usize, usize, u64)], runs: &[CoordinateRun], poison: bool) -> Value {
    let mut groups: BTreeMap<(usize, usize), Vec<(u64, &ForgettingCurve)>> = BTreeMap::new();
    for (&(r, t, s), run) in coords.iter().zip(runs) {
        groups.entry((r, t)).or_default().push((s, &run.curve));
    }
    let entries: Vec<Value> = groups
        .into_iter()
        .map(|((r, t), curves)| {
            let first: Vec<&Metrics> =
                curves.iter().filter_map(|(_, c)| c.records.first().map(|x| &x.metrics)).collect();
            let last: Vec<&Metrics> = curves.iter().filter_map(|(_, c)| c.records.last().map(|x| &x.metrics)).collect();
            let baseline: Vec<&Metrics> = curves.iter().filter_map(|(_, c)| c.baseline.as_ref()).collect();
            let mut per_seed: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for m in &last {
                for (k, v) in *m {
                    per_seed.entry(k.clone()).or_default().push(*v);
                }
            }
            let mut entry = json!({
                "injection_step": t,
                "seeds": curves.iter().map(|(s, _)| *s).collect::<Vec<_>>(),
                "at_marker": mean_metrics(&first),
                "final": mean_metrics(&last),
                "baseline": mean_metrics(&baseline),
                "final_per_seed": per_seed,
            });
            if poison {
                entry["removal_step"] = entry["injection_step"].take();
                entry.as_object_mut().expect("object").remove("injection_step");
            } else {
                entry["repeats"] = json!(r);
            }
            entry
        })
        .collect();
    json!({ "coordinates": entries })
}

fn run_deterministic_mi(config: &ExperimentConfig) -> Result<Output> {
    let f = config.forget.as_ref().expect("materialized");
    let coords = forget_coordinates(config);
    let arms = [(OrderingKind::Fixed, AttackKind::Simulation), (OrderingKind::Shuffled, f.attack.kind)];
    let jobs: Vec<(usize, (usize, usize, u64))> =
        (0..arms.len()).flat_map(|a| coords.iter().map(move |&c| (a, c))).collect();
    let runs: Vec<CoordinateRun> = jobs
        .par_iter()
        .map(|&(a, (r, t, s))| {
            let (ordering, attack) = arms[a];
            run_coordinate(f, Kind::ForgetInject, s, r, t, ordering, attack)
                .with_context(|| format!("coordinate ordering={ordering:?} repeats={r} injection_step={t} seed={s}"))
        })
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&["ordering", "repeats", "injection_step", "seed", "step", "metric", "value", "arm"]);
    for (&(a, (r, t, s)), run) in jobs.iter().zip(&runs) {
        let ordering = match arms[a].0 {
            OrderingKind::Fixed => "fixed",
            OrderingKind::Shuffled => "shuffled",
        };
        curve_rows(&mut table, &[ordering.to_string(), r.to_string(), t.to_string(), s.to_string()], &run.curve);
    }
    let curves = table.to_string();
    let verdicts = verdicts_from_curves(&curves, &config.verdict)?;

    let spe = match config.experiment.seeds.first() {
        Some(&seed) => setup(f, seed)?.clean.len().div_ceil(f.train.batch_size),
        None => 0,
    };
    let mut per_coordinate = Vec::new();
    let mut groups: BTreeMap<(usize, usize), Vec<(usize, &ForgettingCurve)>> = BTreeMap::new();
    for (&(a, (r, t, _)), run) in jobs.iter().zip(&runs) {
        groups.entry((r, t)).or_default().push((a, &run.curve));
    }
    for ((r, t), curves) in groups {
        let mut by_step: BTreeMap<usize, [Vec<f64>; 2]> = BTreeMap::new();
        for (a, curve) in curves {
            for rec in &curve.records {
                if let Some(v) = rec.metrics.get("accuracy") {
                    by_step.entry(rec.step).or_default()[a].push(*v);
                }
            }
        }
        let per_epoch: Vec<Value> = by_step
            .into_iter()
            .map(|(step, [fixed, shuffled])| {
                json!({
                    "step": step,
                    "epoch": if spe == 0 { 0.0 } else { step as f64 / spe as f64 },
                    "fixed_simulation_accuracy": mean(&fixed),
                    "shuffled_accuracy": mean(&shuffled),
                })
            })
            .collect();
        per_coordinate.push(json!({ "repeats": r, "injection_step": t, "per_epoch": per_epoch }));
    }
    Ok(Output {
        files: vec![(CURVES_FILE.to_string(), curves)],
        metrics: json!({ "steps_per_epoch": spe, "coordinates": per_coordinate }),
        verdicts: serde_json::to_value(verdicts)?,
    })
}

fn divergence_cell(d: Divergence) -> String {
    match d {
        Divergence::Finite(v) => fmt(v),
        Divergence::Infinite => "inf".into(),
    }
}

fn run_theory(config: &ExperimentConfig) -> Result<Output> {
    let t: &TheoryConfig = config.theory.as_ref().expect("materialized");
    let d = t.v.len();
    let v = DVector::from_column_slice(&t.v);
    let sigma = DMatrix::from_row_iterator(d, d, t.sigma.iter().flatten().copied());
    let spec = GaussianSpec::new(DVector::from_column_slice(&t.mu), sigma.clone())?;

    let mut grid = CsvTable::new(&["eta", "k", "alpha", "exact", "bound"]);
    let mut worst_ratio = 0.0f64;
    let mut exact_le_bound = true;
    for &eta in &t.etas {
        for &k in &t.ks {
            for &alpha in &t.alphas {
                let r = divergence(&v, &sigma, eta, k, alpha)
                    .with_context(|| format!("coordinate eta={eta} k={k} alpha={alpha}"))?;
                if let (Divergence::Finite(e), Divergence::Finite(b)) = (r.exact, r.bound) {
                    exact_le_bound &= e <= b;
                    if b > 0.0 {
                        worst_ratio = worst_ratio.max(e / b);
                    }
                }
                grid.push(vec![
                    fmt(eta),
                    k.to_string(),
                    fmt(alpha),
                    divergence_cell(r.exact),
                    divergence_cell(r.bound),
                ]);
            }
        }
    }

    let mut files = vec![("divergence.csv".to_string(), grid.to_string())];
    let mut mc_metrics = BTreeMap::new();
    for &seed in &config.experiment.seeds {
        let mut table = CsvTable::new(&["k", "accuracy", "ci_low", "ci_high"]);
        let results = t
            .monte_carlo
            .ks
            .par_iter()
            .map(|&k| {
                let experiment = MeanEstExperiment {
                    theta0: DVector::from_column_slice(&t.theta0),
                    injected: v.clone(),
                    eta: t.monte_carlo.eta,
                    steps: k,
                    alpha: t.alphas.first().copied().unwrap_or(2.0),
                };
                mi_advantage_monte_carlo(
                    &experiment,
                    &spec,
                    t.monte_carlo.trials,
                    Rng::new(seed, streams::MONTE_CARLO).fork(k as u64),
                )
                .with_context(|| format!("coordinate monte_carlo k={k} seed={seed}"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut per_k = BTreeMap::new();
        for r in results {
            table.push(vec![r.steps.to_string(), fmt(r.accuracy), fmt(r.ci_low), fmt(r.ci_high)]);
            per_k.insert(r.steps.to_string(), r.accuracy);
        }
        mc_metrics.insert(seed.to_string(), per_k);
        files.push((format!("monte_carlo_seed{seed}.csv"), table.to_string()));
    }
    Ok(Output {
        files,
        metrics: json!({
            "grid_rows": t.etas.len() * t.ks.len() * t.alphas.len(),
            "exact_le_bound": exact_le_bound,
            "max_exact_over_bound": worst_ratio,
            "monte_carlo_accuracy": mc_metrics,
        }),
        verdicts: json!([]),
    })
}

fn run_kmeans(config: &ExperimentConfig) -> Result<Output> {
    let k = config.kmeans.as_ref().expect("materialized");
    let mut files = Vec::new();
    let mut per_seed = BTreeMap::new();
    let mut accuracies = Vec::new();
    for &seed in &config.experiment.seeds {
        let rng = Rng::new(seed, streams::DATA);
        let report = run_counterexample(k, rng).with_context(|| format!("coordinate seed={seed}"))?;
        files.push((format!("trials_seed{seed}.csv"), outcomes_to_csv(&report.outcomes)));
        files.push((format!("plot_seed{seed}.csv"), plot_dump(k, rng.fork(0))?));
        accuracies.push(report.accuracy);
        per_seed.insert(
            seed.to_string(),
            json!({ "accuracy": report.accuracy, "precision": report.precision, "false_in": report.false_in }),
        );
    }
    let mut metrics = json!({ "per_seed": per_seed });
    if !accuracies.is_empty() {
        metrics["accuracy"] = json!(mean(&accuracies));
    }
    Ok(Output { files, metrics, verdicts: json!([]) })
}

fn run_exposure(config: &ExperimentConfig) -> Result<Output> {
    let e: &ExposureConfig = config.exposure.as_ref().expect("materialized");
    let seeds = &config.experiment.seeds;
    let per_seed: Vec<Vec<(usize, Vec<ExposureRow>)>> = seeds
        .par_iter()
        .map(|&seed| exposure_seed(e, seed).with_context(|| format!("coordinate seed={seed}")))
        .collect::<Result<_>>()?;

    let mut table = CsvTable::new(&["repeats", "seed", "id", "injected", "calibrated_loss", "rank", "exposure"]);
    let mut files = Vec::new();
    let mut pooled: BTreeMap<usize, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for (&seed, runs) in seeds.iter().zip(&per_seed) {
        for (repeats, rows) in runs {
            let mut scores = CsvTable::new(&["id", "raw", "calibrated", "label"]);
            for row in rows {
                table.push(vec![
                    repeats.to_string(),
                    seed.to_string(),
                    row.id.to_string(),
                    row.injected.to_string(),
                    fmt(row.calibrated),
                    row.rank.to_string(),
                    fmt(row.exposure),
                ]);
                let label = if row.injected { Membership::In } else { Membership::Out };
                scores.push(vec![row.id.to_string(), fmt(row.raw), fmt(row.calibrated), label.to_string()]);
                let entry = pooled.entry(*repeats).or_default();
                if row.injected {
                    entry.0.push(row.exposure)
                } else {
                    entry.1.push(row.exposure)
                }
            }
            files.push((format!("scores/r{repeats}_seed{seed}.csv"), scores.to_string()));
        }
    }
    files.insert(0, ("exposure.csv".to_string(), table.to_string()));
    let metrics: BTreeMap<String, Value> = pooled
        .into_iter()
        .map(|(r, (inj, held))| {
            let (t, significant) =
                if inj.len() > 1 && held.len() > 1 { welch_greater(&inj, &held, 0.95) } else { (f64::NAN, false) };
            let summary = json!({
                "injected_mean_exposure": mean(&inj),
                "held_out_mean_exposure": mean(&held),
                "welch_t": if t.is_finite() { json!(t) } else { Value::Null },
                "significant": significant,
            });
            (r.to_string(), summary)
        })
        .collect();
    Ok(Output { files, metrics: json!({ "by_repeats": metrics }), verdicts: json!([]) })
}

struct ExposureRow {
    id: u64,
    injected: bool,
    raw: f64,
    calibrated: f64,
    rank: usize,
    exposure: f64,
}

fn exposure_seed(e: &ExposureConfig, seed: u64) -> Result<Vec<(usize, Vec<ExposureRow>)>> {
    let clean = gaussian_points(e.n, e.dim, 0.0, 1.0, 0, Rng::new(seed, streams::DATA))?;
    let secrets = gaussian_points(e.secrets, e.dim, 0.0, e.secret_scale, e.n as u64, Rng::new(seed, streams::CANARY))?;
    let injected: Vec<u64> = secrets.ids().take(e.injected).collect();
    let universe = CanaryUniverse::new(secrets.examples().to_vec(), injected.clone())?;
    let theta0 = ModelParams::mean(vec![0.0; e.dim]);
    let plan = TrainPlan {
        total_steps: e.total_steps,
        batch_size: e.batch_size,
        ordering: Ordering::Shuffled(seed),
        lr: LrSchedule::constant(e.lr),
        momentum: 0.0,
    };
    let references: Vec<ModelParams> = (0..e.references as u64)
        .map(|r| {
            let subset = clean.subsample(e.subsample, Rng::new(seed, streams::REFERENCE).fork(r))?;
            let reference_plan = TrainPlan { ordering: Ordering::Shuffled(seed.wrapping_add(r + 1)), ..plan.clone() };
            train(&theta0, &subset, &reference_plan, reference_plan.total_steps)
        })
        .collect::<forgetting::Result<_>>()?;
    let mut out = Vec::new();
    for &repeats in &e.repeats {
        let spec = InjectionSpec {
            canaries: secrets.examples()[..e.injected].to_vec(),
            strategy: Strategy::Inject { injection_step: e.injection_step, repeats },
        };
        let mut runner = PairedRunner::new(&clean, &spec, &theta0, &plan)?;
        runner.advance_to(plan.total_steps)?;
        let target = runner.treated();
        let losses = calibrated_losses(&universe, target, &references)?;
        let rows = universe
            .secrets()
            .iter()
            .map(|s| {
                let entry = exposure(s.id, &universe, &losses)?;
                Ok(ExposureRow {
                    id: s.id,
                    injected: injected.contains(&s.id),
                    raw: target.loss(s)?,
                    calibrated: losses[&s.id],
                    rank: entry.rank,
                    exposure: entry.exposure,
                })
            })
            .collect::<forgetting::Result<Vec<_>>>()?;
        out.push((repeats, rows));
    }
    Ok(out)
}
