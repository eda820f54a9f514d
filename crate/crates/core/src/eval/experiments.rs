//! Experiment grids: baseline x tuning matrices, train-size sweeps,
//! cross-scenario generalization and the diagonal ablation.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{compare_paired, evaluate, EvalReport};
use crate::data::SupervisedTrajectory;
use crate::error::{Error, Result};
use crate::model::{Baseline, ModelSpec};
use crate::noise_est::{build_oracle_params, estimate_noise};
use crate::params::Parameterization;
use crate::sim::{NoiseTruth, Scenario};
use crate::train::{train, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Tuning {
    /// Residual sample covariances.
    Estimated,
    /// Gradient-trained parameters.
    Optimized,
    /// Simulator truth where it exists.
    Oracle,
}

impl Tuning {
    pub fn name(self) -> &'static str {
        match self {
            Tuning::Estimated => "estimated",
            Tuning::Optimized => "optimized",
            Tuning::Oracle => "oracle",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_train: 1500,
            n_test: 1000,
            seed: 0,
            train: TrainConfig::default(),
        }
    }
}

/// One cell of an experiment grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub benchmark: String,
    pub baseline: String,
    pub tuning: String,
    pub seed: u64,
    pub n_train: usize,
    pub mse: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub nll: Option<f64>,
    /// Paired z of the estimated cell against this one (positive favors this one).
    pub z_vs_estimated: Option<f64>,
    pub ratio_vs_estimated: Option<f64>,
    pub n: usize,
    pub failed_trajectories: usize,
    pub error: Option<String>,
    #[serde(skip)]
    pub report: Option<EvalReport>,
    #[serde(skip)]
    pub noise: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

impl CellResult {
    fn new(benchmark: &str, baseline: Baseline, tuning: Tuning, seed: u64, n_train: usize) -> Self {
        Self {
            benchmark: benchmark.into(),
            baseline: baseline.name().into(),
            tuning: tuning.name().into(),
            seed,
            n_train,
            mse: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            nll: None,
            z_vs_estimated: None,
            ratio_vs_estimated: None,
            n: 0,
            failed_trajectories: 0,
            error: None,
            report: None,
            noise: None,
        }
    }

    fn fill(&mut self, report: EvalReport, noise: (DMatrix<f64>, DMatrix<f64>)) {
        self.mse = report.aggregate_mse;
        self.ci_low = report.ci95.0;
        self.ci_high = report.ci95.1;
        self.nll = report.aggregate_nll;
        self.n = report.n;
        self.failed_trajectories = report.failed.len();
        self.report = Some(report);
        self.noise = Some(noise);
    }

    pub fn is_ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Noise matrices for one tuning method.
pub(crate) fn tune(
    tuning: Tuning,
    model: &ModelSpec,
    train_data: &[SupervisedTrajectory],
    truth: &NoiseTruth,
    cfg: &TrainConfig,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    match tuning {
        Tuning::Estimated => estimate_noise(train_data, model),
        Tuning::Optimized => Ok(train(train_data, model, cfg)?.params.materialize()),
        Tuning::Oracle => build_oracle_params(truth, model, train_data),
    }
}

fn oracle_available(truth: &NoiseTruth, model: &ModelSpec) -> bool {
    match model.r_coords {
        crate::model::RCoords::Cartesian => truth.r_cartesian.is_some(),
        crate::model::RCoords::Polar => truth.r_polar.is_some(),
    }
}

/// Runs every (benchmark, baseline, tuning) cell. Failing cells carry their
/// error and do not stop the grid. Oracle cells are produced only where the
/// simulator's noise is known in the baseline's coordinates.
pub fn run_matrix(
    benchmarks: &[(String, Scenario)],
    baselines: &[Baseline],
    tunings: &[Tuning],
    cfg: &ExperimentConfig,
) -> Result<Vec<CellResult>> {
    let mut cells = Vec::new();
    for (name, scenario) in benchmarks {
        let mut sc = scenario.clone();
        sc.set_seed(cfg.seed);
        let (train_set, test_set) = sc.simulate_split(cfg.n_train, cfg.n_test)?;
        let jobs: Vec<(Baseline, Tuning)> = baselines
            .iter()
            .flat_map(|b| tunings.iter().map(move |t| (*b, *t)))
            .collect();
        let mut results: Vec<CellResult> = jobs
            .par_iter()
            .filter_map(|&(baseline, tuning)| {
                let mut cell = CellResult::new(name, baseline, tuning, cfg.seed, cfg.n_train);
                let model = match sc.model(baseline) {
                    Ok(m) => m,
                    Err(e) => {
                        cell.error = Some(e.to_string());
                        return Some(cell);
                    }
                };
                if tuning == Tuning::Oracle && !oracle_available(&train_set.truth, &model) {
                    return None;
                }
                let out = tune(tuning, &model, &train_set.dataset.trajectories, &train_set.truth, &cfg.train)
                    .and_then(|(q, r)| Ok((evaluate(&model, &q, &r, &test_set.dataset.trajectories)?, (q, r))));
                match out {
                    Ok((report, noise)) => cell.fill(report, noise),
                    Err(e) => {
                        log::warn!("cell {name}/{baseline}/{} failed: {e}", tuning.name());
                        cell.error = Some(e.to_string());
                    }
                }
                Some(cell)
            })
            .collect();
        attach_comparisons(&mut results);
        cells.extend(results);
    }
    Ok(cells)
}

fn attach_comparisons(cells: &mut [CellResult]) {
    let estimated: Vec<(String, EvalReport)> = cells
        .iter()
        .filter(|c| c.tuning == Tuning::Estimated.name())
        .filter_map(|c| c.report.clone().map(|r| (c.baseline.clone(), r)))
        .collect();
    for cell in cells.iter_mut() {
        if cell.tuning == Tuning::Estimated.name() {
            continue;
        }
        let Some(report) = &cell.report else { continue };
        if let Some((_, est)) = estimated.iter().find(|(b, _)| *b == cell.baseline) {
            let (a, b) = est.aligned(report);
            if let Ok(c) = compare_paired(&a, &b) {
                cell.z_vs_estimated = Some(c.z);
                cell.ratio_vs_estimated = Some(c.mse_ratio);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub size: usize,
    pub kf_mse: f64,
    pub okf_mse: f64,
    pub kf_ci: (f64, f64),
    pub okf_ci: (f64, f64),
    pub z: f64,
}

/// Estimated vs. optimized test MSE on nested training subsets.
pub fn train_size_sweep(
    scenario: &Scenario,
    baseline: Baseline,
    sizes: &[usize],
    cfg: &ExperimentConfig,
) -> Result<Vec<SweepPoint>> {
    let max = sizes.iter().copied().max().ok_or_else(|| Error::invalid("no sweep sizes"))?;
    if max > cfg.n_train {
        return Err(Error::invalid(format!(
            "sweep size {max} exceeds the {} training trajectories",
            cfg.n_train
        )));
    }
    let mut sc = scenario.clone();
    sc.set_seed(cfg.seed);
    let (train_set, test_set) = sc.simulate_split(cfg.n_train, cfg.n_test)?;
    let model = sc.model(baseline)?;
    let test = &test_set.dataset.trajectories;
    sizes
        .iter()
        .map(|&size| {
            let subset = &train_set.dataset.trajectories[..size];
            let mut tcfg = cfg.train.clone();
            tcfg.batch_size = tcfg.batch_size.min(size);
            let (qe, re) = estimate_noise(subset, &model)?;
            let kf = evaluate(&model, &qe, &re, test)?;
            let (qo, ro) = train(subset, &model, &tcfg)?.params.materialize();
            let okf = evaluate(&model, &qo, &ro, test)?;
            let (a, b) = kf.aligned(&okf);
            let z = compare_paired(&a, &b)?.z;
            Ok(SweepPoint {
                size,
                kf_mse: kf.aggregate_mse,
                okf_mse: okf.aggregate_mse,
                kf_ci: kf.ci95,
                okf_ci: okf.ci95,
                z,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationResult {
    pub train_names: Vec<String>,
    pub test_names: Vec<String>,
    /// `log(MSE(KF) / MSE(OKF))` indexed `[train][test]`.
    pub log_ratio: Vec<Vec<f64>>,
    /// Mean log ratio of each training scenario over all test scenarios.
    pub summary: Vec<f64>,
}

/// Trains estimated and optimized filters on each scenario and tests them
/// on every scenario.
pub fn generalization_matrix(
    scenarios: &[(String, Scenario)],
    baseline: Baseline,
    cfg: &ExperimentConfig,
) -> Result<GeneralizationResult> {
    let sets: Vec<_> = scenarios
        .iter()
        .map(|(_, s)| {
            let mut sc = s.clone();
            sc.set_seed(cfg.seed);
            sc.simulate_split(cfg.n_train, cfg.n_test)
        })
        .collect::<Result<_>>()?;
    let models: Vec<ModelSpec> = scenarios.iter().map(|(_, s)| s.model(baseline)).collect::<Result<_>>()?;
    let mut log_ratio = Vec::new();
    for (i, (train_set, _)) in sets.iter().enumerate() {
        let model = &models[i];
        let data = &train_set.dataset.trajectories;
        let (qe, re) = estimate_noise(data, model)?;
        let (qo, ro) = train(data, model, &cfg.train)?.params.materialize();
        let row: Vec<f64> = sets
            .iter()
            .enumerate()
            .map(|(j, (_, test_set))| {
                let test_model = &models[j];
                if test_model.state_dim() != model.state_dim() || test_model.obs_dim() != model.obs_dim() {
                    return Err(Error::invalid("scenarios in a generalization grid must share dimensions"));
                }
                let kf = evaluate(model, &qe, &re, &test_set.dataset.trajectories)?;
                let okf = evaluate(model, &qo, &ro, &test_set.dataset.trajectories)?;
                Ok((kf.aggregate_mse / okf.aggregate_mse).ln())
            })
            .collect::<Result<_>>()?;
        log_ratio.push(row);
    }
    let summary = log_ratio.iter().map(|r| r.iter().sum::<f64>() / r.len() as f64).collect();
    let names: Vec<String> = scenarios.iter().map(|(n, _)| n.clone()).collect();
    Ok(GeneralizationResult {
        train_names: names.clone(),
        test_names: names,
        log_ratio,
        summary,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub benchmark: String,
    pub kf: f64,
    pub dkf: f64,
    pub okf: f64,
    pub kf_ci: (f64, f64),
    pub dkf_ci: (f64, f64),
    pub okf_ci: (f64, f64),
    /// Paired z of DKF against OKF (positive favors OKF).
    pub z_dkf_okf: f64,
}

/// Estimated, diagonal-optimized and fully optimized filters per scenario.
pub fn diagonal_ablation(
    scenarios: &[(String, Scenario)],
    baseline: Baseline,
    cfg: &ExperimentConfig,
) -> Result<Vec<AblationRow>> {
    scenarios
        .iter()
        .map(|(name, s)| {
            let mut sc = s.clone();
            sc.set_seed(cfg.seed);
            let (train_set, test_set) = sc.simulate_split(cfg.n_train, cfg.n_test)?;
            let model = sc.model(baseline)?;
            let data = &train_set.dataset.trajectories;
            let test = &test_set.dataset.trajectories;
            let (qe, re) = estimate_noise(data, &model)?;
            let kf = evaluate(&model, &qe, &re, test)?;
            let mut dcfg = cfg.train.clone();
            dcfg.parameterization = Parameterization::Diagonal;
            let (qd, rd) = train(data, &model, &dcfg)?.params.materialize();
            let dkf = evaluate(&model, &qd, &rd, test)?;
            let mut fcfg = cfg.train.clone();
            fcfg.parameterization = Parameterization::FullCholesky;
            let (qo, ro) = train(data, &model, &fcfg)?.params.materialize();
            let okf = evaluate(&model, &qo, &ro, test)?;
            let (a, b) = dkf.aligned(&okf);
            Ok(AblationRow {
                benchmark: name.clone(),
                kf: kf.aggregate_mse,
                dkf: dkf.aggregate_mse,
                okf: okf.aggregate_mse,
                kf_ci: kf.ci95,
                dkf_ci: dkf.ci95,
                okf_ci: okf.ci95,
                z_dkf_okf: compare_paired(&a, &b)?.z,
            })
        })
        .collect()
}

pub fn write_json_records<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(records)?)?;
    Ok(())
}

/// Flat CSV of records whose JSON form is an object of scalars. Arrays are
/// joined with `;`.
pub fn write_csv_records<T: Serialize>(records: &[T], path: impl AsRef<Path>) -> Result<()> {
    let rows: Vec<serde_json::Map<String, serde_json::Value>> = records
        .iter()
        .map(|r| match serde_json::to_value(r)? {
            serde_json::Value::Object(m) => Ok(m),
            _ => Err(Error::invalid("CSV records must be objects")),
        })
        .collect::<Result<_>>()?;
    let mut out = csv::Writer::from_path(path)?;
    if let Some(first) = rows.first() {
        let header: Vec<&str> = first.keys().map(String::as_str).collect();
        out.write_record(&header)?;
        for row in &rows {
            out.write_record(header.iter().map(|k| match row.get(*k) {
                None | Some(serde_json::Value::Null) => String::new(),
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(serde_json::Value::Array(a)) => a
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";"),
                Some(v) => v.to_string(),
            }))?;
        }
    }
    out.flush()?;
    Ok(())
}
