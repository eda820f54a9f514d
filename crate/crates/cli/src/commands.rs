use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use okf_core::data::{read_dataset, write_csv, write_dataset};
use okf_core::eval::{
    compare_paired, diagonal_ablation, evaluate, generalization_matrix, run_matrix, train_size_sweep,
    write_csv_records, write_json_records, AblationRow, CellResult, EvalReport, GeneralizationResult, SweepPoint,
};
use okf_core::sim::Scenario;
use okf_core::{estimate_noise, train, Baseline, Dataset, Error, ModelSpec, NoiseParams, ParamsFile};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{
    create_dir, write_resolved, EvaluateConfig, ExperimentRunConfig, Grid, ReportConfig, SimulateConfig,
    TrainRunConfig, TuneConfig,
};
use crate::error::{CliError, CliResult};

fn out_dir(dir: &Option<PathBuf>) -> CliResult<PathBuf> {
    let dir = dir
        .clone()
        .ok_or_else(|| CliError::Internal("output directory was not resolved".into()))?;
    create_dir(&dir)?;
    Ok(dir)
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn load_dataset(path: &Path) -> CliResult<Dataset> {
    read_dataset(path).map_err(|e| match e {
        Error::Io(io) => CliError::io(format!("reading {}", path.display()), io),
        other => other.into(),
    })
}

fn model_for(ds: &Dataset, variant: Baseline, preset: Option<&str>) -> CliResult<ModelSpec> {
    let scenario = match preset {
        Some(p) => Scenario::preset(p).map_err(|e| CliError::Usage(e.to_string()))?,
        None => Scenario::from_metadata(ds)?,
    };
    let model = scenario.model(variant)?;
    if (ds.d_x, ds.d_z) != (model.state_dim(), model.obs_dim()) {
        return Err(Error::Schema(format!(
            "dataset has d_x = {}, d_z = {} but the {variant} model expects {}, {}",
            ds.d_x,
            ds.d_z,
            model.state_dim(),
            model.obs_dim()
        ))
        .into());
    }
    Ok(model)
}

pub fn simulate(cfg: SimulateConfig) -> CliResult<()> {
    let cfg = cfg.resolve()?;
    let dir = out_dir(&cfg.out_dir)?;
    let scenario = cfg.scenario.as_ref().expect("resolved");
    let (train_set, test_set) = scenario.simulate_split(cfg.n_train, cfg.n_test)?;
    write_dataset(&train_set.dataset, dir.join("train.okfd"))?;
    write_dataset(&test_set.dataset, dir.join("test.okfd"))?;
    if cfg.csv {
        write_csv(&train_set.dataset, dir.join("train.csv"))?;
        write_csv(&test_set.dataset, dir.join("test.csv"))?;
    }
    let meta = json!({
        "preset": cfg.preset,
        "seed": cfg.seed,
        "d_x": train_set.dataset.d_x,
        "d_z": train_set.dataset.d_z,
        "n_train": train_set.dataset.len(),
        "n_test": test_set.dataset.len(),
        "train_steps": train_set.dataset.total_steps(),
        "test_steps": test_set.dataset.total_steps(),
        "resampled": { "train": train_set.resampled, "test": test_set.resampled },
        "truth": train_set.truth.to_json(),
    });
    write_json(&meta, &dir.join("metadata.json"))?;
    write_resolved(&cfg, &dir)?;
    println!(
        "simulated {} train and {} test trajectories into {}",
        cfg.n_train,
        cfg.n_test,
        dir.display()
    );
    Ok(())
}

pub fn tune(cfg: TuneConfig) -> CliResult<()> {
    let cfg = cfg.resolve()?;
    let ds = load_dataset(&cfg.dataset)?;
    let model = model_for(&ds, cfg.variant, cfg.model_preset.as_deref())?;
    let (q, r) = estimate_noise(&ds.trajectories, &model)?;
    let params = NoiseParams::from_matrices(&q, &r, cfg.parameterization, cfg.jitter)?;
    let file = ParamsFile::new(
        &params,
        &q,
        &r,
        model.fingerprint(),
        "estimated",
        cfg.variant.name(),
        None,
        Vec::new(),
    );
    let dir = out_dir(&cfg.out_dir)?;
    file.write(dir.join("params.json"))?;
    write_resolved(&cfg, &dir)?;
    println!("estimated noise from {} trajectories into {}", ds.len(), dir.display());
    Ok(())
}

pub fn train_cmd(cfg: TrainRunConfig) -> CliResult<()> {
    let cfg = cfg.resolve()?;
    let ds = load_dataset(&cfg.dataset)?;
    let model = model_for(&ds, cfg.variant, cfg.model_preset.as_deref())?;
    let dir = out_dir(&cfg.out_dir)?;
    write_resolved(&cfg, &dir)?;
    let out = match train(&ds.trajectories, &model, &cfg.train) {
        Ok(out) => out,
        Err(e) => {
            if let Error::Divergence { trace, .. } = &e {
                write_json(trace.as_ref(), &dir.join("trace.json"))?;
            }
            return Err(e.into());
        }
    };
    let (q, r) = out.params.materialize();
    let train_config = serde_json::to_value(&cfg.train).map_err(Error::from)?;
    let file = ParamsFile::new(
        &out.params,
        &q,
        &r,
        model.fingerprint(),
        "optimized",
        cfg.variant.name(),
        Some(train_config),
        out.trace.losses.clone(),
    );
    file.write(dir.join("params.json"))?;
    write_json(&out.trace, &dir.join("trace.json"))?;
    println!(
        "trained {} steps (returned step {}) into {}",
        out.trace.losses.len(),
        out.trace.best_step,
        dir.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct EvalRecord {
    params: String,
    method: String,
    variant: String,
    report: EvalReport,
}

#[derive(Serialize)]
struct TrajectoryRow<'a> {
    params: &'a str,
    id: &'a str,
    mse: f64,
}

#[derive(Serialize, Deserialize)]
struct ComparisonRow {
    reference: String,
    candidate: String,
    n: usize,
    z: f64,
    p_value: f64,
    mse_ratio: f64,
    degenerate: bool,
}

pub fn evaluate_cmd(cfg: EvaluateConfig) -> CliResult<()> {
    let cfg = cfg.resolve()?;
    let ds = load_dataset(&cfg.dataset)?;
    let model = model_for(&ds, cfg.variant, cfg.model_preset.as_deref())?;
    let mut records = Vec::new();
    for path in &cfg.params {
        let file = ParamsFile::read(path).map_err(|e| match e {
            Error::Io(io) => CliError::io(format!("reading {}", path.display()), io),
            other => other.into(),
        })?;
        if file.model_fingerprint != model.fingerprint() {
            return Err(Error::Schema(format!(
                "{} was produced for a different filter model ({}) than the {} model of this dataset",
                path.display(),
                file.model_variant,
                cfg.variant
            ))
            .into());
        }
        let (q, r) = file.matrices()?;
        let report = evaluate(&model, &q, &r, &ds.trajectories)?;
        if !report.failed.is_empty() {
            log::warn!("{}: {} trajectories failed", path.display(), report.failed.len());
        }
        records.push(EvalRecord {
            params: path.display().to_string(),
            method: file.method,
            variant: file.model_variant,
            report,
        });
    }
    let dir = out_dir(&cfg.out_dir)?;
    write_json(&records, &dir.join("report.json"))?;
    let rows: Vec<TrajectoryRow> = records
        .iter()
        .flat_map(|rec| {
            rec.report
                .trajectory_ids
                .iter()
                .zip(&rec.report.per_trajectory_mse)
                .map(|(id, mse)| TrajectoryRow {
                    params: &rec.params,
                    id,
                    mse: *mse,
                })
        })
        .collect();
    write_csv_records(&rows, dir.join("per_trajectory.csv"))?;
    let reference = &records[0];
    let mut comparisons = Vec::new();
    for rec in &records[1..] {
        let (a, b) = reference.report.aligned(&rec.report);
        let c = compare_paired(&a, &b)?;
        comparisons.push(ComparisonRow {
            reference: reference.params.clone(),
            candidate: rec.params.clone(),
            n: a.len(),
            z: c.z,
            p_value: c.p_value,
            mse_ratio: c.mse_ratio,
            degenerate: c.degenerate,
        });
    }
    if !comparisons.is_empty() {
        write_json(&comparisons, &dir.join("comparisons.json"))?;
    }
    write_resolved(&cfg, &dir)?;
    print!("{}", evaluation_table(&records, &comparisons));
    Ok(())
}

fn sig(v: f64) -> String {
    if !v.is_finite() {
        return "-".into();
    }
    let a = v.abs();
    if a != 0.0 && !(1e-3..1e5).contains(&a) {
        format!("{v:.3e}")
    } else {
        format!("{v:.4}")
    }
}

fn evaluation_table(records: &[EvalRecord], comparisons: &[ComparisonRow]) -> String {
    let mut s = String::from("| params | method | MSE | 95% CI | n | failed | ratio vs first | z vs first |\n");
    s.push_str("|---|---|---|---|---|---|---|---|\n");
    for (k, rec) in records.iter().enumerate() {
        let r = &rec.report;
        let (ratio, z) = match k.checked_sub(1).and_then(|j| comparisons.get(j)) {
            Some(c) => (sig(c.mse_ratio), format!("{:.2}", c.z)),
            None => ("-".into(), "-".into()),
        };
        let _ = writeln!(
            s,
            "| {} | {} | {} | [{}, {}] | {} | {} | {} | {} |",
            rec.params,
            rec.method,
            sig(r.aggregate_mse),
            sig(r.ci95.0),
            sig(r.ci95.1),
            r.n,
            r.failed.len(),
            ratio,
            z
        );
    }
    s
}

#[derive(Serialize, Deserialize)]
struct SweepRecord {
    benchmark: String,
    baseline: String,
    #[serde(flatten)]
    point: SweepPoint,
}

#[derive(Serialize, Deserialize)]
struct GeneralizationRow {
    train: String,
    test: String,
    log_ratio: f64,
}

#[derive(Serialize, Deserialize)]
struct GridFailure {
    benchmark: String,
    baseline: String,
    error: String,
}

pub fn experiment(cfg: ExperimentRunConfig) -> CliResult<()> {
    let cfg = cfg.resolve()?;
    let dir = out_dir(&cfg.out_dir)?;
    write_resolved(&cfg, &dir)?;
    let exp = cfg.experiment();
    let scenarios: Vec<(String, Scenario)> = cfg
        .benchmarks
        .iter()
        .map(|b| Ok((b.clone(), Scenario::preset(b)?)))
        .collect::<okf_core::Result<_>>()?;
    let mut failures: Vec<GridFailure> = Vec::new();
    let total;
    match cfg.grid {
        Grid::Matrix => {
            let cells = run_matrix(&scenarios, &cfg.baselines, &cfg.tunings, &exp)?;
            total = cells.len();
            for c in cells.iter().filter(|c| !c.is_ok()) {
                failures.push(GridFailure {
                    benchmark: c.benchmark.clone(),
                    baseline: format!("{}/{}", c.baseline, c.tuning),
                    error: c.error.clone().unwrap_or_default(),
                });
            }
            write_json_records(&cells, dir.join("cells.json"))?;
            write_csv_records(&cells, dir.join("cells.csv"))?;
            print!("{}", cells_table(&cells));
        }
        Grid::Sweep => {
            let mut records = Vec::new();
            let jobs: Vec<(&(String, Scenario), Baseline)> = scenarios
                .iter()
                .flat_map(|s| cfg.baselines.iter().map(move |b| (s, *b)))
                .collect();
            total = jobs.len();
            for ((name, sc), baseline) in jobs {
                match train_size_sweep(sc, baseline, &cfg.sizes, &exp) {
                    Ok(points) => records.extend(points.into_iter().map(|point| SweepRecord {
                        benchmark: name.clone(),
                        baseline: baseline.name().into(),
                        point,
                    })),
                    Err(e) => failures.push(GridFailure {
                        benchmark: name.clone(),
                        baseline: baseline.name().into(),
                        error: e.to_string(),
                    }),
                }
            }
            write_json_records(&records, dir.join("sweep.json"))?;
            write_csv_records(&records, dir.join("sweep.csv"))?;
            print!("{}", sweep_table(&records));
        }
        Grid::Generalization => {
            let baseline = cfg.baselines[0];
            total = 1;
            let g = generalization_matrix(&scenarios, baseline, &exp)?;
            write_json(&g, &dir.join("generalization.json"))?;
            let rows: Vec<GeneralizationRow> = g
                .train_names
                .iter()
                .zip(&g.log_ratio)
                .flat_map(|(tr, row)| {
                    g.test_names.iter().zip(row).map(move |(te, v)| GeneralizationRow {
                        train: tr.clone(),
                        test: te.clone(),
                        log_ratio: *v,
                    })
                })
                .collect();
            write_csv_records(&rows, dir.join("generalization.csv"))?;
            print!("{}", generalization_table(&g));
        }
        Grid::Ablation => {
            let baseline = cfg.baselines[0];
            let mut rows = Vec::new();
            total = scenarios.len();
            for s in &scenarios {
                match diagonal_ablation(std::slice::from_ref(s), baseline, &exp) {
                    Ok(r) => rows.extend(r),
                    Err(e) => failures.push(GridFailure {
                        benchmark: s.0.clone(),
                        baseline: baseline.name().into(),
                        error: e.to_string(),
                    }),
                }
            }
            write_json_records(&rows, dir.join("ablation.json"))?;
            write_csv_records(&rows, dir.join("ablation.csv"))?;
            print!("{}", ablation_table(&rows));
        }
    }
    let mut summary = format!("grid {}: {} of {} units succeeded\n", cfg.grid.name(), total - failures.len(), total);
    for f in &failures {
        let _ = writeln!(summary, "FAILED {} {}: {}", f.benchmark, f.baseline, f.error);
    }
    fs::write(dir.join("summary.txt"), &summary)
        .map_err(|e| CliError::io(format!("writing {}", dir.join("summary.txt").display()), e))?;
    eprint!("{summary}");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::PartialGrid {
            failed: failures.len(),
            total,
        })
    }
}

fn cells_table(cells: &[CellResult]) -> String {
    let mut s = String::from("| benchmark | baseline | tuning | MSE | 95% CI | ratio vs estimated | z vs estimated |\n");
    s.push_str("|---|---|---|---|---|---|---|\n");
    for c in cells {
        if let Some(e) = &c.error {
            let _ = writeln!(s, "| {} | {} | {} | failed: {e} | | | |", c.benchmark, c.baseline, c.tuning);
            continue;
        }
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | [{}, {}] | {} | {} |",
            c.benchmark,
            c.baseline,
            c.tuning,
            sig(c.mse),
            sig(c.ci_low),
            sig(c.ci_high),
            c.ratio_vs_estimated.map_or("-".into(), sig),
            c.z_vs_estimated.map_or("-".into(), |z| format!("{z:.2}"))
        );
    }
    s
}

fn sweep_table(records: &[SweepRecord]) -> String {
    let mut s = String::from("| benchmark | baseline | size | KF MSE | OKF MSE | z |\n|---|---|---|---|---|---|\n");
    for r in records {
        let p = &r.point;
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {} | {:.2} |",
            r.benchmark,
            r.baseline,
            p.size,
            sig(p.kf_mse),
            sig(p.okf_mse),
            p.z
        );
    }
    s
}

fn generalization_table(g: &GeneralizationResult) -> String {
    let mut s = format!("| train \\ test | {} | mean |\n", g.test_names.join(" | "));
    s.push_str(&"|---".repeat(g.test_names.len() + 2));
    s.push_str("|\n");
    for ((name, row), mean) in g.train_names.iter().zip(&g.log_ratio).zip(&g.summary) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        let _ = writeln!(s, "| {name} | {} | {mean:.3} |", cells.join(" | "));
    }
    s
}

fn ablation_table(rows: &[AblationRow]) -> String {
    let mut s = String::from("| benchmark | KF | DKF | OKF | z (DKF vs OKF) |\n|---|---|---|---|---|\n");
    for r in rows {
        let _ = writeln!(
            s,
            "| {} | {} | {} | {} | {:.2} |",
            r.benchmark,
            sig(r.kf),
            sig(r.dkf),
            sig(r.okf),
            r.z_dkf_okf
        );
    }
    s
}

pub fn report(cfg: ReportConfig) -> CliResult<()> {
    let cfg = cfg.resolve()?;
    let input = &cfg.input;
    let mut out = format!("# Results in {}\n", input.display());
    let mut found = 0;
    let section = |out: &mut String, title: &str, body: String| {
        let _ = write!(out, "\n## {title}\n\n{body}");
    };
    if input.join("cells.json").exists() {
        let cells: Vec<CellResult> = read_json(&input.join("cells.json"))?;
        section(&mut out, "Benchmark grid", cells_table(&cells));
        found += 1;
    }
    if input.join("sweep.json").exists() {
        let records: Vec<SweepRecord> = read_json(&input.join("sweep.json"))?;
        section(&mut out, "Training-set size sweep", sweep_table(&records));
        found += 1;
    }
    if input.join("generalization.json").exists() {
        let g: GeneralizationResult = read_json(&input.join("generalization.json"))?;
        section(
            &mut out,
            "Generalization (log MSE ratio, estimated over optimized)",
            generalization_table(&g),
        );
        found += 1;
    }
    if input.join("ablation.json").exists() {
        let rows: Vec<AblationRow> = read_json(&input.join("ablation.json"))?;
        section(&mut out, "Diagonal ablation", ablation_table(&rows));
        found += 1;
    }
    if input.join("report.json").exists() {
        let records: Vec<EvalRecord> = read_json(&input.join("report.json"))?;
        let comparisons: Vec<ComparisonRow> = if input.join("comparisons.json").exists() {
            read_json(&input.join("comparisons.json"))?
        } else {
            Vec::new()
        };
        section(&mut out, "Evaluation", evaluation_table(&records, &comparisons));
        found += 1;
    }
    if input.join("summary.txt").exists() {
        let text = fs::read_to_string(input.join("summary.txt"))
            .map_err(|e| CliError::io(format!("reading {}", input.join("summary.txt").display()), e))?;
        section(&mut out, "Run summary", format!("```\n{text}```\n"));
    }
    if found == 0 {
        return Err(CliError::io(
            format!("no result files in {}", input.display()),
            std::io::Error::from(std::io::ErrorKind::NotFound),
        ));
    }
    let dir = out_dir(&cfg.out_dir)?;
    let path = dir.join("report.md");
    fs::write(&path, &out).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    write_resolved(&cfg, &dir)?;
    print!("{out}");
    Ok(())
}
