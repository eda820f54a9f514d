//! Per-verb run configuration.
//!
//! Every verb resolves its configuration as defaults, then the TOML file
//! given with `--config`, then command-line flags, and writes the result to
//! `<out_dir>/<verb>.resolved.toml`. Feeding that file back with `--config`
//! reproduces the run.

use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use okf_core::eval::Tuning;
use okf_core::sim::{Benchmark, Scenario};
use okf_core::{Baseline, Parameterization, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// Environment variable naming the default output root.
pub const OUTPUT_ROOT_VAR: &str = "OKF_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "runs";

pub fn output_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT))
}

pub trait VerbConfig: Serialize + DeserializeOwned + Default {
    const VERB: &'static str;
}

/// Defaults overlaid with `path`, if given. Unknown keys are rejected.
pub fn load<C: VerbConfig>(path: Option<&Path>) -> CliResult<C> {
    let Some(path) = path else {
        return Ok(C::default());
    };
    let text = fs::read_to_string(path).map_err(|source| CliError::ConfigRead {
        path: path.to_path_buf(),
        source,
    })?;
    toml::from_str(&text).map_err(|e| CliError::ConfigParse {
        path: path.to_path_buf(),
        source: Box::new(e),
    })
}

pub fn write_resolved<C: VerbConfig>(cfg: &C, dir: &Path) -> CliResult<PathBuf> {
    let text = toml::to_string_pretty(cfg).map_err(|e| CliError::Internal(format!("serializing config: {e}")))?;
    let path = dir.join(format!("{}.resolved.toml", C::VERB));
    fs::write(&path, text).map_err(|e| CliError::io(format!("writing {}", path.display()), e))?;
    Ok(path)
}

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn required(path: &Path, key: &str) -> CliResult<()> {
    if path.as_os_str().is_empty() {
        return Err(CliError::Usage(format!("`{key}` is required (config key or --{key} flag)")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    /// Scenario preset; ignored when `scenario` is given.
    pub preset: String,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub out_dir: Option<PathBuf>,
    /// Also export both splits as CSV.
    pub csv: bool,
    /// Full simulator configuration. Filled in from `preset` when resolving.
    pub scenario: Option<Scenario>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            preset: "toy".into(),
            seed: 0,
            n_train: 1500,
            n_test: 1000,
            out_dir: None,
            csv: false,
            scenario: None,
        }
    }
}

impl VerbConfig for SimulateConfig {
    const VERB: &'static str = "simulate";
}

impl SimulateConfig {
    pub fn resolve(mut self) -> CliResult<Self> {
        let mut scenario = match self.scenario.take() {
            Some(s) => s,
            None => Scenario::preset(&self.preset).map_err(|e| CliError::Usage(e.to_string()))?,
        };
        scenario.set_seed(self.seed);
        self.scenario = Some(scenario);
        if self.out_dir.is_none() {
            self.out_dir = Some(output_root().join(format!("simulate-{}", self.preset)));
        }
        Ok(self)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuneConfig {
    pub dataset: PathBuf,
    pub variant: Baseline,
    /// Preset whose filter model to use; by default the scenario recorded
    /// in the dataset metadata.
    pub model_preset: Option<String>,
    pub parameterization: Parameterization,
    /// Relative spectral floor applied before parameterizing the estimate.
    pub jitter: f64,
    pub out_dir: Option<PathBuf>,
}

impl Default for TuneConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::new(),
            variant: Baseline::Kf,
            model_preset: None,
            parameterization: Parameterization::FullCholesky,
            jitter: 1e-9,
            out_dir: None,
        }
    }
}

impl VerbConfig for TuneConfig {
    const VERB: &'static str = "tune";
}

impl TuneConfig {
    pub fn resolve(mut self) -> CliResult<Self> {
        required(&self.dataset, "dataset")?;
        self.out_dir.get_or_insert_with(|| output_root().join("tune"));
        Ok(self)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainRunConfig {
    pub dataset: PathBuf,
    pub variant: Baseline,
    /// Preset whose filter model to use; by default the scenario recorded
    /// in the dataset metadata.
    pub model_preset: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub train: TrainConfig,
}

impl VerbConfig for TrainRunConfig {
    const VERB: &'static str = "train";
}

impl TrainRunConfig {
    pub fn resolve(mut self) -> CliResult<Self> {
        required(&self.dataset, "dataset")?;
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.out_dir.get_or_insert_with(|| output_root().join("train"));
        Ok(self)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateConfig {
    pub dataset: PathBuf,
    /// Parameter files to evaluate; comparisons are against the first.
    pub params: Vec<PathBuf>,
    pub variant: Baseline,
    /// Preset whose filter model to use; by default the scenario recorded
    /// in the dataset metadata.
    pub model_preset: Option<String>,
    pub out_dir: Option<PathBuf>,
}

impl VerbConfig for EvaluateConfig {
    const VERB: &'static str = "evaluate";
}

impl EvaluateConfig {
    pub fn resolve(mut self) -> CliResult<Self> {
        required(&self.dataset, "dataset")?;
        if self.params.is_empty() {
            return Err(CliError::Usage("at least one params file is required".into()));
        }
        self.out_dir.get_or_insert_with(|| output_root().join("evaluate"));
        Ok(self)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Grid {
    /// Benchmarks x baselines x tunings.
    #[default]
    Matrix,
    /// Estimated vs optimized test error over nested training-set sizes.
    Sweep,
    /// Train on one benchmark, test on every other.
    Generalization,
    /// Estimated, diagonal-optimized and fully optimized filters.
    Ablation,
}

impl Grid {
    pub fn name(self) -> &'static str {
        match self {
            Grid::Matrix => "matrix",
            Grid::Sweep => "sweep",
            Grid::Generalization => "generalization",
            Grid::Ablation => "ablation",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentRunConfig {
    pub grid: Grid,
    /// Preset names; empty selects the grid's default set.
    pub benchmarks: Vec<String>,
    /// Empty selects every baseline for `matrix` and `kf` otherwise.
    pub baselines: Vec<Baseline>,
    pub tunings: Vec<Tuning>,
    /// Training-set sizes of the `sweep` grid.
    pub sizes: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub train: TrainConfig,
}

impl Default for ExperimentRunConfig {
    fn default() -> Self {
        Self {
            grid: Grid::Matrix,
            benchmarks: Vec::new(),
            baselines: Vec::new(),
            tunings: Vec::new(),
            sizes: Vec::new(),
            n_train: 1500,
            n_test: 1000,
            seed: 0,
            out_dir: None,
            train: TrainConfig::default(),
        }
    }
}

impl VerbConfig for ExperimentRunConfig {
    const VERB: &'static str = "experiment";
}

impl ExperimentRunConfig {
    pub fn resolve(mut self) -> CliResult<Self> {
        if self.benchmarks.is_empty() {
            self.benchmarks = match self.grid {
                Grid::Sweep => vec!["free".into()],
                _ => Benchmark::ALL.iter().map(|b| b.name().to_string()).collect(),
            };
        }
        for b in &self.benchmarks {
            Scenario::preset(b).map_err(|e| CliError::Usage(e.to_string()))?;
        }
        if self.baselines.is_empty() {
            self.baselines = match self.grid {
                Grid::Matrix => Baseline::ALL.to_vec(),
                _ => vec![Baseline::Kf],
            };
        }
        if self.tunings.is_empty() && self.grid == Grid::Matrix {
            self.tunings = vec![Tuning::Estimated, Tuning::Optimized, Tuning::Oracle];
        }
        if self.sizes.is_empty() && self.grid == Grid::Sweep {
            self.sizes = vec![20, 50, 100, 500, 1500];
        }
        if let Some(&s) = self.sizes.iter().find(|&&s| s == 0 || s > self.n_train) {
            return Err(CliError::Usage(format!(
                "sweep size {s} must be between 1 and n_train = {}",
                self.n_train
            )));
        }
        self.train.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        let grid = self.grid.name();
        self.out_dir.get_or_insert_with(|| output_root().join(format!("experiment-{grid}")));
        Ok(self)
    }

    pub fn experiment(&self) -> okf_core::eval::ExperimentConfig {
        okf_core::eval::ExperimentConfig {
            n_train: self.n_train,
            n_test: self.n_test,
            seed: self.seed,
            train: self.train.clone(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Directory holding `experiment` or `evaluate` outputs.
    pub input: PathBuf,
    /// Where `report.md` goes; defaults to `input`.
    pub out_dir: Option<PathBuf>,
}

impl VerbConfig for ReportConfig {
    const VERB: &'static str = "report";
}

impl ReportConfig {
    pub fn resolve(mut self) -> CliResult<Self> {
        required(&self.input, "input")?;
        if self.out_dir.is_none() {
            self.out_dir = Some(self.input.clone());
        }
        Ok(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn example_configs_parse_and_resolve() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("configs");
        let path = |name: &str| dir.join(format!("{name}.toml"));
        load::<SimulateConfig>(Some(&path("simulate"))).unwrap().resolve().unwrap();
        load::<TuneConfig>(Some(&path("tune"))).unwrap().resolve().unwrap();
        load::<TrainRunConfig>(Some(&path("train"))).unwrap().resolve().unwrap();
        load::<EvaluateConfig>(Some(&path("evaluate"))).unwrap().resolve().unwrap();
        let exp = load::<ExperimentRunConfig>(Some(&path("experiment"))).unwrap().resolve().unwrap();
        assert_eq!(exp.benchmarks.len(), 5);
        load::<ReportConfig>(Some(&path("report"))).unwrap().resolve().unwrap();
    }

    fn round_trip<C: VerbConfig + PartialEq + std::fmt::Debug>(cfg: &C) {
        let text = toml::to_string_pretty(cfg).unwrap();
        let back: C = toml::from_str(&text).unwrap();
        assert_eq!(&back, cfg, "{text}");
    }

    #[test]
    fn resolved_configs_round_trip_through_toml() {
        for preset in okf_core::sim::PRESETS {
            let cfg = SimulateConfig {
                preset: preset.into(),
                out_dir: Some("x".into()),
                ..Default::default()
            }
            .resolve()
            .unwrap();
            round_trip(&cfg);
        }
        round_trip(
            &TrainRunConfig {
                dataset: "d.okfd".into(),
                ..Default::default()
            }
            .resolve()
            .unwrap(),
        );
        let mut exp = ExperimentRunConfig {
            out_dir: Some("x".into()),
            ..Default::default()
        };
        exp.train.grad_clip = Some(1e3);
        exp.train.loss = okf_core::train::LossKind::Weighted(vec![1.0, 2.0]);
        round_trip(&exp.resolve().unwrap());
        round_trip(&TuneConfig {
            dataset: "d".into(),
            variant: Baseline::Ekfp,
            model_preset: Some("close".into()),
            ..Default::default()
        });
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<TuneConfig>("datset = 'x'").is_err());
        assert!(toml::from_str::<TrainRunConfig>("[train]\nlearning_rate = 0.1").is_err());
    }

    #[test]
    fn missing_required_paths_are_usage_errors() {
        assert!(matches!(TuneConfig::default().resolve(), Err(CliError::Usage(_))));
        assert!(matches!(EvaluateConfig::default().resolve(), Err(CliError::Usage(_))));
        assert!(matches!(ReportConfig::default().resolve(), Err(CliError::Usage(_))));
    }

    #[test]
    fn unknown_preset_is_a_usage_error() {
        let cfg = SimulateConfig {
            preset: "nope".into(),
            ..Default::default()
        };
        assert!(matches!(cfg.resolve(), Err(CliError::Usage(_))));
    }

    #[test]
    fn grid_defaults() {
        let t = ExperimentRunConfig::default().resolve().unwrap();
        assert_eq!(t.benchmarks.len(), 5);
        assert_eq!(t.baselines.len(), 4);
        assert_eq!(t.tunings.len(), 3);
        let s = ExperimentRunConfig {
            grid: Grid::Sweep,
            ..Default::default()
        }
        .resolve()
        .unwrap();
        assert_eq!(s.benchmarks, ["free"]);
        assert_eq!(s.sizes, [20, 50, 100, 500, 1500]);
    }
}
