//! The run configuration: one JSON file describing data, model, training and
//! evaluation. It is echoed into every report.

use std::fs;
use std::path::{Path, PathBuf};

use flowattn::detector::{DetectLossConfig, ModelConfig, TrainConfig};
use flowattn::eval::{DEFAULT_GRID_POINTS, DEFAULT_REPETITIONS};
use flowattn::ingest::{Schema, SplitSpec};
use flowattn::synth::ScenarioSpec;
use flowattn::transfer::Sharing;
use flowattn::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Csv(PathBuf),
    Synth(ScenarioSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub data: DataSource,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransferSettings {
    pub targets: Vec<TargetSpec>,
    /// Declared number of target tasks; defaults to `targets.len()`.
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub sharing: Sharing,
    /// Training settings for fine-tuning; defaults to the `train` section.
    #[serde(default)]
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub grid_points: usize,
    pub repetitions: usize,
    /// Measure scoring throughput during `eval`. Off by default so reports
    /// stay byte-identical across runs.
    pub timing: bool,
    /// Retrain on these leading fractions of the training windows and
    /// report test metrics for each.
    pub data_volume_fractions: Vec<f64>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            grid_points: DEFAULT_GRID_POINTS,
            repetitions: DEFAULT_REPETITIONS,
            timing: false,
            data_volume_fractions: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Overrides the seeds of the split, training and synthetic data.
    #[serde(default)]
    pub seed: Option<u64>,
    pub data: DataSource,
    #[serde(default)]
    pub schema: Schema,
    #[serde(default)]
    pub split: SplitSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub loss: DetectLossConfig,
    #[serde(default)]
    pub transfer: Option<TransferSettings>,
    #[serde(default)]
    pub eval: EvalSettings,
    /// Output directory used when `--out` is not given.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Reads, resolves relative paths against the config's directory, applies
    /// the seed override and validates.
    pub fn load(path: &Path, seed_override: Option<u64>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        if seed_override.is_some() {
            cfg.seed = seed_override;
        }
        cfg.apply_seed();
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataSource::Csv(p) = &mut self.data {
            fix(p);
        }
        if let Some(t) = &mut self.transfer {
            for target in &mut t.targets {
                if let DataSource::Csv(p) = &mut target.data {
                    fix(p);
                }
            }
        }
        if let Some(out) = &mut self.out {
            fix(out);
        }
    }

    fn apply_seed(&mut self) {
        let Some(seed) = self.seed else { return };
        self.split.seed = seed;
        self.train.seed = seed;
        if let DataSource::Synth(spec) = &mut self.data {
            spec.seed = seed;
        }
        if let Some(t) = &mut self.transfer {
            if let Some(tc) = &mut t.train {
                tc.seed = seed;
            }
            for target in &mut t.targets {
                if let DataSource::Synth(spec) = &mut target.data {
                    spec.seed = seed;
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_source(&self.data)?;
        self.split.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        if self.eval.grid_points < 2 {
            return Err(Error::Config("eval.grid_points must be at least 2".into()));
        }
        if self.eval.repetitions == 0 {
            return Err(Error::Config("eval.repetitions must be at least 1".into()));
        }
        if let Some(t) = &self.transfer {
            for target in &t.targets {
                check_source(&target.data)?;
            }
            if let Some(m) = t.m {
                if m != t.targets.len() {
                    return Err(Error::Config(format!(
                        "transfer.m = {m} but {} targets are listed",
                        t.targets.len()
                    )));
                }
            }
            if let Some(tc) = &t.train {
                tc.validate()?;
            }
        }
        Ok(())
    }

    pub fn pipeline(&self) -> flowattn::pipeline::PipelineConfig {
        flowattn::pipeline::PipelineConfig {
            split: self.split.clone(),
            model: self.model,
            train: self.train.clone(),
            loss: self.loss,
            grid_points: self.eval.grid_points,
        }
    }
}

fn check_source(source: &DataSource) -> Result<()> {
    match source {
        DataSource::Csv(p) if !p.is_file() => Err(Error::Config(format!("data file {} does not exist", p.display()))),
        DataSource::Csv(_) => Ok(()),
        DataSource::Synth(spec) => spec.validate(),
    }
}
