//! Run configuration: one strict JSON document per run.
//!
//! Unknown keys are rejected; every field has a default matching the
//! standard experimental protocol (five seeds 0..4, 20 bins, lambda and
//! beta 0.1, k in {4, 8}).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use prefcal::policy::{Objective, StepSchedule, TrainConfig};
use prefcal::synthdata::{DatasetShape, TaskSpec};

use crate::{Result, RunnerError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Drift,
    Contamination,
    ConfatK,
    Gradcheck,
    MetricsSuite,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Drift => "drift",
            Experiment::Contamination => "contamination",
            Experiment::ConfatK => "confatk",
            Experiment::Gradcheck => "gradcheck",
            Experiment::MetricsSuite => "metrics_suite",
        }
    }
}

/// Task shape (the label distributions are drawn per run seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub num_prompts: usize,
    pub num_options: usize,
    pub stub_length: usize,
    pub ambiguity: f64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            num_prompts: 200,
            num_options: 4,
            stub_length: 3,
            ambiguity: 0.35,
        }
    }
}

impl TaskConfig {
    pub fn spec_for_seed(&self, seed: u64) -> prefcal::Result<TaskSpec> {
        TaskSpec::generate(
            self.num_prompts,
            self.num_options,
            self.stub_length,
            self.ambiguity,
            seed,
        )
    }
}

/// One training stage: epochs, constant step size, batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StageConfig {
    pub epochs: usize,
    pub eta: f64,
    pub batch_size: usize,
    /// Use the diminishing `eta / sqrt(k)` schedule instead of constant.
    pub diminishing: bool,
}

impl Default for StageConfig {
    fn default() -> Self {
        default_sft_stage()
    }
}

impl StageConfig {
    pub fn schedule(&self) -> StepSchedule {
        if self.diminishing {
            StepSchedule::Diminishing { eta0: self.eta }
        } else {
            StepSchedule::Constant { eta: self.eta }
        }
    }

    pub fn train_config(&self, objective: Objective, beta: f64, lambda: f64, seed: u64) -> TrainConfig {
        TrainConfig {
            objective,
            beta,
            lambda,
            epsilon_smooth: 0.0,
            schedule: self.schedule(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

fn default_sft_stage() -> StageConfig {
    StageConfig {
        epochs: 30,
        eta: 0.5,
        batch_size: 16,
        diminishing: false,
    }
}

fn default_preference_stage() -> StageConfig {
    StageConfig {
        epochs: 80,
        eta: 1.0,
        batch_size: 16,
        diminishing: false,
    }
}

/// Contamination experiment grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContaminationConfig {
    pub alphas: Vec<f64>,
    pub offsets: Vec<f64>,
    pub bound: f64,
    pub n: usize,
    pub num_seeds: usize,
}

impl Default for ContaminationConfig {
    fn default() -> Self {
        Self {
            alphas: vec![0.0, 0.05, 0.1, 0.25],
            offsets: vec![10.0, 100.0, 1000.0],
            bound: 1.0,
            n: 100_000,
            num_seeds: 20,
        }
    }
}

/// Confidence@k experiment settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConfatKConfig {
    pub k: Vec<usize>,
    pub num_trials: usize,
}

impl Default for ConfatKConfig {
    fn default() -> Self {
        Self {
            k: vec![4, 8],
            num_trials: 50,
        }
    }
}

/// The run configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub master_seed: u64,
    pub seeds: Vec<u64>,
    pub bins: usize,
    pub output_dir: PathBuf,
    pub beta: f64,
    pub lambda: f64,
    pub epsilon_smooth: f64,
    pub task: TaskConfig,
    pub dataset: DatasetShape,
    pub sft: StageConfig,
    pub preference: StageConfig,
    pub contamination: ContaminationConfig,
    pub confatk: ConfatKConfig,
    /// Objective for the standalone `train` subcommand.
    pub train_objective: Objective,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: Experiment::Drift,
            master_seed: 0,
            seeds: vec![0, 1, 2, 3, 4],
            bins: 20,
            output_dir: PathBuf::from("runs"),
            beta: 0.1,
            lambda: 0.1,
            epsilon_smooth: 0.1,
            task: TaskConfig::default(),
            dataset: DatasetShape::default(),
            sft: default_sft_stage(),
            preference: default_preference_stage(),
            contamination: ContaminationConfig::default(),
            confatk: ConfatKConfig::default(),
            train_objective: Objective::Sft,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunnerError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            serde_json::from_str(text).map_err(|e| RunnerError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialization cannot fail")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(RunnerError::Config("seeds list is empty".into()));
        }
        if self.bins == 0 {
            return Err(RunnerError::Config("bins must be positive".into()));
        }
        if self.beta <= 0.0 || !self.beta.is_finite() {
            return Err(RunnerError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(RunnerError::Config(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(0.0..1.0).contains(&self.epsilon_smooth) {
            return Err(RunnerError::Config(format!(
                "epsilon_smooth must lie in [0, 1), got {}",
                self.epsilon_smooth
            )));
        }
        if self.confatk.k.contains(&0) {
            return Err(RunnerError::Config("k values must be positive".into()));
        }
        for &a in &self.contamination.alphas {
            if !(0.0..0.5).contains(&a) {
                return Err(RunnerError::Config(format!("alpha {a} outside [0, 0.5)")));
            }
        }
        Ok(())
    }

    /// Seed for one run leg, derived from the master seed and the per-run
    /// seed so that both participate in every random stream.
    pub fn derived_seed(&self, seed: u64) -> u64 {
        prefcal::rng::SplitMix64::stream(self.master_seed, "run-seed", seed).next_u64()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_round_trips() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_json("{\"experiment\":\"drift\",\"bogus\":1}");
        assert!(err.is_err());
    }

    #[test]
    fn partial_documents_use_defaults() {
        let cfg = RunConfig::from_json("{\"experiment\":\"contamination\",\"master_seed\":7}")
            .unwrap();
        assert_eq!(cfg.experiment, Experiment::Contamination);
        assert_eq!(cfg.master_seed, 7);
        assert_eq!(cfg.bins, 20);
        assert_eq!(cfg.seeds, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_json("{\"seeds\":[]}").is_err());
        assert!(RunConfig::from_json("{\"bins\":0}").is_err());
        assert!(RunConfig::from_json("{\"lambda\":-0.5}").is_err());
        assert!(RunConfig::from_json("{\"contamination\":{\"alphas\":[0.7]}}").is_err());
    }
}
