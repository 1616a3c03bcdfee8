//! Run configuration: one TOML file (or a previous run's manifest) plus flag
//! overrides.

use std::fs;
use std::path::{Path, PathBuf};

use mtembed::ablation::AblationConfig;
use mtembed::encoder::EncoderConfig;
use mtembed::mining::MiningConfig;
use mtembed::synth::SynthConfig;
use mtembed::task::Task;
use mtembed::trainer::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CONFIG, DATA};
use crate::manifest::RunManifest;

/// Paths and per-command inputs. Everything a command reads lives here so
/// that a manifest alone reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Inputs {
    /// Training JSONL files.
    pub train_data: Vec<PathBuf>,
    /// Evaluation JSONL files or directories of them.
    pub eval_suites: Vec<PathBuf>,
    pub dims: Vec<usize>,
    pub checkpoint: Option<PathBuf>,
    /// Mining corpus: one `{"doc_id", "text"}` object per line.
    pub corpus: Option<PathBuf>,
    /// Mining queries in retrieval schema.
    pub queries: Option<PathBuf>,
    /// Phase-2 task descriptions: a JSON list or one per line.
    pub tasks: Option<PathBuf>,
    /// Fixture file replacing the synthesis endpoint.
    pub mock: Option<PathBuf>,
    pub synth_phase: u8,
    /// `(text, label)` JSONL for reformatting.
    pub texts: Option<PathBuf>,
    /// Label set for reformatting; empty means the sorted distinct labels.
    pub labels: Vec<String>,
    pub reformat_task: Task,
    /// Toy bundle directory for ablations; generated in memory when unset.
    pub bundle: Option<PathBuf>,
    pub ablation_seeds: Vec<u64>,
    pub gradcheck_seed: u64,
    pub toy_seed: u64,
}

impl Default for Inputs {
    fn default() -> Self {
        Self {
            train_data: vec![],
            eval_suites: vec![],
            dims: vec![128],
            checkpoint: None,
            corpus: None,
            queries: None,
            tasks: None,
            mock: None,
            synth_phase: 2,
            texts: None,
            labels: vec![],
            reformat_task: Task::Classification,
            bundle: None,
            ablation_seeds: vec![0, 1, 2],
            gradcheck_seed: 0,
            toy_seed: 7,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub encoder: EncoderConfig,
    pub train: TrainConfig,
    pub mining: MiningConfig,
    pub synth: SynthConfig,
    pub ablation: AblationSection,
    pub inputs: Inputs,
}

/// Ablation settings beyond the shared training config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSection {
    pub finetune_lr: f64,
    pub eval_dim: usize,
}

impl Default for AblationSection {
    fn default() -> Self {
        let d = AblationConfig::default();
        Self {
            finetune_lr: d.finetune_lr,
            eval_dim: d.eval_dim,
        }
    }
}

impl RunConfig {
    /// Reads TOML, or the `config` of a manifest when the file ends in
    /// `.json`. No file means defaults.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::new(CONFIG, format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|x| x == "json") {
            let manifest: RunManifest = serde_json::from_str(&text)
                .map_err(|e| CliError::new(CONFIG, format!("{}: {e}", path.display())))?;
            Ok(manifest.config)
        } else {
            toml::from_str(&text).map_err(|e| CliError::new(CONFIG, format!("{}: {e}", path.display())))
        }
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            train: self.train.clone(),
            finetune_lr: self.ablation.finetune_lr,
            eval_dim: self.ablation.eval_dim,
        }
    }
}

pub fn require<'a>(path: &'a Option<PathBuf>, what: &str) -> Result<&'a Path, CliError> {
    path.as_deref()
        .ok_or_else(|| CliError::new(DATA, format!("no {what} given")))
}
