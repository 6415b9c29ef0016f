//! Config-driven experiment runners behind the `invlab` CLI.
//!
//! Every run writes `config.json` (the resolved configuration) and
//! `provenance.json` (tool version and checkpoint hashes) next to its
//! outputs. Outputs carry no timestamps, so re-running a config with the
//! same seed reproduces them byte for byte.

mod pipeline;
mod runners;
pub mod svg;

pub use pipeline::{Engine, Inverted, RoundTrip};
pub use runners::{
    build_conditions, edit_success, mean_round_trip_l2, run, run_baseline_random, run_edit, run_fig3, run_invert, run_reconstruct, run_report, run_scale_sweep,
    run_table1_analog, run_train, BaselineRow, PanelSummary, SummaryRow, SweepPoint, Table1Row,
    TABLE1_TIGHT_SCALE,
};

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{sample_component, ConditionMode, GmmSpec};
use crate::diffusion::TimestepConvention;
use crate::error::{Error, Result};
use crate::inversion::TightEditPolicy;
use crate::model::Objective;
use crate::network::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig};
use crate::numerics::RngStream;

/// Stream id for held-out evaluation points; training draws use other streams.
pub const HELD_OUT_STREAM: u64 = 0x4845_4c44_4f55_5400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Train,
    Invert,
    Reconstruct,
    Edit,
    SweepScale,
    Fig3,
    Table1,
    BaselineRandom,
    Report,
}

impl ExperimentKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ExperimentKind::Train => "train",
            ExperimentKind::Invert => "invert",
            ExperimentKind::Reconstruct => "reconstruct",
            ExperimentKind::Edit => "edit",
            ExperimentKind::SweepScale => "sweep-scale",
            ExperimentKind::Fig3 => "fig3",
            ExperimentKind::Table1 => "table1",
            ExperimentKind::BaselineRandom => "baseline-random",
            ExperimentKind::Report => "report",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Ddim,
    Renoise,
    EditFriendly,
    Euler,
}

impl MethodName {
    pub fn objective(&self) -> Objective {
        match self {
            MethodName::Euler => Objective::FlowMatching,
            _ => Objective::EpsilonPrediction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MethodConfig {
    pub name: MethodName,
    /// ReNoise fixed-point iterations per step.
    pub iterations: usize,
    pub averaging: bool,
    /// Strided diffusion steps; `None` uses the full schedule.
    pub num_steps: Option<usize>,
    pub flow_steps: usize,
    pub guidance: f64,
    pub convention: TimestepConvention,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            name: MethodName::Ddim,
            iterations: 4,
            averaging: false,
            num_steps: None,
            flow_steps: 100,
            guidance: 1.0,
            convention: TimestepConvention::Current,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub kind: Option<ExperimentKind>,
    pub dataset: GmmSpec,
    pub train: TrainConfig,
    /// Model to load; trained and written here when missing and `train_inline` is set.
    pub checkpoint: Option<PathBuf>,
    pub train_inline: bool,
    pub method: MethodConfig,
    pub condition: ConditionMode,
    pub scale: f64,
    pub source_class: usize,
    pub target_class: usize,
    pub edit_policy: TightEditPolicy,
    /// Edit hits must land within `radius · component_std` of the target center.
    pub radius: f64,
    pub scales: Vec<f64>,
    pub seed: u64,
    /// Seeds for seed-averaged experiments; empty means `seed, seed+1, seed+2`.
    pub seeds: Vec<u64>,
    pub held_out: usize,
    /// Points whose full trajectories are written and drawn.
    pub trajectory_points: usize,
    /// Points CSV (`x0,x1,...,class_id`) to use instead of held-out draws.
    pub inputs: Option<PathBuf>,
    /// Run directories (or `reports.json` files) collected by `report`.
    pub reports: Vec<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            kind: None,
            dataset: GmmSpec::default(),
            train: TrainConfig::default(),
            checkpoint: None,
            train_inline: true,
            method: MethodConfig::default(),
            condition: ConditionMode::Class,
            scale: 0.4,
            source_class: 5,
            target_class: 4,
            edit_policy: TightEditPolicy::Compose,
            radius: 3.0,
            scales: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7],
            seed: 0,
            seeds: Vec::new(),
            held_out: 512,
            trajectory_points: 64,
            inputs: None,
            reports: Vec::new(),
            output_dir: PathBuf::from("invlab-out"),
        }
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn resolved_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..3).map(|i| self.seed.wrapping_add(i)).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| config_error(e.to_string());
        self.dataset.validate().map_err(wrap)?;
        self.train.validate().map_err(wrap)?;
        for id in [self.source_class, self.target_class] {
            self.dataset.center_of(id).map_err(wrap)?;
        }
        if !(self.scale.is_finite() && self.scale >= 0.0) || self.scales.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(config_error("scales must be finite and non-negative"));
        }
        if self.held_out == 0 {
            return Err(config_error("held_out must be positive"));
        }
        if !(self.radius > 0.0) {
            return Err(config_error("radius must be positive"));
        }
        if self.method.flow_steps == 0 {
            return Err(config_error("flow_steps must be positive"));
        }
        if self.train.arch.dim != self.dataset.dim() || self.train.arch.num_classes < self.dataset.max_class_id() {
            return Err(config_error("architecture does not fit the dataset"));
        }
        Ok(())
    }
}

/// Held-out draws from one component, disjoint from every training stream.
pub fn held_out_points(spec: &GmmSpec, class_id: usize, seed: u64, n: usize) -> Result<Array2<f64>> {
    sample_component(spec, class_id, &mut RngStream::with_stream(seed, HELD_OUT_STREAM ^ class_id as u64), n)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub objective: Objective,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub experiment: String,
    pub seed: u64,
    pub checkpoints: Vec<CheckpointRecord>,
}

/// Output directory plus provenance bookkeeping for one run.
pub struct RunContext {
    pub config: ExperimentConfig,
    pub kind: ExperimentKind,
    pub out: PathBuf,
    checkpoints: Vec<CheckpointRecord>,
}

impl RunContext {
    pub fn new(config: ExperimentConfig, kind: ExperimentKind) -> Result<Self> {
        if let Some(k) = config.kind {
            if k != kind {
                return Err(config_error(format!(
                    "config is for `{}` but `{}` was requested",
                    k.as_str(),
                    kind.as_str()
                )));
            }
        }
        config.validate()?;
        let out = config.output_dir.clone();
        fs::create_dir_all(&out)?;
        let mut resolved = config.clone();
        resolved.kind = Some(kind);
        resolved.seeds = config.resolved_seeds();
        write_json(&out.join("config.json"), &resolved)?;
        Ok(Self {
            config: resolved,
            kind,
            out,
            checkpoints: Vec::new(),
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// Loads the configured checkpoint, training it first when allowed.
    pub fn model(&mut self, objective: Objective) -> Result<Checkpoint> {
        let path = self
            .config
            .checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(format!("model-{objective}.ckpt")));
        let ckpt = if path.exists() {
            let ckpt = load_checkpoint(&path)?;
            if ckpt.params.objective != objective {
                return Err(Error::ObjectiveMismatch {
                    expected: objective,
                    found: ckpt.params.objective,
                });
            }
            if ckpt.dataset != self.config.dataset {
                return Err(Error::Checkpoint {
                    path,
                    reason: "trained on a different dataset".into(),
                });
            }
            ckpt
        } else if self.config.train_inline {
            let cfg = TrainConfig { objective, ..self.config.train.clone() };
            let outcome = train(&cfg, &self.config.dataset, |_, _| {})?;
            let ckpt = Checkpoint {
                params: outcome.params,
                optimizer: Some(outcome.optimizer),
                dataset: self.config.dataset.clone(),
                train: Some(cfg),
            };
            if let Some(dir) = path.parent() {
                fs::create_dir_all(dir)?;
            }
            save_checkpoint(&ckpt, &path)?;
            ckpt
        } else {
            return Err(Error::Checkpoint {
                path,
                reason: "not found and inline training is disabled".into(),
            });
        };
        self.checkpoints.push(CheckpointRecord {
            objective,
            sha256: sha256_file(&path)?,
        });
        Ok(ckpt)
    }

    pub fn record_checkpoint(&mut self, objective: Objective, path: &Path) -> Result<()> {
        self.checkpoints.push(CheckpointRecord {
            objective,
            sha256: sha256_file(path)?,
        });
        Ok(())
    }

    /// Writes `provenance.json`; call once the run's outputs are complete.
    pub fn finish(&self) -> Result<()> {
        write_json(
            &self.path("provenance.json"),
            &Provenance {
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                experiment: self.kind.as_str().to_string(),
                seed: self.config.seed,
                checkpoints: self.checkpoints.clone(),
            },
        )
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    use std::io::Write;
    w.write_all(b"\n")?;
    Ok(())
}

/// Writes matrix rows as CSV with header `x0,x1,...`.
pub fn write_matrix_csv(path: &Path, m: &Array2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record((0..m.ncols()).map(|j| format!("x{j}")))?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(ExperimentConfig::from_json(r#"{"bogus": 1}"#), Err(Error::Config(_))));
        assert!(ExperimentConfig::from_json(r#"{"method": {"name": "ddim", "k": 3}}"#).is_err());
        let cfg = ExperimentConfig::from_json(r#"{"seed": 7, "method": {"name": "renoise"}}"#).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.method.iterations, 4);
        assert_eq!(cfg.resolved_seeds(), vec![7, 8, 9]);
    }

    #[test]
    fn config_round_trips() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn validation_catches_bad_values() {
        let cfg = ExperimentConfig { target_class: 9, ..ExperimentConfig::default() };
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
        let cfg = ExperimentConfig { scales: vec![-0.1], ..ExperimentConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn held_out_points_are_deterministic_and_seeded() {
        let spec = GmmSpec::default();
        let a = held_out_points(&spec, 5, 0, 16).unwrap();
        assert_eq!(a, held_out_points(&spec, 5, 0, 16).unwrap());
        assert_ne!(a, held_out_points(&spec, 5, 1, 16).unwrap());
        assert_ne!(a, held_out_points(&spec, 4, 0, 16).unwrap() + ndarray::array![5.0, 0.0]);
    }

    #[test]
    fn mismatched_kind_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = ExperimentConfig {
            kind: Some(ExperimentKind::Fig3),
            output_dir: dir.path().to_path_buf(),
            ..ExperimentConfig::default()
        };
        assert!(matches!(RunContext::new(cfg, ExperimentKind::Table1), Err(Error::Config(_))));
    }
}
