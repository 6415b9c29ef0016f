//! Checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      4 bytes  "INVL"
//! version    u32
//! meta_len   u64
//! meta       meta_len bytes of JSON (CheckpointMeta)
//! tensors    f64 values, in the order listed in meta.tensors
//! ```

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use ndarray::{Array1, ArrayViewD, ArrayViewMutD};
use serde::{Deserialize, Serialize};

use crate::dataset::GmmSpec;
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::model::Objective;

use super::{AdamState, Architecture, ModelParams, TrainConfig, Weights};

pub const MAGIC: [u8; 4] = *b"INVL";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub tool_version: String,
    pub objective: Objective,
    pub arch: Architecture,
    pub layer_sizes: Vec<usize>,
    pub dataset: GmmSpec,
    /// Flow models put the prior at t=0 and the data at t=1.
    pub prior_at_time_zero: bool,
    pub train: Option<TrainConfig>,
    pub optimizer_step: Option<u64>,
    pub tensors: Vec<TensorInfo>,
}

/// A trained model with the context needed to use it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub optimizer: Option<AdamState>,
    pub dataset: GmmSpec,
    pub train: Option<TrainConfig>,
}

impl Checkpoint {
    /// The training noise schedule of an epsilon-prediction model.
    pub fn schedule(&self) -> Result<NoiseSchedule> {
        crate::model::require_objective(&self.params, Objective::EpsilonPrediction)?;
        self.train
            .as_ref()
            .map(|t| t.schedule.clone())
            .unwrap_or_default()
            .build()
    }
}

fn tensor_list(ckpt: &Checkpoint) -> (Vec<String>, Vec<ArrayViewD<'_, f64>>) {
    let p = &ckpt.params;
    let mut names = vec!["anchor_mean".to_string(), "anchor_std".to_string()];
    let mut views = vec![p.anchor_mean.view().into_dyn(), p.anchor_std.view().into_dyn()];
    names.extend(p.weights.names());
    views.extend(p.weights.tensors());
    if let Some(opt) = &ckpt.optimizer {
        for (prefix, w) in [("adam.m.", &opt.m), ("adam.v.", &opt.v)] {
            names.extend(w.names().into_iter().map(|n| format!("{prefix}{n}")));
            views.extend(w.tensors());
        }
    }
    (names, views)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let (names, views) = tensor_list(ckpt);
    let meta = CheckpointMeta {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        objective: ckpt.params.objective,
        arch: ckpt.params.arch.clone(),
        layer_sizes: ckpt.params.arch.layer_sizes(),
        dataset: ckpt.dataset.clone(),
        prior_at_time_zero: true,
        train: ckpt.train.clone(),
        optimizer_step: ckpt.optimizer.as_ref().map(|o| o.step),
        tensors: names
            .into_iter()
            .zip(&views)
            .map(|(name, v)| TensorInfo { name, shape: v.shape().to_vec() })
            .collect(),
    };
    let meta_bytes = serde_json::to_vec(&meta)?;
    let mut buf = Vec::new();
    buf.write_all(&MAGIC)?;
    buf.write_all(&VERSION.to_le_bytes())?;
    buf.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
    buf.write_all(&meta_bytes)?;
    for v in &views {
        for x in v.iter() {
            buf.write_all(&x.to_le_bytes())?;
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    let fail = |reason: String| Error::Checkpoint { path: path.to_path_buf(), reason };
    let mut r = Cursor::new(&bytes[..]);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fail("file too short".into()))?;
    if magic != MAGIC {
        return Err(fail(format!("bad magic bytes {magic:?}")));
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word).map_err(|_| fail("truncated header".into()))?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(fail(format!("unsupported version {version} (expected {VERSION})")));
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len).map_err(|_| fail("truncated header".into()))?;
    let meta_len = u64::from_le_bytes(len) as usize;
    let start = r.position() as usize;
    let meta_bytes = bytes
        .get(start..start.saturating_add(meta_len))
        .ok_or_else(|| fail("truncated metadata".into()))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(meta_bytes).map_err(|e| fail(format!("bad metadata: {e}")))?;
    meta.arch.validate().map_err(|e| fail(e.to_string()))?;
    if meta.layer_sizes != meta.arch.layer_sizes() {
        return Err(fail("layer sizes disagree with architecture".into()));
    }

    let arch = meta.arch.clone();
    let mut ckpt = Checkpoint {
        params: ModelParams {
            anchor_mean: Array1::zeros(arch.dim),
            anchor_std: Array1::zeros(arch.dim),
            weights: Weights::zeros(&arch),
            objective: meta.objective,
            arch: arch.clone(),
        },
        optimizer: meta.optimizer_step.map(|step| {
            let mut s = AdamState::new(&arch);
            s.step = step;
            s
        }),
        dataset: meta.dataset.clone(),
        train: meta.train.clone(),
    };
    let expected: Vec<TensorInfo> = {
        let (names, views) = tensor_list(&ckpt);
        names
            .into_iter()
            .zip(&views)
            .map(|(name, v)| TensorInfo { name, shape: v.shape().to_vec() })
            .collect()
    };
    if expected != meta.tensors {
        return Err(fail("tensor layout does not match the architecture".into()));
    }
    let mut data = &bytes[start + meta_len..];
    let total: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if data.len() != total * 8 {
        return Err(fail(format!(
            "expected {} bytes of tensor data, found {}",
            total * 8,
            data.len()
        )));
    }
    for mut view in mutable_tensors(&mut ckpt) {
        for x in view.iter_mut() {
            let (head, rest) = data.split_at(8);
            *x = f64::from_le_bytes(head.try_into().expect("8 bytes"));
            data = rest;
        }
    }
    if !ckpt.params.weights.is_finite() {
        return Err(fail("non-finite parameters".into()));
    }
    Ok(ckpt)
}

fn mutable_tensors(ckpt: &mut Checkpoint) -> Vec<ArrayViewMutD<'_, f64>> {
    let p = &mut ckpt.params;
    let mut views = vec![p.anchor_mean.view_mut().into_dyn(), p.anchor_std.view_mut().into_dyn()];
    views.extend(p.weights.tensors_mut());
    if let Some(opt) = &mut ckpt.optimizer {
        views.extend(opt.m.tensors_mut());
        views.extend(opt.v.tensors_mut());
    }
    views
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Condition;
    use crate::model::Model;
    use crate::numerics::RngStream;

    fn trained_like(objective: Objective) -> Checkpoint {
        let arch = Architecture { hidden: vec![16, 16], ..Architecture::default() };
        let mut params = ModelParams::init(arch.clone(), objective, &GmmSpec::default(), &mut RngStream::new(4)).unwrap();
        let mut rng = RngStream::new(5);
        for mut t in params.weights.tensors_mut() {
            t.mapv_inplace(|w| w + rng.standard_normal() * 0.1);
        }
        let mut opt = AdamState::new(&arch);
        opt.step = 17;
        opt.m.class_table.fill(0.25);
        Checkpoint {
            params,
            optimizer: Some(opt),
            dataset: GmmSpec::default(),
            train: Some(TrainConfig { objective, arch, ..TrainConfig::default() }),
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = trained_like(Objective::FlowMatching);
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);

        let mut rng = RngStream::new(9);
        let x = rng.normal_matrix(100, 2) * 6.0;
        let conds: Vec<Condition> = (0..100).map(|i| Condition::class(1 + i % 5)).collect();
        let before = ckpt.params.predict(x.view(), 0.4, &conds).unwrap();
        let after = back.params.predict(x.view(), 0.4, &conds).unwrap();
        assert_eq!(before, after);
    }

    #[test]
    fn corrupted_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&trained_like(Objective::FlowMatching), &path).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }

    #[test]
    fn version_and_truncation_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&trained_like(Objective::FlowMatching), &path).unwrap();
        let bytes = fs::read(&path).unwrap();

        let mut v2 = bytes.clone();
        v2[4..8].copy_from_slice(&7u32.to_le_bytes());
        fs::write(&path, &v2).unwrap();
        assert!(load_checkpoint(&path).unwrap_err().to_string().contains("version"));

        fs::write(&path, &bytes[..bytes.len() - 8]).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }

    #[test]
    fn flow_checkpoint_has_no_diffusion_schedule() {
        let flow = trained_like(Objective::FlowMatching);
        assert!(matches!(flow.schedule(), Err(Error::ObjectiveMismatch { .. })));
        let eps = trained_like(Objective::EpsilonPrediction);
        assert_eq!(eps.schedule().unwrap().steps(), 100);
    }
}
