//! Trained toy models shared by the integration tests.
//!
//! Each model is trained once with the default configuration and cached
//! under the cargo target directory, keyed by its training config.

#![allow(dead_code)]

use std::hash::{DefaultHasher, Hash, Hasher};
use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Instant;

use invlab::network::{load_checkpoint, save_checkpoint, train, Checkpoint, TrainConfig};
use invlab::{GmmSpec, Objective};

pub struct Trained {
    pub path: PathBuf,
    pub ckpt: Checkpoint,
    /// Batch loss before each update.
    pub losses: Vec<f64>,
    /// Seconds spent training in this process (0 when loaded from the cache).
    pub train_seconds: f64,
}

fn cache_path(cfg: &TrainConfig) -> PathBuf {
    let mut h = DefaultHasher::new();
    serde_json::to_string(cfg).unwrap().hash(&mut h);
    PathBuf::from(env!("CARGO_TARGET_TMPDIR"))
        .join("invlab-models")
        .join(format!("{}-{:016x}.ckpt", cfg.objective, h.finish()))
}

fn load_or_train(objective: Objective) -> Trained {
    let cfg = TrainConfig { objective, ..TrainConfig::default() };
    let spec = GmmSpec::default();
    let path = cache_path(&cfg);
    let losses_path = path.with_extension("losses.json");
    let cached = load_checkpoint(&path).ok().zip(
        std::fs::read_to_string(&losses_path)
            .ok()
            .and_then(|s| serde_json::from_str::<Vec<f64>>(&s).ok()),
    );
    if let Some((ckpt, losses)) = cached {
        if ckpt.train.as_ref() == Some(&cfg) && ckpt.dataset == spec && losses.len() == cfg.steps {
            return Trained { path, ckpt, losses, train_seconds: 0.0 };
        }
    }
    let start = Instant::now();
    let outcome = train(&cfg, &spec, |_, _| {}).expect("training");
    let losses = outcome.losses;
    let ckpt = Checkpoint {
        params: outcome.params,
        optimizer: Some(outcome.optimizer),
        dataset: spec,
        train: Some(cfg),
    };
    std::fs::create_dir_all(path.parent().unwrap()).unwrap();
    std::fs::write(&losses_path, serde_json::to_string(&losses).unwrap()).unwrap();
    let tmp = path.with_extension(format!("tmp{}", std::process::id()));
    save_checkpoint(&ckpt, &tmp).unwrap();
    std::fs::rename(&tmp, &path).unwrap();
    Trained { path, ckpt, losses, train_seconds: start.elapsed().as_secs_f64() }
}

pub fn flow() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| load_or_train(Objective::FlowMatching))
}

pub fn diffusion() -> &'static Trained {
    static MODEL: OnceLock<Trained> = OnceLock::new();
    MODEL.get_or_init(|| load_or_train(Objective::EpsilonPrediction))
}
