use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_posterior, Condition, ConditionMode, GmmSpec};
use crate::diffusion::{forward_marginal, NoiseSchedule, ScheduleConfig};
use crate::error::{invalid, Result};
use crate::flow::cfm_pair;
use crate::model::Objective;
use crate::numerics::{check_dim, sample_standard_normal, RngStream, Vector};

use super::{adam_step, AdamState, Architecture, ModelParams, Weights, SHARD_ROWS};

/// One regression example: the network sees `(x, t, cond)` and should output `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub x: Vector,
    pub t: f64,
    pub cond: Condition,
    pub target: Vector,
}

impl TrainingPair {
    /// Flow matching: `x_t = (1-t)·x0 + t·x1`, target `x1 - x0`.
    pub fn flow_matching(x0: &Vector, x1: &Vector, t: f64, cond: Condition) -> Result<Self> {
        let (x, target) = cfm_pair(x0, x1, t)?;
        Ok(Self { x, t, cond, target })
    }

    /// Epsilon prediction at step `t` of `sched`: `x_t = √ᾱ_t·x0 + √(1-ᾱ_t)·ε`, target `ε`.
    pub fn epsilon(x0: &Vector, eps: &Vector, t: usize, sched: &NoiseSchedule, cond: Condition) -> Result<Self> {
        let x = forward_marginal(x0, t, eps, sched)?;
        Ok(Self {
            x,
            t: sched.normalized_time(t),
            cond,
            target: eps.clone(),
        })
    }
}

/// Mean over the batch of `||forward(x) - target||²` and its exact gradient.
pub fn loss_and_grad(params: &ModelParams, batch: &[TrainingPair]) -> Result<(f64, Weights)> {
    if batch.is_empty() {
        return Err(invalid("empty training batch"));
    }
    let d = params.arch.dim;
    for p in batch {
        check_dim(d, p.x.dim())?;
        check_dim(d, p.target.dim())?;
    }
    let rows = batch
        .iter()
        .map(|p| params.embed_row(&p.cond))
        .collect::<Result<Vec<_>>>()?;
    let n = batch.len();
    let shards: Vec<(f64, Weights)> = (0..n.div_ceil(SHARD_ROWS))
        .into_par_iter()
        .map(|k| {
            let lo = k * SHARD_ROWS;
            let hi = (lo + SHARD_ROWS).min(n);
            let pairs = &batch[lo..hi];
            let mut x = Array2::zeros((hi - lo, d));
            let mut target = Array2::zeros((hi - lo, d));
            for (i, p) in pairs.iter().enumerate() {
                x.row_mut(i).assign(&p.x.to_array());
                target.row_mut(i).assign(&p.target.to_array());
            }
            let times: Vec<f64> = pairs.iter().map(|p| p.t).collect();
            let input = params.build_input(x.view(), &times, &rows[lo..hi]);
            let (out, cache) = params.forward_cached(input);
            let resid = out - &target;
            let loss: f64 = resid.iter().map(|r| r * r).sum();
            let mut grads = Weights::zeros(&params.arch);
            params.backward(&cache, &rows[lo..hi], resid * 2.0, &mut grads);
            (loss, grads)
        })
        .collect();
    let mut total = 0.0;
    let mut grads = Weights::zeros(&params.arch);
    for (loss, g) in &shards {
        total += loss;
        grads.add_assign(g);
    }
    let inv_n = 1.0 / n as f64;
    grads.scale(inv_n);
    Ok((total * inv_n, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub objective: Objective,
    pub arch: Architecture,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// Condition dropout: probabilities of the null, class and tight branches.
    pub p_null: f64,
    pub p_class: f64,
    pub p_tight: f64,
    /// Tight training scales are drawn uniformly from this range.
    pub tight_scale_min: f64,
    pub tight_scale_max: f64,
    /// Size of the fixed training set drawn from the mixture.
    pub train_size: usize,
    pub seed: u64,
    /// Noise schedule for the epsilon objective.
    pub schedule: ScheduleConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::FlowMatching,
            arch: Architecture::default(),
            batch_size: 256,
            steps: 20_000,
            learning_rate: 1e-3,
            p_null: 0.5,
            p_class: 0.25,
            p_tight: 0.25,
            tight_scale_min: 0.2,
            tight_scale_max: 1.0,
            train_size: 50_000,
            seed: 0,
            schedule: ScheduleConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let probs = [self.p_null, self.p_class, self.p_tight];
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(invalid("condition probabilities must be non-negative"));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(invalid("condition probabilities must sum to 1"));
        }
        if self.batch_size == 0 || self.train_size == 0 {
            return Err(invalid("batch_size and train_size must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(invalid("learning_rate must be positive"));
        }
        if !(0.0 <= self.tight_scale_min && self.tight_scale_min <= self.tight_scale_max && self.tight_scale_max.is_finite()) {
            return Err(invalid("tight scale range must satisfy 0 <= min <= max"));
        }
        if self.objective == Objective::EpsilonPrediction {
            self.schedule.build()?;
        }
        Ok(())
    }
}

/// Which branch a training example uses.
pub fn draw_condition_mode(rng: &mut RngStream, cfg: &TrainConfig) -> ConditionMode {
    let u = rng.uniform();
    if u < cfg.p_null {
        ConditionMode::Null
    } else if u < cfg.p_null + cfg.p_class {
        ConditionMode::Class
    } else {
        ConditionMode::Tight
    }
}

/// Condition for a training point: null, its class, or the point itself as a tight anchor.
pub fn draw_condition(rng: &mut RngStream, cfg: &TrainConfig, x1: &Vector, class_id: usize) -> Condition {
    match draw_condition_mode(rng, cfg) {
        ConditionMode::Null => Condition::Null,
        ConditionMode::Class => Condition::Class { id: class_id },
        _ => Condition::Tight {
            anchor: x1.clone(),
            scale: rng.uniform_range(cfg.tight_scale_min, cfg.tight_scale_max),
        },
    }
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub optimizer: AdamState,
    /// Batch loss before each update.
    pub losses: Vec<f64>,
}

/// Trains a fresh model; `on_step(step, loss)` is called after every update.
pub fn train(cfg: &TrainConfig, spec: &GmmSpec, mut on_step: impl FnMut(usize, f64)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed);
    let mut params = ModelParams::init(cfg.arch.clone(), cfg.objective, spec, &mut root.split(1))?;
    let train_set = sample_posterior(spec, &mut root.split(2), cfg.train_size)?;
    let sched = match cfg.objective {
        Objective::EpsilonPrediction => Some(cfg.schedule.build()?),
        Objective::FlowMatching => None,
    };
    let mut rng = root.split(3);
    let mut optimizer = AdamState::new(&cfg.arch);
    let mut losses = Vec::with_capacity(cfg.steps);
    let d = spec.dim();
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch_size)
            .map(|_| {
                let point = &train_set[rng.index(train_set.len())];
                let cond = draw_condition(&mut rng, cfg, &point.x, point.class_id);
                let noise = sample_standard_normal(&mut rng, d)?;
                match &sched {
                    None => {
                        let t = rng.uniform();
                        TrainingPair::flow_matching(&noise, &point.x, t, cond)
                    }
                    Some(sched) => {
                        let t = rng.index(sched.steps() + 1);
                        TrainingPair::epsilon(&point.x, &noise, t, sched, cond)
                    }
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let (loss, grads) = loss_and_grad(&params, &batch)?;
        adam_step(&mut params.weights, &grads, &mut optimizer, cfg.learning_rate)?;
        if !params.weights.is_finite() {
            return Err(crate::error::Error::NonFinite("parameters after update"));
        }
        losses.push(loss);
        on_step(step, loss);
    }
    Ok(TrainOutcome {
        params,
        optimizer,
        losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ModelParams;

    fn v(x: f64, y: f64) -> Vector {
        Vector::new(vec![x, y]).unwrap()
    }

    fn random_params(objective: Objective, seed: u64) -> ModelParams {
        let arch = Architecture {
            hidden: vec![12, 10],
            embed_dim: 6,
            time_features: 4,
            ..Architecture::default()
        };
        let mut p = ModelParams::init(arch, objective, &GmmSpec::default(), &mut RngStream::new(seed)).unwrap();
        let mut rng = RngStream::new(seed ^ 0xabc);
        for mut t in p.weights.tensors_mut() {
            t.mapv_inplace(|w| w + 0.3 * rng.standard_normal());
        }
        p
    }

    fn random_batch(objective: Objective, n: usize, seed: u64) -> Vec<TrainingPair> {
        let mut rng = RngStream::new(seed);
        let spec = GmmSpec::default();
        let sched = ScheduleConfig::default().build().unwrap();
        let pts = sample_posterior(&spec, &mut rng, n).unwrap();
        let cfg = TrainConfig {
            p_null: 0.25,
            p_class: 0.25,
            p_tight: 0.5,
            ..TrainConfig::default()
        };
        pts.iter()
            .enumerate()
            .map(|(i, p)| {
                let mut cond = draw_condition(&mut rng, &cfg, &p.x, p.class_id);
                if i % 7 == 3 {
                    cond = Condition::ClassTight { id: 2, anchor: p.x.clone(), scale: 0.6 };
                }
                let noise = sample_standard_normal(&mut rng, 2).unwrap();
                match objective {
                    Objective::FlowMatching => TrainingPair::flow_matching(&noise, &p.x, rng.uniform(), cond).unwrap(),
                    Objective::EpsilonPrediction => {
                        TrainingPair::epsilon(&p.x, &noise, rng.index(sched.steps() + 1), &sched, cond).unwrap()
                    }
                }
            })
            .collect()
    }

    /// Central finite differences of the loss, coordinate by coordinate.
    fn finite_difference(params: &ModelParams, batch: &[TrainingPair], h: f64) -> Vec<Vec<f64>> {
        let mut p = params.clone();
        let n_tensors = p.weights.tensors().len();
        let mut out = Vec::with_capacity(n_tensors);
        for ti in 0..n_tensors {
            let len = p.weights.tensors()[ti].len();
            let mut g = Vec::with_capacity(len);
            for k in 0..len {
                let orig = *p.weights.tensors_mut()[ti].iter_mut().nth(k).unwrap();
                *p.weights.tensors_mut()[ti].iter_mut().nth(k).unwrap() = orig + h;
                let plus = loss_and_grad(&p, batch).unwrap().0;
                *p.weights.tensors_mut()[ti].iter_mut().nth(k).unwrap() = orig - h;
                let minus = loss_and_grad(&p, batch).unwrap().0;
                *p.weights.tensors_mut()[ti].iter_mut().nth(k).unwrap() = orig;
                g.push((plus - minus) / (2.0 * h));
            }
            out.push(g);
        }
        out
    }

    #[test]
    fn gradients_match_finite_differences() {
        for objective in [Objective::FlowMatching, Objective::EpsilonPrediction] {
            let params = random_params(objective, 21);
            let batch = random_batch(objective, 16, 5);
            let (_, grads) = loss_and_grad(&params, &batch).unwrap();
            let numeric = finite_difference(&params, &batch, 1e-5);
            for ((name, analytic), fd) in params.weights.names().iter().zip(grads.tensors()).zip(&numeric) {
                for (a, n) in analytic.iter().zip(fd) {
                    let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-6);
                    assert!(rel < 1e-4, "{objective} {name}: analytic {a} numeric {n}");
                }
            }
        }
    }

    #[test]
    fn duplicated_batch_has_same_loss_and_gradient() {
        let params = random_params(Objective::FlowMatching, 2);
        let batch = random_batch(Objective::FlowMatching, 40, 9);
        let doubled: Vec<TrainingPair> = batch.iter().flat_map(|p| [p.clone(), p.clone()]).collect();
        let (l1, g1) = loss_and_grad(&params, &batch).unwrap();
        let (l2, g2) = loss_and_grad(&params, &doubled).unwrap();
        assert!((l1 - l2).abs() <= 1e-12 * l1.abs());
        for (a, b) in g1.tensors().iter().zip(g2.tensors()) {
            for (x, y) in a.iter().zip(b.iter()) {
                assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }

    #[test]
    fn zero_output_layer_loss_is_mean_squared_velocity() {
        let params = ModelParams::init(Architecture::default(), Objective::FlowMatching, &GmmSpec::default(), &mut RngStream::new(0)).unwrap();
        let batch = random_batch(Objective::FlowMatching, 32, 1);
        let expected = batch.iter().map(|p| p.target.norm_squared()).sum::<f64>() / 32.0;
        let (loss, _) = loss_and_grad(&params, &batch).unwrap();
        assert!((loss - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn empty_batch_rejected() {
        let params = random_params(Objective::FlowMatching, 0);
        assert!(loss_and_grad(&params, &[]).is_err());
    }

    #[test]
    fn flow_pair_targets() {
        let p = TrainingPair::flow_matching(&v(0.0, 0.0), &v(10.0, 10.0), 0.3, Condition::Null).unwrap();
        assert_eq!(p.x.as_slice(), &[3.0, 3.0]);
        assert_eq!(p.target.as_slice(), &[10.0, 10.0]);
    }

    #[test]
    fn condition_dropout_frequencies_pass_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let cfg = TrainConfig::default();
        let mut rng = RngStream::new(77);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            match draw_condition_mode(&mut rng, &cfg) {
                ConditionMode::Null => counts[0] += 1,
                ConditionMode::Class => counts[1] += 1,
                _ => counts[2] += 1,
            }
        }
        let probs = [cfg.p_null, cfg.p_class, cfg.p_tight];
        let chi2: f64 = counts
            .iter()
            .zip(probs)
            .map(|(&c, p)| {
                let e = n as f64 * p;
                (c as f64 - e).powi(2) / e
            })
            .sum();
        let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(1.0 - 0.001);
        assert!(chi2 < critical, "chi2 {chi2} >= {critical}");
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig { p_null: 0.6, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { p_tight: -0.25, p_class: 0.75, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn short_training_is_deterministic_and_reduces_loss() {
        let cfg = TrainConfig {
            steps: 200,
            batch_size: 64,
            train_size: 2_000,
            arch: Architecture { hidden: vec![32, 32], ..Architecture::default() },
            ..TrainConfig::default()
        };
        let a = train(&cfg, &GmmSpec::default(), |_, _| {}).unwrap();
        let b = train(&cfg, &GmmSpec::default(), |_, _| {}).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.losses, b.losses);
        let tail = a.losses[150..].iter().sum::<f64>() / 50.0;
        assert!(tail < 0.5 * a.losses[0], "loss {} -> {tail}", a.losses[0]);
        assert_eq!(a.optimizer.step, 200);
    }
}
