//! Conditional MLP: `[x | time features | condition embedding] → hidden → output`.
//!
//! The condition embedding is a row of a learned class table (row 0 is the
//! null condition). The point-prompt ("tight") branch adds
//! `s · W_p · standardize(anchor)` to that row, so `s = 0` is exactly the
//! null (or class) embedding.

mod adam;
mod checkpoint;
mod train;

pub use adam::{adam_step, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, MAGIC, VERSION};
pub use train::{
    draw_condition, draw_condition_mode, loss_and_grad, train, TrainConfig, TrainOutcome,
    TrainingPair,
};

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Condition, GmmSpec};
use crate::error::{invalid, Result};
use crate::model::{check_conditions, condition_for, Model, Objective};
use crate::numerics::{check_dim, RngStream, Vector};

/// Rows evaluated per worker task. Fixed so results never depend on the thread count.
pub(crate) const SHARD_ROWS: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub dim: usize,
    pub time_features: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
    /// Number of class labels; the class table has one extra (null) row.
    pub num_classes: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            dim: 2,
            time_features: 16,
            embed_dim: 16,
            hidden: vec![128, 128],
            num_classes: 5,
        }
    }
}

impl Architecture {
    pub fn input_width(&self) -> usize {
        self.dim + self.time_features + self.embed_dim
    }

    /// `[input, hidden..., dim]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.input_width()];
        sizes.extend(&self.hidden);
        sizes.push(self.dim);
        sizes
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.embed_dim == 0 || self.num_classes == 0 {
            return Err(invalid("architecture dimensions must be positive"));
        }
        if self.time_features % 2 != 0 || self.time_features < 2 {
            return Err(invalid("time_features must be a positive even number"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(invalid("hidden widths must be positive"));
        }
        Ok(())
    }
}

/// Sinusoidal features of scalar time: `[sin(f_i t)..., cos(f_i t)...]`
/// with frequencies geometric from 1 to 1000.
#[derive(Clone, Debug)]
pub struct TimeEmbedding {
    frequencies: Vec<f64>,
}

impl TimeEmbedding {
    pub fn new(features: usize) -> Self {
        let n = features / 2;
        let frequencies = (0..n)
            .map(|i| {
                if n == 1 {
                    1.0
                } else {
                    1000f64.powf(i as f64 / (n - 1) as f64)
                }
            })
            .collect();
        Self { frequencies }
    }

    pub fn frequencies(&self) -> &[f64] {
        &self.frequencies
    }

    pub fn write_features(&self, t: f64, out: &mut [f64]) {
        let n = self.frequencies.len();
        for (i, f) in self.frequencies.iter().enumerate() {
            let (s, c) = (f * t).sin_cos();
            out[i] = s;
            out[n + i] = c;
        }
    }

    pub fn features(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; 2 * self.frequencies.len()];
        self.write_features(t, &mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Every trainable tensor. Gradients and Adam moments share this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub layers: Vec<Dense>,
    /// `(num_classes + 1) × embed_dim`; row 0 is the null embedding.
    pub class_table: Array2<f64>,
    /// `embed_dim × dim`.
    pub tight_proj: Array2<f64>,
}

impl Weights {
    pub fn zeros(arch: &Architecture) -> Self {
        let sizes = arch.layer_sizes();
        let layers = sizes
            .windows(2)
            .map(|w| Dense {
                weight: Array2::zeros((w[0], w[1])),
                bias: Array1::zeros(w[1]),
            })
            .collect();
        Self {
            layers,
            class_table: Array2::zeros((arch.num_classes + 1, arch.embed_dim)),
            tight_proj: Array2::zeros((arch.embed_dim, arch.dim)),
        }
    }

    /// Tensor names in declaration (serialization) order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for i in 0..self.layers.len() {
            names.push(format!("layers.{i}.weight"));
            names.push(format!("layers.{i}.bias"));
        }
        names.push("class_table".into());
        names.push("tight_proj".into());
        names
    }

    pub fn tensors(&self) -> Vec<ArrayViewD<'_, f64>> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(l.weight.view().into_dyn());
            out.push(l.bias.view().into_dyn());
        }
        out.push(self.class_table.view().into_dyn());
        out.push(self.tight_proj.view().into_dyn());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<ArrayViewMutD<'_, f64>> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(l.weight.view_mut().into_dyn());
            out.push(l.bias.view_mut().into_dyn());
        }
        out.push(self.class_table.view_mut().into_dyn());
        out.push(self.tight_proj.view_mut().into_dyn());
        out
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.tensors().iter().map(|t| t.shape().to_vec()).collect()
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn add_assign(&mut self, other: &Weights) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a += &b;
        }
    }

    pub(crate) fn scale(&mut self, k: f64) {
        for mut t in self.tensors_mut() {
            t *= k;
        }
    }
}

/// Everything the forward pass needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub arch: Architecture,
    pub objective: Objective,
    /// Per-coordinate statistics used to standardize tight anchors.
    pub anchor_mean: Array1<f64>,
    pub anchor_std: Array1<f64>,
    pub weights: Weights,
}

/// Per-row embedding bookkeeping kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct EmbedRow {
    pub table_row: usize,
    pub scale: f64,
    pub anchor: Option<Array1<f64>>,
}

pub(crate) struct ForwardCache {
    /// Input of each dense layer.
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activations of each hidden layer.
    pub pre: Vec<Array2<f64>>,
}

fn sigmoid(a: f64) -> f64 {
    1.0 / (1.0 + (-a).exp())
}

fn silu(a: f64) -> f64 {
    a * sigmoid(a)
}

fn silu_grad(a: f64) -> f64 {
    let s = sigmoid(a);
    s * (1.0 + a * (1.0 - s))
}

impl ModelParams {
    /// Random hidden layers, zero output layer (the initial model predicts 0).
    pub fn init(arch: Architecture, objective: Objective, spec: &GmmSpec, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        spec.validate()?;
        check_dim(arch.dim, spec.dim())?;
        if spec.max_class_id() > arch.num_classes {
            return Err(invalid("dataset has more classes than the class table"));
        }
        let mut weights = Weights::zeros(&arch);
        let last = weights.layers.len() - 1;
        for layer in &mut weights.layers[..last] {
            let bound = 1.0 / (layer.weight.nrows() as f64).sqrt();
            layer.weight.mapv_inplace(|_| rng.uniform_range(-bound, bound));
            layer.bias.mapv_inplace(|_| rng.uniform_range(-bound, bound));
        }
        weights.class_table.mapv_inplace(|_| 0.5 * rng.standard_normal());
        weights.tight_proj.mapv_inplace(|_| 0.5 * rng.standard_normal());
        Ok(Self {
            anchor_mean: spec.mean(),
            anchor_std: spec.std(),
            arch,
            objective,
            weights,
        })
    }

    pub fn time_embedding(&self) -> TimeEmbedding {
        TimeEmbedding::new(self.arch.time_features)
    }

    pub fn standardize_anchor(&self, anchor: &Vector) -> Result<Array1<f64>> {
        check_dim(self.arch.dim, anchor.dim())?;
        Ok((anchor.to_array() - &self.anchor_mean) / &self.anchor_std)
    }

    pub(crate) fn embed_row(&self, cond: &Condition) -> Result<EmbedRow> {
        let class_row = |id: usize| {
            if id == 0 || id > self.arch.num_classes {
                Err(invalid(format!(
                    "class id {id} outside 1..={}",
                    self.arch.num_classes
                )))
            } else {
                Ok(id)
            }
        };
        Ok(match cond {
            Condition::Null => EmbedRow { table_row: 0, scale: 0.0, anchor: None },
            Condition::Class { id } => EmbedRow { table_row: class_row(*id)?, scale: 0.0, anchor: None },
            Condition::Tight { anchor, scale } => EmbedRow {
                table_row: 0,
                scale: *scale,
                anchor: Some(self.standardize_anchor(anchor)?),
            },
            Condition::ClassTight { id, anchor, scale } => EmbedRow {
                table_row: class_row(*id)?,
                scale: *scale,
                anchor: Some(self.standardize_anchor(anchor)?),
            },
        })
    }

    /// The embedding-layer input for `cond`.
    pub fn embedding(&self, cond: &Condition) -> Result<Array1<f64>> {
        let row = self.embed_row(cond)?;
        Ok(self.embedding_of(&row))
    }

    fn embedding_of(&self, row: &EmbedRow) -> Array1<f64> {
        let mut e = self.weights.class_table.row(row.table_row).to_owned();
        if let Some(a) = &row.anchor {
            if row.scale != 0.0 {
                e.scaled_add(row.scale, &self.weights.tight_proj.dot(a));
            }
        }
        e
    }

    pub(crate) fn build_input(
        &self,
        x: ArrayView2<'_, f64>,
        times: &[f64],
        rows: &[EmbedRow],
    ) -> Array2<f64> {
        let d = self.arch.dim;
        let tf = self.arch.time_features;
        let temb = self.time_embedding();
        let mut input = Array2::zeros((x.nrows(), self.arch.input_width()));
        for (i, mut r) in input.rows_mut().into_iter().enumerate() {
            r.slice_mut(s![..d]).assign(&x.row(i));
            let t = times[i];
            let mut feats = vec![0.0; tf];
            temb.write_features(t, &mut feats);
            r.slice_mut(s![d..d + tf]).assign(&ArrayView1::from(&feats[..]));
            r.slice_mut(s![d + tf..]).assign(&self.embedding_of(&rows[i]));
        }
        input
    }

    pub(crate) fn forward_cached(&self, input: Array2<f64>) -> (Array2<f64>, ForwardCache) {
        let n_layers = self.weights.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut pre = Vec::with_capacity(n_layers - 1);
        let mut h = input;
        for (l, layer) in self.weights.layers.iter().enumerate() {
            let mut a = h.dot(&layer.weight);
            a += &layer.bias;
            inputs.push(h);
            if l + 1 == n_layers {
                return (a, ForwardCache { inputs, pre });
            }
            h = a.mapv(silu);
            pre.push(a);
        }
        unreachable!("network has at least one layer")
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the output) into `grads`.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache,
        rows: &[EmbedRow],
        mut d_pre: Array2<f64>,
        grads: &mut Weights,
    ) {
        let n_layers = self.weights.layers.len();
        let mut d_input = None;
        for l in (0..n_layers).rev() {
            let layer = &self.weights.layers[l];
            let g = &mut grads.layers[l];
            g.weight += &cache.inputs[l].t().dot(&d_pre);
            g.bias += &d_pre.sum_axis(Axis(0));
            let d_h = d_pre.dot(&layer.weight.t());
            if l == 0 {
                d_input = Some(d_h);
            } else {
                let mut next = d_h;
                next.zip_mut_with(&cache.pre[l - 1], |g, &a| *g *= silu_grad(a));
                d_pre = next;
            }
        }
        let d_input = d_input.expect("first layer visited");
        let offset = self.arch.dim + self.arch.time_features;
        let d_embed = d_input.slice(s![.., offset..]);
        for (i, row) in rows.iter().enumerate() {
            let de = d_embed.row(i);
            let mut table_row = grads.class_table.row_mut(row.table_row);
            table_row += &de;
            if let Some(a) = &row.anchor {
                if row.scale != 0.0 {
                    for (e, &g) in de.iter().enumerate() {
                        for (j, &aj) in a.iter().enumerate() {
                            grads.tight_proj[[e, j]] += row.scale * g * aj;
                        }
                    }
                }
            }
        }
    }

    fn predict_rows(
        &self,
        x: ArrayView2<'_, f64>,
        times: &[f64],
        conds: &[Condition],
    ) -> Result<Array2<f64>> {
        check_dim(self.arch.dim, x.ncols())?;
        check_conditions(x.nrows(), conds)?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(crate::error::Error::NonFinite("network input"));
        }
        let rows = (0..x.nrows())
            .map(|i| self.embed_row(condition_for(conds, i)))
            .collect::<Result<Vec<_>>>()?;
        let n = x.nrows();
        let shards: Vec<Array2<f64>> = (0..n.div_ceil(SHARD_ROWS))
            .into_par_iter()
            .map(|k| {
                let lo = k * SHARD_ROWS;
                let hi = (lo + SHARD_ROWS).min(n);
                let input = self.build_input(x.slice(s![lo..hi, ..]), &times[lo..hi], &rows[lo..hi]);
                self.forward_cached(input).0
            })
            .collect();
        let mut out = Array2::zeros((n, self.arch.dim));
        for (k, shard) in shards.into_iter().enumerate() {
            let lo = k * SHARD_ROWS;
            out.slice_mut(s![lo..lo + shard.nrows(), ..]).assign(&shard);
        }
        Ok(out)
    }
}

/// Single-point forward pass.
pub fn forward(params: &ModelParams, x: &Vector, t: f64, cond: &Condition) -> Result<Vector> {
    check_dim(params.arch.dim, x.dim())?;
    let xs = x.to_array().insert_axis(Axis(0));
    let out = params.predict_rows(xs.view(), &[t], std::slice::from_ref(cond))?;
    Vector::from_view(out.row(0))
}

impl Model for ModelParams {
    fn objective(&self) -> Objective {
        self.objective
    }

    fn dim(&self) -> usize {
        self.arch.dim
    }

    fn predict(&self, x: ArrayView2<'_, f64>, t: f64, conds: &[Condition]) -> Result<Array2<f64>> {
        let times = vec![t; x.nrows()];
        self.predict_rows(x, &times, conds)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_params(seed: u64) -> ModelParams {
        let arch = Architecture {
            hidden: vec![32, 32],
            ..Architecture::default()
        };
        let mut p = ModelParams::init(arch, Objective::FlowMatching, &GmmSpec::default(), &mut RngStream::new(seed)).unwrap();
        // Non-zero output layer so outputs depend on every input.
        let last = p.weights.layers.len() - 1;
        let mut rng = RngStream::new(seed + 100);
        p.weights.layers[last].weight.mapv_inplace(|_| 0.3 * rng.standard_normal());
        p
    }

    fn v(x: f64, y: f64) -> Vector {
        Vector::new(vec![x, y]).unwrap()
    }

    #[test]
    fn zero_scale_tight_matches_null_bitwise() {
        let p = small_params(1);
        let mut rng = RngStream::new(2);
        for _ in 0..50 {
            let x = v(10.0 * rng.standard_normal(), 10.0 * rng.standard_normal());
            let t = rng.uniform();
            let anchor = v(rng.standard_normal() * 8.0, 10.0 + rng.standard_normal());
            let tight = forward(&p, &x, t, &Condition::Tight { anchor, scale: 0.0 }).unwrap();
            let null = forward(&p, &x, t, &Condition::Null).unwrap();
            assert_eq!(tight.as_slice(), null.as_slice());
        }
    }

    #[test]
    fn fresh_params_predict_zero() {
        let p = ModelParams::init(Architecture::default(), Objective::FlowMatching, &GmmSpec::default(), &mut RngStream::new(0)).unwrap();
        for cond in [Condition::Null, Condition::class(3), Condition::Tight { anchor: v(1.0, 2.0), scale: 0.7 }] {
            let out = forward(&p, &v(3.0, -4.0), 0.25, &cond).unwrap();
            assert_eq!(out.as_slice(), &[0.0, 0.0]);
        }
    }

    #[test]
    fn forward_is_deterministic() {
        let a = forward(&small_params(5), &v(1.0, 2.0), 0.5, &Condition::class(3)).unwrap();
        let b = forward(&small_params(5), &v(1.0, 2.0), 0.5, &Condition::class(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn tight_branch_shifts_embedding_by_scaled_projection() {
        let p = small_params(3);
        let anchor = v(7.0, 11.5);
        let a = p.standardize_anchor(&anchor).unwrap();
        let null = p.embedding(&Condition::Null).unwrap();
        for s in [0.1, 0.4, 1.0] {
            let tight = p.embedding(&Condition::Tight { anchor: anchor.clone(), scale: s }).unwrap();
            let expected = p.weights.tight_proj.dot(&a) * s;
            for (diff, e) in (&tight - &null).iter().zip(expected.iter()) {
                assert!((diff - e).abs() < 1e-14);
            }
        }
        let ct = p.embedding(&Condition::ClassTight { id: 4, anchor: anchor.clone(), scale: 0.5 }).unwrap();
        let class = p.embedding(&Condition::class(4)).unwrap();
        let expected = p.weights.tight_proj.dot(&a) * 0.5;
        for (diff, e) in (&ct - &class).iter().zip(expected.iter()) {
            assert!((diff - e).abs() < 1e-14);
        }
    }

    #[test]
    fn dimension_and_class_errors() {
        let p = small_params(0);
        let x3 = Vector::new(vec![1.0, 2.0, 3.0]).unwrap();
        assert!(forward(&p, &x3, 0.1, &Condition::Null).is_err());
        assert!(forward(&p, &v(0.0, 0.0), 0.1, &Condition::class(6)).is_err());
        assert!(forward(&p, &v(0.0, 0.0), 0.1, &Condition::class(0)).is_err());
    }

    #[test]
    fn time_features_bounded() {
        let te = TimeEmbedding::new(16);
        assert_eq!(te.frequencies().len(), 8);
        assert!((te.frequencies()[0] - 1.0).abs() < 1e-12);
        assert!((te.frequencies()[7] - 1000.0).abs() < 1e-9);
        for k in 0..=100 {
            let f = te.features(k as f64 / 100.0);
            assert!(f.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        assert_eq!(te.features(0.3), te.features(0.3));
    }

    #[test]
    fn batched_prediction_matches_single_points() {
        let p = small_params(8);
        let mut rng = RngStream::new(4);
        let x = rng.normal_matrix(150, 2) * 5.0;
        let conds: Vec<Condition> = (0..150).map(|i| Condition::class(1 + i % 5)).collect();
        let batch = p.predict(x.view(), 0.3, &conds).unwrap();
        for i in [0, 63, 64, 149] {
            let single = forward(&p, &Vector::from_view(x.row(i)).unwrap(), 0.3, &conds[i]).unwrap();
            for j in 0..2 {
                assert!((batch[[i, j]] - single[j]).abs() < 1e-12);
            }
        }
    }
}
