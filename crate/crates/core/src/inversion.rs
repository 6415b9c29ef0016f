//! Inverters: DDIM, ReNoise fixed-point refinement, edit-friendly DDPM noise
//! maps and reverse-Euler flow inversion, plus the point-prompt ("tight")
//! conditioning policy and condition-swap editing.

use ndarray::{Array2, Array3, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::Condition;
use crate::diffusion::{
    check_timesteps, ddim_invert_update, ddim_sample, ddpm_sample, forward_marginal_rows,
    posterior_mean, DdpmNoise, NoiseSchedule, TimestepConvention,
};
use crate::error::{invalid, Error, Result};
use crate::flow::{euler_invert, euler_sample, FlowGrid};
use crate::model::{check_conditions, condition_for, guided_predict, require_objective, Model, Objective};
use crate::numerics::{RngStream, Vector};
use crate::trajectory::Trajectory;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Method {
    Ddim,
    Renoise { iterations: usize, averaging: bool },
    EditFriendly,
    Euler,
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Ddim => "ddim".into(),
            Method::Renoise { iterations, .. } => format!("renoise_k{iterations}"),
            Method::EditFriendly => "edit_friendly".into(),
            Method::Euler => "euler".into(),
        }
    }
}

/// Options shared by the deterministic diffusion inverters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiffusionOptions {
    pub guidance: f64,
    pub convention: TimestepConvention,
    /// Number of strided steps; `None` uses every step of the schedule.
    pub num_steps: Option<usize>,
}

impl Default for DiffusionOptions {
    fn default() -> Self {
        Self {
            guidance: 1.0,
            convention: TimestepConvention::Current,
            num_steps: None,
        }
    }
}

impl DiffusionOptions {
    pub fn timesteps(&self, sched: &NoiseSchedule) -> Result<Vec<usize>> {
        match self.num_steps {
            Some(n) => sched.timesteps(n),
            None => Ok(sched.all_timesteps()),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionResult {
    /// Terminal latents, one row per input point.
    pub latents: Array2<f64>,
    /// Starts at the inputs and ends at `latents`.
    pub trajectory: Trajectory,
    pub method: Method,
    pub conditions: Vec<Condition>,
    /// Diffusion step indices visited (empty for flow inversion).
    pub timesteps: Vec<usize>,
    /// `residuals[[step, k, point]] = ||z^{(k+1)} - z^{(k)}||`; ReNoise only.
    pub residuals: Option<Array3<f64>>,
}

fn model_time(sched: &NoiseSchedule, t_prev: usize, t: usize, convention: TimestepConvention) -> f64 {
    match convention {
        TimestepConvention::Current => sched.normalized_time(t_prev),
        TimestepConvention::Target => sched.normalized_time(t),
    }
}

/// `z_t = A_t·z_{t-1} - B_t·ε̂(z_{t-1})` along the schedule.
pub fn ddim_invert(
    model: &dyn Model,
    x0: ArrayView2<'_, f64>,
    sched: &NoiseSchedule,
    conds: &[Condition],
    opts: &DiffusionOptions,
) -> Result<InversionResult> {
    renoise_invert(model, x0, sched, conds, opts, 0, false).map(|mut r| {
        r.method = Method::Ddim;
        r.residuals = None;
        r
    })
}

/// DDIM inversion refined at every step by `iterations` fixed-point updates
/// `z^{(k+1)} = A_t·z_{t-1} - B_t·ε̂(z^{(k)}, t)`.
pub fn renoise_invert(
    model: &dyn Model,
    x0: ArrayView2<'_, f64>,
    sched: &NoiseSchedule,
    conds: &[Condition],
    opts: &DiffusionOptions,
    iterations: usize,
    averaging: bool,
) -> Result<InversionResult> {
    require_objective(model, Objective::EpsilonPrediction)?;
    check_conditions(x0.nrows(), conds)?;
    let timesteps = opts.timesteps(sched)?;
    check_timesteps(sched, &timesteps)?;
    let n = x0.nrows();
    let mut residuals = Array3::zeros((timesteps.len() - 1, iterations, n));
    let mut z = x0.to_owned();
    let mut traj = Trajectory::with_start(0.0, z.clone());
    for (step, pair) in timesteps.windows(2).enumerate() {
        let (t_prev, t) = (pair[0], pair[1]);
        let (ab_prev, ab_t) = (sched.alpha_bar(t_prev), sched.alpha_bar(t));
        let time = model_time(sched, t_prev, t, opts.convention);
        let eps = guided_predict(model, z.view(), time, conds, opts.guidance)?;
        let mut current = ddim_invert_update(z.view(), eps.view(), ab_prev, ab_t);
        let mut previous = None;
        for k in 0..iterations {
            let eps = guided_predict(model, current.view(), sched.normalized_time(t), conds, opts.guidance)?;
            let next = ddim_invert_update(z.view(), eps.view(), ab_prev, ab_t);
            for (i, (a, b)) in next.rows().into_iter().zip(current.rows()).enumerate() {
                residuals[[step, k, i]] = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            }
            previous = Some(std::mem::replace(&mut current, next));
        }
        if let (true, Some(prev)) = (averaging, previous) {
            current = (&current + &prev) * 0.5;
        }
        z = current;
        traj.push(sched.normalized_time(t), z.clone());
    }
    Ok(InversionResult {
        latents: z,
        trajectory: traj,
        method: Method::Renoise { iterations, averaging },
        conditions: conds.to_vec(),
        timesteps,
        residuals: Some(residuals),
    })
}

/// Reverse-Euler inversion of a flow model, data (t=1) → prior (t=0).
pub fn flow_invert(
    model: &dyn Model,
    x: ArrayView2<'_, f64>,
    grid: FlowGrid,
    conds: &[Condition],
    w: f64,
) -> Result<InversionResult> {
    check_conditions(x.nrows(), conds)?;
    let (latents, trajectory) = euler_invert(model, x, grid, conds, w)?;
    Ok(InversionResult {
        latents,
        trajectory,
        method: Method::Euler,
        conditions: conds.to_vec(),
        timesteps: Vec::new(),
        residuals: None,
    })
}

/// Edit-friendly DDPM inversion: `x_T` plus one noise map per step.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseMapSet {
    pub x_t: Array2<f64>,
    /// `maps[i]` belongs to step `T - i`; the last map (t=1) is the unscaled
    /// residual that lands the final step exactly on `x_0`.
    pub maps: Vec<Array2<f64>>,
    pub conditions: Vec<Condition>,
    pub guidance: f64,
    /// Forward states `x_0, x_1, …, x_T`.
    pub trajectory: Trajectory,
}

impl NoiseMapSet {
    pub fn map_for_step(&self, t: usize) -> &Array2<f64> {
        &self.maps[self.maps.len() - t]
    }

    /// Re-runs the DDPM sampler with the stored maps.
    pub fn replay(&self, model: &dyn Model, sched: &NoiseSchedule) -> Result<Array2<f64>> {
        let (x, _) = ddpm_sample(
            model,
            self.x_t.view(),
            sched,
            &self.conditions,
            DdpmNoise::Maps(&self.maps),
            self.guidance,
        )?;
        Ok(x)
    }
}

/// Draws independent forward marginals `x_t` and extracts the noise maps
/// `z_t = (x_{t-1} - μ̂_t(x_t))/σ_t` that make DDPM sampling retrace them.
pub fn editfriendly_invert(
    model: &dyn Model,
    x0: ArrayView2<'_, f64>,
    sched: &NoiseSchedule,
    conds: &[Condition],
    w: f64,
    rng: &mut RngStream,
) -> Result<NoiseMapSet> {
    require_objective(model, Objective::EpsilonPrediction)?;
    check_conditions(x0.nrows(), conds)?;
    let total = sched.steps();
    for t in 2..=total {
        if !(sched.sigma(t) > 0.0) {
            return Err(invalid(format!("posterior std is zero at interior step {t}")));
        }
    }
    let (n, d) = x0.dim();
    let mut states = Trajectory::with_start(0.0, x0.to_owned());
    for t in 1..=total {
        let eps = rng.normal_matrix(n, d);
        states.push(sched.normalized_time(t), forward_marginal_rows(x0, eps.view(), sched.alpha_bar(t)));
    }
    let mut maps = Vec::with_capacity(total);
    for t in (1..=total).rev() {
        let x_t = &states.states[t];
        let eps = guided_predict(model, x_t.view(), sched.normalized_time(t), conds, w)?;
        let mu = posterior_mean(x_t.view(), eps.view(), t, sched);
        let scale = if t == 1 { 1.0 } else { 1.0 / sched.sigma(t) };
        let mut z = Array2::zeros((n, d));
        Zip::from(&mut z)
            .and(&states.states[t - 1])
            .and(&mu)
            .for_each(|o, &target, &m| *o = (target - m) * scale);
        maps.push(z);
    }
    Ok(NoiseMapSet {
        x_t: states.states[total].clone(),
        maps,
        conditions: conds.to_vec(),
        guidance: w,
        trajectory: states,
    })
}

/// The point-prompt condition for `x0` at scale `s`. The base condition is
/// replaced; it is taken only so call sites read like the other policies.
pub fn tighten(_base: &Condition, x0: &Vector, s: f64) -> Result<Condition> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(invalid(format!("tight scale must be finite and non-negative, got {s}")));
    }
    Ok(Condition::Tight { anchor: x0.clone(), scale: s })
}

/// One tight condition per row of `x0`.
pub fn tighten_all(x0: ArrayView2<'_, f64>, s: f64) -> Result<Vec<Condition>> {
    x0.axis_iter(Axis(0))
        .map(|row| tighten(&Condition::Null, &Vector::from_view(row)?, s))
        .collect()
}

/// How a tight inversion condition carries over into edit denoising.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TightEditPolicy {
    /// Target class embedding plus the point-prompt branch of the source.
    #[default]
    Compose,
    /// Target class only.
    TightOff,
}

/// Edit-time condition for a point inverted under `source`.
pub fn edit_condition(source: &Condition, target_class: usize, policy: TightEditPolicy) -> Condition {
    match (source, policy) {
        (Condition::Tight { anchor, scale } | Condition::ClassTight { anchor, scale, .. }, TightEditPolicy::Compose) => {
            Condition::ClassTight {
                id: target_class,
                anchor: anchor.clone(),
                scale: *scale,
            }
        }
        _ => Condition::class(target_class),
    }
}

pub fn edit_conditions(sources: &[Condition], target_class: usize, policy: TightEditPolicy) -> Vec<Condition> {
    sources.iter().map(|c| edit_condition(c, target_class, policy)).collect()
}

/// What an edit starts from.
pub enum Inverted<'a> {
    Latents(&'a InversionResult),
    NoiseMaps(&'a NoiseMapSet),
}

/// Generator used to denoise an inverted latent.
#[derive(Clone, Copy)]
pub enum Sampler<'a> {
    Ddim { sched: &'a NoiseSchedule, timesteps: &'a [usize] },
    Ddpm { sched: &'a NoiseSchedule },
    Flow(FlowGrid),
}

/// Regenerates from an inverted latent under `target` conditions.
pub fn edit_by_condition_swap(
    model: &dyn Model,
    source: Inverted<'_>,
    target: &[Condition],
    sampler: Sampler<'_>,
    w: f64,
) -> Result<Array2<f64>> {
    match (source, sampler) {
        (Inverted::Latents(inv), Sampler::Ddim { sched, timesteps })
            if matches!(inv.method, Method::Ddim | Method::Renoise { .. }) =>
        {
            check_conditions(inv.latents.nrows(), target)?;
            Ok(ddim_sample(model, inv.latents.view(), sched, timesteps, target, w)?.0)
        }
        (Inverted::Latents(inv), Sampler::Flow(grid)) if inv.method == Method::Euler => {
            check_conditions(inv.latents.nrows(), target)?;
            Ok(euler_sample(model, inv.latents.view(), grid, target, w)?.0)
        }
        (Inverted::NoiseMaps(maps), Sampler::Ddpm { sched }) => {
            check_conditions(maps.x_t.nrows(), target)?;
            Ok(ddpm_sample(model, maps.x_t.view(), sched, target, DdpmNoise::Maps(&maps.maps), w)?.0)
        }
        _ => Err(Error::InvalidArgument(
            "sampler does not match the inversion method family".into(),
        )),
    }
}

/// Per-point conditions for logging: expands a shared condition to `n` rows.
pub fn expand_conditions(conds: &[Condition], n: usize) -> Vec<Condition> {
    (0..n).map(|i| condition_for(conds, i).clone()).collect()
}
