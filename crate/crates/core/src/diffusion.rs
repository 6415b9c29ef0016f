//! Discrete noise schedules, DDIM/DDPM sampling steps and classifier-free guidance.
//!
//! The inversion step follows `z_t = A_t·z_{t-1} - B_t·ε` with
//! `A_t = √(ᾱ_t/ᾱ_{t-1})` and `B_t = A_t·√(1-ᾱ_{t-1}) - √(1-ᾱ_t)`.
//! Under a linear schedule `B_t` is negative.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::Condition;
use crate::error::{invalid, Error, Result};
use crate::model::{guided_predict, require_objective, Model, Objective};
use crate::numerics::{check_dim, RngStream, Vector};
use crate::trajectory::Trajectory;

/// Which time the model sees during an inversion step `t-1 → t`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimestepConvention {
    /// The state's own time `t-1`.
    #[default]
    Current,
    /// The destination time `t`.
    Target,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleConfig {
    /// 100 steps; the usual (1e-4, 0.02) range for 1000 steps rescaled by 1000/100.
    fn default() -> Self {
        Self {
            steps: 100,
            beta_min: 1e-3,
            beta_max: 0.2,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        linear_beta_schedule(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    /// `betas[t-1]` is β_t.
    betas: Vec<f64>,
    /// `alpha_bars[t]` is ᾱ_t; `alpha_bars[0] = 1`.
    alpha_bars: Vec<f64>,
}

pub fn linear_beta_schedule(steps: usize, beta_min: f64, beta_max: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(invalid("schedule needs at least one step"));
    }
    if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
        return Err(invalid(format!(
            "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
        )));
    }
    let betas: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_min
            } else {
                beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    Ok(NoiseSchedule::from_betas(betas))
}

impl NoiseSchedule {
    fn from_betas(betas: Vec<f64>) -> Self {
        let mut alpha_bars = Vec::with_capacity(betas.len() + 1);
        alpha_bars.push(1.0);
        let mut prod = 1.0;
        for b in &betas {
            prod *= 1.0 - b;
            alpha_bars.push(prod);
        }
        Self { betas, alpha_bars }
    }

    /// Schedule with explicit `ᾱ_1..ᾱ_T` (strictly decreasing, in (0, 1)).
    pub fn from_alpha_bars(alpha_bars: &[f64]) -> Result<Self> {
        let mut prev = 1.0;
        let mut betas = Vec::with_capacity(alpha_bars.len());
        for &ab in alpha_bars {
            if !(ab > 0.0 && ab < prev) {
                return Err(invalid("alpha bars must be strictly decreasing in (0, 1)"));
            }
            betas.push(1.0 - ab / prev);
            prev = ab;
        }
        if betas.is_empty() {
            return Err(invalid("schedule needs at least one step"));
        }
        let mut all = vec![1.0];
        all.extend_from_slice(alpha_bars);
        Ok(Self { betas, alpha_bars: all })
    }

    /// Number of steps T.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        1.0 - self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bars[t]
    }

    /// `A_t = √(ᾱ_t/ᾱ_{t-1})`.
    pub fn a_coef(&self, t: usize) -> f64 {
        inversion_coefficients(self.alpha_bars[t - 1], self.alpha_bars[t]).0
    }

    /// `B_t = A_t·√(1-ᾱ_{t-1}) - √(1-ᾱ_t)`.
    pub fn b_coef(&self, t: usize) -> f64 {
        inversion_coefficients(self.alpha_bars[t - 1], self.alpha_bars[t]).1
    }

    /// DDPM posterior variance `β̃_t = (1-ᾱ_{t-1})/(1-ᾱ_t)·β_t`; zero at t=1.
    pub fn posterior_variance(&self, t: usize) -> f64 {
        (1.0 - self.alpha_bars[t - 1]) / (1.0 - self.alpha_bars[t]) * self.betas[t - 1]
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.posterior_variance(t).sqrt()
    }

    /// Time fed to the model for step index `t`.
    pub fn normalized_time(&self, t: usize) -> f64 {
        t as f64 / self.steps() as f64
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if (1..=self.steps()).contains(&t) {
            Ok(())
        } else {
            Err(Error::TimestepOutOfRange { t, max: self.steps() })
        }
    }

    /// Strided index set `0 = τ_0 < τ_1 < … < τ_S = T`.
    pub fn timesteps(&self, num_steps: usize) -> Result<Vec<usize>> {
        let total = self.steps();
        if num_steps == 0 || num_steps > total {
            return Err(invalid(format!("num_steps must be in 1..={total}")));
        }
        Ok((0..=num_steps).map(|k| k * total / num_steps).collect())
    }

    pub fn all_timesteps(&self) -> Vec<usize> {
        (0..=self.steps()).collect()
    }
}

/// `(A, B)` for an inversion step from ᾱ_prev to ᾱ_next.
pub fn inversion_coefficients(ab_prev: f64, ab_next: f64) -> (f64, f64) {
    let a = (ab_next / ab_prev).sqrt();
    let b = a * (1.0 - ab_prev).sqrt() - (1.0 - ab_next).sqrt();
    (a, b)
}

/// `A·z - B·ε`, row by row.
pub fn ddim_invert_update(z_prev: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, ab_prev: f64, ab_next: f64) -> Array2<f64> {
    let (a, b) = inversion_coefficients(ab_prev, ab_next);
    let mut out = Array2::zeros(z_prev.raw_dim());
    Zip::from(&mut out).and(z_prev).and(eps).for_each(|o, &z, &e| *o = a * z - b * e);
    out
}

/// Deterministic DDIM update: predict x̂0, then re-noise it to ᾱ_prev with the same ε.
pub fn ddim_sample_update(z_t: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, ab_t: f64, ab_prev: f64) -> Array2<f64> {
    let (sa_t, sn_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (sa_p, sn_p) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let mut out = Array2::zeros(z_t.raw_dim());
    Zip::from(&mut out).and(z_t).and(eps).for_each(|o, &z, &e| {
        let x0 = (z - sn_t * e) / sa_t;
        *o = sa_p * x0 + sn_p * e;
    });
    out
}

/// `√ᾱ_t·x0 + √(1-ᾱ_t)·ε`. `t = 0` returns `x0`.
pub fn forward_marginal(x0: &Vector, t: usize, eps: &Vector, sched: &NoiseSchedule) -> Result<Vector> {
    check_dim(x0.dim(), eps.dim())?;
    if t > sched.steps() {
        return Err(Error::TimestepOutOfRange { t, max: sched.steps() });
    }
    let ab = sched.alpha_bar(t);
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    Vector::new(
        x0.as_slice()
            .iter()
            .zip(eps.as_slice())
            .map(|(x, e)| sa * x + sn * e)
            .collect(),
    )
}

pub(crate) fn forward_marginal_rows(x0: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, ab: f64) -> Array2<f64> {
    let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = Array2::zeros(x0.raw_dim());
    Zip::from(&mut out).and(x0).and(eps).for_each(|o, &x, &e| *o = sa * x + sn * e);
    out
}

/// `eps_uncond + w·(eps_cond - eps_uncond)`; exact at `w ∈ {0, 1}`.
pub fn cfg_combine(eps_uncond: ArrayView1<'_, f64>, eps_cond: ArrayView1<'_, f64>, w: f64) -> Array1<f64> {
    assert_eq!(eps_uncond.len(), eps_cond.len(), "cfg_combine dimension mismatch");
    if w == 0.0 {
        return eps_uncond.to_owned();
    }
    if w == 1.0 {
        return eps_cond.to_owned();
    }
    let mut out = eps_uncond.to_owned();
    Zip::from(&mut out).and(eps_cond).for_each(|o, &c| *o += w * (c - *o));
    out
}

/// One deterministic DDIM step `t → t-1`.
pub fn ddim_sample_step(
    model: &dyn Model,
    z_t: ArrayView2<'_, f64>,
    t: usize,
    conds: &[Condition],
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Array2<f64>> {
    sched.check_step(t)?;
    ddim_sample_step_between(model, z_t, t, t - 1, conds, sched, w)
}

/// DDIM step between arbitrary indices `t > t_prev` (strided sampling).
pub fn ddim_sample_step_between(
    model: &dyn Model,
    z_t: ArrayView2<'_, f64>,
    t: usize,
    t_prev: usize,
    conds: &[Condition],
    sched: &NoiseSchedule,
    w: f64,
) -> Result<Array2<f64>> {
    require_objective(model, Objective::EpsilonPrediction)?;
    sched.check_step(t)?;
    if t_prev >= t {
        return Err(invalid("DDIM sampling must move to an earlier step"));
    }
    let eps = guided_predict(model, z_t, sched.normalized_time(t), conds, w)?;
    Ok(ddim_sample_update(z_t, eps.view(), sched.alpha_bar(t), sched.alpha_bar(t_prev)))
}

/// Full DDIM sampling pass along `timesteps` (ascending, starting at 0).
pub fn ddim_sample(
    model: &dyn Model,
    z_start: ArrayView2<'_, f64>,
    sched: &NoiseSchedule,
    timesteps: &[usize],
    conds: &[Condition],
    w: f64,
) -> Result<(Array2<f64>, Trajectory)> {
    require_objective(model, Objective::EpsilonPrediction)?;
    check_timesteps(sched, timesteps)?;
    let last = *timesteps.last().expect("non-empty");
    let mut z = z_start.to_owned();
    let mut traj = Trajectory::with_start(sched.normalized_time(last), z.clone());
    for pair in timesteps.windows(2).rev() {
        let (t_prev, t) = (pair[0], pair[1]);
        z = ddim_sample_step_between(model, z.view(), t, t_prev, conds, sched, w)?;
        traj.push(sched.normalized_time(t_prev), z.clone());
    }
    Ok((z, traj))
}

pub(crate) fn check_timesteps(sched: &NoiseSchedule, timesteps: &[usize]) -> Result<()> {
    if timesteps.len() < 2 || timesteps[0] != 0 {
        return Err(invalid("timesteps must start at 0 and contain at least one step"));
    }
    if timesteps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("timesteps must be strictly increasing"));
    }
    sched.check_step(*timesteps.last().expect("non-empty"))
}

/// `μ̂_t(x_t, ε̂) = (x_t - β_t/√(1-ᾱ_t)·ε̂)/√α_t`.
pub fn posterior_mean(x_t: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>, t: usize, sched: &NoiseSchedule) -> Array2<f64> {
    let k = sched.beta(t) / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv = 1.0 / sched.alpha(t).sqrt();
    let mut out = Array2::zeros(x_t.raw_dim());
    Zip::from(&mut out).and(x_t).and(eps).for_each(|o, &x, &e| *o = (x - k * e) * inv);
    out
}

/// Noise source for a DDPM step.
pub enum StepNoise<'a> {
    /// An explicit noise map. At t=1, where σ_1 = 0, the map is added
    /// unscaled as a residual correction.
    Explicit(ArrayView2<'a, f64>),
    /// Fresh N(0, I) draws; nothing is added at t=1.
    Rng(&'a mut RngStream),
}

/// One stochastic DDPM step `x_t → x_{t-1} = μ̂_t + σ_t·z_t`.
pub fn ddpm_sample_step(
    model: &dyn Model,
    x_t: ArrayView2<'_, f64>,
    t: usize,
    conds: &[Condition],
    sched: &NoiseSchedule,
    noise: StepNoise<'_>,
    w: f64,
) -> Result<Array2<f64>> {
    require_objective(model, Objective::EpsilonPrediction)?;
    sched.check_step(t)?;
    let eps = guided_predict(model, x_t, sched.normalized_time(t), conds, w)?;
    let mut x = posterior_mean(x_t, eps.view(), t, sched);
    match noise {
        StepNoise::Explicit(z) => {
            if z.raw_dim() != x.raw_dim() {
                return Err(invalid("noise map shape does not match the state"));
            }
            let sigma = if t == 1 { 1.0 } else { sched.sigma(t) };
            x.scaled_add(sigma, &z);
        }
        StepNoise::Rng(rng) => {
            if t > 1 {
                let z = rng.normal_matrix(x.nrows(), x.ncols());
                x.scaled_add(sched.sigma(t), &z);
            }
        }
    }
    Ok(x)
}

/// Noise maps for a full DDPM pass, or a stream to draw them from.
pub enum DdpmNoise<'a> {
    /// `maps[i]` is the map for step `T - i`.
    Maps(&'a [Array2<f64>]),
    Rng(&'a mut RngStream),
}

/// Full DDPM pass from `x_T` down to `x_0`.
pub fn ddpm_sample(
    model: &dyn Model,
    x_start: ArrayView2<'_, f64>,
    sched: &NoiseSchedule,
    conds: &[Condition],
    mut noise: DdpmNoise<'_>,
    w: f64,
) -> Result<(Array2<f64>, Trajectory)> {
    let total = sched.steps();
    if let DdpmNoise::Maps(maps) = &noise {
        if maps.len() != total {
            return Err(invalid(format!("expected {total} noise maps, got {}", maps.len())));
        }
    }
    let mut x = x_start.to_owned();
    let mut traj = Trajectory::with_start(1.0, x.clone());
    for (i, t) in (1..=total).rev().enumerate() {
        let step_noise = match &mut noise {
            DdpmNoise::Maps(maps) => StepNoise::Explicit(maps[i].view()),
            DdpmNoise::Rng(rng) => StepNoise::Rng(rng),
        };
        x = ddpm_sample_step(model, x.view(), t, conds, sched, step_noise, w)?;
        traj.push(sched.normalized_time(t - 1), x.clone());
    }
    Ok((x, traj))
}
