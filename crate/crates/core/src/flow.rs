//! Flow-matching targets and the Euler sampler/inverter.
//!
//! The prior sits at t=0 and the data at t=1.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::Condition;
use crate::error::{invalid, Result};
use crate::model::{guided_predict, require_objective, Model, Objective};
use crate::numerics::{check_dim, Vector};
use crate::trajectory::Trajectory;

/// Uniform grid `0 = t_0 < … < t_N = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowGrid {
    steps: usize,
}

impl Default for FlowGrid {
    fn default() -> Self {
        Self { steps: 100 }
    }
}

impl FlowGrid {
    pub fn new(steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(invalid("flow grid needs at least one step"));
        }
        Ok(Self { steps })
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn h(&self) -> f64 {
        1.0 / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.steps as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.time(k)).collect()
    }
}

/// `(x_t, u) = ((1-t)·x0 + t·x1, x1 - x0)`.
pub fn cfm_pair(x0: &Vector, x1: &Vector, t: f64) -> Result<(Vector, Vector)> {
    check_dim(x0.dim(), x1.dim())?;
    if !(0.0..=1.0).contains(&t) {
        return Err(invalid(format!("flow time must lie in [0, 1], got {t}")));
    }
    let (a, b) = (x0.as_slice(), x1.as_slice());
    let xt = a.iter().zip(b).map(|(p, q)| (1.0 - t) * p + t * q).collect();
    let u = a.iter().zip(b).map(|(p, q)| q - p).collect();
    Ok((Vector::new(xt)?, Vector::new(u)?))
}

/// Integrates prior → data with `x_{k+1} = x_k + h·v(x_k, t_k)`.
pub fn euler_sample(
    model: &dyn Model,
    x: ArrayView2<'_, f64>,
    grid: FlowGrid,
    conds: &[Condition],
    w: f64,
) -> Result<(Array2<f64>, Trajectory)> {
    require_objective(model, Objective::FlowMatching)?;
    let h = grid.h();
    let mut state = x.to_owned();
    let mut traj = Trajectory::with_start(0.0, state.clone());
    for k in 0..grid.steps() {
        let v = guided_predict(model, state.view(), grid.time(k), conds, w)?;
        state.scaled_add(h, &v);
        traj.push(grid.time(k + 1), state.clone());
    }
    Ok((state, traj))
}

/// Integrates data → prior with `x_{k-1} = x_k - h·v(x_k, t_k)`.
pub fn euler_invert(
    model: &dyn Model,
    x: ArrayView2<'_, f64>,
    grid: FlowGrid,
    conds: &[Condition],
    w: f64,
) -> Result<(Array2<f64>, Trajectory)> {
    require_objective(model, Objective::FlowMatching)?;
    let h = grid.h();
    let mut state = x.to_owned();
    let mut traj = Trajectory::with_start(1.0, state.clone());
    for k in (1..=grid.steps()).rev() {
        let v = guided_predict(model, state.view(), grid.time(k), conds, w)?;
        state.scaled_add(-h, &v);
        traj.push(grid.time(k - 1), state.clone());
    }
    Ok((state, traj))
}
