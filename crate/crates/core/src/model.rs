//! The model interface shared by the samplers and inverters.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::dataset::Condition;
use crate::diffusion::cfg_combine;
use crate::error::{invalid, Error, Result};

/// What the network regresses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Velocity `x1 - x0` of the linear interpolation path (prior at t=0).
    FlowMatching,
    /// The Gaussian noise mixed into `x_t`.
    EpsilonPrediction,
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Objective::FlowMatching => "flow_matching",
            Objective::EpsilonPrediction => "epsilon_prediction",
        })
    }
}

/// A conditional vector field over R^d, evaluated on batches of points.
pub trait Model: Sync {
    fn objective(&self) -> Objective;

    fn dim(&self) -> usize;

    /// Evaluates every row of `x` at normalized time `t`.
    ///
    /// `conds` holds either one condition per row or a single condition
    /// shared by all rows.
    fn predict(&self, x: ArrayView2<'_, f64>, t: f64, conds: &[Condition]) -> Result<Array2<f64>>;
}

pub fn require_objective(model: &dyn Model, expected: Objective) -> Result<()> {
    let found = model.objective();
    if found == expected {
        Ok(())
    } else {
        Err(Error::ObjectiveMismatch { expected, found })
    }
}

pub(crate) fn check_conditions(n: usize, conds: &[Condition]) -> Result<()> {
    if conds.len() == n || conds.len() == 1 {
        Ok(())
    } else {
        Err(invalid(format!(
            "expected 1 or {n} conditions, got {}",
            conds.len()
        )))
    }
}

pub(crate) fn condition_for(conds: &[Condition], row: usize) -> &Condition {
    if conds.len() == 1 {
        &conds[0]
    } else {
        &conds[row]
    }
}

/// Prediction combined with classifier-free guidance at weight `w`.
///
/// `w = 1` evaluates the conditional branch only.
pub fn guided_predict(
    model: &dyn Model,
    x: ArrayView2<'_, f64>,
    t: f64,
    conds: &[Condition],
    w: f64,
) -> Result<Array2<f64>> {
    let cond = model.predict(x, t, conds)?;
    if w == 1.0 {
        return Ok(cond);
    }
    let uncond = model.predict(x, t, &[Condition::Null])?;
    let mut out = Array2::zeros(cond.raw_dim());
    Zip::from(out.rows_mut())
        .and(uncond.rows())
        .and(cond.rows())
        .for_each(|mut o, u, c| {
            o.assign(&cfg_combine(u, c, w));
        });
    Ok(out)
}

/// Wraps a per-point closure as a [`Model`]; used for analytic fields.
pub struct FnModel<F> {
    objective: Objective,
    dim: usize,
    field: F,
}

impl<F> FnModel<F>
where
    F: Fn(ArrayView1<'_, f64>, f64, &Condition) -> Array1<f64> + Sync,
{
    pub fn new(objective: Objective, dim: usize, field: F) -> Self {
        Self {
            objective,
            dim,
            field,
        }
    }
}

impl<F> Model for FnModel<F>
where
    F: Fn(ArrayView1<'_, f64>, f64, &Condition) -> Array1<f64> + Sync,
{
    fn objective(&self) -> Objective {
        self.objective
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn predict(&self, x: ArrayView2<'_, f64>, t: f64, conds: &[Condition]) -> Result<Array2<f64>> {
        crate::numerics::check_dim(self.dim, x.ncols())?;
        check_conditions(x.nrows(), conds)?;
        let mut out = Array2::zeros(x.raw_dim());
        for (i, (mut o, row)) in out.rows_mut().into_iter().zip(x.rows()).enumerate() {
            let v = (self.field)(row, t, condition_for(conds, i));
            crate::numerics::check_dim(self.dim, v.len())?;
            o.assign(&v);
        }
        Ok(out)
    }
}
