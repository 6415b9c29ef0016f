//! Ordered states of a batch of points along a sampling or inversion path.

use std::io::Write;

use ndarray::Array2;

use crate::error::{invalid, Result};
use crate::numerics::{check_dim, Vector};

/// `states[k]` holds every point (rows) at time `times[k]`, in traversal order.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Array2<f64>>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_start(t: f64, state: Array2<f64>) -> Self {
        Self {
            times: vec![t],
            states: vec![state],
        }
    }

    pub fn push(&mut self, t: f64, state: Array2<f64>) {
        self.times.push(t);
        self.states.push(state);
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn num_points(&self) -> usize {
        self.states.first().map(|s| s.nrows()).unwrap_or(0)
    }

    pub fn first(&self) -> Option<&Array2<f64>> {
        self.states.first()
    }

    pub fn last(&self) -> Option<&Array2<f64>> {
        self.states.last()
    }

    /// Path of a single point as `(time, state)` pairs.
    pub fn point(&self, i: usize) -> Result<Vec<(f64, Vector)>> {
        if i >= self.num_points() {
            return Err(invalid(format!("point {i} out of range")));
        }
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| Ok((t, Vector::from_view(s.row(i))?)))
            .collect()
    }

    pub fn reversed(&self) -> Self {
        Self {
            times: self.times.iter().rev().copied().collect(),
            states: self.states.iter().rev().cloned().collect(),
        }
    }

    /// Keeps only the listed points.
    pub fn select(&self, points: &[usize]) -> Self {
        Self {
            times: self.times.clone(),
            states: self
                .states
                .iter()
                .map(|s| s.select(ndarray::Axis(0), points))
                .collect(),
        }
    }

    /// Writes one point's path as CSV rows `step,t,x0,x1,...`.
    pub fn write_point_csv<W: Write>(&self, out: W, point: usize) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let path = self.point(point)?;
        let d = path.first().map(|(_, v)| v.dim()).unwrap_or(0);
        let mut header = vec!["step".to_string(), "t".to_string()];
        header.extend((0..d).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for (k, (t, v)) in path.iter().enumerate() {
            let mut rec = vec![k.to_string(), t.to_string()];
            rec.extend(v.as_slice().iter().map(|c| c.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes every point's path, prefixed by a `point` column:
    /// `point,step,t,x0,x1,...`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let d = self.states.first().map(|s| s.ncols()).unwrap_or(0);
        let mut header = vec!["point".to_string(), "step".to_string(), "t".to_string()];
        header.extend((0..d).map(|j| format!("x{j}")));
        w.write_record(&header)?;
        for i in 0..self.num_points() {
            for (k, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
                check_dim(d, s.ncols())?;
                let mut rec = vec![i.to_string(), k.to_string(), t.to_string()];
                rec.extend(s.row(i).iter().map(|c| c.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
