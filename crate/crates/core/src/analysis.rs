//! Reconstruction, latent-cloud, editability and trajectory metrics.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dataset::{assign_cluster, GmmSpec};
use crate::error::{invalid, Result};
use crate::numerics::{check_dim, standard_normal_nll, Vector};
use crate::trajectory::Trajectory;

/// Points farther than this many component stds from every center are flagged.
pub const OOD_RADIUS: f64 = 10.0;

pub fn recon_l2(a: &Vector, b: &Vector) -> Result<f64> {
    a.distance(b)
}

fn row_distance(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Per-row Euclidean distances.
pub fn row_distances(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
    check_dim(a.ncols(), b.ncols())?;
    check_dim(a.nrows(), b.nrows())?;
    Ok(a.rows().into_iter().zip(b.rows()).map(|(p, q)| row_distance(p, q)).collect())
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentCloudStats {
    pub mean_norm: f64,
    pub trace: f64,
    /// `||Σ̂ - I||_F`.
    pub cov_deviation: f64,
    pub mean_nll: f64,
}

/// Statistics of a latent cloud against the N(0, I) prior; unbiased covariance.
pub fn latent_cloud_stats(latents: ArrayView2<'_, f64>) -> Result<LatentCloudStats> {
    let (n, d) = latents.dim();
    if n < 2 {
        return Err(invalid("latent statistics need at least two points"));
    }
    let mu = latents.sum_axis(ndarray::Axis(0)) / n as f64;
    let mut cov = Array2::<f64>::zeros((d, d));
    let mut nll = 0.0;
    let mut norms = 0.0;
    for row in latents.rows() {
        let c = &row - &mu;
        for i in 0..d {
            for j in 0..d {
                cov[[i, j]] += c[i] * c[j];
            }
        }
        nll += standard_normal_nll(row.as_slice().expect("row-major latents"))?;
        norms += row.dot(&row).sqrt();
    }
    cov /= (n - 1) as f64;
    let mut dev = 0.0;
    for i in 0..d {
        for j in 0..d {
            let e = cov[[i, j]] - if i == j { 1.0 } else { 0.0 };
            dev += e * e;
        }
    }
    Ok(LatentCloudStats {
        mean_norm: norms / n as f64,
        trace: cov.diag().sum(),
        cov_deviation: dev.sqrt(),
        mean_nll: nll / n as f64,
    })
}

/// Whether `x` landed in the target cluster: nearest center is the target and
/// the distance is within `r·component_std`.
pub fn edit_hit(x: ArrayView1<'_, f64>, target: usize, spec: &GmmSpec, r: f64) -> Result<bool> {
    let center = spec.center_of(target)?;
    let slice = x.to_vec();
    let dist = row_distance(x, ArrayView1::from(center.as_slice()));
    Ok(dist <= r * spec.component_std && assign_cluster(&slice, spec) == target)
}

/// Fraction of rows that are edit hits for `target`.
pub fn edit_success_rate(edited: ArrayView2<'_, f64>, target: usize, spec: &GmmSpec, r: f64) -> Result<f64> {
    if edited.nrows() == 0 {
        return Err(invalid("edit success rate of an empty set"));
    }
    if !(r > 0.0) {
        return Err(invalid("radius multiplier must be positive"));
    }
    check_dim(spec.dim(), edited.ncols())?;
    let mut hits = 0usize;
    for row in edited.rows() {
        hits += edit_hit(row, target, spec, r)? as usize;
    }
    Ok(hits as f64 / edited.nrows() as f64)
}

/// Distance to the nearest mixture center, in component stds.
pub fn distance_to_support(x: ArrayView1<'_, f64>, spec: &GmmSpec) -> f64 {
    spec.centers
        .iter()
        .map(|c| row_distance(x, ArrayView1::from(c.as_slice())))
        .fold(f64::INFINITY, f64::min)
        / spec.component_std
}

/// Per-step offsets between an inversion and a denoising trajectory.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryOffsets {
    /// Ascending.
    pub times: Vec<f64>,
    /// `offsets[[k, i]]`: distance of point `i` at `times[k]`.
    pub offsets: Array2<f64>,
}

impl TrajectoryOffsets {
    pub fn mean_per_step(&self) -> Vec<f64> {
        self.offsets.rows().into_iter().map(|r| r.mean().unwrap_or(0.0)).collect()
    }

    pub fn max(&self) -> f64 {
        self.offsets.iter().copied().fold(0.0, f64::max)
    }
}

fn ascending(tr: &Trajectory) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..tr.len()).collect();
    idx.sort_by(|&a, &b| tr.times[a].total_cmp(&tr.times[b]));
    idx
}

/// Pairs states of two trajectories by time stamp.
pub fn trajectory_offsets(inv: &Trajectory, den: &Trajectory) -> Result<TrajectoryOffsets> {
    if inv.len() != den.len() || inv.is_empty() {
        return Err(invalid("trajectories must be non-empty and of equal length"));
    }
    if inv.num_points() != den.num_points() {
        return Err(invalid("trajectories track different numbers of points"));
    }
    let (ia, ib) = (ascending(inv), ascending(den));
    let mut times = Vec::with_capacity(ia.len());
    let mut offsets = Array2::zeros((ia.len(), inv.num_points()));
    for (k, (&a, &b)) in ia.iter().zip(&ib).enumerate() {
        if (inv.times[a] - den.times[b]).abs() > 1e-9 {
            return Err(invalid("trajectory time grids are not aligned"));
        }
        times.push(inv.times[a]);
        let d = row_distances(inv.states[a].view(), den.states[b].view())?;
        offsets.row_mut(k).assign(&ndarray::Array1::from(d));
    }
    Ok(TrajectoryOffsets { times, offsets })
}

/// Identifies one row of a summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLabel {
    pub method: String,
    pub condition: String,
    pub scale: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub index: usize,
    pub l2: f64,
    pub latent: Vec<f64>,
    pub latent_nll: f64,
    pub edit_hit: Option<bool>,
    pub out_of_distribution: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub count: usize,
    pub mean_l2: f64,
    pub median_l2: f64,
    pub mean_latent_nll: f64,
    pub latent_mean_norm: f64,
    pub latent_trace: f64,
    pub latent_cov_deviation: f64,
    pub edit_success_rate: Option<f64>,
    pub out_of_distribution: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: RunLabel,
    pub aggregates: Aggregates,
    /// Mean offset per step, ascending in time.
    pub trajectory_offsets: Option<Vec<f64>>,
    pub points: Vec<PointRecord>,
}

/// Inputs to a [`MetricsReport`].
pub struct RunOutputs<'a> {
    pub inputs: ArrayView2<'a, f64>,
    pub reconstructions: ArrayView2<'a, f64>,
    pub latents: ArrayView2<'a, f64>,
    /// Edited points and the target class.
    pub edits: Option<(ArrayView2<'a, f64>, usize)>,
    pub offsets: Option<&'a TrajectoryOffsets>,
}

impl MetricsReport {
    pub fn build(label: RunLabel, run: RunOutputs<'_>, spec: &GmmSpec, radius: f64) -> Result<Self> {
        let l2 = row_distances(run.inputs, run.reconstructions)?;
        check_dim(run.inputs.nrows(), run.latents.nrows())?;
        let mut points = Vec::with_capacity(l2.len());
        for (i, (l2, latent)) in l2.into_iter().zip(run.latents.rows()).enumerate() {
            let edit_hit = match run.edits {
                Some((edited, target)) => Some(edit_hit(edited.row(i), target, spec, radius)?),
                None => None,
            };
            let latent = latent.to_vec();
            points.push(PointRecord {
                index: i,
                l2,
                latent_nll: standard_normal_nll(&latent)?,
                latent,
                edit_hit,
                out_of_distribution: distance_to_support(run.inputs.row(i), spec) > OOD_RADIUS,
            });
        }
        let aggregates = aggregate(&points)?;
        Ok(Self {
            label,
            aggregates,
            trajectory_offsets: run.offsets.map(TrajectoryOffsets::mean_per_step),
            points,
        })
    }

    /// Recomputes the aggregates from the per-point records.
    pub fn verify(&self) -> Result<()> {
        if aggregate(&self.points)? == self.aggregates {
            Ok(())
        } else {
            Err(invalid("report aggregates disagree with its per-point records"))
        }
    }
}

fn aggregate(points: &[PointRecord]) -> Result<Aggregates> {
    if points.is_empty() {
        return Err(invalid("report needs at least one point"));
    }
    let l2: Vec<f64> = points.iter().map(|p| p.l2).collect();
    let nll: Vec<f64> = points.iter().map(|p| p.latent_nll).collect();
    let d = points[0].latent.len();
    let mut latents = Array2::zeros((points.len(), d));
    for (mut row, p) in latents.rows_mut().into_iter().zip(points) {
        check_dim(d, p.latent.len())?;
        row.assign(&ArrayView1::from(p.latent.as_slice()));
    }
    let cloud = if points.len() >= 2 {
        latent_cloud_stats(latents.view())?
    } else {
        LatentCloudStats { mean_norm: latents.row(0).dot(&latents.row(0)).sqrt(), trace: 0.0, cov_deviation: 0.0, mean_nll: nll[0] }
    };
    let hits: Vec<bool> = points.iter().filter_map(|p| p.edit_hit).collect();
    let edit_success_rate = if hits.len() == points.len() {
        Some(hits.iter().filter(|h| **h).count() as f64 / hits.len() as f64)
    } else {
        None
    };
    Ok(Aggregates {
        count: points.len(),
        mean_l2: mean(&l2),
        median_l2: median(&l2),
        mean_latent_nll: mean(&nll),
        latent_mean_norm: cloud.mean_norm,
        latent_trace: cloud.trace,
        latent_cov_deviation: cloud.cov_deviation,
        edit_success_rate,
        out_of_distribution: points.iter().filter(|p| p.out_of_distribution).count(),
    })
}
