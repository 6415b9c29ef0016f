//! Seeded randomness, the `Vector` point type and Gaussian densities.

use std::f64::consts::PI;
use std::fmt;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Deterministic random stream backed by ChaCha8.
///
/// Streams created from the same seed and stream id produce the same draws
/// on every platform. Distinct stream ids select disjoint ChaCha keystreams
/// (2^64 blocks each), so split streams never overlap.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    /// Child stream for a labelled sub-task (per experiment, per batch, ...).
    pub fn split(&self, label: u64) -> Self {
        Self::with_stream(self.seed, splitmix64(self.stream ^ splitmix64(label)))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform index in `0..n` (multiply-shift reduction).
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        ((self.inner.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Box–Muller; the second value of each pair is kept for the next call.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        // 1 - u lies in (0, 1], keeping the log finite.
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || self.standard_normal())
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// A point in R^d with finite components.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Vector(Vec<f64>);

impl Vector {
    pub fn new(components: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(invalid("vector must have at least one component"));
        }
        if components.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("vector"));
        }
        Ok(Self(components))
    }

    pub fn zeros(d: usize) -> Self {
        assert!(d >= 1, "dimension must be at least 1");
        Self(vec![0.0; d])
    }

    pub fn from_view(view: ArrayView1<'_, f64>) -> Result<Self> {
        Self::new(view.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_array(&self) -> Array1<f64> {
        Array1::from(self.0.clone())
    }

    pub fn norm_squared(&self) -> f64 {
        self.0.iter().map(|c| c * c).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_squared().sqrt()
    }

    pub fn distance(&self, other: &Vector) -> Result<f64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self
            .0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }
}

impl TryFrom<Vec<f64>> for Vector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<Vector> for Vec<f64> {
    fn from(v: Vector) -> Self {
        v.0
    }
}

impl fmt::Debug for Vector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("Vector").field(&self.0).finish()
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}

/// Stack vectors as the rows of an `n × d` matrix.
pub fn stack_rows(points: &[Vector]) -> Result<Array2<f64>> {
    let d = points.first().map(Vector::dim).unwrap_or(0);
    let mut out = Array2::zeros((points.len(), d));
    for (mut row, p) in out.rows_mut().into_iter().zip(points) {
        check_dim(d, p.dim())?;
        row.assign(&ArrayView1::from(p.as_slice()));
    }
    Ok(out)
}

pub fn rows_to_vectors(points: &Array2<f64>) -> Result<Vec<Vector>> {
    points.rows().into_iter().map(Vector::from_view).collect()
}

/// A draw from N(0, I_d).
pub fn sample_standard_normal(rng: &mut RngStream, d: usize) -> Result<Vector> {
    if d == 0 {
        return Err(invalid("dimension must be at least 1"));
    }
    Ok(Vector((0..d).map(|_| rng.standard_normal()).collect()))
}

/// Negative log-density of N(0, I_d): `(d/2)·log(2π) + ||x||²/2`.
pub fn standard_normal_nll(x: &[f64]) -> Result<f64> {
    if x.iter().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite("nll input"));
    }
    let d = x.len() as f64;
    Ok(0.5 * d * (2.0 * PI).ln() + 0.5 * x.iter().map(|c| c * c).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_moments_match_standard_gaussian() {
        let mut rng = RngStream::new(7);
        let n = 100_000;
        let draws: Vec<Vector> = (0..n)
            .map(|_| sample_standard_normal(&mut rng, 2).unwrap())
            .collect();
        let mean: Vec<f64> = (0..2)
            .map(|j| draws.iter().map(|v| v[j]).sum::<f64>() / n as f64)
            .collect();
        for m in &mean {
            assert!(m.abs() < 0.02, "mean {m}");
        }
        let mut cov = [[0.0; 2]; 2];
        for v in &draws {
            for a in 0..2 {
                for b in 0..2 {
                    cov[a][b] += (v[a] - mean[a]) * (v[b] - mean[b]);
                }
            }
        }
        let mut frob = 0.0;
        for a in 0..2 {
            for b in 0..2 {
                let c = cov[a][b] / (n - 1) as f64;
                let target = if a == b { 1.0 } else { 0.0 };
                frob += (c - target) * (c - target);
            }
        }
        assert!(frob.sqrt() < 0.05, "frobenius deviation {}", frob.sqrt());
    }

    #[test]
    fn same_seed_same_draws() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..100 {
            assert_eq!(
                sample_standard_normal(&mut a, 2).unwrap(),
                sample_standard_normal(&mut b, 2).unwrap()
            );
        }
    }

    #[test]
    fn split_streams_differ() {
        let root = RngStream::new(1);
        let mut a = root.split(0);
        let mut b = root.split(1);
        let xa: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let xb: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_ne!(xa, xb);
        assert_eq!(root.split(3).next_u64(), root.split(3).next_u64());
    }

    #[test]
    fn zero_dimension_rejected() {
        assert!(sample_standard_normal(&mut RngStream::new(0), 0).is_err());
        assert!(Vector::new(vec![]).is_err());
        assert!(Vector::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn nll_analytic_values() {
        let l2pi = (2.0 * PI).ln();
        assert!((standard_normal_nll(&[0.0, 0.0]).unwrap() - 1.837877).abs() < 1e-6);
        assert!((standard_normal_nll(&[0.0, 0.0]).unwrap() - l2pi).abs() < 1e-15);
        assert!((standard_normal_nll(&[1.0, 0.0]).unwrap() - 2.337877).abs() < 1e-6);
        assert!((standard_normal_nll(&[3.0, 4.0]).unwrap() - 14.337877).abs() < 1e-6);
        assert!(standard_normal_nll(&[f64::INFINITY, 0.0]).is_err());
    }

    proptest::proptest! {
        #[test]
        fn nll_excess_is_half_squared_norm(x in -50.0f64..50.0, y in -50.0f64..50.0) {
            let excess = standard_normal_nll(&[x, y]).unwrap() - standard_normal_nll(&[0.0, 0.0]).unwrap();
            let expected = 0.5 * (x * x + y * y);
            proptest::prop_assert!((excess - expected).abs() <= 1e-9 * (1.0 + expected));
            proptest::prop_assert!(excess >= 0.0);
        }
    }
}
