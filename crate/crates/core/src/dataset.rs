//! The toy posterior (a mixture of isotropic Gaussians), labels and
//! conditioning signals.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::numerics::{check_dim, RngStream, Vector};

/// Isotropic Gaussian mixture with uniform component weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GmmSpec {
    pub centers: Vec<Vector>,
    pub component_std: f64,
    /// Class label of each center; labels start at 1 (0 is the null condition).
    pub class_ids: Vec<usize>,
}

impl Default for GmmSpec {
    /// Five unit Gaussians at `(5·c, 10)` for `c ∈ {-2, -1, 0, 1, 2}`, labelled 1..=5.
    fn default() -> Self {
        let centers = (-2..=2)
            .map(|c| Vector::new(vec![5.0 * c as f64, 10.0]).expect("finite"))
            .collect();
        Self {
            centers,
            component_std: 1.0,
            class_ids: (1..=5).collect(),
        }
    }
}

impl GmmSpec {
    pub fn validate(&self) -> Result<()> {
        if self.centers.is_empty() {
            return Err(invalid("mixture has no components"));
        }
        if self.class_ids.len() != self.centers.len() {
            return Err(invalid("class_ids must align with centers"));
        }
        if !(self.component_std.is_finite() && self.component_std > 0.0) {
            return Err(invalid("component_std must be positive"));
        }
        let d = self.dim();
        for c in &self.centers {
            check_dim(d, c.dim())?;
        }
        for (i, a) in self.centers.iter().enumerate() {
            for b in &self.centers[i + 1..] {
                if a == b {
                    return Err(invalid("mixture centers must be distinct"));
                }
            }
        }
        for (i, id) in self.class_ids.iter().enumerate() {
            if *id == 0 || self.class_ids[..i].contains(id) {
                return Err(invalid("class ids must be distinct and at least 1"));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.centers.first().map(Vector::dim).unwrap_or(0)
    }

    pub fn num_components(&self) -> usize {
        self.centers.len()
    }

    /// Largest class id; the network's class table has this many rows plus the null row.
    pub fn max_class_id(&self) -> usize {
        self.class_ids.iter().copied().max().unwrap_or(0)
    }

    pub fn center_of(&self, class_id: usize) -> Result<&Vector> {
        self.class_ids
            .iter()
            .position(|&c| c == class_id)
            .map(|i| &self.centers[i])
            .ok_or_else(|| invalid(format!("unknown class id {class_id}")))
    }

    /// Per-coordinate mean of the mixture.
    pub fn mean(&self) -> Array1<f64> {
        let k = self.centers.len() as f64;
        let mut m = Array1::zeros(self.dim());
        for c in &self.centers {
            m += &c.to_array();
        }
        m / k
    }

    /// Per-coordinate standard deviation of the mixture.
    pub fn std(&self) -> Array1<f64> {
        let mean = self.mean();
        let k = self.centers.len() as f64;
        let mut var = Array1::from_elem(self.dim(), self.component_std * self.component_std);
        for c in &self.centers {
            let diff = c.to_array() - &mean;
            var += &(&diff * &diff / k);
        }
        var.mapv(f64::sqrt)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPoint {
    pub x: Vector,
    pub class_id: usize,
}

/// Draws `n` points by picking a component uniformly, then adding isotropic noise.
pub fn sample_posterior(spec: &GmmSpec, rng: &mut RngStream, n: usize) -> Result<Vec<LabeledPoint>> {
    spec.validate()?;
    if n == 0 {
        return Err(invalid("sample count must be at least 1"));
    }
    let d = spec.dim();
    (0..n)
        .map(|_| {
            let k = rng.index(spec.num_components());
            let x: Vec<f64> = spec.centers[k]
                .as_slice()
                .iter()
                .map(|c| c + spec.component_std * rng.standard_normal())
                .collect();
            debug_assert_eq!(x.len(), d);
            Ok(LabeledPoint {
                x: Vector::new(x)?,
                class_id: spec.class_ids[k],
            })
        })
        .collect()
}

/// `n` draws from the single component labelled `class_id`, as matrix rows.
pub fn sample_component(
    spec: &GmmSpec,
    class_id: usize,
    rng: &mut RngStream,
    n: usize,
) -> Result<Array2<f64>> {
    spec.validate()?;
    let center = spec.center_of(class_id)?.to_array();
    let mut x = rng.normal_matrix(n, spec.dim()) * spec.component_std;
    x += &center;
    Ok(x)
}

/// Index-free nearest-center classification; ties go to the earliest center.
pub fn assign_cluster(x: &[f64], spec: &GmmSpec) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in spec.centers.iter().enumerate() {
        let d: f64 = c
            .as_slice()
            .iter()
            .zip(x)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    spec.class_ids[best]
}

pub fn points_matrix(points: &[LabeledPoint]) -> Result<Array2<f64>> {
    let xs: Vec<Vector> = points.iter().map(|p| p.x.clone()).collect();
    crate::numerics::stack_rows(&xs)
}

/// Conditioning signal fed to the network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Condition {
    Null,
    Class { id: usize },
    /// The point-prompt branch: `anchor` in data coordinates, scaled by `scale`.
    Tight { anchor: Vector, scale: f64 },
    /// Class embedding with the point-prompt branch added on top; used when
    /// editing a tightly inverted point toward `id`.
    ClassTight { id: usize, anchor: Vector, scale: f64 },
}

impl Condition {
    pub fn class(id: usize) -> Self {
        Condition::Class { id }
    }

    pub fn mode(&self) -> ConditionMode {
        match self {
            Condition::Null => ConditionMode::Null,
            Condition::Class { .. } => ConditionMode::Class,
            Condition::Tight { .. } => ConditionMode::Tight,
            Condition::ClassTight { .. } => ConditionMode::ClassTight,
        }
    }

    pub fn scale(&self) -> f64 {
        match self {
            Condition::Tight { scale, .. } | Condition::ClassTight { scale, .. } => *scale,
            _ => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionMode {
    Null,
    Class,
    Tight,
    ClassTight,
}

impl ConditionMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionMode::Null => "null",
            ConditionMode::Class => "class",
            ConditionMode::Tight => "tight",
            ConditionMode::ClassTight => "class_tight",
        }
    }
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale >= 0.0 {
        Ok(())
    } else {
        Err(invalid(format!("scale must be finite and non-negative, got {scale}")))
    }
}

pub fn make_condition(
    mode: ConditionMode,
    label: Option<usize>,
    anchor: Option<Vector>,
    scale: Option<f64>,
) -> Result<Condition> {
    let need_label = || label.ok_or_else(|| invalid("class condition requires a label"));
    let need_anchor = || anchor.clone().ok_or_else(|| invalid("tight condition requires an anchor"));
    let need_scale = || {
        let s = scale.ok_or_else(|| invalid("tight condition requires a scale"))?;
        check_scale(s)?;
        Ok::<_, Error>(s)
    };
    match mode {
        ConditionMode::Null => Ok(Condition::Null),
        ConditionMode::Class => {
            let id = need_label()?;
            if id == 0 {
                return Err(invalid("class labels start at 1"));
            }
            Ok(Condition::Class { id })
        }
        ConditionMode::Tight => Ok(Condition::Tight {
            anchor: need_anchor()?,
            scale: need_scale()?,
        }),
        ConditionMode::ClassTight => Ok(Condition::ClassTight {
            id: need_label()?,
            anchor: need_anchor()?,
            scale: need_scale()?,
        }),
    }
}

/// Writes points as CSV with header `x0,x1,...,class_id`.
pub fn write_points_csv<W: Write>(out: W, points: &[LabeledPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let d = points.first().map(|p| p.x.dim()).unwrap_or(0);
    let mut header: Vec<String> = (0..d).map(|j| format!("x{j}")).collect();
    header.push("class_id".into());
    w.write_record(&header)?;
    for p in points {
        check_dim(d, p.x.dim())?;
        let mut rec: Vec<String> = p.x.as_slice().iter().map(|v| v.to_string()).collect();
        rec.push(p.class_id.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_points_csv<R: Read>(input: R) -> Result<Vec<LabeledPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let d = headers.len().checked_sub(1).filter(|d| *d > 0).ok_or_else(|| {
        invalid("points CSV needs at least one coordinate column and class_id")
    })?;
    if headers.get(d) != Some("class_id") {
        return Err(invalid("last points CSV column must be class_id"));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let x = (0..d)
            .map(|j| {
                rec[j]
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| invalid(format!("bad coordinate {:?}: {e}", &rec[j])))
            })
            .collect::<Result<Vec<_>>>()?;
        let class_id = rec[d]
            .trim()
            .parse::<usize>()
            .map_err(|e| invalid(format!("bad class id {:?}: {e}", &rec[d])))?;
        out.push(LabeledPoint {
            x: Vector::new(x)?,
            class_id,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: f64, y: f64) -> Vector {
        Vector::new(vec![x, y]).unwrap()
    }

    #[test]
    fn default_spec_layout() {
        let spec = GmmSpec::default();
        spec.validate().unwrap();
        let xs: Vec<f64> = spec.centers.iter().map(|c| c[0]).collect();
        assert_eq!(xs, vec![-10.0, -5.0, 0.0, 5.0, 10.0]);
        assert!(spec.centers.iter().all(|c| c[1] == 10.0));
        assert_eq!(spec.component_std, 1.0);
        assert_eq!(spec.mean().to_vec(), vec![0.0, 10.0]);
        let std = spec.std();
        assert!((std[0] - 51.0f64.sqrt()).abs() < 1e-12);
        assert!((std[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn per_component_means_near_centers() {
        let spec = GmmSpec::default();
        let pts = sample_posterior(&spec, &mut RngStream::new(3), 10_000).unwrap();
        for (k, center) in spec.centers.iter().enumerate() {
            let members: Vec<&LabeledPoint> =
                pts.iter().filter(|p| p.class_id == spec.class_ids[k]).collect();
            let n = members.len() as f64;
            for j in 0..2 {
                let m = members.iter().map(|p| p.x[j]).sum::<f64>() / n;
                assert!((m - center[j]).abs() < 0.1, "class {k} coord {j}: {m}");
            }
        }
    }

    #[test]
    fn class_frequencies_within_binomial_bounds() {
        let spec = GmmSpec::default();
        let n = 50_000;
        let pts = sample_posterior(&spec, &mut RngStream::new(11), n).unwrap();
        let p = 0.2;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for id in 1..=5 {
            let count = pts.iter().filter(|q| q.class_id == id).count() as f64;
            assert!((count - n as f64 * p).abs() < 3.0 * sd, "class {id}: {count}");
        }
    }

    #[test]
    fn degenerate_component_stays_at_center() {
        let spec = GmmSpec {
            centers: vec![v(0.0, 0.0)],
            component_std: 1e-6,
            class_ids: vec![1],
        };
        let pts = sample_posterior(&spec, &mut RngStream::new(0), 1000).unwrap();
        assert!(pts.iter().all(|p| p.x.norm() < 1e-4));
    }

    #[test]
    fn sampling_is_deterministic() {
        let spec = GmmSpec::default();
        let a = sample_posterior(&spec, &mut RngStream::new(9), 1).unwrap();
        let b = sample_posterior(&spec, &mut RngStream::new(9), 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_spec_and_zero_count_rejected() {
        let empty = GmmSpec {
            centers: vec![],
            component_std: 1.0,
            class_ids: vec![],
        };
        assert!(sample_posterior(&empty, &mut RngStream::new(0), 5).is_err());
        assert!(sample_posterior(&GmmSpec::default(), &mut RngStream::new(0), 0).is_err());
    }

    #[test]
    fn cluster_assignment_and_ties() {
        let spec = GmmSpec::default();
        assert_eq!(assign_cluster(&[10.0, 10.0], &spec), 5);
        assert_eq!(assign_cluster(&[2.4, 10.0], &spec), 3);
        assert_eq!(assign_cluster(&[2.6, 10.0], &spec), 4);
        assert_eq!(assign_cluster(&[2.5, 10.0], &spec), 3);
    }

    #[test]
    fn assignment_recovers_component_labels() {
        let spec = GmmSpec::default();
        let pts = sample_posterior(&spec, &mut RngStream::new(5), 20_000).unwrap();
        let hits = pts
            .iter()
            .filter(|p| assign_cluster(p.x.as_slice(), &spec) == p.class_id)
            .count();
        assert!(hits as f64 / pts.len() as f64 >= 0.99);
    }

    #[test]
    fn make_condition_variants() {
        assert_eq!(
            make_condition(ConditionMode::Null, None, None, None).unwrap(),
            Condition::Null
        );
        assert_eq!(
            make_condition(ConditionMode::Class, Some(5), None, None).unwrap(),
            Condition::Class { id: 5 }
        );
        assert_eq!(
            make_condition(ConditionMode::Tight, None, Some(v(10.2, 9.7)), Some(0.4)).unwrap(),
            Condition::Tight {
                anchor: v(10.2, 9.7),
                scale: 0.4
            }
        );
        assert!(make_condition(ConditionMode::Class, None, None, None).is_err());
        assert!(make_condition(ConditionMode::Tight, None, None, Some(0.4)).is_err());
        assert!(make_condition(ConditionMode::Tight, None, Some(v(0.0, 0.0)), None).is_err());
        assert!(make_condition(ConditionMode::Tight, None, Some(v(0.0, 0.0)), Some(-1.0)).is_err());
    }

    #[test]
    fn points_csv_header_and_rows() {
        let pts = vec![
            LabeledPoint { x: v(1.5, -2.0), class_id: 3 },
            LabeledPoint { x: v(0.0, 10.0), class_id: 1 },
        ];
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("x0,x1,class_id\n1.5,-2,3\n"));
        assert_eq!(read_points_csv(buf.as_slice()).unwrap(), pts);
    }
}
