//! Local Outlier Factor over dense vectors with Euclidean distance.
//!
//! Definitions, for a point `a` and neighbor count `k`:
//!
//! * `k-distance(a)`: distance to the k-th nearest other point.
//! * `N_k(a)`: every point no farther than `k-distance(a)`; ties are kept, so
//!   the neighborhood can hold more than `k` points.
//! * `reach-dist(a, b) = max(k-distance(b), d(a, b))`
//! * `lrd(a) = 1 / mean_{b in N_k(a)} reach-dist(a, b)`
//! * `LOF(a) = mean_{b in N_k(a)} lrd(b) / lrd(a)`
//!
//! A mean reachability distance of exactly zero (duplicated points) is
//! replaced by [`DISTANCE_FLOOR`] before inverting, which gives duplicates a
//! LOF of 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DISTANCE_FLOOR: f64 = 1e-10;
pub const DEFAULT_NEIGHBORS: usize = 20;
/// Training scores above this quantile are anomalous (10% contamination).
pub const DEFAULT_QUANTILE: f64 = 0.9;

/// A finite, non-empty real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DenseVector(Vec<f64>);

impl DenseVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionMismatch { expected: 1, found: 0 });
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector component {v}")));
        }
        Ok(DenseVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl TryFrom<Vec<f64>> for DenseVector {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        DenseVector::new(v)
    }
}

impl From<DenseVector> for Vec<f64> {
    fn from(v: DenseVector) -> Self {
        v.0
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LofParams {
    pub k: usize,
    pub quantile: f64,
}

impl Default for LofParams {
    fn default() -> Self {
        LofParams {
            k: DEFAULT_NEIGHBORS,
            quantile: DEFAULT_QUANTILE,
        }
    }
}

/// A fitted LOF detector. Immutable once built.
#[derive(Debug, Clone)]
pub struct LofModel {
    points: Vec<DenseVector>,
    k: usize,
    k_distance: Vec<f64>,
    neighbors: Vec<Vec<usize>>,
    lrd: Vec<f64>,
    training_scores: Vec<f64>,
    threshold: f64,
}

struct Neighborhood {
    k_distance: f64,
    /// (index, distance)
    members: Vec<(usize, f64)>,
}

/// `exclude` is the query's own index when scoring a training point.
fn neighborhood(points: &[DenseVector], q: &[f64], k: usize, exclude: Option<usize>) -> Neighborhood {
    let mut dists: Vec<(usize, f64)> = points
        .iter()
        .enumerate()
        .filter(|(j, _)| Some(*j) != exclude)
        .map(|(j, p)| (j, euclidean(q, p.values())))
        .collect();
    let (_, kth, _) = dists.select_nth_unstable_by(k - 1, |a, b| a.1.total_cmp(&b.1));
    let k_distance = kth.1;
    let mut members: Vec<(usize, f64)> = dists.into_iter().filter(|(_, d)| *d <= k_distance).collect();
    members.sort_unstable_by_key(|m| m.0);
    Neighborhood { k_distance, members }
}

fn inverse_mean(sum: f64, count: usize) -> f64 {
    let mean = sum / count as f64;
    1.0 / if mean > 0.0 { mean } else { DISTANCE_FLOOR }
}

/// Linear-interpolation quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

pub fn fit_lof(train: &[DenseVector], k: usize) -> Result<LofModel> {
    fit_lof_with(
        train,
        LofParams {
            k,
            ..LofParams::default()
        },
    )
}

pub fn fit_lof_with(train: &[DenseVector], params: LofParams) -> Result<LofModel> {
    let LofParams { k, quantile: q } = params;
    if k == 0 {
        return Err(Error::InvalidParameter("LOF needs k >= 1".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidParameter(format!("quantile {q} outside [0, 1]")));
    }
    if train.len() < k + 1 {
        return Err(Error::TooFewPoints {
            needed: k + 1,
            found: train.len(),
        });
    }
    let dim = train[0].dim();
    if let Some(bad) = train.iter().find(|v| v.dim() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: bad.dim(),
        });
    }

    let hoods: Vec<Neighborhood> = train
        .iter()
        .enumerate()
        .map(|(i, p)| neighborhood(train, p.values(), k, Some(i)))
        .collect();
    let k_distance: Vec<f64> = hoods.iter().map(|h| h.k_distance).collect();
    let lrd: Vec<f64> = hoods
        .iter()
        .map(|h| {
            let sum: f64 = h.members.iter().map(|&(j, d)| k_distance[j].max(d)).sum();
            inverse_mean(sum, h.members.len())
        })
        .collect();
    let training_scores: Vec<f64> = hoods
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let sum: f64 = h.members.iter().map(|&(j, _)| lrd[j]).sum();
            sum / h.members.len() as f64 / lrd[i]
        })
        .collect();
    let threshold = quantile(&training_scores, q);
    Ok(LofModel {
        points: train.to_vec(),
        k,
        k_distance,
        neighbors: hoods
            .into_iter()
            .map(|h| h.members.into_iter().map(|m| m.0).collect())
            .collect(),
        lrd,
        training_scores,
        threshold,
    })
}

impl LofModel {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.points[0].dim()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Replaces the decision threshold.
    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    /// LOF of each training point against the rest of the training set.
    pub fn training_scores(&self) -> &[f64] {
        &self.training_scores
    }

    pub fn k_distances(&self) -> &[f64] {
        &self.k_distance
    }

    pub fn local_reachability_densities(&self) -> &[f64] {
        &self.lrd
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// LOF of `q` against the training set; `q` itself is not inserted.
    pub fn score(&self, q: &DenseVector) -> Result<f64> {
        if q.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: q.dim(),
            });
        }
        let h = neighborhood(&self.points, q.values(), self.k, None);
        let reach: f64 = h.members.iter().map(|&(j, d)| self.k_distance[j].max(d)).sum();
        let lrd_q = inverse_mean(reach, h.members.len());
        let density: f64 = h.members.iter().map(|&(j, _)| self.lrd[j]).sum();
        Ok(density / h.members.len() as f64 / lrd_q)
    }

    pub fn is_anomalous(&self, q: &DenseVector) -> Result<bool> {
        Ok(self.score(q)? > self.threshold)
    }
}

pub fn lof_score(model: &LofModel, q: &DenseVector) -> Result<f64> {
    model.score(q)
}

/// Knowledge-seeking decision for one utterance: anomalous means out of API coverage.
pub fn detect_turn(model: &LofModel, utterance_vector: &DenseVector) -> Result<bool> {
    model.is_anomalous(utterance_vector)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector::new(x.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_vectors() {
        assert!(DenseVector::new(vec![]).is_err());
        assert!(matches!(
            DenseVector::new(vec![1.0, f64::NAN]),
            Err(Error::NonFinite(_))
        ));
        assert!(DenseVector::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn identical_points_have_unit_lof() {
        let pts = vec![v(&[1.0, 2.0]); 3];
        let m = fit_lof(&pts, 1).unwrap();
        assert_eq!(m.training_scores(), &[1.0, 1.0, 1.0]);
        assert!(m
            .local_reachability_densities()
            .iter()
            .all(|l| l.is_finite() && *l > 0.0));
        assert_eq!(m.score(&v(&[1.0, 2.0])).unwrap(), 1.0);
    }

    #[test]
    fn query_on_duplicated_point_scores_exactly_one() {
        let k = 3;
        let mut pts = vec![v(&[0.5, 0.5]); k + 1];
        pts.extend([v(&[3.0, 0.0]), v(&[0.0, 4.0]), v(&[5.0, 5.0])]);
        let m = fit_lof(&pts, k).unwrap();
        assert_eq!(m.score(&v(&[0.5, 0.5])).unwrap(), 1.0);
    }

    #[test]
    fn too_few_points_and_dims() {
        let pts = vec![v(&[0.0]), v(&[1.0])];
        assert!(matches!(
            fit_lof(&pts, 2),
            Err(Error::TooFewPoints { needed: 3, found: 2 })
        ));
        assert!(matches!(fit_lof(&pts, 5), Err(Error::TooFewPoints { .. })));
        assert!(matches!(fit_lof(&pts, 0), Err(Error::InvalidParameter(_))));
        let mixed = vec![v(&[0.0]), v(&[1.0, 2.0]), v(&[3.0])];
        assert!(matches!(fit_lof(&mixed, 1), Err(Error::DimensionMismatch { .. })));
        let m = fit_lof(&pts, 1).unwrap();
        assert!(matches!(
            m.score(&v(&[0.0, 1.0])),
            Err(Error::DimensionMismatch { expected: 1, found: 2 })
        ));
    }

    #[test]
    fn ties_enlarge_the_neighborhood() {
        // centre point has four neighbors at distance 1
        let pts = vec![
            v(&[0.0, 0.0]),
            v(&[1.0, 0.0]),
            v(&[-1.0, 0.0]),
            v(&[0.0, 1.0]),
            v(&[0.0, -1.0]),
        ];
        let m = fit_lof(&pts, 2).unwrap();
        assert_eq!(m.neighbors(0), &[1, 2, 3, 4]);
        assert_eq!(m.k_distances()[0], 1.0);
    }

    #[test]
    fn quantile_interpolates() {
        let xs = [3.0, 1.0, 2.0, 4.0, 5.0];
        assert_eq!(quantile(&xs, 0.0), 1.0);
        assert_eq!(quantile(&xs, 1.0), 5.0);
        assert_eq!(quantile(&xs, 0.5), 3.0);
        assert!((quantile(&xs, 0.9) - 4.6).abs() < 1e-12);
    }

    #[test]
    fn detect_follows_threshold() {
        let mut pts: Vec<DenseVector> = (0..30)
            .map(|i| v(&[(i % 6) as f64 * 0.1, (i / 6) as f64 * 0.1]))
            .collect();
        pts.push(v(&[0.25, 0.2]));
        let m = fit_lof(&pts, 5).unwrap();
        let far = v(&[50.0, 50.0]);
        let near = v(&[0.25, 0.25]);
        assert!(m.score(&far).unwrap() > m.threshold());
        assert!(detect_turn(&m, &far).unwrap());
        assert!(!detect_turn(&m, &near).unwrap());
        let strict = m.clone().with_threshold(f64::INFINITY);
        assert!(!detect_turn(&strict, &far).unwrap());
    }
}
