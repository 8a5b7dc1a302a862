//! K-Means over fitted preference parameters.
//!
//! Two assignment metrics are supported. The loss-guided distance between a
//! user and a centroid is the number of the user's recorded rounds the
//! centroid mispredicts; the L2 variant uses squared Euclidean distance in
//! `(b, s, o)` space. Both variants share k-means++ seeding (in L2), the
//! arithmetic-mean centroid update with `o = sign(mean o)` (ties to +1),
//! lowest-index tie-breaking, and the empty-cluster rule.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::choice::{predict_choice, Orientation, PreferenceParams, UserHistory};
use crate::error::{EwcError, Result};
use crate::seeding::{stream_rng, Stream, StreamRng};

/// `K` centroids, each used as an expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PreferenceParams>", into = "Vec<PreferenceParams>")]
pub struct CentroidSet {
    centroids: Vec<PreferenceParams>,
}

impl CentroidSet {
    pub fn new(centroids: Vec<PreferenceParams>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(EwcError::InvalidInput("a centroid set needs at least one centroid".into()));
        }
        Ok(CentroidSet { centroids })
    }

    pub fn len(&self) -> usize {
        self.centroids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centroids.is_empty()
    }

    pub fn as_slice(&self) -> &[PreferenceParams] {
        &self.centroids
    }

    pub fn get(&self, k: usize) -> Option<&PreferenceParams> {
        self.centroids.get(k)
    }
}

impl TryFrom<Vec<PreferenceParams>> for CentroidSet {
    type Error = EwcError;

    fn try_from(value: Vec<PreferenceParams>) -> Result<Self> {
        CentroidSet::new(value)
    }
}

impl From<CentroidSet> for Vec<PreferenceParams> {
    fn from(value: CentroidSet) -> Self {
        value.centroids
    }
}

/// Hard assignment of each user to one cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    labels: Vec<usize>,
    num_clusters: usize,
}

impl Assignment {
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_clusters(&self) -> usize {
        self.num_clusters
    }

    pub fn cluster_of(&self, user: usize) -> usize {
        self.labels[user]
    }

    /// The indicator `r[i][k]`.
    pub fn is_assigned(&self, user: usize, cluster: usize) -> bool {
        self.labels[user] == cluster
    }

    pub fn one_hot(&self) -> Vec<Vec<u8>> {
        self.labels
            .iter()
            .map(|&l| (0..self.num_clusters).map(|k| u8::from(k == l)).collect())
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceKind {
    #[default]
    LossGuided,
    L2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KMeansConfig {
    pub k: usize,
    pub seed: u64,
    pub max_iters: usize,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            k: 6,
            seed: 0,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteringResult {
    pub centroids: CentroidSet,
    pub assignment: Assignment,
    pub iterations: usize,
    /// False when the loop stopped at `max_iters` with assignments still changing.
    pub converged: bool,
}

/// Number of rounds in `history` the centroid mispredicts, i.e. the squared
/// norm of the prediction error vector under 0/1 option differences.
pub fn loss_guided_distance(history: &UserHistory, centroid: &PreferenceParams) -> f64 {
    history
        .rounds()
        .filter(|(c, y)| predict_choice(centroid, c) != *y)
        .count() as f64
}

pub fn squared_l2(a: &PreferenceParams, b: &PreferenceParams) -> f64 {
    a.to_vector()
        .iter()
        .zip(b.to_vector())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// K-Means with the loss-guided assignment step.
pub fn kmeans_loss_guided(
    params: &[PreferenceParams],
    histories: &[UserHistory],
    config: &KMeansConfig,
) -> Result<ClusteringResult> {
    kmeans_loss_guided_weighted(params, histories, None, config)
}

/// Loss-guided K-Means where each user's parameters enter the centroid mean
/// with the given weight. Assignment is unaffected by the weights.
pub fn kmeans_loss_guided_weighted(
    params: &[PreferenceParams],
    histories: &[UserHistory],
    weights: Option<&[f64]>,
    config: &KMeansConfig,
) -> Result<ClusteringResult> {
    if params.len() != histories.len() {
        return Err(EwcError::InvalidInput(format!(
            "{} parameter sets but {} histories",
            params.len(),
            histories.len()
        )));
    }
    let distance = |i: usize, c: &PreferenceParams| loss_guided_distance(&histories[i], c);
    run_kmeans(params, weights, config, &distance)
}

/// Standard Lloyd iterations with L2 distance in parameter space.
pub fn kmeans_l2(params: &[PreferenceParams], config: &KMeansConfig) -> Result<ClusteringResult> {
    kmeans_l2_weighted(params, None, config)
}

pub fn kmeans_l2_weighted(
    params: &[PreferenceParams],
    weights: Option<&[f64]>,
    config: &KMeansConfig,
) -> Result<ClusteringResult> {
    let distance = |i: usize, c: &PreferenceParams| squared_l2(&params[i], c);
    run_kmeans(params, weights, config, &distance)
}

fn validate(params: &[PreferenceParams], weights: Option<&[f64]>, config: &KMeansConfig) -> Result<()> {
    if config.k == 0 {
        return Err(EwcError::InvalidInput("K must be at least 1".into()));
    }
    if config.max_iters == 0 {
        return Err(EwcError::InvalidInput("max_iters must be at least 1".into()));
    }
    if config.k > params.len() {
        return Err(EwcError::TooManyClusters {
            k: config.k,
            n: params.len(),
        });
    }
    if let Some(w) = weights {
        if w.len() != params.len() {
            return Err(EwcError::InvalidInput(format!(
                "{} weights for {} users",
                w.len(),
                params.len()
            )));
        }
        if w.iter().any(|&x| !(x.is_finite() && x >= 0.0)) {
            return Err(EwcError::InvalidInput("weights must be finite and nonnegative".into()));
        }
    }
    Ok(())
}

fn run_kmeans<D>(
    params: &[PreferenceParams],
    weights: Option<&[f64]>,
    config: &KMeansConfig,
    distance: &D,
) -> Result<ClusteringResult>
where
    D: Fn(usize, &PreferenceParams) -> f64 + Sync,
{
    validate(params, weights, config)?;
    let mut rng = stream_rng(config.seed, Stream::Clustering, 0);
    let mut centroids = kmeans_plus_plus(params, config.k, &mut rng);

    let mut labels: Option<Vec<usize>> = None;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iters {
        iterations += 1;
        let (next, _) = assign(params.len(), &centroids, distance);
        if labels.as_ref() == Some(&next) {
            converged = true;
            break;
        }
        let (updated, reseeded) = update_centroids(params, weights, &next, &centroids, distance);
        centroids = updated;
        // reseeded centroids are not member means, so keep iterating
        labels = if reseeded { None } else { Some(next) };
    }

    let (labels, _) = assign(params.len(), &centroids, distance);
    Ok(ClusteringResult {
        centroids: CentroidSet::new(centroids)?,
        assignment: Assignment {
            labels,
            num_clusters: config.k,
        },
        iterations,
        converged,
    })
}

/// Assigns every user to its nearest centroid (lowest index on ties) and
/// returns the labels with the attained distances.
fn assign<D>(n: usize, centroids: &[PreferenceParams], distance: &D) -> (Vec<usize>, Vec<f64>)
where
    D: Fn(usize, &PreferenceParams) -> f64 + Sync,
{
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut best = 0;
            let mut best_d = distance(i, &centroids[0]);
            for (k, c) in centroids.iter().enumerate().skip(1) {
                let d = distance(i, c);
                if d < best_d {
                    best = k;
                    best_d = d;
                }
            }
            (best, best_d)
        })
        .unzip()
}

fn update_centroids<D>(
    params: &[PreferenceParams],
    weights: Option<&[f64]>,
    labels: &[usize],
    previous: &[PreferenceParams],
    distance: &D,
) -> (Vec<PreferenceParams>, bool)
where
    D: Fn(usize, &PreferenceParams) -> f64 + Sync,
{
    let k = previous.len();
    let mut sums = vec![[0.0f64; 3]; k];
    let mut totals = vec![0.0f64; k];
    let mut plain_sums = vec![[0.0f64; 3]; k];
    let mut counts = vec![0usize; k];
    for (i, (&l, p)) in labels.iter().zip(params).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        let v = p.to_vector();
        for d in 0..3 {
            sums[l][d] += w * v[d];
            plain_sums[l][d] += v[d];
        }
        totals[l] += w;
        counts[l] += 1;
    }

    let mut centroids: Vec<Option<PreferenceParams>> = (0..k)
        .map(|c| {
            if counts[c] == 0 {
                return None;
            }
            let mean: [f64; 3] = if totals[c] > 0.0 {
                sums[c].map(|s| s / totals[c])
            } else {
                plain_sums[c].map(|s| s / counts[c] as f64)
            };
            Some(PreferenceParams {
                bias: mean[0],
                slope: mean[1],
                orientation: Orientation::from_sign(mean[2]),
            })
        })
        .collect();

    let reseeded = centroids.iter().any(Option::is_none);
    if reseeded {
        // Reseed each empty cluster at the worst-fit user under the current assignment.
        let current: Vec<f64> = (0..params.len())
            .into_par_iter()
            .map(|i| distance(i, &previous[labels[i]]))
            .collect();
        let mut order: Vec<usize> = (0..params.len()).collect();
        order.sort_by(|&a, &b| current[b].total_cmp(&current[a]).then(a.cmp(&b)));
        let mut donors = order.into_iter();
        for slot in centroids.iter_mut().filter(|c| c.is_none()) {
            let donor = donors.next().expect("K <= N guarantees a donor per empty cluster");
            *slot = Some(params[donor]);
        }
    }
    let centroids = centroids.into_iter().map(|c| c.expect("filled above")).collect();
    (centroids, reseeded)
}

/// k-means++ seeding in parameter space.
fn kmeans_plus_plus(params: &[PreferenceParams], k: usize, rng: &mut StreamRng) -> Vec<PreferenceParams> {
    let n = params.len();
    let mut chosen = vec![params[rng.random_range(0..n)]];
    let mut nearest: Vec<f64> = params.iter().map(|p| squared_l2(p, &chosen[0])).collect();
    while chosen.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 && total.is_finite() {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &d) in nearest.iter().enumerate() {
                acc += d;
                if d > 0.0 && target < acc {
                    pick = Some(i);
                    break;
                }
            }
            pick.unwrap_or_else(|| nearest.iter().rposition(|&d| d > 0.0).unwrap_or(0))
        } else {
            // every point coincides with a chosen centre
            rng.random_range(0..n)
        };
        let centre = params[pick];
        for (d, p) in nearest.iter_mut().zip(params) {
            *d = d.min(squared_l2(p, &centre));
        }
        chosen.push(centre);
    }
    chosen
}
