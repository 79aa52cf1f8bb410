//! Two-way clustering of embeddings and the reward-based cluster labeling.

use kodama::{linkage, Method};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::StateSequence;
use super::Role;
use crate::error::{Error, Result};

pub const K: usize = 2;
const KMEANS_RESTARTS: usize = 10;
const KMEANS_MAX_ITERATIONS: usize = 300;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    /// Ward linkage on Euclidean distances, cut at two clusters.
    #[default]
    Agglomerative,
    /// k-means++ seeding, Lloyd iterations, best of ten restarts by inertia.
    Kmeans,
}

/// A two-way partition. Cluster ids are canonical: the cluster holding vector 0 is id 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub method: ClusterMethod,
    pub k: usize,
    pub assignments: Vec<usize>,
    /// Role per cluster id, once labeled.
    pub cluster_labels: Option<[Role; K]>,
}

impl ClusterModel {
    /// Builds a model from raw ids in `{0, 1}`, renumbering them canonically.
    pub fn from_assignments(method: ClusterMethod, assignments: Vec<usize>) -> Result<Self> {
        if assignments.iter().any(|&a| a >= K) {
            return Err(Error::rejected("cluster ids must be 0 or 1"));
        }
        let flip = assignments.first() == Some(&1);
        let assignments = assignments
            .into_iter()
            .map(|a| if flip { 1 - a } else { a })
            .collect();
        Ok(ClusterModel {
            method,
            k: K,
            assignments,
            cluster_labels: None,
        })
    }

    pub fn members(&self, cluster: usize) -> impl Iterator<Item = usize> + '_ {
        self.assignments
            .iter()
            .enumerate()
            .filter(move |(_, &a)| a == cluster)
            .map(|(i, _)| i)
    }

    /// Cluster id carrying `role`, once labeled.
    pub fn cluster_of(&self, role: Role) -> Option<usize> {
        self.cluster_labels?.iter().position(|&r| r == role)
    }

    pub fn role_of(&self, index: usize) -> Option<Role> {
        Some(self.cluster_labels?[*self.assignments.get(index)?])
    }
}

/// Partitions `vectors` into two clusters.
pub fn cluster_embeddings<R: Rng + ?Sized>(
    vectors: &[Vec<f64>],
    method: ClusterMethod,
    rng: &mut R,
) -> Result<ClusterModel> {
    check_vectors(vectors)?;
    let assignments = match method {
        ClusterMethod::Agglomerative => ward(vectors),
        ClusterMethod::Kmeans => kmeans(vectors, rng),
    };
    ClusterModel::from_assignments(method, assignments)
}

fn check_vectors(vectors: &[Vec<f64>]) -> Result<()> {
    let Some(first) = vectors.first() else {
        return Err(Error::Degenerate("no vectors to cluster".into()));
    };
    if first.is_empty() || vectors.iter().any(|v| v.len() != first.len()) {
        return Err(Error::rejected("vectors must share a nonzero dimension"));
    }
    if vectors.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::rejected("vectors must be finite"));
    }
    if vectors.iter().all(|v| v == first) {
        return Err(Error::Degenerate("fewer than 2 distinct vectors".into()));
    }
    Ok(())
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn ward(vectors: &[Vec<f64>]) -> Vec<usize> {
    let n = vectors.len();
    let mut condensed = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            condensed.push(squared_distance(&vectors[i], &vectors[j]).sqrt());
        }
    }
    let dendrogram = linkage(&mut condensed, n, Method::Ward);
    // Step s creates label n + s; replaying all but the last merge leaves two clusters.
    let mut parent: Vec<usize> = (0..2 * n - 1).collect();
    for (s, step) in dendrogram.steps().iter().enumerate().take(n - 2) {
        parent[step.cluster1] = n + s;
        parent[step.cluster2] = n + s;
    }
    let root = |mut i: usize| {
        while parent[i] != i {
            i = parent[i];
        }
        i
    };
    let first_root = root(0);
    (0..n).map(|i| usize::from(root(i) != first_root)).collect()
}

fn kmeans<R: Rng + ?Sized>(vectors: &[Vec<f64>], rng: &mut R) -> Vec<usize> {
    let mut best: Option<(f64, Vec<usize>)> = None;
    for _ in 0..KMEANS_RESTARTS {
        let (inertia, assignments) = lloyd(vectors, kmeans_plus_plus(vectors, rng));
        if best.as_ref().is_none_or(|(b, _)| inertia < *b) {
            best = Some((inertia, assignments));
        }
    }
    best.expect("at least one restart").1
}

fn kmeans_plus_plus<R: Rng + ?Sized>(vectors: &[Vec<f64>], rng: &mut R) -> Vec<Vec<f64>> {
    let first = vectors[rng.gen_range(0..vectors.len())].clone();
    let d: Vec<f64> = vectors
        .iter()
        .map(|v| squared_distance(v, &first))
        .collect();
    let total: f64 = d.iter().sum();
    // At least two distinct vectors exist, so total > 0.
    let mut u = rng.gen::<f64>() * total;
    let mut pick = vectors.len() - 1;
    for (i, di) in d.iter().enumerate() {
        if u < *di {
            pick = i;
            break;
        }
        u -= di;
    }
    vec![first, vectors[pick].clone()]
}

fn lloyd(vectors: &[Vec<f64>], mut centroids: Vec<Vec<f64>>) -> (f64, Vec<usize>) {
    let dim = vectors[0].len();
    let mut assignments = vec![usize::MAX; vectors.len()];
    for _ in 0..KMEANS_MAX_ITERATIONS {
        let mut changed = false;
        for (a, v) in assignments.iter_mut().zip(vectors) {
            let nearest = nearest(&centroids, v);
            if *a != nearest {
                *a = nearest;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        for (c, centroid) in centroids.iter_mut().enumerate() {
            let mut sum = vec![0.0; dim];
            let mut count = 0usize;
            for (v, _) in vectors.iter().zip(&assignments).filter(|(_, &a)| a == c) {
                sum.iter_mut().zip(v).for_each(|(s, x)| *s += x);
                count += 1;
            }
            // An emptied cluster keeps its previous centroid.
            if count > 0 {
                *centroid = sum.into_iter().map(|s| s / count as f64).collect();
            }
        }
    }
    let inertia = vectors
        .iter()
        .zip(&assignments)
        .map(|(v, &a)| squared_distance(v, &centroids[a]))
        .sum();
    (inertia, assignments)
}

fn nearest(centroids: &[Vec<f64>], v: &[f64]) -> usize {
    let d0 = squared_distance(v, &centroids[0]);
    let d1 = squared_distance(v, &centroids[1]);
    usize::from(d1 < d0)
}

/// Labels the cluster with the lower mean opponent reward as defection, the other as
/// cooperation.
pub fn label_clusters(model: &ClusterModel, dataset: &[StateSequence]) -> Result<ClusterModel> {
    if model.assignments.len() != dataset.len() {
        return Err(Error::rejected("assignments and dataset differ in length"));
    }
    let mut sums = [0.0; K];
    let mut counts = [0usize; K];
    for (&a, seq) in model.assignments.iter().zip(dataset) {
        if a >= K {
            return Err(Error::rejected("cluster ids must be 0 or 1"));
        }
        sums[a] += seq.opponent_reward;
        counts[a] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::Degenerate("a cluster has no members".into()));
    }
    let means = [sums[0] / counts[0] as f64, sums[1] / counts[1] as f64];
    let labels = if means[0] < means[1] {
        [Role::Defection, Role::Cooperation]
    } else if means[1] < means[0] {
        [Role::Cooperation, Role::Defection]
    } else {
        return Err(Error::UnresolvedLabeling(means[0]));
    };
    Ok(ClusterModel {
        cluster_labels: Some(labels),
        ..model.clone()
    })
}

/// Share of items whose cluster's majority label equals their own label.
pub fn purity(assignments: &[usize], truth: &[bool]) -> Result<f64> {
    if assignments.len() != truth.len() || assignments.is_empty() {
        return Err(Error::rejected(
            "assignments and labels must be nonempty and aligned",
        ));
    }
    let mut counts = [[0usize; 2]; K];
    for (&a, &t) in assignments.iter().zip(truth) {
        if a >= K {
            return Err(Error::rejected("cluster ids must be 0 or 1"));
        }
        counts[a][usize::from(t)] += 1;
    }
    let majority: usize = counts.iter().map(|c| c[0].max(c[1])).sum();
    Ok(majority as f64 / truth.len() as f64)
}

/// Share of items placed together by two partitions, under the better of the two id matchings.
pub fn agreement(a: &[usize], b: &[usize]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::rejected("partitions must be nonempty and aligned"));
    }
    let same = a.iter().zip(b).filter(|(x, y)| x == y).count();
    Ok(same.max(a.len() - same) as f64 / a.len() as f64)
}

/// Projection onto the top two principal components, for plotting.
pub fn principal_projection(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    check_vectors(vectors)?;
    let n = vectors.len() as f64;
    let dim = vectors[0].len();
    let mut mean = vec![0.0; dim];
    for v in vectors {
        mean.iter_mut().zip(v).for_each(|(m, x)| *m += x / n);
    }
    let centered: Vec<Vec<f64>> = vectors
        .iter()
        .map(|v| v.iter().zip(&mean).map(|(x, m)| x - m).collect())
        .collect();
    let mut cov = vec![0.0; dim * dim];
    for v in &centered {
        for i in 0..dim {
            for j in 0..dim {
                cov[i * dim + j] += v[i] * v[j] / n;
            }
        }
    }
    let mut components: Vec<Vec<f64>> = Vec::with_capacity(2);
    for _ in 0..2 {
        let mut x: Vec<f64> = (0..dim).map(|i| 1.0 + i as f64 / dim as f64).collect();
        for _ in 0..500 {
            let mut y: Vec<f64> = (0..dim)
                .map(|i| (0..dim).map(|j| cov[i * dim + j] * x[j]).sum())
                .collect();
            for c in &components {
                let dot: f64 = y.iter().zip(c).map(|(a, b)| a * b).sum();
                y.iter_mut().zip(c).for_each(|(a, b)| *a -= dot * b);
            }
            let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                break;
            }
            x = y.into_iter().map(|v| v / norm).collect();
        }
        components.push(x);
    }
    Ok(centered
        .iter()
        .map(|v| {
            let p = |c: &Vec<f64>| v.iter().zip(c).map(|(a, b)| a * b).sum();
            [p(&components[0]), p(&components[1])]
        })
        .collect())
}
