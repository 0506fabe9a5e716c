//! E-step: K-means prototypes with hard assignments.
//!
//! Points are L2-normalized embeddings. Lloyd iterations run in Euclidean
//! space from a k-means++ seeding; after convergence the centroids are also
//! rescaled to unit length, which is the form the prototype-contrastive loss
//! consumes.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{axpy, norm, Matrix};
use crate::model::EmbeddingTable;
use crate::rng;

const USER_TAG: u64 = 0x5553_4552;
const ITEM_TAG: u64 = 0x4954_454d;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansParams {
    pub max_iters: usize,
    /// Stop once no centroid coordinate moves by more than this.
    pub tol: f64,
}

impl Default for KMeansParams {
    fn default() -> Self {
        Self {
            max_iters: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// Cluster means at convergence.
    pub centroids: Matrix,
    /// `centroids` rescaled to unit length.
    pub unit_centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Inertia after every assignment step, ending with the returned one.
    pub inertia_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

/// Lloyd's algorithm with k-means++ seeding. Clusters that empty out are
/// refilled with the point farthest from its own centroid, so the result always
/// has exactly `k` nonempty clusters.
pub fn run_kmeans(points: &Matrix, k: usize, seed: u64, params: KMeansParams) -> Result<KMeansResult> {
    let n = points.rows();
    if k == 0 || k > n {
        return Err(Error::Precondition(format!(
            "k-means needs 1 <= k <= n, got k={k} for n={n}"
        )));
    }
    let mut rng = rng::seeded(seed, &[]);
    let mut centroids = kmeans_plus_plus(points, k, &mut rng);
    let mut trace = Vec::new();
    let mut iterations = 0;

    let (mut assignments, mut dists) = assign(points, &centroids);
    loop {
        trace.push(dists.iter().sum::<f64>());
        repair_empty(points, &mut assignments, &mut dists, k);
        let updated = cluster_means(points, &assignments, k);
        let shift = updated.max_abs_diff(&centroids)?;
        centroids = updated;
        iterations += 1;
        (assignments, dists) = assign(points, &centroids);
        if shift < params.tol || iterations >= params.max_iters {
            break;
        }
    }
    trace.push(dists.iter().sum::<f64>());
    if repair_empty(points, &mut assignments, &mut dists, k) {
        centroids = cluster_means(points, &assignments, k);
        trace.push(
            (0..n)
                .map(|p| sq_dist(points.row(p), centroids.row(assignments[p])))
                .sum(),
        );
    }

    let mut unit_centroids = centroids.clone();
    for c in 0..k {
        let row = unit_centroids.row_mut(c);
        let len = norm(row);
        if len > 0.0 {
            row.iter_mut().for_each(|x| *x /= len);
        }
    }
    Ok(KMeansResult {
        centroids,
        unit_centroids,
        assignments,
        inertia_trace: trace,
        iterations,
    })
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn kmeans_plus_plus(points: &Matrix, k: usize, rng: &mut rng::Rng) -> Matrix {
    let n = points.rows();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut best: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|p| sq_dist(points.row(p), points.row(chosen[0])))
        .collect();
    while chosen.len() < k {
        let total: f64 = best.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (p, &w) in best.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(p);
                    break;
                }
            }
            // Rounding can leave `target` just above the final partial sum.
            pick.unwrap_or_else(|| best.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            // Every point coincides with a chosen center; take an unused index.
            let unused: Vec<usize> = (0..n).filter(|p| !chosen.contains(p)).collect();
            unused[rng.random_range(0..unused.len())]
        };
        chosen.push(next);
        let c = points.row(next);
        best.par_iter_mut().enumerate().for_each(|(p, b)| {
            let d = sq_dist(points.row(p), c);
            if d < *b {
                *b = d;
            }
        });
    }
    let mut centroids = Matrix::zeros(k, points.cols());
    for (j, &p) in chosen.iter().enumerate() {
        centroids.row_mut(j).copy_from_slice(points.row(p));
    }
    centroids
}

/// Nearest centroid per point (lowest index on ties) and the squared distance.
fn assign(points: &Matrix, centroids: &Matrix) -> (Vec<usize>, Vec<f64>) {
    (0..points.rows())
        .into_par_iter()
        .map(|p| {
            let x = points.row(p);
            let mut best = (0, f64::INFINITY);
            for j in 0..centroids.rows() {
                let d = sq_dist(x, centroids.row(j));
                if d < best.1 {
                    best = (j, d);
                }
            }
            best
        })
        .unzip()
}

/// Moves the point farthest from its centroid (taken from a cluster with at
/// least two members) into each empty cluster. Returns whether anything moved.
fn repair_empty(points: &Matrix, assignments: &mut [usize], dists: &mut [f64], k: usize) -> bool {
    let mut sizes = vec![0usize; k];
    for &a in assignments.iter() {
        sizes[a] += 1;
    }
    let mut moved = false;
    for empty in 0..k {
        if sizes[empty] > 0 {
            continue;
        }
        let donor = (0..points.rows())
            .filter(|&p| sizes[assignments[p]] > 1)
            .fold(None, |best: Option<usize>, p| match best {
                Some(b) if dists[b] >= dists[p] => Some(b),
                _ => Some(p),
            });
        let Some(p) = donor else { break };
        sizes[assignments[p]] -= 1;
        assignments[p] = empty;
        sizes[empty] = 1;
        dists[p] = 0.0;
        moved = true;
    }
    moved
}

/// Index-ordered mean of each cluster's members.
fn cluster_means(points: &Matrix, assignments: &[usize], k: usize) -> Matrix {
    let mut sums = Matrix::zeros(k, points.cols());
    let mut counts = vec![0usize; k];
    for (p, &a) in assignments.iter().enumerate() {
        axpy(1.0, points.row(p), sums.row_mut(a));
        counts[a] += 1;
    }
    for (j, &c) in counts.iter().enumerate() {
        if c > 0 {
            let inv = 1.0 / c as f64;
            sums.row_mut(j).iter_mut().for_each(|x| *x *= inv);
        }
    }
    sums
}

/// One clustering of one side at one granularity.
#[derive(Debug, Clone, PartialEq)]
pub struct Granularity {
    pub k: usize,
    /// Unit-length prototypes, `k x d`.
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
}

impl From<KMeansResult> for Granularity {
    fn from(r: KMeansResult) -> Self {
        Self {
            k: r.unit_centroids.rows(),
            inertia: r.inertia(),
            centroids: r.unit_centroids,
            assignments: r.assignments,
        }
    }
}

/// Prototypes and hard assignments for users and items, one entry per
/// configured granularity.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PrototypeState {
    pub users: Vec<Granularity>,
    pub items: Vec<Granularity>,
}

impl PrototypeState {
    pub fn total_inertia(&self) -> f64 {
        self.users.iter().chain(&self.items).map(|g| g.inertia).sum()
    }
}

/// Copies rows `range` of `m` and scales each to unit length.
pub fn normalized_rows(m: &Matrix, range: std::ops::Range<usize>) -> Result<Matrix> {
    let mut out = Matrix::zeros(range.len(), m.cols());
    for (dst, src) in range.enumerate() {
        let row = m.row(src);
        let len = norm(row);
        if len == 0.0 || !len.is_finite() {
            return Err(Error::DegenerateEmbedding { row: src });
        }
        for (o, x) in out.row_mut(dst).iter_mut().zip(row) {
            *o = x / len;
        }
    }
    Ok(out)
}

/// Clusters the normalized user rows once per entry of `k_users` and the item
/// rows once per entry of `k_items`. `points` is laid out like an embedding
/// table (users first).
pub fn e_step_on(
    points: &Matrix,
    n_users: usize,
    k_users: &[usize],
    k_items: &[usize],
    seed: u64,
    params: KMeansParams,
) -> Result<PrototypeState> {
    let users = normalized_rows(points, 0..n_users)?;
    let items = normalized_rows(points, n_users..points.rows())?;
    let cluster = |pts: &Matrix, ks: &[usize], tag: u64| -> Result<Vec<Granularity>> {
        ks.iter()
            .enumerate()
            .map(|(m, &k)| {
                run_kmeans(pts, k, rng::derive_seed(seed, &[tag, m as u64]), params).map(Granularity::from)
            })
            .collect()
    };
    Ok(PrototypeState {
        users: cluster(&users, k_users, USER_TAG)?,
        items: cluster(&items, k_items, ITEM_TAG)?,
    })
}

/// E-step over the layer-0 embeddings.
pub fn e_step(
    table: &EmbeddingTable,
    k_users: &[usize],
    k_items: &[usize],
    seed: u64,
    params: KMeansParams,
) -> Result<PrototypeState> {
    e_step_on(table.matrix(), table.n_users(), k_users, k_items, seed, params)
}
