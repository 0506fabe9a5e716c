//! Shared fixtures and reference implementations for the integration tests.
#![allow(dead_code)]

use nccf::dataset::{DatasetSplit, SplitRatios, TrainingTriple};
use nccf::graph::NormalizedAdjacency;
use nccf::model::EmbeddingTable;
use nccf::objectives::{total_loss_and_gradient, ObjectiveConfig};
use nccf::prototypes::PrototypeState;
use nccf::synthetic::{planted_split, CommunityParams};
use nccf::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Each user-item pair is an edge with probability `p`.
pub fn random_edges(r: &mut ChaCha8Rng, n_users: usize, n_items: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for u in 0..n_users {
        for i in 0..n_items {
            if r.random::<f64>() < p {
                edges.push((u, i));
            }
        }
    }
    edges
}

/// Like [`random_edges`], but every user and item gets at least one edge.
pub fn covering_edges(r: &mut ChaCha8Rng, n_users: usize, n_items: usize, p: f64) -> Vec<(usize, usize)> {
    let mut edges = random_edges(r, n_users, n_items, p);
    for u in 0..n_users {
        if !edges.iter().any(|e| e.0 == u) {
            edges.push((u, r.random_range(0..n_items)));
        }
    }
    for i in 0..n_items {
        if !edges.iter().any(|e| e.1 == i) {
            edges.push((r.random_range(0..n_users), i));
        }
    }
    edges.sort_unstable();
    edges.dedup();
    edges
}

pub fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| r.random_range(-scale..scale)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Dense symmetric-normalized adjacency built straight from the edge list:
/// `A[u][n_users + i] = A[n_users + i][u] = 1 / sqrt(deg(u) * deg(i))`.
pub fn dense_adjacency(n_users: usize, n_items: usize, edges: &[(usize, usize)]) -> Vec<Vec<f64>> {
    let n = n_users + n_items;
    let mut deg = vec![0usize; n];
    for &(u, i) in edges {
        deg[u] += 1;
        deg[n_users + i] += 1;
    }
    let mut a = vec![vec![0.0; n]; n];
    for &(u, i) in edges {
        let w = 1.0 / ((deg[u] * deg[n_users + i]) as f64).sqrt();
        a[u][n_users + i] = w;
        a[n_users + i][u] = w;
    }
    a
}

pub fn dense_product(a: &[Vec<f64>], x: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.len(), x.cols());
    for (r, row) in a.iter().enumerate() {
        for (k, &w) in row.iter().enumerate() {
            for c in 0..x.cols() {
                out[(r, c)] += w * x[(k, c)];
            }
        }
    }
    out
}

/// `count` triples drawn from the edge list, each with a negative outside the
/// user's edges. Users linked to every item are never picked.
pub fn random_triples(
    r: &mut ChaCha8Rng,
    n_items: usize,
    edges: &[(usize, usize)],
    count: usize,
) -> Vec<TrainingTriple> {
    let has_negative = |u: usize| edges.iter().filter(|e| e.0 == u).count() < n_items;
    let usable: Vec<(usize, usize)> = edges.iter().copied().filter(|e| has_negative(e.0)).collect();
    assert!(!usable.is_empty(), "every user is linked to every item");
    (0..count)
        .map(|_| {
            let (user, pos) = usable[r.random_range(0..usable.len())];
            let neg = loop {
                let j = r.random_range(0..n_items);
                if !edges.contains(&(user, j)) {
                    break j;
                }
            };
            TrainingTriple { user, pos, neg }
        })
        .collect()
}

pub struct GradCheck {
    pub entries: usize,
    pub failures: usize,
    /// Largest relative error over entries with magnitude above 1e-6.
    pub max_rel: f64,
    /// Largest absolute error over the remaining near-zero entries.
    pub max_abs_small: f64,
    pub worst: String,
}

/// Compares the analytic gradient with central differences of the total loss
/// at every table entry. An entry passes when its relative error is below
/// `rel_tol` or its absolute error is below `abs_tol`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    adj: &NormalizedAdjacency,
    table: &EmbeddingTable,
    triples: &[TrainingTriple],
    protos: Option<&PrototypeState>,
    cfg: &ObjectiveConfig,
    h: f64,
    rel_tol: f64,
    abs_tol: f64,
) -> GradCheck {
    let (_, analytic) = total_loss_and_gradient(adj, table, triples, protos, cfg).unwrap();
    let (rows, cols) = table.matrix().shape();
    let mut report = GradCheck {
        entries: rows * cols,
        failures: 0,
        max_rel: 0.0,
        max_abs_small: 0.0,
        worst: String::new(),
    };
    let loss_at = |r: usize, c: usize, delta: f64| {
        let mut t = table.clone();
        t.matrix_mut()[(r, c)] += delta;
        total_loss_and_gradient(adj, &t, triples, protos, cfg).unwrap().0.total
    };
    for r in 0..rows {
        for c in 0..cols {
            let numeric = (loss_at(r, c, h) - loss_at(r, c, -h)) / (2.0 * h);
            let a = analytic[(r, c)];
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(f64::MIN_POSITIVE);
            let ok = rel < rel_tol || abs < abs_tol;
            if a.abs().max(numeric.abs()) > 1e-6 {
                report.max_rel = report.max_rel.max(rel);
            } else {
                report.max_abs_small = report.max_abs_small.max(abs);
            }
            if !ok {
                report.failures += 1;
                if report.worst.is_empty() {
                    report.worst = format!("E[{r},{c}]: analytic {a:e} vs numeric {numeric:e}");
                }
            }
        }
    }
    report
}

/// The planted-community benchmark: 200 users, 300 items, 8 communities,
/// within-community probability ten times the cross-community one, about
/// 6,000 interactions, split 80/10/10 per user.
pub fn planted_benchmark() -> DatasetSplit {
    let params = CommunityParams::with_expected_interactions(200, 300, 8, 10.0, 6000.0, 17);
    planted_split(&params, SplitRatios::default(), 17).unwrap()
}

/// A smaller planted dataset with `n_users` users and 1.5x as many items.
pub fn planted_small(n_users: usize, communities: usize, interactions: f64, seed: u64) -> DatasetSplit {
    let params = CommunityParams::with_expected_interactions(
        n_users,
        n_users * 3 / 2,
        communities,
        10.0,
        interactions,
        seed,
    );
    planted_split(&params, SplitRatios::default(), seed).unwrap()
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
