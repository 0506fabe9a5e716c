//! Loss terms and the analytic gradient of the total training loss with
//! respect to the embedding table.
//!
//! The forward pass is linear in the table and the propagation operator is
//! symmetric, so gradients with respect to layer outputs are pushed back to the
//! table by re-applying [`NormalizedAdjacency::propagate`]. The only
//! nonlinearities are the logistic function of the BPR term and the row
//! normalizations plus softmax of the two InfoNCE terms, all differentiated in
//! closed form here.
//!
//! Reductions used by [`total_loss_and_gradient`]:
//!
//! ```text
//! bpr        = (1/B) * sum_batch -ln sigmoid(y_ui - y_uj)
//! structure  = sum_batch users InfoNCE(z_u^(k), z^(0)) + alpha * (same over items)
//! prototype  = sum_batch users InfoNCE(e_u, C_user)  + alpha * (same over items)
//! reg        = (1/B) * 1/2 * sum_{touched rows} |e_v|^2
//! total      = bpr + lambda1 * structure + lambda2 * prototype + lambda3 * reg
//! ```
//!
//! Contrastive denominators are in-batch: the distinct users (items) of the
//! batch for the structure term, every centroid of the clustering for the
//! prototype term. The positive is always part of its own denominator.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::TrainingTriple;
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::{axpy, dot, norm, Matrix};
use crate::model::{forward, EmbeddingTable, ForwardPass};
use crate::prototypes::{Granularity, PrototypeState};

/// `d total / d E`, same shape as the embedding table.
pub type GradientTable = Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    pub layers: usize,
    /// Even layer whose output is contrasted with layer 0.
    pub k_layer: usize,
    pub tau: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            layers: 3,
            k_layer: 2,
            tau: 0.1,
            alpha: 1.0,
            lambda1: 1e-7,
            lambda2: 1e-7,
            lambda3: 1e-4,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(Error::invalid("layers", "must be at least 1"));
        }
        if self.k_layer == 0 || !self.k_layer.is_multiple_of(2) {
            return Err(Error::invalid("k_layer", format!("must be a positive even layer, got {}", self.k_layer)));
        }
        if self.k_layer > self.layers {
            return Err(Error::invalid(
                "k_layer",
                format!("{} exceeds the number of layers {}", self.k_layer, self.layers),
            ));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        for (name, v) in [
            ("alpha", self.alpha),
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, "must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub bpr: f64,
    pub structure: f64,
    pub prototype: f64,
    pub reg: f64,
    pub total: f64,
}

/// `-ln sigmoid(x)` without overflow.
#[inline]
pub fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Summed BPR loss over `triples`, scored on the readout.
pub fn bpr_loss(fp: &ForwardPass, triples: &[TrainingTriple]) -> Result<f64> {
    if triples.is_empty() {
        return Err(Error::Precondition("BPR loss needs at least one triple".into()));
    }
    Ok(triples
        .iter()
        .map(|t| neg_log_sigmoid(dot(fp.user(t.user), fp.item(t.pos)) - dot(fp.user(t.user), fp.item(t.neg))))
        .sum())
}

/// Structure-contrastive loss averaged over the batch entries:
/// `mean_users + alpha * mean_items`.
pub fn structure_contrastive_loss(
    fp: &ForwardPass,
    batch_users: &[usize],
    batch_items: &[usize],
    k_layer: usize,
    tau: f64,
    alpha: f64,
) -> Result<f64> {
    check_structure_args(fp, batch_users, batch_items, k_layer, tau)?;
    let n_users = fp.n_users();
    let users: Vec<usize> = batch_users.to_vec();
    let items: Vec<usize> = batch_items.iter().map(|i| n_users + i).collect();
    let user_term = structure_side(&fp.layers[k_layer], &fp.layers[0], &users, tau, false)?;
    let item_term = structure_side(&fp.layers[k_layer], &fp.layers[0], &items, tau, false)?;
    Ok(user_term.loss / users.len() as f64 + alpha * item_term.loss / items.len() as f64)
}

/// Prototype-contrastive loss averaged over the batch entries and over
/// granularities: `mean_users + alpha * mean_items`. Centroids are constants.
pub fn prototype_contrastive_loss(
    table: &EmbeddingTable,
    protos: &PrototypeState,
    batch_users: &[usize],
    batch_items: &[usize],
    tau: f64,
    alpha: f64,
) -> Result<f64> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid("tau", "must be positive"));
    }
    if batch_users.is_empty() || batch_items.is_empty() {
        return Err(Error::Precondition("contrastive batch lists must be nonempty".into()));
    }
    let e = table.matrix();
    let users = prototype_side(e, &protos.users, batch_users, 0, tau, false)?;
    let items = prototype_side(e, &protos.items, batch_items, table.n_users(), tau, false)?;
    Ok(users.loss / batch_users.len() as f64 + alpha * items.loss / batch_items.len() as f64)
}

/// `1/2 * sum |E[v]|^2` over the distinct rows in `touched`.
pub fn reg_loss(table: &EmbeddingTable, touched: &[usize]) -> f64 {
    let rows: BTreeSet<usize> = touched.iter().copied().collect();
    0.5 * rows
        .iter()
        .map(|&v| {
            let r = table.matrix().row(v);
            dot(r, r)
        })
        .sum::<f64>()
}

/// Node rows whose layer-0 embedding a batch reads directly: its users,
/// positives and negatives.
pub fn touched_rows(triples: &[TrainingTriple], n_users: usize) -> Vec<usize> {
    let rows: BTreeSet<usize> = triples
        .iter()
        .flat_map(|t| [t.user, n_users + t.pos, n_users + t.neg])
        .collect();
    rows.into_iter().collect()
}

/// Evaluates every loss term on one batch and returns the exact gradient of
/// `total` with respect to the table. Terms whose weight is zero are skipped
/// entirely; `protos` is only read when `lambda2 > 0`.
pub fn total_loss_and_gradient(
    adj: &NormalizedAdjacency,
    table: &EmbeddingTable,
    triples: &[TrainingTriple],
    protos: Option<&PrototypeState>,
    cfg: &ObjectiveConfig,
) -> Result<(LossBreakdown, GradientTable)> {
    cfg.validate()?;
    if triples.is_empty() {
        return Err(Error::Precondition("empty batch".into()));
    }
    let fp = forward(adj, table, cfg.layers)?;
    let (n_nodes, d) = table.matrix().shape();
    let n_users = table.n_users();
    let batch = triples.len() as f64;

    // Gradient with respect to the readout.
    let mut g_readout = Matrix::zeros(n_nodes, d);
    let mut bpr_sum = 0.0;
    for t in triples {
        let (u, i, j) = (t.user, n_users + t.pos, n_users + t.neg);
        let (zu, zi, zj) = (fp.readout.row(u), fp.readout.row(i), fp.readout.row(j));
        let x = dot(zu, zi) - dot(zu, zj);
        bpr_sum += neg_log_sigmoid(x);
        // d/dx -ln sigmoid(x) = -sigmoid(-x)
        let c = -sigmoid(-x) / batch;
        let diff: Vec<f64> = zi.iter().zip(zj).map(|(a, b)| a - b).collect();
        let zu = zu.to_vec();
        axpy(c, &diff, g_readout.row_mut(u));
        axpy(c, &zu, g_readout.row_mut(i));
        axpy(-c, &zu, g_readout.row_mut(j));
    }

    let mut g_layer_k = Matrix::zeros(n_nodes, d);
    let mut g_table = Matrix::zeros(n_nodes, d);
    let mut breakdown = LossBreakdown {
        bpr: bpr_sum / batch,
        ..LossBreakdown::default()
    };

    if cfg.lambda1 > 0.0 {
        let users: Vec<usize> = triples.iter().map(|t| t.user).collect();
        let items: Vec<usize> = triples.iter().map(|t| n_users + t.pos).collect();
        check_structure_args(&fp, &users, &items, cfg.k_layer, cfg.tau)?;
        let zk = &fp.layers[cfg.k_layer];
        let z0 = &fp.layers[0];
        let user_side = structure_side(zk, z0, &users, cfg.tau, true)?;
        let item_side = structure_side(zk, z0, &items, cfg.tau, true)?;
        breakdown.structure = user_side.loss + cfg.alpha * item_side.loss;
        user_side.scatter(&mut g_layer_k, &mut g_table, cfg.lambda1);
        item_side.scatter(&mut g_layer_k, &mut g_table, cfg.lambda1 * cfg.alpha);
    }

    if cfg.lambda2 > 0.0 {
        let protos = protos.ok_or_else(|| {
            Error::Precondition("prototype loss is enabled but no prototypes were estimated".into())
        })?;
        let users: Vec<usize> = triples.iter().map(|t| t.user).collect();
        let items: Vec<usize> = triples.iter().map(|t| t.pos).collect();
        let e = table.matrix();
        let user_side = prototype_side(e, &protos.users, &users, 0, cfg.tau, true)?;
        let item_side = prototype_side(e, &protos.items, &items, n_users, cfg.tau, true)?;
        breakdown.prototype = user_side.loss + cfg.alpha * item_side.loss;
        user_side.scatter_anchors(&mut g_table, cfg.lambda2);
        item_side.scatter_anchors(&mut g_table, cfg.lambda2 * cfg.alpha);
    }

    let touched = touched_rows(triples, n_users);
    breakdown.reg = reg_loss(table, &touched) / batch;
    if cfg.lambda3 > 0.0 {
        for &v in &touched {
            axpy(cfg.lambda3 / batch, table.matrix().row(v), g_table.row_mut(v));
        }
    }

    breakdown.total = breakdown.bpr
        + cfg.lambda1 * breakdown.structure
        + cfg.lambda2 * breakdown.prototype
        + cfg.lambda3 * breakdown.reg;

    // Reverse accumulation through Z^(l) = A Z^(l-1), readout = mean_l Z^(l).
    let layers = cfg.layers;
    let share = 1.0 / (layers + 1) as f64;
    let layer_grad = |l: usize| -> Result<Matrix> {
        let mut g = g_readout.clone();
        g.scale(share);
        if cfg.lambda1 > 0.0 && l == cfg.k_layer {
            g.add_scaled(&g_layer_k, 1.0)?;
        }
        Ok(g)
    };
    let mut acc = layer_grad(layers)?;
    for l in (1..=layers).rev() {
        acc = adj.propagate(&acc)?;
        acc.add_scaled(&layer_grad(l - 1)?, 1.0)?;
    }
    acc.add_scaled(&g_table, 1.0)?;
    Ok((breakdown, acc))
}

fn check_structure_args(
    fp: &ForwardPass,
    batch_users: &[usize],
    batch_items: &[usize],
    k_layer: usize,
    tau: f64,
) -> Result<()> {
    if k_layer == 0 || !k_layer.is_multiple_of(2) || k_layer > fp.num_layers() {
        return Err(Error::invalid(
            "k_layer",
            format!("must be even and in [2, {}], got {k_layer}", fp.num_layers()),
        ));
    }
    if tau.is_nan() || tau <= 0.0 {
        return Err(Error::invalid("tau", "must be positive"));
    }
    if batch_users.is_empty() || batch_items.is_empty() {
        return Err(Error::Precondition("contrastive batch lists must be nonempty".into()));
    }
    Ok(())
}

/// Per-node InfoNCE over unit vectors: `anchors[e]` against every key, with
/// `positive[e]` the index of its positive key.
struct InfoNce {
    loss: f64,
    /// d loss / d anchor (unit vector), per entry.
    grad_anchors: Vec<Vec<f64>>,
    /// d loss / d key (unit vector), per key; empty unless requested.
    grad_keys: Vec<Vec<f64>>,
}

fn info_nce(anchors: &[Vec<f64>], keys: &[Vec<f64>], positive: &[usize], tau: f64, key_grads: bool) -> InfoNce {
    let d = anchors.first().map_or(0, Vec::len);
    let per_entry: Vec<(f64, f64, Vec<f64>)> = anchors
        .par_iter()
        .zip(positive.par_iter())
        .map(|(a, &pos)| {
            let logits: Vec<f64> = keys.iter().map(|k| dot(a, k) / tau).collect();
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|s| (s - max).exp()).sum::<f64>().ln();
            let mut g = vec![0.0; d];
            for (k, s) in keys.iter().zip(&logits) {
                axpy((s - lse).exp() / tau, k, &mut g);
            }
            axpy(-1.0 / tau, &keys[pos], &mut g);
            (lse - logits[pos], lse, g)
        })
        .collect();

    let loss = per_entry.iter().map(|(l, _, _)| l).sum();
    let grad_keys = if key_grads {
        (0..keys.len())
            .into_par_iter()
            .map(|j| {
                let mut g = vec![0.0; d];
                for (e, a) in anchors.iter().enumerate() {
                    let lse = per_entry[e].1;
                    let mut w = (dot(a, &keys[j]) / tau - lse).exp();
                    if positive[e] == j {
                        w -= 1.0;
                    }
                    axpy(w / tau, a, &mut g);
                }
                g
            })
            .collect()
    } else {
        Vec::new()
    };
    InfoNce {
        loss,
        grad_anchors: per_entry.into_iter().map(|(_, _, g)| g).collect(),
        grad_keys,
    }
}

/// `x / |x|` and `|x|`, or an error naming the row when `|x| = 0`.
fn unit(row: &[f64], index: usize) -> Result<(Vec<f64>, f64)> {
    let len = norm(row);
    if len == 0.0 || !len.is_finite() {
        return Err(Error::DegenerateEmbedding { row: index });
    }
    Ok((row.iter().map(|x| x / len).collect(), len))
}

/// Pulls a gradient taken with respect to `y = x / |x|` back to `x`:
/// `(g - (g . y) y) / |x|`.
fn through_normalization(g: &[f64], y: &[f64], len: f64) -> Vec<f64> {
    let gy = dot(g, y);
    g.iter().zip(y).map(|(gi, yi)| (gi - gy * yi) / len).collect()
}

struct SideGrad {
    loss: f64,
    /// `(row, gradient wrt the raw anchor row)` per entry.
    anchors: Vec<(usize, Vec<f64>)>,
    /// `(row, gradient wrt the raw key row)` per distinct key.
    keys: Vec<(usize, Vec<f64>)>,
}

impl SideGrad {
    fn scatter(&self, g_anchor: &mut Matrix, g_key: &mut Matrix, weight: f64) {
        for (row, g) in &self.anchors {
            axpy(weight, g, g_anchor.row_mut(*row));
        }
        for (row, g) in &self.keys {
            axpy(weight, g, g_key.row_mut(*row));
        }
    }

    fn scatter_anchors(&self, g: &mut Matrix, weight: f64) {
        for (row, grad) in &self.anchors {
            axpy(weight, grad, g.row_mut(*row));
        }
    }
}

/// Structure-contrastive term for one side. `nodes` are node rows (items
/// already offset by `n_users`); the denominator runs over the distinct nodes.
fn structure_side(zk: &Matrix, z0: &Matrix, nodes: &[usize], tau: f64, grads: bool) -> Result<SideGrad> {
    let distinct: Vec<usize> = nodes.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let positive: Vec<usize> = nodes
        .iter()
        .map(|v| distinct.binary_search(v).unwrap_or_default())
        .collect();

    let anchors = nodes
        .iter()
        .map(|&v| unit(zk.row(v), v))
        .collect::<Result<Vec<_>>>()?;
    let keys = distinct
        .iter()
        .map(|&v| unit(z0.row(v), v))
        .collect::<Result<Vec<_>>>()?;
    let anchor_units: Vec<Vec<f64>> = anchors.iter().map(|(y, _)| y.clone()).collect();
    let key_units: Vec<Vec<f64>> = keys.iter().map(|(y, _)| y.clone()).collect();
    let nce = info_nce(&anchor_units, &key_units, &positive, tau, grads);

    if !grads {
        return Ok(SideGrad {
            loss: nce.loss,
            anchors: Vec::new(),
            keys: Vec::new(),
        });
    }
    let anchor_grads = nodes
        .iter()
        .zip(&anchors)
        .zip(&nce.grad_anchors)
        .map(|((&v, (y, len)), g)| (v, through_normalization(g, y, *len)))
        .collect();
    let key_grads = distinct
        .iter()
        .zip(&keys)
        .zip(&nce.grad_keys)
        .map(|((&v, (y, len)), g)| (v, through_normalization(g, y, *len)))
        .collect();
    Ok(SideGrad {
        loss: nce.loss,
        anchors: anchor_grads,
        keys: key_grads,
    })
}

/// Prototype-contrastive term for one side, averaged over granularities.
/// `ids` are side-local IDs; `offset` maps them to table rows.
fn prototype_side(
    e: &Matrix,
    granularities: &[Granularity],
    ids: &[usize],
    offset: usize,
    tau: f64,
    grads: bool,
) -> Result<SideGrad> {
    if granularities.is_empty() {
        return Err(Error::Precondition("no prototype granularities for this side".into()));
    }
    let anchors = ids
        .iter()
        .map(|&i| unit(e.row(offset + i), offset + i))
        .collect::<Result<Vec<_>>>()?;
    let anchor_units: Vec<Vec<f64>> = anchors.iter().map(|(y, _)| y.clone()).collect();
    let share = 1.0 / granularities.len() as f64;

    let mut loss = 0.0;
    let mut grad_units = vec![vec![0.0; e.cols()]; ids.len()];
    for g in granularities {
        if g.centroids.cols() != e.cols() {
            return Err(Error::DimensionMismatch {
                expected: format!("{}-dimensional prototypes", e.cols()),
                actual: format!("{}-dimensional prototypes", g.centroids.cols()),
            });
        }
        let positive = ids
            .iter()
            .map(|&i| match g.assignments.get(i) {
                Some(&a) if a < g.k && a < g.centroids.rows() => Ok(a),
                Some(&a) => Err(Error::AssignmentOutOfRange {
                    row: offset + i,
                    assignment: a,
                    clusters: g.k,
                }),
                None => Err(Error::Precondition(format!(
                    "row {} has no prototype assignment",
                    offset + i
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        let keys: Vec<Vec<f64>> = (0..g.centroids.rows()).map(|c| g.centroids.row(c).to_vec()).collect();
        let nce = info_nce(&anchor_units, &keys, &positive, tau, false);
        loss += share * nce.loss;
        for (acc, ga) in grad_units.iter_mut().zip(&nce.grad_anchors) {
            axpy(share, ga, acc);
        }
    }
    let anchors = if grads {
        ids.iter()
            .zip(&anchors)
            .zip(&grad_units)
            .map(|((&i, (y, len)), g)| (offset + i, through_normalization(g, y, *len)))
            .collect()
    } else {
        Vec::new()
    };
    Ok(SideGrad {
        loss,
        anchors,
        keys: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::forward;

    fn unit_rows(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
        rows.iter()
            .map(|r| {
                let n = norm(r);
                r.iter().map(|x| x / n).collect()
            })
            .collect()
    }

    #[test]
    fn neg_log_sigmoid_values() {
        assert!((neg_log_sigmoid(0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((neg_log_sigmoid(1.0) - 0.313262).abs() < 1e-6);
        assert!(neg_log_sigmoid(50.0) < 1e-20);
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert!(neg_log_sigmoid(800.0).is_finite());
    }

    #[test]
    fn info_nce_two_orthogonal_keys() {
        let keys = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let nce = info_nce(&keys, &keys, &[0, 1], 1.0, false);
        let want = -(1f64.exp() / (1f64.exp() + 1.0)).ln();
        assert!((nce.loss / 2.0 - want).abs() < 1e-12);
        assert!((want - 0.313262).abs() < 1e-6);
    }

    #[test]
    fn info_nce_single_key_is_zero() {
        let keys = unit_rows(&[vec![0.3, -0.2, 0.9]]);
        let anchors = unit_rows(&[vec![1.0, 2.0, 3.0]]);
        let nce = info_nce(&anchors, &keys, &[0], 0.1, true);
        assert_eq!(nce.loss, 0.0);
        assert!(nce.grad_anchors[0].iter().all(|&g| g == 0.0));
    }

    #[test]
    fn equidistant_prototypes_give_ln2() {
        let keys = unit_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let anchors = unit_rows(&[vec![1.0, 1.0]]);
        let nce = info_nce(&anchors, &keys, &[0], 1.0, false);
        assert!((nce.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn reg_loss_examples() {
        let m = Matrix::from_rows(&[vec![3.0, 4.0], vec![1.0, 1.0]]).unwrap();
        let t = EmbeddingTable::from_matrix(1, 1, m).unwrap();
        assert_eq!(reg_loss(&t, &[0]), 12.5);
        assert_eq!(reg_loss(&t, &[0, 0]), 12.5);
        assert_eq!(reg_loss(&t, &[]), 0.0);
        let z = EmbeddingTable::from_matrix(1, 1, Matrix::zeros(2, 2)).unwrap();
        assert_eq!(reg_loss(&z, &[0, 1]), 0.0);
    }

    #[test]
    fn equal_scores_give_ln2_per_triple() {
        let adj = NormalizedAdjacency::from_edges(1, 2, &[]).unwrap();
        let m = Matrix::from_rows(&[vec![1.0, 0.5], vec![0.2, 0.2], vec![0.2, 0.2]]).unwrap();
        let t = EmbeddingTable::from_matrix(1, 2, m).unwrap();
        let fp = forward(&adj, &t, 2).unwrap();
        let triples = [TrainingTriple { user: 0, pos: 0, neg: 1 }; 3];
        let l = bpr_loss(&fp, &triples).unwrap();
        assert!((l / 3.0 - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(bpr_loss(&fp, &[]).is_err());
    }

    #[test]
    fn zero_norm_row_is_degenerate() {
        let adj = NormalizedAdjacency::from_edges(2, 2, &[(0, 0), (1, 1)]).unwrap();
        let mut t = EmbeddingTable::init(2, 2, 3, 0).unwrap();
        t.matrix_mut().row_mut(1).fill(0.0);
        let fp = forward(&adj, &t, 2).unwrap();
        assert!(matches!(
            structure_contrastive_loss(&fp, &[0, 1], &[0], 2, 0.5, 1.0),
            Err(Error::DegenerateEmbedding { .. })
        ));
    }

    #[test]
    fn odd_contrast_layer_is_rejected() {
        let cfg = ObjectiveConfig {
            k_layer: 3,
            ..ObjectiveConfig::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::InvalidConfig { field, .. }) if field == "k_layer"));
        let cfg = ObjectiveConfig {
            layers: 1,
            ..ObjectiveConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
