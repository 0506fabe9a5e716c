//! Alternating training loop: per-epoch prototype estimation, mini-batch Adam
//! updates on the total loss, validation-driven early stopping and
//! checkpointing.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{sample_negatives, DatasetSplit, TrainingTriple};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate_users, summarize, EvalOptions, Target};
use crate::graph::NormalizedAdjacency;
use crate::matrix::Matrix;
use crate::model::{forward, Checkpoint, EmbeddingTable};
use crate::objectives::{total_loss_and_gradient, LossBreakdown, ObjectiveConfig};
use crate::prototypes::{e_step_on, KMeansParams, PrototypeState};
use crate::rng;

const ESTEP_TAG: u64 = 0x4553_5445;
const NEGATIVE_TAG: u64 = 0x4e45_4741;
const SHUFFLE_TAG: u64 = 0x5348_5546;
const VALID_TAG: u64 = 0x5641_4c49;

pub const ADAM_M_BLOCK: &str = "adam_m";
pub const ADAM_V_BLOCK: &str = "adam_v";
pub const BEST_BLOCK: &str = "best";

/// Which rows the E-step clusters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterSource {
    /// Layer-0 embeddings (the rows the prototype loss is applied to).
    Embeddings,
    /// Propagated readout representations.
    Readout,
}

impl FromStr for ClusterSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "embeddings" => Ok(ClusterSource::Embeddings),
            "readout" => Ok(ClusterSource::Readout),
            other => Err(format!("unknown cluster source `{other}` (expected embeddings or readout)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub d: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub k_layer: usize,
    pub tau: f64,
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub k_users: Vec<usize>,
    pub k_items: Vec<usize>,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub kmeans_iters: usize,
    pub kmeans_tol: f64,
    pub cluster_source: ClusterSource,
    /// Evaluate at most this many validation users per epoch (`None` = all).
    pub valid_user_cap: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let obj = ObjectiveConfig::default();
        let km = KMeansParams::default();
        Self {
            d: 64,
            layers: obj.layers,
            k_layer: obj.k_layer,
            tau: obj.tau,
            alpha: obj.alpha,
            lambda1: obj.lambda1,
            lambda2: obj.lambda2,
            lambda3: obj.lambda3,
            k_users: vec![1000],
            k_items: vec![1000],
            batch_size: 4096,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 300,
            patience: 10,
            seed: 2021,
            kmeans_iters: km.max_iters,
            kmeans_tol: km.tol,
            cluster_source: ClusterSource::Embeddings,
            valid_user_cap: None,
        }
    }
}

impl TrainConfig {
    pub fn objective(&self) -> ObjectiveConfig {
        ObjectiveConfig {
            layers: self.layers,
            k_layer: self.k_layer,
            tau: self.tau,
            alpha: self.alpha,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            lambda3: self.lambda3,
        }
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn kmeans(&self) -> KMeansParams {
        KMeansParams {
            max_iters: self.kmeans_iters,
            tol: self.kmeans_tol,
        }
    }

    /// True when both contrastive terms are switched off.
    pub fn is_backbone(&self) -> bool {
        self.lambda1 == 0.0 && self.lambda2 == 0.0
    }

    pub fn backbone_tag(&self) -> &'static str {
        if self.is_backbone() {
            "lightgcn-bpr"
        } else {
            "ncl"
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.objective().validate()?;
        if self.d == 0 {
            return Err(Error::invalid("d", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be at least 1"));
        }
        if self.max_epochs == 0 {
            return Err(Error::invalid("max_epochs", "must be at least 1"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience", "must be at least 1"));
        }
        self.adam().validate()?;
        for (field, ks) in [("k_users", &self.k_users), ("k_items", &self.k_items)] {
            if ks.is_empty() || ks.contains(&0) {
                return Err(Error::invalid(field, "must be a nonempty list of positive cluster counts"));
            }
        }
        if self.kmeans_iters == 0 {
            return Err(Error::invalid("kmeans_iters", "must be at least 1"));
        }
        if self.kmeans_tol.is_nan() || self.kmeans_tol < 0.0 {
            return Err(Error::invalid("kmeans_tol", "must be nonnegative"));
        }
        if self.valid_user_cap == Some(0) {
            return Err(Error::invalid("valid_user_cap", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("lr", "must be positive"));
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::invalid(field, "must lie in [0, 1)"));
            }
        }
        if self.eps.is_nan() || self.eps <= 0.0 {
            return Err(Error::invalid("eps", "must be positive"));
        }
        Ok(())
    }
}

/// First and second moment estimates plus the global step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Matrix,
    pub v: Matrix,
    pub step: u64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Rows whose gradient is entirely zero keep
/// their parameters and moments untouched; the step counter always advances.
pub fn adam_step(table: &mut EmbeddingTable, grads: &Matrix, state: &mut AdamState, params: &AdamParams) -> Result<()> {
    let e = table.matrix_mut();
    e.check_same_shape(grads)?;
    e.check_same_shape(&state.m)?;
    e.check_same_shape(&state.v)?;
    let d = grads.cols();
    if d == 0 {
        state.step += 1;
        return Ok(());
    }
    if let Some(row) = (0..grads.rows()).find(|&r| !grads.row(r).iter().all(|g| g.is_finite())) {
        return Err(Error::GradientBlowUp { row });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - params.beta1.powi(t);
    let bc2 = 1.0 - params.beta2.powi(t);
    let p = *params;
    e.as_mut_slice()
        .par_chunks_mut(d)
        .zip(state.m.as_mut_slice().par_chunks_mut(d))
        .zip(state.v.as_mut_slice().par_chunks_mut(d))
        .zip(grads.as_slice().par_chunks(d))
        .for_each(|(((w, m), v), g)| {
            if g.iter().all(|&x| x == 0.0) {
                return;
            }
            for c in 0..d {
                m[c] = p.beta1 * m[c] + (1.0 - p.beta1) * g[c];
                v[c] = p.beta2 * v[c] + (1.0 - p.beta2) * g[c] * g[c];
                let m_hat = m[c] / bc1;
                let v_hat = v[c] / bc2;
                w[c] -= p.lr * m_hat / (v_hat.sqrt() + p.eps);
            }
        });
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Improved,
    NoImprovement,
    Stop,
}

/// Stops after `patience` consecutive epochs without a strict improvement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopper {
    pub patience: usize,
    pub best: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: None,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, value: f64) -> Verdict {
        if self.best.is_none_or(|b| value > b) {
            self.best = Some(value);
            self.best_epoch = Some(epoch);
            self.bad_epochs = 0;
            return Verdict::Improved;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= self.patience {
            Verdict::Stop
        } else {
            Verdict::NoImprovement
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EStepStats {
    pub inertia: f64,
    pub seconds: f64,
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Batch-size weighted mean of the per-batch loss components.
    pub loss: LossBreakdown,
    pub valid: BTreeMap<String, f64>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estep: Option<EStepStats>,
}

impl EpochRecord {
    /// The record with wall-clock fields zeroed, for reproducibility checks.
    pub fn without_timing(&self) -> Self {
        let mut r = self.clone();
        r.seconds = 0.0;
        if let Some(s) = &mut r.estep {
            s.seconds = 0.0;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainHistory {
    pub backbone: String,
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

impl TrainHistory {
    /// One JSON object per epoch. Timing fields are dropped unless requested,
    /// which makes the output byte-comparable across runs.
    pub fn to_json_lines(&self, include_timing: bool) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            let rec = if include_timing { r.clone() } else { r.without_timing() };
            let mut value = serde_json::to_value(&rec)?;
            if let Some(obj) = value.as_object_mut() {
                obj.insert("backbone".into(), self.backbone.clone().into());
                if !include_timing {
                    obj.remove("seconds");
                    if let Some(estep) = obj.get_mut("estep").and_then(|v| v.as_object_mut()) {
                        estep.remove("seconds");
                    }
                }
            }
            out.push_str(&serde_json::to_string(&value)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// Trainer state that survives a checkpoint round trip.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ResumeState {
    config: TrainConfig,
    adam_step: u64,
    stopper: EarlyStopper,
    history: TrainHistory,
}

pub struct Trainer<'a> {
    config: TrainConfig,
    split: &'a DatasetSplit,
    adj: NormalizedAdjacency,
    table: EmbeddingTable,
    best: Option<EmbeddingTable>,
    adam: AdamState,
    stopper: EarlyStopper,
    history: TrainHistory,
    valid_users: Vec<usize>,
    checkpoint_path: Option<PathBuf>,
}

impl<'a> Trainer<'a> {
    pub fn new(config: TrainConfig, split: &'a DatasetSplit) -> Result<Self> {
        config.validate()?;
        if split.train.is_empty() {
            return Err(Error::EmptyInput("training split has no interactions".into()));
        }
        let adj = NormalizedAdjacency::from_split(split)?;
        let table = EmbeddingTable::init(split.n_users, split.n_items, config.d, config.seed)?;
        let adam = AdamState::new(split.n_nodes(), config.d);
        let valid_users = validation_users(split, config.valid_user_cap, config.seed);
        Ok(Self {
            stopper: EarlyStopper::new(config.patience),
            history: TrainHistory {
                backbone: config.backbone_tag().into(),
                ..TrainHistory::default()
            },
            config,
            split,
            adj,
            table,
            best: None,
            adam,
            valid_users,
            checkpoint_path: None,
        })
    }

    /// Writes a resumable checkpoint to `path` before the first epoch and
    /// after every epoch.
    pub fn with_checkpoint(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    /// Restores table, optimizer and stopping state from a checkpoint written
    /// by [`Trainer::checkpoint`]. The stored config must match apart from
    /// `max_epochs`.
    pub fn resume(mut self, ckpt: &Checkpoint) -> Result<Self> {
        let state: ResumeState = serde_json::from_value(ckpt.header.extra.clone())?;
        let comparable = TrainConfig {
            max_epochs: self.config.max_epochs,
            ..state.config.clone()
        };
        if comparable != self.config {
            return Err(Error::Precondition("checkpoint was written with a different config".into()));
        }
        let (n_users, n_items) = (self.split.n_users, self.split.n_items);
        if ckpt.header.n_users != n_users || ckpt.header.n_items != n_items {
            return Err(Error::DimensionMismatch {
                expected: format!("{n_users} users x {n_items} items"),
                actual: format!("{} users x {} items", ckpt.header.n_users, ckpt.header.n_items),
            });
        }
        let block = |name: &str| {
            ckpt.block(name)
                .cloned()
                .ok_or_else(|| Error::Precondition(format!("checkpoint has no `{name}` block")))
        };
        self.table = ckpt.table()?;
        self.adam = AdamState {
            m: block(ADAM_M_BLOCK)?,
            v: block(ADAM_V_BLOCK)?,
            step: state.adam_step,
        };
        self.best = match ckpt.block(BEST_BLOCK) {
            Some(m) => Some(EmbeddingTable::from_matrix(n_users, n_items, m.clone())?),
            None => None,
        };
        self.stopper = state.stopper;
        self.history = state.history;
        Ok(self)
    }

    pub fn history(&self) -> &TrainHistory {
        &self.history
    }

    pub fn table(&self) -> &EmbeddingTable {
        &self.table
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let epoch = self.history.records.last().map_or(0, |r| r.epoch);
        let mut ckpt = Checkpoint::for_table(&self.table, self.config.layers, epoch);
        ckpt.push_block(ADAM_M_BLOCK, self.adam.m.clone());
        ckpt.push_block(ADAM_V_BLOCK, self.adam.v.clone());
        if let Some(best) = &self.best {
            ckpt.push_block(BEST_BLOCK, best.matrix().clone());
        }
        ckpt.header.extra = serde_json::to_value(ResumeState {
            config: self.config.clone(),
            adam_step: self.adam.step,
            stopper: self.stopper.clone(),
            history: self.history.clone(),
        })?;
        Ok(ckpt)
    }

    fn save(&self) -> Result<()> {
        if let Some(path) = &self.checkpoint_path {
            write_atomically(&self.checkpoint()?, path)?;
        }
        Ok(())
    }

    fn finished(&self) -> bool {
        let last = self.history.records.last().map_or(0, |r| r.epoch);
        last >= self.config.max_epochs || self.stopper.bad_epochs >= self.config.patience
    }

    /// Runs epochs until early stopping or `max_epochs`, calling `on_epoch`
    /// after each. Returns the table from the best validation epoch.
    pub fn run(mut self, on_epoch: &mut dyn FnMut(&EpochRecord)) -> Result<(EmbeddingTable, TrainHistory)> {
        self.save()?;
        while !self.finished() {
            let epoch = self.history.records.last().map_or(0, |r| r.epoch) + 1;
            let record = match self.epoch(epoch) {
                Ok(r) => r,
                Err(e) => {
                    if let Some(path) = &self.checkpoint_path {
                        log::error!("epoch {epoch} failed; resumable checkpoint at {}", path.display());
                    }
                    return Err(e);
                }
            };
            let ndcg = record.valid.get("ndcg@10").copied().unwrap_or(0.0);
            if self.stopper.observe(epoch, ndcg) == Verdict::Improved {
                self.best = Some(self.table.clone());
            }
            on_epoch(&record);
            self.history.records.push(record);
            self.history.best_epoch = self.stopper.best_epoch;
            self.save()?;
        }
        self.history.stopped_early = self.stopper.bad_epochs >= self.config.patience;
        let table = self.best.take().unwrap_or(self.table);
        Ok((table, self.history))
    }

    fn epoch(&mut self, epoch: usize) -> Result<EpochRecord> {
        let started = Instant::now();
        let cfg = &self.config;
        let tag = epoch as u64;

        let mut estep = None;
        let protos: Option<PrototypeState> = if cfg.lambda2 > 0.0 {
            let t = Instant::now();
            let seed = rng::derive_seed(cfg.seed, &[ESTEP_TAG, tag]);
            let state = match cfg.cluster_source {
                ClusterSource::Embeddings => e_step_on(
                    self.table.matrix(),
                    self.split.n_users,
                    &cfg.k_users,
                    &cfg.k_items,
                    seed,
                    cfg.kmeans(),
                )?,
                ClusterSource::Readout => {
                    let fp = forward(&self.adj, &self.table, cfg.layers)?;
                    e_step_on(&fp.readout, self.split.n_users, &cfg.k_users, &cfg.k_items, seed, cfg.kmeans())?
                }
            };
            estep = Some(EStepStats {
                inertia: state.total_inertia(),
                seconds: t.elapsed().as_secs_f64(),
            });
            Some(state)
        } else {
            None
        };

        let triples = epoch_triples(self.split, cfg.seed, epoch)?;

        let objective = cfg.objective();
        let adam = cfg.adam();
        let mut sum = LossBreakdown::default();
        for batch in triples.chunks(cfg.batch_size) {
            let (loss, grads) = total_loss_and_gradient(&self.adj, &self.table, batch, protos.as_ref(), &objective)?;
            if !loss.total.is_finite() {
                return Err(Error::GradientBlowUp { row: 0 });
            }
            adam_step(&mut self.table, &grads, &mut self.adam, &adam)?;
            let w = batch.len() as f64;
            sum.bpr += w * loss.bpr;
            sum.structure += w * loss.structure;
            sum.prototype += w * loss.prototype;
            sum.reg += w * loss.reg;
            sum.total += w * loss.total;
        }
        let n = triples.len() as f64;
        let loss = LossBreakdown {
            bpr: sum.bpr / n,
            structure: sum.structure / n,
            prototype: sum.prototype / n,
            reg: sum.reg / n,
            total: sum.total / n,
        };

        let fp = forward(&self.adj, &self.table, cfg.layers)?;
        let opts = EvalOptions {
            ns: vec![10],
            mask_valid_on_test: true,
        };
        let per_user = evaluate_users(&fp, self.split, Target::Valid, &opts, &self.valid_users)?;
        let report = summarize(&per_user, Target::Valid, &opts);

        Ok(EpochRecord {
            epoch,
            loss,
            valid: report.metrics,
            seconds: started.elapsed().as_secs_f64(),
            estep,
        })
    }
}

/// The shuffled training triples of `epoch` (1-based): fresh negatives and a
/// fresh order, both derived from `seed` and the epoch index.
pub fn epoch_triples(split: &DatasetSplit, seed: u64, epoch: usize) -> Result<Vec<TrainingTriple>> {
    let tag = epoch as u64;
    let mut triples = sample_negatives(split, rng::derive_seed(seed, &[NEGATIVE_TAG, tag]))?;
    triples.shuffle(&mut rng::seeded(seed, &[SHUFFLE_TAG, tag]));
    Ok(triples)
}

/// Trains from scratch and returns the best-validation table.
pub fn train(config: TrainConfig, split: &DatasetSplit) -> Result<(EmbeddingTable, TrainHistory)> {
    Trainer::new(config, split)?.run(&mut |_| {})
}

/// Users with validation interactions, optionally capped by a fixed
/// seeded subsample (sorted).
fn validation_users(split: &DatasetSplit, cap: Option<usize>, seed: u64) -> Vec<usize> {
    let users: Vec<usize> = (0..split.n_users)
        .filter(|&u| !split.valid_items_by_user[u].is_empty())
        .collect();
    match cap {
        Some(cap) if cap < users.len() => {
            let mut picked: Vec<usize> = index::sample(&mut rng::seeded(seed, &[VALID_TAG]), users.len(), cap)
                .into_iter()
                .map(|k| users[k])
                .collect();
            picked.sort_unstable();
            picked
        }
        _ => users,
    }
}

fn write_atomically(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    ckpt.write(&tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
