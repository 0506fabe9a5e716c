//! Full-ranking top-N evaluation: Recall@N and NDCG@N with binary relevance,
//! optionally broken down by user sparsity group.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::model::{score_all_items, ForwardPass};

/// `|top-N ∩ relevant| / |relevant|`. `relevant` must be sorted.
pub fn recall_at_n(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked
        .iter()
        .take(n)
        .filter(|i| relevant.binary_search(i).is_ok())
        .count();
    hits as f64 / relevant.len() as f64
}

/// DCG@N / IDCG@N with gains `1 / log2(p + 1)` at 1-based position `p`.
/// `relevant` must be sorted.
pub fn ndcg_at_n(ranked: &[usize], relevant: &[usize], n: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let gain = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let dcg = ranked
        .iter()
        .take(n)
        .enumerate()
        .filter(|(_, i)| relevant.binary_search(i).is_ok())
        .fold(0.0, |acc, (p, _)| acc + gain(p + 1));
    let idcg = (1..=n.min(relevant.len())).fold(0.0, |acc, p| acc + gain(p));
    dcg / idcg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    Valid,
    Test,
}

impl std::str::FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "valid" | "validation" => Ok(Target::Valid),
            "test" => Ok(Target::Test),
            other => Err(format!("unknown target `{other}` (expected valid or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub ns: Vec<usize>,
    /// Also exclude validation positives from the candidates when ranking for
    /// the test target.
    pub mask_valid_on_test: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ns: vec![10, 20, 50],
            mask_valid_on_test: true,
        }
    }
}

/// Mean metrics over the evaluated users, keyed `recall@N` / `ndcg@N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: BTreeMap<String, f64>,
    pub n_evaluated_users: usize,
    pub target: Target,
    pub masking: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<Vec<EvalReport>>,
    /// Train interactions held by the users of this group (group reports only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_mass: Option<usize>,
}

impl EvalReport {
    pub fn get(&self, metric: &str, n: usize) -> Option<f64> {
        self.metrics.get(&format!("{metric}@{n}")).copied()
    }

    pub fn recall(&self, n: usize) -> f64 {
        self.get("recall", n).unwrap_or(0.0)
    }

    pub fn ndcg(&self, n: usize) -> f64 {
        self.get("ndcg", n).unwrap_or(0.0)
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:?} ({} users, masking: {})", self.target, self.n_evaluated_users, self.masking)?;
        for (k, v) in &self.metrics {
            writeln!(f, "  {k:<10} {v:.6}")?;
        }
        if let Some(groups) = &self.groups {
            for (g, r) in groups.iter().enumerate() {
                write!(f, "  G{} ({} users, mass {})", g + 1, r.n_evaluated_users, r.train_mass.unwrap_or(0))?;
                for (k, v) in &r.metrics {
                    write!(f, "  {k}={v:.4}")?;
                }
                writeln!(f)?;
            }
        }
        Ok(())
    }
}

/// Per-user metric values, in the order of `ns` (recall first, then NDCG).
#[derive(Debug, Clone, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

fn masking_label(target: Target, opts: &EvalOptions) -> String {
    match (target, opts.mask_valid_on_test) {
        (Target::Test, true) => "train+valid".into(),
        _ => "train".into(),
    }
}

/// Ranks every non-masked item for `user`: score descending, item ID ascending
/// on ties. Only the first `top` entries are returned.
pub fn rank_items(scores: &[f64], masked: &[&[usize]], top: usize) -> Vec<usize> {
    let mut candidates: Vec<usize> = (0..scores.len())
        .filter(|i| masked.iter().all(|m| m.binary_search(i).is_err()))
        .collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    let top = top.min(candidates.len());
    if top == 0 {
        return Vec::new();
    }
    if top < candidates.len() {
        candidates.select_nth_unstable_by(top - 1, cmp);
        candidates.truncate(top);
    }
    candidates.sort_unstable_by(cmp);
    candidates
}

/// Metrics for each listed user that has at least one target interaction.
pub fn evaluate_users(
    fp: &ForwardPass,
    split: &DatasetSplit,
    target: Target,
    opts: &EvalOptions,
    users: &[usize],
) -> Result<Vec<UserMetrics>> {
    if opts.ns.is_empty() || opts.ns.contains(&0) {
        return Err(Error::invalid("ns", "cutoffs must be a nonempty list of positive integers"));
    }
    if fp.n_users() != split.n_users || fp.n_items() != split.n_items {
        return Err(Error::DimensionMismatch {
            expected: format!("{} users x {} items", split.n_users, split.n_items),
            actual: format!("{} users x {} items", fp.n_users(), fp.n_items()),
        });
    }
    let top = *opts.ns.iter().max().unwrap_or(&0);
    let targets = match target {
        Target::Valid => &split.valid_items_by_user,
        Target::Test => &split.test_items_by_user,
    };
    let results = users
        .par_iter()
        .filter(|&&u| !targets[u].is_empty())
        .map(|&u| {
            let scores = score_all_items(fp, u);
            let mut masked: Vec<&[usize]> = vec![&split.train_items_by_user[u]];
            if target == Target::Test && opts.mask_valid_on_test {
                masked.push(&split.valid_items_by_user[u]);
            }
            let ranked = rank_items(&scores, &masked, top);
            let relevant = &targets[u];
            UserMetrics {
                user: u,
                recall: opts.ns.iter().map(|&n| recall_at_n(&ranked, relevant, n)).collect(),
                ndcg: opts.ns.iter().map(|&n| ndcg_at_n(&ranked, relevant, n)).collect(),
            }
        })
        .collect();
    Ok(results)
}

/// Averages per-user metrics into a report.
pub fn summarize(per_user: &[UserMetrics], target: Target, opts: &EvalOptions) -> EvalReport {
    let mut metrics = BTreeMap::new();
    let count = per_user.len();
    for (k, &n) in opts.ns.iter().enumerate() {
        let mean = |f: &dyn Fn(&UserMetrics) -> f64| {
            if count == 0 {
                0.0
            } else {
                per_user.iter().map(f).sum::<f64>() / count as f64
            }
        };
        metrics.insert(format!("recall@{n}"), mean(&|m| m.recall[k]));
        metrics.insert(format!("ndcg@{n}"), mean(&|m| m.ndcg[k]));
    }
    EvalReport {
        metrics,
        n_evaluated_users: count,
        target,
        masking: masking_label(target, opts),
        groups: None,
        train_mass: None,
    }
}

/// Full-ranking evaluation over every user with a target interaction.
pub fn full_rank_eval(fp: &ForwardPass, split: &DatasetSplit, target: Target, opts: &EvalOptions) -> Result<EvalReport> {
    let users: Vec<usize> = (0..split.n_users).collect();
    let per_user = evaluate_users(fp, split, target, opts, &users)?;
    Ok(summarize(&per_user, target, opts))
}

/// Partitions users, sorted by ascending train degree (ties by ID), into
/// `n_groups` contiguous groups of near-equal total train interactions. Each
/// cut is placed at the prefix whose cumulative mass is closest to its equal
/// share.
pub fn sparsity_groups(split: &DatasetSplit, n_groups: usize) -> Result<Vec<Vec<usize>>> {
    if n_groups == 0 {
        return Err(Error::invalid("groups", "must be at least 1"));
    }
    if split.n_users < n_groups {
        return Err(Error::Precondition(format!(
            "cannot form {n_groups} groups from {} users",
            split.n_users
        )));
    }
    let mut users: Vec<usize> = (0..split.n_users).collect();
    users.sort_by_key(|&u| (split.train_degree(u), u));
    let mut prefix = Vec::with_capacity(users.len() + 1);
    prefix.push(0usize);
    for &u in &users {
        prefix.push(prefix.last().copied().unwrap_or(0) + split.train_degree(u));
    }
    let total = *prefix.last().unwrap_or(&0) as f64;

    let mut cuts = vec![0usize];
    for g in 1..n_groups {
        let goal = total * g as f64 / n_groups as f64;
        let prev = *cuts.last().unwrap_or(&0);
        // Leave at least one user for each remaining group.
        let lo = prev + 1;
        let hi = users.len() - (n_groups - g);
        let best = (lo..=hi)
            .min_by(|&a, &b| {
                let da = (prefix[a] as f64 - goal).abs();
                let db = (prefix[b] as f64 - goal).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            })
            .unwrap_or(lo);
        cuts.push(best);
    }
    cuts.push(users.len());
    Ok(cuts.windows(2).map(|w| users[w[0]..w[1]].to_vec()).collect())
}

/// Full-ranking evaluation restricted to each sparsity group. The returned
/// report carries the overall metrics with the per-group reports attached.
pub fn sparsity_group_report(
    fp: &ForwardPass,
    split: &DatasetSplit,
    target: Target,
    n_groups: usize,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let groups = sparsity_groups(split, n_groups)?;
    let mut all = Vec::new();
    let mut reports = Vec::with_capacity(groups.len());
    for members in &groups {
        let per_user = evaluate_users(fp, split, target, opts, members)?;
        let mut r = summarize(&per_user, target, opts);
        r.train_mass = Some(members.iter().map(|&u| split.train_degree(u)).sum());
        reports.push(r);
        all.extend(per_user);
    }
    all.sort_by_key(|m| m.user);
    let mut overall = summarize(&all, target, opts);
    overall.groups = Some(reports);
    Ok(overall)
}
