//! Planted-community interaction generator for tests, benchmarks and demos.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::dataset::{build_split, DatasetSplit, RawInteractions, SplitRatios};
use crate::error::{Error, Result};
use crate::rng;

const COMMUNITY_TAG: u64 = 0x434f_4d4d;

/// User `u` belongs to community `u % n_communities`, item `i` to
/// `i % n_communities`. Each user-item pair interacts independently with
/// probability `p_in` inside a community and `p_out` across communities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommunityParams {
    pub n_users: usize,
    pub n_items: usize,
    pub n_communities: usize,
    pub p_in: f64,
    pub p_out: f64,
    pub seed: u64,
}

impl CommunityParams {
    /// Chooses `p_out` (and `p_in = ratio * p_out`) so the expected number of
    /// interactions is `target`.
    pub fn with_expected_interactions(
        n_users: usize,
        n_items: usize,
        n_communities: usize,
        ratio: f64,
        target: f64,
        seed: u64,
    ) -> Self {
        let mut inside = 0usize;
        for u in 0..n_communities.min(n_users) {
            let users = (n_users - u).div_ceil(n_communities);
            let items = if u < n_items { (n_items - u).div_ceil(n_communities) } else { 0 };
            inside += users * items;
        }
        let outside = n_users * n_items - inside;
        let p_out = target / (ratio * inside as f64 + outside as f64);
        Self {
            n_users,
            n_items,
            n_communities,
            p_in: (ratio * p_out).min(1.0),
            p_out: p_out.min(1.0),
            seed,
        }
    }

    pub fn community_of(&self, node: usize) -> usize {
        node % self.n_communities
    }
}

/// Samples interactions with zero-padded keys (`u007`, `i042`), so sorted key
/// order matches the generator's indices.
pub fn planted_communities(params: &CommunityParams) -> Result<RawInteractions> {
    if params.n_communities == 0 {
        return Err(Error::invalid("n_communities", "must be at least 1"));
    }
    for (field, p) in [("p_in", params.p_in), ("p_out", params.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid(field, "must be a probability"));
        }
    }
    let uw = params.n_users.saturating_sub(1).to_string().len();
    let iw = params.n_items.saturating_sub(1).to_string().len();
    let mut rng = rng::seeded(params.seed, &[COMMUNITY_TAG]);
    let mut pairs = Vec::new();
    for u in 0..params.n_users {
        for i in 0..params.n_items {
            let p = if params.community_of(u) == params.community_of(i) {
                params.p_in
            } else {
                params.p_out
            };
            if rng.random::<f64>() < p {
                pairs.push((format!("u{u:0uw$}"), format!("i{i:0iw$}")));
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::EmptyInput("generator produced no interactions".into()));
    }
    Ok(RawInteractions::from_pairs(pairs))
}

/// Generates interactions and splits them per user.
pub fn planted_split(params: &CommunityParams, ratios: SplitRatios, split_seed: u64) -> Result<DatasetSplit> {
    build_split(&planted_communities(params)?, ratios, split_seed)
}
