//! End-to-end training behaviour on small synthetic data.

mod common;

use common::planted_small;
use nccf::dataset::{build_split, DatasetSplit, RawInteractions, SplitRatios};
use nccf::model::Checkpoint;
use nccf::trainer::{train, TrainConfig, Trainer};

/// 30 users in three groups of ten; each group interacts with most of its own
/// block of 13 or 14 items and nothing else.
fn block_split() -> DatasetSplit {
    let mut pairs = Vec::new();
    for u in 0..30 {
        let block = u / 10;
        for i in 0..40 {
            if i % 3 == block && (u + i) % 5 != 0 {
                pairs.push((format!("u{u:02}"), format!("i{i:02}")));
            }
        }
    }
    build_split(&RawInteractions::from_pairs(pairs), SplitRatios::default(), 3).unwrap()
}

fn small_config() -> TrainConfig {
    TrainConfig {
        d: 16,
        batch_size: 64,
        lr: 1e-2,
        k_users: vec![3],
        k_items: vec![3],
        lambda1: 1e-6,
        lambda2: 1e-6,
        ..TrainConfig::default()
    }
}

#[test]
fn training_learns_the_block_structure() {
    let split = block_split();
    let config = TrainConfig {
        max_epochs: 200,
        patience: 200,
        ..small_config()
    };
    let (_, history) = train(config, &split).unwrap();
    assert_eq!(history.records.len(), 200);
    let first = history.records.first().unwrap().loss.bpr;
    let last = history.records.last().unwrap().loss.bpr;
    assert!(last < first, "BPR went from {first} to {last}");

    // A random ranking finds each held-out item in the top 10 with
    // probability 10 / candidates.
    let users: Vec<usize> = (0..30).filter(|&u| !split.valid_items_by_user[u].is_empty()).collect();
    let random: f64 = users
        .iter()
        .map(|&u| (10.0 / (40 - split.train_items_by_user[u].len()) as f64).min(1.0))
        .sum::<f64>()
        / users.len() as f64;
    let best = history.best_epoch.unwrap();
    let recall = history.records[best - 1].valid["recall@10"];
    assert!(recall > random, "valid recall@10 {recall} vs random {random}");
}

#[test]
fn training_is_deterministic() {
    let split = planted_small(60, 4, 900.0, 6);
    let config = TrainConfig {
        max_epochs: 6,
        ..small_config()
    };
    let (table_a, history_a) = train(config.clone(), &split).unwrap();
    let (table_b, history_b) = train(config, &split).unwrap();
    assert_eq!(table_a, table_b);
    assert_eq!(history_a.to_json_lines(false).unwrap(), history_b.to_json_lines(false).unwrap());
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let split = planted_small(60, 4, 900.0, 7);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resume.ckpt");
    let full = TrainConfig {
        max_epochs: 8,
        patience: 50,
        ..small_config()
    };
    let (table_full, history_full) = train(full.clone(), &split).unwrap();

    let first_half = TrainConfig {
        max_epochs: 4,
        ..full.clone()
    };
    Trainer::new(first_half, &split)
        .unwrap()
        .with_checkpoint(&path)
        .run(&mut |_| {})
        .unwrap();
    let ckpt = Checkpoint::read(&path).unwrap();
    let (table_resumed, history_resumed) = Trainer::new(full, &split)
        .unwrap()
        .resume(&ckpt)
        .unwrap()
        .run(&mut |_| {})
        .unwrap();

    assert_eq!(table_full, table_resumed);
    assert_eq!(
        history_full.to_json_lines(false).unwrap(),
        history_resumed.to_json_lines(false).unwrap()
    );
}

#[test]
fn resume_rejects_a_different_config() {
    let split = planted_small(40, 4, 500.0, 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("resume.ckpt");
    let config = TrainConfig {
        max_epochs: 1,
        ..small_config()
    };
    Trainer::new(config.clone(), &split)
        .unwrap()
        .with_checkpoint(&path)
        .run(&mut |_| {})
        .unwrap();
    let ckpt = Checkpoint::read(&path).unwrap();
    let other = TrainConfig { tau: 0.2, ..config };
    assert!(Trainer::new(other, &split).unwrap().resume(&ckpt).is_err());
}

#[test]
fn single_prototype_changes_nothing_but_the_estep_log() {
    let split = planted_small(60, 4, 900.0, 9);
    let base = TrainConfig {
        max_epochs: 4,
        lambda2: 0.0,
        ..small_config()
    };
    let single = TrainConfig {
        lambda2: 0.5,
        k_users: vec![1],
        k_items: vec![1],
        ..base.clone()
    };
    let (table_a, history_a) = train(base, &split).unwrap();
    let (table_b, history_b) = train(single, &split).unwrap();
    assert_eq!(table_a, table_b);
    assert!(history_b.records.iter().all(|r| r.estep.is_some() && r.loss.prototype == 0.0));
    let strip = |h: &nccf::trainer::TrainHistory| {
        h.records
            .iter()
            .map(|r| {
                let mut r = r.without_timing();
                r.estep = None;
                r
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(strip(&history_a), strip(&history_b));
}

#[test]
fn best_table_is_what_the_checkpoint_stores() {
    let split = planted_small(40, 4, 500.0, 10);
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        max_epochs: 3,
        ..small_config()
    };
    let (table, _) = train(config.clone(), &split).unwrap();
    let path = dir.path().join("model.ckpt");
    Checkpoint::for_table(&table, config.layers, 3).write(&path).unwrap();
    let restored = Checkpoint::read(&path).unwrap().table().unwrap();
    assert_eq!(restored, table);
}
