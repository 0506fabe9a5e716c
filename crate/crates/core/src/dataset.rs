//! Interaction ingestion, k-core filtering, per-user train/validation/test
//! splits and uniform negative sampling.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

const SPLIT_TAG: u64 = 0x5350_4c49;
const NEGATIVE_TAG: u64 = 0x4e45_4741;

/// Field delimiter of an interaction log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Tsv,
    Csv,
    /// `::`-separated, as in the MovieLens `ratings.dat` files.
    Dat,
}

impl Format {
    fn delimiter(self) -> &'static str {
        match self {
            Format::Tsv => "\t",
            Format::Csv => ",",
            Format::Dat => "::",
        }
    }
}

impl FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tsv" => Ok(Format::Tsv),
            "csv" => Ok(Format::Csv),
            "dat" => Ok(Format::Dat),
            other => Err(format!("unknown format `{other}` (expected tsv, csv or dat)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Interaction {
    pub user: String,
    pub item: String,
    pub rating: Option<f64>,
    /// Parsed when present, never used for splitting.
    pub timestamp: Option<f64>,
}

/// Deduplicated interaction records in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RawInteractions {
    pub records: Vec<Interaction>,
}

impl RawInteractions {
    /// Builds a record list from key pairs, dropping repeated pairs.
    pub fn from_pairs<U, I>(pairs: impl IntoIterator<Item = (U, I)>) -> Self
    where
        U: Into<String>,
        I: Into<String>,
    {
        let mut out = RawInteractions::default();
        let mut seen = HashSet::new();
        for (u, i) in pairs {
            let (user, item) = (u.into(), i.into());
            if seen.insert((user.clone(), item.clone())) {
                out.records.push(Interaction {
                    user,
                    item,
                    rating: None,
                    timestamp: None,
                });
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.user.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn n_items(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.item.as_str())
            .collect::<HashSet<_>>()
            .len()
    }
}

/// Reads `user<D>item[<D>rating][<D>timestamp]` lines. Blank lines and lines
/// starting with `#` are skipped; repeated (user, item) pairs keep their first
/// occurrence.
pub fn load_interactions(path: &Path, format: Format) -> Result<RawInteractions> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let delim = format.delimiter();

    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut records = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(delim).map(str::trim).collect();
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
            return Err(parse_err(format!(
                "expected at least 2 {format:?}-delimited fields, found `{trimmed}`"
            )));
        }
        let rating = match fields.get(2) {
            Some(r) if !r.is_empty() => Some(
                r.parse::<f64>()
                    .map_err(|_| parse_err(format!("invalid rating `{r}`")))?,
            ),
            _ => None,
        };
        let timestamp = match fields.get(3) {
            Some(ts) if !ts.is_empty() => Some(
                ts.parse::<f64>()
                    .map_err(|_| parse_err(format!("invalid timestamp `{ts}`")))?,
            ),
            _ => None,
        };
        let key = (fields[0].to_string(), fields[1].to_string());
        if seen.contains(&key) {
            continue;
        }
        seen.insert(key.clone());
        records.push(Interaction {
            user: key.0,
            item: key.1,
            rating,
            timestamp,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput(format!(
            "{} contains no interactions",
            path.display()
        )));
    }
    Ok(RawInteractions { records })
}

/// Keeps the records whose rating is at least `threshold`; records without a
/// rating are dropped.
pub fn filter_min_rating(raw: &RawInteractions, threshold: f64) -> Result<RawInteractions> {
    let records: Vec<Interaction> = raw
        .records
        .iter()
        .filter(|r| r.rating.is_some_and(|x| x >= threshold))
        .cloned()
        .collect();
    if records.is_empty() {
        return Err(Error::EmptyInput(format!("no interaction has a rating >= {threshold}")));
    }
    Ok(RawInteractions { records })
}

/// Iteratively removes users and items with fewer than `min_count`
/// interactions until every survivor meets the threshold. `min_count <= 1` is
/// the identity.
pub fn k_core_filter(raw: &RawInteractions, min_count: usize) -> Result<RawInteractions> {
    if raw.is_empty() {
        return Err(Error::KCoreEmpty);
    }
    if min_count <= 1 {
        return Ok(raw.clone());
    }
    let mut alive: Vec<bool> = vec![true; raw.len()];
    loop {
        let mut user_deg: HashMap<&str, usize> = HashMap::new();
        let mut item_deg: HashMap<&str, usize> = HashMap::new();
        for (r, _) in raw.records.iter().zip(&alive).filter(|(_, a)| **a) {
            *user_deg.entry(r.user.as_str()).or_default() += 1;
            *item_deg.entry(r.item.as_str()).or_default() += 1;
        }
        let mut removed = false;
        for (r, a) in raw.records.iter().zip(alive.iter_mut()) {
            if *a && (user_deg[r.user.as_str()] < min_count || item_deg[r.item.as_str()] < min_count)
            {
                *a = false;
                removed = true;
            }
        }
        if !removed {
            break;
        }
    }
    let records: Vec<Interaction> = raw
        .records
        .iter()
        .zip(&alive)
        .filter(|(_, a)| **a)
        .map(|(r, _)| r.clone())
        .collect();
    if records.is_empty() {
        return Err(Error::KCoreEmpty);
    }
    Ok(RawInteractions { records })
}

/// Train / validation / test proportions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.train, self.valid, self.test]
            .iter()
            .any(|x| !x.is_finite() || *x < 0.0)
        {
            return Err(Error::invalid("ratios", "ratios must be finite and nonnegative"));
        }
        if (self.train + self.valid + self.test - 1.0).abs() > 1e-9 {
            return Err(Error::invalid("ratios", "ratios must sum to 1"));
        }
        if self.train <= 0.0 {
            return Err(Error::invalid("ratios", "train ratio must be positive"));
        }
        Ok(())
    }

    /// Per-user counts: validation and test get `floor(ratio * n)`, train keeps
    /// the remainder.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        // Guards against products like 0.1 * 30 landing a hair below 3.
        let share = |r: f64| ((r * n as f64) + 1e-9).floor() as usize;
        let valid = share(self.valid);
        let test = share(self.test).min(n - valid);
        (n - valid - test, valid, test)
    }
}

impl FromStr for SplitRatios {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|e| format!("`{p}`: {e}")))
            .collect::<std::result::Result<_, _>>()?;
        match parts.as_slice() {
            [t, v, te] => SplitRatios::new(*t, *v, *te).map_err(|e| e.to_string()),
            _ => Err("expected three comma-separated ratios".into()),
        }
    }
}

/// Contiguous-ID interaction splits. Users are `0..n_users`, items `0..n_items`,
/// both numbered in ascending key order.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub n_users: usize,
    pub n_items: usize,
    pub train: Vec<(usize, usize)>,
    pub valid: Vec<(usize, usize)>,
    pub test: Vec<(usize, usize)>,
    pub user_keys: Vec<String>,
    pub item_keys: Vec<String>,
    pub train_items_by_user: Vec<Vec<usize>>,
    pub valid_items_by_user: Vec<Vec<usize>>,
    pub test_items_by_user: Vec<Vec<usize>>,
    pub seed: u64,
    pub min_count: usize,
}

impl DatasetSplit {
    /// Assembles a split from already-numbered interaction lists.
    pub fn from_parts(
        n_users: usize,
        n_items: usize,
        mut train: Vec<(usize, usize)>,
        mut valid: Vec<(usize, usize)>,
        mut test: Vec<(usize, usize)>,
    ) -> Result<Self> {
        for &(u, i) in train.iter().chain(&valid).chain(&test) {
            if u >= n_users || i >= n_items {
                return Err(Error::Precondition(format!(
                    "interaction ({u}, {i}) outside {n_users} users x {n_items} items"
                )));
            }
        }
        train.sort_unstable();
        valid.sort_unstable();
        test.sort_unstable();
        let by_user = |pairs: &[(usize, usize)]| {
            let mut out = vec![Vec::new(); n_users];
            for &(u, i) in pairs {
                out[u].push(i);
            }
            out
        };
        Ok(Self {
            n_users,
            n_items,
            train_items_by_user: by_user(&train),
            valid_items_by_user: by_user(&valid),
            test_items_by_user: by_user(&test),
            train,
            valid,
            test,
            user_keys: (0..n_users).map(|u| u.to_string()).collect(),
            item_keys: (0..n_items).map(|i| i.to_string()).collect(),
            seed: 0,
            min_count: 0,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn total(&self) -> usize {
        self.train.len() + self.valid.len() + self.test.len()
    }

    pub fn user_id(&self, key: &str) -> Option<usize> {
        self.user_keys.binary_search_by(|k| k.as_str().cmp(key)).ok()
    }

    pub fn item_id(&self, key: &str) -> Option<usize> {
        self.item_keys.binary_search_by(|k| k.as_str().cmp(key)).ok()
    }

    pub fn train_degree(&self, user: usize) -> usize {
        self.train_items_by_user[user].len()
    }

    pub fn item_train_degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n_items];
        for &(_, i) in &self.train {
            deg[i] += 1;
        }
        deg
    }

    /// Users without any train interaction.
    pub fn cold_users(&self) -> Vec<usize> {
        (0..self.n_users)
            .filter(|&u| self.train_items_by_user[u].is_empty())
            .collect()
    }

    /// Items without any train interaction.
    pub fn cold_items(&self) -> Vec<usize> {
        self.item_train_degrees()
            .iter()
            .enumerate()
            .filter(|(_, d)| **d == 0)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn header(&self) -> SplitHeader {
        SplitHeader {
            n_users: self.n_users,
            n_items: self.n_items,
            counts: SplitCounts {
                train: self.train.len(),
                valid: self.valid.len(),
                test: self.test.len(),
            },
            seed: self.seed,
            min_count: self.min_count,
            cold_users: self.cold_users().len(),
            cold_items: self.cold_items().len(),
        }
    }
}

/// Shuffles each user's interactions with a per-user generator and assigns
/// them proportionally; see [`SplitRatios::counts`] for the rounding rule.
pub fn build_split(raw: &RawInteractions, ratios: SplitRatios, seed: u64) -> Result<DatasetSplit> {
    ratios.validate()?;
    if raw.is_empty() {
        return Err(Error::EmptyInput("no interactions to split".into()));
    }
    let mut user_keys: Vec<String> = raw.records.iter().map(|r| r.user.clone()).collect();
    user_keys.sort_unstable();
    user_keys.dedup();
    let mut item_keys: Vec<String> = raw.records.iter().map(|r| r.item.clone()).collect();
    item_keys.sort_unstable();
    item_keys.dedup();
    let user_ids: HashMap<&str, usize> = user_keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();
    let item_ids: HashMap<&str, usize> = item_keys
        .iter()
        .enumerate()
        .map(|(i, k)| (k.as_str(), i))
        .collect();

    let mut per_user: Vec<Vec<usize>> = vec![Vec::new(); user_keys.len()];
    for r in &raw.records {
        per_user[user_ids[r.user.as_str()]].push(item_ids[r.item.as_str()]);
    }

    let (mut train, mut valid, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (u, items) in per_user.iter_mut().enumerate() {
        let mut rng = rng::seeded(seed, &[SPLIT_TAG, u as u64]);
        items.shuffle(&mut rng);
        let (n_train, n_valid, _) = ratios.counts(items.len());
        for (pos, &i) in items.iter().enumerate() {
            if pos < n_train {
                train.push((u, i));
            } else if pos < n_train + n_valid {
                valid.push((u, i));
            } else {
                test.push((u, i));
            }
        }
    }

    let mut split = DatasetSplit::from_parts(user_keys.len(), item_keys.len(), train, valid, test)?;
    split.user_keys = user_keys;
    split.item_keys = item_keys;
    split.seed = seed;
    Ok(split)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

/// One triple per train interaction; the negative is drawn uniformly from the
/// items outside the user's train set by rejection.
pub fn sample_negatives(split: &DatasetSplit, epoch_seed: u64) -> Result<Vec<TrainingTriple>> {
    for (u, items) in split.train_items_by_user.iter().enumerate() {
        if !items.is_empty() && items.len() >= split.n_items {
            return Err(Error::Precondition(format!(
                "user {u} has interacted with all {} items; no negative exists",
                split.n_items
            )));
        }
    }
    let mut rng = rng::seeded(epoch_seed, &[NEGATIVE_TAG]);
    let triples = split
        .train
        .iter()
        .map(|&(user, pos)| {
            let seen = &split.train_items_by_user[user];
            let neg = loop {
                let j = rng.random_range(0..split.n_items);
                if seen.binary_search(&j).is_err() {
                    break j;
                }
            };
            TrainingTriple { user, pos, neg }
        })
        .collect();
    Ok(triples)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

/// JSON header of an on-disk split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitHeader {
    pub n_users: usize,
    pub n_items: usize,
    pub counts: SplitCounts,
    pub seed: u64,
    pub min_count: usize,
    #[serde(default)]
    pub cold_users: usize,
    #[serde(default)]
    pub cold_items: usize,
}

pub const HEADER_FILE: &str = "split.json";
pub const SPLIT_FILES: [&str; 3] = ["train.tsv", "valid.tsv", "test.tsv"];
pub const USER_MAP_FILE: &str = "users.tsv";
pub const ITEM_MAP_FILE: &str = "items.tsv";

/// Writes `split.json`, `train.tsv`, `valid.tsv`, `test.tsv` (`user_id<TAB>item_id`)
/// and the `users.tsv` / `items.tsv` ID maps (`id<TAB>key`).
pub fn write_split(split: &DatasetSplit, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = serde_json::to_string_pretty(&split.header())?;
    let header_path = dir.join(HEADER_FILE);
    fs::write(&header_path, header + "\n").map_err(|e| Error::io(&header_path, e))?;

    for (name, pairs) in SPLIT_FILES
        .iter()
        .zip([&split.train, &split.valid, &split.test])
    {
        write_lines(&dir.join(name), pairs.iter().map(|(u, i)| format!("{u}\t{i}")))?;
    }
    write_lines(
        &dir.join(USER_MAP_FILE),
        split.user_keys.iter().enumerate().map(|(i, k)| format!("{i}\t{k}")),
    )?;
    write_lines(
        &dir.join(ITEM_MAP_FILE),
        split.item_keys.iter().enumerate().map(|(i, k)| format!("{i}\t{k}")),
    )?;
    Ok(())
}

fn write_lines(path: &Path, lines: impl Iterator<Item = String>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for line in lines {
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_split_header(dir: &Path) -> Result<SplitHeader> {
    let path = dir.join(HEADER_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Reads a split written by [`write_split`].
pub fn read_split(dir: &Path) -> Result<DatasetSplit> {
    let header = read_split_header(dir)?;
    let mut lists = Vec::with_capacity(3);
    for name in SPLIT_FILES {
        let path = dir.join(name);
        let pairs = read_pairs(&path)?;
        lists.push(pairs);
    }
    let test = lists.pop().unwrap_or_default();
    let valid = lists.pop().unwrap_or_default();
    let train = lists.pop().unwrap_or_default();
    let counts = SplitCounts {
        train: train.len(),
        valid: valid.len(),
        test: test.len(),
    };
    if counts != header.counts {
        return Err(Error::format(
            dir.join(HEADER_FILE),
            format!("header counts {:?} disagree with files {:?}", header.counts, counts),
        ));
    }
    let mut split = DatasetSplit::from_parts(header.n_users, header.n_items, train, valid, test)?;
    split.user_keys = read_keys(&dir.join(USER_MAP_FILE), header.n_users)?;
    split.item_keys = read_keys(&dir.join(ITEM_MAP_FILE), header.n_items)?;
    split.seed = header.seed;
    split.min_count = header.min_count;
    Ok(split)
}

fn read_pairs(path: &Path) -> Result<Vec<(usize, usize)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            let mut it = l.split('\t').map(|f| f.trim().parse::<usize>());
            match (it.next(), it.next()) {
                (Some(Ok(u)), Some(Ok(i))) => Ok((u, i)),
                _ => Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: n + 1,
                    message: format!("expected `user_id<TAB>item_id`, found `{l}`"),
                }),
            }
        })
        .collect()
}

fn read_keys(path: &Path, expected: usize) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut keys = Vec::with_capacity(expected);
    for (n, line) in text.lines().enumerate() {
        let (id, key) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: "expected `id<TAB>key`".into(),
        })?;
        if id.parse::<usize>().ok() != Some(keys.len()) {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: format!("expected id {}, found `{id}`", keys.len()),
            });
        }
        keys.push(key.to_string());
    }
    if keys.len() != expected {
        return Err(Error::format(
            path,
            format!("expected {expected} keys, found {}", keys.len()),
        ));
    }
    Ok(keys)
}
