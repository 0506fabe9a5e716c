//! Embedding table, forward pass, inner-product scoring and the on-disk
//! checkpoint/export formats.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::matrix::{dot, Matrix};
use crate::rng;

const INIT_TAG: u64 = 0x494e_4954;

/// One `d`-vector per node, users first, in adjacency node order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    n_users: usize,
    n_items: usize,
    weights: Matrix,
}

/// Half-width of the Xavier-uniform interval with `fan_in = fan_out = d`.
pub fn xavier_bound(d: usize) -> f64 {
    (6.0 / (2.0 * d as f64)).sqrt()
}

impl EmbeddingTable {
    /// Xavier-uniform initialization, deterministic per seed.
    pub fn init(n_users: usize, n_items: usize, d: usize, seed: u64) -> Result<Self> {
        if d == 0 {
            return Err(Error::invalid("dim", "embedding dimension must be at least 1"));
        }
        let bound = xavier_bound(d);
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::invalid("dim", e.to_string()))?;
        let mut rng = rng::seeded(seed, &[INIT_TAG]);
        let data = (0..(n_users + n_items) * d)
            .map(|_| dist.sample(&mut rng))
            .collect();
        Ok(Self {
            n_users,
            n_items,
            weights: Matrix::from_vec(n_users + n_items, d, data)?,
        })
    }

    pub fn from_matrix(n_users: usize, n_items: usize, weights: Matrix) -> Result<Self> {
        if weights.rows() != n_users + n_items {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", n_users + n_items),
                actual: format!("{} rows", weights.rows()),
            });
        }
        Ok(Self {
            n_users,
            n_items,
            weights,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.weights
    }

    pub fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.weights
    }

    pub fn into_matrix(self) -> Matrix {
        self.weights
    }

    pub fn user(&self, u: usize) -> &[f64] {
        self.weights.row(u)
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.weights.row(self.n_users + i)
    }
}

/// Layer outputs `Z^(0..=L)` and the uniform-average readout.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    n_users: usize,
    pub layers: Vec<Matrix>,
    pub readout: Matrix,
}

impl ForwardPass {
    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.readout.rows() - self.n_users
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn user(&self, u: usize) -> &[f64] {
        self.readout.row(u)
    }

    pub fn item(&self, i: usize) -> &[f64] {
        self.readout.row(self.n_users + i)
    }
}

/// `L` propagation layers followed by `readout = (1 / (L + 1)) * sum_l Z^(l)`.
pub fn forward(adj: &NormalizedAdjacency, table: &EmbeddingTable, layers: usize) -> Result<ForwardPass> {
    if layers == 0 {
        return Err(Error::invalid("layers", "at least one propagation layer is required"));
    }
    if table.n_users() != adj.n_users() || table.n_items() != adj.n_items() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} users x {} items", adj.n_users(), adj.n_items()),
            actual: format!("{} users x {} items", table.n_users(), table.n_items()),
        });
    }
    let mut outputs = Vec::with_capacity(layers + 1);
    outputs.push(table.matrix().clone());
    for l in 1..=layers {
        let next = adj.propagate(&outputs[l - 1])?;
        outputs.push(next);
    }
    let mut readout = Matrix::zeros(table.n_nodes(), table.dim());
    for z in &outputs {
        readout.add_scaled(z, 1.0)?;
    }
    readout.scale(1.0 / (layers + 1) as f64);
    Ok(ForwardPass {
        n_users: table.n_users(),
        layers: outputs,
        readout,
    })
}

/// Inner-product preference score.
#[inline]
pub fn score(user: &[f64], item: &[f64]) -> f64 {
    dot(user, item)
}

/// Scores of `user` against every item, in item-ID order.
pub fn score_all_items(fp: &ForwardPass, user: usize) -> Vec<f64> {
    let u = fp.user(user);
    (0..fp.n_items()).map(|i| score(u, fp.item(i))).collect()
}

/// JSON header of a checkpoint file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub n_users: usize,
    pub n_items: usize,
    pub d: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub epoch: usize,
    /// Names of the `(n_users + n_items) x d` payload blocks, in file order.
    pub blocks: Vec<String>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub extra: serde_json::Value,
}

pub const EMBEDDINGS_BLOCK: &str = "embeddings";

/// A checkpoint: one JSON header line, then each block as row-major
/// little-endian `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blocks: Vec<Matrix>,
}

impl Checkpoint {
    pub fn for_table(table: &EmbeddingTable, layers: usize, epoch: usize) -> Self {
        Self {
            header: CheckpointHeader {
                n_users: table.n_users(),
                n_items: table.n_items(),
                d: table.dim(),
                layers,
                epoch,
                blocks: vec![EMBEDDINGS_BLOCK.to_string()],
                extra: serde_json::Value::Null,
            },
            blocks: vec![table.matrix().clone()],
        }
    }

    pub fn push_block(&mut self, name: &str, block: Matrix) {
        self.header.blocks.push(name.to_string());
        self.blocks.push(block);
    }

    pub fn block(&self, name: &str) -> Option<&Matrix> {
        self.header
            .blocks
            .iter()
            .position(|b| b == name)
            .map(|k| &self.blocks[k])
    }

    pub fn table(&self) -> Result<EmbeddingTable> {
        let m = self.block(EMBEDDINGS_BLOCK).ok_or_else(|| {
            Error::Precondition("checkpoint has no embeddings block".into())
        })?;
        EmbeddingTable::from_matrix(self.header.n_users, self.header.n_items, m.clone())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = serde_json::to_string(&self.header)?;
        writeln!(w, "{header}").map_err(|e| Error::io(path, e))?;
        for block in &self.blocks {
            write_f64s(&mut w, block.as_slice()).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let header: CheckpointHeader = read_header_line(&mut r, path)?;
        let rows = header.n_users + header.n_items;
        let blocks = header
            .blocks
            .iter()
            .map(|_| read_matrix(&mut r, rows, header.d, path))
            .collect::<Result<Vec<_>>>()?;
        ensure_eof(&mut r, path)?;
        Ok(Self { header, blocks })
    }
}

/// Which per-node representation an export contains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportKind {
    /// Final readout representations used for scoring.
    Readout,
    /// Layer-0 learnable embeddings.
    Embeddings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportHeader {
    pub n_users: usize,
    pub n_items: usize,
    pub d: usize,
    pub kind: ExportKind,
}

/// Text export: one line per node, `user|item<TAB>id<TAB>key<TAB>v_1 ... v_d`.
pub fn export_text(path: &Path, split: &DatasetSplit, kind: ExportKind, m: &Matrix) -> Result<()> {
    check_export_rows(split, m)?;
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "# kind={kind:?} n_users={} n_items={} d={}", split.n_users, split.n_items, m.cols())
        .map_err(io)?;
    for v in 0..m.rows() {
        let (side, id, key) = if v < split.n_users {
            ("user", v, &split.user_keys[v])
        } else {
            let i = v - split.n_users;
            ("item", i, &split.item_keys[i])
        };
        let values: Vec<String> = m.row(v).iter().map(|x| format!("{x:e}")).collect();
        writeln!(w, "{side}\t{id}\t{key}\t{}", values.join(" ")).map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Binary export: JSON header line, then per node a little-endian `u64` node
/// ID followed by `d` little-endian `f64` values.
pub fn export_binary(path: &Path, split: &DatasetSplit, kind: ExportKind, m: &Matrix) -> Result<()> {
    check_export_rows(split, m)?;
    let header = ExportHeader {
        n_users: split.n_users,
        n_items: split.n_items,
        d: m.cols(),
        kind,
    };
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "{}", serde_json::to_string(&header)?).map_err(io)?;
    for v in 0..m.rows() {
        w.write_all(&(v as u64).to_le_bytes()).map_err(io)?;
        write_f64s(&mut w, m.row(v)).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn import_binary(path: &Path) -> Result<(ExportHeader, Matrix)> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let header: ExportHeader = read_header_line(&mut r, path)?;
    let rows = header.n_users + header.n_items;
    let mut data = Vec::with_capacity(rows * header.d);
    let mut id = [0u8; 8];
    for v in 0..rows {
        r.read_exact(&mut id).map_err(|e| Error::io(path, e))?;
        if u64::from_le_bytes(id) != v as u64 {
            return Err(Error::format(path, format!("row {v} carries node id {}", u64::from_le_bytes(id))));
        }
        data.extend(read_matrix(&mut r, 1, header.d, path)?.into_vec());
    }
    ensure_eof(&mut r, path)?;
    let d = header.d;
    Ok((header, Matrix::from_vec(rows, d, data)?))
}

fn check_export_rows(split: &DatasetSplit, m: &Matrix) -> Result<()> {
    if m.rows() != split.n_nodes() {
        return Err(Error::DimensionMismatch {
            expected: format!("{} rows", split.n_nodes()),
            actual: format!("{} rows", m.rows()),
        });
    }
    Ok(())
}

fn write_f64s(w: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for x in values {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)
}

fn read_header_line<T: serde::de::DeserializeOwned>(r: &mut impl BufRead, path: &Path) -> Result<T> {
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(|e| Error::io(path, e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::format(path, "missing header line"));
    }
    Ok(serde_json::from_slice(&line)?)
}

fn read_matrix(r: &mut impl Read, rows: usize, cols: usize, path: &Path) -> Result<Matrix> {
    let mut bytes = vec![0u8; rows * cols * 8];
    r.read_exact(&mut bytes)
        .map_err(|_| Error::format(path, "truncated payload"))?;
    let data = bytes
        .par_chunks_exact(8)
        .map(|c| {
            let mut b = [0u8; 8];
            b.copy_from_slice(c);
            f64::from_le_bytes(b)
        })
        .collect();
    Matrix::from_vec(rows, cols, data)
}

fn ensure_eof(r: &mut impl Read, path: &Path) -> Result<()> {
    let mut probe = [0u8; 1];
    match r.read(&mut probe).map_err(|e| Error::io(path, e))? {
        0 => Ok(()),
        _ => Err(Error::format(path, "trailing bytes after payload")),
    }
}
