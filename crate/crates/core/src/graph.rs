//! Symmetrically normalized bipartite adjacency and the linear propagation
//! kernel.
//!
//! Node ordering is users `0..n_users` followed by items
//! `n_users..n_users + n_items`. Each train edge `(u, i)` is stored in both
//! directions with weight `1 / sqrt(|N_u| * |N_i|)`, where degrees count train
//! edges only. Rows are compressed (CSR) with column indices ascending, so each
//! output row of [`NormalizedAdjacency::propagate`] is a reduction in a fixed
//! order and the result does not depend on the thread count.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;

use crate::dataset::DatasetSplit;
use crate::error::{Error, Result};
use crate::matrix::{axpy, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    n_users: usize,
    n_items: usize,
    offsets: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    /// Builds the adjacency from the train interactions of `split`.
    pub fn from_split(split: &DatasetSplit) -> Result<Self> {
        if split.train.is_empty() {
            return Err(Error::Precondition("train split is empty".into()));
        }
        Self::from_edges(split.n_users, split.n_items, &split.train)
    }

    /// Builds the adjacency from `(user, item)` edges. Duplicate edges are
    /// counted once. An empty edge list gives a graph whose rows are all empty.
    pub fn from_edges(n_users: usize, n_items: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let n_nodes = n_users + n_items;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n_nodes];
        for &(u, i) in edges {
            if u >= n_users || i >= n_items {
                return Err(Error::Precondition(format!(
                    "edge ({u}, {i}) outside {n_users} users x {n_items} items"
                )));
            }
            adj[u].push(n_users + i);
            adj[n_users + i].push(u);
        }
        for row in &mut adj {
            row.sort_unstable();
            row.dedup();
        }
        let degree: Vec<f64> = adj.iter().map(|r| r.len() as f64).collect();

        let nnz = adj.iter().map(Vec::len).sum();
        let mut offsets = Vec::with_capacity(n_nodes + 1);
        let mut indices = Vec::with_capacity(nnz);
        let mut weights = Vec::with_capacity(nnz);
        offsets.push(0);
        for (v, row) in adj.iter().enumerate() {
            for &w in row {
                indices.push(w);
                weights.push(1.0 / (degree[v] * degree[w]).sqrt());
            }
            offsets.push(indices.len());
        }
        Ok(Self {
            n_users,
            n_items,
            offsets,
            indices,
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

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// `(neighbor, weight)` pairs of `node`, neighbors ascending.
    pub fn neighbors(&self, node: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.offsets[node]..self.offsets[node + 1];
        self.indices[range.clone()]
            .iter()
            .copied()
            .zip(self.weights[range].iter().copied())
    }

    /// Stored weight of the directed edge `from -> to`, if present.
    pub fn weight(&self, from: usize, to: usize) -> Option<f64> {
        let range = self.offsets[from]..self.offsets[from + 1];
        self.indices[range.clone()]
            .binary_search(&to)
            .ok()
            .map(|k| self.weights[range.start + k])
    }

    /// `out[v] = sum_{w in N(v)} weight(v, w) * input[w]`. No self loops; rows
    /// of isolated nodes come out zero. The operator is symmetric, so this is
    /// also its own adjoint.
    pub fn propagate(&self, input: &Matrix) -> Result<Matrix> {
        if input.rows() != self.n_nodes() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} rows", self.n_nodes()),
                actual: format!("{} rows", input.rows()),
            });
        }
        let d = input.cols();
        let mut out = Matrix::zeros(self.n_nodes(), d);
        if d == 0 {
            return Ok(out);
        }
        out.as_mut_slice()
            .par_chunks_mut(d)
            .enumerate()
            .for_each(|(v, row)| {
                for (w, weight) in self.neighbors(v) {
                    axpy(weight, input.row(w), row);
                }
            });
        Ok(out)
    }

    /// Writes the optional binary cache: little-endian `u64` header
    /// `(n_users, n_items, nnz)`, then `n_nodes + 1` `u64` offsets, `nnz` `u64`
    /// column indices and `nnz` `f64` weights.
    pub fn write_cache(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let mut put = |bytes: &[u8]| w.write_all(bytes).map_err(|e| Error::io(path, e));
        for x in [self.n_users, self.n_items, self.nnz()] {
            put(&(x as u64).to_le_bytes())?;
        }
        for &x in self.offsets.iter().chain(&self.indices) {
            put(&(x as u64).to_le_bytes())?;
        }
        for &x in &self.weights {
            put(&x.to_le_bytes())?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_cache(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let mut words = bytes.chunks_exact(8).map(|c| {
            let mut b = [0u8; 8];
            b.copy_from_slice(c);
            b
        });
        let truncated = || Error::format(path, "truncated adjacency cache");
        let mut next_u64 = || {
            words
                .next()
                .map(|b| u64::from_le_bytes(b) as usize)
                .ok_or_else(truncated)
        };
        let n_users = next_u64()?;
        let n_items = next_u64()?;
        let nnz = next_u64()?;
        let n_nodes = n_users + n_items;
        let expected = 8 * (3 + n_nodes + 1 + 2 * nnz);
        if bytes.len() != expected {
            return Err(Error::format(
                path,
                format!("expected {expected} bytes, found {}", bytes.len()),
            ));
        }
        let body = &bytes[24..];
        let read_u64 = |k: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&body[8 * k..8 * k + 8]);
            u64::from_le_bytes(b) as usize
        };
        let offsets: Vec<usize> = (0..=n_nodes).map(read_u64).collect();
        let indices: Vec<usize> = (0..nnz).map(|k| read_u64(n_nodes + 1 + k)).collect();
        let weights: Vec<f64> = (0..nnz)
            .map(|k| {
                let at = 8 * (n_nodes + 1 + nnz + k);
                let mut b = [0u8; 8];
                b.copy_from_slice(&body[at..at + 8]);
                f64::from_le_bytes(b)
            })
            .collect();
        if offsets.first() != Some(&0)
            || offsets.last() != Some(&nnz)
            || offsets.windows(2).any(|w| w[0] > w[1])
            || indices.iter().any(|&c| c >= n_nodes)
        {
            return Err(Error::format(path, "inconsistent adjacency structure"));
        }
        Ok(Self {
            n_users,
            n_items,
            offsets,
            indices,
            weights,
        })
    }
}
