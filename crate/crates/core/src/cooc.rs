//! Global item co-occurrence graph: pair counts, the row-normalized weight
//! matrix, neighbor sets and constraint-set sampling.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rand::seq::IteratorRandom;
use rand::Rng;

use crate::corpus::{ItemId, Session};
use crate::numcore::{Scalar, Tensor};

pub const SIDECAR_MAGIC: &[u8; 4] = b"COOC";
pub const SIDECAR_VERSION: u8 = 1;

#[derive(Debug, thiserror::Error)]
pub enum GraphError {
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt co-occurrence sidecar: {0}")]
    Corrupt(String),
    #[error("co-occurrence graph needs at least one item")]
    Empty,
}

/// Symmetric pair counts with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoocCounts {
    adj: Vec<BTreeMap<ItemId, u32>>,
}

impl CoocCounts {
    pub fn empty(n: usize) -> Self {
        Self {
            adj: vec![BTreeMap::new(); n],
        }
    }

    /// Counts each unordered pair of distinct items once per list.
    pub fn from_item_lists<'a>(lists: impl IntoIterator<Item = &'a [ItemId]>, n: usize) -> Self {
        let mut counts = Self::empty(n);
        for list in lists {
            let distinct: BTreeSet<ItemId> = list.iter().copied().collect();
            let distinct: Vec<ItemId> = distinct.into_iter().collect();
            if let Some(&max) = distinct.last() {
                if max >= counts.adj.len() {
                    counts.adj.resize(max + 1, BTreeMap::new());
                }
            }
            for (p, &i) in distinct.iter().enumerate() {
                for &k in &distinct[p + 1..] {
                    counts.bump(i, k, 1);
                }
            }
        }
        counts
    }

    fn bump(&mut self, i: ItemId, k: ItemId, by: u32) {
        *self.adj[i].entry(k).or_default() += by;
        *self.adj[k].entry(i).or_default() += by;
    }

    /// Sets a symmetric count directly; a zero count removes the pair.
    pub fn set(&mut self, i: ItemId, k: ItemId, count: u32) {
        let n = i.max(k) + 1;
        if self.adj.len() < n {
            self.adj.resize(n, BTreeMap::new());
        }
        if i == k {
            return;
        }
        for (a, b) in [(i, k), (k, i)] {
            if count == 0 {
                self.adj[a].remove(&b);
            } else {
                self.adj[a].insert(b, count);
            }
        }
    }

    pub fn n(&self) -> usize {
        self.adj.len()
    }

    pub fn count(&self, i: ItemId, k: ItemId) -> u32 {
        self.adj.get(i).and_then(|m| m.get(&k)).copied().unwrap_or(0)
    }

    /// Neighbors of `i` with their counts, ascending by id.
    pub fn row(&self, i: ItemId) -> impl Iterator<Item = (ItemId, u32)> + '_ {
        self.adj
            .get(i)
            .into_iter()
            .flat_map(|m| m.iter().map(|(&k, &c)| (k, c)))
    }

    /// Every pair `(i, k, count)` with `i < k`, ascending.
    pub fn pairs(&self) -> impl Iterator<Item = (ItemId, ItemId, u32)> + '_ {
        self.adj
            .iter()
            .enumerate()
            .flat_map(|(i, m)| m.range(i + 1..).map(move |(&k, &c)| (i, k, c)))
    }

    /// Merges counts computed on another shard.
    pub fn merge(&mut self, other: &CoocCounts) {
        if other.n() > self.n() {
            self.adj.resize(other.n(), BTreeMap::new());
        }
        for (i, k, c) in other.pairs() {
            self.bump(i, k, c);
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let pairs: Vec<_> = self.pairs().collect();
        let mut out = Vec::with_capacity(17 + pairs.len() * 12);
        out.extend_from_slice(SIDECAR_MAGIC);
        out.push(SIDECAR_VERSION);
        out.extend_from_slice(&(self.n() as u32).to_le_bytes());
        out.extend_from_slice(&(pairs.len() as u64).to_le_bytes());
        for (i, k, c) in pairs {
            out.extend_from_slice(&(i as u32).to_le_bytes());
            out.extend_from_slice(&(k as u32).to_le_bytes());
            out.extend_from_slice(&c.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GraphError> {
        let corrupt = |m: &str| GraphError::Corrupt(m.to_string());
        if bytes.len() < 17 || &bytes[..4] != SIDECAR_MAGIC {
            return Err(corrupt("bad header"));
        }
        if bytes[4] != SIDECAR_VERSION {
            return Err(GraphError::Corrupt(format!("unsupported version {}", bytes[4])));
        }
        let n = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
        let num = u64::from_le_bytes(bytes[9..17].try_into().unwrap()) as usize;
        let body = &bytes[17..];
        if Some(body.len()) != num.checked_mul(12) {
            return Err(corrupt("pair payload length mismatch"));
        }
        let mut counts = Self::empty(n);
        for chunk in body.chunks_exact(12) {
            let i = u32::from_le_bytes(chunk[0..4].try_into().unwrap()) as usize;
            let k = u32::from_le_bytes(chunk[4..8].try_into().unwrap()) as usize;
            let c = u32::from_le_bytes(chunk[8..12].try_into().unwrap());
            if i >= k || k >= n {
                return Err(GraphError::Corrupt(format!("invalid pair ({i}, {k})")));
            }
            counts.bump(i, k, c);
        }
        Ok(counts)
    }

    pub fn write_sidecar(&self, path: &Path) -> Result<(), GraphError> {
        std::fs::File::create(path)
            .and_then(|mut f| f.write_all(&self.to_bytes()))
            .map_err(|source| GraphError::Io {
                path: path.to_path_buf(),
                source,
            })
    }

    pub fn read_sidecar(path: &Path) -> Result<Self, GraphError> {
        let bytes = std::fs::read(path).map_err(|source| GraphError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_bytes(&bytes)
    }

    /// Text report of the `top` most frequent pairs.
    pub fn summary(&self, top: usize) -> String {
        let mut pairs: Vec<_> = self.pairs().collect();
        pairs.sort_by(|a, b| b.2.cmp(&a.2).then((a.0, a.1).cmp(&(b.0, b.1))));
        let mut out = String::new();
        let _ = writeln!(out, "items: {}", self.n());
        let _ = writeln!(out, "co-occurring pairs: {}", pairs.len());
        let _ = writeln!(out, "top {} pairs:", top.min(pairs.len()));
        for (i, k, c) in pairs.into_iter().take(top) {
            let _ = writeln!(out, "{i}\t{k}\t{c}");
        }
        out
    }
}

/// Counts over whole sessions.
pub fn count_pairs(sessions: &[Session], n: usize) -> CoocCounts {
    CoocCounts::from_item_lists(sessions.iter().map(|s| s.items.as_slice()), n)
}

/// Counts over session prefixes only, leaving each label out.
pub fn count_prefix_pairs(sessions: &[Session], n: usize) -> CoocCounts {
    CoocCounts::from_item_lists(sessions.iter().map(Session::prefix), n)
}

/// Co-occurrence graph with the dense row-normalized weight matrix.
#[derive(Debug, Clone)]
pub struct CoocGraph<T = f64> {
    pub counts: CoocCounts,
    matrix: Tensor<T>,
    neighbors: Vec<BTreeSet<ItemId>>,
}

impl<T: Scalar> CoocGraph<T> {
    /// `a[i][k] = count(i, k) / sum_j count(i, j)`; isolated items get a zero row.
    pub fn build(counts: CoocCounts, n: usize) -> Result<Self, GraphError> {
        let n = n.max(counts.n());
        if n == 0 {
            return Err(GraphError::Empty);
        }
        let mut counts = counts;
        if counts.n() < n {
            counts.adj.resize(n, BTreeMap::new());
        }
        let mut a = Tensor::zeros(&[n, n]);
        let mut neighbors = Vec::with_capacity(n);
        {
            let data = a.data_mut();
            for i in 0..n {
                let total: u64 = counts.row(i).map(|(_, c)| c as u64).sum();
                let mut set = BTreeSet::new();
                for (k, c) in counts.row(i) {
                    if c > 0 {
                        data[i * n + k] = T::lit(c as f64 / total as f64);
                        set.insert(k);
                    }
                }
                neighbors.push(set);
            }
        }
        Ok(Self {
            counts,
            matrix: a,
            neighbors,
        })
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.matrix
    }

    pub fn weight(&self, i: ItemId, k: ItemId) -> T {
        self.matrix.at(i, k)
    }

    pub fn neighbors(&self, i: ItemId) -> &BTreeSet<ItemId> {
        &self.neighbors[i]
    }

    pub fn count(&self, i: ItemId, k: ItemId) -> u32 {
        self.counts.count(i, k)
    }

    /// `N_s`: union of the neighbor sets of the given prefix items.
    pub fn session_union(&self, prefix: &[ItemId]) -> BTreeSet<ItemId> {
        prefix
            .iter()
            .filter(|&&i| i < self.n())
            .flat_map(|&i| self.neighbors[i].iter().copied())
            .collect()
    }

    /// `label ∈ N_s` without materializing the union.
    pub fn label_in_union(&self, prefix: &[ItemId], label: ItemId) -> bool {
        prefix
            .iter()
            .any(|&i| i < self.n() && self.neighbors[i].contains(&label))
    }

    /// Top-`l` neighbors by count plus `l` seeded non-neighbors.
    ///
    /// Positives break count ties by ascending id. Negatives are drawn
    /// uniformly without replacement from items outside `N_i ∪ {i}`.
    pub fn sample_constraint_sets(&self, item: ItemId, l: usize, rng: &mut impl Rng) -> ConstraintSets {
        let nbrs = &self.neighbors[item];
        if nbrs.is_empty() || l == 0 {
            return ConstraintSets::Exempt;
        }
        let positives = self.top_positives(item, l);
        let complement = (0..self.n()).filter(|k| *k != item && !nbrs.contains(k));
        let mut negatives = complement.choose_multiple(rng, l);
        negatives.sort_unstable();
        let short = negatives.len() < l;
        ConstraintSets::Sets {
            positives,
            negatives,
            short,
        }
    }

    pub fn top_positives(&self, item: ItemId, l: usize) -> Vec<ItemId> {
        let mut ranked: Vec<(ItemId, u32)> = self.counts.row(item).filter(|&(_, c)| c > 0).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.into_iter().take(l).map(|(k, _)| k).collect()
    }
}

/// Positive and negative sets for the co-occurrence constraint of one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConstraintSets {
    /// The item has no co-occurring neighbors.
    Exempt,
    Sets {
        positives: Vec<ItemId>,
        negatives: Vec<ItemId>,
        /// Fewer than `l` non-neighbors were available.
        short: bool,
    },
}
