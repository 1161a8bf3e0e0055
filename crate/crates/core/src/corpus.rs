//! Session and item catalog ingestion, frequency/length filtering and the
//! chronological train/validation/test split.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

/// Dense item index in `[0, n)` once a corpus has been filtered.
pub type ItemId = usize;

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed record: {message}")]
    Malformed {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate item_id {0} in catalog")]
    DuplicateItem(ItemId),
    #[error("sessions reference items missing from the catalog: {}", fmt_ids(.0))]
    MissingItems(Vec<ItemId>),
    #[error(
        "corpus is empty after filtering (min_item_freq={min_item_freq}, min_session_len={min_session_len}); lower the thresholds"
    )]
    EmptyAfterFilter {
        min_item_freq: usize,
        min_session_len: usize,
    },
    #[error("chronological split needs at least 10 sessions, got {0}")]
    TooFewSessions(usize),
    #[error("invalid split ratios {0:?}")]
    InvalidRatios([u32; 3]),
}

fn fmt_ids(ids: &[ItemId]) -> String {
    ids.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

/// Catalog entry with its text tokens and optional precomputed modality vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub item_id: ItemId,
    /// Title and brand words.
    #[serde(rename = "text", default)]
    pub text_tokens: Vec<String>,
    /// Words produced offline from the item image.
    #[serde(rename = "gen_text", default)]
    pub generated_tokens: Vec<String>,
    #[serde(rename = "mod_vec", default)]
    pub modality_vector: Option<Vec<f64>>,
}

impl Item {
    pub fn new(item_id: ItemId, text: &[&str]) -> Self {
        Self {
            item_id,
            text_tokens: text.iter().map(|s| s.to_string()).collect(),
            generated_tokens: Vec::new(),
            modality_vector: None,
        }
    }

    /// `text_tokens ++ generated_tokens`.
    pub fn all_tokens(&self) -> impl Iterator<Item = &str> {
        self.text_tokens
            .iter()
            .chain(&self.generated_tokens)
            .map(String::as_str)
    }

    /// Human-readable label used in explanations.
    pub fn display_name(&self) -> String {
        if self.text_tokens.is_empty() {
            format!("item {}", self.item_id)
        } else {
            self.text_tokens.join(" ")
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Session {
    pub session_id: u64,
    pub items: Vec<ItemId>,
    #[serde(rename = "ts")]
    pub timestamp: i64,
}

impl Session {
    /// Every item but the last one.
    pub fn prefix(&self) -> &[ItemId] {
        &self.items[..self.items.len().saturating_sub(1)]
    }

    /// The last item, for sessions with a non-empty prefix.
    pub fn label(&self) -> Option<ItemId> {
        if self.items.len() < 2 {
            return None;
        }
        self.items.last().copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SessionCorpus {
    /// Catalog sorted by `item_id`.
    pub items: Vec<Item>,
    pub sessions: Vec<Session>,
}

impl SessionCorpus {
    pub fn new(mut items: Vec<Item>, sessions: Vec<Session>) -> Result<Self, CorpusError> {
        items.sort_by_key(|i| i.item_id);
        if let Some(w) = items.windows(2).find(|w| w[0].item_id == w[1].item_id) {
            return Err(CorpusError::DuplicateItem(w[0].item_id));
        }
        let corpus = Self { items, sessions };
        let missing = corpus.missing_items();
        if !missing.is_empty() {
            return Err(CorpusError::MissingItems(missing));
        }
        Ok(corpus)
    }

    pub fn n(&self) -> usize {
        self.items.len()
    }

    pub fn item(&self, id: ItemId) -> Option<&Item> {
        self.items
            .binary_search_by_key(&id, |i| i.item_id)
            .ok()
            .map(|idx| &self.items[idx])
    }

    /// True when item ids are exactly `0..n` in order.
    pub fn is_dense(&self) -> bool {
        self.items.iter().enumerate().all(|(i, it)| it.item_id == i)
    }

    fn missing_items(&self) -> Vec<ItemId> {
        let referenced: BTreeSet<ItemId> = self.sessions.iter().flat_map(|s| s.items.iter().copied()).collect();
        referenced.into_iter().filter(|&id| self.item(id).is_none()).collect()
    }
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn read_sessions(path: &Path) -> Result<Vec<Session>, CorpusError> {
    read_jsonl(path)
}

pub fn read_items(path: &Path) -> Result<Vec<Item>, CorpusError> {
    read_jsonl(path)
}

/// Loads the sessions and item JSONL files and validates item references.
pub fn load_corpus(sessions_path: &Path, items_path: &Path) -> Result<SessionCorpus, CorpusError> {
    let items = read_items(items_path)?;
    let sessions = read_sessions(sessions_path)?;
    SessionCorpus::new(items, sessions)
}

fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut out = std::io::BufWriter::new(File::create(path).map_err(io_err)?);
    for r in records {
        let line = serde_json::to_string(r).expect("corpus records serialize");
        writeln!(out, "{line}").map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

pub fn write_sessions(path: &Path, sessions: &[Session]) -> Result<(), CorpusError> {
    write_jsonl(path, sessions)
}

pub fn write_items(path: &Path, items: &[Item]) -> Result<(), CorpusError> {
    write_jsonl(path, items)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub min_item_freq: usize,
    pub min_session_len: usize,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            min_item_freq: 5,
            min_session_len: 2,
        }
    }
}

/// Result of filtering: the re-indexed corpus plus the new-to-original id map.
#[derive(Debug, Clone, PartialEq)]
pub struct FilteredCorpus {
    pub corpus: SessionCorpus,
    /// `original_ids[new_id]` is the id the item had before re-indexing.
    pub original_ids: Vec<ItemId>,
}

/// Single pass: drop rare items from inside sessions, then drop short
/// sessions, then re-index the surviving items densely.
///
/// Item survival is not re-evaluated after short sessions are dropped.
pub fn filter_corpus(corpus: &SessionCorpus, config: FilterConfig) -> Result<FilteredCorpus, CorpusError> {
    let mut freq: BTreeMap<ItemId, usize> = BTreeMap::new();
    for s in &corpus.sessions {
        for &i in &s.items {
            *freq.entry(i).or_default() += 1;
        }
    }
    let keep = |id: &ItemId| freq.get(id).copied().unwrap_or(0) >= config.min_item_freq;

    let sessions: Vec<Session> = corpus
        .sessions
        .iter()
        .map(|s| Session {
            session_id: s.session_id,
            items: s.items.iter().copied().filter(keep).collect(),
            timestamp: s.timestamp,
        })
        .filter(|s| s.items.len() >= config.min_session_len)
        .collect();

    let survivors: Vec<&Item> = corpus.items.iter().filter(|it| keep(&it.item_id)).collect();
    if sessions.is_empty() || survivors.is_empty() {
        return Err(CorpusError::EmptyAfterFilter {
            min_item_freq: config.min_item_freq,
            min_session_len: config.min_session_len,
        });
    }

    let remap: BTreeMap<ItemId, ItemId> = survivors
        .iter()
        .enumerate()
        .map(|(new, it)| (it.item_id, new))
        .collect();
    let items = survivors
        .iter()
        .map(|it| Item {
            item_id: remap[&it.item_id],
            ..(*it).clone()
        })
        .collect();
    let sessions = sessions
        .into_iter()
        .map(|s| Session {
            items: s.items.iter().map(|i| remap[i]).collect(),
            ..s
        })
        .collect();
    Ok(FilteredCorpus {
        corpus: SessionCorpus { items, sessions },
        original_ids: survivors.iter().map(|it| it.item_id).collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Splits {
    pub train: Vec<Session>,
    pub validation: Vec<Session>,
    pub test: Vec<Session>,
}

pub const DEFAULT_SPLIT_RATIOS: [u32; 3] = [7, 2, 1];

/// Sorts by `(timestamp, session_id)` and cuts at `floor(N * r1 / R)` and
/// `floor(N * (r1 + r2) / R)`.
pub fn chronological_split(sessions: &[Session], ratios: [u32; 3]) -> Result<Splits, CorpusError> {
    let total: u64 = ratios.iter().map(|&r| r as u64).sum();
    if total == 0 {
        return Err(CorpusError::InvalidRatios(ratios));
    }
    let n = sessions.len();
    if n < 10 {
        return Err(CorpusError::TooFewSessions(n));
    }
    let mut sorted = sessions.to_vec();
    sorted.sort_by_key(|s| (s.timestamp, s.session_id));
    let first = (n as u64 * ratios[0] as u64 / total) as usize;
    let second = (n as u64 * (ratios[0] as u64 + ratios[1] as u64) / total) as usize;
    let test = sorted.split_off(second);
    let validation = sorted.split_off(first);
    Ok(Splits {
        train: sorted,
        validation,
        test,
    })
}
