//! File layout of a workspace directory.

use std::path::{Path, PathBuf};

pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn split(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.jsonl"))
    }

    pub fn items(&self) -> PathBuf {
        self.root.join("items.jsonl")
    }

    pub fn id_map(&self) -> PathBuf {
        self.root.join("id_map.json")
    }

    pub fn graph(&self) -> PathBuf {
        self.root.join("graph.bin")
    }

    pub fn graph_summary(&self) -> PathBuf {
        self.root.join("graph_summary.txt")
    }

    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("train_log.csv")
    }

    pub fn run_config(&self) -> PathBuf {
        self.root.join("run_config.json")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.root.join("embeddings")
    }
}
