//! CSV tables and the JSON summary.
//!
//! Every CSV starts with `# config_hash=<hex> master_seed=<seed>`. The hash
//! covers the experiment and the config document minus `workers`,
//! `output_dir` and `master_seed`, so it identifies the computation and the
//! tables are byte-identical for any worker count.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Self { name: name.into(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    pub fn with_columns(name: &str, columns: Vec<String>) -> Self {
        Self { name: name.into(), columns, rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, hash: &str, seed: u64) -> String {
        let mut s = format!("# config_hash={hash} master_seed={seed}\n");
        s.push_str(&self.columns.join(","));
        s.push('\n');
        for row in &self.rows {
            s.push_str(&row.join(","));
            s.push('\n');
        }
        s
    }
}

/// Round-trip float formatting (exponent form for very small or large values).
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn config_hash(cfg: &ExperimentConfig) -> String {
    let mut stripped = cfg.raw.clone();
    if let Value::Object(map) = &mut stripped {
        for key in ["workers", "output_dir", "master_seed"] {
            map.remove(key);
        }
    }
    let canonical = json!({ "experiment": cfg.experiment.as_str(), "config": stripped });
    let bytes = serde_json::to_vec(&canonical).expect("JSON values always serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Writes the tables and `summary.json` into `dir`, returning the paths written.
pub fn write_all(dir: &Path, tables: &[Table], summary: &Value, hash: &str, seed: u64) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for t in tables {
        let path = dir.join(&t.name);
        fs::File::create(&path)?.write_all(t.render(hash, seed).as_bytes())?;
        written.push(path);
    }
    let path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(summary).expect("JSON values always serialize");
    text.push('\n');
    fs::write(&path, text)?;
    written.push(path);
    Ok(written)
}
