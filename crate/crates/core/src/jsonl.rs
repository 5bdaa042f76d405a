//! JSON-lines reading and writing, plus the sidecar manifest that binds a
//! dataset file to the vocabulary its token ids refer to.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vocab::VocabHash;

/// Serializes records one per line, LF-terminated.
pub fn to_jsonl_string<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut f = fs::File::create(path)?;
    f.write_all(to_jsonl_string(records)?.as_bytes())?;
    Ok(())
}

/// Parses JSON lines; blank lines are skipped. Errors carry the 1-based line number.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line)
            .map_err(|e| Error::format("jsonl record", format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path)?;
    let mut text = String::new();
    for line in BufReader::new(f).lines() {
        text.push_str(&line?);
        text.push('\n');
    }
    parse_jsonl(&text)
}

/// Sidecar written next to every token-id dataset (`<file>.manifest.json`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub kind: String,
    pub records: usize,
    pub vocab_hash: VocabHash,
    pub seed: u64,
}

pub fn manifest_path(data_path: &Path) -> PathBuf {
    let mut name = data_path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    data_path.with_file_name(name)
}

impl Manifest {
    pub fn write_for(&self, data_path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(manifest_path(data_path), text)?;
        Ok(())
    }

    pub fn read_for(data_path: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest_path(data_path))?;
        serde_json::from_str(&text).map_err(|e| Error::format("manifest", e.to_string()))
    }

    /// Fails with [`Error::ModelVocabMismatch`] when the dataset was written under another vocab.
    pub fn check_vocab(&self, expected: &VocabHash) -> Result<()> {
        if &self.vocab_hash != expected {
            return Err(Error::ModelVocabMismatch);
        }
        Ok(())
    }
}
