//! File helpers shared by the commands. Every artifact records the hash of
//! the configuration that produced it.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Marks failures caused by the inputs rather than by the computation.
#[derive(Debug)]
pub struct InputError(pub String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

pub fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

pub fn is_input_error(e: &anyhow::Error) -> bool {
    e.chain().any(|c| c.is::<InputError>())
}

pub fn read_text(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path)
        .map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))
}

pub fn read_bytes(path: &Path) -> anyhow::Result<Vec<u8>> {
    fs::read(path).map_err(|e| input_error(format!("cannot read {}: {e}", path.display())))
}

pub fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn stage_dir(out: &Path, stage: &str) -> PathBuf {
    out.join(stage)
}

const HASH_PREFIX: &str = "# config_hash=";

/// Prefixes CSV text with a comment line holding `hash`.
pub fn csv_with_hash(hash: &str, body: &str) -> String {
    format!("{HASH_PREFIX}{hash}\n{body}")
}

/// Hash from the leading comment of a CSV written by [`csv_with_hash`].
pub fn csv_hash(text: &str) -> Option<String> {
    text.lines()
        .take_while(|l| l.starts_with('#'))
        .find_map(|l| l.strip_prefix(HASH_PREFIX))
        .map(|h| h.trim().to_string())
}

/// JSON document wrapped with its producing hash.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Stamped<T> {
    pub config_hash: String,
    #[serde(flatten)]
    pub body: T,
}

pub fn write_json<T: Serialize>(path: &Path, hash: &str, body: &T) -> anyhow::Result<()> {
    let doc = Stamped {
        config_hash: hash.to_string(),
        body,
    };
    let mut text = serde_json::to_string_pretty(&doc).context("serializing JSON")?;
    text.push('\n');
    write(path, text)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> anyhow::Result<Stamped<T>> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

/// JSON lines with a first line `{"config_hash": ...}`.
pub fn jsonl_with_hash(hash: &str, body: &str) -> String {
    format!("{{\"config_hash\":\"{hash}\"}}\n{body}")
}

#[derive(Deserialize)]
struct HashLine {
    config_hash: String,
}

/// Splits a file written by [`jsonl_with_hash`] into hash and remaining lines.
pub fn split_jsonl(path: &Path, text: &str) -> anyhow::Result<(String, String)> {
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let head: HashLine = serde_json::from_str(first)
        .map_err(|e| input_error(format!("{}: missing config hash line: {e}", path.display())))?;
    Ok((head.config_hash, rest.to_string()))
}

pub fn expect_hash(what: &str, path: &Path, got: &str, expected: &str) -> anyhow::Result<()> {
    if got != expected {
        return Err(input_error(format!(
            "config hash mismatch: {what} {} was produced by {got}, expected {expected}",
            path.display()
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_hash_round_trip() {
        let text = csv_with_hash("0123abcd", "a,b\n1,2\n");
        assert_eq!(csv_hash(&text).as_deref(), Some("0123abcd"));
        assert_eq!(csv_hash("a,b\n"), None);
    }

    #[test]
    fn input_errors_survive_context() {
        let e = input_error("missing").context("loading cohort");
        assert!(is_input_error(&e));
        assert!(!is_input_error(&anyhow::anyhow!("boom")));
    }
}
