//! Run manifests: what was run, with which settings, on which inputs.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};
use sha2::{Digest, Sha256};

pub const MANIFEST_FILE: &str = "manifest.json";

/// Content hash in git's blob framing (`blob <len>\0<bytes>`), over SHA-256.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    hex::encode(h.finalize())
}

pub struct Manifest {
    command: String,
    seed: Option<u64>,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str) -> Self {
        Manifest {
            command: command.to_string(),
            seed: None,
            config: Value::Null,
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn config(mut self, config: Value) -> Self {
        self.config = config;
        self
    }

    /// Records files to hash. Directories contribute their regular files.
    pub fn inputs<P: AsRef<Path>>(mut self, paths: impl IntoIterator<Item = P>) -> Self {
        self.inputs.extend(paths.into_iter().map(|p| p.as_ref().to_path_buf()));
        self
    }

    pub fn outputs<S: ToString>(mut self, names: impl IntoIterator<Item = S>) -> Self {
        self.outputs.extend(names.into_iter().map(|s| s.to_string()));
        self
    }

    fn input_hashes(&self) -> Result<Map<String, Value>> {
        let mut files = Vec::new();
        for p in &self.inputs {
            if p.is_dir() {
                let mut entries: Vec<PathBuf> = fs::read_dir(p)
                    .with_context(|| format!("listing {}", p.display()))?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_file() && p.file_name().is_some_and(|n| n != MANIFEST_FILE))
                    .collect();
                entries.sort();
                files.extend(entries);
            } else {
                files.push(p.clone());
            }
        }
        let mut map = Map::new();
        for f in files {
            let bytes = fs::read(&f).with_context(|| format!("hashing {}", f.display()))?;
            map.insert(f.display().to_string(), content_hash(&bytes).into());
        }
        Ok(map)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let argv: Vec<String> = std::env::args().collect();
        let value = json!({
            "command": self.command,
            "argv": argv,
            "version": env!("CARGO_PKG_VERSION"),
            "seed": self.seed,
            "cagr_seed_env": std::env::var("CAGR_SEED").ok(),
            "config": self.config,
            "inputs": self.input_hashes()?,
            "outputs": self.outputs,
        });
        let path = dir.join(MANIFEST_FILE);
        fs::write(&path, serde_json::to_string_pretty(&value)? + "\n")
            .with_context(|| format!("writing {}", path.display()))
    }
}

/// `key = value` text as a JSON object of strings.
pub fn config_json(text: &str) -> Value {
    let map: Map<String, Value> = text
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), Value::String(v.trim().to_string())))
        .collect();
    Value::Object(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_uses_blob_framing() {
        let mut h = Sha256::new();
        h.update(b"blob 3\0abc");
        assert_eq!(content_hash(b"abc"), hex::encode(h.finalize()));
        assert_ne!(content_hash(b"abc"), content_hash(b"abd"));
    }

    #[test]
    fn config_text_to_json() {
        let v = config_json("mode = jt\nd = 32\n");
        assert_eq!(v["mode"], "jt");
        assert_eq!(v["d"], "32");
    }
}
