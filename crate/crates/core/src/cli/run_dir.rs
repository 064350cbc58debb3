//! Run directories: every artifact a command writes, plus a manifest with
//! content hashes of inputs and outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_file(path: &Path) -> Result<String> {
    fs::read(path).map(|b| sha256_hex(&b)).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Serialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    config: &'a RunConfig,
    inputs: &'a [FileHash],
    outputs: &'a [FileHash],
}

pub struct RunDir {
    root: PathBuf,
    inputs: Vec<FileHash>,
    outputs: Vec<FileHash>,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        Ok(Self { root: root.to_path_buf(), inputs: Vec::new(), outputs: Vec::new() })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Records an input file by the path it was given as.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = sha256_file(path)?;
        self.inputs.push(FileHash { path: path.display().to_string(), sha256 });
        Ok(())
    }

    /// Records a file already written under the run directory.
    pub fn record(&mut self, name: &str) -> Result<()> {
        let sha256 = sha256_file(&self.path(name))?;
        self.outputs.retain(|f| f.path != name);
        self.outputs.push(FileHash { path: name.to_string(), sha256 });
        Ok(())
    }

    pub fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(name)?;
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<PathBuf> {
        self.write_bytes(name, text.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value).expect("value serializes");
        s.push('\n');
        self.write_text(name, &s)
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<PathBuf> {
        let mut s = String::new();
        for item in items {
            s.push_str(&serde_json::to_string(item).expect("value serializes"));
            s.push('\n');
        }
        self.write_text(name, &s)
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Error::Validation(format!("{name}: {e}")))?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Validation(format!("{name}: {e}")))?;
        self.write_bytes(name, &bytes)
    }

    pub fn finish(self, command: &str, seed: u64, config: &RunConfig) -> Result<PathBuf> {
        let manifest = Manifest { command, seed, config, inputs: &self.inputs, outputs: &self.outputs };
        let path = self.root.join("manifest.json");
        let mut s = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        s.push('\n');
        fs::write(&path, s).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }
}
