//! Run manifests: what was run, with which settings, producing which files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, Read};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl FileEntry {
    pub fn of(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?);
        let mut hasher = Sha256::new();
        let mut buf = vec![0u8; 1 << 16];
        let mut bytes = 0u64;
        loop {
            let k = r.read(&mut buf)?;
            if k == 0 {
                break;
            }
            hasher.update(&buf[..k]);
            bytes += k as u64;
        }
        Ok(Self {
            path: path.to_path_buf(),
            sha256: hex::encode(hasher.finalize()),
            bytes,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: BTreeMap<String, String>,
    pub threads: usize,
    pub deterministic: bool,
    pub started: String,
    pub finished: String,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
}

impl RunManifest {
    pub fn new(command: &str, threads: usize, deterministic: bool) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: BTreeMap::new(),
            threads,
            deterministic,
            started: chrono::Utc::now().to_rfc3339(),
            finished: String::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(FileEntry::of(path)?);
        Ok(())
    }

    pub fn output(&mut self, path: &Path) -> Result<()> {
        self.outputs.push(FileEntry::of(path)?);
        Ok(())
    }

    pub fn write(mut self, path: &Path) -> Result<()> {
        self.finished = chrono::Utc::now().to_rfc3339();
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        log::info!("manifest written to {}", path.display());
        Ok(())
    }

    #[cfg(test)]
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checksum_of_known_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("abc");
        std::fs::write(&p, b"abc").unwrap();
        let e = FileEntry::of(&p).unwrap();
        assert_eq!(e.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(e.bytes, 3);
    }

    #[test]
    fn manifest_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = RunManifest::new("gen", 1, true);
        m.config.insert("seed".into(), "3".into());
        let p = dir.path().join("manifest.json");
        m.clone().write(&p).unwrap();
        let back = RunManifest::read(&p).unwrap();
        assert_eq!(back.config, m.config);
        assert!(!back.finished.is_empty());
    }
}
