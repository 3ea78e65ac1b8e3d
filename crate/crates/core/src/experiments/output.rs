//! Artifact directory layout and config-hash stamping.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Result;

/// SHA-256 of the config's JSON encoding, hex encoded.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Output root with `fields/`, `paths/`, `figures_data/` and `tables/`.
/// Every CSV opens with a `# config_hash=<hex>` line.
#[derive(Clone, Debug)]
pub struct OutputDir {
    root: PathBuf,
    hash: String,
}

pub const SUBDIRS: [&str; 4] = ["fields", "paths", "figures_data", "tables"];

impl OutputDir {
    pub fn create<C: Serialize>(root: impl AsRef<Path>, config: &C) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        for sub in SUBDIRS {
            fs::create_dir_all(root.join(sub))?;
        }
        Ok(Self {
            root,
            hash: config_hash(config)?,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Opens `<root>/<sub>/<name>` for writing, with the hash line written.
    pub fn csv(&self, sub: &str, name: &str) -> Result<BufWriter<File>> {
        let dir = self.root.join(sub);
        fs::create_dir_all(&dir)?;
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        writeln!(w, "# config_hash={}", self.hash)?;
        Ok(w)
    }

    /// Writes a plain-text file under `sub` with the hash line first.
    pub fn text(&self, sub: &str, name: &str, body: &str) -> Result<()> {
        let mut w = self.csv(sub, name)?;
        w.write_all(body.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    /// Writes `report.json` as `{"config_hash": .., "config": .., "report": ..}`.
    pub fn report<C: Serialize, R: Serialize>(&self, config: &C, report: &R) -> Result<PathBuf> {
        let path = self.root.join("report.json");
        let doc = serde_json::json!({
            "config_hash": self.hash,
            "config": config,
            "report": report,
        });
        fs::write(&path, serde_json::to_string_pretty(&doc)?)?;
        Ok(path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = config_hash(&serde_json::json!({"x": 1})).unwrap();
        assert_eq!(a, config_hash(&serde_json::json!({"x": 1})).unwrap());
        assert_ne!(a, config_hash(&serde_json::json!({"x": 2})).unwrap());
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn csv_starts_with_hash() {
        let dir = tempfile::tempdir().unwrap();
        let out = OutputDir::create(dir.path(), &serde_json::json!({"k": "v"})).unwrap();
        {
            let mut w = out.csv("fields", "a.csv").unwrap();
            writeln!(w, "x,y").unwrap();
        }
        let body = fs::read_to_string(dir.path().join("fields/a.csv")).unwrap();
        assert_eq!(body.lines().next().unwrap(), format!("# config_hash={}", out.hash()));
        for sub in SUBDIRS {
            assert!(dir.path().join(sub).is_dir());
        }
    }
}
