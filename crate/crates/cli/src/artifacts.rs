//! Artifact layout under the output directory, hashing and the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// Paths of every artifact an experiment produces.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn train_demos(&self, env_id: &str) -> PathBuf {
        self.root.join("demos/train").join(format!("{env_id}.demoset"))
    }

    pub fn heldout_demos(&self, tier: &str, env_id: &str) -> PathBuf {
        self.root.join("demos/heldout").join(tier).join(format!("{env_id}.demoset"))
    }

    pub fn train_ctx(&self, env_id: &str) -> PathBuf {
        self.root.join("ctx/train").join(format!("{env_id}.ctxset"))
    }

    pub fn pretrained(&self) -> PathBuf {
        self.root.join("model/pretrained.ckpt")
    }

    pub fn finetuned(&self, tier: &str, env_id: &str, n_demos: usize) -> PathBuf {
        self.root.join("model/finetuned").join(tier).join(format!("{env_id}-k{n_demos}.ckpt"))
    }

    pub fn report(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    /// Path relative to the root, with forward slashes.
    pub fn relative(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .components()
            .map(|c| c.as_os_str().to_string_lossy())
            .collect::<Vec<_>>()
            .join("/")
    }
}

/// Fails with a dependency error naming `path` when it does not exist.
pub fn require(path: &Path, producer: &'static str) -> Result<(), CliError> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact(path.to_path_buf(), producer))
    }
}

pub fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

pub fn sha256_file(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Hashes of every artifact written so far, keyed by relative path.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub files: BTreeMap<String, String>,
}

impl Manifest {
    /// Loads the manifest, starting afresh when absent or written for a
    /// different configuration.
    pub fn load(layout: &Layout, config_hash: &str) -> anyhow::Result<Manifest> {
        let path = layout.manifest();
        if path.exists() {
            let text = std::fs::read_to_string(&path)?;
            let m: Manifest =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            if m.config_hash == config_hash {
                return Ok(m);
            }
        }
        Ok(Manifest { config_hash: config_hash.to_string(), files: BTreeMap::new() })
    }

    pub fn record(&mut self, layout: &Layout, path: &Path) -> anyhow::Result<()> {
        self.files.insert(layout.relative(path), sha256_file(path)?);
        Ok(())
    }

    pub fn save(&self, layout: &Layout) -> anyhow::Result<()> {
        let path = layout.manifest();
        ensure_parent(&path)?;
        std::fs::write(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> anyhow::Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
