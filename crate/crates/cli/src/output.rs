//! Output directory handling: locking, validated writes and the index file.

use std::fmt;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// Bumped whenever the layout or a file format changes.
pub const SCHEMA_VERSION: u32 = 1;
pub const LOCK_FILE: &str = ".velander.lock";

/// A required input file does not exist.
#[derive(Debug)]
pub struct MissingInput(pub PathBuf);

impl fmt::Display for MissingInput {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "input file not found: {}", self.0.display())
    }
}

impl std::error::Error for MissingInput {}

pub fn require_file(path: &Path) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(MissingInput(path.to_path_buf()).into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub analysis: String,
    pub dataset: String,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Index {
    pub schema_version: u32,
    pub command: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub constraint: String,
    pub entries: Vec<IndexEntry>,
}

/// One command's report directory, `<out_dir>/<command>`, held under the
/// output directory's lock for the lifetime of the value.
pub struct ReportDir {
    root: PathBuf,
    lock: PathBuf,
    index: Index,
}

impl ReportDir {
    pub fn open(out_dir: &Path, command: &str, seed: Option<u64>, constraint: &str) -> anyhow::Result<Self> {
        fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
        let lock = out_dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(_) => {}
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => bail!(
                "output directory {} is in use by another run (remove {} if it is stale)",
                out_dir.display(),
                lock.display()
            ),
            Err(e) => return Err(e).with_context(|| format!("creating {}", lock.display())),
        }
        let root = out_dir.join(command);
        let dir = ReportDir {
            index: Index {
                schema_version: SCHEMA_VERSION,
                command: command.into(),
                seed,
                constraint: constraint.into(),
                entries: Vec::new(),
            },
            root,
            lock,
        };
        if dir.root.exists() {
            fs::remove_dir_all(&dir.root).with_context(|| format!("clearing {}", dir.root.display()))?;
        }
        fs::create_dir_all(&dir.root).with_context(|| format!("creating {}", dir.root.display()))?;
        Ok(dir)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn target(&self, rel: &str) -> anyhow::Result<PathBuf> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
        }
        Ok(path)
    }

    /// Writes `value` as pretty JSON and checks that it parses back equal.
    pub fn json<T>(&self, rel: &str, value: &T) -> anyhow::Result<String>
    where
        T: Serialize + DeserializeOwned + PartialEq,
    {
        let path = self.target(rel)?;
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(&path, &text).with_context(|| format!("writing {}", path.display()))?;
        let back: T = serde_json::from_str(&fs::read_to_string(&path)?)
            .with_context(|| format!("validating {}", path.display()))?;
        if back != *value {
            bail!("{} does not round-trip", path.display());
        }
        Ok(rel.to_string())
    }

    /// Writes CSV text and checks its header line.
    pub fn csv(&self, rel: &str, header: &str, text: &str) -> anyhow::Result<String> {
        let path = self.target(rel)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        let written = fs::read_to_string(&path)?;
        if written.lines().next() != Some(header) {
            bail!("{} does not start with the header `{header}`", path.display());
        }
        Ok(rel.to_string())
    }

    pub fn text(&self, rel: &str, text: &str) -> anyhow::Result<String> {
        let path = self.target(rel)?;
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(rel.to_string())
    }

    /// Opens a file for a streaming writer.
    pub fn create(&self, rel: &str) -> anyhow::Result<(String, File)> {
        let path = self.target(rel)?;
        let file = File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        Ok((rel.to_string(), file))
    }

    pub fn record(&mut self, analysis: &str, dataset: &str, files: Vec<String>) {
        self.index.entries.push(IndexEntry {
            analysis: analysis.into(),
            dataset: dataset.into(),
            files,
        });
    }

    /// Writes the resolved config and `index.json`.
    pub fn finish(self, resolved_config: &str) -> anyhow::Result<Index> {
        self.text("resolved_config.toml", resolved_config)?;
        self.json("index.json", &self.index)?;
        Ok(self.index.clone())
    }
}

impl Drop for ReportDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}
