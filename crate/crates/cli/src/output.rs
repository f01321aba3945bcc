//! Artifact directory: JSON documents, tab-delimited tables and the manifest.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use crate::plan::Plan;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    #[serde(flatten)]
    pub plan: Plan,
    /// Paths relative to the manifest's directory.
    pub artifacts: Vec<String>,
}

pub struct OutDir {
    root: PathBuf,
    artifacts: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        })
    }

    /// Registers an artifact written by someone else.
    pub fn record(&mut self, rel: &str) {
        self.artifacts.push(rel.to_string());
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&p, bytes).with_context(|| format!("writing {}", p.display()))?;
        self.record(rel);
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write_bytes(rel, s.as_bytes())
    }

    pub fn write_table(&mut self, rel: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        let bytes = w.into_inner().map_err(|e| anyhow::anyhow!("table buffer: {e}"))?;
        self.write_bytes(rel, &bytes)
    }

    pub fn finish(self, plan: Plan) -> Result<PathBuf> {
        let manifest = RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool: env!("CARGO_PKG_NAME").to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            plan,
            artifacts: self.artifacts,
        };
        let p = self.root.join(MANIFEST_FILE);
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        fs::write(&p, s).with_context(|| format!("writing {}", p.display()))?;
        Ok(p)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let m: RunManifest = serde_json::from_str(&text)
        .map_err(|e| gla_core::GlaError::Config(format!("{}: {e}", path.display())))?;
    Ok(m)
}

pub fn fmt_f(x: f64) -> String {
    format!("{x:.6}")
}
