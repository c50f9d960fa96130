//! Output directory handling and run metadata.

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, Result};

/// Output directory of one command invocation. Tracks written files for the
/// metadata record.
pub struct OutputDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)
            .map_err(|e| CliError::Io(format!("{}: {e}", root.display())))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Opens `rel` (creating parent directories) for buffered writing.
    pub fn file(&mut self, rel: &str) -> Result<BufWriter<File>> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let f = File::create(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        self.files.push(rel.to_string());
        Ok(BufWriter::new(f))
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

/// Contents of `run.json`.
#[derive(Debug, Serialize)]
pub struct RunMetadata {
    pub command: String,
    pub version: &'static str,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub flags: serde_json::Value,
    pub warnings: Vec<String>,
    pub failed_runs: Vec<String>,
    pub files: Vec<String>,
    pub wall_time_secs: f64,
}

impl RunMetadata {
    pub fn write(&self, out: &mut OutputDir) -> Result<()> {
        let w = out.file("run.json")?;
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }
}

pub fn hash_comment(hash: &str) -> String {
    format!("config_hash={hash}")
}
