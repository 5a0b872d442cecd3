use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Failure;

#[derive(Debug, Clone, Serialize)]
pub struct OutputFile {
    pub path: String,
    pub sha256: String,
    pub bytes: usize,
}

#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: Option<String>,
    pub parameters: serde_json::Value,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    pub outputs: Vec<OutputFile>,
}

/// Collects the files written by one run.
pub struct OutputDir {
    dir: PathBuf,
    files: Vec<OutputFile>,
    started: Instant,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl OutputDir {
    pub fn create(dir: &Path) -> Result<Self, Failure> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), Failure> {
        fs::write(self.dir.join(name), bytes)?;
        self.files.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len(),
        });
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<(), Failure> {
        let mut text = serde_json::to_string_pretty(value).map_err(|e| Failure::Io(e.to_string()))?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_csv<R: Serialize>(&mut self, name: &str, rows: &[R]) -> Result<(), Failure> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r).map_err(|e| Failure::Io(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| Failure::Io(e.to_string()))?;
        self.write(name, &bytes)
    }

    /// Writes `manifest.json`, which lists every other output.
    pub fn finish(self, subcommand: &str, config: Option<&Path>, parameters: serde_json::Value) -> Result<(), Failure> {
        let manifest = RunManifest {
            subcommand: subcommand.to_string(),
            config: config.map(|p| p.display().to_string()),
            parameters,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            outputs: self.files,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Failure::Io(e.to_string()))?;
        fs::write(self.dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
