//! On-disk layout of a run:
//!
//! ```text
//! <out>/.lock                     held while a command runs
//! <out>/<run_id>/config.toml      canonical configuration
//! <out>/<run_id>/manifest.json    run id, seed, version, timestamps, point status, file hashes
//! <out>/<run_id>/traces/…         quench traces (+ JSON sidecars)
//! <out>/<run_id>/points/…         per-point sweep records (resume state)
//! <out>/<run_id>/sweep/…          sweep CSVs, crossover and collapse JSON
//! <out>/<run_id>/shadows/…        estimator CSVs
//! <out>/<run_id>/theory/…         theory CSVs
//! ```

use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const LOCK_FILE: &str = ".lock";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Exclusive claim on an output root; released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        let path = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(Self { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked {
                dir: root.to_path_buf(),
                lock: path,
            }),
            Err(e) => Err(CliError::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

/// Directory of one run; remembers every file written through it.
#[derive(Debug)]
pub struct RunDir {
    pub root: PathBuf,
    pub out_root: PathBuf,
    files: Vec<String>,
}

impl RunDir {
    /// Opens `<out_root>/<run_id>`. Without `resume` any earlier content is
    /// removed first.
    pub fn open(out_root: &Path, run_id: &str, resume: bool) -> Result<Self, CliError> {
        let root = out_root.join(run_id);
        if !resume && root.exists() {
            fs::remove_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        }
        fs::create_dir_all(&root).map_err(|e| CliError::io(&root, e))?;
        Ok(Self {
            root,
            out_root: out_root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    /// Writes `rel` through `fill` and records it for the manifest.
    pub fn write_with<F>(&mut self, rel: &str, fill: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let path = self.path(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
        }
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    pub fn write_bytes(&mut self, rel: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(rel);
        self.write_with(rel, |w| w.write_all(bytes).map_err(|e| CliError::io(&path, e)))
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value).map_err(stark_magic::Error::from)?;
        text.push('\n');
        self.write_bytes(rel, text.as_bytes())
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointStatus {
    pub id: String,
    /// `"ok"` or `"failed"`.
    pub status: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PointStatus {
    pub fn ok(id: impl Into<String>) -> Self {
        Self { id: id.into(), status: "ok".into(), error: None }
    }

    pub fn failed(id: impl Into<String>, error: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            status: "failed".into(),
            error: Some(error.into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

/// Run record. The two timestamps are its only non-reproducible content.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: String,
    pub command: String,
    pub code_version: String,
    pub seed: u64,
    pub started_unix: f64,
    pub finished_unix: f64,
    /// `"ok"` or `"partial"` (some points failed).
    pub status: String,
    pub points: Vec<PointStatus>,
    pub files: Vec<FileEntry>,
}

pub fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

pub fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

impl RunManifest {
    pub fn file_entries(dir: &RunDir) -> Result<Vec<FileEntry>, CliError> {
        let mut paths: Vec<String> = dir.files().to_vec();
        paths.sort();
        paths.dedup();
        paths
            .into_iter()
            .map(|p| {
                let sha256 = sha256_file(&dir.path(&p))?;
                Ok(FileEntry { path: p, sha256 })
            })
            .collect()
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Ok(serde_json::from_str(&text).map_err(stark_magic::Error::from)?)
    }
}
