// SPDX-License-Identifier: Apache-2.0

//! Append-only JSONL audit log with size-based rotation.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use serde::Serialize;
use shellgate_core::VerdictJson;

pub const DEFAULT_MAX_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Serialize)]
pub struct AuditLine<'a> {
    pub ts_ms: u128,
    pub route: &'a str,
    pub http_status: u16,
    pub verdict: &'a VerdictJson,
}

#[derive(Debug)]
struct Inner {
    file: File,
    size: u64,
}

/// When a write would push the file past `max_bytes`, the current file is
/// renamed to `<path>.1` (replacing any older one) and a new file started.
#[derive(Debug)]
pub struct AuditLog {
    path: PathBuf,
    max_bytes: u64,
    inner: Mutex<Inner>,
}

fn open(path: &Path) -> std::io::Result<Inner> {
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let size = file.metadata()?.len();
    Ok(Inner { file, size })
}

pub fn rotated_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".1");
    PathBuf::from(s)
}

impl AuditLog {
    pub fn open(path: impl Into<PathBuf>, max_bytes: u64) -> std::io::Result<Self> {
        let path = path.into();
        let inner = open(&path)?;
        Ok(AuditLog {
            path,
            max_bytes: max_bytes.max(1),
            inner: Mutex::new(inner),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, line: &AuditLine<'_>) -> std::io::Result<()> {
        let mut bytes = serde_json::to_vec(line).map_err(std::io::Error::other)?;
        bytes.push(b'\n');
        let mut inner = self.inner.lock().expect("audit lock");
        if inner.size > 0 && inner.size + bytes.len() as u64 > self.max_bytes {
            inner.file.flush()?;
            fs::rename(&self.path, rotated_path(&self.path))?;
            *inner = open(&self.path)?;
        }
        inner.file.write_all(&bytes)?;
        inner.size += bytes.len() as u64;
        Ok(())
    }
}
