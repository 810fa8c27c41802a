//! Report envelope and atomic file output.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use halpern_core::BoundIndex;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Top-level shape of every JSON report.
#[derive(Debug, Serialize)]
pub struct Report<T> {
    pub tool_version: &'static str,
    pub command: &'static str,
    pub config_digest: String,
    pub seed: u64,
    pub passed: bool,
    pub results: Vec<T>,
}

/// sha256 of the raw config bytes, lowercase hex.
pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A certified index as an exact decimal plus its magnitude.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Certified {
    pub value: String,
    pub log10: f64,
}

impl From<&BoundIndex> for Certified {
    fn from(b: &BoundIndex) -> Self {
        Self { value: b.to_string(), log10: b.log10_view() }
    }
}

/// A file that appears at its destination only on [`AtomicFile::commit`].
pub struct AtomicFile {
    tmp: PathBuf,
    dest: PathBuf,
    writer: BufWriter<File>,
}

impl AtomicFile {
    pub fn create(dest: &Path) -> io::Result<Self> {
        if let Some(dir) = dest.parent() {
            fs::create_dir_all(dir)?;
        }
        let mut name = dest.file_name().unwrap_or_default().to_os_string();
        name.push(".tmp");
        let tmp = dest.with_file_name(name);
        let writer = BufWriter::new(File::create(&tmp)?);
        Ok(Self { tmp, dest: dest.to_path_buf(), writer })
    }

    pub fn commit(self) -> io::Result<()> {
        let file = self.writer.into_inner().map_err(|e| e.into_error())?;
        file.sync_all()?;
        drop(file);
        fs::rename(&self.tmp, &self.dest)
    }
}

impl Write for AtomicFile {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.writer.write(buf)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.writer.flush()
    }
}

pub fn write_atomic(dest: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut f = AtomicFile::create(dest)?;
    f.write_all(bytes)?;
    f.commit()
}

pub fn write_json<T: Serialize>(dest: &Path, value: &T) -> io::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(io::Error::other)?;
    bytes.push(b'\n');
    write_atomic(dest, &bytes)
}
