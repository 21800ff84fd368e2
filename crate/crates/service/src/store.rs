use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use strandforge::pipeline::{Backend, HistoryEntry, SessionConfig};

/// Blobs named by the hex SHA-256 of their content, plus one JSON record
/// per session under a data directory.
#[derive(Debug, Clone)]
pub struct BlobStore {
    root: PathBuf,
}

/// What is persisted per session. The history is authoritative; blob ids
/// point at the latest outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub id: String,
    pub bust: String,
    pub backend: Backend,
    pub config: SessionConfig,
    pub history: Vec<HistoryEntry>,
    pub dense: Option<String>,
    pub field: Option<String>,
    pub strands: Option<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl BlobStore {
    pub fn open(root: &Path) -> io::Result<BlobStore> {
        fs::create_dir_all(root.join("blobs"))?;
        fs::create_dir_all(root.join("sessions"))?;
        Ok(BlobStore { root: root.to_path_buf() })
    }

    fn blob_path(&self, id: &str) -> PathBuf {
        self.root.join("blobs").join(id)
    }

    /// Stores `bytes` once and returns their id.
    pub fn put(&self, bytes: &[u8]) -> io::Result<String> {
        let id = sha256_hex(bytes);
        let path = self.blob_path(&id);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok(id)
    }

    pub fn get(&self, id: &str) -> io::Result<Vec<u8>> {
        if id.len() != 64 || !id.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "bad blob id"));
        }
        fs::read(self.blob_path(id))
    }

    pub fn save_record(&self, rec: &SessionRecord) -> io::Result<()> {
        let path = self.root.join("sessions").join(format!("{}.json", rec.id));
        write_atomic(&path, &serde_json::to_vec_pretty(rec)?)
    }

    pub fn records(&self) -> io::Result<Vec<SessionRecord>> {
        let mut out = Vec::new();
        let mut paths: Vec<PathBuf> = fs::read_dir(self.root.join("sessions"))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "json"))
            .collect();
        paths.sort();
        for p in paths {
            out.push(serde_json::from_slice(&fs::read(&p)?)?);
        }
        Ok(out)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}
