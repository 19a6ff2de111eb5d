//! Per-worker storage media. A MEM worker keeps cells in a map; an EBS
//! worker keeps one file per key under its own directory.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use percent_encoding::{percent_decode_str, utf8_percent_encode, AsciiSet, NON_ALPHANUMERIC};

use crate::lattice::LwwCell;

/// Storage private to one worker.
pub trait TierStore: Send {
    fn get(&mut self, key: &str) -> Option<LwwCell>;
    /// Stores `cell` as-is; callers merge first.
    fn put(&mut self, key: &str, cell: &LwwCell);
    fn remove(&mut self, key: &str);
    fn keys(&self) -> Vec<String>;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    /// Sum of encoded cell sizes.
    fn bytes(&self) -> u64;
    /// Reads that found a corrupt record since the store was opened.
    fn integrity_faults(&self) -> u64 {
        0
    }
}

#[derive(Debug, Default)]
pub struct MemStore {
    cells: HashMap<String, LwwCell>,
    bytes: u64,
}

impl MemStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl TierStore for MemStore {
    fn get(&mut self, key: &str) -> Option<LwwCell> {
        self.cells.get(key).cloned()
    }

    fn put(&mut self, key: &str, cell: &LwwCell) {
        if let Some(old) = self.cells.insert(key.to_string(), cell.clone()) {
            self.bytes -= old.encoded_len() as u64;
        }
        self.bytes += cell.encoded_len() as u64;
    }

    fn remove(&mut self, key: &str) {
        if let Some(old) = self.cells.remove(key) {
            self.bytes -= old.encoded_len() as u64;
        }
    }

    fn keys(&self) -> Vec<String> {
        self.cells.keys().cloned().collect()
    }

    fn len(&self) -> usize {
        self.cells.len()
    }

    fn bytes(&self) -> u64 {
        self.bytes
    }
}

// Everything except unreserved URL characters gets escaped.
const KEY_ESCAPE: &AsciiSet = &NON_ALPHANUMERIC
    .remove(b'-')
    .remove(b'_')
    .remove(b'.')
    .remove(b'~');

/// File name for `key`.
pub fn encode_file_name(key: &str) -> String {
    utf8_percent_encode(key, KEY_ESCAPE).to_string()
}

pub fn decode_file_name(name: &str) -> Option<String> {
    percent_decode_str(name)
        .decode_utf8()
        .ok()
        .map(|s| s.into_owned())
}

/// One file per key at `<data_dir>/<node_id>/<worker_index>/<escaped key>`,
/// holding the canonical cell encoding.
#[derive(Debug)]
pub struct FileStore {
    dir: PathBuf,
    sizes: HashMap<String, u64>,
    bytes: u64,
    faults: u64,
}

impl FileStore {
    /// Opens a fresh store; whatever a previous incarnation left in the
    /// directory is discarded, since a restarted worker rejoins empty.
    pub fn open(data_dir: &Path, node_id: &str, worker: u32) -> io::Result<Self> {
        let dir = data_dir
            .join(encode_file_name(node_id))
            .join(worker.to_string());
        if dir.exists() {
            fs::remove_dir_all(&dir)?;
        }
        fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            sizes: HashMap::new(),
            bytes: 0,
            faults: 0,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_of(&self, key: &str) -> PathBuf {
        self.dir.join(encode_file_name(key))
    }

    /// Reads one key from disk, distinguishing absence from corruption.
    pub fn load(&self, key: &str) -> Result<Option<LwwCell>, LoadError> {
        match fs::read(self.path_of(key)) {
            Ok(bytes) => LwwCell::decode(&bytes)
                .map(Some)
                .map_err(|e| LoadError::Corrupt(e.to_string())),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(LoadError::Io(e.to_string())),
        }
    }

    fn forget(&mut self, key: &str) {
        if let Some(n) = self.sizes.remove(key) {
            self.bytes -= n;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LoadError {
    #[error("corrupt record: {0}")]
    Corrupt(String),
    #[error("read failed: {0}")]
    Io(String),
}

impl TierStore for FileStore {
    fn get(&mut self, key: &str) -> Option<LwwCell> {
        match self.load(key) {
            Ok(c) => c,
            Err(e) => {
                self.faults += 1;
                log::error!("integrity fault at {}: {e}", self.path_of(key).display());
                None
            }
        }
    }

    fn put(&mut self, key: &str, cell: &LwwCell) {
        let bytes = cell.encode();
        if let Err(e) = fs::write(self.path_of(key), &bytes) {
            log::error!("write failed at {}: {e}", self.path_of(key).display());
            return;
        }
        self.forget(key);
        self.sizes.insert(key.to_string(), bytes.len() as u64);
        self.bytes += bytes.len() as u64;
    }

    fn remove(&mut self, key: &str) {
        let _ = fs::remove_file(self.path_of(key));
        self.forget(key);
    }

    fn keys(&self) -> Vec<String> {
        self.sizes.keys().cloned().collect()
    }

    fn len(&self) -> usize {
        self.sizes.len()
    }

    fn bytes(&self) -> u64 {
        self.bytes
    }

    fn integrity_faults(&self) -> u64 {
        self.faults
    }
}
