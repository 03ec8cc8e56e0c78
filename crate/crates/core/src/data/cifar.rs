//! The CIFAR binary format: one label byte (CIFAR-100: coarse then fine)
//! followed by 3072 pixel bytes, R then G then B planes, each row-major.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::DataError;

pub const IMAGE_BYTES: usize = 3 * 32 * 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CifarKind {
    Cifar10,
    Cifar100,
}

impl CifarKind {
    pub fn label_bytes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 1,
            CifarKind::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + IMAGE_BYTES
    }

    /// Number of (fine) classes.
    pub fn classes(self) -> usize {
        match self {
            CifarKind::Cifar10 => 10,
            CifarKind::Cifar100 => 100,
        }
    }

    fn files(self, split: Split) -> Vec<String> {
        match (self, split) {
            (CifarKind::Cifar10, Split::Train) => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
            (CifarKind::Cifar10, Split::Test) => vec!["test_batch.bin".into()],
            (CifarKind::Cifar100, Split::Train) => vec!["train.bin".into()],
            (CifarKind::Cifar100, Split::Test) => vec!["test.bin".into()],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CifarRecord {
    /// Class label (the fine label for CIFAR-100).
    pub label: u8,
    /// CIFAR-100 coarse label.
    pub coarse: Option<u8>,
    pub pixels: Vec<u8>,
}

/// Images as reals in `[0, 255]`, `n × 3072`, with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct CifarSet {
    pub images: Vec<f32>,
    pub labels: Vec<usize>,
}

impl CifarSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn image(&self, i: usize) -> &[f32] {
        &self.images[i * IMAGE_BYTES..(i + 1) * IMAGE_BYTES]
    }

    /// The first `n` images (or all of them).
    pub fn truncate(mut self, n: usize) -> Self {
        let n = n.min(self.len());
        self.images.truncate(n * IMAGE_BYTES);
        self.labels.truncate(n);
        self
    }

    fn push(&mut self, r: &CifarRecord) {
        self.images.extend(r.pixels.iter().map(|&b| b as f32));
        self.labels.push(r.label as usize);
    }
}

/// Parse a whole file's bytes; `path` only labels errors.
pub fn decode_records(bytes: &[u8], kind: CifarKind, path: &Path) -> Result<Vec<CifarRecord>, DataError> {
    let rl = kind.record_len();
    if bytes.len() % rl != 0 {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            offset: bytes.len() / rl * rl,
            len: bytes.len(),
        });
    }
    bytes
        .chunks_exact(rl)
        .enumerate()
        .map(|(i, rec)| {
            let offset = i * rl;
            let lb = kind.label_bytes();
            let label = rec[lb - 1];
            if label as usize >= kind.classes() {
                return Err(DataError::Label {
                    path: path.to_path_buf(),
                    offset: offset + lb - 1,
                    label,
                    classes: kind.classes(),
                });
            }
            let coarse = (kind == CifarKind::Cifar100).then(|| rec[0]);
            if let Some(c) = coarse.filter(|&c| c >= 20) {
                return Err(DataError::Label {
                    path: path.to_path_buf(),
                    offset,
                    label: c,
                    classes: 20,
                });
            }
            Ok(CifarRecord {
                label,
                coarse,
                pixels: rec[lb..].to_vec(),
            })
        })
        .collect()
}

pub fn encode_records(records: &[CifarRecord], kind: CifarKind) -> Vec<u8> {
    let mut out = Vec::with_capacity(records.len() * kind.record_len());
    for r in records {
        if kind == CifarKind::Cifar100 {
            out.push(r.coarse.unwrap_or(0));
        }
        out.push(r.label);
        out.extend_from_slice(&r.pixels);
    }
    out
}

fn read(path: PathBuf) -> Result<Vec<u8>, DataError> {
    std::fs::read(&path).map_err(|source| DataError::Io { path, source })
}

/// Load one split from the directory holding the published binary files,
/// stopping after `limit` records when given.
pub fn load_cifar(root: &Path, kind: CifarKind, split: Split, limit: Option<usize>) -> Result<CifarSet, DataError> {
    let limit = limit.unwrap_or(usize::MAX);
    let mut set = CifarSet {
        images: Vec::new(),
        labels: Vec::new(),
    };
    for name in kind.files(split) {
        if set.len() >= limit {
            break;
        }
        let path = root.join(name);
        let bytes = read(path.clone())?;
        for r in decode_records(&bytes, kind, &path)?.iter().take(limit - set.len()) {
            set.push(r);
        }
    }
    Ok(set)
}
