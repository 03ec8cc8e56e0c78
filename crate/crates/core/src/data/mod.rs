//! CIFAR ingestion, whitening, augmentation and synthetic pooling data.

mod augment;
mod cifar;
mod synthetic;
mod whiten;

pub use augment::{augment_batch, crop_flip, hflip, CROP, PAD};
pub use cifar::{decode_records, encode_records, load_cifar, CifarKind, CifarRecord, CifarSet, Split, IMAGE_BYTES};
pub use synthetic::{gen_pool_batch, PoolTarget, Regime, SyntheticPoolBatch, EPOCH_BATCHES, VALUE_MAX};
pub use whiten::{
    fit_whitening, fit_whitening_cached, gcn, preprocess, WhiteningTransform, GCN_STD_FLOOR, ZCA_LAMBDA,
};

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: truncated record at byte offset {offset} (file is {len} bytes)")]
    Truncated { path: PathBuf, offset: usize, len: usize },
    #[error("{path}: label {label} at byte offset {offset} is out of range for {classes} classes")]
    Label {
        path: PathBuf,
        offset: usize,
        label: u8,
        classes: usize,
    },
    #[error("whitening cache {path}: {msg}")]
    Cache { path: PathBuf, msg: String },
    #[error("{0}")]
    Invalid(String),
}

/// Independent 64-bit seed for one use of the run seed, e.g.
/// `derive_seed(seed, "augment", &[epoch, batch])`.
pub fn derive_seed(seed: u64, domain: &str, indices: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain.as_bytes());
    for i in indices {
        h.update(i.to_le_bytes());
    }
    u64::from_le_bytes(h.finalize()[..8].try_into().expect("8 bytes"))
}

pub fn derive_rng(seed: u64, domain: &str, indices: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, domain, indices))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_separate_domains_and_indices() {
        let a = derive_seed(1, "augment", &[0, 1]);
        assert_eq!(a, derive_seed(1, "augment", &[0, 1]));
        assert_ne!(a, derive_seed(1, "augment", &[1, 0]));
        assert_ne!(a, derive_seed(1, "dropout", &[0, 1]));
        assert_ne!(a, derive_seed(2, "augment", &[0, 1]));
    }
}
