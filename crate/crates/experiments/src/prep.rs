//! Loading and whitening CIFAR for the classification runs and analyses.

use ftn_core::data::{fit_whitening_cached, fit_whitening, load_cifar, preprocess, Split, IMAGE_BYTES};

use crate::config::DataConfig;
use crate::error::Result;

/// Whitened images, `n × 3072` each, with labels.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: Vec<f32>,
    pub train_labels: Vec<usize>,
    pub test: Vec<f32>,
    pub test_labels: Vec<usize>,
    pub classes: usize,
    pub cache_hit: bool,
}

impl Prepared {
    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }
}

/// Load both splits, apply GCN, then ZCA fitted on the training rows.
pub fn prepare(d: &DataConfig) -> Result<Prepared> {
    let root = d.resolved_root();
    let train = load_cifar(&root, d.dataset, Split::Train, d.train_subset)?;
    let test = load_cifar(&root, d.dataset, Split::Test, d.test_subset)?;
    let train_x = preprocess(&train.images, IMAGE_BYTES);
    let test_x = preprocess(&test.images, IMAGE_BYTES);
    let (zca, cache_hit) = match &d.whitening_cache {
        Some(dir) => {
            let (t, _, hit) = fit_whitening_cached(&train_x, IMAGE_BYTES, d.zca_lambda, dir)?;
            (t, hit)
        }
        None => (fit_whitening(&train_x, IMAGE_BYTES, d.zca_lambda)?, false),
    };
    let to_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<f32>>();
    Ok(Prepared {
        train: to_f32(zca.apply(&train_x)),
        train_labels: train.labels,
        test: to_f32(zca.apply(&test_x)),
        test_labels: test.labels,
        classes: d.dataset.classes(),
        cache_hit,
    })
}
