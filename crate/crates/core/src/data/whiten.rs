//! Global contrast normalization and ZCA whitening.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::real::gemm;

use super::DataError;

pub const GCN_STD_FLOOR: f64 = 1e-8;
pub const ZCA_LAMBDA: f64 = 0.1;

const CACHE_MAGIC: &[u8; 8] = b"FTNZCA\0\0";
const CACHE_VERSION: u32 = 1;

/// Per image (row of length `dim`): subtract the mean, divide by the
/// standard deviation floored at [`GCN_STD_FLOOR`]. A constant image maps
/// to exact zeros.
pub fn gcn(images: &mut [f64], dim: usize) {
    for img in images.chunks_mut(dim) {
        if img.iter().all(|&v| v == img[0]) {
            img.fill(0.0);
            continue;
        }
        let n = img.len() as f64;
        let mean = img.iter().sum::<f64>() / n;
        let var = img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(GCN_STD_FLOOR);
        img.iter_mut().for_each(|v| *v = (*v - mean) / std);
    }
}

/// Scale `[0, 255]` pixels to `[0, 1]` and apply [`gcn`].
pub fn preprocess(pixels: &[f32], dim: usize) -> Vec<f64> {
    let mut x: Vec<f64> = pixels.iter().map(|&p| p as f64 / 255.0).collect();
    gcn(&mut x, dim);
    x
}

/// `x' = Z (x − μ)` with `Z = U diag((s + λ)^(-1/2)) Uᵀ` from the
/// eigendecomposition of the training covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub dim: usize,
    pub lambda: f64,
    pub mean: Vec<f64>,
    /// Symmetric `dim × dim`, row-major.
    pub zca: Vec<f64>,
}

impl WhiteningTransform {
    /// Whiten rows of length `dim`.
    pub fn apply(&self, images: &[f64]) -> Vec<f64> {
        let d = self.dim;
        let mut out = Vec::with_capacity(images.len());
        // bounded scratch for large sets
        for chunk in images.chunks(1024 * d) {
            let n = chunk.len() / d;
            let centered: Vec<f64> = chunk
                .chunks(d)
                .flat_map(|row| row.iter().zip(&self.mean).map(|(x, m)| x - m))
                .collect();
            let mut y = vec![0.0; n * d];
            gemm(n, d, d, &centered, false, &self.zca, false, 0.0, &mut y);
            out.extend(y);
        }
        out
    }
}

/// Fit on training rows only.
pub fn fit_whitening(train: &[f64], dim: usize, lambda: f64) -> Result<WhiteningTransform, DataError> {
    if dim == 0 || train.is_empty() || train.len() % dim != 0 {
        return Err(DataError::Invalid(format!(
            "{} values do not form rows of length {dim}",
            train.len()
        )));
    }
    if !(lambda >= 0.0) {
        return Err(DataError::Invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let n = train.len() / dim;
    let mut mean = vec![0.0; dim];
    for row in train.chunks(dim) {
        mean.iter_mut().zip(row).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<f64> = train
        .chunks(dim)
        .flat_map(|row| row.iter().zip(&mean).map(|(x, m)| x - m))
        .collect();
    let mut cov = vec![0.0; dim * dim];
    gemm(dim, n, dim, &centered, true, &centered, false, 0.0, &mut cov);
    cov.iter_mut().for_each(|c| *c /= n as f64);
    drop(centered);

    let eig = DMatrix::from_row_slice(dim, dim, &cov).symmetric_eigen();
    drop(cov);
    // column-major U is row-major Uᵀ: ut[j·d + i] = U[i][j]
    let ut = eig.eigenvectors.as_slice();
    let mut scaled = ut.to_vec();
    for (j, row) in scaled.chunks_mut(dim).enumerate() {
        let s = 1.0 / (eig.eigenvalues[j].max(0.0) + lambda).sqrt();
        if !s.is_finite() {
            return Err(DataError::Invalid(
                "singular covariance; use a positive lambda".into(),
            ));
        }
        row.iter_mut().for_each(|v| *v *= s);
    }
    let mut zca = vec![0.0; dim * dim];
    gemm(dim, dim, dim, ut, true, &scaled, false, 0.0, &mut zca);
    // remove rounding asymmetry
    for i in 0..dim {
        for j in i + 1..dim {
            let v = 0.5 * (zca[i * dim + j] + zca[j * dim + i]);
            zca[i * dim + j] = v;
            zca[j * dim + i] = v;
        }
    }
    Ok(WhiteningTransform {
        dim,
        lambda,
        mean,
        zca,
    })
}

fn cache_key(train: &[f64], dim: usize, lambda: f64) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((dim as u64).to_le_bytes());
    h.update(lambda.to_le_bytes());
    for v in train {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn cache_err(path: &Path, msg: impl Into<String>) -> DataError {
    DataError::Cache {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Cache layout: magic, u32 version, u64 dim, f64 lambda, 32-byte SHA-256
/// key, then the mean (`dim` f64) and the row-major matrix (`dim²` f64),
/// all little-endian.
fn write_cache(path: &Path, key: &[u8; 32], t: &WhiteningTransform) -> Result<(), DataError> {
    let io = |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut buf = Vec::with_capacity(60 + 8 * (t.dim + t.zca.len()));
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t.dim as u64).to_le_bytes());
    buf.extend_from_slice(&t.lambda.to_le_bytes());
    buf.extend_from_slice(key);
    for v in t.mean.iter().chain(&t.zca) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(io)?;
    f.write_all(&buf).map_err(io)?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(io)
}

fn read_cache(path: &Path, key: &[u8; 32]) -> Result<WhiteningTransform, DataError> {
    let buf = std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if buf.len() < 60 || &buf[..8] != CACHE_MAGIC {
        return Err(cache_err(path, "bad header"));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().expect("4 bytes"));
    if version != CACHE_VERSION {
        return Err(cache_err(path, format!("unsupported version {version}")));
    }
    let dim = u64::from_le_bytes(buf[12..20].try_into().expect("8 bytes")) as usize;
    let lambda = f64::from_le_bytes(buf[20..28].try_into().expect("8 bytes"));
    if &buf[28..60] != key {
        return Err(cache_err(path, "key mismatch"));
    }
    let expected = 60 + 8 * (dim + dim * dim);
    if buf.len() != expected {
        return Err(cache_err(path, format!("{} bytes, expected {expected}", buf.len())));
    }
    let vals: Vec<f64> = buf[60..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Ok(WhiteningTransform {
        dim,
        lambda,
        mean: vals[..dim].to_vec(),
        zca: vals[dim..].to_vec(),
    })
}

/// [`fit_whitening`] backed by a file in `cache_dir` named after a hash of
/// the training rows and `lambda`. Returns the transform, the cache path and
/// whether it was a cache hit.
pub fn fit_whitening_cached(
    train: &[f64],
    dim: usize,
    lambda: f64,
    cache_dir: &Path,
) -> Result<(WhiteningTransform, PathBuf, bool), DataError> {
    let key = cache_key(train, dim, lambda);
    let path = cache_dir.join(format!("zca-{}.bin", &hex(&key)[..16]));
    if path.exists() {
        if let Ok(t) = read_cache(&path, &key) {
            return Ok((t, path, true));
        }
    }
    let t = fit_whitening(train, dim, lambda)?;
    std::fs::create_dir_all(cache_dir).map_err(|source| DataError::Io {
        path: cache_dir.to_path_buf(),
        source,
    })?;
    write_cache(&path, &key, &t)?;
    Ok((t, path, false))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Correlated data: independent sources with large variances, mixed.
    fn correlated(n: usize, d: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mix: Vec<f64> = (0..d * d)
            .map(|k| if k % (d + 1) == 0 { 1.0 } else { 0.0 } + rng.random_range(-0.3..0.3))
            .collect();
        let mut out = Vec::with_capacity(n * d);
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|j| rng.random_range(-1.0..1.0) * (3.0 + j as f64)).collect();
            for i in 0..d {
                out.push(5.0 + (0..d).map(|j| mix[i * d + j] * z[j]).sum::<f64>());
            }
        }
        out
    }

    fn covariance(x: &[f64], d: usize) -> Vec<f64> {
        let n = x.len() / d;
        let mean: Vec<f64> = (0..d).map(|j| x.chunks(d).map(|r| r[j]).sum::<f64>() / n as f64).collect();
        let mut c = vec![0.0; d * d];
        for r in x.chunks(d) {
            for i in 0..d {
                for j in 0..d {
                    c[i * d + j] += (r[i] - mean[i]) * (r[j] - mean[j]) / n as f64;
                }
            }
        }
        c
    }

    #[test]
    fn constant_image_becomes_zero() {
        let mut x = vec![0.7; 12];
        gcn(&mut x, 12);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gcn_normalizes_each_row() {
        let mut x: Vec<f64> = (0..20).map(|v| (v * v) as f64).collect();
        gcn(&mut x, 10);
        for row in x.chunks(10) {
            let m = row.iter().sum::<f64>() / 10.0;
            let v = row.iter().map(|a| (a - m).powi(2)).sum::<f64>() / 10.0;
            assert!(m.abs() < 1e-12 && (v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn whitened_covariance_is_near_identity() {
        let d = 12;
        let x = correlated(5000, d, 1);
        let t = fit_whitening(&x, d, ZCA_LAMBDA).unwrap();
        let c = covariance(&t.apply(&x), d);
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| c[i * d + j].abs())
            .sum::<f64>()
            / (d * d - d) as f64;
        assert!(off < 0.05, "{off}");
        for i in 0..d {
            assert!((c[i * d + i] - 1.0).abs() < 0.05);
        }
        for i in 0..d {
            for j in 0..d {
                assert_eq!(t.zca[i * d + j], t.zca[j * d + i]);
            }
        }
    }

    #[test]
    fn refit_on_whitened_data_is_near_identity() {
        let d = 8;
        let x = correlated(4000, d, 2);
        let w = fit_whitening(&x, d, ZCA_LAMBDA).unwrap().apply(&x);
        let again = fit_whitening(&w, d, 1e-9).unwrap();
        for i in 0..d {
            for j in 0..d {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((again.zca[i * d + j] - e).abs() < 0.02, "{i},{j}: {}", again.zca[i * d + j]);
            }
        }
    }

    #[test]
    fn cache_round_trips_and_keys_on_lambda() {
        let dir = tempfile::tempdir().unwrap();
        let d = 6;
        let x = correlated(300, d, 3);
        let (a, path, hit) = fit_whitening_cached(&x, d, 0.1, dir.path()).unwrap();
        assert!(!hit && path.exists());
        let (b, _, hit) = fit_whitening_cached(&x, d, 0.1, dir.path()).unwrap();
        assert!(hit);
        assert_eq!(a, b);
        let (_, other, hit) = fit_whitening_cached(&x, d, 0.2, dir.path()).unwrap();
        assert!(!hit && other != path);
    }

    #[test]
    fn bad_rows_are_rejected() {
        assert!(fit_whitening(&[1.0, 2.0, 3.0], 2, 0.1).is_err());
    }
}
