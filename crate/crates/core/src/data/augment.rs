//! Zero-pad, random crop and random horizontal flip for 3×32×32 images.

use rand::Rng;

use super::IMAGE_BYTES;

pub const PAD: usize = 4;
pub const CROP: usize = 32;
const SIDE: usize = 32;

/// Mirror each row of every channel in place.
pub fn hflip(img: &mut [f32]) {
    for row in img.chunks_mut(SIDE) {
        row.reverse();
    }
}

/// Crop at offset `(dy, dx)` of the image zero-padded by [`PAD`], then
/// optionally mirror. `(PAD, PAD)` without a flip is the identity.
pub fn crop_flip(img: &[f32], dy: usize, dx: usize, flip: bool, out: &mut [f32]) {
    assert!(dy <= 2 * PAD && dx <= 2 * PAD, "crop offset outside the padded image");
    for c in 0..3 {
        let src = &img[c * SIDE * SIDE..(c + 1) * SIDE * SIDE];
        let dst = &mut out[c * CROP * CROP..(c + 1) * CROP * CROP];
        for y in 0..CROP {
            let sy = (y + dy).wrapping_sub(PAD);
            for x in 0..CROP {
                let sx = (x + dx).wrapping_sub(PAD);
                let v = if sy < SIDE && sx < SIDE { src[sy * SIDE + sx] } else { 0.0 };
                let tx = if flip { CROP - 1 - x } else { x };
                dst[y * CROP + tx] = v;
            }
        }
    }
}

/// Augment every image of an `n × 3072` batch with offsets and flips drawn
/// from `rng`.
pub fn augment_batch<R: Rng>(images: &[f32], rng: &mut R) -> Vec<f32> {
    let mut out = vec![0.0; images.len()];
    for (src, dst) in images.chunks(IMAGE_BYTES).zip(out.chunks_mut(IMAGE_BYTES)) {
        let dy = rng.random_range(0..=2 * PAD);
        let dx = rng.random_range(0..=2 * PAD);
        let flip = rng.random_bool(0.5);
        crop_flip(src, dy, dx, flip, dst);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::derive_rng;

    fn image() -> Vec<f32> {
        (0..IMAGE_BYTES).map(|i| (i % 251) as f32).collect()
    }

    #[test]
    fn centre_crop_is_identity() {
        let img = image();
        let mut out = vec![0.0; IMAGE_BYTES];
        crop_flip(&img, PAD, PAD, false, &mut out);
        assert_eq!(out, img);
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = image();
        let mut x = img.clone();
        hflip(&mut x);
        assert_ne!(x, img);
        hflip(&mut x);
        assert_eq!(x, img);
        let mut out = vec![0.0; IMAGE_BYTES];
        crop_flip(&img, PAD, PAD, true, &mut out);
        hflip(&mut out);
        assert_eq!(out, img);
    }

    #[test]
    fn corner_crop_shifts_in_zeros() {
        let img = image();
        let mut out = vec![0.0; IMAGE_BYTES];
        crop_flip(&img, 0, 0, false, &mut out);
        assert_eq!(out[0], 0.0);
        assert_eq!(out[PAD * CROP + PAD], img[0]);
        assert_eq!(out[CROP * CROP - 1], img[(SIDE - PAD - 1) * SIDE + SIDE - PAD - 1]);
    }

    #[test]
    fn fixed_seed_is_deterministic() {
        let batch: Vec<f32> = image().repeat(4);
        let a = augment_batch(&batch, &mut derive_rng(7, "augment", &[0, 3]));
        let b = augment_batch(&batch, &mut derive_rng(7, "augment", &[0, 3]));
        let c = augment_batch(&batch, &mut derive_rng(7, "augment", &[0, 4]));
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
