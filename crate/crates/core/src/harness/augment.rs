//! Random crop and horizontal mirror augmentation.

use rand::Rng;

use crate::tensor::FeatureMap;

pub const PAD: usize = 4;

/// Zero-pads by `pad` on every side and crops back to the original size
/// at offset `(dy, dx)` into the padded image.
pub fn crop_padded(img: &FeatureMap, pad: usize, dy: usize, dx: usize) -> FeatureMap {
    let mut out = FeatureMap::zeros(img.batch, img.h, img.w, img.c);
    for b in 0..img.batch {
        for y in 0..img.h {
            let sy = (y + dy) as isize - pad as isize;
            if sy < 0 || sy >= img.h as isize {
                continue;
            }
            for x in 0..img.w {
                let sx = (x + dx) as isize - pad as isize;
                if sx < 0 || sx >= img.w as isize {
                    continue;
                }
                let src = img.index(b, sy as usize, sx as usize, 0);
                let dst = out.index(b, y, x, 0);
                out.values[dst..dst + img.c].copy_from_slice(&img.values[src..src + img.c]);
            }
        }
    }
    out
}

/// Flips left to right.
pub fn mirror(img: &FeatureMap) -> FeatureMap {
    let mut out = img.clone();
    for b in 0..img.batch {
        for y in 0..img.h {
            for x in 0..img.w {
                let src = img.index(b, y, img.w - 1 - x, 0);
                let dst = out.index(b, y, x, 0);
                out.values[dst..dst + img.c].copy_from_slice(&img.values[src..src + img.c]);
            }
        }
    }
    out
}

/// Pad-4 random crop followed by a mirror with probability 0.5.
pub fn augment<R: Rng>(img: &FeatureMap, rng: &mut R) -> FeatureMap {
    let dy = rng.random_range(0..=2 * PAD);
    let dx = rng.random_range(0..=2 * PAD);
    let cropped = crop_padded(img, PAD, dy, dx);
    if rng.random_bool(0.5) {
        mirror(&cropped)
    } else {
        cropped
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> FeatureMap {
        FeatureMap::from_vec(1, 3, 4, 2, (0..24).map(f64::from).collect()).unwrap()
    }

    #[test]
    fn mirror_is_an_involution() {
        let img = sample();
        assert_ne!(mirror(&img), img);
        assert_eq!(mirror(&mirror(&img)), img);
    }

    #[test]
    fn centre_crop_is_identity() {
        assert_eq!(crop_padded(&sample(), PAD, PAD, PAD), sample());
    }

    #[test]
    fn shifted_crop_pads_with_zeros() {
        let img = sample();
        let out = crop_padded(&img, PAD, PAD + 1, PAD);
        assert_eq!(out.get(0, 0, 0, 1), img.get(0, 1, 0, 1));
        assert!(out.channel_plane(0, 0)[8..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn seeded_replay() {
        let img = sample();
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..8).map(|_| augment(&img, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(3), run(3));
    }
}
