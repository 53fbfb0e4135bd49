//! A small synthetic dataset in MNIST's IDX layout.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn idx_images(n: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + pixels.len());
    out.extend_from_slice(&0x0803u32.to_be_bytes());
    for d in [n as u32, 28, 28] {
        out.extend_from_slice(&d.to_be_bytes());
    }
    out.extend_from_slice(pixels);
    out
}

fn idx_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&0x0801u32.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Noise plus a bright square whose position encodes the class. Labels
/// cycle through 0..10, so every split is balanced.
fn generate(n: usize, rng: &mut ChaCha8Rng) -> (Vec<u8>, Vec<u8>) {
    let mut pixels = vec![0u8; n * 784];
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    for (img, &label) in pixels.chunks_mut(784).zip(&labels) {
        for p in img.iter_mut() {
            *p = rng.gen_range(0..90);
        }
        let (r0, c0) = (2 + 8 * (label as usize / 4), 2 + 6 * (label as usize % 4));
        for r in r0..r0 + 6 {
            for c in c0..c0 + 5 {
                img[r * 28 + c] = rng.gen_range(180..=255);
            }
        }
    }
    (pixels, labels)
}

pub fn write_synthetic_mnist(dir: &Path, train: usize, test: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    fs::create_dir_all(dir).unwrap();
    for (prefix, n) in [("train", train), ("t10k", test)] {
        let (pixels, labels) = generate(n, &mut rng);
        fs::write(
            dir.join(format!("{prefix}-images-idx3-ubyte")),
            idx_images(n, &pixels),
        )
        .unwrap();
        fs::write(
            dir.join(format!("{prefix}-labels-idx1-ubyte")),
            idx_labels(&labels),
        )
        .unwrap();
    }
}
