//! Deterministic synthetic image corpora (written in the official binary
//! formats) and slow, independent f64 reference computations used to
//! cross-check the production kernels.

use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use maskae_core::data::{
    save_cifar10, save_mnist, DatasetKind, DatasetSplit, RawImage, SplitRole,
};
use maskae_core::{Result, Shape, Tensor};

pub mod reference;

/// Fixed per-class stroke path: a seeded random walk generated once per
/// class, so the corpus has ten low-variance shape archetypes.
fn class_path(class: u8) -> Vec<(f64, f64)> {
    let mut rng = ChaCha20Rng::seed_from_u64(0xd161_7000 + class as u64);
    let mut x = rng.gen_range(10.0_f64..18.0);
    let mut y = rng.gen_range(10.0_f64..18.0);
    let mut angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut path = Vec::with_capacity(20);
    for _ in 0..20 {
        path.push((x, y));
        angle += rng.gen_range(-0.55..0.55);
        x = (x + 1.1 * angle.cos()).clamp(5.0, 23.0);
        y = (y + 1.1 * angle.sin()).clamp(5.0, 23.0);
    }
    path
}

/// Digit-like sketches on a black background: ten thin-stroke class
/// archetypes under small random jitter, mostly zero bytes, balanced
/// round-robin labels.
pub fn synth_mnist(n: usize, seed: u64) -> Vec<RawImage> {
    let archetypes: Vec<Vec<(f64, f64)>> = (0..10).map(class_path).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 10) as u8;
            let mut pixels = vec![0u8; 28 * 28];
            let (dx, dy) = (rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let theta: f64 = rng.gen_range(-0.1..0.1);
            let radius = rng.gen_range(1.3..1.6);
            let intensity = rng.gen_range(150.0_f64..=210.0);
            let (sin, cos) = theta.sin_cos();
            for &(px, py) in &archetypes[label as usize] {
                let (rx, ry) = (px - 14.0, py - 14.0);
                let cx = 14.0 + rx * cos - ry * sin + dx + rng.gen_range(-0.3..0.3);
                let cy = 14.0 + rx * sin + ry * cos + dy + rng.gen_range(-0.3..0.3);
                paint_dot(&mut pixels, 28, 28, cy, cx, radius, intensity);
            }
            RawImage::new(pixels, (28, 28, 1), label).expect("valid synth image")
        })
        .collect()
}

fn paint_dot(pixels: &mut [u8], h: usize, w: usize, cy: f64, cx: f64, radius: f64, intensity: f64) {
    let reach = radius + 1.0;
    let y0 = (cy - reach).max(0.0) as usize;
    let y1 = ((cy + reach) as usize).min(h - 1);
    let x0 = (cx - reach).max(0.0) as usize;
    let x1 = ((cx + reach) as usize).min(w - 1);
    for py in y0..=y1 {
        for px in x0..=x1 {
            let d = ((py as f64 - cy).powi(2) + (px as f64 - cx).powi(2)).sqrt();
            let v = (intensity * (radius + 0.5 - d).clamp(0.0, 1.0)) as u8;
            let cell = &mut pixels[py * w + px];
            *cell = (*cell).max(v);
        }
    }
}

/// Smooth color images: per-channel linear gradients, two soft radial
/// blobs, an additive rectangle, and light noise, then a per-image
/// per-channel wrapping offset so that each pixel position is uniformly
/// distributed across the corpus while neighboring pixels stay strongly
/// correlated.
pub fn synth_cifar(n: usize, seed: u64) -> Vec<RawImage> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut plane = vec![0.0_f64; 3 * 32 * 32];
            for c in 0..3 {
                let gx = rng.gen_range(-2.2..2.2);
                let gy = rng.gen_range(-2.2..2.2);
                for y in 0..32 {
                    for x in 0..32 {
                        plane[(c * 32 + y) * 32 + x] = gx * x as f64 + gy * y as f64;
                    }
                }
            }
            for _ in 0..2 {
                let bu = rng.gen_range(4.0..28.0);
                let bv = rng.gen_range(4.0..28.0);
                let sigma2 = rng.gen_range(9.0..64.0);
                let amp = [
                    rng.gen_range(-80.0..80.0),
                    rng.gen_range(-80.0..80.0),
                    rng.gen_range(-80.0..80.0),
                ];
                for (c, a) in amp.iter().enumerate() {
                    for y in 0..32 {
                        for x in 0..32 {
                            let d2 = (x as f64 - bu).powi(2) + (y as f64 - bv).powi(2);
                            plane[(c * 32 + y) * 32 + x] += a * (-d2 / (2.0 * sigma2)).exp();
                        }
                    }
                }
            }
            let y0 = rng.gen_range(0..24usize);
            let x0 = rng.gen_range(0..24usize);
            let y1 = (y0 + rng.gen_range(5..14)).min(32);
            let x1 = (x0 + rng.gen_range(5..14)).min(32);
            let delta = [
                rng.gen_range(-60.0..60.0),
                rng.gen_range(-60.0..60.0),
                rng.gen_range(-60.0..60.0),
            ];
            for (c, dv) in delta.iter().enumerate() {
                for y in y0..y1 {
                    for x in x0..x1 {
                        plane[(c * 32 + y) * 32 + x] += *dv;
                    }
                }
            }
            let mut pixels = vec![0u8; 3 * 32 * 32];
            for c in 0..3 {
                let offset = rng.gen_range(0..256i64);
                for p in 0..32 * 32 {
                    let idx = c * 32 * 32 + p;
                    let noisy = plane[idx] + rng.gen_range(-4.0..4.0);
                    pixels[idx] = (noisy.round() as i64 + offset).rem_euclid(256) as u8;
                }
            }
            RawImage::new(pixels, (32, 32, 3), (i % 10) as u8).expect("valid synth image")
        })
        .collect()
}

pub fn synth_split(kind: DatasetKind, n: usize, seed: u64, role: SplitRole) -> DatasetSplit {
    let images = match kind {
        DatasetKind::Mnist => synth_mnist(n, seed),
        DatasetKind::Cifar10 => synth_cifar(n, seed),
    };
    DatasetSplit::new(images, role, kind).expect("uniform synth geometry")
}

/// Writes a synthetic MNIST corpus under `dir` using the official IDX
/// file names.
pub fn write_mnist_dir(dir: &Path, train_n: usize, test_n: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let train = synth_split(DatasetKind::Mnist, train_n, seed, SplitRole::Train);
    let test = synth_split(DatasetKind::Mnist, test_n, seed ^ 0x5eed, SplitRole::Test);
    save_mnist(
        &train,
        dir.join("train-images-idx3-ubyte"),
        dir.join("train-labels-idx1-ubyte"),
    )?;
    save_mnist(
        &test,
        dir.join("t10k-images-idx3-ubyte"),
        dir.join("t10k-labels-idx1-ubyte"),
    )?;
    Ok(())
}

/// Writes a synthetic CIFAR-10 corpus under `dir` using the official
/// binary batch file names.
pub fn write_cifar_dir(dir: &Path, train_n: usize, test_n: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let train = synth_split(DatasetKind::Cifar10, train_n, seed, SplitRole::Train);
    let test = synth_split(DatasetKind::Cifar10, test_n, seed ^ 0x5eed, SplitRole::Test);
    save_cifar10(&train, dir.join("data_batch_1.bin"))?;
    save_cifar10(&test, dir.join("test_batch.bin"))?;
    Ok(())
}

/// Uniform [0,1) tensor for probes, deterministic in the seed.
pub fn random_unit_tensor(shape: Shape, seed: u64) -> Tensor {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let data = (0..shape.numel()).map(|_| rng.gen_range(0.0..1.0)).collect();
    Tensor::from_vec(shape, data).expect("matching length")
}
