//! Dataset ingestion: MNIST IDX files and CIFAR-10 binary batches,
//! byte/float conversion, and seeded batch iteration.
//!
//! Pixel buffers are channel-planar row-major (C, then H, then W), matching
//! the CIFAR-10 record layout; grayscale images are the degenerate C=1 case.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803; // 3-D unsigned-byte tensor
const IDX_LABELS_MAGIC: u32 = 0x0000_0801; // 1-D unsigned-byte tensor
const CIFAR_RECORD_LEN: usize = 3073; // 1 label byte + 32*32*3 pixels

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DatasetKind {
    Mnist,
    Cifar10,
}

impl DatasetKind {
    /// Native image geometry (H, W, C) of the source files.
    pub fn geometry(self) -> (usize, usize, usize) {
        match self {
            DatasetKind::Mnist => (28, 28, 1),
            DatasetKind::Cifar10 => (32, 32, 3),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SplitRole {
    Train,
    Test,
}

/// One 8-bit image with its label and declared geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawImage {
    /// Channel-planar pixel bytes, length H*W*C.
    pub pixels: Vec<u8>,
    /// (H, W, C)
    pub geometry: (usize, usize, usize),
    pub label: u8,
}

impl RawImage {
    pub fn new(pixels: Vec<u8>, geometry: (usize, usize, usize), label: u8) -> Result<Self> {
        let (h, w, c) = geometry;
        if pixels.len() != h * w * c {
            return Err(Error::Shape(format!(
                "pixel buffer has {} bytes for geometry {}x{}x{}",
                pixels.len(),
                h,
                w,
                c
            )));
        }
        if label > 9 {
            return Err(Error::Format(format!("label {label} out of range 0..=9")));
        }
        Ok(RawImage {
            pixels,
            geometry,
            label,
        })
    }
}

/// A loaded dataset split with uniform geometry.
#[derive(Clone, Debug)]
pub struct DatasetSplit {
    pub images: Vec<RawImage>,
    pub role: SplitRole,
    pub source: DatasetKind,
}

impl DatasetSplit {
    pub fn new(images: Vec<RawImage>, role: SplitRole, source: DatasetKind) -> Result<Self> {
        if let Some(first) = images.first() {
            if images.iter().any(|img| img.geometry != first.geometry) {
                return Err(Error::Format("split mixes image geometries".into()));
            }
        }
        Ok(DatasetSplit {
            images,
            role,
            source,
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn geometry(&self) -> (usize, usize, usize) {
        self.images
            .first()
            .map(|img| img.geometry)
            .unwrap_or_else(|| self.source.geometry())
    }

    /// Keeps only the first `n` images (no-op when `n` covers the split).
    pub fn subsample(&mut self, n: usize) {
        if n < self.images.len() {
            self.images.truncate(n);
        }
    }

    /// Per-class image counts.
    pub fn label_histogram(&self) -> [usize; 10] {
        let mut hist = [0usize; 10];
        for img in &self.images {
            hist[img.label as usize] += 1;
        }
        hist
    }
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let slice = bytes
        .get(offset..offset + 4)
        .ok_or_else(|| Error::Format(format!("truncated file while reading {what}")))?;
    Ok(u32::from_be_bytes(slice.try_into().unwrap()))
}

/// Parses the IDX image/label file pair into a 28x28x1 split.
pub fn load_mnist(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    role: SplitRole,
) -> Result<DatasetSplit> {
    let image_bytes = fs::read(images_path.as_ref())?;
    let label_bytes = fs::read(labels_path.as_ref())?;

    let magic = read_be_u32(&image_bytes, 0, "image magic")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let count = read_be_u32(&image_bytes, 4, "image count")? as usize;
    let rows = read_be_u32(&image_bytes, 8, "row count")? as usize;
    let cols = read_be_u32(&image_bytes, 12, "column count")? as usize;

    let lmagic = read_be_u32(&label_bytes, 0, "label magic")?;
    if lmagic != IDX_LABELS_MAGIC {
        return Err(Error::Format(format!(
            "bad IDX label magic {lmagic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let lcount = read_be_u32(&label_bytes, 4, "label count")? as usize;
    if lcount != count {
        return Err(Error::Format(format!(
            "image file declares {count} items but label file declares {lcount}"
        )));
    }

    let pixel_len = rows * cols;
    if image_bytes.len() != 16 + count * pixel_len {
        return Err(Error::Format(format!(
            "IDX image payload is {} bytes, expected {}",
            image_bytes.len() - 16.min(image_bytes.len()),
            count * pixel_len
        )));
    }
    if label_bytes.len() != 8 + count {
        return Err(Error::Format(format!(
            "IDX label payload is {} bytes, expected {count}",
            label_bytes.len() - 8.min(label_bytes.len())
        )));
    }

    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let start = 16 + i * pixel_len;
        images.push(RawImage::new(
            image_bytes[start..start + pixel_len].to_vec(),
            (rows, cols, 1),
            label_bytes[8 + i],
        )?);
    }
    DatasetSplit::new(images, role, DatasetKind::Mnist)
}

/// Writes a split back to the IDX pair; inverse of [`load_mnist`].
pub fn save_mnist(
    split: &DatasetSplit,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let (h, w, c) = split.geometry();
    if c != 1 {
        return Err(Error::Invalid("IDX export requires single-channel images".into()));
    }
    let mut images = Vec::with_capacity(16 + split.len() * h * w);
    images.extend_from_slice(&IDX_IMAGES_MAGIC.to_be_bytes());
    images.extend_from_slice(&(split.len() as u32).to_be_bytes());
    images.extend_from_slice(&(h as u32).to_be_bytes());
    images.extend_from_slice(&(w as u32).to_be_bytes());
    let mut labels = Vec::with_capacity(8 + split.len());
    labels.extend_from_slice(&IDX_LABELS_MAGIC.to_be_bytes());
    labels.extend_from_slice(&(split.len() as u32).to_be_bytes());
    for img in &split.images {
        images.extend_from_slice(&img.pixels);
        labels.push(img.label);
    }
    fs::write(images_path.as_ref(), images)?;
    fs::write(labels_path.as_ref(), labels)?;
    Ok(())
}

/// Parses CIFAR-10 binary batch files (3073-byte records, label byte first,
/// then channel-planar R/G/B pixels).
pub fn load_cifar10(batch_paths: &[impl AsRef<Path>], role: SplitRole) -> Result<DatasetSplit> {
    if batch_paths.is_empty() {
        return Err(Error::Invalid("no CIFAR-10 batch files given".into()));
    }
    let mut images = Vec::new();
    for path in batch_paths {
        let bytes = fs::read(path.as_ref())?;
        if bytes.is_empty() || bytes.len() % CIFAR_RECORD_LEN != 0 {
            return Err(Error::Format(format!(
                "{}: {} bytes is not a whole number of {CIFAR_RECORD_LEN}-byte records",
                path.as_ref().display(),
                bytes.len()
            )));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD_LEN) {
            let label = record[0];
            if label > 9 {
                return Err(Error::Format(format!(
                    "{}: label byte {label} out of range 0..=9",
                    path.as_ref().display()
                )));
            }
            images.push(RawImage::new(record[1..].to_vec(), (32, 32, 3), label)?);
        }
    }
    DatasetSplit::new(images, role, DatasetKind::Cifar10)
}

/// Writes a split as one CIFAR-10 binary batch; inverse of [`load_cifar10`].
pub fn save_cifar10(split: &DatasetSplit, path: impl AsRef<Path>) -> Result<()> {
    let (h, w, c) = split.geometry();
    if (h, w, c) != (32, 32, 3) {
        return Err(Error::Invalid(format!(
            "CIFAR-10 export requires 32x32x3 images, got {h}x{w}x{c}"
        )));
    }
    let mut out = Vec::with_capacity(split.len() * CIFAR_RECORD_LEN);
    for img in &split.images {
        out.push(img.label);
        out.extend_from_slice(&img.pixels);
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Copies a single-channel image into three identical planes.
pub fn replicate_gray_to_3(img: &RawImage) -> RawImage {
    let (h, w, c) = img.geometry;
    if c != 1 {
        return img.clone();
    }
    let mut pixels = Vec::with_capacity(h * w * 3);
    for _ in 0..3 {
        pixels.extend_from_slice(&img.pixels);
    }
    RawImage {
        pixels,
        geometry: (h, w, 3),
        label: img.label,
    }
}

/// Scales bytes to [0,1] as a 1xCxHxW tensor. With `replicate_gray_to_3`
/// set, a single-channel image is first copied to three identical planes.
pub fn normalize(img: &RawImage, replicate_gray_to_3_flag: bool) -> Tensor {
    let src;
    let img = if replicate_gray_to_3_flag && img.geometry.2 == 1 {
        src = replicate_gray_to_3(img);
        &src
    } else {
        img
    };
    let (h, w, c) = img.geometry;
    let data = img.pixels.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(Shape::new(1, c, h, w), data).unwrap()
}

/// Converts [0,1] values back to bytes: clamp, scale by 255, round half
/// away from zero. Inverse of [`normalize`] on byte-valued inputs.
pub fn to_bytes(t: &Tensor) -> Vec<u8> {
    t.data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Seed-deterministic shuffled batch index iterator. Every image index
/// appears exactly once per epoch; the final batch may be short.
pub struct BatchIter {
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
}

impl BatchIter {
    pub fn new(split: &DatasetSplit, batch_size: usize, shuffle_seed: u64) -> Result<Self> {
        if split.is_empty() {
            return Err(Error::Invalid("cannot iterate an empty split".into()));
        }
        if batch_size == 0 {
            return Err(Error::Invalid("batch size must be at least 1".into()));
        }
        let mut order: Vec<usize> = (0..split.len()).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(shuffle_seed);
        order.shuffle(&mut rng);
        Ok(BatchIter {
            order,
            batch_size,
            pos: 0,
        })
    }
}

impl Iterator for BatchIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        Some(batch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn gray(pixels: Vec<u8>, label: u8) -> RawImage {
        let side = (pixels.len() as f64).sqrt() as usize;
        RawImage::new(pixels, (side, side, 1), label).unwrap()
    }

    #[test]
    fn idx_fixture_round_trips_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("imgs");
        let lbl_path = dir.path().join("lbls");
        // hand-built 2-image 2x2 IDX pair, byte by byte
        let mut imgs = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        imgs.extend_from_slice(&[10, 20, 30, 40, 50, 60, 70, 80]);
        let lbls = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        std::fs::write(&img_path, &imgs).unwrap();
        std::fs::write(&lbl_path, &lbls).unwrap();

        let split = load_mnist(&img_path, &lbl_path, SplitRole::Train).unwrap();
        assert_eq!(split.len(), 2);
        assert_eq!(split.images[0].pixels, vec![10, 20, 30, 40]);
        assert_eq!(split.images[0].label, 7);
        assert_eq!(split.images[1].pixels, vec![50, 60, 70, 80]);
        assert_eq!(split.images[1].label, 3);
        assert_eq!(split.images[0].geometry, (2, 2, 1));

        // write back and reload: bit-identical
        let img2 = dir.path().join("imgs2");
        let lbl2 = dir.path().join("lbls2");
        save_mnist(&split, &img2, &lbl2).unwrap();
        assert_eq!(std::fs::read(&img2).unwrap(), imgs);
        assert_eq!(std::fs::read(&lbl2).unwrap(), lbls);
    }

    #[test]
    fn idx_rejects_wrong_magic() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("imgs");
        let lbl_path = dir.path().join("lbls");
        // label-file magic in the image slot
        let imgs = vec![0, 0, 8, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0];
        let lbls = vec![0, 0, 8, 1, 0, 0, 0, 0];
        std::fs::write(&img_path, &imgs).unwrap();
        std::fs::write(&lbl_path, &lbls).unwrap();
        let err = load_mnist(&img_path, &lbl_path, SplitRole::Train).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn idx_rejects_count_mismatch_and_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("imgs");
        let lbl_path = dir.path().join("lbls");
        let mut imgs = vec![0, 0, 8, 3, 0, 0, 0, 1, 0, 0, 0, 2, 0, 0, 0, 2];
        imgs.extend_from_slice(&[1, 2, 3, 4]);
        std::fs::write(&img_path, &imgs).unwrap();
        // label file declares 2 items
        std::fs::write(&lbl_path, [0, 0, 8, 1, 0, 0, 0, 2, 1, 2]).unwrap();
        assert!(load_mnist(&img_path, &lbl_path, SplitRole::Test).is_err());

        // truncated image payload
        std::fs::write(&lbl_path, [0, 0, 8, 1, 0, 0, 0, 1, 1]).unwrap();
        std::fs::write(&img_path, &imgs[..imgs.len() - 2]).unwrap();
        assert!(load_mnist(&img_path, &lbl_path, SplitRole::Test).is_err());
    }

    #[test]
    fn cifar_fixture_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.bin");
        let mut bytes = Vec::new();
        for (label, fill) in [(3u8, 7u8), (9, 250)] {
            bytes.push(label);
            bytes.extend(std::iter::repeat(fill).take(3072));
        }
        std::fs::write(&path, &bytes).unwrap();
        let split = load_cifar10(&[&path], SplitRole::Test).unwrap();
        assert_eq!(split.len(), 2);
        assert_eq!(split.images[0].label, 3);
        assert!(split.images[0].pixels.iter().all(|&b| b == 7));
        assert_eq!(split.images[0].pixels.len(), 3072);
        assert_eq!(split.images[1].label, 9);
        assert!(split.images[1].pixels.iter().all(|&b| b == 250));

        let out = dir.path().join("copy.bin");
        save_cifar10(&split, &out).unwrap();
        assert_eq!(std::fs::read(&out).unwrap(), bytes);
    }

    #[test]
    fn cifar_rejects_bad_record_sizes_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, vec![0u8; 3072]).unwrap(); // not a multiple of 3073
        assert!(load_cifar10(&[&path], SplitRole::Test).is_err());

        let mut rec = vec![10u8]; // label out of range
        rec.extend(std::iter::repeat(0u8).take(3072));
        std::fs::write(&path, &rec).unwrap();
        assert!(load_cifar10(&[&path], SplitRole::Test).is_err());
    }

    #[test]
    fn normalize_scales_and_replicates() {
        let img = gray(vec![0, 255, 128, 64], 1);
        let t = normalize(&img, false);
        assert_eq!(t.shape, Shape::new(1, 1, 2, 2));
        assert_eq!(t.data[0], 0.0);
        assert_eq!(t.data[1], 1.0);

        let t3 = normalize(&img, true);
        assert_eq!(t3.shape, Shape::new(1, 3, 2, 2));
        assert_eq!(&t3.data[0..4], &t3.data[4..8]);
        assert_eq!(&t3.data[0..4], &t3.data[8..12]);

        // 28x28 gray replicated: 2352 values
        let big = RawImage::new(vec![0; 784], (28, 28, 1), 0).unwrap();
        assert_eq!(normalize(&big, true).numel(), 2352);
        assert!(normalize(&big, true).data.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn to_bytes_rounds_half_away_from_zero() {
        let t = Tensor::from_vec(
            Shape::new(1, 1, 1, 4),
            vec![1.0, 0.0, 0.5, 1.5], // 1.5 clamps to 1.0
        )
        .unwrap();
        assert_eq!(to_bytes(&t), vec![255, 0, 128, 255]);
    }

    #[test]
    fn normalize_then_to_bytes_is_identity_on_all_byte_values() {
        let pixels: Vec<u8> = (0..=255).collect();
        let img = RawImage::new(pixels.clone(), (16, 16, 1), 0).unwrap();
        let t = normalize(&img, false);
        assert_eq!(to_bytes(&t), pixels);
    }

    fn tiny_split(n: usize) -> DatasetSplit {
        let images = (0..n)
            .map(|i| gray(vec![i as u8; 4], (i % 10) as u8))
            .collect();
        DatasetSplit::new(images, SplitRole::Train, DatasetKind::Mnist).unwrap()
    }

    #[test]
    fn batch_iter_partitions_with_short_tail() {
        let split = tiny_split(10);
        let sizes: Vec<usize> = BatchIter::new(&split, 3, 1)
            .unwrap()
            .map(|b| b.len())
            .collect();
        assert_eq!(sizes, vec![3, 3, 3, 1]);
    }

    #[test]
    fn batch_iter_is_seed_deterministic() {
        let split = tiny_split(32);
        let a: Vec<Vec<usize>> = BatchIter::new(&split, 5, 7).unwrap().collect();
        let b: Vec<Vec<usize>> = BatchIter::new(&split, 5, 7).unwrap().collect();
        let c: Vec<Vec<usize>> = BatchIter::new(&split, 5, 8).unwrap().collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn batch_iter_visits_every_index_once() {
        let split = tiny_split(23);
        let visited: Vec<usize> = BatchIter::new(&split, 4, 99).unwrap().flatten().collect();
        assert_eq!(visited.len(), 23);
        let unique: BTreeSet<usize> = visited.iter().copied().collect();
        assert_eq!(unique, (0..23).collect::<BTreeSet<_>>());
    }

    #[test]
    fn batch_iter_rejects_empty_split_and_zero_batch() {
        let empty = DatasetSplit::new(vec![], SplitRole::Train, DatasetKind::Mnist).unwrap();
        assert!(BatchIter::new(&empty, 4, 0).is_err());
        let split = tiny_split(4);
        assert!(BatchIter::new(&split, 0, 0).is_err());
    }

    #[test]
    fn label_histogram_counts_classes() {
        let split = tiny_split(20);
        let hist = split.label_histogram();
        assert_eq!(hist.iter().sum::<usize>(), 20);
        assert!(hist.iter().all(|&c| c == 2));
    }
}
