//! Property tests for the pipeline's algebraic invariants.

use proptest::prelude::*;

use maskae_core::data::{normalize, to_bytes, BatchIter, DatasetKind, DatasetSplit, RawImage, SplitRole};
use maskae_core::mask::{apply_mask, Mask};
use maskae_core::metrics::throughput_report;

proptest! {
    /// Applying the same mask twice restores the original bytes.
    #[test]
    fn xor_mask_is_an_involution(
        image in proptest::collection::vec(any::<u8>(), 1..512),
        mask_bytes in proptest::collection::vec(any::<u8>(), 1..512),
    ) {
        let len = image.len().min(mask_bytes.len());
        let image = &image[..len];
        let mask = Mask { bytes: mask_bytes[..len].to_vec(), geometry: (len, 1, 1) };
        let once = apply_mask(image, &mask).unwrap();
        let twice = apply_mask(&once, &mask).unwrap();
        prop_assert_eq!(&twice[..], image);
    }

    /// Byte -> [0,1] -> byte is the identity, and stays in range.
    #[test]
    fn normalize_to_bytes_round_trips(pixels in proptest::collection::vec(any::<u8>(), 16..256)) {
        let n = pixels.len();
        let img = RawImage::new(pixels.clone(), (n, 1, 1), 0).unwrap();
        let t = normalize(&img, false);
        prop_assert!(t.data.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(to_bytes(&t), pixels);
    }

    /// One epoch visits every index exactly once, for any batch size.
    #[test]
    fn batch_iter_is_a_partition(n in 1usize..200, batch in 1usize..64, seed in any::<u64>()) {
        let images = (0..n)
            .map(|i| RawImage::new(vec![i as u8; 4], (2, 2, 1), (i % 10) as u8).unwrap())
            .collect();
        let split = DatasetSplit::new(images, SplitRole::Train, DatasetKind::Mnist).unwrap();
        let mut seen = vec![0usize; n];
        for index_batch in BatchIter::new(&split, batch, seed).unwrap() {
            prop_assert!(index_batch.len() <= batch);
            for i in index_batch {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    /// The speedup ratio never depends on image count or link rate.
    #[test]
    fn throughput_speedup_is_a_pure_byte_ratio(
        n in 1u64..100_000,
        rate in 1.0f64..1e12,
        latent in 1u64..10_000,
    ) {
        let r = throughput_report(n, (32, 32, 3), latent, rate).unwrap();
        prop_assert_eq!(r.speedup, 3072.0 / latent as f64);
    }
}
