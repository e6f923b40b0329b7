// Extended-budget masked-mode run: where does the key-dependence ratio land
// as training continues past the pinned acceptance budget?
use maskae_core::data::{DatasetKind, SplitRole};
use maskae_core::mask::{mask_from_seed, MaskSeed};
use maskae_core::model::{ArchConfig, TargetMode};
use maskae_core::train::{evaluate_with_masks, train, TrainConfig};
use maskae_testkit::synth_split;

fn main() {
    let train_split = synth_split(DatasetKind::Mnist, 5000, 2024, SplitRole::Train);
    let test_split = synth_split(DatasetKind::Mnist, 1000, 2024 ^ 0x5eed, SplitRole::Test);
    let mask = mask_from_seed(&MaskSeed::from_u64(7, "mask"), (28, 28, 3)).unwrap();
    let wrong = mask_from_seed(&MaskSeed::from_u64(8, "mask"), (28, 28, 3)).unwrap();
    let arch = ArchConfig::mnist(TargetMode::Masked);
    for epochs in [5usize, 10, 20, 40] {
        let cfg = TrainConfig { epochs, batch_size: 64, subsample: Some(5000), ..TrainConfig::default() };
        let (params, h) = train(&cfg, &train_split, &test_split, &mask, &arch).unwrap();
        let correct = evaluate_with_masks(&params, &test_split, &mask, &mask, &arch).unwrap().mean_mse;
        let wrongm = evaluate_with_masks(&params, &test_split, &mask, &wrong, &arch).unwrap().mean_mse;
        println!("epochs {epochs}: masked-train {:.5} correct {:.5} wrong {:.5} ratio {:.2}",
            h.epochs.last().unwrap().train_mse, correct, wrongm, wrongm / correct);
    }
}
