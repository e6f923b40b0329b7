//! Training loop, evaluation metrics, and history export.

use std::path::PathBuf;
use std::time::Instant;

use crate::autograd::Tape;
use crate::data::{BatchIter, DatasetSplit, RawImage};
use crate::error::{Error, Result};
use crate::mask::{apply_mask, Mask};
use crate::model::{
    build_model, register_params, run_stack, ArchConfig, LayerSpec, ModelParams, TargetMode,
};
use crate::optim::{adam_step, sgd_step, AdamState, OptimizerKind};
use crate::tensor::{Shape, Tensor};

/// Hyperparameters for one training run. The defaults are the desk-scale
/// budget: 5 epochs, batch 64, Adam at the fixed 0.001 learning rate.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub shuffle_seed: u64,
    pub init_seed: u64,
    /// Train on only the first `n` images when set.
    pub subsample: Option<usize>,
    /// Write a checkpoint here after training (and every
    /// `checkpoint_every` epochs when nonzero).
    pub checkpoint_path: Option<PathBuf>,
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 64,
            lr: 1e-3,
            optimizer: OptimizerKind::Adam,
            shuffle_seed: 42,
            init_seed: 1234,
            subsample: None,
            checkpoint_path: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_mse: f64,
    pub test_mse: f64,
    pub test_psnr_db: f64,
    pub seconds: f64,
}

/// Per-epoch metrics plus the run's hyperparameter metadata.
#[derive(Clone, Debug)]
pub struct TrainHistory {
    pub lr: f64,
    pub optimizer: OptimizerKind,
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,test_mse,test_psnr_db,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_mse, e.test_mse, e.test_psnr_db, e.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        std::fs::write(path.as_ref(), self.to_csv())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub mean_mse: f64,
    pub mean_psnr_db: f64,
}

/// Peak signal-to-noise ratio in dB for unit-peak signals:
/// -10*log10(MSE), capped at 99 dB when MSE < 1e-10.
pub fn psnr(pred: &Tensor, target: &Tensor) -> Result<f64> {
    if pred.shape != target.shape {
        return Err(Error::Shape(format!(
            "psnr shape mismatch: {} vs {}",
            pred.shape, target.shape
        )));
    }
    let mut acc = 0.0_f64;
    for (&a, &b) in pred.data.iter().zip(&target.data) {
        let d = a as f64 - b as f64;
        acc += d * d;
    }
    Ok(psnr_from_mse(acc / pred.numel() as f64))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < 1e-10 {
        99.0
    } else {
        -10.0 * mse.log10()
    }
}

/// Masks and normalizes a batch of plain images into the network input
/// tensor. Grayscale images are byte-replicated to three channels first
/// when the architecture expects RGB, so the mask covers the replicated
/// bytes.
pub fn assemble_input(images: &[&RawImage], mask: &Mask, arch: &ArchConfig) -> Result<Tensor> {
    if images.is_empty() {
        return Err(Error::Invalid("empty image batch".into()));
    }
    let (c, h, w) = arch.input_geometry;
    if mask.geometry != (h, w, c) {
        return Err(Error::Shape(format!(
            "mask geometry {}x{}x{} does not match network input {h}x{w}x{c}",
            mask.geometry.0, mask.geometry.1, mask.geometry.2
        )));
    }
    let per = c * h * w;
    let mut data = Vec::with_capacity(images.len() * per);
    for img in images {
        let replicated = replicate_for(img, c)?;
        let masked = apply_mask(&replicated, mask)?;
        data.extend(masked.iter().map(|&b| b as f32 / 255.0));
    }
    Tensor::from_vec(Shape::new(images.len(), c, h, w), data)
}

/// The reconstruction target for a batch: the plain image in "plain" mode,
/// or the masked network input itself in "masked" mode.
pub fn assemble_target(
    images: &[&RawImage],
    input: &Tensor,
    arch: &ArchConfig,
) -> Result<Tensor> {
    match arch.target {
        TargetMode::Masked => {
            let mut t = input.clone();
            t.requires_grad = false;
            t.grad = None;
            t.node = None;
            Ok(t)
        }
        TargetMode::Plain => {
            let (c, h, w) = arch.output_geometry;
            let per = c * h * w;
            let mut data = Vec::with_capacity(images.len() * per);
            for img in images {
                let plain = replicate_for(img, c)?;
                data.extend(plain.iter().map(|&b| b as f32 / 255.0));
            }
            Tensor::from_vec(Shape::new(images.len(), c, h, w), data)
        }
    }
}

fn replicate_for(img: &RawImage, channels: usize) -> Result<Vec<u8>> {
    let (h, w, c) = img.geometry;
    if c == channels {
        return Ok(img.pixels.clone());
    }
    if c == 1 && channels == 3 {
        let mut out = Vec::with_capacity(h * w * 3);
        for _ in 0..3 {
            out.extend_from_slice(&img.pixels);
        }
        return Ok(out);
    }
    Err(Error::Shape(format!(
        "image has {c} channels but the network needs {channels}"
    )))
}

/// Runs the full autoencoder on a tape, returning (latent, output) ids.
fn forward(
    tape: &mut Tape,
    input: crate::autograd::NodeId,
    pairs: &[(crate::autograd::NodeId, crate::autograd::NodeId)],
    arch: &ArchConfig,
) -> Result<(crate::autograd::NodeId, crate::autograd::NodeId)> {
    let enc_convs = arch
        .encoder
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count();
    let mut enc_iter = pairs[..enc_convs].iter().copied();
    let latent = run_stack(tape, input, &arch.encoder, &mut enc_iter)?;
    let mut dec_iter = pairs[enc_convs..].iter().copied();
    let output = run_stack(tape, latent, &arch.decoder, &mut dec_iter)?;
    Ok((latent, output))
}

/// Trains the autoencoder on masked batches with MSE loss.
///
/// Per batch: mask, normalize, encode, decode, MSE against the mode's
/// target, backward, optimizer step. Test metrics are computed after every
/// epoch. Fully deterministic for fixed seeds in reference mode.
pub fn train(
    config: &TrainConfig,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    mask: &Mask,
    arch: &ArchConfig,
) -> Result<(ModelParams, TrainHistory)> {
    if config.epochs == 0 {
        return Err(Error::Invalid("epochs must be at least 1".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Invalid("batch size must be at least 1".into()));
    }
    if config.lr <= 0.0 {
        return Err(Error::Invalid(format!(
            "learning rate must be positive, got {}",
            config.lr
        )));
    }
    if train_split.is_empty() || test_split.is_empty() {
        return Err(Error::Invalid("train and test splits must be non-empty".into()));
    }
    arch.validate()?;

    let effective_train: DatasetSplit = match config.subsample {
        Some(n) if n < train_split.len() => {
            let mut s = train_split.clone();
            s.subsample(n);
            s
        }
        _ => train_split.clone(),
    };

    let initial = build_model(arch, config.init_seed)?;
    let names: Vec<String> = initial.entries.iter().map(|(n, _)| n.clone()).collect();
    let mut tensors: Vec<Tensor> = initial.entries.into_iter().map(|(_, t)| t).collect();
    let mut adam = AdamState::new(&tensors);

    let mut history = TrainHistory {
        lr: config.lr,
        optimizer: config.optimizer,
        epochs: Vec::with_capacity(config.epochs),
    };

    let rebuild = |tensors: &[Tensor]| ModelParams {
        entries: names
            .iter()
            .cloned()
            .zip(tensors.iter().cloned())
            .collect(),
        fingerprint: arch.fingerprint(),
    };

    for epoch in 1..=config.epochs {
        let started = Instant::now();
        let epoch_seed = config
            .shuffle_seed
            .wrapping_add((epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut loss_sum = 0.0_f64;
        let mut seen = 0usize;
        for (batch_no, indices) in
            BatchIter::new(&effective_train, config.batch_size, epoch_seed)?.enumerate()
        {
            let images: Vec<&RawImage> =
                indices.iter().map(|&i| &effective_train.images[i]).collect();
            let input = assemble_input(&images, mask, arch)?;
            let target = assemble_target(&images, &input, arch)?;

            let mut tape = Tape::new();
            let mut trainable: Vec<Tensor> = tensors.clone();
            for t in &mut trainable {
                t.requires_grad = true;
            }
            let pairs = register_params(&mut tape, &trainable, true);
            let x = tape.leaf(input);
            let t = tape.leaf(target);
            let (_latent, output) = forward(&mut tape, x, &pairs, arch)?;
            let loss = tape.mse(output, t)?;
            let loss_value = tape.value(loss).data[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became non-finite at epoch {epoch}, batch {batch_no}"
                )));
            }
            tape.backward(loss)?;

            let grad_ids: Vec<_> = pairs.iter().flat_map(|&(w, b)| [w, b]).collect();
            let grads: Vec<&[f32]> = grad_ids
                .iter()
                .map(|&id| tape.grad(id).expect("trainable leaf has a gradient"))
                .collect();
            match config.optimizer {
                OptimizerKind::Adam => adam_step(&mut tensors, &grads, &mut adam, config.lr)?,
                OptimizerKind::Sgd => sgd_step(&mut tensors, &grads, config.lr)?,
            }
            loss_sum += loss_value * images.len() as f64;
            seen += images.len();
        }

        let params = rebuild(&tensors);
        let eval = evaluate(&params, test_split, mask, arch)?;
        history.epochs.push(EpochStats {
            epoch,
            train_mse: loss_sum / seen as f64,
            test_mse: eval.mean_mse,
            test_psnr_db: eval.mean_psnr_db,
            seconds: started.elapsed().as_secs_f64(),
        });

        if let Some(path) = &config.checkpoint_path {
            if config.checkpoint_every != 0 && epoch % config.checkpoint_every == 0 {
                crate::model::save_checkpoint(&params, arch, path)?;
            }
        }
    }

    let params = rebuild(&tensors);
    if let Some(path) = &config.checkpoint_path {
        crate::model::save_checkpoint(&params, arch, path)?;
    }
    Ok((params, history))
}

/// Mean reconstruction MSE and PSNR over a split, against the plain image.
///
/// In masked target mode the decoder output is byte-quantized, un-XORed
/// with the mask, and rescaled before comparison, mirroring the receiver's
/// decryption path.
pub fn evaluate(
    params: &ModelParams,
    split: &DatasetSplit,
    mask: &Mask,
    arch: &ArchConfig,
) -> Result<EvalMetrics> {
    evaluate_with_masks(params, split, mask, mask, arch)
}

/// [`evaluate`] with the sender and receiver keys separated: images are
/// masked with `encrypt_mask` before encoding, while the receiver-side
/// un-XOR uses `decrypt_mask`. With distinct masks this measures what an
/// attacker holding the wrong key recovers.
pub fn evaluate_with_masks(
    params: &ModelParams,
    split: &DatasetSplit,
    encrypt_mask: &Mask,
    decrypt_mask: &Mask,
    arch: &ArchConfig,
) -> Result<EvalMetrics> {
    if split.is_empty() {
        return Err(Error::Invalid("cannot evaluate an empty split".into()));
    }
    let tensors: Vec<Tensor> = params.entries.iter().map(|(_, t)| t.clone()).collect();
    let mut mse_sum = 0.0_f64;
    let mut psnr_sum = 0.0_f64;
    let mut count = 0usize;
    let batch = 64usize;
    for chunk in split.images.chunks(batch) {
        let images: Vec<&RawImage> = chunk.iter().collect();
        let input = assemble_input(&images, encrypt_mask, arch)?;
        let mut tape = Tape::new();
        let pairs = register_params(&mut tape, &tensors, false);
        let x = tape.leaf(input);
        let (_latent, output) = forward(&mut tape, x, &pairs, arch)?;
        let out = tape.value(output);

        for (i, img) in images.iter().enumerate() {
            let recon = reconstruction_for_image(&out.image(i), img, decrypt_mask, arch)?;
            let plain_target = plain_reference(img, arch)?;
            let mut acc = 0.0_f64;
            for (&a, &b) in recon.data.iter().zip(&plain_target.data) {
                let d = a as f64 - b as f64;
                acc += d * d;
            }
            let mse = acc / recon.numel() as f64;
            mse_sum += mse;
            psnr_sum += psnr_from_mse(mse);
            count += 1;
        }
    }
    Ok(EvalMetrics {
        mean_mse: mse_sum / count as f64,
        mean_psnr_db: psnr_sum / count as f64,
    })
}

/// The receiver-side reconstruction for one decoded image, in the plain
/// image's geometry.
///
/// In masked mode the decoder output is byte-quantized and un-XORed with
/// the key; when the plain image is grayscale (so the network ran on
/// replicated channels), the three unmasked planes are averaged back to
/// one — the pseudo-inverse of the replication convention.
pub fn reconstruction_for_image(
    decoded: &Tensor,
    img: &RawImage,
    mask: &Mask,
    arch: &ArchConfig,
) -> Result<Tensor> {
    match arch.target {
        TargetMode::Plain => Ok(decoded.clone()),
        TargetMode::Masked => {
            let bytes = crate::data::to_bytes(decoded);
            let unmasked = apply_mask(&bytes, mask)?;
            let data: Vec<f32> = unmasked.iter().map(|&b| b as f32 / 255.0).collect();
            let plain_c = img.geometry.2;
            let s = decoded.shape;
            if plain_c == 1 && s.c == 3 {
                let per = s.h * s.w;
                let gray: Vec<f32> = (0..per)
                    .map(|i| (data[i] + data[per + i] + data[2 * per + i]) / 3.0)
                    .collect();
                Tensor::from_vec(Shape::new(1, 1, s.h, s.w), gray)
            } else {
                Tensor::from_vec(s, data)
            }
        }
    }
}

/// The plain-image reference a reconstruction is scored against: the
/// dataset image itself in plain mode geometry terms.
pub fn plain_reference(img: &RawImage, arch: &ArchConfig) -> Result<Tensor> {
    let (h, w, c) = img.geometry;
    match arch.target {
        TargetMode::Plain => {
            let (oc, ..) = arch.output_geometry;
            let plain = replicate_for(img, oc)?;
            let data = plain.iter().map(|&b| b as f32 / 255.0).collect();
            Tensor::from_vec(Shape::new(1, oc, h, w), data)
        }
        TargetMode::Masked => {
            let data = img.pixels.iter().map(|&b| b as f32 / 255.0).collect();
            Tensor::from_vec(Shape::new(1, c, h, w), data)
        }
    }
}
