//! Encoder/decoder architectures, latent quantization, and checkpoint I/O.
//!
//! The two stock configurations pin the latent byte budgets: 16x8x8 = 1024
//! bytes for 32x32 RGB inputs and 4x14x14 = 784 bytes for (replicated)
//! 28x28 grayscale inputs, a 3x reduction of the plain image in both cases.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::autograd::{NodeId, Tape};
use crate::data::DatasetKind;
use crate::error::{Error, Result};
use crate::tensor::{kaiming_init, Shape, Tensor};

const CHECKPOINT_MAGIC: &[u8; 4] = b"MAEC";
const CHECKPOINT_VERSION: u16 = 1;
const LATENT_MAGIC: &[u8; 4] = b"MAEL";
const LATENT_VERSION: u16 = 1;
/// 4-byte magic, u16 version, u16 C/H/W, u32 low fingerprint bits.
pub const LATENT_HEADER_LEN: usize = 16;

/// What the decoder is trained to emit: the plain image directly, or the
/// masked image which the receiver un-XORs with the key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TargetMode {
    Plain,
    Masked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

/// One layer of the stack. Convolutions are stride-1 with square kernels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        padding: usize,
        act: Activation,
    },
    MaxPool2x2,
    Upsample2x,
}

/// Architecture description whose shape algebra is validated up front.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub dataset: DatasetKind,
    pub target: TargetMode,
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    /// (C, H, W) of the network input.
    pub input_geometry: (usize, usize, usize),
    /// (C, H, W) of the latent; numel is the cipher byte budget.
    pub latent_geometry: (usize, usize, usize),
    /// (C, H, W) of the decoder output.
    pub output_geometry: (usize, usize, usize),
}

fn conv(in_ch: usize, out_ch: usize, act: Activation) -> LayerSpec {
    LayerSpec::Conv {
        in_ch,
        out_ch,
        kernel: 3,
        padding: 1,
        act,
    }
}

impl ArchConfig {
    /// 32x32 RGB stack with a 16x8x8 latent (1024 bytes).
    pub fn cifar10(target: TargetMode) -> Self {
        let cfg = ArchConfig {
            dataset: DatasetKind::Cifar10,
            target,
            encoder: vec![
                conv(3, 16, Activation::Relu),
                LayerSpec::MaxPool2x2,
                conv(16, 16, Activation::Relu),
                LayerSpec::MaxPool2x2,
                conv(16, 16, Activation::Sigmoid),
            ],
            decoder: vec![
                conv(16, 16, Activation::Relu),
                LayerSpec::Upsample2x,
                conv(16, 16, Activation::Relu),
                LayerSpec::Upsample2x,
                conv(16, 3, Activation::Sigmoid),
            ],
            input_geometry: (3, 32, 32),
            latent_geometry: (16, 8, 8),
            output_geometry: (3, 32, 32),
        };
        cfg.validate().expect("stock cifar10 config is valid");
        cfg
    }

    /// 28x28 grayscale stack (input replicated to 3 channels) with a
    /// 4x14x14 latent (784 bytes). In masked target mode the decoder emits
    /// the 3-channel masked image instead of the 1-channel plain image.
    pub fn mnist(target: TargetMode) -> Self {
        let out_ch = match target {
            TargetMode::Plain => 1,
            TargetMode::Masked => 3,
        };
        let cfg = ArchConfig {
            dataset: DatasetKind::Mnist,
            target,
            encoder: vec![
                conv(3, 8, Activation::Relu),
                LayerSpec::MaxPool2x2,
                conv(8, 4, Activation::Sigmoid),
            ],
            decoder: vec![
                conv(4, 8, Activation::Relu),
                LayerSpec::Upsample2x,
                conv(8, 8, Activation::Relu),
                conv(8, out_ch, Activation::Sigmoid),
            ],
            input_geometry: (3, 28, 28),
            latent_geometry: (4, 14, 14),
            output_geometry: (out_ch, 28, 28),
        };
        cfg.validate().expect("stock mnist config is valid");
        cfg
    }

    pub fn for_dataset(dataset: DatasetKind, target: TargetMode) -> Self {
        match dataset {
            DatasetKind::Mnist => ArchConfig::mnist(target),
            DatasetKind::Cifar10 => ArchConfig::cifar10(target),
        }
    }

    pub fn latent_numel(&self) -> usize {
        let (c, h, w) = self.latent_geometry;
        c * h * w
    }

    /// Geometry a plain dataset image must have before masking, (H, W, C).
    pub fn masked_image_geometry(&self) -> (usize, usize, usize) {
        let (c, h, w) = self.input_geometry;
        (h, w, c)
    }

    /// Walks the layer shape algebra and checks it lands exactly on the
    /// declared latent and output geometries.
    pub fn validate(&self) -> Result<()> {
        let after_enc = walk_layers(&self.encoder, self.input_geometry, "encoder")?;
        if after_enc != self.latent_geometry {
            return Err(Error::Invalid(format!(
                "encoder produces {}x{}x{} but latent is declared {}x{}x{}",
                after_enc.0,
                after_enc.1,
                after_enc.2,
                self.latent_geometry.0,
                self.latent_geometry.1,
                self.latent_geometry.2
            )));
        }
        let after_dec = walk_layers(&self.decoder, self.latent_geometry, "decoder")?;
        if after_dec != self.output_geometry {
            return Err(Error::Invalid(format!(
                "decoder produces {}x{}x{} but output is declared {}x{}x{}",
                after_dec.0,
                after_dec.1,
                after_dec.2,
                self.output_geometry.0,
                self.output_geometry.1,
                self.output_geometry.2
            )));
        }
        match self.dataset {
            DatasetKind::Cifar10 if self.latent_numel() != 1024 => {
                return Err(Error::Invalid(format!(
                    "cifar10 latent must be 1024 bytes, got {}",
                    self.latent_numel()
                )))
            }
            DatasetKind::Mnist if self.latent_numel() != 784 => {
                return Err(Error::Invalid(format!(
                    "mnist latent must be 784 bytes, got {}",
                    self.latent_numel()
                )))
            }
            _ => {}
        }
        Ok(())
    }

    /// Canonical byte encoding; checkpoints embed it and the fingerprint
    /// hashes it.
    fn encode_config(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.push(match self.dataset {
            DatasetKind::Mnist => 0u8,
            DatasetKind::Cifar10 => 1,
        });
        out.push(match self.target {
            TargetMode::Plain => 0u8,
            TargetMode::Masked => 1,
        });
        for geom in [self.input_geometry, self.latent_geometry, self.output_geometry] {
            out.extend_from_slice(&(geom.0 as u32).to_le_bytes());
            out.extend_from_slice(&(geom.1 as u32).to_le_bytes());
            out.extend_from_slice(&(geom.2 as u32).to_le_bytes());
        }
        for layers in [&self.encoder, &self.decoder] {
            out.extend_from_slice(&(layers.len() as u32).to_le_bytes());
            for layer in layers {
                match layer {
                    LayerSpec::Conv {
                        in_ch,
                        out_ch,
                        kernel,
                        padding,
                        act,
                    } => {
                        out.push(0u8);
                        for v in [*in_ch, *out_ch, *kernel, *padding] {
                            out.extend_from_slice(&(v as u32).to_le_bytes());
                        }
                        out.push(match act {
                            Activation::Relu => 0u8,
                            Activation::Sigmoid => 1,
                        });
                    }
                    LayerSpec::MaxPool2x2 => out.push(1u8),
                    LayerSpec::Upsample2x => out.push(2u8),
                }
            }
        }
        out
    }

    fn decode_config(bytes: &[u8]) -> Result<ArchConfig> {
        let mut r = ByteReader::new(bytes);
        let dataset = match r.u8()? {
            0 => DatasetKind::Mnist,
            1 => DatasetKind::Cifar10,
            other => return Err(Error::Format(format!("unknown dataset tag {other}"))),
        };
        let target = match r.u8()? {
            0 => TargetMode::Plain,
            1 => TargetMode::Masked,
            other => return Err(Error::Format(format!("unknown target tag {other}"))),
        };
        let mut geoms = [(0usize, 0usize, 0usize); 3];
        for geom in &mut geoms {
            *geom = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        }
        let mut stacks = Vec::with_capacity(2);
        for _ in 0..2 {
            let count = r.u32()? as usize;
            let mut layers = Vec::with_capacity(count);
            for _ in 0..count {
                layers.push(match r.u8()? {
                    0 => {
                        let in_ch = r.u32()? as usize;
                        let out_ch = r.u32()? as usize;
                        let kernel = r.u32()? as usize;
                        let padding = r.u32()? as usize;
                        let act = match r.u8()? {
                            0 => Activation::Relu,
                            1 => Activation::Sigmoid,
                            other => {
                                return Err(Error::Format(format!("unknown activation tag {other}")))
                            }
                        };
                        LayerSpec::Conv {
                            in_ch,
                            out_ch,
                            kernel,
                            padding,
                            act,
                        }
                    }
                    1 => LayerSpec::MaxPool2x2,
                    2 => LayerSpec::Upsample2x,
                    other => return Err(Error::Format(format!("unknown layer tag {other}"))),
                });
            }
            stacks.push(layers);
        }
        let decoder = stacks.pop().unwrap();
        let encoder = stacks.pop().unwrap();
        Ok(ArchConfig {
            dataset,
            target,
            encoder,
            decoder,
            input_geometry: geoms[0],
            latent_geometry: geoms[1],
            output_geometry: geoms[2],
        })
    }

    /// 64-bit fingerprint of the canonical config encoding; changes iff
    /// the configuration changes.
    pub fn fingerprint(&self) -> u64 {
        let digest = Sha256::digest(self.encode_config());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

fn walk_layers(
    layers: &[LayerSpec],
    input: (usize, usize, usize),
    stack: &str,
) -> Result<(usize, usize, usize)> {
    let (mut c, mut h, mut w) = input;
    for (i, layer) in layers.iter().enumerate() {
        match layer {
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                padding,
                ..
            } => {
                if *in_ch != c {
                    return Err(Error::Invalid(format!(
                        "{stack} layer {i}: expects {in_ch} channels but receives {c}"
                    )));
                }
                if h + 2 * padding < *kernel || w + 2 * padding < *kernel {
                    return Err(Error::Invalid(format!(
                        "{stack} layer {i}: kernel {kernel} exceeds padded {h}x{w}"
                    )));
                }
                c = *out_ch;
                h = h + 2 * padding - kernel + 1;
                w = w + 2 * padding - kernel + 1;
            }
            LayerSpec::MaxPool2x2 => {
                if h % 2 != 0 || w % 2 != 0 {
                    return Err(Error::Invalid(format!(
                        "{stack} layer {i}: maxpool2x2 needs even dims, got {h}x{w}"
                    )));
                }
                h /= 2;
                w /= 2;
            }
            LayerSpec::Upsample2x => {
                h *= 2;
                w *= 2;
            }
        }
    }
    Ok((c, h, w))
}

/// Ordered named parameter tensors (encoder first, then decoder) plus the
/// fingerprint of the architecture they were built for.
#[derive(Clone, Debug)]
pub struct ModelParams {
    pub entries: Vec<(String, Tensor)>,
    pub fingerprint: u64,
}

impl ModelParams {
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn numel(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

/// Deterministically initializes parameters for a validated config:
/// Kaiming-uniform weights, zero biases.
pub fn build_model(config: &ArchConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut entries = Vec::new();
    let mut index = 0u64;
    for (prefix, layers) in [("enc", &config.encoder), ("dec", &config.decoder)] {
        for (i, layer) in layers.iter().enumerate() {
            if let LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } = layer
            {
                let wshape = Shape::new(*out_ch, *in_ch, *kernel, *kernel);
                // decorrelate per-tensor streams while keeping build
                // deterministic in (config, seed)
                let tensor_seed = seed
                    .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
                    .wrapping_add(1);
                entries.push((format!("{prefix}{i}.weight"), kaiming_init(wshape, tensor_seed)));
                entries.push((
                    format!("{prefix}{i}.bias"),
                    Tensor::zeros(Shape::new(1, *out_ch, 1, 1)),
                ));
                index += 1;
            }
        }
    }
    Ok(ModelParams {
        entries,
        fingerprint: config.fingerprint(),
    })
}

/// Runs one layer stack on the tape. `params` must iterate the stack's
/// conv parameters in order as (weight, bias) node pairs.
pub fn run_stack(
    tape: &mut Tape,
    mut x: NodeId,
    layers: &[LayerSpec],
    params: &mut impl Iterator<Item = (NodeId, NodeId)>,
) -> Result<NodeId> {
    for layer in layers {
        match layer {
            LayerSpec::Conv { padding, act, .. } => {
                let (w, b) = params
                    .next()
                    .ok_or_else(|| Error::Invalid("parameter list exhausted mid-stack".into()))?;
                x = tape.conv2d(x, w, b, *padding, 1)?;
                x = match act {
                    Activation::Relu => tape.relu(x),
                    Activation::Sigmoid => tape.sigmoid(x),
                };
            }
            LayerSpec::MaxPool2x2 => x = tape.maxpool2x2(x)?,
            LayerSpec::Upsample2x => x = tape.upsample2x(x),
        }
    }
    Ok(x)
}

fn conv_param_count(layers: &[LayerSpec]) -> usize {
    layers
        .iter()
        .filter(|l| matches!(l, LayerSpec::Conv { .. }))
        .count()
}

/// Registers parameter tensors (in checkpoint order: weight, bias, ...) on
/// a tape, optionally grad-tracking, returning the (weight, bias) id pairs
/// in stack order.
pub fn register_params(
    tape: &mut Tape,
    tensors: &[Tensor],
    trainable: bool,
) -> Vec<(NodeId, NodeId)> {
    let mut pairs = Vec::with_capacity(tensors.len() / 2);
    for pair in tensors.chunks_exact(2) {
        let mut wt = pair[0].clone();
        let mut bt = pair[1].clone();
        wt.requires_grad = trainable;
        bt.requires_grad = trainable;
        pairs.push((tape.leaf(wt), tape.leaf(bt)));
    }
    pairs
}

fn check_image_geometry(t: &Tensor, expect: (usize, usize, usize), what: &str) -> Result<()> {
    let (c, h, w) = expect;
    if (t.shape.c, t.shape.h, t.shape.w) != (c, h, w) {
        return Err(Error::Shape(format!(
            "{what} geometry {} does not match configured {c}x{h}x{w}",
            t.shape
        )));
    }
    Ok(())
}

/// Encoder forward pass on a masked, normalized image batch. Output values
/// lie in (0,1) thanks to the sigmoid head.
pub fn encode(input: &Tensor, params: &ModelParams, config: &ArchConfig) -> Result<Tensor> {
    check_image_geometry(input, config.input_geometry, "input")?;
    check_fingerprint(params, config)?;
    let mut tape = Tape::new();
    let x = tape.leaf(input.clone());
    let tensors: Vec<Tensor> = params.entries.iter().map(|(_, t)| t.clone()).collect();
    let pairs = register_params(&mut tape, &tensors, false);
    let mut enc_pairs = pairs.into_iter().take(conv_param_count(&config.encoder));
    let latent = run_stack(&mut tape, x, &config.encoder, &mut enc_pairs)?;
    Ok(tape.detach(latent))
}

/// Decoder forward pass from a latent batch back to image space.
pub fn decode(latent: &Tensor, params: &ModelParams, config: &ArchConfig) -> Result<Tensor> {
    check_image_geometry(latent, config.latent_geometry, "latent")?;
    check_fingerprint(params, config)?;
    let mut tape = Tape::new();
    let x = tape.leaf(latent.clone());
    let tensors: Vec<Tensor> = params.entries.iter().map(|(_, t)| t.clone()).collect();
    let pairs = register_params(&mut tape, &tensors, false);
    let mut dec_pairs = pairs
        .into_iter()
        .skip(conv_param_count(&config.encoder))
        .take(conv_param_count(&config.decoder));
    let out = run_stack(&mut tape, x, &config.decoder, &mut dec_pairs)?;
    Ok(tape.detach(out))
}

fn check_fingerprint(params: &ModelParams, config: &ArchConfig) -> Result<()> {
    if params.fingerprint != config.fingerprint() {
        return Err(Error::Format(format!(
            "parameter fingerprint {:016x} does not match config {:016x}",
            params.fingerprint,
            config.fingerprint()
        )));
    }
    Ok(())
}

/// Quantized byte latent plus the metadata needed to decode it: the
/// transmitted cipher image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentCode {
    pub bytes: Vec<u8>,
    /// (C, H, W)
    pub geometry: (usize, usize, usize),
    pub fingerprint: u64,
}

/// 8-bit quantization q = round(255 * s) of a [0,1] latent.
pub fn quantize_latent(latent: &Tensor, config: &ArchConfig) -> Result<LatentCode> {
    check_image_geometry(latent, config.latent_geometry, "latent")?;
    if latent.shape.n != 1 {
        return Err(Error::Shape(format!(
            "quantize expects a single-image latent, got batch {}",
            latent.shape.n
        )));
    }
    let bytes = latent
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    Ok(LatentCode {
        bytes,
        geometry: config.latent_geometry,
        fingerprint: config.fingerprint(),
    })
}

/// Inverse of [`quantize_latent`]: d = q / 255.
pub fn dequantize_latent(code: &LatentCode) -> Tensor {
    let (c, h, w) = code.geometry;
    let data = code.bytes.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(Shape::new(1, c, h, w), data).unwrap()
}

impl LatentCode {
    /// Wire form: 16-byte header (magic, version, latent dims as u16,
    /// low 32 fingerprint bits) + raw latent bytes.
    pub fn to_wire(&self) -> Vec<u8> {
        let (c, h, w) = self.geometry;
        let mut out = Vec::with_capacity(LATENT_HEADER_LEN + self.bytes.len());
        out.extend_from_slice(LATENT_MAGIC);
        out.extend_from_slice(&LATENT_VERSION.to_le_bytes());
        out.extend_from_slice(&(c as u16).to_le_bytes());
        out.extend_from_slice(&(h as u16).to_le_bytes());
        out.extend_from_slice(&(w as u16).to_le_bytes());
        out.extend_from_slice(&(self.fingerprint as u32).to_le_bytes());
        out.extend_from_slice(&self.bytes);
        out
    }

    pub fn from_wire(bytes: &[u8]) -> Result<LatentCode> {
        if bytes.len() < LATENT_HEADER_LEN {
            return Err(Error::Format("latent file shorter than its header".into()));
        }
        if &bytes[0..4] != LATENT_MAGIC {
            return Err(Error::Format("bad latent file magic".into()));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != LATENT_VERSION {
            return Err(Error::Format(format!("unsupported latent version {version}")));
        }
        let c = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
        let h = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
        let w = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
        let fp_low = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        let payload = &bytes[LATENT_HEADER_LEN..];
        if payload.len() != c * h * w {
            return Err(Error::Format(format!(
                "latent payload is {} bytes but header declares {c}x{h}x{w} = {}",
                payload.len(),
                c * h * w
            )));
        }
        Ok(LatentCode {
            bytes: payload.to_vec(),
            geometry: (c, h, w),
            fingerprint: fp_low as u64,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path.as_ref(), self.to_wire())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<LatentCode> {
        LatentCode::from_wire(&fs::read(path.as_ref())?)
    }

    /// Whether this code was produced under the given config. Wire codes
    /// carry only the low 32 fingerprint bits.
    pub fn matches(&self, config: &ArchConfig) -> bool {
        self.geometry == config.latent_geometry
            && (self.fingerprint as u32) == (config.fingerprint() as u32)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        ByteReader { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let slice = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::Format("unexpected end of file".into()))?;
        self.pos += n;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Writes a checkpoint: magic, version, fingerprint, embedded config, then
/// each tensor as (name, shape, little-endian f32 payload). Bit-exact.
pub fn save_checkpoint(
    params: &ModelParams,
    config: &ArchConfig,
    path: impl AsRef<Path>,
) -> Result<()> {
    check_fingerprint(params, config)?;
    let cfg = config.encode_config();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&params.fingerprint.to_le_bytes());
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.entries.len() as u32).to_le_bytes());
    for (name, tensor) in &params.entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        for dim in [tensor.shape.n, tensor.shape.c, tensor.shape.h, tensor.shape.w] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &tensor.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}

/// Reads a checkpoint back; the stored fingerprint must match the embedded
/// config, and `expected` (when given) must match the stored config.
pub fn load_checkpoint(
    path: impl AsRef<Path>,
    expected: Option<&ArchConfig>,
) -> Result<(ArchConfig, ModelParams)> {
    let bytes = fs::read(path.as_ref())?;
    let mut r = ByteReader::new(&bytes);
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("bad checkpoint magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let fingerprint = r.u64()?;
    let cfg_len = r.u32()? as usize;
    let config = ArchConfig::decode_config(r.take(cfg_len)?)?;
    if config.fingerprint() != fingerprint {
        return Err(Error::Format(
            "checkpoint fingerprint does not match its embedded config".into(),
        ));
    }
    if let Some(expect) = expected {
        if expect.fingerprint() != fingerprint {
            return Err(Error::Format(format!(
                "checkpoint fingerprint {:016x} does not match requested config {:016x}",
                fingerprint,
                expect.fingerprint()
            )));
        }
    }
    let count = r.u32()? as usize;
    let mut entries = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u16()? as usize;
        let name = String::from_utf8(r.take(name_len)?.to_vec())
            .map_err(|_| Error::Format("checkpoint tensor name is not UTF-8".into()))?;
        let n = r.u32()? as usize;
        let c = r.u32()? as usize;
        let h = r.u32()? as usize;
        let w = r.u32()? as usize;
        let shape = Shape::new(n, c, h, w);
        let payload = r.take(shape.numel() * 4)?;
        let data = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        entries.push((name, Tensor::from_vec(shape, data)?));
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes after checkpoint payload".into()));
    }
    Ok((config, ModelParams { entries, fingerprint }))
}
