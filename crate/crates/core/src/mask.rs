//! The XOR byte mask that acts as the scheme's shared secret key.
//!
//! Masks are either loaded raw from a file (the full 2^(8*H*W*C) key space)
//! or expanded from a 256-bit seed. Seed expansion is the ChaCha20 keystream
//! (via `rand_chacha`'s `ChaCha20Rng`, word-level compatible with the
//! RFC 8439 block function) under a key derived as
//! `SHA-256(seed || len(label) || label || H || W || C)`, all lengths and
//! dims as little-endian u64. The expansion is a pure function of
//! (seed, label, geometry); see the test vector pinned in the tests.

use std::fs;
use std::path::Path;

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

const MASK_MAGIC: &[u8; 4] = b"MAEM";
const MASK_VERSION: u16 = 1;
/// 4-byte magic, u16 version, u16 H, u16 W, u16 C, 4 reserved bytes.
pub const MASK_HEADER_LEN: usize = 16;

/// A fixed array of key bytes matching one image geometry.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub bytes: Vec<u8>,
    /// (H, W, C)
    pub geometry: (usize, usize, usize),
}

/// 256-bit seed plus a domain-separation label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSeed {
    pub seed: [u8; 32],
    pub label: String,
}

impl MaskSeed {
    pub fn new(seed: [u8; 32], label: impl Into<String>) -> Self {
        MaskSeed {
            seed,
            label: label.into(),
        }
    }

    /// Convenience constructor embedding a u64 into the low seed bytes.
    pub fn from_u64(value: u64, label: impl Into<String>) -> Self {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&value.to_le_bytes());
        MaskSeed::new(seed, label)
    }
}

/// Expands a seed into mask bytes for the given (H, W, C) geometry.
/// Deterministic: identical inputs yield bitwise-identical masks.
pub fn mask_from_seed(seed: &MaskSeed, geometry: (usize, usize, usize)) -> Result<Mask> {
    let (h, w, c) = geometry;
    if h == 0 || w == 0 || c == 0 {
        return Err(Error::Invalid(format!(
            "mask geometry dims must be positive, got {h}x{w}x{c}"
        )));
    }
    let mut hasher = Sha256::new();
    hasher.update(seed.seed);
    hasher.update((seed.label.len() as u64).to_le_bytes());
    hasher.update(seed.label.as_bytes());
    hasher.update((h as u64).to_le_bytes());
    hasher.update((w as u64).to_le_bytes());
    hasher.update((c as u64).to_le_bytes());
    let key: [u8; 32] = hasher.finalize().into();

    let mut rng = ChaCha20Rng::from_seed(key);
    let mut bytes = vec![0u8; h * w * c];
    rng.fill_bytes(&mut bytes);
    Ok(Mask { bytes, geometry })
}

/// Elementwise XOR of image bytes with the mask. Involution: applying the
/// same mask twice restores the input.
pub fn apply_mask(image_bytes: &[u8], mask: &Mask) -> Result<Vec<u8>> {
    if image_bytes.len() != mask.bytes.len() {
        return Err(Error::Shape(format!(
            "image has {} bytes but mask has {}",
            image_bytes.len(),
            mask.bytes.len()
        )));
    }
    Ok(image_bytes
        .iter()
        .zip(&mask.bytes)
        .map(|(a, b)| a ^ b)
        .collect())
}

/// Count of key bits for a geometry: H*W*C*8.
pub fn key_space_bits(geometry: (usize, usize, usize)) -> u64 {
    let (h, w, c) = geometry;
    (h as u64) * (w as u64) * (c as u64) * 8
}

impl Mask {
    /// Writes the mask file: 16-byte header (magic, version, H, W, C as
    /// little-endian u16, reserved padding) followed by the raw bytes.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (h, w, c) = self.geometry;
        if h > u16::MAX as usize || w > u16::MAX as usize || c > u16::MAX as usize {
            return Err(Error::Invalid(format!(
                "geometry {h}x{w}x{c} exceeds the u16 header fields"
            )));
        }
        let mut out = Vec::with_capacity(MASK_HEADER_LEN + self.bytes.len());
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&MASK_VERSION.to_le_bytes());
        out.extend_from_slice(&(h as u16).to_le_bytes());
        out.extend_from_slice(&(w as u16).to_le_bytes());
        out.extend_from_slice(&(c as u16).to_le_bytes());
        out.extend_from_slice(&[0u8; 4]);
        out.extend_from_slice(&self.bytes);
        fs::write(path.as_ref(), out)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Mask> {
        let bytes = fs::read(path.as_ref())?;
        if bytes.len() < MASK_HEADER_LEN {
            return Err(Error::Format("mask file shorter than its header".into()));
        }
        if &bytes[0..4] != MASK_MAGIC {
            return Err(Error::Format("bad mask file magic".into()));
        }
        let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
        if version != MASK_VERSION {
            return Err(Error::Format(format!("unsupported mask file version {version}")));
        }
        let h = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
        let w = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
        let c = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
        let payload = &bytes[MASK_HEADER_LEN..];
        if payload.len() != h * w * c {
            return Err(Error::Format(format!(
                "mask payload is {} bytes but header declares {}x{}x{} = {}",
                payload.len(),
                h,
                w,
                c,
                h * w * c
            )));
        }
        Ok(Mask {
            bytes: payload.to_vec(),
            geometry: (h, w, c),
        })
    }
}
