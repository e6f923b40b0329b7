//! Raw image container: the mask-file header layout with an image magic,
//! followed by channel-planar pixel bytes. Paths ending in `.png` are
//! written/read as PNG instead, for visual inspection.

use std::fs;
use std::path::Path;

use maskae_core::data::RawImage;
use maskae_core::{Error, Result};

const IMAGE_MAGIC: &[u8; 4] = b"MAEI";
const IMAGE_VERSION: u16 = 1;
pub const IMAGE_HEADER_LEN: usize = 16;

fn is_png(path: &Path) -> bool {
    path.extension()
        .map(|e| e.eq_ignore_ascii_case("png"))
        .unwrap_or(false)
}

pub fn save_image(img: &RawImage, path: &Path) -> Result<()> {
    if is_png(path) {
        return save_png(img, path);
    }
    let (h, w, c) = img.geometry;
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + img.pixels.len());
    out.extend_from_slice(IMAGE_MAGIC);
    out.extend_from_slice(&IMAGE_VERSION.to_le_bytes());
    out.extend_from_slice(&(h as u16).to_le_bytes());
    out.extend_from_slice(&(w as u16).to_le_bytes());
    out.extend_from_slice(&(c as u16).to_le_bytes());
    out.extend_from_slice(&[0u8; 4]);
    out.extend_from_slice(&img.pixels);
    fs::write(path, out)?;
    Ok(())
}

pub fn load_image(path: &Path) -> Result<RawImage> {
    if is_png(path) {
        return load_png(path);
    }
    let bytes = fs::read(path)?;
    if bytes.len() < IMAGE_HEADER_LEN {
        return Err(Error::Format("image file shorter than its header".into()));
    }
    if &bytes[0..4] != IMAGE_MAGIC {
        return Err(Error::Format("bad image container magic".into()));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != IMAGE_VERSION {
        return Err(Error::Format(format!("unsupported image container version {version}")));
    }
    let h = u16::from_le_bytes(bytes[6..8].try_into().unwrap()) as usize;
    let w = u16::from_le_bytes(bytes[8..10].try_into().unwrap()) as usize;
    let c = u16::from_le_bytes(bytes[10..12].try_into().unwrap()) as usize;
    let payload = &bytes[IMAGE_HEADER_LEN..];
    if payload.len() != h * w * c {
        return Err(Error::Format(format!(
            "image payload is {} bytes but header declares {h}x{w}x{c}",
            payload.len()
        )));
    }
    RawImage::new(payload.to_vec(), (h, w, c), 0)
}

fn save_png(img: &RawImage, path: &Path) -> Result<()> {
    let (h, w, c) = img.geometry;
    let err = |e: image::ImageError| Error::Format(format!("png encode: {e}"));
    match c {
        1 => {
            let buf = image::GrayImage::from_raw(w as u32, h as u32, img.pixels.clone())
                .expect("length checked by RawImage");
            buf.save(path).map_err(err)
        }
        3 => {
            // interleave the channel planes
            let mut rgb = Vec::with_capacity(h * w * 3);
            for i in 0..h * w {
                for ch in 0..3 {
                    rgb.push(img.pixels[ch * h * w + i]);
                }
            }
            let buf = image::RgbImage::from_raw(w as u32, h as u32, rgb)
                .expect("length checked by RawImage");
            buf.save(path).map_err(err)
        }
        other => Err(Error::Invalid(format!("cannot export {other}-channel image as PNG"))),
    }
}

fn load_png(path: &Path) -> Result<RawImage> {
    let decoded = image::open(path).map_err(|e| Error::Format(format!("png decode: {e}")))?;
    match decoded {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            RawImage::new(buf.into_raw(), (h, w, 1), 0)
        }
        other => {
            let buf = other.to_rgb8();
            let (w, h) = (buf.width() as usize, buf.height() as usize);
            let raw = buf.into_raw();
            // de-interleave into channel planes
            let mut planar = vec![0u8; h * w * 3];
            for i in 0..h * w {
                for ch in 0..3 {
                    planar[ch * h * w + i] = raw[i * 3 + ch];
                }
            }
            RawImage::new(planar, (h, w, 3), 0)
        }
    }
}
