//! Statistical diagnostics for the cipher-image claims: byte histograms,
//! Shannon entropy, chi-square uniformity, adjacent-pixel correlation, and
//! the transmission-speedup arithmetic.

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// 0.999 quantile of the chi-square distribution with 255 degrees of
/// freedom; a uniform byte source stays below this with probability 0.999.
pub const CHI2_255_P999: f64 = 330.5197436340059;

/// 256-bin byte histogram; counts sum to the input length.
pub fn histogram(bytes: &[u8]) -> Result<[u64; 256]> {
    if bytes.is_empty() {
        return Err(Error::Invalid("histogram of empty input".into()));
    }
    let mut hist = [0u64; 256];
    for &b in bytes {
        hist[b as usize] += 1;
    }
    Ok(hist)
}

/// Shannon entropy of the empirical byte distribution, in bits per byte.
pub fn entropy(bytes: &[u8]) -> Result<f64> {
    Ok(entropy_from_hist(&histogram(bytes)?))
}

pub fn entropy_from_hist(hist: &[u64; 256]) -> f64 {
    let total: u64 = hist.iter().sum();
    let n = total as f64;
    let mut h = 0.0;
    for &count in hist {
        if count > 0 {
            let p = count as f64 / n;
            h -= p * p.log2();
        }
    }
    h
}

/// Pearson chi-square statistic against the uniform byte distribution:
/// sum of (observed - expected)^2 / expected with expected = total/256.
pub fn chi_square_uniform(hist: &[u64; 256]) -> Result<f64> {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return Err(Error::Invalid("chi-square of empty histogram".into()));
    }
    let expected = total as f64 / 256.0;
    Ok(hist
        .iter()
        .map(|&o| {
            let d = o as f64 - expected;
            d * d / expected
        })
        .sum())
}

/// Direction of the neighbor in an adjacent-pixel pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Horizontal,
    Vertical,
    Diagonal,
}

/// Correlation outcome; constant images have no defined coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Correlation {
    Coefficient(f64),
    Degenerate,
}

/// Pearson correlation over `n_pairs` seed-deterministically sampled
/// adjacent pixel pairs of a channel-planar image.
pub fn adjacent_correlation(
    pixels: &[u8],
    geometry: (usize, usize, usize),
    direction: Direction,
    n_pairs: usize,
    seed: u64,
) -> Result<Correlation> {
    let (h, w, c) = geometry;
    if pixels.len() != h * w * c {
        return Err(Error::Shape(format!(
            "pixel buffer has {} bytes for geometry {h}x{w}x{c}",
            pixels.len()
        )));
    }
    if n_pairs < 2 {
        return Err(Error::Invalid("need at least 2 pairs".into()));
    }
    let (dh, dw) = match direction {
        Direction::Horizontal => (0, 1),
        Direction::Vertical => (1, 0),
        Direction::Diagonal => (1, 1),
    };
    if h <= dh || w <= dw {
        return Err(Error::Invalid(format!(
            "image {h}x{w} too small to sample {direction:?} pairs"
        )));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n_pairs);
    let mut ys = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let ch = rng.gen_range(0..c);
        let row = rng.gen_range(0..h - dh);
        let col = rng.gen_range(0..w - dw);
        xs.push(pixels[(ch * h + row) * w + col] as f64);
        ys.push(pixels[(ch * h + row + dh) * w + col + dw] as f64);
    }
    Ok(pearson(&xs, &ys))
}

fn pearson(xs: &[f64], ys: &[f64]) -> Correlation {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
        sxy += (x - mx) * (y - my);
    }
    if sxx < 1e-12 || syy < 1e-12 {
        return Correlation::Degenerate;
    }
    Correlation::Coefficient(sxy / (sxx.sqrt() * syy.sqrt()))
}

/// Transmission-time accounting for a batch of images over a fixed link.
#[derive(Clone, Debug, PartialEq)]
pub struct ThroughputReport {
    pub n_images: u64,
    pub plain_bytes_per_image: u64,
    pub latent_bytes_per_image: u64,
    pub rate_bits_per_sec: f64,
    pub plain_time_us: f64,
    pub latent_time_us: f64,
    /// plain bytes / latent bytes; independent of rate and image count.
    pub speedup: f64,
}

/// Computes transmit times (microseconds) and the speedup ratio for
/// sending `n_images` of the given plain geometry vs their latent codes.
pub fn throughput_report(
    n_images: u64,
    plain_geometry: (usize, usize, usize),
    latent_bytes: u64,
    rate_bits_per_sec: f64,
) -> Result<ThroughputReport> {
    let (h, w, c) = plain_geometry;
    let plain_bytes = (h * w * c) as u64;
    if n_images == 0 || plain_bytes == 0 || latent_bytes == 0 {
        return Err(Error::Invalid("throughput quantities must be positive".into()));
    }
    if !(rate_bits_per_sec > 0.0) {
        return Err(Error::Invalid("link rate must be positive".into()));
    }
    let plain_bits = (n_images * plain_bytes * 8) as f64;
    let latent_bits = (n_images * latent_bytes * 8) as f64;
    Ok(ThroughputReport {
        n_images,
        plain_bytes_per_image: plain_bytes,
        latent_bytes_per_image: latent_bytes,
        rate_bits_per_sec,
        plain_time_us: plain_bits * 1e6 / rate_bits_per_sec,
        latent_time_us: latent_bits * 1e6 / rate_bits_per_sec,
        speedup: plain_bytes as f64 / latent_bytes as f64,
    })
}

/// Histogram + entropy + chi-square for one byte pool.
#[derive(Clone, Debug)]
pub struct DistributionReport {
    pub histogram: [u64; 256],
    pub entropy_bits: f64,
    pub chi_square: f64,
    pub sample_count: u64,
}

pub fn distribution_report(bytes: &[u8]) -> Result<DistributionReport> {
    let hist = histogram(bytes)?;
    let chi = chi_square_uniform(&hist)?;
    Ok(DistributionReport {
        histogram: hist,
        entropy_bits: entropy_from_hist(&hist),
        chi_square: chi,
        sample_count: bytes.len() as u64,
    })
}

/// Writes a 256-row `byte,count` CSV (plus header) for plotting.
pub fn write_histogram_csv(hist: &[u64; 256], path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("byte,count\n");
    for (b, count) in hist.iter().enumerate() {
        out.push_str(&format!("{b},{count}\n"));
    }
    fs::write(path.as_ref(), out)?;
    Ok(())
}
