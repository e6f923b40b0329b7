use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use maskae_core::data::{load_cifar10, load_mnist, DatasetKind, DatasetSplit, SplitRole};
use maskae_core::mask::{apply_mask, key_space_bits, mask_from_seed, Mask, MaskSeed};
use maskae_core::metrics::{
    adjacent_correlation, distribution_report, throughput_report, write_histogram_csv,
    Correlation, Direction, CHI2_255_P999,
};
use maskae_core::model::{
    decode, dequantize_latent, encode, load_checkpoint, quantize_latent, ArchConfig, LatentCode,
    TargetMode,
};
use maskae_core::optim::OptimizerKind;
use maskae_core::train::{train, TrainConfig};
use maskae_core::{Error, Result, Shape, Tensor};

use crate::container;

/// Default seeds, so bare invocations are reproducible.
const DEFAULT_MASK_SEED: u64 = 7;
const DEFAULT_SHUFFLE_SEED: u64 = 42;
const DEFAULT_INIT_SEED: u64 = 1234;
const DEFAULT_ANALYZE_SEED: u64 = 9;
/// Domain-separation label for seed-derived masks.
const MASK_LABEL: &str = "mask";

#[derive(Parser)]
#[command(
    name = "maskae",
    version,
    about = "Visual image encryption and 3x compression with a masked convolutional autoencoder"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Generate an XOR key mask from a seed and write it to a file.
    MaskGen(MaskGenArgs),
    /// Train the autoencoder on a masked dataset.
    Train(TrainArgs),
    /// Encrypt one image into its quantized latent (the cipher image).
    Encrypt(EncryptArgs),
    /// Decrypt a latent file back into an image.
    Decrypt(DecryptArgs),
    /// Produce distribution, correlation, and throughput reports.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum DatasetArg {
    Mnist,
    Cifar10,
}

impl From<DatasetArg> for DatasetKind {
    fn from(d: DatasetArg) -> DatasetKind {
        match d {
            DatasetArg::Mnist => DatasetKind::Mnist,
            DatasetArg::Cifar10 => DatasetKind::Cifar10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TargetModeArg {
    Plain,
    Masked,
}

impl From<TargetModeArg> for TargetMode {
    fn from(m: TargetModeArg) -> TargetMode {
        match m {
            TargetModeArg::Plain => TargetMode::Plain,
            TargetModeArg::Masked => TargetMode::Masked,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args)]
struct MaskGenArgs {
    /// Seed for the keystream generator.
    #[arg(long, default_value_t = DEFAULT_MASK_SEED)]
    seed: u64,
    /// Mask geometry as HxWxC, e.g. 32x32x3.
    #[arg(long)]
    geometry: String,
    /// Output mask file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    dataset: DatasetArg,
    /// Directory holding the official dataset files.
    #[arg(long)]
    data_dir: PathBuf,
    /// Key mask file (see mask-gen).
    #[arg(long)]
    mask: PathBuf,
    /// Architecture selection; defaults to the dataset's stock stack.
    #[arg(long, value_enum)]
    arch: Option<DatasetArg>,
    /// Decoder target: reconstruct the plain image, or the masked image
    /// which the receiver un-XORs.
    #[arg(long, value_enum)]
    target_mode: Option<TargetModeArg>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Learning rate (default 0.001).
    #[arg(long)]
    lr: Option<f64>,
    /// Train on only the first N images.
    #[arg(long)]
    subsample: Option<usize>,
    #[arg(long, value_enum)]
    optimizer: Option<OptimizerArg>,
    /// Shuffle seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Parameter-initialization seed.
    #[arg(long)]
    init_seed: Option<u64>,
    /// Optional key=value config file; explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_checkpoint: PathBuf,
    #[arg(long)]
    history_csv: PathBuf,
}

#[derive(Args)]
struct EncryptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    /// Plain input image (.png or raw container).
    #[arg(long)]
    in_image: PathBuf,
    /// Output latent (cipher) file.
    #[arg(long)]
    out_latent: PathBuf,
}

#[derive(Args)]
struct DecryptArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    in_latent: PathBuf,
    /// Output image (.png or raw container).
    #[arg(long)]
    out_image: PathBuf,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, value_enum)]
    dataset: DatasetArg,
    #[arg(long)]
    data_dir: PathBuf,
    /// Directory the reports are written into (created if missing).
    #[arg(long)]
    report_dir: PathBuf,
    /// How many test images to pool for the distribution reports.
    #[arg(long, default_value_t = 1000)]
    images: usize,
    /// Sampling seed for the correlation estimates.
    #[arg(long, default_value_t = DEFAULT_ANALYZE_SEED)]
    seed: u64,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Commands::MaskGen(args) => cmd_mask_gen(args),
        Commands::Train(args) => cmd_train(args),
        Commands::Encrypt(args) => cmd_encrypt(args),
        Commands::Decrypt(args) => cmd_decrypt(args),
        Commands::Analyze(args) => cmd_analyze(args),
    }
}

fn parse_geometry(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != 3 {
        return Err(Error::Invalid(format!(
            "geometry must be HxWxC (e.g. 32x32x3), got '{s}'"
        )));
    }
    let dims: Vec<usize> = parts
        .iter()
        .map(|p| {
            p.parse::<usize>()
                .map_err(|_| Error::Invalid(format!("bad geometry component '{p}' in '{s}'")))
        })
        .collect::<Result<_>>()?;
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::Invalid(format!("geometry dims must be positive: '{s}'")));
    }
    Ok((dims[0], dims[1], dims[2]))
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Invalid(format!(
            "{what} '{}' does not exist or is not a file",
            path.display()
        )));
    }
    Ok(())
}

fn require_writable_parent(path: &Path, what: &str) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if !parent.is_dir() {
        return Err(Error::Invalid(format!(
            "{what} '{}': directory '{}' does not exist",
            path.display(),
            parent.display()
        )));
    }
    Ok(())
}

fn cmd_mask_gen(args: MaskGenArgs) -> Result<()> {
    let geometry = parse_geometry(&args.geometry)?;
    require_writable_parent(&args.out, "--out")?;
    let mask = mask_from_seed(&MaskSeed::from_u64(args.seed, MASK_LABEL), geometry)?;
    mask.save(&args.out)?;
    println!("key space: 2^{}", key_space_bits(geometry));
    println!(
        "wrote {}x{}x{} mask ({} bytes) to {}",
        geometry.0,
        geometry.1,
        geometry.2,
        mask.bytes.len(),
        args.out.display()
    );
    Ok(())
}

/// Loads `key=value` lines; `#` starts a comment.
fn load_config_file(path: &Path) -> Result<HashMap<String, String>> {
    let text = fs::read_to_string(path)?;
    let mut map = HashMap::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format(format!(
                "{}:{}: expected key=value, got '{line}'",
                path.display(),
                no + 1
            )));
        };
        map.insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(map)
}

fn config_get<T: std::str::FromStr>(
    map: &HashMap<String, String>,
    key: &str,
) -> Result<Option<T>> {
    match map.get(key) {
        None => Ok(None),
        Some(raw) => raw
            .parse::<T>()
            .map(Some)
            .map_err(|_| Error::Invalid(format!("config key '{key}': bad value '{raw}'"))),
    }
}

fn mnist_paths(dir: &Path, role: SplitRole) -> (PathBuf, PathBuf) {
    match role {
        SplitRole::Train => (
            dir.join("train-images-idx3-ubyte"),
            dir.join("train-labels-idx1-ubyte"),
        ),
        SplitRole::Test => (
            dir.join("t10k-images-idx3-ubyte"),
            dir.join("t10k-labels-idx1-ubyte"),
        ),
    }
}

fn load_split(kind: DatasetKind, dir: &Path, role: SplitRole) -> Result<DatasetSplit> {
    match kind {
        DatasetKind::Mnist => {
            let (images, labels) = mnist_paths(dir, role);
            require_file(&images, "MNIST images file")?;
            require_file(&labels, "MNIST labels file")?;
            load_mnist(&images, &labels, role)
        }
        DatasetKind::Cifar10 => {
            let paths: Vec<PathBuf> = match role {
                SplitRole::Train => (1..=5)
                    .map(|i| dir.join(format!("data_batch_{i}.bin")))
                    .filter(|p| p.is_file())
                    .collect(),
                SplitRole::Test => vec![dir.join("test_batch.bin")],
            };
            if paths.is_empty() {
                return Err(Error::Invalid(format!(
                    "no CIFAR-10 batch files found in '{}'",
                    dir.display()
                )));
            }
            for p in &paths {
                require_file(p, "CIFAR-10 batch file")?;
            }
            load_cifar10(&paths, role)
        }
    }
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let file_cfg = match &args.config {
        Some(path) => {
            require_file(path, "--config")?;
            load_config_file(path)?
        }
        None => HashMap::new(),
    };

    let epochs = args
        .epochs
        .or(config_get(&file_cfg, "epochs")?)
        .unwrap_or(5);
    let batch = args.batch.or(config_get(&file_cfg, "batch")?).unwrap_or(64);
    let lr = args.lr.or(config_get(&file_cfg, "lr")?).unwrap_or(1e-3);
    let subsample = args.subsample.or(config_get(&file_cfg, "subsample")?);
    let shuffle_seed = args
        .seed
        .or(config_get(&file_cfg, "seed")?)
        .unwrap_or(DEFAULT_SHUFFLE_SEED);
    let init_seed = args
        .init_seed
        .or(config_get(&file_cfg, "init-seed")?)
        .unwrap_or(DEFAULT_INIT_SEED);
    let target_mode: TargetMode = args
        .target_mode
        .map(TargetMode::from)
        .or(match file_cfg.get("target-mode").map(String::as_str) {
            Some("plain") => Some(TargetMode::Plain),
            Some("masked") => Some(TargetMode::Masked),
            Some(other) => {
                return Err(Error::Invalid(format!(
                    "config key 'target-mode': bad value '{other}'"
                )))
            }
            None => None,
        })
        .unwrap_or(TargetMode::Plain);
    let optimizer = match args.optimizer.or(match file_cfg.get("optimizer").map(String::as_str) {
        Some("adam") => Some(OptimizerArg::Adam),
        Some("sgd") => Some(OptimizerArg::Sgd),
        Some(other) => {
            return Err(Error::Invalid(format!(
                "config key 'optimizer': bad value '{other}'"
            )))
        }
        None => None,
    }) {
        Some(OptimizerArg::Sgd) => OptimizerKind::Sgd,
        _ => OptimizerKind::Adam,
    };

    if epochs == 0 {
        return Err(Error::Invalid("--epochs must be at least 1".into()));
    }
    if batch == 0 {
        return Err(Error::Invalid("--batch must be at least 1".into()));
    }
    let dataset: DatasetKind = args.dataset.into();
    if let Some(arch) = args.arch {
        if DatasetKind::from(arch) != dataset {
            return Err(Error::Invalid(
                "--arch must match --dataset (only the stock architectures exist)".into(),
            ));
        }
    }
    require_file(&args.mask, "--mask")?;
    require_writable_parent(&args.out_checkpoint, "--out-checkpoint")?;
    require_writable_parent(&args.history_csv, "--history-csv")?;
    if !args.data_dir.is_dir() {
        return Err(Error::Invalid(format!(
            "--data-dir '{}' is not a directory",
            args.data_dir.display()
        )));
    }

    let mask = Mask::load(&args.mask)?;
    let arch = ArchConfig::for_dataset(dataset, target_mode);
    let train_split = load_split(dataset, &args.data_dir, SplitRole::Train)?;
    let test_split = load_split(dataset, &args.data_dir, SplitRole::Test)?;

    let config = TrainConfig {
        epochs,
        batch_size: batch,
        lr,
        optimizer,
        shuffle_seed,
        init_seed,
        subsample,
        checkpoint_path: Some(args.out_checkpoint.clone()),
        checkpoint_every: 0,
    };
    let (_, history) = train(&config, &train_split, &test_split, &mask, &arch)?;
    history.write_csv(&args.history_csv)?;
    let last = history.epochs.last().expect("at least one epoch");
    println!(
        "trained {} epochs (lr {}): final train MSE {:.6}, test PSNR {:.2} dB",
        history.epochs.len(),
        history.lr,
        last.train_mse,
        last.test_psnr_db
    );
    println!("checkpoint: {}", args.out_checkpoint.display());
    println!("history:    {}", args.history_csv.display());
    Ok(())
}

/// Replicates grayscale bytes when the network wants RGB; errors on any
/// other mismatch.
fn image_to_input(
    img: &maskae_core::data::RawImage,
    mask: &Mask,
    arch: &ArchConfig,
) -> Result<Tensor> {
    let (c, h, w) = arch.input_geometry;
    let (ih, iw, ic) = img.geometry;
    let pixels = if (ih, iw, ic) == (h, w, c) {
        img.pixels.clone()
    } else if (ih, iw) == (h, w) && ic == 1 && c == 3 {
        let mut out = Vec::with_capacity(h * w * 3);
        for _ in 0..3 {
            out.extend_from_slice(&img.pixels);
        }
        out
    } else {
        return Err(Error::Shape(format!(
            "input image is {ih}x{iw}x{ic} but the model expects {h}x{w}x{c} (or its grayscale form)"
        )));
    };
    let masked = apply_mask(&pixels, mask)?;
    let data = masked.iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(Shape::new(1, c, h, w), data)
}

fn cmd_encrypt(args: EncryptArgs) -> Result<()> {
    require_file(&args.checkpoint, "--checkpoint")?;
    require_file(&args.mask, "--mask")?;
    require_file(&args.in_image, "--in-image")?;
    require_writable_parent(&args.out_latent, "--out-latent")?;

    let (arch, params) = load_checkpoint(&args.checkpoint, None)?;
    let mask = Mask::load(&args.mask)?;
    let img = container::load_image(&args.in_image)?;
    let input = image_to_input(&img, &mask, &arch)?;
    let latent = encode(&input, &params, &arch)?;
    let code = quantize_latent(&latent, &arch)?;
    code.save(&args.out_latent)?;
    println!(
        "wrote {}-byte latent payload to {}",
        code.bytes.len(),
        args.out_latent.display()
    );
    Ok(())
}

fn cmd_decrypt(args: DecryptArgs) -> Result<()> {
    require_file(&args.checkpoint, "--checkpoint")?;
    require_file(&args.mask, "--mask")?;
    require_file(&args.in_latent, "--in-latent")?;
    require_writable_parent(&args.out_image, "--out-image")?;

    let (arch, params) = load_checkpoint(&args.checkpoint, None)?;
    let mask = Mask::load(&args.mask)?;
    let code = LatentCode::load(&args.in_latent)?;
    if !code.matches(&arch) {
        return Err(Error::Format(
            "latent fingerprint does not match the checkpoint's architecture".into(),
        ));
    }
    let latent = dequantize_latent(&code);
    let out = decode(&latent, &params, &arch)?;
    let bytes = maskae_core::data::to_bytes(&out);
    let (c, h, w) = arch.output_geometry;
    let (pixels, channels) = match arch.target {
        TargetMode::Plain => (bytes, c),
        TargetMode::Masked => {
            let unmasked = apply_mask(&bytes, &mask)?;
            // grayscale datasets ran on replicated channels; average the
            // unmasked planes back to one
            if arch.dataset == DatasetKind::Mnist && c == 3 {
                let per = h * w;
                let gray = (0..per)
                    .map(|i| {
                        let sum = unmasked[i] as u32
                            + unmasked[per + i] as u32
                            + unmasked[2 * per + i] as u32;
                        ((sum as f64 / 3.0).round()) as u8
                    })
                    .collect();
                (gray, 1)
            } else {
                (unmasked, c)
            }
        }
    };
    let img = maskae_core::data::RawImage::new(pixels, (h, w, channels), 0)?;
    container::save_image(&img, &args.out_image)?;
    println!("wrote {h}x{w}x{channels} image to {}", args.out_image.display());
    Ok(())
}

fn mean_correlation(
    images: &[&maskae_core::data::RawImage],
    geometry: (usize, usize, usize),
    direction: Direction,
    seed: u64,
) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (i, img) in images.iter().enumerate() {
        if let Ok(Correlation::Coefficient(r)) =
            adjacent_correlation(&img.pixels, geometry, direction, 4096, seed ^ i as u64)
        {
            sum += r;
            n += 1;
        }
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<()> {
    require_file(&args.checkpoint, "--checkpoint")?;
    require_file(&args.mask, "--mask")?;
    if !args.data_dir.is_dir() {
        return Err(Error::Invalid(format!(
            "--data-dir '{}' is not a directory",
            args.data_dir.display()
        )));
    }
    fs::create_dir_all(&args.report_dir)?;

    let dataset: DatasetKind = args.dataset.into();
    let (arch, params) = load_checkpoint(&args.checkpoint, None)?;
    if arch.dataset != dataset {
        return Err(Error::Invalid(
            "--dataset does not match the checkpoint's architecture".into(),
        ));
    }
    let mask = Mask::load(&args.mask)?;
    let test_split = load_split(dataset, &args.data_dir, SplitRole::Test)?;
    if test_split.is_empty() {
        return Err(Error::Invalid("test split is empty".into()));
    }
    let n_images = args.images.min(test_split.len());
    let images: Vec<&maskae_core::data::RawImage> =
        test_split.images.iter().take(n_images).collect();

    // pooled masked-image distribution
    let mask_geom = arch.masked_image_geometry();
    let mut masked_images = Vec::with_capacity(n_images);
    let mut masked_pool = Vec::new();
    for img in &images {
        let (c, ..) = arch.input_geometry;
        let pixels = if img.geometry.2 == c {
            img.pixels.clone()
        } else {
            let mut out = Vec::with_capacity(img.pixels.len() * 3);
            for _ in 0..3 {
                out.extend_from_slice(&img.pixels);
            }
            out
        };
        let m = apply_mask(&pixels, &mask)?;
        masked_pool.extend_from_slice(&m);
        masked_images.push(maskae_core::data::RawImage::new(m, mask_geom, img.label)?);
    }
    let masked_report = distribution_report(&masked_pool)?;

    // pooled quantized-latent distribution over a smaller sample
    let latent_sample = n_images.min(256);
    let mut latent_pool = Vec::with_capacity(latent_sample * arch.latent_numel());
    for img in images.iter().take(latent_sample) {
        let input = image_to_input(img, &mask, &arch)?;
        let latent = encode(&input, &params, &arch)?;
        latent_pool.extend(quantize_latent(&latent, &arch)?.bytes);
    }
    let latent_report = distribution_report(&latent_pool)?;

    // adjacent-pixel correlation, plain vs masked
    let plain_geom = test_split.geometry();
    let corr_sample: Vec<&maskae_core::data::RawImage> =
        images.iter().take(200).copied().collect();
    let masked_refs: Vec<&maskae_core::data::RawImage> = masked_images.iter().take(200).collect();
    let mut corr_csv = String::from("direction,plain_r,masked_r\n");
    let mut corr_lines = Vec::new();
    for (name, dir) in [
        ("horizontal", Direction::Horizontal),
        ("vertical", Direction::Vertical),
        ("diagonal", Direction::Diagonal),
    ] {
        let plain_r = mean_correlation(&corr_sample, plain_geom, dir, args.seed);
        let masked_r = mean_correlation(&masked_refs, mask_geom, dir, args.seed);
        corr_csv.push_str(&format!("{name},{plain_r},{masked_r}\n"));
        corr_lines.push(format!(
            "plain {name} correlation: {plain_r:.4}\nmasked {name} correlation: {masked_r:.4}"
        ));
    }

    // transmission accounting at the fixed reference link
    let throughput = throughput_report(25, mask_geom, arch.latent_numel() as u64, 1e8)?;

    write_histogram_csv(&masked_report.histogram, args.report_dir.join("masked_histogram.csv"))?;
    write_histogram_csv(&latent_report.histogram, args.report_dir.join("latent_histogram.csv"))?;
    fs::write(args.report_dir.join("correlation.csv"), corr_csv)?;
    fs::write(
        args.report_dir.join("throughput.csv"),
        format!(
            "n_images,plain_bytes,latent_bytes,rate_bps,plain_time_us,latent_time_us,speedup\n{},{},{},{},{},{},{}\n",
            throughput.n_images,
            throughput.plain_bytes_per_image,
            throughput.latent_bytes_per_image,
            throughput.rate_bits_per_sec,
            throughput.plain_time_us,
            throughput.latent_time_us,
            throughput.speedup
        ),
    )?;

    let summary = format!(
        "dataset: {dataset:?}\n\
         images analyzed: {n}\n\
         masked entropy (bits/byte): {me:.6}\n\
         masked chi-square (255 df): {mc:.2}\n\
         latent entropy (bits/byte): {le:.6}\n\
         latent chi-square (255 df): {lc:.2}\n\
         chi-square 0.999 quantile (255 df): {q:.2}\n\
         {corr}\n\
         plain bytes/image: {pb}\n\
         latent bytes/image: {lb}\n\
         plain transmit time for 25 images at 100 Mbps (us): {pt:?}\n\
         latent transmit time for 25 images at 100 Mbps (us): {lt:?}\n\
         speedup: {sp:?}\n\
         key space: 2^{ks}\n",
        dataset = dataset,
        n = n_images,
        me = masked_report.entropy_bits,
        mc = masked_report.chi_square,
        le = latent_report.entropy_bits,
        lc = latent_report.chi_square,
        q = CHI2_255_P999,
        corr = corr_lines.join("\n"),
        pb = throughput.plain_bytes_per_image,
        lb = throughput.latent_bytes_per_image,
        pt = throughput.plain_time_us,
        lt = throughput.latent_time_us,
        sp = throughput.speedup,
        ks = key_space_bits(mask_geom),
    );
    fs::write(args.report_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    println!("reports written to {}", args.report_dir.display());
    Ok(())
}
