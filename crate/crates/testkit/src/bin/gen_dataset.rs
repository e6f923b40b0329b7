//! Dev helper: writes a synthetic dataset in the official binary layout so
//! the CLI can be exercised without the real files.
//!
//! Usage: gen-dataset <mnist|cifar10> <out-dir> [train-n] [test-n] [seed]

use std::path::PathBuf;
use std::process::exit;

use maskae_testkit::{write_cifar_dir, write_mnist_dir};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() < 2 {
        eprintln!("usage: gen-dataset <mnist|cifar10> <out-dir> [train-n] [test-n] [seed]");
        exit(2);
    }
    let kind = args[0].as_str();
    let dir = PathBuf::from(&args[1]);
    let train_n: usize = args.get(2).map(|s| s.parse().expect("train-n")).unwrap_or(5000);
    let test_n: usize = args.get(3).map(|s| s.parse().expect("test-n")).unwrap_or(1000);
    let seed: u64 = args.get(4).map(|s| s.parse().expect("seed")).unwrap_or(2024);

    let result = match kind {
        "mnist" => write_mnist_dir(&dir, train_n, test_n, seed),
        "cifar10" => write_cifar_dir(&dir, train_n, test_n, seed),
        other => {
            eprintln!("unknown dataset kind: {other}");
            exit(2);
        }
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        exit(1);
    }
    println!("wrote {kind} corpus ({train_n} train / {test_n} test) to {}", dir.display());
}
