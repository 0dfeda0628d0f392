#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const HEADER: &str = "Category;Customer Review;Sentiment;Emotion\n";

const EMOTIONS: [(&str, &str, &[&str]); 5] = [
    ("Happy", "Positive", &["senang", "puas", "mantap", "bagus"]),
    ("Sadness", "Negative", &["kecewa", "sedih", "nyesel", "rusak"]),
    ("Fear", "Negative", &["takut", "khawatir", "ragu", "cemas"]),
    ("Love", "Positive", &["suka", "cinta", "sayang", "recommended"]),
    ("Anger", "Negative", &["kesal", "marah", "parah", "jelek"]),
];

const FILLER: &[&str] = &[
    "barang", "pengiriman", "cepat", "seller", "produk", "sesuai", "pesanan", "warna", "ukuran", "harga", "kualitas",
    "packing", "kurir", "toko",
];

const CATEGORIES: &[&str] = &["Fashion", "Electronics", "Food", "Beauty"];

/// A `;`-delimited review file whose labels are carried by marker words.
pub fn synthetic_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::from(HEADER);
    for i in 0..rows {
        let (emotion, sentiment, markers) = EMOTIONS[i % EMOTIONS.len()];
        let len = rng.gen_range(4..10);
        let mut words: Vec<&str> = (0..len).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
        for _ in 0..2 {
            let at = rng.gen_range(0..=words.len());
            words.insert(at, markers.choose(&mut rng).unwrap());
        }
        let cat = CATEGORIES[i % CATEGORIES.len()];
        writeln!(out, "{cat};{};{sentiment};{emotion}", words.join(" ")).unwrap();
    }
    out
}

pub fn write_csv(dir: &Path, rows: usize, seed: u64) -> PathBuf {
    let path = dir.join("reviews.csv");
    std::fs::write(&path, synthetic_csv(rows, seed)).unwrap();
    path
}

pub fn ulasan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ulasan")).args(args).output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Flags for a neural run small enough to finish in seconds.
pub const TINY_NEURAL: &[&str] = &["--epochs", "3", "--embed-dim", "8", "--hidden-dim", "8", "--max-len", "16", "--batch-size", "16"];

/// Runs `train` and returns the single run directory created under `out`.
pub fn train_run(data: &Path, out: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["train", "--data", data.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = ulasan(&args);
    assert!(o.status.success(), "train failed: {}", stderr(&o));
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out).unwrap().map(|e| e.unwrap().path()).filter(|p| p.is_dir()).collect();
    assert_eq!(dirs.len(), 1, "{dirs:?}");
    dirs.pop().unwrap()
}
