#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use mlc_core::data_io::{write_dataset_string, MultiLabelDataset, SparseRow};

pub fn mlc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mlc"))
        .args(args)
        .env_remove("MLC_DATA_ROOT")
        .output()
        .expect("mlc binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Label `l` is on iff feature `l` or `l + labels` is present.
pub fn learnable(n: usize, labels: usize, seed: u64) -> MultiLabelDataset {
    let features = 3 * labels;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut y = Array2::zeros((n, labels));
    let rows = (0..n)
        .map(|i| {
            let pairs: Vec<(u32, f64)> = (0..features as u32)
                .filter(|_| rng.random_bool(0.3))
                .map(|k| (k, 1.0))
                .collect();
            for &(k, _) in &pairs {
                if (k as usize) < 2 * labels {
                    y[[i, k as usize % labels]] = 1;
                }
            }
            SparseRow::from_pairs(pairs).unwrap()
        })
        .collect();
    MultiLabelDataset::new(features, rows, y).unwrap()
}

pub const LABEL_NAMES: [&str; 4] = ["red car", "blue car", "green tree", "zzqx"];

/// Dataset, label-name and word-embedding files for a 4-label toy task.
pub struct ToyFiles {
    pub dir: tempfile::TempDir,
    pub train: PathBuf,
    pub names: PathBuf,
    pub words: PathBuf,
}

pub fn toy_files(n: usize, seed: u64) -> ToyFiles {
    let dir = tempfile::tempdir().unwrap();
    let train = dir.path().join("train.txt");
    let names = dir.path().join("labels.txt");
    let words = dir.path().join("words.txt");
    std::fs::write(&train, write_dataset_string(&learnable(n, LABEL_NAMES.len(), seed))).unwrap();
    std::fs::write(&names, LABEL_NAMES.join("\n") + "\n").unwrap();
    std::fs::write(
        &words,
        "red 0.9 0.1 0.0 0.3\nblue 0.1 0.9 0.2 0.0\ncar 0.5 0.5 -0.4 0.1\ngreen 0.0 0.3 0.8 0.2\ntree -0.2 0.1 0.7 0.9\n",
    )
    .unwrap();
    ToyFiles {
        dir,
        train,
        names,
        words,
    }
}
