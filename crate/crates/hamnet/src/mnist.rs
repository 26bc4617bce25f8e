//! MNIST IDX files on disk.

use std::path::{Path, PathBuf};

use hamnet_core::data::{decode_mnist, Dataset};

use crate::error::{CliError, Result};

pub const DIR_ENV: &str = "HAMNET_MNIST_DIR";
pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

/// `$HAMNET_MNIST_DIR`, else `data/mnist` at the workspace root.
pub fn default_dir() -> PathBuf {
    match std::env::var_os(DIR_ENV) {
        Some(d) => PathBuf::from(d),
        None => Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"),
    }
}

/// True when all four IDX files exist in `dir`.
pub fn available(dir: &Path) -> bool {
    [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS]
        .iter()
        .all(|f| dir.join(f).is_file())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Loads one split, keeping the first `limit` samples when given.
pub fn load_split(dir: &Path, split: Split, limit: Option<usize>) -> Result<Dataset> {
    let (img, lab) = match split {
        Split::Train => (TRAIN_IMAGES, TRAIN_LABELS),
        Split::Test => (TEST_IMAGES, TEST_LABELS),
    };
    let read = |name: &str| {
        let p = dir.join(name);
        std::fs::read(&p).map_err(|e| CliError::io(&p, e))
    };
    let images = read(img)?;
    let labels = read(lab)?;
    decode_mnist(&images, &labels, limit).map_err(|source| CliError::Idx {
        path: dir.join(img),
        source,
    })
}
