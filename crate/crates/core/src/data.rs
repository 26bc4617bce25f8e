//! Labeled datasets, the "double moons" and "Swiss roll" generators, zero
//! padding of features, and the big-endian IDX container used by MNIST.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::tensor::Matrix;

/// Feature matrix (`s × n`, one sample per row) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub name: String,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, classes: usize, name: String) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "Dataset::new",
                expected: (labels.len(), features.cols()),
                found: features.shape(),
            });
        }
        if let Some(&label) = labels.iter().find(|l| **l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if !features.as_slice().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite { op: "Dataset::new" });
        }
        Ok(Dataset {
            features,
            labels,
            classes,
            name,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature dimension.
    pub fn n(&self) -> usize {
        self.features.cols()
    }

    pub fn sample(&self, i: usize) -> (&[f64], usize) {
        (self.features.row(i), self.labels[i])
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let n = self.n();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(self.features.row(i));
        }
        Dataset {
            features: Matrix::new(indices.len(), n, data).expect("row count"),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            name: self.name.clone(),
        }
    }

    /// The first `count` samples (all of them if fewer).
    pub fn head(&self, count: usize) -> Dataset {
        let idx: Vec<usize> = (0..count.min(self.len())).collect();
        self.subset(&idx)
    }

    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.n() != other.n() {
            return Err(Error::DimensionMismatch {
                op: "Dataset::concat",
                expected: (other.len(), self.n()),
                found: (other.len(), other.n()),
            });
        }
        let mut data = self.features.as_slice().to_vec();
        data.extend_from_slice(other.features.as_slice());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(
            Matrix::new(labels.len(), self.n(), data)?,
            labels,
            self.classes.max(other.classes),
            self.name.clone(),
        )
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }
}

/// Shifts and scales every feature column to zero mean and unit (population)
/// variance. Constant columns are only centered.
pub fn standardize(d: &mut Dataset) {
    let (s, n) = (d.len(), d.n());
    if s == 0 {
        return;
    }
    let data = d.features.as_mut_slice();
    for j in 0..n {
        let mean = (0..s).map(|i| data[i * n + j]).sum::<f64>() / s as f64;
        let var = (0..s).map(|i| (data[i * n + j] - mean).powi(2)).sum::<f64>() / s as f64;
        let scale = if var > 0.0 { 1.0 / libm::sqrt(var) } else { 1.0 };
        for i in 0..s {
            data[i * n + j] = (data[i * n + j] - mean) * scale;
        }
    }
}

fn check_even(s: usize) -> Result<()> {
    if s % 2 == 0 {
        Ok(())
    } else {
        Err(invalid(alloc::format!("sample count must be even, got {s}")))
    }
}

fn noise(std: f64) -> Result<Normal<f64>> {
    if !(std >= 0.0 && std.is_finite()) {
        return Err(invalid("noise std must be non-negative"));
    }
    Normal::new(0.0, std).map_err(|_| invalid("noise std must be non-negative"))
}

/// Two interleaved unit half-circles before standardization: class 0 at
/// `(cos t, sin t)`, class 1 at `(1 − cos t, 0.5 − sin t)`, `t ~ U[0, π]`,
/// plus Gaussian noise. The first `s/2` samples are class 0.
pub fn double_moons_raw(s: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    check_even(s)?;
    let normal = noise(noise_std)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * s);
    let mut labels = Vec::with_capacity(s);
    for k in 0..s {
        let c = usize::from(k >= s / 2);
        let t = rng.random_range(0.0..=core::f64::consts::PI);
        let (x, y) = if c == 0 {
            (libm::cos(t), libm::sin(t))
        } else {
            (1.0 - libm::cos(t), 0.5 - libm::sin(t))
        };
        data.push(x + normal.sample(&mut rng));
        data.push(y + normal.sample(&mut rng));
        labels.push(c);
    }
    Dataset::new(Matrix::new(s, 2, data)?, labels, 2, String::from("double_moons"))
}

/// Standardized double moons.
pub fn gen_double_moons(s: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    let mut d = double_moons_raw(s, noise_std, seed)?;
    standardize(&mut d);
    Ok(d)
}

/// Spiral radius at parameter `t ∈ [0, 3π]`.
pub fn swiss_roll_radius(t: f64) -> f64 {
    0.2 + 0.6 * t / (3.0 * core::f64::consts::PI)
}

/// Two interleaved spirals before standardization: class `c` at
/// `r(t)·(cos(t + cπ), sin(t + cπ))`, `t ~ U[0, 3π]`, plus Gaussian noise.
pub fn swiss_roll_raw(s: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    check_even(s)?;
    let normal = noise(noise_std)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pi = core::f64::consts::PI;
    let mut data = Vec::with_capacity(2 * s);
    let mut labels = Vec::with_capacity(s);
    for k in 0..s {
        let c = usize::from(k >= s / 2);
        let t = rng.random_range(0.0..=3.0 * pi);
        let r = swiss_roll_radius(t);
        let phase = t + c as f64 * pi;
        data.push(r * libm::cos(phase) + normal.sample(&mut rng));
        data.push(r * libm::sin(phase) + normal.sample(&mut rng));
        labels.push(c);
    }
    Dataset::new(Matrix::new(s, 2, data)?, labels, 2, String::from("swiss_roll"))
}

/// Standardized Swiss roll.
pub fn gen_swiss_roll(s: usize, noise_std: f64, seed: u64) -> Result<Dataset> {
    let mut d = swiss_roll_raw(s, noise_std, seed)?;
    standardize(&mut d);
    Ok(d)
}

pub const DOUBLE_MOONS_NOISE: f64 = 0.1;
pub const SWISS_ROLL_NOISE: f64 = 0.02;
/// Step size `h` used for every network on the 2-D benchmarks.
pub const BENCHMARK_STEP: f64 = 0.02;
/// Test sets use `seed + TEST_SEED_OFFSET` so they never share draws with
/// the training set.
pub const TEST_SEED_OFFSET: u64 = 1000;

/// The two synthetic binary benchmarks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Benchmark {
    DoubleMoons,
    SwissRoll,
}

impl Benchmark {
    pub fn name(self) -> &'static str {
        match self {
            Benchmark::DoubleMoons => "double_moons",
            Benchmark::SwissRoll => "swiss_roll",
        }
    }

    pub fn default_noise(self) -> f64 {
        match self {
            Benchmark::DoubleMoons => DOUBLE_MOONS_NOISE,
            Benchmark::SwissRoll => SWISS_ROLL_NOISE,
        }
    }

    /// Standardized samples with the default noise level.
    pub fn generate(self, s: usize, seed: u64) -> Result<Dataset> {
        match self {
            Benchmark::DoubleMoons => gen_double_moons(s, DOUBLE_MOONS_NOISE, seed),
            Benchmark::SwissRoll => gen_swiss_roll(s, SWISS_ROLL_NOISE, seed),
        }
    }

    /// Independently drawn train and test sets of `s` samples each, padded
    /// to `n` features.
    pub fn train_test(self, s: usize, n: usize, seed: u64) -> Result<(Dataset, Dataset)> {
        let train = augment_features(&self.generate(s, seed)?, n)?;
        let test = augment_features(&self.generate(s, seed.wrapping_add(TEST_SEED_OFFSET))?, n)?;
        Ok((train, test))
    }
}

impl core::str::FromStr for Benchmark {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "double_moons" | "moons" => Ok(Benchmark::DoubleMoons),
            "swiss_roll" | "roll" => Ok(Benchmark::SwissRoll),
            _ => Err(invalid(alloc::format!("unknown benchmark {s:?}"))),
        }
    }
}

/// Zero-pads every feature vector on the right to `target_n`.
pub fn augment_features(d: &Dataset, target_n: usize) -> Result<Dataset> {
    let n = d.n();
    if target_n < n {
        return Err(invalid(alloc::format!("cannot augment {n} features down to {target_n}")));
    }
    let mut data = vec![0.0; d.len() * target_n];
    for i in 0..d.len() {
        data[i * target_n..i * target_n + n].copy_from_slice(d.features.row(i));
    }
    Ok(Dataset {
        features: Matrix::new(d.len(), target_n, data)?,
        labels: d.labels.clone(),
        classes: d.classes,
        name: d.name.clone(),
    })
}

// ---------------------------------------------------------------------------
// IDX

pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;
pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;

/// Decoding failure, naming the file role (`"images"` / `"labels"`), the
/// field and the byte offset where it was detected.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum IdxError {
    BadMagic {
        file: &'static str,
        offset: usize,
        expected: u32,
        found: u32,
    },
    Truncated {
        file: &'static str,
        field: &'static str,
        offset: usize,
        needed: usize,
        available: usize,
    },
    TrailingBytes {
        file: &'static str,
        offset: usize,
    },
    CountMismatch {
        images: usize,
        labels: usize,
        offset: usize,
    },
    LabelOutOfRange {
        offset: usize,
        value: u8,
    },
}

impl fmt::Display for IdxError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IdxError::BadMagic {
                file,
                offset,
                expected,
                found,
            } => write!(f, "{file}: field 'magic' at byte {offset}: expected {expected:#010x}, found {found:#010x}"),
            IdxError::Truncated {
                file,
                field,
                offset,
                needed,
                available,
            } => write!(f, "{file}: field '{field}' truncated at byte {offset}: needed {needed} bytes, {available} available"),
            IdxError::TrailingBytes { file, offset } => write!(f, "{file}: unexpected trailing bytes from byte {offset}"),
            IdxError::CountMismatch { images, labels, offset } => write!(
                f,
                "labels: field 'count' at byte {offset}: {labels} labels for {images} images"
            ),
            IdxError::LabelOutOfRange { offset, value } => {
                write!(f, "labels: field 'payload' at byte {offset}: label {value} is not a digit")
            }
        }
    }
}

impl core::error::Error for IdxError {}

/// A parsed IDX container of unsigned bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxFile {
    pub magic: u32,
    pub dims: Vec<usize>,
    pub payload: Vec<u8>,
}

fn read_u32(bytes: &[u8], offset: usize, file: &'static str, field: &'static str) -> core::result::Result<u32, IdxError> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or(IdxError::Truncated {
            file,
            field,
            offset,
            needed: 4,
            available: bytes.len().saturating_sub(offset),
        })
}

impl IdxFile {
    /// Parses `bytes`, requiring the given magic (`IDX_LABELS_MAGIC` or
    /// `IDX_IMAGES_MAGIC`). `file` names the role in error messages.
    pub fn parse(bytes: &[u8], expected_magic: u32, file: &'static str) -> core::result::Result<IdxFile, IdxError> {
        let magic = read_u32(bytes, 0, file, "magic")?;
        if magic != expected_magic {
            return Err(IdxError::BadMagic {
                file,
                offset: 0,
                expected: expected_magic,
                found: magic,
            });
        }
        let ndims = (magic & 0xff) as usize;
        let mut dims = Vec::with_capacity(ndims);
        for k in 0..ndims {
            let field = if k == 0 { "count" } else { "dims" };
            dims.push(read_u32(bytes, 4 + 4 * k, file, field)? as usize);
        }
        let start = 4 + 4 * ndims;
        let len: usize = dims.iter().product();
        let available = bytes.len() - start;
        if available < len {
            return Err(IdxError::Truncated {
                file,
                field: "payload",
                offset: bytes.len(),
                needed: len,
                available,
            });
        }
        if available > len {
            return Err(IdxError::TrailingBytes {
                file,
                offset: start + len,
            });
        }
        Ok(IdxFile {
            magic,
            dims,
            payload: bytes[start..].to_vec(),
        })
    }

    pub fn header_len(&self) -> usize {
        4 + 4 * self.dims.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.header_len() + self.payload.len());
        out.extend_from_slice(&self.magic.to_be_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_be_bytes());
        }
        out.extend_from_slice(&self.payload);
        out
    }
}

/// Decodes an image/label IDX pair into a 10-class dataset with pixels
/// scaled to `[0, 1]`. At most `limit` samples are kept.
pub fn decode_mnist(images: &[u8], labels: &[u8], limit: Option<usize>) -> core::result::Result<Dataset, IdxError> {
    let img = IdxFile::parse(images, IDX_IMAGES_MAGIC, "images")?;
    let lab = IdxFile::parse(labels, IDX_LABELS_MAGIC, "labels")?;
    let (count, rows, cols) = (img.dims[0], img.dims[1], img.dims[2]);
    if lab.dims[0] != count {
        return Err(IdxError::CountMismatch {
            images: count,
            labels: lab.dims[0],
            offset: 4,
        });
    }
    if let Some(pos) = lab.payload.iter().position(|v| *v > 9) {
        return Err(IdxError::LabelOutOfRange {
            offset: lab.header_len() + pos,
            value: lab.payload[pos],
        });
    }
    let keep = limit.map_or(count, |l| l.min(count));
    let pixels = rows * cols;
    let data: Vec<f64> = img.payload[..keep * pixels].iter().map(|b| f64::from(*b) / 255.0).collect();
    Ok(Dataset {
        features: Matrix::new(keep, pixels, data).expect("payload size checked"),
        labels: lab.payload[..keep].iter().map(|b| *b as usize).collect(),
        classes: 10,
        name: String::from("mnist"),
    })
}

/// Encodes a dataset with features in `{k/255}` as an (images, labels) IDX
/// pair of `rows × cols` images.
pub fn encode_mnist(d: &Dataset, rows: usize, cols: usize) -> Result<(Vec<u8>, Vec<u8>)> {
    if d.n() != rows * cols {
        return Err(Error::DimensionMismatch {
            op: "encode_mnist",
            expected: (d.len(), rows * cols),
            found: (d.len(), d.n()),
        });
    }
    let mut payload = Vec::with_capacity(d.len() * d.n());
    for &v in d.features.as_slice() {
        let b = libm::round(v * 255.0);
        if !(0.0..=255.0).contains(&b) || f64::from(b as u8) / 255.0 != v {
            return Err(invalid(alloc::format!("pixel value {v} is not of the form k/255")));
        }
        payload.push(b as u8);
    }
    let labels = d
        .labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| invalid("label does not fit in a byte")))
        .collect::<Result<Vec<u8>>>()?;
    let img = IdxFile {
        magic: IDX_IMAGES_MAGIC,
        dims: vec![d.len(), rows, cols],
        payload,
    };
    let lab = IdxFile {
        magic: IDX_LABELS_MAGIC,
        dims: vec![d.len()],
        payload: labels,
    };
    Ok((img.encode(), lab.encode()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_moons_on_arcs() {
        let d = double_moons_raw(4, 0.0, 3).unwrap();
        for i in 0..4 {
            let (x, c) = d.sample(i);
            let (cx, cy) = if c == 0 { (0.0, 0.0) } else { (1.0, 0.5) };
            let r = libm::hypot(x[0] - cx, x[1] - cy);
            assert!((r - 1.0).abs() < 1e-14);
            if c == 0 {
                assert!(x[1] >= 0.0);
            } else {
                assert!(x[1] <= 0.5);
            }
        }
        assert_eq!(d.class_counts(), vec![2, 2]);
    }

    #[test]
    fn noiseless_roll_on_spiral() {
        let d = swiss_roll_raw(10, 0.0, 3).unwrap();
        let pi = core::f64::consts::PI;
        for i in 0..10 {
            let (x, c) = d.sample(i);
            let r = libm::hypot(x[0], x[1]);
            let t = (r - 0.2) * 3.0 * pi / 0.6;
            let phase = t + c as f64 * pi;
            assert!((x[0] - r * libm::cos(phase)).abs() < 1e-12 && (x[1] - r * libm::sin(phase)).abs() < 1e-12);
        }
        assert_eq!(d.class_counts(), vec![5, 5]);
    }

    #[test]
    fn odd_count_rejected() {
        assert!(gen_double_moons(5, 0.1, 0).is_err());
        assert!(gen_swiss_roll(7, 0.1, 0).is_err());
    }

    #[test]
    fn standardized_moments() {
        for d in [gen_double_moons(1000, 0.1, 1).unwrap(), gen_swiss_roll(1000, 0.02, 1).unwrap()] {
            for j in 0..2 {
                let col: Vec<f64> = (0..d.len()).map(|i| d.sample(i).0[j]).collect();
                let m = col.iter().sum::<f64>() / col.len() as f64;
                let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
                assert!(m.abs() < 1e-9 && (v - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn seeded_generation() {
        assert_eq!(gen_double_moons(20, 0.1, 5).unwrap(), gen_double_moons(20, 0.1, 5).unwrap());
        assert_ne!(gen_double_moons(20, 0.1, 5).unwrap(), gen_double_moons(20, 0.1, 6).unwrap());
    }

    #[test]
    fn augmentation() {
        let d = Dataset::new(Matrix::from_rows(&[[1.0, 2.0]]), vec![0], 2, String::new()).unwrap();
        assert_eq!(augment_features(&d, 2).unwrap(), d);
        assert_eq!(augment_features(&d, 4).unwrap().features.row(0), &[1.0, 2.0, 0.0, 0.0]);
        assert!(augment_features(&d, 1).is_err());
        let e = Dataset::new(Matrix::from_rows(&[[3.0, 4.0]]), vec![1], 2, String::new()).unwrap();
        assert_eq!(
            augment_features(&d.concat(&e).unwrap(), 3).unwrap(),
            augment_features(&d, 3).unwrap().concat(&augment_features(&e, 3).unwrap()).unwrap()
        );
    }

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut img = vec![0x00, 0x00, 0x08, 0x03, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 3];
        img.extend_from_slice(&[0, 1, 2, 3, 4, 5, 255, 128, 7, 9, 10, 200]);
        let lab = vec![0x00, 0x00, 0x08, 0x01, 0, 0, 0, 2, 7, 3];
        (img, lab)
    }

    #[test]
    fn fixture_decodes() {
        let (img, lab) = fixture();
        let d = decode_mnist(&img, &lab, None).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.labels, vec![7, 3]);
        assert_eq!(d.n(), 6);
        for (v, b) in d.features.as_slice().iter().zip(&img[16..]) {
            assert_eq!(*v, f64::from(*b) / 255.0);
        }
        let (i2, l2) = encode_mnist(&d, 2, 3).unwrap();
        assert_eq!((i2, l2), (img, lab));
    }

    #[test]
    fn idx_errors_name_offsets() {
        let (img, lab) = fixture();
        let e = decode_mnist(&img[..img.len() - 2], &lab, None).unwrap_err();
        assert_eq!(
            e,
            IdxError::Truncated {
                file: "images",
                field: "payload",
                offset: 26,
                needed: 12,
                available: 10
            }
        );
        let e = decode_mnist(&img[..10], &lab, None).unwrap_err();
        assert!(matches!(e, IdxError::Truncated { field: "dims", offset: 8, .. }));
        let mut bad = img.clone();
        bad[3] = 0x02;
        assert!(matches!(decode_mnist(&bad, &lab, None).unwrap_err(), IdxError::BadMagic { file: "images", offset: 0, .. }));
        assert!(matches!(decode_mnist(&img, &img, None).unwrap_err(), IdxError::BadMagic { file: "labels", .. }));
        let mut short = lab.clone();
        short[7] = 1;
        short.pop();
        assert_eq!(
            decode_mnist(&img, &short, None).unwrap_err(),
            IdxError::CountMismatch {
                images: 2,
                labels: 1,
                offset: 4
            }
        );
        let mut extra = img.clone();
        extra.push(0);
        assert_eq!(decode_mnist(&extra, &lab, None).unwrap_err(), IdxError::TrailingBytes { file: "images", offset: 28 });
        let mut badlab = lab.clone();
        badlab[9] = 11;
        assert_eq!(decode_mnist(&img, &badlab, None).unwrap_err(), IdxError::LabelOutOfRange { offset: 9, value: 11 });
    }

    #[test]
    fn limit_keeps_prefix() {
        let (img, lab) = fixture();
        let d = decode_mnist(&img, &lab, Some(1)).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d.labels, vec![7]);
    }
}

/// Input expansion for digit images; see [`crate::convnet`].
pub use crate::convnet::mnist_pipeline;
