//! Binary model format, version `HDNN1`. All integers and floats are little
//! endian.
//!
//! ```text
//! "HDNN1"
//! tag      u32   variant tag | 0x80 if time-invariant | 0x100 if convolutional
//! N        u64   layers
//! h        f64
//! n        u64   hidden state dimension
//! M        u64   classes
//! [conv only] channels u64, height u64, width u64, ksize u64
//! K blocks       N layers, each with one block per weight (MS3 has two)
//! b blocks       N blocks
//! W, μ
//! [conv only] expansion kernel
//! ```
//!
//! A block is `rows u64, cols u64` followed by `rows·cols` f64 in row-major
//! order. MS2 weights are written as the full skew matrix; convolution
//! kernels as `out × (in·k²)`. Time-invariant networks still write all `N`
//! copies, which must be identical on load.

use std::path::Path;

use hamnet_core::layers::{make_interconnection, BiasLayout, Interconnection, Layer, Model, NetworkParams, OutputHead, Variant};
use hamnet_core::operator::{ChannelMix, Conv2d, LinearOperator, SkewMatrix, Weight};
use hamnet_core::{Architecture, Matrix};

use crate::error::{CliError, Result};

pub const MAGIC: &[u8; 5] = b"HDNN1";
pub const TIME_INVARIANT_FLAG: u32 = 0x80;
pub const CONV_FLAG: u32 = 0x100;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ModelFileError {
    #[error("not an HDNN1 model file (magic {found:02x?})")]
    BadMagic { found: Vec<u8> },
    #[error("unknown architecture tag {0:#x}")]
    UnknownTag(u32),
    #[error("truncated while reading {field} at byte {offset}")]
    Truncated { field: &'static str, offset: usize },
    #[error("{field} at byte {offset}: expected a {}x{} block, found {}x{}", expected.0, expected.1, found.0, found.1)]
    BlockShape {
        field: &'static str,
        offset: usize,
        expected: (u64, u64),
        found: (u64, u64),
    },
    #[error("{0} trailing bytes after the last block")]
    TrailingBytes(usize),
    #[error("{0}")]
    Invalid(String),
}

type FileResult<T> = std::result::Result<T, ModelFileError>;

fn invalid(msg: impl Into<String>) -> ModelFileError {
    ModelFileError::Invalid(msg.into())
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u64).to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn block(&mut self, rows: usize, cols: usize, data: &[f64]) {
        debug_assert_eq!(rows * cols, data.len());
        self.u64(rows);
        self.u64(cols);
        data.iter().for_each(|v| self.f64(*v));
    }
}

fn weight_block(w: &Weight) -> (usize, usize, Vec<f64>) {
    match w {
        Weight::Full(m) => (m.rows(), m.cols(), m.as_slice().to_vec()),
        Weight::Skew(s) => {
            let d = s.to_dense();
            (d.rows(), d.cols(), d.into_vec())
        }
        Weight::Conv(c) => {
            let k = c.ksize();
            (c.out_channels(), c.in_channels() * k * k, c.kernel().to_vec())
        }
    }
}

/// Serializes `model`.
pub fn encode_model(model: &Model) -> Vec<u8> {
    let net = &model.net;
    let conv = conv_geometry(model);
    let mut tag = u32::from(net.variant().tag());
    if net.time_invariant {
        tag |= TIME_INVARIANT_FLAG;
    }
    if conv.is_some() {
        tag |= CONV_FLAG;
    }
    let mut w = Writer(MAGIC.to_vec());
    w.u32(tag);
    w.u64(net.n_layers);
    w.f64(net.h);
    w.u64(net.n());
    w.u64(model.head.classes);
    if let Some(g) = conv {
        [g.channels, g.height, g.width, g.ksize].into_iter().for_each(|v| w.u64(v));
    }
    for j in 0..net.n_layers {
        for weight in &net.layer(j).weights {
            let (r, c, d) = weight_block(weight);
            w.block(r, c, &d);
        }
    }
    for j in 0..net.n_layers {
        let b = &net.layer(j).bias;
        w.block(b.len(), 1, b);
    }
    w.block(model.head.w.rows(), model.head.w.cols(), model.head.w.as_slice());
    w.block(model.head.mu.len(), 1, &model.head.mu);
    if let Some(e) = &model.expand {
        let k = e.ksize();
        w.block(e.out_channels(), e.in_channels() * k * k, e.kernel());
    }
    w.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    ksize: usize,
}

fn conv_geometry(model: &Model) -> Option<ConvGeometry> {
    let e = model.expand.as_ref()?;
    let (height, width) = e.image_shape();
    Some(ConvGeometry {
        channels: e.out_channels(),
        height,
        width,
        ksize: e.ksize(),
    })
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, len: usize, field: &'static str) -> FileResult<&[u8]> {
        let end = self.pos.checked_add(len).filter(|e| *e <= self.bytes.len());
        let Some(end) = end else {
            return Err(ModelFileError::Truncated { field, offset: self.pos });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self, field: &'static str) -> FileResult<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self, field: &'static str) -> FileResult<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self, field: &'static str) -> FileResult<usize> {
        let v = self.u64(field)?;
        usize::try_from(v).map_err(|_| invalid(format!("{field} = {v} does not fit in memory")))
    }
    fn f64(&mut self, field: &'static str) -> FileResult<f64> {
        Ok(f64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }
    /// Reads a block that must be `rows × cols`.
    fn block(&mut self, field: &'static str, rows: usize, cols: usize) -> FileResult<Vec<f64>> {
        let offset = self.pos;
        let (r, c) = (self.u64(field)?, self.u64(field)?);
        if (r, c) != (rows as u64, cols as u64) {
            return Err(ModelFileError::BlockShape {
                field,
                offset,
                expected: (rows as u64, cols as u64),
                found: (r, c),
            });
        }
        let raw = self.take(rows * cols * 8, field)?;
        Ok(raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect())
    }
}

/// Parses a model written by [`encode_model`].
pub fn decode_model(bytes: &[u8]) -> FileResult<Model> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(ModelFileError::BadMagic {
            found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
        });
    }
    let mut r = Reader { bytes, pos: MAGIC.len() };
    let tag = r.u32("tag")?;
    if tag & !(0xff | CONV_FLAG) != 0 {
        return Err(ModelFileError::UnknownTag(tag));
    }
    let variant = Variant::from_tag((tag & 0x7f) as u8).ok_or(ModelFileError::UnknownTag(tag))?;
    let time_invariant = tag & TIME_INVARIANT_FLAG != 0;
    let conv = tag & CONV_FLAG != 0;
    let n_layers = r.usize("N")?;
    let h = r.f64("h")?;
    let n = r.usize("n")?;
    let classes = r.usize("M")?;
    let core = |e: hamnet_core::Error| invalid(e.to_string());
    let mut geometry = None;
    let mut net = if conv {
        if time_invariant {
            return Err(invalid("time-invariant convolutional networks are not supported"));
        }
        let g = ConvGeometry {
            channels: r.usize("channels")?,
            height: r.usize("height")?,
            width: r.usize("width")?,
            ksize: r.usize("ksize")?,
        };
        geometry = Some(g);
        conv_skeleton(variant, g, n, n_layers, h).map_err(core)?
    } else {
        let arch = Architecture::new(variant, n).map_err(core)?;
        let mut net = NetworkParams::zeros(arch, n_layers, h).map_err(core)?;
        if time_invariant {
            net.time_invariant = true;
            net.layers.truncate(1);
        }
        net
    };
    if !(h > 0.0 && h.is_finite()) {
        return Err(invalid(format!("step size {h} must be positive")));
    }

    let template = net.layers.first().cloned();
    let mut layers: Vec<Layer> = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let t = template.as_ref().expect("N > 0 implies a stored layer");
        let mut weights = Vec::with_capacity(t.weights.len());
        for w in &t.weights {
            let (rows, cols, _) = weight_block(w);
            let data = r.block("K", rows, cols)?;
            weights.push(fill_weight(w, rows, cols, data)?);
        }
        layers.push(Layer {
            weights,
            bias: Vec::new(),
        });
    }
    for layer in &mut layers {
        let len = template.as_ref().expect("N > 0").bias.len();
        layer.bias = r.block("b", len, 1)?;
    }
    if time_invariant && layers.windows(2).any(|w| !same_bits(&w[0], &w[1])) {
        return Err(invalid("time-invariant model has differing layer copies"));
    }
    if time_invariant {
        layers.truncate(1);
    }
    if !layers.is_empty() {
        net.layers = layers;
    }

    let mut head = OutputHead::zeros(n, classes).map_err(core)?;
    let rows = head.w.rows();
    head.w = Matrix::new(rows, n, r.block("W", rows, n)?).map_err(core)?;
    head.mu = r.block("mu", rows, 1)?;
    let model = if let Some(g) = geometry {
        let k = g.ksize;
        let kernel = r.block("expansion kernel", g.channels, k * k)?;
        let e = Conv2d::with_kernel(g.channels, 1, g.height, g.width, k, kernel).expect("checked length");
        Model::with_expansion(e, net, head).map_err(core)?
    } else {
        Model::new(net, head).map_err(core)?
    };
    if r.pos != bytes.len() {
        return Err(ModelFileError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(model)
}

fn same_bits(a: &Layer, b: &Layer) -> bool {
    let bits = |l: &Layer| {
        let mut v: Vec<u64> = Vec::new();
        for w in &l.weights {
            v.extend(weight_block(w).2.iter().map(|x| x.to_bits()));
        }
        v.extend(l.bias.iter().map(|x| x.to_bits()));
        v
    };
    bits(a) == bits(b)
}

fn fill_weight(template: &Weight, rows: usize, cols: usize, data: Vec<f64>) -> FileResult<Weight> {
    if data.iter().any(|v| !v.is_finite()) {
        return Err(invalid("non-finite weight"));
    }
    Ok(match template {
        Weight::Full(_) => Weight::Full(Matrix::new(rows, cols, data).expect("shape checked")),
        Weight::Skew(_) => {
            let m = Matrix::new(rows, cols, data).expect("shape checked");
            let skew = SkewMatrix::from_matrix_upper(&m);
            if skew.to_dense().as_slice().iter().zip(m.as_slice()).any(|(a, b)| a.to_bits() != b.to_bits()) {
                return Err(invalid("MS2 weight is not exactly skew-symmetric"));
            }
            Weight::Skew(skew)
        }
        Weight::Conv(c) => {
            let (h, w) = c.image_shape();
            Weight::Conv(Conv2d::with_kernel(c.out_channels(), c.in_channels(), h, w, c.ksize(), data).expect("length checked"))
        }
    })
}

/// Zero-initialized convolutional network with the given geometry.
fn conv_skeleton(variant: Variant, g: ConvGeometry, n: usize, n_layers: usize, h: f64) -> hamnet_core::Result<NetworkParams> {
    let pixels = g.height * g.width;
    if g.channels * pixels != n || g.ksize % 2 == 0 {
        return Err(hamnet_core::Error::InvalidArgument(format!(
            "inconsistent convolution geometry {g:?} for n = {n}"
        )));
    }
    let (kin, kout) = match variant {
        Variant::H1 | Variant::H2 => (g.channels, g.channels),
        Variant::MS1 => (g.channels / 2, g.channels / 2),
        other => return Err(hamnet_core::Error::InvalidArgument(format!("{other} has no convolutional form"))),
    };
    let layer = Layer {
        weights: vec![Weight::Conv(Conv2d::zeros(kout, kin, g.height, g.width, g.ksize))],
        bias: vec![0.0; g.channels],
    };
    let j = if variant.is_hamiltonian() {
        Some(Interconnection::Channel(ChannelMix {
            mix: make_interconnection(variant, g.channels)?,
            pixels,
        }))
    } else {
        None
    };
    let net = NetworkParams {
        arch: Architecture::new(variant, n)?,
        n_layers,
        h,
        layers: vec![layer; n_layers],
        time_invariant: false,
        j,
        bias_layout: BiasLayout::PerChannel { pixels },
    };
    Ok(net)
}

pub fn save_model(path: &Path, model: &Model) -> Result<()> {
    std::fs::write(path, encode_model(model)).map_err(|e| CliError::io(path, e))
}

pub fn load_model(path: &Path) -> Result<Model> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    decode_model(&bytes).map_err(|source| CliError::ModelFile {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use hamnet_core::convnet::conv_model;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(variant: Variant, n: usize, n_layers: usize, ti: bool, classes: usize, seed: u64) -> Model {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::new(variant, n).unwrap();
        let mut net = NetworkParams::random(arch, n_layers, 0.1, ti, &mut rng).unwrap();
        for l in &mut net.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-1.0..1.0));
        }
        let mut head = OutputHead::zeros(n, classes).unwrap();
        head.w.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        head.mu.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        Model::new(net, head).unwrap()
    }

    #[test]
    fn every_variant_round_trips_byte_exactly() {
        for (i, v) in Variant::ALL.iter().enumerate() {
            for ti in [false, true] {
                let m = random_model(*v, 4, 3, ti, 2 + i % 3, i as u64);
                let bytes = encode_model(&m);
                let back = decode_model(&bytes).unwrap();
                assert_eq!(back, m, "{v} ti={ti}");
                assert_eq!(encode_model(&back), bytes);
            }
        }
    }

    #[test]
    fn conv_model_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = conv_model(Variant::H2, 4, 5, 6, 3, 2, 0.05, 10, &mut rng).unwrap();
        let bytes = encode_model(&m);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let m = random_model(Variant::H2, 4, 2, false, 2, 0);
        let b = encode_model(&m);
        assert_eq!(&b[..5], b"HDNN1");
        assert_eq!(u32::from_le_bytes(b[5..9].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[9..17].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(b[17..25].try_into().unwrap()), 0.1);
        assert_eq!(u64::from_le_bytes(b[25..33].try_into().unwrap()), 4);
        assert_eq!(u64::from_le_bytes(b[33..41].try_into().unwrap()), 2);
        // K_0 block: 4x4
        assert_eq!(u64::from_le_bytes(b[41..49].try_into().unwrap()), 4);
        let k00 = f64::from_le_bytes(b[57..65].try_into().unwrap());
        assert_eq!(k00, m.net.layers[0].weights[0].params()[0]);
        // header + 2 K + 2 b + W + mu
        assert_eq!(b.len(), 41 + 2 * (16 + 128) + 2 * (16 + 32) + (16 + 32) + (16 + 8));
    }

    #[test]
    fn corruption_is_reported() {
        let m = random_model(Variant::H1, 4, 1, false, 2, 0);
        let mut b = encode_model(&m);
        assert!(matches!(decode_model(b"HDNN2xxxx"), Err(ModelFileError::BadMagic { .. })));
        assert!(matches!(decode_model(&b[..b.len() - 1]), Err(ModelFileError::Truncated { field: "mu", .. })));
        let mut long = b.clone();
        long.push(0);
        assert_eq!(decode_model(&long), Err(ModelFileError::TrailingBytes(1)));
        b[5] = 0x7f;
        assert!(matches!(decode_model(&b), Err(ModelFileError::UnknownTag(_))));
    }

    #[test]
    fn non_skew_ms2_rejected() {
        let m = random_model(Variant::MS2, 4, 1, false, 2, 0);
        let mut b = encode_model(&m);
        // K block data starts after the header (41) and the block shape (16);
        // entry (1,0) is at index 4
        let off = 41 + 16 + 4 * 8;
        b[off..off + 8].copy_from_slice(&1.5f64.to_le_bytes());
        assert!(matches!(decode_model(&b), Err(ModelFileError::Invalid(_))));
    }

    #[test]
    fn differing_time_invariant_copies_rejected() {
        let m = random_model(Variant::H1, 4, 2, true, 2, 0);
        let mut b = encode_model(&m);
        let off = 41 + 16 + 128 + 16;
        b[off..off + 8].copy_from_slice(&9.0f64.to_le_bytes());
        assert!(matches!(decode_model(&b), Err(ModelFileError::Invalid(_))));
    }
}
