//! Convolutional H-networks for 28×28 grayscale digits: a trainable 3×3
//! same-padding convolution lifts one channel to eight, the hidden layers
//! use 8→8 convolutions for `K_j` with per-channel biases, `J` acts on the
//! channel axis at every pixel, and the head reads all `8·28·28` outputs.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::layers::{Model, NetworkParams, OutputHead, Variant};
use crate::operator::{Conv2d, LinearOperator};
use crate::tensor::Matrix;

pub const IMAGE_SIDE: usize = 28;
pub const CHANNELS: usize = 8;
pub const KERNEL_SIZE: usize = 3;
pub const DIGIT_CLASSES: usize = 10;

/// Feature dimension after expansion, `8·28·28 = 6272`.
pub const EXPANDED_DIM: usize = CHANNELS * IMAGE_SIDE * IMAGE_SIDE;

/// `1 → channels` convolution on `height × width` images with kernel
/// entries drawn from `N(0, 1/ksize²)`.
pub fn expansion_conv<R: Rng + ?Sized>(channels: usize, height: usize, width: usize, ksize: usize, rng: &mut R) -> Result<Conv2d> {
    if ksize % 2 == 0 {
        return Err(invalid("kernel size must be odd"));
    }
    let normal = Normal::new(0.0, 1.0 / ksize as f64).map_err(|_| invalid("bad std"))?;
    let kernel = (0..channels * ksize * ksize).map(|_| normal.sample(rng)).collect();
    Ok(Conv2d::with_kernel(channels, 1, height, width, ksize, kernel).expect("kernel length"))
}

/// Expansion, `n_layers` convolutional hidden layers and a `classes`-way
/// head on `height × width` single-channel images.
#[allow(clippy::too_many_arguments)]
pub fn conv_model<R: Rng + ?Sized>(
    variant: Variant,
    channels: usize,
    height: usize,
    width: usize,
    ksize: usize,
    n_layers: usize,
    h: f64,
    classes: usize,
    rng: &mut R,
) -> Result<Model> {
    let expand = expansion_conv(channels, height, width, ksize, rng)?;
    let net = NetworkParams::conv(variant, channels, height, width, ksize, n_layers, h, rng)?;
    let head = OutputHead::zeros(net.n(), classes)?;
    Model::with_expansion(expand, net, head)
}

/// The digit classifier: 28×28 inputs, eight channels, 3×3 kernels.
pub fn mnist_model<R: Rng + ?Sized>(variant: Variant, n_layers: usize, h: f64, rng: &mut R) -> Result<Model> {
    conv_model(variant, CHANNELS, IMAGE_SIDE, IMAGE_SIDE, KERNEL_SIZE, n_layers, h, DIGIT_CLASSES, rng)
}

/// Applies `conv` to every sample, giving the channel-major expanded
/// features the hidden block consumes.
pub fn mnist_pipeline(d: &Dataset, conv: &Conv2d) -> Result<Dataset> {
    if conv.in_channels() != 1 || d.n() != conv.in_dim() {
        return Err(Error::DimensionMismatch {
            op: "mnist_pipeline",
            expected: (d.len(), conv.in_dim()),
            found: (d.len(), d.n()),
        });
    }
    let out_n = conv.out_dim();
    let mut data = alloc::vec![0.0; d.len() * out_n];
    for (i, row) in data.chunks_mut(out_n).enumerate() {
        conv.apply(d.features.row(i), row);
    }
    Dataset::new(Matrix::new(d.len(), out_n, data)?, d.labels.clone(), d.classes, d.name.clone())
}
