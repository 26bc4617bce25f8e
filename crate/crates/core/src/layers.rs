//! Energy function, interconnection matrices and layer maps for the H₁, H₂,
//! MS₁, MS₂, MS₃ and fully connected networks, plus forward propagation with
//! activation caching.
//!
//! All hidden layers use `tanh`. The Hamiltonian layer is
//!
//! ```text
//! y_{j+1} = y_j + h · J · K_jᵀ · tanh(K_j y_j + b_j)
//! ```
//!
//! which is a forward-Euler step of `ẏ = J ∇H(y)` with
//! `H(y) = Σ log cosh(K y + b)`. The MS₁ and MS₃ layers are Verlet schemes on
//! a state split into halves `(y, z)`; their cached vectors store the
//! `(y, z)` halves concatenated.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Error, Result};
use crate::operator::{ChannelMix, Conv2d, LinearOperator, SkewMatrix, Weight};
use crate::tensor::{Matrix, Vector};

/// Network family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    H1,
    H2,
    MS1,
    MS2,
    MS3,
    /// Plain `y_{k+1} = tanh(K y_k + b)` baseline, not Hamiltonian.
    Fcnn,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::H1,
        Variant::H2,
        Variant::MS1,
        Variant::MS2,
        Variant::MS3,
        Variant::Fcnn,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Variant::H1 => 1,
            Variant::H2 => 2,
            Variant::MS1 => 3,
            Variant::MS2 => 4,
            Variant::MS3 => 5,
            Variant::Fcnn => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Variant> {
        Variant::ALL.into_iter().find(|v| v.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::H1 => "H1",
            Variant::H2 => "H2",
            Variant::MS1 => "MS1",
            Variant::MS2 => "MS2",
            Variant::MS3 => "MS3",
            Variant::Fcnn => "FCNN",
        }
    }

    /// H₁ and H₂ use an explicit interconnection matrix.
    pub fn is_hamiltonian(self) -> bool {
        matches!(self, Variant::H1 | Variant::H2)
    }

    /// MS₁ and MS₃ split the state into `(y, z)` halves.
    pub fn is_verlet(self) -> bool {
        matches!(self, Variant::MS1 | Variant::MS3)
    }

    pub fn requires_even(self) -> bool {
        matches!(self, Variant::H1 | Variant::MS1 | Variant::MS3)
    }

    /// Trainable scalars per layer for dense layers on an `nf`-dimensional
    /// state.
    pub fn params_per_layer(self, nf: usize) -> usize {
        match self {
            Variant::H1 | Variant::H2 | Variant::Fcnn => nf * nf + nf,
            Variant::MS1 => nf * nf / 4 + nf,
            Variant::MS2 => (nf * nf + nf) / 2,
            Variant::MS3 => nf * nf / 2 + nf,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Variant> {
        let up = s.trim().to_ascii_uppercase();
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == up)
            .ok_or_else(|| invalid(alloc::format!("unknown architecture '{s}'")))
    }
}

/// Variant plus state dimension (after feature augmentation).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub variant: Variant,
    pub n: usize,
}

impl Architecture {
    pub fn new(variant: Variant, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(invalid("state dimension must be positive"));
        }
        if variant.requires_even() && n % 2 != 0 {
            return Err(invalid(alloc::format!("{variant} needs an even state dimension, got {n}")));
        }
        Ok(Architecture { variant, n })
    }
}

/// `log(cosh(x))` without overflow: `|x| + log((1 + e^{−2|x|}) / 2)`.
pub fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + libm::log1p(libm::exp(-2.0 * a)) - core::f64::consts::LN_2
}

fn check_len(op: &'static str, got: usize, want: usize) -> Result<()> {
    if got == want {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            op,
            expected: (want, 1),
            found: (got, 1),
        })
    }
}

fn finite(op: &'static str, v: Vec<f64>) -> Result<Vector> {
    Vector::new(v).map_err(|_| Error::NonFinite { op })
}

fn affine(k: &(impl LinearOperator + ?Sized), y: &[f64], b: &[f64]) -> Vec<f64> {
    let mut a = vec![0.0; k.out_dim()];
    k.apply(y, &mut a);
    for (ai, bi) in a.iter_mut().zip(b) {
        *ai += bi;
    }
    a
}

/// `H(y) = Σᵢ log cosh((K y + b)ᵢ)`.
pub fn hamiltonian_energy(y: &[f64], k: &Matrix, b: &[f64]) -> Result<f64> {
    check_len("hamiltonian_energy", y.len(), k.cols())?;
    check_len("hamiltonian_energy", b.len(), k.rows())?;
    let e: f64 = affine(k, y, b).into_iter().map(log_cosh).sum();
    if e.is_finite() {
        Ok(e)
    } else {
        Err(Error::NonFinite { op: "hamiltonian_energy" })
    }
}

/// `∇H(y) = Kᵀ tanh(K y + b)`.
pub fn hamiltonian_gradient(y: &[f64], k: &Matrix, b: &[f64]) -> Result<Vector> {
    check_len("hamiltonian_gradient", y.len(), k.cols())?;
    check_len("hamiltonian_gradient", b.len(), k.rows())?;
    let t: Vec<f64> = affine(k, y, b).into_iter().map(libm::tanh).collect();
    k.mul_t_vec(&t)
}

/// Constant interconnection matrix of an H-network.
///
/// H₁: `[[0, I], [−I, 0]]` with `n/2` blocks. H₂: `+1` above the diagonal,
/// `−1` below. Any other variant is rejected.
pub fn make_interconnection(variant: Variant, n: usize) -> Result<Matrix> {
    match variant {
        Variant::H1 => {
            if n % 2 != 0 {
                return Err(invalid(alloc::format!("H1 interconnection needs even n, got {n}")));
            }
            let half = n / 2;
            Ok(Matrix::from_fn(n, n, |i, j| {
                if i < half && j == i + half {
                    1.0
                } else if i >= half && j + half == i {
                    -1.0
                } else {
                    0.0
                }
            }))
        }
        Variant::H2 => Ok(Matrix::from_fn(n, n, |i, j| match i.cmp(&j) {
            core::cmp::Ordering::Less => 1.0,
            core::cmp::Ordering::Greater => -1.0,
            core::cmp::Ordering::Equal => 0.0,
        })),
        other => Err(invalid(alloc::format!("{other} has no explicit interconnection matrix"))),
    }
}

// ---------------------------------------------------------------------------
// Layer kernels. `b` is always the bias already laid out in the
// pre-activation space. Each returns the next state and the pre-activation.

pub(crate) fn h_step(
    y: &[f64],
    k: &(impl LinearOperator + ?Sized),
    b: &[f64],
    j: &(impl LinearOperator + ?Sized),
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let a = affine(k, y, b);
    let t: Vec<f64> = a.iter().map(|x| libm::tanh(*x)).collect();
    let mut v = vec![0.0; k.in_dim()];
    k.apply_transpose(&t, &mut v);
    let mut w = vec![0.0; y.len()];
    j.apply(&v, &mut w);
    let next = y.iter().zip(&w).map(|(yi, wi)| yi + h * wi).collect();
    (next, a)
}

pub(crate) fn ms1_step(state: &[f64], k0: &(impl LinearOperator + ?Sized), b: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let half = state.len() / 2;
    let (y, z) = state.split_at(half);
    let (b1, b2) = b.split_at(half);
    let mut a1 = vec![0.0; half];
    k0.apply_transpose(y, &mut a1);
    a1.iter_mut().zip(b1).for_each(|(a, bb)| *a += bb);
    let z_next: Vec<f64> = z.iter().zip(&a1).map(|(zi, ai)| zi - h * libm::tanh(*ai)).collect();
    let a2 = affine(k0, &z_next, b2);
    let mut next: Vec<f64> = y.iter().zip(&a2).map(|(yi, ai)| yi + h * libm::tanh(*ai)).collect();
    next.extend_from_slice(&z_next);
    let mut pre = a1;
    pre.extend_from_slice(&a2);
    (next, pre)
}

pub(crate) fn ms2_step(y: &[f64], k: &(impl LinearOperator + ?Sized), b: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let a = affine(k, y, b);
    let next = y.iter().zip(&a).map(|(yi, ai)| yi + h * libm::tanh(*ai)).collect();
    (next, a)
}

pub(crate) fn ms3_step(
    state: &[f64],
    k1: &(impl LinearOperator + ?Sized),
    k2: &(impl LinearOperator + ?Sized),
    b: &[f64],
    h: f64,
) -> (Vec<f64>, Vec<f64>) {
    let half = state.len() / 2;
    let (y, z) = state.split_at(half);
    let (b1, b2) = b.split_at(half);
    let a1 = affine(k1, z, b1);
    let t1: Vec<f64> = a1.iter().map(|x| libm::tanh(*x)).collect();
    let mut v1 = vec![0.0; half];
    k1.apply_transpose(&t1, &mut v1);
    let y_next: Vec<f64> = y.iter().zip(&v1).map(|(yi, vi)| yi + h * vi).collect();
    let a2 = affine(k2, &y_next, b2);
    let t2: Vec<f64> = a2.iter().map(|x| libm::tanh(*x)).collect();
    let mut v2 = vec![0.0; half];
    k2.apply_transpose(&t2, &mut v2);
    let mut next = y_next;
    next.extend(z.iter().zip(&v2).map(|(zi, vi)| zi - h * vi));
    let mut pre = a1;
    pre.extend_from_slice(&a2);
    (next, pre)
}

pub(crate) fn fcnn_step(y: &[f64], k: &(impl LinearOperator + ?Sized), b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let a = affine(k, y, b);
    (a.iter().map(|x| libm::tanh(*x)).collect(), a)
}

/// H₁/H₂ layer: `y + h J Kᵀ tanh(K y + b)`.
pub fn forward_layer_h(y: &[f64], k: &Matrix, b: &[f64], j: &Matrix, h: f64) -> Result<Vector> {
    check_len("forward_layer_h", y.len(), k.cols())?;
    check_len("forward_layer_h", b.len(), k.rows())?;
    check_len("forward_layer_h", j.rows(), y.len())?;
    check_len("forward_layer_h", j.cols(), y.len())?;
    finite("forward_layer_h", h_step(y, k, b, j, h).0)
}

/// MS₁ layer: `z' = z − h tanh(K₀ᵀ y + b₁)`, then `y' = y + h tanh(K₀ z' + b₂)`.
pub fn forward_layer_ms1(y: &[f64], z: &[f64], k0: &Matrix, b1: &[f64], b2: &[f64], h: f64) -> Result<(Vector, Vector)> {
    check_len("forward_layer_ms1", y.len(), k0.rows())?;
    check_len("forward_layer_ms1", z.len(), k0.cols())?;
    check_len("forward_layer_ms1", b1.len(), k0.cols())?;
    check_len("forward_layer_ms1", b2.len(), k0.rows())?;
    if !k0.is_square() {
        return Err(Error::DimensionMismatch {
            op: "forward_layer_ms1",
            expected: (k0.rows(), k0.rows()),
            found: k0.shape(),
        });
    }
    let state = [y, z].concat();
    let b = [b1, b2].concat();
    let mut next = ms1_step(&state, k0, &b, h).0;
    let z_next = next.split_off(y.len());
    Ok((finite("forward_layer_ms1", next)?, finite("forward_layer_ms1", z_next)?))
}

/// MS₂ layer: `y + h tanh(K y + b)` with skew-symmetric `K`.
pub fn forward_layer_ms2(y: &[f64], k: &SkewMatrix, b: &[f64], h: f64) -> Result<Vector> {
    check_len("forward_layer_ms2", y.len(), k.dim())?;
    check_len("forward_layer_ms2", b.len(), k.dim())?;
    finite("forward_layer_ms2", ms2_step(y, k, b, h).0)
}

/// MS₃ layer: `y' = y + h K₁ᵀ tanh(K₁ z + b₁)`, then
/// `z' = z − h K₂ᵀ tanh(K₂ y' + b₂)`.
#[allow(clippy::too_many_arguments)]
pub fn forward_layer_ms3(
    y: &[f64],
    z: &[f64],
    k1: &Matrix,
    k2: &Matrix,
    b1: &[f64],
    b2: &[f64],
    h: f64,
) -> Result<(Vector, Vector)> {
    let half = y.len();
    for (got, want) in [
        (z.len(), half),
        (k1.rows(), half),
        (k1.cols(), half),
        (k2.rows(), half),
        (k2.cols(), half),
        (b1.len(), half),
        (b2.len(), half),
    ] {
        check_len("forward_layer_ms3", got, want)?;
    }
    let state = [y, z].concat();
    let b = [b1, b2].concat();
    let mut next = ms3_step(&state, k1, k2, &b, h).0;
    let z_next = next.split_off(half);
    Ok((finite("forward_layer_ms3", next)?, finite("forward_layer_ms3", z_next)?))
}

/// Fully connected baseline layer: `tanh(K y + b)`.
pub fn forward_layer_fcnn(y: &[f64], k: &Matrix, b: &[f64]) -> Result<Vector> {
    check_len("forward_layer_fcnn", y.len(), k.cols())?;
    check_len("forward_layer_fcnn", b.len(), k.rows())?;
    finite("forward_layer_fcnn", fcnn_step(y, k, b).0)
}

// ---------------------------------------------------------------------------

/// The interconnection `J` of an H-network: a dense matrix, or a channel
/// matrix repeated at every pixel of a feature map.
#[derive(Debug, Clone, PartialEq)]
pub enum Interconnection {
    Dense(Matrix),
    Channel(ChannelMix),
}

impl Interconnection {
    /// The small matrix that defines `J` (the full matrix when dense).
    pub fn core_matrix(&self) -> &Matrix {
        match self {
            Interconnection::Dense(m) => m,
            Interconnection::Channel(c) => &c.mix,
        }
    }
}

impl LinearOperator for Interconnection {
    fn in_dim(&self) -> usize {
        match self {
            Interconnection::Dense(m) => m.in_dim(),
            Interconnection::Channel(c) => c.in_dim(),
        }
    }
    fn out_dim(&self) -> usize {
        match self {
            Interconnection::Dense(m) => m.out_dim(),
            Interconnection::Channel(c) => c.out_dim(),
        }
    }
    fn apply(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Interconnection::Dense(m) => m.apply(x, out),
            Interconnection::Channel(c) => c.apply(x, out),
        }
    }
    fn apply_transpose(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Interconnection::Dense(m) => m.apply_transpose(x, out),
            Interconnection::Channel(c) => c.apply_transpose(x, out),
        }
    }
}

/// How a layer's bias vector maps onto the pre-activation space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BiasLayout {
    /// One bias per state coordinate.
    Dense,
    /// One bias per channel, shared by all `pixels` positions.
    PerChannel { pixels: usize },
}

impl BiasLayout {
    pub(crate) fn expand(self, b: &[f64]) -> Vec<f64> {
        match self {
            BiasLayout::Dense => b.to_vec(),
            BiasLayout::PerChannel { pixels } => b.iter().flat_map(|v| core::iter::repeat_n(*v, pixels)).collect(),
        }
    }

    /// `grad += Bᵀ adj` where `B` is the expansion above.
    pub(crate) fn reduce_into(self, adj: &[f64], grad: &mut [f64]) {
        match self {
            BiasLayout::Dense => grad.iter_mut().zip(adj).for_each(|(g, a)| *g += a),
            BiasLayout::PerChannel { pixels } => {
                for (c, g) in grad.iter_mut().enumerate() {
                    *g += adj[c * pixels..(c + 1) * pixels].iter().sum::<f64>();
                }
            }
        }
    }
}

/// Trainable parameters of one hidden layer.
///
/// `weights` holds one operator for H₁, H₂, MS₁ (`K₀`), MS₂ (skew `K`) and
/// FCNN, and two (`K₁`, `K₂`) for MS₃. For MS₁/MS₃ `bias` is `[b₁; b₂]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Vec<Weight>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        self.weights.iter().map(Weight::param_count).sum::<usize>() + self.bias.len()
    }

    pub fn zeros_like(&self) -> Layer {
        Layer {
            weights: self.weights.iter().map(Weight::zeros_like).collect(),
            bias: vec![0.0; self.bias.len()],
        }
    }
}

/// Visits every trainable tensor in a fixed order.
pub trait Parameters {
    fn for_each_tensor(&self, f: &mut dyn FnMut(&[f64]));
    fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&mut [f64]));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(&mut |t| n += t.len());
        n
    }

    fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.for_each_tensor(&mut |t| out.extend_from_slice(t));
        out
    }

    fn set_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        self.for_each_tensor_mut(&mut |t| {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        });
    }
}

impl Parameters for Layer {
    fn for_each_tensor(&self, f: &mut dyn FnMut(&[f64])) {
        for w in &self.weights {
            f(w.params());
        }
        f(&self.bias);
    }

    fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for w in &mut self.weights {
            f(w.params_mut());
        }
        f(&mut self.bias);
    }
}

/// Hidden-layer parameters `{K_j, b_j}`, step size and interconnection.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub arch: Architecture,
    pub n_layers: usize,
    pub h: f64,
    /// One entry per layer, or a single shared entry when `time_invariant`.
    pub layers: Vec<Layer>,
    pub time_invariant: bool,
    /// Present for H₁/H₂ only.
    pub j: Option<Interconnection>,
    pub bias_layout: BiasLayout,
}

fn dense_layer(arch: Architecture, mut sample: impl FnMut() -> f64) -> Layer {
    let n = arch.n;
    let half = n / 2;
    let mut mat = |r: usize, c: usize| Matrix::from_fn(r, c, |_, _| sample());
    let weights = match arch.variant {
        Variant::H1 | Variant::H2 | Variant::Fcnn => vec![Weight::Full(mat(n, n))],
        Variant::MS1 => vec![Weight::Full(mat(half, half))],
        Variant::MS3 => vec![Weight::Full(mat(half, half)), Weight::Full(mat(half, half))],
        Variant::MS2 => {
            let upper = (0..n * (n - 1) / 2).map(|_| sample()).collect();
            vec![Weight::Skew(SkewMatrix::from_upper(n, upper).expect("triangle length"))]
        }
    };
    Layer {
        weights,
        bias: vec![0.0; n],
    }
}

impl NetworkParams {
    fn with_layers(arch: Architecture, n_layers: usize, h: f64, time_invariant: bool, mut make: impl FnMut() -> Layer) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("step size h must be positive"));
        }
        let stored = if time_invariant { n_layers.min(1) } else { n_layers };
        let j = if arch.variant.is_hamiltonian() {
            Some(Interconnection::Dense(make_interconnection(arch.variant, arch.n)?))
        } else {
            None
        };
        Ok(NetworkParams {
            arch,
            n_layers,
            h,
            layers: (0..stored).map(|_| make()).collect(),
            time_invariant,
            j,
            bias_layout: BiasLayout::Dense,
        })
    }

    /// Dense network with every weight and bias zero.
    pub fn zeros(arch: Architecture, n_layers: usize, h: f64) -> Result<Self> {
        Self::with_layers(arch, n_layers, h, false, || dense_layer(arch, || 0.0))
    }

    /// Dense network with `K` entries drawn i.i.d. from `N(0, 1/n)` and zero
    /// biases. With `time_invariant`, all layers share one `(K, b)`.
    pub fn random<R: Rng + ?Sized>(arch: Architecture, n_layers: usize, h: f64, time_invariant: bool, rng: &mut R) -> Result<Self> {
        let normal = Normal::new(0.0, 1.0 / libm::sqrt(arch.n as f64)).map_err(|_| invalid("bad std"))?;
        Self::with_layers(arch, n_layers, h, time_invariant, || dense_layer(arch, || normal.sample(rng)))
    }

    /// Convolutional H-network on `channels × height × width` feature maps:
    /// every `K_j` is a `ksize×ksize` convolution, biases are per channel
    /// and `J` mixes channels identically at every pixel.
    #[allow(clippy::too_many_arguments)]
    pub fn conv<R: Rng + ?Sized>(
        variant: Variant,
        channels: usize,
        height: usize,
        width: usize,
        ksize: usize,
        n_layers: usize,
        h: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let pixels = height * width;
        let (kin, kout) = match variant {
            Variant::H1 | Variant::H2 => (channels, channels),
            Variant::MS1 if channels % 2 == 0 => (channels / 2, channels / 2),
            Variant::MS1 => return Err(invalid("MS1 needs an even channel count")),
            other => return Err(invalid(alloc::format!("{other} has no convolutional form"))),
        };
        let arch = Architecture::new(variant, channels * pixels)?;
        let std = 1.0 / libm::sqrt((kin * ksize * ksize) as f64);
        let normal = Normal::new(0.0, std).map_err(|_| invalid("bad std"))?;
        let mut make = || {
            let kernel = (0..kout * kin * ksize * ksize).map(|_| normal.sample(rng)).collect();
            Layer {
                weights: vec![Weight::Conv(
                    Conv2d::with_kernel(kout, kin, height, width, ksize, kernel).expect("kernel length"),
                )],
                bias: vec![0.0; channels],
            }
        };
        if !(h > 0.0 && h.is_finite()) {
            return Err(invalid("step size h must be positive"));
        }
        let j = if variant.is_hamiltonian() {
            Some(Interconnection::Channel(ChannelMix {
                mix: make_interconnection(variant, channels)?,
                pixels,
            }))
        } else {
            None
        };
        Ok(NetworkParams {
            arch,
            n_layers,
            h,
            layers: (0..n_layers).map(|_| make()).collect(),
            time_invariant: false,
            j,
            bias_layout: BiasLayout::PerChannel { pixels },
        })
    }

    pub fn n(&self) -> usize {
        self.arch.n
    }

    pub fn variant(&self) -> Variant {
        self.arch.variant
    }

    /// Parameters used by layer `j` (the shared ones when time-invariant).
    pub fn layer(&self, j: usize) -> &Layer {
        if self.time_invariant {
            &self.layers[0]
        } else {
            &self.layers[j]
        }
    }

    pub fn zeros_like(&self) -> NetworkParams {
        NetworkParams {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            ..self.clone()
        }
    }

    pub fn interconnection(&self) -> Option<&Interconnection> {
        self.j.as_ref()
    }

    /// Trainable scalars in one layer.
    pub fn params_per_layer(&self) -> usize {
        self.layers.first().map_or(0, Layer::param_count)
    }

    /// Applies layer `j` to `state`, returning the next state and the
    /// pre-activation.
    pub(crate) fn step(&self, j: usize, state: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let layer = self.layer(j);
        let b = self.bias_layout.expand(&layer.bias);
        let w = &layer.weights;
        match self.arch.variant {
            Variant::H1 | Variant::H2 => h_step(state, &w[0], &b, self.j.as_ref().expect("H-network without J"), self.h),
            Variant::MS1 => ms1_step(state, &w[0], &b, self.h),
            Variant::MS2 => ms2_step(state, &w[0], &b, self.h),
            Variant::MS3 => ms3_step(state, &w[0], &w[1], &b, self.h),
            Variant::Fcnn => fcnn_step(state, &w[0], &b),
        }
    }
}

impl Parameters for NetworkParams {
    fn for_each_tensor(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            l.for_each_tensor(f);
        }
    }
    fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            l.for_each_tensor_mut(f);
        }
    }
}

/// Cached forward pass: states `y_0 … y_N`, pre-activations `a_j` and
/// `D_j = tanh′(a_j)` stored as vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ForwardCache {
    pub states: Vec<Vector>,
    pub pre: Vec<Vector>,
    pub d: Vec<Vector>,
}

impl ForwardCache {
    pub fn layers(&self) -> usize {
        self.pre.len()
    }

    pub fn output(&self) -> &Vector {
        self.states.last().expect("cache always holds y_0")
    }
}

#[inline]
pub(crate) fn tanh_prime(a: f64) -> f64 {
    let t = libm::tanh(a);
    1.0 - t * t
}

/// Applies all `N` layers to `y0`, recording every intermediate quantity.
pub fn forward_network(y0: &[f64], params: &NetworkParams) -> Result<(Vector, ForwardCache)> {
    check_len("forward_network", y0.len(), params.n())?;
    let mut cache = ForwardCache {
        states: Vec::with_capacity(params.n_layers + 1),
        pre: Vec::with_capacity(params.n_layers),
        d: Vec::with_capacity(params.n_layers),
    };
    cache.states.push(Vector::from_slice(y0));
    for j in 0..params.n_layers {
        let (next, pre) = params.step(j, cache.states[j].as_ref());
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteState { layer: j });
        }
        cache.d.push(Vector::from(pre.iter().map(|a| tanh_prime(*a)).collect::<Vec<_>>()));
        cache.pre.push(Vector::from(pre));
        cache.states.push(Vector::from(next));
    }
    Ok((cache.output().clone(), cache))
}

/// Classifier `f_N(y_N) = σ_c(W y_N + μ)`.
///
/// Two classes use a single logistic output (`W` is `1×n`) and report
/// `(p, 1 − p)`; more classes use softmax over `M` logits.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputHead {
    pub w: Matrix,
    pub mu: Vec<f64>,
    pub classes: usize,
}

impl OutputHead {
    pub fn zeros(n: usize, classes: usize) -> Result<Self> {
        if classes < 2 {
            return Err(invalid("output head needs at least two classes"));
        }
        let rows = if classes == 2 { 1 } else { classes };
        Ok(OutputHead {
            w: Matrix::zeros(rows, n),
            mu: vec![0.0; rows],
            classes,
        })
    }

    pub fn n(&self) -> usize {
        self.w.cols()
    }

    pub fn logits(&self, y: &[f64]) -> Vec<f64> {
        let mut out = self.mu.clone();
        for (i, o) in out.iter_mut().enumerate() {
            *o += crate::tensor::dot(self.w.row(i), y);
        }
        out
    }

    /// Class probabilities from logits (logistic pair or stabilized softmax).
    pub fn probabilities_from_logits(&self, logits: &[f64]) -> Vec<f64> {
        if self.classes == 2 {
            let p = sigmoid(logits[0]);
            vec![p, 1.0 - p]
        } else {
            let m = logits.iter().fold(f64::NEG_INFINITY, |a, b| a.max(*b));
            let e: Vec<f64> = logits.iter().map(|l| libm::exp(l - m)).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(|v| v / s).collect()
        }
    }

    pub fn zeros_like(&self) -> OutputHead {
        OutputHead {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            mu: vec![0.0; self.mu.len()],
            classes: self.classes,
        }
    }
}

impl Parameters for OutputHead {
    fn for_each_tensor(&self, f: &mut dyn FnMut(&[f64])) {
        f(self.w.as_slice());
        f(&self.mu);
    }
    fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        f(self.w.as_mut_slice());
        f(&mut self.mu);
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Class probabilities for a final state.
pub fn output_head(y_n: &[f64], head: &OutputHead) -> Result<Vector> {
    check_len("output_head", y_n.len(), head.n())?;
    let p = head.probabilities_from_logits(&head.logits(y_n));
    finite("output_head", p)
}

/// Full classifier: optional input convolution, hidden layers and head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    /// Input expansion applied before the hidden layers (MNIST pipeline).
    pub expand: Option<Conv2d>,
    pub net: NetworkParams,
    pub head: OutputHead,
}

impl Model {
    pub fn new(net: NetworkParams, head: OutputHead) -> Result<Self> {
        check_len("Model::new", head.n(), net.n())?;
        Ok(Model { expand: None, net, head })
    }

    pub fn with_expansion(expand: Conv2d, net: NetworkParams, head: OutputHead) -> Result<Self> {
        check_len("Model::with_expansion", expand.out_dim(), net.n())?;
        check_len("Model::with_expansion", head.n(), net.n())?;
        Ok(Model {
            expand: Some(expand),
            net,
            head,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.expand.as_ref().map_or(self.net.n(), |e| e.in_dim())
    }

    /// Input of the hidden block for one raw feature vector.
    pub fn initial_state(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_len("Model::initial_state", x.len(), self.input_dim())?;
        Ok(match &self.expand {
            Some(e) => {
                let mut y0 = vec![0.0; e.out_dim()];
                e.apply(x, &mut y0);
                y0
            }
            None => x.to_vec(),
        })
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardCache> {
        let y0 = self.initial_state(x)?;
        Ok(forward_network(&y0, &self.net)?.1)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vector> {
        let cache = self.forward(x)?;
        output_head(cache.output(), &self.head)
    }

    /// Argmax class, ties to the lower index.
    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            expand: self.expand.as_ref().map(|e| {
                let (h, w) = e.image_shape();
                Conv2d::zeros(e.out_channels(), e.in_channels(), h, w, e.ksize())
            }),
            net: self.net.zeros_like(),
            head: self.head.zeros_like(),
        }
    }

    pub fn describe(&self) -> alloc::string::String {
        let mut s = alloc::format!(
            "{} N={} h={} n={} classes={}",
            self.net.variant(),
            self.net.n_layers,
            self.net.h,
            self.net.n(),
            self.head.classes
        );
        if self.net.time_invariant {
            s.push_str(" time-invariant");
        }
        if self.expand.is_some() {
            s.push_str(" conv");
        }
        s.to_string()
    }
}

/// Visits hidden parameters, then the head, then the input expansion.
impl Parameters for Model {
    fn for_each_tensor(&self, f: &mut dyn FnMut(&[f64])) {
        self.net.for_each_tensor(f);
        self.head.for_each_tensor(f);
        if let Some(e) = &self.expand {
            f(e.kernel());
        }
    }
    fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        self.net.for_each_tensor_mut(f);
        self.head.for_each_tensor_mut(f);
        if let Some(e) = &mut self.expand {
            f(e.kernel_mut());
        }
    }
}

/// Index of the largest entry, ties broken toward the lower index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in p.iter().enumerate() {
        if *v > p[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_cosh_values() {
        assert_eq!(log_cosh(0.0), 0.0);
        assert!((log_cosh(1.0) - 0.433_780_830_483_027_1).abs() < 1e-15);
        let big = log_cosh(1000.0);
        assert!(big.is_finite());
        assert!((big - (1000.0 - core::f64::consts::LN_2)).abs() < 1e-9);
    }

    #[test]
    fn energy_zero_at_origin() {
        let k = Matrix::from_rows(&[[1.0, 2.0], [3.0, -4.0]]);
        assert_eq!(hamiltonian_energy(&[0.0, 0.0], &k, &[0.0, 0.0]).unwrap(), 0.0);
        assert_eq!(hamiltonian_gradient(&[0.0, 0.0], &k, &[0.0, 0.0]).unwrap().as_ref(), &[0.0, 0.0]);
    }

    #[test]
    fn energy_dimension_mismatch() {
        let k = Matrix::identity(2);
        assert!(hamiltonian_energy(&[0.0; 3], &k, &[0.0; 2]).is_err());
        assert!(hamiltonian_gradient(&[0.0; 2], &k, &[0.0; 3]).is_err());
    }

    #[test]
    fn interconnections() {
        let j1 = make_interconnection(Variant::H1, 4).unwrap();
        assert_eq!(
            j1,
            Matrix::from_rows(&[
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
                [-1.0, 0.0, 0.0, 0.0],
                [0.0, -1.0, 0.0, 0.0]
            ])
        );
        let j2 = make_interconnection(Variant::H2, 3).unwrap();
        assert_eq!(j2, Matrix::from_rows(&[[0.0, 1.0, 1.0], [-1.0, 0.0, 1.0], [-1.0, -1.0, 0.0]]));
        assert!(make_interconnection(Variant::H1, 3).is_err());
        assert!(make_interconnection(Variant::MS2, 4).is_err());
        for n in 1..9 {
            assert_eq!(make_interconnection(Variant::H2, n).unwrap().skew_residual(), 0.0);
        }
    }

    #[test]
    fn odd_dimension_rejected_for_split_variants() {
        for v in [Variant::H1, Variant::MS1, Variant::MS3] {
            assert!(Architecture::new(v, 3).is_err());
        }
        assert!(Architecture::new(Variant::H2, 3).is_ok());
    }

    #[test]
    fn zero_weights_are_fixed_points() {
        let y = [0.3, -1.2, 0.7, 2.0];
        let j = make_interconnection(Variant::H1, 4).unwrap();
        assert_eq!(forward_layer_h(&y, &Matrix::zeros(4, 4), &[0.5; 4], &j, 0.1).unwrap().as_ref(), &y);
        let (a, b) = forward_layer_ms1(&y[..2], &y[2..], &Matrix::zeros(2, 2), &[0.0; 2], &[0.0; 2], 0.3).unwrap();
        assert_eq!((a.as_ref(), b.as_ref()), (&y[..2], &y[2..]));
        assert_eq!(forward_layer_ms2(&y, &SkewMatrix::zeros(4), &[0.0; 4], 0.3).unwrap().as_ref(), &y);
        let z = Matrix::zeros(2, 2);
        let (a, b) = forward_layer_ms3(&y[..2], &y[2..], &z, &z, &[0.4; 2], &[0.1; 2], 0.3).unwrap();
        assert_eq!((a.as_ref(), b.as_ref()), (&y[..2], &y[2..]));
    }

    #[test]
    fn h_layer_zero_preactivation_is_fixed_point() {
        // K y + b = 0 gives tanh(0) = 0
        let k = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]);
        let y = [0.4, -0.3];
        let b: Vec<f64> = k.mul_vec(&y).unwrap().iter().map(|v| -v).collect();
        let j = make_interconnection(Variant::H1, 2).unwrap();
        let out = forward_layer_h(&y, &k, &b, &j, 0.7).unwrap();
        assert!(out.iter().zip(&y).all(|(a, b)| (a - b).abs() < 1e-15));
    }

    #[test]
    fn zero_step_is_identity() {
        let k = Matrix::from_rows(&[[1.0, 2.0], [0.5, -1.0]]);
        let (a, b) = forward_layer_ms1(&[1.0, 2.0], &[3.0, 4.0], &k, &[0.1, 0.2], &[0.3, 0.4], 0.0).unwrap();
        assert_eq!((a.as_ref(), b.as_ref()), (&[1.0, 2.0][..], &[3.0, 4.0][..]));
        let s = SkewMatrix::from_upper(2, alloc::vec![1.5]).unwrap();
        assert_eq!(forward_layer_ms2(&[1.0, 2.0], &s, &[0.1, 0.2], 0.0).unwrap().as_ref(), &[1.0, 2.0]);
        let (a, b) = forward_layer_ms3(&[1.0], &[2.0], &Matrix::identity(1), &Matrix::identity(1), &[0.1], &[0.3], 0.0).unwrap();
        assert_eq!((a[0], b[0]), (1.0, 2.0));
    }

    #[test]
    fn network_with_no_layers_is_identity() {
        let arch = Architecture::new(Variant::H1, 4).unwrap();
        let p = NetworkParams::zeros(arch, 0, 0.1).unwrap();
        let (y, cache) = forward_network(&[1.0, 2.0, 3.0, 4.0], &p).unwrap();
        assert_eq!(y.as_ref(), &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(cache.layers(), 0);
    }

    #[test]
    fn forward_network_rejects_wrong_input() {
        let arch = Architecture::new(Variant::H2, 3).unwrap();
        let p = NetworkParams::zeros(arch, 2, 0.1).unwrap();
        assert!(forward_network(&[1.0, 2.0], &p).is_err());
    }

    #[test]
    fn non_finite_state_names_layer() {
        let arch = Architecture::new(Variant::Fcnn, 2).unwrap();
        let mut p = NetworkParams::zeros(arch, 3, 0.1).unwrap();
        p.layers[1].bias[0] = f64::NAN;
        assert_eq!(forward_network(&[0.0, 0.0], &p).unwrap_err(), Error::NonFiniteState { layer: 1 });
    }

    #[test]
    fn cached_d_in_unit_interval() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for v in Variant::ALL {
            let arch = Architecture::new(v, 6).unwrap();
            let p = NetworkParams::random(arch, 5, 0.3, false, &mut rng).unwrap();
            let (_, cache) = forward_network(&[0.5, -2.0, 3.0, 0.1, 10.0, -7.0], &p).unwrap();
            for d in &cache.d {
                assert!(d.iter().all(|x| *x > 0.0 && *x <= 1.0), "{v}: {d:?}");
            }
        }
    }

    #[test]
    fn param_counts_follow_table() {
        let nf = 4;
        for v in Variant::ALL {
            let arch = Architecture::new(v, nf).unwrap();
            let p = NetworkParams::zeros(arch, 3, 0.1).unwrap();
            assert_eq!(p.params_per_layer(), v.params_per_layer(nf), "{v}");
            assert_eq!(p.param_count(), 3 * v.params_per_layer(nf));
        }
        assert_eq!(Variant::H1.params_per_layer(4), 20);
        assert_eq!(Variant::MS1.params_per_layer(4), 8);
        assert_eq!(Variant::MS2.params_per_layer(4), 10);
        assert_eq!(Variant::MS3.params_per_layer(4), 12);
    }

    #[test]
    fn output_head_cases() {
        let head = OutputHead::zeros(3, 2).unwrap();
        assert_eq!(output_head(&[1.0, 2.0, 3.0], &head).unwrap().as_ref(), &[0.5, 0.5]);
        let head = OutputHead::zeros(3, 10).unwrap();
        let p = output_head(&[1.0, 2.0, 3.0], &head).unwrap();
        assert!(p.iter().all(|v| (v - 0.1).abs() < 1e-15));
        let mut head = OutputHead::zeros(1, 4).unwrap();
        head.mu[2] = 800.0;
        let p = output_head(&[0.0], &head).unwrap();
        assert!((p[2] - 1.0).abs() < 1e-6 && p.iter().all(|v| v.is_finite()));
        assert!(output_head(&[0.0; 2], &head).is_err());
        assert!(OutputHead::zeros(3, 1).is_err());
    }

    #[test]
    fn argmax_ties_to_lower_index() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1, 0.3, 0.3, 0.2]), 1);
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
            assert_eq!(Variant::from_tag(v.tag()), Some(v));
        }
        assert_eq!("fcnn".parse::<Variant>().unwrap(), Variant::Fcnn);
        assert!("H3".parse::<Variant>().is_err());
    }
}
