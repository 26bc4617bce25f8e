//! Hand-written reverse-mode gradients through the output head, every layer
//! map and the weight-smoothness regularizer, plus analytic layer Jacobians
//! and a finite-difference checker.
//!
//! Jacobians here are conventional (`M_{ij} = ∂out_i/∂in_j`). Adjoints are
//! propagated as `ḡ ← M_jᵀ ḡ`. The column-gradient form `∂f/∂y = Kᵀ D K Jᵀ`
//! is the transpose of the continuous part `J Kᵀ D K` used here.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::layers::{tanh_prime, BiasLayout, ForwardCache, Layer, Model, NetworkParams, OutputHead, Parameters, Variant};
use crate::operator::{LinearOperator, Weight};
use crate::tensor::{axpy, dot, Matrix};
use crate::training::cross_entropy;

/// Gradients shaped like a [`Model`]: per stored layer `{dK, db}`, then
/// `(dW, dμ)`, then the input convolution kernel if present.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
    pub head: OutputHead,
    pub expand: Option<Vec<f64>>,
}

impl ParamGrads {
    pub fn zeros_for(model: &Model) -> Self {
        ParamGrads {
            layers: model.net.layers.iter().map(Layer::zeros_like).collect(),
            head: model.head.zeros_like(),
            expand: model.expand.as_ref().map(|e| vec![0.0; e.kernel().len()]),
        }
    }

    pub fn zeros_for_parts(params: &NetworkParams, head: &OutputHead) -> Self {
        ParamGrads {
            layers: params.layers.iter().map(Layer::zeros_like).collect(),
            head: head.zeros_like(),
            expand: None,
        }
    }

    /// `∂/∂K` of stored layer `j` (first weight operator).
    pub fn dk(&self, j: usize) -> &[f64] {
        self.layers[j].weights[0].params()
    }

    pub fn db(&self, j: usize) -> &[f64] {
        &self.layers[j].bias
    }

    pub fn add_assign(&mut self, other: &ParamGrads) {
        let mut flat = other.to_flat().into_iter();
        self.for_each_tensor_mut(&mut |t| {
            for v in t.iter_mut() {
                *v += flat.next().expect("congruent gradients");
            }
        });
    }

    pub fn zero(&mut self) {
        self.for_each_tensor_mut(&mut |t| t.fill(0.0));
    }

    pub fn scale(&mut self, s: f64) {
        self.for_each_tensor_mut(&mut |t| t.iter_mut().for_each(|v| *v *= s));
    }

    pub fn is_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_tensor(&mut |t| ok &= t.iter().all(|v| v.is_finite()));
        ok
    }

    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        self.for_each_tensor(&mut |t| s += dot(t, t));
        libm::sqrt(s)
    }
}

impl Parameters for ParamGrads {
    fn for_each_tensor(&self, f: &mut dyn FnMut(&[f64])) {
        for l in &self.layers {
            for w in &l.weights {
                f(w.params());
            }
            f(&l.bias);
        }
        self.head.for_each_tensor(f);
        if let Some(e) = &self.expand {
            f(e);
        }
    }
    fn for_each_tensor_mut(&mut self, f: &mut dyn FnMut(&mut [f64])) {
        for l in &mut self.layers {
            for w in &mut l.weights {
                f(w.params_mut());
            }
            f(&mut l.bias);
        }
        self.head.for_each_tensor_mut(f);
        if let Some(e) = &mut self.expand {
            f(e);
        }
    }
}

/// Cross-entropy of the head's prediction at `y_n`. Adds `∂L/∂(W, μ)` to
/// `grad` and returns the loss with `∂L/∂y_N`.
pub fn head_backward(y_n: &[f64], head: &OutputHead, label: usize, grad: &mut OutputHead) -> Result<(f64, Vec<f64>)> {
    if label >= head.classes {
        return Err(Error::LabelOutOfRange {
            label,
            classes: head.classes,
        });
    }
    if y_n.len() != head.n() {
        return Err(Error::DimensionMismatch {
            op: "head_backward",
            expected: (head.n(), 1),
            found: (y_n.len(), 1),
        });
    }
    let logits = head.logits(y_n);
    let probs = head.probabilities_from_logits(&logits);
    let loss = cross_entropy(&probs, label)?;
    let delta: Vec<f64> = if head.classes == 2 {
        // probs = (σ(s), 1 − σ(s))
        vec![probs[0] - if label == 0 { 1.0 } else { 0.0 }]
    } else {
        probs
            .iter()
            .enumerate()
            .map(|(i, p)| p - if i == label { 1.0 } else { 0.0 })
            .collect()
    };
    let cols = head.n();
    let mut g = vec![0.0; cols];
    for (i, d) in delta.iter().enumerate() {
        axpy(*d, y_n, &mut grad.w.as_mut_slice()[i * cols..(i + 1) * cols]);
        grad.mu[i] += d;
        axpy(*d, head.w.row(i), &mut g);
    }
    Ok((loss, g))
}

fn hadamard(d: &[f64], v: &[f64], s: f64) -> Vec<f64> {
    d.iter().zip(v).map(|(a, b)| s * a * b).collect()
}

fn apply(op: &(impl LinearOperator + ?Sized), x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; op.out_dim()];
    op.apply(x, &mut out);
    out
}

fn apply_t(op: &(impl LinearOperator + ?Sized), x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; op.in_dim()];
    op.apply_transpose(x, &mut out);
    out
}

/// Pulls the adjoint `g_next` of `y_{j+1}` back through layer `j`, adding the
/// parameter gradients to `grad`. Returns the adjoint of `y_j`.
fn layer_backward(params: &NetworkParams, j: usize, cache: &ForwardCache, g_next: &[f64], grad: &mut Layer) -> Vec<f64> {
    let layer = params.layer(j);
    let h = params.h;
    let w = &layer.weights;
    let y = &cache.states[j][..];
    let d = &cache.d[j][..];
    let pre = &cache.pre[j][..];
    let layout = params.bias_layout;
    let (gw, gb) = (&mut grad.weights, &mut grad.bias);
    match params.variant() {
        Variant::H1 | Variant::H2 => {
            let jm = params.interconnection().expect("H-network without J");
            let u: Vec<f64> = apply_t(jm, g_next).into_iter().map(|v| h * v).collect();
            let t: Vec<f64> = pre.iter().map(|a| libm::tanh(*a)).collect();
            w[0].accumulate_outer(gw[0].params_mut(), &t, &u);
            let delta = hadamard(d, &apply(&w[0], &u), 1.0);
            w[0].accumulate_outer(gw[0].params_mut(), &delta, y);
            layout.reduce_into(&delta, gb);
            let mut g = g_next.to_vec();
            axpy(1.0, &apply_t(&w[0], &delta), &mut g);
            g
        }
        Variant::Fcnn => {
            let delta = hadamard(d, g_next, 1.0);
            w[0].accumulate_outer(gw[0].params_mut(), &delta, y);
            layout.reduce_into(&delta, gb);
            apply_t(&w[0], &delta)
        }
        Variant::MS2 => {
            let delta = hadamard(d, g_next, h);
            w[0].accumulate_outer(gw[0].params_mut(), &delta, y);
            layout.reduce_into(&delta, gb);
            let mut g = g_next.to_vec();
            axpy(1.0, &apply_t(&w[0], &delta), &mut g);
            g
        }
        Variant::MS1 => {
            let half = y.len() / 2;
            let (y_h, _) = y.split_at(half);
            let z_next = &cache.states[j + 1][half..];
            let (gy_next, gz_next) = g_next.split_at(half);
            let (d1, d2) = d.split_at(half);
            let k0 = &w[0];
            // y' = y + h tanh(K₀ z' + b₂)
            let delta2 = hadamard(d2, gy_next, h);
            k0.accumulate_outer(gw[0].params_mut(), &delta2, z_next);
            let mut gz = gz_next.to_vec();
            axpy(1.0, &apply_t(k0, &delta2), &mut gz);
            // z' = z − h tanh(K₀ᵀ y + b₁)
            let delta1 = hadamard(d1, &gz, -h);
            k0.accumulate_outer(gw[0].params_mut(), y_h, &delta1);
            let mut gy = gy_next.to_vec();
            axpy(1.0, &apply(k0, &delta1), &mut gy);
            let mut delta = delta1;
            delta.extend_from_slice(&delta2);
            layout.reduce_into(&delta, gb);
            gy.extend_from_slice(&gz);
            gy
        }
        Variant::MS3 => {
            let half = y.len() / 2;
            let z = &y[half..];
            let y_next = &cache.states[j + 1][..half];
            let (gy_next, gz_next) = g_next.split_at(half);
            let (d1, d2) = d.split_at(half);
            let (pre1, pre2) = pre.split_at(half);
            let (k1, k2) = (&w[0], &w[1]);
            // z' = z − h K₂ᵀ tanh(K₂ y' + b₂)
            let u2: Vec<f64> = gz_next.iter().map(|v| -h * v).collect();
            let t2: Vec<f64> = pre2.iter().map(|a| libm::tanh(*a)).collect();
            k2.accumulate_outer(gw[1].params_mut(), &t2, &u2);
            let delta2 = hadamard(d2, &apply(k2, &u2), 1.0);
            k2.accumulate_outer(gw[1].params_mut(), &delta2, y_next);
            let mut gy = gy_next.to_vec();
            axpy(1.0, &apply_t(k2, &delta2), &mut gy);
            // y' = y + h K₁ᵀ tanh(K₁ z + b₁)
            let u1: Vec<f64> = gy.iter().map(|v| h * v).collect();
            let t1: Vec<f64> = pre1.iter().map(|a| libm::tanh(*a)).collect();
            k1.accumulate_outer(gw[0].params_mut(), &t1, &u1);
            let delta1 = hadamard(d1, &apply(k1, &u1), 1.0);
            k1.accumulate_outer(gw[0].params_mut(), &delta1, z);
            let mut gz = gz_next.to_vec();
            axpy(1.0, &apply_t(k1, &delta1), &mut gz);
            let mut delta = delta1;
            delta.extend_from_slice(&delta2);
            layout.reduce_into(&delta, gb);
            gy.extend_from_slice(&gz);
            gy
        }
    }
}

fn check_cache(cache: &ForwardCache, params: &NetworkParams) -> Result<()> {
    let ok = cache.layers() == params.n_layers
        && cache.states.len() == params.n_layers + 1
        && cache.d.len() == params.n_layers
        && cache.states.iter().all(|s| s.len() == params.n());
    if ok {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            op: "backward (stale cache)",
            expected: (params.n_layers, params.n()),
            found: (cache.layers(), cache.states.first().map_or(0, |s| s.len())),
        })
    }
}

/// Adjoint `∂L/∂y_j` propagated from `g_n = ∂L/∂y_N` down to layer `stop`,
/// accumulating hidden-layer gradients into `grads`.
fn hidden_backward(params: &NetworkParams, cache: &ForwardCache, g_n: Vec<f64>, grads: &mut [Layer]) -> Vec<f64> {
    let mut g = g_n;
    for j in (0..params.n_layers).rev() {
        let slot = if params.time_invariant { 0 } else { j };
        g = layer_backward(params, j, cache, &g, &mut grads[slot]);
    }
    g
}

/// Adds the gradient of `cross_entropy(model(x), label)` to `grads` and
/// returns the loss. `cache` must come from `model.forward(x)`.
pub fn backward_model(model: &Model, x: &[f64], cache: &ForwardCache, label: usize, grads: &mut ParamGrads) -> Result<f64> {
    check_cache(cache, &model.net)?;
    let (loss, g_n) = head_backward(cache.output(), &model.head, label, &mut grads.head)?;
    let g0 = hidden_backward(&model.net, cache, g_n, &mut grads.layers);
    if let (Some(e), Some(ge)) = (&model.expand, grads.expand.as_mut()) {
        e.accumulate_outer(ge, &g0, x);
    }
    Ok(loss)
}

/// Exact gradient of the single-sample cross-entropy loss with respect to
/// every hidden and head parameter.
pub fn backward(cache: &ForwardCache, params: &NetworkParams, head: &OutputHead, label: usize) -> Result<(ParamGrads, f64)> {
    check_cache(cache, params)?;
    let mut grads = ParamGrads::zeros_for_parts(params, head);
    let (loss, g_n) = head_backward(cache.output(), head, label, &mut grads.head)?;
    hidden_backward(params, cache, g_n, &mut grads.layers);
    Ok((grads, loss))
}

/// `∂L/∂y_0` for one sample, without parameter gradients.
pub fn input_adjoint(params: &NetworkParams, head: &OutputHead, cache: &ForwardCache, label: usize) -> Result<Vec<f64>> {
    check_cache(cache, params)?;
    let mut scratch_head = head.zeros_like();
    let mut scratch: Vec<Layer> = params.layers.iter().map(Layer::zeros_like).collect();
    let (_, g_n) = head_backward(cache.output(), head, label, &mut scratch_head)?;
    Ok(hidden_backward(params, cache, g_n, &mut scratch))
}

/// `(h/2) Σ_{j≥1} ‖θ_j − θ_{j−1}‖²` summed over every stored layer tensor
/// (`R_K + R_b`). Zero for a time-invariant network.
pub fn regularizer_value(params: &NetworkParams) -> f64 {
    if params.time_invariant {
        return 0.0;
    }
    let mut total = 0.0;
    for pair in params.layers.windows(2) {
        let mut prev = Vec::new();
        pair[0].for_each_tensor(&mut |t| prev.push(t.to_vec()));
        let mut i = 0;
        pair[1].for_each_tensor(&mut |t| {
            total += t.iter().zip(&prev[i]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            i += 1;
        });
    }
    0.5 * params.h * total
}

/// Adds `∂/∂θ_j [α (R_K + R_b)] = α h (2θ_j − θ_{j−1} − θ_{j+1})`, with the
/// missing neighbour dropped at either end, to `grads`.
pub fn regularizer_grads(params: &NetworkParams, alpha: f64, grads: &mut [Layer]) {
    if params.time_invariant || alpha == 0.0 {
        return;
    }
    let flat: Vec<Vec<f64>> = params
        .layers
        .iter()
        .map(|l| {
            let mut v = Vec::new();
            l.for_each_tensor(&mut |t| v.extend_from_slice(t));
            v
        })
        .collect();
    let n = flat.len();
    let c = alpha * params.h;
    for (j, g) in grads.iter_mut().enumerate() {
        let mut k = 0;
        g.for_each_tensor_mut(&mut |t| {
            for v in t.iter_mut() {
                let cur = flat[j][k];
                if j > 0 {
                    *v += c * (cur - flat[j - 1][k]);
                }
                if j + 1 < n {
                    *v += c * (cur - flat[j + 1][k]);
                }
                k += 1;
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Jacobians

fn dense_from_weight(w: &Weight) -> Matrix {
    w.to_dense()
}

/// `A ↦ D A` for diagonal `D` given as a vector.
fn diag_mul(d: &[f64], a: &Matrix) -> Matrix {
    Matrix::from_fn(a.rows(), a.cols(), |i, j| d[i] * a.get(i, j))
}

fn mm(a: &Matrix, b: &Matrix) -> Matrix {
    a.matmul(b).expect("conformable by construction")
}

fn block2(a: &Matrix, b: &Matrix, c: &Matrix, d: &Matrix) -> Matrix {
    let (p, q) = (a.rows(), a.cols());
    Matrix::from_fn(p + c.rows(), q + b.cols(), |i, j| match (i < p, j < q) {
        (true, true) => a.get(i, j),
        (true, false) => b.get(i, j - q),
        (false, true) => c.get(i - p, j),
        (false, false) => d.get(i - p, j - q),
    })
}

fn tanh_prime_vec(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| tanh_prime(*x)).collect()
}

fn affine(k: &Matrix, y: &[f64], b: &[f64]) -> Vec<f64> {
    let mut a = k.mul_vec(y).expect("conformable").into_inner();
    a.iter_mut().zip(b).for_each(|(x, bb)| *x += bb);
    a
}

fn check_square(op: &'static str, m: &Matrix, n: usize) -> Result<()> {
    if m.shape() == (n, n) {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            op,
            expected: (n, n),
            found: m.shape(),
        })
    }
}

/// Conventional Jacobian `I + h J Kᵀ D K` of the H₁/H₂ layer map, with
/// `D = diag(tanh′(K y + b))`.
///
/// In column-gradient notation the same object is written
/// `∂y_{j+1}/∂y_j = I + h Kᵀ D K Jᵀ`, which is the transpose of this matrix.
pub fn layer_jacobian(y: &[f64], k: &Matrix, b: &[f64], j: &Matrix, h: f64) -> Result<Matrix> {
    let n = y.len();
    check_square("layer_jacobian", j, n)?;
    if k.cols() != n || b.len() != k.rows() {
        return Err(Error::DimensionMismatch {
            op: "layer_jacobian",
            expected: (b.len(), n),
            found: k.shape(),
        });
    }
    let d = tanh_prime_vec(&affine(k, y, b));
    let ktdk = mm(&k.transpose(), &diag_mul(&d, k));
    let a = mm(j, &ktdk);
    Ok(Matrix::identity(n).add(&a.scale(h)?)?)
}

/// Conventional Jacobian of an MS₁ or MS₃ layer on `state = (y, z)`: the
/// product of the two substep Jacobians, second substep on the left.
pub fn layer_jacobian_verlet(state: &[f64], layer: &Layer, variant: Variant, h: f64) -> Result<Matrix> {
    let n = state.len();
    let half = n / 2;
    if layer.bias.len() != n || n % 2 != 0 {
        return Err(Error::DimensionMismatch {
            op: "layer_jacobian_verlet",
            expected: (n, 1),
            found: (layer.bias.len(), 1),
        });
    }
    let (y, z) = state.split_at(half);
    let (b1, b2) = layer.bias.split_at(half);
    let eye = Matrix::identity(half);
    let zero = Matrix::zeros(half, half);
    match variant {
        Variant::MS1 => {
            let k0 = dense_from_weight(&layer.weights[0]);
            check_square("layer_jacobian_verlet", &k0, half)?;
            let k0t = k0.transpose();
            let d1 = tanh_prime_vec(&affine(&k0t, y, b1));
            let z_next: Vec<f64> = z
                .iter()
                .zip(affine(&k0t, y, b1))
                .map(|(zi, a)| zi - h * libm::tanh(a))
                .collect();
            let d2 = tanh_prime_vec(&affine(&k0, &z_next, b2));
            let s1 = block2(&eye, &zero, &diag_mul(&d1, &k0t).scale(-h)?, &eye);
            let s2 = block2(&eye, &diag_mul(&d2, &k0).scale(h)?, &zero, &eye);
            Ok(mm(&s2, &s1))
        }
        Variant::MS3 => {
            let k1 = dense_from_weight(&layer.weights[0]);
            let k2 = dense_from_weight(&layer.weights[1]);
            check_square("layer_jacobian_verlet", &k1, half)?;
            check_square("layer_jacobian_verlet", &k2, half)?;
            let a1 = affine(&k1, z, b1);
            let d1 = tanh_prime_vec(&a1);
            let t1: Vec<f64> = a1.iter().map(|a| libm::tanh(*a)).collect();
            let v1 = k1.mul_t_vec(&t1)?;
            let y_next: Vec<f64> = y.iter().zip(v1.iter()).map(|(a, b)| a + h * b).collect();
            let d2 = tanh_prime_vec(&affine(&k2, &y_next, b2));
            let p1 = mm(&k1.transpose(), &diag_mul(&d1, &k1));
            let p2 = mm(&k2.transpose(), &diag_mul(&d2, &k2));
            let s1 = block2(&eye, &p1.scale(h)?, &zero, &eye);
            let s2 = block2(&eye, &zero, &p2.scale(-h)?, &eye);
            Ok(mm(&s2, &s1))
        }
        other => Err(crate::error::invalid(alloc::format!("{other} is not a Verlet variant"))),
    }
}

/// Jacobian of the continuous vector field underlying an MS₁/MS₃ layer:
/// MS₁ `[[0, D₂K₀], [−D₁K₀ᵀ, 0]]`, MS₃ `[[0, K₁ᵀD₁K₁], [−K₂ᵀD₂K₂, 0]]`, with
/// every `D` evaluated at the current state.
pub fn verlet_field_jacobian(state: &[f64], layer: &Layer, variant: Variant) -> Result<Matrix> {
    let n = state.len();
    let half = n / 2;
    let (y, z) = state.split_at(half);
    let (b1, b2) = layer.bias.split_at(half);
    let zero = Matrix::zeros(half, half);
    match variant {
        Variant::MS1 => {
            let k0 = dense_from_weight(&layer.weights[0]);
            let k0t = k0.transpose();
            let d1 = tanh_prime_vec(&affine(&k0t, y, b1));
            let d2 = tanh_prime_vec(&affine(&k0, z, b2));
            Ok(block2(&zero, &diag_mul(&d2, &k0), &diag_mul(&d1, &k0t).scale(-1.0)?, &zero))
        }
        Variant::MS3 => {
            let k1 = dense_from_weight(&layer.weights[0]);
            let k2 = dense_from_weight(&layer.weights[1]);
            let d1 = tanh_prime_vec(&affine(&k1, z, b1));
            let d2 = tanh_prime_vec(&affine(&k2, y, b2));
            let p1 = mm(&k1.transpose(), &diag_mul(&d1, &k1));
            let p2 = mm(&k2.transpose(), &diag_mul(&d2, &k2));
            Ok(block2(&zero, &p1, &p2.scale(-1.0)?, &zero))
        }
        other => Err(crate::error::invalid(alloc::format!("{other} is not a Verlet variant"))),
    }
}

/// Conventional Jacobian of layer `j` of a dense network at `state`.
pub fn network_layer_jacobian(params: &NetworkParams, j: usize, state: &[f64]) -> Result<Matrix> {
    if params.bias_layout != BiasLayout::Dense {
        return Err(crate::error::invalid("dense Jacobians need a dense network"));
    }
    let layer = params.layer(j);
    let n = params.n();
    match params.variant() {
        Variant::H1 | Variant::H2 => {
            let jm = params.interconnection().expect("H-network without J").core_matrix();
            layer_jacobian(state, &dense_from_weight(&layer.weights[0]), &layer.bias, jm, params.h)
        }
        Variant::MS1 | Variant::MS3 => layer_jacobian_verlet(state, layer, params.variant(), params.h),
        Variant::MS2 => {
            let k = dense_from_weight(&layer.weights[0]);
            let d = tanh_prime_vec(&affine(&k, state, &layer.bias));
            Ok(Matrix::identity(n).add(&diag_mul(&d, &k).scale(params.h)?)?)
        }
        Variant::Fcnn => {
            let k = dense_from_weight(&layer.weights[0]);
            let d = tanh_prime_vec(&affine(&k, state, &layer.bias));
            Ok(diag_mul(&d, &k))
        }
    }
}

// ---------------------------------------------------------------------------
// Finite differences

/// Worst coordinate found by [`finite_difference_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// Flat index (in [`Parameters`] order) of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Flat indices whose error reached `rel_tol`.
    pub failures_at: Vec<usize>,
}

impl FdReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Penalty weights included in the checked scalar.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FdOptions {
    pub eps: f64,
    pub alpha: f64,
    pub alpha_c: f64,
    /// Differences below this are treated as exact agreement.
    pub abs_floor: f64,
    pub rel_tol: f64,
}

impl Default for FdOptions {
    fn default() -> Self {
        FdOptions {
            eps: 1e-5,
            alpha: 0.0,
            alpha_c: 0.0,
            abs_floor: 1e-8,
            rel_tol: 1e-5,
        }
    }
}

/// `L(model(x), label) + α_c (‖W‖² + ‖μ‖²) + α (R_K + R_b)`.
pub fn sample_objective(model: &Model, x: &[f64], label: usize, alpha: f64, alpha_c: f64) -> Result<f64> {
    let probs = model.predict_proba(x)?;
    let ce = cross_entropy(&probs, label)?;
    Ok(ce + alpha_c * head_penalty(&model.head) + alpha * regularizer_value(&model.net))
}

/// `‖W‖²_F + ‖μ‖²`.
pub fn head_penalty(head: &OutputHead) -> f64 {
    dot(head.w.as_slice(), head.w.as_slice()) + dot(&head.mu, &head.mu)
}

/// Analytic gradient of [`sample_objective`].
pub fn sample_objective_grad(model: &Model, x: &[f64], label: usize, alpha: f64, alpha_c: f64) -> Result<ParamGrads> {
    let cache = model.forward(x)?;
    let mut grads = ParamGrads::zeros_for(model);
    backward_model(model, x, &cache, label, &mut grads)?;
    add_penalty_grads(model, alpha, alpha_c, &mut grads);
    Ok(grads)
}

/// Adds the head weight-decay and smoothness-regularizer gradients.
pub fn add_penalty_grads(model: &Model, alpha: f64, alpha_c: f64, grads: &mut ParamGrads) {
    if alpha_c != 0.0 {
        axpy(2.0 * alpha_c, model.head.w.as_slice(), grads.head.w.as_mut_slice());
        axpy(2.0 * alpha_c, &model.head.mu, &mut grads.head.mu);
    }
    regularizer_grads(&model.net, alpha, &mut grads.layers);
}

fn coordinate_error(a: f64, n: f64, floor: f64) -> f64 {
    let diff = (a - n).abs();
    if diff <= floor {
        0.0
    } else {
        diff / a.abs().max(n.abs())
    }
}

/// Perturbs every trainable scalar by `±eps` and compares the central
/// difference of [`sample_objective`] against the analytic gradient.
pub fn finite_difference_check(model: &Model, x: &[f64], label: usize, opts: FdOptions) -> Result<FdReport> {
    if !(1e-8..=1e-3).contains(&opts.eps) {
        return Err(crate::error::invalid("finite-difference step must lie in [1e-8, 1e-3]"));
    }
    let analytic = sample_objective_grad(model, x, label, opts.alpha, opts.alpha_c)?.to_flat();
    let base = model.to_flat();
    let mut probe = model.clone();
    let mut report = FdReport {
        max_rel_err: 0.0,
        worst_index: 0,
        analytic: analytic.first().copied().unwrap_or(0.0),
        numeric: 0.0,
        checked: 0,
        failures_at: Vec::new(),
    };
    let mut theta = base.clone();
    for i in 0..base.len() {
        theta[i] = base[i] + opts.eps;
        probe.set_flat(&theta);
        let fp = sample_objective(&probe, x, label, opts.alpha, opts.alpha_c)?;
        theta[i] = base[i] - opts.eps;
        probe.set_flat(&theta);
        let fm = sample_objective(&probe, x, label, opts.alpha, opts.alpha_c)?;
        theta[i] = base[i];
        let numeric = (fp - fm) / (2.0 * opts.eps);
        let err = coordinate_error(analytic[i], numeric, opts.abs_floor);
        if err >= opts.rel_tol {
            report.failures_at.push(i);
        }
        if err > report.max_rel_err || i == 0 {
            report.max_rel_err = report.max_rel_err.max(err);
            report.worst_index = i;
            report.analytic = analytic[i];
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}
