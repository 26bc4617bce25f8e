//! Backward-gradient stability tools.
//!
//! * products of layer Jacobians `∂y_N/∂y_{j+1}` and their spectral norms,
//! * the continuous sensitivity ODE of a time-invariant H-network,
//!   integrated with RK4 along a stored forward trajectory,
//! * the `D^{1/2}` similarity check showing `Kᵀ D K Jᵀ` has a purely
//!   imaginary, semisimple spectrum,
//! * singular-value envelopes of `exp(A t)`,
//! * gradient-norm tracking during training.
//!
//! Jacobians are conventional (`∂out_i/∂in_j`), so the continuous part of
//! an H-layer is `A = J Kᵀ D K`, the transpose of `Kᵀ D K Jᵀ`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::backprop::network_layer_jacobian;
use crate::data::{Benchmark, Dataset, BENCHMARK_STEP};
use crate::error::{invalid, Error, Result};
use crate::layers::{forward_network, tanh_prime, BiasLayout, Model, NetworkParams, OutputHead, Variant};
use crate::operator::LinearOperator;
use crate::tensor::{eigenvalues_qr, Matrix};
use crate::training::{evaluate_with, train_with, BatchExecutor, History, TrainConfig};

/// Absolute skew tolerance on `‖S + Sᵀ‖_F`, scaled up by `‖S‖_F` when that
/// exceeds one.
pub const SKEW_TOL: f64 = 1e-10;
pub const NORMALITY_TOL: f64 = 1e-9;
/// Bound on `max |Re λ|` from the QR oracle, scaled like [`SKEW_TOL`].
pub const EIGEN_RE_TOL: f64 = 1e-8;
/// Largest RK4 substep used by [`exp_norm_envelope`].
pub const ENVELOPE_MAX_STEP: f64 = 1e-2;

/// `Φ(T, T − t) = ∂y(T)/∂y(T − t)` at elapsed backward time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityMatrix {
    pub value: Matrix,
    pub horizon: f64,
    pub elapsed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradNormRecord {
    pub iteration: usize,
    pub layer: usize,
    pub norm: f64,
}

/// `‖∂y_N/∂y_{j+1}‖₂` per training iteration and tracked layer `j`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GradNormTrace {
    pub records: Vec<GradNormRecord>,
}

impl GradNormTrace {
    pub fn push(&mut self, iteration: usize, layer: usize, norm: f64) {
        self.records.push(GradNormRecord { iteration, layer, norm });
    }

    /// Norms of layer `j` in iteration order.
    pub fn layer_norms(&self, j: usize) -> Vec<f64> {
        self.records.iter().filter(|r| r.layer == j).map(|r| r.norm).collect()
    }

    /// Tracked layers in first-seen order.
    pub fn layers(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for r in &self.records {
            if !out.contains(&r.layer) {
                out.push(r.layer);
            }
        }
        out
    }

    /// Smallest and largest norm over all records.
    pub fn range(&self) -> Option<(f64, f64)> {
        let mut it = self.records.iter().map(|r| r.norm);
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// First iteration at which layer `j`'s norm is below `threshold`.
    pub fn first_below(&self, j: usize, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.layer == j && r.norm < threshold)
            .map(|r| r.iteration)
    }
}

// ---------------------------------------------------------------------------
// Discrete sensitivities

/// `∂y_N/∂y_{j+1} = M_{N−1} ⋯ M_{j+1}` for every `j ≥ from`, indexed by `j`
/// (entries below `from` are left empty). `j = N − 1` is the identity.
fn suffix_products(params: &NetworkParams, y0: &[f64], from: usize) -> Result<Vec<Option<Matrix>>> {
    let n_layers = params.n_layers;
    let (_, cache) = forward_network(y0, params)?;
    let mut out = vec![None; n_layers];
    let mut acc = Matrix::identity(params.n());
    for j in (from..n_layers).rev() {
        out[j] = Some(acc.clone());
        if j > from {
            let m = network_layer_jacobian(params, j, cache.states[j].as_ref())?;
            acc = acc.matmul(&m)?;
        }
    }
    Ok(out)
}

/// Spectral norms of `∂y_N/∂y_{j+1}` at input `y0` for each requested `j`.
pub fn backward_sensitivity_norms(params: &NetworkParams, y0: &[f64], layers: &[usize]) -> Result<Vec<(usize, f64)>> {
    let n_layers = params.n_layers;
    if let Some(&bad) = layers.iter().find(|&&j| j >= n_layers) {
        return Err(invalid(format!("layer {bad} out of range for {n_layers} layers")));
    }
    let Some(&from) = layers.iter().min() else {
        return Ok(Vec::new());
    };
    let products = suffix_products(params, y0, from)?;
    layers
        .iter()
        .map(|&j| {
            let p = products[j].as_ref().expect("computed for j ≥ from");
            let norm = if j + 1 == n_layers { 1.0 } else { p.spectral_norm()? };
            Ok((j, norm))
        })
        .collect()
}

/// Full product `∂y_N/∂y_0 = M_{N−1} ⋯ M_0`.
pub fn network_jacobian_product(params: &NetworkParams, y0: &[f64]) -> Result<Matrix> {
    let (_, cache) = forward_network(y0, params)?;
    let mut acc = Matrix::identity(params.n());
    for j in (0..params.n_layers).rev() {
        acc = acc.matmul(&network_layer_jacobian(params, j, cache.states[j].as_ref())?)?;
    }
    Ok(acc)
}

/// Mean over `samples` of the per-sample norms from
/// [`backward_sensitivity_norms`].
pub fn mean_sensitivity_norms<E: BatchExecutor>(
    model: &Model,
    data: &Dataset,
    samples: &[usize],
    layers: &[usize],
    exec: &E,
) -> Result<Vec<(usize, f64)>> {
    if samples.is_empty() {
        return Err(invalid("no audit samples"));
    }
    let per_sample = exec.map_indexed(samples.len(), |k| {
        let y0 = model.initial_state(data.sample(samples[k]).0)?;
        backward_sensitivity_norms(&model.net, &y0, layers)
    });
    let mut sums = vec![0.0; layers.len()];
    for r in per_sample {
        for (s, (_, v)) in sums.iter_mut().zip(r?) {
            *s += v;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    Ok(layers.iter().zip(sums).map(|(&j, s)| (j, s * inv)).collect())
}

// ---------------------------------------------------------------------------
// Continuous sensitivity ODE

struct FrozenH<'a> {
    k: Matrix,
    b: &'a [f64],
    j: Matrix,
}

impl FrozenH<'_> {
    fn from_params(params: &NetworkParams) -> Result<FrozenH<'_>> {
        if !params.variant().is_hamiltonian() || params.bias_layout != BiasLayout::Dense {
            return Err(invalid("the sensitivity ODE needs a dense H1/H2 network"));
        }
        if !(params.time_invariant || params.layers.len() == 1) {
            return Err(invalid("the sensitivity ODE needs constant (K, b)"));
        }
        let layer = params.layer(0);
        Ok(FrozenH {
            k: layer.weights[0].to_dense(),
            b: &layer.bias,
            j: params.interconnection().expect("H-network has J").core_matrix().clone(),
        })
    }

    fn pre(&self, y: &[f64]) -> Vec<f64> {
        let mut a = self.k.mul_vec(y).expect("conformable").into_inner();
        a.iter_mut().zip(self.b).for_each(|(x, b)| *x += b);
        a
    }

    /// `J Kᵀ tanh(K y + b)`.
    fn field(&self, y: &[f64]) -> Vec<f64> {
        let t: Vec<f64> = self.pre(y).iter().map(|a| libm::tanh(*a)).collect();
        let kt = self.k.mul_t_vec(&t).expect("conformable");
        self.j.mul_vec(&kt).expect("conformable").into_inner()
    }

    /// `J Kᵀ D K` with `D = diag(tanh′(K y + b))`.
    fn jacobian(&self, y: &[f64]) -> Matrix {
        let d: Vec<f64> = self.pre(y).iter().map(|a| tanh_prime(*a)).collect();
        let dk = Matrix::from_fn(self.k.rows(), self.k.cols(), |i, c| d[i] * self.k.get(i, c));
        let ktdk = self.k.transpose().matmul(&dk).expect("conformable");
        self.j.matmul(&ktdk).expect("conformable")
    }
}

fn rk4_vec(f: impl Fn(&[f64]) -> Vec<f64>, y: &[f64], dt: f64) -> Vec<f64> {
    let shift = |base: &[f64], k: &[f64], s: f64| -> Vec<f64> { base.iter().zip(k).map(|(a, b)| a + s * b).collect() };
    let k1 = f(y);
    let k2 = f(&shift(y, &k1, dt / 2.0));
    let k3 = f(&shift(y, &k2, dt / 2.0));
    let k4 = f(&shift(y, &k3, dt));
    (0..y.len())
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

fn combine(terms: &[(f64, &Matrix)]) -> Matrix {
    let (r, c) = terms[0].1.shape();
    Matrix::from_fn(r, c, |i, j| terms.iter().map(|(s, m)| s * m.get(i, j)).sum())
}

fn ensure_finite(m: &Matrix, op: &'static str) -> Result<()> {
    if m.as_slice().iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

/// Integrates the backward sensitivity `Φ(T, T − t)` of a time-invariant
/// H-network started at `y0`, over `t ∈ [0, T]` in `steps` RK4 steps.
///
/// The forward trajectory is first integrated with RK4 on a grid of half
/// steps, so every stage of the backward RK4 step `dΦ/dt = Φ · A(y(T − t))`
/// reads a stored state. Returns `steps + 1` checkpoints starting at `Φ = I`.
pub fn integrate_backward_gradient_ode(params: &NetworkParams, y0: &[f64], horizon: f64, steps: usize) -> Result<Vec<SensitivityMatrix>> {
    if steps < 10 {
        return Err(invalid("the sensitivity ODE needs at least 10 steps"));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon must be positive"));
    }
    if y0.len() != params.n() {
        return Err(Error::DimensionMismatch {
            op: "integrate_backward_gradient_ode",
            expected: (params.n(), 1),
            found: (y0.len(), 1),
        });
    }
    let sys = FrozenH::from_params(params)?;
    let tau = horizon / steps as f64;
    let mut traj = Vec::with_capacity(2 * steps + 1);
    traj.push(y0.to_vec());
    for i in 0..2 * steps {
        let next = rk4_vec(|y| sys.field(y), &traj[i], tau / 2.0);
        if !next.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteState { layer: i });
        }
        traj.push(next);
    }
    let mut phi = Matrix::identity(params.n());
    let mut out = Vec::with_capacity(steps + 1);
    out.push(SensitivityMatrix {
        value: phi.clone(),
        horizon,
        elapsed: 0.0,
    });
    for k in 0..steps {
        let u = 2 * (steps - k);
        let (a0, a1, a2) = (sys.jacobian(&traj[u]), sys.jacobian(&traj[u - 1]), sys.jacobian(&traj[u - 2]));
        let k1 = phi.matmul(&a0)?;
        let k2 = combine(&[(1.0, &phi), (tau / 2.0, &k1)]).matmul(&a1)?;
        let k3 = combine(&[(1.0, &phi), (tau / 2.0, &k2)]).matmul(&a1)?;
        let k4 = combine(&[(1.0, &phi), (tau, &k3)]).matmul(&a2)?;
        phi = combine(&[(1.0, &phi), (tau / 6.0, &k1), (tau / 3.0, &k2), (tau / 3.0, &k3), (tau / 6.0, &k4)]);
        ensure_finite(&phi, "integrate_backward_gradient_ode")?;
        out.push(SensitivityMatrix {
            value: phi.clone(),
            horizon,
            elapsed: (k + 1) as f64 * tau,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RichardsonRow {
    pub layers: usize,
    pub h: f64,
    /// `‖M_{N−1} ⋯ M_0 − Φ(T, 0)‖_F`.
    pub error: f64,
    /// `error / previous row's error`; about 1/2 for first-order convergence.
    pub ratio: Option<f64>,
}

/// Compares the discrete Jacobian product of `N`-layer Euler networks with
/// `h = T/N` and shared `(K, b)` against a reference `Φ(T, 0)` computed
/// with `reference_steps` RK4 steps.
pub fn richardson_study(
    params: &NetworkParams,
    y0: &[f64],
    horizon: f64,
    layer_counts: &[usize],
    reference_steps: usize,
) -> Result<Vec<RichardsonRow>> {
    let reference = integrate_backward_gradient_ode(params, y0, horizon, reference_steps)?
        .pop()
        .expect("at least one checkpoint")
        .value;
    let mut rows: Vec<RichardsonRow> = Vec::with_capacity(layer_counts.len());
    for &n_layers in layer_counts {
        if n_layers == 0 {
            return Err(invalid("layer counts must be positive"));
        }
        let net = NetworkParams {
            n_layers,
            h: horizon / n_layers as f64,
            layers: vec![params.layer(0).clone()],
            time_invariant: true,
            ..params.clone()
        };
        let error = network_jacobian_product(&net, y0)?.sub(&reference)?.frobenius_norm();
        let ratio = rows.last().map(|r| error / r.error);
        rows.push(RichardsonRow {
            layers: n_layers,
            h: net.h,
            error,
            ratio,
        });
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Spectral checks

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumReport {
    /// `‖S + Sᵀ‖_F` for `S = D^{1/2} K Jᵀ Kᵀ D^{1/2}`.
    pub skew_residual: f64,
    /// `‖S + Sᵀ‖_F / ‖S‖_F` (zero when `S = 0`).
    pub relative_skew_residual: f64,
    /// `‖S Sᵀ − Sᵀ S‖_F`.
    pub normality_residual: f64,
    /// `max |Re λ|` over the QR eigenvalues of `Kᵀ D K Jᵀ`.
    pub max_re_lambda: f64,
    pub s_norm: f64,
    pub passed: bool,
}

/// `Kᵀ D K Jᵀ` with `D = diag(tanh′(K y + b))`.
pub fn continuous_jacobian(k: &Matrix, b: &[f64], y: &[f64], j: &Matrix) -> Result<Matrix> {
    let d = activation_slopes(k, b, y)?;
    let dk = Matrix::from_fn(k.rows(), k.cols(), |i, c| d[i] * k.get(i, c));
    k.transpose().matmul(&dk)?.matmul(&j.transpose())
}

fn activation_slopes(k: &Matrix, b: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    let mut a = k.mul_vec(y)?.into_inner();
    if b.len() != a.len() {
        return Err(Error::DimensionMismatch {
            op: "activation_slopes",
            expected: (a.len(), 1),
            found: (b.len(), 1),
        });
    }
    a.iter_mut().zip(b).for_each(|(x, bb)| *x = tanh_prime(*x + bb));
    Ok(a)
}

/// Checks that `S = D^{1/2} K Jᵀ Kᵀ D^{1/2}` is skew-symmetric (hence
/// normal), which makes the similar matrix `Kᵀ D K Jᵀ` diagonalizable with
/// purely imaginary eigenvalues; also reports the QR oracle's real parts.
pub fn check_marginal_stability_spectrum(k: &Matrix, b: &[f64], y: &[f64], j: &Matrix) -> Result<SpectrumReport> {
    let n = y.len();
    if j.shape() != (n, n) || k.cols() != n {
        return Err(Error::DimensionMismatch {
            op: "check_marginal_stability_spectrum",
            expected: (n, n),
            found: j.shape(),
        });
    }
    let d = activation_slopes(k, b, y)?;
    let ds = Matrix::from_fn(k.rows(), k.cols(), |i, c| libm::sqrt(d[i]) * k.get(i, c));
    let s = ds.matmul(&j.transpose())?.matmul(&ds.transpose())?;
    let st = s.transpose();
    let s_norm = s.frobenius_norm();
    let skew_residual = s.add(&st)?.frobenius_norm();
    let normality_residual = s.matmul(&st)?.sub(&st.matmul(&s)?)?.frobenius_norm();
    let a = continuous_jacobian(k, b, y, j)?;
    let max_re_lambda = eigenvalues_qr(&a)?.iter().map(|l| l.re.abs()).fold(0.0, f64::max);
    let scale = s_norm.max(1.0);
    let passed = skew_residual < SKEW_TOL * scale
        && normality_residual < NORMALITY_TOL * scale * scale
        && max_re_lambda < EIGEN_RE_TOL * scale;
    Ok(SpectrumReport {
        skew_residual,
        relative_skew_residual: if s_norm > 0.0 { skew_residual / s_norm } else { 0.0 },
        normality_residual,
        max_re_lambda,
        s_norm,
        passed,
    })
}

/// Spectrum check of every layer of a dense H-network along the forward
/// pass from `y0`.
pub fn audit_network_spectrum(params: &NetworkParams, y0: &[f64]) -> Result<Vec<SpectrumReport>> {
    if !params.variant().is_hamiltonian() || params.bias_layout != BiasLayout::Dense {
        return Err(invalid("spectrum audits need a dense H1/H2 network"));
    }
    let j = params.interconnection().expect("H-network has J").core_matrix();
    let (_, cache) = forward_network(y0, params)?;
    (0..params.n_layers)
        .map(|l| {
            let layer = params.layer(l);
            check_marginal_stability_spectrum(&layer.weights[0].to_dense(), &layer.bias, cache.states[l].as_ref(), j)
        })
        .collect()
}

/// Largest and smallest singular value of `Φ(t) = exp(A t)` at each time in
/// the ascending, non-negative `t_grid`, by RK4 on `dΦ/dt = A Φ`.
pub fn exp_norm_envelope(a: &Matrix, t_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if !a.is_square() {
        return Err(Error::DimensionMismatch {
            op: "exp_norm_envelope",
            expected: (a.rows(), a.rows()),
            found: a.shape(),
        });
    }
    ensure_finite(a, "exp_norm_envelope")?;
    let mut phi = Matrix::identity(a.rows());
    let mut t = 0.0;
    let mut out = Vec::with_capacity(t_grid.len());
    for &target in t_grid {
        if !(target >= t && target.is_finite()) {
            return Err(invalid("time grid must be non-negative and ascending"));
        }
        let span = target - t;
        let substeps = libm::ceil(span / ENVELOPE_MAX_STEP) as usize;
        if substeps > 0 {
            let dt = span / substeps as f64;
            for _ in 0..substeps {
                let k1 = a.matmul(&phi)?;
                let k2 = a.matmul(&combine(&[(1.0, &phi), (dt / 2.0, &k1)]))?;
                let k3 = a.matmul(&combine(&[(1.0, &phi), (dt / 2.0, &k2)]))?;
                let k4 = a.matmul(&combine(&[(1.0, &phi), (dt, &k3)]))?;
                phi = combine(&[(1.0, &phi), (dt / 6.0, &k1), (dt / 3.0, &k2), (dt / 3.0, &k3), (dt / 6.0, &k4)]);
                ensure_finite(&phi, "exp_norm_envelope")?;
            }
        }
        t = target;
        let s_max = phi.spectral_norm()?;
        let s_min = 1.0 / phi.inverse()?.spectral_norm()?;
        out.push((s_max, s_min));
    }
    Ok(out)
}

/// `cond(P^{1/2}) = sqrt(λ_max(P) / λ_min(P))` for symmetric positive
/// definite `P`. With `A = P Jᵀ` and skew `J`, `exp(A t)` is similar to an
/// orthogonal matrix through `P^{1/2}`, so every singular value of `exp(A t)`
/// lies in `[1/cond, cond]`.
pub fn envelope_bound(p: &Matrix) -> Result<f64> {
    let ev = p.symmetric_eigenvalues()?;
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) {
        return Err(invalid(format!("P is not positive definite (smallest eigenvalue {lo:e})")));
    }
    Ok(libm::sqrt(hi / lo))
}

// ---------------------------------------------------------------------------
// Gradient norms during training

/// Training setup for tracking `‖∂y_N/∂y_{j+1}‖₂` while a network learns a
/// 2-D benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct GradNormProtocol {
    pub benchmark: Benchmark,
    /// Samples in each of the train and test sets.
    pub samples: usize,
    pub features: usize,
    pub variant: Variant,
    pub n_layers: usize,
    pub h: f64,
    pub time_invariant: bool,
    pub tracked: Vec<usize>,
    /// Norms are averaged over the first `audit_samples` training samples.
    pub audit_samples: usize,
    pub train: TrainConfig,
}

/// `0, 10, 20, …` below `n_layers`.
pub fn every_tenth_layer(n_layers: usize) -> Vec<usize> {
    (0..n_layers).step_by(10).collect()
}

impl GradNormProtocol {
    /// 64-layer H₁ network on double moons for 24 epochs of 40 batches.
    pub fn hamiltonian(time_invariant: bool) -> Self {
        GradNormProtocol {
            benchmark: Benchmark::DoubleMoons,
            samples: 5000,
            features: 4,
            variant: Variant::H1,
            n_layers: 64,
            h: BENCHMARK_STEP,
            time_invariant,
            tracked: every_tenth_layer(64),
            audit_samples: 125,
            train: TrainConfig {
                epochs: 24,
                ..TrainConfig::default()
            },
        }
    }

    /// 32-layer `tanh` fully connected network, head weight decay `2e-4`.
    pub fn fcnn() -> Self {
        GradNormProtocol {
            variant: Variant::Fcnn,
            n_layers: 32,
            h: 1.0,
            time_invariant: false,
            tracked: every_tenth_layer(32),
            train: TrainConfig {
                alpha_c: 2e-4,
                ..TrainConfig::default()
            },
            ..GradNormProtocol::hamiltonian(false)
        }
    }
}

/// Result of a gradient-norm run.
#[derive(Debug, Clone)]
pub struct GradNormStudy {
    pub trace: GradNormTrace,
    pub history: History,
    pub test_accuracy: f64,
    pub model: Model,
}

/// Trains per `protocol`, recording the audit-set mean of every tracked
/// norm after each iteration, tagged with that iteration's index.
pub fn run_gradnorm_study<E: BatchExecutor>(protocol: &GradNormProtocol, exec: &E) -> Result<GradNormStudy> {
    let (train, test) = protocol
        .benchmark
        .train_test(protocol.samples, protocol.features, protocol.train.seed)?;
    let arch = crate::layers::Architecture::new(protocol.variant, protocol.features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(protocol.train.seed);
    let net = NetworkParams::random(arch, protocol.n_layers, protocol.h, protocol.time_invariant, &mut rng)?;
    let mut model = Model::new(net, OutputHead::zeros(protocol.features, train.classes)?)?;
    let audit: Vec<usize> = (0..protocol.audit_samples.min(train.len())).collect();
    let mut trace = GradNormTrace::default();
    let history = train_with(&mut model, &train, &protocol.train, exec, &mut |rec, m| {
        for (j, norm) in mean_sensitivity_norms(m, &train, &audit, &protocol.tracked, exec)? {
            trace.push(rec.iter, j, norm);
        }
        Ok(())
    })?;
    let test_accuracy = evaluate_with(&model, &test, exec)?;
    Ok(GradNormStudy {
        trace,
        history,
        test_accuracy,
        model,
    })
}

/// 32-layer fully connected baseline on double moons under `config`.
pub fn fcnn_vanishing_demo<E: BatchExecutor>(config: &TrainConfig, exec: &E) -> Result<GradNormStudy> {
    let protocol = GradNormProtocol {
        train: config.clone(),
        ..GradNormProtocol::fcnn()
    };
    run_gradnorm_study(&protocol, exec)
}
