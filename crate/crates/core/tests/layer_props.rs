use hamnet_core::layers::{
    forward_layer_h, forward_layer_ms2, forward_network, hamiltonian_gradient, make_interconnection, Architecture,
    NetworkParams, Parameters, Variant,
};
use hamnet_core::operator::SkewMatrix;
use hamnet_core::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn uniform(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()
}

fn random_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::new(r, c, uniform(r * c, rng)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    /// `∇Hᵀ J ∇H = 0`: the flow never moves along the energy gradient.
    #[test]
    fn energy_flow_is_orthogonal(seed in any::<u64>(), half in 1usize..=4, h2 in any::<bool>()) {
        let n = 2 * half;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let variant = if h2 { Variant::H2 } else { Variant::H1 };
        let j = make_interconnection(variant, n).unwrap();
        let k = random_matrix(n, n, &mut rng);
        let b = uniform(n, &mut rng);
        let y = uniform(n, &mut rng);
        let g = hamiltonian_gradient(&y, &k, &b).unwrap();
        let jg = j.mul_vec(g.as_ref()).unwrap();
        prop_assert!(g.dot(jg.as_ref()).abs() < 1e-10);
    }

    /// With skew `K` and `J = −K⁻¹`, `J Kᵀ = I` and the H layer becomes the
    /// MS₂ layer.
    #[test]
    fn h_layer_reduces_to_ms2(seed in any::<u64>(), half in 1usize..=3, h in 0.01f64..0.5) {
        let n = 2 * half;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random_matrix(n, n, &mut rng);
        let k = a.sub(&a.transpose()).unwrap();
        let Ok(k_inv) = k.inverse() else { return Ok(()) };
        // Keep well-conditioned draws so the reference inverse is accurate.
        prop_assume!(k.spectral_norm().unwrap() * k_inv.spectral_norm().unwrap() < 50.0);
        let j = k_inv.scale(-1.0).unwrap();
        let b = uniform(n, &mut rng);
        let y = uniform(n, &mut rng);
        let via_h = forward_layer_h(&y, &k, &b, &j, h).unwrap();
        let via_ms2 = forward_layer_ms2(&y, &SkewMatrix::from_matrix_upper(&k), &b, h).unwrap();
        for (p, q) in via_h.as_ref().iter().zip(via_ms2.as_ref()) {
            prop_assert!((p - q).abs() < 1e-12, "{p} vs {q}");
        }
    }

    #[test]
    fn cached_slopes_lie_in_unit_interval(seed in any::<u64>(), vi in 0usize..6, layers in 1usize..6) {
        let variant = Variant::ALL[vi];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arch = Architecture::new(variant, 4).unwrap();
        let mut net = NetworkParams::random(arch, layers, 0.3, false, &mut rng).unwrap();
        for l in &mut net.layers {
            l.bias = uniform(l.bias.len(), &mut rng);
        }
        let (_, cache) = forward_network(&uniform(4, &mut rng), &net).unwrap();
        for d in &cache.d {
            for v in d.as_ref() {
                prop_assert!(*v > 0.0 && *v <= 1.0, "{v}");
            }
        }
    }

    /// Counting the scalars the optimizer sees reproduces the closed forms.
    #[test]
    fn trainable_scalars_per_layer(half in 1usize..=8, vi in 0usize..6) {
        let n = 2 * half;
        let variant = Variant::ALL[vi];
        let expected = match variant {
            Variant::H1 | Variant::H2 | Variant::Fcnn => n * n + n,
            Variant::MS1 => n * n / 4 + n,
            Variant::MS2 => (n * n + n) / 2,
            Variant::MS3 => n * n / 2 + n,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(half as u64);
        let net = NetworkParams::random(Architecture::new(variant, n).unwrap(), 3, 0.1, false, &mut rng).unwrap();
        prop_assert_eq!(net.param_count(), 3 * expected);
        prop_assert_eq!(net.params_per_layer(), expected);
    }
}
