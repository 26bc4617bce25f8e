use hamnet_core::data::{Benchmark, Dataset};
use hamnet_core::layers::{Architecture, Model, NetworkParams, OutputHead, Parameters, Variant};
use hamnet_core::training::{objective, objective_gradient, train_with, Sequential, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fresh_model(variant: Variant, n_layers: usize, h: f64, data: &Dataset, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = Architecture::new(variant, data.n()).unwrap();
    let net = NetworkParams::random(arch, n_layers, h, false, &mut rng).unwrap();
    Model::new(net, OutputHead::zeros(data.n(), data.classes).unwrap()).unwrap()
}

fn max_adjacent_drift(net: &NetworkParams) -> f64 {
    net.layers
        .windows(2)
        .map(|w| {
            let (a, b) = (w[0].weights[0].params(), w[1].weights[0].params());
            a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
        })
        .fold(0.0, f64::max)
}

#[test]
fn loss_falls_during_burn_in() {
    let (train, _) = Benchmark::DoubleMoons.train_test(5000, 4, 0).unwrap();
    let mut model = fresh_model(Variant::H1, 4, 0.02, &train, 0);
    let config = TrainConfig {
        epochs: 6,
        ..TrainConfig::default()
    };
    let h = train_with(&mut model, &train, &config, &Sequential, &mut |_, _| Ok(())).unwrap();
    let (first, later) = (h.epoch_mean_loss(0).unwrap(), h.epoch_mean_loss(5).unwrap());
    assert!(later < first, "epoch 5 loss {later} ≥ epoch 0 loss {first}");
}

#[test]
fn strong_smoothing_makes_layers_nearly_identical() {
    let (train, _) = Benchmark::DoubleMoons.train_test(5000, 4, 3).unwrap();
    let model = fresh_model(Variant::H1, 8, 0.02, &train, 3);
    let drift_at = |alpha: f64| {
        let mut m = model.clone();
        let config = TrainConfig {
            alpha,
            epochs: 10,
            lr_decay_gamma: 0.7,
            ..TrainConfig::default()
        };
        train_with(&mut m, &train, &config, &Sequential, &mut |_, _| Ok(())).unwrap();
        max_adjacent_drift(&m.net)
    };
    let initial = max_adjacent_drift(&model.net);
    let (strong, weak) = (drift_at(1e3), drift_at(0.0));
    eprintln!("drift: initial {initial:.3e} strong {strong:.3e} none {weak:.3e}");
    assert!(strong < 1e-2, "drift {strong}");
    assert!(weak > 1e-2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    /// A small plain gradient step lowers the full objective.
    #[test]
    fn small_gradient_step_descends(seed in any::<u64>(), vi in 0usize..6, n_layers in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = Benchmark::SwissRoll.train_test(40, 4, seed).unwrap().0;
        let mut model = fresh_model(Variant::ALL[vi], n_layers, 0.2, &data, seed);
        for l in &mut model.net.layers {
            l.bias.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
        model.head.w.as_mut_slice().iter_mut().for_each(|w| *w = rng.random_range(-1.0..1.0));
        let config = TrainConfig::default();
        let batch: Vec<usize> = (0..data.len()).collect();
        let before = objective(&model, &data, &batch, &config).unwrap();
        let g = objective_gradient(&model, &data, &batch, &config).unwrap().to_flat();
        prop_assume!(g.iter().map(|x| x * x).sum::<f64>() > 1e-16);
        let theta: Vec<f64> = model.to_flat().iter().zip(&g).map(|(t, d)| t - 1e-4 * d).collect();
        model.set_flat(&theta);
        let after = objective(&model, &data, &batch, &config).unwrap();
        prop_assert!(after < before, "{after} ≥ {before}");
    }
}
