use hamnet_core::data::{decode_mnist, encode_mnist, gen_double_moons, gen_swiss_roll, Dataset};
use hamnet_core::Matrix;
use proptest::prelude::*;

fn pixel_dataset() -> impl Strategy<Value = (Dataset, usize, usize)> {
    (0usize..12, 1usize..6, 1usize..6).prop_flat_map(|(count, rows, cols)| {
        (
            prop::collection::vec(any::<u8>(), count * rows * cols),
            prop::collection::vec(0usize..10, count),
        )
            .prop_map(move |(px, labels)| {
                let features = Matrix::new(count, rows * cols, px.iter().map(|b| f64::from(*b) / 255.0).collect()).unwrap();
                (Dataset::new(features, labels, 10, "digits".into()).unwrap(), rows, cols)
            })
    })
}

fn moments(d: &Dataset) -> Vec<(f64, f64)> {
    (0..d.n())
        .map(|c| {
            let col: Vec<f64> = (0..d.len()).map(|i| d.features.get(i, c)).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / col.len() as f64;
            (mean, var)
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn idx_round_trip_is_exact((d, rows, cols) in pixel_dataset()) {
        let (images, labels) = encode_mnist(&d, rows, cols).unwrap();
        let back = decode_mnist(&images, &labels, None).unwrap();
        prop_assert_eq!(&back.features, &d.features);
        prop_assert_eq!(&back.labels, &d.labels);
        let (images2, labels2) = encode_mnist(&back, rows, cols).unwrap();
        prop_assert_eq!(images2, images);
        prop_assert_eq!(labels2, labels);
    }

    #[test]
    fn generators_are_seeded(seed in any::<u64>(), half in 2usize..50, roll in any::<bool>()) {
        let gen = |s: u64| if roll { gen_swiss_roll(2 * half, 0.05, s) } else { gen_double_moons(2 * half, 0.1, s) }.unwrap();
        let a = gen(seed);
        prop_assert_eq!(&a, &gen(seed));
        prop_assert_ne!(a.features, gen(seed.wrapping_add(1)).features);
    }

    #[test]
    fn generated_sets_are_standardized(seed in any::<u64>(), half in 2usize..200, roll in any::<bool>()) {
        let d = if roll { gen_swiss_roll(2 * half, 0.02, seed) } else { gen_double_moons(2 * half, 0.1, seed) }.unwrap();
        for (mean, var) in moments(&d) {
            prop_assert!(mean.abs() < 1e-9, "mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-9, "var {var}");
        }
        prop_assert_eq!(d.class_counts(), vec![half, half]);
    }
}
