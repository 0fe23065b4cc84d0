//! Randomized invariants across module boundaries.

use proptest::prelude::*;

use wxcnn::data::{
    build_synthetic_dataset, decode_dataset, encode_dataset, split, EventKind, Label,
};
use wxcnn::hyperopt::{
    expected_improvement, gp_fit, gp_fit_with, gp_posterior, propose_next, DimKind, Dimension,
    GpHyper, HyperSpace,
};
use wxcnn::layers::{cross_entropy_loss, logistic, one_hot};
use wxcnn::network::{preset_config, EvalReport, Network};
use wxcnn::numerics::init_uniform_scaled;
use wxcnn::{Rng, Tensor};

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 32,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn reshape_round_trips(dims in proptest::collection::vec(1usize..6, 1..4), seed in any::<u64>()) {
        let n: usize = dims.iter().product();
        let mut rng = Rng::new(seed);
        let t = Tensor::from_vec(&dims, (0..n).map(|_| rng.normal()).collect()).unwrap();
        let flat = t.reshape(&[n]).unwrap();
        prop_assert_eq!(flat.data(), t.data());
        prop_assert_eq!(flat.reshape(&dims).unwrap(), t);
    }

    #[test]
    fn init_respects_its_bound(fan_in in 1usize..500, fan_out in 1usize..500, seed in any::<u64>()) {
        let t = init_uniform_scaled(&[64], fan_in, fan_out, &mut Rng::new(seed)).unwrap();
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        prop_assert!(t.data().iter().all(|v| v.abs() <= limit));
    }

    #[test]
    fn logistic_outputs_and_loss_stay_in_range(z in proptest::collection::vec(-30.0f64..30.0, 2), class in 0usize..2) {
        let probs = logistic(&Tensor::from_vec(&[2], z).unwrap());
        prop_assert!(probs.data().iter().all(|&p| p > 0.0 && p < 1.0));
        let (loss, _) = cross_entropy_loss(&probs, &one_hot(class, 2)).unwrap();
        prop_assert!(loss >= 0.0 && loss.is_finite());
    }

    #[test]
    fn confusion_columns_sum_to_one(counts in proptest::array::uniform4(0usize..50)) {
        let c = [[counts[0], counts[1]], [counts[2], counts[3]]];
        let r = EvalReport::from_counts(c, 0.0);
        for t in 0..2 {
            if c[0][t] + c[1][t] > 0 {
                prop_assert!((r.confusion[0][t] + r.confusion[1][t] - 1.0).abs() <= 1e-9);
            }
        }
        let total: usize = counts.iter().sum();
        if total > 0 {
            prop_assert_eq!(r.accuracy, (c[0][0] + c[1][1]) as f64 / total as f64);
        }
    }

    #[test]
    fn space_round_trips_and_snaps(u in proptest::collection::vec(0.0f64..=1.0, 3)) {
        let space = HyperSpace::new(vec![
            Dimension::new("a", DimKind::Continuous, -2.0, 5.0),
            Dimension::new("b", DimKind::Log10, 1e-5, 1e-1),
            Dimension::new("c", DimKind::Integer, 3.0, 17.0),
        ])
        .unwrap();
        let values = space.denormalize(&u).unwrap();
        let back = space.normalize(&values).unwrap();
        for k in 0..2 {
            prop_assert!((back[k] - u[k]).abs() < 1e-9);
        }
        prop_assert_eq!(values[2], values[2].round());
        let mut snapped = u.clone();
        space.snap(&mut snapped);
        prop_assert!(snapped.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert_eq!(space.denormalize(&snapped).unwrap()[2], values[2]);
    }

    #[test]
    fn gp_variance_and_ei_are_nonnegative(seed in any::<u64>(), n in 1usize..10) {
        let mut rng = Rng::new(seed);
        let pts: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.uniform(), rng.uniform()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let model = gp_fit(&pts, &ys).unwrap();
        let best = model.best_loss();
        for _ in 0..50 {
            let x = [rng.uniform(), rng.uniform()];
            let (_, var) = gp_posterior(&model, &x).unwrap();
            prop_assert!(var >= 0.0);
            prop_assert!(expected_improvement(&model, &x, best).unwrap() >= 0.0);
        }
    }

    #[test]
    fn noiseless_observations_are_interpolated(seed in any::<u64>(), n in 1usize..8) {
        let mut rng = Rng::new(seed);
        // Keep points apart so the kernel matrix stays well conditioned.
        let pts: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64 + rng.uniform()) / n as f64, rng.uniform()]).collect();
        let ys: Vec<f64> = (0..n).map(|_| 3.0 * rng.normal()).collect();
        let model = gp_fit_with(&pts, &ys, GpHyper::isotropic(2, 0.2)).unwrap();
        let best = model.best_loss();
        for (p, y) in pts.iter().zip(&ys) {
            prop_assert!((gp_posterior(&model, p).unwrap().0 - y).abs() < 1e-6);
        }
        let at_best = &pts[ys.iter().position(|&y| y == best).unwrap()];
        prop_assert!(expected_improvement(&model, at_best, best).unwrap() <= 1e-8);
    }

    #[test]
    fn proposals_are_in_bounds_with_integer_dims_on_the_grid(seed in any::<u64>()) {
        let space = HyperSpace::default_sgd();
        let mut rng = Rng::new(seed);
        let pts: Vec<Vec<f64>> = (0..6).map(|_| (0..4).map(|_| rng.uniform()).collect()).collect();
        let ys: Vec<f64> = pts.iter().map(|p| p.iter().map(|v| (v - 0.3).powi(2)).sum()).collect();
        let model = gp_fit(&pts, &ys).unwrap();
        let x = propose_next(&model, &space, &mut rng).unwrap();
        prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
        let batch = space.denormalize(&x).unwrap()[3];
        prop_assert_eq!(batch, batch.round());
        prop_assert!((16.0..=256.0).contains(&batch));
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, ..ProptestConfig::default() })]

    #[test]
    fn dataset_serialization_is_a_bijection(seed in any::<u64>(), pos in 1usize..4, neg in 1usize..4) {
        let ds = build_synthetic_dataset(EventKind::WeatherFront, pos, neg, &mut Rng::new(seed)).unwrap();
        let bytes = encode_dataset(&ds).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(&back, &ds);
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }

    #[test]
    fn split_partitions_the_records(seed in any::<u64>()) {
        let ds = build_synthetic_dataset(EventKind::TropicalCyclone, 6, 6, &mut Rng::new(seed)).unwrap();
        let (a, b, c) = split(&ds, [0.5, 0.25, 0.25], &mut Rng::new(seed)).unwrap();
        prop_assert_eq!(a.len() + b.len() + c.len(), ds.len());
        let mut seen: Vec<&str> = [&a, &b, &c].iter().flat_map(|d| d.records.iter().map(|r| r.provenance.as_str())).collect();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), ds.len());
        let positives = [&a, &b, &c].iter().map(|d| d.count(Label::Positive)).sum::<usize>();
        prop_assert_eq!(positives, 6);
    }

    #[test]
    fn forward_is_pure(seed in any::<u64>()) {
        let net = Network::build(preset_config(EventKind::WeatherFront), &mut Rng::new(seed)).unwrap();
        let mut rng = Rng::new(seed ^ 1);
        let x = Tensor::from_vec(&[3, 27, 60], (0..3 * 27 * 60).map(|_| rng.normal()).collect()).unwrap();
        let a = net.forward(&x).unwrap();
        prop_assert_eq!(net.forward(&x).unwrap(), a);
    }
}
