use forgetting::data::{gaussian_points, Dataset, Example, TwoClassGaussian};
use forgetting::model::ModelParams;
use forgetting::rng::{streams, Rng};
use forgetting::stats::mean;
use forgetting::train::{train, LrSchedule, Ordering, TrainPlan};
use proptest::prelude::*;
use rand::Rng as _;

fn random_config(seed: u64) -> (ModelParams, Dataset, TrainPlan) {
    let mut g = Rng::new(seed, streams::DATA).generator();
    let dim = g.random_range(1..6);
    let n = g.random_range(5..60);
    let logistic = g.random_bool(0.5);
    let (params, data) = if logistic {
        let data = TwoClassGaussian { dim, n, separation: 1.5 }.generate(0, Rng::new(seed, streams::DATA)).unwrap();
        (ModelParams::logistic_random(dim, 2, 0.3, Rng::new(seed, streams::INIT)), data)
    } else {
        let data = gaussian_points(n, dim, 1.0, 2.0, 0, Rng::new(seed, streams::DATA)).unwrap();
        (ModelParams::mean(vec![0.0; dim]), data)
    };
    let ordering = if g.random_bool(0.5) { Ordering::Shuffled(seed) } else { Ordering::Fixed(seed) };
    let plan = TrainPlan {
        total_steps: g.random_range(1..80),
        batch_size: g.random_range(1..=n),
        ordering,
        lr: LrSchedule { base: g.random_range(0.01..0.4), decay_points: vec![(20, 0.5)] },
        momentum: if g.random_bool(0.5) { 0.0 } else { 0.5 },
    };
    (params, data, plan)
}

#[test]
fn training_is_bitwise_deterministic() {
    for seed in 0..16 {
        let (params, data, plan) = random_config(seed);
        let a = train(&params, &data, &plan, plan.total_steps).unwrap();
        let b = train(&params, &data, &plan, plan.total_steps).unwrap();
        let bits = |m: &ModelParams| m.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b), "config {seed}");
    }
}

#[test]
fn mean_estimate_error_shrinks_with_steps() {
    let mu = 3.0;
    let checkpoints = [1usize, 5, 20, 80];
    let errors: Vec<Vec<f64>> = (0..1000u64)
        .map(|run| {
            let data = gaussian_points(80, 1, mu, 1.0, 0, Rng::new(run, streams::DATA)).unwrap();
            let plan = TrainPlan {
                total_steps: 80,
                batch_size: 1,
                ordering: Ordering::Shuffled(run),
                lr: LrSchedule::constant(0.05),
                momentum: 0.0,
            };
            let theta0 = ModelParams::mean(vec![0.0]);
            checkpoints.iter().map(|&k| (train(&theta0, &data, &plan, k).unwrap().values()[0] - mu).abs()).collect()
        })
        .collect();
    let means: Vec<f64> =
        (0..checkpoints.len()).map(|i| mean(&errors.iter().map(|e| e[i]).collect::<Vec<_>>())).collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}

fn closed_form(theta0: f64, xs: &[f64], eta: f64) -> f64 {
    let k = xs.len();
    let c = 1.0 - 2.0 * eta;
    let mut value = theta0 * c.powi(k as i32);
    for (j, x) in xs.iter().enumerate() {
        value += 2.0 * eta * c.powi((k - 1 - j) as i32) * x;
    }
    value
}

proptest! {
    #[test]
    fn fixed_order_training_matches_closed_form(
        xs in prop::collection::vec(-10.0f64..10.0, 1..=50),
        theta0 in -10.0f64..10.0,
        eta in 0.001f64..0.499,
    ) {
        let examples: Vec<Example> = xs.iter().enumerate().map(|(i, &x)| Example::new(i as u64, vec![x], None)).collect();
        let data = Dataset::new(examples).unwrap();
        let plan = TrainPlan {
            total_steps: xs.len(),
            batch_size: 1,
            ordering: Ordering::Fixed(0),
            lr: LrSchedule::constant(eta),
            momentum: 0.0,
        };
        let trained = train(&ModelParams::mean(vec![theta0]), &data, &plan, xs.len()).unwrap().values()[0];
        let expected = closed_form(theta0, &xs, eta);
        let scale = xs.iter().fold(theta0.abs(), |m, x| m.max(x.abs())).max(1.0);
        prop_assert!((trained - expected).abs() <= 1e-12 * scale, "{} vs {}", trained, expected);
    }

    #[test]
    fn distinct_parameters_stay_distinct(a in -5.0f64..5.0, b in -5.0f64..5.0, x in -5.0f64..5.0, eta in 0.01f64..0.49) {
        prop_assume!(a != b);
        let data = Dataset::new(vec![Example::new(0, vec![x], None)]).unwrap();
        let plan = TrainPlan { total_steps: 1, batch_size: 1, ordering: Ordering::Fixed(0), lr: LrSchedule::constant(eta), momentum: 0.0 };
        let ta = train(&ModelParams::mean(vec![a]), &data, &plan, 1).unwrap().values()[0];
        let tb = train(&ModelParams::mean(vec![b]), &data, &plan, 1).unwrap().values()[0];
        prop_assert!(ta != tb);
        prop_assert!(((ta - tb) - (a - b) * (1.0 - 2.0 * eta)).abs() <= 1e-12 * (1.0 + a.abs() + b.abs() + x.abs()));
    }
}
