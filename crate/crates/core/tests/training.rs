use airsgd::config::{PartitionSpec, RunConfig};
use airsgd::data::{DatasetSpec, SyntheticSpec};
use airsgd::learner::OptimizerSpec;
use airsgd::ota::PowerSchedule;
use airsgd::run;

fn separable(mode: &str, margin: f64) -> RunConfig {
    let (features, classes) = (8, 4);
    RunConfig {
        devices: 4,
        antennas: 16,
        s: 9,
        d: (features + 1) * classes,
        iterations: 200,
        sigma_h_sq: 1.0,
        sigma_z_sq: 1.0,
        power: PowerSchedule::ramp_per_thousand(),
        optimizer: OptimizerSpec::sgd(0.1),
        dataset: DatasetSpec::Synthetic(SyntheticSpec {
            classes,
            features,
            train_per_class: 100,
            test_per_class: 100,
            margin,
            seed: 2,
        }),
        partition: PartitionSpec {
            per_device: 100,
            batch_size: None,
        },
        mode: mode.into(),
        seed: 2,
        metrics_path: None,
        eval_every: 50,
        channel_correlation: Default::default(),
    }
}

#[test]
fn error_free_learns_separable_data() {
    let out = run(&separable("error_free", 8.0)).unwrap();
    assert!(out.final_accuracy() >= 0.95, "{}", out.final_accuracy());
}

#[test]
fn wide_margin_is_nearly_perfect() {
    let out = run(&separable("error_free", 10.0)).unwrap();
    assert!(out.final_accuracy() >= 0.99, "{}", out.final_accuracy());
}

#[test]
fn loss_decreases_under_error_free_sgd() {
    let mut cfg = separable("error_free", 8.0);
    cfg.optimizer = OptimizerSpec::sgd(0.01);
    cfg.eval_every = 1;
    let out = run(&cfg).unwrap();
    assert!(out.records.windows(2).all(|w| w[1].loss <= w[0].loss));
}

#[test]
fn ota_tracks_error_free_as_antennas_grow() {
    let iterations = 10;
    let mut reference = separable("error_free", 8.0);
    reference.iterations = iterations;
    let target = run(&reference).unwrap().final_params;
    let distances: Vec<f64> = [4, 16, 64, 256]
        .iter()
        .map(|&k| {
            let mut cfg = separable("ota", 8.0);
            cfg.iterations = iterations;
            cfg.antennas = k;
            let theta = run(&cfg).unwrap().final_params;
            theta
                .values()
                .iter()
                .zip(target.values())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    assert!(distances.windows(2).all(|w| w[1] < w[0]), "{distances:?}");
}
