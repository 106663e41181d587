//! Training loop, metrics and sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{has_path, set_path, RunConfig};
use crate::data::partition;
use crate::error::{Error, Result};
use crate::learner::{apply_update, Batch, LocalDataset, ModelParams, SoftmaxModel};
use crate::link::average_gradient;
use crate::registry;
use crate::rng::{StreamKey, StreamTag};

pub const CSV_HEADER: &str = "iter,accuracy,loss,inst_power,avg_power,est_mse";

/// One row of the metrics table.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub iteration: usize,
    /// Test accuracy.
    pub accuracy: f64,
    /// Mean of the devices' full local losses.
    pub loss: f64,
    /// Device-mean `alpha_t^2 ||g_m||^2 / N` at this iteration.
    pub inst_power: Option<f64>,
    /// Device-mean running average power up to this iteration.
    pub avg_power: Option<f64>,
    /// Per-coordinate squared error of the server's estimate against the true mean.
    pub est_mse: Option<f64>,
}

/// Transmit energies `alpha_t^2 sum_n ||g_m^n||^2`, indexed `[t - 1][m]`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PowerTrace {
    pub symbols: usize,
    pub energies: Vec<Vec<f64>>,
}

impl PowerTrace {
    fn device_mean_power(&self, energies: &[f64]) -> f64 {
        energies.iter().sum::<f64>() / (energies.len() * self.symbols) as f64
    }
}

/// Per-device average transmit power `(1/NT) sum_t alpha_t^2 ||g_m(t)||^2`.
/// Empty when nothing was sent over the air.
pub fn power_report(trace: &PowerTrace) -> Vec<f64> {
    let Some(first) = trace.energies.first() else {
        return Vec::new();
    };
    let scale = (trace.symbols * trace.energies.len()) as f64;
    (0..first.len())
        .map(|m| trace.energies.iter().map(|e| e[m]).sum::<f64>() / scale)
        .collect()
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub records: Vec<MetricsRecord>,
    pub power: PowerTrace,
    pub final_params: ModelParams,
}

impl RunOutput {
    pub fn final_accuracy(&self) -> f64 {
        self.records.last().map_or(f64::NAN, |r| r.accuracy)
    }

    /// Device-mean of [`power_report`], `None` without transmissions.
    pub fn mean_power(&self) -> Option<f64> {
        let p = power_report(&self.power);
        (!p.is_empty()).then(|| p.iter().sum::<f64>() / p.len() as f64)
    }
}

fn abort(t: usize, stage: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::NonFinite(_) => Error::NumericAbort { iteration: t, stage },
        other => other,
    }
}

fn minibatch(config: &RunConfig, t: usize, m: usize, len: usize) -> Option<Vec<usize>> {
    config.partition.batch_size.map(|b| {
        let key = StreamKey::new(config.seed, StreamTag::Minibatch, t as u64);
        index::sample(&mut key.rng([m, 0, 0]), len, b).into_vec()
    })
}

/// Trains for `T` iterations and records metrics every `eval_every` iterations and at `T`.
pub fn run(config: &RunConfig) -> Result<RunOutput> {
    config.validate()?;
    let (train, test) = config.dataset.materialize()?;
    let model = SoftmaxModel::for_dataset(&train);
    if model.param_len() != config.d {
        return Err(Error::Config(format!(
            "d = {} but the dataset needs {}",
            config.d,
            model.param_len()
        )));
    }
    if test.feature_dim() != train.feature_dim() {
        return Err(Error::Config("train and test feature widths differ".into()));
    }
    let devices = partition(&train, config.devices, config.partition.per_device, config.seed)
        .map_err(|e| Error::Config(e.to_string()))?;
    let link = registry::links().create(&config.mode, config)?;
    let mut optimizer = registry::optimizers().create(&config.optimizer.kind, &config.optimizer)?;

    let mut theta = ModelParams::zeros(config.d);
    let mut power = PowerTrace {
        symbols: config.symbols(),
        energies: Vec::new(),
    };
    let mut records = Vec::new();

    for t in 1..=config.iterations {
        let gradients = devices
            .par_iter()
            .enumerate()
            .map(|(m, data)| {
                let idx = minibatch(config, t, m, data.len());
                let batch = idx.as_deref().map_or(Batch::Full, Batch::Indices);
                model.local_gradient(&theta, data, batch)
            })
            .collect::<Result<Vec<_>>>()
            .map_err(abort(t, "local_gradient"))?;
        let truth = average_gradient(&gradients)?;
        let round = link.aggregate(t, &gradients).map_err(abort(t, "link"))?;
        if round.estimate.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericAbort {
                iteration: t,
                stage: "estimate",
            });
        }
        theta = apply_update(&theta, &round.estimate, optimizer.as_mut())
            .map_err(abort(t, "update"))?;

        let inst_power = round.energies.as_ref().map(|e| power.device_mean_power(e));
        if let Some(e) = round.energies {
            power.energies.push(e);
        }
        if t % config.eval_every == 0 || t == config.iterations {
            let est_mse = inst_power.map(|_| mse(&round.estimate, &truth));
            records.push(MetricsRecord {
                iteration: t,
                accuracy: model.evaluate_accuracy(&theta, &test)?,
                loss: mean_loss(&model, &theta, &devices)?,
                inst_power,
                avg_power: inst_power.map(|_| {
                    let p = power_report(&power);
                    p.iter().sum::<f64>() / p.len() as f64
                }),
                est_mse,
            });
        }
    }
    Ok(RunOutput {
        records,
        power,
        final_params: theta,
    })
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64
}

fn mean_loss(model: &SoftmaxModel, theta: &ModelParams, devices: &[LocalDataset]) -> Result<f64> {
    let losses = devices
        .par_iter()
        .map(|d| model.loss(theta, d, Batch::Full))
        .collect::<Result<Vec<_>>>()?;
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// CSV text with `#` provenance lines (resolved config, seed, overrides) before the header.
pub fn metrics_csv(config: &RunConfig, overrides: &[String], records: &[MetricsRecord]) -> String {
    let mut out = String::new();
    let compact = serde_json::to_string(config).expect("RunConfig serializes");
    writeln!(out, "# config: {compact}").unwrap();
    writeln!(out, "# seed: {}", config.seed).unwrap();
    writeln!(out, "# overrides: {}", overrides.join(" ")).unwrap();
    writeln!(out, "{CSV_HEADER}").unwrap();
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.iteration,
            r.accuracy,
            r.loss,
            opt(r.inst_power),
            opt(r.avg_power),
            opt(r.est_mse)
        )
        .unwrap();
    }
    out
}

pub fn write_metrics_csv(
    path: &Path,
    config: &RunConfig,
    overrides: &[String],
    records: &[MetricsRecord],
) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, metrics_csv(config, overrides, records)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn value_label(v: &Value) -> String {
    let raw = match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    };
    raw.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

/// One cell of a sweep: the overrides applied to the base config.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub assignments: Vec<(String, Value)>,
}

impl SweepCell {
    /// `K-1__sigma_z_sq-20`, or `run` for the empty sweep.
    pub fn file_stem(&self) -> String {
        if self.assignments.is_empty() {
            return "run".into();
        }
        self.assignments
            .iter()
            .map(|(k, v)| format!("{}-{}", k.replace('.', "_"), value_label(v)))
            .collect::<Vec<_>>()
            .join("__")
    }

    pub fn overrides(&self) -> Vec<String> {
        self.assignments.iter().map(|(k, v)| format!("{k}={v}")).collect()
    }

    pub fn apply(&self, base: &RunConfig) -> Result<RunConfig> {
        let mut value = base.to_value();
        for (k, v) in &self.assignments {
            set_path(&mut value, k, v.clone())?;
        }
        RunConfig::from_value(value)
    }
}

/// Cartesian product of the sweep axes, first axis outermost.
pub fn sweep_cells(sweep: &[(String, Vec<Value>)]) -> Vec<SweepCell> {
    sweep.iter().fold(vec![SweepCell { assignments: vec![] }], |cells, (key, values)| {
        cells
            .iter()
            .flat_map(|c| {
                values.iter().map(move |v| {
                    let mut a = c.assignments.clone();
                    a.push((key.clone(), v.clone()));
                    SweepCell { assignments: a }
                })
            })
            .collect()
    })
}

/// Runs every cell of the sweep and writes one CSV per cell into `out_dir`.
/// All cells are validated before any run starts.
pub fn run_matrix(
    base: &RunConfig,
    sweep: &[(String, Vec<Value>)],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let base_value = base.to_value();
    for (key, values) in sweep {
        if !has_path(&base_value, key) {
            return Err(Error::Config(format!("unknown sweep field '{key}'")));
        }
        if values.is_empty() {
            return Err(Error::Config(format!("sweep field '{key}' has no values")));
        }
    }
    let cells = sweep_cells(sweep);
    let configs = cells
        .iter()
        .map(|c| c.apply(base))
        .collect::<Result<Vec<_>>>()?;
    let mut paths = Vec::with_capacity(cells.len());
    for (cell, config) in cells.iter().zip(&configs) {
        let out = run(config)?;
        let path = out_dir.join(format!("{}.csv", cell.file_stem()));
        write_metrics_csv(&path, config, &cell.overrides(), &out.records)?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DatasetSpec, SyntheticSpec};
    use crate::learner::OptimizerSpec;
    use crate::ota::PowerSchedule;

    fn small(mode: &str) -> RunConfig {
        let mut c = RunConfig::minimal();
        c.mode = mode.into();
        c.iterations = 20;
        c.eval_every = 5;
        c
    }

    #[test]
    fn records_at_eval_points() {
        let mut c = small("ota");
        c.iterations = 12;
        let out = run(&c).unwrap();
        let iters: Vec<usize> = out.records.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![5, 10, 12]);
        assert_eq!(out.power.energies.len(), 12);
        assert!(out.records.iter().all(|r| r.inst_power.is_some() && r.est_mse.is_some()));
    }

    #[test]
    fn error_free_has_no_power() {
        let out = run(&small("error_free")).unwrap();
        assert!(out.power.energies.is_empty());
        assert!(power_report(&out.power).is_empty());
        assert!(out.mean_power().is_none());
        let r = out.records.last().unwrap();
        assert!(r.inst_power.is_none() && r.avg_power.is_none() && r.est_mse.is_none());
        let csv = metrics_csv(&small("error_free"), &[], &out.records);
        assert!(csv.lines().last().unwrap().ends_with(",,,"));
    }

    #[test]
    fn power_report_arithmetic() {
        let trace = PowerTrace {
            symbols: 2,
            energies: vec![vec![4.0, 8.0], vec![6.0, 0.0]],
        };
        assert_eq!(power_report(&trace), vec![2.5, 2.0]);
    }

    #[test]
    fn avg_power_matches_report() {
        let out = run(&small("ota")).unwrap();
        let p = power_report(&out.power);
        let mean = p.iter().sum::<f64>() / p.len() as f64;
        let last = out.records.last().unwrap().avg_power.unwrap();
        assert!((last - mean).abs() <= 1e-12 * mean);
    }

    #[test]
    fn noiseless_large_array_estimates_closely() {
        let (features, classes) = (4, 2);
        let c = RunConfig {
            devices: 2,
            antennas: 10_000,
            s: 5,
            d: (features + 1) * classes,
            iterations: 3,
            sigma_h_sq: 1.0,
            sigma_z_sq: 0.0,
            power: PowerSchedule::Constant { alpha: 1.0 },
            optimizer: OptimizerSpec::sgd(0.1),
            dataset: DatasetSpec::Synthetic(SyntheticSpec {
                classes,
                features,
                train_per_class: 50,
                test_per_class: 10,
                margin: 2.0,
                seed: 4,
            }),
            partition: crate::config::PartitionSpec {
                per_device: 40,
                batch_size: None,
            },
            mode: "ota".into(),
            seed: 9,
            metrics_path: None,
            eval_every: 1,
            channel_correlation: Default::default(),
        };
        c.validate().unwrap();
        let (train, _) = c.dataset.materialize().unwrap();
        let devices = partition(&train, 2, 40, c.seed).unwrap();
        let model = SoftmaxModel::for_dataset(&train);
        let theta = ModelParams::zeros(c.d);
        let grads: Vec<_> = devices
            .iter()
            .map(|d| model.local_gradient(&theta, d, Batch::Full).unwrap())
            .collect();
        let truth = average_gradient(&grads).unwrap();
        let link = registry::links().create("ota", &c).unwrap();
        let est = link.aggregate(1, &grads).unwrap().estimate;
        let err: f64 = est.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum();
        let norm: f64 = truth.iter().map(|v| v * v).sum();
        assert!(err / norm <= 1e-2, "relative mse {}", err / norm);
    }

    #[test]
    fn minibatches_are_deterministic() {
        let mut c = small("ota");
        c.partition.batch_size = Some(10);
        let a = run(&c).unwrap();
        let b = run(&c).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.final_params, b.final_params);
    }

    #[test]
    fn csv_layout() {
        let c = small("ota");
        let out = run(&c).unwrap();
        let text = metrics_csv(&c, &["K=8".into()], &out.records);
        let lines: Vec<&str> = text.lines().collect();
        assert!(lines[0].starts_with("# config: {"));
        assert_eq!(lines[1], "# seed: 1");
        assert_eq!(lines[2], "# overrides: K=8");
        assert_eq!(lines[3], CSV_HEADER);
        assert_eq!(lines.len(), 4 + out.records.len());
        assert!(!text.contains('\r'));
        assert!(lines[4].starts_with("5,"));
    }

    #[test]
    fn sweep_cells_and_names() {
        let sweep = vec![
            ("K".to_string(), vec![Value::from(1), Value::from(5)]),
            ("sigma_z_sq".to_string(), vec![Value::from(20.0)]),
        ];
        let cells = sweep_cells(&sweep);
        assert_eq!(cells.len(), 2);
        assert_eq!(cells[0].file_stem(), "K-1__sigma_z_sq-20.0");
        assert_eq!(cells[1].overrides(), vec!["K=5", "sigma_z_sq=20.0"]);
        assert_eq!(sweep_cells(&[])[0].file_stem(), "run");
    }

    #[test]
    fn sweep_rejects_unknown_field() {
        let dir = tempfile::tempdir().unwrap();
        let sweep = vec![("L".to_string(), vec![Value::from(1)])];
        let err = run_matrix(&small("ota"), &sweep, dir.path()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }

    #[test]
    fn sweep_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = small("ota");
        base.iterations = 5;
        let sweep = vec![("K".to_string(), vec![Value::from(1), Value::from(4)])];
        let paths = run_matrix(&base, &sweep, dir.path()).unwrap();
        assert_eq!(paths.len(), 2);
        assert!(paths[0].ends_with("K-1.csv"));
        let text = std::fs::read_to_string(&paths[1]).unwrap();
        assert!(text.contains("\"K\":4"));
        let empty = run_matrix(&base, &[], dir.path()).unwrap();
        assert!(empty[0].ends_with("run.csv"));
    }
}
