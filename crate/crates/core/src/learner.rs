//! Single-layer softmax classifier and the optimizers that update it.
//!
//! Parameters are flattened class-major with the bias last in each class:
//! `theta[c * (F + 1) + f]` is the weight of feature `f` for class `c`, and
//! `theta[c * (F + 1) + F]` is the bias of class `c`.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_len, invalid, Error, Result};
use crate::packing::GradientEstimate;

/// A labelled dataset held by one device (or the test set).
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDataset {
    features: Vec<f64>,
    labels: Vec<usize>,
    feature_dim: usize,
    classes: usize,
    device_id: Option<usize>,
}

impl LocalDataset {
    /// `features` is row-major, `labels.len()` rows of `feature_dim` values.
    pub fn new(
        features: Vec<f64>,
        labels: Vec<usize>,
        feature_dim: usize,
        classes: usize,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(invalid("dataset must contain at least one sample"));
        }
        if feature_dim == 0 || classes < 2 {
            return Err(invalid("need at least one feature and two classes"));
        }
        ensure_len("dataset features", labels.len() * feature_dim, features.len())?;
        if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label, classes });
        }
        if !features.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        Ok(Self {
            features,
            labels,
            feature_dim,
            classes,
            device_id: None,
        })
    }

    pub fn with_device(mut self, device_id: usize) -> Self {
        self.device_id = Some(device_id);
        self
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn device_id(&self) -> Option<usize> {
        self.device_id
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn sample(&self, idx: usize) -> (&[f64], usize) {
        let f = self.feature_dim;
        (&self.features[idx * f..(idx + 1) * f], self.labels[idx])
    }

    /// A new dataset made of the given rows, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let mut features = Vec::with_capacity(indices.len() * self.feature_dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(invalid(format!("sample index {i} out of range")));
            }
            let (x, y) = self.sample(i);
            features.extend_from_slice(x);
            labels.push(y);
        }
        Self::new(features, labels, self.feature_dim, self.classes)
    }
}

/// Which samples of a dataset enter one gradient.
#[derive(Clone, Copy, Debug)]
pub enum Batch<'a> {
    Full,
    Indices(&'a [usize]),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams(Vec<f64>);

impl ModelParams {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("model parameters"));
        }
        Ok(Self(values))
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Dense layer + softmax + cross-entropy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SoftmaxModel {
    pub features: usize,
    pub classes: usize,
}

impl SoftmaxModel {
    pub fn new(features: usize, classes: usize) -> Self {
        Self { features, classes }
    }

    pub fn for_dataset(data: &LocalDataset) -> Self {
        Self::new(data.feature_dim(), data.classes())
    }

    /// `d = (F + 1) * C`.
    pub fn param_len(&self) -> usize {
        (self.features + 1) * self.classes
    }

    fn check(&self, theta: &ModelParams, data: &LocalDataset) -> Result<()> {
        ensure_len("model parameters", self.param_len(), theta.len())?;
        ensure_len("feature dimension", self.features, data.feature_dim())?;
        ensure_len("class count", self.classes, data.classes())
    }

    fn logits(&self, theta: &[f64], x: &[f64], out: &mut [f64]) {
        let stride = self.features + 1;
        for (c, o) in out.iter_mut().enumerate() {
            let row = &theta[c * stride..(c + 1) * stride];
            *o = row[..self.features]
                .iter()
                .zip(x)
                .map(|(w, v)| w * v)
                .sum::<f64>()
                + row[self.features];
        }
    }

    fn log_sum_exp(z: &[f64]) -> f64 {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
    }

    /// Turns logits into probabilities in place.
    fn softmax_in_place(z: &mut [f64]) {
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in z.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in z.iter_mut() {
            *v /= total;
        }
    }

    fn batch_indices<'a>(data: &LocalDataset, batch: Batch<'a>) -> Result<Box<dyn Iterator<Item = usize> + 'a>> {
        match batch {
            Batch::Full => Ok(Box::new(0..data.len())),
            Batch::Indices(idx) => {
                if idx.is_empty() {
                    return Err(invalid("batch must not be empty"));
                }
                if let Some(&bad) = idx.iter().find(|&&i| i >= data.len()) {
                    return Err(invalid(format!("batch index {bad} out of range")));
                }
                Ok(Box::new(idx.iter().copied()))
            }
        }
    }

    /// Average cross-entropy over the batch.
    pub fn loss(&self, theta: &ModelParams, data: &LocalDataset, batch: Batch<'_>) -> Result<f64> {
        self.check(theta, data)?;
        let mut z = vec![0.0; self.classes];
        let mut total = 0.0;
        let mut count = 0usize;
        for idx in Self::batch_indices(data, batch)? {
            let (x, y) = data.sample(idx);
            self.logits(theta.values(), x, &mut z);
            total += Self::log_sum_exp(&z) - z[y];
            count += 1;
        }
        Ok(total / count as f64)
    }

    /// Average cross-entropy gradient over the batch.
    pub fn local_gradient(
        &self,
        theta: &ModelParams,
        data: &LocalDataset,
        batch: Batch<'_>,
    ) -> Result<GradientEstimate> {
        self.check(theta, data)?;
        let stride = self.features + 1;
        let mut grad = vec![0.0; self.param_len()];
        let mut p = vec![0.0; self.classes];
        let mut count = 0usize;
        for idx in Self::batch_indices(data, batch)? {
            let (x, y) = data.sample(idx);
            self.logits(theta.values(), x, &mut p);
            Self::softmax_in_place(&mut p);
            p[y] -= 1.0;
            for (c, residual) in p.iter().enumerate() {
                let row = &mut grad[c * stride..(c + 1) * stride];
                for (g, v) in row[..self.features].iter_mut().zip(x) {
                    *g += residual * v;
                }
                row[self.features] += residual;
            }
            count += 1;
        }
        let inv = 1.0 / count as f64;
        grad.iter_mut().for_each(|g| *g *= inv);
        GradientEstimate::new(grad, data.device_id().unwrap_or(0))
    }

    /// Predicted class, ties broken toward the lowest index.
    pub fn predict(&self, theta: &ModelParams, x: &[f64]) -> usize {
        let mut z = vec![0.0; self.classes];
        self.logits(theta.values(), x, &mut z);
        let mut best = 0;
        for (c, v) in z.iter().enumerate().skip(1) {
            if *v > z[best] {
                best = c;
            }
        }
        best
    }

    pub fn evaluate_accuracy(&self, theta: &ModelParams, test: &LocalDataset) -> Result<f64> {
        self.check(theta, test)?;
        let correct = (0..test.len())
            .filter(|&i| {
                let (x, y) = test.sample(i);
                self.predict(theta, x) == y
            })
            .count();
        Ok(correct as f64 / test.len() as f64)
    }
}

/// Optimizer selection and hyperparameters as they appear in a run config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    /// Registered optimizer name, `"sgd"` or `"adam"`.
    pub kind: String,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
}

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}

impl OptimizerSpec {
    pub fn adam(learning_rate: f64) -> Self {
        Self {
            kind: "adam".into(),
            learning_rate,
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
        }
    }

    pub fn sgd(learning_rate: f64) -> Self {
        Self {
            kind: "sgd".into(),
            ..Self::adam(learning_rate)
        }
    }
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        Self::adam(default_learning_rate())
    }
}

/// A parameter-update rule owned by the parameter server.
pub trait Optimizer: Send {
    fn name(&self) -> &'static str;

    /// Updates `theta` in place from the (estimated) average gradient.
    fn step(&mut self, theta: &mut [f64], gradient: &[f64]);
}

/// `theta <- theta - lr * g`.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn name(&self) -> &'static str {
        "sgd"
    }

    fn step(&mut self, theta: &mut [f64], gradient: &[f64]) {
        for (t, g) in theta.iter_mut().zip(gradient) {
            *t -= self.learning_rate * g;
        }
    }
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: i32,
}

impl Adam {
    pub fn new(learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            first: Vec::new(),
            second: Vec::new(),
            steps: 0,
        }
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    pub fn steps(&self) -> i32 {
        self.steps
    }
}

impl Optimizer for Adam {
    fn name(&self) -> &'static str {
        "adam"
    }

    fn step(&mut self, theta: &mut [f64], gradient: &[f64]) {
        if self.first.len() != theta.len() {
            self.first = vec![0.0; theta.len()];
            self.second = vec![0.0; theta.len()];
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps);
        let c2 = 1.0 - self.beta2.powi(self.steps);
        for ((t, g), (m, v)) in theta
            .iter_mut()
            .zip(gradient)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *t -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
    }
}

/// One parameter-server update. Non-finite gradients are rejected and leave
/// both `theta` and the optimizer untouched.
pub fn apply_update(
    theta: &ModelParams,
    gradient: &[f64],
    optimizer: &mut dyn Optimizer,
) -> Result<ModelParams> {
    ensure_len("update gradient", theta.len(), gradient.len())?;
    if !gradient.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFinite("update gradient"));
    }
    let mut next = theta.values().to_vec();
    optimizer.step(&mut next, gradient);
    ModelParams::new(next)
}
