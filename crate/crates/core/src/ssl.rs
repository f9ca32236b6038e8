//! Semi-supervised training: labelled BCE plus a kernel-weighted smoothness
//! penalty over sample pairs within each mini-batch.
//!
//! The batch objective is
//! `Σ_{labelled i} BCE(p_i, y_i) + λ · Σ_{pairs (i,j)} W_ij (p_i − p_j)²`,
//! where pairs are all unordered pairs in the batch except those with both
//! members labelled, and `W_ij = exp(−d_ij² / σ)` comes from cached distances.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::nn::{
    adam_step, bce_grad, bce_loss, AdamConfig, AdamState, Architecture, ModelParams, Tensor,
};
use crate::ot::{kernel_weight, DistanceCache};
use crate::synth::Dataset;
use crate::{Error, Result};

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SSLConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Scale each input image to zero mean and unit variance before the network.
    pub standardize: bool,
    pub adam: AdamConfig,
}

impl Default for SSLConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            sigma: 1.0,
            batch_size: 50,
            epochs: 55,
            seed: 0,
            standardize: false,
            adam: AdamConfig::default(),
        }
    }
}

impl SSLConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!(
                "sigma must be finite and > 0, got {}",
                self.sigma
            )));
        }
        if self.batch_size == 0 || (self.lambda > 0.0 && self.batch_size < 2) {
            return Err(Error::Config(format!(
                "batch_size {} too small (need >= 2 when lambda > 0)",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        self.adam.validate()
    }
}

/// All position pairs `(a, b)`, `a < b`, except those where both are labelled.
pub fn enumerate_pairs(labelled: &[bool]) -> Vec<(usize, usize)> {
    let k = labelled.len();
    let mut pairs = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if !(labelled[a] && labelled[b]) {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

/// Weighted pairs over positions in a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pairs: Vec<(usize, usize)>,
    weights: Vec<f64>,
}

impl PairSet {
    pub fn new(pairs: Vec<(usize, usize)>, weights: Vec<f64>) -> Result<Self> {
        if pairs.len() != weights.len() {
            return Err(Error::Shape("one weight per pair required".into()));
        }
        if let Some(&(a, b)) = pairs.iter().find(|(a, b)| a >= b) {
            return Err(Error::InvalidParameter(format!(
                "pair ({a}, {b}) must satisfy a < b"
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(Error::InvalidParameter(format!(
                "pair weight {w} outside [0, 1]"
            )));
        }
        Ok(Self { pairs, weights })
    }

    /// Pairs of a batch of training indices, weighted from cached distances.
    pub fn for_batch(
        batch: &[usize],
        train: &Dataset,
        cache: &DistanceCache,
        sigma: f64,
    ) -> Result<Self> {
        let labelled: Vec<bool> = batch.iter().map(|&i| train.is_labelled(i)).collect();
        let pairs = enumerate_pairs(&labelled);
        let weights = pairs
            .iter()
            .map(|&(a, b)| {
                let (i, j) = (batch[a], batch[b]);
                let d = cache.get(i, j).ok_or_else(|| {
                    Error::Config(format!(
                        "distance cache has no entry for samples ({i}, {j})"
                    ))
                })?;
                kernel_weight(d, sigma)
            })
            .collect::<Result<_>>()?;
        Self::new(pairs, weights)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `Σ W_ij (f_i − f_j)²` with `f` indexed by batch position.
pub fn smoothness_term(pairs: &PairSet, predictions: &[f64]) -> f64 {
    pairs
        .pairs
        .iter()
        .zip(&pairs.weights)
        .map(|(&(a, b), w)| w * (predictions[a] - predictions[b]).powi(2))
        .sum()
}

/// Gradient of [`smoothness_term`] with respect to each prediction.
pub fn smoothness_grad(pairs: &PairSet, predictions: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; predictions.len()];
    for (&(a, b), w) in pairs.pairs.iter().zip(&pairs.weights) {
        let d = 2.0 * w * (predictions[a] - predictions[b]);
        g[a] += d;
        g[b] -= d;
    }
    g
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchLoss {
    pub supervised: f64,
    pub smoothness: f64,
    pub total: f64,
    pub n_labelled: usize,
    pub n_pairs: usize,
}

/// Loss and `∂L/∂p` per position given predictions, optional labels
/// (`None` = unlabelled) and the batch pairs.
pub fn composite_loss(
    predictions: &[f64],
    labels: &[Option<f64>],
    pairs: &PairSet,
    lambda: f64,
) -> (BatchLoss, Vec<f64>) {
    let mut supervised = 0.0;
    let mut grad = vec![0.0; predictions.len()];
    let mut n_labelled = 0;
    for (k, (&p, y)) in predictions.iter().zip(labels).enumerate() {
        if let Some(y) = *y {
            supervised += bce_loss(p, y);
            grad[k] = bce_grad(p, y);
            n_labelled += 1;
        }
    }
    let mut smoothness = 0.0;
    if lambda > 0.0 {
        smoothness = smoothness_term(pairs, predictions);
        for (g, s) in grad.iter_mut().zip(smoothness_grad(pairs, predictions)) {
            *g += lambda * s;
        }
    }
    let loss = BatchLoss {
        supervised,
        smoothness,
        total: supervised + lambda * smoothness,
        n_labelled,
        n_pairs: if lambda > 0.0 { pairs.len() } else { 0 },
    };
    (loss, grad)
}

/// Flattened network inputs for a whole dataset, gathered per batch.
#[derive(Debug, Clone)]
pub struct InputBank {
    sample_shape: [usize; 3],
    data: Vec<f64>,
}

impl InputBank {
    pub fn new(dataset: &Dataset, standardize: bool) -> Result<Self> {
        let t = crate::nn::images_to_tensor(dataset.images(), standardize)?;
        let s = t.shape();
        Ok(Self {
            sample_shape: [s[1], s[2], s[3]],
            data: t.into_data(),
        })
    }

    pub fn gather(&self, indices: &[usize]) -> Tensor {
        let n: usize = self.sample_shape.iter().product();
        let mut data = Vec::with_capacity(indices.len() * n);
        for &i in indices {
            data.extend_from_slice(&self.data[i * n..(i + 1) * n]);
        }
        let [c, h, w] = self.sample_shape;
        Tensor::new(vec![indices.len(), c, h, w], data).expect("sizes agree")
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            in_channels: self.sample_shape[0],
            height: self.sample_shape[1],
            width: self.sample_shape[2],
            ..Architecture::default()
        }
    }
}

/// Composite loss of one batch of training indices and its parameter gradient.
/// With `λ = 0` only the labelled members are fed through the network.
pub fn batch_step(
    params: &ModelParams,
    train: &Dataset,
    inputs: &InputBank,
    batch: &[usize],
    cfg: &SSLConfig,
    cache: Option<&DistanceCache>,
) -> Result<(BatchLoss, Vec<Vec<f64>>)> {
    let members: Vec<usize> = if cfg.lambda > 0.0 {
        batch.to_vec()
    } else {
        batch
            .iter()
            .copied()
            .filter(|&i| train.is_labelled(i))
            .collect()
    };
    let pairs = if cfg.lambda > 0.0 {
        let cache =
            cache.ok_or_else(|| Error::Config("lambda > 0 requires a distance cache".into()))?;
        PairSet::for_batch(&members, train, cache, cfg.sigma)?
    } else {
        PairSet::new(Vec::new(), Vec::new())?
    };
    if members.is_empty() {
        let zero = params
            .tensors()
            .iter()
            .map(|t| vec![0.0; t.len()])
            .collect();
        let (loss, _) = composite_loss(&[], &[], &pairs, cfg.lambda);
        return Ok((loss, zero));
    }
    let labels: Vec<Option<f64>> = members
        .iter()
        .map(|&i| {
            let s = &train.samples[i];
            s.is_labelled.then(|| s.label.as_f64())
        })
        .collect();
    let cache_fwd = params.forward(&inputs.gather(&members))?;
    let p = cache_fwd.probabilities();
    let (loss, dp) = composite_loss(p, &labels, &pairs, cfg.lambda);
    if !loss.total.is_finite() {
        return Err(Error::Numerical(format!("batch loss is {}", loss.total)));
    }
    let dz: Vec<f64> = dp.iter().zip(p).map(|(g, &p)| g * p * (1.0 - p)).collect();
    let grads = params.backward(&cache_fwd, &dz)?;
    Ok((loss, grads))
}

/// Loss value of one batch without the gradient.
pub fn composite_batch_loss(
    params: &ModelParams,
    train: &Dataset,
    batch: &[usize],
    cfg: &SSLConfig,
    cache: Option<&DistanceCache>,
) -> Result<BatchLoss> {
    let inputs = InputBank::new(train, cfg.standardize)?;
    Ok(batch_step(params, train, &inputs, batch, cfg, cache)?.0)
}

/// Per-epoch uniform reshuffle of `0..n`, cut into batches of `batch_size`
/// (the last one may be shorter).
#[derive(Debug, Clone)]
pub struct BatchSchedule {
    n: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BatchSchedule {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        assert!(batch_size > 0, "batch_size must be positive");
        Self {
            n,
            batch_size,
            rng: seeded(seed, SHUFFLE_STREAM),
        }
    }

    pub fn next_epoch(&mut self) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..self.n).collect();
        order.shuffle(&mut self.rng);
        order
            .chunks(self.batch_size)
            .map(<[usize]>::to_vec)
            .collect()
    }
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Fresh parameters for a run seed.
pub fn init_params(arch: Architecture, seed: u64) -> Result<ModelParams> {
    ModelParams::init(arch, &mut seeded(seed, INIT_STREAM))
}

/// Fraction of samples whose thresholded prediction (`p ≥ 0.5` ⇒ 1) matches the label.
pub fn accuracy(predictions: &[f64], labels: &[f64]) -> f64 {
    if predictions.is_empty() {
        return 0.0;
    }
    let hits = predictions
        .iter()
        .zip(labels)
        .filter(|(&p, &y)| (p >= 0.5) == (y >= 0.5))
        .count();
    hits as f64 / predictions.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub seed: u64,
    pub val_accuracy: Vec<f64>,
    /// Mean batch loss per epoch.
    pub train_loss: Vec<f64>,
    pub max_accuracy: f64,
    pub final_train_loss: f64,
}

#[derive(Debug)]
pub enum TrainEvent<'a> {
    Batch {
        epoch: usize,
        batch: usize,
        indices: &'a [usize],
        loss: &'a BatchLoss,
    },
    Epoch {
        epoch: usize,
        val_accuracy: f64,
        train_loss: f64,
    },
}

pub fn train_run(
    train: &Dataset,
    val: &Dataset,
    cfg: &SSLConfig,
    cache: Option<&DistanceCache>,
) -> Result<RunResult> {
    train_run_observed(train, val, cfg, cache, |_| {})
}

/// [`train_run`] reporting every batch loss and epoch summary to `observer`.
pub fn train_run_observed<F: FnMut(TrainEvent<'_>)>(
    train: &Dataset,
    val: &Dataset,
    cfg: &SSLConfig,
    cache: Option<&DistanceCache>,
    mut observer: F,
) -> Result<RunResult> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(
            "training and validation sets must be non-empty".into(),
        ));
    }
    if val.samples.iter().any(|s| !s.is_labelled) {
        return Err(Error::Config(
            "validation set must be fully labelled".into(),
        ));
    }
    if cfg.lambda > 0.0 {
        match cache {
            None => return Err(Error::Config("lambda > 0 requires a distance cache".into())),
            Some(c) if c.len() != train.len() => {
                return Err(Error::Config(format!(
                    "distance cache covers {} samples, training set has {}",
                    c.len(),
                    train.len()
                )))
            }
            _ => {}
        }
    }
    let inputs = InputBank::new(train, cfg.standardize)?;
    let val_inputs = InputBank::new(val, cfg.standardize)?;
    if val_inputs.architecture() != inputs.architecture() {
        return Err(Error::Shape(
            "training and validation images differ in size".into(),
        ));
    }
    let val_all: Vec<usize> = (0..val.len()).collect();
    let val_labels: Vec<f64> = val.samples.iter().map(|s| s.label.as_f64()).collect();

    let mut params = init_params(inputs.architecture(), cfg.seed)?;
    let mut adam = AdamState::new(&params, cfg.adam);
    let mut schedule = BatchSchedule::new(train.len(), cfg.batch_size, cfg.seed);
    let mut val_accuracy = Vec::with_capacity(cfg.epochs);
    let mut train_loss = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let batches = schedule.next_epoch();
        let mut loss_sum = 0.0;
        for (b, batch) in batches.iter().enumerate() {
            let (loss, grads) = batch_step(&params, train, &inputs, batch, cfg, cache)?;
            adam_step(&mut params, &grads, &mut adam)?;
            loss_sum += loss.total;
            observer(TrainEvent::Batch {
                epoch,
                batch: b,
                indices: batch,
                loss: &loss,
            });
        }
        let mut predictions = Vec::with_capacity(val.len());
        for chunk in val_all.chunks(cfg.batch_size.max(1)) {
            predictions.extend(params.predict(&val_inputs.gather(chunk))?);
        }
        let acc = accuracy(&predictions, &val_labels);
        let mean_loss = loss_sum / batches.len() as f64;
        observer(TrainEvent::Epoch {
            epoch,
            val_accuracy: acc,
            train_loss: mean_loss,
        });
        val_accuracy.push(acc);
        train_loss.push(mean_loss);
    }
    Ok(RunResult {
        seed: cfg.seed,
        max_accuracy: val_accuracy
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max),
        final_train_loss: *train_loss.last().expect("epochs >= 1"),
        val_accuracy,
        train_loss,
    })
}
