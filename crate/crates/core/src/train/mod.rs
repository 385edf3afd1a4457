//! Optimisation, metrics and the cross-validation harnesses.

mod harness;


use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{DataError, Dataset};
use crate::model::{DescriptorMask, Mode, Model, ModelConfig, ModelError, ModelParams, Sample};
use crate::protein::{NormalizationStats, ProteinError, ProteinInput};
use crate::smiles::{MolecularGraph, SmilesError};

pub use harness::{
    ablate, cross_validate, descriptor_ablations, fusion_ablations, sweep, write_loss_curve, write_predictions,
    write_sweep, write_table, Ablation, CvOptions, EvalReport, FoldResult, ResultRow, SweepParam, SweepRow,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Protein(#[from] ProteinError),
    #[error("record {index}: {source}")]
    Smiles { index: usize, source: SmilesError },
    #[error("no gradient for parameter {0}")]
    MissingGradient(String),
    #[error("parameter {0} became non-finite")]
    NonFinite(String),
    #[error("invalid train config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    EmptyInput,
    #[error("pearson correlation undefined: zero variance")]
    ZeroVariance,
    #[error("invalid value {value} for {parameter}: {reason}")]
    InvalidValue {
        parameter: &'static str,
        value: f64,
        reason: String,
    },
}

pub type Result<T> = std::result::Result<T, TrainError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop after this many epochs without validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 512,
            learning_rate: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            patience: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |field, reason: &str| {
            Err(TrainError::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        if self.epochs == 0 {
            return bad("epochs", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be positive");
        }
        if !(0.0..1.0).contains(&self.learning_rate) {
            return bad("learning_rate", "must lie in [0, 1)");
        }
        for (field, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(field, "must lie in [0, 1)");
            }
        }
        if !(self.epsilon > 0.0) {
            return bad("epsilon", "must be positive");
        }
        if self.patience == Some(0) {
            return bad("patience", "must be positive when set");
        }
        Ok(())
    }
}

/// Adam with bias correction; moments are kept per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: &TrainConfig, params: &ModelParams) -> Self {
        let sizes: Vec<usize> = params.tensors().iter().map(|t| t.numel()).collect();
        Self::for_sizes(config, &sizes)
    }

    /// State for a list of flat parameter buffers of the given lengths.
    pub fn for_sizes(config: &TrainConfig, sizes: &[usize]) -> Self {
        let zeros: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
        Self {
            learning_rate: config.learning_rate,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &[Option<Vec<f64>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(TrainError::LengthMismatch(grads.len(), params.len()));
        }
        let mut flat = Vec::with_capacity(grads.len());
        for (i, g) in grads.iter().enumerate() {
            match g {
                Some(g) if g.len() == params.tensors()[i].numel() => flat.push(g.as_slice()),
                _ => return Err(TrainError::MissingGradient(params.names()[i].clone())),
            }
        }
        let mut buffers: Vec<&mut [f64]> = params.tensors_mut().iter_mut().map(|t| t.data_mut()).collect();
        self.step_slices(&mut buffers, &flat)?;
        if let Some(i) = params.tensors().iter().position(|t| !t.is_finite()) {
            return Err(TrainError::NonFinite(params.names()[i].clone()));
        }
        Ok(())
    }

    /// One update of every buffer; lengths must match the state sizes.
    pub fn step_slices(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::LengthMismatch(params.len(), self.m.len()));
        }
        for i in 0..self.m.len() {
            if params[i].len() != self.m[i].len() || grads[i].len() != self.m[i].len() {
                return Err(TrainError::LengthMismatch(params[i].len(), self.m[i].len()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let data = &mut params[i];
            for j in 0..g.len() {
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g[j];
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                data[j] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

fn check_pair(y: &[f64], y_hat: &[f64]) -> Result<()> {
    if y.len() != y_hat.len() {
        return Err(TrainError::LengthMismatch(y.len(), y_hat.len()));
    }
    if y.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    Ok(())
}

pub fn rmse(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let sse: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sse / y.len() as f64).sqrt())
}

pub fn pearson(y: &[f64], y_hat: &[f64]) -> Result<f64> {
    check_pair(y, y_hat)?;
    let n = y.len() as f64;
    let my = y.iter().sum::<f64>() / n;
    let mp = y_hat.iter().sum::<f64>() / n;
    let (mut cov, mut vy, mut vp) = (0.0, 0.0, 0.0);
    for (a, b) in y.iter().zip(y_hat) {
        let (da, db) = (a - my, b - mp);
        cov += da * db;
        vy += da * da;
        vp += db * db;
    }
    if vy == 0.0 || vp == 0.0 {
        return Err(TrainError::ZeroVariance);
    }
    Ok((cov / (vy.sqrt() * vp.sqrt())).clamp(-1.0, 1.0))
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Parses SMILES and normalises descriptors for every record of `dataset`.
pub fn build_samples(
    dataset: &Dataset,
    stats: &NormalizationStats,
    mask: DescriptorMask,
    max_seq_len: usize,
) -> Result<(Vec<Sample>, Vec<f64>)> {
    let mut samples = Vec::with_capacity(dataset.len());
    let mut targets = Vec::with_capacity(dataset.len());
    for (index, p) in dataset.records.iter().enumerate() {
        let graph =
            MolecularGraph::from_smiles(&p.record.smiles).map_err(|source| TrainError::Smiles { index, source })?;
        let descriptors = mask.apply(stats.normalize(&p.descriptor)?);
        samples.push(Sample {
            graph,
            protein: ProteinInput::new(&p.record.protein_sequence, descriptors, max_seq_len),
        });
        targets.push(p.record.affinity);
    }
    Ok((samples, targets))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub model: Model,
    /// Sample-weighted mean minibatch loss per epoch, measured before each update.
    pub loss_curve: Vec<f64>,
    /// Validation RMSE per epoch, when a validation set was given.
    pub validation_rmse: Vec<f64>,
    pub steps: u64,
}

/// Minibatch MSE training from a freshly initialised model. Shuffling and
/// dropout draw from one stream seeded by `train.seed`.
pub fn train(
    samples: &[Sample],
    targets: &[f64],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    validation: Option<(&[Sample], &[f64])>,
) -> Result<TrainOutcome> {
    let model = Model::new(model_config.clone(), train_config.seed)?;
    train_from(model, samples, targets, train_config, validation)
}

/// As [`train`], continuing from an existing model.
pub fn train_from(
    mut model: Model,
    samples: &[Sample],
    targets: &[f64],
    config: &TrainConfig,
    validation: Option<(&[Sample], &[f64])>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if samples.len() != targets.len() {
        return Err(TrainError::LengthMismatch(samples.len(), targets.len()));
    }
    if samples.is_empty() {
        return Err(TrainError::EmptyInput);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_5eed_5eed_5eed);
    let mut adam = Adam::new(config, model.params());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut loss_curve = Vec::with_capacity(config.epochs);
    let mut validation_rmse = Vec::new();
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let y: Vec<f64> = chunk.iter().map(|&i| targets[i]).collect();
            let (loss, grads) = model.loss_and_gradients(&batch, &y, Mode::Train, &mut rng)?;
            weighted += loss * chunk.len() as f64;
            adam.step(model.params_mut(), &grads)?;
        }
        let epoch_loss = weighted / samples.len() as f64;
        loss_curve.push(epoch_loss);
        log::debug!("epoch {epoch}: loss {epoch_loss:.6}");
        if let Some((vs, vy)) = validation {
            let score = rmse(vy, &model.predict(vs)?)?;
            validation_rmse.push(score);
            if score < best {
                best = score;
                stale = 0;
            } else {
                stale += 1;
                if config.patience.is_some_and(|p| stale >= p) {
                    log::info!("early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    Ok(TrainOutcome {
        model,
        loss_curve,
        validation_rmse,
        steps: adam.steps(),
    })
}
