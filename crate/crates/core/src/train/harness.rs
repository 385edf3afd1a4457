use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rayon::prelude::*;

use super::{build_samples, mean_std, pearson, rmse, train, Result, TrainConfig, TrainError};
use crate::data::{kfold_split, Dataset};
use crate::model::{DescriptorMask, FusionVariant, Model, ModelConfig, ModelError};
use crate::protein::{fit_normalization, DynamicDescriptor, NormalizationStats};

#[derive(Debug, Clone, PartialEq)]
pub struct CvOptions {
    pub k: usize,
    pub mask: DescriptorMask,
    /// Train folds on the rayon pool.
    pub parallel: bool,
    /// Keep each fold's trained model in the report.
    pub keep_models: bool,
}

impl Default for CvOptions {
    fn default() -> Self {
        Self {
            k: 5,
            mask: DescriptorMask::NONE,
            parallel: false,
            keep_models: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldResult {
    pub fold: usize,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
    /// Fitted on this fold's training records only.
    pub stats: NormalizationStats,
    pub rmse: f64,
    pub pearson: f64,
    pub loss_curve: Vec<f64>,
    /// `(record index, y, ŷ)` for the held-out records.
    pub predictions: Vec<(usize, f64, f64)>,
    pub model: Option<Model>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub folds: Vec<FoldResult>,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub r_mean: f64,
    pub r_std: f64,
}

impl EvalReport {
    fn from_folds(folds: Vec<FoldResult>) -> Self {
        let (rmse_mean, rmse_std) = mean_std(&folds.iter().map(|f| f.rmse).collect::<Vec<_>>());
        let (r_mean, r_std) = mean_std(&folds.iter().map(|f| f.pearson).collect::<Vec<_>>());
        Self {
            folds,
            rmse_mean,
            rmse_std,
            r_mean,
            r_std,
        }
    }

    pub fn row(&self, configuration: &str) -> ResultRow {
        ResultRow {
            configuration: configuration.to_string(),
            rmse_mean: self.rmse_mean,
            rmse_std: self.rmse_std,
            r_mean: self.r_mean,
            r_std: self.r_std,
        }
    }
}

fn descriptors(dataset: &Dataset, indices: &[usize]) -> Vec<DynamicDescriptor> {
    indices.iter().map(|&i| dataset.records[i].descriptor).collect()
}

/// Trains on `train_indices` and scores the held-out `test_indices`.
pub(crate) fn run_fold(
    dataset: &Dataset,
    fold: usize,
    train_indices: Vec<usize>,
    test_indices: Vec<usize>,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    opts: &CvOptions,
) -> Result<FoldResult> {
    let stats = fit_normalization(&descriptors(dataset, &train_indices))?;
    let len = model_config.max_seq_len;
    let (train_x, train_y) = build_samples(&dataset.subset(&train_indices), &stats, opts.mask, len)?;
    let (test_x, test_y) = build_samples(&dataset.subset(&test_indices), &stats, opts.mask, len)?;
    let fold_config = TrainConfig {
        seed: train_config.seed.wrapping_add(fold as u64),
        ..train_config.clone()
    };
    let outcome = train(&train_x, &train_y, model_config, &fold_config, None)?;
    let y_hat = outcome.model.predict(&test_x)?;
    log::info!(
        "fold {fold}: {} train, {} test",
        train_indices.len(),
        test_indices.len()
    );
    Ok(FoldResult {
        fold,
        rmse: rmse(&test_y, &y_hat)?,
        pearson: pearson(&test_y, &y_hat)?,
        predictions: test_indices
            .iter()
            .zip(test_y.iter().zip(&y_hat))
            .map(|(&i, (&y, &p))| (i, y, p))
            .collect(),
        loss_curve: outcome.loss_curve,
        model: opts.keep_models.then_some(outcome.model),
        train_indices,
        test_indices,
        stats,
    })
}

/// k-fold cross-validation. Normalisation statistics and parameters of a
/// fold only ever see that fold's training records.
pub fn cross_validate(
    dataset: &Dataset,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    opts: &CvOptions,
) -> Result<EvalReport> {
    model_config.validate()?;
    train_config.validate()?;
    if opts.k < 2 {
        return Err(TrainError::InvalidConfig {
            field: "k",
            reason: "need at least two folds".into(),
        });
    }
    let split = kfold_split(dataset.len(), opts.k, train_config.seed)?;
    let job = |fold: usize| {
        run_fold(
            dataset,
            fold,
            split.train_indices(fold),
            split.test_indices(fold),
            model_config,
            train_config,
            opts,
        )
    };
    let folds: Vec<FoldResult> = if opts.parallel {
        (0..opts.k).into_par_iter().map(job).collect::<Result<_>>()?
    } else {
        (0..opts.k).map(job).collect::<Result<_>>()?
    };
    Ok(EvalReport::from_folds(folds))
}

/// One results-table row: mean and sample std over folds.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRow {
    pub configuration: String,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub r_mean: f64,
    pub r_std: f64,
}

/// One configuration of an ablation run.
#[derive(Debug, Clone, PartialEq)]
pub struct Ablation {
    pub name: String,
    /// Force dilation 1 in every conv layer.
    pub standard_conv: bool,
    pub mask: DescriptorMask,
    pub fusion: Option<FusionVariant>,
}

impl Ablation {
    fn new(name: &str, standard_conv: bool, mask: [bool; 4], fusion: Option<FusionVariant>) -> Self {
        Self {
            name: name.to_string(),
            standard_conv,
            mask: DescriptorMask(mask),
            fusion,
        }
    }

    pub fn apply(&self, base: &ModelConfig) -> ModelConfig {
        ModelConfig {
            dilated: base.dilated && !self.standard_conv,
            fusion: self.fusion.unwrap_or(base.fusion),
            ..base.clone()
        }
    }
}

/// Convolution and descriptor ablations followed by the full model.
pub fn descriptor_ablations() -> Vec<Ablation> {
    vec![
        Ablation::new("w/o Dilated", true, [false; 4], None),
        Ablation::new("w/o RMSF+Gyr", false, [true, true, false, false], None),
        Ablation::new("w/o SE+MM", false, [false, false, true, true], None),
        Ablation::new("w/o RMSF+Gyr+SE", false, [true, true, true, false], None),
        Ablation::new("w/o Gyr+SE+MM", false, [false, true, true, true], None),
        Ablation::new("DynamicDTA", false, [false; 4], None),
    ]
}

pub fn fusion_ablations() -> Vec<Ablation> {
    FusionVariant::ALL
        .iter()
        .map(|&v| Ablation::new(v.label(), false, [false; 4], Some(v)))
        .collect()
}

/// Cross-validates every ablation and returns one row each, in order.
pub fn ablate(
    dataset: &Dataset,
    base: &ModelConfig,
    train_config: &TrainConfig,
    ablations: &[Ablation],
    opts: &CvOptions,
) -> Result<Vec<ResultRow>> {
    ablations
        .iter()
        .map(|a| {
            log::info!("ablation {}", a.name);
            let cfg = a.apply(base);
            let run_opts = CvOptions {
                mask: a.mask,
                keep_models: false,
                ..opts.clone()
            };
            Ok(cross_validate(dataset, &cfg, train_config, &run_opts)?.row(&a.name))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SweepParam {
    /// Dropout rate.
    P,
    /// Dilation rate.
    D,
    /// Attention heads.
    H,
    /// GCN layers.
    L,
}

impl SweepParam {
    pub const ALL: [SweepParam; 4] = [SweepParam::P, SweepParam::D, SweepParam::H, SweepParam::L];

    /// Reference grid for the parameter.
    pub fn grid(self) -> Vec<f64> {
        match self {
            SweepParam::P => vec![0.1, 0.2, 0.3, 0.4],
            SweepParam::D => vec![2.0, 4.0, 6.0, 8.0],
            SweepParam::H => vec![2.0, 4.0, 8.0, 16.0],
            SweepParam::L => vec![1.0, 3.0, 5.0, 7.0],
        }
    }

    fn name(self) -> &'static str {
        match self {
            SweepParam::P => "P",
            SweepParam::D => "D",
            SweepParam::H => "H",
            SweepParam::L => "L",
        }
    }

    /// Returns `base` with the parameter set to `value`.
    pub fn apply(self, base: &ModelConfig, value: f64) -> Result<ModelConfig> {
        let invalid = |reason: String| TrainError::InvalidValue {
            parameter: self.name(),
            value,
            reason,
        };
        let integer = || {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(invalid("must be a positive integer".into()))
            }
        };
        let cfg = match self {
            SweepParam::P => ModelConfig {
                dropout: value,
                ..base.clone()
            },
            SweepParam::D => ModelConfig {
                dilation_rate: integer()?,
                ..base.clone()
            },
            SweepParam::H => ModelConfig {
                attention_heads: integer()?,
                ..base.clone()
            },
            SweepParam::L => ModelConfig {
                gcn_layers: integer()?,
                ..base.clone()
            },
        };
        match cfg.validate() {
            Ok(()) => Ok(cfg),
            Err(ModelError::InvalidConfig { reason, .. }) => Err(invalid(reason)),
            Err(e) => Err(e.into()),
        }
    }
}

impl FromStr for SweepParam {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "p" | "dropout" => Ok(SweepParam::P),
            "d" | "dilation" => Ok(SweepParam::D),
            "h" | "heads" => Ok(SweepParam::H),
            "l" | "layers" => Ok(SweepParam::L),
            other => Err(format!("unknown sweep parameter {other:?}; expected P, D, H or L")),
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub parameter: SweepParam,
    pub value: f64,
    pub result: ResultRow,
}

/// One cross-validation per value. Every value is checked before any run.
pub fn sweep(
    dataset: &Dataset,
    base: &ModelConfig,
    train_config: &TrainConfig,
    parameter: SweepParam,
    values: &[f64],
    opts: &CvOptions,
) -> Result<Vec<SweepRow>> {
    let configs: Vec<ModelConfig> = values
        .iter()
        .map(|&v| parameter.apply(base, v))
        .collect::<Result<_>>()?;
    configs
        .iter()
        .zip(values)
        .map(|(cfg, &value)| {
            log::info!("sweep {parameter}={value}");
            let run_opts = CvOptions {
                keep_models: false,
                ..opts.clone()
            };
            let report = cross_validate(dataset, cfg, train_config, &run_opts)?;
            Ok(SweepRow {
                parameter,
                value,
                result: report.row(&format!("{parameter}={value}")),
            })
        })
        .collect()
}

fn csv_io(e: csv::Error) -> std::io::Error {
    e.into()
}

pub fn write_table<W: Write>(rows: &[ResultRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["configuration", "rmse_mean", "rmse_std", "r_mean", "r_std"])
        .map_err(csv_io)?;
    for r in rows {
        w.write_record([
            r.configuration.clone(),
            r.rmse_mean.to_string(),
            r.rmse_std.to_string(),
            r.r_mean.to_string(),
            r.r_std.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()
}

pub fn write_sweep<W: Write>(rows: &[SweepRow], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["parameter", "value", "rmse_mean", "rmse_std", "r_mean", "r_std"])
        .map_err(csv_io)?;
    for r in rows {
        w.write_record([
            r.parameter.to_string(),
            r.value.to_string(),
            r.result.rmse_mean.to_string(),
            r.result.rmse_std.to_string(),
            r.result.r_mean.to_string(),
            r.result.r_std.to_string(),
        ])
        .map_err(csv_io)?;
    }
    w.flush()
}

/// `epoch,train_loss,validation_rmse`; the last column is empty when absent.
pub fn write_loss_curve<W: Write>(loss: &[f64], validation: &[f64], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "validation_rmse"])
        .map_err(csv_io)?;
    for (i, l) in loss.iter().enumerate() {
        let v = validation.get(i).map(f64::to_string).unwrap_or_default();
        w.write_record([(i + 1).to_string(), l.to_string(), v])
            .map_err(csv_io)?;
    }
    w.flush()
}

/// `fold,record_index,y,y_hat` for every held-out prediction.
pub fn write_predictions<W: Write>(report: &EvalReport, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["fold", "record_index", "y", "y_hat"]).map_err(csv_io)?;
    for f in &report.folds {
        for &(i, y, p) in &f.predictions {
            w.write_record([f.fold.to_string(), i.to_string(), y.to_string(), p.to_string()])
                .map_err(csv_io)?;
        }
    }
    w.flush()
}
