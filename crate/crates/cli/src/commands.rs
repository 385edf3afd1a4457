use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use dta_core::data::{
    kfold_split, normalize_pdb_id, prepare, read_affinities, read_cache, read_descriptors, summarize, write_cache,
    write_histogram, write_summary, Dataset, DescriptorTable, DropReason, Summary,
};
use dta_core::model::{read_checkpoint, write_attention, write_checkpoint, CheckpointMeta, Model, Sample};
use dta_core::protein::{fit_normalization, DynamicDescriptor, ProteinInput};
use dta_core::smiles::MolecularGraph;
use dta_core::train::{
    ablate, build_samples, cross_validate, descriptor_ablations, fusion_ablations, pearson, rmse, sweep, train,
    write_loss_curve, write_predictions, write_sweep, write_table, CvOptions, SweepParam,
};
use serde::Deserialize;

use crate::config::{ConfigError, Loaded};
use crate::manifest::RunManifest;
use crate::FusionChoice;

/// Counts warnings for the manifest. Warnings never affect the exit code.
#[derive(Debug, Default)]
pub struct Warnings(pub usize);

impl Warnings {
    pub fn warn(&mut self, msg: impl std::fmt::Display) {
        log::warn!("{msg}");
        self.0 += 1;
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(
        File::open(path).with_context(|| format!("opening {}", path.display()))?,
    ))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    read_cache(open(path)?).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_descriptors(path: &Path) -> Result<DescriptorTable> {
    read_descriptors(open(path)?).with_context(|| format!("reading descriptors {}", path.display()))
}

fn print_summary(s: &Summary) {
    println!("targets {}  ligands {}  entries {}", s.targets, s.ligands, s.entries);
}

fn write_summaries(dataset: &Dataset, bin_width: f64, out: &Path) -> Result<Summary> {
    let summary = summarize(dataset, bin_width);
    write_summary(&summary, create(&out.join("summary.csv"))?)?;
    write_histogram(&summary, create(&out.join("histogram.csv"))?)?;
    Ok(summary)
}

pub fn prepare_cmd(affinities: &Path, descriptors: &Path, bin_width: f64, out: &Path) -> Result<()> {
    let records = read_affinities(open(affinities)?).with_context(|| format!("reading {}", affinities.display()))?;
    let table = load_descriptors(descriptors)?;
    let total = records.len();
    let (dataset, report) = prepare(records, &table);
    let mut warnings = Warnings::default();
    for d in &report.dropped {
        warnings.warn(format_args!(
            "dropped row {} ({}): {} {}",
            d.index + 1,
            d.pdb_id,
            d.reason,
            d.detail
        ));
    }
    if report.duplicates > 0 {
        warnings.warn(format_args!(
            "{} duplicate (smiles, pdb_id, measure) rows kept",
            report.duplicates
        ));
    }
    if dataset.is_empty() {
        bail!(dta_core::data::DataError::NoRecords);
    }
    out_dir(out)?;
    let cache = out.join("dataset.bin");
    write_cache(&dataset, create(&cache)?)?;
    let summary = write_summaries(&dataset, bin_width, out)?;

    let mut drops = csv::Writer::from_writer(create(&out.join("drops.csv"))?);
    drops.write_record(["row", "pdb_id", "reason", "detail"])?;
    for d in &report.dropped {
        drops.write_record([
            (d.index + 1).to_string(),
            d.pdb_id.clone(),
            d.reason.to_string(),
            d.detail.clone(),
        ])?;
    }
    drops.flush()?;

    println!(
        "{total} records read, {} kept, {} dropped",
        dataset.len(),
        report.dropped.len()
    );
    for reason in [
        DropReason::NegativeAffinity,
        DropReason::NoDescriptor,
        DropReason::InvalidSmiles,
    ] {
        let n = report.count(reason);
        if n > 0 {
            println!("  {reason}: {n}");
        }
    }
    print_summary(&summary);
    let mut manifest = RunManifest::new("prepare").with_data(&[affinities, descriptors])?;
    manifest.warnings = warnings.0;
    manifest.write(out)
}

pub fn summarize_cmd(dataset_path: &Path, bin_width: f64, out: &Path) -> Result<()> {
    let dataset = load_dataset(dataset_path)?;
    out_dir(out)?;
    print_summary(&write_summaries(&dataset, bin_width, out)?);
    RunManifest::new("summarize").with_data(&[dataset_path])?.write(out)
}

fn manifest_for(command: &str, loaded: &Loaded, data: &[&Path]) -> Result<RunManifest> {
    let mut m = RunManifest::new(command)
        .with_config(loaded.path.as_deref())?
        .with_data(data)?;
    m.seed = Some(loaded.config.train.seed);
    Ok(m)
}

fn cv_options(loaded: &Loaded, parallel: bool, keep_models: bool) -> Result<CvOptions> {
    Ok(CvOptions {
        k: loaded.config.folds,
        mask: loaded.config.mask()?,
        parallel,
        keep_models,
    })
}

fn save_checkpoint(meta: &CheckpointMeta, model: &Model, path: &Path) -> Result<()> {
    let mut w = create(path)?;
    write_checkpoint(meta, model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn train_cmd(dataset_path: &Path, loaded: &Loaded, holdout: Option<usize>, out: &Path) -> Result<()> {
    let cfg = &loaded.config;
    let dataset = load_dataset(dataset_path)?;
    let (train_idx, test_idx) = match holdout {
        Some(f) if f >= cfg.folds => {
            return Err(ConfigError(format!("holdout-fold: {f} is out of range for {} folds", cfg.folds)).into())
        }
        Some(f) => {
            let split = kfold_split(dataset.len(), cfg.folds, cfg.train.seed)?;
            (split.train_indices(f), split.test_indices(f))
        }
        None => ((0..dataset.len()).collect(), Vec::new()),
    };
    let train_set = dataset.subset(&train_idx);
    let descs: Vec<DynamicDescriptor> = train_set.records.iter().map(|r| r.descriptor).collect();
    let stats = fit_normalization(&descs)?;
    let mask = cfg.mask()?;
    let len = cfg.model.max_seq_len;
    let (xs, ys) = build_samples(&train_set, &stats, mask, len)?;
    let (vx, vy) = build_samples(&dataset.subset(&test_idx), &stats, mask, len)?;
    let validation = holdout.map(|_| (vx.as_slice(), vy.as_slice()));
    let outcome = train(&xs, &ys, &cfg.model, &cfg.train, validation)?;

    out_dir(out)?;
    let meta = CheckpointMeta {
        model: cfg.model.clone(),
        normalization: Some(stats),
        descriptor_mask: mask,
    };
    save_checkpoint(&meta, &outcome.model, &out.join("model.ckpt"))?;
    write_loss_curve(
        &outcome.loss_curve,
        &outcome.validation_rmse,
        create(&out.join("loss_curve.csv"))?,
    )?;
    let mut warnings = Warnings::default();
    if let Some(f) = holdout {
        let y_hat = outcome.model.predict(&vx)?;
        let e = rmse(&vy, &y_hat)?;
        let mut w = csv::Writer::from_writer(create(&out.join("metrics.csv"))?);
        w.write_record(["fold", "train_size", "test_size", "rmse", "pearson"])?;
        let r = match pearson(&vy, &y_hat) {
            Ok(r) => r.to_string(),
            Err(err) => {
                warnings.warn(format_args!("fold {f}: {err}"));
                "NaN".to_string()
            }
        };
        w.write_record([
            f.to_string(),
            train_idx.len().to_string(),
            test_idx.len().to_string(),
            e.to_string(),
            r,
        ])?;
        w.flush()?;
        println!("fold {f}: rmse {e:.4}");
    }
    println!(
        "{} steps, final loss {:.6}",
        outcome.steps,
        outcome.loss_curve.last().copied().unwrap_or(f64::NAN)
    );
    let mut manifest = manifest_for("train", loaded, &[dataset_path])?;
    manifest.warnings = warnings.0;
    manifest.write(out)
}

pub fn cv_cmd(dataset_path: &Path, loaded: &Loaded, parallel: bool, checkpoints: bool, out: &Path) -> Result<()> {
    let cfg = &loaded.config;
    let dataset = load_dataset(dataset_path)?;
    let opts = cv_options(loaded, parallel, checkpoints)?;
    let report = cross_validate(&dataset, &cfg.model, &cfg.train, &opts)?;
    out_dir(out)?;
    write_table(
        &[report.row(cfg.model.fusion.label())],
        create(&out.join("results.csv"))?,
    )?;
    write_predictions(&report, create(&out.join("predictions.csv"))?)?;
    let mut folds = csv::Writer::from_writer(create(&out.join("folds.csv"))?);
    folds.write_record(["fold", "train_size", "test_size", "rmse", "pearson"])?;
    for f in &report.folds {
        folds.write_record([
            f.fold.to_string(),
            f.train_indices.len().to_string(),
            f.test_indices.len().to_string(),
            f.rmse.to_string(),
            f.pearson.to_string(),
        ])?;
        write_loss_curve(
            &f.loss_curve,
            &[],
            create(&out.join(format!("loss_curve_fold{}.csv", f.fold)))?,
        )?;
        if let Some(model) = &f.model {
            let meta = CheckpointMeta {
                model: cfg.model.clone(),
                normalization: Some(f.stats),
                descriptor_mask: opts.mask,
            };
            save_checkpoint(&meta, model, &out.join(format!("fold{}.ckpt", f.fold)))?;
        }
    }
    folds.flush()?;
    println!(
        "rmse {:.4} ± {:.4}  r {:.4} ± {:.4}",
        report.rmse_mean, report.rmse_std, report.r_mean, report.r_std
    );
    manifest_for("cv", loaded, &[dataset_path])?.write(out)
}

pub fn ablate_cmd(
    dataset_path: &Path,
    loaded: &Loaded,
    fusion: Option<FusionChoice>,
    parallel: bool,
    out: &Path,
) -> Result<()> {
    let cfg = &loaded.config;
    let dataset = load_dataset(dataset_path)?;
    let ablations = match fusion {
        None => descriptor_ablations(),
        Some(FusionChoice::All) => fusion_ablations(),
        Some(FusionChoice::One(v)) => fusion_ablations().into_iter().filter(|a| a.fusion == Some(v)).collect(),
    };
    let rows = ablate(
        &dataset,
        &cfg.model,
        &cfg.train,
        &ablations,
        &cv_options(loaded, parallel, false)?,
    )?;
    out_dir(out)?;
    write_table(&rows, create(&out.join("ablation.csv"))?)?;
    for r in &rows {
        println!(
            "{:<18} rmse {:.4} ± {:.4}  r {:.4} ± {:.4}",
            r.configuration, r.rmse_mean, r.rmse_std, r.r_mean, r.r_std
        );
    }
    manifest_for("ablate", loaded, &[dataset_path])?.write(out)
}

pub fn sweep_cmd(
    dataset_path: &Path,
    loaded: &Loaded,
    param: SweepParam,
    values: Option<Vec<f64>>,
    parallel: bool,
    out: &Path,
) -> Result<()> {
    let cfg = &loaded.config;
    let dataset = load_dataset(dataset_path)?;
    let values = values.unwrap_or_else(|| param.grid());
    let rows = sweep(
        &dataset,
        &cfg.model,
        &cfg.train,
        param,
        &values,
        &cv_options(loaded, parallel, false)?,
    )?;
    out_dir(out)?;
    write_sweep(&rows, create(&out.join("sweep.csv"))?)?;
    for r in &rows {
        println!(
            "{}={:<6} rmse {:.4}  r {:.4}",
            r.parameter, r.value, r.result.rmse_mean, r.result.r_mean
        );
    }
    manifest_for("sweep", loaded, &[dataset_path])?.write(out)
}

#[derive(Debug, Deserialize)]
struct Candidate {
    smiles: String,
    protein_sequence: String,
    pdb_id: String,
}

fn load_checkpoint(path: &Path) -> Result<(CheckpointMeta, Model)> {
    let (meta, model) =
        read_checkpoint(open(path)?).with_context(|| format!("reading checkpoint {}", path.display()))?;
    if meta.normalization.is_none() {
        bail!("checkpoint {} has no normalisation statistics", path.display());
    }
    Ok((meta, model))
}

fn sample_for(
    meta: &CheckpointMeta,
    table: &DescriptorTable,
    smiles: &str,
    sequence: &str,
    pdb_id: &str,
) -> Result<Sample> {
    let graph = MolecularGraph::from_smiles(smiles).map_err(|e| anyhow!("invalid SMILES {smiles:?}: {e}"))?;
    let id = normalize_pdb_id(pdb_id);
    let raw = table.get(&id).ok_or_else(|| anyhow!("no descriptors for {id}"))?;
    let stats = meta.normalization.as_ref().expect("checked on load");
    let desc = meta.descriptor_mask.apply(stats.normalize(raw)?);
    Ok(Sample {
        graph,
        protein: ProteinInput::new(sequence, desc, meta.model.max_seq_len),
    })
}

/// Scores every candidate and writes them highest first. Rows that cannot
/// be scored are skipped with a warning.
pub fn predict_cmd(checkpoint: &Path, candidates: &Path, descriptors: &Path, out: &Path) -> Result<()> {
    let (meta, model) = load_checkpoint(checkpoint)?;
    let table = load_descriptors(descriptors)?;
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(open(candidates)?);
    let mut warnings = Warnings::default();
    let mut rows: Vec<(usize, Candidate)> = Vec::new();
    let mut samples = Vec::new();
    for (i, row) in rdr.deserialize::<Candidate>().enumerate() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            dta_core::data::DataError::Malformed {
                line,
                message: e.to_string(),
            }
        })?;
        match sample_for(&meta, &table, &row.smiles, &row.protein_sequence, &row.pdb_id) {
            Ok(s) => {
                samples.push(s);
                rows.push((i + 1, row));
            }
            Err(e) => warnings.warn(format_args!("candidate row {}: {e:#}; skipped", i + 1)),
        }
    }
    let scores = model.predict(&samples)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    out_dir(out)?;
    let mut w = csv::Writer::from_writer(create(&out.join("predictions.csv"))?);
    w.write_record(["rank", "row", "smiles", "pdb_id", "predicted_affinity"])?;
    for (rank, &i) in order.iter().enumerate() {
        let (line, c) = &rows[i];
        w.write_record([
            (rank + 1).to_string(),
            line.to_string(),
            c.smiles.clone(),
            normalize_pdb_id(&c.pdb_id),
            scores[i].to_string(),
        ])?;
    }
    w.flush()?;
    println!("{} candidates ranked, {} skipped", scores.len(), warnings.0);
    let mut manifest = RunManifest::new("predict").with_data(&[checkpoint, candidates, descriptors])?;
    manifest.warnings = warnings.0;
    manifest.write(out)
}

pub struct AttentionArgs<'a> {
    pub checkpoint: &'a Path,
    pub descriptors: &'a Path,
    pub smiles: &'a str,
    pub sequence: &'a str,
    pub pdb_id: &'a str,
    pub top: Option<usize>,
    pub out: &'a Path,
}

pub fn export_attention_cmd(a: AttentionArgs<'_>) -> Result<()> {
    let (meta, model) = load_checkpoint(a.checkpoint)?;
    let table = load_descriptors(a.descriptors)?;
    let sample = sample_for(&meta, &table, a.smiles, a.sequence, a.pdb_id)?;
    let maps = model.attention(&sample)?;
    out_dir(a.out)?;
    let path: PathBuf = a.out.join("attention.csv");
    let mut w = create(&path)?;
    write_attention(&maps, a.top, &mut w)?;
    w.flush()?;
    println!(
        "{} heads, {} positions -> {}",
        maps.dynamic.len(),
        maps.dynamic.first().map_or(0, Vec::len),
        path.display()
    );
    RunManifest::new("export-attention")
        .with_data(&[a.checkpoint, a.descriptors])?
        .write(a.out)
}
