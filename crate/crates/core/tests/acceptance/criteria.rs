use std::collections::BTreeMap;

use dta_core::data::{filter_records, kfold_split, transform_affinity, AffinityRecord, DropReason, Measure};
use dta_core::model::{FusionVariant, Model, ModelConfig};
use dta_core::protein::{fit_normalization, DynamicDescriptor};
use dta_core::smiles::{read_golden, MolecularGraph, SmilesError};
use dta_core::tensor::Tape;
use dta_core::train::{ablate, cross_validate, descriptor_ablations, fusion_ablations, sweep, CvOptions, SweepParam};
use dta_core::train::{mean_std, pearson, rmse, train, TrainConfig};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::gradients;
use crate::synth;

pub type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

pub fn gradient_suite() -> Outcome {
    let ops = gradients::per_op();
    let worst_op = ops.iter().max_by(|a, b| a.worst.total_cmp(&b.worst)).unwrap();
    for op in &ops {
        ensure(op.worst < gradients::op_tolerance(), || {
            format!("{} relative error {:.3e}", op.name, op.worst)
        })?;
    }
    let models = gradients::whole_model();
    let mut worst_model = 0.0f64;
    for m in &models {
        let worst = m.worst_coordinates.max(m.worst_direction);
        worst_model = worst_model.max(worst);
        ensure(worst < gradients::model_tolerance(), || {
            format!(
                "{} coordinates {:.3e}, direction {:.3e}",
                m.variant, m.worst_coordinates, m.worst_direction
            )
        })?;
    }
    Ok(format!(
        "{} ops x {} trials, worst {:.1e} ({}); {} fusion variants, worst {:.1e}",
        ops.len(),
        gradients::TRIALS,
        worst_op.worst,
        worst_op.name,
        models.len(),
        worst_model
    ))
}

pub fn overfit() -> Outcome {
    let model_cfg = ModelConfig {
        dropout: 0.0,
        ..synth::small_config()
    };
    let samples = synth::samples(32, 50, 50, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let targets: Vec<f64> = (0..32).map(|_| rng.gen_range(0.0..=12.0)).collect();
    let train_cfg = TrainConfig {
        epochs: 2000,
        batch_size: 32,
        seed: 3,
        ..TrainConfig::default()
    };
    let outcome = train(&samples, &targets, &model_cfg, &train_cfg, None).map_err(|e| e.to_string())?;
    let refs: Vec<_> = samples.iter().collect();
    let mse = outcome.model.loss(&refs, &targets).map_err(|e| e.to_string())?;
    ensure(outcome.steps == 2000, || format!("{} steps", outcome.steps))?;
    ensure(mse < 0.01, || format!("final MSE {mse:.4} after 2000 steps"))?;
    Ok(format!("final MSE {mse:.2e} after {} steps", outcome.steps))
}

fn oracle_rmse(y: &[f64], p: &[f64]) -> f64 {
    let d = DVector::from_column_slice(y) - DVector::from_column_slice(p);
    d.norm() / (y.len() as f64).sqrt()
}

fn oracle_pearson(y: &[f64], p: &[f64]) -> f64 {
    let a = DVector::from_column_slice(y);
    let b = DVector::from_column_slice(p);
    let a = a.add_scalar(-a.mean());
    let b = b.add_scalar(-b.mean());
    a.dot(&b) / (a.norm() * b.norm())
}

pub fn metric_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(2..64);
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..12.0)).collect();
        let p: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..12.0)).collect();
        let e_rmse = (rmse(&y, &p).unwrap() - oracle_rmse(&y, &p)).abs();
        let e_r = (pearson(&y, &p).unwrap() - oracle_pearson(&y, &p)).abs();
        worst = worst.max(e_rmse).max(e_r);
    }
    ensure(worst <= 1e-12, || format!("max deviation {worst:.3e}"))?;
    let y: Vec<f64> = (0..50).map(|_| rng.gen_range(0.0..12.0)).collect();
    let affine: Vec<f64> = y.iter().map(|v| 2.0 * v + 7.0).collect();
    let negated: Vec<f64> = y.iter().map(|v| -v).collect();
    let r_pos = pearson(&y, &affine).unwrap();
    let r_neg = pearson(&y, &negated).unwrap();
    ensure((r_pos - 1.0).abs() <= 1e-12, || format!("r(y, 2y+7) = {r_pos}"))?;
    ensure((r_neg + 1.0).abs() <= 1e-12, || format!("r(y, -y) = {r_neg}"))?;
    let (mean, std) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
    ensure(mean == 2.5 && (std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15, || {
        format!("mean/std {mean} {std}")
    })?;
    Ok(format!("1000 random pairs, max deviation {worst:.1e}"))
}

pub fn transform_anchors() -> Outcome {
    for (raw, want) in [(1e9, 0.0), (1.0, 9.0), (1000.0, 6.0)] {
        let got = transform_affinity(raw).map_err(|e| e.to_string())?;
        ensure((got - want).abs() <= 1e-12, || {
            format!("p({raw}) = {got}, expected {want}")
        })?;
    }
    let table: BTreeMap<String, DynamicDescriptor> =
        [("1ABC".to_string(), DynamicDescriptor::new(1.0, 20.0, 0.5, 0.5))]
            .into_iter()
            .collect();
    let records = vec![
        AffinityRecord::new("CCO", "ACDE", "1abc", Measure::Kd, 1e12).unwrap(),
        AffinityRecord::new("CCO", "ACDE", "1abc", Measure::Ki, 10.0).unwrap(),
    ];
    let (kept, report) = filter_records(records, &table);
    ensure(
        kept.len() == 1 && report.count(DropReason::NegativeAffinity) == 1,
        || format!("kept {}, dropped {:?}", kept.len(), report.dropped),
    )?;
    ensure(report.dropped[0].index == 0, || "wrong record dropped".into())?;
    Ok("1e9->0, 1->9, 1000->6; negative affinity dropped".into())
}

pub fn parser_corpus() -> Outcome {
    let golden = read_golden(synth::GOLDEN)?;
    ensure(golden.len() >= 20, || format!("only {} golden molecules", golden.len()))?;
    for e in &golden {
        let g = MolecularGraph::from_smiles(&e.smiles).map_err(|err| format!("{}: {err}", e.smiles))?;
        ensure((g.num_atoms(), g.num_bonds()) == (e.atoms, e.bonds), || {
            format!("{}: {} atoms {} bonds", e.smiles, g.num_atoms(), g.num_bonds())
        })?;
    }
    type Check = fn(&SmilesError) -> bool;
    let malformed: [(&str, Check); 13] = [
        ("C1CC", |e| matches!(e, SmilesError::UnmatchedRingClosure { .. })),
        ("C(C", |e| matches!(e, SmilesError::UnclosedBranch { .. })),
        ("C)C", |e| matches!(e, SmilesError::MisplacedBranch { .. })),
        ("[NH4+", |e| matches!(e, SmilesError::UnclosedBracket { .. })),
        ("C$C", |e| matches!(e, SmilesError::Lex { .. })),
        ("", |e| matches!(e, SmilesError::EmptyMolecule)),
        ("CC=", |e| matches!(e, SmilesError::DanglingBond { .. })),
        ("C[C@H](N)O", |e| matches!(e, SmilesError::Unsupported { .. })),
        ("CC.O", |e| matches!(e, SmilesError::Unsupported { .. })),
        ("C=1CC#1", |e| matches!(e, SmilesError::RingBondConflict { .. })),
        ("C11", |e| matches!(e, SmilesError::SelfBond { .. })),
        ("C12CC12", |e| matches!(e, SmilesError::DuplicateBond { .. })),
        ("1CC", |e| matches!(e, SmilesError::MisplacedRing { .. })),
    ];
    for (s, check) in malformed {
        match MolecularGraph::from_smiles(s) {
            Ok(_) => return Err(format!("{s:?} parsed")),
            Err(e) if check(&e) => {}
            Err(e) => return Err(format!("{s:?} gave {e:?}")),
        }
    }
    Ok(format!(
        "{} golden molecules, {} malformed inputs",
        golden.len(),
        malformed.len()
    ))
}

pub fn normalization() -> Outcome {
    let ds = synth::dataset(40, 30, 31);
    let descs: Vec<DynamicDescriptor> = ds.records.iter().map(|r| r.descriptor).collect();
    let stats = fit_normalization(&descs).map_err(|e| e.to_string())?;
    for i in 0..4 {
        let at_min = descs.iter().find(|d| d.as_array()[i] == stats.min[i]).unwrap();
        let at_max = descs.iter().find(|d| d.as_array()[i] == stats.max[i]).unwrap();
        ensure(stats.normalize(at_min).unwrap()[i] == 0.0, || {
            format!("column {i} min not 0")
        })?;
        ensure(stats.normalize(at_max).unwrap()[i] == 1.0, || {
            format!("column {i} max not 1")
        })?;
    }
    let wild = DynamicDescriptor::new(-1e6, 1e6, -5.0, 50.0);
    let clamped = stats.normalize(&wild).unwrap();
    ensure(clamped == [0.0, 1.0, 0.0, 1.0], || format!("clamped {clamped:?}"))?;

    let model_cfg = synth::toy_config();
    let train_cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 5,
        ..TrainConfig::default()
    };
    let opts = CvOptions {
        k: 4,
        keep_models: true,
        ..CvOptions::default()
    };
    let ds = synth::dataset(24, 30, 32);
    let fold = 2;
    let split = kfold_split(ds.len(), opts.k, train_cfg.seed).unwrap();
    let mut poisoned = ds.clone();
    for i in split.test_indices(fold) {
        poisoned.records[i].descriptor = DynamicDescriptor::new(1e9, -1e9, 1e9, -1e9);
    }
    let clean = cross_validate(&ds, &model_cfg, &train_cfg, &opts).map_err(|e| e.to_string())?;
    let dirty = cross_validate(&poisoned, &model_cfg, &train_cfg, &opts).map_err(|e| e.to_string())?;
    let (a, b) = (&clean.folds[fold], &dirty.folds[fold]);
    ensure(a.stats == b.stats, || "fold statistics saw held-out records".into())?;
    ensure(a.model == b.model && a.model.is_some(), || "fold model changed".into())?;
    let other = (fold + 1) % opts.k;
    ensure(clean.folds[other].stats != dirty.folds[other].stats, || {
        "sentinel never reached a training fold".into()
    })?;
    Ok("endpoints exact, clamped, fold statistics isolated".into())
}

pub fn fusion_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let d = 5;
    let mut row = || -> Vec<f64> { (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect() };
    let (t, dy, l) = (row(), row(), row());
    let mut tape = Tape::new();
    let vt = tape.constant(vec![1, d], t.clone()).unwrap();
    let vd = tape.constant(vec![1, d], dy.clone()).unwrap();
    let vl = tape.constant(vec![1, d], l.clone()).unwrap();
    let z = Model::fuse_variant(&mut tape, vt, vd, vl, FusionVariant::Tfn).unwrap();
    let z = tape.value(z).unwrap().to_vec();
    let n = d + 1;
    ensure(z.len() == n * n * n, || format!("width {}", z.len()))?;
    let at = |i: usize, j: usize, k: usize| z[(i * n + j) * n + k];
    let ext = |v: &[f64], i: usize| if i == d { 1.0 } else { v[i] };
    let mut worst = (at(d, d, d) - 1.0).abs();
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                let want = ext(&t, i) * ext(&dy, j) * ext(&l, k);
                worst = worst.max((at(i, j, k) - want).abs());
            }
        }
    }
    for i in 0..d {
        worst = worst.max((at(i, d, d) - t[i]).abs());
        worst = worst.max((at(d, i, d) - dy[i]).abs());
        worst = worst.max((at(d, d, i) - l[i]).abs());
        for j in 0..d {
            worst = worst.max((at(i, j, d) - t[i] * dy[j]).abs());
            worst = worst.max((at(d, i, j) - dy[i] * l[j]).abs());
            worst = worst.max((at(i, d, j) - t[i] * l[j]).abs());
        }
    }
    ensure(at(d, d, d) == 1.0, || format!("constant entry {}", at(d, d, d)))?;
    ensure(worst <= 1e-15, || format!("sub-block deviation {worst:.3e}"))?;

    let samples = synth::samples(3, 20, 24, 42);
    for variant in FusionVariant::ALL {
        let cfg = ModelConfig {
            fusion: variant,
            ..synth::toy_config()
        };
        let model = Model::new(cfg.clone(), 1).map_err(|e| e.to_string())?;
        let w = model.params().get("fusion.weight").unwrap().shape().to_vec();
        ensure(w == [variant.width(cfg.embed_dim), cfg.fusion_out], || {
            format!("{variant}: fusion weight {w:?}")
        })?;
        let preds = model.predict(&samples).map_err(|e| e.to_string())?;
        ensure(preds.len() == 3 && preds.iter().all(|p| p.is_finite()), || {
            format!("{variant}: predictions {preds:?}")
        })?;
    }
    Ok(format!("tensor product exact (max {worst:.0e}); all 5 variants run"))
}

pub fn attention_contract() -> Outcome {
    let samples = synth::samples(6, 40, 24, 51);
    let mut worst = 0.0f64;
    for pre_pool in [true, false] {
        let cfg = ModelConfig {
            attend_pre_pool: pre_pool,
            ..synth::toy_config()
        };
        let model = Model::new(cfg.clone(), 52).map_err(|e| e.to_string())?;
        for s in &samples {
            let maps = model.attention(s).map_err(|e| e.to_string())?;
            ensure(
                maps.target.len() == cfg.attention_heads && maps.dynamic.len() == cfg.attention_heads,
                || "head count".into(),
            )?;
            let keys = if pre_pool { cfg.conv_positions() } else { 1 };
            for (w, n) in maps
                .target
                .iter()
                .map(|w| (w, 1))
                .chain(maps.dynamic.iter().map(|w| (w, keys)))
            {
                ensure(w.len() == n && w.iter().all(|&x| x >= 0.0), || format!("weights {w:?}"))?;
                worst = worst.max((w.iter().sum::<f64>() - 1.0).abs());
            }

            // One key: the target direction returns the value projection unchanged.
            let mut tape = Tape::new();
            let p = model.bind(&mut tape);
            let enc = model.encode(&mut tape, &p, s).map_err(|e| e.to_string())?;
            let ((t_out, _), _) = model.cross_attention(&mut tape, &p, &enc).map_err(|e| e.to_string())?;
            let params = model.params();
            let wv = p[params.index_of("attn.dynamic.value").unwrap()];
            let wo = p[params.index_of("attn.target.out").unwrap()];
            let v = tape.matmul(enc.dynamic, wv).unwrap();
            let expected = tape.matmul(v, wo).unwrap();
            ensure(tape.value(t_out).unwrap() == tape.value(expected).unwrap(), || {
                "single-key output differs from value projection".into()
            })?;
        }
    }
    ensure(worst <= 1e-12, || format!("row sum deviation {worst:.3e}"))?;
    Ok(format!("row sums within {worst:.0e}; single key exact"))
}

pub fn protocol_properties() -> Outcome {
    for n in [5usize, 17, 64, 101] {
        for k in [2usize, 3, 5] {
            let sizes = kfold_split(n, k, n as u64).unwrap().sizes();
            let spread = sizes.iter().max().unwrap() - sizes.iter().min().unwrap();
            ensure(spread <= 1 && sizes.iter().sum::<usize>() == n, || {
                format!("n={n} k={k}: {sizes:?}")
            })?;
        }
    }
    let ds = synth::dataset(25, 30, 61);
    let model_cfg = synth::toy_config();
    let train_cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        seed: 9,
        ..TrainConfig::default()
    };
    let opts = CvOptions::default();
    let a = cross_validate(&ds, &model_cfg, &train_cfg, &opts).map_err(|e| e.to_string())?;
    let b = cross_validate(&ds, &model_cfg, &train_cfg, &opts).map_err(|e| e.to_string())?;
    ensure(a.folds.len() == 5, || format!("{} fold rows", a.folds.len()))?;
    let rm: Vec<f64> = a.folds.iter().map(|f| f.rmse).collect();
    let m = rm.iter().sum::<f64>() / 5.0;
    let s = (rm.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0).sqrt();
    ensure(
        (a.rmse_mean - m).abs() <= 1e-12 && (a.rmse_std - s).abs() <= 1e-12,
        || format!("aggregate {} {} vs {m} {s}", a.rmse_mean, a.rmse_std),
    )?;
    ensure(a == b, || "repeat run differs".into())?;
    Ok("folds balanced, aggregates exact, runs reproducible".into())
}

pub fn harness_completeness() -> Outcome {
    let ds = synth::dataset(30, 50, 71);
    let base = synth::small_config();
    let train_cfg = TrainConfig {
        epochs: 2,
        batch_size: 16,
        seed: 1,
        ..TrainConfig::default()
    };
    let opts = CvOptions {
        k: 3,
        ..CvOptions::default()
    };
    let rows = ablate(&ds, &base, &train_cfg, &descriptor_ablations(), &opts).map_err(|e| e.to_string())?;
    let fusion = ablate(&ds, &base, &train_cfg, &fusion_ablations(), &opts).map_err(|e| e.to_string())?;
    ensure(rows.len() == 6 && fusion.len() == 5, || {
        format!("{} + {} rows", rows.len(), fusion.len())
    })?;
    let finite = |r: &dta_core::train::ResultRow| {
        r.rmse_mean.is_finite() && r.rmse_std.is_finite() && r.r_mean.is_finite() && r.r_std.is_finite()
    };
    ensure(rows.iter().chain(&fusion).all(finite), || "non-finite row".into())?;
    let mut sweep_rows = 0;
    for param in SweepParam::ALL {
        let grid = param.grid();
        let out = sweep(&ds, &base, &train_cfg, param, &grid, &opts).map_err(|e| e.to_string())?;
        ensure(out.len() == grid.len() && out.iter().all(|r| finite(&r.result)), || {
            format!("{param} sweep rows {}", out.len())
        })?;
        sweep_rows += out.len();
    }
    Ok(format!("6 + 5 ablation rows, {sweep_rows} sweep rows over 4 grids"))
}
