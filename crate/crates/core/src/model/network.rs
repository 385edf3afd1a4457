use std::io::Write;

use rand::Rng;

use super::params::{Affine, AttnSide};
use super::{FusionVariant, ModelConfig, ModelError, ModelParams, Result, Sample};
use crate::smiles::MolecularGraph;
use crate::tensor::{Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Parameter handles on one tape, in [`ModelParams`] order.
pub struct Bound(Vec<Var>);

impl Bound {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl std::ops::Index<usize> for Bound {
    type Output = Var;

    fn index(&self, i: usize) -> &Var {
        &self.0[i]
    }
}

/// Per-head attention weight rows: target direction, then dynamic direction.
pub type HeadWeights = (Vec<Var>, Vec<Var>);

/// Encoder outputs for one sample. Vectors are `[1×d]` rows.
#[derive(Debug, Clone, Copy)]
pub struct Encoded {
    pub ligand: Var,
    pub target: Var,
    /// Pre-pooling conv features, `[positions×d]`.
    pub target_map: Var,
    pub dynamic: Var,
}

/// Attention weights per head, each a distribution over keys.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    /// Target query over the single descriptor key.
    pub target: Vec<Vec<f64>>,
    /// Descriptor query over conv positions, or over the pooled target
    /// vector when pre-pool attention is off.
    pub dynamic: Vec<Vec<f64>>,
}

impl AttentionMaps {
    /// Head-averaged descriptor-to-target weights.
    pub fn dynamic_mean(&self) -> Vec<f64> {
        let heads = self.dynamic.len() as f64;
        let n = self.dynamic.first().map_or(0, Vec::len);
        (0..n)
            .map(|p| self.dynamic.iter().map(|h| h[p]).sum::<f64>() / heads)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = ModelParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = super::params::layout(&config);
        let names_match = slots.len() == params.len()
            && slots
                .iter()
                .zip(params.tensors())
                .zip(params.names())
                .all(|((s, t), n)| s.name == *n && s.shape == t.shape());
        if layout != params.layout || !names_match {
            return Err(ModelError::Checkpoint("parameters do not match config".into()));
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Bound {
        Bound(self.params.tensors().iter().map(|t| tape.param(t)).collect())
    }

    fn affine(tape: &mut Tape<'_>, p: &Bound, x: Var, a: Affine) -> Result<Var> {
        let y = tape.matmul(x, p[a.w])?;
        Ok(tape.add_bias(y, p[a.b])?)
    }

    /// Stacked `ReLU(Â · H · W)` rounds then a max-pool over atoms.
    pub fn graph_encoder(&self, tape: &mut Tape<'_>, p: &Bound, g: &MolecularGraph) -> Result<Var> {
        let n = g.num_atoms();
        let mut h = tape.constant(vec![n, g.feature_width()], g.node_features().to_vec())?;
        let adj = tape.constant(vec![n, n], g.norm_adjacency().to_vec())?;
        for &w in &self.params.layout.gcn {
            let hw = tape.matmul(h, p[w])?;
            let mixed = tape.matmul(adj, hw)?;
            h = tape.relu(mixed)?;
        }
        let pooled = tape.global_max_pool(h)?;
        Ok(tape.reshape(pooled, vec![1, self.config.embed_dim])?)
    }

    /// Returns the pooled `[1×d]` vector and the `[positions×d]` feature map.
    pub fn sequence_encoder(&self, tape: &mut Tape<'_>, p: &Bound, ids: &[usize]) -> Result<(Var, Var)> {
        let emb = tape.embedding_lookup(p[self.params.layout.embedding], ids)?;
        let mut x = tape.transpose(emb)?;
        for (a, dilation) in self.params.layout.conv.iter().zip(self.config.dilations()) {
            let c = tape.conv1d_dilated(x, p[a.w], p[a.b], dilation)?;
            x = tape.relu(c)?;
        }
        let map = tape.transpose(x)?;
        let pooled = tape.global_max_pool(map)?;
        let pooled = tape.reshape(pooled, vec![1, self.config.embed_dim])?;
        Ok((pooled, map))
    }

    pub fn vector_encoder(&self, tape: &mut Tape<'_>, p: &Bound, v: [f64; 4]) -> Result<Var> {
        let mut x = tape.constant(vec![1, 4], v.to_vec())?;
        for &a in &self.params.layout.mlp {
            let y = Self::affine(tape, p, x, a)?;
            x = tape.relu(y)?;
        }
        Ok(x)
    }

    pub fn encode(&self, tape: &mut Tape<'_>, p: &Bound, sample: &Sample) -> Result<Encoded> {
        let ligand = self.graph_encoder(tape, p, &sample.graph)?;
        let (target, target_map) = self.sequence_encoder(tape, p, &sample.protein.sequence_ids)?;
        let dynamic = self.vector_encoder(tape, p, sample.protein.descriptors)?;
        Ok(Encoded {
            ligand,
            target,
            target_map,
            dynamic,
        })
    }

    /// Multi-head attention of a `[1×d]` query source over `[N×d]` key/value
    /// rows. Returns the projected output and one `[1×N]` weight row per head.
    fn attend(
        &self,
        tape: &mut Tape<'_>,
        p: &Bound,
        query_src: Var,
        key_src: Var,
        query_side: AttnSide,
        key_side: AttnSide,
    ) -> Result<(Var, Vec<Var>)> {
        let dk = self.config.head_dim();
        let q = tape.matmul(query_src, p[query_side.query])?;
        let k = tape.matmul(key_src, p[key_side.key])?;
        let v = tape.matmul(key_src, p[key_side.value])?;
        let mut heads = Vec::with_capacity(self.config.attention_heads);
        let mut weights = Vec::with_capacity(self.config.attention_heads);
        for h in 0..self.config.attention_heads {
            let qh = tape.slice_last(q, h * dk, dk)?;
            let kh = tape.slice_last(k, h * dk, dk)?;
            let vh = tape.slice_last(v, h * dk, dk)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
            let w = tape.softmax_last(scores)?;
            heads.push(tape.matmul(w, vh)?);
            weights.push(w);
        }
        let joined = tape.concat(&heads)?;
        Ok((tape.matmul(joined, p[query_side.out])?, weights))
    }

    /// Returns `(X_t′, X_d′)` and the per-head weights of both directions.
    pub fn cross_attention(&self, tape: &mut Tape<'_>, p: &Bound, enc: &Encoded) -> Result<((Var, Var), HeadWeights)> {
        let layout = &self.params.layout;
        let (t_out, t_w) = self.attend(tape, p, enc.target, enc.dynamic, layout.target, layout.dynamic)?;
        let keys = if self.config.attend_pre_pool {
            enc.target_map
        } else {
            enc.target
        };
        let (d_out, d_w) = self.attend(tape, p, enc.dynamic, keys, layout.dynamic, layout.target)?;
        Ok(((t_out, d_out), (t_w, d_w)))
    }

    /// Combines three `[1×d]` rows into a `[1×width]` row.
    pub fn fuse_variant(
        tape: &mut Tape<'_>,
        target: Var,
        dynamic: Var,
        ligand: Var,
        variant: FusionVariant,
    ) -> Result<Var> {
        Ok(match variant {
            FusionVariant::Concat => tape.concat(&[target, dynamic, ligand])?,
            FusionVariant::Sum => {
                let s = tape.add(target, dynamic)?;
                tape.add(s, ligand)?
            }
            FusionVariant::Average => {
                let s = tape.add(target, dynamic)?;
                let s = tape.add(s, ligand)?;
                tape.scale(s, 1.0 / 3.0)?
            }
            FusionVariant::Hadamard => {
                let m = tape.mul(target, dynamic)?;
                tape.mul(m, ligand)?
            }
            FusionVariant::Tfn => {
                let one = tape.constant(vec![1, 1], vec![1.0])?;
                let mut parts = [target, dynamic, ligand];
                for part in &mut parts {
                    let with_one = tape.concat(&[*part, one])?;
                    let n = tape.shape(with_one)?[1];
                    *part = tape.reshape(with_one, vec![n])?;
                }
                let flat = tape.outer_product3(parts[0], parts[1], parts[2])?;
                let n = tape.shape(flat)?[0];
                tape.reshape(flat, vec![1, n])?
            }
        })
    }

    /// Fused projection followed by the regression head; returns `[1×1]`.
    pub fn head<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        p: &Bound,
        fused: Var,
        mode: Mode,
        rng: &mut R,
    ) -> Result<Var> {
        let layout = &self.params.layout;
        let mut x = Self::affine(tape, p, fused, layout.fusion)?;
        let (last, hidden) = layout.head.split_last().expect("head has an output layer");
        for &a in hidden {
            let y = Self::affine(tape, p, x, a)?;
            let y = tape.relu(y)?;
            x = tape.dropout(y, self.config.dropout, mode == Mode::Train, rng)?;
        }
        Self::affine(tape, p, x, *last)
    }

    /// Full forward pass for one sample. Returns the `[1×1]` prediction and
    /// the attention weight rows.
    pub fn forward_sample<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape<'_>,
        p: &Bound,
        sample: &Sample,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Var, HeadWeights)> {
        let enc = self.encode(tape, p, sample)?;
        let ((t, d), weights) = self.cross_attention(tape, p, &enc)?;
        let fused = Self::fuse_variant(tape, t, d, enc.ligand, self.config.fusion)?;
        Ok((self.head(tape, p, fused, mode, rng)?, weights))
    }

    /// Eval-mode predictions, one per sample.
    pub fn predict(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        samples
            .iter()
            .map(|s| {
                let mut tape = Tape::new();
                let p = self.bind(&mut tape);
                let (y, _) = self.forward_sample(&mut tape, &p, s, Mode::Eval, &mut rng)?;
                Ok(tape.value(y)?[0])
            })
            .collect()
    }

    /// Mean squared error over `samples` and its gradient for every
    /// parameter, accumulated one sample tape at a time. A parameter that no
    /// sample reached has `None`.
    pub fn loss_and_gradients<R: Rng + ?Sized>(
        &self,
        samples: &[&Sample],
        targets: &[f64],
        mode: Mode,
        rng: &mut R,
    ) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        if samples.len() != targets.len() {
            return Err(crate::tensor::TensorError::LengthMismatch(samples.len(), targets.len()).into());
        }
        if samples.is_empty() {
            return Err(crate::tensor::TensorError::EmptyInput { op: "loss" }.into());
        }
        let weight = 1.0 / samples.len() as f64;
        let mut total = 0.0;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.params.len()];
        for (sample, &y) in samples.iter().zip(targets) {
            let mut tape = Tape::new();
            let p = self.bind(&mut tape);
            let (pred, _) = self.forward_sample(&mut tape, &p, sample, mode, rng)?;
            let pred = tape.reshape(pred, vec![1])?;
            let target = tape.constant(vec![1], vec![y])?;
            let loss = tape.mse_loss(pred, target)?;
            let loss = tape.scale(loss, weight)?;
            total += tape.value(loss)?[0];
            let g = tape.backward(loss)?;
            for (slot, &var) in grads.iter_mut().zip(p.vars()) {
                if let Some(gv) = g.get(var) {
                    match slot {
                        Some(acc) => acc.iter_mut().zip(gv).for_each(|(a, b)| *a += b),
                        None => *slot = Some(gv.to_vec()),
                    }
                }
            }
        }
        Ok((total, grads))
    }

    /// Eval-mode loss without gradients.
    pub fn loss(&self, samples: &[&Sample], targets: &[f64]) -> Result<f64> {
        let owned: Vec<Sample> = samples.iter().map(|s| (*s).clone()).collect();
        let preds = self.predict(&owned)?;
        if preds.len() != targets.len() {
            return Err(crate::tensor::TensorError::LengthMismatch(preds.len(), targets.len()).into());
        }
        Ok(preds.iter().zip(targets).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / preds.len() as f64)
    }

    /// Eval-mode attention weights for one sample.
    pub fn attention(&self, sample: &Sample) -> Result<AttentionMaps> {
        let mut tape = Tape::new();
        let p = self.bind(&mut tape);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let (_, (t, d)) = self.forward_sample(&mut tape, &p, sample, Mode::Eval, &mut rng)?;
        let rows = |ws: &[Var]| -> Result<Vec<Vec<f64>>> { ws.iter().map(|&w| Ok(tape.value(w)?.to_vec())).collect() };
        Ok(AttentionMaps {
            target: rows(&t)?,
            dynamic: rows(&d)?,
        })
    }
}

/// Writes `direction,head,position_index,weight` rows. With `top`, only the
/// head-averaged descriptor-to-target weights are written, highest first,
/// with `head` set to `mean`.
pub fn write_attention<W: Write>(maps: &AttentionMaps, top: Option<usize>, out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["direction", "head", "position_index", "weight"])?;
    match top {
        Some(n) => {
            let mean = maps.dynamic_mean();
            let mut order: Vec<usize> = (0..mean.len()).collect();
            order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]).then(a.cmp(&b)));
            for &pos in order.iter().take(n) {
                w.write_record([
                    "dynamic".to_string(),
                    "mean".into(),
                    pos.to_string(),
                    mean[pos].to_string(),
                ])?;
            }
        }
        None => {
            for (direction, heads) in [("target", &maps.target), ("dynamic", &maps.dynamic)] {
                for (h, row) in heads.iter().enumerate() {
                    for (pos, v) in row.iter().enumerate() {
                        w.write_record([direction.to_string(), h.to_string(), pos.to_string(), v.to_string()])?;
                    }
                }
            }
        }
    }
    w.flush()
}
