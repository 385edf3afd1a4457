use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Affine {
    pub w: usize,
    pub b: usize,
}

/// Projections owned by one modality: its query, key, value and output maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct AttnSide {
    pub query: usize,
    pub key: usize,
    pub value: usize,
    pub out: usize,
}

/// Positions of each parameter tensor in [`ModelParams`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Layout {
    pub gcn: Vec<usize>,
    pub embedding: usize,
    pub conv: Vec<Affine>,
    pub mlp: Vec<Affine>,
    pub target: AttnSide,
    pub dynamic: AttnSide,
    pub fusion: Affine,
    pub head: Vec<Affine>,
}

pub(crate) struct Slot {
    pub name: String,
    pub shape: Vec<usize>,
    /// `(fan_in, fan_out)` for weights, `None` for zero-initialised biases.
    pub fans: Option<(usize, usize)>,
}

struct Builder {
    slots: Vec<Slot>,
}

impl Builder {
    fn push(&mut self, name: String, shape: Vec<usize>, fans: Option<(usize, usize)>) -> usize {
        self.slots.push(Slot { name, shape, fans });
        self.slots.len() - 1
    }

    fn matrix(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.push(name, vec![rows, cols], Some((rows, cols)))
    }

    fn affine(&mut self, prefix: &str, input: usize, output: usize) -> Affine {
        Affine {
            w: self.matrix(format!("{prefix}.weight"), input, output),
            b: self.push(format!("{prefix}.bias"), vec![output], None),
        }
    }

    fn side(&mut self, modality: &str, d: usize) -> AttnSide {
        AttnSide {
            query: self.matrix(format!("attn.{modality}.query"), d, d),
            key: self.matrix(format!("attn.{modality}.key"), d, d),
            value: self.matrix(format!("attn.{modality}.value"), d, d),
            out: self.matrix(format!("attn.{modality}.out"), d, d),
        }
    }
}

pub(crate) fn layout(config: &ModelConfig) -> (Layout, Vec<Slot>) {
    let d = config.embed_dim;
    let mut b = Builder { slots: Vec::new() };
    let gcn = (0..config.gcn_layers)
        .map(|l| {
            let input = if l == 0 { config.atom_features } else { d };
            b.matrix(format!("gcn.{l}.weight"), input, d)
        })
        .collect();
    let embedding = b.matrix("embedding.weight".into(), config.seq_vocab, d);

    let mut conv = Vec::new();
    let mut c_in = d;
    for (l, &k) in config.conv_kernels.iter().enumerate() {
        let c_out = config.conv_channels.get(l).copied().unwrap_or(d);
        conv.push(Affine {
            w: b.push(
                format!("conv.{l}.weight"),
                vec![c_out, c_in, k],
                Some((c_in * k, c_out * k)),
            ),
            b: b.push(format!("conv.{l}.bias"), vec![c_out], None),
        });
        c_in = c_out;
    }

    let mut mlp = Vec::new();
    let mut input = 4;
    for (l, &w) in config.mlp_hidden.iter().chain(std::iter::once(&d)).enumerate() {
        mlp.push(b.affine(&format!("mlp.{l}"), input, w));
        input = w;
    }

    let target = b.side("target", d);
    let dynamic = b.side("dynamic", d);
    let fusion = b.affine("fusion", config.fusion.width(d), config.fusion_out);

    let mut head = Vec::new();
    let mut input = config.fusion_out;
    for (l, &w) in config.head_hidden.iter().chain(std::iter::once(&1)).enumerate() {
        head.push(b.affine(&format!("head.{l}"), input, w));
        input = w;
    }

    let layout = Layout {
        gcn,
        embedding,
        conv,
        mlp,
        target,
        dynamic,
        fusion,
        head,
    };
    (layout, b.slots)
}

/// Named, trainable parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    pub(crate) layout: Layout,
}

impl ModelParams {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = layout(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, tensors) = slots
            .into_iter()
            .map(|s| {
                let t = match s.fans {
                    Some((fan_in, fan_out)) => Tensor::glorot(s.shape, fan_in, fan_out, &mut rng),
                    None => Tensor::zeros(s.shape),
                };
                (s.name, t.trainable())
            })
            .unzip();
        Ok(Self { names, tensors, layout })
    }

    /// Assembles parameters from named tensors, checking names and shapes
    /// against the layout of `config`.
    pub fn from_named(config: &ModelConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let (layout, slots) = layout(config);
        if slots.len() != named.len() {
            return Err(ModelError::Checkpoint(format!(
                "expected {} tensors, found {}",
                slots.len(),
                named.len()
            )));
        }
        let mut names = Vec::with_capacity(slots.len());
        let mut tensors = Vec::with_capacity(slots.len());
        for (slot, (name, t)) in slots.into_iter().zip(named) {
            if slot.name != name || slot.shape != t.shape() {
                return Err(ModelError::Checkpoint(format!(
                    "expected {} {:?}, found {} {:?}",
                    slot.name,
                    slot.shape,
                    name,
                    t.shape()
                )));
            }
            names.push(name);
            tensors.push(t.trainable());
        }
        Ok(Self { names, tensors, layout })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(move |i| &mut self.tensors[i])
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}
