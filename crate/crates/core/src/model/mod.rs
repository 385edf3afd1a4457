//! The affinity network: graph, sequence and descriptor encoders, two-way
//! multi-head cross-attention, fusion and a regression head.

mod checkpoint;
mod network;
mod params;


use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::protein::{ProteinInput, VOCAB_SIZE};
use crate::smiles::{MolecularGraph, ATOM_FEATURES};
use crate::tensor::TensorError;

pub use checkpoint::{read_checkpoint, write_checkpoint, CheckpointMeta, DescriptorMask};
pub use network::{write_attention, AttentionMaps, Bound, Encoded, HeadWeights, Mode, Model};
pub use params::ModelParams;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("unknown fusion variant {0:?}")]
    UnknownVariant(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionVariant {
    Concat,
    Sum,
    Average,
    Hadamard,
    Tfn,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 5] = [
        FusionVariant::Concat,
        FusionVariant::Sum,
        FusionVariant::Average,
        FusionVariant::Hadamard,
        FusionVariant::Tfn,
    ];

    /// Width of the fused vector before the projection.
    pub fn width(self, d: usize) -> usize {
        match self {
            FusionVariant::Concat => 3 * d,
            FusionVariant::Sum | FusionVariant::Average | FusionVariant::Hadamard => d,
            FusionVariant::Tfn => (d + 1).pow(3),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FusionVariant::Concat => "Concat",
            FusionVariant::Sum => "Sum",
            FusionVariant::Average => "Average",
            FusionVariant::Hadamard => "Hadamard product",
            FusionVariant::Tfn => "TFN",
        }
    }
}

impl FromStr for FusionVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "concat" => Ok(FusionVariant::Concat),
            "sum" => Ok(FusionVariant::Sum),
            "average" | "avg" => Ok(FusionVariant::Average),
            "hadamard" => Ok(FusionVariant::Hadamard),
            "tfn" => Ok(FusionVariant::Tfn),
            _ => Err(ModelError::UnknownVariant(s.to_string())),
        }
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionVariant::Concat => "concat",
            FusionVariant::Sum => "sum",
            FusionVariant::Average => "average",
            FusionVariant::Hadamard => "hadamard",
            FusionVariant::Tfn => "tfn",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub gcn_layers: usize,
    pub attention_heads: usize,
    pub dropout: f64,
    pub dilation_rate: usize,
    /// When false every conv layer uses dilation 1.
    pub dilated: bool,
    pub conv_kernels: Vec<usize>,
    /// Output channels of every conv layer but the last, which emits `embed_dim`.
    pub conv_channels: Vec<usize>,
    pub seq_vocab: usize,
    pub max_seq_len: usize,
    pub atom_features: usize,
    pub mlp_hidden: Vec<usize>,
    pub head_hidden: Vec<usize>,
    /// Width the fused vector is projected to before the head.
    pub fusion_out: usize,
    pub fusion: FusionVariant,
    /// Let the descriptor query attend over conv positions rather than the
    /// pooled target vector.
    pub attend_pre_pool: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            gcn_layers: 3,
            attention_heads: 4,
            dropout: 0.2,
            dilation_rate: 4,
            dilated: true,
            conv_kernels: vec![7, 7, 7],
            conv_channels: vec![32, 64],
            seq_vocab: VOCAB_SIZE,
            max_seq_len: 1000,
            atom_features: ATOM_FEATURES,
            mlp_hidden: vec![32],
            head_hidden: vec![512, 128],
            fusion_out: 64,
            fusion: FusionVariant::Tfn,
            attend_pre_pool: true,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ModelError {
    ModelError::InvalidConfig {
        field,
        reason: reason.into(),
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("gcn_layers", self.gcn_layers),
            ("attention_heads", self.attention_heads),
            ("dilation_rate", self.dilation_rate),
            ("seq_vocab", self.seq_vocab),
            ("max_seq_len", self.max_seq_len),
            ("atom_features", self.atom_features),
            ("fusion_out", self.fusion_out),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(invalid(field, "must be positive"));
            }
        }
        if !self.embed_dim.is_multiple_of(self.attention_heads) {
            return Err(invalid(
                "attention_heads",
                format!("{} does not divide embed_dim {}", self.attention_heads, self.embed_dim),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("dropout", format!("{} outside [0, 1)", self.dropout)));
        }
        if self.conv_kernels.is_empty() || self.conv_kernels.contains(&0) {
            return Err(invalid("conv_kernels", "need at least one positive kernel size"));
        }
        if self.conv_channels.len() + 1 != self.conv_kernels.len() {
            return Err(invalid(
                "conv_channels",
                format!(
                    "expected {} entries, one per conv layer but the last",
                    self.conv_kernels.len() - 1
                ),
            ));
        }
        for (field, list) in [
            ("conv_channels", &self.conv_channels),
            ("mlp_hidden", &self.mlp_hidden),
            ("head_hidden", &self.head_hidden),
        ] {
            if list.contains(&0) {
                return Err(invalid(field, "widths must be positive"));
            }
        }
        let span = self.receptive_field();
        if span > self.max_seq_len {
            return Err(invalid(
                "max_seq_len",
                format!("{} is shorter than the conv receptive field {span}", self.max_seq_len),
            ));
        }
        Ok(())
    }

    pub fn dilations(&self) -> Vec<usize> {
        (0..self.conv_kernels.len())
            .map(|l| if l == 0 || !self.dilated { 1 } else { self.dilation_rate })
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        1 + self
            .conv_kernels
            .iter()
            .zip(self.dilations())
            .map(|(k, d)| (k - 1) * d)
            .sum::<usize>()
    }

    /// Number of conv output positions for the configured sequence length.
    pub fn conv_positions(&self) -> usize {
        self.max_seq_len + 1 - self.receptive_field()
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.attention_heads
    }
}

/// One (ligand, protein) model input.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub graph: MolecularGraph,
    pub protein: ProteinInput,
}
