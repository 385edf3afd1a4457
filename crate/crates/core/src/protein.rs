//! Protein sequence encoding and dynamic-descriptor normalisation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Fixed encoded sequence length.
pub const MAX_SEQ_LEN: usize = 1000;

/// Residue letters in id order; id 0 is padding / unknown.
pub const AMINO_ALPHABET: &str = "ABCDEFGHIKLMNOPQRSTUVWXYZ";

/// Number of distinct ids, padding included.
pub const VOCAB_SIZE: usize = AMINO_ALPHABET.len() + 1;

/// Descriptor order in every 4-vector.
pub const DESCRIPTOR_NAMES: [&str; 4] = ["avg_rmsf", "avg_gyr", "div_se", "div_mm"];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProteinError {
    #[error("no descriptors to fit normalisation on")]
    EmptyInput,
    #[error("descriptor {name} has a degenerate range (min == max == {value})")]
    DegenerateRange { name: &'static str, value: f64 },
}

pub fn residue_id(residue: char) -> usize {
    let upper = residue.to_ascii_uppercase();
    AMINO_ALPHABET
        .find(upper)
        .filter(|_| upper.is_ascii_alphabetic())
        .map_or(0, |p| p + 1)
}

/// Encodes to exactly [`MAX_SEQ_LEN`] ids, truncating or zero-padding.
pub fn encode_sequence(seq: &str) -> Vec<usize> {
    encode_sequence_to(seq, MAX_SEQ_LEN)
}

/// Same as [`encode_sequence`] with an explicit length.
pub fn encode_sequence_to(seq: &str, len: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = seq.chars().take(len).map(residue_id).collect();
    ids.resize(len, 0);
    ids
}

/// Trajectory-averaged descriptors of one protein, in raw units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicDescriptor {
    pub avg_rmsf: f64,
    pub avg_gyr: f64,
    pub div_se: f64,
    pub div_mm: f64,
}

impl DynamicDescriptor {
    pub fn new(avg_rmsf: f64, avg_gyr: f64, div_se: f64, div_mm: f64) -> Self {
        Self {
            avg_rmsf,
            avg_gyr,
            div_se,
            div_mm,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.avg_rmsf, self.avg_gyr, self.div_se, self.div_mm]
    }
}

/// Model-ready protein input.
#[derive(Debug, Clone, PartialEq)]
pub struct ProteinInput {
    pub sequence_ids: Vec<usize>,
    pub raw_length: usize,
    pub descriptors: [f64; 4],
}

impl ProteinInput {
    pub fn new(sequence: &str, descriptors: [f64; 4], len: usize) -> Self {
        Self {
            sequence_ids: encode_sequence_to(sequence, len),
            raw_length: sequence.chars().count(),
            descriptors,
        }
    }
}

/// Per-descriptor `(min, max)` fitted on training records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub min: [f64; 4],
    pub max: [f64; 4],
}

impl NormalizationStats {
    /// Descriptors whose fitted range is empty.
    pub fn degenerate(&self) -> Vec<&'static str> {
        (0..4)
            .filter(|&i| self.max[i] <= self.min[i])
            .map(|i| DESCRIPTOR_NAMES[i])
            .collect()
    }

    /// Min-max scaling clamped to `[0, 1]`.
    pub fn normalize(&self, d: &DynamicDescriptor) -> Result<[f64; 4], ProteinError> {
        let raw = d.as_array();
        let mut out = [0.0; 4];
        for i in 0..4 {
            let span = self.max[i] - self.min[i];
            if span <= 0.0 {
                return Err(ProteinError::DegenerateRange {
                    name: DESCRIPTOR_NAMES[i],
                    value: self.min[i],
                });
            }
            out[i] = ((raw[i] - self.min[i]) / span).clamp(0.0, 1.0);
        }
        Ok(out)
    }
}

/// Column-wise minima and maxima. A degenerate column is reported by
/// [`NormalizationStats::degenerate`] and rejected later by `normalize`.
pub fn fit_normalization(descriptors: &[DynamicDescriptor]) -> Result<NormalizationStats, ProteinError> {
    let first = descriptors.first().ok_or(ProteinError::EmptyInput)?.as_array();
    let mut stats = NormalizationStats { min: first, max: first };
    for d in &descriptors[1..] {
        for (i, v) in d.as_array().into_iter().enumerate() {
            stats.min[i] = stats.min[i].min(v);
            stats.max[i] = stats.max[i].max(v);
        }
    }
    Ok(stats)
}
