//! Seeded synthetic records built from the golden SMILES corpus.

use dta_core::data::{AffinityRecord, Dataset, Measure, PreparedRecord};
use dta_core::model::{ModelConfig, Sample};
use dta_core::protein::{DynamicDescriptor, ProteinInput};
use dta_core::smiles::{read_golden, MolecularGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GOLDEN: &str = include_str!("../data/golden_smiles.tsv");
const RESIDUES: &[u8] = b"ACDEFGHIKLMNPQRSTVWY";

pub fn corpus() -> Vec<String> {
    read_golden(GOLDEN)
        .expect("golden corpus")
        .into_iter()
        .map(|e| e.smiles)
        .collect()
}

pub fn random_sequence(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len)
        .map(|_| RESIDUES[rng.gen_range(0..RESIDUES.len())] as char)
        .collect()
}

/// `n` records with random corpus ligands, `seq_len`-residue targets,
/// random raw descriptors and affinities in `[0, 12]`.
pub fn dataset(n: usize, seq_len: usize, seed: u64) -> Dataset {
    let smiles = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = (0..n)
        .map(|i| {
            let s = &smiles[rng.gen_range(0..smiles.len())];
            let seq = random_sequence(&mut rng, seq_len);
            let y = rng.gen_range(0.0..=12.0);
            PreparedRecord {
                record: AffinityRecord::new(s, &seq, &format!("S{i:04}"), Measure::Kiba, y).unwrap(),
                descriptor: DynamicDescriptor::new(
                    rng.gen_range(0.5..4.0),
                    rng.gen_range(12.0..35.0),
                    rng.gen_range(0.3..1.0),
                    rng.gen_range(0.3..1.0),
                ),
            }
        })
        .collect();
    Dataset { records }
}

/// Model-ready samples with descriptors already in `[0, 1]`.
pub fn samples(n: usize, seq_len: usize, max_len: usize, seed: u64) -> Vec<Sample> {
    let smiles = corpus();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = &smiles[rng.gen_range(0..smiles.len())];
            let seq = random_sequence(&mut rng, seq_len);
            let desc = [rng.gen(), rng.gen(), rng.gen(), rng.gen()];
            Sample {
                graph: MolecularGraph::from_smiles(s).unwrap(),
                protein: ProteinInput::new(&seq, desc, max_len),
            }
        })
        .collect()
}

/// d=8, H=2, L=2 with a short sequence window.
pub fn toy_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 8,
        gcn_layers: 2,
        attention_heads: 2,
        dropout: 0.0,
        dilation_rate: 2,
        conv_kernels: vec![3, 3],
        conv_channels: vec![8],
        max_seq_len: 24,
        mlp_hidden: vec![8],
        head_hidden: vec![16, 8],
        fusion_out: 8,
        ..ModelConfig::default()
    }
}

/// d=16 harness configuration over 50-residue targets.
pub fn small_config() -> ModelConfig {
    ModelConfig {
        embed_dim: 16,
        gcn_layers: 3,
        attention_heads: 4,
        dropout: 0.2,
        dilation_rate: 4,
        conv_kernels: vec![3, 3, 3],
        conv_channels: vec![16, 16],
        max_seq_len: 50,
        mlp_hidden: vec![16],
        head_hidden: vec![32, 16],
        fusion_out: 16,
        ..ModelConfig::default()
    }
}
