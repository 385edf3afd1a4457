//! Drug–target binding affinity regression from ligand graphs, protein
//! sequences and protein dynamics descriptors.

pub mod data;
pub mod model;
pub mod protein;
pub mod smiles;
pub mod tensor;
pub mod train;
