//! SMILES subset parsing into featurised molecular graphs.
//!
//! Supported: the organic subset (`B C N O P S F Cl Br I`, aromatic
//! `b c n o p s`), bracket atoms (hydrogen counts and charges are read and
//! dropped), bonds `- = # :`, branches and ring closures including `%nn`.
//! Stereochemistry, isotopes and dot-separated fragments are rejected.

mod lexer;
mod parser;

use std::fmt::Write as _;

use thiserror::Error;

pub use lexer::{tokenize, AtomToken, BondKind, Spanned, Token};
pub use parser::{parse, ParsedMolecule};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("unrecognised character {found:?} at offset {offset}")]
    Lex { offset: usize, found: char },
    #[error("unsupported construct at offset {offset}: {construct}")]
    Unsupported { offset: usize, construct: &'static str },
    #[error("bracket atom opened at offset {offset} is never closed")]
    UnclosedBracket { offset: usize },
    #[error("branch opened at offset {offset} is never closed")]
    UnclosedBranch { offset: usize },
    #[error("ring closure {label} is never matched")]
    UnmatchedRingClosure { label: u32 },
    #[error("empty molecule")]
    EmptyMolecule,
    #[error("bond at offset {offset} has no atom on one side")]
    DanglingBond { offset: usize },
    #[error("misplaced branch parenthesis at offset {offset}")]
    MisplacedBranch { offset: usize },
    #[error("ring label at offset {offset} does not follow an atom")]
    MisplacedRing { offset: usize },
    #[error("ring closure at offset {offset} bonds an atom to itself")]
    SelfBond { offset: usize },
    #[error("ring closure at offset {offset} duplicates an existing bond")]
    DuplicateBond { offset: usize },
    #[error("ring closure at offset {offset} has conflicting bond orders")]
    RingBondConflict { offset: usize },
    #[error("graph: {0}")]
    InvalidGraph(String),
}

/// Element slots of the atom one-hot block. Anything else maps to the
/// trailing "other" slot.
pub const ELEMENTS: [&str; 15] = [
    "C", "N", "O", "S", "F", "Cl", "Br", "I", "P", "B", "Si", "Se", "Na", "K", "Li",
];
pub const ELEMENT_SLOTS: usize = ELEMENTS.len() + 1;
pub const DEGREE_SLOTS: usize = 7;
pub const VALENCE_SLOTS: usize = 7;
/// Width of every atom feature row: element, degree, valence, aromatic.
pub const ATOM_FEATURES: usize = ELEMENT_SLOTS + DEGREE_SLOTS + VALENCE_SLOTS + 1;

const DEGREE_OFFSET: usize = ELEMENT_SLOTS;
const VALENCE_OFFSET: usize = DEGREE_OFFSET + DEGREE_SLOTS;
const AROMATIC_OFFSET: usize = VALENCE_OFFSET + VALENCE_SLOTS;

pub fn element_slot(element: &str) -> usize {
    ELEMENTS.iter().position(|&e| e == element).unwrap_or(ELEMENTS.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: String,
    pub aromatic: bool,
}

/// Ligand graph consumed by the graph encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    atoms: Vec<Atom>,
    edges: Vec<(usize, usize)>,
    bond_kinds: Vec<BondKind>,
    ring_closures: usize,
    feature_width: usize,
    node_features: Vec<f64>,
    norm_adjacency: Vec<f64>,
}

impl MolecularGraph {
    /// Tokenise, parse, featurise and normalise in one go.
    pub fn from_smiles(smiles: &str) -> Result<Self, SmilesError> {
        let parsed = parse(&tokenize(smiles)?)?;
        let mut graph = Self::from_parsed(parsed);
        graph.featurize();
        graph.normalize_adjacency();
        Ok(graph)
    }

    /// Graph with connectivity only; features and adjacency are still empty.
    pub fn from_parsed(parsed: ParsedMolecule) -> Self {
        let atoms = parsed
            .atoms
            .into_iter()
            .map(|a| Atom {
                element: a.element,
                aromatic: a.aromatic,
            })
            .collect();
        let (edges, bond_kinds) = parsed.bonds.into_iter().map(|(i, j, k)| ((i, j), k)).unzip();
        Self {
            atoms,
            edges,
            bond_kinds,
            ring_closures: parsed.ring_closures,
            feature_width: ATOM_FEATURES,
            node_features: Vec::new(),
            norm_adjacency: Vec::new(),
        }
    }

    /// Graph with caller-supplied node features (row-major `n × width`).
    /// Edges must be unique, in range and free of self-pairs.
    pub fn with_features(features: Vec<f64>, width: usize, edges: Vec<(usize, usize)>) -> Result<Self, SmilesError> {
        if width == 0 || !features.len().is_multiple_of(width) || features.is_empty() {
            return Err(SmilesError::InvalidGraph(format!(
                "{} feature values do not form rows of width {width}",
                features.len()
            )));
        }
        let n = features.len() / width;
        let mut seen = Vec::with_capacity(edges.len());
        for &(a, b) in &edges {
            if a >= n || b >= n || a == b {
                return Err(SmilesError::InvalidGraph(format!("bad edge ({a}, {b})")));
            }
            let key = (a.min(b), a.max(b));
            if seen.contains(&key) {
                return Err(SmilesError::InvalidGraph(format!("duplicate edge ({a}, {b})")));
            }
            seen.push(key);
        }
        let mut graph = Self {
            atoms: (0..n)
                .map(|_| Atom {
                    element: "*".into(),
                    aromatic: false,
                })
                .collect(),
            bond_kinds: vec![BondKind::Single; seen.len()],
            edges: seen,
            ring_closures: 0,
            feature_width: width,
            node_features: features,
            norm_adjacency: Vec::new(),
        };
        graph.normalize_adjacency();
        Ok(graph)
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.edges.len()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn bond_kinds(&self) -> &[BondKind] {
        &self.bond_kinds
    }

    pub fn ring_closures(&self) -> usize {
        self.ring_closures
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// Row-major `N × C` feature table; empty before [`Self::featurize`].
    pub fn node_features(&self) -> &[f64] {
        &self.node_features
    }

    /// Row-major `N × N` matrix; empty before [`Self::normalize_adjacency`].
    pub fn norm_adjacency(&self) -> &[f64] {
        &self.norm_adjacency
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.edges.iter().filter(|&&(a, b)| a == atom || b == atom).count()
    }

    /// Sum of incident bond orders (aromatic = 1.5), rounded down.
    pub fn valence(&self, atom: usize) -> usize {
        let total: f64 = self
            .edges
            .iter()
            .zip(&self.bond_kinds)
            .filter(|(&(a, b), _)| a == atom || b == atom)
            .map(|(_, k)| k.order())
            .sum();
        total.floor() as usize
    }

    /// Fills the one-hot atom features: element, degree (0..=6), valence
    /// (0..=6) and the aromatic flag. Larger degrees/valences saturate at 6.
    pub fn featurize(&mut self) {
        let n = self.atoms.len();
        let mut features = vec![0.0; n * ATOM_FEATURES];
        for (i, atom) in self.atoms.iter().enumerate() {
            let row = &mut features[i * ATOM_FEATURES..(i + 1) * ATOM_FEATURES];
            row[element_slot(&atom.element)] = 1.0;
            row[DEGREE_OFFSET + self.degree(i).min(DEGREE_SLOTS - 1)] = 1.0;
            row[VALENCE_OFFSET + self.valence(i).min(VALENCE_SLOTS - 1)] = 1.0;
            if atom.aromatic {
                row[AROMATIC_OFFSET] = 1.0;
            }
        }
        self.feature_width = ATOM_FEATURES;
        self.node_features = features;
    }

    /// `D̃^{-1/2} (A + I) D̃^{-1/2}` with `D̃` the row sums of `A + I`.
    pub fn normalize_adjacency(&mut self) {
        let n = self.atoms.len();
        let mut adj = vec![0.0; n * n];
        for i in 0..n {
            adj[i * n + i] = 1.0;
        }
        for &(a, b) in &self.edges {
            adj[a * n + b] = 1.0;
            adj[b * n + a] = 1.0;
        }
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|i| 1.0 / adj[i * n..(i + 1) * n].iter().sum::<f64>().sqrt())
            .collect();
        for i in 0..n {
            for j in 0..n {
                adj[i * n + j] *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        self.norm_adjacency = adj;
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self, SmilesError> {
        let n = self.num_atoms();
        let mut check = perm.to_vec();
        check.sort_unstable();
        if check != (0..n).collect::<Vec<_>>() {
            return Err(SmilesError::InvalidGraph("not a permutation".into()));
        }
        let w = self.feature_width;
        let mut atoms = self.atoms.clone();
        let mut features = self.node_features.clone();
        for (old, &new) in perm.iter().enumerate() {
            atoms[new] = self.atoms[old].clone();
            if !self.node_features.is_empty() {
                features[new * w..(new + 1) * w].copy_from_slice(&self.node_features[old * w..(old + 1) * w]);
            }
        }
        let edges = self
            .edges
            .iter()
            .map(|&(a, b)| (perm[a].min(perm[b]), perm[a].max(perm[b])))
            .collect();
        let mut out = Self {
            atoms,
            edges,
            bond_kinds: self.bond_kinds.clone(),
            ring_closures: self.ring_closures,
            feature_width: w,
            node_features: features,
            norm_adjacency: Vec::new(),
        };
        if !self.norm_adjacency.is_empty() {
            out.normalize_adjacency();
        }
        Ok(out)
    }

    /// Plain-text dump: atom count and feature width, one feature row per
    /// line, then the edge count and one `i j` pair per line.
    pub fn to_debug_text(&self) -> String {
        let mut out = String::new();
        let n = self.num_atoms();
        let _ = writeln!(out, "{} {}", n, self.feature_width);
        for row in self.node_features.chunks(self.feature_width.max(1)) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            let _ = writeln!(out, "{}", cells.join(" "));
        }
        let _ = writeln!(out, "{}", self.edges.len());
        for (a, b) in &self.edges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }
}

/// One line of the golden corpus: `smiles<TAB>atom_count<TAB>bond_count`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenEntry {
    pub smiles: String,
    pub atoms: usize,
    pub bonds: usize,
}

/// Reads a golden corpus; `#` lines and blank lines are skipped.
pub fn read_golden(text: &str) -> Result<Vec<GoldenEntry>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(n, line)| {
            let cols: Vec<&str> = line.split('\t').collect();
            let bad = || format!("line {}: expected smiles, atom_count, bond_count", n + 1);
            if cols.len() != 3 {
                return Err(bad());
            }
            Ok(GoldenEntry {
                smiles: cols[0].to_string(),
                atoms: cols[1].trim().parse().map_err(|_| bad())?,
                bonds: cols[2].trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
