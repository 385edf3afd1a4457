use std::collections::HashMap;

use super::lexer::{AtomToken, BondKind, Spanned, Token};
use super::SmilesError;

/// Connectivity recovered from a token stream, before featurisation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedMolecule {
    pub atoms: Vec<AtomToken>,
    /// `(i, j, kind)` with `i < j`.
    pub bonds: Vec<(usize, usize, BondKind)>,
    pub ring_closures: usize,
}

struct Builder {
    atoms: Vec<AtomToken>,
    bonds: Vec<(usize, usize, BondKind)>,
}

impl Builder {
    fn default_bond(&self, a: usize, b: usize) -> BondKind {
        if self.atoms[a].aromatic && self.atoms[b].aromatic {
            BondKind::Aromatic
        } else {
            BondKind::Single
        }
    }

    fn bond(&mut self, a: usize, b: usize, kind: Option<BondKind>, offset: usize) -> Result<(), SmilesError> {
        if a == b {
            return Err(SmilesError::SelfBond { offset });
        }
        let (lo, hi) = (a.min(b), a.max(b));
        if self.bonds.iter().any(|&(i, j, _)| i == lo && j == hi) {
            return Err(SmilesError::DuplicateBond { offset });
        }
        let kind = kind.unwrap_or_else(|| self.default_bond(a, b));
        self.bonds.push((lo, hi, kind));
        Ok(())
    }
}

pub fn parse(tokens: &[Spanned]) -> Result<ParsedMolecule, SmilesError> {
    let mut b = Builder {
        atoms: Vec::new(),
        bonds: Vec::new(),
    };
    let mut prev: Option<usize> = None;
    let mut pending: Option<(BondKind, usize)> = None;
    let mut branches: Vec<(Option<usize>, usize)> = Vec::new();
    let mut rings: HashMap<u32, (usize, Option<BondKind>, usize)> = HashMap::new();
    let mut ring_closures = 0;

    for Spanned { token, offset } in tokens {
        let offset = *offset;
        match token {
            Token::Atom(atom) => {
                let idx = b.atoms.len();
                b.atoms.push(atom.clone());
                match prev {
                    Some(p) => b.bond(p, idx, pending.take().map(|(k, _)| k), offset)?,
                    None if pending.is_some() => {
                        return Err(SmilesError::DanglingBond {
                            offset: pending.unwrap().1,
                        })
                    }
                    None => {}
                }
                prev = Some(idx);
            }
            Token::Bond(kind) => {
                if prev.is_none() || pending.is_some() {
                    return Err(SmilesError::DanglingBond { offset });
                }
                pending = Some((*kind, offset));
            }
            Token::BranchOpen => {
                if prev.is_none() || pending.is_some() {
                    return Err(SmilesError::MisplacedBranch { offset });
                }
                branches.push((prev, offset));
            }
            Token::BranchClose => {
                if let Some((_, at)) = pending {
                    return Err(SmilesError::DanglingBond { offset: at });
                }
                let (restore, _) = branches.pop().ok_or(SmilesError::MisplacedBranch { offset })?;
                prev = restore;
            }
            Token::Ring(label) => {
                let Some(current) = prev else {
                    return Err(SmilesError::MisplacedRing { offset });
                };
                let here = pending.take().map(|(k, _)| k);
                match rings.remove(label) {
                    Some((open_atom, open_bond, _)) => {
                        let kind = match (open_bond, here) {
                            (Some(x), Some(y)) if x != y => return Err(SmilesError::RingBondConflict { offset }),
                            (x, y) => x.or(y),
                        };
                        b.bond(open_atom, current, kind, offset)?;
                        ring_closures += 1;
                    }
                    None => {
                        rings.insert(*label, (current, here, offset));
                    }
                }
            }
        }
    }
    if let Some((_, at)) = pending {
        return Err(SmilesError::DanglingBond { offset: at });
    }
    if let Some((_, at)) = branches.first() {
        return Err(SmilesError::UnclosedBranch { offset: *at });
    }
    if let Some((&label, _)) = rings.iter().min_by_key(|(_, v)| v.2) {
        return Err(SmilesError::UnmatchedRingClosure { label });
    }
    if b.atoms.is_empty() {
        return Err(SmilesError::EmptyMolecule);
    }
    Ok(ParsedMolecule {
        atoms: b.atoms,
        bonds: b.bonds,
        ring_closures,
    })
}
