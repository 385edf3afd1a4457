use super::SmilesError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondKind {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondKind {
    /// Bond order with aromatic bonds counted as 1.5.
    pub fn order(self) -> f64 {
        match self {
            BondKind::Single => 1.0,
            BondKind::Double => 2.0,
            BondKind::Triple => 3.0,
            BondKind::Aromatic => 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomToken {
    /// Capitalised element symbol, e.g. `C`, `Cl`, `Se`.
    pub element: String,
    pub aromatic: bool,
    pub bracket: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Token {
    Atom(AtomToken),
    Bond(BondKind),
    BranchOpen,
    BranchClose,
    Ring(u32),
}

/// A token together with the byte offset where it starts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Spanned {
    pub token: Token,
    pub offset: usize,
}

const ORGANIC_TWO: [&str; 2] = ["Cl", "Br"];
const ORGANIC_ONE: [u8; 8] = *b"BCNOPSFI";
const AROMATIC_ORGANIC: [u8; 6] = *b"bcnops";
const AROMATIC_BRACKET_TWO: [&str; 2] = ["se", "as"];

pub fn tokenize(smiles: &str) -> Result<Vec<Spanned>, SmilesError> {
    if smiles.is_empty() {
        return Err(SmilesError::EmptyMolecule);
    }
    let bytes = smiles.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let start = i;
        let b = bytes[i];
        let token = match b {
            b'(' => {
                i += 1;
                Token::BranchOpen
            }
            b')' => {
                i += 1;
                Token::BranchClose
            }
            b'-' => {
                i += 1;
                Token::Bond(BondKind::Single)
            }
            b'=' => {
                i += 1;
                Token::Bond(BondKind::Double)
            }
            b'#' => {
                i += 1;
                Token::Bond(BondKind::Triple)
            }
            b':' => {
                i += 1;
                Token::Bond(BondKind::Aromatic)
            }
            b'0'..=b'9' => {
                i += 1;
                Token::Ring((b - b'0') as u32)
            }
            b'%' => {
                let digits = bytes.get(i + 1..i + 3).filter(|d| d.iter().all(u8::is_ascii_digit));
                let Some(d) = digits else {
                    return Err(SmilesError::Lex { offset: i, found: '%' });
                };
                i += 3;
                Token::Ring(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)
            }
            b'[' => {
                let close = bytes[i..]
                    .iter()
                    .position(|&c| c == b']')
                    .map(|p| p + i)
                    .ok_or(SmilesError::UnclosedBracket { offset: i })?;
                let atom = bracket_atom(&smiles[i + 1..close], i + 1)?;
                i = close + 1;
                Token::Atom(atom)
            }
            b'/' | b'\\' => {
                return Err(SmilesError::Unsupported {
                    offset: i,
                    construct: "bond stereochemistry",
                })
            }
            b'.' => {
                return Err(SmilesError::Unsupported {
                    offset: i,
                    construct: "multi-fragment molecule",
                })
            }
            _ => {
                if let Some(two) = smiles.get(i..i + 2).filter(|s| ORGANIC_TWO.contains(s)) {
                    i += 2;
                    Token::Atom(AtomToken {
                        element: two.to_string(),
                        aromatic: false,
                        bracket: false,
                    })
                } else if ORGANIC_ONE.contains(&b) {
                    i += 1;
                    Token::Atom(AtomToken {
                        element: (b as char).to_string(),
                        aromatic: false,
                        bracket: false,
                    })
                } else if AROMATIC_ORGANIC.contains(&b) {
                    i += 1;
                    Token::Atom(AtomToken {
                        element: (b.to_ascii_uppercase() as char).to_string(),
                        aromatic: true,
                        bracket: false,
                    })
                } else {
                    let found = smiles[i..].chars().next().unwrap_or('?');
                    return Err(SmilesError::Lex { offset: i, found });
                }
            }
        };
        tokens.push(Spanned { token, offset: start });
    }
    Ok(tokens)
}

/// Parses the inside of `[...]`. Hydrogen counts, charges and atom classes
/// are consumed and dropped.
fn bracket_atom(body: &str, base: usize) -> Result<AtomToken, SmilesError> {
    let bytes = body.as_bytes();
    if bytes.first().is_some_and(u8::is_ascii_digit) {
        return Err(SmilesError::Unsupported {
            offset: base,
            construct: "isotope",
        });
    }
    let (element, aromatic, mut i) = if let Some(two) = body.get(..2).filter(|s| AROMATIC_BRACKET_TWO.contains(s)) {
        let mut e = two.to_string();
        e[..1].make_ascii_uppercase();
        (e, true, 2)
    } else {
        match bytes.first() {
            Some(c) if c.is_ascii_uppercase() => {
                let n = if bytes.get(1).is_some_and(u8::is_ascii_lowercase) {
                    2
                } else {
                    1
                };
                (body[..n].to_string(), false, n)
            }
            Some(c) if AROMATIC_ORGANIC.contains(c) => ((c.to_ascii_uppercase() as char).to_string(), true, 1),
            Some(&c) => {
                return Err(SmilesError::Lex {
                    offset: base,
                    found: c as char,
                })
            }
            None => {
                return Err(SmilesError::Lex {
                    offset: base,
                    found: ']',
                })
            }
        }
    };
    while i < bytes.len() {
        match bytes[i] {
            b'@' => {
                return Err(SmilesError::Unsupported {
                    offset: base + i,
                    construct: "chirality",
                })
            }
            b'H' | b'+' | b'-' | b':' | b'0'..=b'9' => i += 1,
            c => {
                return Err(SmilesError::Lex {
                    offset: base + i,
                    found: c as char,
                })
            }
        }
    }
    Ok(AtomToken {
        element,
        aromatic,
        bracket: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(s: &str) -> Vec<Token> {
        tokenize(s).unwrap().into_iter().map(|t| t.token).collect()
    }

    fn atom(e: &str) -> Token {
        Token::Atom(AtomToken {
            element: e.into(),
            aromatic: false,
            bracket: false,
        })
    }

    #[test]
    fn simple_chain() {
        assert_eq!(kinds("CCO"), vec![atom("C"), atom("C"), atom("O")]);
    }

    #[test]
    fn ring_digits() {
        assert_eq!(
            kinds("C1CC1"),
            vec![atom("C"), Token::Ring(1), atom("C"), atom("C"), Token::Ring(1)]
        );
        assert_eq!(kinds("C%12")[1], Token::Ring(12));
    }

    #[test]
    fn unknown_character_offset() {
        assert_eq!(tokenize("C$C"), Err(SmilesError::Lex { offset: 1, found: '$' }));
    }

    #[test]
    fn halogens_and_aromatics() {
        assert_eq!(kinds("ClBr"), vec![atom("Cl"), atom("Br")]);
        let toks = kinds("c1ccncc1");
        assert!(matches!(&toks[4], Token::Atom(a) if a.element == "N" && a.aromatic));
    }

    #[test]
    fn bracket_atoms() {
        let toks = kinds("[NH4+]");
        assert_eq!(
            toks,
            vec![Token::Atom(AtomToken {
                element: "N".into(),
                aromatic: false,
                bracket: true
            })]
        );
        let toks = kinds("[nH]");
        assert!(matches!(&toks[0], Token::Atom(a) if a.aromatic && a.element == "N"));
        let toks = kinds("[se]");
        assert!(matches!(&toks[0], Token::Atom(a) if a.aromatic && a.element == "Se"));
        assert!(matches!(kinds("[Na+]")[0], Token::Atom(ref a) if a.element == "Na"));
    }

    #[test]
    fn unsupported_constructs() {
        assert!(matches!(
            tokenize("F/C=C/F"),
            Err(SmilesError::Unsupported {
                offset: 1,
                construct: "bond stereochemistry"
            })
        ));
        assert!(matches!(
            tokenize("N[C@@H](C)C(=O)O"),
            Err(SmilesError::Unsupported {
                construct: "chirality",
                ..
            })
        ));
        assert!(matches!(
            tokenize("[13CH4]"),
            Err(SmilesError::Unsupported {
                construct: "isotope",
                ..
            })
        ));
        assert!(matches!(
            tokenize("CC.O"),
            Err(SmilesError::Unsupported {
                offset: 2,
                construct: "multi-fragment molecule"
            })
        ));
    }

    #[test]
    fn unclosed_bracket_and_bad_percent() {
        assert_eq!(tokenize("C[NH"), Err(SmilesError::UnclosedBracket { offset: 1 }));
        assert_eq!(tokenize("C%1"), Err(SmilesError::Lex { offset: 1, found: '%' }));
    }

    #[test]
    fn empty_is_rejected() {
        assert_eq!(tokenize(""), Err(SmilesError::EmptyMolecule));
    }
}
