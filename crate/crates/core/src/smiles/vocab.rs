use std::collections::{BTreeSet, HashMap};

use super::error::SmilesError;
use super::lexer::{lex, Lexeme};

pub const CLS: &str = "[CLS]";
pub const PAD: &str = "[PAD]";
pub const MASK: &str = "[MASK]";
pub const UNK: &str = "[UNK]";

/// Dense token ids; the four reserved tokens take ids 0..4 in the order CLS, PAD, MASK, UNK.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_tokens(Vec::<String>::new())
    }
}

impl Vocabulary {
    pub const CLS_ID: u32 = 0;
    pub const PAD_ID: u32 = 1;
    pub const MASK_ID: u32 = 2;
    pub const UNK_ID: u32 = 3;

    /// Builds from the given (training) SMILES. Unlexable strings are skipped;
    /// non-reserved tokens are sorted so the mapping is order-independent.
    pub fn build<'a>(smiles: impl IntoIterator<Item = &'a str>) -> Self {
        let mut seen = BTreeSet::new();
        for s in smiles {
            if let Ok(toks) = lex(s) {
                seen.extend(toks.into_iter().map(|t| t.text));
            }
        }
        Self::from_tokens(seen)
    }

    /// Reserved tokens first, then `extra` in order (duplicates and reserved names dropped).
    pub fn from_tokens<S: Into<String>>(extra: impl IntoIterator<Item = S>) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [CLS, PAD, MASK, UNK].into_iter().map(String::from).chain(extra.into_iter().map(Into::into)) {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len() as u32);
                v.tokens.push(t);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub token_ids: Vec<u32>,
    pub mask: Vec<bool>,
    /// Atom index → position of that atom's token.
    pub atom_token_positions: Vec<usize>,
    pub raw_tokens: Vec<String>,
    /// Non-atom tokens that were missing from the vocabulary and became UNK.
    pub unknown_tokens: usize,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Concatenation of the raw tokens after CLS.
    pub fn detokenize(&self) -> String {
        self.raw_tokens[1..].concat()
    }
}

/// Atom tokens absent from the vocabulary also become UNK (and are counted); they
/// still occupy their atom position so the alignment with the graph holds.
pub fn tokenize(smiles: &str, vocab: &Vocabulary) -> Result<TokenSequence, SmilesError> {
    let toks = lex(smiles)?;
    let mut seq = TokenSequence {
        token_ids: vec![Vocabulary::CLS_ID],
        mask: vec![true],
        atom_token_positions: Vec::new(),
        raw_tokens: vec![CLS.to_string()],
        unknown_tokens: 0,
    };
    for t in toks {
        let pos = seq.token_ids.len();
        if matches!(t.lexeme, Lexeme::Atom(_)) {
            seq.atom_token_positions.push(pos);
        }
        let id = vocab.id(&t.text).unwrap_or_else(|| {
            seq.unknown_tokens += 1;
            Vocabulary::UNK_ID
        });
        seq.token_ids.push(id);
        seq.mask.push(true);
        seq.raw_tokens.push(t.text);
    }
    Ok(seq)
}
