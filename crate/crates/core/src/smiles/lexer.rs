//! Greedy longest-match SMILES lexer shared by the tokenizer and the parser.

use super::elements;
use super::error::SmilesError;

#[derive(Debug, Clone, PartialEq)]
pub enum Lexeme {
    Atom(AtomSpec),
    Bond(BondSymbol),
    Open,
    Close,
    Ring(u32),
    Dot,
    /// Anything else that is not a letter (e.g. `*`): tokenized, never an atom.
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BondSymbol {
    Single,
    Double,
    Triple,
    Aromatic,
    /// `/` or `\`; treated as a single bond.
    Directional,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AtomSpec {
    pub symbol: String,
    pub aromatic: bool,
    pub bracket: bool,
    pub isotope: Option<u32>,
    pub charge: i32,
    pub explicit_h: u32,
}

impl AtomSpec {
    fn organic(symbol: &str, aromatic: bool) -> Self {
        AtomSpec {
            symbol: symbol.to_string(),
            aromatic,
            bracket: false,
            isotope: None,
            charge: 0,
            explicit_h: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub text: String,
    pub lexeme: Lexeme,
}

pub fn lex(smiles: &str) -> Result<Vec<Token>, SmilesError> {
    if smiles.is_empty() {
        return Err(SmilesError::Empty);
    }
    let bytes = smiles.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if !(0x20..0x7f).contains(&c) || c == b' ' {
            return Err(SmilesError::NonPrintable { pos: i });
        }
        let (len, lexeme) = match c {
            b'[' => {
                let end = smiles[i..]
                    .find(']')
                    .ok_or(SmilesError::UnmatchedBracket { pos: i })?;
                let inner = &smiles[i + 1..i + end];
                (end + 1, Lexeme::Atom(parse_bracket(inner, i)?))
            }
            b'C' if bytes.get(i + 1) == Some(&b'l') => (2, Lexeme::Atom(AtomSpec::organic("Cl", false))),
            b'B' if bytes.get(i + 1) == Some(&b'r') => (2, Lexeme::Atom(AtomSpec::organic("Br", false))),
            b'B' | b'C' | b'N' | b'O' | b'P' | b'S' | b'F' | b'I' => {
                (1, Lexeme::Atom(AtomSpec::organic(&smiles[i..i + 1], false)))
            }
            b'b' | b'c' | b'n' | b'o' | b'p' | b's' => {
                let upper = (c as char).to_ascii_uppercase().to_string();
                (1, Lexeme::Atom(AtomSpec::organic(&upper, true)))
            }
            b'-' => (1, Lexeme::Bond(BondSymbol::Single)),
            b'=' => (1, Lexeme::Bond(BondSymbol::Double)),
            b'#' => (1, Lexeme::Bond(BondSymbol::Triple)),
            b':' => (1, Lexeme::Bond(BondSymbol::Aromatic)),
            b'/' | b'\\' => (1, Lexeme::Bond(BondSymbol::Directional)),
            b'(' => (1, Lexeme::Open),
            b')' => (1, Lexeme::Close),
            b'.' => (1, Lexeme::Dot),
            b'0'..=b'9' => (1, Lexeme::Ring((c - b'0') as u32)),
            b'%' => {
                let digits = bytes.get(i + 1..i + 3).filter(|d| d.iter().all(u8::is_ascii_digit));
                match digits {
                    Some(d) => (3, Lexeme::Ring(((d[0] - b'0') * 10 + (d[1] - b'0')) as u32)),
                    None => return Err(SmilesError::BadRingLabel { pos: i }),
                }
            }
            c if c.is_ascii_alphabetic() => {
                return Err(SmilesError::UnknownElement((c as char).to_string()))
            }
            _ => (1, Lexeme::Other),
        };
        out.push(Token {
            text: smiles[i..i + len].to_string(),
            lexeme,
        });
        i += len;
    }
    Ok(out)
}

/// Parses the inside of `[...]`: isotope, symbol, chirality, H count, charge, class.
fn parse_bracket(inner: &str, pos: usize) -> Result<AtomSpec, SmilesError> {
    let b = inner.as_bytes();
    let bad = || SmilesError::BadBracketAtom {
        pos,
        text: format!("[{inner}]"),
    };
    let mut i = 0;
    let start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    let isotope = if i > start {
        Some(inner[start..i].parse().map_err(|_| bad())?)
    } else {
        None
    };

    let (symbol, aromatic) = {
        let rest = &inner[i..];
        let aromatic2 = ["se", "as", "te"];
        if let Some(a) = aromatic2.iter().find(|a| rest.starts_with(**a)) {
            i += 2;
            (capitalize(a), true)
        } else if rest.starts_with(|c: char| matches!(c, 'b' | 'c' | 'n' | 'o' | 'p' | 's')) {
            i += 1;
            (rest[..1].to_ascii_uppercase(), true)
        } else if rest.starts_with(|c: char| c.is_ascii_uppercase()) {
            let two = rest.get(..2).filter(|t| {
                t.as_bytes()[1].is_ascii_lowercase() && elements::lookup(t).is_some()
            });
            match two {
                Some(t) => {
                    i += 2;
                    (t.to_string(), false)
                }
                None => {
                    i += 1;
                    (rest[..1].to_string(), false)
                }
            }
        } else if rest.starts_with(|c: char| c.is_ascii_alphabetic()) {
            return Err(SmilesError::UnknownElement(rest.chars().take(2).collect()));
        } else {
            return Err(bad());
        }
    };
    if elements::lookup(&symbol).is_none() {
        return Err(SmilesError::UnknownElement(symbol));
    }

    // Chirality: @, @@, and extended forms like @TH1 are consumed and ignored.
    if i < b.len() && b[i] == b'@' {
        while i < b.len() && b[i] == b'@' {
            i += 1;
        }
        if ["TH", "AL", "SP", "TB", "OH"].iter().any(|c| inner[i..].starts_with(c)) {
            i += 2;
            while i < b.len() && b[i].is_ascii_digit() {
                i += 1;
            }
        }
    }

    let mut explicit_h = 0;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        let s = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        explicit_h = if i > s { inner[s..i].parse().map_err(|_| bad())? } else { 1 };
    }

    let mut charge = 0i32;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign = if b[i] == b'+' { 1 } else { -1 };
        let sym = b[i];
        i += 1;
        let s = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i > s {
            charge = sign * inner[s..i].parse::<i32>().map_err(|_| bad())?;
        } else {
            let mut n = 1;
            while i < b.len() && b[i] == sym {
                n += 1;
                i += 1;
            }
            charge = sign * n;
        }
    }

    if i < b.len() && b[i] == b':' {
        i += 1;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
    }
    if i != b.len() {
        return Err(bad());
    }
    Ok(AtomSpec {
        symbol,
        aromatic,
        bracket: true,
        isotope,
        charge,
        explicit_h,
    })
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_ascii_uppercase().to_string() + c.as_str(),
        None => String::new(),
    }
}
