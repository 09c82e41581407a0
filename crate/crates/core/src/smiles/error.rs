use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("non-printable character at byte {pos}")]
    NonPrintable { pos: usize },
    #[error("unmatched '[' at byte {pos}")]
    UnmatchedBracket { pos: usize },
    #[error("malformed bracket atom {text} at byte {pos}")]
    BadBracketAtom { pos: usize, text: String },
    #[error("malformed ring label at byte {pos}")]
    BadRingLabel { pos: usize },
    #[error("unknown element '{0}'")]
    UnknownElement(String),
    #[error("unclosed ring {0}")]
    UnclosedRing(u32),
    #[error("unbalanced parentheses")]
    UnbalancedParens,
    #[error("{0} has no preceding atom")]
    Dangling(&'static str),
    #[error("ring {0} closes onto its own atom")]
    SelfBond(u32),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("sequence of {len} tokens exceeds maximum length {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty batch")]
    EmptyBatch,
}
