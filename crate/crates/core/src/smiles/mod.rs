//! SMILES lexing, graph construction, featurization and token encoding.
//!
//! The graph parser and the tokenizer share one lexer, so atom `i` of the graph
//! is always the `i`-th atom token of the sequence.

mod batch;
mod corpus;
mod elements;
mod error;
mod features;
mod graph;
mod lexer;
mod vocab;

pub use batch::{encode_batch, EncodedBatch, DEFAULT_MAX_LEN};
pub use corpus::{corpus_smiles, CORPUS};
pub use elements::{default_valence, lookup as lookup_element, Element};
pub use error::SmilesError;
pub use features::{featurize, total_h, EDGE_WIDTH, NODE_WIDTH};
pub use graph::{parse, Atom, Bond, MolecularGraph};
pub use vocab::{tokenize, TokenSequence, Vocabulary, CLS, MASK, PAD, UNK};
