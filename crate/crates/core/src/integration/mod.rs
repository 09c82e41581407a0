//! Ways of combining the SMILES encoder with the message-passing network:
//! node- and graph-level triplet contrast, late fusion, and the two joint
//! fusions (MPNN states into the LM input, LM rows into every MPNN step).

mod contrast;
mod fusion;
mod model;

pub use contrast::{
    build_graph_triples, build_triples, derangement, triplet_loss, triplet_loss_chunked, triplet_term,
    ContrastConfig, Triples,
};
pub use fusion::{fuse, FusionOp};
pub use model::{Batch, Forward, Model, ModelConfig, Overrides, Sample, Strategy};
