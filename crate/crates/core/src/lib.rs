//! Integrating a SMILES sequence encoder with a message-passing network for
//! molecular property prediction.

pub mod autodiff;
pub mod dataset;
pub mod gnn;
pub mod integration;
pub mod lm;
pub mod nn;
pub mod smiles;
pub mod training;
pub mod rng;
