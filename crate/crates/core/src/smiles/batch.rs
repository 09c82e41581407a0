use super::error::SmilesError;
use super::vocab::{TokenSequence, Vocabulary};

pub const DEFAULT_MAX_LEN: usize = 256;

/// Right-padded id/mask matrices, row-major `(batch, len)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedBatch {
    pub batch: usize,
    pub len: usize,
    pub ids: Vec<u32>,
    pub mask: Vec<bool>,
    /// Per row, atom index → token position within that row.
    pub alignments: Vec<Vec<usize>>,
}

impl EncodedBatch {
    pub fn mask_row(&self, b: usize) -> &[bool] {
        &self.mask[b * self.len..(b + 1) * self.len]
    }

    pub fn id_row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }

    /// Flat `b * len + pos` index of every atom token, graph by graph.
    pub fn flat_atom_positions(&self) -> Vec<usize> {
        self.alignments
            .iter()
            .enumerate()
            .flat_map(|(b, a)| a.iter().map(move |p| b * self.len + p))
            .collect()
    }
}

pub fn encode_batch(sequences: &[&TokenSequence], max_len: usize) -> Result<EncodedBatch, SmilesError> {
    if sequences.is_empty() {
        return Err(SmilesError::EmptyBatch);
    }
    if let Some(s) = sequences.iter().find(|s| s.len() > max_len) {
        return Err(SmilesError::TooLong { len: s.len(), max: max_len });
    }
    let len = sequences.iter().map(|s| s.len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(len * sequences.len());
    let mut mask = Vec::with_capacity(len * sequences.len());
    for s in sequences {
        ids.extend_from_slice(&s.token_ids);
        ids.resize(ids.len() + len - s.len(), Vocabulary::PAD_ID);
        mask.extend_from_slice(&s.mask);
        mask.resize(mask.len() + len - s.len(), false);
    }
    Ok(EncodedBatch {
        batch: sequences.len(),
        len,
        ids,
        mask,
        alignments: sequences.iter().map(|s| s.atom_token_positions.clone()).collect(),
    })
}
