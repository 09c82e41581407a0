//! Node and edge featurization.
//!
//! Node row: `[Z/100, degree, charge, total H, aromatic, in ring, period, group, 0]`.
//! Edge row: `[order, conjugated, in ring, aromatic]`.

use super::elements;
use super::graph::MolecularGraph;
use crate::autodiff::Tensor;

pub const NODE_WIDTH: usize = 9;
pub const EDGE_WIDTH: usize = 4;

/// Explicit plus implicit hydrogens of atom `i`.
pub fn total_h(graph: &MolecularGraph, i: usize) -> u32 {
    let atom = &graph.atoms[i];
    if atom.bracket {
        return atom.explicit_h;
    }
    let Some(valence) = elements::default_valence(&atom.element) else {
        return atom.explicit_h;
    };
    let bond_sum: f64 = graph
        .bonds
        .iter()
        .filter(|b| b.u == i || b.v == i)
        .map(|b| b.order)
        .sum();
    atom.explicit_h + (valence as f64 - bond_sum).max(0.0).floor() as u32
}

pub fn featurize(graph: &MolecularGraph) -> (Tensor, Tensor) {
    let mut nodes = Vec::with_capacity(graph.atoms.len() * NODE_WIDTH);
    for (i, a) in graph.atoms.iter().enumerate() {
        let el = elements::lookup(&a.element).expect("parser only admits known elements");
        nodes.extend_from_slice(&[
            el.atomic_number as f64 / 100.0,
            a.degree as f64,
            a.charge as f64,
            total_h(graph, i) as f64,
            a.aromatic as u8 as f64,
            a.in_ring as u8 as f64,
            el.period as f64,
            el.group as f64,
            0.0,
        ]);
    }
    let mut edges = Vec::with_capacity(graph.bonds.len() * EDGE_WIDTH);
    for b in &graph.bonds {
        edges.extend_from_slice(&[
            b.order,
            b.conjugated as u8 as f64,
            b.in_ring as u8 as f64,
            b.aromatic as u8 as f64,
        ]);
    }
    (
        Tensor::from_parts(vec![graph.atoms.len(), NODE_WIDTH], nodes),
        Tensor::from_parts(vec![graph.bonds.len(), EDGE_WIDTH], edges),
    )
}
