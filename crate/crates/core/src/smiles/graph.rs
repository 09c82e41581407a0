use std::collections::{BTreeMap, HashSet};

use super::error::SmilesError;
use super::features;
use super::lexer::{lex, BondSymbol, Lexeme};
use crate::autodiff::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub element: String,
    pub aromatic: bool,
    pub charge: i32,
    pub explicit_h: u32,
    /// Bracket atoms carry their hydrogens explicitly; organic-subset atoms get implicit ones.
    pub bracket: bool,
    pub in_ring: bool,
    pub degree: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bond {
    pub u: usize,
    pub v: usize,
    /// 1, 2, 3 or 1.5 for aromatic.
    pub order: f64,
    pub aromatic: bool,
    pub conjugated: bool,
    pub in_ring: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MolecularGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    /// `(num_atoms, 9)`.
    pub node_features: Tensor,
    /// `(num_bonds, 4)`.
    pub edge_features: Tensor,
}

impl MolecularGraph {
    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn num_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// Line-delimited diagnostic dump of atoms and bonds.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for (i, a) in self.atoms.iter().enumerate() {
            s.push_str(&format!(
                "atom\t{i}\t{}\taromatic={}\tcharge={}\th={}\tring={}\tdegree={}\n",
                a.element,
                a.aromatic as u8,
                a.charge,
                features::total_h(self, i),
                a.in_ring as u8,
                a.degree
            ));
        }
        for b in &self.bonds {
            s.push_str(&format!(
                "bond\t{}\t{}\torder={}\tconjugated={}\tring={}\n",
                b.u, b.v, b.order, b.conjugated as u8, b.in_ring as u8
            ));
        }
        s
    }
}

pub fn parse(smiles: &str) -> Result<MolecularGraph, SmilesError> {
    let tokens = lex(smiles)?;
    let mut atoms: Vec<Atom> = Vec::new();
    let mut bonds: Vec<Bond> = Vec::new();
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut prev: Option<usize> = None;
    let mut pending: Option<BondSymbol> = None;
    let mut branches: Vec<Option<usize>> = Vec::new();
    let mut rings: BTreeMap<u32, (usize, Option<BondSymbol>)> = BTreeMap::new();

    let mut connect = |atoms: &[Atom], bonds: &mut Vec<Bond>, u: usize, v: usize, sym: Option<BondSymbol>| {
        let key = (u.min(v), u.max(v));
        if !seen.insert(key) {
            return Err(SmilesError::DuplicateBond(key.0, key.1));
        }
        let both_aromatic = atoms[u].aromatic && atoms[v].aromatic;
        let (order, aromatic) = match sym {
            None if both_aromatic => (1.5, true),
            None | Some(BondSymbol::Single) | Some(BondSymbol::Directional) => (1.0, false),
            Some(BondSymbol::Double) => (2.0, false),
            Some(BondSymbol::Triple) => (3.0, false),
            Some(BondSymbol::Aromatic) => (1.5, true),
        };
        bonds.push(Bond {
            u,
            v,
            order,
            aromatic,
            conjugated: aromatic,
            in_ring: false,
        });
        Ok(())
    };

    for tok in tokens {
        match tok.lexeme {
            Lexeme::Atom(spec) => {
                let idx = atoms.len();
                atoms.push(Atom {
                    element: spec.symbol,
                    aromatic: spec.aromatic,
                    charge: spec.charge,
                    explicit_h: spec.explicit_h,
                    bracket: spec.bracket,
                    in_ring: false,
                    degree: 0,
                });
                if let Some(p) = prev {
                    connect(&atoms, &mut bonds, p, idx, pending.take())?;
                } else if pending.is_some() {
                    return Err(SmilesError::Dangling("bond symbol"));
                }
                prev = Some(idx);
            }
            Lexeme::Bond(sym) => {
                if prev.is_none() {
                    return Err(SmilesError::Dangling("bond symbol"));
                }
                pending = Some(sym);
            }
            Lexeme::Open => {
                if prev.is_none() {
                    return Err(SmilesError::Dangling("branch"));
                }
                branches.push(prev);
            }
            Lexeme::Close => {
                prev = branches.pop().ok_or(SmilesError::UnbalancedParens)?;
                pending = None;
            }
            Lexeme::Ring(label) => {
                let cur = prev.ok_or(SmilesError::Dangling("ring label"))?;
                match rings.remove(&label) {
                    Some((open, open_sym)) => {
                        if open == cur {
                            return Err(SmilesError::SelfBond(label));
                        }
                        let sym = pending.take().or(open_sym);
                        connect(&atoms, &mut bonds, open, cur, sym)?;
                    }
                    None => {
                        rings.insert(label, (cur, pending.take()));
                    }
                }
            }
            Lexeme::Dot => {
                prev = None;
                pending = None;
            }
            Lexeme::Other => {}
        }
    }
    if !branches.is_empty() {
        return Err(SmilesError::UnbalancedParens);
    }
    if let Some((&label, _)) = rings.iter().next() {
        return Err(SmilesError::UnclosedRing(label));
    }
    if atoms.is_empty() {
        return Err(SmilesError::Empty);
    }

    for b in &bonds {
        atoms[b.u].degree += 1;
        atoms[b.v].degree += 1;
    }
    mark_rings(&mut atoms, &mut bonds);
    mark_conjugation(&mut bonds, atoms.len());

    let mut graph = MolecularGraph {
        atoms,
        bonds,
        node_features: Tensor::zeros(&[0, features::NODE_WIDTH]),
        edge_features: Tensor::zeros(&[0, features::EDGE_WIDTH]),
    };
    let (n, e) = features::featurize(&graph);
    graph.node_features = n;
    graph.edge_features = e;
    Ok(graph)
}

/// A bond is in a ring iff it is not a bridge; an atom iff it touches a ring bond.
fn mark_rings(atoms: &mut [Atom], bonds: &mut [Bond]) {
    let n = atoms.len();
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    for (k, b) in bonds.iter().enumerate() {
        adj[b.u].push((b.v, k));
        adj[b.v].push((b.u, k));
    }
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut timer = 0;
    let mut bridge = vec![false; bonds.len()];
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // Iterative DFS: (vertex, edge used to enter, next adjacency index).
        let mut stack = vec![(root, usize::MAX, 0usize)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while let Some(&mut (v, via, ref mut next)) = stack.last_mut() {
            if *next < adj[v].len() {
                let (w, k) = adj[v][*next];
                *next += 1;
                if k == via {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = timer;
                    low[w] = timer;
                    timer += 1;
                    stack.push((w, k, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(p, ..)) = stack.last() {
                    low[p] = low[p].min(low[v]);
                    if low[v] > disc[p] {
                        bridge[via] = true;
                    }
                }
            }
        }
    }
    for (k, b) in bonds.iter_mut().enumerate() {
        b.in_ring = !bridge[k];
        if b.in_ring {
            atoms[b.u].in_ring = true;
            atoms[b.v].in_ring = true;
        }
    }
}

/// Aromatic bonds are conjugated; a single bond joining two unsaturated atoms is
/// conjugated, and so is any multiple bond adjacent to such a single bond.
fn mark_conjugation(bonds: &mut [Bond], n: usize) {
    let mut unsaturated = vec![false; n];
    for b in bonds.iter() {
        if b.order > 1.0 {
            unsaturated[b.u] = true;
            unsaturated[b.v] = true;
        }
    }
    let mut touches = vec![false; n];
    for b in bonds.iter_mut() {
        if b.order == 1.0 && unsaturated[b.u] && unsaturated[b.v] {
            b.conjugated = true;
            touches[b.u] = true;
            touches[b.v] = true;
        }
    }
    for b in bonds.iter_mut() {
        if b.order > 1.0 && (touches[b.u] || touches[b.v]) {
            b.conjugated = true;
        }
    }
}
