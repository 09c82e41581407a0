use molfuse::smiles::{parse, tokenize, Vocabulary, CORPUS};
use proptest::prelude::*;

#[test]
fn corpus_counts_match_hand_enumeration() {
    let vocab = Vocabulary::default();
    for &(name, smiles, atoms, bonds, tokens) in CORPUS {
        let g = parse(smiles).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(g.num_atoms(), atoms, "{name} atoms");
        assert_eq!(g.num_bonds(), bonds, "{name} bonds");
        let seq = tokenize(smiles, &vocab).unwrap();
        assert_eq!(seq.len() - 1, tokens, "{name} tokens");
        assert_eq!(seq.atom_token_positions.len(), g.num_atoms(), "{name} alignment");
        assert_eq!(g.node_features.shape(), &[atoms, 9]);
        assert_eq!(g.edge_features.shape(), &[bonds, 4]);
    }
}

#[test]
fn alignment_points_at_atom_tokens() {
    let vocab = Vocabulary::build(CORPUS.iter().map(|c| c.1));
    for &(_, smiles, ..) in CORPUS {
        let seq = tokenize(smiles, &vocab).unwrap();
        assert_eq!(seq.token_ids[0], Vocabulary::CLS_ID);
        assert_eq!(seq.unknown_tokens, 0);
        assert!(seq.atom_token_positions.windows(2).all(|w| w[0] < w[1]));
        let g = parse(smiles).unwrap();
        for (i, &p) in seq.atom_token_positions.iter().enumerate() {
            let tok = &seq.raw_tokens[p];
            let sym = tok.trim_start_matches('[').trim_start_matches(|c: char| c.is_ascii_digit());
            assert!(
                sym.to_ascii_uppercase().starts_with(&g.atoms[i].element.to_ascii_uppercase()),
                "{smiles}: token {tok} vs atom {}",
                g.atoms[i].element
            );
        }
    }
}

#[test]
fn corpus_round_trips() {
    let vocab = Vocabulary::default();
    for &(_, smiles, ..) in CORPUS {
        assert_eq!(tokenize(smiles, &vocab).unwrap().detokenize(), smiles);
    }
}

/// `perm[i]` is the index in `b` of atom `i` of `a`.
fn assert_isomorphic(a: &str, b: &str, perm: &[usize]) {
    let ga = parse(a).unwrap();
    let gb = parse(b).unwrap();
    assert_eq!(ga.num_atoms(), gb.num_atoms());
    for (i, &j) in perm.iter().enumerate() {
        assert_eq!(ga.node_features.row(i), gb.node_features.row(j), "{a} atom {i}");
    }
    let key = |u: usize, v: usize| (u.min(v), u.max(v));
    let mut ea: Vec<_> = ga
        .bonds
        .iter()
        .zip(0..)
        .map(|(bd, k)| (key(perm[bd.u], perm[bd.v]), ga.edge_features.row(k).to_vec()))
        .collect();
    let mut eb: Vec<_> = gb
        .bonds
        .iter()
        .zip(0..)
        .map(|(bd, k)| (key(bd.u, bd.v), gb.edge_features.row(k).to_vec()))
        .collect();
    ea.sort_by(|x, y| x.0.cmp(&y.0));
    eb.sort_by(|x, y| x.0.cmp(&y.0));
    assert_eq!(ea, eb, "{a} vs {b}");
}

#[test]
fn featurize_is_permutation_covariant() {
    assert_isomorphic("CCO", "OCC", &[2, 1, 0]);
    assert_isomorphic("CC(=O)O", "OC(=O)C", &[3, 1, 2, 0]);
    assert_isomorphic("Oc1ccccc1", "c1ccc(cc1)O", &[6, 3, 2, 1, 0, 5, 4]);
    assert_isomorphic("C1=CC=C(C=C1)O", "OC1=CC=CC=C1", &[4, 3, 2, 1, 6, 5, 0]);
}

const PIECES: &[&str] = &[
    "C", "c", "N", "n", "O", "o", "S", "Cl", "Br", "F", "I", "P", "[NH4+]", "[O-]", "[nH]", "[13CH3]",
    "=", "#", "-", ":", "(", ")", "1", "2", "%12", ".",
];

proptest! {
    #[test]
    fn detokenize_inverts_tokenize(parts in prop::collection::vec(0..PIECES.len(), 1..30)) {
        let s: String = parts.iter().map(|&i| PIECES[i]).collect();
        let seq = tokenize(&s, &Vocabulary::default()).unwrap();
        prop_assert_eq!(seq.detokenize(), s);
        prop_assert_eq!(seq.token_ids.len(), seq.mask.len());
    }
}
