//! Hand-counted reference molecules: `(name, smiles, atoms, bonds, non-CLS tokens)`.

pub const CORPUS: &[(&str, &str, usize, usize, usize)] = &[
    ("methane", "C", 1, 0, 1),
    ("ethanol", "CCO", 3, 2, 3),
    ("phenol", "C1=CC=C(C=C1)O", 7, 7, 14),
    ("cyclopropane", "C1CC1", 3, 3, 5),
    ("benzene", "c1ccccc1", 6, 6, 8),
    ("acetic acid", "CC(=O)O", 4, 3, 7),
    ("ammonium", "[NH4+]", 1, 0, 1),
    ("sodium chloride", "[Na+].[Cl-]", 2, 0, 3),
    ("pyridine", "c1ccncc1", 6, 6, 8),
    ("pyrrole", "c1cc[nH]c1", 5, 5, 7),
    ("cyclohexane", "C%10CCCCC%10", 6, 6, 8),
    ("acetonitrile", "CC#N", 3, 2, 4),
    ("chloroform", "ClC(Cl)Cl", 4, 3, 6),
    ("bromobenzene", "Brc1ccccc1", 7, 7, 9),
    ("naphthalene", "c1ccc2ccccc2c1", 10, 11, 14),
    ("l-alanine", "N[C@@H](C)C(=O)O", 6, 5, 11),
    ("difluoroethene", "F/C=C/F", 4, 3, 7),
    ("nitromethane", "C[N+](=O)[O-]", 4, 3, 7),
    ("furan", "c1ccoc1", 5, 5, 7),
    ("caffeine", "Cn1cnc2c1c(=O)n(C)c(=O)n2C", 14, 15, 26),
];

/// The SMILES strings of [`CORPUS`].
pub fn corpus_smiles() -> Vec<&'static str> {
    CORPUS.iter().map(|c| c.1).collect()
}
