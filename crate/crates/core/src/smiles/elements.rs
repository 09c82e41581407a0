//! Periodic-table lookups for featurization.

/// `(symbol, atomic number, period, group)`; group 0 marks f-block elements.
const TABLE: &[(&str, u8, u8, u8)] = &[
    ("H", 1, 1, 1),
    ("He", 2, 1, 18),
    ("Li", 3, 2, 1),
    ("Be", 4, 2, 2),
    ("B", 5, 2, 13),
    ("C", 6, 2, 14),
    ("N", 7, 2, 15),
    ("O", 8, 2, 16),
    ("F", 9, 2, 17),
    ("Ne", 10, 2, 18),
    ("Na", 11, 3, 1),
    ("Mg", 12, 3, 2),
    ("Al", 13, 3, 13),
    ("Si", 14, 3, 14),
    ("P", 15, 3, 15),
    ("S", 16, 3, 16),
    ("Cl", 17, 3, 17),
    ("Ar", 18, 3, 18),
    ("K", 19, 4, 1),
    ("Ca", 20, 4, 2),
    ("Sc", 21, 4, 3),
    ("Ti", 22, 4, 4),
    ("V", 23, 4, 5),
    ("Cr", 24, 4, 6),
    ("Mn", 25, 4, 7),
    ("Fe", 26, 4, 8),
    ("Co", 27, 4, 9),
    ("Ni", 28, 4, 10),
    ("Cu", 29, 4, 11),
    ("Zn", 30, 4, 12),
    ("Ga", 31, 4, 13),
    ("Ge", 32, 4, 14),
    ("As", 33, 4, 15),
    ("Se", 34, 4, 16),
    ("Br", 35, 4, 17),
    ("Kr", 36, 4, 18),
    ("Rb", 37, 5, 1),
    ("Sr", 38, 5, 2),
    ("Y", 39, 5, 3),
    ("Zr", 40, 5, 4),
    ("Nb", 41, 5, 5),
    ("Mo", 42, 5, 6),
    ("Tc", 43, 5, 7),
    ("Ru", 44, 5, 8),
    ("Rh", 45, 5, 9),
    ("Pd", 46, 5, 10),
    ("Ag", 47, 5, 11),
    ("Cd", 48, 5, 12),
    ("In", 49, 5, 13),
    ("Sn", 50, 5, 14),
    ("Sb", 51, 5, 15),
    ("Te", 52, 5, 16),
    ("I", 53, 5, 17),
    ("Xe", 54, 5, 18),
    ("Cs", 55, 6, 1),
    ("Ba", 56, 6, 2),
    ("La", 57, 6, 0),
    ("Ce", 58, 6, 0),
    ("Pr", 59, 6, 0),
    ("Nd", 60, 6, 0),
    ("Pm", 61, 6, 0),
    ("Sm", 62, 6, 0),
    ("Eu", 63, 6, 0),
    ("Gd", 64, 6, 0),
    ("Tb", 65, 6, 0),
    ("Dy", 66, 6, 0),
    ("Ho", 67, 6, 0),
    ("Er", 68, 6, 0),
    ("Tm", 69, 6, 0),
    ("Yb", 70, 6, 0),
    ("Lu", 71, 6, 0),
    ("Hf", 72, 6, 4),
    ("Ta", 73, 6, 5),
    ("W", 74, 6, 6),
    ("Re", 75, 6, 7),
    ("Os", 76, 6, 8),
    ("Ir", 77, 6, 9),
    ("Pt", 78, 6, 10),
    ("Au", 79, 6, 11),
    ("Hg", 80, 6, 12),
    ("Tl", 81, 6, 13),
    ("Pb", 82, 6, 14),
    ("Bi", 83, 6, 15),
    ("Po", 84, 6, 16),
    ("At", 85, 6, 17),
    ("Rn", 86, 6, 18),
    ("Fr", 87, 7, 1),
    ("Ra", 88, 7, 2),
    ("Ac", 89, 7, 0),
    ("Th", 90, 7, 0),
    ("Pa", 91, 7, 0),
    ("U", 92, 7, 0),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub symbol: &'static str,
    pub atomic_number: u8,
    pub period: u8,
    pub group: u8,
}

pub fn lookup(symbol: &str) -> Option<Element> {
    TABLE
        .iter()
        .find(|(s, ..)| *s == symbol)
        .map(|&(symbol, atomic_number, period, group)| Element {
            symbol,
            atomic_number,
            period,
            group,
        })
}

/// Default valence used for implicit hydrogens on organic-subset atoms.
pub fn default_valence(symbol: &str) -> Option<u8> {
    match symbol {
        "B" => Some(3),
        "C" => Some(4),
        "N" => Some(3),
        "O" => Some(2),
        "P" => Some(3),
        "S" => Some(2),
        "F" | "Cl" | "Br" | "I" => Some(1),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn carbon_and_chlorine() {
        let c = lookup("C").unwrap();
        assert_eq!((c.atomic_number, c.period, c.group), (6, 2, 14));
        let cl = lookup("Cl").unwrap();
        assert_eq!((cl.atomic_number, cl.period, cl.group), (17, 3, 17));
        assert!(lookup("Xx").is_none());
    }

    #[test]
    fn atomic_numbers_are_dense() {
        for (i, (_, z, ..)) in TABLE.iter().enumerate() {
            assert_eq!(*z as usize, i + 1);
        }
    }
}
