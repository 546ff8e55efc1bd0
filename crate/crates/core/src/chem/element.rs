//! Supported element table.

/// One row of the supported element table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub symbol: &'static str,
    pub atomic_number: u8,
    pub max_valence: u8,
}

pub const ELEMENTS: [Element; 12] = [
    Element {
        symbol: "H",
        atomic_number: 1,
        max_valence: 1,
    },
    Element {
        symbol: "B",
        atomic_number: 5,
        max_valence: 3,
    },
    Element {
        symbol: "C",
        atomic_number: 6,
        max_valence: 4,
    },
    Element {
        symbol: "N",
        atomic_number: 7,
        max_valence: 3,
    },
    Element {
        symbol: "O",
        atomic_number: 8,
        max_valence: 2,
    },
    Element {
        symbol: "F",
        atomic_number: 9,
        max_valence: 1,
    },
    Element {
        symbol: "Si",
        atomic_number: 14,
        max_valence: 4,
    },
    Element {
        symbol: "P",
        atomic_number: 15,
        max_valence: 5,
    },
    Element {
        symbol: "S",
        atomic_number: 16,
        max_valence: 6,
    },
    Element {
        symbol: "Cl",
        atomic_number: 17,
        max_valence: 1,
    },
    Element {
        symbol: "Br",
        atomic_number: 35,
        max_valence: 1,
    },
    Element {
        symbol: "I",
        atomic_number: 53,
        max_valence: 1,
    },
];

pub fn by_symbol(symbol: &str) -> Option<&'static Element> {
    ELEMENTS.iter().find(|e| e.symbol == symbol)
}

pub fn by_atomic_number(z: u8) -> Option<&'static Element> {
    ELEMENTS.iter().find(|e| e.atomic_number == z)
}

/// Dense index of an element in [`ELEMENTS`], used as an embedding slot.
pub fn slot(z: u8) -> Option<usize> {
    ELEMENTS.iter().position(|e| e.atomic_number == z)
}

pub fn max_valence(z: u8) -> u8 {
    by_atomic_number(z).map(|e| e.max_valence).unwrap_or(0)
}

pub fn symbol(z: u8) -> &'static str {
    by_atomic_number(z).map(|e| e.symbol).unwrap_or("*")
}

/// Elements that may appear outside brackets in SMILES.
pub fn is_organic_subset(z: u8) -> bool {
    matches!(z, 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53)
}
