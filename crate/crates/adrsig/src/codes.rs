//! Dense integer ids for event and drug codes.
//!
//! Codes are interned once per dataset into a lexicographically sorted table,
//! so comparing two ids orders the same way as comparing the code strings.
//! Ranking tie-breaks rely on that: every "ascending event_code" rule in the
//! scoring modules is an integer compare.

/// Id of an event (medical) code. Ordering matches code-string ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CodeId(pub u32);

/// Id of a drug code. Ordering matches code-string ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DrugId(pub u32);

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Interner {
    table: Vec<String>,
}

impl Interner {
    /// Build from an arbitrary collection of code strings. Duplicates collapse.
    pub fn from_codes<I: IntoIterator<Item = String>>(codes: I) -> Interner {
        let mut table: Vec<String> = codes.into_iter().collect();
        table.sort_unstable();
        table.dedup();
        Interner { table }
    }

    pub fn index_of(&self, code: &str) -> Option<u32> {
        self.table
            .binary_search_by(|probe| probe.as_str().cmp(code))
            .ok()
            .map(|i| i as u32)
    }

    pub fn at(&self, index: u32) -> &str {
        &self.table[index as usize]
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn strings(&self) -> impl Iterator<Item = &str> {
        self.table.iter().map(String::as_str)
    }
}
