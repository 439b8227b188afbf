//! Name-keyed tables of interchangeable strategies.

use crate::error::{Error, Result};

/// A static table mapping strategy names to constructors.
pub struct Registry<T: ?Sized + 'static> {
    kind: &'static str,
    entries: &'static [(&'static str, fn() -> Box<T>)],
}

impl<T: ?Sized + 'static> Registry<T> {
    pub const fn new(kind: &'static str, entries: &'static [(&'static str, fn() -> Box<T>)]) -> Self {
        Self { kind, entries }
    }

    pub fn get(&self, name: &str) -> Result<Box<T>> {
        self.entries
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, make)| make())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().collect::<Vec<_>>().join(", "),
            })
    }

    pub fn names(&self) -> impl Iterator<Item = &'static str> + '_ {
        self.entries.iter().map(|(n, _)| *n)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| *n == name)
    }
}
