//! Name-keyed registries of interchangeable strategies.
//!
//! Recurrent cells and risk-object selectors are trait objects registered
//! under a string name and looked up at runtime from configuration or CLI
//! flags.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

pub struct Registry<T: ?Sized> {
    kind: &'static str,
    entries: BTreeMap<&'static str, Box<T>>,
}

impl<T: ?Sized> Registry<T> {
    pub fn new(kind: &'static str) -> Self {
        Self { kind, entries: BTreeMap::new() }
    }

    pub fn register(&mut self, name: &'static str, entry: Box<T>) {
        self.entries.insert(name, entry);
    }

    pub fn get(&self, name: &str) -> Result<&T> {
        self.entries.get(name).map(|b| b.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown {} `{name}` (available: {})",
                self.kind,
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.keys().copied().collect()
    }
}
