//! Name-keyed registries of interchangeable strategies.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// A map from strategy name to a factory (or shared instance).
///
/// Names are matched case-insensitively; lookups of unknown names report
/// every registered alternative.
pub struct Registry<F> {
    kind: &'static str,
    entries: BTreeMap<String, F>,
}

impl<F> Registry<F> {
    pub fn new(kind: &'static str) -> Self {
        Self {
            kind,
            entries: BTreeMap::new(),
        }
    }

    /// Register `entry` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: &str, entry: F) -> &mut Self {
        self.entries.insert(name.to_ascii_lowercase(), entry);
        self
    }

    pub fn get(&self, name: &str) -> Result<&F> {
        self.entries
            .get(&name.to_ascii_lowercase())
            .ok_or_else(|| Error::UnknownStrategy {
                kind: self.kind,
                name: name.to_string(),
                available: self.names().join(", "),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(&name.to_ascii_lowercase())
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_name_lists_alternatives() {
        let mut reg: Registry<u8> = Registry::new("widget");
        reg.register("Alpha", 1).register("beta", 2);
        assert_eq!(*reg.get("ALPHA").unwrap(), 1);
        let err = reg.get("gamma").err().unwrap().to_string();
        assert!(err.contains("alpha, beta"), "{err}");
    }
}
