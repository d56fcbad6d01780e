//! Ordered `key = value` records describing a run.
//!
//! Every line is valid TOML (dotted keys, typed values), so a manifest can be
//! read back with any TOML parser.

use std::fmt::Write as _;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<(String, toml::Value)>,
}

impl Manifest {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sets `key`, replacing an earlier value in place.
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<toml::Value>) {
        let key = key.into();
        let value = value.into();
        match self.entries.iter_mut().find(|(k, _)| *k == key) {
            Some(slot) => slot.1 = value,
            None => self.entries.push((key, value)),
        }
    }

    pub fn set_count(&mut self, key: impl Into<String>, value: usize) {
        self.set(key, value as i64);
    }

    pub fn set_reals(&mut self, key: impl Into<String>, values: &[f64]) {
        self.set(key, values.to_vec());
    }

    pub fn extend(&mut self, prefix: &str, other: &Manifest) {
        for (k, v) in &other.entries {
            let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
            self.set(key, v.clone());
        }
    }

    pub fn get(&self, key: &str) -> Option<&toml::Value> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v)
    }

    pub fn entries(&self) -> &[(String, toml::Value)] {
        &self.entries
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_parses_back_as_toml() {
        let mut m = Manifest::new();
        m.set("run.name", "demo");
        m.set_count("train.steps", 300);
        m.set_reals("proposal.alpha", &[0.5, 0.25, 0.25]);
        m.set("train.steps", 200i64);
        let parsed: toml::Table = m.to_text().parse().unwrap();
        assert_eq!(parsed["train"]["steps"].as_integer(), Some(200));
        assert_eq!(parsed["proposal"]["alpha"].as_array().unwrap().len(), 3);
        assert_eq!(m.entries().len(), 3);
    }
}
