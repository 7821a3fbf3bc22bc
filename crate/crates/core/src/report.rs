//! Flat output formats: CSV number formatting and `key = value` documents.

use std::fmt::Display;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// An ordered list of `key = value` lines.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvDocument {
    entries: Vec<(String, String)>,
}

impl KvDocument {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn text(&mut self, key: impl Into<String>, value: impl Display) -> &mut Self {
        self.entries.push((key.into(), value.to_string()));
        self
    }

    pub fn real(&mut self, key: impl Into<String>, value: f64) -> &mut Self {
        self.entries.push((key.into(), fmt_f64(value)));
        self
    }

    pub fn opt_real(&mut self, key: impl Into<String>, value: Option<f64>) -> &mut Self {
        let v = value.map(fmt_f64).unwrap_or_else(|| "none".into());
        self.entries.push((key.into(), v));
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn render(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Parse a document produced by [`KvDocument::render`].
    pub fn parse(text: &str) -> Self {
        let entries = text
            .lines()
            .filter_map(|l| l.split_once(" = "))
            .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
            .collect();
        KvDocument { entries }
    }
}
