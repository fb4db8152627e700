//! Flat `key = value` configuration files.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Settings keyed by name; a repeated key keeps its last value.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings(pub BTreeMap<String, String>);

impl Settings {
    pub fn parse(text: &str) -> Result<Settings> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected key=value", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Config(format!("config line {}: empty key", n + 1)));
            }
            map.insert(k.to_string(), v.to_string());
        }
        Ok(Settings(map))
    }

    pub fn load(path: &Path) -> Result<Settings> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Settings::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn insert(&mut self, key: &str, value: impl ToString) {
        self.0.insert(key.to_string(), value.to_string());
    }

    /// Overlays `other` on top of `self`.
    pub fn merged(mut self, other: &Settings) -> Settings {
        self.0.extend(other.0.iter().map(|(k, v)| (k.clone(), v.clone())));
        self
    }

    /// Canonical text, one sorted `key=value` per line.
    pub fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_spaces() {
        let s = Settings::parse("# header\nlambda = 0.7\n\ngamma=0.2 # trailing\n").unwrap();
        assert_eq!(s.get("lambda"), Some("0.7"));
        assert_eq!(s.get("gamma"), Some("0.2"));
        assert_eq!(s.render(), "gamma=0.2\nlambda=0.7\n");
    }

    #[test]
    fn rejects_bare_words() {
        assert!(Settings::parse("lambda\n").is_err());
        assert!(Settings::parse("=3\n").is_err());
    }

    #[test]
    fn overlay_precedence() {
        let file = Settings::parse("lambda=0.1\nepochs=3\n").unwrap();
        let mut flags = Settings::default();
        flags.insert("lambda", 0.9);
        let m = file.merged(&flags);
        assert_eq!(m.get("lambda"), Some("0.9"));
        assert_eq!(m.get("epochs"), Some("3"));
    }
}
