//! Flat key-value config files with sections. Strict by design: unknown
//! sections or keys are errors anchored to their line, so a misspelled
//! tolerance can never silently fall back to a default.
//!
//! Syntax:
//! ```text
//! # comment
//! [section]
//! key = value
//! ```

use std::cell::Cell;
use std::fmt;

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub msg: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(line) => write!(f, "line {line}: {}", self.msg),
            None => write!(f, "{}", self.msg),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        msg: msg.into(),
    }
}

const SECTIONS: &[&str] = &["problem", "solver", "schedule", "control", "output", "verify"];

#[derive(Debug)]
struct Entry {
    section: String,
    key: String,
    value: String,
    line: usize,
    used: Cell<bool>,
}

#[derive(Debug)]
pub struct Config {
    entries: Vec<Entry>,
    sections_present: Vec<String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        let mut entries = Vec::new();
        let mut sections_present = Vec::new();
        let mut section: Option<String> = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(name) = content.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| err(line, format!("unterminated section header '{content}'")))?
                    .trim();
                if !SECTIONS.contains(&name) {
                    return Err(err(
                        line,
                        format!("unknown section '[{name}]' (expected one of {SECTIONS:?})"),
                    ));
                }
                if sections_present.iter().any(|s| s == name) {
                    return Err(err(line, format!("duplicate section '[{name}]'")));
                }
                sections_present.push(name.to_string());
                section = Some(name.to_string());
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(err(line, format!("expected 'key = value', got '{content}'")));
            };
            let Some(section) = &section else {
                return Err(err(line, "key outside of any [section]".to_string()));
            };
            let key = key.trim().to_string();
            if entries
                .iter()
                .any(|e: &Entry| e.section == *section && e.key == key)
            {
                return Err(err(line, format!("duplicate key '{section}.{key}'")));
            }
            entries.push(Entry {
                section: section.clone(),
                key,
                value: value.trim().to_string(),
                line,
                used: Cell::new(false),
            });
        }
        Ok(Config {
            entries,
            sections_present,
        })
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections_present.iter().any(|s| s == section)
    }

    fn find(&self, section: &str, key: &str) -> Option<&Entry> {
        self.entries
            .iter()
            .find(|e| e.section == section && e.key == key)
    }

    pub fn get(&self, section: &str, key: &str) -> Option<&str> {
        self.find(section, key).map(|e| {
            e.used.set(true);
            e.value.as_str()
        })
    }

    pub fn require(&self, section: &str, key: &str) -> Result<&str, ConfigError> {
        self.get(section, key).ok_or_else(|| ConfigError {
            line: None,
            msg: format!("missing required key '{section}.{key}'"),
        })
    }

    fn parse_with<T, E: fmt::Display>(
        &self,
        section: &str,
        key: &str,
        value: &str,
        parse: impl FnOnce(&str) -> Result<T, E>,
        what: &str,
    ) -> Result<T, ConfigError> {
        parse(value).map_err(|e| {
            let line = self.find(section, key).map(|en| en.line);
            ConfigError {
                line,
                msg: format!("'{section}.{key}': expected {what}, got '{value}' ({e})"),
            }
        })
    }

    pub fn get_f64(&self, section: &str, key: &str) -> Result<Option<f64>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => self
                .parse_with(section, key, v, str::parse::<f64>, "a number")
                .map(Some),
        }
    }

    pub fn require_f64(&self, section: &str, key: &str) -> Result<f64, ConfigError> {
        let v = self.require(section, key)?;
        self.parse_with(section, key, v, str::parse::<f64>, "a number")
    }

    pub fn get_usize(&self, section: &str, key: &str) -> Result<Option<usize>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => self
                .parse_with(section, key, v, str::parse::<usize>, "a nonnegative integer")
                .map(Some),
        }
    }

    pub fn require_usize(&self, section: &str, key: &str) -> Result<usize, ConfigError> {
        let v = self.require(section, key)?;
        self.parse_with(section, key, v, str::parse::<usize>, "a nonnegative integer")
    }

    pub fn get_u64(&self, section: &str, key: &str) -> Result<Option<u64>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => self
                .parse_with(section, key, v, str::parse::<u64>, "a nonnegative integer")
                .map(Some),
        }
    }

    pub fn get_bool(&self, section: &str, key: &str) -> Result<Option<bool>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some("true") => Ok(Some(true)),
            Some("false") => Ok(Some(false)),
            Some(v) => Err(ConfigError {
                line: self.find(section, key).map(|e| e.line),
                msg: format!("'{section}.{key}': expected true or false, got '{v}'"),
            }),
        }
    }

    pub fn get_f64_list(&self, section: &str, key: &str) -> Result<Option<Vec<f64>>, ConfigError> {
        match self.get(section, key) {
            None => Ok(None),
            Some(v) => {
                let mut out = Vec::new();
                for part in v.split(',') {
                    out.push(self.parse_with(
                        section,
                        key,
                        part.trim(),
                        str::parse::<f64>,
                        "a comma-separated list of numbers",
                    )?);
                }
                Ok(Some(out))
            }
        }
    }

    /// Errors on the first key that was never read by the resolver.
    pub fn finish(&self) -> Result<(), ConfigError> {
        for e in &self.entries {
            if !e.used.get() {
                return Err(err(e.line, format!("unknown key '{}.{}'", e.section, e.key)));
            }
        }
        Ok(())
    }

    /// The raw parsed content as JSON, for echoing into output documents.
    pub fn echo(&self) -> serde_json::Value {
        let mut root = serde_json::Map::new();
        for e in &self.entries {
            let section = root
                .entry(e.section.clone())
                .or_insert_with(|| serde_json::Value::Object(serde_json::Map::new()));
            if let serde_json::Value::Object(map) = section {
                map.insert(e.key.clone(), serde_json::Value::String(e.value.clone()));
            }
        }
        serde_json::Value::Object(root)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_sections_and_values() {
        let c = Config::parse("[problem]\ndim = 1 # nodes\nn = 63\n\n[solver]\ngamma = 1e4\n")
            .unwrap();
        assert_eq!(c.require_usize("problem", "n").unwrap(), 63);
        assert_eq!(c.require_f64("solver", "gamma").unwrap(), 1e4);
        assert_eq!(c.require_usize("problem", "dim").unwrap(), 1);
        c.finish().unwrap();
    }

    #[test]
    fn unknown_key_is_line_anchored() {
        let c = Config::parse("[solver]\ngamma = 1\ntol_rse = 1e-10\n").unwrap();
        let _ = c.require_f64("solver", "gamma");
        let e = c.finish().unwrap_err();
        assert_eq!(e.line, Some(3));
        assert!(e.to_string().contains("tol_rse"));
    }

    #[test]
    fn unknown_section_rejected() {
        let e = Config::parse("[sovler]\ngamma = 1\n").unwrap_err();
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn bad_number_is_line_anchored() {
        let c = Config::parse("[solver]\ngamma = fast\n").unwrap();
        let e = c.require_f64("solver", "gamma").unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn list_parsing() {
        let c = Config::parse("[schedule]\ngamma_list = 1, 10, 100\n").unwrap();
        assert_eq!(
            c.get_f64_list("schedule", "gamma_list").unwrap().unwrap(),
            vec![1.0, 10.0, 100.0]
        );
    }
}
