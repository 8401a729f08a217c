//! Plain-text `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Callers pull typed values out with
//! [`KeyValues::read`]; [`KeyValues::finish`] then reports every key nobody
//! asked for.

use std::collections::BTreeSet;
use std::str::FromStr;

use indexmap::IndexMap;

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default)]
pub struct KeyValues {
    entries: IndexMap<String, (String, usize)>,
    used: BTreeSet<String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = IndexMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = k.trim().to_string();
            if key.is_empty() {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: "empty key".into(),
                });
            }
            if entries
                .insert(key.clone(), (v.trim().to_string(), idx + 1))
                .is_some()
            {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(Self {
            entries,
            used: BTreeSet::new(),
        })
    }

    /// Later values win; used for command-line overrides.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.insert(key.to_string(), (value.to_string(), 0));
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Parse `key` into `T` if present and mark it consumed.
    pub fn read<T: FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        let Some((v, line)) = self.entries.get(key) else {
            return Ok(None);
        };
        self.used.insert(key.to_string());
        v.parse::<T>().map(Some).map_err(|_| Error::Parse {
            line: *line,
            message: format!("cannot parse `{v}` for key `{key}`"),
        })
    }

    /// Overwrite `target` when `key` is present.
    pub fn read_into<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()> {
        if let Some(v) = self.read(key)? {
            *target = v;
        }
        Ok(())
    }

    pub fn unknown_keys(&self) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| !self.used.contains(*k))
            .cloned()
            .collect()
    }

    /// Error listing every unconsumed key.
    pub fn finish(&self) -> Result<()> {
        let unknown = self.unknown_keys();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "unknown keys: {}",
                unknown.join(", ")
            )))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries
            .iter()
            .map(|(k, (v, _))| (k.as_str(), v.as_str()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_reports_unknown() {
        let mut kv =
            KeyValues::parse("# header\nembed_dim = 32\nfoo = 1 # trailing\nbar=x\n").unwrap();
        assert_eq!(kv.read::<usize>("embed_dim").unwrap(), Some(32));
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("foo") && err.contains("bar"), "{err}");
    }

    #[test]
    fn bad_value_has_line() {
        let mut kv = KeyValues::parse("\n\nlr = abc\n").unwrap();
        match kv.read::<f64>("lr") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_equals_rejected() {
        assert!(KeyValues::parse("just a line").is_err());
    }
}
