//! Flat `key = value` configuration with dotted keys.
//!
//! Blank lines and lines starting with `#` are ignored. Later assignments
//! (including command-line overrides) replace earlier ones.

use crate::{Error, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Config::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let k = k.trim();
            if k.is_empty() || k.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("invalid key {k:?}"),
                });
            }
            c.entries.insert(k.to_string(), v.trim().to_string());
        }
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn set(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        self.set(k.trim(), v.trim());
        Ok(())
    }

    pub fn get_str(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    /// Typed lookup with a default for absent keys.
    pub fn get<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::Config(format!("cannot parse {key} = {v:?}"))),
        }
    }

    pub fn get_pair<T: FromStr + Copy>(&self, key: &str, default: (T, T)) -> Result<(T, T)> {
        match self.entries.get(key) {
            None => Ok(default),
            Some(v) => {
                let bad = || Error::Config(format!("{key} must be two comma-separated values, got {v:?}"));
                let (a, b) = v.split_once(',').ok_or_else(bad)?;
                Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
            }
        }
    }

    pub fn entries(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Flatten a serializable value: nested objects become dotted keys,
    /// everything else (numbers, strings, arrays, null) is a JSON leaf.
    pub fn from_serialize<T: Serialize>(value: &T) -> Result<Self> {
        let v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
        let mut c = Config::new();
        flatten("", &v, &mut c.entries);
        Ok(c)
    }

    /// Overlay these entries on the flattened form of `base` and rebuild it.
    /// Values that are not valid JSON are taken as strings; keys unknown to
    /// `base` are rejected.
    pub fn overlay<T: Serialize + DeserializeOwned>(&self, base: &T) -> Result<T> {
        let mut v = serde_json::to_value(base).map_err(|e| Error::Config(e.to_string()))?;
        for (k, raw) in &self.entries {
            let slot = lookup(&mut v, k).ok_or_else(|| Error::Config(format!("unknown configuration key {k:?}")))?;
            let leaf = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.clone()));
            *slot = match (&*slot, leaf) {
                (Value::String(_), Value::Number(n)) => Value::String(n.to_string()),
                (_, leaf) => leaf,
            };
        }
        serde_json::from_value(v).map_err(|e| Error::Config(e.to_string()))
    }

    /// Only the entries whose key starts with `prefix.`, with the prefix removed.
    pub fn section(&self, prefix: &str) -> Config {
        let p = format!("{prefix}.");
        Config {
            entries: self
                .entries
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|rest| (rest.to_string(), v.clone())))
                .collect(),
        }
    }

    /// The configuration as it would be written to a file.
    pub fn echo(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn flatten(prefix: &str, v: &Value, out: &mut BTreeMap<String, String>) {
    match v {
        Value::Object(map) if !map.is_empty() => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => {
            out.insert(prefix.to_string(), leaf.to_string());
        }
    }
}

fn lookup<'a>(v: &'a mut Value, key: &str) -> Option<&'a mut Value> {
    key.split('.').try_fold(v, |node, part| node.as_object_mut()?.get_mut(part))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let mut c = Config::parse("# comment\ntrain_main.lr = 4e-4\n\nmodel.kind=ctc\n").unwrap();
        assert_eq!(c.get("train_main.lr", 0.0).unwrap(), 4e-4);
        assert_eq!(c.get_str("model.kind"), Some("ctc"));
        c.apply_override("train_main.lr=1e-3").unwrap();
        assert_eq!(c.get("train_main.lr", 0.0).unwrap(), 1e-3);
        assert_eq!(c.get("missing", 7usize).unwrap(), 7);
        assert_eq!(Config::parse(&c.echo()).unwrap(), c);
    }

    #[test]
    fn parse_errors_carry_line() {
        match Config::parse("a = 1\nbroken line\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
        let c = Config::parse("x = abc").unwrap();
        assert!(c.get("x", 1usize).is_err());
    }

    #[test]
    fn pairs() {
        let c = Config::parse("r = 2, 4").unwrap();
        assert_eq!(c.get_pair("r", (0usize, 0)).unwrap(), (2, 4));
    }

    #[derive(Debug, PartialEq, serde::Serialize, serde::Deserialize)]
    struct Inner {
        lr: f64,
        name: String,
        range: (u32, u32),
    }

    #[derive(Debug, PartialEq, serde::Serialize, serde::Deserialize)]
    struct Outer {
        steps: usize,
        inner: Inner,
        opt: Option<f64>,
    }

    #[test]
    fn flatten_overlay_round_trip() {
        let base = Outer {
            steps: 3,
            inner: Inner {
                lr: 0.5,
                name: "a".into(),
                range: (1, 2),
            },
            opt: None,
        };
        let flat = Config::from_serialize(&base).unwrap();
        assert_eq!(flat.get_str("inner.lr"), Some("0.5"));
        assert_eq!(flat.overlay(&base).unwrap(), base);
        let over = Config::parse("inner.name = 12\ninner.range = [4, 5]\nopt = 2.5\nsteps = 9").unwrap();
        let out = over.overlay(&base).unwrap();
        assert_eq!(out.inner.name, "12");
        assert_eq!(out.inner.range, (4, 5));
        assert_eq!(out.opt, Some(2.5));
        assert_eq!(out.steps, 9);
        assert!(Config::parse("inner.nope = 1").unwrap().overlay(&base).is_err());
        assert!(Config::parse("steps = many").unwrap().overlay(&base).is_err());
    }
}
