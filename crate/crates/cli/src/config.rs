//! Flat `key = value` run configuration.
//!
//! One entry per line, `#` starts a comment, blank lines are ignored.
//! Overrides given on the command line replace file entries. Every key a
//! subcommand does not read is reported as an error.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    entries: BTreeMap<String, String>,
    used: std::cell::RefCell<BTreeSet<String>>,
}

fn split_entry(line: &str) -> Option<(String, String)> {
    let (k, v) = line.split_once('=')?;
    let k = k.trim();
    if k.is_empty() {
        return None;
    }
    Some((k.to_string(), v.trim().to_string()))
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> CliResult<Self> {
        let mut entries = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = split_entry(line)
                .ok_or_else(|| CliError::Config(format!("{origin}:{}: expected `key = value`", no + 1)))?;
            if entries.insert(k.clone(), v).is_some() {
                return Err(CliError::Config(format!("{origin}:{}: duplicate key `{k}`", no + 1)));
            }
        }
        Ok(Self {
            entries,
            used: Default::default(),
        })
    }

    pub fn load(path: Option<&Path>, overrides: &[String], seed: Option<u64>) -> CliResult<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::parse(&text, &p.display().to_string())?
            }
            None => Self::default(),
        };
        for o in overrides {
            let (k, v) = split_entry(o).ok_or_else(|| CliError::Config(format!("override `{o}` is not key=value")))?;
            cfg.entries.insert(k, v);
        }
        if let Some(s) = seed {
            cfg.entries.insert("seed".into(), s.to_string());
        }
        Ok(cfg)
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.used.borrow_mut().insert(key.to_string());
        self.entries.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> CliResult<Option<T>>
    where
        T::Err: Display,
    {
        self.raw(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|e| CliError::Config(format!("`{key} = {v}`: {e}")))
            })
            .transpose()
    }

    pub fn get_or<T: FromStr>(&self, key: &str, default: T) -> CliResult<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    pub fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(PathBuf::from)
    }

    pub fn require_path(&self, key: &str) -> CliResult<PathBuf> {
        self.path(key)
            .ok_or_else(|| CliError::Config(format!("missing required key `{key}`")))
    }

    /// Fails on entries that were never read.
    pub fn finish(&self) -> CliResult<()> {
        let used = self.used.borrow();
        let unknown: Vec<&str> = self
            .entries
            .keys()
            .filter(|k| !used.contains(*k))
            .map(String::as_str)
            .collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Config(format!("unknown keys: {}", unknown.join(", "))))
        }
    }

    /// All entries as sorted `key = value` lines.
    pub fn dump(&self) -> String {
        self.entries
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.entries.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win_and_comments_are_skipped() {
        let mut cfg = RunConfig::parse("a = 1 # one\n\n# nothing\nb=x\n", "t").unwrap();
        cfg.entries.insert("a".into(), "2".into());
        assert_eq!(cfg.get::<u32>("a").unwrap(), Some(2));
        assert_eq!(cfg.raw("b"), Some("x"));
        cfg.finish().unwrap();
    }

    #[test]
    fn rejects_duplicates_and_unknown_keys() {
        assert!(RunConfig::parse("a=1\na=2", "t").is_err());
        assert!(RunConfig::parse("just words", "t").is_err());
        let cfg = RunConfig::parse("a=1\nzzz=2", "t").unwrap();
        cfg.raw("a");
        let err = cfg.finish().unwrap_err().to_string();
        assert!(err.contains("zzz"), "{err}");
    }

    #[test]
    fn bad_values_name_the_key() {
        let cfg = RunConfig::parse("steps = many", "t").unwrap();
        let err = cfg.get::<usize>("steps").unwrap_err().to_string();
        assert!(err.contains("steps"), "{err}");
    }
}
