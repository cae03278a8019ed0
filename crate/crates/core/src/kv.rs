//! Flat `key = value` text, as used by config files and checkpoint headers.
//!
//! Blank lines and lines starting with `#` are ignored. Keys may appear once.
//! Consumers take the keys they know and then call [`KvText::finish`], which
//! rejects anything left over.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug)]
pub struct KvText {
    source: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

impl KvText {
    pub fn parse(text: &str, source: impl AsRef<Path>) -> Result<Self> {
        let source = source.as_ref().to_path_buf();
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Record {
                    path: source,
                    line: i + 1,
                    reason: format!("expected `key = value`, got `{line}`"),
                });
            };
            let key = k.trim().to_owned();
            if key.is_empty() {
                return Err(Error::Record {
                    path: source,
                    line: i + 1,
                    reason: "empty key".into(),
                });
            }
            if entries.insert(key.clone(), (i + 1, v.trim().to_owned())).is_some() {
                return Err(Error::Record {
                    path: source,
                    line: i + 1,
                    reason: format!("duplicate key `{key}`"),
                });
            }
        }
        Ok(KvText { source, entries })
    }

    /// Removes and parses `key`, if present.
    pub fn take<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, raw)) = self.entries.remove(key) else {
            return Ok(None);
        };
        raw.parse::<T>().map(Some).map_err(|e| Error::Record {
            path: self.source.clone(),
            line,
            reason: format!("invalid value for `{key}`: {e}"),
        })
    }

    pub fn take_or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.take(key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((line, raw)) = self.entries.remove(key) else {
            return Ok(None);
        };
        raw.split(',')
            .map(|s| s.trim().parse::<T>())
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
            .map_err(|e| Error::Record {
                path: self.source.clone(),
                line,
                reason: format!("invalid list for `{key}`: {e}"),
            })
    }

    pub fn finish(self) -> Result<()> {
        if let Some((key, (line, _))) = self.entries.into_iter().min_by_key(|(_, (l, _))| *l) {
            return Err(Error::Record {
                path: self.source,
                line,
                reason: format!("unknown key `{key}`"),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_rejects_unknown() {
        let mut kv = KvText::parse("# c\na = 1\n\nb=2.5\nzz = x\n", "cfg").unwrap();
        assert_eq!(kv.take::<u32>("a").unwrap(), Some(1));
        assert_eq!(kv.take_or::<f64>("b", 0.0).unwrap(), 2.5);
        assert_eq!(kv.take_or::<f64>("c", 7.0).unwrap(), 7.0);
        let err = kv.finish().unwrap_err().to_string();
        assert!(err.contains("cfg:5") && err.contains("zz"), "{err}");
    }

    #[test]
    fn rejects_duplicates_and_bad_values() {
        assert!(KvText::parse("a = 1\na = 2", "x").is_err());
        assert!(KvText::parse("novalue", "x").is_err());
        let mut kv = KvText::parse("a = one", "x").unwrap();
        assert!(kv.take::<u32>("a").is_err());
        let mut kv = KvText::parse("l = 1, 2,3", "x").unwrap();
        assert_eq!(kv.take_list::<usize>("l").unwrap(), Some(vec![1, 2, 3]));
    }
}
