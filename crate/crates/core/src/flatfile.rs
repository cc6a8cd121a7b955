//! Line-oriented `section.key = value` files with `#` comment lines.
//!
//! Shared by run configs, scenario files and synthetic object scripts.

use std::collections::BTreeMap;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FlatError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{key}: {reason}")]
    Invalid { key: String, reason: String },
}

impl FlatError {
    pub fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        FlatError::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatEntry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

/// Parsed file. Keys are unique; document order is kept.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatFile {
    entries: Vec<FlatEntry>,
    index: BTreeMap<String, usize>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.split('.').all(|seg| {
            !seg.is_empty()
                && seg
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
        })
}

impl FlatFile {
    pub fn parse(text: &str) -> Result<Self, FlatError> {
        let mut file = FlatFile::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let Some((k, v)) = trimmed.split_once('=') else {
                return Err(FlatError::Parse {
                    line,
                    message: format!("expected `key = value`, got {trimmed:?}"),
                });
            };
            let key = k.trim();
            if !valid_key(key) {
                return Err(FlatError::Parse {
                    line,
                    message: format!("malformed key {key:?}"),
                });
            }
            if file.index.contains_key(key) {
                return Err(FlatError::Parse {
                    line,
                    message: format!("duplicate key {key:?}"),
                });
            }
            file.index.insert(key.to_string(), file.entries.len());
            file.entries.push(FlatEntry {
                key: key.to_string(),
                value: v.trim().to_string(),
                line,
            });
        }
        Ok(file)
    }

    pub fn entries(&self) -> &[FlatEntry] {
        &self.entries
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.index.get(key).map(|&i| self.entries[i].value.as_str())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.index.contains_key(key)
    }

    /// Entries whose key starts with `prefix.`, in document order.
    pub fn with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a FlatEntry> + 'a {
        self.entries.iter().filter(move |e| {
            e.key
                .strip_prefix(prefix)
                .is_some_and(|rest| rest.starts_with('.'))
        })
    }

    /// Parse `key` with `FromStr`, or `None` if absent.
    pub fn parse_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, FlatError> {
        match self.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse()
                .map(Some)
                .map_err(|_| FlatError::invalid(key, format!("cannot parse {v:?}"))),
        }
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T, FlatError> {
        Ok(self.parse_opt(key)?.unwrap_or(default))
    }
}

/// Comma-separated floats, e.g. `10,20,50,80`.
pub fn parse_floats(key: &str, value: &str, n: usize) -> Result<Vec<f64>, FlatError> {
    let parts: Result<Vec<f64>, _> = value.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match parts {
        Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(FlatError::invalid(
            key,
            format!("expected {n} comma-separated numbers, got {value:?}"),
        )),
    }
}

/// `WIDTHxHEIGHT` with both sides positive.
pub fn parse_resolution(key: &str, value: &str) -> Result<(u32, u32), FlatError> {
    let err = || FlatError::invalid(key, format!("expected WIDTHxHEIGHT, got {value:?}"));
    let (w, h) = value.split_once(['x', 'X']).ok_or_else(err)?;
    let w: u32 = w.trim().parse().map_err(|_| err())?;
    let h: u32 = h.trim().parse().map_err(|_| err())?;
    if w == 0 || h == 0 {
        return Err(err());
    }
    Ok((w, h))
}

/// `true/false/on/off/yes/no/1/0`.
pub fn parse_bool(key: &str, value: &str) -> Result<bool, FlatError> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(FlatError::invalid(key, format!("expected a boolean, got {value:?}"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_keys() {
        let f = FlatFile::parse("# hi\n\ntracker.theta = 0.4\n  channel.kind=mock  \n").unwrap();
        assert_eq!(f.get("tracker.theta"), Some("0.4"));
        assert_eq!(f.get("channel.kind"), Some("mock"));
        assert_eq!(f.entries()[1].line, 4);
        assert_eq!(f.parse_or("tracker.l_max", 10u32).unwrap(), 10);
    }

    #[test]
    fn reports_line_numbers() {
        assert_eq!(
            FlatFile::parse("a = 1\nbogus line\n"),
            Err(FlatError::Parse {
                line: 2,
                message: "expected `key = value`, got \"bogus line\"".into()
            })
        );
        assert!(matches!(
            FlatFile::parse("a = 1\na = 2"),
            Err(FlatError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            FlatFile::parse("a..b = 1"),
            Err(FlatError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn prefix_iteration() {
        let f = FlatFile::parse("object.a.label = car\nobjects = 1\nobject.b.label = person").unwrap();
        let keys: Vec<_> = f.with_prefix("object").map(|e| e.key.as_str()).collect();
        assert_eq!(keys, vec!["object.a.label", "object.b.label"]);
    }

    #[test]
    fn value_helpers() {
        assert_eq!(parse_resolution("r", "640x480").unwrap(), (640, 480));
        assert!(parse_resolution("r", "0x480").is_err());
        assert!(parse_floats("b", "1,2,3", 4).is_err());
        assert_eq!(parse_floats("b", "1, 2.5", 2).unwrap(), vec![1.0, 2.5]);
        assert!(parse_bool("p", "on").unwrap());
        assert!(parse_bool("p", "maybe").is_err());
    }
}
