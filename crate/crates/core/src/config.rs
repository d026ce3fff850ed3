//! Plain `key = value` configuration text with `#` comments.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub trait KeyValues {
    /// Every key with its current value, in a fixed order.
    fn pairs(&self) -> Vec<(&'static str, String)>;

    /// Sets one key; unknown keys and unparsable values are errors.
    fn set(&mut self, key: &str, value: &str) -> Result<()>;

    fn to_text(&self) -> String {
        self.pairs()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// Applies every assignment in `text`; `origin` names the source in
    /// errors.
    fn apply_text(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (line, key, value) in parse_assignments(text, origin)? {
            self.set(&key, &value).map_err(|e| Error::Parse {
                path: origin.to_path_buf(),
                line,
                detail: match e {
                    Error::Config(m) => m,
                    other => other.to_string(),
                },
            })?;
        }
        Ok(())
    }
}

/// `(line, key, value)` for every non-comment line.
pub fn parse_assignments(text: &str, origin: &Path) -> Result<Vec<(u64, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: origin.to_path_buf(),
            line: i as u64 + 1,
            detail: format!("expected key = value, got {line:?}"),
        })?;
        out.push((i as u64 + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn parse_value<T>(key: &str, value: &str) -> Result<T>
where
    T: FromStr,
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("{key}: cannot parse {value:?}: {e}")))
}

pub fn unknown_key(key: &str) -> Error {
    Error::Config(format!("unknown key {key:?}"))
}
