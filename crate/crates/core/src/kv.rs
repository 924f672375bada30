//! Flat `key = value` configuration text.
//!
//! Blank lines and `#` comments are ignored. Keys are consumed by the typed
//! configuration structs; anything left over is reported as unknown.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key=value", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if entries
                .insert(key.clone(), (lineno + 1, value.trim().to_string()))
                .is_some()
            {
                return Err(Error::InvalidConfig(format!(
                    "line {}: duplicate key `{key}`",
                    lineno + 1
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Removes `key` and parses it, leaving `target` untouched when absent.
    pub fn take<T: FromStr>(&mut self, key: &str, target: &mut T) -> Result<()> {
        if let Some((line, value)) = self.entries.remove(key) {
            *target = value.parse().map_err(|_| {
                Error::InvalidConfig(format!("line {line}: cannot parse `{key}` = `{value}`"))
            })?;
        }
        Ok(())
    }

    pub fn take_raw(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|(_, v)| v)
    }

    /// Fails if any key was not consumed.
    pub fn finish(self) -> Result<()> {
        match self.entries.into_iter().next() {
            None => Ok(()),
            Some((key, (line, _))) => Err(Error::InvalidConfig(format!(
                "line {line}: unknown key `{key}`"
            ))),
        }
    }
}
