//! Optional key=value settings file. Keys are flag names; a `[command]`
//! table overrides top-level keys for that command. Flags always win.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, Context, Result};

#[derive(Debug, Default)]
pub struct Settings {
    table: toml::Table,
    section: String,
}

impl Settings {
    pub fn load(path: Option<&Path>, section: &str) -> Result<Self> {
        let table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<toml::Table>().with_context(|| format!("parsing {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        Ok(Self {
            table,
            section: section.to_string(),
        })
    }

    fn raw(&self, key: &str) -> Option<&toml::Value> {
        self.table
            .get(&self.section)
            .and_then(|s| s.as_table())
            .and_then(|s| s.get(key))
            .or_else(|| self.table.get(key).filter(|v| !v.is_table()))
    }

    /// The flag value if given, else the file value.
    pub fn pick<T>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        let Some(v) = self.raw(key) else { return Ok(None) };
        let text = match v {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            other => return Err(anyhow!("setting {key}: unsupported value {other}")),
        };
        text.parse::<T>().map(Some).map_err(|e| anyhow!("setting {key} = {text}: {e}"))
    }

    pub fn pick_or<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: Display,
    {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// A switch is on when the flag is set or the file says `true`.
    pub fn switch(&self, flag: bool, key: &str) -> Result<bool> {
        Ok(flag || self.pick::<bool>(None, key)?.unwrap_or(false))
    }
}
