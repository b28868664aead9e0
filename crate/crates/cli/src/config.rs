//! `key = value` configuration files, overridable by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use qcorr::Error;

/// Parses `key = value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse(text: &str) -> Result<BTreeMap<String, String>, Error> {
    let mut out = BTreeMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        let key = k.trim().replace('_', "-");
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
        }
        if out.insert(key.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key {key}", lineno + 1)));
        }
    }
    Ok(out)
}

pub fn load(path: &Path) -> Result<BTreeMap<String, String>, Error> {
    parse(&std::fs::read_to_string(path)?)
}

/// Resolves settings as flag, then config file, then default, recording the
/// value that was used.
#[derive(Debug, Default)]
pub struct Resolver {
    file: BTreeMap<String, String>,
    used: BTreeMap<String, String>,
}

impl Resolver {
    pub fn new(file: BTreeMap<String, String>) -> Self {
        Self {
            file,
            used: BTreeMap::new(),
        }
    }

    pub fn get<T>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, Error>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        Ok(self.get_opt(key, flag)?.unwrap_or_else(|| {
            self.used.insert(key.to_string(), default.to_string());
            default
        }))
    }

    pub fn get_opt<T>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, Error>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let value = match flag {
            Some(v) => Some(v),
            None => match self.file.get(key) {
                Some(s) => Some(
                    s.parse::<T>()
                        .map_err(|e| Error::Config(format!("config key {key} = {s:?}: {e}")))?,
                ),
                None => None,
            },
        };
        if let Some(v) = &value {
            self.used.insert(key.to_string(), v.to_string());
        }
        Ok(value)
    }

    pub fn require<T>(&mut self, key: &str, flag: Option<T>) -> Result<T, Error>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        self.get_opt(key, flag)?
            .ok_or_else(|| Error::Config(format!("missing required setting --{key}")))
    }

    /// Config-file keys never consulted.
    pub fn unused(&self) -> Vec<&str> {
        self.file
            .keys()
            .filter(|k| !self.used.contains_key(*k))
            .map(String::as_str)
            .collect()
    }

    pub fn resolved(&self) -> &BTreeMap<String, String> {
        &self.used
    }
}

/// `on`/`off` switch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Switch(pub bool);

impl FromStr for Switch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "on" | "true" | "yes" | "1" => Ok(Switch(true)),
            "off" | "false" | "no" | "0" => Ok(Switch(false)),
            _ => Err(format!("expected on or off, got {s:?}")),
        }
    }
}

impl Display for Switch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(if self.0 { "on" } else { "off" })
    }
}
