//! Flat `key = value` run settings.
//!
//! Values come from an optional config file, then command-line flags, with
//! flags winning. Every key a command reads is recorded with its resolved
//! value so the manifest written next to the outputs reruns the command
//! exactly. Keys nobody reads are rejected, which catches typos.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use smb_core::io;

pub struct Settings {
    values: BTreeMap<String, String>,
    resolved: RefCell<BTreeMap<String, String>>,
    read: RefCell<BTreeSet<String>>,
}

impl Settings {
    pub fn load(config: Option<&Path>, flags: Vec<(&'static str, String)>) -> Result<Self> {
        let mut values = match config {
            Some(path) => io::parse_key_values(&io::read_text(path)?, &path.display().to_string())?,
            None => BTreeMap::new(),
        };
        for (k, v) in flags {
            values.insert(k.to_string(), v);
        }
        Ok(Self {
            values,
            resolved: RefCell::new(BTreeMap::new()),
            read: RefCell::new(BTreeSet::new()),
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.read.borrow_mut().insert(key.to_string());
        self.values.get(key).map(String::as_str)
    }

    fn record(&self, key: &str, value: String) {
        self.resolved.borrow_mut().insert(key.to_string(), value);
    }

    pub fn get<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s.parse::<T>().map_err(|e| anyhow!("setting `{key}`: cannot parse `{s}`: {e}"))?,
            None => default,
        };
        self.record(key, v.to_string());
        Ok(v)
    }

    /// Comma-separated list.
    pub fn list<T>(&self, key: &str, default: Vec<T>) -> Result<Vec<T>>
    where
        T: FromStr + Display,
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse::<T>()
                        .map_err(|e| anyhow!("setting `{key}`: cannot parse `{}`: {e}", p.trim()))
                })
                .collect::<Result<Vec<T>>>()?,
            None => default,
        };
        self.record(key, v.iter().map(ToString::to_string).collect::<Vec<_>>().join(","));
        Ok(v)
    }

    /// Fails on keys that no part of the command read.
    pub fn finish(&self) -> Result<()> {
        let read = self.read.borrow();
        let unknown: Vec<&str> = self
            .values
            .keys()
            .filter(|k| !read.contains(*k))
            .map(String::as_str)
            .collect();
        if !unknown.is_empty() {
            bail!("unknown setting(s) for this command: {}", unknown.join(", "));
        }
        Ok(())
    }

    /// Resolved settings as a config document headed by the command name.
    pub fn manifest(&self, command: &str, inputs: &[(&str, &Path)]) -> String {
        let mut out = format!("# smb {command}\n");
        for (name, path) in inputs {
            out.push_str(&format!("# input {name}: {}\n", path.display()));
        }
        out.push_str(&io::format_key_values(&self.resolved.borrow()));
        out
    }

    pub fn write_manifest(&self, dir: &Path, command: &str, inputs: &[(&str, &Path)]) -> Result<()> {
        let path = dir.join("manifest.txt");
        io::write_text(&path, &self.manifest(command, inputs)).with_context(|| format!("writing {}", path.display()))
    }
}
