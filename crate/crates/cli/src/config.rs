//! Run configuration: flat `key = value` text files with `[section]` headers
//! (or fully-qualified `section.key = value` lines), flag overrides, and seed
//! resolution via the AFFECT_SEED environment variable.

use std::collections::BTreeMap;
use std::path::Path;

use affect_core::{Error, Result};

pub const DEFAULT_SEED: u64 = 42;

/// Parsed config file: fully-qualified keys to raw values.
#[derive(Debug, Clone, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

pub fn parse_config_text(text: &str) -> Result<FileConfig> {
    let mut values = BTreeMap::new();
    let mut section = String::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(inner) = line.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = inner.trim().to_string();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "config line {}: expected `key = value`, got {line:?}",
                lineno + 1
            )));
        };
        let key = key.trim();
        let full = if key.contains('.') || section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        if values.insert(full.clone(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!(
                "config line {}: duplicate key {full:?}",
                lineno + 1
            )));
        }
    }
    Ok(FileConfig { values })
}

pub fn parse_config_file(path: &Path) -> Result<FileConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Config(format!("config file {} does not exist", path.display()))
        } else {
            Error::Io(e)
        }
    })?;
    parse_config_text(&text)
}

impl FileConfig {
    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|s| s.as_str())
    }

    fn get_parsed<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse::<T>().map(Some).map_err(|_| {
                Error::Config(format!("config key {key:?} has invalid value {raw:?}"))
            }),
        }
    }

    pub fn get_usize(&self, key: &str) -> Result<Option<usize>> {
        self.get_parsed(key)
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>> {
        self.get_parsed(key)
    }

    pub fn get_u32(&self, key: &str) -> Result<Option<u32>> {
        self.get_parsed(key)
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>> {
        self.get_parsed(key)
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>> {
        match self.values.get(key).map(|s| s.as_str()) {
            None => Ok(None),
            Some("1") | Some("true") => Ok(Some(true)),
            Some("0") | Some("false") => Ok(Some(false)),
            Some(other) => Err(Error::Config(format!(
                "config key {key:?} must be a boolean, got {other:?}"
            ))),
        }
    }

    /// Reject keys outside the recognized set; typos fail fast.
    pub fn check_known(&self, known: &[&str]) -> Result<()> {
        for key in self.values.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }

    /// Every key/value pair, for the effective-config echo.
    pub fn entries(&self) -> impl Iterator<Item = (&str, &str)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

/// Seed precedence: explicit flag, then config file, then AFFECT_SEED, then
/// the fixed default.
pub fn resolve_seed(flag: Option<u64>, file_value: Option<u64>) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    if let Some(s) = file_value {
        return Ok(s);
    }
    match std::env::var("AFFECT_SEED") {
        Ok(raw) => raw
            .parse()
            .map_err(|_| Error::Config(format!("AFFECT_SEED has invalid value {raw:?}"))),
        Err(_) => Ok(DEFAULT_SEED),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_dotted_keys() {
        let cfg = parse_config_text(
            "# comment\n[model]\nd_m = 32\nnum_heads = 4\n\n[train]\nlr = 0.001\nsynth.classes = 4\n",
        )
        .unwrap();
        assert_eq!(cfg.get_usize("model.d_m").unwrap(), Some(32));
        assert_eq!(cfg.get_f64("train.lr").unwrap(), Some(0.001));
        assert_eq!(cfg.get_usize("synth.classes").unwrap(), Some(4));
        assert_eq!(cfg.get_usize("model.missing").unwrap(), None);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(parse_config_text("[a]\nx = 1\nx = 2\n").is_err());
        assert!(parse_config_text("just words\n").is_err());
    }

    #[test]
    fn unknown_key_detection() {
        let cfg = parse_config_text("[model]\nd_m = 8\n").unwrap();
        assert!(cfg.check_known(&["model.d_m"]).is_ok());
        assert!(cfg.check_known(&["model.d_v"]).is_err());
    }
}
