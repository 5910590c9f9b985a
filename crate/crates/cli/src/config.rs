//! Line-oriented run configuration:
//!
//! ```text
//! # comment
//! out = results
//! [ap-scan]
//! f = sin(x)
//! eps = 0.1
//! ```
//!
//! Keys before the first section header are global.

use std::collections::BTreeMap;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ConfigFile {
    pub global: BTreeMap<String, String>,
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn section(&self, name: &str) -> Option<&BTreeMap<String, String>> {
        self.sections.get(name)
    }
}

fn valid_key(k: &str) -> bool {
    !k.is_empty() && k.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
}

pub fn parse_config(text: &str) -> Result<ConfigFile, ConfigError> {
    let mut cfg = ConfigFile::default();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |message: String| ConfigError::Syntax { line: i + 1, message };
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| err("unterminated section header".into()))?
                .trim();
            if !valid_key(name) {
                return Err(err(format!("bad section name {name:?}")));
            }
            cfg.sections.entry(name.to_owned()).or_default();
            current = Some(name.to_owned());
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err("expected `key = value`".into()))?;
        let (k, v) = (k.trim(), v.trim());
        if !valid_key(k) {
            return Err(err(format!("bad key {k:?}")));
        }
        let map = match &current {
            Some(s) => cfg.sections.get_mut(s).expect("section was inserted"),
            None => &mut cfg.global,
        };
        if map.insert(k.replace('_', "-"), v.to_owned()).is_some() {
            return Err(err(format!("duplicate key {k:?}")));
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sections_and_globals() {
        let c = parse_config("# run\nout = res\n\n[ap-scan]\nf = sin(x) + 1\nt_step=0.1\n[norm]\n").unwrap();
        assert_eq!(c.global["out"], "res");
        let s = c.section("ap-scan").unwrap();
        assert_eq!(s["f"], "sin(x) + 1");
        assert_eq!(s["t-step"], "0.1");
        assert!(c.section("norm").unwrap().is_empty());
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert_eq!(
            parse_config("a = 1\nnonsense\n"),
            Err(ConfigError::Syntax {
                line: 2,
                message: "expected `key = value`".into()
            })
        );
        assert!(parse_config("[open\n").is_err());
        assert!(parse_config("a = 1\na = 2\n").is_err());
        assert!(parse_config("bad key = 1\n").is_err());
    }
}
