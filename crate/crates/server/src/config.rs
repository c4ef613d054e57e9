//! Flat key-value configuration. Later sources win:
//! defaults, then the TOML file, then `TRACKFILL_<KEY>` environment
//! variables, then command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use toml::{Table, Value};
use trackfill_core::eval::search::DEFAULT_PREFILTER;
use trackfill_core::sampler::{SampleParams, DEFAULT_DUPLICATE_THRESHOLD, DEFAULT_MAX_TOKENS, DEFAULT_RETRIES};

pub const ENV_PREFIX: &str = "TRACKFILL_";

/// Every recognised key, with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("workspace", "directory holding uploaded and generated pieces"),
    ("model", "n-gram model file; the uniform predictor is used when unset"),
    ("density_table", "density control table (JSON); enables attribute controls"),
    ("corpus", "directory of MIDI files for training and experiments"),
    ("bind", "address the HTTP service listens on"),
    ("temperature", "sampling temperature"),
    ("max_tokens", "token budget per generation"),
    ("max_retries", "infill attempts before giving up on rejected output"),
    ("reject_duplicates", "regenerate infills that copy the original bars"),
    ("reject_silence", "regenerate infills that leave every masked bar empty"),
    ("duplicate_threshold", "Jaccard index at which an infill counts as a copy"),
    ("expressive", "encode velocity and microtiming"),
    ("l_poly", "hard limit on simultaneously sounding notes per track"),
    ("n_bars", "bars generated when a piece starts empty"),
    ("seed", "base random seed"),
    ("ngram_order", "context length of the n-gram model"),
    ("ngram_alpha", "additive smoothing of the n-gram model"),
    ("prefilter", "compressed-roll distance below which full rolls are compared"),
    ("match_threshold", "distance at or below which an excerpt counts as copied"),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub workspace: PathBuf,
    pub model: Option<PathBuf>,
    pub density_table: Option<PathBuf>,
    pub corpus: Option<PathBuf>,
    pub bind: String,
    pub temperature: f64,
    pub max_tokens: usize,
    pub max_retries: usize,
    pub reject_duplicates: bool,
    pub reject_silence: bool,
    pub duplicate_threshold: f64,
    pub expressive: bool,
    pub l_poly: Option<u32>,
    pub n_bars: usize,
    pub seed: u64,
    pub ngram_order: usize,
    pub ngram_alpha: f64,
    pub prefilter: f64,
    pub match_threshold: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            workspace: PathBuf::from("trackfill-workspace"),
            model: None,
            density_table: None,
            corpus: None,
            bind: "127.0.0.1:8080".into(),
            temperature: 1.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            max_retries: DEFAULT_RETRIES,
            reject_duplicates: true,
            reject_silence: true,
            duplicate_threshold: DEFAULT_DUPLICATE_THRESHOLD,
            expressive: false,
            l_poly: None,
            n_bars: 8,
            seed: 0,
            ngram_order: 4,
            ngram_alpha: 0.01,
            prefilter: DEFAULT_PREFILTER,
            match_threshold: 0.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("config file {path} is not valid TOML: {message}")]
    Syntax { path: PathBuf, message: String },
    #[error("unknown config key {key:?} (from {origin}); valid keys: {}", key_list())]
    UnknownKey { key: String, origin: String },
    #[error("bad value for config key: {0}")]
    Invalid(String),
}

fn key_list() -> String {
    KEYS.iter().map(|(k, _)| *k).collect::<Vec<_>>().join(", ")
}

fn known(key: &str) -> bool {
    KEYS.iter().any(|(k, _)| *k == key)
}

/// Reads a raw string as a TOML scalar, coerced to the type of the default
/// where that is a float; anything unparsable stays a string.
fn parse_raw(key: &str, raw: &str, defaults: &Table) -> Value {
    let parsed = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .filter(|v| !matches!(v, Value::Table(_) | Value::Array(_)));
    match (parsed, defaults.get(key)) {
        (Some(Value::Integer(i)), Some(Value::Float(_))) => Value::Float(i as f64),
        (Some(Value::Integer(i)), Some(Value::String(_))) => Value::String(i.to_string()),
        (Some(v), _) => v,
        (None, _) => Value::String(raw.to_string()),
    }
}

impl Config {
    /// Layers the sources in precedence order. `env` is usually
    /// `std::env::vars()`; only `TRACKFILL_`-prefixed entries are read.
    pub fn load(
        file: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
        flags: &[(String, String)],
    ) -> Result<Config, ConfigError> {
        let defaults = Table::try_from(Config::default()).expect("defaults serialize");
        let mut table = Table::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
            let parsed: Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax {
                path: path.into(),
                message: e.message().to_string(),
            })?;
            for (key, value) in parsed {
                if !known(&key) {
                    return Err(ConfigError::UnknownKey { key, origin: path.display().to_string() });
                }
                let value = match (value, defaults.get(&key)) {
                    (Value::Integer(i), Some(Value::Float(_))) => Value::Float(i as f64),
                    (v, _) => v,
                };
                table.insert(key, value);
            }
        }
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
            .collect();
        env.sort();
        for (key, raw) in env {
            if !known(&key) {
                return Err(ConfigError::UnknownKey {
                    origin: format!("environment variable {ENV_PREFIX}{}", key.to_ascii_uppercase()),
                    key,
                });
            }
            table.insert(key.clone(), parse_raw(&key, &raw, &defaults));
        }
        for (key, raw) in flags {
            let key = key.replace('-', "_");
            if !known(&key) {
                return Err(ConfigError::UnknownKey { key, origin: "command line".into() });
            }
            table.insert(key.clone(), parse_raw(&key, raw, &defaults));
        }
        let cfg: Config = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Invalid(e.message().to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if self.max_tokens == 0 || self.max_retries == 0 || self.n_bars == 0 {
            return bad("max_tokens, max_retries and n_bars must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.duplicate_threshold) {
            return bad(format!("duplicate_threshold must lie in [0, 1], got {}", self.duplicate_threshold));
        }
        if self.l_poly == Some(0) {
            return bad("l_poly must be at least 1".into());
        }
        if self.ngram_order == 0 || self.ngram_alpha <= 0.0 {
            return bad("ngram_order and ngram_alpha must be positive".into());
        }
        Ok(())
    }

    pub fn sample_params(&self) -> SampleParams {
        SampleParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            l_poly: self.l_poly,
            seed: self.seed,
            reject_duplicates: self.reject_duplicates,
            reject_silence: self.reject_silence,
            duplicate_threshold: self.duplicate_threshold,
            max_retries: self.max_retries,
            expressive: self.expressive,
            with_controls: self.density_table.is_some(),
            n_bars: self.n_bars,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn defaults_without_sources() {
        assert_eq!(Config::load(None, Vec::new(), &[]).unwrap(), Config::default());
    }

    #[test]
    fn precedence_flag_env_file_default() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "temperature = 2\nseed = 5\nmax_tokens = 10\nmodel = \"m.bin\"\n").unwrap();
        let env = vec![
            ("TRACKFILL_SEED".to_string(), "6".to_string()),
            ("TRACKFILL_MAX_TOKENS".to_string(), "20".to_string()),
            ("UNRELATED".to_string(), "x".to_string()),
        ];
        let cfg = Config::load(Some(&path), env, &flags(&[("max-tokens", "30")])).unwrap();
        assert_eq!(cfg.temperature, 2.0);
        assert_eq!(cfg.seed, 6);
        assert_eq!(cfg.max_tokens, 30);
        assert_eq!(cfg.model, Some(PathBuf::from("m.bin")));
        assert_eq!(cfg.max_retries, DEFAULT_RETRIES);
    }

    #[test]
    fn string_values_and_paths_from_env() {
        let env = vec![
            ("TRACKFILL_WORKSPACE".to_string(), "/tmp/ws".to_string()),
            ("TRACKFILL_BIND".to_string(), "0.0.0.0:9000".to_string()),
            ("TRACKFILL_REJECT_SILENCE".to_string(), "false".to_string()),
        ];
        let cfg = Config::load(None, env, &[]).unwrap();
        assert_eq!(cfg.workspace, PathBuf::from("/tmp/ws"));
        assert_eq!(cfg.bind, "0.0.0.0:9000");
        assert!(!cfg.reject_silence);
    }

    #[test]
    fn errors_name_the_problem() {
        let err = Config::load(None, vec![("TRACKFILL_TEMPERATUR".into(), "1".into())], &[]).unwrap_err();
        assert!(err.to_string().contains("TRACKFILL_TEMPERATUR"), "{err}");
        let err = Config::load(None, Vec::new(), &flags(&[("temperature", "-1")])).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)));
        let err = Config::load(None, Vec::new(), &flags(&[("max_tokens", "lots")])).unwrap_err();
        assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
        let err = Config::load(Some(Path::new("/no/such/file.toml")), Vec::new(), &[]).unwrap_err();
        assert!(err.to_string().contains("/no/such/file.toml"));
    }

    #[test]
    fn every_field_is_documented() {
        let table = Table::try_from(Config {
            model: Some("m".into()),
            density_table: Some("d".into()),
            corpus: Some("c".into()),
            l_poly: Some(2),
            ..Config::default()
        })
        .unwrap();
        for key in table.keys() {
            assert!(known(key), "{key} missing from KEYS");
        }
        assert_eq!(table.len(), KEYS.len());
    }
}
