//! Layered settings: command-line flags, then the `--config` file, then
//! `WRAPSMITH_*` environment variables, then built-in defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSettings {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub dmax: Option<usize>,
    pub seeds_per_case: Option<usize>,
    pub sample: Option<usize>,
    pub strategy: Option<String>,
    pub judge: Option<String>,
    pub mode: Option<String>,
    pub backend: Option<PathBuf>,
    pub model: Option<String>,
}

impl FileSettings {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        let mut s: FileSettings =
            serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // Paths in the file are relative to the file.
        if let (Some(b), Some(dir)) = (&s.backend, path.parent()) {
            if b.is_relative() {
                s.backend = Some(dir.join(b));
            }
        }
        Ok(s)
    }
}

/// Reads `WRAPSMITH_<KEY>` from an injectable environment.
pub trait Env {
    fn var(&self, key: &str) -> Option<String>;
}

pub struct ProcessEnv;

impl Env for ProcessEnv {
    fn var(&self, key: &str) -> Option<String> {
        std::env::var(key).ok()
    }
}

pub struct Layers<'a> {
    pub file: FileSettings,
    pub env: &'a dyn Env,
}

impl Layers<'_> {
    /// First of flag, file value, environment variable, default.
    pub fn pick<T: FromStr>(
        &self,
        flag: Option<T>,
        file: impl FnOnce(&FileSettings) -> Option<String>,
        key: &str,
        default: Option<T>,
    ) -> Result<T, String>
    where
        T::Err: std::fmt::Display,
    {
        if let Some(v) = flag {
            return Ok(v);
        }
        let var = format!("WRAPSMITH_{key}");
        let raw = file(&self.file)
            .map(|v| (v, "config file"))
            .or_else(|| self.env.var(&var).map(|v| (v, "environment")));
        match raw {
            Some((v, origin)) => v
                .parse()
                .map_err(|e| format!("invalid {} `{v}` from {origin}: {e}", key.to_lowercase())),
            None => default.ok_or_else(|| {
                format!(
                    "missing {}: pass the flag, set it in --config or in {var}",
                    key.to_lowercase()
                )
            }),
        }
    }
}
