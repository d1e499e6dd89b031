//! Errors, configuration loading, manifests and file helpers shared by the
//! subcommands.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};
use uqtraj::pipeline::{ExperimentConfig, Seeds};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] uqtraj::Error),

    #[error("{path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Output {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("training stopped early: {0}")]
    Aborted(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Core(e) => e.exit_code(),
            Self::Input { .. } | Self::Config(_) => 2,
            Self::Aborted(_) => 3,
            Self::Output { .. } => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Attaches `path` to failures from reading an input.
pub fn reading<T>(path: &Path, r: uqtraj::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        uqtraj::Error::Io(io) => CliError::Input {
            path: path.to_path_buf(),
            message: io.to_string(),
        },
        uqtraj::Error::Json(j) => CliError::Input {
            path: path.to_path_buf(),
            message: j.to_string(),
        },
        other => other.into(),
    })
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(uqtraj::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Output {
        path: path.to_path_buf(),
        source,
    })
}

/// Converts a core write failure into an output error on `path`.
pub fn writing<T>(path: &Path, r: uqtraj::Result<T>) -> CliResult<T> {
    r.map_err(|e| match e {
        uqtraj::Error::Io(source) => CliError::Output {
            path: path.to_path_buf(),
            source,
        },
        other => other.into(),
    })
}

/// Accumulates CSV rows in memory and writes them in one go.
pub struct Table {
    w: csv::Writer<Vec<u8>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header).expect("in-memory write");
        Self { w }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.w.write_record(fields).expect("in-memory write");
    }

    pub fn save(self, path: &Path) -> CliResult<()> {
        let bytes = self.w.into_inner().expect("in-memory flush");
        fs::write(path, bytes).map_err(|source| CliError::Output {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Loads a TOML experiment config, applies `key.path=value` overrides and
/// validates the result.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> CliResult<ExperimentConfig> {
    let mut doc = match path {
        Some(p) => read_text(p)?
            .parse::<toml::Table>()
            .map_err(|e| CliError::Input {
                path: p.to_path_buf(),
                message: e.to_string(),
            })?,
        None => toml::Table::try_from(ExperimentConfig::default()).map_err(|e| CliError::Config(e.to_string()))?,
    };
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override `{item}` is not key=value")))?;
        set_path(&mut doc, key.trim(), parse_value(raw.trim()))?;
    }
    let cfg: ExperimentConfig = toml::Value::Table(doc)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn set_path(doc: &mut toml::Table, key: &str, value: toml::Value) -> CliResult<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Config("empty override key".into()))?;
    let mut table = doc;
    for p in parts {
        let entry = table
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

pub fn hash_file(path: &Path) -> CliResult<InputHash> {
    let data = fs::read(path).map_err(|e| CliError::Input {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let digest = Sha256::digest(&data);
    Ok(InputHash {
        path: path.to_path_buf(),
        bytes: data.len() as u64,
        sha256: digest.iter().map(|b| format!("{b:02x}")).collect(),
    })
}

/// Everything needed to rerun a command: its arguments, the effective
/// configuration, derived seeds and hashes of the inputs.
#[derive(Debug, Serialize)]
pub struct Manifest<'a, A: Serialize> {
    pub command: &'a str,
    pub version: &'a str,
    pub args: &'a A,
    pub config: &'a ExperimentConfig,
    pub seeds: Seeds,
    pub inputs: Vec<InputHash>,
    pub outputs: Vec<String>,
    #[serde(skip_serializing_if = "serde_json::Map::is_empty")]
    pub notes: serde_json::Map<String, serde_json::Value>,
}

impl<'a, A: Serialize> Manifest<'a, A> {
    pub fn new(command: &'a str, args: &'a A, config: &'a ExperimentConfig) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            args,
            config,
            seeds: config.seeds(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: serde_json::Map::new(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        self.inputs.push(hash_file(path)?);
        Ok(())
    }

    pub fn output(&mut self, name: impl Into<String>) {
        self.outputs.push(name.into());
    }

    pub fn note(&mut self, key: &str, value: impl Serialize) {
        self.notes
            .insert(key.into(), serde_json::to_value(value).expect("serializable note"));
    }

    pub fn save(&self, dir: &Path) -> CliResult<()> {
        write_json(&dir.join("manifest.json"), self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_fields() {
        let cfg = load_config(
            None,
            &[
                "train.epochs=7".into(),
                "net.encoder=[16, 8]".into(),
                "scene=univ".into(),
                "train_fractions=[0.01, 0.05]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.train.epochs, 7);
        assert_eq!(cfg.net.encoder, vec![16, 8]);
        assert_eq!(cfg.scene, "univ");
        assert_eq!(cfg.train_fractions, vec![0.01, 0.05]);
    }

    #[test]
    fn unknown_or_malformed_overrides_fail() {
        assert!(matches!(load_config(None, &["nope=1".into()]), Err(CliError::Config(_))));
        assert!(matches!(load_config(None, &["train.epochs".into()]), Err(CliError::Config(_))));
        assert!(matches!(load_config(None, &["members.x=1".into()]), Err(CliError::Config(_))));
    }

    #[test]
    fn hashes_are_hex_sha256() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        fs::write(&p, b"abc").unwrap();
        let h = hash_file(&p).unwrap();
        assert_eq!(h.sha256, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
        assert_eq!(h.bytes, 3);
    }
}
