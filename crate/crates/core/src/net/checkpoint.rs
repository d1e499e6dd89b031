//! JSON checkpoints: format tag, version, the network configuration and the
//! flat parameter vector as `f64`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{NetConfig, NetParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CHECKPOINT_FORMAT: &str = "uqtraj-net";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: NetConfig,
    pub seed: u64,
    pub widths: Vec<usize>,
    pub params: Vec<f64>,
}

impl Checkpoint {
    pub fn new<T: Scalar>(cfg: &NetConfig, params: &NetParams<T>) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: cfg.clone(),
            seed: params.seed,
            widths: cfg.widths(),
            params: params.values.iter().map(|v| v.as_f64()).collect(),
        }
    }

    /// Checks the header and shapes and returns the parameters.
    pub fn into_params<T: Scalar>(self) -> Result<(NetConfig, NetParams<T>)> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            return Err(Error::ArtifactMismatch(format!(
                "unsupported checkpoint {} v{}",
                self.format, self.version
            )));
        }
        if self.widths != self.config.widths() {
            return Err(Error::ArtifactMismatch("layer widths disagree with config".into()));
        }
        self.config
            .validate()
            .map_err(|e| Error::ArtifactMismatch(e.to_string()))?;
        let params = NetParams {
            values: self.params.iter().map(|&v| T::lit(v)).collect(),
            seed: self.seed,
        };
        params.check_shape(&self.config)?;
        if !params.is_finite() {
            return Err(Error::ArtifactMismatch("non-finite parameters".into()));
        }
        Ok((self.config, params))
    }
}

pub fn save_checkpoint<T: Scalar>(path: &Path, cfg: &NetConfig, params: &NetParams<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &Checkpoint::new(cfg, params))?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<(NetConfig, NetParams<T>)> {
    let file = File::open(path)?;
    let ck: Checkpoint = serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::ArtifactMismatch(format!("{}: {e}", path.display())))?;
    ck.into_params()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let cfg = NetConfig::tiny();
        let p = NetParams::<f64>::init(&cfg, 12);
        save_checkpoint(&path, &cfg, &p).unwrap();
        let (c2, p2) = load_checkpoint::<f64>(&path).unwrap();
        assert_eq!(c2, cfg);
        assert_eq!(p2, p);
    }

    #[test]
    fn mismatches_are_rejected() {
        let cfg = NetConfig::tiny();
        let p = NetParams::<f64>::init(&cfg, 0);
        let mut ck = Checkpoint::new(&cfg, &p);
        ck.params.pop();
        ck.widths = cfg.widths();
        assert!(matches!(ck.into_params::<f64>(), Err(Error::ArtifactMismatch(_))));
        let mut ck = Checkpoint::new(&cfg, &p);
        ck.version = 99;
        assert!(matches!(ck.into_params::<f64>(), Err(Error::ArtifactMismatch(_))));
        let mut ck = Checkpoint::new(&cfg, &p);
        ck.config.latent = 9;
        assert!(matches!(ck.into_params::<f64>(), Err(Error::ArtifactMismatch(_))));
    }
}
