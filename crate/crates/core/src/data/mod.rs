//! Pedestrian annotation ingest, windowing into observed/forecast pairs,
//! filter-based augmentation and train/test splitting.

mod augment;
mod ingest;
mod split;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{CovMatrix2, Point2, TrackState, Trajectory};
use crate::scalar::Scalar;

pub use augment::{augment_with_kf, domain_randomize, filter_only, AugmentConfig};
pub use ingest::{ingest, parse_annotations, IngestConfig, RawAnnotation};
pub use split::{split, DatasetSplit, TEST_FRACTION};

pub const PAST_LEN: usize = 8;
pub const FUTURE_LEN: usize = 12;
pub const WINDOW_LEN: usize = PAST_LEN + FUTURE_LEN;

/// An observed history and the future it is paired with, translated so the
/// first ground-truth observed position is the origin.
///
/// Covariance vectors are empty until the pair has been augmented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequencePair<T> {
    pub ped_id: i64,
    /// Index of the source window; shared by all augmented variants.
    pub seq: usize,
    /// Measurement-noise fraction used for augmentation (0 when raw).
    pub fraction: f64,
    /// Sampled variant index within one augmentation run.
    pub variant: usize,
    /// Translation removed from every position.
    pub origin: Point2<T>,
    pub past: Vec<TrackState<T>>,
    pub future: Vec<TrackState<T>>,
    #[serde(default = "Vec::new")]
    pub past_cov: Vec<CovMatrix2<T>>,
    #[serde(default = "Vec::new")]
    pub future_cov: Vec<CovMatrix2<T>>,
}

impl<T: Scalar> SequencePair<T> {
    pub fn has_covariances(&self) -> bool {
        self.past_cov.len() == self.past.len() && self.future_cov.len() == self.future.len()
    }

    pub fn future_positions(&self) -> Vec<Point2<T>> {
        self.future.iter().map(TrackState::position).collect()
    }

    /// Checks lengths, contiguous step indices and PSD covariances.
    pub fn validate(&self) -> Result<()> {
        if self.past.len() != PAST_LEN || self.future.len() != FUTURE_LEN {
            return Err(Error::InvalidArgument(format!(
                "sequence {}: expected {PAST_LEN}+{FUTURE_LEN} states, got {}+{}",
                self.seq,
                self.past.len(),
                self.future.len()
            )));
        }
        let steps: Vec<u64> = self.past.iter().chain(&self.future).map(|s| s.t).collect();
        if steps.windows(2).any(|w| w[1] != w[0] + 1) {
            return Err(Error::InvalidArgument(format!(
                "sequence {}: step indices are not contiguous",
                self.seq
            )));
        }
        for c in self.past_cov.iter().chain(&self.future_cov) {
            if !c.is_psd() {
                return Err(Error::InvalidCovariance(format!("sequence {}", self.seq)));
            }
        }
        Ok(())
    }
}

/// Cuts `traj` into overlapping `past + future` windows advanced by
/// `stride`, each normalized to its own origin. Short trajectories yield
/// nothing. `seq` numbers start at `first_seq`.
pub fn sliding_window<T: Scalar>(
    traj: &Trajectory<T>,
    past: usize,
    future: usize,
    stride: usize,
    first_seq: usize,
) -> Vec<SequencePair<T>> {
    let len = past + future;
    if stride == 0 || traj.len() < len {
        return Vec::new();
    }
    (0..=traj.len() - len)
        .step_by(stride)
        .enumerate()
        .map(|(i, start)| {
            let window = &traj.states[start..start + len];
            let origin = window[0].position();
            let shift = [-origin[0], -origin[1]];
            let moved: Vec<TrackState<T>> = window.iter().map(|s| s.translated(shift)).collect();
            SequencePair {
                ped_id: traj.ped_id,
                seq: first_seq + i,
                fraction: 0.0,
                variant: 0,
                origin,
                past: moved[..past].to_vec(),
                future: moved[past..].to_vec(),
                past_cov: Vec::new(),
                future_cov: Vec::new(),
            }
        })
        .collect()
}

/// Windows every trajectory with the standard 8 + 12 layout and stride 1,
/// numbering sequences consecutively.
pub fn window_all<T: Scalar>(trajs: &[Trajectory<T>]) -> Vec<SequencePair<T>> {
    let mut out = Vec::new();
    for t in trajs {
        let next = out.len();
        out.extend(sliding_window(t, PAST_LEN, FUTURE_LEN, 1, next));
    }
    out
}

/// Writes one JSON object per line.
pub fn write_jsonl<T: Scalar>(path: &Path, pairs: &[SequencePair<T>]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for p in pairs {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl<T: Scalar>(path: &Path) -> Result<Vec<SequencePair<T>>> {
    let file = File::open(path).map_err(|e| Error::Ingest {
        path: path.display().to_string(),
        line: 0,
        message: e.to_string(),
    })?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair = serde_json::from_str(&line).map_err(|e| Error::Ingest {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(pair);
    }
    Ok(out)
}
