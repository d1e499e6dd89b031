use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{TrackState, Trajectory};
use crate::scalar::Scalar;

/// One annotation row: `frame ped_id x y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawAnnotation {
    pub frame: i64,
    pub ped_id: i64,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestConfig {
    /// Frames between consecutive retained states.
    pub frame_stride: i64,
    /// Seconds between retained states.
    pub dt: f64,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            frame_stride: 10,
            dt: 0.4,
        }
    }
}

/// Parses whitespace-separated rows; blank lines and `#` comments are
/// skipped. `source` only labels errors.
pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<RawAnnotation>> {
    let err = |line: usize, message: String| Error::Ingest {
        path: source.to_string(),
        line,
        message,
    };
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(err(i + 1, format!("expected 4 columns, found {}", fields.len())));
        }
        let mut vals = [0.0; 4];
        for (v, f) in vals.iter_mut().zip(&fields) {
            *v = f
                .parse::<f64>()
                .map_err(|e| err(i + 1, format!("`{f}`: {e}")))?;
            if !v.is_finite() {
                return Err(err(i + 1, format!("non-finite value `{f}`")));
            }
        }
        rows.push(RawAnnotation {
            frame: vals[0].trunc() as i64,
            ped_id: vals[1].trunc() as i64,
            x: vals[2],
            y: vals[3],
        });
    }
    Ok(rows)
}

/// Reads an annotation file and builds one trajectory per pedestrian and
/// contiguous run of frames.
///
/// Frames are kept when they are a multiple of `frame_stride` after that
/// pedestrian's first frame. A missing retained frame splits the track.
/// Velocities are central differences (one-sided at the ends).
pub fn ingest<T: Scalar>(path: &Path, cfg: &IngestConfig) -> Result<Vec<Trajectory<T>>> {
    let source = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Ingest {
        path: source.clone(),
        line: 0,
        message: e.to_string(),
    })?;
    let rows = parse_annotations(&text, &source)?;
    build_trajectories(&rows, cfg, &source)
}

pub(crate) fn build_trajectories<T: Scalar>(
    rows: &[RawAnnotation],
    cfg: &IngestConfig,
    source: &str,
) -> Result<Vec<Trajectory<T>>> {
    if cfg.frame_stride < 1 || !(cfg.dt > 0.0) {
        return Err(Error::InvalidArgument(
            "frame_stride must be >= 1 and dt positive".into(),
        ));
    }
    let mut by_ped: BTreeMap<i64, Vec<RawAnnotation>> = BTreeMap::new();
    for r in rows {
        let track = by_ped.entry(r.ped_id).or_default();
        if let Some(last) = track.last() {
            if r.frame <= last.frame {
                return Err(Error::Ingest {
                    path: source.to_string(),
                    line: 0,
                    message: format!(
                        "pedestrian {}: frame {} follows frame {}",
                        r.ped_id, r.frame, last.frame
                    ),
                });
            }
        }
        track.push(*r);
    }

    let mut out = Vec::new();
    for (ped, track) in by_ped {
        let first = track[0].frame;
        let kept: Vec<&RawAnnotation> = track
            .iter()
            .filter(|r| (r.frame - first) % cfg.frame_stride == 0)
            .collect();
        let mut segment: Vec<&RawAnnotation> = Vec::new();
        for r in kept {
            if let Some(prev) = segment.last() {
                if r.frame - prev.frame != cfg.frame_stride {
                    out.push(segment_to_trajectory(ped, first, &segment, cfg));
                    segment.clear();
                }
            }
            segment.push(r);
        }
        if !segment.is_empty() {
            out.push(segment_to_trajectory(ped, first, &segment, cfg));
        }
    }
    Ok(out)
}

fn segment_to_trajectory<T: Scalar>(
    ped: i64,
    first: i64,
    seg: &[&RawAnnotation],
    cfg: &IngestConfig,
) -> Trajectory<T> {
    let n = seg.len();
    let dt = cfg.dt;
    let states = (0..n)
        .map(|k| {
            let (lo, hi) = (k.saturating_sub(1), (k + 1).min(n - 1));
            let span = (hi - lo) as f64 * dt;
            let (u, v) = if hi > lo {
                ((seg[hi].x - seg[lo].x) / span, (seg[hi].y - seg[lo].y) / span)
            } else {
                (0.0, 0.0)
            };
            TrackState::new(
                T::lit(seg[k].x),
                T::lit(seg[k].y),
                T::lit(u),
                T::lit(v),
                ((seg[k].frame - first) / cfg.frame_stride) as u64,
            )
        })
        .collect();
    Trajectory::new(ped, states)
}
