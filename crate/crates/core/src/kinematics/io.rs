//! Motion JSON and feature CSV / binary formats.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::skeleton::{Skeleton, FEATURE_DIM};
use super::types::{FeatureSequence, MotionSequence};
use crate::error::{Error, Result};
use crate::fsutil;

const FEATURE_MAGIC: &[u8; 4] = b"LIFE";

/// On-disk motion: `frames` is T × J × 3 in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFile {
    pub fps: f64,
    pub joint_names: Vec<String>,
    pub parents: Vec<i32>,
    pub frames: Vec<Vec<[f64; 3]>>,
}

impl MotionFile {
    pub fn from_motion(motion: &MotionSequence, skeleton: &Skeleton) -> Self {
        MotionFile {
            fps: motion.fps,
            joint_names: skeleton.joint_names().to_vec(),
            parents: skeleton.parents().to_vec(),
            frames: motion.frames.clone(),
        }
    }

    /// Checks the file against a skeleton and returns the motion.
    pub fn into_motion(self, skeleton: &Skeleton) -> Result<MotionSequence> {
        if self.joint_names != skeleton.joint_names() || self.parents != skeleton.parents() {
            return Err(Error::InvalidMotion(
                "joint names or parents do not match the skeleton".into(),
            ));
        }
        let motion = MotionSequence {
            fps: self.fps,
            frames: self.frames,
        };
        motion.validate(skeleton.joint_count())?;
        Ok(motion)
    }
}

pub fn read_motion(path: &Path, skeleton: &Skeleton) -> Result<MotionSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: MotionFile = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    file.into_motion(skeleton)
}

pub fn write_motion(path: &Path, motion: &MotionSequence, skeleton: &Skeleton) -> Result<()> {
    let file = MotionFile::from_motion(motion, skeleton);
    let bytes = serde_json::to_vec(&file).expect("motion serializes");
    fsutil::write_atomic(path, &bytes)
}

pub fn features_to_csv(features: &FeatureSequence, labels: &[String]) -> String {
    let mut out = labels.join(",");
    out.push('\n');
    for row in &features.rows {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

/// Parses a feature CSV with a header row; `fps` is not stored in the file.
pub fn features_from_csv(text: &str, fps: f64) -> Result<FeatureSequence> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::format("feature csv", "empty file"))?;
    if header.split(',').count() != FEATURE_DIM {
        return Err(Error::format("feature csv", format!("header must have {FEATURE_DIM} columns")));
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("feature csv", format!("row {i}: {e}")))?;
        let row: [f64; FEATURE_DIM] = vals.try_into().map_err(|v: Vec<f64>| {
            Error::format("feature csv", format!("row {i} has {} columns", v.len()))
        })?;
        rows.push(row);
    }
    Ok(FeatureSequence { fps, rows })
}

/// `LIFE` magic, u32 row count, then rows × 29 little-endian f32.
pub fn features_to_bytes(features: &FeatureSequence) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + features.rows.len() * FEATURE_DIM * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(features.rows.len() as u32).to_le_bytes());
    for row in &features.rows {
        for &v in row {
            out.write_all(&(v as f32).to_le_bytes()).unwrap();
        }
    }
    out
}

pub fn features_from_bytes(bytes: &[u8], fps: f64) -> Result<FeatureSequence> {
    if bytes.len() < 8 || &bytes[..4] != FEATURE_MAGIC {
        return Err(Error::format("feature binary", "missing LIFE header"));
    }
    let rows = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if body.len() != rows * FEATURE_DIM * 4 {
        return Err(Error::format(
            "feature binary",
            format!("expected {} payload bytes, found {}", rows * FEATURE_DIM * 4, body.len()),
        ));
    }
    let rows = body
        .chunks_exact(FEATURE_DIM * 4)
        .map(|chunk| {
            let mut row = [0.0; FEATURE_DIM];
            for (v, b) in row.iter_mut().zip(chunk.chunks_exact(4)) {
                *v = f64::from(f32::from_le_bytes(b.try_into().unwrap()));
            }
            row
        })
        .collect();
    Ok(FeatureSequence { fps, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> FeatureSequence {
        let mut a = [0.0; FEATURE_DIM];
        let mut b = [0.0; FEATURE_DIM];
        for i in 0..FEATURE_DIM {
            a[i] = i as f64 * 0.1 - 1.0;
            b[i] = -(i as f64) * 0.37;
        }
        FeatureSequence {
            fps: 20.0,
            rows: vec![a, b],
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let sk = Skeleton::smpl22();
        let f = sample();
        let csv = features_to_csv(&f, sk.feature_labels());
        assert!(csv.starts_with("pelvis_tilt,pelvis_list,pelvis_rotation,pelvis_tx"));
        assert_eq!(features_from_csv(&csv, 20.0).unwrap(), f);
    }

    #[test]
    fn binary_layout() {
        let f = sample();
        let bytes = features_to_bytes(&f);
        assert_eq!(&bytes[..4], b"LIFE");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 2);
        assert_eq!(bytes.len(), 8 + 2 * 29 * 4);
        let back = features_from_bytes(&bytes, 20.0).unwrap();
        for (r, o) in back.rows.iter().zip(&f.rows) {
            for (x, y) in r.iter().zip(o) {
                assert_eq!(*x, f64::from(*y as f32));
            }
        }
        assert!(features_from_bytes(&bytes[..bytes.len() - 1], 20.0).is_err());
    }
}
