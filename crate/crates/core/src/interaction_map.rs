//! Joint × time maps of where a caption's tokens found their best patch.
//!
//! Each token credits only its winning patch, with the similarity clipped
//! at zero, so the grid total equals the sum of positive per-token maxima.

use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::encoders::Vocabulary;
use crate::error::{Error, Result};
use crate::fsutil;
use crate::late_interaction::{matrix_csv, InteractionMatrix};
use crate::motion_image::{encode_png, frame_indices, patch_coords, to_gray8, BAND, GRID, NUM_PATCHES};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Attribution {
    pub token: String,
    pub token_id: u32,
    pub patch: usize,
    pub joint: usize,
    pub window: usize,
    pub similarity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMap {
    /// 14 × 14, row = joint band, column = time window.
    pub grid: Array2<f64>,
    pub attributions: Vec<Attribution>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Pgm,
    Png,
}

impl std::str::FromStr for MapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(MapFormat::Csv),
            "pgm" => Ok(MapFormat::Pgm),
            "png" => Ok(MapFormat::Png),
            _ => Err(Error::InvalidConfig(format!("unknown map format `{s}`"))),
        }
    }
}

fn check_geometry(s: &InteractionMatrix) -> Result<()> {
    if s.scores.ncols() != NUM_PATCHES {
        return Err(Error::DimensionMismatch {
            expected: NUM_PATCHES,
            actual: s.scores.ncols(),
            context: "patch grid of an interaction matrix",
        });
    }
    Ok(())
}

/// Token strings come from `vocab` when given, otherwise the numeric id.
pub fn compute_map(s: &InteractionMatrix, vocab: Option<&Vocabulary>) -> Result<InteractionMap> {
    check_geometry(s)?;
    let mut grid = Array2::zeros((GRID, GRID));
    let mut attributions = Vec::with_capacity(s.scores.nrows());
    for (i, j) in s.argmax().into_iter().enumerate() {
        let (joint, window) = patch_coords(j)?;
        let similarity = s.scores[[i, j]];
        grid[[joint, window]] += similarity.max(0.0);
        let token_id = s.token_ids.get(i).copied().unwrap_or(0);
        let token = vocab
            .and_then(|v| v.token(token_id))
            .map_or_else(|| token_id.to_string(), str::to_string);
        attributions.push(Attribution {
            token,
            token_id,
            patch: j,
            joint,
            window,
            similarity,
        });
    }
    Ok(InteractionMap { grid, attributions })
}

/// Unaggregated similarities of token `i` against every patch, on the grid.
pub fn token_heatmap(s: &InteractionMatrix, i: usize) -> Result<Array2<f64>> {
    check_geometry(s)?;
    if i >= s.scores.nrows() {
        return Err(Error::DimensionMismatch {
            expected: s.scores.nrows(),
            actual: i,
            context: "token row",
        });
    }
    let mut out = Array2::zeros((GRID, GRID));
    for j in 0..NUM_PATCHES {
        let (k, w) = patch_coords(j)?;
        out[[k, w]] = s.scores[[i, j]];
    }
    Ok(out)
}

pub fn grid_from_csv(text: &str) -> Result<Array2<f64>> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|e| Error::format("map csv", e.to_string())))
                .collect()
        })
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
        return Err(Error::format("map csv", "rows of unequal length"));
    }
    let n = rows.len();
    Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| Error::format("map csv", e.to_string()))
}

/// Binary 8-bit PGM, min-max scaled.
pub fn encode_pgm(values: &Array2<f64>) -> Vec<u8> {
    let (h, w) = values.dim();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(to_gray8(values));
    out
}

#[derive(Debug, Clone, Serialize)]
struct WindowLabel {
    window: usize,
    columns: [usize; 2],
    /// First and last source frame, when the window covers any.
    frames: Option<[usize; 2]>,
}

#[derive(Debug, Clone, Serialize)]
struct Sidecar<'a> {
    rows: &'a [String],
    windows: Vec<WindowLabel>,
    min: f64,
    max: f64,
}

/// Row labels and the source frames behind each column window for a
/// sequence of `frames` frames.
pub fn sidecar_json(values: &Array2<f64>, joint_names: &[String], frames: usize) -> Result<String> {
    if joint_names.len() != values.nrows() {
        return Err(Error::DimensionMismatch {
            expected: values.nrows(),
            actual: joint_names.len(),
            context: "row labels",
        });
    }
    let cols = frame_indices(frames);
    let windows = (0..values.ncols())
        .map(|w| {
            let span = w * BAND..(w + 1) * BAND;
            let covered: Vec<usize> = cols.get(span.start..span.end.min(cols.len())).unwrap_or(&[]).to_vec();
            WindowLabel {
                window: w,
                columns: [span.start, span.end - 1],
                frames: covered.first().zip(covered.last()).map(|(&a, &b)| [a, b]),
            }
        })
        .collect();
    let sidecar = Sidecar {
        rows: joint_names,
        windows,
        min: values.iter().cloned().fold(f64::INFINITY, f64::min),
        max: values.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    };
    Ok(serde_json::to_string_pretty(&sidecar).expect("sidecar serializes"))
}

impl InteractionMap {
    pub fn total(&self) -> f64 {
        self.grid.sum()
    }

    /// Cell with the largest value, first in row-major order on ties.
    pub fn argmax_cell(&self) -> (usize, usize) {
        let mut best = (0, 0);
        for ((k, w), &v) in self.grid.indexed_iter() {
            if v > self.grid[best] {
                best = (k, w);
            }
        }
        best
    }

    /// Joint band holding the hottest cell.
    pub fn argmax_row(&self) -> usize {
        self.argmax_cell().0
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(self.grid.view())
    }

    /// Writes the grid in `format`. Image formats also get a `.json`
    /// sidecar next to `path`.
    pub fn export(&self, path: &Path, format: MapFormat, joint_names: &[String], frames: usize) -> Result<()> {
        export_grid(&self.grid, path, format, joint_names, frames)
    }
}

pub fn export_grid(
    values: &Array2<f64>,
    path: &Path,
    format: MapFormat,
    joint_names: &[String],
    frames: usize,
) -> Result<()> {
    let bytes = match format {
        MapFormat::Csv => return fsutil::write_atomic(path, matrix_csv(values.view()).as_bytes()),
        MapFormat::Pgm => encode_pgm(values),
        MapFormat::Png => encode_png(values)?,
    };
    fsutil::write_atomic(path, &bytes)?;
    let sidecar = sidecar_json(values, joint_names, frames)?;
    fsutil::write_atomic(&path.with_extension("json"), sidecar.as_bytes())
}
