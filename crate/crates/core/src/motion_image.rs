//! Motion Image construction.
//!
//! Each of the 14 feature joints is projected into its own 16-row band, one
//! column per frame, giving a 224×224 single-channel image whose 16×16 patch
//! grid puts joint `k` on patch row `k` and time window `w` on patch column
//! `w`.

use std::path::Path;

use ndarray::{Array1, Array2, Array3, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};
use crate::kinematics::{FeatureSequence, Skeleton, FEATURE_DIM, FEATURE_JOINTS};

/// Height of one joint band, equal to the patch size.
pub const BAND: usize = 16;
/// Side length of the square image.
pub const IMAGE_SIZE: usize = 224;
/// Patches per image side.
pub const GRID: usize = IMAGE_SIZE / BAND;
/// Patches per image.
pub const NUM_PATCHES: usize = GRID * GRID;
/// Pixels per flattened patch.
pub const PATCH_DIM: usize = BAND * BAND;

const MAGIC: &[u8; 4] = b"LIMI";

/// Where each joint's degrees of freedom live in the 29-dim feature vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureLayout {
    dofs: Vec<usize>,
    slots: Vec<usize>,
}

impl FeatureLayout {
    pub fn new(dofs: Vec<usize>) -> Result<Self> {
        if dofs.len() != FEATURE_JOINTS || dofs.len() * BAND != IMAGE_SIZE {
            return Err(Error::InvalidConfig(format!(
                "layout needs {FEATURE_JOINTS} joints of band {BAND}, got {}",
                dofs.len()
            )));
        }
        if dofs.contains(&0) || dofs.iter().sum::<usize>() != FEATURE_DIM {
            return Err(Error::InvalidConfig(format!(
                "per-joint dof must be positive and sum to {FEATURE_DIM}"
            )));
        }
        let mut slots = Vec::with_capacity(dofs.len());
        let mut at = 0;
        for &d in &dofs {
            slots.push(at);
            at += d;
        }
        Ok(FeatureLayout { dofs, slots })
    }

    pub fn from_skeleton(skeleton: &Skeleton) -> Self {
        // a validated skeleton always satisfies the layout constraints
        FeatureLayout::new(skeleton.dofs()).expect("validated skeleton")
    }

    pub fn joints(&self) -> usize {
        self.dofs.len()
    }

    pub fn dofs(&self) -> &[usize] {
        &self.dofs
    }

    pub fn dof(&self, k: usize) -> usize {
        self.dofs[k]
    }

    pub fn slot(&self, k: usize) -> usize {
        self.slots[k]
    }

    pub fn band_rows(&self, k: usize) -> std::ops::Range<usize> {
        k * BAND..(k + 1) * BAND
    }
}

/// Linear map from one joint's features to its 16-pixel band.
#[derive(Debug, Clone, PartialEq)]
pub struct PartProjection {
    /// BAND × dof.
    pub weight: Array2<f64>,
    /// BAND.
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartProjectionSet {
    pub parts: Vec<PartProjection>,
    pub seed: u64,
}

impl PartProjectionSet {
    /// Entries uniform in ±1/√dof, bias zero.
    pub fn init(layout: &FeatureLayout, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parts = layout
            .dofs()
            .iter()
            .map(|&dof| {
                let bound = 1.0 / (dof as f64).sqrt();
                PartProjection {
                    weight: Array2::from_shape_fn((BAND, dof), |_| rng.random_range(-bound..=bound)),
                    bias: Array1::zeros(BAND),
                }
            })
            .collect();
        PartProjectionSet { parts, seed }
    }

    pub fn check_layout(&self, layout: &FeatureLayout) -> Result<()> {
        if self.parts.len() != layout.joints() {
            return Err(Error::DimensionMismatch {
                expected: layout.joints(),
                actual: self.parts.len(),
                context: "part projection count",
            });
        }
        for (p, &dof) in self.parts.iter().zip(layout.dofs()) {
            if p.weight.dim() != (BAND, dof) || p.bias.len() != BAND {
                return Err(Error::DimensionMismatch {
                    expected: dof,
                    actual: p.weight.ncols(),
                    context: "part projection shape",
                });
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> Result<FeatureLayout> {
        FeatureLayout::new(self.parts.iter().map(|p| p.weight.ncols()).collect())
    }
}

/// 224×224 grid indexed `[row, column]`: row = band pixel, column = frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionImage {
    pub pixels: Array2<f64>,
    pub valid_frames: usize,
}

impl MotionImage {
    pub fn zeros() -> Self {
        MotionImage {
            pixels: Array2::zeros((IMAGE_SIZE, IMAGE_SIZE)),
            valid_frames: 0,
        }
    }

    /// Row-major flattening of patch `id` (16 rows of 16 pixels).
    pub fn patch(&self, id: usize) -> [f64; PATCH_DIM] {
        let (k, w) = patch_coords(id).expect("patch id in range");
        let mut out = [0.0; PATCH_DIM];
        for r in 0..BAND {
            for c in 0..BAND {
                out[r * BAND + c] = self.pixels[[k * BAND + r, w * BAND + c]];
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.pixels.dim() != (IMAGE_SIZE, IMAGE_SIZE) {
            return Err(Error::DimensionMismatch {
                expected: IMAGE_SIZE,
                actual: self.pixels.ncols(),
                context: "motion image geometry",
            });
        }
        if self.valid_frames > IMAGE_SIZE {
            return Err(Error::format("motion image", "valid_frames exceeds width"));
        }
        if self.pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("motion image", "non-finite pixel"));
        }
        Ok(())
    }
}

/// Concatenated band values `W_k·p_k + b_k` for one frame.
pub fn project_frame(features: &[f64], proj: &PartProjectionSet) -> Result<[f64; IMAGE_SIZE]> {
    if features.len() != FEATURE_DIM {
        return Err(Error::DimensionMismatch {
            expected: FEATURE_DIM,
            actual: features.len(),
            context: "pose feature length",
        });
    }
    let layout = proj.layout()?;
    let mut column = [0.0; IMAGE_SIZE];
    for (k, part) in proj.parts.iter().enumerate() {
        let p = &features[layout.slot(k)..layout.slot(k) + layout.dof(k)];
        for r in 0..BAND {
            let mut acc = part.bias[r];
            for (c, &x) in p.iter().enumerate() {
                acc += part.weight[[r, c]] * x;
            }
            column[k * BAND + r] = acc;
        }
    }
    Ok(column)
}

/// Source frame for each image column: identity when the sequence fits,
/// otherwise uniform subsampling `floor(c·T/224)`.
pub fn frame_indices(frames: usize) -> Vec<usize> {
    if frames <= IMAGE_SIZE {
        (0..frames).collect()
    } else {
        (0..IMAGE_SIZE).map(|c| c * frames / IMAGE_SIZE).collect()
    }
}

pub fn build_motion_image(features: &FeatureSequence, proj: &PartProjectionSet) -> Result<MotionImage> {
    if features.rows.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut image = MotionImage::zeros();
    let cols = frame_indices(features.rows.len());
    for (c, &t) in cols.iter().enumerate() {
        let column = project_frame(&features.rows[t], proj)?;
        image.pixels.column_mut(c).assign(&ndarray::ArrayView1::from(&column[..]));
    }
    image.valid_frames = cols.len();
    Ok(image)
}

/// Per-channel normalization statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: f64,
    pub std: f64,
}

impl ChannelStats {
    pub const IDENTITY: ChannelStats = ChannelStats { mean: 0.0, std: 1.0 };

    /// Mean and population standard deviation over every pixel of every
    /// image, padding included.
    pub fn from_images<'a, I: IntoIterator<Item = &'a MotionImage>>(images: I) -> Result<Self> {
        let (mut n, mut sum, mut sq) = (0usize, 0.0, 0.0);
        for img in images {
            for &v in img.pixels.iter() {
                n += 1;
                sum += v;
                sq += v * v;
            }
        }
        if n == 0 {
            return Err(Error::InvalidConfig("no images to compute channel stats from".into()));
        }
        let mean = sum / n as f64;
        let var = (sq / n as f64 - mean * mean).max(0.0);
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Ok(ChannelStats { mean, std })
    }

    pub fn check(&self) -> Result<()> {
        if !(self.std.is_finite() && self.std != 0.0 && self.mean.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "channel std must be finite and non-zero, got {}",
                self.std
            )));
        }
        Ok(())
    }
}

/// Replicates the single channel three times and normalizes each copy.
pub fn to_rgb(image: &MotionImage, stats: &[ChannelStats; 3]) -> Result<Array3<f64>> {
    for s in stats {
        s.check()?;
    }
    let mut out = Array3::zeros((3, IMAGE_SIZE, IMAGE_SIZE));
    for (ch, mut plane) in out.axis_iter_mut(Axis(0)).enumerate() {
        let s = stats[ch];
        plane.assign(&image.pixels.mapv(|v| (v - s.mean) / s.std));
    }
    Ok(out)
}

/// Patch id of joint band `k` and time window `w` under row-major patching.
pub fn patch_index(k: usize, w: usize) -> Result<usize> {
    if k >= GRID || w >= GRID {
        return Err(Error::InvalidConfig(format!("patch cell ({k}, {w}) outside {GRID}×{GRID}")));
    }
    Ok(k * GRID + w)
}

/// Inverse of [`patch_index`].
pub fn patch_coords(id: usize) -> Result<(usize, usize)> {
    if id >= NUM_PATCHES {
        return Err(Error::InvalidConfig(format!("patch id {id} outside [0, {NUM_PATCHES})")));
    }
    Ok((id / GRID, id % GRID))
}

pub fn image_to_bytes(image: &MotionImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + IMAGE_SIZE * IMAGE_SIZE * 4);
    out.extend_from_slice(MAGIC);
    fsutil::put_u32(&mut out, image.valid_frames as u32);
    for &v in image.pixels.iter() {
        fsutil::put_f32(&mut out, v as f32);
    }
    out
}

pub fn image_from_bytes(bytes: &[u8]) -> Result<MotionImage> {
    let mut r = Reader::new(bytes, "motion image");
    r.magic(MAGIC)?;
    let valid_frames = r.u32()? as usize;
    let data = r.f32s(IMAGE_SIZE * IMAGE_SIZE)?;
    r.finish()?;
    let pixels = Array2::from_shape_vec((IMAGE_SIZE, IMAGE_SIZE), data.into_iter().map(f64::from).collect())
        .expect("fixed geometry");
    let image = MotionImage { pixels, valid_frames };
    image.validate()?;
    Ok(image)
}

pub fn write_image(path: &Path, image: &MotionImage) -> Result<()> {
    fsutil::write_atomic(path, &image_to_bytes(image))
}

pub fn read_image(path: &Path) -> Result<MotionImage> {
    image_from_bytes(&fsutil::read(path)?)
}

/// Min-max scales a grid to 8-bit grayscale; a constant grid maps to 0.
pub fn to_gray8(values: &Array2<f64>) -> Vec<u8> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    values
        .iter()
        .map(|&v| {
            if span > 0.0 {
                ((v - lo) / span * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect()
}

pub fn encode_png(values: &Array2<f64>) -> Result<Vec<u8>> {
    let (h, w) = values.dim();
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format("png", e.to_string()))?;
        writer
            .write_image_data(&to_gray8(values))
            .map_err(|e| Error::format("png", e.to_string()))?;
    }
    Ok(out)
}

pub fn write_png(path: &Path, image: &MotionImage) -> Result<()> {
    fsutil::write_atomic(path, &encode_png(&image.pixels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_indices_subsample_uniformly() {
        assert_eq!(frame_indices(3), vec![0, 1, 2]);
        let idx = frame_indices(448);
        assert_eq!(idx.len(), IMAGE_SIZE);
        assert!(idx.iter().enumerate().all(|(c, &t)| t == 2 * c));
        let idx = frame_indices(225);
        assert_eq!((idx[0], idx[223]), (0, 223));
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        let idx = frame_indices(1000);
        assert!(idx.windows(2).all(|w| (4..=5).contains(&(w[1] - w[0]))));
    }

    #[test]
    fn gray8_scales_to_full_range() {
        let g = Array2::from_shape_vec((1, 3), vec![-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(to_gray8(&g), vec![0, 128, 255]);
        assert_eq!(to_gray8(&Array2::zeros((2, 2))), vec![0; 4]);
    }
}
