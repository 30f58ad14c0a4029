//! Synthetic paired corpus.
//!
//! Each item animates one feature joint's primary degree of freedom with a
//! single smooth bump `A·sin²(π(t−t0)/W)` while every other joint rests. The
//! caption names the joint, whether the bump sits at the start, middle or end
//! of the clip, and whether it is slow or quick; those three together form
//! the item's label.

use std::path::Path;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil;
use crate::kinematics::io::write_motion;
use crate::kinematics::{
    forward_kinematics, rest_features, FeatureSequence, JointKind, MotionSequence, Skeleton, FEATURE_DIM,
};

pub const FPS: f64 = 20.0;
const REST_HEIGHT: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Start,
    Middle,
    End,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Start, Phase::Middle, Phase::End];

    pub fn word(self) -> &'static str {
        match self {
            Phase::Start => "start",
            Phase::Middle => "middle",
            Phase::End => "end",
        }
    }

    fn center(self) -> f64 {
        match self {
            Phase::Start => 0.2,
            Phase::Middle => 0.5,
            Phase::End => 0.8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speed {
    Slowly,
    Quickly,
}

impl Speed {
    pub const ALL: [Speed; 2] = [Speed::Slowly, Speed::Quickly];

    pub fn word(self) -> &'static str {
        match self {
            Speed::Slowly => "slowly",
            Speed::Quickly => "quickly",
        }
    }

    /// Bump width range in frames.
    fn width(self) -> (usize, usize) {
        match self {
            Speed::Slowly => (56, 72),
            Speed::Quickly => (20, 28),
        }
    }
}

/// Which joint moves, where in the clip, and how fast.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Label {
    pub joint: usize,
    pub phase: Phase,
    pub speed: Speed,
}

impl Label {
    pub fn all(joints: usize) -> Vec<Label> {
        let mut out = Vec::with_capacity(joints * 6);
        for joint in 0..joints {
            for phase in Phase::ALL {
                for speed in Speed::ALL {
                    out.push(Label { joint, phase, speed });
                }
            }
        }
        out
    }

    pub fn key(&self) -> String {
        format!("{}:{}:{}", self.joint, self.phase.word(), self.speed.word())
    }
}

/// Human-readable joint name: underscores become spaces.
pub fn joint_phrase(skeleton: &Skeleton, entry: usize) -> String {
    skeleton.feature(entry).name.replace('_', " ")
}

fn verb(kind: JointKind, name: &str) -> &'static str {
    match kind {
        JointKind::PelvisOrientation => "turns",
        JointKind::PelvisTranslation => "moves",
        JointKind::BallSocket if name.contains("shoulder") => "raises",
        JointKind::BallSocket => "swings",
        JointKind::Hinge if name.contains("ankle") => "flexes",
        JointKind::Hinge => "bends",
        JointKind::Spinal3 => "leans",
        JointKind::Spinal2 => "nods",
    }
}

pub fn caption(skeleton: &Skeleton, label: &Label, template: usize) -> String {
    let f = skeleton.feature(label.joint);
    let v = verb(f.kind, &f.name);
    let joint = joint_phrase(skeleton, label.joint);
    let (speed, phase) = (label.speed.word(), label.phase.word());
    match template % 2 {
        0 => format!("a person {v} the {joint} {speed} at the {phase}"),
        _ => format!("at the {phase} someone {speed} {v} the {joint}"),
    }
}

/// Generator parameters of one item, enough to regenerate it exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthItem {
    pub id: String,
    pub label: Label,
    pub caption: String,
    pub frames: usize,
    pub onset: usize,
    pub width: usize,
    pub amplitude: f64,
}

/// Feature slot driven by an entry and the bump amplitude range.
fn primary_dof(skeleton: &Skeleton, entry: usize) -> (usize, (f64, f64)) {
    let f = skeleton.feature(entry);
    let slot = skeleton.slot(entry);
    match f.kind {
        JointKind::PelvisOrientation => (slot + 2, (0.8, 1.2)),
        JointKind::PelvisTranslation => (slot, (0.8, 1.2)),
        JointKind::BallSocket => (slot, (0.7, 1.1)),
        JointKind::Hinge if f.name.contains("ankle") => (slot, (0.3, 0.5)),
        JointKind::Hinge => (slot, (0.8, 1.2)),
        JointKind::Spinal3 | JointKind::Spinal2 => (slot, (0.4, 0.6)),
    }
}

impl SynthItem {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, skeleton: &Skeleton, label: Label, id: String) -> Self {
        let frames = rng.random_range(200..=224usize);
        let (lo, hi) = label.speed.width();
        let width = rng.random_range(lo..=hi);
        let center = (label.phase.center() + rng.random_range(-0.03..0.03)) * frames as f64;
        let onset = (center - width as f64 / 2.0).round().clamp(0.0, (frames - width) as f64) as usize;
        let (_, (a_lo, a_hi)) = primary_dof(skeleton, label.joint);
        let amplitude = rng.random_range(a_lo..a_hi);
        let caption = caption(skeleton, &label, rng.random_range(0..2));
        SynthItem {
            id,
            label,
            caption,
            frames,
            onset,
            width,
            amplitude,
        }
    }

    /// Bump value at frame `t`.
    pub fn activation(&self, t: usize) -> f64 {
        if t < self.onset || t > self.onset + self.width {
            return 0.0;
        }
        let x = std::f64::consts::PI * (t - self.onset) as f64 / self.width as f64;
        self.amplitude * x.sin().powi(2)
    }

    /// Joint-angle features the motion is generated from.
    pub fn features(&self, skeleton: &Skeleton) -> FeatureSequence {
        let base = rest_features(skeleton, [0.0, REST_HEIGHT, 0.0]);
        let (dof, _) = primary_dof(skeleton, self.label.joint);
        let ramp = skeleton.feature(self.label.joint).kind == JointKind::PelvisTranslation;
        let mut travelled = 0.0;
        let rows: Vec<[f64; FEATURE_DIM]> = (0..self.frames)
            .map(|t| {
                let mut row = base;
                if ramp {
                    // forward speed follows the bump, so position ramps once
                    travelled += self.activation(t) * 2.0 / self.width as f64;
                    row[dof] += travelled;
                } else {
                    row[dof] += self.activation(t);
                }
                row
            })
            .collect();
        FeatureSequence { fps: FPS, rows }
    }

    pub fn motion(&self, skeleton: &Skeleton) -> Result<MotionSequence> {
        forward_kinematics(&self.features(skeleton), skeleton)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train: 200,
            val: 50,
            test: 50,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub train: Vec<SynthItem>,
    pub val: Vec<SynthItem>,
    pub test: Vec<SynthItem>,
}

/// Train labels are drawn uniformly; validation and test each use distinct
/// labels, so every held-out query has exactly one relevant item.
pub fn generate(config: &SynthConfig, skeleton: &Skeleton) -> Result<SynthDataset> {
    let labels = Label::all(skeleton.features().len());
    for (name, n) in [("val", config.val), ("test", config.test)] {
        if n > labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{name} split of {n} exceeds the {} distinct labels",
                labels.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let split = |prefix: &str, n: usize, distinct: bool, rng: &mut ChaCha8Rng| -> Vec<SynthItem> {
        let chosen: Vec<Label> = if distinct {
            labels.choose_multiple(rng, n).copied().collect()
        } else {
            (0..n).map(|_| labels[rng.random_range(0..labels.len())]).collect()
        };
        chosen
            .into_iter()
            .enumerate()
            .map(|(i, l)| SynthItem::sample(rng, skeleton, l, format!("{prefix}{i:05}")))
            .collect()
    };
    let train = split("train", config.train, false, &mut rng);
    let val = split("val", config.val, true, &mut rng);
    let test = split("test", config.test, true, &mut rng);
    Ok(SynthDataset { train, val, test })
}

/// Split names in the order they are written.
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

/// One manifest row: the generator parameters plus where the motion lives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub split: String,
    pub joint_name: String,
    /// Path of the motion JSON relative to the dataset directory.
    pub motion: String,
    #[serde(flatten)]
    pub item: SynthItem,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SynthConfig,
    pub fps: f64,
    pub items: Vec<ManifestEntry>,
}

impl Manifest {
    pub const FILE: &'static str = "manifest.json";

    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a ManifestEntry> + 'a {
        self.items.iter().filter(move |e| e.split == name)
    }

    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join(Self::FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json { path, source })
    }
}

/// Writes every motion as JSON under `dir/motions/` and a manifest at
/// `dir/manifest.json`. Output bytes depend only on the config.
pub fn write_dataset(dir: &Path, config: &SynthConfig, skeleton: &Skeleton) -> Result<Manifest> {
    use rayon::prelude::*;

    let dataset = generate(config, skeleton)?;
    let motions = dir.join("motions");
    std::fs::create_dir_all(&motions).map_err(|e| Error::io(&motions, e))?;
    let items: Vec<ManifestEntry> = SPLITS
        .iter()
        .zip([&dataset.train, &dataset.val, &dataset.test])
        .flat_map(|(split, items)| {
            items.iter().map(move |item| ManifestEntry {
                split: split.to_string(),
                joint_name: joint_phrase(skeleton, item.label.joint),
                motion: format!("motions/{}.json", item.id),
                item: item.clone(),
            })
        })
        .collect();
    items
        .par_iter()
        .map(|e| write_motion(&dir.join(&e.motion), &e.item.motion(skeleton)?, skeleton))
        .collect::<Result<Vec<()>>>()?;
    let manifest = Manifest {
        config: *config,
        fps: FPS,
        items,
    };
    let path = dir.join(Manifest::FILE);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    fsutil::write_atomic(&path, &json)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_is_a_single_bump() {
        let item = SynthItem {
            id: "x".into(),
            label: Label { joint: 4, phase: Phase::Middle, speed: Speed::Quickly },
            caption: String::new(),
            frames: 100,
            onset: 40,
            width: 20,
            amplitude: 1.0,
        };
        assert_eq!(item.activation(39), 0.0);
        assert_eq!(item.activation(40), 0.0);
        assert!((item.activation(50) - 1.0).abs() < 1e-15);
        assert!(item.activation(60).abs() < 1e-15);
        assert_eq!(item.activation(61), 0.0);
    }

    #[test]
    fn caption_names_joint() {
        let sk = Skeleton::smpl22();
        let l = Label { joint: 4, phase: Phase::Start, speed: Speed::Quickly };
        let c = caption(&sk, &l, 0);
        assert!(c.contains(&joint_phrase(&sk, 4)), "{c}");
        assert!(c.contains("quickly") && c.contains("start"));
    }
}
