//! Glue between a dataset directory, a trained model directory and the
//! index: what the command-line tool runs, as library calls.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use ndarray::Array2;
use rayon::prelude::*;

use crate::encoders::{
    encode_motion, encode_text, load_checkpoint, save_checkpoint, tokenize, EncoderParams, PatchEmbeddings,
    TokenEmbeddings, Vocabulary, DEFAULT_VOCAB_CAP,
};
use crate::error::{Error, Result};
use crate::index::{build_index, evaluate_index, Direction, EvalReport, GalleryIndex};
use crate::kinematics::io::read_motion;
use crate::kinematics::{extract_sequence, FeatureSequence, MotionSequence, Skeleton};
use crate::motion_image::{build_motion_image, FeatureLayout};
use crate::synth::{Manifest, ManifestEntry};
use crate::training::{init_params, train_loop, EpochMetrics, LossConfig, TrainItem, TrainState};

pub const CHECKPOINT_FILE: &str = "model.liep";
pub const VOCAB_FILE: &str = "vocab.json";
pub const HISTORY_FILE: &str = "history.csv";

/// Trained encoder parameters with the vocabulary they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub params: EncoderParams,
    pub vocab: Vocabulary,
}

impl Model {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&dir.join(CHECKPOINT_FILE), &self.params)?;
        self.vocab.save(&dir.join(VOCAB_FILE))
    }

    pub fn load(dir: &Path) -> Result<Model> {
        let params = load_checkpoint(&dir.join(CHECKPOINT_FILE))?;
        let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
        if vocab.len() != params.vocab_size() {
            return Err(Error::DimensionMismatch {
                expected: params.vocab_size(),
                actual: vocab.len(),
                context: "vocabulary size vs checkpoint",
            });
        }
        Ok(Model { params, vocab })
    }

    pub fn encode_caption(&self, text: &str) -> Result<TokenEmbeddings> {
        encode_text(&tokenize(text, &self.vocab)?, &self.params)
    }

    pub fn encode_features(&self, features: &FeatureSequence) -> Result<PatchEmbeddings> {
        encode_motion(&build_motion_image(features, &self.params.parts)?, &self.params)
    }

    pub fn encode_motion(&self, motion: &MotionSequence, skeleton: &Skeleton) -> Result<PatchEmbeddings> {
        self.encode_features(&extract_sequence(motion, skeleton)?)
    }
}

/// Manifest rows of one split with their extracted features.
#[derive(Debug, Clone)]
pub struct SplitData {
    pub entries: Vec<ManifestEntry>,
    pub features: Vec<FeatureSequence>,
}

impl SplitData {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn captions(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.item.caption.as_str())
    }

    /// Items sharing a label are interchangeable as ground truth.
    pub fn relevance(&self) -> Vec<HashSet<String>> {
        let mut by_label: HashMap<String, HashSet<String>> = HashMap::new();
        for e in &self.entries {
            by_label.entry(e.item.label.key()).or_default().insert(e.item.id.clone());
        }
        self.entries.iter().map(|e| by_label[&e.item.label.key()].clone()).collect()
    }
}

/// Reads and extracts every motion of `split`, in manifest order.
pub fn load_split(dir: &Path, manifest: &Manifest, split: &str, skeleton: &Skeleton) -> Result<SplitData> {
    let entries: Vec<ManifestEntry> = manifest.split(split).cloned().collect();
    if entries.is_empty() {
        return Err(Error::InvalidConfig(format!("dataset has no `{split}` items")));
    }
    let features = entries
        .par_iter()
        .map(|e| extract_sequence(&read_motion(&dir.join(&e.motion), skeleton)?, skeleton))
        .collect::<Result<Vec<_>>>()?;
    Ok(SplitData { entries, features })
}

fn to_items(split: &SplitData, vocab: &Vocabulary) -> Result<Vec<TrainItem>> {
    split
        .entries
        .iter()
        .zip(&split.features)
        .map(|(e, f)| {
            Ok(TrainItem {
                features: f.clone(),
                ids: tokenize(&e.item.caption, vocab)?,
            })
        })
        .collect()
}

/// Builds the vocabulary from training captions and trains from a fresh
/// initialization seeded by `config.seed`, validating on `val` each epoch.
pub fn train_on_splits(
    train: &SplitData,
    val: Option<&SplitData>,
    skeleton: &Skeleton,
    config: &LossConfig,
) -> Result<(Model, Vec<EpochMetrics>)> {
    let vocab = Vocabulary::build(train.captions(), DEFAULT_VOCAB_CAP)?;
    let train_items = to_items(train, &vocab)?;
    let val_items = match val {
        Some(v) => to_items(v, &vocab)?,
        None => Vec::new(),
    };
    let layout = FeatureLayout::from_skeleton(skeleton);
    let params = init_params(vocab.len(), &layout, &train_items, config.seed)?;
    let mut state = TrainState::new(params);
    let history = train_loop(&mut state, &train_items, &val_items, config)?;
    Ok((
        Model {
            params: state.params,
            vocab,
        },
        history,
    ))
}

pub fn train_on_dataset(dir: &Path, skeleton: &Skeleton, config: &LossConfig) -> Result<(Model, Vec<EpochMetrics>)> {
    let manifest = Manifest::load(dir)?;
    let train = load_split(dir, &manifest, "train", skeleton)?;
    let val = match manifest.split("val").next() {
        Some(_) => Some(load_split(dir, &manifest, "val", skeleton)?),
        None => None,
    };
    train_on_splits(&train, val.as_ref(), skeleton, config)
}

/// Gallery side of `direction`: motions for text-to-motion, captions for
/// motion-to-text.
pub fn gallery_matrices(model: &Model, split: &SplitData, direction: Direction) -> Result<Vec<(String, Array2<f64>)>> {
    let ids = split.entries.iter().map(|e| e.item.id.clone());
    let matrices = match direction {
        Direction::T2M => motion_matrices(model, split)?,
        Direction::M2T => caption_matrices(model, split)?,
    };
    Ok(ids.zip(matrices).collect())
}

/// Query side of `direction`, one matrix per split item.
pub fn query_matrices(model: &Model, split: &SplitData, direction: Direction) -> Result<Vec<Array2<f64>>> {
    match direction {
        Direction::T2M => caption_matrices(model, split),
        Direction::M2T => motion_matrices(model, split),
    }
}

fn motion_matrices(model: &Model, split: &SplitData) -> Result<Vec<Array2<f64>>> {
    split
        .features
        .par_iter()
        .map(|f| Ok(model.encode_features(f)?.matrix))
        .collect()
}

fn caption_matrices(model: &Model, split: &SplitData) -> Result<Vec<Array2<f64>>> {
    split
        .captions()
        .map(|c| Ok(model.encode_caption(c)?.matrix))
        .collect()
}

pub fn build_split_index(model: &Model, split: &SplitData, direction: Direction) -> Result<GalleryIndex> {
    build_index(gallery_matrices(model, split, direction)?)
}

/// Every split item queries the whole split gallery; items with the same
/// label count as relevant. `index` replaces the exact float gallery, for
/// example with a compressed one built from the same split.
pub fn evaluate_split(
    model: &Model,
    split: &SplitData,
    direction: Direction,
    index: Option<&GalleryIndex>,
    ks: &[usize],
) -> Result<EvalReport> {
    let built;
    let index = match index {
        Some(ix) => ix,
        None => {
            built = build_split_index(model, split, direction)?;
            &built
        }
    };
    let queries = query_matrices(model, split, direction)?;
    evaluate_index(index, &queries, &split.relevance(), direction, ks)
}
