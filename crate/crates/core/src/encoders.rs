//! Desk-scale dual encoders.
//!
//! The motion side is a linear patch embedding: every 16×16 patch of the
//! normalized Motion Image is flattened, projected to `d` dimensions and
//! offset by a learned positional vector (initialized to a 2-D sinusoidal
//! table over joint band and time window). The text side looks tokens up in an
//! embedding table and mixes each row with the mean of its ±1 neighborhood.
//! A `d × V` output matrix turns text states into masked-token logits.

use std::collections::HashMap;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, Reader};
use crate::motion_image::{
    ChannelStats, FeatureLayout, MotionImage, PartProjection, PartProjectionSet, BAND, GRID, IMAGE_SIZE,
    NUM_PATCHES, PATCH_DIM,
};

/// Shared embedding width.
pub const EMBED_DIM: usize = 256;
pub const PAD: u32 = 0;
pub const MASK: u32 = 1;
pub const UNK: u32 = 2;
pub const DEFAULT_VOCAB_CAP: usize = 2048;

const SPECIALS: [&str; 3] = ["[PAD]", "[MASK]", "[UNK]"];
const CHECKPOINT_MAGIC: &[u8; 4] = b"LIEP";
const CHECKPOINT_VERSION: u32 = 1;

/// Lowercased alphanumeric runs.
pub fn split_words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocabulary {
    /// Specials first, then words by descending frequency (ties
    /// alphabetical), truncated to `cap` entries in total.
    pub fn build<'a, I: IntoIterator<Item = &'a str>>(texts: I, cap: usize) -> Result<Self> {
        if cap <= SPECIALS.len() {
            return Err(Error::InvalidConfig(format!("vocabulary cap {cap} leaves no room for words")));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for w in split_words(t) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().map(|(w, _)| w))
            .take(cap)
            .collect();
        Ok(Self::from_tokens(tokens))
    }

    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("vocabulary serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Raw {
            tokens: Vec<String>,
        }
        let raw: Raw = serde_json::from_str(text).map_err(|e| Error::format("vocabulary", e.to_string()))?;
        if raw.tokens.len() < SPECIALS.len() || raw.tokens[..3] != SPECIALS {
            return Err(Error::format("vocabulary", "missing special tokens"));
        }
        let v = Self::from_tokens(raw.tokens);
        if v.index.len() != v.tokens.len() {
            return Err(Error::format("vocabulary", "duplicate token"));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fsutil::read(path)?;
        Self::from_json(&String::from_utf8_lossy(&bytes))
    }
}

pub fn tokenize(text: &str, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let ids: Vec<u32> = split_words(text).iter().map(|w| vocab.id(w)).collect();
    if ids.is_empty() {
        return Err(Error::EmptyQuery);
    }
    Ok(ids)
}

/// Amplitude of the initial positional table. Active patch contents have
/// norms in the tens, so positions need to be of comparable size for the
/// time window (and with it the phase of a movement) to survive the cosine.
pub const POSITION_SCALE: f64 = 4.0;

/// 2-D sinusoidal table, `NUM_PATCHES × dim`: the first half of the columns
/// encodes the window (grid column), the second half the joint band.
pub fn sinusoidal_positions(dim: usize, scale: f64) -> Array2<f64> {
    let half = dim / 2;
    Array2::from_shape_fn((NUM_PATCHES, dim), |(j, o)| {
        let (k, w) = (j / GRID, j % GRID);
        let (pos, i) = if o < half { (w as f64, o) } else { (k as f64, o - half) };
        let freq = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / half as f64);
        let angle = pos * freq;
        scale * if i % 2 == 0 { angle.sin() } else { angle.cos() }
    })
}

/// All learnable parameters of both encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// d × 256, applied to a flattened patch.
    pub patch_weight: Array2<f64>,
    pub patch_bias: Array1<f64>,
    /// 196 × d.
    pub positions: Array2<f64>,
    /// V × d.
    pub token_table: Array2<f64>,
    /// Context mixing weight in [0, 1].
    pub alpha: f64,
    /// d × V.
    pub mlm_weight: Array2<f64>,
    pub log_tau: f64,
    pub parts: PartProjectionSet,
    /// Fixed normalization applied to Motion Image pixels.
    pub pixel_stats: ChannelStats,
}

impl EncoderParams {
    pub fn init(vocab_size: usize, layout: &FeatureLayout, seed: u64) -> Self {
        let d = EMBED_DIM;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = 1.0 / (PATCH_DIM as f64).sqrt();
        let uni = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
        let patch_weight = Array2::from_shape_fn((d, PATCH_DIM), |_| uni.sample(&mut rng));
        let positions = sinusoidal_positions(d, POSITION_SCALE);
        let tok = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid std");
        let token_table = Array2::from_shape_fn((vocab_size, d), |_| tok.sample(&mut rng));
        let out = Normal::new(0.0, 0.02).expect("valid std");
        let mlm_weight = Array2::from_shape_fn((d, vocab_size), |_| out.sample(&mut rng));
        EncoderParams {
            patch_weight,
            patch_bias: Array1::zeros(d),
            positions,
            token_table,
            alpha: 0.5,
            mlm_weight,
            log_tau: 0.07f64.ln(),
            parts: PartProjectionSet::init(layout, seed ^ 0x9e37_79b9_7f4a_7c15),
            pixel_stats: ChannelStats::IDENTITY,
        }
    }

    pub fn dim(&self) -> usize {
        self.patch_weight.nrows()
    }

    pub fn vocab_size(&self) -> usize {
        self.token_table.nrows()
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.exp()
    }

    pub fn is_finite(&self) -> bool {
        let scalars = [self.alpha, self.log_tau, self.pixel_stats.mean, self.pixel_stats.std];
        scalars.iter().all(|v| v.is_finite())
            && [&self.patch_weight, &self.positions, &self.token_table, &self.mlm_weight]
                .iter()
                .all(|m| m.iter().all(|v| v.is_finite()))
            && self.patch_bias.iter().all(|v| v.is_finite())
            && self
                .parts
                .parts
                .iter()
                .all(|p| p.weight.iter().chain(p.bias.iter()).all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenEmbeddings {
    pub ids: Vec<u32>,
    /// M × d.
    pub matrix: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbeddings {
    /// 196 × d.
    pub matrix: Array2<f64>,
}

/// Window bounds `[lo, hi)` of the ±1 neighborhood of position `i`.
pub(crate) fn context_window(i: usize, len: usize) -> (usize, usize) {
    (i.saturating_sub(1), (i + 2).min(len))
}

/// `l_i = (1−α)·table[id_i] + α·mean(table[id_j]) over j ∈ [i−1, i+1]`.
pub fn encode_text(ids: &[u32], params: &EncoderParams) -> Result<TokenEmbeddings> {
    if ids.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let v = params.vocab_size();
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= v) {
        return Err(Error::UnknownToken { id: bad, vocab_size: v });
    }
    let d = params.dim();
    let a = params.alpha;
    let mut matrix = Array2::zeros((ids.len(), d));
    for (i, mut row) in matrix.axis_iter_mut(Axis(0)).enumerate() {
        let (lo, hi) = context_window(i, ids.len());
        let w = a / (hi - lo) as f64;
        let own = params.token_table.row(ids[i] as usize);
        row.scaled_add(1.0 - a, &own);
        for &id in &ids[lo..hi] {
            row.scaled_add(w, &params.token_table.row(id as usize));
        }
    }
    Ok(TokenEmbeddings { ids: ids.to_vec(), matrix })
}

/// 196 × 256 matrix of normalized, flattened patches.
pub fn patch_matrix(image: &MotionImage, stats: &ChannelStats) -> Result<Array2<f64>> {
    if image.pixels.dim() != (IMAGE_SIZE, IMAGE_SIZE) {
        return Err(Error::DimensionMismatch {
            expected: IMAGE_SIZE,
            actual: image.pixels.ncols(),
            context: "motion image geometry",
        });
    }
    stats.check()?;
    let grid = IMAGE_SIZE / BAND;
    let mut out = Array2::zeros((NUM_PATCHES, PATCH_DIM));
    for k in 0..grid {
        for r in 0..BAND {
            let src = image.pixels.row(k * BAND + r);
            for w in 0..grid {
                let mut dst = out.row_mut(k * grid + w);
                for c in 0..BAND {
                    dst[r * BAND + c] = (src[w * BAND + c] - stats.mean) / stats.std;
                }
            }
        }
    }
    Ok(out)
}

/// `v_j = W·patch_j + b + pos_j`.
pub fn encode_motion(image: &MotionImage, params: &EncoderParams) -> Result<PatchEmbeddings> {
    let patches = patch_matrix(image, &params.pixel_stats)?;
    Ok(PatchEmbeddings {
        matrix: embed_patches(patches.view(), params),
    })
}

pub(crate) fn embed_patches(patches: ArrayView2<f64>, params: &EncoderParams) -> Array2<f64> {
    let mut v = patches.dot(&params.patch_weight.t());
    v += &params.patch_bias;
    v += &params.positions;
    v
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskedBatch {
    pub original: Vec<u32>,
    pub masked: Vec<u32>,
    /// Ascending, distinct.
    pub positions: Vec<usize>,
    pub rate_permille: u32,
}

pub fn check_mask_rate(rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::InvalidConfig(format!("mask rate must be in (0, 1), got {rate}")));
    }
    Ok(())
}

/// Number of masked positions for a sequence of length `m`: `⌈rate·m⌉`,
/// at least one.
pub fn mask_count(rate: f64, m: usize) -> usize {
    // the small slack keeps 0.15·20 = 3.0000000000000004 at 3
    ((rate * m as f64 - 1e-9).ceil() as usize).clamp(1, m.max(1))
}

pub fn mask_tokens<R: rand::Rng + ?Sized>(ids: &[u32], rate: f64, rng: &mut R) -> Result<MaskedBatch> {
    check_mask_rate(rate)?;
    if ids.is_empty() {
        return Err(Error::EmptyQuery);
    }
    let n = mask_count(rate, ids.len());
    let mut positions = rand::seq::index::sample(rng, ids.len(), n).into_vec();
    positions.sort_unstable();
    let mut masked = ids.to_vec();
    for &p in &positions {
        masked[p] = MASK;
    }
    Ok(MaskedBatch {
        original: ids.to_vec(),
        masked,
        positions,
        rate_permille: (rate * 1000.0).round() as u32,
    })
}

/// `state · U` for each row of `states` (rows × V).
pub fn mlm_logits(states: ArrayView2<f64>, params: &EncoderParams) -> Result<Array2<f64>> {
    if states.ncols() != params.mlm_weight.nrows() {
        return Err(Error::DimensionMismatch {
            expected: params.mlm_weight.nrows(),
            actual: states.ncols(),
            context: "mlm state width",
        });
    }
    Ok(states.dot(&params.mlm_weight))
}

/// Numerically stable log-softmax of one row.
pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| (v - max) - log_sum).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    log_softmax(row).into_iter().map(f64::exp).collect()
}

fn put_matrix(out: &mut Vec<u8>, m: &Array2<f64>) {
    for &v in m.iter() {
        fsutil::put_f32(out, v as f32);
    }
}

fn get_matrix(r: &mut Reader, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let data = r.f32s(rows * cols)?;
    Ok(Array2::from_shape_vec((rows, cols), data.into_iter().map(f64::from).collect()).expect("sized"))
}

/// Serializes to the `LIEP` checkpoint layout: header, then patch weight,
/// patch bias, positions, token table, α, MLM weight, log τ, pixel mean and
/// std, then for each joint band its dof, weight and bias. The part seed
/// closes the file as two u32 halves.
pub fn checkpoint_to_bytes(params: &EncoderParams) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    fsutil::put_u32(&mut out, CHECKPOINT_VERSION);
    fsutil::put_u32(&mut out, params.vocab_size() as u32);
    fsutil::put_u32(&mut out, params.dim() as u32);
    put_matrix(&mut out, &params.patch_weight);
    for &v in params.patch_bias.iter() {
        fsutil::put_f32(&mut out, v as f32);
    }
    put_matrix(&mut out, &params.positions);
    put_matrix(&mut out, &params.token_table);
    fsutil::put_f32(&mut out, params.alpha as f32);
    put_matrix(&mut out, &params.mlm_weight);
    fsutil::put_f32(&mut out, params.log_tau as f32);
    fsutil::put_f32(&mut out, params.pixel_stats.mean as f32);
    fsutil::put_f32(&mut out, params.pixel_stats.std as f32);
    fsutil::put_u32(&mut out, params.parts.parts.len() as u32);
    for p in &params.parts.parts {
        fsutil::put_u32(&mut out, p.weight.ncols() as u32);
        put_matrix(&mut out, &p.weight);
        for &v in p.bias.iter() {
            fsutil::put_f32(&mut out, v as f32);
        }
    }
    fsutil::put_u32(&mut out, params.parts.seed as u32);
    fsutil::put_u32(&mut out, (params.parts.seed >> 32) as u32);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<EncoderParams> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::format("checkpoint", format!("unsupported version {version}")));
    }
    let v = r.u32()? as usize;
    let d = r.u32()? as usize;
    if d == 0 || v == 0 {
        return Err(Error::format("checkpoint", "zero-sized dimension"));
    }
    let patch_weight = get_matrix(&mut r, d, PATCH_DIM)?;
    let patch_bias = Array1::from(r.f32s(d)?.into_iter().map(f64::from).collect::<Vec<_>>());
    let positions = get_matrix(&mut r, NUM_PATCHES, d)?;
    let token_table = get_matrix(&mut r, v, d)?;
    let alpha = r.f32()? as f64;
    let mlm_weight = get_matrix(&mut r, d, v)?;
    let log_tau = r.f32()? as f64;
    let pixel_stats = ChannelStats {
        mean: r.f32()? as f64,
        std: r.f32()? as f64,
    };
    let joints = r.u32()? as usize;
    let mut parts = Vec::with_capacity(joints.min(64));
    for _ in 0..joints {
        let dof = r.u32()? as usize;
        let weight = get_matrix(&mut r, BAND, dof)?;
        let bias = Array1::from(r.f32s(BAND)?.into_iter().map(f64::from).collect::<Vec<_>>());
        parts.push(PartProjection { weight, bias });
    }
    let seed = r.u32()? as u64 | (r.u32()? as u64) << 32;
    r.finish()?;
    let parts = PartProjectionSet { parts, seed };
    parts.layout()?;
    let params = EncoderParams {
        patch_weight,
        patch_bias,
        positions,
        token_table,
        alpha,
        mlm_weight,
        log_tau,
        parts,
        pixel_stats,
    };
    if !params.is_finite() {
        return Err(Error::format("checkpoint", "non-finite parameter"));
    }
    params.pixel_stats.check()?;
    Ok(params)
}

pub fn save_checkpoint(path: &Path, params: &EncoderParams) -> Result<()> {
    fsutil::write_atomic(path, &checkpoint_to_bytes(params))
}

pub fn load_checkpoint(path: &Path) -> Result<EncoderParams> {
    checkpoint_from_bytes(&fsutil::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_orders_by_frequency_then_alphabet() {
        let v = Vocabulary::build(["b a", "a c", "c"], 100).unwrap();
        assert_eq!(&v.tokens()[3..], &["a", "c", "b"]);
        assert_eq!(v.id("zzz"), UNK);
        let capped = Vocabulary::build(["b a", "a c", "c"], 4).unwrap();
        assert_eq!(capped.len(), 4);
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn mask_count_rounds_up() {
        assert_eq!(mask_count(0.15, 1), 1);
        assert_eq!(mask_count(0.15, 20), 3);
        assert_eq!(mask_count(0.15, 21), 4);
        assert_eq!(mask_count(0.15, 7), 2);
    }

    #[test]
    fn context_window_is_clipped() {
        assert_eq!(context_window(0, 1), (0, 1));
        assert_eq!(context_window(0, 3), (0, 2));
        assert_eq!(context_window(2, 3), (1, 3));
    }
}
