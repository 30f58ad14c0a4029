//! Galleries of per-item embedding matrices with exact and compressed
//! MaxSim search.
//!
//! Rows are L2-normalized at build time and kept as f32. Compressed
//! indexes are derived from a float index and hold only codes plus their
//! codebook or centering means. Queries always stay in full precision.
//!
//! The scored direction decides which side is averaged: for
//! [`Direction::T2M`] the query holds tokens and the gallery holds patches;
//! for [`Direction::M2T`] the gallery holds tokens and the query holds
//! patches, and each item's tokens take the max over the query patches.

mod bench;
mod binary;
mod eval;
mod pq;

use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsutil::{self, put_f32, put_u32, Reader};
use crate::late_interaction::{gallery_norms, row_norm, PreparedQuery, NORM_FLOOR};

pub use bench::{bench_latency, bench_single_vector, LatencyReport, LatencyStats, SingleVectorIndex};
pub use binary::BinaryCodes;
pub use eval::{evaluate, median, reports_csv, Direction, EvalReport, DEFAULT_KS};
pub use pq::{kmeans, train_pq, KMeans, PqCodebook, DEFAULT_BITS, DEFAULT_ITERS, DEFAULT_SUBSPACES, DEFAULT_TRAIN_ROWS};

const INDEX_MAGIC: &[u8; 4] = b"LIIX";
const PQ_MAGIC: &[u8; 4] = b"LIPQ";
const BINARY_MAGIC: &[u8; 4] = b"LIBN";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StorageMode {
    Float32,
    Pq,
    Binary,
}

impl StorageMode {
    pub const ALL: [StorageMode; 3] = [StorageMode::Float32, StorageMode::Pq, StorageMode::Binary];

    /// Payload bytes for `rows` vectors of width `dim`; `subspaces` is the
    /// PQ code length and is ignored by the other modes.
    pub fn payload_size(self, rows: usize, dim: usize, subspaces: usize) -> usize {
        match self {
            StorageMode::Float32 => rows * dim * 4,
            StorageMode::Pq => rows * subspaces,
            StorageMode::Binary => rows * dim.div_ceil(8),
        }
    }

    fn code(self) -> u8 {
        match self {
            StorageMode::Float32 => 0,
            StorageMode::Pq => 1,
            StorageMode::Binary => 2,
        }
    }
}

impl fmt::Display for StorageMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StorageMode::Float32 => "float32",
            StorageMode::Pq => "pq",
            StorageMode::Binary => "binary",
        })
    }
}

impl FromStr for StorageMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "float32" => Ok(StorageMode::Float32),
            "pq" => Ok(StorageMode::Pq),
            "binary" => Ok(StorageMode::Binary),
            _ => Err(Error::InvalidConfig(format!("unknown storage mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Payload {
    Float32 { data: Vec<f32>, norms: Vec<f64> },
    Pq { codebook: PqCodebook, codes: Vec<u8> },
    Binary(BinaryCodes),
}

/// One search result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Hit {
    pub id: String,
    pub score: f64,
}

/// Immutable gallery. Item `g` owns rows `offsets[g]..offsets[g + 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryIndex {
    ids: Vec<String>,
    offsets: Vec<usize>,
    dim: usize,
    payload: Payload,
}

fn normalized_rows(m: ArrayView2<f64>, side: &'static str) -> Result<Vec<f32>> {
    let std = m.as_standard_layout();
    let data = std.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(data.len());
    for (row, r) in data.chunks_exact(m.ncols()).enumerate() {
        let norm = row_norm(r);
        if norm <= NORM_FLOOR {
            return Err(Error::DegenerateEmbedding { side, row, norm });
        }
        out.extend(r.iter().map(|&x| (x / norm) as f32));
    }
    Ok(out)
}

/// Query rows scaled to unit length, row-major.
fn unit_query(query: ArrayView2<f64>) -> Result<Vec<f64>> {
    if query.nrows() == 0 {
        return Err(Error::EmptyQuery);
    }
    let std = query.as_standard_layout();
    let data = std.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(data.len());
    for (row, r) in data.chunks_exact(query.ncols()).enumerate() {
        let norm = row_norm(r);
        if norm <= NORM_FLOOR {
            return Err(Error::DegenerateEmbedding { side: "query", row, norm });
        }
        out.extend(r.iter().map(|&x| x / norm));
    }
    Ok(out)
}

/// Best score per text row of an approximate `query × item` score block,
/// averaged over text rows.
fn maxsim_block(block: &[f64], qrows: usize, irows: usize, direction: Direction) -> f64 {
    let mut sum = 0.0;
    match direction {
        Direction::T2M => {
            for q in 0..qrows {
                let row = &block[q * irows..(q + 1) * irows];
                sum += row.iter().fold(f64::NEG_INFINITY, |b, &v| if v > b { v } else { b });
            }
            sum / qrows as f64
        }
        Direction::M2T => {
            for i in 0..irows {
                let mut best = f64::NEG_INFINITY;
                for q in 0..qrows {
                    let v = block[q * irows + i];
                    if v > best {
                        best = v;
                    }
                }
                sum += best;
            }
            sum / irows as f64
        }
    }
}

/// Descending by score, ascending by id on ties, cut to `k`.
pub fn rank_hits(ids: &[String], scores: &[f64], k: usize) -> Vec<Hit> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(&ids[b])));
    order
        .into_iter()
        .take(k)
        .map(|g| Hit {
            id: ids[g].clone(),
            score: scores[g],
        })
        .collect()
}

/// Builds a float32 index, normalizing every row. Items are processed in
/// parallel.
pub fn build_index(items: Vec<(String, Array2<f64>)>) -> Result<GalleryIndex> {
    if items.is_empty() {
        return Err(Error::EmptyGallery);
    }
    let dim = items[0].1.ncols();
    let mut seen = HashSet::new();
    for (id, m) in &items {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
        if m.ncols() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: m.ncols(),
                context: "gallery embedding width",
            });
        }
        if m.nrows() == 0 || dim == 0 {
            return Err(Error::InvalidConfig(format!("gallery item `{id}` has no rows")));
        }
    }
    let rows: Vec<Vec<f32>> = items
        .par_iter()
        .map(|(_, m)| normalized_rows(m.view(), "gallery"))
        .collect::<Result<_>>()?;
    let mut offsets = vec![0];
    let mut data = Vec::with_capacity(rows.iter().map(Vec::len).sum());
    for r in rows {
        data.extend_from_slice(&r);
        offsets.push(data.len() / dim);
    }
    let norms = gallery_norms(&data, dim)?;
    Ok(GalleryIndex {
        ids: items.into_iter().map(|(id, _)| id).collect(),
        offsets,
        dim,
        payload: Payload::Float32 { data, norms },
    })
}

impl GalleryIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn mode(&self) -> StorageMode {
        match self.payload {
            Payload::Float32 { .. } => StorageMode::Float32,
            Payload::Pq { .. } => StorageMode::Pq,
            Payload::Binary(_) => StorageMode::Binary,
        }
    }

    pub fn item_rows(&self, g: usize) -> usize {
        self.offsets[g + 1] - self.offsets[g]
    }

    pub fn total_rows(&self) -> usize {
        *self.offsets.last().expect("offsets start at 0")
    }

    /// Bytes of per-vector storage: floats, PQ codes or sign bits.
    pub fn payload_bytes(&self) -> usize {
        match &self.payload {
            Payload::Float32 { data, .. } => data.len() * 4,
            Payload::Pq { codes, .. } => codes.len(),
            Payload::Binary(b) => b.codes.len(),
        }
    }

    /// Bytes of shared side data: the PQ codebook or the centering means.
    pub fn aux_bytes(&self) -> usize {
        match &self.payload {
            Payload::Float32 { .. } => 0,
            Payload::Pq { codebook, .. } => codebook.bytes(),
            Payload::Binary(b) => b.means.len() * 4,
        }
    }

    /// Normalized rows of the whole gallery, for float32 indexes.
    pub fn vectors(&self) -> Option<&[f32]> {
        match &self.payload {
            Payload::Float32 { data, .. } => Some(data),
            _ => None,
        }
    }

    pub fn item_vectors(&self, g: usize) -> Option<&[f32]> {
        self.vectors()
            .map(|d| &d[self.offsets[g] * self.dim..self.offsets[g + 1] * self.dim])
    }

    pub fn codebook(&self) -> Option<&PqCodebook> {
        match &self.payload {
            Payload::Pq { codebook, .. } => Some(codebook),
            _ => None,
        }
    }

    pub fn item_codes(&self, g: usize) -> Option<&[u8]> {
        let (width, codes) = match &self.payload {
            Payload::Float32 { .. } => return None,
            Payload::Pq { codebook, codes } => (codebook.m, codes),
            Payload::Binary(b) => (b.bytes_per_vector(), &b.codes),
        };
        Some(&codes[self.offsets[g] * width..self.offsets[g + 1] * width])
    }

    pub fn binary_codes(&self) -> Option<&BinaryCodes> {
        match &self.payload {
            Payload::Binary(b) => Some(b),
            _ => None,
        }
    }

    fn float_source(&self) -> Result<&[f32]> {
        self.vectors().ok_or_else(|| {
            Error::InvalidConfig(format!("{} index cannot be re-encoded; start from a float32 index", self.mode()))
        })
    }

    /// Up to `max` gallery rows drawn without replacement, in gallery order.
    pub fn sample_rows(&self, max: usize, seed: u64) -> Result<Vec<f32>> {
        let data = self.float_source()?;
        let n = self.total_rows();
        if n <= max {
            return Ok(data.to_vec());
        }
        let mut picks = sample(&mut ChaCha8Rng::seed_from_u64(seed), n, max).into_vec();
        picks.sort_unstable();
        Ok(picks
            .into_iter()
            .flat_map(|r| data[r * self.dim..(r + 1) * self.dim].iter().copied())
            .collect())
    }

    /// PQ-coded copy of this float32 index.
    pub fn encode_pq(&self, codebook: &PqCodebook) -> Result<GalleryIndex> {
        let data = self.float_source()?;
        codebook.check_dim(self.dim)?;
        if codebook.ksub == 0 || codebook.ksub > 256 {
            return Err(Error::CodebookMismatch(format!("{} centroids do not fit 8-bit codes", codebook.ksub)));
        }
        let mut codes = vec![0u8; self.total_rows() * codebook.m];
        codes
            .par_chunks_mut(codebook.m)
            .zip(data.par_chunks(self.dim))
            .for_each(|(out, v)| codebook.encode(v, out));
        Ok(GalleryIndex {
            ids: self.ids.clone(),
            offsets: self.offsets.clone(),
            dim: self.dim,
            payload: Payload::Pq {
                codebook: codebook.clone(),
                codes,
            },
        })
    }

    /// Sign-coded copy of this float32 index.
    pub fn encode_binary(&self) -> Result<GalleryIndex> {
        let codes = BinaryCodes::encode(self.float_source()?, self.dim)?;
        Ok(GalleryIndex {
            ids: self.ids.clone(),
            offsets: self.offsets.clone(),
            dim: self.dim,
            payload: Payload::Binary(codes),
        })
    }

    /// MaxSim score of `query` against every item, in gallery order.
    pub fn score_all(&self, query: ArrayView2<f64>, direction: Direction) -> Result<Vec<f64>> {
        if query.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.ncols(),
                context: "query embedding width",
            });
        }
        let span = |g: usize| self.offsets[g]..self.offsets[g + 1];
        match (&self.payload, direction) {
            (Payload::Float32 { data, norms }, Direction::T2M) => {
                let q = PreparedQuery::from_view(query)?;
                (0..self.len())
                    .into_par_iter()
                    .map(|g| {
                        let r = span(g);
                        q.maxsim(&data[r.start * self.dim..r.end * self.dim], &norms[r])
                    })
                    .collect()
            }
            (Payload::Float32 { data, .. }, Direction::M2T) => {
                let std = query.as_standard_layout();
                let patches = std.as_slice().expect("standard layout");
                let pnorms = gallery_norms(patches, self.dim)?;
                (0..self.len())
                    .into_par_iter()
                    .map(|g| {
                        let r = span(g);
                        let tokens = PreparedQuery::new(&data[r.start * self.dim..r.end * self.dim], r.len(), self.dim)?;
                        tokens.maxsim(patches, &pnorms)
                    })
                    .collect()
            }
            (Payload::Pq { codebook, codes }, _) => {
                codebook.check_dim(self.dim)?;
                let q = unit_query(query)?;
                let tables: Vec<Vec<f64>> = q.chunks_exact(self.dim).map(|r| codebook.dot_table(r)).collect();
                let m = codebook.m;
                Ok((0..self.len())
                    .into_par_iter()
                    .map(|g| {
                        let r = span(g);
                        let mut block = Vec::with_capacity(tables.len() * r.len());
                        for t in &tables {
                            for row in r.clone() {
                                block.push(pq_score(t, &codes[row * m..(row + 1) * m], codebook.ksub));
                            }
                        }
                        maxsim_block(&block, tables.len(), r.len(), direction)
                    })
                    .collect())
            }
            (Payload::Binary(b), _) => {
                let q = unit_query(query)?;
                let tables: Vec<Vec<f64>> = q.chunks_exact(self.dim).map(|r| b.lookup_table(r)).collect();
                let width = b.bytes_per_vector();
                Ok((0..self.len())
                    .into_par_iter()
                    .map(|g| {
                        let r = span(g);
                        let mut block = Vec::with_capacity(tables.len() * r.len());
                        for t in &tables {
                            for row in r.clone() {
                                block.push(binary::lut_score(t, &b.codes[row * width..(row + 1) * width]));
                            }
                        }
                        maxsim_block(&block, tables.len(), r.len(), direction)
                    })
                    .collect())
            }
        }
    }

    /// Top `k` items by MaxSim. Asking for more than the gallery returns
    /// every item.
    pub fn search(&self, query: ArrayView2<f64>, k: usize, direction: Direction) -> Result<Vec<Hit>> {
        let scores = self.score_all(query, direction)?;
        Ok(rank_hits(&self.ids, &scores, k))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let too_big = |what: &str| Error::InvalidConfig(format!("{what} exceeds the 32-bit index format"));
        let narrow = |v: usize, what: &str| u32::try_from(v).map_err(|_| too_big(what));
        let mut out = Vec::with_capacity(self.payload_bytes() + self.aux_bytes() + 64);
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, INDEX_VERSION);
        out.push(self.mode().code());
        put_u32(&mut out, narrow(self.len(), "item count")?);
        put_u32(&mut out, narrow(self.dim, "dimension")?);
        for (g, id) in self.ids.iter().enumerate() {
            put_u32(&mut out, narrow(id.len(), "id length")?);
            out.extend_from_slice(id.as_bytes());
            put_u32(&mut out, narrow(self.item_rows(g), "row count")?);
        }
        put_u32(&mut out, narrow(self.payload_bytes(), "payload")?);
        match &self.payload {
            Payload::Float32 { data, .. } => data.iter().for_each(|&v| put_f32(&mut out, v)),
            Payload::Pq { codebook, codes } => {
                out.extend_from_slice(codes);
                out.extend_from_slice(PQ_MAGIC);
                for v in [codebook.m, codebook.ksub, codebook.dsub, codebook.iters] {
                    put_u32(&mut out, narrow(v, "codebook shape")?);
                }
                put_u32(&mut out, codebook.seed as u32);
                put_u32(&mut out, (codebook.seed >> 32) as u32);
                codebook.centroids.iter().for_each(|&v| put_f32(&mut out, v));
            }
            Payload::Binary(b) => {
                out.extend_from_slice(&b.codes);
                out.extend_from_slice(BINARY_MAGIC);
                b.means.iter().for_each(|&v| put_f32(&mut out, v));
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<GalleryIndex> {
        let mut r = Reader::new(bytes, "index");
        r.magic(INDEX_MAGIC)?;
        let version = r.u32()?;
        if version != INDEX_VERSION {
            return Err(Error::format("index", format!("unsupported version {version}")));
        }
        let mode = r.u8()?;
        let g = r.u32()? as usize;
        let dim = r.u32()? as usize;
        if g == 0 {
            return Err(Error::EmptyGallery);
        }
        if dim == 0 {
            return Err(Error::format("index", "zero dimension"));
        }
        let mut ids = Vec::with_capacity(g.min(1 << 20));
        let mut offsets = vec![0usize];
        let mut seen = HashSet::new();
        for _ in 0..g {
            let len = r.u32()? as usize;
            let id = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("index", "id is not UTF-8"))?
                .to_string();
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId(id));
            }
            let rows = r.u32()? as usize;
            if rows == 0 {
                return Err(Error::format("index", format!("item `{id}` has no rows")));
            }
            offsets.push(offsets.last().unwrap() + rows);
            ids.push(id);
        }
        let total = *offsets.last().unwrap();
        let payload_len = r.u32()? as usize;
        let payload = match mode {
            0 => {
                if payload_len != total * dim * 4 {
                    return Err(Error::format("index", "float payload size does not match row table"));
                }
                let data = r.f32s(total * dim)?;
                let norms = gallery_norms(&data, dim)?;
                Payload::Float32 { data, norms }
            }
            1 => {
                let codes = r.take(payload_len)?.to_vec();
                r.magic(PQ_MAGIC)?;
                let m = r.u32()? as usize;
                let ksub = r.u32()? as usize;
                let dsub = r.u32()? as usize;
                let iters = r.u32()? as usize;
                let seed = r.u32()? as u64 | (r.u32()? as u64) << 32;
                if m * dsub != dim || ksub == 0 || ksub > 256 {
                    return Err(Error::CodebookMismatch(format!("{m}×{ksub}×{dsub} codebook for dimension {dim}")));
                }
                if codes.len() != total * m || codes.iter().any(|&c| c as usize >= ksub) {
                    return Err(Error::format("index", "PQ codes do not match the codebook"));
                }
                let centroids = r.f32s(m * ksub * dsub)?;
                Payload::Pq {
                    codebook: PqCodebook {
                        m,
                        ksub,
                        dsub,
                        iters,
                        seed,
                        centroids,
                    },
                    codes,
                }
            }
            2 => {
                if !dim.is_multiple_of(8) || payload_len != total * dim / 8 {
                    return Err(Error::format("index", "binary payload size does not match row table"));
                }
                let codes = r.take(payload_len)?.to_vec();
                r.magic(BINARY_MAGIC)?;
                let means = r.f32s(dim)?;
                Payload::Binary(BinaryCodes { dim, means, codes })
            }
            other => return Err(Error::format("index", format!("unknown storage mode {other}"))),
        };
        r.finish()?;
        Ok(GalleryIndex {
            ids,
            offsets,
            dim,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fsutil::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<GalleryIndex> {
        Self::from_bytes(&fsutil::read(path)?)
    }
}

fn pq_score(table: &[f64], codes: &[u8], ksub: usize) -> f64 {
    let mut s = 0.0;
    for (sub, &c) in codes.iter().enumerate() {
        s += table[sub * ksub + c as usize];
    }
    s
}

/// Ranks every item for each query and scores the rankings against
/// `relevant`, which lists the relevant gallery ids per query.
pub fn evaluate_index(
    index: &GalleryIndex,
    queries: &[Array2<f64>],
    relevant: &[HashSet<String>],
    direction: Direction,
    ks: &[usize],
) -> Result<EvalReport> {
    let rankings = queries
        .iter()
        .map(|q| {
            Ok(index
                .search(q.view(), index.len(), direction)?
                .into_iter()
                .map(|h| h.id)
                .collect())
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    evaluate(&rankings, relevant, ks, direction)
}
