//! Query latency measurement for multi-vector and pooled single-vector
//! search.

use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use super::{rank_hits, Direction, GalleryIndex, Hit, StorageMode};
use crate::error::{Error, Result};
use crate::late_interaction::row_norm;

pub const MIN_WARMUP: usize = 10;
pub const MIN_MEASURED: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LatencyStats {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub measured: usize,
}

impl LatencyStats {
    fn from_samples(mut ms: Vec<f64>) -> Self {
        ms.sort_by(f64::total_cmp);
        let n = ms.len();
        let pct = |p: f64| ms[((p * n as f64).ceil() as usize).clamp(1, n) - 1];
        LatencyStats {
            mean_ms: ms.iter().sum::<f64>() / n as f64,
            p50_ms: pct(0.5),
            p95_ms: pct(0.95),
            measured: n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub mode: StorageMode,
    pub gallery: usize,
    pub bytes: usize,
    pub multi_vector: LatencyStats,
    /// Pooled single-vector ranking over the same gallery, when measured.
    pub single_vector: Option<LatencyStats>,
}

impl LatencyReport {
    pub const CSV_HEADER: &'static str = "mode,G,mean_ms,p50_ms,p95_ms,bytes";

    pub fn csv_row(&self) -> String {
        let s = &self.multi_vector;
        format!(
            "{},{},{:.4},{:.4},{:.4},{}",
            self.mode, self.gallery, s.mean_ms, s.p50_ms, s.p95_ms, self.bytes
        )
    }
}

/// One mean-pooled, renormalized vector per gallery item.
#[derive(Debug, Clone)]
pub struct SingleVectorIndex {
    ids: Vec<String>,
    dim: usize,
    vectors: Vec<f64>,
}

fn pooled(rows: &[f64], dim: usize) -> Vec<f64> {
    let mut mean = vec![0.0; dim];
    for r in rows.chunks_exact(dim) {
        mean.iter_mut().zip(r).for_each(|(m, &x)| *m += x);
    }
    let norm = row_norm(&mean).max(f64::MIN_POSITIVE);
    mean.iter_mut().for_each(|m| *m /= norm);
    mean
}

impl SingleVectorIndex {
    pub fn from_index(index: &GalleryIndex) -> Result<Self> {
        let dim = index.dim();
        let mut vectors = Vec::with_capacity(index.len() * dim);
        for g in 0..index.len() {
            let rows = index
                .item_vectors(g)
                .ok_or_else(|| Error::InvalidConfig("pooled baseline needs a float32 index".into()))?;
            let rows: Vec<f64> = rows.iter().map(|&x| x as f64).collect();
            vectors.extend(pooled(&rows, dim));
        }
        Ok(SingleVectorIndex {
            ids: index.ids().to_vec(),
            dim,
            vectors,
        })
    }

    pub fn search(&self, query: ArrayView2<f64>, k: usize) -> Result<Vec<Hit>> {
        if query.ncols() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: query.ncols(),
                context: "query embedding width",
            });
        }
        let std = query.as_standard_layout();
        let q = pooled(std.as_slice().expect("standard layout"), self.dim);
        let scores: Vec<f64> = self
            .vectors
            .chunks_exact(self.dim)
            .map(|v| v.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect();
        Ok(rank_hits(&self.ids, &scores, k))
    }
}

fn time_queries<F: FnMut(ArrayView2<f64>) -> Result<()>>(
    queries: &[Array2<f64>],
    warmup: usize,
    measured: usize,
    mut run: F,
) -> Result<LatencyStats> {
    if queries.is_empty() {
        return Err(Error::EmptyQuery);
    }
    for q in queries.iter().cycle().take(warmup.max(MIN_WARMUP)) {
        run(q.view())?;
    }
    let mut ms = Vec::with_capacity(measured.max(MIN_MEASURED));
    for q in queries.iter().cycle().take(measured.max(MIN_MEASURED)) {
        let t = Instant::now();
        run(q.view())?;
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    Ok(LatencyStats::from_samples(ms))
}

/// Times full top-`k` searches, cycling through `queries`. Warmup and
/// measurement counts are raised to at least 10 and 100.
pub fn bench_latency(
    index: &GalleryIndex,
    queries: &[Array2<f64>],
    direction: Direction,
    k: usize,
    warmup: usize,
    measured: usize,
) -> Result<LatencyReport> {
    let multi_vector = time_queries(queries, warmup, measured, |q| index.search(q, k, direction).map(drop))?;
    Ok(LatencyReport {
        mode: index.mode(),
        gallery: index.len(),
        bytes: index.payload_bytes(),
        multi_vector,
        single_vector: None,
    })
}

pub fn bench_single_vector(
    pooled: &SingleVectorIndex,
    queries: &[Array2<f64>],
    k: usize,
    warmup: usize,
    measured: usize,
) -> Result<LatencyStats> {
    time_queries(queries, warmup, measured, |q| pooled.search(q, k).map(drop))
}
