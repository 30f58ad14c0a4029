//! Token-patch interaction and MaxSim scoring.
//!
//! Every cosine is a sequential f64 dot product over the embedding
//! dimension divided by the product of the two row norms. The batched
//! kernels below keep that per-entry arithmetic, so their results are
//! bit-identical to a naive double loop. Scores are always max over patches
//! for each token, averaged over tokens; the motion-to-text direction reuses
//! the same score with the roles of query and gallery swapped.

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;

use crate::encoders::{PatchEmbeddings, TokenEmbeddings};
use crate::error::{Error, Result};

/// Rows with a norm at or below this are rejected.
pub const NORM_FLOOR: f64 = 1e-12;

/// Element types accepted by the scoring kernels.
pub trait Scalar: Copy + Into<f64> + Send + Sync {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Euclidean norm accumulated sequentially in f64.
pub fn row_norm<T: Scalar>(row: &[T]) -> f64 {
    let mut s = 0.0f64;
    for &x in row {
        let x: f64 = x.into();
        s += x * x;
    }
    s.sqrt()
}

fn checked_norms<T: Scalar>(data: &[T], cols: usize, side: &'static str) -> Result<Vec<f64>> {
    data.chunks_exact(cols)
        .enumerate()
        .map(|(row, r)| {
            let norm = row_norm(r);
            if norm > NORM_FLOOR {
                Ok(norm)
            } else {
                Err(Error::DegenerateEmbedding { side, row, norm })
            }
        })
        .collect()
}

/// Row norms of a gallery matrix, checked against the floor.
pub fn gallery_norms<T: Scalar>(data: &[T], cols: usize) -> Result<Vec<f64>> {
    checked_norms(data, cols, "patch")
}

/// A query matrix laid out dimension-major for repeated scoring.
#[derive(Debug, Clone)]
pub struct PreparedQuery {
    rows: usize,
    cols: usize,
    /// `transposed[k * rows + i] = L[i][k]`.
    transposed: Vec<f64>,
    norms: Vec<f64>,
}

impl PreparedQuery {
    pub fn new<T: Scalar>(data: &[T], rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 {
            return Err(Error::EmptyQuery);
        }
        if cols == 0 || data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
                context: "query matrix size",
            });
        }
        let norms = checked_norms(data, cols, "token")?;
        let mut transposed = vec![0.0; rows * cols];
        for i in 0..rows {
            for k in 0..cols {
                transposed[k * rows + i] = data[i * cols + k].into();
            }
        }
        Ok(PreparedQuery { rows, cols, transposed, norms })
    }

    pub fn from_view<T: Scalar>(m: ArrayView2<T>) -> Result<Self> {
        let std = m.as_standard_layout();
        Self::new(std.as_slice().expect("standard layout"), m.nrows(), m.ncols())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Raw dot products of every query row with gallery row `v`.
    #[inline]
    fn dots<T: Scalar>(&self, v: &[T], acc: &mut [f64]) {
        acc.iter_mut().for_each(|a| *a = 0.0);
        for (k, &x) in v.iter().enumerate() {
            let x: f64 = x.into();
            let col = &self.transposed[k * self.rows..(k + 1) * self.rows];
            for (a, &l) in acc.iter_mut().zip(col) {
                *a += l * x;
            }
        }
    }

    /// Full `rows × n` cosine matrix against a gallery matrix whose row
    /// norms are given.
    pub fn cosine<T: Scalar>(&self, gallery: &[T], norms: &[f64]) -> Result<Array2<f64>> {
        self.check_gallery(gallery, norms)?;
        let n = norms.len();
        let mut s = Array2::zeros((self.rows, n));
        let mut acc = vec![0.0; self.rows];
        for (j, v) in gallery.chunks_exact(self.cols).enumerate() {
            self.dots(v, &mut acc);
            for i in 0..self.rows {
                s[[i, j]] = acc[i] / (self.norms[i] * norms[j]);
            }
        }
        Ok(s)
    }

    /// MaxSim of this query against one gallery matrix, equal bit for bit to
    /// `maxsim(&self.cosine(..))`.
    pub fn maxsim<T: Scalar>(&self, gallery: &[T], norms: &[f64]) -> Result<f64> {
        self.check_gallery(gallery, norms)?;
        let mut best = vec![f64::NEG_INFINITY; self.rows];
        let mut acc = vec![0.0; self.rows];
        for (j, v) in gallery.chunks_exact(self.cols).enumerate() {
            self.dots(v, &mut acc);
            for i in 0..self.rows {
                let c = acc[i] / (self.norms[i] * norms[j]);
                if c > best[i] {
                    best[i] = c;
                }
            }
        }
        Ok(mean_in_order(&best))
    }

    fn check_gallery<T>(&self, gallery: &[T], norms: &[f64]) -> Result<()> {
        if norms.is_empty() {
            return Err(Error::EmptyGallery);
        }
        if gallery.len() != norms.len() * self.cols {
            return Err(Error::DimensionMismatch {
                expected: norms.len() * self.cols,
                actual: gallery.len(),
                context: "gallery matrix size",
            });
        }
        Ok(())
    }
}

fn mean_in_order(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    for &v in values {
        sum += v;
    }
    sum / values.len() as f64
}

/// `S[i][j] = cos(l_i, v_j)` for token rows `L` and patch rows `V`.
pub fn cosine_matrix<T: Scalar>(l: ArrayView2<T>, v: ArrayView2<T>) -> Result<Array2<f64>> {
    if l.ncols() != v.ncols() {
        return Err(Error::DimensionMismatch {
            expected: l.ncols(),
            actual: v.ncols(),
            context: "embedding width",
        });
    }
    let q = PreparedQuery::from_view(l)?;
    let v = v.as_standard_layout();
    let vs = v.as_slice().expect("standard layout");
    let norms = checked_norms(vs, v.ncols(), "patch")?;
    q.cosine(vs, &norms)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    /// M × N.
    pub scores: Array2<f64>,
    pub token_ids: Vec<u32>,
}

impl InteractionMatrix {
    pub fn maxsim(&self) -> f64 {
        maxsim_score(self.scores.view())
    }

    pub fn argmax(&self) -> Vec<usize> {
        argmax_assignment(self.scores.view())
    }

    pub fn to_csv(&self) -> String {
        matrix_csv(self.scores.view())
    }
}

pub fn interaction_matrix(l: &TokenEmbeddings, v: &PatchEmbeddings) -> Result<InteractionMatrix> {
    Ok(InteractionMatrix {
        scores: cosine_matrix(l.matrix.view(), v.matrix.view())?,
        token_ids: l.ids.clone(),
    })
}

/// Winning column per row; ties go to the smallest column index.
pub fn argmax_assignment(s: ArrayView2<f64>) -> Vec<usize> {
    s.axis_iter(Axis(0))
        .map(|row| {
            let mut best = 0;
            for (j, &x) in row.iter().enumerate() {
                if x > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Mean over rows of the row maximum.
pub fn maxsim_score(s: ArrayView2<f64>) -> f64 {
    let maxima: Vec<f64> = s
        .axis_iter(Axis(0))
        .map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, |a, b| if b > a { b } else { a }))
        .collect();
    mean_in_order(&maxima)
}

/// B × B scores with texts on rows and motions on columns.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchScoreMatrix {
    pub scores: Array2<f64>,
}

impl BatchScoreMatrix {
    pub fn to_csv(&self) -> String {
        matrix_csv(self.scores.view())
    }
}

/// Entry `(i, j)` is the text-to-motion MaxSim of text `i` and motion `j`.
pub fn batch_scores(texts: &[TokenEmbeddings], motions: &[PatchEmbeddings]) -> Result<BatchScoreMatrix> {
    if texts.len() != motions.len() {
        return Err(Error::DimensionMismatch {
            expected: texts.len(),
            actual: motions.len(),
            context: "batch sizes",
        });
    }
    let b = texts.len();
    let mut galleries = Vec::with_capacity(b);
    for (j, m) in motions.iter().enumerate() {
        let v = m.matrix.as_standard_layout().into_owned();
        let norms = checked_norms(v.as_slice().expect("standard"), v.ncols(), "patch").map_err(|e| {
            Error::BatchItem { text: 0, motion: j, source: Box::new(e) }
        })?;
        galleries.push((v, norms));
    }
    let rows: Vec<Result<Vec<f64>>> = texts
        .par_iter()
        .enumerate()
        .map(|(i, t)| {
            let wrap = |j: usize| move |e: Error| Error::BatchItem { text: i, motion: j, source: Box::new(e) };
            let q = PreparedQuery::from_view(t.matrix.view()).map_err(wrap(0))?;
            galleries
                .iter()
                .enumerate()
                .map(|(j, (v, norms))| {
                    if v.ncols() != q.cols() {
                        return Err(wrap(j)(Error::DimensionMismatch {
                            expected: q.cols(),
                            actual: v.ncols(),
                            context: "embedding width",
                        }));
                    }
                    q.maxsim(v.as_slice().expect("standard"), norms).map_err(wrap(j))
                })
                .collect()
        })
        .collect();
    let mut scores = Array2::zeros((b, b));
    for (i, row) in rows.into_iter().enumerate() {
        for (j, s) in row?.into_iter().enumerate() {
            scores[[i, j]] = s;
        }
    }
    Ok(BatchScoreMatrix { scores })
}

/// Comma-separated rows with round-trip float formatting.
pub fn matrix_csv(m: ArrayView2<f64>) -> String {
    let mut out = String::new();
    for row in m.axis_iter(Axis(0)) {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}
