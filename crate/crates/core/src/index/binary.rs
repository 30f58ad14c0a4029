//! Centered sign codes scored against full-precision queries.

use crate::error::{Error, Result};

/// One bit per dimension, least significant bit first within each byte:
/// bit `t` of byte `p` is set when dimension `8p + t` lies at or above the
/// gallery mean.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryCodes {
    pub dim: usize,
    pub means: Vec<f32>,
    pub codes: Vec<u8>,
}

impl BinaryCodes {
    pub fn bytes_per_vector(&self) -> usize {
        self.dim / 8
    }

    pub fn encode(vectors: &[f32], dim: usize) -> Result<BinaryCodes> {
        if dim == 0 || !dim.is_multiple_of(8) {
            return Err(Error::InvalidConfig(format!("binary codes need a dimension divisible by 8, got {dim}")));
        }
        let n = vectors.len() / dim;
        if n == 0 {
            return Err(Error::EmptyGallery);
        }
        let mut sums = vec![0.0f64; dim];
        for row in vectors.chunks_exact(dim) {
            for (s, &x) in sums.iter_mut().zip(row) {
                *s += x as f64;
            }
        }
        let means: Vec<f32> = sums.iter().map(|s| (s / n as f64) as f32).collect();
        let mut codes = Vec::with_capacity(n * dim / 8);
        for row in vectors.chunks_exact(dim) {
            codes.extend(sign_bytes(row, &means));
        }
        Ok(BinaryCodes { dim, means, codes })
    }

    /// `±1` per dimension for vector `r`.
    pub fn signs(&self, r: usize) -> Vec<f64> {
        let w = self.bytes_per_vector();
        let code = &self.codes[r * w..(r + 1) * w];
        (0..self.dim)
            .map(|j| if code[j / 8] >> (j % 8) & 1 == 1 { 1.0 } else { -1.0 })
            .collect()
    }

    /// Partial scores for every byte value at every byte position:
    /// `table[p * 256 + b] = Σ_t q[8p + t] · (±1 by bit t of b)`.
    pub fn lookup_table(&self, q: &[f64]) -> Vec<f64> {
        let mut table = vec![0.0; self.bytes_per_vector() * 256];
        for (p, chunk) in q.chunks_exact(8).enumerate() {
            let t = &mut table[p * 256..(p + 1) * 256];
            t[0] = -chunk.iter().sum::<f64>();
            for b in 1..256usize {
                let low = b.trailing_zeros() as usize;
                t[b] = t[b & (b - 1)] + 2.0 * chunk[low];
            }
        }
        table
    }
}

fn sign_bytes<'a>(row: &'a [f32], means: &'a [f32]) -> impl Iterator<Item = u8> + 'a {
    row.chunks_exact(8).zip(means.chunks_exact(8)).map(|(x, mu)| {
        let mut byte = 0u8;
        for t in 0..8 {
            if x[t] - mu[t] >= 0.0 {
                byte |= 1 << t;
            }
        }
        byte
    })
}

pub(super) fn lut_score(table: &[f64], code: &[u8]) -> f64 {
    let mut s = 0.0;
    for (p, &b) in code.iter().enumerate() {
        s += table[p * 256 + b as usize];
    }
    s
}
