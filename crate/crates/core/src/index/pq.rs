//! Product quantization with per-subspace k-means and asymmetric scoring.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DEFAULT_SUBSPACES: usize = 64;
pub const DEFAULT_BITS: u32 = 8;
pub const DEFAULT_ITERS: usize = 25;
/// Rows drawn from the gallery to train the codebook.
pub const DEFAULT_TRAIN_ROWS: usize = 16384;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    let mut s = 0.0f64;
    for (&x, &y) in a.iter().zip(b) {
        let d = x as f64 - y as f64;
        s += d * d;
    }
    s
}

/// Outcome of one k-means run on `n` points of width `dim`.
#[derive(Debug, Clone)]
pub struct KMeans {
    /// k × dim.
    pub centroids: Vec<f32>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squares after each assignment step.
    pub sse: Vec<f64>,
}

fn nearest(point: &[f32], centroids: &[f32], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(point, cen);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

/// k-means++ seeding followed by `iters` Lloyd iterations. A cluster that
/// ends up empty is moved onto the point currently farthest from its
/// centroid.
pub fn kmeans<R: Rng + ?Sized>(data: &[f32], dim: usize, k: usize, iters: usize, rng: &mut R) -> Result<KMeans> {
    let n = data.len() / dim;
    if dim == 0 || data.len() != n * dim || n == 0 {
        return Err(Error::InvalidConfig("k-means needs at least one point".into()));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidConfig(format!("cannot fit {k} clusters to {n} points")));
    }
    let point = |i: usize| &data[i * dim..(i + 1) * dim];

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    while centroids.len() < k * dim {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    chosen = i;
                    break;
                }
                r -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(point(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), &centroids[start..]));
        }
    }

    let mut assignments = vec![0; n];
    let mut dist = vec![0.0; n];
    let mut sse = Vec::with_capacity(iters + 1);
    let assign = |centroids: &[f32], assignments: &mut [usize], dist: &mut [f64]| -> f64 {
        let mut total = 0.0;
        for i in 0..n {
            let (c, d) = nearest(point(i), centroids, dim);
            assignments[i] = c;
            dist[i] = d;
            total += d;
        }
        total
    };
    sse.push(assign(&centroids, &mut assignments, &mut dist));
    for _ in 0..iters {
        let mut sums = vec![0.0f64; k * dim];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assignments[i];
            counts[c] += 1;
            for (s, &x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(point(i)) {
                *s += x as f64;
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // take the worst-served point; it stops being a candidate
                let far = (0..n)
                    .max_by(|&a, &b| dist[a].partial_cmp(&dist[b]).expect("finite").then(b.cmp(&a)))
                    .expect("n > 0");
                centroids[c * dim..(c + 1) * dim].copy_from_slice(point(far));
                dist[far] = 0.0;
                continue;
            }
            for t in 0..dim {
                centroids[c * dim + t] = (sums[c * dim + t] / counts[c] as f64) as f32;
            }
        }
        sse.push(assign(&centroids, &mut assignments, &mut dist));
    }
    Ok(KMeans {
        centroids,
        assignments,
        sse,
    })
}

/// `m` codebooks of `ksub` centroids over consecutive `dsub`-wide slices.
#[derive(Debug, Clone, PartialEq)]
pub struct PqCodebook {
    pub m: usize,
    pub ksub: usize,
    pub dsub: usize,
    pub iters: usize,
    pub seed: u64,
    /// m × ksub × dsub.
    pub centroids: Vec<f32>,
}

impl PqCodebook {
    pub fn dim(&self) -> usize {
        self.m * self.dsub
    }

    pub fn centroid(&self, sub: usize, c: usize) -> &[f32] {
        let at = (sub * self.ksub + c) * self.dsub;
        &self.centroids[at..at + self.dsub]
    }

    pub fn bytes(&self) -> usize {
        self.centroids.len() * 4
    }

    /// Nearest centroid per subspace.
    pub fn encode(&self, v: &[f32], out: &mut [u8]) {
        for s in 0..self.m {
            let sub = &v[s * self.dsub..(s + 1) * self.dsub];
            let block = &self.centroids[s * self.ksub * self.dsub..(s + 1) * self.ksub * self.dsub];
            out[s] = nearest(sub, block, self.dsub).0 as u8;
        }
    }

    pub fn decode(&self, codes: &[u8]) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.dim());
        for (s, &c) in codes.iter().enumerate() {
            out.extend_from_slice(self.centroid(s, c as usize));
        }
        out
    }

    /// Per-subspace dot products of one query row with every centroid,
    /// laid out `table[s * ksub + c]`.
    pub fn dot_table(&self, q: &[f64]) -> Vec<f64> {
        let mut table = vec![0.0; self.m * self.ksub];
        for s in 0..self.m {
            let qs = &q[s * self.dsub..(s + 1) * self.dsub];
            for c in 0..self.ksub {
                let mut acc = 0.0;
                for (&a, &b) in qs.iter().zip(self.centroid(s, c)) {
                    acc += a * b as f64;
                }
                table[s * self.ksub + c] = acc;
            }
        }
        table
    }

    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if self.dim() != dim {
            return Err(Error::CodebookMismatch(format!(
                "codebook covers {} dimensions, index has {dim}",
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Trains one codebook per subspace on `vectors` (rows of width `dim`).
/// With fewer rows than `2^bits` the centroid count drops to the row count.
pub fn train_pq(vectors: &[f32], dim: usize, m: usize, bits: u32, iters: usize, seed: u64) -> Result<PqCodebook> {
    if m == 0 || !dim.is_multiple_of(m) {
        return Err(Error::InvalidConfig(format!("{m} subspaces do not divide dimension {dim}")));
    }
    if bits > 8 {
        return Err(Error::InvalidConfig(format!("codes wider than 8 bits are not supported ({bits})")));
    }
    let n = vectors.len() / dim;
    if n == 0 || vectors.len() != n * dim {
        return Err(Error::InvalidConfig("no training vectors for the codebook".into()));
    }
    let want = 1usize << bits;
    let ksub = want.min(n);
    if ksub < want {
        log::warn!("only {n} training vectors; using {ksub} centroids per subspace instead of {want}");
    }
    let dsub = dim / m;
    let mut centroids = Vec::with_capacity(m * ksub * dsub);
    for s in 0..m {
        let sub: Vec<f32> = vectors
            .chunks_exact(dim)
            .flat_map(|r| r[s * dsub..(s + 1) * dsub].iter().copied())
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(s as u64));
        centroids.extend(kmeans(&sub, dsub, ksub, iters, &mut rng)?.centroids);
    }
    Ok(PqCodebook {
        m,
        ksub,
        dsub,
        iters,
        seed,
        centroids,
    })
}
