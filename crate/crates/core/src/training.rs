//! Contrastive + masked-token training of the toy encoders.
//!
//! The batch loss is `½(L_t2m + L_m2t) + λ·L_mlm`. Text-to-motion scores are
//! MaxSim values, so the gradient of a score reaches only the winning patch
//! of each token. All gradients are analytic and can be checked against
//! central finite differences with [`gradient_check`].

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{
    context_window, encode_text, log_softmax, mask_tokens, patch_matrix, EncoderParams, MaskedBatch, Vocabulary,
};
use crate::error::{Error, Result};
use crate::fsutil;
use crate::kinematics::FeatureSequence;
use crate::late_interaction::{argmax_assignment, PreparedQuery};
use crate::motion_image::{build_motion_image, frame_indices, ChannelStats, FeatureLayout, BAND, GRID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_mlm: f64,
    pub mask_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_mlm: 0.2,
            mask_rate: 0.15,
            batch_size: 16,
            epochs: 50,
            learning_rate: 1e-3,
            weight_decay: 0.1,
            seed: 0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        crate::encoders::check_mask_rate(self.mask_rate)?;
        if !(self.lambda_mlm >= 0.0 && self.lambda_mlm.is_finite()) {
            return Err(Error::InvalidConfig(format!("lambda_mlm must be >= 0, got {}", self.lambda_mlm)));
        }
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig("batch_size must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig("weight_decay must be >= 0".into()));
        }
        Ok(())
    }

    /// Reads TOML, or JSON when the file name ends in `.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = String::from_utf8(fsutil::read(path)?)
            .map_err(|_| Error::format("config", "not UTF-8"))?;
        let cfg: LossConfig = if path.extension().is_some_and(|e| e == "json") {
            serde_json::from_str(&text).map_err(|e| Error::format("config", e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::format("config", e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Parameters named by group, in checkpoint order.
pub fn param_groups(p: &EncoderParams) -> Vec<(String, &[f64])> {
    let mut out: Vec<(String, &[f64])> = vec![
        ("patch_weight".into(), p.patch_weight.as_slice().expect("standard")),
        ("patch_bias".into(), p.patch_bias.as_slice().expect("standard")),
        ("positions".into(), p.positions.as_slice().expect("standard")),
        ("token_table".into(), p.token_table.as_slice().expect("standard")),
        ("alpha".into(), std::slice::from_ref(&p.alpha)),
        ("mlm_weight".into(), p.mlm_weight.as_slice().expect("standard")),
        ("log_tau".into(), std::slice::from_ref(&p.log_tau)),
    ];
    for (k, part) in p.parts.parts.iter().enumerate() {
        out.push((format!("part_weight[{k}]"), part.weight.as_slice().expect("standard")));
        out.push((format!("part_bias[{k}]"), part.bias.as_slice().expect("standard")));
    }
    out
}

pub fn param_groups_mut(p: &mut EncoderParams) -> Vec<(String, &mut [f64])> {
    let mut out: Vec<(String, &mut [f64])> = vec![
        ("patch_weight".into(), p.patch_weight.as_slice_mut().expect("standard")),
        ("patch_bias".into(), p.patch_bias.as_slice_mut().expect("standard")),
        ("positions".into(), p.positions.as_slice_mut().expect("standard")),
        ("token_table".into(), p.token_table.as_slice_mut().expect("standard")),
        ("alpha".into(), std::slice::from_mut(&mut p.alpha)),
        ("mlm_weight".into(), p.mlm_weight.as_slice_mut().expect("standard")),
        ("log_tau".into(), std::slice::from_mut(&mut p.log_tau)),
    ];
    for (k, part) in p.parts.parts.iter_mut().enumerate() {
        out.push((format!("part_weight[{k}]"), part.weight.as_slice_mut().expect("standard")));
        out.push((format!("part_bias[{k}]"), part.bias.as_slice_mut().expect("standard")));
    }
    out
}

/// Scalars that are neither decayed nor left unbounded by the update.
fn is_scalar_group(name: &str) -> bool {
    name == "alpha" || name == "log_tau"
}

/// A zero-valued copy with the same shapes, used for gradients and moments.
pub fn zeros_like(p: &EncoderParams) -> EncoderParams {
    let mut z = p.clone();
    for (_, g) in param_groups_mut(&mut z) {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    z
}

/// One training pair: features of a motion and the token ids of its caption.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub features: FeatureSequence,
    pub ids: Vec<u32>,
}

/// Items plus the masked copy of each caption.
#[derive(Debug, Clone)]
pub struct Batch<'a> {
    pub items: Vec<&'a TrainItem>,
    pub masks: Vec<MaskedBatch>,
}

impl<'a> Batch<'a> {
    pub fn new<R: Rng + ?Sized>(items: Vec<&'a TrainItem>, mask_rate: f64, rng: &mut R) -> Result<Self> {
        let masks = items
            .iter()
            .map(|it| mask_tokens(&it.ids, mask_rate, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch { items, masks })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub t2m: f64,
    pub m2t: f64,
    pub mlm: f64,
    pub retrieval: f64,
    pub total: f64,
}

/// `−(1/B)·Σ_i log softmax(row_i(S/τ))[i]`.
pub fn t2m_loss(s: &Array2<f64>, tau: f64) -> Result<f64> {
    let (b, c) = s.dim();
    if b != c || b == 0 {
        return Err(Error::DimensionMismatch {
            expected: b,
            actual: c,
            context: "square batch score matrix",
        });
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(format!("temperature must be positive, got {tau}")));
    }
    let terms: Vec<f64> = s
        .axis_iter(Axis(0))
        .enumerate()
        .map(|(i, row)| {
            let z: Vec<f64> = row.iter().map(|v| v / tau).collect();
            -log_softmax(&z)[i]
        })
        .collect();
    Ok(pairwise_sum(&terms) / b as f64)
}

/// Recursive halving; exact for `2^k` equal terms.
fn pairwise_sum(v: &[f64]) -> f64 {
    match v.len() {
        0 => 0.0,
        1 => v[0],
        n => pairwise_sum(&v[..n / 2]) + pairwise_sum(&v[n / 2..]),
    }
}

pub fn m2t_loss(s: &Array2<f64>, tau: f64) -> Result<f64> {
    t2m_loss(&s.t().to_owned(), tau)
}

/// Gradient of `½(t2m + m2t)` with respect to `Z = S/τ`.
fn retrieval_grad_z(z: &Array2<f64>) -> Array2<f64> {
    let b = z.nrows();
    let scale = 0.5 / b as f64;
    let mut g = Array2::zeros((b, b));
    for (i, row) in z.axis_iter(Axis(0)).enumerate() {
        let p = crate::encoders::softmax(row.as_slice().expect("owned row"));
        for j in 0..b {
            g[[i, j]] += scale * p[j];
        }
        g[[i, i]] -= scale;
    }
    for (j, col) in z.axis_iter(Axis(1)).enumerate() {
        let p = crate::encoders::softmax(&col.to_vec());
        for i in 0..b {
            g[[i, j]] += scale * p[i];
        }
        g[[j, j]] -= scale;
    }
    g
}

struct MotionForward {
    patches: Array2<f64>,
    embeddings: Array2<f64>,
    norms: Vec<f64>,
    /// Source frame of each valid image column.
    columns: Vec<usize>,
}

struct TextForward {
    embeddings: Array2<f64>,
    norms: Vec<f64>,
}

struct PairForward {
    /// Winning patch per token.
    winners: Vec<usize>,
    /// Cosine at the winner per token.
    cosines: Vec<f64>,
}

struct ForwardPass {
    motions: Vec<MotionForward>,
    texts: Vec<TextForward>,
    /// `pairs[a * B + b]`: text a against motion b.
    pairs: Vec<PairForward>,
    scores: Array2<f64>,
    mlm_states: Vec<Array2<f64>>,
    mlm_probs: Vec<Array2<f64>>,
    mlm_count: usize,
    loss: LossBreakdown,
}

fn encode_motion_for_training(item: &TrainItem, params: &EncoderParams) -> Result<MotionForward> {
    let image = build_motion_image(&item.features, &params.parts)?;
    let patches = patch_matrix(&image, &params.pixel_stats)?;
    let embeddings = crate::encoders::embed_patches(patches.view(), params);
    let norms = embeddings
        .axis_iter(Axis(0))
        .map(|r| crate::late_interaction::row_norm(r.as_slice().expect("standard")))
        .collect();
    Ok(MotionForward {
        patches,
        embeddings,
        norms,
        columns: frame_indices(item.features.rows.len()),
    })
}

fn forward(params: &EncoderParams, batch: &Batch, lambda: f64) -> Result<ForwardPass> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::InvalidConfig("contrastive batch needs at least 2 items".into()));
    }
    let motions: Vec<MotionForward> = {
        use rayon::prelude::*;
        batch
            .items
            .par_iter()
            .map(|it| encode_motion_for_training(it, params))
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<_>>()?
    };
    let mut texts = Vec::with_capacity(b);
    for it in &batch.items {
        let l = encode_text(&it.ids, params)?.matrix;
        let norms = l
            .axis_iter(Axis(0))
            .map(|r| crate::late_interaction::row_norm(r.as_slice().expect("standard")))
            .collect();
        texts.push(TextForward { embeddings: l, norms });
    }

    let mut pairs = Vec::with_capacity(b * b);
    let mut scores = Array2::zeros((b, b));
    for (a, t) in texts.iter().enumerate() {
        let q = PreparedQuery::from_view(t.embeddings.view())?;
        for (j, m) in motions.iter().enumerate() {
            let cos = q
                .cosine(m.embeddings.as_slice().expect("standard"), &m.norms)
                .map_err(|e| Error::BatchItem { text: a, motion: j, source: Box::new(e) })?;
            let winners = argmax_assignment(cos.view());
            let cosines: Vec<f64> = winners.iter().enumerate().map(|(i, &w)| cos[[i, w]]).collect();
            scores[[a, j]] = cosines.iter().sum::<f64>() / cosines.len() as f64;
            pairs.push(PairForward { winners, cosines });
        }
    }

    let tau = params.tau();
    let t2m = t2m_loss(&scores, tau)?;
    let m2t = m2t_loss(&scores, tau)?;

    let mut mlm_states = Vec::with_capacity(b);
    let mut mlm_probs = Vec::with_capacity(b);
    let mut nll = 0.0;
    let mut count = 0;
    for (it, mask) in batch.items.iter().zip(&batch.masks) {
        if mask.original != it.ids {
            return Err(Error::InvalidConfig("mask does not belong to its batch item".into()));
        }
        let h = encode_text(&mask.masked, params)?.matrix;
        let states = h.select(Axis(0), &mask.positions);
        let logits = crate::encoders::mlm_logits(states.view(), params)?;
        let mut probs = Array2::zeros(logits.dim());
        for (r, &pos) in mask.positions.iter().enumerate() {
            let lp = log_softmax(logits.row(r).as_slice().expect("standard"));
            nll -= lp[mask.original[pos] as usize];
            for (v, x) in lp.iter().enumerate() {
                probs[[r, v]] = x.exp();
            }
        }
        count += mask.positions.len();
        mlm_states.push(states);
        mlm_probs.push(probs);
    }
    let mlm = nll / count as f64;
    let retrieval = 0.5 * (t2m + m2t);
    Ok(ForwardPass {
        motions,
        texts,
        pairs,
        scores,
        mlm_states,
        mlm_probs,
        mlm_count: count,
        loss: LossBreakdown {
            t2m,
            m2t,
            mlm,
            retrieval,
            total: retrieval + lambda * mlm,
        },
    })
}

/// Loss of one batch without gradients.
pub fn total_loss(params: &EncoderParams, batch: &Batch, lambda: f64) -> Result<LossBreakdown> {
    Ok(forward(params, batch, lambda)?.loss)
}

/// Winning patch of every token in every pair, used to detect argmax
/// switches between nearby parameter values.
pub fn assignment_signature(params: &EncoderParams, batch: &Batch) -> Result<Vec<usize>> {
    let f = forward(params, batch, 0.0)?;
    Ok(f.pairs.iter().flat_map(|p| p.winners.iter().copied()).collect())
}

/// Backpropagates `dl` (rows of text-encoder output for `ids`) into the
/// token table and mixing weight.
fn backprop_text(ids: &[u32], dl: &Array2<f64>, params: &EncoderParams, grad: &mut EncoderParams) {
    let a = params.alpha;
    let m = ids.len();
    for i in 0..m {
        let g = dl.row(i);
        let (lo, hi) = context_window(i, m);
        let n = (hi - lo) as f64;
        grad.token_table.row_mut(ids[i] as usize).scaled_add(1.0 - a, &g);
        let mut mean = Array1::<f64>::zeros(g.len());
        for &id in &ids[lo..hi] {
            grad.token_table.row_mut(id as usize).scaled_add(a / n, &g);
            mean.scaled_add(1.0 / n, &params.token_table.row(id as usize));
        }
        let own = params.token_table.row(ids[i] as usize);
        let mut d_alpha = 0.0;
        for k in 0..g.len() {
            d_alpha += g[k] * (mean[k] - own[k]);
        }
        grad.alpha += d_alpha;
    }
}

/// Loss and gradient for every parameter group.
pub fn gradients(params: &EncoderParams, batch: &Batch, lambda: f64) -> Result<(LossBreakdown, EncoderParams)> {
    let f = forward(params, batch, lambda)?;
    let b = batch.len();
    let mut grad = zeros_like(params);
    let tau = params.tau();

    let z = f.scores.mapv(|v| v / tau);
    let gz = retrieval_grad_z(&z);
    grad.log_tau = -(&gz * &z).sum();
    let gs = gz.mapv(|v| v / tau);

    let d = params.dim();
    let mut dl: Vec<Array2<f64>> = f.texts.iter().map(|t| Array2::zeros(t.embeddings.dim())).collect();
    let mut dv: Vec<Array2<f64>> = f.motions.iter().map(|m| Array2::zeros(m.embeddings.dim())).collect();
    for a in 0..b {
        let t = &f.texts[a];
        let m_a = t.embeddings.nrows() as f64;
        for j in 0..b {
            let pair = &f.pairs[a * b + j];
            let g_pair = gs[[a, j]] / m_a;
            let mo = &f.motions[j];
            for (i, (&w, &c)) in pair.winners.iter().zip(&pair.cosines).enumerate() {
                let (nl, nv) = (t.norms[i], mo.norms[w]);
                let l = t.embeddings.row(i);
                let v = mo.embeddings.row(w);
                let mut gl = dl[a].row_mut(i);
                for k in 0..d {
                    gl[k] += g_pair * (v[k] / nv - c * l[k] / nl) / nl;
                }
                let mut gv = dv[j].row_mut(w);
                for k in 0..d {
                    gv[k] += g_pair * (l[k] / nl - c * v[k] / nv) / nv;
                }
            }
        }
    }

    for (it, g) in batch.items.iter().zip(&dl) {
        backprop_text(&it.ids, g, params, &mut grad);
    }

    let sigma = params.pixel_stats.std;
    let layout = params.parts.layout()?;
    for ((mo, g), item) in f.motions.iter().zip(&dv).zip(&batch.items) {
        grad.patch_weight += &g.t().dot(&mo.patches);
        grad.patch_bias += &g.sum_axis(Axis(0));
        grad.positions += g;
        let dp = g.dot(&params.patch_weight);
        for (col, &frame) in mo.columns.iter().enumerate() {
            let w = col / BAND;
            let c = col % BAND;
            let feats = &item.features.rows[frame];
            for k in 0..GRID {
                let patch = dp.row(k * GRID + w);
                let p = &feats[layout.slot(k)..layout.slot(k) + layout.dof(k)];
                let part = &mut grad.parts.parts[k];
                for r in 0..BAND {
                    let dx = patch[r * BAND + c] / sigma;
                    part.bias[r] += dx;
                    for (q, &x) in p.iter().enumerate() {
                        part.weight[[r, q]] += dx * x;
                    }
                }
            }
        }
    }

    // masked-token reconstruction, mean over every masked position
    let scale = lambda / f.mlm_count as f64;
    for ((mask, states), probs) in batch.masks.iter().zip(&f.mlm_states).zip(&f.mlm_probs) {
        let mut dlogits = probs.clone();
        for (r, &pos) in mask.positions.iter().enumerate() {
            dlogits[[r, mask.original[pos] as usize]] -= 1.0;
        }
        dlogits.mapv_inplace(|v| v * scale);
        grad.mlm_weight += &states.t().dot(&dlogits);
        let dstates = dlogits.dot(&params.mlm_weight.t());
        let mut dh = Array2::zeros((mask.masked.len(), d));
        for (r, &pos) in mask.positions.iter().enumerate() {
            dh.row_mut(pos).assign(&dstates.row(r));
        }
        backprop_text(&mask.masked, &dh, params, &mut grad);
    }
    Ok((f.loss, grad))
}

/// AdamW moments and step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: EncoderParams,
    pub v: EncoderParams,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        AdamState {
            m: zeros_like(params),
            v: zeros_like(params),
            step: 0,
        }
    }
}

/// Parameters together with their optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: EncoderParams,
    pub adam: AdamState,
}

impl TrainState {
    pub fn new(params: EncoderParams) -> Self {
        let adam = AdamState::new(&params);
        TrainState { params, adam }
    }
}

/// Range τ is clamped to after every update, so exp(log τ) can neither
/// underflow to 0 nor overflow.
pub const TAU_BOUNDS: (f64, f64) = (1e-4, 1e4);

/// One decoupled-weight-decay Adam update. Weight decay skips α and log τ;
/// α is clamped back into [0, 1] and τ into [`TAU_BOUNDS`] afterwards.
pub fn apply_update(state: &mut TrainState, grad: &EncoderParams, lr: f64, weight_decay: f64) {
    state.adam.step += 1;
    let t = state.adam.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let grads = param_groups(grad);
    let ms = param_groups_mut(&mut state.adam.m);
    let vs = param_groups_mut(&mut state.adam.v);
    let ps = param_groups_mut(&mut state.params);
    for ((((name, p), (_, m)), (_, v)), (_, g)) in ps.into_iter().zip(ms).zip(vs).zip(grads) {
        let decay = if is_scalar_group(&name) { 0.0 } else { weight_decay };
        for i in 0..p.len() {
            m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
            v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] * (1.0 - lr * decay) - lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    state.params.alpha = state.params.alpha.clamp(0.0, 1.0);
    state.params.log_tau = state.params.log_tau.clamp(TAU_BOUNDS.0.ln(), TAU_BOUNDS.1.ln());
}

pub fn train_step(state: &mut TrainState, batch: &Batch, config: &LossConfig) -> Result<LossBreakdown> {
    let (loss, grad) = gradients(&state.params, batch, config.lambda_mlm)?;
    apply_update(state, &grad, config.learning_rate, config.weight_decay);
    Ok(loss)
}

/// Per-group comparison of analytic and finite-difference derivatives.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupCheck {
    pub group: String,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Denominator floor of the relative error; groups whose derivative is
/// below it are effectively judged on absolute error.
pub const GRADCHECK_FLOOR: f64 = 1e-6;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_FLOOR)
}

/// Central differences with step `h` along one direction per group: the
/// normalized sum of the unit analytic gradient and a random unit vector.
/// Returns `Ok(None)` when any winning patch changes within ±h, since the
/// loss is not differentiable across such a switch.
pub fn gradient_check<R: Rng + ?Sized>(
    params: &EncoderParams,
    batch: &Batch,
    lambda: f64,
    h: f64,
    rng: &mut R,
) -> Result<Option<Vec<GroupCheck>>> {
    let (_, grad) = gradients(params, batch, lambda)?;
    let base_sig = assignment_signature(params, batch)?;
    let names: Vec<String> = param_groups(params).into_iter().map(|(n, _)| n).collect();
    let mut out = Vec::with_capacity(names.len());
    for (gi, name) in names.iter().enumerate() {
        let g = param_groups(&grad)[gi].1.to_vec();
        let gnorm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
        let mut dir: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rnorm = dir.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
        dir.iter_mut().for_each(|u| *u /= rnorm);
        let mixed: Vec<f64> = dir
            .iter()
            .zip(&g)
            .map(|(u, gv)| if gnorm > 0.0 { u + gv / gnorm } else { *u })
            .collect();
        let unorm = mixed.iter().map(|x| x * x).sum::<f64>().sqrt();
        // a scalar group can draw exactly minus its gradient direction
        if unorm > 1e-6 {
            dir = mixed.into_iter().map(|u| u / unorm).collect();
        }
        let analytic: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();

        let shifted = |sign: f64| -> EncoderParams {
            let mut p = params.clone();
            let slot = &mut param_groups_mut(&mut p)[gi].1;
            for (x, u) in slot.iter_mut().zip(&dir) {
                *x += sign * h * u;
            }
            p
        };
        let (plus, minus) = (shifted(1.0), shifted(-1.0));
        if assignment_signature(&plus, batch)? != base_sig || assignment_signature(&minus, batch)? != base_sig {
            return Ok(None);
        }
        let lp = total_loss(&plus, batch, lambda)?.total;
        let lm = total_loss(&minus, batch, lambda)?.total;
        let numeric = (lp - lm) / (2.0 * h);
        out.push(GroupCheck {
            group: name.clone(),
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }
    Ok(Some(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub t2m: f64,
    pub m2t: f64,
    pub mlm: f64,
    /// Text-to-motion R@1 (percent) on the validation pairs, if any.
    pub val_r1: Option<f64>,
}

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,L_t2m,L_m2t,L_mlm,val_R@1\n");
    for h in history {
        let r1 = h.val_r1.map(|v| format!("{v:?}")).unwrap_or_default();
        out.push_str(&format!("{},{:?},{:?},{:?},{}\n", h.epoch, h.t2m, h.m2t, h.mlm, r1));
    }
    out
}

/// Tokenized training pairs and a vocabulary built from their captions.
pub fn prepare_items(pairs: &[(FeatureSequence, String)], vocab: &Vocabulary) -> Result<Vec<TrainItem>> {
    pairs
        .iter()
        .map(|(f, text)| {
            Ok(TrainItem {
                features: f.clone(),
                ids: crate::encoders::tokenize(text, vocab)?,
            })
        })
        .collect()
}

/// Fresh parameters whose pixel normalization comes from the training
/// Motion Images under the initial projections.
pub fn init_params(vocab_size: usize, layout: &FeatureLayout, items: &[TrainItem], seed: u64) -> Result<EncoderParams> {
    let mut params = EncoderParams::init(vocab_size, layout, seed);
    let images = items
        .iter()
        .map(|it| build_motion_image(&it.features, &params.parts))
        .collect::<Result<Vec<_>>>()?;
    params.pixel_stats = ChannelStats::from_images(&images)?;
    Ok(params)
}

/// Text-to-motion R@1 (percent) with pair `i` relevant to query `i` only.
pub fn diagonal_r1(params: &EncoderParams, items: &[TrainItem]) -> Result<f64> {
    use rayon::prelude::*;
    let motions = items
        .par_iter()
        .map(|it| {
            let image = build_motion_image(&it.features, &params.parts)?;
            crate::encoders::encode_motion(&image, params)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let texts = items
        .iter()
        .map(|it| encode_text(&it.ids, params))
        .collect::<Result<Vec<_>>>()?;
    let s = crate::late_interaction::batch_scores(&texts, &motions)?.scores;
    let hits = s
        .axis_iter(Axis(0))
        .enumerate()
        .filter(|(i, row)| {
            // ties count against the query: the target must beat everyone
            row.iter().enumerate().all(|(j, &v)| j == *i || v < row[*i])
        })
        .count();
    Ok(100.0 * hits as f64 / items.len() as f64)
}

/// Shuffled mini-batch training. The last partial batch of an epoch is kept
/// when it has at least two items.
pub fn train_loop(
    state: &mut TrainState,
    train: &[TrainItem],
    val: &[TrainItem],
    config: &LossConfig,
) -> Result<Vec<EpochMetrics>> {
    config.validate()?;
    if train.len() < config.batch_size {
        return Err(Error::InvalidConfig(format!(
            "training set of {} items is smaller than batch size {}",
            train.len(),
            config.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let (mut t2m, mut m2t, mut mlm, mut steps) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let items = chunk.iter().map(|&i| &train[i]).collect();
            let batch = Batch::new(items, config.mask_rate, &mut rng)?;
            let loss = train_step(state, &batch, config)?;
            t2m += loss.t2m;
            m2t += loss.m2t;
            mlm += loss.mlm;
            steps += 1;
        }
        let n = steps as f64;
        let val_r1 = if val.len() >= 2 { Some(diagonal_r1(&state.params, val)?) } else { None };
        let m = EpochMetrics {
            epoch: epoch + 1,
            t2m: t2m / n,
            m2t: m2t / n,
            mlm: mlm / n,
            val_r1,
        };
        log::info!(
            "epoch {}: t2m {:.4} m2t {:.4} mlm {:.4} val R@1 {:?}",
            m.epoch,
            m.t2m,
            m.m2t,
            m.mlm,
            m.val_r1
        );
        history.push(m);
    }
    Ok(history)
}
