//! Desk-scale attention sources.
//!
//! [`ToyModel`] is a small pre-norm causal transformer in plain `f32` whose
//! only output is its attention maps. Parameters are drawn from ChaCha8
//! (`rand_chacha`) seeded with [`ToyConfig::seed`], so the same seed gives
//! bitwise-identical weights on every platform. Every row of attention is
//! computed position by position with a fixed summation order, which makes
//! rows for a shared prefix bitwise identical across inputs and lets a
//! [`KvCache`] stand in for recomputing that prefix.
//!
//! [`synth_attention`] builds attention rows analytically from a
//! [`PlantSpec`]: a uniform floor, an additive per-position bias, and a boost
//! on one target document that only the real query sees.

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attention::AttentionSlice;
use crate::layout::PromptLayout;
use crate::tokenizer::fnv1a;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToyError {
    #[error("invalid toy config: {0}")]
    InvalidConfig(String),
    #[error("input of {len} tokens exceeds max_len {max}")]
    ContextOverflow { len: usize, max: usize },
    #[error("token id {0} outside the vocabulary")]
    TokenOutOfVocab(u32),
    #[error("requested rows {0:?} outside the input")]
    RowsOutOfRange(Range<usize>),
    #[error("target document `{0}` is not in the layout")]
    UnknownTargetDoc(String),
    #[error("invalid plant: {0}")]
    InvalidPlant(String),
}

/// Receives `(layer, head, position, attention row)` during a forward pass.
type RowSink<'a> = dyn FnMut(usize, usize, usize, &[f32]) + 'a;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub vocab_size: u32,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 2,
            model_dim: 32,
            vocab_size: 4096,
            max_len: 4096,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        let bad = |m: &str| Err(ToyError::InvalidConfig(m.to_string()));
        if self.layers == 0 || self.heads == 0 || self.model_dim == 0 {
            return bad("layers, heads and model_dim must be positive");
        }
        if self.vocab_size == 0 || self.max_len == 0 {
            return bad("vocab_size and max_len must be positive");
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(ToyError::InvalidConfig(format!(
                "model_dim {} not divisible by heads {}",
                self.model_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.model_dim / self.heads
    }
}

#[derive(Debug, Clone)]
struct Block {
    wq: Vec<f32>,
    wk: Vec<f32>,
    wv: Vec<f32>,
    wo: Vec<f32>,
    w_up: Vec<f32>,
    w_down: Vec<f32>,
}

#[derive(Debug, Clone)]
pub struct ToyModel {
    config: ToyConfig,
    token_emb: Vec<f32>,
    pos_emb: Vec<f32>,
    blocks: Vec<Block>,
}

/// Full attention for every layer, head and row: `layers × heads × T × T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FullAttention {
    pub layers: usize,
    pub heads: usize,
    pub len: usize,
    pub weights: Vec<f32>,
}

impl FullAttention {
    pub fn row(&self, layer: usize, head: usize, k: usize) -> &[f32] {
        let start = ((layer * self.heads + head) * self.len + k) * self.len;
        &self.weights[start..start + self.len]
    }

    pub fn get(&self, layer: usize, head: usize, k: usize, j: usize) -> f32 {
        self.row(layer, head, k)[j]
    }

    /// Keep the rows in `rows`.
    pub fn slice_rows(&self, rows: Range<usize>) -> AttentionSlice {
        let mut w = Vec::with_capacity(self.layers * self.heads * rows.len() * self.len);
        for l in 0..self.layers {
            for h in 0..self.heads {
                for k in rows.clone() {
                    w.extend_from_slice(self.row(l, h, k));
                }
            }
        }
        AttentionSlice::new(self.layers, self.heads, self.len, rows.collect(), w)
            .expect("rows lie inside the attention tensor")
    }
}

/// Keys and values of every layer for a processed token prefix.
#[derive(Debug, Clone)]
pub struct KvCache {
    token_ids: Vec<u32>,
    keys: Vec<Vec<f32>>,
    values: Vec<Vec<f32>>,
}

impl KvCache {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    pub fn token_ids(&self) -> &[u32] {
        &self.token_ids
    }

    fn truncated(&self, len: usize, dim: usize) -> KvCache {
        KvCache {
            token_ids: self.token_ids[..len].to_vec(),
            keys: self.keys.iter().map(|k| k[..len * dim].to_vec()).collect(),
            values: self.values.iter().map(|v| v[..len * dim].to_vec()).collect(),
        }
    }
}

fn init_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f32) -> Vec<f32> {
    (0..rows * cols).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// `out[c] = Σ_r x[r] · w[r, c]` for a row-major `w` of shape `x.len() × out.len()`.
fn matvec(x: &[f32], w: &[f32], out: &mut [f32]) {
    let cols = out.len();
    out.iter_mut().for_each(|o| *o = 0.0);
    for (r, &xr) in x.iter().enumerate() {
        let row = &w[r * cols..(r + 1) * cols];
        for (o, &wv) in out.iter_mut().zip(row) {
            *o += xr * wv;
        }
    }
}

fn layer_norm(x: &[f32], out: &mut [f32]) {
    let n = x.len() as f32;
    let mean = x.iter().sum::<f32>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
    let inv = 1.0 / (var + 1e-5).sqrt();
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mean) * inv;
    }
}

fn gelu(x: f32) -> f32 {
    0.5 * x * (1.0 + (0.797_884_6 * (x + 0.044_715 * x * x * x)).tanh())
}

impl ToyModel {
    pub fn new(config: ToyConfig) -> Result<Self, ToyError> {
        config.validate()?;
        let d = config.model_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w_scale = (3.0 / d as f32).sqrt();
        let token_emb = init_matrix(&mut rng, config.vocab_size as usize, d, 1.0);
        let pos_emb = init_matrix(&mut rng, config.max_len, d, 0.5);
        let blocks = (0..config.layers)
            .map(|_| Block {
                // Larger query/key scale gives peaked, non-uniform maps.
                wq: init_matrix(&mut rng, d, d, 2.0 * w_scale),
                wk: init_matrix(&mut rng, d, d, 2.0 * w_scale),
                wv: init_matrix(&mut rng, d, d, w_scale),
                wo: init_matrix(&mut rng, d, d, w_scale),
                w_up: init_matrix(&mut rng, d, 2 * d, w_scale),
                w_down: init_matrix(&mut rng, 2 * d, d, (3.0 / (2 * d) as f32).sqrt()),
            })
            .collect();
        Ok(Self {
            config,
            token_emb,
            pos_emb,
            blocks,
        })
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    /// FNV-1a over the bit patterns of every parameter.
    pub fn checksum(&self) -> u64 {
        let mut bytes = Vec::new();
        let mut push = |v: &[f32]| v.iter().for_each(|x| bytes.extend_from_slice(&x.to_le_bytes()));
        push(&self.token_emb);
        push(&self.pos_emb);
        for b in &self.blocks {
            for m in [&b.wq, &b.wk, &b.wv, &b.wo, &b.w_up, &b.w_down] {
                push(m);
            }
        }
        fnv1a(&bytes)
    }

    fn check_input(&self, ids: &[u32]) -> Result<(), ToyError> {
        if ids.len() > self.config.max_len {
            return Err(ToyError::ContextOverflow {
                len: ids.len(),
                max: self.config.max_len,
            });
        }
        if let Some(&bad) = ids.iter().find(|&&id| id >= self.config.vocab_size) {
            return Err(ToyError::TokenOutOfVocab(bad));
        }
        Ok(())
    }

    /// Every attention row for every layer and head.
    pub fn forward_attention(&self, ids: &[u32]) -> Result<FullAttention, ToyError> {
        self.check_input(ids)?;
        let t = ids.len();
        let (layers, heads) = (self.config.layers, self.config.heads);
        let mut weights = vec![0.0f32; layers * heads * t * t];
        self.run(ids, None, &mut |l, h, k, row| {
            let start = ((l * heads + h) * t + k) * t;
            weights[start..start + row.len()].copy_from_slice(row);
        });
        Ok(FullAttention {
            layers,
            heads,
            len: t,
            weights,
        })
    }

    /// Attention rows `rows` only.
    pub fn forward_rows(&self, ids: &[u32], rows: Range<usize>) -> Result<AttentionSlice, ToyError> {
        self.check_input(ids)?;
        if rows.end > ids.len() || rows.start > rows.end {
            return Err(ToyError::RowsOutOfRange(rows));
        }
        let (slice, _) = self.rows_from(ids, None, rows);
        Ok(slice)
    }

    /// Attention rows `rows` together with the keys and values of all of `ids`.
    pub fn forward_rows_with_cache(
        &self,
        ids: &[u32],
        rows: Range<usize>,
    ) -> Result<(AttentionSlice, KvCache), ToyError> {
        self.check_input(ids)?;
        if rows.end > ids.len() || rows.start > rows.end {
            return Err(ToyError::RowsOutOfRange(rows));
        }
        Ok(self.rows_from(ids, None, rows))
    }

    /// Process `ids` and keep its keys and values.
    pub fn prefill(&self, ids: &[u32]) -> Result<KvCache, ToyError> {
        self.check_input(ids)?;
        Ok(self.run(ids, None, &mut |_, _, _, _| {}))
    }

    /// Like [`forward_rows`](Self::forward_rows), reusing the cached prefix
    /// shared with `ids` (up to the first requested row). Returns the number of
    /// positions taken from the cache.
    pub fn forward_rows_cached(
        &self,
        cache: &KvCache,
        ids: &[u32],
        rows: Range<usize>,
    ) -> Result<(AttentionSlice, usize), ToyError> {
        self.check_input(ids)?;
        if rows.end > ids.len() || rows.start > rows.end {
            return Err(ToyError::RowsOutOfRange(rows));
        }
        let common = cache.token_ids.iter().zip(ids).take_while(|(a, b)| a == b).count();
        let reuse = common.min(rows.start);
        let prefix = cache.truncated(reuse, self.config.model_dim);
        let (slice, _) = self.rows_from(ids, Some(&prefix), rows);
        Ok((slice, reuse))
    }

    fn rows_from(&self, ids: &[u32], cache: Option<&KvCache>, rows: Range<usize>) -> (AttentionSlice, KvCache) {
        let t = ids.len();
        let (layers, heads) = (self.config.layers, self.config.heads);
        let n = rows.len();
        let mut weights = vec![0.0f32; layers * heads * n * t];
        let kv = self.run(ids, cache, &mut |l, h, k, row| {
            if rows.contains(&k) {
                let start = ((l * heads + h) * n + (k - rows.start)) * t;
                weights[start..start + row.len()].copy_from_slice(row);
            }
        });
        let slice =
            AttentionSlice::new(layers, heads, t, rows.collect(), weights).expect("rows checked against input length");
        (slice, kv)
    }

    /// Core forward pass. Positions below `cache.len()` are taken from the cache;
    /// `emit(layer, head, k, row)` receives each computed attention row
    /// (length `k + 1`).
    fn run(&self, ids: &[u32], cache: Option<&KvCache>, emit: &mut RowSink<'_>) -> KvCache {
        let cfg = &self.config;
        let d = cfg.model_dim;
        let dh = cfg.head_dim();
        let t = ids.len();
        let p = cache.map_or(0, |c| c.len());
        let scale = 1.0 / (dh as f32).sqrt();

        let mut x: Vec<f32> = Vec::with_capacity((t - p) * d);
        for (pos, &id) in ids.iter().enumerate().skip(p) {
            let te = &self.token_emb[id as usize * d..(id as usize + 1) * d];
            let pe = &self.pos_emb[pos * d..(pos + 1) * d];
            x.extend(te.iter().zip(pe).map(|(a, b)| a + b));
        }

        let mut keys_out = Vec::with_capacity(cfg.layers);
        let mut values_out = Vec::with_capacity(cfg.layers);
        let mut normed = vec![0.0f32; d];
        let mut q = vec![0.0f32; (t - p) * d];
        let mut probs = vec![0.0f32; t];
        let mut mixed = vec![0.0f32; d];
        let mut proj = vec![0.0f32; d];
        let mut hidden = vec![0.0f32; 2 * d];

        for (l, block) in self.blocks.iter().enumerate() {
            let mut keys = Vec::with_capacity(t * d);
            let mut values = Vec::with_capacity(t * d);
            if let Some(c) = cache {
                keys.extend_from_slice(&c.keys[l][..p * d]);
                values.extend_from_slice(&c.values[l][..p * d]);
            }
            keys.resize(t * d, 0.0);
            values.resize(t * d, 0.0);
            for i in 0..t - p {
                layer_norm(&x[i * d..(i + 1) * d], &mut normed);
                let pos = p + i;
                matvec(&normed, &block.wq, &mut q[i * d..(i + 1) * d]);
                matvec(&normed, &block.wk, &mut keys[pos * d..(pos + 1) * d]);
                matvec(&normed, &block.wv, &mut values[pos * d..(pos + 1) * d]);
            }

            for i in 0..t - p {
                let k = p + i;
                mixed.iter_mut().for_each(|m| *m = 0.0);
                for h in 0..cfg.heads {
                    let qh = &q[i * d + h * dh..i * d + (h + 1) * dh];
                    let row = &mut probs[..=k];
                    let mut max = f32::NEG_INFINITY;
                    for (j, r) in row.iter_mut().enumerate() {
                        let kh = &keys[j * d + h * dh..j * d + (h + 1) * dh];
                        *r = qh.iter().zip(kh).map(|(a, b)| a * b).sum::<f32>() * scale;
                        max = max.max(*r);
                    }
                    let mut total = 0.0f32;
                    for r in row.iter_mut() {
                        *r = (*r - max).exp();
                        total += *r;
                    }
                    let inv = 1.0 / total;
                    row.iter_mut().for_each(|r| *r *= inv);
                    emit(l, h, k, row);
                    let out = &mut mixed[h * dh..(h + 1) * dh];
                    for (j, &w) in row.iter().enumerate() {
                        let vh = &values[j * d + h * dh..j * d + (h + 1) * dh];
                        for (o, &v) in out.iter_mut().zip(vh) {
                            *o += w * v;
                        }
                    }
                }
                let xi = &mut x[i * d..(i + 1) * d];
                matvec(&mixed, &block.wo, &mut proj);
                xi.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);

                layer_norm(xi, &mut normed);
                matvec(&normed, &block.w_up, &mut hidden);
                hidden.iter_mut().for_each(|v| *v = gelu(*v));
                matvec(&hidden, &block.w_down, &mut proj);
                xi.iter_mut().zip(&proj).for_each(|(a, b)| *a += b);
            }
            keys_out.push(keys);
            values_out.push(values);
        }

        KvCache {
            token_ids: ids.to_vec(),
            keys: keys_out,
            values: values_out,
        }
    }
}

/// Convenience constructor matching the `init` step of the pipeline.
pub fn init_toy_model(config: ToyConfig) -> Result<ToyModel, ToyError> {
    ToyModel::new(config)
}

/// A planted-signal attention source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub target: String,
    /// Extra pre-normalization mass on every target-document token (query pass only).
    pub boost: f64,
    /// Extra mass per token of the document presented at each position (0-based).
    #[serde(default)]
    pub position_bias: Vec<f64>,
    /// Mass on every visible token.
    pub base: f64,
    #[serde(default = "one")]
    pub layers: usize,
    #[serde(default = "one")]
    pub heads: usize,
}

fn one() -> usize {
    1
}

impl PlantSpec {
    pub fn new(target: impl Into<String>, boost: f64, base: f64) -> Self {
        Self {
            target: target.into(),
            boost,
            position_bias: Vec::new(),
            base,
            layers: 1,
            heads: 1,
        }
    }

    pub fn with_position_bias(mut self, bias: Vec<f64>) -> Self {
        self.position_bias = bias;
        self
    }

    pub fn with_shape(mut self, layers: usize, heads: usize) -> Self {
        self.layers = layers;
        self.heads = heads;
        self
    }

    fn validate(&self) -> Result<(), ToyError> {
        let finite_nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !finite_nonneg(self.boost) || !finite_nonneg(self.base) {
            return Err(ToyError::InvalidPlant(
                "boost and base must be finite and non-negative".into(),
            ));
        }
        if !self.position_bias.iter().all(|&b| finite_nonneg(b)) {
            return Err(ToyError::InvalidPlant(
                "position bias must be finite and non-negative".into(),
            ));
        }
        if self.layers == 0 || self.heads == 0 {
            return Err(ToyError::InvalidPlant("layers and heads must be positive".into()));
        }
        Ok(())
    }

    /// Pre-normalization mass for every token of `layout`.
    pub fn token_mass(&self, layout: &PromptLayout, with_boost: bool) -> Result<Vec<f64>, ToyError> {
        self.validate()?;
        if layout.doc_span(&self.target).is_none() {
            return Err(ToyError::UnknownTargetDoc(self.target.clone()));
        }
        let mut mass = vec![self.base; layout.total_len()];
        for (pos, doc) in layout.documents.iter().enumerate() {
            let bias = self.position_bias.get(pos).copied().unwrap_or(0.0);
            let boost = if with_boost && doc.doc_id == self.target {
                self.boost
            } else {
                0.0
            };
            for m in &mut mass[doc.tokens.clone()] {
                *m += bias + boost;
            }
        }
        Ok(mass)
    }
}

/// Query-row attention for `layout`: each row over the visible prefix is
/// proportional to the planted mass. The target boost is applied only for the
/// query pass.
pub fn synth_attention(layout: &PromptLayout, plant: &PlantSpec, with_boost: bool) -> Result<AttentionSlice, ToyError> {
    let mass = plant.token_mass(layout, with_boost)?;
    let t = layout.total_len();
    let rows = layout.query_span();
    let mut row_weights = Vec::with_capacity(rows.len() * t);
    for k in rows.clone() {
        let total: f64 = mass[..=k].iter().sum();
        if total <= 0.0 {
            return Err(ToyError::InvalidPlant(format!("row {k} has zero mass")));
        }
        row_weights.extend(mass[..=k].iter().map(|&m| (m / total) as f32));
        row_weights.extend(std::iter::repeat_n(0.0f32, t - k - 1));
    }
    let mut weights = Vec::with_capacity(plant.layers * plant.heads * row_weights.len());
    for _ in 0..plant.layers * plant.heads {
        weights.extend_from_slice(&row_weights);
    }
    Ok(
        AttentionSlice::new(plant.layers, plant.heads, t, rows.collect(), weights)
            .expect("query span lies inside the layout"),
    )
}

/// Query-pass and calibration-pass slices for a layout pair.
pub fn synth_attention_pair(
    layout: &PromptLayout,
    calibration: &PromptLayout,
    plant: &PlantSpec,
) -> Result<(AttentionSlice, AttentionSlice), ToyError> {
    Ok((
        synth_attention(layout, plant, true)?,
        synth_attention(calibration, plant, false)?,
    ))
}
