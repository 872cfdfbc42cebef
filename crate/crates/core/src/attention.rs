//! Cross-attention maps and the rough edit-location mask.
//!
//! Instruction-following models attend to the edit region with every token
//! alike, so the start-of-text map minus the end-of-text map, after averaging
//! over steps and blocks, is small exactly where the edit lands.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{resize_bilinear, BinaryMask, Grid2D, Grid3D};

/// Projection matrices for one cross-attention layer, row-vector convention:
/// `Q = features * query_proj`, `K = text * key_proj`, `V = text * value_proj`.
#[derive(Debug, Clone)]
pub struct AttentionInputs {
    pub query_proj: Grid2D,
    pub key_proj: Grid2D,
    pub value_proj: Grid2D,
    pub key_dim: usize,
}

impl AttentionInputs {
    /// Projects spatial features (`P x C`, `P = h * w`) and text embeddings
    /// (`L x E`) and runs [`cross_attention`].
    pub fn attend(
        &self,
        features: &Grid2D,
        text: &Grid2D,
        spatial: (usize, usize),
    ) -> Result<(Grid3D, Grid2D)> {
        let q = matmul(features, &self.query_proj)?;
        let k = matmul(text, &self.key_proj)?;
        let v = matmul(text, &self.value_proj)?;
        cross_attention(&q, &k, &v, self.key_dim, spatial)
    }
}

/// Plain `A * B` in f64 accumulation.
pub fn matmul(a: &Grid2D, b: &Grid2D) -> Result<Grid2D> {
    if a.width() != b.height() {
        return Err(Error::shape(format!(
            "matmul inner dimensions {}x{} * {}x{}",
            a.height(),
            a.width(),
            b.height(),
            b.width()
        )));
    }
    let (n, m) = (a.height(), b.width());
    let mut out = vec![0f64; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for (k, &x) in a.row(i).iter().enumerate() {
            let x = x as f64;
            for (o, &y) in row.iter_mut().zip(b.row(k)) {
                *o += x * y as f64;
            }
        }
    }
    Grid2D::new(n, m, out.into_iter().map(|v| v as f32).collect())
}

/// `M = softmax(Q Kᵀ / √d)`, `updated = M V`.
///
/// `query` is `P x d_k` with `P = spatial.0 * spatial.1`; `key` is `L x d_k`;
/// `value` is `L x d_v`. The returned maps are laid out as `L` token maps over
/// the spatial grid.
pub fn cross_attention(
    query: &Grid2D,
    key: &Grid2D,
    value: &Grid2D,
    key_dim: usize,
    spatial: (usize, usize),
) -> Result<(Grid3D, Grid2D)> {
    if key_dim == 0 {
        return Err(Error::invalid("key dimension must be positive"));
    }
    let (h, w) = spatial;
    let pixels = query.height();
    if h.checked_mul(w) != Some(pixels) {
        return Err(Error::shape(format!(
            "{pixels} query rows cannot tile a {h}x{w} map"
        )));
    }
    if query.width() != key.width() {
        return Err(Error::shape(format!(
            "query width {} vs key width {}",
            query.width(),
            key.width()
        )));
    }
    if key.height() != value.height() {
        return Err(Error::shape(format!(
            "{} keys vs {} values",
            key.height(),
            value.height()
        )));
    }
    let tokens = key.height();
    let dv = value.width();
    let scale = 1.0 / (key_dim as f64).sqrt();

    let mut maps = vec![0f32; tokens * pixels];
    let mut updated = vec![0f32; pixels * dv];
    let mut logits = vec![0f64; tokens];
    let mut acc = vec![0f64; dv];
    for p in 0..pixels {
        let q = query.row(p);
        for (t, logit) in logits.iter_mut().enumerate() {
            let dot: f64 = q
                .iter()
                .zip(key.row(t))
                .map(|(&a, &b)| a as f64 * b as f64)
                .sum();
            *logit = dot * scale;
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for logit in logits.iter_mut() {
            *logit = (*logit - max).exp();
            total += *logit;
        }
        acc.fill(0.0);
        for (t, &e) in logits.iter().enumerate() {
            let weight = e / total;
            maps[t * pixels + p] = weight as f32;
            for (a, &v) in acc.iter_mut().zip(value.row(t)) {
                *a += weight * v as f64;
            }
        }
        for (u, &a) in updated[p * dv..(p + 1) * dv].iter_mut().zip(&acc) {
            *u = a as f32;
        }
    }
    Ok((
        Grid3D::new(tokens, h, w, maps)?,
        Grid2D::new(pixels, dv, updated)?,
    ))
}

/// One exported attention stack, tagged with its sampling step and block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStack {
    pub step: u32,
    pub block: String,
    pub maps: Grid3D,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionCollection {
    pub stacks: Vec<AttentionStack>,
}

impl AttentionCollection {
    pub fn new(stacks: Vec<AttentionStack>) -> Self {
        Self { stacks }
    }

    pub fn push(&mut self, step: u32, block: impl Into<String>, maps: Grid3D) {
        self.stacks.push(AttentionStack {
            step,
            block: block.into(),
            maps,
        });
    }

    pub fn len(&self) -> usize {
        self.stacks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stacks.is_empty()
    }

    /// Distinct sampling steps present.
    pub fn step_count(&self) -> usize {
        let mut steps: Vec<u32> = self.stacks.iter().map(|s| s.step).collect();
        steps.sort_unstable();
        steps.dedup();
        steps.len()
    }

    pub fn block_ids(&self) -> Vec<String> {
        let mut blocks: Vec<String> = self.stacks.iter().map(|s| s.block.clone()).collect();
        blocks.sort();
        blocks.dedup();
        blocks
    }

    /// Shared token count, or an error when stacks disagree.
    pub fn token_count(&self) -> Result<usize> {
        let first = self
            .stacks
            .first()
            .ok_or(Error::Empty("attention collection"))?;
        let tokens = first.maps.layers();
        if let Some(bad) = self.stacks.iter().find(|s| s.maps.layers() != tokens) {
            return Err(Error::shape(format!(
                "attention stacks disagree on token count: {tokens} vs {} (step {}, block {})",
                bad.maps.layers(),
                bad.step,
                bad.block
            )));
        }
        Ok(tokens)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    /// Threshold on the start/end token difference, in 8-bit units.
    pub threshold: u8,
    pub target_h: usize,
    pub target_w: usize,
    /// Flip the mask polarity (difference >= threshold marks the edit).
    pub invert: bool,
}

impl LocalizerConfig {
    pub const DEFAULT_THRESHOLD: u8 = 128;

    pub fn new(target_h: usize, target_w: usize) -> Self {
        Self {
            threshold: Self::DEFAULT_THRESHOLD,
            target_h,
            target_w,
            invert: false,
        }
    }
}

/// Mean over all stacks, resized to the target size, jointly normalized to
/// `[0, 255]`.
///
/// Stacks may come at different native resolutions. They are averaged per
/// resolution first and each group mean is resized once; bilinear resizing is
/// linear, so this equals resizing every stack before averaging.
pub fn average_maps(collection: &AttentionCollection, config: &LocalizerConfig) -> Result<Grid3D> {
    let tokens = collection.token_count()?;
    let (th, tw) = (config.target_h, config.target_w);
    if th == 0 || tw == 0 {
        return Err(Error::invalid(format!("zero target dimension {th}x{tw}")));
    }

    // Canonical order so the float sums do not depend on input order.
    let mut order: Vec<&AttentionStack> = collection.stacks.iter().collect();
    order.sort_by(|a, b| (a.step, &a.block).cmp(&(b.step, &b.block)));

    let mut groups: BTreeMap<(usize, usize), (Vec<f64>, usize)> = BTreeMap::new();
    for stack in order {
        let (_, h, w) = stack.maps.dims();
        let (sum, count) = groups
            .entry((h, w))
            .or_insert_with(|| (vec![0.0; tokens * h * w], 0));
        for (s, &v) in sum.iter_mut().zip(stack.maps.as_slice()) {
            *s += v as f64;
        }
        *count += 1;
    }

    let total = collection.len() as f64;
    let plane = th * tw;
    let mut mean = vec![0f64; tokens * plane];
    for ((h, w), (sum, count)) in &groups {
        let weight = *count as f64 / total;
        for t in 0..tokens {
            let layer: Vec<f32> = sum[t * h * w..(t + 1) * h * w]
                .iter()
                .map(|&s| (s / *count as f64) as f32)
                .collect();
            let resized = resize_bilinear(&Grid2D::new(*h, *w, layer)?, th, tw)?;
            for (m, &v) in mean[t * plane..(t + 1) * plane]
                .iter_mut()
                .zip(resized.as_slice())
            {
                *m += weight * v as f64;
            }
        }
    }
    let stack = Grid3D::new(tokens, th, tw, mean.into_iter().map(|v| v as f32).collect())?;
    normalize_joint(&stack)
}

/// Min-max normalizes the whole stack with one shared scale onto `[0, 255]`.
/// A constant stack maps to all zeros.
pub fn normalize_joint(stack: &Grid3D) -> Result<Grid3D> {
    let (lo, hi) = stack.min_max();
    let (lo, hi) = (lo as f64, hi as f64);
    let range = hi - lo;
    let data = stack
        .as_slice()
        .iter()
        .map(|&v| {
            if range > 0.0 {
                (((v as f64 - lo) / range) * 255.0) as f32
            } else {
                0.0
            }
        })
        .collect();
    let (l, h, w) = stack.dims();
    Grid3D::new(l, h, w, data)
}

/// Marks pixels where `first - last < threshold` (or `>=` when inverted).
pub fn binarize_location(averaged: &Grid3D, config: &LocalizerConfig) -> Result<BinaryMask> {
    let (tokens, h, w) = averaged.dims();
    if tokens < 2 {
        return Err(Error::shape(format!(
            "localization needs start and end token maps, got {tokens} token(s)"
        )));
    }
    let first = averaged.layer(0);
    let last = averaged.layer(tokens - 1);
    let threshold = config.threshold as f64;
    let bits = first
        .iter()
        .zip(last)
        .map(|(&a, &b)| ((a as f64 - b as f64) < threshold) != config.invert)
        .collect();
    BinaryMask::new(h, w, bits)
}
