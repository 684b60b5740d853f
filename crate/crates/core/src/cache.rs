//! Context cache for group-wise autoregressive inference.
//!
//! Only the cross-group mixers exchange information between groups, so each of
//! them keeps the projected keys and values of every group it has seen. A step
//! then runs a single group through the stack: its own keys and values are
//! appended and its queries attend over all cached blocks with no mask. Inner
//! mixers and feed-forward blocks are per group and cache nothing.

use crate::grouping::GroupedLatents;
use crate::model::{cross_mixer_step, inner_mixer_groups, KvBlocks, LayerCtx, MacBreakdown, MixerOrder, ModelConfig, ModelWeights};
use crate::numerics::{self, Tensor};
use crate::{Error, Result};

pub struct ContextCache {
    config: ModelConfig,
    ctx: LayerCtx,
    layers: Vec<KvBlocks>,
    steps: usize,
}

impl std::fmt::Debug for ContextCache {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ContextCache")
            .field("steps", &self.steps)
            .field("layers", &self.layers.len())
            .field("hw", &self.ctx.hw)
            .finish()
    }
}

impl ContextCache {
    /// Empty cache for latents whose groups are `h×w` token grids.
    pub fn init(config: &ModelConfig, h: usize, w: usize) -> Self {
        Self {
            config: config.clone(),
            ctx: LayerCtx::new(config, h, w),
            layers: (0..config.depth).map(|_| KvBlocks::default()).collect(),
            steps: 0,
        }
    }

    /// Number of groups processed so far (`t`).
    pub fn len(&self) -> usize {
        self.steps
    }

    pub fn is_empty(&self) -> bool {
        self.steps == 0
    }

    pub fn capacity(&self) -> usize {
        self.ctx.groups
    }

    /// Total cached f32 values across layers, keys and values.
    pub fn cached_entries(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.keys.iter().chain(&l.values).map(Vec::len).sum::<usize>())
            .sum()
    }

    fn gather(&self, layer: usize, head: usize, values: bool) -> Result<Tensor> {
        if layer >= self.layers.len() || head >= self.ctx.heads {
            return Err(Error::Index(format!("layer {layer}, head {head}")));
        }
        if self.steps == 0 {
            return Err(Error::Index("cache is empty".into()));
        }
        let blocks = if values { &self.layers[layer].values } else { &self.layers[layer].keys };
        let (hw, d, dh) = (self.ctx.hw, self.ctx.dim, self.ctx.head_dim);
        let t = blocks.len();
        let mut out = Vec::with_capacity(hw * t * dh);
        for p in 0..hw {
            for b in blocks {
                out.extend_from_slice(&b[p * d + head * dh..][..dh]);
            }
        }
        Tensor::new(vec![hw, t, dh], out)
    }

    /// Cached keys of one layer and head, `[hw × t × d_h]`.
    pub fn keys(&self, layer: usize, head: usize) -> Result<Tensor> {
        self.gather(layer, head, false)
    }

    /// Cached values of one layer and head, `[hw × t × d_h]`.
    pub fn values(&self, layer: usize, head: usize) -> Result<Tensor> {
        self.gather(layer, head, true)
    }

    fn check(&self, w: &ModelWeights) -> Result<()> {
        if w.config != self.config {
            return Err(Error::Config("weights do not match the cache configuration".into()));
        }
        if self.steps >= self.ctx.groups {
            return Err(Error::CacheExhausted(self.steps));
        }
        Ok(())
    }

    /// Runs one already-embedded group (`[hw × D]` or `[1 × hw × D]`) through
    /// the stack as group `t = len()`, returning its `[1 × hw × D]` output.
    pub fn step_forward(&mut self, group_input: &Tensor, w: &ModelWeights) -> Result<Tensor> {
        self.step_forward_counted(group_input, w, &mut MacBreakdown::default())
    }

    pub fn step_forward_counted(&mut self, group_input: &Tensor, w: &ModelWeights, macs: &mut MacBreakdown) -> Result<Tensor> {
        self.check(w)?;
        let (hw, d) = (self.ctx.hw, self.ctx.dim);
        if group_input.len() != hw * d || group_input.last_dim() != d {
            return Err(Error::Shape(format!(
                "group input {:?}, expected [{hw}, {d}]",
                group_input.shape()
            )));
        }
        let mut x = group_input.data().to_vec();
        self.run_layers(&mut x, w, macs);
        Tensor::new(vec![1, hw, d], x)
    }

    /// Embeds one group of latents (`[hw × c]`) and steps it through the stack.
    pub fn step_latents(&mut self, group: &[f32], w: &ModelWeights, macs: &mut MacBreakdown) -> Result<Vec<f32>> {
        self.check(w)?;
        let (hw, d) = (self.ctx.hw, self.ctx.dim);
        let c = self.config.group_channels();
        if group.len() != hw * c {
            return Err(Error::Shape(format!("group of {} values, expected {}", group.len(), hw * c)));
        }
        let mut x = vec![0.0f32; hw * d];
        numerics::linear_into(group, w.input_embed_w.data(), w.input_embed_b.data(), &mut x, hw, c, d);
        macs.embed += (hw * c * d) as u64;
        self.run_layers(&mut x, w, macs);
        Ok(x)
    }

    fn run_layers(&mut self, x: &mut [f32], w: &ModelWeights, macs: &mut MacBreakdown) {
        for (layer, blocks) in w.layers.iter().zip(&mut self.layers) {
            match self.config.mixer_order {
                MixerOrder::CrossThenInner => {
                    cross_mixer_step(x, &layer.cross, &self.ctx, blocks, macs);
                    inner_mixer_groups(x, 1, &layer.inner, &self.ctx, macs);
                }
                MixerOrder::InnerThenCross => {
                    inner_mixer_groups(x, 1, &layer.inner, &self.ctx, macs);
                    cross_mixer_step(x, &layer.cross, &self.ctx, blocks, macs);
                }
            }
        }
        self.steps += 1;
    }
}

/// Feeds every group of `g` through a fresh cache one at a time; the result
/// equals [`crate::model::forward_stack`] on `g`.
pub fn run_incremental(g: &GroupedLatents, w: &ModelWeights) -> Result<Tensor> {
    run_incremental_counted(g, w, &mut MacBreakdown::default())
}

pub fn run_incremental_counted(g: &GroupedLatents, w: &ModelWeights, macs: &mut MacBreakdown) -> Result<Tensor> {
    let cfg = &w.config;
    if g.scheme != cfg.scheme || g.dims.c != cfg.group_channels() {
        return Err(Error::Config("grouped latents do not match the model".into()));
    }
    let mut cache = ContextCache::init(cfg, g.dims.h, g.dims.w);
    let mut out = Vec::with_capacity(g.dims.groups * g.dims.hw() * cfg.dim);
    for t in 0..g.dims.groups {
        out.extend(cache.step_latents(g.group(t), w, macs)?);
    }
    Tensor::new(vec![g.dims.groups, g.dims.hw(), cfg.dim], out)
}

/// MACs a cache-less decoder spends: at step `t` it reruns the stack over the
/// first `t` groups, for `t = 1..=G`.
pub fn recompute_baseline_macs(g: &GroupedLatents, w: &ModelWeights) -> Result<u64> {
    let mut total = 0;
    for n in 1..=g.dims.groups {
        let mut macs = MacBreakdown::default();
        crate::model::forward_prefix(g, n, w, &mut macs)?;
        total += macs.total();
    }
    Ok(total)
}
