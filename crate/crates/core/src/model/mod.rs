//! The group-wise autoregressive transformer.
//!
//! Grouped latents `[G × hw × c]` are embedded to `D` channels, run through `L`
//! modules of a cross-group mixer (causal attention along the group axis at
//! each spatial position) and an inner-group mixer (attention over the tokens
//! of one group, weights shared across groups), shifted by one group with the
//! learned start token in front, mapped back to `c` channels and turned into
//! per-element Gaussian parameters by the parameter net together with the
//! grouped hyper feature.

mod mixer;
mod param_net;
mod relpos;
mod weights;

pub use mixer::MacBreakdown;
#[cfg(test)]
use mixer::ffn_block;
pub(crate) use mixer::{cross_mixer_step, inner_mixer_groups, KvBlocks, LayerCtx};
pub use param_net::{parameter_net, sigma_from_raw};
pub(crate) use param_net::parameter_net_group;
pub use relpos::{displacement_index, relpos_index, relpos_table_size, RelPosMode};
pub use weights::{
    Attention, CrossMixerWeights, Ffn, HyperWeights, InitKind, InnerMixerWeights, LayerWeights,
    ModelWeights, Norm, ParamNetWeights, INIT_STD,
};

use crate::grouping::{self, GroupDims, GroupOrder, GroupScheme, GroupedLatents, SpatialPattern};
use crate::numerics::{self, Tensor};
use crate::{Error, Result};

/// Lower bound of the predicted scale.
pub const SIGMA_MIN: f32 = 0.11;
/// Upper bound of the predicted scale.
pub const SIGMA_MAX: f32 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum MixerOrder {
    #[default]
    CrossThenInner,
    InnerThenCross,
}

impl MixerOrder {
    pub fn code(self) -> u8 {
        match self {
            MixerOrder::CrossThenInner => 0,
            MixerOrder::InnerThenCross => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(MixerOrder::CrossThenInner),
            1 => Ok(MixerOrder::InnerThenCross),
            _ => Err(Error::Config(format!("unknown mixer order code {code}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cross_then_inner" | "cross" => Ok(MixerOrder::CrossThenInner),
            "inner_then_cross" | "inner" => Ok(MixerOrder::InnerThenCross),
            _ => Err(Error::Config(format!("unknown mixer order {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MixerOrder::CrossThenInner => "cross_then_inner",
            MixerOrder::InnerThenCross => "inner_then_cross",
        }
    }
}

/// Model and codec hyperparameters. Serialised verbatim into weight files and
/// hashed into bitstream headers.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ModelConfig {
    /// Number of stacked cross/inner modules `L`.
    pub depth: usize,
    /// Embedding width `D`.
    pub dim: usize,
    /// Attention heads `m`; `D / m` is the head width.
    pub heads: usize,
    pub ffn_ratio: usize,
    /// Latent channels `C`.
    pub latent_channels: usize,
    /// Hyper latent channels `C_z`.
    pub hyper_channels: usize,
    pub scheme: GroupScheme,
    pub mixer_order: MixerOrder,
    pub relpos: RelPosMode,
    /// Latent symbols are clamped to `±latent_bound`.
    pub latent_bound: u32,
    /// Hyper symbols are clamped to `±hyper_bound`.
    pub hyper_bound: u32,
}

impl ModelConfig {
    /// Small configuration used by tests: `L=2, D=64, m=4, C=32`, 4 channel
    /// slices with the checkerboard split (G = 8).
    pub fn toy() -> Self {
        Self {
            depth: 2,
            dim: 64,
            heads: 4,
            ffn_ratio: 4,
            latent_channels: 32,
            hyper_channels: 16,
            scheme: GroupScheme::new(4, SpatialPattern::Checkerboard2, GroupOrder::SpatialFirst)
                .expect("valid scheme"),
            mixer_order: MixerOrder::CrossThenInner,
            relpos: RelPosMode::Rel3d,
            latent_bound: 64,
            hyper_bound: 32,
        }
    }

    /// Full-size configuration: `L=6, D=384, m=12`, `C=320` split 10×quad4.
    pub fn base() -> Self {
        Self {
            depth: 6,
            dim: 384,
            heads: 12,
            ffn_ratio: 4,
            latent_channels: 320,
            hyper_channels: 160,
            scheme: GroupScheme::new(10, SpatialPattern::Quad4, GroupOrder::SpatialFirst)
                .expect("valid scheme"),
            mixer_order: MixerOrder::CrossThenInner,
            relpos: RelPosMode::Rel3d,
            latent_bound: 64,
            hyper_bound: 32,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// Channels per token after grouping (`c = C / k_c`).
    pub fn group_channels(&self) -> usize {
        self.latent_channels / self.scheme.channel_slices()
    }

    pub fn groups(&self) -> usize {
        self.scheme.group_count()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return fail(format!("dim {} not divisible into {} heads", self.dim, self.heads));
        }
        if self.ffn_ratio == 0 || self.hyper_channels == 0 {
            return fail("ffn ratio and hyper channels must be positive".into());
        }
        if self.latent_channels == 0 || !self.latent_channels.is_multiple_of(self.scheme.channel_slices()) {
            return fail(format!(
                "{} latent channels not divisible into {} slices",
                self.latent_channels,
                self.scheme.channel_slices()
            ));
        }
        if self.latent_bound == 0 || self.hyper_bound == 0 || self.latent_bound > 30_000 || self.hyper_bound > 30_000 {
            return fail("symbol bounds must lie in [1, 30000]".into());
        }
        Ok(())
    }

    /// Grouped dimensions for an `h×w` latent, checking divisibility (the hyper
    /// path additionally needs multiples of 4).
    pub fn group_dims(&self, h: usize, w: usize) -> Result<GroupDims> {
        self.scheme.dims(h, w, self.latent_channels)
    }
}

/// Per-element Gaussian parameters, both `[H × W × C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianParams {
    pub mu: Tensor,
    pub sigma: Tensor,
}

fn check_grouped(g: &GroupedLatents, cfg: &ModelConfig) -> Result<()> {
    if g.scheme != cfg.scheme || g.dims.c != cfg.group_channels() {
        return Err(Error::Config(format!(
            "grouped latents ({}, c={}) do not match model ({}, c={})",
            g.scheme,
            g.dims.c,
            cfg.scheme,
            cfg.group_channels()
        )));
    }
    Ok(())
}

fn rank3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Shape(format!("{what} must be rank 3, got {:?}", t.shape()))),
    }
}

/// Per-token linear map `c → D`.
pub fn input_embed(g: &GroupedLatents, w: &ModelWeights) -> Result<Tensor> {
    check_grouped(g, &w.config)?;
    numerics::linear(&g.data, &w.input_embed_w, &w.input_embed_b, None)
}

/// Per-token linear map `D → c`.
pub fn output_embed(z: &Tensor, w: &ModelWeights) -> Result<Tensor> {
    numerics::linear(z, &w.output_embed_w, &w.output_embed_b, None)
}

/// Inner-group mixer over `y[G × hw × D]` whose groups are `h×w` grids.
pub fn inner_mixer(y: &Tensor, layer: &InnerMixerWeights, cfg: &ModelConfig, h: usize, w: usize) -> Result<Tensor> {
    let (n, hw, d) = rank3(y, "inner mixer input")?;
    if hw != h * w || d != cfg.dim {
        return Err(Error::Shape(format!("inner mixer input {:?} vs grid {h}x{w}, D={}", y.shape(), cfg.dim)));
    }
    let ctx = LayerCtx::new(cfg, h, w);
    let mut x = y.data().to_vec();
    inner_mixer_groups(&mut x, n, layer, &ctx, &mut MacBreakdown::default());
    Tensor::new(y.shape().to_vec(), x)
}

/// Cross-group mixer over `x[G × hw × D]` with causal masking along groups.
pub fn cross_mixer(x: &Tensor, layer: &CrossMixerWeights, cfg: &ModelConfig) -> Result<Tensor> {
    let (n, hw, d) = rank3(x, "cross mixer input")?;
    if n > cfg.groups() || d != cfg.dim {
        return Err(Error::Shape(format!("cross mixer input {:?} for G={}, D={}", x.shape(), cfg.groups(), cfg.dim)));
    }
    let ctx = LayerCtx::new(cfg, 1, hw);
    let mut data = x.data().to_vec();
    mixer::cross_mixer_groups(&mut data, n, layer, &ctx, &mut MacBreakdown::default(), None);
    Tensor::new(x.shape().to_vec(), data)
}

/// Post-softmax cross-group attention weights `[G × G]` of one head at one
/// spatial position, for the given layer input.
pub fn cross_attention_weights(
    x: &Tensor,
    layer: &CrossMixerWeights,
    cfg: &ModelConfig,
    position: usize,
    head: usize,
) -> Result<Tensor> {
    let (n, hw, _) = rank3(x, "cross mixer input")?;
    if position >= hw || head >= cfg.heads {
        return Err(Error::Index(format!("position {position} / head {head}")));
    }
    let ctx = LayerCtx::new(cfg, 1, hw);
    let mut data = x.data().to_vec();
    let mut probs = vec![0.0f32; n * n];
    mixer::cross_mixer_groups(&mut data, n, layer, &ctx, &mut MacBreakdown::default(), Some((position, head, &mut probs)));
    Tensor::new(vec![n, n], probs)
}

/// Drops the last group and puts the start token (broadcast over all tokens)
/// in front: output group 0 is `θ_h`, output group `g` is input group `g−1`.
pub fn shift(z: &Tensor, start_token: &Tensor) -> Result<Tensor> {
    let (n, hw, d) = rank3(z, "shift input")?;
    if start_token.len() != d {
        return Err(Error::Shape(format!("start token {:?} for width {d}", start_token.shape())));
    }
    let mut out = Vec::with_capacity(n * hw * d);
    for _ in 0..hw {
        out.extend_from_slice(start_token.data());
    }
    out.extend_from_slice(&z.data()[..(n - 1) * hw * d]);
    Tensor::new(vec![n, hw, d], out)
}

/// Embedding followed by the `L` mixer modules (no shift).
pub fn forward_stack(g: &GroupedLatents, w: &ModelWeights) -> Result<Tensor> {
    forward_stack_counted(g, w, &mut MacBreakdown::default())
}

/// [`forward_stack`] with per-component MAC accounting.
pub fn forward_stack_counted(g: &GroupedLatents, w: &ModelWeights, macs: &mut MacBreakdown) -> Result<Tensor> {
    check_grouped(g, &w.config)?;
    forward_prefix(g, g.dims.groups, w, macs)
}

/// Runs the stack over the first `n` groups only, as a decoder without a
/// context cache would at step `n`.
pub fn forward_prefix(g: &GroupedLatents, n: usize, w: &ModelWeights, macs: &mut MacBreakdown) -> Result<Tensor> {
    check_grouped(g, &w.config)?;
    let cfg = &w.config;
    let dims = g.dims;
    if n == 0 || n > dims.groups {
        return Err(Error::Index(format!("prefix of {n} groups out of {}", dims.groups)));
    }
    let hw = dims.hw();
    let rows = n * hw;
    let c = dims.c;
    let mut x = vec![0.0f32; rows * cfg.dim];
    numerics::linear_into(
        &g.data.data()[..rows * c],
        w.input_embed_w.data(),
        w.input_embed_b.data(),
        &mut x,
        rows,
        c,
        cfg.dim,
    );
    macs.embed += (rows * c * cfg.dim) as u64;
    let ctx = LayerCtx::new(cfg, dims.h, dims.w);
    for layer in &w.layers {
        match cfg.mixer_order {
            MixerOrder::CrossThenInner => {
                mixer::cross_mixer_groups(&mut x, n, &layer.cross, &ctx, macs, None);
                inner_mixer_groups(&mut x, n, &layer.inner, &ctx, macs);
            }
            MixerOrder::InnerThenCross => {
                inner_mixer_groups(&mut x, n, &layer.inner, &ctx, macs);
                mixer::cross_mixer_groups(&mut x, n, &layer.cross, &ctx, macs, None);
            }
        }
    }
    Tensor::new(vec![n, hw, cfg.dim], x)
}

/// Full (non-incremental) parameter prediction: stack, shift, output
/// embedding, parameter net with the grouped hyper feature, ungroup. The
/// parameters of group `i` depend only on groups `< i` of `y_hat` and on the
/// hyper feature.
pub fn predict_params(y_hat: &GroupedLatents, hyper_feature: &Tensor, w: &ModelWeights) -> Result<GaussianParams> {
    check_grouped(y_hat, &w.config)?;
    let (h, wd, cc) = y_hat.source;
    if hyper_feature.shape() != [h, wd, 2 * cc] {
        return Err(Error::Shape(format!(
            "hyper feature {:?}, expected [{h}, {wd}, {}]",
            hyper_feature.shape(),
            2 * cc
        )));
    }
    let z = forward_stack(y_hat, w)?;
    let zs = shift(&z, &w.start_token)?;
    let context = output_embed(&zs, w)?;
    let hyper_grouped = grouping::partition(hyper_feature, &w.config.scheme)?;
    let (mu, sigma) = parameter_net(&context, &hyper_grouped.data, w, y_hat.dims.h, y_hat.dims.w)?;
    let regroup = |t: Tensor| {
        grouping::ungroup(&GroupedLatents {
            scheme: y_hat.scheme,
            source: y_hat.source,
            dims: y_hat.dims,
            data: t,
        })
    };
    Ok(GaussianParams {
        mu: regroup(mu)?,
        sigma: regroup(sigma)?,
    })
}
