//! Cross-group and inner-group token mixers over flat `[n × hw × D]` buffers.
//!
//! Both the full (masked) forward and the cached single-group step go through
//! [`attend`], with keys visited in ascending group order, so the two paths
//! perform the same floating-point operations in the same order.

use super::weights::{Attention, CrossMixerWeights, Ffn, InnerMixerWeights, Norm};
use super::ModelConfig;
use crate::exec;
use crate::numerics::{gelu_scalar, layer_norm_into, linear_into, softmax_row, LN_EPS};

/// Multiply-accumulate counts split by component.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacBreakdown {
    pub embed: u64,
    /// Q/K/V/O projections of the cross-group mixers.
    pub cross_proj: u64,
    /// Query-key scores and value aggregation of the cross-group mixers.
    pub cross_scores: u64,
    /// Query-position-table products of the cross-group mixers.
    pub cross_relpos: u64,
    pub inner_proj: u64,
    pub inner_scores: u64,
    /// Depthwise position convolution.
    pub peg: u64,
    pub ffn: u64,
}

impl MacBreakdown {
    pub fn total(&self) -> u64 {
        self.embed
            + self.cross_proj
            + self.cross_scores
            + self.cross_relpos
            + self.inner_proj
            + self.inner_scores
            + self.peg
            + self.ffn
    }

    /// Projection and score MACs of both mixers.
    pub fn attention_path(&self) -> u64 {
        self.cross_proj + self.cross_scores + self.inner_proj + self.inner_scores
    }
}

/// Per-forward constants shared by all layers.
pub(crate) struct LayerCtx {
    pub dim: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub h: usize,
    pub w: usize,
    pub hw: usize,
    pub groups: usize,
    /// Position-table row for each (query group, key group) pair.
    pub relpos_idx: Vec<usize>,
    pub scale: f32,
}

impl LayerCtx {
    pub fn new(cfg: &ModelConfig, h: usize, w: usize) -> Self {
        let head_dim = cfg.head_dim();
        Self {
            dim: cfg.dim,
            heads: cfg.heads,
            head_dim,
            h,
            w,
            hw: h * w,
            groups: cfg.groups(),
            relpos_idx: cfg.relpos.index_table(&cfg.scheme),
            scale: 1.0 / (head_dim as f32).sqrt(),
        }
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut s = 0.0f32;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Single-query attention over `n_keys` keys. Logits are
/// `(q·k_v + q·p_v) / √d_h`; the probabilities are left in `scores[..n_keys]`
/// and `Σ_v prob_v · value_v` is written to `out`.
#[inline]
#[allow(clippy::too_many_arguments)]
fn attend<'a>(
    q: &[f32],
    n_keys: usize,
    key: impl Fn(usize) -> &'a [f32],
    value: impl Fn(usize) -> &'a [f32],
    bias: Option<&dyn Fn(usize) -> &'a [f32]>,
    scale: f32,
    scores: &mut Vec<f32>,
    out: &mut [f32],
) {
    scores.clear();
    for v in 0..n_keys {
        let mut logit = dot(q, key(v));
        if let Some(b) = bias {
            logit += dot(q, b(v));
        }
        scores.push(logit * scale);
    }
    softmax_row(scores, None);
    out.fill(0.0);
    for (v, &p) in scores.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(value(v)) {
            *o += p * x;
        }
    }
}

fn norm_rows(x: &[f32], n: &Norm) -> Vec<f32> {
    let mut u = vec![0.0; x.len()];
    layer_norm_into(x, n.gamma.data(), n.beta.data(), LN_EPS, &mut u);
    u
}

fn project(u: &[f32], w: &crate::numerics::Tensor, b: &crate::numerics::Tensor, rows: usize, d: usize) -> Vec<f32> {
    let mut out = vec![0.0; rows * d];
    linear_into(u, w.data(), b.data(), &mut out, rows, d, d);
    out
}

fn add_into(x: &mut [f32], y: &[f32]) {
    for (a, b) in x.iter_mut().zip(y) {
        *a += b;
    }
}

fn qkv(u: &[f32], a: &Attention, rows: usize, d: usize) -> (Vec<f32>, Vec<f32>, Vec<f32>) {
    (
        project(u, &a.wq, &a.bq, rows, d),
        project(u, &a.wk, &a.bk, rows, d),
        project(u, &a.wv, &a.bv, rows, d),
    )
}

/// Pre-norm feed-forward block with residual: `x += W2·gelu(W1·LN(x) + b1) + b2`.
pub(crate) fn ffn_block(x: &mut [f32], norm: &Norm, ffn: &Ffn, d: usize, macs: &mut MacBreakdown) {
    let rows = x.len() / d;
    let hidden = ffn.b1.len();
    let u = norm_rows(x, norm);
    let mut hbuf = vec![0.0; rows * hidden];
    linear_into(&u, ffn.w1.data(), ffn.b1.data(), &mut hbuf, rows, d, hidden);
    hbuf.iter_mut().for_each(|v| *v = gelu_scalar(*v));
    let mut out = vec![0.0; rows * d];
    linear_into(&hbuf, ffn.w2.data(), ffn.b2.data(), &mut out, rows, hidden, d);
    add_into(x, &out);
    macs.ffn += (2 * rows * d * hidden) as u64;
}

/// Cross-group mixer over the first `n` groups of `x` (`[n × hw × D]`, in place).
/// Group `u` attends to groups `v ≤ u` at the same spatial position; groups
/// `v > u` are never read. `probe` captures the `[n × n]` probabilities of one
/// (position, head).
pub(crate) fn cross_mixer_groups(
    x: &mut [f32],
    n: usize,
    lw: &CrossMixerWeights,
    ctx: &LayerCtx,
    macs: &mut MacBreakdown,
    probe: Option<(usize, usize, &mut [f32])>,
) {
    let (d, hw, dh) = (ctx.dim, ctx.hw, ctx.head_dim);
    let rows = n * hw;
    let u = norm_rows(x, &lw.norm1);
    let (q, k, v) = qkv(&u, &lw.attn, rows, d);
    let table = lw.relpos.data();
    let g_all = ctx.groups;

    // Position-major output so each spatial position is one independent chunk.
    let mut mixed = vec![0.0f32; hw * n * d];
    exec::for_each_chunk(&mut mixed, n * d, |p, out_p| {
        let mut scores = Vec::with_capacity(n);
        for gu in 0..n {
            for head in 0..ctx.heads {
                let off = head * dh;
                let qv = &q[(gu * hw + p) * d + off..][..dh];
                let bias = |gv: usize| &table[ctx.relpos_idx[gu * g_all + gv] * dh..][..dh];
                attend(
                    qv,
                    gu + 1,
                    |gv| &k[(gv * hw + p) * d + off..][..dh],
                    |gv| &v[(gv * hw + p) * d + off..][..dh],
                    Some(&bias),
                    ctx.scale,
                    &mut scores,
                    &mut out_p[gu * d + off..][..dh],
                );
            }
        }
    });
    if let Some((pos, head, probs)) = probe {
        // Recompute the requested rows; the chunk closure above cannot export them.
        let off = head * dh;
        let mut scores = Vec::new();
        let mut sink = vec![0.0; dh];
        for gu in 0..n {
            let qv = &q[(gu * hw + pos) * d + off..][..dh];
            let bias = |gv: usize| &table[ctx.relpos_idx[gu * g_all + gv] * dh..][..dh];
            attend(
                qv,
                gu + 1,
                |gv| &k[(gv * hw + pos) * d + off..][..dh],
                |gv| &v[(gv * hw + pos) * d + off..][..dh],
                Some(&bias),
                ctx.scale,
                &mut scores,
                &mut sink,
            );
            probs[gu * n..gu * n + n].fill(0.0);
            probs[gu * n..gu * n + gu + 1].copy_from_slice(&scores);
        }
    }
    let mut attn = vec![0.0f32; rows * d];
    for p in 0..hw {
        for g in 0..n {
            attn[(g * hw + p) * d..][..d].copy_from_slice(&mixed[(p * n + g) * d..][..d]);
        }
    }
    let o = project(&attn, &lw.attn.wo, &lw.attn.bo, rows, d);
    add_into(x, &o);
    let pairs = (n * (n + 1) / 2 * hw) as u64;
    macs.cross_proj += (4 * rows * d * d) as u64;
    macs.cross_scores += 2 * pairs * d as u64;
    macs.cross_relpos += pairs * d as u64;
    ffn_block(x, &lw.norm2, &lw.ffn, d, macs);
}

/// Key/value blocks of one cross-group layer for groups already processed.
#[derive(Debug, Clone, Default)]
pub(crate) struct KvBlocks {
    /// `keys[v]` is `[hw × D]` for group `v` (all heads side by side).
    pub keys: Vec<Vec<f32>>,
    pub values: Vec<Vec<f32>>,
}

/// Cross-group mixer for the single group at index `t = blocks.len()`:
/// projects its keys and values, appends them, and attends over all `t+1`
/// blocks without a mask.
pub(crate) fn cross_mixer_step(
    x: &mut [f32],
    lw: &CrossMixerWeights,
    ctx: &LayerCtx,
    blocks: &mut KvBlocks,
    macs: &mut MacBreakdown,
) {
    let (d, hw, dh) = (ctx.dim, ctx.hw, ctx.head_dim);
    let t = blocks.keys.len();
    let u = norm_rows(x, &lw.norm1);
    let (q, k, v) = qkv(&u, &lw.attn, hw, d);
    blocks.keys.push(k);
    blocks.values.push(v);
    let table = lw.relpos.data();
    let g_all = ctx.groups;
    let (keys, values) = (&blocks.keys, &blocks.values);

    let mut attn = vec![0.0f32; hw * d];
    exec::for_each_chunk(&mut attn, d, |p, out_p| {
        let mut scores = Vec::with_capacity(t + 1);
        for head in 0..ctx.heads {
            let off = head * dh;
            let qv = &q[p * d + off..][..dh];
            let bias = |gv: usize| &table[ctx.relpos_idx[t * g_all + gv] * dh..][..dh];
            attend(
                qv,
                t + 1,
                |gv| &keys[gv][p * d + off..][..dh],
                |gv| &values[gv][p * d + off..][..dh],
                Some(&bias),
                ctx.scale,
                &mut scores,
                &mut out_p[off..off + dh],
            );
        }
    });
    let o = project(&attn, &lw.attn.wo, &lw.attn.bo, hw, d);
    add_into(x, &o);
    let pairs = ((t + 1) * hw) as u64;
    macs.cross_proj += (4 * hw * d * d) as u64;
    macs.cross_scores += 2 * pairs * d as u64;
    macs.cross_relpos += pairs * d as u64;
    ffn_block(x, &lw.norm2, &lw.ffn, d, macs);
}

/// Depthwise 3×3 convolution over one group's `h×w` token grid stored
/// token-major (`[hw × D]`), same padding, plus bias. Per element the taps are
/// summed in (row, column) order, matching `numerics::conv2d`.
fn depthwise3x3(u: &[f32], kernel: &[f32], bias: &[f32], h: usize, w: usize, d: usize, out: &mut [f32]) {
    for r in 0..h {
        for c in 0..w {
            let o = &mut out[(r * w + c) * d..][..d];
            o.fill(0.0);
            for ky in 0..3 {
                let rr = r as isize + ky as isize - 1;
                if rr < 0 || rr >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let cc = c as isize + kx as isize - 1;
                    if cc < 0 || cc >= w as isize {
                        continue;
                    }
                    let src = &u[(rr as usize * w + cc as usize) * d..][..d];
                    for ch in 0..d {
                        o[ch] += src[ch] * kernel[ch * 9 + ky * 3 + kx];
                    }
                }
            }
            for ch in 0..d {
                o[ch] += bias[ch];
            }
        }
    }
}

/// Inner-group mixer over `n` groups of `x` (`[n × hw × D]`, in place):
/// pre-norm, position convolution with residual, self-attention over the
/// group's tokens, output projection with residual onto the block input, then
/// the feed-forward block.
pub(crate) fn inner_mixer_groups(
    x: &mut [f32],
    n: usize,
    lw: &InnerMixerWeights,
    ctx: &LayerCtx,
    macs: &mut MacBreakdown,
) {
    let (d, hw, dh) = (ctx.dim, ctx.hw, ctx.head_dim);
    let rows = n * hw;
    let u = norm_rows(x, &lw.norm1);
    let mut pe = vec![0.0f32; rows * d];
    let (kern, kb) = (lw.peg_kernel.data(), lw.peg_bias.data());
    exec::for_each_chunk(&mut pe, hw * d, |g, out_g| {
        let ug = &u[g * hw * d..][..hw * d];
        depthwise3x3(ug, kern, kb, ctx.h, ctx.w, d, out_g);
        add_into(out_g, ug);
    });
    macs.peg += (rows * d * 9) as u64;

    let (q, k, v) = qkv(&pe, &lw.attn, rows, d);
    let mut attn = vec![0.0f32; rows * d];
    exec::for_each_chunk(&mut attn, hw * d, |g, out_g| {
        let base = g * hw * d;
        let mut scores = Vec::with_capacity(hw);
        for i in 0..hw {
            for head in 0..ctx.heads {
                let off = head * dh;
                attend(
                    &q[base + i * d + off..][..dh],
                    hw,
                    |j| &k[base + j * d + off..][..dh],
                    |j| &v[base + j * d + off..][..dh],
                    None,
                    ctx.scale,
                    &mut scores,
                    &mut out_g[i * d + off..][..dh],
                );
            }
        }
    });
    let o = project(&attn, &lw.attn.wo, &lw.attn.bo, rows, d);
    add_into(x, &o);
    macs.inner_proj += (4 * rows * d * d) as u64;
    macs.inner_scores += (2 * n * hw * hw * d) as u64;
    ffn_block(x, &lw.norm2, &lw.ffn, d, macs);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{conv2d, Padding, Tensor};
    use crate::rng::SplitMix64;

    #[test]
    fn depthwise_matches_numerics_conv() {
        let (h, w, d) = (3, 5, 4);
        let mut g = SplitMix64::new(5);
        let u: Vec<f32> = (0..h * w * d).map(|_| g.next_normal() as f32).collect();
        let kern: Vec<f32> = (0..d * 9).map(|_| g.next_normal() as f32).collect();
        let bias: Vec<f32> = (0..d).map(|_| g.next_normal() as f32).collect();
        let mut out = vec![0.0; h * w * d];
        depthwise3x3(&u, &kern, &bias, h, w, d, &mut out);

        let chw = Tensor::from_fn(&[d, h, w], |i| {
            let (ch, t) = (i / (h * w), i % (h * w));
            u[t * d + ch]
        });
        let k = Tensor::new(vec![d, 1, 3, 3], kern).unwrap();
        let b = Tensor::new(vec![d], bias).unwrap();
        let want = conv2d(&chw, &k, Some(&b), 1, d, Padding::Same, None).unwrap();
        for t in 0..h * w {
            for ch in 0..d {
                assert_eq!(out[t * d + ch], want.data()[ch * h * w + t]);
            }
        }
    }

    #[test]
    fn attend_single_key_copies_value() {
        let q = [0.3, -1.0];
        let key = [2.0, 1.0];
        let val = [5.0, -7.0];
        let mut scores = Vec::new();
        let mut out = [0.0; 2];
        attend(&q, 1, |_| &key, |_| &val, None, 1.0, &mut scores, &mut out);
        assert_eq!(scores, vec![1.0]);
        assert_eq!(out, val);
    }
}
