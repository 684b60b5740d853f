use super::ModelConfig;
use crate::numerics::Tensor;
use crate::rng::SplitMix64;
use crate::{Error, Result};

/// Standard deviation of the truncated-normal initialiser (cut at ±2 std).
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    pub gamma: Tensor,
    pub beta: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub w1: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossMixerWeights {
    pub norm1: Norm,
    pub attn: Attention,
    /// `[rows × d_h]`, shared by all heads.
    pub relpos: Tensor,
    pub norm2: Norm,
    pub ffn: Ffn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InnerMixerWeights {
    pub norm1: Norm,
    /// Depthwise `[D × 1 × 3 × 3]`, zero at initialisation.
    pub peg_kernel: Tensor,
    pub peg_bias: Tensor,
    pub attn: Attention,
    pub norm2: Norm,
    pub ffn: Ffn,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub cross: CrossMixerWeights,
    pub inner: InnerMixerWeights,
}

/// Convolutions turning `[context ‖ hyper]` (3c channels) into `(μ, σ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamNetWeights {
    pub conv1: Tensor,
    pub bias1: Tensor,
    pub conv2: Tensor,
    pub bias2: Tensor,
    pub conv3: Tensor,
    pub bias3: Tensor,
}

/// Hyper analysis/synthesis stubs and the factorised prior over `ẑ`.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperWeights {
    pub analysis1: Tensor,
    pub analysis1_bias: Tensor,
    pub analysis2: Tensor,
    pub analysis2_bias: Tensor,
    pub synthesis1: Tensor,
    pub synthesis1_bias: Tensor,
    pub synthesis2: Tensor,
    pub synthesis2_bias: Tensor,
    /// Per-channel scale of the zero-mean Gaussian prior on `ẑ`.
    pub prior_scales: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub input_embed_w: Tensor,
    pub input_embed_b: Tensor,
    pub layers: Vec<LayerWeights>,
    /// Start token `θ_h`, a single D-vector broadcast over all tokens.
    pub start_token: Tensor,
    pub output_embed_w: Tensor,
    pub output_embed_b: Tensor,
    pub param_net: ParamNetWeights,
    pub hyper: HyperWeights,
}

/// How a tensor is filled by [`ModelWeights::init_random`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitKind {
    TruncNormal,
    Zeros,
    Ones,
}

fn z(shape: &[usize]) -> Tensor {
    Tensor::zeros(shape)
}

fn norm(d: usize) -> Norm {
    Norm {
        gamma: Tensor::full(&[d], 1.0),
        beta: z(&[d]),
    }
}

fn attention(d: usize) -> Attention {
    Attention {
        wq: z(&[d, d]),
        bq: z(&[d]),
        wk: z(&[d, d]),
        bk: z(&[d]),
        wv: z(&[d, d]),
        bv: z(&[d]),
        wo: z(&[d, d]),
        bo: z(&[d]),
    }
}

fn ffn(d: usize, hidden: usize) -> Ffn {
    Ffn {
        w1: z(&[d, hidden]),
        b1: z(&[hidden]),
        w2: z(&[hidden, d]),
        b2: z(&[d]),
    }
}

macro_rules! walk_norm {
    ($f:ident, $p:expr, $n:expr) => {
        $f(&format!("{}.gamma", $p), &$n.gamma, InitKind::Ones);
        $f(&format!("{}.beta", $p), &$n.beta, InitKind::Zeros);
    };
}

impl ModelWeights {
    /// All-zero weights of the right shapes (norm gains 1, prior scales 1).
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.dim;
        let hidden = d * config.ffn_ratio;
        let c = config.group_channels();
        let cc = config.latent_channels;
        let cz = config.hyper_channels;
        let rows = config.relpos.table_rows(&config.scheme);
        let layers = (0..config.depth)
            .map(|_| LayerWeights {
                cross: CrossMixerWeights {
                    norm1: norm(d),
                    attn: attention(d),
                    relpos: z(&[rows, config.head_dim()]),
                    norm2: norm(d),
                    ffn: ffn(d, hidden),
                },
                inner: InnerMixerWeights {
                    norm1: norm(d),
                    peg_kernel: z(&[d, 1, 3, 3]),
                    peg_bias: z(&[d]),
                    attn: attention(d),
                    norm2: norm(d),
                    ffn: ffn(d, hidden),
                },
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            input_embed_w: z(&[c, d]),
            input_embed_b: z(&[d]),
            layers,
            start_token: z(&[d]),
            output_embed_w: z(&[d, c]),
            output_embed_b: z(&[c]),
            param_net: ParamNetWeights {
                conv1: z(&[3 * c, 3 * c, 3, 3]),
                bias1: z(&[3 * c]),
                conv2: z(&[3 * c, 3 * c, 3, 3]),
                bias2: z(&[3 * c]),
                conv3: z(&[2 * c, 3 * c, 1, 1]),
                bias3: z(&[2 * c]),
            },
            hyper: HyperWeights {
                analysis1: z(&[cz, cc, 3, 3]),
                analysis1_bias: z(&[cz]),
                analysis2: z(&[cz, cz, 3, 3]),
                analysis2_bias: z(&[cz]),
                synthesis1: z(&[cc, cz, 3, 3]),
                synthesis1_bias: z(&[cc]),
                synthesis2: z(&[2 * cc, cc, 3, 3]),
                synthesis2_bias: z(&[2 * cc]),
                prior_scales: Tensor::full(&[cz], 1.0),
            },
        })
    }

    /// Seeded initialisation: truncated normal (std 0.02, cut at ±2 std) for
    /// projections, position tables, convolutions and the start token; zeros
    /// for all biases and the position-generator kernels; ones for norm gains
    /// and prior scales. Tensors are filled in canonical order from one
    /// SplitMix64 stream.
    pub fn init_random(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = SplitMix64::new(seed);
        w.for_each_tensor_mut(|_, t, kind| match kind {
            InitKind::TruncNormal => t
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = rng.next_trunc_normal(INIT_STD) as f32),
            InitKind::Zeros => t.data_mut().fill(0.0),
            InitKind::Ones => t.data_mut().fill(1.0),
        });
        Ok(w)
    }

    /// Visits every tensor in canonical (file) order with its name.
    pub fn for_each_tensor(&self, mut f: impl FnMut(&str, &Tensor, InitKind)) {
        use InitKind::*;
        f("input_embed.weight", &self.input_embed_w, TruncNormal);
        f("input_embed.bias", &self.input_embed_b, Zeros);
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layers.{l}.cross");
            let c = &layer.cross;
            walk_norm!(f, format!("{p}.norm1"), c.norm1);
            walk_attention(&mut f, &p, &c.attn);
            f(&format!("{p}.relpos"), &c.relpos, TruncNormal);
            walk_norm!(f, format!("{p}.norm2"), c.norm2);
            walk_ffn(&mut f, &p, &c.ffn);
            let p = format!("layers.{l}.inner");
            let i = &layer.inner;
            walk_norm!(f, format!("{p}.norm1"), i.norm1);
            f(&format!("{p}.peg.weight"), &i.peg_kernel, Zeros);
            f(&format!("{p}.peg.bias"), &i.peg_bias, Zeros);
            walk_attention(&mut f, &p, &i.attn);
            walk_norm!(f, format!("{p}.norm2"), i.norm2);
            walk_ffn(&mut f, &p, &i.ffn);
        }
        f("start_token", &self.start_token, TruncNormal);
        f("output_embed.weight", &self.output_embed_w, TruncNormal);
        f("output_embed.bias", &self.output_embed_b, Zeros);
        let pn = &self.param_net;
        f("param_net.conv1.weight", &pn.conv1, TruncNormal);
        f("param_net.conv1.bias", &pn.bias1, Zeros);
        f("param_net.conv2.weight", &pn.conv2, TruncNormal);
        f("param_net.conv2.bias", &pn.bias2, Zeros);
        f("param_net.conv3.weight", &pn.conv3, TruncNormal);
        f("param_net.conv3.bias", &pn.bias3, Zeros);
        let h = &self.hyper;
        f("hyper.analysis1.weight", &h.analysis1, TruncNormal);
        f("hyper.analysis1.bias", &h.analysis1_bias, Zeros);
        f("hyper.analysis2.weight", &h.analysis2, TruncNormal);
        f("hyper.analysis2.bias", &h.analysis2_bias, Zeros);
        f("hyper.synthesis1.weight", &h.synthesis1, TruncNormal);
        f("hyper.synthesis1.bias", &h.synthesis1_bias, Zeros);
        f("hyper.synthesis2.weight", &h.synthesis2, TruncNormal);
        f("hyper.synthesis2.bias", &h.synthesis2_bias, Zeros);
        f("hyper.prior_scales", &h.prior_scales, Ones);
    }

    /// Mutable counterpart of [`ModelWeights::for_each_tensor`], same order.
    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor, InitKind)) {
        // Collect names and kinds first, then walk mutable references in the
        // same order.
        let mut meta = Vec::new();
        self.for_each_tensor(|n, _, k| meta.push((n.to_string(), k)));
        let mut refs: Vec<&mut Tensor> = Vec::with_capacity(meta.len());
        refs.push(&mut self.input_embed_w);
        refs.push(&mut self.input_embed_b);
        for layer in &mut self.layers {
            let c = &mut layer.cross;
            refs.extend([&mut c.norm1.gamma, &mut c.norm1.beta]);
            push_attention(&mut refs, &mut c.attn);
            refs.push(&mut c.relpos);
            refs.extend([&mut c.norm2.gamma, &mut c.norm2.beta]);
            push_ffn(&mut refs, &mut c.ffn);
            let i = &mut layer.inner;
            refs.extend([&mut i.norm1.gamma, &mut i.norm1.beta]);
            refs.extend([&mut i.peg_kernel, &mut i.peg_bias]);
            push_attention(&mut refs, &mut i.attn);
            refs.extend([&mut i.norm2.gamma, &mut i.norm2.beta]);
            push_ffn(&mut refs, &mut i.ffn);
        }
        refs.push(&mut self.start_token);
        refs.extend([&mut self.output_embed_w, &mut self.output_embed_b]);
        let pn = &mut self.param_net;
        refs.extend([
            &mut pn.conv1,
            &mut pn.bias1,
            &mut pn.conv2,
            &mut pn.bias2,
            &mut pn.conv3,
            &mut pn.bias3,
        ]);
        let h = &mut self.hyper;
        refs.extend([
            &mut h.analysis1,
            &mut h.analysis1_bias,
            &mut h.analysis2,
            &mut h.analysis2_bias,
            &mut h.synthesis1,
            &mut h.synthesis1_bias,
            &mut h.synthesis2,
            &mut h.synthesis2_bias,
            &mut h.prior_scales,
        ]);
        assert_eq!(refs.len(), meta.len(), "tensor walk out of sync");
        for ((name, kind), t) in meta.iter().zip(refs) {
            f(name, t, *kind);
        }
    }

    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.for_each_tensor(|_, _, _| n += 1);
        n
    }

    /// Rejects non-finite values and prior scales outside the σ range.
    pub fn validate(&self) -> Result<()> {
        let mut bad = None;
        self.for_each_tensor(|name, t, _| {
            if bad.is_none() && !t.is_finite() {
                bad = Some(name.to_string());
            }
        });
        if let Some(name) = bad {
            return Err(Error::Tensor(name, "non-finite value".into()));
        }
        let (lo, hi) = (super::SIGMA_MIN, super::SIGMA_MAX);
        if self.hyper.prior_scales.data().iter().any(|&s| !(lo..=hi).contains(&s)) {
            return Err(Error::Tensor(
                "hyper.prior_scales".into(),
                format!("scales must lie in [{lo}, {hi}]"),
            ));
        }
        Ok(())
    }
}

fn walk_attention(f: &mut impl FnMut(&str, &Tensor, InitKind), p: &str, a: &Attention) {
    use InitKind::*;
    f(&format!("{p}.attn.q.weight"), &a.wq, TruncNormal);
    f(&format!("{p}.attn.q.bias"), &a.bq, Zeros);
    f(&format!("{p}.attn.k.weight"), &a.wk, TruncNormal);
    f(&format!("{p}.attn.k.bias"), &a.bk, Zeros);
    f(&format!("{p}.attn.v.weight"), &a.wv, TruncNormal);
    f(&format!("{p}.attn.v.bias"), &a.bv, Zeros);
    f(&format!("{p}.attn.o.weight"), &a.wo, TruncNormal);
    f(&format!("{p}.attn.o.bias"), &a.bo, Zeros);
}

fn walk_ffn(f: &mut impl FnMut(&str, &Tensor, InitKind), p: &str, m: &Ffn) {
    use InitKind::*;
    f(&format!("{p}.ffn.fc1.weight"), &m.w1, TruncNormal);
    f(&format!("{p}.ffn.fc1.bias"), &m.b1, Zeros);
    f(&format!("{p}.ffn.fc2.weight"), &m.w2, TruncNormal);
    f(&format!("{p}.ffn.fc2.bias"), &m.b2, Zeros);
}

fn push_attention<'a>(refs: &mut Vec<&'a mut Tensor>, a: &'a mut Attention) {
    refs.extend([
        &mut a.wq, &mut a.bq, &mut a.wk, &mut a.bk, &mut a.wv, &mut a.bv, &mut a.wo, &mut a.bo,
    ]);
}

fn push_ffn<'a>(refs: &mut Vec<&'a mut Tensor>, m: &'a mut Ffn) {
    refs.extend([&mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2]);
}
