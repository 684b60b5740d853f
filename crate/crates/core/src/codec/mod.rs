//! End-to-end latent codec.
//!
//! The hyper analysis stub turns `y` into `z`; `ẑ = clamp(round(z))` is coded
//! under the per-channel prior and expanded by the synthesis stub into a
//! `[H × W × 2C]` hyper feature. Latent groups are then coded in order: the
//! parameters of group `t` come from the start token (`t = 0`) or from the
//! cached stack output of group `t−1`, followed by the output embedding and the
//! parameter net. Symbols are `clamp(round(y − μ))` and the reconstruction
//! `ŷ = s + μ` is what both sides feed forward.
//!
//! Stream element order is group-major, then token, then channel.

mod files;
mod hyper;

pub use files::{
    read_tensor, tensor_from_bytes, tensor_to_bytes, write_tensor, Bitstream, STREAM_MAGIC, STREAM_VERSION,
    TENSOR_MAGIC, TENSOR_VERSION,
};
pub(crate) use files::{read_file, seal, unseal, write_file, Reader};
pub use hyper::{hyper_analysis, hyper_synthesis, prior_tables};

use crate::cache::ContextCache;
use crate::entropy::{gaussian_cdf, QuantizedCdf, RangeDecoder, RangeEncoder, SymbolAlphabet};
use crate::exec;
use crate::grouping::{self, GroupedLatents};
use crate::model::{parameter_net_group, MacBreakdown, ModelWeights};
use crate::numerics::{self, Tensor};
use crate::rng::SplitMix64;
use crate::weights_io::config_hash;
use crate::{Error, Result};

/// Output of [`encode_latents`].
#[derive(Debug, Clone)]
pub struct Encoded {
    pub bitstream: Bitstream,
    /// Decoder-identical reconstruction `[H × W × C]`.
    pub y_hat: Tensor,
    /// `Σ −log2 p` of the hyper symbols under the tables used for coding.
    pub z_bits: f64,
    pub y_bits: f64,
    /// `y_prefix[k]` is the number of `y` bytes a decoder reads for groups
    /// `0..k`; `y_prefix[0] = 0`.
    pub y_prefix: Vec<usize>,
}

/// Estimated rate of coding one latent tensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateEstimate {
    pub z_bits: f64,
    pub y_bits: f64,
    /// `(z_bits + y_bits) / (H·W)`.
    pub bits_per_position: f64,
}

/// Drives the per-group parameter prediction shared by encoder and decoder.
struct Autoregressor<'a> {
    w: &'a ModelWeights,
    cache: ContextCache,
    hyper: GroupedLatents,
    /// Stack output feeding the next group's parameters, `[hw × D]`.
    context: Vec<f32>,
    next: usize,
    macs: MacBreakdown,
}

impl<'a> Autoregressor<'a> {
    fn new(w: &'a ModelWeights, hyper_feature: &Tensor) -> Result<Self> {
        let hyper = grouping::partition(hyper_feature, &w.config.scheme)?;
        let (h, wd) = (hyper.dims.h, hyper.dims.w);
        let mut context = Vec::with_capacity(h * wd * w.config.dim);
        for _ in 0..h * wd {
            context.extend_from_slice(w.start_token.data());
        }
        Ok(Self {
            w,
            cache: ContextCache::init(&w.config, h, wd),
            hyper,
            context,
            next: 0,
            macs: MacBreakdown::default(),
        })
    }

    fn groups(&self) -> usize {
        self.hyper.dims.groups
    }

    fn group_len(&self) -> usize {
        self.hyper.dims.hw() * self.w.config.group_channels()
    }

    /// `(μ, σ)` of the next group, token-major.
    fn params(&self) -> (Vec<f32>, Vec<f32>) {
        let cfg = &self.w.config;
        let (h, wd) = (self.hyper.dims.h, self.hyper.dims.w);
        let (hw, c) = (h * wd, cfg.group_channels());
        let mut ctx = vec![0.0f32; hw * c];
        numerics::linear_into(
            &self.context,
            self.w.output_embed_w.data(),
            self.w.output_embed_b.data(),
            &mut ctx,
            hw,
            cfg.dim,
            c,
        );
        parameter_net_group(&ctx, self.hyper.group(self.next), &self.w.param_net, h, wd, c)
    }

    /// Feeds the reconstruction of the current group forward.
    fn advance(&mut self, y_hat: &[f32]) -> Result<()> {
        if self.next + 1 < self.groups() {
            self.context = self.cache.step_latents(y_hat, self.w, &mut self.macs)?;
        }
        self.next += 1;
        Ok(())
    }
}

fn tables(sigma: &[f32], alphabet: SymbolAlphabet) -> Result<Vec<QuantizedCdf>> {
    exec::map_range(sigma.len(), |i| gaussian_cdf(sigma[i] as f64, alphabet))
        .into_iter()
        .collect()
}

fn check_latents(y: &Tensor, w: &ModelWeights) -> Result<(usize, usize)> {
    let cfg = &w.config;
    let (h, wd, c) = match *y.shape() {
        [h, wd, c] => (h, wd, c),
        _ => return Err(Error::Shape(format!("latents must be H×W×C, got {:?}", y.shape()))),
    };
    if c != cfg.latent_channels {
        return Err(Error::Shape(format!("{c} latent channels, model expects {}", cfg.latent_channels)));
    }
    if h % 4 != 0 || wd % 4 != 0 || h == 0 || wd == 0 {
        return Err(Error::Shape(format!("latent size {h}x{wd} must be a positive multiple of 4")));
    }
    cfg.group_dims(h, wd)?;
    if !y.is_finite() {
        return Err(Error::NonFinite("latents"));
    }
    Ok((h, wd))
}

fn hyper_symbols(y: &Tensor, w: &ModelWeights) -> Result<Tensor> {
    let z = hyper_analysis(y, w)?;
    let a = SymbolAlphabet::new(w.config.hyper_bound)?;
    let data = z.data().iter().map(|&v| a.quantize(v) as f32).collect();
    Tensor::new(z.shape().to_vec(), data)
}

/// Codes `y` (`[H × W × C]`, `H` and `W` multiples of 4 that also suit the
/// grouping scheme).
pub fn encode_latents(y: &Tensor, w: &ModelWeights) -> Result<Encoded> {
    let cfg = &w.config;
    let (h, wd) = check_latents(y, w)?;

    let z_hat = hyper_symbols(y, w)?;
    let priors = prior_tables(w)?;
    let za = SymbolAlphabet::new(cfg.hyper_bound)?;
    let cz = cfg.hyper_channels;
    let mut enc = RangeEncoder::new();
    let mut z_bits = 0.0;
    for (i, &v) in z_hat.data().iter().enumerate() {
        let idx = za.index(v as i32)?;
        z_bits += priors[i % cz].bits(idx);
        enc.encode(&priors[i % cz], idx)?;
    }
    let z_stream = enc.finish();

    let hyper_feature = hyper_synthesis(&z_hat, w)?;
    let yg = grouping::partition(y, &cfg.scheme)?;
    let ya = SymbolAlphabet::new(cfg.latent_bound)?;
    let mut ar = Autoregressor::new(w, &hyper_feature)?;
    let n = ar.group_len();
    let mut enc = RangeEncoder::new();
    let mut y_bits = 0.0;
    let mut y_prefix = vec![0];
    let mut y_hat = Vec::with_capacity(y.len());
    for t in 0..ar.groups() {
        let (mu, sigma) = ar.params();
        let cdfs = tables(&sigma, ya)?;
        let src = yg.group(t);
        let mut rec = Vec::with_capacity(n);
        for i in 0..n {
            let s = ya.quantize(src[i] - mu[i]);
            let idx = ya.index(s)?;
            y_bits += cdfs[i].bits(idx);
            enc.encode(&cdfs[i], idx)?;
            rec.push(s as f32 + mu[i]);
        }
        y_prefix.push(enc.decoder_position());
        ar.advance(&rec)?;
        y_hat.extend(rec);
    }
    let y_stream = enc.finish();
    let y_hat = grouping::ungroup(&GroupedLatents {
        data: Tensor::new(yg.data.shape().to_vec(), y_hat)?,
        ..yg
    })?;
    Ok(Encoded {
        bitstream: Bitstream {
            config_hash: config_hash(cfg),
            height: h as u32,
            width: wd as u32,
            channels: cfg.latent_channels as u32,
            scheme: cfg.scheme,
            flags: 0,
            z: z_stream,
            y: y_stream,
        },
        y_hat,
        z_bits,
        y_bits,
        y_prefix,
    })
}

/// Rate of coding `y`, from the same tables [`encode_latents`] codes with.
pub fn estimate_rate(y: &Tensor, w: &ModelWeights) -> Result<RateEstimate> {
    let e = encode_latents(y, w)?;
    let positions = (y.shape()[0] * y.shape()[1]) as f64;
    Ok(RateEstimate {
        z_bits: e.z_bits,
        y_bits: e.y_bits,
        bits_per_position: (e.z_bits + e.y_bits) / positions,
    })
}

fn check_stream(bs: &Bitstream, w: &ModelWeights) -> Result<(usize, usize)> {
    let cfg = &w.config;
    let expected = config_hash(cfg);
    if bs.config_hash != expected {
        return Err(Error::ConfigHash {
            stream: bs.config_hash,
            weights: expected,
        });
    }
    if bs.scheme != cfg.scheme || bs.channels as usize != cfg.latent_channels {
        return Err(Error::Config("stream header disagrees with the model configuration".into()));
    }
    let (h, wd) = (bs.height as usize, bs.width as usize);
    if h % 4 != 0 || wd % 4 != 0 || h == 0 || wd == 0 {
        return Err(Error::Format(format!("latent size {h}x{wd} must be a positive multiple of 4")));
    }
    cfg.group_dims(h, wd)?;
    Ok((h, wd))
}

fn decode_hyper(bs: &Bitstream, w: &ModelWeights, h: usize, wd: usize) -> Result<Tensor> {
    let cfg = &w.config;
    let priors = prior_tables(w)?;
    let za = SymbolAlphabet::new(cfg.hyper_bound)?;
    let cz = cfg.hyper_channels;
    let n = (h / 4) * (wd / 4) * cz;
    let mut dec = RangeDecoder::new(&bs.z)?;
    let mut z = Vec::with_capacity(n);
    for i in 0..n {
        z.push(za.symbol(dec.decode(&priors[i % cz])?) as f32);
    }
    Tensor::new(vec![h / 4, wd / 4, cz], z)
}

/// Decodes the first `k` groups from the stream and draws the rest by
/// ancestral sampling with a SplitMix64 generator seeded by `seed` (one
/// 16-bit draw per element, symbol = smallest `s` with `cum[s+1] > u`).
/// Only the bytes needed for groups `0..k` are read, so a `y` stream cut
/// after them is enough.
pub fn progressive_decode(bs: &Bitstream, k: usize, seed: u64, w: &ModelWeights) -> Result<Tensor> {
    let cfg = &w.config;
    let (h, wd) = check_stream(bs, w)?;
    let groups = cfg.group_dims(h, wd)?.groups;
    if k > groups {
        return Err(Error::Index(format!("{k} received groups out of {groups}")));
    }
    let z_hat = decode_hyper(bs, w, h, wd)?;
    let hyper_feature = hyper_synthesis(&z_hat, w)?;
    let ya = SymbolAlphabet::new(cfg.latent_bound)?;
    let mut ar = Autoregressor::new(w, &hyper_feature)?;
    let n = ar.group_len();
    let mut dec = if k > 0 { Some(RangeDecoder::new(&bs.y)?) } else { None };
    let mut rng = SplitMix64::new(seed);
    let mut y_hat = Vec::with_capacity(h * wd * cfg.latent_channels);
    for t in 0..groups {
        let (mu, sigma) = ar.params();
        let cdfs = tables(&sigma, ya)?;
        let mut rec = Vec::with_capacity(n);
        for i in 0..n {
            let idx = match dec.as_mut() {
                Some(d) if t < k => d.decode(&cdfs[i])?,
                _ => cdfs[i].lookup(rng.next_u16()),
            };
            rec.push(ya.symbol(idx) as f32 + mu[i]);
        }
        ar.advance(&rec)?;
        y_hat.extend(rec);
    }
    let dims = cfg.group_dims(h, wd)?;
    grouping::ungroup(&GroupedLatents {
        scheme: cfg.scheme,
        source: (h, wd, cfg.latent_channels),
        dims,
        data: Tensor::new(vec![dims.groups, dims.hw(), dims.c], y_hat)?,
    })
}

/// Full decode; equal to [`progressive_decode`] with every group received.
pub fn decode_latents(bs: &Bitstream, w: &ModelWeights) -> Result<Tensor> {
    let (h, wd) = check_stream(bs, w)?;
    let groups = w.config.group_dims(h, wd)?.groups;
    progressive_decode(bs, groups, 0, w)
}

#[cfg(test)]
mod tests;
