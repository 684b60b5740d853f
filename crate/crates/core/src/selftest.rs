//! Built-in consistency checks with seeded weights, run by `gmx selftest`.

use crate::cache::run_incremental;
use crate::codec::{decode_latents, encode_latents};
use crate::complexity::{flops_full_attention, flops_grouped_mixer};
use crate::entropy::{decode_indices, encode_indices, quantize_cdf, QuantizedCdf};
use crate::grouping::{partition, ungroup, GroupOrder, GroupScheme, SpatialPattern};
use crate::model::{displacement_index, forward_stack, predict_params, relpos_table_size, ModelConfig, ModelWeights};
use crate::numerics::Tensor;
use crate::rng::SplitMix64;
use crate::weights_io::fnv1a64;
use crate::Result;

/// FNV-1a of the `y` stream produced by [`golden_stream`].
pub const GOLDEN_Y_HASH: u64 = 0x3fca_ed70_788a_46a1;
/// FNV-1a of the `z` stream produced by [`golden_stream`].
pub const GOLDEN_Z_HASH: u64 = 0xb6cd_9965_a238_46ad;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Small configuration used by the checks: `L=1, D=16, m=2, C=8`, 2 slices
/// with the checkerboard split.
pub fn check_config() -> ModelConfig {
    ModelConfig {
        depth: 1,
        dim: 16,
        heads: 2,
        latent_channels: 8,
        hyper_channels: 4,
        scheme: GroupScheme::new(2, SpatialPattern::Checkerboard2, GroupOrder::SpatialFirst).expect("valid scheme"),
        ..ModelConfig::toy()
    }
}

fn randn(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut g = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| (g.next_normal() * scale) as f32)
}

/// Encodes the fixed reference input (seed-7 weights, seed-11 latents
/// `8×8×8` with scale 3) and returns the `(z, y)` streams.
pub fn golden_stream() -> Result<(Vec<u8>, Vec<u8>)> {
    let cfg = check_config();
    let w = ModelWeights::init_random(&cfg, 7)?;
    let y = randn(&[8, 8, 8], 11, 3.0);
    let e = encode_latents(&y, &w)?;
    Ok((e.bitstream.z, e.bitstream.y))
}

fn grouping_roundtrip() -> Result<String> {
    let mut n = 0;
    for k in [1, 2, 5, 10] {
        for p in [SpatialPattern::Checkerboard2, SpatialPattern::Quad4] {
            for o in [GroupOrder::SpatialFirst, GroupOrder::ChannelFirst] {
                let s = GroupScheme::new(k, p, o)?;
                let x = randn(&[4, 6, 10 * k], n as u64, 1.0);
                if ungroup(&partition(&x, &s)?)? != x {
                    return Err(crate::Error::Format(format!("roundtrip failed for {s}")));
                }
                n += 1;
            }
        }
    }
    Ok(format!("{n} schemes"))
}

fn causality() -> Result<String> {
    let cfg = check_config();
    let w = ModelWeights::init_random(&cfg, 3)?;
    let y = randn(&[8, 8, 8], 4, 2.0);
    let hyper = randn(&[8, 8, 16], 5, 1.0);
    let g = partition(&y, &cfg.scheme)?;
    let base = predict_params(&g, &hyper, &w)?;
    let bg = partition(&base.mu, &cfg.scheme)?;
    for i in 0..g.dims.groups {
        let mut g2 = g.clone();
        let m = g.dims.hw() * g.dims.c;
        g2.data.data_mut()[i * m..].iter_mut().for_each(|v| *v += 1.0);
        let p = partition(&predict_params(&g2, &hyper, &w)?.mu, &cfg.scheme)?;
        if p.group(i) != bg.group(i) {
            return Err(crate::Error::Format(format!("group {i} saw later groups")));
        }
    }
    Ok(format!("{} groups", g.dims.groups))
}

fn cache_equivalence() -> Result<String> {
    let cfg = check_config();
    let w = ModelWeights::init_random(&cfg, 6)?;
    let g = partition(&randn(&[8, 8, 8], 7, 2.0), &cfg.scheme)?;
    let diff = forward_stack(&g, &w)?.max_abs_diff(&run_incremental(&g, &w)?);
    if diff > 1e-5 {
        return Err(crate::Error::Format(format!("max diff {diff:e}")));
    }
    Ok(format!("max diff {diff:e}"))
}

fn coder_roundtrip() -> Result<String> {
    let mut g = SplitMix64::new(8);
    for trial in 0..200 {
        let len = (g.next_u64() % 64) as usize;
        let cdfs: Vec<QuantizedCdf> = (0..len)
            .map(|_| {
                let n = 2 + (g.next_u64() % 40) as usize;
                let pmf: Vec<f64> = (0..n).map(|_| g.next_open01()).collect();
                quantize_cdf(&pmf)
            })
            .collect::<Result<_>>()?;
        let idx: Vec<usize> = cdfs.iter().map(|c| c.lookup(g.next_u16())).collect();
        if decode_indices(&encode_indices(&idx, &cdfs)?, &cdfs)? != idx {
            return Err(crate::Error::Format(format!("trial {trial} mismatch")));
        }
    }
    Ok("200 streams".into())
}

fn codec_and_golden() -> Result<String> {
    let cfg = check_config();
    let w = ModelWeights::init_random(&cfg, 7)?;
    let y = randn(&[8, 8, 8], 11, 3.0);
    let e = encode_latents(&y, &w)?;
    if decode_latents(&e.bitstream, &w)? != e.y_hat {
        return Err(crate::Error::Format("decoded latents differ from the encoder's".into()));
    }
    let (hz, hy) = (fnv1a64(&e.bitstream.z), fnv1a64(&e.bitstream.y));
    if (hz, hy) != (GOLDEN_Z_HASH, GOLDEN_Y_HASH) {
        return Err(crate::Error::Format(format!(
            "stream hashes z={hz:#018x} y={hy:#018x} differ from the reference"
        )));
    }
    Ok(format!("{} + {} bytes", e.bitstream.z.len(), e.bitstream.y.len()))
}

fn relpos_bijection() -> Result<String> {
    for (kc, kh, kw) in [(2, 2, 2), (5, 1, 2), (10, 2, 2)] {
        let p = match (kh, kw) {
            (2, 2) => SpatialPattern::Quad4,
            _ => SpatialPattern::Checkerboard2,
        };
        let s = GroupScheme::new(kc, p, GroupOrder::SpatialFirst)?;
        let np = relpos_table_size(&s);
        let mut seen = vec![false; np];
        for dz in -(kc as i64 - 1)..kc as i64 {
            for dx in -(kh as i64 - 1)..kh as i64 {
                for dy in -(kw as i64 - 1)..kw as i64 {
                    let i = displacement_index(dx, dy, dz, &s)?;
                    if seen[i] {
                        return Err(crate::Error::Format(format!("index {i} repeated for {s}")));
                    }
                    seen[i] = true;
                }
            }
        }
        if !seen.iter().all(|&b| b) {
            return Err(crate::Error::Format(format!("indices of {s} not onto")));
        }
    }
    Ok("3 schemes".into())
}

fn complexity_coefficients() -> Result<String> {
    let f = flops_full_attention(40, 16, 24);
    let g = flops_grouped_mixer(40, 16, 24);
    if f != (61_440, 471_859_200) || g != (1_696, 298_112) {
        return Err(crate::Error::Format(format!("got {f:?} / {g:?}")));
    }
    Ok(format!("{f:?} / {g:?}"))
}

type CheckFn = fn() -> Result<String>;

/// Runs every check; `detail` carries the measurement or the failure message.
pub fn run_all() -> Vec<Check> {
    let checks: [(&'static str, CheckFn); 7] = [
        ("grouping_roundtrip", grouping_roundtrip),
        ("causality", causality),
        ("cache_equivalence", cache_equivalence),
        ("coder_roundtrip", coder_roundtrip),
        ("codec_golden_stream", codec_and_golden),
        ("relpos_bijection", relpos_bijection),
        ("complexity_coefficients", complexity_coefficients),
    ];
    checks
        .iter()
        .map(|&(name, f)| match f() {
            Ok(detail) => Check {
                name,
                passed: true,
                detail,
            },
            Err(e) => Check {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}
