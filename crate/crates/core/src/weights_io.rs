//! The GMXW weight container.
//!
//! Layout (little-endian): magic `GMXW`, `u16` version, `u32` config block
//! length, the config block, the `u64` FNV-1a hash of the config block, a `u32`
//! tensor count, then per tensor a `u16`-length UTF-8 name, `u8` rank, `u32`
//! dims and `f32` data, and finally a CRC32 of everything before it. Tensors
//! are written in the model's canonical order; on load any order is accepted
//! but every expected name must appear exactly once with the expected shape.

use std::collections::HashMap;
use std::path::Path;

use crate::codec::{read_file, seal, unseal, write_file, Reader};
use crate::grouping::{GroupOrder, GroupScheme, SpatialPattern};
use crate::model::{MixerOrder, ModelConfig, ModelWeights, RelPosMode};
use crate::numerics::Tensor;
use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"GMXW";
pub const VERSION: u16 = 1;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// Canonical config block: seven `u32` sizes, four `u8` codes, two `u32`
/// symbol bounds (40 bytes).
pub fn config_block(cfg: &ModelConfig) -> Vec<u8> {
    let mut b = Vec::with_capacity(36);
    for v in [
        cfg.depth,
        cfg.dim,
        cfg.heads,
        cfg.ffn_ratio,
        cfg.latent_channels,
        cfg.hyper_channels,
        cfg.scheme.channel_slices(),
    ] {
        b.extend_from_slice(&(v as u32).to_le_bytes());
    }
    b.push(cfg.scheme.pattern().code());
    b.push(cfg.scheme.order().code());
    b.push(cfg.mixer_order.code());
    b.push(cfg.relpos.code());
    b.extend_from_slice(&cfg.latent_bound.to_le_bytes());
    b.extend_from_slice(&cfg.hyper_bound.to_le_bytes());
    b
}

pub fn parse_config_block(bytes: &[u8]) -> Result<ModelConfig> {
    let mut r = Reader::new(bytes, "config block");
    let mut next = || -> Result<usize> { Ok(r.u32()? as usize) };
    let (depth, dim, heads, ffn_ratio) = (next()?, next()?, next()?, next()?);
    let (latent_channels, hyper_channels, slices) = (next()?, next()?, next()?);
    let pattern = SpatialPattern::from_code(r.u8()?)?;
    let order = GroupOrder::from_code(r.u8()?)?;
    let mixer_order = MixerOrder::from_code(r.u8()?)?;
    let relpos = RelPosMode::from_code(r.u8()?)?;
    let latent_bound = r.u32()?;
    let hyper_bound = r.u32()?;
    r.finish()?;
    let cfg = ModelConfig {
        depth,
        dim,
        heads,
        ffn_ratio,
        latent_channels,
        hyper_channels,
        scheme: GroupScheme::new(slices, pattern, order)?,
        mixer_order,
        relpos,
        latent_bound,
        hyper_bound,
    };
    cfg.validate()?;
    Ok(cfg)
}

/// Hash stamped into bitstreams and weight files.
pub fn config_hash(cfg: &ModelConfig) -> u64 {
    fnv1a64(&config_block(cfg))
}

/// Seeded initialisation (see [`ModelWeights::init_random`]).
pub fn init_random(cfg: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    ModelWeights::init_random(cfg, seed)
}

pub fn to_bytes(w: &ModelWeights) -> Result<Vec<u8>> {
    w.config.validate()?;
    let reference = ModelWeights::zeros(&w.config)?;
    let mut shapes = Vec::new();
    reference.for_each_tensor(|name, t, _| shapes.push((name.to_string(), t.shape().to_vec())));

    let block = config_block(&w.config);
    let mut buf = Vec::new();
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(block.len() as u32).to_le_bytes());
    buf.extend_from_slice(&block);
    buf.extend_from_slice(&fnv1a64(&block).to_le_bytes());
    buf.extend_from_slice(&(shapes.len() as u32).to_le_bytes());
    let mut k = 0;
    let mut err = None;
    w.for_each_tensor(|name, t, _| {
        if err.is_some() {
            return;
        }
        let (ref_name, ref_shape) = &shapes[k];
        k += 1;
        if name != ref_name || t.shape() != ref_shape.as_slice() {
            err = Some(Error::Tensor(
                name.to_string(),
                format!("shape {:?}, config requires {:?}", t.shape(), ref_shape),
            ));
            return;
        }
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    Ok(seal(buf))
}

pub fn from_bytes(bytes: &[u8]) -> Result<ModelWeights> {
    let mut r = Reader::new(bytes, "GMXW");
    r.magic(MAGIC)?;
    r.version(VERSION)?;
    let body = unseal(bytes)?;
    let mut r = Reader::new(body, "GMXW");
    r.take(6)?;
    let block_len = r.u32()? as usize;
    let block = r.take(block_len)?;
    let stored = r.u64()?;
    let computed = fnv1a64(block);
    if stored != computed {
        return Err(Error::Format(format!(
            "config hash {stored:#018x} does not match block ({computed:#018x})"
        )));
    }
    let cfg = parse_config_block(block)?;
    let count = r.u32()? as usize;
    let mut tensors: HashMap<String, Tensor> = HashMap::with_capacity(count);
    for _ in 0..count {
        let nl = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(nl)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let n = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Tensor(name.clone(), "size overflows".into()))?;
        let data = r.f32s(n)?;
        let t = Tensor::new(shape, data)?;
        if tensors.insert(name.clone(), t).is_some() {
            return Err(Error::Tensor(name, "duplicate tensor".into()));
        }
    }
    r.finish()?;

    let mut w = ModelWeights::zeros(&cfg)?;
    let mut err = None;
    w.for_each_tensor_mut(|name, t, _| {
        if err.is_some() {
            return;
        }
        match tensors.remove(name) {
            None => err = Some(Error::Tensor(name.to_string(), "missing tensor".into())),
            Some(src) if src.shape() != t.shape() => {
                err = Some(Error::Tensor(
                    name.to_string(),
                    format!("shape {:?}, config requires {:?}", src.shape(), t.shape()),
                ))
            }
            Some(src) => *t = src,
        }
    });
    if let Some(e) = err {
        return Err(e);
    }
    if let Some(name) = tensors.keys().min() {
        return Err(Error::Tensor(name.clone(), "unknown tensor".into()));
    }
    w.validate()?;
    Ok(w)
}

pub fn save(w: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &to_bytes(w)?)
}

pub fn load(path: impl AsRef<Path>) -> Result<ModelWeights> {
    from_bytes(&read_file(path.as_ref())?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            depth: 1,
            dim: 8,
            heads: 2,
            ffn_ratio: 2,
            latent_channels: 4,
            hyper_channels: 2,
            scheme: GroupScheme::new(2, SpatialPattern::Checkerboard2, GroupOrder::ChannelFirst).unwrap(),
            ..ModelConfig::toy()
        }
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn config_block_roundtrip() {
        for cfg in [tiny(), ModelConfig::toy(), ModelConfig::base()] {
            let b = config_block(&cfg);
            assert_eq!(b.len(), 40);
            assert_eq!(parse_config_block(&b).unwrap(), cfg);
        }
        assert_ne!(config_hash(&tiny()), config_hash(&ModelConfig::toy()));
    }

    #[test]
    fn save_load_roundtrip_and_determinism() {
        let w = init_random(&tiny(), 3).unwrap();
        let a = to_bytes(&w).unwrap();
        assert_eq!(a, to_bytes(&w).unwrap());
        assert_eq!(from_bytes(&a).unwrap(), w);
    }

    #[test]
    fn rejects_wrong_shapes_on_save() {
        let mut w = init_random(&tiny(), 3).unwrap();
        w.start_token = Tensor::zeros(&[3]);
        assert!(matches!(to_bytes(&w), Err(Error::Tensor(..))));
    }

    #[test]
    fn detects_corruption_and_version() {
        let w = init_random(&tiny(), 4).unwrap();
        let mut b = to_bytes(&w).unwrap();
        let mid = b.len() / 2;
        b[mid] ^= 0x10;
        assert!(matches!(from_bytes(&b), Err(Error::Checksum { .. })));
        let mut b = to_bytes(&w).unwrap();
        b[4] = 2;
        assert!(matches!(from_bytes(&b), Err(Error::Version { expected: 1, found: 2 })));
        let mut b = to_bytes(&w).unwrap();
        b[1] = b'Z';
        assert!(matches!(from_bytes(&b), Err(Error::Magic { .. })));
    }
}
