//! GMXT and GMXB byte layouts and codec runs through them.

use groupedmixer::codec::{
    decode_latents, encode_latents, progressive_decode, tensor_from_bytes, tensor_to_bytes, Bitstream,
};
use groupedmixer::grouping::{partition, GroupOrder, GroupScheme, SpatialPattern};
use groupedmixer::model::{ModelConfig, ModelWeights};
use groupedmixer::numerics::Tensor;
use groupedmixer::rng::SplitMix64;
use groupedmixer::weights_io::config_hash;
use groupedmixer::Error;

fn cfg() -> ModelConfig {
    ModelConfig {
        depth: 1,
        dim: 16,
        heads: 2,
        latent_channels: 8,
        hyper_channels: 4,
        scheme: GroupScheme::new(2, SpatialPattern::Quad4, GroupOrder::ChannelFirst).unwrap(),
        ..ModelConfig::toy()
    }
}

fn latents(h: usize, w: usize, c: usize, seed: u64) -> Tensor {
    let mut g = SplitMix64::new(seed);
    Tensor::from_fn(&[h, w, c], |_| (g.next_normal() * 3.0) as f32)
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

#[test]
fn gmxt_layout() {
    let y = latents(2, 3, 4, 1);
    let b = tensor_to_bytes(&y).unwrap();
    assert_eq!(b.len(), 4 + 2 + 12 + 24 * 4 + 4);
    assert_eq!(&b[..6], b"GMXT\x01\x00");
    assert_eq!((u32_at(&b, 6), u32_at(&b, 10), u32_at(&b, 14)), (2, 3, 4));
    assert_eq!(f32::from_le_bytes(b[18..22].try_into().unwrap()), y.data()[0]);
    assert_eq!(u32_at(&b, b.len() - 4), crc32fast::hash(&b[..b.len() - 4]));
    assert_eq!(tensor_from_bytes(&b).unwrap(), y);
    assert!(tensor_to_bytes(&Tensor::zeros(&[4, 4])).is_err());
}

#[test]
fn gmxb_layout() {
    let c = cfg();
    let w = ModelWeights::init_random(&c, 2).unwrap();
    let e = encode_latents(&latents(8, 8, 8, 3), &w).unwrap();
    let bs = &e.bitstream;
    let b = bs.to_bytes().unwrap();
    assert_eq!(&b[..6], b"GMXB\x01\x00");
    assert_eq!(u64::from_le_bytes(b[6..14].try_into().unwrap()), config_hash(&c));
    assert_eq!((u32_at(&b, 14), u32_at(&b, 18), u32_at(&b, 22)), (8, 8, 8));
    assert_eq!(u32_at(&b, 26), 2);
    assert_eq!(&b[30..34], &[2, 1, 0, 0]);
    let zl = u32_at(&b, 34) as usize;
    assert_eq!(&b[38..38 + zl], bs.z.as_slice());
    let yl = u32_at(&b, 38 + zl) as usize;
    assert_eq!(&b[42 + zl..42 + zl + yl], bs.y.as_slice());
    assert_eq!(b.len(), 42 + zl + yl + 4);
    assert_eq!(Bitstream::from_bytes(&b).unwrap(), *bs);
}

#[test]
fn gmxb_rejects_damage() {
    let c = cfg();
    let w = ModelWeights::init_random(&c, 4).unwrap();
    let b = encode_latents(&latents(8, 8, 8, 5), &w).unwrap().bitstream.to_bytes().unwrap();
    let mut bad = b.clone();
    bad[40] ^= 0x80;
    assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::Checksum { .. })));
    let mut bad = b.clone();
    bad[4] = 9;
    assert!(matches!(Bitstream::from_bytes(&bad), Err(Error::Version { found: 9, .. })));
    assert!(Bitstream::from_bytes(&b[..b.len() - 5]).is_err());
    assert!(matches!(tensor_from_bytes(&b), Err(Error::Magic { .. })));
}

#[test]
fn weights_from_another_config_are_refused() {
    let c = cfg();
    let w = ModelWeights::init_random(&c, 6).unwrap();
    let bs = encode_latents(&latents(8, 8, 8, 7), &w).unwrap().bitstream;
    let other = ModelWeights::init_random(&ModelConfig { depth: 2, ..c }, 6).unwrap();
    assert!(matches!(decode_latents(&bs, &other), Err(Error::ConfigHash { .. })));
}

#[test]
fn disk_roundtrip_and_progressive_prefix() {
    let dir = tempfile::tempdir().unwrap();
    let c = cfg();
    let w = ModelWeights::init_random(&c, 8).unwrap();
    let y = latents(8, 16, 8, 9);
    let e = encode_latents(&y, &w).unwrap();
    let path = dir.path().join("s.gmxb");
    e.bitstream.write(&path).unwrap();
    let bs = Bitstream::read(&path).unwrap();
    let full = decode_latents(&bs, &w).unwrap();
    assert_eq!(full, e.y_hat);
    assert_eq!(progressive_decode(&bs, c.groups(), 3, &w).unwrap(), full);
    let k = c.groups() / 2;
    let p = progressive_decode(&bs, k, 3, &w).unwrap();
    let (pg, fg) = (partition(&p, &c.scheme).unwrap(), partition(&full, &c.scheme).unwrap());
    for t in 0..c.groups() {
        assert_eq!(pg.group(t) == fg.group(t), t < k, "group {t}");
    }
}

#[test]
fn sequential_and_parallel_paths_agree() {
    let c = ModelConfig::toy();
    let w = ModelWeights::init_random(&c, 10).unwrap();
    let y = latents(8, 8, c.latent_channels, 11);
    let par = encode_latents(&y, &w).unwrap();
    let seq = groupedmixer::exec::sequential(|| encode_latents(&y, &w).unwrap());
    assert_eq!(par.bitstream, seq.bitstream);
    assert_eq!(par.y_hat, seq.y_hat);
    let g = partition(&y, &c.scheme).unwrap();
    let full = groupedmixer::model::forward_stack(&g, &w).unwrap();
    let full_seq = groupedmixer::exec::sequential(|| groupedmixer::model::forward_stack(&g, &w).unwrap());
    assert_eq!(full.data(), full_seq.data());
}
