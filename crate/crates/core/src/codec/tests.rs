use super::*;
use crate::grouping::{GroupOrder, GroupScheme, SpatialPattern};
use crate::model::ModelConfig;
use crate::numerics::{conv2d, gelu, Padding};

fn cfg() -> ModelConfig {
    ModelConfig {
        depth: 1,
        dim: 16,
        heads: 2,
        latent_channels: 8,
        hyper_channels: 4,
        scheme: GroupScheme::new(2, SpatialPattern::Checkerboard2, GroupOrder::SpatialFirst).unwrap(),
        ..ModelConfig::toy()
    }
}

fn latents(shape: &[usize], seed: u64, scale: f64) -> Tensor {
    let mut g = SplitMix64::new(seed);
    Tensor::from_fn(shape, |_| (g.next_normal() * scale) as f32)
}

#[test]
fn roundtrip_is_bit_exact() {
    let c = cfg();
    let w = ModelWeights::init_random(&c, 1).unwrap();
    for seed in 0..4 {
        let y = latents(&[8, 8, 8], seed, 4.0);
        let e = encode_latents(&y, &w).unwrap();
        let back = Bitstream::from_bytes(&e.bitstream.to_bytes().unwrap()).unwrap();
        let d = decode_latents(&back, &w).unwrap();
        assert_eq!(d.data(), e.y_hat.data());
        // Reconstruction is within half a step of the source unless clamped.
        let diff = y.max_abs_diff(&e.y_hat);
        assert!(diff <= 0.5 + 1e-4, "{diff}");
    }
}

#[test]
fn rate_accounting_within_64_bits() {
    let c = cfg();
    let w = ModelWeights::init_random(&c, 2).unwrap();
    let y = latents(&[8, 16, 8], 3, 6.0);
    let e = encode_latents(&y, &w).unwrap();
    let yb = (e.bitstream.y.len() * 8) as f64;
    let zb = (e.bitstream.z.len() * 8) as f64;
    assert!((yb - e.y_bits).abs() <= 64.0, "{yb} vs {}", e.y_bits);
    assert!((zb - e.z_bits).abs() <= 64.0, "{zb} vs {}", e.z_bits);
    let r = estimate_rate(&y, &w).unwrap();
    assert_eq!(r.y_bits, e.y_bits);
    assert_eq!(r.z_bits, e.z_bits);
    assert!((r.bits_per_position - (e.y_bits + e.z_bits) / 128.0).abs() < 1e-9);
    assert_eq!(e.y_prefix.len(), c.groups() + 1);
    assert_eq!(*e.y_prefix.last().unwrap(), e.bitstream.y.len());
}

#[test]
fn latents_at_the_mean_code_zero_symbols() {
    let c = cfg();
    let mut w = ModelWeights::zeros(&c).unwrap();
    let cc = c.group_channels();
    // μ = 1.5 everywhere, σ at its floor.
    w.param_net.bias3 = Tensor::from_fn(&[2 * cc], |i| if i < cc { 1.5 } else { -20.0 });
    let y = Tensor::full(&[8, 8, 8], 1.5);
    let e = encode_latents(&y, &w).unwrap();
    assert_eq!(e.y_hat, y);
    let p0 = gaussian_cdf(crate::model::SIGMA_MIN as f64, SymbolAlphabet::new(64).unwrap()).unwrap();
    let want = p0.bits(64) * y.len() as f64;
    assert!((e.y_bits - want).abs() < 1e-6);
    assert!(e.bitstream.y.len() as f64 <= want / 8.0 + 8.0);
    // Zero hyper weights give z = 0, coded as symbol 0 per channel.
    assert!(hyper_analysis(&y, &w).unwrap().data().iter().all(|&v| v == 0.0));
    let prior = prior_tables(&w).unwrap();
    assert!((e.z_bits - prior[0].bits(32) * 2.0 * 2.0 * 4.0).abs() < 1e-9);
}

#[test]
fn smaller_scale_on_zero_symbols_costs_less() {
    let c = cfg();
    let mut w = ModelWeights::zeros(&c).unwrap();
    let cc = c.group_channels();
    let y = Tensor::zeros(&[8, 8, 8]);
    w.param_net.bias3 = Tensor::zeros(&[2 * cc]);
    let wide = estimate_rate(&y, &w).unwrap().y_bits;
    w.param_net.bias3 = Tensor::from_fn(&[2 * cc], |i| if i < cc { 0.0 } else { -20.0 });
    let narrow = estimate_rate(&y, &w).unwrap().y_bits;
    assert!(narrow < wide);
}

#[test]
fn rejects_tampered_config_hash_and_bad_inputs() {
    let c = cfg();
    let w = ModelWeights::init_random(&c, 4).unwrap();
    let y = latents(&[8, 8, 8], 5, 2.0);
    let mut bs = encode_latents(&y, &w).unwrap().bitstream;
    bs.config_hash ^= 1;
    assert!(matches!(decode_latents(&bs, &w), Err(Error::ConfigHash { .. })));
    assert!(encode_latents(&latents(&[6, 8, 8], 1, 1.0), &w).is_err());
    assert!(encode_latents(&latents(&[8, 8, 4], 1, 1.0), &w).is_err());
    let mut bad = y.clone();
    bad.data_mut()[3] = f32::NAN;
    assert!(matches!(encode_latents(&bad, &w), Err(Error::NonFinite(_))));
}

#[test]
fn single_group_scheme_depends_on_hyper_only() {
    let c = ModelConfig {
        scheme: GroupScheme::single(),
        ..cfg()
    };
    let w = ModelWeights::init_random(&c, 6).unwrap();
    let y = latents(&[4, 4, 8], 7, 3.0);
    let e = encode_latents(&y, &w).unwrap();
    assert_eq!(decode_latents(&e.bitstream, &w).unwrap(), e.y_hat);
    assert_eq!(e.y_prefix.len(), 2);
}

#[test]
fn progressive_decoding_properties() {
    let c = cfg();
    let w = ModelWeights::init_random(&c, 8).unwrap();
    let y = latents(&[8, 8, 8], 9, 4.0);
    let e = encode_latents(&y, &w).unwrap();
    let g = c.groups();
    let full = decode_latents(&e.bitstream, &w).unwrap();
    assert_eq!(progressive_decode(&e.bitstream, g, 99, &w).unwrap(), full);

    let a = progressive_decode(&e.bitstream, 0, 5, &w).unwrap();
    let b = progressive_decode(&e.bitstream, 0, 5, &w).unwrap();
    let other = progressive_decode(&e.bitstream, 0, 6, &w).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, other);
    let mut no_y = e.bitstream.clone();
    no_y.y.clear();
    assert_eq!(progressive_decode(&no_y, 0, 5, &w).unwrap(), a);

    let full_g = grouping::partition(&full, &c.scheme).unwrap();
    for k in 0..=g {
        let mut cut = e.bitstream.clone();
        cut.y.truncate(e.y_prefix[k]);
        let p = progressive_decode(&cut, k, 1, &w).unwrap();
        let pg = grouping::partition(&p, &c.scheme).unwrap();
        for t in 0..k {
            assert_eq!(pg.group(t), full_g.group(t), "k={k} t={t}");
        }
    }
    assert!(progressive_decode(&e.bitstream, g + 1, 0, &w).is_err());
}

fn chw(x: &Tensor) -> Tensor {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(&[c, h, w]);
    for i in 0..h {
        for j in 0..w {
            for k in 0..c {
                out.data_mut()[(k * h + i) * w + j] = x.data()[(i * w + j) * c + k];
            }
        }
    }
    out
}

// Plain f64 convolution with same padding for the hyper oracle.
fn conv_ref(x: &Tensor, k: &Tensor, b: &Tensor, stride: usize) -> Tensor {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let co = k.shape()[0];
    let (oh, ow) = ((h - 1) / stride + 1, (w - 1) / stride + 1);
    let mut out = Tensor::zeros(&[co, oh, ow]);
    for o in 0..co {
        for y in 0..oh {
            for xx in 0..ow {
                let mut acc = b.data()[o] as f64;
                for c in 0..ci {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let iy = (y * stride + ky) as isize - 1;
                            let ix = (xx * stride + kx) as isize - 1;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            acc += x.data()[(c * h + iy as usize) * w + ix as usize] as f64
                                * k.data()[((o * ci + c) * 3 + ky) * 3 + kx] as f64;
                        }
                    }
                }
                out.data_mut()[(o * oh + y) * ow + xx] = acc as f32;
            }
        }
    }
    out
}

#[test]
fn hyper_matches_naive_convolution() {
    let c = cfg();
    let mut w = ModelWeights::init_random(&c, 10).unwrap();
    w.hyper.analysis1_bias = latents(&[4], 1, 0.1).reshape(&[4]).unwrap();
    let y = latents(&[8, 12, 8], 11, 1.0);
    let h = &w.hyper;
    let a = gelu(&conv_ref(&chw(&y), &h.analysis1, &h.analysis1_bias, 2));
    let z = conv_ref(&a, &h.analysis2, &h.analysis2_bias, 2);
    let got = chw(&hyper_analysis(&y, &w).unwrap());
    assert!(got.max_abs_diff(&z) < 1e-5);

    let zin = latents(&[2, 3, 4], 12, 1.0);
    let up = |t: &Tensor| {
        let (cc, hh, ww) = (t.shape()[0], t.shape()[1], t.shape()[2]);
        Tensor::from_fn(&[cc, 2 * hh, 2 * ww], |i| {
            let (ch, r, col) = (i / (4 * hh * ww), (i / (2 * ww)) % (2 * hh), i % (2 * ww));
            t.data()[(ch * hh + r / 2) * ww + col / 2]
        })
    };
    let s1 = gelu(&conv_ref(&up(&chw(&zin)), &h.synthesis1, &h.synthesis1_bias, 1));
    let s2 = conv_ref(&up(&s1), &h.synthesis2, &h.synthesis2_bias, 1);
    let got = chw(&hyper_synthesis(&zin, &w).unwrap());
    assert_eq!(got.shape(), &[16, 8, 12]);
    assert!(got.max_abs_diff(&s2) < 1e-5);
    // Library convolution agrees too (sanity for the oracle itself).
    let lib = conv2d(&chw(&y), &h.analysis1, Some(&h.analysis1_bias), 2, 1, Padding::Same, None).unwrap();
    assert!(lib.max_abs_diff(&conv_ref(&chw(&y), &h.analysis1, &h.analysis1_bias, 2)) < 1e-5);
}

#[test]
fn files_roundtrip_on_disk() {
    let dir = std::env::temp_dir().join(format!("gmx-codec-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let y = latents(&[4, 4, 8], 13, 1.0);
    write_tensor(dir.join("y.gmxt"), &y).unwrap();
    assert_eq!(read_tensor(dir.join("y.gmxt")).unwrap(), y);
    let c = cfg();
    let w = ModelWeights::init_random(&c, 14).unwrap();
    let e = encode_latents(&y, &w).unwrap();
    e.bitstream.write(dir.join("s.gmxb")).unwrap();
    assert_eq!(Bitstream::read(dir.join("s.gmxb")).unwrap(), e.bitstream);
    std::fs::remove_dir_all(&dir).unwrap();
}
