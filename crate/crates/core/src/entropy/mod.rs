//! Entropy coding: discretized Gaussian tables and the range coder.

mod gaussian;
mod range_coder;

pub use gaussian::{
    gaussian_cdf, gaussian_pmf, quantize_cdf, std_normal_cdf, QuantizedCdf, SymbolAlphabet, PRECISION_BITS, TOTAL,
};
pub use range_coder::{decode_indices, encode_indices, RangeDecoder, RangeEncoder};

use crate::Result;

/// Codes integer symbols of `alphabet`, one table per symbol.
pub fn encode(symbols: &[i32], cdfs: &[QuantizedCdf], alphabet: SymbolAlphabet) -> Result<Vec<u8>> {
    let idx = symbols.iter().map(|&s| alphabet.index(s)).collect::<Result<Vec<_>>>()?;
    encode_indices(&idx, cdfs)
}

pub fn decode(bytes: &[u8], cdfs: &[QuantizedCdf], alphabet: SymbolAlphabet) -> Result<Vec<i32>> {
    Ok(decode_indices(bytes, cdfs)?.into_iter().map(|i| alphabet.symbol(i)).collect())
}

/// `Σ −log2(freq/65536)` over the coded symbol indices.
pub fn ideal_bits(indices: &[usize], cdfs: &[QuantizedCdf]) -> f64 {
    indices.iter().zip(cdfs).map(|(&i, c)| c.bits(i)).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    // Independent Φ via the error function rather than erfc.
    fn phi(x: f64) -> f64 {
        0.5 * (1.0 + libm::erf(x / 2f64.sqrt()))
    }

    #[test]
    fn pmf_at_unit_scale() {
        let a = SymbolAlphabet::new(64).unwrap();
        let p = gaussian_pmf(1.0, a).unwrap();
        let want = phi(0.5) - phi(-0.5);
        assert!((p[64] - want).abs() < 1e-12);
        assert!((p[64] - 0.382925).abs() < 1e-5);
        for s in 1..=64 {
            assert!((p[64 + s] - p[64 - s]).abs() < 1e-15, "s={s}");
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pmf_edges_absorb_tails() {
        let a = SymbolAlphabet::new(2).unwrap();
        let p = gaussian_pmf(3.0, a).unwrap();
        assert!((p[0] - phi(-1.5 / 3.0)).abs() < 1e-12);
        assert!((p[4] - (1.0 - phi(1.5 / 3.0))).abs() < 1e-12);
        assert!((p[2] - (phi(0.5 / 3.0) - phi(-0.5 / 3.0))).abs() < 1e-12);
    }

    #[test]
    fn pmf_at_sigma_floor_is_concentrated() {
        let a = SymbolAlphabet::new(64).unwrap();
        let p = gaussian_pmf(0.11, a).unwrap();
        assert!(p[64] >= 0.99);
        assert!((p[64] - (2.0 * phi(0.5 / 0.11) - 1.0)).abs() < 1e-12);
        let c = quantize_cdf(&p).unwrap();
        assert!((0..c.size()).all(|i| c.freq(i) >= 1));
    }

    #[test]
    fn pmf_rejects_scale_out_of_range() {
        let a = SymbolAlphabet::new(8).unwrap();
        assert!(gaussian_pmf(0.1, a).is_err());
        assert!(gaussian_pmf(64.5, a).is_err());
        assert!(gaussian_pmf(f64::NAN, a).is_err());
        assert!(gaussian_pmf(64.0, a).is_ok());
    }

    #[test]
    fn uniform_four_quantizes_exactly() {
        let c = quantize_cdf(&[0.25; 4]).unwrap();
        assert_eq!(c.cum(), &[0, 16384, 32768, 49152, 65536]);
    }

    #[test]
    fn quantize_rejects_oversized_alphabet() {
        assert!(quantize_cdf(&vec![1.0; 65537]).is_err());
        assert!(quantize_cdf(&[]).is_err());
        assert!(quantize_cdf(&[0.5, f64::NAN]).is_err());
        let c = quantize_cdf(&vec![1.0; 65536]).unwrap();
        assert!((0..c.size()).all(|i| c.freq(i) == 1));
    }

    // Hamilton apportionment by repeated selection: hand out the spare counts
    // one at a time to the largest remaining remainder.
    fn hamilton(pmf: &[f64]) -> Vec<u32> {
        let n = pmf.len();
        let sum: f64 = pmf.iter().sum();
        let spare = 65536 - n;
        let quotas: Vec<f64> = pmf.iter().map(|p| p / sum * spare as f64).collect();
        let mut counts: Vec<u32> = quotas.iter().map(|q| 1 + q.floor() as u32).collect();
        let mut taken = vec![false; n];
        let mut left = 65536 - counts.iter().sum::<u32>();
        while left > 0 {
            let mut best = None;
            for i in 0..n {
                if taken[i] {
                    continue;
                }
                let r = quotas[i] - quotas[i].floor();
                match best {
                    Some((_, br)) if r <= br => {}
                    _ => best = Some((i, r)),
                }
            }
            let (i, _) = best.unwrap();
            taken[i] = true;
            counts[i] += 1;
            left -= 1;
        }
        counts
    }

    #[test]
    fn quantize_matches_largest_remainder_oracle() {
        let mut g = SplitMix64::new(11);
        for trial in 0..300 {
            let n = 2 + (g.next_u64() % 300) as usize;
            let pmf: Vec<f64> = (0..n)
                .map(|_| {
                    let u = g.next_open01();
                    if trial % 3 == 0 {
                        u * u * u * u
                    } else {
                        u
                    }
                })
                .collect();
            let c = quantize_cdf(&pmf).unwrap();
            let counts: Vec<u32> = (0..n).map(|i| c.freq(i)).collect();
            assert_eq!(counts, hamilton(&pmf), "trial {trial}");
            assert_eq!(c.cum()[n], 65536);
        }
        // Gaussian tables too.
        let a = SymbolAlphabet::new(64).unwrap();
        for sigma in [0.11, 0.5, 1.0, 7.3, 64.0] {
            let p = gaussian_pmf(sigma, a).unwrap();
            let c = quantize_cdf(&p).unwrap();
            let counts: Vec<u32> = (0..c.size()).map(|i| c.freq(i)).collect();
            assert_eq!(counts, hamilton(&p));
        }
    }

    #[test]
    fn quantize_breaks_ties_towards_lower_index() {
        // Three equal shares of 65533 spare counts: 21844 each with one left.
        let c = quantize_cdf(&[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((c.freq(0), c.freq(1), c.freq(2)), (21846, 21845, 21845));
    }

    #[test]
    fn uniform_256_costs_one_byte_per_symbol() {
        let c = QuantizedCdf::from_cum((0..=256).map(|i| i * 256).collect()).unwrap();
        let mut g = SplitMix64::new(3);
        let idx: Vec<usize> = (0..1000).map(|_| (g.next_u64() % 256) as usize).collect();
        let cdfs = vec![c; 1000];
        let bytes = encode_indices(&idx, &cdfs).unwrap();
        assert!((1000..=1012).contains(&bytes.len()), "{}", bytes.len());
        assert_eq!(decode_indices(&bytes, &cdfs).unwrap(), idx);
    }

    #[test]
    fn near_certain_single_symbol() {
        let c = QuantizedCdf::from_cum(vec![0, 65535, 65536]).unwrap();
        let bytes = encode_indices(&[0], std::slice::from_ref(&c)).unwrap();
        assert!(bytes.len() <= 8);
        assert_eq!(decode_indices(&bytes, &[c]).unwrap(), vec![0]);
    }

    #[test]
    fn symbol_api_roundtrips_and_checks_range() {
        let a = SymbolAlphabet::new(64).unwrap();
        let cdf = gaussian_cdf(2.0, a).unwrap();
        let syms = vec![0, -1, 5, 64, -64, 3];
        let cdfs = vec![cdf; syms.len()];
        let bytes = encode(&syms, &cdfs, a).unwrap();
        assert_eq!(decode(&bytes, &cdfs, a).unwrap(), syms);
        assert!(encode(&[65], &cdfs[..1], a).is_err());
        assert!(encode(&[0, 0], &cdfs[..1], a).is_err());
    }

    #[test]
    fn encoder_reports_decoder_position() {
        let a = SymbolAlphabet::new(64).unwrap();
        let mut g = SplitMix64::new(17);
        let cdfs: Vec<_> = (0..500)
            .map(|_| gaussian_cdf(0.11 + g.next_open01() * 10.0, a).unwrap())
            .collect();
        let idx: Vec<usize> = cdfs.iter().map(|c| c.lookup(g.next_u16())).collect();
        let mut enc = RangeEncoder::new();
        let mut marks = Vec::new();
        for (c, &i) in cdfs.iter().zip(&idx) {
            enc.encode(c, i).unwrap();
            marks.push(enc.decoder_position());
        }
        let bytes = enc.finish();
        assert_eq!(bytes.len(), *marks.last().unwrap());
        let mut dec = RangeDecoder::new(&bytes).unwrap();
        for (k, c) in cdfs.iter().enumerate() {
            assert_eq!(dec.decode(c).unwrap(), idx[k]);
            assert_eq!(dec.position(), marks[k]);
            // The same prefix decodes on its own.
        }
        let cut = marks[249];
        assert_eq!(decode_indices(&bytes[..cut], &cdfs[..250]).unwrap(), idx[..250]);
    }

    #[test]
    fn encoding_is_deterministic() {
        let a = SymbolAlphabet::new(32).unwrap();
        let cdf = gaussian_cdf(1.7, a).unwrap();
        let idx: Vec<usize> = (0..200).map(|k| (k * 7) % 65).collect();
        let cdfs = vec![cdf; 200];
        assert_eq!(encode_indices(&idx, &cdfs).unwrap(), encode_indices(&idx, &cdfs).unwrap());
    }

    fn random_cdf(g: &mut SplitMix64, n: usize) -> QuantizedCdf {
        let pmf: Vec<f64> = (0..n).map(|_| g.next_open01().powi(3)).collect();
        quantize_cdf(&pmf).unwrap()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn roundtrip_and_rate_bound(seed in any::<u64>(), len in 0usize..300, n in 2usize..200) {
            let mut g = SplitMix64::new(seed);
            let cdfs: Vec<_> = (0..len).map(|_| random_cdf(&mut g, n)).collect();
            let idx: Vec<usize> = cdfs.iter().map(|c| c.lookup(g.next_u16())).collect();
            let bytes = encode_indices(&idx, &cdfs).unwrap();
            prop_assert_eq!(decode_indices(&bytes, &cdfs).unwrap(), idx.clone());
            let h = ideal_bits(&idx, &cdfs);
            prop_assert!((bytes.len() * 8) as f64 <= h + 64.0);
            prop_assert!((bytes.len() * 8) as f64 >= h - 64.0);
        }

        #[test]
        fn gaussian_tables_are_valid(sigma in 0.11f64..64.0, s_max in 1u32..200) {
            let a = SymbolAlphabet::new(s_max).unwrap();
            let p = gaussian_pmf(sigma, a).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let c = quantize_cdf(&p).unwrap();
            prop_assert_eq!(c.cum()[0], 0);
            prop_assert_eq!(c.cum()[c.size()], 65536);
            prop_assert!(c.cum().windows(2).all(|w| w[0] < w[1]));
        }
    }
}
