//! Hyper analysis/synthesis convolution stubs and the factorised prior.

use crate::entropy::{gaussian_cdf, QuantizedCdf, SymbolAlphabet};
use crate::model::ModelWeights;
use crate::numerics::{conv2d, gelu, Padding, Tensor};
use crate::{Error, Result};

fn hwc_to_chw(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = match *x.shape() {
        [h, w, c] => (h, w, c),
        _ => return Err(Error::Shape(format!("expected H×W×C, got {:?}", x.shape()))),
    };
    let src = x.data();
    Ok(Tensor::from_fn(&[c, h, w], |i| {
        let (ch, p) = (i / (h * w), i % (h * w));
        src[p * c + ch]
    }))
}

fn chw_to_hwc(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let src = x.data();
    Tensor::from_fn(&[h, w, c], |i| {
        let (p, ch) = (i / c, i % c);
        src[ch * h * w + p]
    })
}

fn upsample2(x: &Tensor) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let src = x.data();
    Tensor::from_fn(&[c, 2 * h, 2 * w], |i| {
        let ch = i / (4 * h * w);
        let r = (i / (2 * w)) % (2 * h);
        let col = i % (2 * w);
        src[ch * h * w + (r / 2) * w + col / 2]
    })
}

/// `h_a`: 3×3 stride-2 conv (C→C_z), GELU, 3×3 stride-2 conv (C_z→C_z).
/// Maps `[H × W × C]` to `[H/4 × W/4 × C_z]`.
pub fn hyper_analysis(y: &Tensor, w: &ModelWeights) -> Result<Tensor> {
    let cfg = &w.config;
    match *y.shape() {
        [h, wd, c] if h % 4 == 0 && wd % 4 == 0 && h > 0 && wd > 0 && c == cfg.latent_channels => {}
        _ => {
            return Err(Error::Shape(format!(
                "hyper analysis input {:?}: needs H, W multiples of 4 and C = {}",
                y.shape(),
                cfg.latent_channels
            )))
        }
    }
    let hw = &w.hyper;
    let x = hwc_to_chw(y)?;
    let a = gelu(&conv2d(&x, &hw.analysis1, Some(&hw.analysis1_bias), 2, 1, Padding::Same, None)?);
    let z = conv2d(&a, &hw.analysis2, Some(&hw.analysis2_bias), 2, 1, Padding::Same, None)?;
    Ok(chw_to_hwc(&z))
}

/// `h_s`: nearest ×2 upsample, 3×3 conv (C_z→C), GELU, nearest ×2 upsample,
/// 3×3 conv (C→2C). Maps `[h × w × C_z]` to `[4h × 4w × 2C]`.
pub fn hyper_synthesis(z_hat: &Tensor, w: &ModelWeights) -> Result<Tensor> {
    let cfg = &w.config;
    match *z_hat.shape() {
        [h, wd, c] if h > 0 && wd > 0 && c == cfg.hyper_channels => {}
        _ => {
            return Err(Error::Shape(format!(
                "hyper synthesis input {:?}, expected [h, w, {}]",
                z_hat.shape(),
                cfg.hyper_channels
            )))
        }
    }
    let hw = &w.hyper;
    let x = upsample2(&hwc_to_chw(z_hat)?);
    let a = gelu(&conv2d(&x, &hw.synthesis1, Some(&hw.synthesis1_bias), 1, 1, Padding::Same, None)?);
    let out = conv2d(&upsample2(&a), &hw.synthesis2, Some(&hw.synthesis2_bias), 1, 1, Padding::Same, None)?;
    Ok(chw_to_hwc(&out))
}

/// One table per hyper channel from the prior scales.
pub fn prior_tables(w: &ModelWeights) -> Result<Vec<QuantizedCdf>> {
    let a = SymbolAlphabet::new(w.config.hyper_bound)?;
    w.hyper
        .prior_scales
        .data()
        .iter()
        .map(|&s| gaussian_cdf(s as f64, a))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn upsample_repeats_pixels() {
        let x = Tensor::new(vec![1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let u = upsample2(&x);
        assert_eq!(
            u.data(),
            &[1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0, 3.0, 3.0, 4.0, 4.0, 3.0, 3.0, 4.0, 4.0]
        );
    }

    #[test]
    fn layout_conversions_invert() {
        let x = Tensor::from_fn(&[3, 5, 7], |i| i as f32);
        assert_eq!(chw_to_hwc(&hwc_to_chw(&x).unwrap()), x);
    }

    #[test]
    fn shapes_follow_contract() {
        let cfg = ModelConfig::toy();
        let w = ModelWeights::init_random(&cfg, 1).unwrap();
        let y = Tensor::zeros(&[8, 12, 32]);
        let z = hyper_analysis(&y, &w).unwrap();
        assert_eq!(z.shape(), &[2, 3, 16]);
        let hyp = hyper_synthesis(&z, &w).unwrap();
        assert_eq!(hyp.shape(), &[8, 12, 64]);
        assert!(hyper_analysis(&Tensor::zeros(&[6, 12, 32]), &w).is_err());
        assert!(hyper_analysis(&Tensor::zeros(&[8, 12, 16]), &w).is_err());
    }

    #[test]
    fn prior_tables_per_channel() {
        let cfg = ModelConfig::toy();
        let w = ModelWeights::zeros(&cfg).unwrap();
        let t = prior_tables(&w).unwrap();
        assert_eq!(t.len(), 16);
        assert_eq!(t[0].size(), 65);
    }
}
