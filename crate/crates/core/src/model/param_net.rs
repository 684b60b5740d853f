//! Parameter net: per-group convolutions over `[context ‖ hyper]` producing
//! `(μ, σ)`.

use super::{ModelWeights, ParamNetWeights, SIGMA_MAX, SIGMA_MIN};
use crate::exec;
use crate::numerics::{conv2d_into, gelu_scalar, ConvGeom, Padding, Tensor};
use crate::{Error, Result};

/// `σ = exp(clamp(raw, ln σ_min, ln σ_max))`, then clamped again so the bounds
/// are hit exactly despite rounding in `exp`.
pub fn sigma_from_raw(raw: f32) -> f32 {
    let lo = libm::logf(SIGMA_MIN);
    let hi = libm::logf(SIGMA_MAX);
    libm::expf(raw.clamp(lo, hi)).clamp(SIGMA_MIN, SIGMA_MAX)
}

fn geom(cin: usize, cout: usize, k: usize, h: usize, w: usize) -> ConvGeom {
    ConvGeom {
        cin,
        h,
        w,
        cout,
        kh: k,
        kw: k,
        stride: 1,
        groups: 1,
        padding: Padding::Same,
    }
}

/// One group: `context[hw × c]` and `hyper[hw × 2c]` on an `h×w` grid.
/// Stack: 3×3 (3c→3c) + GELU, 3×3 (3c→3c) + GELU, 1×1 (3c→2c); the first `c`
/// output channels are `μ`, the rest the raw log-scale.
pub(crate) fn parameter_net_group(
    context: &[f32],
    hyper: &[f32],
    pn: &ParamNetWeights,
    h: usize,
    w: usize,
    c: usize,
) -> (Vec<f32>, Vec<f32>) {
    let hw = h * w;
    let c3 = 3 * c;
    // Token-major -> channel-major, context channels first.
    let mut x = vec![0.0f32; c3 * hw];
    for t in 0..hw {
        for ch in 0..c {
            x[ch * hw + t] = context[t * c + ch];
        }
        for ch in 0..2 * c {
            x[(c + ch) * hw + t] = hyper[t * 2 * c + ch];
        }
    }
    let mut y = vec![0.0f32; c3 * hw];
    conv2d_into(&x, pn.conv1.data(), Some(pn.bias1.data()), &geom(c3, c3, 3, h, w), &mut y);
    y.iter_mut().for_each(|v| *v = gelu_scalar(*v));
    conv2d_into(&y, pn.conv2.data(), Some(pn.bias2.data()), &geom(c3, c3, 3, h, w), &mut x);
    x.iter_mut().for_each(|v| *v = gelu_scalar(*v));
    let mut out = vec![0.0f32; 2 * c * hw];
    conv2d_into(&x, pn.conv3.data(), Some(pn.bias3.data()), &geom(c3, 2 * c, 1, h, w), &mut out);
    let mut mu = vec![0.0f32; hw * c];
    let mut sigma = vec![0.0f32; hw * c];
    for t in 0..hw {
        for ch in 0..c {
            mu[t * c + ch] = out[ch * hw + t];
            sigma[t * c + ch] = sigma_from_raw(out[(c + ch) * hw + t]);
        }
    }
    (mu, sigma)
}

/// Runs the parameter net on every group. `context` is `[G × hw × c]`,
/// `hyper_grouped` `[G × hw × 2c]`; returns grouped `(μ, σ)`.
pub fn parameter_net(
    context: &Tensor,
    hyper_grouped: &Tensor,
    w: &ModelWeights,
    h: usize,
    wd: usize,
) -> Result<(Tensor, Tensor)> {
    let c = w.config.group_channels();
    let hw = h * wd;
    let g = match *context.shape() {
        [g, t, cc] if t == hw && cc == c => g,
        _ => {
            return Err(Error::Shape(format!(
                "context {:?}, expected [G, {hw}, {c}]",
                context.shape()
            )))
        }
    };
    if hyper_grouped.shape() != [g, hw, 2 * c] {
        return Err(Error::Shape(format!(
            "grouped hyper {:?}, expected [{g}, {hw}, {}]",
            hyper_grouped.shape(),
            2 * c
        )));
    }
    let parts = exec::map_range(g, |gi| {
        parameter_net_group(
            &context.data()[gi * hw * c..][..hw * c],
            &hyper_grouped.data()[gi * hw * 2 * c..][..hw * 2 * c],
            &w.param_net,
            h,
            wd,
            c,
        )
    });
    let mut mu = Vec::with_capacity(g * hw * c);
    let mut sigma = Vec::with_capacity(g * hw * c);
    for (m, s) in parts {
        mu.extend(m);
        sigma.extend(s);
    }
    Ok((
        Tensor::new(vec![g, hw, c], mu)?,
        Tensor::new(vec![g, hw, c], sigma)?,
    ))
}
