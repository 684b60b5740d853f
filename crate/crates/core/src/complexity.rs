//! Attention cost models.
//!
//! Costs are written as `a·d_h² + b·d_h`: full self-attention over all `G·h·w`
//! tokens against the decomposed module, where tokens attend within their
//! group (`h·w` keys) and across groups at one position (`G` keys). Only the
//! Q/K/V/O projections and the score and value products are counted.

use crate::grouping::GroupedLatents;
use crate::model::{forward_stack_counted, MacBreakdown, ModelWeights};
use crate::{Error, Result};

/// `(a, b)` for `4·Ghw·d_h² + 2·(Ghw)²·d_h`.
pub fn flops_full_attention(g: u64, h: u64, w: u64) -> (u64, u64) {
    let n = g * h * w;
    (4 * n, 2 * n * n)
}

/// `(a, b)` for `4·(hw + G)·d_h² + 2·((hw)² + G²)·d_h`.
pub fn flops_grouped_mixer(g: u64, h: u64, w: u64) -> (u64, u64) {
    let hw = h * w;
    (4 * (hw + g), 2 * (hw * hw + g * g))
}

/// Evaluates `a·d² + b·d`.
pub fn evaluate((a, b): (u64, u64), d: u64) -> u64 {
    a * d * d + b * d
}

/// Analytic and measured attention-path costs of one forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexityReport {
    pub groups: usize,
    pub h: usize,
    pub w: usize,
    pub head_dim: usize,
    pub dim: usize,
    pub depth: usize,
    pub full: (u64, u64),
    pub grouped: (u64, u64),
    pub macs: MacBreakdown,
}

impl ComplexityReport {
    /// Measured projection, score and value MACs of one cross plus one inner
    /// mixer, normalised to the per-token form of the analytic model: inner
    /// costs divided by `G`, cross costs by `hw`.
    pub fn measured_per_module(&self) -> f64 {
        let (g, hw, l) = (self.groups as f64, (self.h * self.w) as f64, self.depth.max(1) as f64);
        let inner = (self.macs.inner_proj + self.macs.inner_scores) as f64 / g;
        let cross = (self.macs.cross_proj + self.macs.cross_scores) as f64 / hw;
        (inner + cross) / l
    }

    /// Grouped-mixer analytic cost at the model width (projections act on all
    /// heads at once, so the width plays the role of `d_h`).
    pub fn analytic_per_module(&self) -> f64 {
        evaluate(self.grouped, self.dim as u64) as f64
    }

    pub fn ratio(&self) -> f64 {
        self.measured_per_module() / self.analytic_per_module()
    }

    /// Plain-text table.
    pub fn table(&self) -> String {
        let d = self.head_dim as u64;
        let mut s = String::new();
        s.push_str(&format!("G={} h={} w={} d_h={}", self.groups, self.h, self.w, self.head_dim));
        if self.is_measured() {
            s.push_str(&format!(" D={} L={}", self.dim, self.depth));
        }
        s.push('\n');
        s.push_str(&format!("{:<16}{:>14}{:>18}{:>20}\n", "model", "a (d_h^2)", "b (d_h)", "total at d_h"));
        for (name, (a, b)) in [("full attention", self.full), ("grouped mixer", self.grouped)] {
            s.push_str(&format!("{name:<16}{a:>14}{b:>18}{:>20}\n", evaluate((a, b), d)));
        }
        if self.is_measured() {
            s.push_str(&format!(
                "measured per module {:.0}, analytic at D {:.0}, ratio {:.3}\n",
                self.measured_per_module(),
                self.analytic_per_module(),
                self.ratio()
            ));
        }
        s
    }

    /// Whether the report carries counted MACs (see [`measure`]).
    pub fn is_measured(&self) -> bool {
        self.depth > 0
    }

    /// `key=value` lines.
    pub fn key_values(&self) -> String {
        let m = &self.macs;
        let mut lines = vec![
            format!("groups={}", self.groups),
            format!("h={}", self.h),
            format!("w={}", self.w),
            format!("head_dim={}", self.head_dim),
            format!("full_a={}", self.full.0),
            format!("full_b={}", self.full.1),
            format!("grouped_a={}", self.grouped.0),
            format!("grouped_b={}", self.grouped.1),
        ];
        if !self.is_measured() {
            return lines.join("\n");
        }
        lines.extend([
            format!("measured_inner_proj={}", m.inner_proj),
            format!("measured_inner_scores={}", m.inner_scores),
            format!("measured_cross_proj={}", m.cross_proj),
            format!("measured_cross_scores={}", m.cross_scores),
            format!("measured_cross_relpos={}", m.cross_relpos),
            format!("measured_total={}", m.total()),
            format!("measured_over_analytic={:.6}", self.ratio()),
        ]);
        lines.join("\n")
    }
}

/// Analytic coefficients only.
pub fn report_analytic(groups: usize, h: usize, w: usize, head_dim: usize) -> ComplexityReport {
    let (g, hh, ww) = (groups as u64, h as u64, w as u64);
    ComplexityReport {
        groups,
        h,
        w,
        head_dim,
        dim: head_dim,
        depth: 0,
        full: flops_full_attention(g, hh, ww),
        grouped: flops_grouped_mixer(g, hh, ww),
        macs: MacBreakdown::default(),
    }
}

/// Runs one counted forward pass over `latents` and reports it next to the
/// analytic model.
pub fn measure(latents: &GroupedLatents, w: &ModelWeights) -> Result<ComplexityReport> {
    let cfg = &w.config;
    if cfg.depth == 0 {
        return Err(Error::Config("a depth-0 model has no attention to measure".into()));
    }
    let mut macs = MacBreakdown::default();
    forward_stack_counted(latents, w, &mut macs)?;
    let d = latents.dims;
    Ok(ComplexityReport {
        dim: cfg.dim,
        depth: cfg.depth,
        macs,
        ..report_analytic(d.groups, d.h, d.w, cfg.head_dim())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grouping::{partition, GroupOrder, GroupScheme, SpatialPattern};
    use crate::model::ModelConfig;
    use crate::numerics::Tensor;

    #[test]
    fn reproduces_reference_coefficients() {
        assert_eq!(flops_full_attention(40, 16, 24), (61_440, 471_859_200));
        assert_eq!(flops_grouped_mixer(40, 16, 24), (1_696, 298_112));
    }

    #[test]
    fn unit_case() {
        assert_eq!(flops_full_attention(1, 1, 1), (4, 2));
        assert_eq!(flops_grouped_mixer(1, 1, 1), (8, 4));
    }

    #[test]
    fn grouped_is_cheaper_when_decomposition_helps() {
        for g in 1..20u64 {
            for h in 1..8u64 {
                for w in 1..8u64 {
                    let f = flops_full_attention(g, h, w);
                    let m = flops_grouped_mixer(g, h, w);
                    if g * h * w > h * w + g {
                        assert!(m.0 < f.0 && m.1 < f.1, "{g} {h} {w}");
                    }
                    assert!(flops_full_attention(g + 1, h, w).1 > f.1);
                    assert!(flops_grouped_mixer(g, h + 1, w).1 > m.1);
                }
            }
        }
    }

    fn run(cfg: &ModelConfig, hh: usize, ww: usize) -> ComplexityReport {
        let w = ModelWeights::init_random(cfg, 1).unwrap();
        let y = Tensor::zeros(&[hh, ww, cfg.latent_channels]);
        measure(&partition(&y, &cfg.scheme).unwrap(), &w).unwrap()
    }

    #[test]
    fn measured_cost_tracks_analytic() {
        let r = run(&ModelConfig::toy(), 16, 16);
        assert!((0.5..=2.0).contains(&r.ratio()), "{}", r.ratio());
        assert!(r.table().contains("grouped mixer"));
        assert!(r.key_values().contains("measured_total="));
        let a = report_analytic(40, 16, 24, 32);
        assert!(!a.table().contains("measured") && !a.key_values().contains("measured"));
        assert!(a.key_values().contains("grouped_b=298112"));
    }

    #[test]
    fn cross_scores_grow_quadratically_in_groups() {
        let base = ModelConfig {
            depth: 1,
            dim: 16,
            heads: 2,
            latent_channels: 16,
            hyper_channels: 8,
            ..ModelConfig::toy()
        };
        let with = |k| ModelConfig {
            scheme: GroupScheme::new(k, SpatialPattern::Checkerboard2, GroupOrder::SpatialFirst).unwrap(),
            ..base.clone()
        };
        let a = run(&with(4), 8, 8);
        let b = run(&with(8), 8, 8);
        let ratio = b.macs.cross_scores as f64 / a.macs.cross_scores as f64;
        assert!((3.0..=4.5).contains(&ratio), "{ratio}");
        // Per token, inner costs do not depend on the group count.
        let per_token = |r: &ComplexityReport| r.macs.inner_scores as f64 / (r.groups * r.h * r.w) as f64;
        assert_eq!(per_token(&a), per_token(&b));
    }
}
