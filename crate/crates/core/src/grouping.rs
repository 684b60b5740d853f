//! Spatial-channel group partition `f: H×W×C → G×hw×c` and its inverse.
//!
//! Channels are split evenly into `k_c` slices and every slice is split
//! spatially into `k_h·k_w` steps. Tokens of one group are packed row-major
//! into a dense `h×w` grid (`h = H/k_h`, `w = W/k_w`), which is also the grid
//! the depthwise position convolution and the parameter net run on.

use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpatialPattern {
    /// No spatial split (`k_h = k_w = 1`).
    Single,
    /// Two steps: `(i+j)` even, then odd (`k_h = 1, k_w = 2`).
    Checkerboard2,
    /// Four steps over each 2×2 block (`k_h = k_w = 2`).
    Quad4,
}

/// Pixel offsets of the quad4 steps inside a 2×2 block, in decode order.
/// Steps 2 and 3 see decoded neighbours both horizontally and vertically.
pub const QUAD4_OFFSETS: [(usize, usize); 4] = [(0, 0), (1, 1), (0, 1), (1, 0)];

impl SpatialPattern {
    pub fn factors(self) -> (usize, usize) {
        match self {
            SpatialPattern::Single => (1, 1),
            SpatialPattern::Checkerboard2 => (1, 2),
            SpatialPattern::Quad4 => (2, 2),
        }
    }

    pub fn steps(self) -> usize {
        let (kh, kw) = self.factors();
        kh * kw
    }

    /// Coordinate of a spatial step inside the `k_h × k_w` step lattice.
    pub fn step_offset(self, step: usize) -> (usize, usize) {
        match self {
            SpatialPattern::Single => (0, 0),
            SpatialPattern::Checkerboard2 => (0, step),
            SpatialPattern::Quad4 => QUAD4_OFFSETS[step],
        }
    }

    pub fn code(self) -> u8 {
        match self {
            SpatialPattern::Single => 0,
            SpatialPattern::Checkerboard2 => 1,
            SpatialPattern::Quad4 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => SpatialPattern::Single,
            1 => SpatialPattern::Checkerboard2,
            2 => SpatialPattern::Quad4,
            _ => return Err(Error::Config(format!("unknown spatial pattern code {code}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            SpatialPattern::Single => "single",
            SpatialPattern::Checkerboard2 => "checkerboard2",
            SpatialPattern::Quad4 => "quad4",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "single" | "1" => Ok(SpatialPattern::Single),
            "checkerboard2" | "checkerboard" | "2" => Ok(SpatialPattern::Checkerboard2),
            "quad4" | "4" => Ok(SpatialPattern::Quad4),
            _ => Err(Error::Config(format!("unknown spatial pattern {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum GroupOrder {
    /// All spatial steps of a channel slice before the next slice.
    #[default]
    SpatialFirst,
    /// All channel slices of a spatial step before the next step.
    ChannelFirst,
}

impl GroupOrder {
    pub fn code(self) -> u8 {
        match self {
            GroupOrder::SpatialFirst => 0,
            GroupOrder::ChannelFirst => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(GroupOrder::SpatialFirst),
            1 => Ok(GroupOrder::ChannelFirst),
            _ => Err(Error::Config(format!("unknown group order code {code}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sfo" | "spatial_first" => Ok(GroupOrder::SpatialFirst),
            "cfo" | "channel_first" => Ok(GroupOrder::ChannelFirst),
            _ => Err(Error::Config(format!("unknown group order {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            GroupOrder::SpatialFirst => "sfo",
            GroupOrder::ChannelFirst => "cfo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GroupScheme {
    channel_slices: usize,
    pattern: SpatialPattern,
    order: GroupOrder,
}

/// Sizes of one grouped layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupDims {
    pub groups: usize,
    /// Packed grid rows per group.
    pub h: usize,
    /// Packed grid columns per group.
    pub w: usize,
    /// Channels per token.
    pub c: usize,
}

impl GroupDims {
    pub fn hw(&self) -> usize {
        self.h * self.w
    }
}

impl GroupScheme {
    pub fn new(channel_slices: usize, pattern: SpatialPattern, order: GroupOrder) -> Result<Self> {
        if channel_slices == 0 {
            return Err(Error::Config("channel slice count must be at least 1".into()));
        }
        Ok(Self {
            channel_slices,
            pattern,
            order,
        })
    }

    /// The trivial scheme: one group holding the whole tensor.
    pub fn single() -> Self {
        Self {
            channel_slices: 1,
            pattern: SpatialPattern::Single,
            order: GroupOrder::SpatialFirst,
        }
    }

    pub fn channel_slices(&self) -> usize {
        self.channel_slices
    }

    pub fn pattern(&self) -> SpatialPattern {
        self.pattern
    }

    pub fn order(&self) -> GroupOrder {
        self.order
    }

    pub fn kh(&self) -> usize {
        self.pattern.factors().0
    }

    pub fn kw(&self) -> usize {
        self.pattern.factors().1
    }

    pub fn group_count(&self) -> usize {
        self.channel_slices * self.pattern.steps()
    }

    /// Group index of (channel slice, spatial step) under the autoregression order.
    pub fn group_index(&self, slice: usize, step: usize) -> usize {
        match self.order {
            GroupOrder::SpatialFirst => slice * self.pattern.steps() + step,
            GroupOrder::ChannelFirst => step * self.channel_slices + slice,
        }
    }

    /// Inverse of [`GroupScheme::group_index`].
    pub fn slice_step(&self, g: usize) -> (usize, usize) {
        match self.order {
            GroupOrder::SpatialFirst => (g / self.pattern.steps(), g % self.pattern.steps()),
            GroupOrder::ChannelFirst => (g % self.channel_slices, g / self.channel_slices),
        }
    }

    /// Lattice coordinate `(x, y, z)` of a group: spatial step offset along
    /// rows and columns, channel slice along depth.
    pub fn group_coords(&self, g: usize) -> (usize, usize, usize) {
        let (slice, step) = self.slice_step(g);
        let (x, y) = self.pattern.step_offset(step);
        (x, y, slice)
    }

    /// Checks divisibility of a tensor of `h×w×c` against this scheme.
    pub fn dims(&self, h: usize, w: usize, c: usize) -> Result<GroupDims> {
        let (kh, kw) = self.pattern.factors();
        if h == 0 || w == 0 || c == 0 || !h.is_multiple_of(kh) || !w.is_multiple_of(kw) || !c.is_multiple_of(self.channel_slices) {
            return Err(Error::Shape(format!(
                "{h}x{w}x{c} not divisible by scheme {}x{} (k_h={kh}, k_w={kw})",
                self.channel_slices,
                self.pattern.name()
            )));
        }
        Ok(GroupDims {
            groups: self.group_count(),
            h: h / kh,
            w: w / kw,
            c: c / self.channel_slices,
        })
    }

    /// Source pixel of token `t` of spatial step `step` on a `width`-wide image.
    fn token_pixel(&self, step: usize, t: usize, packed_w: usize) -> (usize, usize) {
        let (r, col) = (t / packed_w, t % packed_w);
        match self.pattern {
            SpatialPattern::Single => (r, col),
            SpatialPattern::Checkerboard2 => (r, 2 * col + (r + step) % 2),
            SpatialPattern::Quad4 => {
                let (di, dj) = QUAD4_OFFSETS[step];
                (2 * r + di, 2 * col + dj)
            }
        }
    }

    fn describe(&self) -> String {
        format!("{}x{}/{}", self.channel_slices, self.pattern.name(), self.order.name())
    }
}

impl std::fmt::Display for GroupScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.describe())
    }
}

/// Output of the partition: `data` is `[G × hw × c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupedLatents {
    pub scheme: GroupScheme,
    /// Source tensor dimensions `(H, W, C)`.
    pub source: (usize, usize, usize),
    pub dims: GroupDims,
    pub data: Tensor,
}

impl GroupedLatents {
    /// The `[hw × c]` slice of group `g`.
    pub fn group(&self, g: usize) -> &[f32] {
        let n = self.dims.hw() * self.dims.c;
        &self.data.data()[g * n..(g + 1) * n]
    }
}

// For every (group, token) the flat `H×W` pixel index of its source position.
fn pixel_table(scheme: &GroupScheme, w_src: usize, dims: &GroupDims) -> Vec<usize> {
    let hw = dims.hw();
    let mut table = vec![0; dims.groups * hw];
    for g in 0..dims.groups {
        let (_, step) = scheme.slice_step(g);
        for t in 0..hw {
            let (i, j) = scheme.token_pixel(step, t, dims.w);
            table[g * hw + t] = i * w_src + j;
        }
    }
    table
}

fn rank3(x: &Tensor) -> Result<(usize, usize, usize)> {
    match *x.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::Shape(format!("expected an H×W×C tensor, got {:?}", x.shape()))),
    }
}

/// Rearranges `x[H×W×C]` into `[G × hw × c]`.
pub fn partition(x: &Tensor, scheme: &GroupScheme) -> Result<GroupedLatents> {
    let (h, w, c) = rank3(x)?;
    let dims = scheme.dims(h, w, c)?;
    let table = pixel_table(scheme, w, &dims);
    let hw = dims.hw();
    let src = x.data();
    let mut out = vec![0.0f32; h * w * c];
    for g in 0..dims.groups {
        let (slice, _) = scheme.slice_step(g);
        let ch0 = slice * dims.c;
        for t in 0..hw {
            let p = table[g * hw + t];
            let dst = (g * hw + t) * dims.c;
            out[dst..dst + dims.c].copy_from_slice(&src[p * c + ch0..p * c + ch0 + dims.c]);
        }
    }
    Ok(GroupedLatents {
        scheme: *scheme,
        source: (h, w, c),
        dims,
        data: Tensor::new(vec![dims.groups, hw, dims.c], out)?,
    })
}

/// Exact inverse of [`partition`].
pub fn ungroup(g: &GroupedLatents) -> Result<Tensor> {
    let (h, w, c) = g.source;
    let dims = g.scheme.dims(h, w, c)?;
    if dims != g.dims || g.data.shape() != [dims.groups, dims.hw(), dims.c] {
        return Err(Error::Shape(format!(
            "grouped data {:?} inconsistent with source {h}x{w}x{c} under {}",
            g.data.shape(),
            g.scheme
        )));
    }
    let table = pixel_table(&g.scheme, w, &dims);
    let hw = dims.hw();
    let src = g.data.data();
    let mut out = vec![0.0f32; h * w * c];
    for gi in 0..dims.groups {
        let (slice, _) = g.scheme.slice_step(gi);
        let ch0 = slice * dims.c;
        for t in 0..hw {
            let p = table[gi * hw + t];
            let s = (gi * hw + t) * dims.c;
            out[p * c + ch0..p * c + ch0 + dims.c].copy_from_slice(&src[s..s + dims.c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// `G = k_c·k_h·k_w`, after checking that `H×W×C` divides evenly.
pub fn group_count(scheme: &GroupScheme, h: usize, w: usize, c: usize) -> Result<usize> {
    Ok(scheme.dims(h, w, c)?.groups)
}

/// Source coordinate `(i, j, k)` of channel `ch` of token `t` in group `g`.
pub fn coordinates_of(
    scheme: &GroupScheme,
    h: usize,
    w: usize,
    c: usize,
    g: usize,
    t: usize,
    ch: usize,
) -> Result<(usize, usize, usize)> {
    let dims = scheme.dims(h, w, c)?;
    if g >= dims.groups || t >= dims.hw() || ch >= dims.c {
        return Err(Error::Index(format!(
            "(group {g}, token {t}, channel {ch}) outside {}x{}x{}",
            dims.groups,
            dims.hw(),
            dims.c
        )));
    }
    let (slice, step) = scheme.slice_step(g);
    let (i, j) = scheme.token_pixel(step, t, dims.w);
    Ok((i, j, slice * dims.c + ch))
}
