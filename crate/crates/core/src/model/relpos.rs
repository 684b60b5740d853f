//! Position bias between groups in the cross-group mixer.

use crate::grouping::GroupScheme;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum RelPosMode {
    /// Learned table indexed by the 3D displacement between two groups.
    #[default]
    Rel3d,
    /// Learned table indexed by the absolute index of the attended group.
    Absolute,
    /// Learned table indexed by the Manhattan length of the 3D displacement.
    Diamond3d,
}

impl RelPosMode {
    pub fn code(self) -> u8 {
        match self {
            RelPosMode::Rel3d => 0,
            RelPosMode::Absolute => 1,
            RelPosMode::Diamond3d => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(RelPosMode::Rel3d),
            1 => Ok(RelPosMode::Absolute),
            2 => Ok(RelPosMode::Diamond3d),
            _ => Err(Error::Config(format!("unknown position mode code {code}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rel3d" => Ok(RelPosMode::Rel3d),
            "absolute" => Ok(RelPosMode::Absolute),
            "diamond3d" => Ok(RelPosMode::Diamond3d),
            _ => Err(Error::Config(format!("unknown position mode {s:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            RelPosMode::Rel3d => "rel3d",
            RelPosMode::Absolute => "absolute",
            RelPosMode::Diamond3d => "diamond3d",
        }
    }

    /// Rows of the position table for `scheme`.
    pub fn table_rows(self, scheme: &GroupScheme) -> usize {
        let (kc, kh, kw) = (scheme.channel_slices(), scheme.kh(), scheme.kw());
        match self {
            RelPosMode::Rel3d => relpos_table_size(scheme),
            RelPosMode::Absolute => scheme.group_count(),
            RelPosMode::Diamond3d => (kc - 1) + (kh - 1) + (kw - 1) + 1,
        }
    }

    /// Table row used for the bias of query group `u` against key group `v`.
    pub fn table_index(self, u: usize, v: usize, scheme: &GroupScheme) -> Result<usize> {
        match self {
            RelPosMode::Rel3d => relpos_index(u, v, scheme),
            RelPosMode::Absolute => {
                check_groups(u, v, scheme)?;
                Ok(v)
            }
            RelPosMode::Diamond3d => {
                check_groups(u, v, scheme)?;
                let (xu, yu, zu) = scheme.group_coords(u);
                let (xv, yv, zv) = scheme.group_coords(v);
                Ok(xu.abs_diff(xv) + yu.abs_diff(yv) + zu.abs_diff(zv))
            }
        }
    }

    /// Full `G×G` index table (only entries with `v ≤ u` are ever read).
    pub(crate) fn index_table(self, scheme: &GroupScheme) -> Vec<usize> {
        let g = scheme.group_count();
        let mut t = Vec::with_capacity(g * g);
        for u in 0..g {
            for v in 0..g {
                t.push(self.table_index(u, v, scheme).expect("indices in range"));
            }
        }
        t
    }
}

/// `n_p = (2k_c−1)(2k_h−1)(2k_w−1)`.
pub fn relpos_table_size(scheme: &GroupScheme) -> usize {
    (2 * scheme.channel_slices() - 1) * (2 * scheme.kh() - 1) * (2 * scheme.kw() - 1)
}

fn check_groups(u: usize, v: usize, scheme: &GroupScheme) -> Result<()> {
    let g = scheme.group_count();
    if u >= g || v >= g {
        return Err(Error::Index(format!("group pair ({u}, {v}) with {g} groups")));
    }
    Ok(())
}

/// Table row for the group pair `(u, v)`, from the displacement of their
/// lattice coordinates.
pub fn relpos_index(u: usize, v: usize, scheme: &GroupScheme) -> Result<usize> {
    check_groups(u, v, scheme)?;
    let (xu, yu, zu) = scheme.group_coords(u);
    let (xv, yv, zv) = scheme.group_coords(v);
    displacement_index(
        xu as i64 - xv as i64,
        yu as i64 - yv as i64,
        zu as i64 - zv as i64,
        scheme,
    )
}

/// Table row for the displacement `(dx, dy, dz)`:
/// `(dz+k_c−1)(2k_h−1)(2k_w−1) + (dx+k_h−1)(2k_w−1) + (dy+k_w−1)`.
pub fn displacement_index(dx: i64, dy: i64, dz: i64, scheme: &GroupScheme) -> Result<usize> {
    let (kc, kh, kw) = (
        scheme.channel_slices() as i64,
        scheme.kh() as i64,
        scheme.kw() as i64,
    );
    if dx.abs() >= kh || dy.abs() >= kw || dz.abs() >= kc {
        return Err(Error::Index(format!("displacement ({dx}, {dy}, {dz}) outside lattice")));
    }
    Ok(((dz + kc - 1) * (2 * kh - 1) * (2 * kw - 1) + (dx + kh - 1) * (2 * kw - 1) + (dy + kw - 1)) as usize)
}
