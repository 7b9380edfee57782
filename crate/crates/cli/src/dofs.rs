//! Trefftz versus full polynomial space dimensions.

use std::io::{self, Write};

use trefftz_dg::Variant;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DofRow {
    pub p: usize,
    pub trefftz_tm2d: usize,
    /// Three field components times `dim P_p(x, y, t)`.
    pub full_tm2d: usize,
    pub trefftz_3d: usize,
    /// Six field components times `dim P_p(x, y, z, t)`.
    pub full_3d: usize,
}

impl DofRow {
    pub fn ratio_tm2d(&self) -> f64 {
        self.trefftz_tm2d as f64 / self.full_tm2d as f64
    }

    pub fn ratio_3d(&self) -> f64 {
        self.trefftz_3d as f64 / self.full_3d as f64
    }
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("p_max = {0} exceeds the supported maximum of 10")]
pub struct PmaxTooLarge(pub usize);

pub fn dof_table(p_max: usize) -> Result<Vec<DofRow>, PmaxTooLarge> {
    if p_max > 10 {
        return Err(PmaxTooLarge(p_max));
    }
    Ok((0..=p_max)
        .map(|p| DofRow {
            p,
            trefftz_tm2d: Variant::DivFreeTM2D.dimension(p),
            full_tm2d: 3 * binomial(p + 3, 3),
            trefftz_3d: Variant::Full3D.dimension(p),
            full_3d: 6 * binomial(p + 4, 4),
        })
        .collect())
}

pub fn write_dof_table<W: Write>(rows: &[DofRow], mut w: W) -> io::Result<()> {
    writeln!(w, "p,trefftz_tm2d,full_tm2d,ratio_tm2d,trefftz_3d,full_3d,ratio_3d")?;
    for r in rows {
        writeln!(w, "{},{},{},{:.6},{},{},{:.6}", r.p, r.trefftz_tm2d, r.full_tm2d, r.ratio_tm2d(), r.trefftz_3d, r.full_3d, r.ratio_3d())?;
    }
    Ok(())
}
