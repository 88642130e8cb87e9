//! Error measures and convergence curves.
//!
//! RE compares an estimate with the exact constrained optimum `A*`, NMSE with
//! the ground-truth abundances. Both are `‖Â − R‖²_F / ‖R‖²_F` reported in
//! dB; an exact match gives `-inf`.

use crate::dykstra::{unconverged_count, DykstraTrace, SweepRecord};
use crate::error::{Error, Result};
use crate::model::{dot, AbundanceMatrix, CoefficientMatrix, EndmemberMatrix, ImageCube};
use crate::subspace::SubspaceTransform;

fn ratio_db(a_hat: &AbundanceMatrix, reference: &AbundanceMatrix) -> Result<f64> {
    if a_hat.data().shape() != reference.data().shape() {
        return Err(Error::ShapeMismatch {
            expected: reference.data().shape(),
            found: a_hat.data().shape(),
        });
    }
    let denom = reference.data().norm_squared();
    if denom == 0.0 {
        return Err(Error::ZeroReference);
    }
    let num: f64 = a_hat
        .data()
        .iter()
        .zip(reference.data().iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(10.0 * (num / denom).log10())
}

/// `10·log10(‖Â − A*‖²/‖A*‖²)`.
pub fn relative_error_db(a_hat: &AbundanceMatrix, a_star: &AbundanceMatrix) -> Result<f64> {
    ratio_db(a_hat, a_star)
}

/// `10·log10(‖Â − A‖²/‖A‖²)` against the ground truth.
pub fn nmse_db(a_hat: &AbundanceMatrix, a_true: &AbundanceMatrix) -> Result<f64> {
    ratio_db(a_hat, a_true)
}

/// `‖X − EÂ‖²_F`.
pub fn objective(e: &EndmemberMatrix, x: &ImageCube, a_hat: &AbundanceMatrix) -> Result<f64> {
    if e.n_bands() != x.n_bands() {
        return Err(Error::DimensionMismatch {
            endmember_bands: e.n_bands(),
            cube_bands: x.n_bands(),
        });
    }
    if a_hat.n_endmembers() != e.n_endmembers() || a_hat.n_pixels() != x.n_pixels() {
        return Err(Error::ShapeMismatch {
            expected: (e.n_endmembers(), x.n_pixels()),
            found: a_hat.data().shape(),
        });
    }
    let nb = e.n_bands();
    let m = e.n_endmembers();
    let es = e.data().as_slice();
    let mut total = 0.0;
    let mut resid = vec![0.0; nb];
    for j in 0..x.n_pixels() {
        resid.copy_from_slice(x.pixel(j));
        for (k, &ak) in a_hat.pixel(j).iter().enumerate().take(m) {
            for (r, ek) in resid.iter_mut().zip(&es[k * nb..(k + 1) * nb]) {
                *r -= ek * ak;
            }
        }
        total += dot(&resid, &resid);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    pub sweep: usize,
    pub time_s: f64,
    /// `‖X − EÂ‖²_F` at this sweep.
    pub objective: f64,
    pub re_db: Option<f64>,
    pub nmse_db: Option<f64>,
    pub unconverged: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConvergenceCurve {
    pub rows: Vec<CurveRow>,
}

/// Optional references for a curve.
#[derive(Debug, Clone, Copy)]
pub struct CurveReferences<'a> {
    /// Exact optimum, for RE and per-pixel convergence counts.
    pub a_star: Option<&'a AbundanceMatrix>,
    /// Ground truth, for NMSE.
    pub a_true: Option<&'a AbundanceMatrix>,
    pub pixel_tol_db: f64,
}

impl Default for CurveReferences<'_> {
    fn default() -> Self {
        Self {
            a_star: None,
            a_true: None,
            pixel_tol_db: -100.0,
        }
    }
}

/// Turns Dykstra iterates into curve rows one at a time.
pub struct CurveBuilder<'a> {
    t: &'a SubspaceTransform,
    e: &'a EndmemberMatrix,
    x: &'a ImageCube,
    refs: CurveReferences<'a>,
    u_star: Option<CoefficientMatrix>,
    rows: Vec<CurveRow>,
}

impl<'a> CurveBuilder<'a> {
    pub fn new(
        t: &'a SubspaceTransform,
        e: &'a EndmemberMatrix,
        x: &'a ImageCube,
        refs: CurveReferences<'a>,
    ) -> Result<Self> {
        let u_star = refs.a_star.map(|a| t.coefficients(a)).transpose()?;
        Ok(Self {
            t,
            e,
            x,
            refs,
            u_star,
            rows: Vec::new(),
        })
    }

    pub fn push(&mut self, record: &SweepRecord, u: &CoefficientMatrix) -> Result<()> {
        let a = self.t.inverse(u)?;
        self.push_row(record, &a, u)
    }

    /// Same as [`push`](Self::push) for an iterate already mapped back to
    /// abundances.
    pub fn push_abundances(&mut self, record: &SweepRecord, a: &AbundanceMatrix) -> Result<()> {
        let u = self.t.coefficients(a)?;
        self.push_row(record, a, &u)
    }

    fn push_row(
        &mut self,
        record: &SweepRecord,
        a: &AbundanceMatrix,
        u: &CoefficientMatrix,
    ) -> Result<()> {
        let re_db = self
            .refs
            .a_star
            .map(|r| relative_error_db(a, r))
            .transpose()?;
        let nmse = self.refs.a_true.map(|r| nmse_db(a, r)).transpose()?;
        let unconverged = self
            .u_star
            .as_ref()
            .map(|us| unconverged_count(u, us, self.refs.pixel_tol_db))
            .transpose()?;
        self.rows.push(CurveRow {
            sweep: record.sweep,
            time_s: record.elapsed_s,
            objective: objective(self.e, self.x, a)?,
            re_db,
            nmse_db: nmse,
            unconverged,
        });
        Ok(())
    }

    pub fn finish(self) -> ConvergenceCurve {
        ConvergenceCurve { rows: self.rows }
    }
}

/// One row per snapshot stored in `trace`.
pub fn build_curve(
    trace: &DykstraTrace,
    t: &SubspaceTransform,
    refs: CurveReferences<'_>,
    e: &EndmemberMatrix,
    x: &ImageCube,
) -> Result<ConvergenceCurve> {
    let mut builder = CurveBuilder::new(t, e, x, refs)?;
    for snap in &trace.snapshots {
        let record = trace
            .records
            .iter()
            .find(|r| r.sweep == snap.sweep)
            .ok_or_else(|| {
                Error::InvalidInput(format!("no record for snapshot at sweep {}", snap.sweep))
            })?;
        builder.push(record, &snap.u)?;
    }
    Ok(builder.finish())
}
