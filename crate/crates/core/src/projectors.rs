//! Closed-form projections onto the hyperplane `S` and onto `S ∩ Nᵢ`.
//!
//! Two independent routes are provided for `Π_{S∩Nᵢ}`:
//!
//! * the geometric route parametrises `S` as `c + range(P)`, projects the
//!   reduced point onto the image of the half-space and maps back, giving
//!   `Π_S(z) + τ sᵢ` with `τ = max{0, fᵢ − sᵢᵀz}`;
//! * the KKT route solves the optimality conditions directly, giving
//!   `z − z̃ + τ sᵢ` with `z̃ = c(bᵀz − 1)` and
//!   `τ = max{0, −dᵢᵀ(z − z̃)/‖Pdᵢ‖}`.
//!
//! Both agree to rounding. The per-column kernels are what the Dykstra
//! driver runs; the matrix functions apply them to every column in parallel.

use rayon::prelude::*;

use crate::error::Result;
use crate::model::{dot, CoefficientMatrix};
use crate::subspace::{HalfSpace, SubspaceTransform, PIXEL_CHUNK};

/// Step lengths of one half-space correction.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfspaceProjection {
    /// `τ ≥ 0` per column.
    pub tau: Vec<f64>,
    /// Columns that were moved (`τ > 0`).
    pub moved_mask: Vec<bool>,
}

impl HalfspaceProjection {
    fn from_tau(tau: Vec<f64>) -> Self {
        let moved_mask = tau.iter().map(|&t| t > 0.0).collect();
        Self { tau, moved_mask }
    }
}

/// `z ← z − c(bᵀz − 1)`.
#[inline]
pub fn hyperplane_in_place(t: &SubspaceTransform, z: &mut [f64]) {
    let excess = dot(t.b().as_slice(), z) - 1.0;
    for (zk, ck) in z.iter_mut().zip(t.c().iter()) {
        *zk -= ck * excess;
    }
}

/// Geometric projection of one column onto `S ∩ Nᵢ`. With `on_s` the
/// caller guarantees `bᵀz = 1` and the hyperplane step is skipped.
/// Returns `τ`.
#[inline]
pub fn geometric_in_place(t: &SubspaceTransform, h: &HalfSpace, z: &mut [f64], on_s: bool) -> f64 {
    let tau = (h.f - dot(&h.s, z)).max(0.0);
    if !on_s {
        // Π_S(z) = c + P(z − c)
        let c = t.c().as_slice();
        for (zk, ck) in z.iter_mut().zip(c) {
            *zk -= ck;
        }
        t.apply_p(z);
        for (zk, ck) in z.iter_mut().zip(c) {
            *zk += ck;
        }
    }
    if tau > 0.0 {
        for (zk, sk) in z.iter_mut().zip(&h.s) {
            *zk += tau * sk;
        }
    }
    tau
}

/// KKT-form projection of one column onto `S ∩ Nᵢ`. Returns `τ`.
#[inline]
pub fn kkt_in_place(t: &SubspaceTransform, h: &HalfSpace, z: &mut [f64]) -> f64 {
    hyperplane_in_place(t, z);
    let tau = (-dot(&h.d, z) / h.p_norm).max(0.0);
    if tau > 0.0 {
        for (zk, sk) in z.iter_mut().zip(&h.s) {
            *zk += tau * sk;
        }
    }
    tau
}

fn map_columns<F>(z: &CoefficientMatrix, kernel: F) -> (CoefficientMatrix, Vec<f64>)
where
    F: Fn(&mut [f64]) -> f64 + Sync,
{
    let m = z.n_rows();
    let mut out = z.0.clone();
    let mut tau = vec![0.0; z.n_pixels()];
    if m > 0 {
        out.as_mut_slice()
            .par_chunks_mut(m * PIXEL_CHUNK)
            .zip(tau.par_chunks_mut(PIXEL_CHUNK))
            .for_each(|(cols, taus)| {
                for (col, t) in cols.chunks_exact_mut(m).zip(taus) {
                    *t = kernel(col);
                }
            });
    }
    (CoefficientMatrix(out), tau)
}

/// `Π_S(Z) = Z − c(bᵀZ − 1ᵀ)`, column-wise.
pub fn project_hyperplane(t: &SubspaceTransform, z: &CoefficientMatrix) -> CoefficientMatrix {
    map_columns(z, |col| {
        hyperplane_in_place(t, col);
        0.0
    })
    .0
}

/// `Π_{S∩Nᵢ}(Z)` by the geometric route. `i` is zero-based.
pub fn project_intersection_geometric(
    t: &SubspaceTransform,
    i: usize,
    z: &CoefficientMatrix,
    z_on_s: bool,
) -> Result<(CoefficientMatrix, HalfspaceProjection)> {
    let h = t.half_space(i)?;
    let (u, tau) = map_columns(z, |col| geometric_in_place(t, h, col, z_on_s));
    Ok((u, HalfspaceProjection::from_tau(tau)))
}

/// `Π_{S∩Nᵢ}(Z)` by the KKT route. `i` is zero-based.
pub fn project_intersection_kkt(
    t: &SubspaceTransform,
    i: usize,
    z: &CoefficientMatrix,
) -> Result<(CoefficientMatrix, HalfspaceProjection)> {
    let h = t.half_space(i)?;
    let (u, tau) = map_columns(z, |col| kkt_in_place(t, h, col));
    Ok((u, HalfspaceProjection::from_tau(tau)))
}
