//! End-to-end unmixing pipelines.
//!
//! * [`solve_sudap`]: subspace transform, Dykstra projection, inverse map.
//! * [`solve_ls`]: unconstrained least squares `(EᵀE)⁻¹EᵀX`.
//! * [`solve_ls_sum1`]: least squares under the sum-to-one constraint only.
//! * [`solve_oracle_activeset`]: exact fully constrained solution by active
//!   set enumeration, working directly on `E` and sharing no code with the
//!   subspace or projector paths.

use std::fmt;
use std::ops::ControlFlow;
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::dykstra::{dykstra_project_observed, DykstraConfig, DykstraTrace, SweepRecord};
use crate::error::{Error, Result};
use crate::model::{
    dot, validate_dimensions, AbundanceMatrix, CoefficientMatrix, EndmemberMatrix, ImageCube,
};
use crate::projectors::project_hyperplane;
use crate::subspace::SubspaceTransform;

/// Largest endmember count the active-set oracle accepts.
pub const ORACLE_MAX_ENDMEMBERS: usize = 14;
/// Primal tolerance on free abundances.
const ORACLE_PRIMAL_TOL: f64 = 1e-12;
/// Dual tolerance on active-bound multipliers, relative to the mean
/// diagonal of `EᵀE` (floored at 1).
const ORACLE_DUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SolverId {
    Sudap,
    Ls,
    LsSum1,
    Oracle,
}

impl fmt::Display for SolverId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverId::Sudap => "sudap",
            SolverId::Ls => "ls",
            SolverId::LsSum1 => "ls-sum1",
            SolverId::Oracle => "oracle",
        })
    }
}

impl FromStr for SolverId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sudap" => Ok(SolverId::Sudap),
            "ls" => Ok(SolverId::Ls),
            "ls-sum1" | "ls_sum1" => Ok(SolverId::LsSum1),
            "oracle" => Ok(SolverId::Oracle),
            other => Err(Error::InvalidInput(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub abundances: AbundanceMatrix,
    /// Empty for the direct solvers.
    pub trace: DykstraTrace,
    pub solver: SolverId,
    pub wall_time_s: f64,
}

fn ones(m: usize, x: &ImageCube) -> Result<AbundanceMatrix> {
    AbundanceMatrix::new(DMatrix::from_element(m, x.n_pixels(), 1.0), x.shape())
}

/// Prepared SUDAP solver for a fixed endmember matrix.
#[derive(Debug, Clone)]
pub struct Sudap {
    endmembers: EndmemberMatrix,
    /// `None` when there is a single endmember.
    transform: Option<SubspaceTransform>,
}

impl Sudap {
    pub fn new(endmembers: EndmemberMatrix) -> Result<Self> {
        let transform = match SubspaceTransform::build(&endmembers) {
            Ok(t) => Some(t),
            Err(Error::DegenerateProblem) => None,
            Err(e) => return Err(e),
        };
        Ok(Self {
            endmembers,
            transform,
        })
    }

    pub fn endmembers(&self) -> &EndmemberMatrix {
        &self.endmembers
    }

    pub fn transform(&self) -> Option<&SubspaceTransform> {
        self.transform.as_ref()
    }

    pub fn solve(&self, x: &ImageCube, cfg: &DykstraConfig) -> Result<SolveResult> {
        self.solve_observed(x, cfg, |_, _| ControlFlow::Continue(()))
    }

    /// Runs the pipeline, handing every Dykstra iterate (in subspace
    /// coordinates) to `observer`.
    pub fn solve_observed<F>(
        &self,
        x: &ImageCube,
        cfg: &DykstraConfig,
        observer: F,
    ) -> Result<SolveResult>
    where
        F: FnMut(&SweepRecord, &CoefficientMatrix) -> ControlFlow<()>,
    {
        validate_dimensions(&self.endmembers, x)?;
        let started = Instant::now();
        let Some(t) = &self.transform else {
            return Ok(SolveResult {
                abundances: ones(1, x)?,
                trace: DykstraTrace::empty(),
                solver: SolverId::Sudap,
                wall_time_s: started.elapsed().as_secs_f64(),
            });
        };
        let y = t.forward(&self.endmembers, x)?;
        let (u, trace) = dykstra_project_observed(t, &y, cfg, observer)?;
        let abundances = t.inverse(&u)?.with_shape(x.shape())?;
        Ok(SolveResult {
            abundances,
            trace,
            solver: SolverId::Sudap,
            wall_time_s: started.elapsed().as_secs_f64(),
        })
    }
}

pub fn solve_sudap(e: &EndmemberMatrix, x: &ImageCube, cfg: &DykstraConfig) -> Result<SolveResult> {
    let started = Instant::now();
    let mut result = Sudap::new(e.clone())?.solve(x, cfg)?;
    result.wall_time_s = started.elapsed().as_secs_f64();
    Ok(result)
}

fn direct(solver: SolverId, started: Instant, abundances: AbundanceMatrix) -> SolveResult {
    SolveResult {
        abundances,
        trace: DykstraTrace::empty(),
        solver,
        wall_time_s: started.elapsed().as_secs_f64(),
    }
}

pub fn solve_ls(e: &EndmemberMatrix, x: &ImageCube) -> Result<SolveResult> {
    validate_dimensions(e, x)?;
    let started = Instant::now();
    let a = if e.n_endmembers() == 1 {
        let col = e.data().column(0);
        let g = col.norm_squared();
        let row = DMatrix::from_fn(1, x.n_pixels(), |_, j| dot(col.as_slice(), x.pixel(j)) / g);
        AbundanceMatrix::new(row, x.shape())?
    } else {
        let t = SubspaceTransform::build(e)?;
        t.inverse(&t.forward(e, x)?)?.with_shape(x.shape())?
    };
    Ok(direct(SolverId::Ls, started, a))
}

pub fn solve_ls_sum1(e: &EndmemberMatrix, x: &ImageCube) -> Result<SolveResult> {
    validate_dimensions(e, x)?;
    let started = Instant::now();
    let a = if e.n_endmembers() == 1 {
        ones(1, x)?
    } else {
        let t = SubspaceTransform::build(e)?;
        let y = t.forward(e, x)?;
        t.inverse(&project_hyperplane(&t, &y))?
            .with_shape(x.shape())?
    };
    Ok(direct(SolverId::LsSum1, started, a))
}

/// Free-set masks ordered by decreasing size, i.e. by increasing number of
/// abundances forced to zero. The empty free set is excluded.
fn free_sets_by_active_count(m: usize) -> Vec<u32> {
    let full = (1u32 << m) - 1;
    let mut masks: Vec<u32> = (1..=full).collect();
    masks.sort_by_key(|mask| (m as u32 - mask.count_ones(), *mask ^ full));
    masks
}

/// Fully constrained least squares for one pixel from `G = EᵀE` and
/// `h = Eᵀx`. Returns the abundances and the indices held at zero.
pub fn oracle_pixel(gram: &DMatrix<f64>, h: &[f64]) -> Option<(Vec<f64>, Vec<usize>)> {
    let m = gram.nrows();
    let masks = free_sets_by_active_count(m);
    oracle_pixel_with(gram, h, &masks, dual_tolerance(gram))
}

fn dual_tolerance(gram: &DMatrix<f64>) -> f64 {
    ORACLE_DUAL_TOL * (gram.trace() / gram.nrows() as f64).max(1.0)
}

fn oracle_pixel_with(
    gram: &DMatrix<f64>,
    h: &[f64],
    masks: &[u32],
    dual_tol: f64,
) -> Option<(Vec<f64>, Vec<usize>)> {
    let m = gram.nrows();
    for &mask in masks {
        let free: Vec<usize> = (0..m).filter(|&k| mask & (1 << k) != 0).collect();
        let active: Vec<usize> = (0..m).filter(|&k| mask & (1 << k) == 0).collect();
        let nf = free.len();
        // [G_FF 1; 1ᵀ 0] [a_F; ν] = [h_F; 1]
        let mut kkt = DMatrix::<f64>::zeros(nf + 1, nf + 1);
        let mut rhs = DVector::<f64>::zeros(nf + 1);
        for (r, &i) in free.iter().enumerate() {
            for (c, &j) in free.iter().enumerate() {
                kkt[(r, c)] = gram[(i, j)];
            }
            kkt[(r, nf)] = 1.0;
            kkt[(nf, r)] = 1.0;
            rhs[r] = h[i];
        }
        rhs[nf] = 1.0;
        let Some(sol) = kkt.lu().solve(&rhs) else {
            continue;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        if sol.rows(0, nf).iter().any(|&v| v < -ORACLE_PRIMAL_TOL) {
            continue;
        }
        let nu = sol[nf];
        // λ_k = (G a)_k − h_k + ν for the bounds held active.
        let dual_ok = active.iter().all(|&k| {
            let ga: f64 = free
                .iter()
                .enumerate()
                .map(|(r, &i)| gram[(k, i)] * sol[r])
                .sum();
            ga - h[k] + nu >= -dual_tol
        });
        if dual_ok {
            let mut a = vec![0.0; m];
            for (r, &i) in free.iter().enumerate() {
                a[i] = sol[r];
            }
            return Some((a, active));
        }
    }
    None
}

pub fn solve_oracle_activeset(e: &EndmemberMatrix, x: &ImageCube) -> Result<SolveResult> {
    validate_dimensions(e, x)?;
    let m = e.n_endmembers();
    if m > ORACLE_MAX_ENDMEMBERS {
        return Err(Error::TooManyEndmembers {
            m,
            max: ORACLE_MAX_ENDMEMBERS,
        });
    }
    let started = Instant::now();
    if m == 1 {
        return Ok(direct(SolverId::Oracle, started, ones(1, x)?));
    }
    let gram = e.gram();
    let masks = free_sets_by_active_count(m);
    let dual_tol = dual_tolerance(&gram);
    let es = e.data().as_slice();
    let nb = e.n_bands();
    let columns: Vec<Result<Vec<f64>>> = (0..x.n_pixels())
        .into_par_iter()
        .map(|j| {
            let xj = x.pixel(j);
            let h: Vec<f64> = (0..m).map(|i| dot(&es[i * nb..(i + 1) * nb], xj)).collect();
            oracle_pixel_with(&gram, &h, &masks, dual_tol)
                .map(|(a, _)| a)
                .ok_or(Error::NoKktPoint { pixel: j })
        })
        .collect();
    let mut data = Vec::with_capacity(m * x.n_pixels());
    for col in columns {
        data.extend(col?);
    }
    let a = AbundanceMatrix::new(DMatrix::from_vec(m, x.n_pixels(), data), x.shape())?;
    Ok(direct(SolverId::Oracle, started, a))
}

/// Clamps entries in `[−eps, 0)` to zero and renormalises each column to
/// sum to one. Entries below `−eps` are left as they are.
pub fn clip_small_negatives(a: &AbundanceMatrix, eps: f64) -> Result<AbundanceMatrix> {
    let m = a.n_endmembers();
    let mut data = a.data().clone();
    for col in data.as_mut_slice().chunks_exact_mut(m) {
        let mut changed = false;
        for v in col.iter_mut() {
            if *v < 0.0 && *v >= -eps {
                *v = 0.0;
                changed = true;
            }
        }
        if changed {
            let s: f64 = col.iter().sum();
            if s > 0.0 {
                col.iter_mut().for_each(|v| *v /= s);
            }
        }
    }
    AbundanceMatrix::new(data, a.shape())
}

pub fn solve(
    solver: SolverId,
    e: &EndmemberMatrix,
    x: &ImageCube,
    cfg: &DykstraConfig,
) -> Result<SolveResult> {
    match solver {
        SolverId::Sudap => solve_sudap(e, x, cfg),
        SolverId::Ls => solve_ls(e, x),
        SolverId::LsSum1 => solve_ls_sum1(e, x),
        SolverId::Oracle => solve_oracle_activeset(e, x),
    }
}
