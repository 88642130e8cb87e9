//! The subspace transform `D` with `DᵀD = EᵀE`.
//!
//! Under `U = DA` the unmixing objective `‖X − EA‖²` equals `‖Y − U‖²` plus
//! a constant, with `Y = D⁻ᵀEᵀX`. The sum-to-one constraint becomes the
//! hyperplane `bᵀu = 1` with `bᵀ = 1ᵀD⁻¹`, and `aᵢ ≥ 0` becomes `dᵢᵀu ≥ 0`
//! where `dᵢᵀ` is the i-th row of `D⁻¹`.
//!
//! Besides `D` and `D⁻¹` the transform carries everything the projectors
//! need per half-space: `‖Pdᵢ‖`, the unit direction `sᵢ = Pdᵢ/‖Pdᵢ‖` and
//! the offset `fᵢ = −dᵢᵀc/‖Pdᵢ‖`, where `c = b/‖b‖²` and
//! `P = I − bbᵀ/‖b‖²` is the orthogonal projector onto `{u : bᵀu = 0}`.
//! `P` is never stored; it is always applied as a rank-one update.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{
    dot, validate_dimensions, AbundanceMatrix, CoefficientMatrix, ConstraintSets, EndmemberMatrix,
    ImageCube,
};

/// Relative pivot threshold below which the Gram matrix is declared singular.
pub const RANK_TOL: f64 = 1e-12;

/// Pixels handed to one rayon task by the column-parallel kernels.
pub(crate) const PIXEL_CHUNK: usize = 256;

/// Geometry of one half-space `Nᵢ` relative to the hyperplane `S`.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    /// `dᵢ`, row i of `D⁻¹`.
    pub d: Vec<f64>,
    /// `sᵢ = Pdᵢ/‖Pdᵢ‖`.
    pub s: Vec<f64>,
    /// `fᵢ = −dᵢᵀc/‖Pdᵢ‖`.
    pub f: f64,
    /// `‖Pdᵢ‖`.
    pub p_norm: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubspaceTransform {
    d: DMatrix<f64>,
    d_inv: DMatrix<f64>,
    upper_triangular: bool,
    b: DVector<f64>,
    c: DVector<f64>,
    half_spaces: Vec<HalfSpace>,
}

/// Upper-triangular `R` with `RᵀR = gram`.
pub fn cholesky_upper(gram: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = gram.nrows();
    assert_eq!(m, gram.ncols(), "Gram matrix must be square");
    let scale = gram.trace() / m as f64;
    let threshold = RANK_TOL * scale;
    let mut r = DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut pivot = gram[(j, j)];
        for k in 0..j {
            pivot -= r[(k, j)] * r[(k, j)];
        }
        if !(pivot > threshold) {
            return Err(Error::RankDeficient { column: j, pivot });
        }
        let rjj = pivot.sqrt();
        r[(j, j)] = rjj;
        for i in j + 1..m {
            let mut v = gram[(j, i)];
            for k in 0..j {
                v -= r[(k, j)] * r[(k, i)];
            }
            r[(j, i)] = v / rjj;
        }
    }
    Ok(r)
}

/// Explicit inverse of an upper-triangular matrix by back substitution.
fn invert_upper(r: &DMatrix<f64>) -> DMatrix<f64> {
    let m = r.nrows();
    let mut inv = DMatrix::<f64>::zeros(m, m);
    for col in 0..m {
        for i in (0..=col).rev() {
            let mut v = if i == col { 1.0 } else { 0.0 };
            for k in i + 1..=col {
                v -= r[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = v / r[(i, i)];
        }
    }
    inv
}

impl SubspaceTransform {
    /// Builds the transform from the upper-triangular Cholesky factor of `EᵀE`.
    pub fn build(e: &EndmemberMatrix) -> Result<Self> {
        if e.n_endmembers() == 1 {
            return Err(Error::DegenerateProblem);
        }
        let d = cholesky_upper(&e.gram())?;
        let d_inv = invert_upper(&d);
        Ok(Self::assemble(d, d_inv, true))
    }

    /// Builds the transform from an arbitrary invertible factor `D` of the
    /// Gram matrix. The resulting abundances do not depend on the choice of
    /// factor; only the intermediate coordinates do.
    pub fn from_factor(d: DMatrix<f64>) -> Result<Self> {
        let m = d.nrows();
        if m != d.ncols() {
            return Err(Error::InvalidInput("factor must be square".into()));
        }
        if m == 1 {
            return Err(Error::DegenerateProblem);
        }
        let d_inv = d.clone().try_inverse().ok_or(Error::RankDeficient {
            column: 0,
            pivot: 0.0,
        })?;
        Ok(Self::assemble(d, d_inv, false))
    }

    fn assemble(d: DMatrix<f64>, d_inv: DMatrix<f64>, upper_triangular: bool) -> Self {
        let m = d.nrows();
        // bⱼ is the j-th column sum of D⁻¹.
        let b = DVector::from_fn(m, |j, _| d_inv.column(j).sum());
        let b_norm_sq = b.norm_squared();
        let c = &b / b_norm_sq;
        let half_spaces = (0..m)
            .map(|i| {
                let di: Vec<f64> = d_inv.row(i).iter().copied().collect();
                let btd = dot(b.as_slice(), &di);
                let pd: Vec<f64> = di
                    .iter()
                    .zip(c.iter())
                    .map(|(dk, ck)| dk - ck * btd)
                    .collect();
                let p_norm = dot(&pd, &pd).sqrt();
                let s = pd.iter().map(|v| v / p_norm).collect();
                let f = -dot(&di, c.as_slice()) / p_norm;
                HalfSpace {
                    d: di,
                    s,
                    f,
                    p_norm,
                }
            })
            .collect();
        Self {
            d,
            d_inv,
            upper_triangular,
            b,
            c,
            half_spaces,
        }
    }

    pub fn n_endmembers(&self) -> usize {
        self.d.nrows()
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.d
    }

    pub fn d_inv(&self) -> &DMatrix<f64> {
        &self.d_inv
    }

    pub fn b(&self) -> &DVector<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }

    pub fn half_spaces(&self) -> &[HalfSpace] {
        &self.half_spaces
    }

    pub fn half_space(&self, i: usize) -> Result<&HalfSpace> {
        self.half_spaces.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            count: self.n_endmembers(),
        })
    }

    pub fn constraint_sets(&self) -> ConstraintSets {
        ConstraintSets {
            b: self.b.clone(),
            half_spaces: self
                .half_spaces
                .iter()
                .map(|h| DVector::from_column_slice(&h.d))
                .collect(),
        }
    }

    /// Applies `P = I − bbᵀ/‖b‖²` to `v` in place.
    pub fn apply_p(&self, v: &mut [f64]) {
        let bv = dot(self.b.as_slice(), v);
        for (vk, ck) in v.iter_mut().zip(self.c.iter()) {
            *vk -= ck * bv;
        }
    }

    /// Flips the sign of `fᵢ`. Used to check that the validation suite
    /// notices a corrupted projector.
    #[doc(hidden)]
    pub fn with_corrupted_offset(mut self, i: usize) -> Self {
        self.half_spaces[i].f = -self.half_spaces[i].f;
        self
    }

    /// `Y = D⁻ᵀEᵀX`, computed per pixel as `Eᵀx` followed by a solve with `Dᵀ`.
    pub fn forward(&self, e: &EndmemberMatrix, x: &ImageCube) -> Result<CoefficientMatrix> {
        validate_dimensions(e, x)?;
        let m = self.n_endmembers();
        if e.n_endmembers() != m {
            return Err(Error::ShapeMismatch {
                expected: (e.n_bands(), m),
                found: (e.n_bands(), e.n_endmembers()),
            });
        }
        let nb = e.n_bands();
        let n = x.n_pixels();
        let es = e.data().as_slice();
        let mut y = DMatrix::<f64>::zeros(m, n);
        y.as_mut_slice()
            .par_chunks_mut(m * PIXEL_CHUNK)
            .zip(x.data().as_slice().par_chunks(nb * PIXEL_CHUNK))
            .for_each(|(ys, xs)| {
                for (yc, xc) in ys.chunks_exact_mut(m).zip(xs.chunks_exact(nb)) {
                    for (i, yi) in yc.iter_mut().enumerate() {
                        *yi = dot(&es[i * nb..(i + 1) * nb], xc);
                    }
                    self.solve_dt_in_place(yc);
                }
            });
        Ok(CoefficientMatrix(y))
    }

    /// `A = D⁻¹U`.
    pub fn inverse(&self, u: &CoefficientMatrix) -> Result<AbundanceMatrix> {
        let m = self.n_endmembers();
        if u.n_rows() != m {
            return Err(Error::ShapeMismatch {
                expected: (m, u.n_pixels()),
                found: (u.n_rows(), u.n_pixels()),
            });
        }
        let mut a = u.0.clone();
        a.as_mut_slice()
            .par_chunks_mut(m * PIXEL_CHUNK)
            .for_each(|chunk| {
                let mut scratch = vec![0.0; m];
                for col in chunk.chunks_exact_mut(m) {
                    self.solve_d_in_place(col, &mut scratch);
                }
            });
        AbundanceMatrix::from_matrix(a)
    }

    /// `U = DA`.
    pub fn coefficients(&self, a: &AbundanceMatrix) -> Result<CoefficientMatrix> {
        let m = self.n_endmembers();
        if a.n_endmembers() != m {
            return Err(Error::ShapeMismatch {
                expected: (m, a.n_pixels()),
                found: (a.n_endmembers(), a.n_pixels()),
            });
        }
        let mut u = DMatrix::<f64>::zeros(m, a.n_pixels());
        u.as_mut_slice()
            .par_chunks_mut(m * PIXEL_CHUNK)
            .zip(a.data().as_slice().par_chunks(m * PIXEL_CHUNK))
            .for_each(|(us, as_)| {
                for (uc, ac) in us.chunks_exact_mut(m).zip(as_.chunks_exact(m)) {
                    for (i, ui) in uc.iter_mut().enumerate() {
                        *ui = (0..m).map(|k| self.d[(i, k)] * ac[k]).sum();
                    }
                }
            });
        Ok(CoefficientMatrix(u))
    }

    /// Overwrites `v` with `D⁻ᵀv`.
    fn solve_dt_in_place(&self, v: &mut [f64]) {
        let m = v.len();
        if self.upper_triangular {
            // Dᵀ is lower triangular: forward substitution.
            for i in 0..m {
                let mut acc = v[i];
                for k in 0..i {
                    acc -= self.d[(k, i)] * v[k];
                }
                v[i] = acc / self.d[(i, i)];
            }
        } else {
            let w: Vec<f64> = (0..m)
                .map(|i| (0..m).map(|k| self.d_inv[(k, i)] * v[k]).sum())
                .collect();
            v.copy_from_slice(&w);
        }
    }

    /// Overwrites `v` with `D⁻¹v`.
    fn solve_d_in_place(&self, v: &mut [f64], scratch: &mut [f64]) {
        let m = v.len();
        if self.upper_triangular {
            for i in (0..m).rev() {
                let mut acc = v[i];
                for k in i + 1..m {
                    acc -= self.d[(i, k)] * v[k];
                }
                v[i] = acc / self.d[(i, i)];
            }
        } else {
            for (i, s) in scratch.iter_mut().enumerate() {
                *s = (0..m).map(|k| self.d_inv[(i, k)] * v[k]).sum();
            }
            v.copy_from_slice(scratch);
        }
    }
}

pub fn build_transform(e: &EndmemberMatrix) -> Result<SubspaceTransform> {
    SubspaceTransform::build(e)
}

pub fn forward_transform(
    t: &SubspaceTransform,
    e: &EndmemberMatrix,
    x: &ImageCube,
) -> Result<CoefficientMatrix> {
    t.forward(e, x)
}

pub fn inverse_transform(t: &SubspaceTransform, u: &CoefficientMatrix) -> Result<AbundanceMatrix> {
    t.inverse(u)
}
