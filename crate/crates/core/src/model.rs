//! Matrices of the linear mixing model `X = EA + N`.
//!
//! Every matrix is column-major with one pixel per column, so the
//! coefficients of a pixel are contiguous in memory. Spatial shape is
//! metadata only; all algorithms see an `n_bands × n_pixels` matrix.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Default tolerance on `|1ᵀa − 1|` when checking feasibility.
pub const DEFAULT_EPS_SUM: f64 = 1e-9;
/// Default tolerance on negative abundance entries.
pub const DEFAULT_EPS_FEAS: f64 = 1e-7;

fn check_finite(data: &DMatrix<f64>, what: &str) -> Result<()> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "{what} contains non-finite entries"
        )))
    }
}

fn check_wavelengths(wavelengths: &Option<Vec<f64>>, n_bands: usize) -> Result<()> {
    match wavelengths {
        Some(w) if w.len() != n_bands => Err(Error::InvalidInput(format!(
            "{} wavelengths given for {} bands",
            w.len(),
            n_bands
        ))),
        _ => Ok(()),
    }
}

fn check_shape(shape: (usize, usize), n: usize) -> Result<()> {
    if shape.0.checked_mul(shape.1) != Some(n) {
        return Err(Error::InvalidInput(format!(
            "spatial shape {}x{} does not cover {} pixels",
            shape.0, shape.1, n
        )));
    }
    Ok(())
}

/// Endmember signatures `E`, one spectrum per column.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    data: DMatrix<f64>,
    wavelengths: Option<Vec<f64>>,
}

impl EndmemberMatrix {
    /// Requires `1 ≤ m ≤ n_bands` and finite entries. Linear independence
    /// of the columns is checked when the subspace transform is built.
    pub fn new(data: DMatrix<f64>, wavelengths: Option<Vec<f64>>) -> Result<Self> {
        let (n_bands, m) = data.shape();
        if m == 0 {
            return Err(Error::InvalidInput(
                "endmember matrix has no columns".into(),
            ));
        }
        if n_bands < m {
            return Err(Error::InvalidInput(format!(
                "{m} endmembers need at least {m} bands, got {n_bands}"
            )));
        }
        check_finite(&data, "endmember matrix")?;
        check_wavelengths(&wavelengths, n_bands)?;
        Ok(Self { data, wavelengths })
    }

    pub fn n_bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_endmembers(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// Gram matrix `EᵀE`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.data.tr_mul(&self.data)
    }
}

/// Observed cube `X` (`n_bands × n_pixels`).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageCube {
    data: DMatrix<f64>,
    shape: (usize, usize),
    wavelengths: Option<Vec<f64>>,
}

impl ImageCube {
    pub fn new(
        data: DMatrix<f64>,
        shape: (usize, usize),
        wavelengths: Option<Vec<f64>>,
    ) -> Result<Self> {
        if data.ncols() == 0 || data.nrows() == 0 {
            return Err(Error::InvalidInput(
                "cube must have at least one band and pixel".into(),
            ));
        }
        check_shape(shape, data.ncols())?;
        check_finite(&data, "image cube")?;
        check_wavelengths(&wavelengths, data.nrows())?;
        Ok(Self {
            data,
            shape,
            wavelengths,
        })
    }

    /// A cube laid out as a single row of pixels.
    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        Self::new(data, (1, n), None)
    }

    pub fn n_bands(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn pixel(&self, j: usize) -> &[f64] {
        let nb = self.n_bands();
        &self.data.as_slice()[j * nb..(j + 1) * nb]
    }
}

/// Abundances `A` (`m × n_pixels`).
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    data: DMatrix<f64>,
    shape: (usize, usize),
}

impl AbundanceMatrix {
    pub fn new(data: DMatrix<f64>, shape: (usize, usize)) -> Result<Self> {
        check_shape(shape, data.ncols())?;
        check_finite(&data, "abundance matrix")?;
        Ok(Self { data, shape })
    }

    pub fn from_matrix(data: DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        Self::new(data, (1, n))
    }

    /// Same data with different spatial metadata.
    pub fn with_shape(self, shape: (usize, usize)) -> Result<Self> {
        Self::new(self.data, shape)
    }

    pub fn n_endmembers(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn pixel(&self, j: usize) -> &[f64] {
        let m = self.n_endmembers();
        &self.data.as_slice()[j * m..(j + 1) * m]
    }
}

/// Subspace coefficients `U = DA`, or transformed observations `Y`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix(pub DMatrix<f64>);

impl CoefficientMatrix {
    pub fn new(data: DMatrix<f64>) -> Self {
        Self(data)
    }

    pub fn n_rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.0.ncols()
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn pixel(&self, j: usize) -> &[f64] {
        let m = self.n_rows();
        &self.0.as_slice()[j * m..(j + 1) * m]
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// The hyperplane `S = {u : bᵀu = 1}` and half-spaces `Nᵢ = {u : dᵢᵀu ≥ 0}`
/// in subspace coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSets {
    pub b: DVector<f64>,
    /// `dᵢ`, the rows of `D⁻¹`.
    pub half_spaces: Vec<DVector<f64>>,
}

impl ConstraintSets {
    pub fn contains(&self, u: &[f64], tol: f64) -> bool {
        let on_plane = (dot(self.b.as_slice(), u) - 1.0).abs() <= tol;
        on_plane
            && self
                .half_spaces
                .iter()
                .all(|d| dot(d.as_slice(), u) >= -tol)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn validate_dimensions(e: &EndmemberMatrix, x: &ImageCube) -> Result<()> {
    if e.n_bands() != x.n_bands() {
        return Err(Error::DimensionMismatch {
            endmember_bands: e.n_bands(),
            cube_bands: x.n_bands(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeasibilityReport {
    /// `max_j |1ᵀaⱼ − 1|`.
    pub max_sum_violation: f64,
    /// Smallest entry of `A`.
    pub min_entry: f64,
    pub feasible: bool,
}

pub fn column_feasibility(a: &AbundanceMatrix, eps_sum: f64, eps_neg: f64) -> FeasibilityReport {
    let m = a.n_endmembers();
    let mut max_sum_violation = 0.0f64;
    let mut min_entry = f64::INFINITY;
    for col in a.data().as_slice().chunks_exact(m.max(1)) {
        let s: f64 = col.iter().sum();
        max_sum_violation = max_sum_violation.max((s - 1.0).abs());
        min_entry = col.iter().copied().fold(min_entry, f64::min);
    }
    FeasibilityReport {
        max_sum_violation,
        min_entry,
        feasible: max_sum_violation <= eps_sum && min_entry >= -eps_neg,
    }
}
