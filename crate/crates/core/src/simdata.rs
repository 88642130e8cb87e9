//! Synthetic unmixing experiments: endmember selection with a minimum
//! pairwise spectral angle, abundances drawn uniformly on the simplex and
//! additive white Gaussian noise at a prescribed SNR.
//!
//! SNR is `10·log10(P_signal / P_noise)` with both powers taken as the mean
//! square over every entry of the cube. All generators are driven by a
//! ChaCha8 stream seeded from a `u64`, so outputs are reproducible bit for
//! bit across platforms.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{dot, AbundanceMatrix, EndmemberMatrix, ImageCube};

/// Spectral signatures, one per column.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralLibrary {
    signatures: DMatrix<f64>,
    names: Vec<String>,
    wavelengths: Option<Vec<f64>>,
}

impl SpectralLibrary {
    pub fn new(
        signatures: DMatrix<f64>,
        names: Vec<String>,
        wavelengths: Option<Vec<f64>>,
    ) -> Result<Self> {
        let (n_bands, l) = signatures.shape();
        if l == 0 || n_bands == 0 {
            return Err(Error::InvalidInput("library has no signatures".into()));
        }
        if names.len() != l {
            return Err(Error::InvalidInput(format!(
                "{} names for {} signatures",
                names.len(),
                l
            )));
        }
        if let Some(w) = &wavelengths {
            if w.len() != n_bands {
                return Err(Error::InvalidInput(format!(
                    "{} wavelengths for {} bands",
                    w.len(),
                    n_bands
                )));
            }
        }
        if signatures.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(
                "library contains non-finite values".into(),
            ));
        }
        if let Some(k) = (0..l).find(|&k| signatures.column(k).iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidInput(format!(
                "signature {} is identically zero",
                names[k]
            )));
        }
        Ok(Self {
            signatures,
            names,
            wavelengths,
        })
    }

    pub fn signatures(&self) -> &DMatrix<f64> {
        &self.signatures
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn n_bands(&self) -> usize {
        self.signatures.nrows()
    }

    pub fn len(&self) -> usize {
        self.signatures.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn column(&self, k: usize) -> &[f64] {
        let nb = self.n_bands();
        &self.signatures.as_slice()[k * nb..(k + 1) * nb]
    }

    /// Library made of the given columns, in order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let cols: Vec<_> = indices.iter().map(|&k| self.signatures.column(k)).collect();
        Self::new(
            DMatrix::from_columns(&cols),
            indices.iter().map(|&k| self.names[k].clone()).collect(),
            self.wavelengths.clone(),
        )
    }

    pub fn to_endmembers(&self) -> Result<EndmemberMatrix> {
        EndmemberMatrix::new(self.signatures.clone(), self.wavelengths.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// `f64::INFINITY` means no noise.
    pub snr_db: f64,
    pub seed: u64,
}

/// Independent sub-seed number `stream` of a master seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

/// Angle between two spectra in degrees.
pub fn spectral_angle_deg(a: &[f64], b: &[f64]) -> f64 {
    let cos = dot(a, b) / (dot(a, a).sqrt() * dot(b, b).sqrt());
    cos.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Greedy pass over a seeded permutation of the library: a candidate is kept
/// when its angle to every signature kept so far exceeds `min_angle_deg`.
pub fn select_endmember_indices(
    lib: &SpectralLibrary,
    m: usize,
    min_angle_deg: f64,
    seed: u64,
) -> Result<Vec<usize>> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one endmember".into()));
    }
    if !(min_angle_deg >= 0.0) {
        return Err(Error::InvalidInput(
            "minimum angle must be non-negative".into(),
        ));
    }
    let mut order: Vec<usize> = (0..lib.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen: Vec<usize> = Vec::with_capacity(m);
    for k in order {
        let candidate = lib.column(k);
        if chosen
            .iter()
            .all(|&c| spectral_angle_deg(lib.column(c), candidate) > min_angle_deg)
        {
            chosen.push(k);
            if chosen.len() == m {
                return Ok(chosen);
            }
        }
    }
    Err(Error::InsufficientCandidates {
        found: chosen.len(),
        requested: m,
        min_angle_deg,
    })
}

pub fn select_endmembers(
    lib: &SpectralLibrary,
    m: usize,
    min_angle_deg: f64,
    seed: u64,
) -> Result<EndmemberMatrix> {
    let idx = select_endmember_indices(lib, m, min_angle_deg, seed)?;
    lib.subset(&idx)?.to_endmembers()
}

/// Columns i.i.d. uniform on the probability simplex (normalised standard
/// exponentials).
pub fn sample_abundances(m: usize, n: usize, seed: u64) -> Result<AbundanceMatrix> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidInput(
            "abundance matrix must be non-empty".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0.0; m * n];
    for col in data.chunks_exact_mut(m) {
        for v in col.iter_mut() {
            *v = Exp1.sample(&mut rng);
        }
        let s: f64 = col.iter().sum();
        col.iter_mut().for_each(|v| *v /= s);
    }
    AbundanceMatrix::from_matrix(DMatrix::from_vec(m, n, data))
}

/// Noise-free mixture `EA`.
pub fn mix(e: &EndmemberMatrix, a: &AbundanceMatrix) -> Result<DMatrix<f64>> {
    if e.n_endmembers() != a.n_endmembers() {
        return Err(Error::ShapeMismatch {
            expected: (e.n_endmembers(), a.n_pixels()),
            found: a.data().shape(),
        });
    }
    let nb = e.n_bands();
    let es = e.data().as_slice();
    let mut x = DMatrix::<f64>::zeros(nb, a.n_pixels());
    for (xc, ac) in x
        .as_mut_slice()
        .chunks_exact_mut(nb)
        .zip(a.data().as_slice().chunks_exact(a.n_endmembers()))
    {
        for (k, &ak) in ac.iter().enumerate() {
            for (xv, ev) in xc.iter_mut().zip(&es[k * nb..(k + 1) * nb]) {
                *xv += ev * ak;
            }
        }
    }
    Ok(x)
}

/// `X = EA + N` with `N` i.i.d. Gaussian of variance
/// `‖EA‖²_F / (n_bands·n·10^(snr/10))`.
pub fn synthesize_cube(
    e: &EndmemberMatrix,
    a: &AbundanceMatrix,
    noise: NoiseSpec,
    shape: (usize, usize),
) -> Result<ImageCube> {
    let mut x = mix(e, a)?;
    if noise.snr_db.is_nan() || noise.snr_db == f64::NEG_INFINITY {
        return Err(Error::InvalidInput(format!("invalid SNR {}", noise.snr_db)));
    }
    if noise.snr_db.is_finite() {
        let power = x.norm_squared() / x.len() as f64;
        let sigma = (power / 10f64.powf(noise.snr_db / 10.0)).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(noise.seed);
        for v in x.iter_mut() {
            let g: f64 = StandardNormal.sample(&mut rng);
            *v += sigma * g;
        }
    }
    ImageCube::new(x, shape, e.wavelengths().map(<[f64]>::to_vec))
}

/// `10·log10(‖clean‖² / ‖noisy − clean‖²)`; `+inf` when noise-free.
pub fn measured_snr_db(clean: &DMatrix<f64>, noisy: &DMatrix<f64>) -> f64 {
    let noise: f64 = clean
        .iter()
        .zip(noisy.iter())
        .map(|(c, x)| (x - c) * (x - c))
        .sum();
    10.0 * (clean.norm_squared() / noise).log10()
}

/// Wavelength grid of the synthetic libraries, in nanometres.
pub const SYNTHETIC_RANGE_NM: (f64, f64) = (383.0, 2508.0);

/// Smooth reflectance-like spectra on an even wavelength grid.
///
/// Each signature is a sloped continuum with a slow undulation, multiplied
/// by a few Gaussian absorption features and by shared atmospheric water
/// bands near 1400 nm and 1900 nm, clamped to `[0.01, 1]`.
pub fn synthetic_library(
    n_bands: usize,
    n_signatures: usize,
    seed: u64,
) -> Result<SpectralLibrary> {
    if n_bands < 2 || n_signatures == 0 {
        return Err(Error::InvalidInput(
            "need at least 2 bands and 1 signature".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = SYNTHETIC_RANGE_NM;
    let wl: Vec<f64> = (0..n_bands)
        .map(|k| lo + (hi - lo) * k as f64 / (n_bands - 1) as f64)
        .collect();
    let gauss = |w: f64, center: f64, width: f64| (-0.5 * ((w - center) / width).powi(2)).exp();
    let mut data = DMatrix::<f64>::zeros(n_bands, n_signatures);
    for s in 0..n_signatures {
        let level = rng.random_range(0.1..0.7);
        let slope = rng.random_range(-0.4..0.4);
        let wiggle_amp = rng.random_range(0.0..0.15);
        let wiggle_freq = rng.random_range(0.5..3.0);
        let wiggle_phase = rng.random_range(0.0..std::f64::consts::TAU);
        let n_features = rng.random_range(1..=5);
        let features: Vec<(f64, f64, f64)> = (0..n_features)
            .map(|_| {
                (
                    rng.random_range(lo..hi),
                    rng.random_range(20.0..250.0),
                    rng.random_range(0.1..0.7),
                )
            })
            .collect();
        let water = rng.random_range(0.3..0.9);
        for (k, &w) in wl.iter().enumerate() {
            let t = (w - lo) / (hi - lo);
            let mut r = level * (1.0 + slope * (t - 0.5))
                + wiggle_amp
                    * (std::f64::consts::TAU * wiggle_freq * t + wiggle_phase).sin()
                    * level;
            for &(center, width, depth) in &features {
                r *= 1.0 - depth * gauss(w, center, width);
            }
            r *= 1.0 - water * (0.6 * gauss(w, 1400.0, 40.0) + 0.8 * gauss(w, 1900.0, 50.0));
            data[(k, s)] = r.clamp(0.01, 1.0);
        }
    }
    let names = (0..n_signatures)
        .map(|s| format!("synthetic-{s:03}"))
        .collect();
    SpectralLibrary::new(data, names, Some(wl))
}
