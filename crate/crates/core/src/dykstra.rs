//! Dykstra's alternating projection onto `S ∩ N = ⋂ᵢ (S ∩ Nᵢ)`.
//!
//! One sweep visits the sets `S ∩ N₁, …, S ∩ Nₘ` in order. Set `i` owns a
//! correction `Qᵢ`; its input is the current iterate plus `Qᵢ`, and after
//! the projection `Qᵢ` becomes input minus output. Every projection lands
//! on `S`, so the inputs of sets `2..m` are already on the hyperplane and
//! skip the `Π_S` step. The input of set 1 is not: its correction keeps the
//! `bᵀY − 1` offset picked up on the first sweep.
//!
//! Columns never interact, so each sweep runs column-parallel and the result
//! does not depend on how columns are split across threads. Reductions over
//! columns (norms, objective) are done sequentially in column order.

use std::ops::ControlFlow;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{dot, CoefficientMatrix};
use crate::subspace::{SubspaceTransform, PIXEL_CHUNK};

/// Guard for the denominator of the relative change.
const NORM_GUARD: f64 = 1e-300;

#[derive(Debug, Clone, PartialEq)]
pub struct DykstraConfig {
    /// Hard cap `K` on the number of sweeps.
    pub max_sweeps: usize,
    /// Stop once `‖U⁽ᵏ⁾ − U⁽ᵏ⁻¹⁾‖_F / ‖U⁽ᵏ⁾‖_F ≤ rel_tol`. Zero runs all
    /// `max_sweeps` sweeps unless an exact fixed point is hit.
    pub rel_tol: f64,
    /// Keep a copy of the iterate every this many sweeps (0 keeps none).
    pub snapshot_every: usize,
    /// Keep snapshots for per-pixel convergence counting even when
    /// `snapshot_every` is 0 (one per sweep in that case).
    pub track_per_pixel: bool,
    /// Per-pixel relative error threshold, in dB, for counting a pixel as
    /// unconverged.
    pub pixel_tol_db: f64,
}

impl Default for DykstraConfig {
    fn default() -> Self {
        Self {
            max_sweeps: 2000,
            rel_tol: 1e-10,
            snapshot_every: 0,
            track_per_pixel: false,
            pixel_tol_db: -100.0,
        }
    }
}

impl DykstraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 {
            return Err(Error::InvalidInput("max_sweeps must be at least 1".into()));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::InvalidInput("rel_tol must be non-negative".into()));
        }
        Ok(())
    }

    fn snapshot_cadence(&self) -> usize {
        match (self.snapshot_every, self.track_per_pixel) {
            (0, true) => 1,
            (k, _) => k,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRecord {
    pub sweep: usize,
    /// Solver time since the start of the run, excluding observers.
    pub elapsed_s: f64,
    pub rel_change: f64,
    /// `‖Y − U⁽ᵏ⁾‖²_F`.
    pub objective: f64,
    /// `max_j |bᵀuⱼ − 1|` after the sweep.
    pub sum_deviation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub sweep: usize,
    pub u: CoefficientMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    Converged,
    MaxSweeps,
    Observer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DykstraTrace {
    pub records: Vec<SweepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub stop: StopReason,
}

impl DykstraTrace {
    pub fn empty() -> Self {
        Self {
            records: Vec::new(),
            snapshots: Vec::new(),
            stop: StopReason::Converged,
        }
    }

    pub fn sweeps(&self) -> usize {
        self.records.last().map_or(0, |r| r.sweep)
    }

    pub fn converged(&self) -> bool {
        self.stop == StopReason::Converged
    }
}

/// Iterate and corrections of a running projection.
#[derive(Debug, Clone)]
pub struct DykstraState {
    y: CoefficientMatrix,
    u: CoefficientMatrix,
    /// Pixel-major corrections: pixel j owns `m·m` values, correction `i`
    /// at offset `i·m`.
    q: Vec<f64>,
    sweep: usize,
    last_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepStats {
    pub rel_change: f64,
    pub objective: f64,
    pub sum_deviation: f64,
}

impl DykstraState {
    /// `U ← Y`, `Q ← 0`.
    pub fn new(y: CoefficientMatrix) -> Self {
        let m = y.n_rows();
        let q = vec![0.0; m * m * y.n_pixels()];
        Self {
            u: y.clone(),
            y,
            q,
            sweep: 0,
            last_delta: f64::INFINITY,
        }
    }

    pub fn iterate(&self) -> &CoefficientMatrix {
        &self.u
    }

    pub fn into_iterate(self) -> CoefficientMatrix {
        self.u
    }

    pub fn sweep_count(&self) -> usize {
        self.sweep
    }

    pub fn last_delta(&self) -> f64 {
        self.last_delta
    }

    /// Correction matrix of set `i` (zero-based) as an `m × n` matrix.
    pub fn correction(&self, i: usize) -> CoefficientMatrix {
        let m = self.u.n_rows();
        let n = self.u.n_pixels();
        CoefficientMatrix(DMatrix::from_fn(m, n, |r, j| self.q[j * m * m + i * m + r]))
    }

    /// Runs one full sweep over the `m` sets.
    pub fn sweep(&mut self, t: &SubspaceTransform) -> Result<SweepStats> {
        let m = self.u.n_rows();
        if m != t.n_endmembers() {
            return Err(Error::ShapeMismatch {
                expected: (t.n_endmembers(), self.u.n_pixels()),
                found: (m, self.u.n_pixels()),
            });
        }
        let n = self.u.n_pixels();
        // Per pixel: ‖Δu‖², ‖u‖², ‖y − u‖², |bᵀu − 1|.
        let mut stats = vec![[0.0f64; 4]; n];
        let b = t.b().as_slice();
        let c = t.c().as_slice();
        self.u
            .0
            .as_mut_slice()
            .par_chunks_mut(m * PIXEL_CHUNK)
            .zip(self.q.par_chunks_mut(m * m * PIXEL_CHUNK))
            .zip(self.y.0.as_slice().par_chunks(m * PIXEL_CHUNK))
            .zip(stats.par_chunks_mut(PIXEL_CHUNK))
            .for_each(|(((us, qs), ys), st)| {
                let mut prev = vec![0.0; m];
                let mut input = vec![0.0; m];
                for (((u, q), y), s) in us
                    .chunks_exact_mut(m)
                    .zip(qs.chunks_exact_mut(m * m))
                    .zip(ys.chunks_exact(m))
                    .zip(st.iter_mut())
                {
                    prev.copy_from_slice(u);
                    for (i, (h, qi)) in t
                        .half_spaces()
                        .iter()
                        .zip(q.chunks_exact_mut(m))
                        .enumerate()
                    {
                        // Fused form of `geometric_in_place` on `u + qᵢ`:
                        // Π_S(z) = z − c(bᵀz − 1), then the step along sᵢ.
                        let (mut sz, mut bz) = (0.0, 0.0);
                        for k in 0..m {
                            let v = u[k] + qi[k];
                            input[k] = v;
                            sz += h.s[k] * v;
                            bz += b[k] * v;
                        }
                        let tau = (h.f - sz).max(0.0);
                        let beta = if i > 0 { 0.0 } else { bz - 1.0 };
                        for k in 0..m {
                            let v = input[k] - c[k] * beta + tau * h.s[k];
                            qi[k] = input[k] - v;
                            u[k] = v;
                        }
                    }
                    let mut delta = 0.0;
                    let mut norm = 0.0;
                    let mut obj = 0.0;
                    for k in 0..m {
                        delta += (u[k] - prev[k]) * (u[k] - prev[k]);
                        norm += u[k] * u[k];
                        obj += (y[k] - u[k]) * (y[k] - u[k]);
                    }
                    *s = [delta, norm, obj, (dot(b, u) - 1.0).abs()];
                }
            });
        self.sweep += 1;
        let (mut delta, mut norm, mut objective, mut sum_deviation) = (0.0, 0.0, 0.0, 0.0f64);
        for s in &stats {
            delta += s[0];
            norm += s[1];
            objective += s[2];
            sum_deviation = sum_deviation.max(s[3]);
        }
        if !(delta.is_finite() && norm.is_finite() && objective.is_finite()) {
            return Err(Error::NonFinite { sweep: self.sweep });
        }
        let rel_change = delta.sqrt() / norm.sqrt().max(NORM_GUARD);
        self.last_delta = rel_change;
        Ok(SweepStats {
            rel_change,
            objective,
            sum_deviation,
        })
    }
}

/// Projects every column of `Y` onto `S ∩ N`.
pub fn dykstra_project(
    t: &SubspaceTransform,
    y: &CoefficientMatrix,
    cfg: &DykstraConfig,
) -> Result<(CoefficientMatrix, DykstraTrace)> {
    dykstra_project_observed(t, y, cfg, |_, _| ControlFlow::Continue(()))
}

/// Like [`dykstra_project`], calling `observer` after every sweep with the
/// sweep record and current iterate. The observer may stop the run early;
/// time spent in it is not counted in the trace.
pub fn dykstra_project_observed<F>(
    t: &SubspaceTransform,
    y: &CoefficientMatrix,
    cfg: &DykstraConfig,
    mut observer: F,
) -> Result<(CoefficientMatrix, DykstraTrace)>
where
    F: FnMut(&SweepRecord, &CoefficientMatrix) -> ControlFlow<()>,
{
    cfg.validate()?;
    if y.n_rows() != t.n_endmembers() {
        return Err(Error::ShapeMismatch {
            expected: (t.n_endmembers(), y.n_pixels()),
            found: (y.n_rows(), y.n_pixels()),
        });
    }
    let cadence = cfg.snapshot_cadence();
    let mut state = DykstraState::new(y.clone());
    let mut trace = DykstraTrace {
        records: Vec::new(),
        snapshots: Vec::new(),
        stop: StopReason::MaxSweeps,
    };
    let mut solver_time = Duration::ZERO;
    for _ in 0..cfg.max_sweeps {
        let started = Instant::now();
        let stats = state.sweep(t)?;
        solver_time += started.elapsed();
        let record = SweepRecord {
            sweep: state.sweep_count(),
            elapsed_s: solver_time.as_secs_f64(),
            rel_change: stats.rel_change,
            objective: stats.objective,
            sum_deviation: stats.sum_deviation,
        };
        trace.records.push(record);
        let converged = stats.rel_change <= cfg.rel_tol;
        if cadence > 0 && (record.sweep.is_multiple_of(cadence) || converged) {
            trace.snapshots.push(Snapshot {
                sweep: record.sweep,
                u: state.iterate().clone(),
            });
        }
        let flow = observer(&record, state.iterate());
        if converged {
            trace.stop = StopReason::Converged;
            break;
        }
        if flow.is_break() {
            trace.stop = StopReason::Observer;
            break;
        }
    }
    Ok((state.into_iterate(), trace))
}

/// Number of columns whose relative error to `u_star`, in dB, exceeds `tol_db`.
pub fn unconverged_count(
    u: &CoefficientMatrix,
    u_star: &CoefficientMatrix,
    tol_db: f64,
) -> Result<usize> {
    if u.data().shape() != u_star.data().shape() {
        return Err(Error::ShapeMismatch {
            expected: u_star.data().shape(),
            found: u.data().shape(),
        });
    }
    let count = (0..u.n_pixels())
        .filter(|&j| {
            let (a, r) = (u.pixel(j), u_star.pixel(j));
            let err: f64 = a.iter().zip(r).map(|(x, y)| (x - y) * (x - y)).sum();
            let reference: f64 = r.iter().map(|v| v * v).sum();
            err > 0.0 && 10.0 * (err / reference).log10() > tol_db
        })
        .count();
    Ok(count)
}

/// `(sweep, unconverged pixel count)` for every snapshot in the trace.
pub fn per_pixel_unconverged(
    trace: &DykstraTrace,
    u_star: &CoefficientMatrix,
    tol_db: f64,
) -> Result<Vec<(usize, usize)>> {
    trace
        .snapshots
        .iter()
        .map(|s| Ok((s.sweep, unconverged_count(&s.u, u_star, tol_db)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EndmemberMatrix;
    use crate::projectors::project_intersection_geometric;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn identity_transform(m: usize) -> SubspaceTransform {
        SubspaceTransform::build(&EndmemberMatrix::new(DMatrix::identity(m, m), None).unwrap())
            .unwrap()
    }

    fn random_transform(rng: &mut ChaCha8Rng, m: usize) -> SubspaceTransform {
        let e = DMatrix::from_fn(3 * m, m, |_, _| rng.random::<f64>());
        SubspaceTransform::build(&EndmemberMatrix::new(e, None).unwrap()).unwrap()
    }

    fn tight() -> DykstraConfig {
        DykstraConfig {
            max_sweeps: 5000,
            rel_tol: 1e-13,
            ..DykstraConfig::default()
        }
    }

    #[test]
    fn feasible_input_is_a_fixed_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t = random_transform(&mut rng, 4);
        let a = DMatrix::from_fn(4, 10, |_, _| rng.random::<f64>() + 0.05);
        let sums = a.row_sum();
        let a = DMatrix::from_fn(4, 10, |i, j| a[(i, j)] / sums[j]);
        let y = CoefficientMatrix(t.d() * a);
        let (u, trace) = dykstra_project(&t, &y, &DykstraConfig::default()).unwrap();
        assert_eq!(trace.sweeps(), 1);
        assert!(trace.converged());
        assert!((u.data() - y.data()).abs().max() < 1e-12);
    }

    #[test]
    fn two_endmember_canonical_projection() {
        let t = identity_transform(2);
        let y = CoefficientMatrix(DMatrix::from_column_slice(2, 1, &[1.6, 0.2]));
        let (u, _) = dykstra_project(&t, &y, &tight()).unwrap();
        assert!((u.pixel(0)[0] - 1.0).abs() < 1e-12);
        assert!(u.pixel(0)[1].abs() < 1e-12);
    }

    #[test]
    fn canonical_simplex_projection_for_identity_factor() {
        // With D = I the target set is the probability simplex; compare with
        // the sort-based simplex projection.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = 5;
        let t = identity_transform(m);
        let y = CoefficientMatrix(DMatrix::from_fn(m, 40, |_, _| {
            2.0 * rng.random::<f64>() - 0.5
        }));
        let (u, _) = dykstra_project(&t, &y, &tight()).unwrap();
        for j in 0..40 {
            let mut v: Vec<f64> = y.pixel(j).to_vec();
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let mut cum = 0.0;
            let mut theta = 0.0;
            for (k, vk) in v.iter().enumerate() {
                cum += vk;
                let cand = (cum - 1.0) / (k + 1) as f64;
                if vk - cand > 0.0 {
                    theta = cand;
                }
            }
            for (k, uk) in u.pixel(j).iter().enumerate() {
                let expected = (y.pixel(j)[k] - theta).max(0.0);
                assert!(
                    (uk - expected).abs() < 1e-9,
                    "pixel {j}: {uk} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn iterates_stay_on_the_hyperplane() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_transform(&mut rng, 6);
        let y = CoefficientMatrix(DMatrix::from_fn(6, 30, |_, _| {
            4.0 * rng.random::<f64>() - 2.0
        }));
        let cfg = DykstraConfig {
            max_sweeps: 300,
            rel_tol: 0.0,
            ..DykstraConfig::default()
        };
        let (_, trace) = dykstra_project(&t, &y, &cfg).unwrap();
        assert!(trace.records.iter().all(|r| r.sum_deviation <= 1e-9));
    }

    #[test]
    fn first_sweep_matches_manual_projections() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let m = 3;
        let t = random_transform(&mut rng, m);
        let y = CoefficientMatrix(DMatrix::from_fn(m, 5, |_, _| {
            rng.random::<f64>() * 3.0 - 1.0
        }));
        let mut state = DykstraState::new(y.clone());
        state.sweep(&t).unwrap();
        let mut z = y;
        for i in 0..m {
            z = project_intersection_geometric(&t, i, &z, i > 0).unwrap().0;
        }
        assert!((state.iterate().data() - z.data()).abs().max() < 1e-14);
    }

    #[test]
    fn corrections_stay_finite_and_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_transform(&mut rng, 4);
        let y = CoefficientMatrix(DMatrix::from_fn(4, 7, |_, _| {
            rng.random::<f64>() * 3.0 - 1.0
        }));
        let mut state = DykstraState::new(y);
        for _ in 0..10 {
            state.sweep(&t).unwrap();
        }
        for i in 0..4 {
            let q = state.correction(i);
            assert_eq!(q.data().shape(), (4, 7));
            assert!(q.is_finite());
        }
    }

    #[test]
    fn non_finite_input_is_reported() {
        let t = identity_transform(2);
        let y = CoefficientMatrix(DMatrix::from_column_slice(2, 1, &[f64::NAN, 0.0]));
        assert!(matches!(
            dykstra_project(&t, &y, &DykstraConfig::default()),
            Err(Error::NonFinite { sweep: 1 })
        ));
    }

    #[test]
    fn config_is_validated() {
        let t = identity_transform(2);
        let y = CoefficientMatrix(DMatrix::from_column_slice(2, 1, &[0.5, 0.5]));
        let cfg = DykstraConfig {
            max_sweeps: 0,
            ..DykstraConfig::default()
        };
        assert!(dykstra_project(&t, &y, &cfg).is_err());
    }

    #[test]
    fn observer_can_stop_the_run() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_transform(&mut rng, 5);
        let y = CoefficientMatrix(DMatrix::from_fn(5, 20, |_, _| {
            rng.random::<f64>() * 4.0 - 2.0
        }));
        let cfg = DykstraConfig {
            rel_tol: 0.0,
            max_sweeps: 100,
            ..DykstraConfig::default()
        };
        let (_, trace) = dykstra_project_observed(&t, &y, &cfg, |r, _| {
            if r.sweep == 3 {
                ControlFlow::Break(())
            } else {
                ControlFlow::Continue(())
            }
        })
        .unwrap();
        assert_eq!(trace.sweeps(), 3);
        assert_eq!(trace.stop, StopReason::Observer);
    }

    #[test]
    fn identical_runs_give_identical_traces() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = random_transform(&mut rng, 5);
        let y = CoefficientMatrix(DMatrix::from_fn(5, 1000, |_, _| {
            rng.random::<f64>() * 4.0 - 2.0
        }));
        let cfg = DykstraConfig::default();
        let (u1, t1) = dykstra_project(&t, &y, &cfg).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let (u2, t2) = pool.install(|| dykstra_project(&t, &y, &cfg)).unwrap();
        assert_eq!(u1, u2);
        let obj1: Vec<u64> = t1.records.iter().map(|r| r.objective.to_bits()).collect();
        let obj2: Vec<u64> = t2.records.iter().map(|r| r.objective.to_bits()).collect();
        assert_eq!(obj1, obj2);
    }

    #[test]
    fn snapshot_counts_hit_zero_at_the_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let t = random_transform(&mut rng, 5);
        let y = CoefficientMatrix(DMatrix::from_fn(5, 50, |_, _| {
            rng.random::<f64>() * 4.0 - 2.0
        }));
        let cfg = DykstraConfig {
            track_per_pixel: true,
            rel_tol: 1e-13,
            max_sweeps: 5000,
            ..DykstraConfig::default()
        };
        let (u_star, trace) = dykstra_project(&t, &y, &cfg).unwrap();
        assert_eq!(trace.snapshots.len(), trace.records.len());
        let counts = per_pixel_unconverged(&trace, &u_star, -100.0).unwrap();
        assert!(counts.first().unwrap().1 > 0);
        assert_eq!(counts.last().unwrap().1, 0);
        assert_eq!(unconverged_count(&y, &y, -100.0).unwrap(), 0);
        let wrong = CoefficientMatrix(DMatrix::zeros(5, 49));
        assert!(per_pixel_unconverged(&trace, &wrong, -100.0).is_err());
    }
}
