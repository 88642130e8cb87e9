use std::io::Write;

use clap::Args;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sudap::dykstra::DykstraConfig;
use sudap::metrics::{objective, relative_error_db};
use sudap::model::{column_feasibility, DEFAULT_EPS_FEAS, DEFAULT_EPS_SUM};
use sudap::projectors::{project_intersection_geometric, project_intersection_kkt};
use sudap::simdata::{derive_seed, sample_abundances, synthetic_library};
use sudap::solver::{solve_oracle_activeset, Sudap};
use sudap::{CoefficientMatrix, SubspaceTransform};

use crate::simulate::simulate_scene;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Args)]
pub struct ValidateArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    pub instances: u64,
    /// Corrupt one half-space offset before checking the projectors.
    #[arg(long, hide = true)]
    pub inject_fault: bool,
}

/// Worst observed value of one property against its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct PropertyCheck {
    pub name: &'static str,
    pub worst: f64,
    pub threshold: f64,
}

impl PropertyCheck {
    fn new(name: &'static str, threshold: f64) -> Self {
        Self {
            name,
            worst: f64::NEG_INFINITY,
            threshold,
        }
    }

    fn observe(&mut self, v: f64) {
        // NaN counts as a failure.
        if !(v <= self.worst) {
            self.worst = v;
        }
    }

    pub fn passed(&self) -> bool {
        self.worst <= self.threshold
    }
}

const SCENE_SIDE: usize = 16;
const PROJECTION_COLUMNS: usize = 64;
const GAP_DRAWS: usize = 20;

fn random_columns(rng: &mut ChaCha8Rng, t: &SubspaceTransform, n: usize) -> CoefficientMatrix {
    let c = t.c();
    let scale = 3.0 * c.norm();
    let m = c.len();
    CoefficientMatrix::new(DMatrix::from_fn(m, n, |i, _| {
        c[i] + scale * (2.0 * rng.random::<f64>() - 1.0)
    }))
}

/// Runs every property over `instances` seeded scenes.
pub fn run_suite(
    seed: u64,
    instances: u64,
    inject_fault: bool,
) -> sudap::Result<Vec<PropertyCheck>> {
    let mut projector = PropertyCheck::new("projector-equivalence", 1e-12);
    let mut oracle = PropertyCheck::new("oracle-equivalence (re db)", -120.0);
    let mut sum = PropertyCheck::new("sum-to-one", DEFAULT_EPS_SUM);
    let mut nonneg = PropertyCheck::new("nonnegativity (-min entry)", DEFAULT_EPS_FEAS);
    let mut hyperplane = PropertyCheck::new("hyperplane-confinement", DEFAULT_EPS_SUM);
    let mut gap = PropertyCheck::new("reduced-objective-gap", 1e-8);

    let lib = synthetic_library(224, 60, derive_seed(seed, 0))?;
    for k in 0..instances {
        let inst_seed = derive_seed(seed, k + 1);
        let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
        let m = rng.random_range(3..=8);
        let scene = simulate_scene(&lib, m, 10.0, (SCENE_SIDE, SCENE_SIDE), 30.0, inst_seed)?;
        let e = scene.endmembers.to_endmembers()?;
        let t = SubspaceTransform::build(&e)?;

        let t_geo = if inject_fault {
            t.clone().with_corrupted_offset(0)
        } else {
            t.clone()
        };
        let z = random_columns(&mut rng, &t, PROJECTION_COLUMNS);
        for i in 0..m {
            let (g, _) = project_intersection_geometric(&t_geo, i, &z, false)?;
            let (h, _) = project_intersection_kkt(&t, i, &z)?;
            projector.observe((g.data() - h.data()).amax());
        }

        let cfg = DykstraConfig {
            rel_tol: 1e-12,
            max_sweeps: 100_000,
            ..DykstraConfig::default()
        };
        let sudap = Sudap::new(e.clone())?.solve(&scene.cube, &cfg)?;
        let exact = solve_oracle_activeset(&e, &scene.cube)?;
        oracle.observe(relative_error_db(&sudap.abundances, &exact.abundances)?);
        let feas = column_feasibility(&sudap.abundances, DEFAULT_EPS_SUM, DEFAULT_EPS_FEAS);
        sum.observe(feas.max_sum_violation);
        nonneg.observe(-feas.min_entry);
        for r in &sudap.trace.records {
            hyperplane.observe(r.sum_deviation);
        }

        let y = t.forward(&e, &scene.cube)?;
        let gaps: Vec<f64> = (0..GAP_DRAWS as u64)
            .map(|d| {
                let a = sample_abundances(m, scene.cube.n_pixels(), derive_seed(inst_seed, d))?;
                let u = t.coefficients(&a)?;
                Ok(objective(&e, &scene.cube, &a)? - (&y.0 - &u.0).norm_squared())
            })
            .collect::<sudap::Result<_>>()?;
        let mean = gaps.iter().sum::<f64>() / gaps.len() as f64;
        let spread = gaps.iter().map(|g| (g - mean).abs()).fold(0.0, f64::max);
        gap.observe(spread / mean.abs().max(f64::MIN_POSITIVE));
    }
    Ok(vec![projector, oracle, sum, nonneg, hyperplane, gap])
}

pub fn run(args: &ValidateArgs, out: &mut dyn Write) -> CliResult {
    let checks = run_suite(args.seed, args.instances, args.inject_fault)?;
    writeln!(
        out,
        "{:<30} {:>14} {:>14}  status",
        "property", "worst", "threshold"
    )?;
    for c in &checks {
        writeln!(
            out,
            "{:<30} {:>14.4e} {:>14.4e}  {}",
            c.name,
            c.worst,
            c.threshold,
            if c.passed() { "pass" } else { "FAIL" }
        )?;
    }
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| c.name.to_string())
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ValidationFailed(failed))
    }
}
