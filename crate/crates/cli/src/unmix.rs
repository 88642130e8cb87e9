use std::io::Write;
use std::ops::ControlFlow;
use std::path::PathBuf;

use clap::Args;
use sudap::dykstra::{DykstraConfig, SweepRecord};
use sudap::io::{read_abundance, read_cube, read_library_csv, write_abundance, write_curve_csv};
use sudap::metrics::{
    nmse_db, objective, relative_error_db, ConvergenceCurve, CurveBuilder, CurveReferences,
    CurveRow,
};
use sudap::model::{column_feasibility, validate_dimensions, DEFAULT_EPS_FEAS, DEFAULT_EPS_SUM};
use sudap::solver::{clip_small_negatives, solve, SolveResult, SolverId, Sudap};
use sudap::{AbundanceMatrix, EndmemberMatrix, Error, ImageCube};

use crate::{CliError, CliResult, SolverArg};

#[derive(Debug, Clone, Args)]
pub struct UnmixArgs {
    #[arg(long)]
    pub cube: PathBuf,
    /// Endmember library CSV, one column per endmember.
    #[arg(long)]
    pub endmembers: PathBuf,
    #[arg(long, value_enum, default_value_t = SolverArg::Sudap)]
    pub solver: SolverArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-10)]
    pub rel_tol: f64,
    #[arg(long, default_value_t = 2000)]
    pub max_sweeps: usize,
    /// Exact solution to measure RE against.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Ground-truth abundances to measure NMSE against.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Write a convergence curve CSV here.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// Curve row cadence in sweeps.
    #[arg(long, default_value_t = 1)]
    pub snapshot_every: usize,
    /// Zero tiny negative entries and renormalise.
    #[arg(long)]
    pub clip: bool,
}

fn read_reference(
    path: &Option<PathBuf>,
    m: usize,
    x: &ImageCube,
) -> CliResult<Option<AbundanceMatrix>> {
    let Some(path) = path else { return Ok(None) };
    let a = read_abundance(path)?;
    if a.n_endmembers() != m || a.n_pixels() != x.n_pixels() {
        return Err(Error::ShapeMismatch {
            expected: (m, x.n_pixels()),
            found: (a.n_endmembers(), a.n_pixels()),
        }
        .into());
    }
    Ok(Some(a))
}

/// Solves with SUDAP, recording a curve row every `every` sweeps and at the
/// final sweep.
fn solve_with_curve(
    e: &EndmemberMatrix,
    x: &ImageCube,
    cfg: &DykstraConfig,
    refs: CurveReferences<'_>,
    every: usize,
) -> CliResult<(SolveResult, ConvergenceCurve)> {
    let sudap = Sudap::new(e.clone())?;
    let Some(t) = sudap.transform() else {
        let result = sudap.solve(x, cfg)?;
        let curve = direct_curve(e, x, &result, refs)?;
        return Ok((result, curve));
    };
    let mut builder = CurveBuilder::new(t, e, x, refs)?;
    let mut failure = None;
    let mut last_pushed = 0;
    let result = sudap.solve_observed(x, cfg, |record, u| {
        if record.sweep % every != 0 {
            return ControlFlow::Continue(());
        }
        last_pushed = record.sweep;
        match builder.push(record, u) {
            Ok(()) => ControlFlow::Continue(()),
            Err(err) => {
                failure = Some(err);
                ControlFlow::Break(())
            }
        }
    })?;
    if let Some(err) = failure {
        return Err(err.into());
    }
    if let Some(last) = result.trace.records.last() {
        if last_pushed != last.sweep {
            builder.push_abundances(last, &result.abundances)?;
        }
    }
    Ok((result, builder.finish()))
}

/// Single-row curve for solvers without iterations.
fn direct_curve(
    e: &EndmemberMatrix,
    x: &ImageCube,
    result: &SolveResult,
    refs: CurveReferences<'_>,
) -> CliResult<ConvergenceCurve> {
    let a = &result.abundances;
    let row = CurveRow {
        sweep: result.trace.sweeps(),
        time_s: result.wall_time_s,
        objective: objective(e, x, a)?,
        re_db: refs.a_star.map(|r| relative_error_db(a, r)).transpose()?,
        nmse_db: refs.a_true.map(|r| nmse_db(a, r)).transpose()?,
        unconverged: None,
    };
    Ok(ConvergenceCurve { rows: vec![row] })
}

pub fn run(args: &UnmixArgs, out: &mut dyn Write) -> CliResult {
    if args.snapshot_every == 0 {
        return Err(CliError::Usage(
            "--snapshot-every must be at least 1".into(),
        ));
    }
    let x = read_cube(&args.cube)?;
    let e = read_library_csv(&args.endmembers)?.to_endmembers()?;
    validate_dimensions(&e, &x)?;
    let m = e.n_endmembers();
    let reference = read_reference(&args.reference, m, &x)?;
    let truth = read_reference(&args.truth, m, &x)?;
    let refs = CurveReferences {
        a_star: reference.as_ref(),
        a_true: truth.as_ref(),
        ..CurveReferences::default()
    };
    let cfg = DykstraConfig {
        max_sweeps: args.max_sweeps,
        rel_tol: args.rel_tol,
        ..DykstraConfig::default()
    };
    cfg.validate()?;

    let solver = SolverId::from(args.solver);
    let (result, curve) = match (solver, &args.curve) {
        (SolverId::Sudap, Some(_)) => {
            let (r, c) = solve_with_curve(&e, &x, &cfg, refs, args.snapshot_every)?;
            (r, Some(c))
        }
        (_, Some(_)) => {
            let r = solve(solver, &e, &x, &cfg)?;
            let c = direct_curve(&e, &x, &r, refs)?;
            (r, Some(c))
        }
        (_, None) => (solve(solver, &e, &x, &cfg)?, None),
    };

    let a = if args.clip {
        clip_small_negatives(&result.abundances, DEFAULT_EPS_FEAS)?
    } else {
        result.abundances.clone()
    };
    write_abundance(&args.out, &a)?;
    if let (Some(path), Some(curve)) = (&args.curve, &curve) {
        write_curve_csv(path, curve)?;
    }

    let feas = column_feasibility(&a, DEFAULT_EPS_SUM, DEFAULT_EPS_FEAS);
    writeln!(out, "solver: {solver}")?;
    if solver == SolverId::Sudap {
        let last: Option<&SweepRecord> = result.trace.records.last();
        writeln!(
            out,
            "sweeps: {} ({:?}), last relative change {:.3e}",
            result.trace.sweeps(),
            result.trace.stop,
            last.map_or(0.0, |r| r.rel_change)
        )?;
    }
    writeln!(out, "objective: {:.12e}", objective(&e, &x, &a)?)?;
    writeln!(out, "wall time: {:.6} s", result.wall_time_s)?;
    writeln!(
        out,
        "feasibility: max |sum - 1| = {:.3e}, min entry = {:.3e}, {}",
        feas.max_sum_violation,
        feas.min_entry,
        if feas.feasible {
            "feasible"
        } else {
            "infeasible"
        }
    )?;
    if let Some(r) = &reference {
        writeln!(out, "re: {:.3} dB", relative_error_db(&a, r)?)?;
    }
    if let Some(t) = &truth {
        writeln!(out, "nmse: {:.3} dB", nmse_db(&a, t)?)?;
    }
    writeln!(out, "wrote {}", args.out.display())?;
    Ok(())
}
