use std::io::Write;
use std::ops::ControlFlow;
use std::path::PathBuf;

use clap::{Args, ValueEnum};
use sudap::dykstra::DykstraConfig;
use sudap::metrics::{nmse_db, relative_error_db};
use sudap::simdata::{derive_seed, SpectralLibrary};
use sudap::solver::{solve_oracle_activeset, Sudap};

use crate::simulate::simulate_scene;
use crate::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepVar {
    M,
    Pixels,
    Snr,
}

impl SweepVar {
    fn name(self) -> &'static str {
        match self {
            SweepVar::M => "m",
            SweepVar::Pixels => "pixels",
            SweepVar::Snr => "snr",
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchmarkArgs {
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long, value_enum)]
    pub sweep_var: SweepVar,
    /// Comma-separated values of the swept variable. Pixel counts that are
    /// perfect squares give square scenes, others a single row.
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// SUDAP stops once its RE against the oracle reaches this level.
    #[arg(long, default_value_t = -100.0, allow_negative_numbers = true)]
    pub stop_re_db: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Endmember count when not swept.
    #[arg(long, default_value_t = 5)]
    pub m: usize,
    /// Pixel count when not swept.
    #[arg(long, default_value_t = 10_000)]
    pub pixels: usize,
    /// SNR in dB when not swept.
    #[arg(long, default_value_t = 30.0)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 10.0)]
    pub min_angle: f64,
    #[arg(long, default_value_t = 10_000)]
    pub max_sweeps: usize,
}

pub const SUMMARY_HEADER: [&str; 13] = [
    "sweep_var",
    "value",
    "repeat",
    "status",
    "m",
    "pixels",
    "snr_db",
    "sweeps",
    "sudap_time_s",
    "oracle_time_s",
    "final_re_db",
    "nmse_db",
    "reached",
];

/// Outcome of one simulated instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceResult {
    pub sweeps: usize,
    /// SUDAP time until the RE threshold was met (or the sweep cap hit).
    pub sudap_time_s: f64,
    pub oracle_time_s: f64,
    pub final_re_db: f64,
    pub nmse_db: f64,
    pub reached: bool,
}

fn scene_shape(pixels: usize) -> (usize, usize) {
    let side = (pixels as f64).sqrt().round() as usize;
    if side * side == pixels {
        (side, side)
    } else {
        (1, pixels)
    }
}

fn as_count(v: f64, what: &str) -> CliResult<usize> {
    if v >= 1.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(CliError::Usage(format!(
            "{what} must be a positive integer, got {v}"
        )))
    }
}

/// Simulates one scene, solves it with the oracle, then runs SUDAP until its
/// RE against the oracle is at or below `stop_re_db`.
#[allow(clippy::too_many_arguments)]
pub fn run_instance(
    lib: &SpectralLibrary,
    m: usize,
    pixels: usize,
    snr_db: f64,
    min_angle: f64,
    stop_re_db: f64,
    max_sweeps: usize,
    seed: u64,
) -> sudap::Result<InstanceResult> {
    let shape = scene_shape(pixels);
    let scene = simulate_scene(lib, m, min_angle, shape, snr_db, seed)?;
    let e = scene.endmembers.to_endmembers()?;
    let oracle = solve_oracle_activeset(&e, &scene.cube)?;
    let a_star = oracle.abundances;

    let sudap = Sudap::new(e)?;
    let cfg = DykstraConfig {
        max_sweeps,
        rel_tol: 0.0,
        ..DykstraConfig::default()
    };
    let mut failure = None;
    let mut reached_at = None;
    let result = match sudap.transform() {
        None => sudap.solve(&scene.cube, &cfg)?,
        Some(t) => sudap.solve_observed(&scene.cube, &cfg, |record, u| {
            match t.inverse(u).and_then(|a| relative_error_db(&a, &a_star)) {
                Ok(re) if re <= stop_re_db => {
                    reached_at = Some(record.elapsed_s);
                    ControlFlow::Break(())
                }
                Ok(_) => ControlFlow::Continue(()),
                Err(err) => {
                    failure = Some(err);
                    ControlFlow::Break(())
                }
            }
        })?,
    };
    if let Some(err) = failure {
        return Err(err);
    }
    let final_re_db = relative_error_db(&result.abundances, &a_star)?;
    let last_elapsed = result
        .trace
        .records
        .last()
        .map_or(result.wall_time_s, |r| r.elapsed_s);
    Ok(InstanceResult {
        sweeps: result.trace.sweeps(),
        sudap_time_s: reached_at.unwrap_or(last_elapsed),
        oracle_time_s: oracle.wall_time_s,
        final_re_db,
        nmse_db: nmse_db(&result.abundances, &scene.truth)?,
        reached: final_re_db <= stop_re_db,
    })
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 {
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

pub fn run(args: &BenchmarkArgs, out: &mut dyn Write) -> CliResult {
    if args.repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let lib = sudap::io::read_library_csv(&args.library)?;
    std::fs::create_dir_all(&args.out_dir)?;
    let path = args
        .out_dir
        .join(format!("benchmark_{}.csv", args.sweep_var.name()));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(SUMMARY_HEADER)?;

    let var = args.sweep_var.name();
    let mut first_error: Option<sudap::Error> = None;
    let mut instance = 0u64;
    for &value in &args.values {
        let (m, pixels, snr) = match args.sweep_var {
            SweepVar::M => (as_count(value, "m")?, args.pixels, args.snr_db),
            SweepVar::Pixels => (args.m, as_count(value, "pixel count")?, args.snr_db),
            SweepVar::Snr => (args.m, args.pixels, value),
        };
        let mut ok: Vec<InstanceResult> = Vec::new();
        for rep in 0..args.repeats {
            let seed = derive_seed(args.seed, instance);
            instance += 1;
            let prefix = [var.to_string(), value.to_string(), rep.to_string()];
            match run_instance(
                &lib,
                m,
                pixels,
                snr,
                args.min_angle,
                args.stop_re_db,
                args.max_sweeps,
                seed,
            ) {
                Ok(r) => {
                    w.write_record(prefix.iter().cloned().chain([
                        "ok".to_string(),
                        m.to_string(),
                        pixels.to_string(),
                        snr.to_string(),
                        r.sweeps.to_string(),
                        r.sudap_time_s.to_string(),
                        r.oracle_time_s.to_string(),
                        r.final_re_db.to_string(),
                        r.nmse_db.to_string(),
                        r.reached.to_string(),
                    ]))?;
                    writeln!(
                        out,
                        "{var}={value} repeat {rep}: {} sweeps, sudap {:.4} s, oracle {:.4} s, re {:.1} dB",
                        r.sweeps, r.sudap_time_s, r.oracle_time_s, r.final_re_db
                    )?;
                    ok.push(r);
                }
                Err(err) => {
                    let mut row: Vec<String> = prefix.to_vec();
                    row.push(format!("failed: {err}"));
                    row.extend([m.to_string(), pixels.to_string(), snr.to_string()]);
                    row.resize(SUMMARY_HEADER.len(), String::new());
                    w.write_record(&row)?;
                    writeln!(out, "{var}={value} repeat {rep}: failed: {err}")?;
                    first_error.get_or_insert(err);
                }
            }
            w.flush()?;
        }
        if !ok.is_empty() {
            let cols: [fn(&InstanceResult) -> f64; 5] = [
                |r| r.sweeps as f64,
                |r| r.sudap_time_s,
                |r| r.oracle_time_s,
                |r| r.final_re_db,
                |r| r.nmse_db,
            ];
            let stats: Vec<(f64, f64)> = cols
                .iter()
                .map(|f| mean_std(&ok.iter().map(f).collect::<Vec<_>>()))
                .collect();
            let reached = ok.iter().filter(|r| r.reached).count();
            for (label, pick) in [("mean", 0usize), ("std", 1)] {
                let mut row = vec![
                    var.to_string(),
                    value.to_string(),
                    String::new(),
                    label.to_string(),
                    m.to_string(),
                    pixels.to_string(),
                    snr.to_string(),
                ];
                row.extend(
                    stats
                        .iter()
                        .map(|s| if pick == 0 { s.0 } else { s.1 }.to_string()),
                );
                row.push(if pick == 0 {
                    format!("{reached}/{}", ok.len())
                } else {
                    String::new()
                });
                w.write_record(&row)?;
            }
            w.flush()?;
        }
    }
    writeln!(out, "wrote {}", path.display())?;
    match first_error {
        Some(err) => Err(err.into()),
        None => Ok(()),
    }
}
