use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use sudap::io::{write_abundance, write_cube, write_library_csv};
use sudap::simdata::{
    derive_seed, measured_snr_db, mix, sample_abundances, select_endmember_indices,
    synthesize_cube, NoiseSpec, SpectralLibrary,
};
use sudap::ImageCube;

use crate::{with_suffix, CliResult};

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub library: PathBuf,
    #[arg(long)]
    pub m: usize,
    /// Minimum pairwise spectral angle between chosen endmembers, degrees.
    #[arg(long, default_value_t = 0.0)]
    pub min_angle: f64,
    #[arg(long)]
    pub rows: usize,
    #[arg(long)]
    pub cols: usize,
    /// Signal-to-noise ratio in dB; `inf` for a noiseless cube.
    #[arg(long)]
    pub snr_db: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_prefix: PathBuf,
}

/// A simulated scene and the library subset that produced it.
pub struct Scene {
    pub endmembers: SpectralLibrary,
    pub truth: sudap::AbundanceMatrix,
    pub cube: ImageCube,
    pub measured_snr_db: f64,
}

/// Endmember choice, abundances and noise each use their own stream of
/// `seed`, so changing one setting leaves the other draws alone.
pub fn simulate_scene(
    lib: &SpectralLibrary,
    m: usize,
    min_angle_deg: f64,
    shape: (usize, usize),
    snr_db: f64,
    seed: u64,
) -> sudap::Result<Scene> {
    let idx = select_endmember_indices(lib, m, min_angle_deg, derive_seed(seed, 0))?;
    let endmembers = lib.subset(&idx)?;
    let e = endmembers.to_endmembers()?;
    let truth = sample_abundances(m, shape.0 * shape.1, derive_seed(seed, 1))?.with_shape(shape)?;
    let noise = NoiseSpec {
        snr_db,
        seed: derive_seed(seed, 2),
    };
    let cube = synthesize_cube(&e, &truth, noise, shape)?;
    let clean = mix(&e, &truth)?;
    Ok(Scene {
        measured_snr_db: measured_snr_db(&clean, cube.data()),
        endmembers,
        truth,
        cube,
    })
}

pub fn run(args: &SimulateArgs, out: &mut dyn Write) -> CliResult {
    let lib = sudap::io::read_library_csv(&args.library)?;
    let scene = simulate_scene(
        &lib,
        args.m,
        args.min_angle,
        (args.rows, args.cols),
        args.snr_db,
        args.seed,
    )?;
    let cube_path = with_suffix(&args.out_prefix, ".cube");
    let truth_path = with_suffix(&args.out_prefix, ".truth");
    let em_path = with_suffix(&args.out_prefix, ".endmembers.csv");
    write_cube(&cube_path, &scene.cube)?;
    write_abundance(&truth_path, &scene.truth)?;
    write_library_csv(&em_path, &scene.endmembers)?;
    writeln!(out, "endmembers: {}", scene.endmembers.names().join(", "))?;
    writeln!(out, "measured snr: {:.3} dB", scene.measured_snr_db)?;
    for p in [&cube_path, &truth_path, &em_path] {
        writeln!(out, "wrote {}", p.display())?;
    }
    Ok(())
}
