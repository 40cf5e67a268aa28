use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gff2dlab::experiments::{
    self, CapacityParams, CoarsegrainParams, Experiment, GreenParams, InterlaceParams, LocUniqParams, PointSource,
    RunConfig, RunManifest, SampleParams, ScalingParams, SegcapParams, ThetaParams, TubeParams,
};
use gff2dlab::gff::SamplingMethod;
use gff2dlab::lattice::tube::TubeShape;
use gff2dlab::lattice::{Point, WindowKind};

/// Massive Gaussian free field on Z²: potential theory, level-set
/// percolation, interlacements and path coarse-graining.
///
/// Every command writes a JSON record and a `manifest.json` (config, seed,
/// versions, SHA-256 digests of all outputs) into the output directory.
#[derive(Parser)]
#[command(name = "gff2dlab", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "GFF2DLAB_WORKERS")]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Base seed.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
    seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    Box,
    Torus,
}

impl From<KindArg> for WindowKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Box => WindowKind::Box,
            KindArg::Torus => WindowKind::Torus,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Factorization,
    Spectral,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Segments,
    Boxes,
}

#[derive(Args)]
struct WindowArgs {
    /// Mass scale N (killing rate N⁻²).
    #[arg(long = "N")]
    mass_scale: u64,
    #[arg(long, value_enum, default_value = "box")]
    window_kind: KindArg,
    #[arg(long)]
    window_side: usize,
    /// Point set: integer pairs, one per line.
    #[arg(long)]
    set: PathBuf,
}

fn parse_point(s: &str) -> Result<Point, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(format!("expected x,y, got '{s}'"));
    }
    let coord = |t: &str| t.trim().parse::<i64>().map_err(|e| format!("'{t}': {e}"));
    Ok([coord(parts[0])?, coord(parts[1])?])
}

#[derive(Subcommand)]
enum Command {
    /// Capacity of the unit segment for the killed Brownian kernel.
    Segcap {
        /// Number of grid cells.
        #[arg(long, default_value_t = 2000)]
        n: usize,
        /// Duality-gap tolerance.
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Green function from the origin to each point of a set.
    Green {
        #[command(flatten)]
        window: WindowArgs,
        #[command(flatten)]
        common: Common,
    },
    /// Capacity and equilibrium measure of a set.
    Capacity {
        #[command(flatten)]
        window: WindowArgs,
        /// Additional absorbing set.
        #[arg(long)]
        killing: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Capacity of a porous tube against the continuum bounds.
    Tube {
        #[arg(long = "N")]
        mass_scale: u64,
        /// Number of blocks P.
        #[arg(long)]
        blocks: usize,
        /// Kept block indices, comma separated (default: all).
        #[arg(long, value_delimiter = ',')]
        indices: Option<Vec<usize>>,
        #[arg(long, value_enum, default_value = "segments")]
        shape: ShapeArg,
        /// Fraction of each block occupied by its piece.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0.15)]
        epsilon: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Sample one field; writes raw little-endian f64 values and a JSON sidecar.
    Sample {
        #[arg(long = "N")]
        mass_scale: u64,
        #[arg(long)]
        side: usize,
        #[arg(long, value_enum, default_value = "spectral")]
        method: MethodArg,
        #[arg(long, value_enum, default_value = "torus")]
        window_kind: KindArg,
        #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u64).range(0..=i64::MAX as u64))]
        seed: u64,
        /// Field file; the sidecar goes to `<out>.json`.
        #[arg(long)]
        out: PathBuf,
    },
    /// One-arm probability of the level set above abar.
    Theta {
        #[arg(long = "N")]
        mass_scale: u64,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        abar: f64,
        /// Radius (default N).
        #[arg(long = "R")]
        radius: Option<u64>,
        #[arg(long)]
        samples: u64,
        /// Torus side over N.
        #[arg(long, default_value_t = 8)]
        side_factor: usize,
        #[command(flatten)]
        common: Common,
    },
    /// Off-critical scaling table over an (a, N) grid.
    Scaling {
        /// Grid file: `[[cell]]` tables with `N` and `a` or `a2_log_n`.
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        samples: u64,
        #[arg(long, default_value_t = 8)]
        side_factor: usize,
        /// Decay exponent for the reference column (default: computed).
        #[arg(long)]
        tau: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Random interlacement statistics on a window.
    Interlace {
        #[arg(long = "N")]
        mass_scale: u64,
        #[arg(long)]
        u: f64,
        #[arg(long)]
        side: usize,
        #[arg(long, value_enum, default_value = "box")]
        window_kind: KindArg,
        #[arg(long)]
        samples: u64,
        /// Local uniqueness check: centre x,y, radius R, factor lambda.
        #[arg(long, num_args = 3, value_names = ["X", "R", "LAMBDA"], allow_negative_numbers = true)]
        locuniq: Option<Vec<String>>,
        /// Isomorphism marginal test at level a.
        #[arg(long, allow_negative_numbers = true)]
        isom: Option<f64>,
        #[command(flatten)]
        common: Common,
    },
    /// Coarse-grain a path on Λ(L) and verify the construction.
    Coarsegrain {
        /// Path: integer pairs, one per line.
        #[arg(long)]
        path: PathBuf,
        #[arg(long, value_parser = parse_point, default_value = "0,0", allow_hyphen_values = true)]
        x: Point,
        #[arg(long = "N")]
        mass_scale: u64,
        #[arg(long = "L")]
        l: u64,
        #[arg(long = "M")]
        m: u64,
        /// Tree depth (requires --R).
        #[arg(long, requires = "radius")]
        depth: Option<usize>,
        /// Peeling radius (requires --depth).
        #[arg(long = "R", requires = "depth")]
        radius: Option<f64>,
        /// Exclusion radius: selected boxes must avoid B(x, 2·exclusion).
        #[arg(long)]
        exclusion: Option<f64>,
        #[arg(long)]
        verify: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Run the experiments of a TOML config (or re-run a manifest.json).
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "results")]
        out: PathBuf,
    },
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).with_context(|| format!("resolving {}", p.display()))
}

fn run_one(name: &str, experiment: Experiment, common: &Common, command: &str) -> Result<RunManifest> {
    let config = RunConfig::single(name, common.seed, &experiment, Path::new("."))?;
    Ok(experiments::run(&config, &common.out, command)?)
}

/// Prints each task's record, or with `summary` one line of metrics per task.
fn report(manifest: &RunManifest, out: &Path, summary: bool) -> Result<ExitCode> {
    let mut text = String::new();
    for t in &manifest.tasks {
        match &t.error {
            Some(e) => eprintln!("{}: error: {e}", t.name),
            None if summary => {
                let metrics: Vec<String> = t.metrics.iter().map(|(k, v)| format!("{k}={v}")).collect();
                text += &format!("{} [{}] {:.1}s {}\n", t.name, t.kind, t.wall_seconds, metrics.join(" "));
            }
            None => {
                let record = out.join(format!("{}.json", t.name));
                text += &std::fs::read_to_string(&record).with_context(|| format!("reading {}", record.display()))?;
                text.push('\n');
            }
        }
        for c in t.checks.iter().filter(|c| !c.passed) {
            eprintln!("{}: check failed: {} = {:?} not in [{:?}, {:?}]", t.name, c.metric, c.value, c.min, c.max);
        }
    }
    // A closed pipe (`| head`) is not an error; everything is on disk anyway.
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
        _ => {}
    }
    Ok(if manifest.success() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn main() -> Result<ExitCode> {
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    let summary = matches!(cli.command, Command::Run { .. });
    let (manifest, out) = match cli.command {
        Command::Segcap { n, tol, common } => {
            (run_one("segcap", Experiment::Segcap(SegcapParams { n, tol }), &common, &command_line)?, common.out)
        }
        Command::Green { window, common } => {
            let e = Experiment::Green(GreenParams {
                mass_scale: window.mass_scale,
                window_kind: window.window_kind.into(),
                window_side: window.window_side,
                source: [0, 0],
                set: PointSource { points: None, file: Some(absolute(&window.set)?) },
            });
            (run_one("green", e, &common, &command_line)?, common.out)
        }
        Command::Capacity { window, killing, common } => {
            let killing = killing.map(|k| absolute(&k)).transpose()?;
            let e = Experiment::Capacity(CapacityParams {
                mass_scale: window.mass_scale,
                window_kind: window.window_kind.into(),
                window_side: window.window_side,
                set: PointSource { points: None, file: Some(absolute(&window.set)?) },
                killing: killing.map(|f| PointSource { points: None, file: Some(f) }),
            });
            (run_one("capacity", e, &common, &command_line)?, common.out)
        }
        Command::Tube { mass_scale, blocks, indices, shape, scale, epsilon, common } => {
            let shape = match shape {
                ShapeArg::Segments => TubeShape::Segments,
                ShapeArg::Boxes => TubeShape::Boxes,
            };
            let e = Experiment::Tube(TubeParams { mass_scale, blocks, indices, shape, scale, epsilon, continuum_cap: None });
            (run_one("tube", e, &common, &command_line)?, common.out)
        }
        Command::Sample { mass_scale, side, method, window_kind, seed, out } => {
            let method = match method {
                MethodArg::Factorization => SamplingMethod::Factorization,
                MethodArg::Spectral => SamplingMethod::Spectral,
            };
            let Some(name) = out.file_name().and_then(|n| n.to_str()) else { bail!("--out must name a file") };
            if !name.ends_with(".bin") {
                bail!("--out must end in .bin");
            }
            let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
            let common = Common { out: dir, seed };
            let e = Experiment::Sample(SampleParams { mass_scale, side, method, window_kind: window_kind.into() });
            let m = run_one(name, e, &common, &command_line)?;
            (m, common.out)
        }
        Command::Theta { mass_scale, abar, radius, samples, side_factor, common } => {
            let e = Experiment::Theta(ThetaParams { mass_scale, abar, radius, samples, side_factor });
            (run_one("theta", e, &common, &command_line)?, common.out)
        }
        Command::Scaling { grid, samples, side_factor, tau, common } => {
            let e = Experiment::Scaling(ScalingParams {
                grid: Vec::new(),
                grid_file: Some(absolute(&grid)?),
                samples,
                side_factor,
                tau,
            });
            (run_one("scaling", e, &common, &command_line)?, common.out)
        }
        Command::Interlace { mass_scale, u, side, window_kind, samples, locuniq, isom, common } => {
            let locuniq = match locuniq {
                Some(v) => {
                    let x = parse_point(&v[0]).map_err(anyhow::Error::msg)?;
                    let radius: f64 = v[1].parse().context("locuniq R")?;
                    let lambda: f64 = v[2].parse().context("locuniq lambda")?;
                    Some(LocUniqParams { x, radius, lambda: Some(lambda) })
                }
                None => None,
            };
            let e = Experiment::Interlace(InterlaceParams {
                mass_scale,
                u,
                side,
                window_kind: window_kind.into(),
                samples,
                locuniq,
                isom,
            });
            (run_one("interlace", e, &common, &command_line)?, common.out)
        }
        Command::Coarsegrain { path, x, mass_scale, l, m, depth, radius, exclusion, verify, common } => {
            let e = Experiment::Coarsegrain(CoarsegrainParams {
                path_file: Some(absolute(&path)?),
                generate: None,
                x,
                mass_scale,
                l,
                m,
                depth,
                radius,
                exclusion,
                verify,
            });
            (run_one("coarsegrain", e, &common, &command_line)?, common.out)
        }
        Command::Run { config, out } => {
            let config = RunConfig::load(&config)?;
            (experiments::run(&config, &out, &command_line)?, out)
        }
    };
    report(&manifest, &out, summary)
}
