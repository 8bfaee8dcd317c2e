//! `srrm` command-line front end.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use srrm_core::evaluation::{evaluate_run, write_report_csv, RunFields};
use srrm_core::pipeline::{
    disaggregate, inherit_labels, read_result_dir, read_scene_dir, segment_coarse, write_result_dir, write_scene_dir,
    PipelineConfig,
};
use srrm_core::raster::io::{read_fgrid, write_fgrid};
use srrm_core::raster::Grid;
use srrm_core::segmentation::write_membership_csv;
use srrm_core::synth::{generate_scene, scenario_params};
use srrm_core::SrrmError;

/// Seed used when `--seed` is absent.
pub const DEFAULT_SEED: u64 = 42;

/// Standard deviation of the noise added to the truth to make the
/// pipeline's reference field, kelvin.
pub const REFERENCE_NOISE_K: f64 = 5.0;

/// Environment variable capping the worker-thread count.
pub const THREADS_ENV: &str = "SRRM_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "srrm", version, about = "Multiscale brightness-temperature disaggregation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic scene (with its fine-scale truth).
    Synth {
        /// Scenario name: uniform, two-zone, precip-event, missing-lst,
        /// high-vegetation or affine.
        scenario: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
    },
    /// Segment the coarse brightness temperature of a scene.
    Segment {
        #[arg(long)]
        scene: PathBuf,
        /// Segment count, or "auto" for description-length selection.
        #[arg(long, default_value = "auto")]
        k: String,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Disaggregate a scene to the fine grid.
    Disaggregate {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare a result against optional reference and truth grids.
    Evaluate {
        #[arg(long)]
        result: PathBuf,
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Report CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Scene label for the report; defaults to the result directory name.
        #[arg(long)]
        label: Option<String>,
        #[arg(long, default_value = "1")]
        day: String,
    },
    /// Synthesize, disaggregate and evaluate in one go.
    Pipeline {
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Pipeline configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Core(SrrmError),
}

impl From<SrrmError> for Failure {
    fn from(e: SrrmError) -> Self {
        Failure::Core(e)
    }
}

type Outcome = std::result::Result<String, Failure>;

/// Exit code for a library error.
pub fn exit_code(e: &SrrmError) -> i32 {
    match e {
        SrrmError::NonConvergence { .. } | SrrmError::DegenerateSegment { .. } => EXIT_NONCONVERGENCE,
        _ => EXIT_DATA,
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig<f64>, Failure> {
    let mut cfg = match path {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| {
        Failure::Core(SrrmError::Io {
            path: path.into(),
            source: e,
        })
    })
}

fn create_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| {
        Failure::Core(SrrmError::Io {
            path: path.into(),
            source: e,
        })
    })
}

fn synth(scenario: &str, out: &Path, seed: u64) -> Outcome {
    let params = scenario_params(scenario, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let s = generate_scene(&params)?;
    write_scene_dir(&s.scene, Some(&s.truth), out)?;
    Ok(format!(
        "wrote scenario '{scenario}' (seed {seed}) to {}",
        out.display()
    ))
}

fn segment(scene: &Path, k: &str, out: &Path, run: &RunArgs) -> Outcome {
    let mut cfg = load_config(run.config.as_deref(), run.seed)?;
    cfg.segmentation.k = match k {
        "auto" | "AUTO" => None,
        _ => match k.parse::<usize>() {
            Ok(v) if v >= 1 => Some(v),
            _ => {
                return Err(Failure::Usage(format!(
                    "--k expects 'auto' or a positive integer, got '{k}'"
                )))
            }
        },
    };
    cfg.validate()?;
    let (scene, _) = read_scene_dir::<f64>(scene)?;
    let seg = segment_coarse(&scene.tb_coarse, &cfg)?;
    create_dir(out)?;
    write_fgrid(&seg.labels, out.join("labels_coarse.fgrd"))?;
    write_fgrid(&inherit_labels(&seg.labels, scene.factor), out.join("labels_fine.fgrd"))?;
    write_membership_csv(
        out.join("memberships.csv"),
        &seg.features.sample_index,
        &seg.segmentation.membership,
    )?;
    let s = &seg.segmentation;
    let mut summary = String::new();
    let _ = writeln!(summary, "k,{}", s.membership.n_segments());
    let _ = writeln!(summary, "sigma,{}", s.sigma);
    let _ = writeln!(summary, "cost,{}", s.cost);
    let _ = writeln!(summary, "iterations,{}", s.iterations);
    let _ = writeln!(summary, "restarts,{}", s.restarts);
    let trace: Vec<String> = s.trace.iter().map(|v| v.to_string()).collect();
    let _ = writeln!(summary, "trace,{}", trace.join(","));
    write_text(&out.join("segmentation.csv"), &summary)?;
    Ok(format!("{} segments, cost {:.6}", s.membership.n_segments(), s.cost))
}

fn run_disaggregate(scene: &Path, out: &Path, run: &RunArgs) -> Outcome {
    let cfg = load_config(run.config.as_deref(), run.seed)?;
    let (scene, _) = read_scene_dir::<f64>(scene)?;
    let result = disaggregate(&scene, &cfg)?;
    write_result_dir(&result, out)?;
    Ok(format!(
        "{} segments, {} fine cells",
        result.n_segments,
        result.tb_fine.valid_count()
    ))
}

fn evaluate(
    result: &Path,
    reference: Option<&Path>,
    truth: Option<&Path>,
    out: &Path,
    scene: &str,
    day: &str,
) -> Outcome {
    let grids = read_result_dir::<f64>(result)?;
    let reference: Option<Grid<f64>> = reference.map(read_fgrid).transpose()?;
    let truth: Option<Grid<f64>> = truth.map(read_fgrid).transpose()?;
    let report = evaluate_run(
        RunFields {
            tb_coarse: &grids.tb_coarse,
            tb_fine: &grids.tb_fine,
            reference: reference.as_ref(),
            truth: truth.as_ref(),
        },
        scene,
        day,
    )?;
    write_report_csv(&report.rows, out)?;
    Ok(format!(
        "|dmean| {:.4} K, |dstd| {:.4} K",
        report.delta_mean, report.delta_std
    ))
}

/// Truth plus seeded Gaussian noise, standing in for an independent
/// fine-scale product.
pub fn noisy_reference(truth: &Grid<f64>, seed: u64) -> Grid<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let noise = Normal::new(0.0, REFERENCE_NOISE_K).expect("positive sd");
    let mut out = truth.clone();
    for (r, c, v) in truth.valid_cells() {
        out.set(r, c, v + noise.sample(&mut rng));
    }
    out
}

fn pipeline(scenario: &str, seed: u64, out: &Path, config: Option<&Path>) -> Outcome {
    let params = scenario_params(scenario, seed).map_err(|e| Failure::Usage(e.to_string()))?;
    let cfg = load_config(config, Some(seed))?;
    let s = generate_scene(&params)?;
    let result = disaggregate(&s.scene, &cfg)?;
    let reference = noisy_reference(&s.truth, seed);

    create_dir(out)?;
    write_scene_dir(&s.scene, Some(&s.truth), out.join("scene"))?;
    write_result_dir(&result, out.join("result"))?;
    write_fgrid(&reference, out.join("reference.fgrd"))?;
    // evaluate what was written, so the report matches the files on disk
    evaluate(
        &out.join("result"),
        Some(&out.join("reference.fgrd")),
        Some(&out.join("scene").join("truth.fgrd")),
        &out.join("report.csv"),
        scenario,
        "1",
    )
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::Usage(format!("{THREADS_ENV} must be a non-negative integer, got '{raw}'")))?;
    if n > 0 {
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one `srrm` invocation; `argv[0]` is the program name. Returns the
/// process exit code.
pub fn run_command<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            return code;
        }
    };
    let outcome = configure_threads().and_then(|()| match &cli.command {
        Command::Synth { scenario, out, seed } => synth(scenario, out, *seed),
        Command::Segment { scene, k, out, run } => segment(scene, k, out, run),
        Command::Disaggregate { scene, out, run } => run_disaggregate(scene, out, run),
        Command::Evaluate {
            result,
            reference,
            truth,
            out,
            label,
            day,
        } => {
            let name = label.clone().unwrap_or_else(|| {
                result
                    .file_name()
                    .map_or_else(|| "scene".to_string(), |n| n.to_string_lossy().into_owned())
            });
            evaluate(result, reference.as_deref(), truth.as_deref(), out, &name, day)
        }
        Command::Pipeline {
            scenario,
            seed,
            out,
            config,
        } => pipeline(scenario, *seed, out, config.as_deref()),
    });
    match outcome {
        Ok(msg) => {
            let _ = writeln!(out, "{msg}");
            EXIT_OK
        }
        Err(Failure::Usage(m)) => {
            let _ = writeln!(err, "error: {m}\n\nRun 'srrm --help' for usage.");
            EXIT_USAGE
        }
        Err(Failure::Core(e)) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
